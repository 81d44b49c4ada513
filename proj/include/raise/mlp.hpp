#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "raise/numerics.hpp"

namespace ranking {

struct MlpCache {
    std::vector<DenseMatrix> inputs;   // input to each layer
    std::vector<DenseMatrix> preacts;  // x*W + b per layer, before ReLU
};

// Small fully-connected stack: ReLU between layers, linear final layer.
// depth is the number of (weight, bias) pairs; depth 1 is a plain linear map.
class Mlp {
public:
    struct Layer {
        Parameter w;  // in x out
        Parameter b;  // 1 x out
    };

    Mlp() = default;
    Mlp(const std::string& name, size_t in_dim, size_t hidden_dim, size_t out_dim,
        size_t depth, uint64_t seed);

    // x: m x in_dim -> m x out_dim. Pass a cache when a backward pass follows.
    DenseMatrix forward(const DenseMatrix& x, MlpCache* cache = nullptr) const;

    // Accumulates layer gradients from dout (m x out_dim), returns dx.
    DenseMatrix backward(const MlpCache& cache, const DenseMatrix& dout);

    void collect_parameters(std::vector<Parameter*>& out);

    size_t depth() const { return layers.size(); }
    size_t in_dim() const { return layers.empty() ? 0 : layers.front().w.value.rows; }
    size_t out_dim() const { return layers.empty() ? 0 : layers.back().w.value.cols; }

    std::vector<Layer> layers;
};

}  // namespace ranking
