#include "raise/mlp.hpp"

#include "raise/errors.hpp"
#include "raise/rng.hpp"

namespace ranking {

Mlp::Mlp(const std::string& name, size_t in_dim, size_t hidden_dim, size_t out_dim,
         size_t depth, uint64_t seed) {
    if (depth < 1 || depth > 4) {
        throw ConfigError("mlp depth must lie in [1,4], got " + std::to_string(depth));
    }
    layers.reserve(depth);
    size_t in = in_dim;
    for (size_t i = 0; i < depth; ++i) {
        const size_t out = (i + 1 == depth) ? out_dim : hidden_dim;
        Layer layer;
        layer.w = Parameter(name + ".l" + std::to_string(i) + ".w",
                            glorot_init(in, out, Rng::derive(seed, i)));
        layer.b = Parameter(name + ".l" + std::to_string(i) + ".b", DenseMatrix(1, out));
        layers.push_back(std::move(layer));
        in = out;
    }
}

DenseMatrix Mlp::forward(const DenseMatrix& x, MlpCache* cache) const {
    if (layers.empty()) {
        throw DimensionError("mlp forward called on an empty model");
    }
    if (cache != nullptr) {
        cache->inputs.clear();
        cache->preacts.clear();
    }
    DenseMatrix a = x;
    for (size_t i = 0; i < layers.size(); ++i) {
        if (cache != nullptr) {
            cache->inputs.push_back(a);
        }
        DenseMatrix pre = add_row_broadcast(matmul(a, layers[i].w.value), layers[i].b.value);
        if (cache != nullptr) {
            cache->preacts.push_back(pre);
        }
        a = (i + 1 == layers.size()) ? pre : relu(pre);
    }
    return a;
}

DenseMatrix Mlp::backward(const MlpCache& cache, const DenseMatrix& dout) {
    if (cache.inputs.size() != layers.size() || cache.preacts.size() != layers.size()) {
        throw DimensionError("mlp backward cache does not match layer count");
    }
    DenseMatrix delta = dout;  // gradient w.r.t. the current layer's pre-activation
    for (size_t idx = layers.size(); idx-- > 0;) {
        Layer& layer = layers[idx];
        const DenseMatrix input_t = transpose(cache.inputs[idx]);
        add_inplace(layer.w.grad, matmul(input_t, delta));
        add_inplace(layer.b.grad, column_sums(delta));
        DenseMatrix dx = matmul(delta, transpose(layer.w.value));
        if (idx == 0) {
            return dx;
        }
        delta = relu_backward(cache.preacts[idx - 1], dx);
    }
    throw DimensionError("mlp backward called on an empty model");
}

void Mlp::collect_parameters(std::vector<Parameter*>& out) {
    for (Layer& layer : layers) {
        out.push_back(&layer.w);
        out.push_back(&layer.b);
    }
}

}  // namespace ranking
