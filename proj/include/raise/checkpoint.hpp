#pragma once

#include <string>

#include "raise/gmf.hpp"
#include "raise/model.hpp"

namespace ranking {

// Binary model containers. Both use the same little-endian layout:
//
//   magic bytes, u32 format version (currently 1), header u32 fields,
//   u32 tensor count, then one section per tensor:
//     u16 name length, name bytes, u32 rows, u32 cols,
//     rows*cols float32 values in row-major order.
//
// Values are quantized to float32 on save; optimizer state is not persisted.
// Writing is deterministic, so identical models produce byte-identical files.

// "GMF1" header fields: d, user count, item count.
void save_gmf_checkpoint(const GmfModel& model, const std::string& path);
GmfModel load_gmf_checkpoint(const std::string& path);

// "RAISE1" header fields: d, n, t, b, l_u, l_i (as configured; the tensor
// shapes already reflect any ablation). Loading takes the same config the
// model was built with: header fields are cross-checked against it and the
// stored tensor names must match the model's expected set exactly — a
// missing or unexpected tensor is a FormatError.
void save_raise_checkpoint(const RaiseParameters& params, const std::string& path);
RaiseParameters load_raise_checkpoint(const std::string& path, const RaiseConfig& cfg);

}  // namespace ranking
