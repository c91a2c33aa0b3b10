#pragma once

#include <string>

#include "epiray/tensor.hpp"

namespace epiray {

/// Binary tensor file (".etz"):
///   magic 0x45 0x50 0x54 0x4E ("EPTN"), u8 version=1, u8 dtype=0 (f32),
///   u8 ndim, ndim x u32 little-endian dims, row-major f32 little-endian payload.
/// No padding, no compression. Values are stored as f32 (write narrows, read
/// promotes back to f64), so a file -> tensor -> file round trip is byte-exact.
void tensor_write(const Tensor& t, const std::string& path);
Tensor tensor_read(const std::string& path);

}  // namespace epiray
