#pragma once

#include <string>

#include "savt/tensor.hpp"

namespace savt {

// Binary PPM (P6, maxval 255). Tensors are [H x W x 3] with values in [0, 1];
// writing clamps and rounds, reading divides by 255.
void write_ppm(const std::string& path, const Tensor& image, std::size_t upscale = 1);
Tensor read_ppm(const std::string& path);

}  // namespace savt
