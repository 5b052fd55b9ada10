#pragma once

#include <string>
#include <vector>

#include "sgdm/tensor.hpp"

namespace sgdm {

// Binary NetPBM (P6 / P5) with the exact header "P6\n<W> <H>\n255\n".
// Images are [3, H, W] tensors with values in [0, 1]; writing quantizes with
// round(255 * clamp(v)), reading maps byte / 255. Grayscale maps are [H, W].

void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

void write_pgm(const std::string& path, const Tensor& gray);
Tensor read_pgm(const std::string& path);

}  // namespace sgdm
