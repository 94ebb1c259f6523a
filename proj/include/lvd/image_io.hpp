#pragma once

#include <string>
#include <vector>

#include "lvd/tensor.hpp"

namespace lvd {

struct ImageIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// binary PPM (P6), 8-bit; frames are [3,H,W] with values in [0,1]
void write_ppm(const std::string& path, const Tensor& frame);
Tensor read_ppm(const std::string& path);

// horizontal strip of frames with a 1px separator, for quick visual checks
Tensor frames_grid(const std::vector<Tensor>& frames);

// Animated GIF89a with a local color table per frame. When a frame has at most
// 256 distinct 8-bit colors the palette is exact, so re-decoding reproduces the
// 8-bit quantization of the input; otherwise colors are median-cut to 256.
void write_gif(const std::string& path, const std::vector<Tensor>& frames, double fps);
std::vector<Tensor> read_gif(const std::string& path);

}  // namespace lvd
