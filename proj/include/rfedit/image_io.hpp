#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfedit/tensor.hpp"

namespace rfedit {

struct PpmError : std::runtime_error {
    enum class Kind { kIo, kBadHeader, kTruncated };
    Kind kind;
    PpmError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Binary PPM (P6), maxval 255. Floats are clamped to [0,1] and quantized by
// rounding half up; reading maps bytes back to v/255. Byte-identical output
// for identical input tensors.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path);

// Grayscale helper: one byte value per pixel replicated across RGB.
void write_mask_ppm(const std::string& path, const std::vector<uint8_t>& mask, int width,
                    int height);

uint8_t quantize_unit(float v);

}  // namespace rfedit
