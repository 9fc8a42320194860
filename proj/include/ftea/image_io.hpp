#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ftea/tensor.hpp"

namespace ftea {

// Binary PPM, P6, maxval 255. rgb is [3,H,W] with values in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);
Tensor read_ppm(const std::filesystem::path& path);

// Binary PGM, P5. Written with maxval 65535 (two bytes per sample, MSB
// first); the reader also accepts maxval <= 255 single-byte files.
void write_pgm16(const std::filesystem::path& path, int height, int width,
                 const std::vector<uint16_t>& values);
struct Pgm16 {
    int height = 0, width = 0;
    std::vector<uint16_t> values;
};
Pgm16 read_pgm16(const std::filesystem::path& path);

}  // namespace ftea
