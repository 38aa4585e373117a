#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "milfcn/mask.hpp"
#include "milfcn/tensor.hpp"

namespace milfcn {

// Binary netpbm with maxval 255. The emitted header is exactly
// "P6\n<W> <H>\n255\n" (P5 for masks) followed by the raw payload.
// Malformed headers and truncated payloads are rejected with a byte offset.

std::vector<std::uint8_t> encode_ppm(const Tensor& image);  // [3,H,W], values in [0,1]
Tensor decode_ppm(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_pgm(const Mask& mask);
Mask decode_pgm(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace milfcn
