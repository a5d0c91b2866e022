#pragma once

#include <string>
#include <vector>

#include "tiacam/tensor.hpp"

namespace tiacam {

/// Decodes a binary PPM (P6, maxval 255) into an {H,W,3} tensor; byte value
/// v maps to v/255, so 0 -> 0.0 and 255 -> 1.0. Header comments are allowed
/// wherever whitespace is. Malformed input throws DataError naming the byte
/// offset of the problem; origin labels the source in messages.
Tensor decode_ppm(const std::vector<unsigned char>& bytes,
                  const std::string& origin = "");
Tensor read_ppm(const std::string& path);

/// Encodes {H,W,3} (or {H,W,1}, replicated to gray) as binary P6, clamping
/// to [0,1] and rounding to the nearest byte.
std::vector<unsigned char> encode_ppm(const Tensor& img);
void write_ppm(const std::string& path, const Tensor& img);

/// Bilinear resample of {H,W,C} to out_h x out_w using half-pixel centers
/// with edge clamping. Matching extents return the input values unchanged.
Tensor resize_bilinear(const Tensor& img, int out_h, int out_w);

}  // namespace tiacam
