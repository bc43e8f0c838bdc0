#pragma once

#include <string>
#include <vector>

#include "corrflow/conv.hpp"

namespace corrflow {

/// Binary container for an ordered conv-layer list.
/// Layout: magic "CMWT", version u16, layer count u16, then per layer a
/// 4xu32 shape header (k, c_in, c_out, stride) followed by kernel and bias
/// as little-endian f32, row-major. Padding is implied as k/2.
inline constexpr unsigned kWeightFileVersion = 1;

void save_conv_layers(const std::string& path, const std::vector<ConvParams>& layers);
std::vector<ConvParams> load_conv_layers(const std::string& path);

}  // namespace corrflow
