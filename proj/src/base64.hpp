#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace orthoseg::base64 {

std::string encode(std::span<const std::uint8_t> bytes);
/// Throws invalid_argument on malformed input.
std::vector<std::uint8_t> decode(std::string_view text);

} // namespace orthoseg::base64
