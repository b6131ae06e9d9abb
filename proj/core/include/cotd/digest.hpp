#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cotd {

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

}  // namespace cotd
