#pragma once

#include <string>
#include <string_view>

namespace refusalgate {

/// SHA-256 of the input, lowercase hex.
std::string sha256_hex(std::string_view data);

}  // namespace refusalgate
