#pragma once

#include <string_view>

namespace irdfusion {

inline constexpr std::string_view kToolVersion = "irdfusion 0.1.0";

}  // namespace irdfusion
