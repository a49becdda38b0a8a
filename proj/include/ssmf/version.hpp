#pragma once

namespace ssmf {

inline constexpr const char* kToolVersion = "ssmf 0.3.0";

}  // namespace ssmf
