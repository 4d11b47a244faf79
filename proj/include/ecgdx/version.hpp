#pragma once

namespace ecgdx {

inline constexpr const char* kToolName = "ecgdx";
inline constexpr const char* kToolVersion = "0.1.0";

}  // namespace ecgdx
