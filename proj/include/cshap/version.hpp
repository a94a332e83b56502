#pragma once

namespace cshap {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace cshap
