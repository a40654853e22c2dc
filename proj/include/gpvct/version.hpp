#pragma once

namespace gpvct {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace gpvct
