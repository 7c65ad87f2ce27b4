#pragma once

namespace mpenssar {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mpenssar
