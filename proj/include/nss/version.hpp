#pragma once

namespace nss {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace nss
