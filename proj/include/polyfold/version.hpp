#pragma once

namespace polyfold {

inline constexpr const char* kVersion = "0.1.0";

} // namespace polyfold
