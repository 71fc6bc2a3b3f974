#pragma once

namespace eqps {
inline constexpr const char* kVersion = "0.1.0";
}
