#pragma once

namespace dpnet {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace dpnet
