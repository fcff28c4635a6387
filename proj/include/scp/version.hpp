#pragma once

namespace scp {

inline constexpr const char* version = "0.1.0";

} // namespace scp
