#pragma once

namespace hypctl {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hypctl
