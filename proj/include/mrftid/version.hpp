#pragma once

namespace mrftid {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mrftid
