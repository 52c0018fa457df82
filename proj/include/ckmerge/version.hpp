#pragma once

namespace ckmerge {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ckmerge
