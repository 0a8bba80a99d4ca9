#pragma once

#include <string_view>

namespace cherry {

inline constexpr std::string_view kToolVersion = "0.1.0";

// Bumped when any on-disk artifact layout changes incompatibly.
inline constexpr int kArtifactSchemaVersion = 1;

}  // namespace cherry
