#pragma once

namespace mat {

// Reserved token ids, fixed across the library and recorded in checkpoints.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumSpecialTokens = 4;

}  // namespace mat
