#pragma once

#include <array>
#include <cstdint>

namespace imbal {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every random quantity used by the sampler is a pure function of
/// (seed, stream, draw, block): the 64-bit seed is the key, and the 128-bit counter is
/// {draw low, draw high, block, stream}. No state is carried between draws, so any
/// partition of the draw range over threads reproduces the same numbers.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static Block generate(Block counter, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      counter = single_round(counter, key);
    }
    return counter;
  }

  static Key key_from_seed(std::uint64_t seed) {
    return {static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53u;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

  static Block single_round(const Block& c, const Key& k) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * c[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * c[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
};

/// Random numbers for a single draw. Words are consumed in order; a fresh Philox block
/// is generated every four words.
class DrawStream {
 public:
  DrawStream(std::uint64_t seed, std::uint32_t stream, std::uint64_t draw)
      : key_(Philox4x32::key_from_seed(seed)), stream_(stream), draw_(draw) {}

  std::uint32_t next_u32() {
    if (used_ == 4) refill();
    return block_[used_++];
  }

  /// Two consecutive words, first one as the high half.
  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Integer in [0, n) as floor(u64 * n / 2^64). n must be >= 1.
  std::uint64_t uniform_index(std::uint64_t n) {
    const unsigned __int128 wide = static_cast<unsigned __int128>(next_u64()) * n;
    return static_cast<std::uint64_t>(wide >> 64);
  }

  /// Double in [0, 1) from the top 53 bits of a u64.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

 private:
  void refill() {
    block_ = Philox4x32::generate({static_cast<std::uint32_t>(draw_),
                                   static_cast<std::uint32_t>(draw_ >> 32), block_index_,
                                   stream_},
                                  key_);
    ++block_index_;
    used_ = 0;
  }

  Philox4x32::Key key_;
  std::uint32_t stream_;
  std::uint64_t draw_;
  std::uint32_t block_index_ = 0;
  Philox4x32::Block block_{};
  int used_ = 4;
};

}  // namespace imbal
