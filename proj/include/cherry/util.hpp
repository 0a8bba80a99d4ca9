#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cherry {

// --- hashing ------------------------------------------------------------

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x00000100000001b3ULL;

// FNV-1a over raw bytes.  Used for token bucketing, seed derivation and
// artifact fingerprints; never for anything security sensitive.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = kFnvOffset) {
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= kFnvPrime;
  }
  return h;
}

std::string to_hex16(std::uint64_t v);

// --- deterministic RNG ---------------------------------------------------

// splitmix64: tiny, fast, and trivially reproducible across platforms.
// All randomized behaviour in this project flows through this generator so
// that a (seed, phase) pair pins every byte of output.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n).  Plain modulo: bias is irrelevant at our scales and
  // the simple form is easy to reimplement in an oracle.
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(next() % static_cast<std::uint64_t>(n));
  }

  // 53-bit uniform double in [0, 1).
  double real() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t state_;
};

// Stable per-phase seed fan-out: hash the tag into the master seed so that
// phases draw from independent streams and adding a phase never shifts the
// streams of existing ones.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = kFnvOffset;
  for (int i = 0; i < 8; ++i) {
    h ^= (seed >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return fnv1a64(tag, h);
}

// --- text helpers ---------------------------------------------------------

// Unicode code points with the White_Space property (Unicode 15 list).
bool is_unicode_space(char32_t cp);

// Decodes one UTF-8 code point starting at `pos`; advances `pos`.  Invalid
// bytes are passed through one at a time as their byte value, so malformed
// input degrades deterministically instead of throwing.
char32_t decode_utf8(std::string_view text, std::size_t& pos);

// Strips leading/trailing Unicode whitespace.
std::string_view trim(std::string_view text);
bool is_blank(std::string_view text);

// Shortest round-trip decimal form (std::to_chars).  "1", "0.1", "1e+300".
std::string format_double(double v);

// Parses a double strictly: the whole field must be consumed.
bool parse_double(std::string_view text, double& out);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Replaces every occurrence of `needle` in `text`.
std::string replace_all(std::string_view text, std::string_view needle,
                        std::string_view replacement);

}  // namespace cherry
