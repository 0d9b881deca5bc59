#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace biaslens::text {

/// One decoded code point and the byte range it occupies.
struct CodePoint {
  char32_t value;
  std::size_t begin;
  std::size_t end;
};

/// Decodes UTF-8. Invalid bytes decode to U+FFFD one byte at a time.
std::vector<CodePoint> decode_utf8(std::string_view s);

bool is_space(char32_t c);
bool is_punctuation(char32_t c);
/// Letters, digits, combining marks and apostrophes inside words.
bool is_word_char(char32_t c);
/// Scripts written without inter-word spaces (Han, Thai, Kana, Lao, Khmer, Myanmar).
bool is_unspaced_script(char32_t c);

std::string ascii_lower(std::string_view s);
std::string ascii_upper(std::string_view s);
bool is_ascii_upper(char c);

/// 64-bit FNV-1a. Stable across platforms, used for seeds and sampling keys.
std::uint64_t fnv1a(std::string_view s);
std::uint64_t splitmix64(std::uint64_t x);

/// Maps a 64-bit hash to [0, 1) with 53 bits of precision.
double unit_interval(std::uint64_t h);

/// Deterministic pseudo-random vector in [-1, 1)^dim keyed by (seed, key).
std::vector<double> hashed_vector(std::uint64_t seed, std::string_view key, std::size_t dim);

std::string trim(std::string_view s);

}  // namespace biaslens::text
