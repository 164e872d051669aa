#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace rceed {

// Output classes: 0-9 digits, 10-35 'A'-'Z', 36-61 'a'-'z', 62 EOS.
// SOS (63) exists only in the embedding vocabulary.
struct CharSet {
  static constexpr std::size_t kCharacters = 62;
  static constexpr std::size_t kEos = 62;
  static constexpr std::size_t kSos = 63;
  static constexpr std::size_t kClasses = 63;
  static constexpr std::size_t kVocabulary = 64;

  static char to_char(std::size_t index);
  static std::size_t to_index(char c);
  static bool contains(char c);
  // Label -> class ids followed by EOS.
  static std::vector<std::size_t> encode(std::string_view text);
  // Class ids -> text, stopping at the first EOS.
  static std::string decode(const std::vector<std::size_t>& classes);
  static std::string_view alphabet();
};

}  // namespace rceed
