#include "rceed/charset.hpp"

#include "rceed/errors.hpp"

namespace rceed {

namespace {
constexpr std::string_view kAlphabet =
    "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz";
}

std::string_view CharSet::alphabet() { return kAlphabet; }

char CharSet::to_char(std::size_t index) {
  if (index >= kCharacters) throw IndexError("class " + std::to_string(index) + " is not a character");
  return kAlphabet[index];
}

bool CharSet::contains(char c) {
  return (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z');
}

std::size_t CharSet::to_index(char c) {
  if (c >= '0' && c <= '9') return static_cast<std::size_t>(c - '0');
  if (c >= 'A' && c <= 'Z') return 10 + static_cast<std::size_t>(c - 'A');
  if (c >= 'a' && c <= 'z') return 36 + static_cast<std::size_t>(c - 'a');
  throw InputError(std::string("character '") + c + "' is outside the alphabet");
}

std::vector<std::size_t> CharSet::encode(std::string_view text) {
  std::vector<std::size_t> out;
  out.reserve(text.size() + 1);
  for (char c : text) out.push_back(to_index(c));
  out.push_back(kEos);
  return out;
}

std::string CharSet::decode(const std::vector<std::size_t>& classes) {
  std::string out;
  for (auto c : classes) {
    if (c == kEos) break;
    out.push_back(to_char(c));
  }
  return out;
}

}  // namespace rceed
