#include "cherry/tokenize.hpp"

#include <cctype>

#include "cherry/util.hpp"

namespace cherry {
namespace {

bool ascii_punct(unsigned char c) {
  // std::ispunct over the C locale, restricted to ASCII.
  return c < 0x80 && std::ispunct(c);
}

void finish_piece(std::string& piece, std::vector<std::string>& out) {
  std::size_t begin = 0;
  std::size_t end = piece.size();
  while (begin < end && ascii_punct(static_cast<unsigned char>(piece[begin])))
    ++begin;
  while (end > begin &&
         ascii_punct(static_cast<unsigned char>(piece[end - 1])))
    --end;
  if (end > begin) out.emplace_back(piece.substr(begin, end - begin));
  piece.clear();
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string piece;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t start = pos;
    char32_t cp = decode_utf8(text, pos);
    if (is_unicode_space(cp)) {
      finish_piece(piece, out);
      continue;
    }
    for (std::size_t i = start; i < pos; ++i) {
      char c = text[i];
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
      piece.push_back(c);
    }
  }
  finish_piece(piece, out);
  return out;
}

}  // namespace cherry
