#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cherry {

// Whitespace word tokenizer shared by the n-gram scorer and the embedder.
// Rules, in order:
//   1. split on Unicode whitespace (White_Space code points, UTF-8 decoded;
//      invalid byte sequences are treated as opaque non-space bytes)
//   2. lowercase ASCII letters only; other bytes are left untouched
//   3. strip leading/trailing ASCII punctuation from each piece
//   4. drop pieces that end up empty
// "Hello, World!" -> ["hello", "world"].
std::vector<std::string> tokenize(std::string_view text);

}  // namespace cherry
