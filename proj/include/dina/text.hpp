#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dina {

class Rng;

// Splits text into unicode scalar values, one token per scalar. Bytes that do
// not form valid UTF-8 become single-byte tokens, so concatenating the tokens
// always reproduces the input exactly.
std::vector<std::string> tokenize(std::string_view text);

std::string join_tokens(const std::vector<std::string>& tokens);

// Attack mask placeholder used when probing token importance.
inline const std::string& mask_token() {
  static const std::string m = "\xE2\x96\xA1";  // U+25A1 white square
  return m;
}

// Drops each token independently with probability rate. Used as the weak
// augmentation during semi-supervised training. Never returns an empty
// sequence for non-empty input: if everything is dropped, one surviving token
// is kept at a position chosen by the same stream.
std::vector<std::string> drop_tokens(const std::vector<std::string>& tokens, double rate,
                                     Rng& rng);

}  // namespace dina
