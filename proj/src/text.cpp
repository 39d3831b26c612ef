#include "dina/text.hpp"

#include "dina/rng.hpp"

namespace dina {
namespace {

// Length of a well-formed UTF-8 sequence starting at p, or 0 if malformed.
// Checks continuation bytes, overlong forms, surrogates and the U+10FFFF cap.
std::size_t utf8_sequence_length(const unsigned char* p, std::size_t avail) {
  const unsigned char b0 = p[0];
  if (b0 < 0x80) return 1;
  std::size_t len;
  std::uint32_t cp;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1Fu;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0Fu;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07u;
  } else {
    return 0;
  }
  if (avail < len) return 0;
  for (std::size_t i = 1; i < len; ++i) {
    if ((p[i] & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (p[i] & 0x3Fu);
  }
  static constexpr std::uint32_t kMin[5] = {0, 0, 0x80, 0x800, 0x10000};
  if (cp < kMin[len]) return 0;                  // overlong
  if (cp >= 0xD800 && cp <= 0xDFFF) return 0;    // surrogate
  if (cp > 0x10FFFF) return 0;
  return len;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  tokens.reserve(text.size());
  const auto* p = reinterpret_cast<const unsigned char*>(text.data());
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t len = utf8_sequence_length(p + i, text.size() - i);
    if (len == 0) len = 1;  // malformed byte becomes its own token
    tokens.emplace_back(text.substr(i, len));
    i += len;
  }
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::size_t total = 0;
  for (const auto& t : tokens) total += t.size();
  std::string out;
  out.reserve(total);
  for (const auto& t : tokens) out += t;
  return out;
}

std::vector<std::string> drop_tokens(const std::vector<std::string>& tokens, double rate,
                                     Rng& rng) {
  std::vector<std::string> kept;
  kept.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (!rng.bernoulli(rate)) kept.push_back(t);
  }
  if (kept.empty() && !tokens.empty()) {
    kept.push_back(tokens[static_cast<std::size_t>(rng.below(tokens.size()))]);
  }
  return kept;
}

}  // namespace dina
