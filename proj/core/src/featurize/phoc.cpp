#include "m4c/featurize/phoc.hpp"

#include <algorithm>
#include <string>

namespace m4c::feat {

namespace {

int alphabet_index(char c) {
  if (c >= 'a' && c <= 'z') return c - 'a';
  if (c >= '0' && c <= '9') return 26 + (c - '0');
  return -1;
}

// Interval overlap test done in integer units of 1/(n*l) so the 50% boundary
// is decided exactly: span [begin, end) chars of n vs region r of l.
bool covers_half(std::size_t begin, std::size_t end, std::size_t n, std::size_t r,
                 std::size_t l) {
  const std::size_t a0 = begin * l, a1 = end * l;
  const std::size_t b0 = r * n, b1 = (r + 1) * n;
  const std::size_t lo = std::max(a0, b0), hi = std::min(a1, b1);
  if (hi <= lo) return false;
  return 2 * (hi - lo) >= (a1 - a0);
}

}  // namespace

std::vector<double> phoc(std::string_view text) {
  std::vector<int> chars;
  std::string word;
  for (char c : text) {
    const char lc = (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
    const int idx = alphabet_index(lc);
    if (idx >= 0) {
      chars.push_back(idx);
      word.push_back(lc);
    }
  }
  std::vector<double> out(kPhocDim, 0.0);
  const std::size_t n = chars.size();
  if (n == 0) return out;

  std::size_t offset = 0;
  for (std::size_t level : kPhocLevels) {
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < level; ++r) {
        if (covers_half(k, k + 1, n, r, level)) {
          out[offset + r * kPhocAlphabetSize + static_cast<std::size_t>(chars[k])] = 1.0;
        }
      }
    }
    offset += level * kPhocAlphabetSize;
  }

  for (std::size_t k = 0; k + 1 < n; ++k) {
    const std::string_view bigram(word.data() + k, 2);
    auto it = std::find(kPhocBigrams.begin(), kPhocBigrams.end(), bigram);
    if (it == kPhocBigrams.end()) continue;
    const auto b = static_cast<std::size_t>(it - kPhocBigrams.begin());
    for (std::size_t r = 0; r < kPhocBigramLevel; ++r) {
      if (covers_half(k, k + 2, n, r, kPhocBigramLevel)) {
        out[kPhocUnigramDim + r * kPhocBigramCount + b] = 1.0;
      }
    }
  }
  return out;
}

std::vector<std::size_t> phoc_indices(std::string_view text) {
  std::vector<std::size_t> idx;
  const auto v = phoc(text);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0) idx.push_back(i);
  return idx;
}

}  // namespace m4c::feat
