#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace m4c::feat {

// Unigram pyramid over levels 2..5 on [a-z0-9], then level-2 bigrams.
inline constexpr std::size_t kPhocAlphabetSize = 36;
inline constexpr std::array<std::size_t, 4> kPhocLevels = {2, 3, 4, 5};
inline constexpr std::size_t kPhocBigramLevel = 2;
inline constexpr std::size_t kPhocUnigramDim = (2 + 3 + 4 + 5) * kPhocAlphabetSize;  // 504
inline constexpr std::size_t kPhocBigramCount = 50;
inline constexpr std::size_t kPhocDim = kPhocUnigramDim + kPhocBigramLevel * kPhocBigramCount;

// The 50 most frequent English bigrams, in the order their slots appear.
inline constexpr std::array<std::string_view, kPhocBigramCount> kPhocBigrams = {
    "th", "he", "in", "er", "an", "re", "es", "on", "st", "nt",  //
    "en", "at", "ed", "nd", "to", "or", "ea", "ti", "ar", "te",  //
    "ng", "al", "it", "as", "is", "ha", "et", "se", "ou", "of",  //
    "le", "sa", "ve", "ro", "ra", "ri", "hi", "ne", "me", "de",  //
    "co", "ta", "ec", "si", "ll", "so", "na", "li", "la", "el",
};

/// Pyramidal Histogram of Characters, 604 binary entries.
///
/// The word is lowercased and reduced to [a-z0-9]. Character k of an
/// n-character word occupies [k/n, (k+1)/n] and is set in region r of level l
/// when its overlap with [r/l, (r+1)/l] covers at least half of its own
/// occupancy. Bigrams use the same rule at level 2 over [k/n, (k+2)/n].
std::vector<double> phoc(std::string_view text);

// Indices of the set entries, ascending.
std::vector<std::size_t> phoc_indices(std::string_view text);

}  // namespace m4c::feat
