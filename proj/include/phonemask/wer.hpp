#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace phonemask {

// Whitespace tokenisation; no case folding or punctuation stripping.
std::vector<std::string> tokenize(std::string_view text);

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t total() const { return substitutions + deletions + insertions; }
};

// Minimum edit alignment; among equal-cost alignments the one found first by
// the backtrace (substitution, deletion, insertion) is reported.
EditCounts edit_counts(const std::vector<std::string>& reference,
                       const std::vector<std::string>& hypothesis);

// (S + D + I) / |reference|. Throws ContractError on an empty reference.
double wer(const std::vector<std::string>& reference, const std::vector<std::string>& hypothesis);

}  // namespace phonemask
