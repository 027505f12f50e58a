// Tokenization shared by the vocabulary and the metrics: lowercase,
// whitespace-delimited, punctuation split off as standalone tokens.
#pragma once

#include <string>
#include <vector>

namespace deper {

std::vector<std::string> tokenize_text(const std::string& text);
std::string join_tokens(const std::vector<std::string>& tokens);

// Fixed-rule suffix stripper (Porter-style step tables) so stem matches are
// deterministic across implementations.
std::string stem_word(const std::string& word);

}  // namespace deper
