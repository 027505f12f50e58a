#include "deper/text.hpp"

#include <array>
#include <cctype>

namespace deper {

namespace {

bool is_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':' || c == '"' ||
           c == '(' || c == ')';
}

}  // namespace

std::vector<std::string> tokenize_text(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    };
    for (char raw : text) {
        const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (is_punct(c)) {
            flush();
            out.push_back(std::string(1, c));
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) {
            out.push_back(' ');
        }
        out += tokens[i];
    }
    return out;
}

std::string stem_word(const std::string& word) {
    // ordered longest-first; first applicable rule wins
    static const std::array<std::pair<const char*, const char*>, 12> kRules{{
        {"sses", "ss"},
        {"ies", "i"},
        {"ation", "ate"},
        {"tional", "tion"},
        {"ness", ""},
        {"ment", ""},
        {"ingly", ""},
        {"edly", ""},
        {"ing", ""},
        {"ed", ""},
        {"ly", ""},
        {"s", ""},
    }};
    for (const auto& [suffix, replacement] : kRules) {
        const std::size_t len = std::char_traits<char>::length(suffix);
        if (word.size() > len + 1 && word.compare(word.size() - len, len, suffix) == 0) {
            if (std::string(suffix) == "s" && word.size() >= 2 && word[word.size() - 2] == 's') {
                continue;  // "ss" is not a plural
            }
            return word.substr(0, word.size() - len) + replacement;
        }
    }
    return word;
}

}  // namespace deper
