#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "deper/json_util.hpp"
#include "deper/types.hpp"

namespace deper {

class Vocabulary {
public:
    // Special token ids, dense from 0.
    static constexpr int kPad = 0;
    static constexpr int kBegin = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnk = 3;
    static constexpr int kSubjSlot = 4;

    // Tokens below min_freq collapse to <unk>. Ordering is (freq desc,
    // lexicographic) so rebuilding from the same corpus reproduces ids.
    static Vocabulary build(const std::vector<std::string>& corpus, int min_freq = 1);

    int size() const { return static_cast<int>(id_to_token_.size()); }
    int id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token_of(int id) const;
    bool is_special(int id) const { return id < kFirstRegular; }

    // begin/end sentinels added; unknown surface forms map to <unk>.
    TokenizedDescription encode(const std::string& text) const;
    // Space-joined surface forms, specials skipped.
    std::string decode(const std::vector<int>& ids) const;

    Json to_json() const;
    static Vocabulary from_json(const Json& j);

    static constexpr int kFirstRegular = 5;

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
    void index();
};

// "Write a description of this photo in the style of <subj> ." with exactly
// one slot whose embedding gets replaced by the adapted subject vector.
struct PromptTemplate {
    std::vector<int> tokens;
    int slot_index = -1;

    static PromptTemplate standard(const Vocabulary& vocab);
    static PromptTemplate from_tokens(std::vector<int> tokens);  // validates the slot
};

}  // namespace deper
