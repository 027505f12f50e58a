#include "deper/vocab.hpp"

#include <algorithm>
#include <map>

#include "deper/errors.hpp"
#include "deper/text.hpp"

namespace deper {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<s>", "</s>", "<unk>", "<subj>"};
}

void Vocabulary::index() {
    token_to_id_.clear();
    for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
        token_to_id_.emplace(id_to_token_[i], static_cast<int>(i));
    }
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus, int min_freq) {
    if (corpus.empty()) {
        throw UsageError("cannot build a vocabulary from an empty corpus");
    }
    std::map<std::string, int> freq;
    for (const auto& text : corpus) {
        for (const auto& tok : tokenize_text(text)) {
            ++freq[tok];
        }
    }
    std::vector<std::pair<std::string, int>> entries(freq.begin(), freq.end());
    std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) {
            return a.second > b.second;
        }
        return a.first < b.first;
    });
    Vocabulary v;
    v.id_to_token_ = kSpecials;
    for (const auto& [tok, count] : entries) {
        if (count >= min_freq) {
            v.id_to_token_.push_back(tok);
        }
    }
    v.index();
    return v;
}

int Vocabulary::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size()) {
        throw Error("token id " + std::to_string(id) + " outside vocab of size " +
                    std::to_string(size()));
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

TokenizedDescription Vocabulary::encode(const std::string& text) const {
    TokenizedDescription d;
    d.raw_text = text;
    d.tokens.push_back(kBegin);
    for (const auto& tok : tokenize_text(text)) {
        d.tokens.push_back(id_of(tok));
    }
    d.tokens.push_back(kEnd);
    return d;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::vector<std::string> words;
    for (int id : ids) {
        if (id >= kFirstRegular) {
            words.push_back(token_of(id));
        }
    }
    return join_tokens(words);
}

Json Vocabulary::to_json() const { return Json{{"tokens", id_to_token_}}; }

Vocabulary Vocabulary::from_json(const Json& j) {
    Vocabulary v;
    v.id_to_token_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.id_to_token_.size() < kSpecials.size()) {
        throw Error("vocabulary json missing special tokens");
    }
    for (std::size_t i = 0; i < kSpecials.size(); ++i) {
        if (v.id_to_token_[i] != kSpecials[i]) {
            throw Error("vocabulary json has unexpected special token order");
        }
    }
    v.index();
    return v;
}

PromptTemplate PromptTemplate::standard(const Vocabulary& vocab) {
    PromptTemplate p;
    for (const auto& tok :
         tokenize_text("write a description of this photo in the style of")) {
        p.tokens.push_back(vocab.id_of(tok));
    }
    p.slot_index = static_cast<int>(p.tokens.size());
    p.tokens.push_back(Vocabulary::kSubjSlot);
    p.tokens.push_back(vocab.id_of("."));
    return p;
}

PromptTemplate PromptTemplate::from_tokens(std::vector<int> tokens) {
    PromptTemplate p;
    p.tokens = std::move(tokens);
    for (std::size_t i = 0; i < p.tokens.size(); ++i) {
        if (p.tokens[i] == Vocabulary::kSubjSlot) {
            if (p.slot_index >= 0) {
                throw Error("prompt has more than one subject slot");
            }
            p.slot_index = static_cast<int>(i);
        }
    }
    if (p.slot_index < 0) {
        throw Error("prompt has no subject slot");
    }
    return p;
}

}  // namespace deper
