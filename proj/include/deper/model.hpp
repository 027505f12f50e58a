#pragma once

#include <string>
#include <vector>

#include "deper/desc_head.hpp"
#include "deper/dual_encoder.hpp"
#include "deper/subject_extractor.hpp"
#include "deper/traj_decoder.hpp"
#include "deper/types.hpp"
#include "deper/vocab.hpp"

namespace deper {

// Every trainable module wired to one parameter store. Subject order fixes
// the classification head layout; the vocabulary fixes both token tables.
struct DeperModel {
    ModelConfig cfg;
    std::vector<std::string> subjects;
    Vocabulary vocab;
    PromptTemplate prompt;
    nn::ParamStore store;
    dual_encoder::Weights enc;
    subject_extractor::Weights ext;
    traj_decoder::Weights dec;
    desc_head::Weights lm;

    static DeperModel build(ModelConfig cfg, std::vector<std::string> subjects, Vocabulary vocab,
                            std::uint64_t seed);

    int subject_index(const std::string& id) const;

    struct Encoded {
        dual_encoder::Streams streams;
        nn::Var z_s;
    };
    // detach_streams cuts the graph at Z_dual (used when the encoder is
    // frozen; updates downstream are unchanged).
    Encoded encode_extract(const Triplet& t, bool detach_streams = false) const;

    std::size_t expected_param_count() const;
};

}  // namespace deper
