#include "deper/model.hpp"

#include <algorithm>

#include "deper/errors.hpp"

namespace deper {

DeperModel DeperModel::build(ModelConfig cfg, std::vector<std::string> subjects, Vocabulary vocab,
                             std::uint64_t seed) {
    if (subjects.empty()) {
        throw UsageError("model needs at least one subject");
    }
    cfg.vocab_size = vocab.size();
    const auto violations = cfg.validate();
    if (!violations.empty()) {
        throw UsageError("model config: " + violations.front());
    }
    DeperModel m;
    m.cfg = cfg;
    m.subjects = std::move(subjects);
    std::sort(m.subjects.begin(), m.subjects.end());
    m.vocab = std::move(vocab);
    m.prompt = PromptTemplate::standard(m.vocab);
    Rng rng(Rng::derive(seed, {0x6d6f64656cULL}));
    m.enc = dual_encoder::Weights::create(m.store, m.cfg, rng);
    m.ext = subject_extractor::Weights::create(m.store, m.cfg,
                                               static_cast<int>(m.subjects.size()), rng);
    m.dec = traj_decoder::Weights::create(m.store, m.cfg, rng);
    m.lm = desc_head::Weights::create(m.store, m.cfg, rng);
    return m;
}

int DeperModel::subject_index(const std::string& id) const {
    const auto it = std::lower_bound(subjects.begin(), subjects.end(), id);
    if (it == subjects.end() || *it != id) {
        return -1;
    }
    return static_cast<int>(it - subjects.begin());
}

DeperModel::Encoded DeperModel::encode_extract(const Triplet& t, bool detach_streams) const {
    Encoded e;
    e.streams = dual_encoder::encode_triplet(t, enc, cfg);
    if (detach_streams) {
        e.streams.text = nn::Var::constant(e.streams.text.value());
        if (e.streams.has_traj()) {
            e.streams.traj = nn::Var::constant(e.streams.traj.value());
        }
    }
    e.z_s = subject_extractor::extract(e.streams, ext, cfg);
    return e;
}

std::size_t DeperModel::expected_param_count() const {
    return dual_encoder::Weights::param_count(cfg) +
           subject_extractor::Weights::param_count(cfg, static_cast<int>(subjects.size())) +
           traj_decoder::Weights::param_count(cfg) + desc_head::Weights::param_count(cfg);
}

}  // namespace deper
