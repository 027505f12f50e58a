#include "deper/types.hpp"

#include <algorithm>
#include <cmath>

#include "deper/errors.hpp"

namespace deper {

double BBox::iou(const BBox& o) const {
    const double ix = std::max(0.0, std::min(x_max, o.x_max) - std::max(x_min, o.x_min));
    const double iy = std::max(0.0, std::min(y_max, o.y_max) - std::max(y_min, o.y_min));
    const double inter = ix * iy;
    const double uni = area() + o.area() - inter;
    return uni <= 0.0 ? 0.0 : inter / uni;
}

int AttentionTrajectory::valid_count() const {
    int n = 0;
    for (int v : validity) {
        n += v != 0;
    }
    return n;
}

double AttentionTrajectory::total_valid_duration() const {
    double total = 0.0;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        if (validity[i]) {
            total += durations[i];
        }
    }
    return total;
}

AttentionTrajectory AttentionTrajectory::from_valid(std::vector<BBox> boxes,
                                                    std::vector<double> durations) {
    AttentionTrajectory t;
    t.validity.assign(boxes.size(), 1);
    t.boxes = std::move(boxes);
    t.durations = std::move(durations);
    return t;
}

AttentionTrajectory pad_or_truncate(const AttentionTrajectory& traj, int m_max) {
    AttentionTrajectory out;
    const int keep = std::min<int>(traj.length(), m_max);
    out.boxes.assign(traj.boxes.begin(), traj.boxes.begin() + keep);
    out.durations.assign(traj.durations.begin(), traj.durations.begin() + keep);
    out.validity.assign(traj.validity.begin(), traj.validity.begin() + keep);
    out.boxes.resize(static_cast<std::size_t>(m_max));
    out.durations.resize(static_cast<std::size_t>(m_max), 0.0);
    out.validity.resize(static_cast<std::size_t>(m_max), 0);
    return out;
}

std::pair<std::array<double, 2>, double> box_center_duration_stats(
    const AttentionTrajectory& traj) {
    double cx = 0.0, cy = 0.0, total = 0.0;
    int n = 0;
    for (int i = 0; i < traj.length(); ++i) {
        if (!traj.validity[static_cast<std::size_t>(i)]) {
            continue;
        }
        const auto c = traj.boxes[static_cast<std::size_t>(i)].center();
        cx += c[0];
        cy += c[1];
        total += traj.durations[static_cast<std::size_t>(i)];
        ++n;
    }
    if (n == 0) {
        throw Error("empty trajectory");
    }
    return {{cx / n, cy / n}, total};
}

std::vector<std::string> validate_trajectory(const AttentionTrajectory& traj) {
    std::vector<std::string> out;
    const std::size_t nb = traj.boxes.size();
    if (traj.durations.size() != nb || traj.validity.size() != nb) {
        out.push_back("length mismatch " + std::to_string(nb) + "/" +
                      std::to_string(traj.durations.size()) + "/" +
                      std::to_string(traj.validity.size()));
        return out;
    }
    for (std::size_t i = 0; i < nb; ++i) {
        const BBox& b = traj.boxes[i];
        if (traj.validity[i]) {
            if (b.x_min > b.x_max) {
                out.push_back("box " + std::to_string(i) + ": x_min>x_max");
            }
            if (b.y_min > b.y_max) {
                out.push_back("box " + std::to_string(i) + ": y_min>y_max");
            }
            if (b.x_min < 0.0 || b.x_max > 1.0 || b.y_min < 0.0 || b.y_max > 1.0) {
                out.push_back("box " + std::to_string(i) + ": outside unit square");
            }
            if (!(traj.durations[i] > 0.0)) {
                out.push_back("entry " + std::to_string(i) + ": non-positive duration");
            }
        } else {
            if (b != BBox{} || traj.durations[i] != 0.0) {
                out.push_back("padded entry " + std::to_string(i) + ": not zeroed");
            }
        }
    }
    return out;
}

std::vector<std::string> validate_triplet(const Triplet& t, const ModelConfig& cfg) {
    std::vector<std::string> out = validate_trajectory(t.trajectory);
    if (t.subject_id.empty()) {
        out.push_back("empty subject_id");
    }
    if (t.trajectory.length() > cfg.m_max) {
        out.push_back("trajectory length " + std::to_string(t.trajectory.length()) + " exceeds " +
                      std::to_string(cfg.m_max));
    }
    if (t.image.patch_count() < 1) {
        out.push_back("image has no patches");
    } else {
        if (static_cast<int>(t.image.patch_centers.size()) != t.image.patch_count()) {
            out.push_back("patch center count mismatch");
        }
        for (const auto& c : t.image.patch_centers) {
            if (c[0] < 0.0 || c[0] > 1.0 || c[1] < 0.0 || c[1] > 1.0) {
                out.push_back("patch center outside unit square");
                break;
            }
        }
        if (cfg.img_dim > 0 && t.image.patches.cols() != cfg.img_dim) {
            out.push_back("patch feature dim " + std::to_string(t.image.patches.cols()) +
                          " != config img_dim " + std::to_string(cfg.img_dim));
        }
    }
    if (t.description.length() < 2) {
        out.push_back("description missing sentinels");
    }
    if (cfg.vocab_size > 0) {
        for (int id : t.description.tokens) {
            if (id < 0 || id >= cfg.vocab_size) {
                out.push_back("token id " + std::to_string(id) + " outside vocab");
                break;
            }
        }
    }
    return out;
}

std::vector<std::string> ModelConfig::validate() const {
    std::vector<std::string> out;
    auto positive = [&](int v, const char* name) {
        if (v <= 0) {
            out.push_back(std::string(name) + " must be positive");
        }
    };
    positive(hidden_dim, "hidden_dim");
    positive(heads, "heads");
    positive(ffn_mult, "ffn_mult");
    positive(img_dim, "img_dim");
    positive(lm_dim, "lm_dim");
    positive(m_max, "m_max");
    positive(lm_layers, "lm_layers");
    if (encoder_layers < 0 || extractor_layers < 0 || decoder_layers < 0) {
        out.push_back("layer counts must be non-negative");
    }
    if (lambda_con < 0.0) {
        out.push_back("lambda_con must be >= 0");
    }
    if (supcon_temperature <= 0.0) {
        out.push_back("supcon_temperature must be > 0");
    }
    if (hidden_dim % heads != 0) {
        out.push_back("hidden_dim must be divisible by heads");
    }
    if (lm_dim % heads != 0) {
        out.push_back("lm_dim must be divisible by heads");
    }
    return out;
}

Json ModelConfig::to_json() const {
    return Json{{"hidden_dim", hidden_dim},
                {"encoder_layers", encoder_layers},
                {"extractor_layers", extractor_layers},
                {"decoder_layers", decoder_layers},
                {"lm_layers", lm_layers},
                {"heads", heads},
                {"ffn_mult", ffn_mult},
                {"img_dim", img_dim},
                {"lm_dim", lm_dim},
                {"m_max", m_max},
                {"vocab_size", vocab_size},
                {"lambda_con", lambda_con},
                {"supcon_temperature", supcon_temperature},
                {"use_traj_input", use_traj_input},
                {"use_traj_dynamics", use_traj_dynamics},
                {"use_traj_recon", use_traj_recon},
                {"use_film", use_film},
                {"use_contrastive", use_contrastive},
                {"use_dual_context", use_dual_context},
                {"use_traj_latent", use_traj_latent}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
    ModelConfig cfg;
    const Json defaults = cfg.to_json();
    std::vector<std::string> allowed;
    for (const auto& [k, v] : defaults.items()) {
        (void)v;
        allowed.push_back(k);
    }
    reject_unknown_keys(j, allowed, "model");
    Json merged = defaults;
    merged.update(j);
    cfg.hidden_dim = merged["hidden_dim"].get<int>();
    cfg.encoder_layers = merged["encoder_layers"].get<int>();
    cfg.extractor_layers = merged["extractor_layers"].get<int>();
    cfg.decoder_layers = merged["decoder_layers"].get<int>();
    cfg.lm_layers = merged["lm_layers"].get<int>();
    cfg.heads = merged["heads"].get<int>();
    cfg.ffn_mult = merged["ffn_mult"].get<int>();
    cfg.img_dim = merged["img_dim"].get<int>();
    cfg.lm_dim = merged["lm_dim"].get<int>();
    cfg.m_max = merged["m_max"].get<int>();
    cfg.vocab_size = merged["vocab_size"].get<int>();
    cfg.lambda_con = merged["lambda_con"].get<double>();
    cfg.supcon_temperature = merged["supcon_temperature"].get<double>();
    cfg.use_traj_input = merged["use_traj_input"].get<bool>();
    cfg.use_traj_dynamics = merged["use_traj_dynamics"].get<bool>();
    cfg.use_traj_recon = merged["use_traj_recon"].get<bool>();
    cfg.use_film = merged["use_film"].get<bool>();
    cfg.use_contrastive = merged["use_contrastive"].get<bool>();
    cfg.use_dual_context = merged["use_dual_context"].get<bool>();
    cfg.use_traj_latent = merged["use_traj_latent"].get<bool>();
    const auto violations = cfg.validate();
    if (!violations.empty()) {
        throw UsageError("model config: " + violations.front());
    }
    return cfg;
}

}  // namespace deper
