#include "deper/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "deper/errors.hpp"

namespace deper {

Json triplet_record_to_json(const TripletRecord& r) {
    Json boxes = Json::array();
    Json durations = Json::array();
    for (int i = 0; i < r.trajectory.length(); ++i) {
        if (!r.trajectory.validity[static_cast<std::size_t>(i)]) {
            continue;  // padding never hits disk
        }
        const BBox& b = r.trajectory.boxes[static_cast<std::size_t>(i)];
        boxes.push_back(Json::array({b.x_min, b.y_min, b.x_max, b.y_max}));
        durations.push_back(r.trajectory.durations[static_cast<std::size_t>(i)]);
    }
    return Json{{"subject_id", r.subject_id},
                {"image_ref", r.image_ref},
                {"description", r.description},
                {"trajectory", Json{{"boxes", boxes}, {"durations", durations}}}};
}

TripletRecord triplet_record_from_json(const Json& j) {
    TripletRecord r;
    r.subject_id = j.at("subject_id").get<std::string>();
    r.image_ref = j.at("image_ref").get<std::string>();
    r.description = j.at("description").get<std::string>();
    const Json& traj = j.at("trajectory");
    const Json& boxes = traj.at("boxes");
    const Json& durations = traj.at("durations");
    if (boxes.size() != durations.size()) {
        throw Error("trajectory boxes/durations length mismatch");
    }
    std::vector<BBox> bs;
    std::vector<double> ds;
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& b = boxes[i];
        bs.push_back(BBox{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                          b.at(3).get<double>()});
        ds.push_back(durations[i].get<double>());
    }
    r.trajectory = AttentionTrajectory::from_valid(std::move(bs), std::move(ds));
    return r;
}

void write_triplets_jsonl(const std::filesystem::path& path,
                          const std::vector<TripletRecord>& records) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& r : records) {
        out << triplet_record_to_json(r).dump() << "\n";
    }
}

std::vector<TripletRecord> read_triplets_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open " + path.string());
    }
    std::vector<TripletRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        out.push_back(triplet_record_from_json(Json::parse(line)));
    }
    return out;
}

void write_images_jsonl(const std::filesystem::path& path,
                        const std::map<std::string, ImageFeatures>& images) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot write " + path.string());
    }
    for (const auto& [ref, img] : images) {
        Json patches = Json::array();
        for (Eigen::Index i = 0; i < img.patches.rows(); ++i) {
            Json row = Json::array();
            for (Eigen::Index j = 0; j < img.patches.cols(); ++j) {
                row.push_back(img.patches(i, j));
            }
            patches.push_back(std::move(row));
        }
        Json centers = Json::array();
        for (const auto& c : img.patch_centers) {
            centers.push_back(Json::array({c[0], c[1]}));
        }
        out << Json{{"image_ref", ref}, {"patches", patches}, {"patch_centers", centers}}.dump()
            << "\n";
    }
}

std::map<std::string, ImageFeatures> read_images_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open " + path.string());
    }
    std::map<std::string, ImageFeatures> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const Json j = Json::parse(line);
        ImageFeatures img;
        const Json& patches = j.at("patches");
        const auto rows = static_cast<Eigen::Index>(patches.size());
        const auto cols = rows > 0 ? static_cast<Eigen::Index>(patches[0].size()) : 0;
        img.patches.resize(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index c = 0; c < cols; ++c) {
                img.patches(i, c) = patches[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)]
                                        .get<double>();
            }
        }
        for (const auto& c : j.at("patch_centers")) {
            img.patch_centers.push_back({c.at(0).get<double>(), c.at(1).get<double>()});
        }
        out.emplace(j.at("image_ref").get<std::string>(), std::move(img));
    }
    return out;
}

namespace {

std::vector<std::string> sorted_subjects(const std::vector<TripletRecord>& records) {
    std::set<std::string> s;
    for (const auto& r : records) {
        s.insert(r.subject_id);
    }
    return {s.begin(), s.end()};
}

}  // namespace

std::vector<std::string> Dataset::seen_subjects() const { return sorted_subjects(train); }

std::vector<std::string> Dataset::unseen_subjects() const {
    std::vector<std::string> out;
    for (const auto& [sid, resamples] : support) {
        (void)resamples;
        out.push_back(sid);
    }
    return out;
}

std::vector<std::string> Dataset::all_descriptions() const {
    std::vector<std::string> out;
    for (const auto* split : {&train, &val, &test}) {
        for (const auto& r : *split) {
            out.push_back(r.description);
        }
    }
    return out;
}

Dataset Dataset::load(const std::filesystem::path& dir) {
    Dataset d;
    d.images = read_images_jsonl(dir / "images.jsonl");
    d.train = read_triplets_jsonl(dir / "train.jsonl");
    d.val = read_triplets_jsonl(dir / "val.jsonl");
    d.test = read_triplets_jsonl(dir / "test.jsonl");
    if (std::filesystem::exists(dir / "unseen_pool.jsonl")) {
        d.unseen_pool = read_triplets_jsonl(dir / "unseen_pool.jsonl");
    }
    const auto support_dir = dir / "support";
    if (std::filesystem::exists(support_dir)) {
        std::vector<std::filesystem::path> subject_dirs;
        for (const auto& entry : std::filesystem::directory_iterator(support_dir)) {
            if (entry.is_directory()) {
                subject_dirs.push_back(entry.path());
            }
        }
        std::sort(subject_dirs.begin(), subject_dirs.end());
        for (const auto& sdir : subject_dirs) {
            std::vector<std::vector<TripletRecord>> resamples;
            for (int r = 0;; ++r) {
                const auto f = sdir / ("resample_" + std::to_string(r) + ".jsonl");
                if (!std::filesystem::exists(f)) {
                    break;
                }
                resamples.push_back(read_triplets_jsonl(f));
            }
            d.support.emplace(sdir.filename().string(), std::move(resamples));
        }
    }
    return d;
}

Triplet materialize(const TripletRecord& rec, const std::map<std::string, ImageFeatures>& images,
                    const Vocabulary& vocab, int m_max) {
    auto it = images.find(rec.image_ref);
    if (it == images.end()) {
        throw Error("unknown image_ref: " + rec.image_ref);
    }
    Triplet t;
    t.subject_id = rec.subject_id;
    t.image_ref = rec.image_ref;
    t.image = it->second;
    t.description = vocab.encode(rec.description);
    t.trajectory = pad_or_truncate(rec.trajectory, m_max);
    return t;
}

}  // namespace deper
