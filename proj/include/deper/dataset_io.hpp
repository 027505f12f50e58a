// JSON Lines dataset schema. Triplets: one object per line with keys
// subject_id, image_ref, description, trajectory{boxes, durations}. Image
// features live in a companion images.jsonl keyed by image_ref.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deper/types.hpp"
#include "deper/vocab.hpp"

namespace deper {

Json triplet_record_to_json(const TripletRecord& r);
TripletRecord triplet_record_from_json(const Json& j);

void write_triplets_jsonl(const std::filesystem::path& path,
                          const std::vector<TripletRecord>& records);
std::vector<TripletRecord> read_triplets_jsonl(const std::filesystem::path& path);

void write_images_jsonl(const std::filesystem::path& path,
                        const std::map<std::string, ImageFeatures>& images);
std::map<std::string, ImageFeatures> read_images_jsonl(const std::filesystem::path& path);

// A dataset directory: images.jsonl + {train,val,test}.jsonl + optional
// unseen pool and per-subject support resamples.
struct Dataset {
    std::map<std::string, ImageFeatures> images;
    std::vector<TripletRecord> train, val, test;
    std::vector<TripletRecord> unseen_pool;
    // subject -> resample index -> records
    std::map<std::string, std::vector<std::vector<TripletRecord>>> support;

    std::vector<std::string> seen_subjects() const;    // from train, sorted
    std::vector<std::string> unseen_subjects() const;  // from support, sorted
    std::vector<std::string> all_descriptions() const;

    static Dataset load(const std::filesystem::path& dir);
};

// Resolves image_ref and tokenizes the description.
Triplet materialize(const TripletRecord& rec, const std::map<std::string, ImageFeatures>& images,
                    const Vocabulary& vocab, int m_max);

}  // namespace deper
