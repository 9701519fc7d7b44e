#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/util.hpp"

namespace fewshot {

struct LabeledUtterance {
    std::string text;
    std::string label;

    bool operator==(const LabeledUtterance&) const = default;
};

enum class FileFormat { csv, jsonl };

// Optional manifest declaring expected split sizes and the label set, used
// to validate a freshly loaded dataset against published statistics.
struct DatasetManifest {
    std::map<std::string, std::size_t> expected_split_sizes;  // "train"/"dev"/"test"
    std::vector<std::string> label_set;                       // empty = derive from data
};

struct IntentDataset {
    std::string name;
    std::vector<LabeledUtterance> train;
    std::vector<LabeledUtterance> dev;  // may be empty (BANKING77, HINT3)
    std::vector<LabeledUtterance> test;
    std::vector<std::string> label_set;  // sorted, distinct

    std::size_t num_labels() const { return label_set.size(); }
    int label_index(const std::string& label) const;  // -1 if unknown

    // Fingerprint over all splits and the label set; episode sampling and
    // provenance both key on this.
    std::uint64_t content_hash() const;
};

struct SplitStats {
    std::size_t count = 0;
    std::map<std::string, std::size_t> per_label;
};

struct StatsReport {
    std::size_t num_labels = 0;
    std::map<std::string, SplitStats> splits;  // keys: train/dev/test present splits
    std::string to_text() const;               // deterministic rendering
};

struct Episode {
    std::string dataset_name;
    int k = 0;
    int seed = 0;
    std::vector<LabeledUtterance> items;      // exactly k per label
    std::vector<LabeledUtterance> eval_pool;  // dev ∪ test (test only if no dev)
    std::vector<std::string> label_set;

    std::uint64_t content_hash() const;
};

// Load a dataset split directory or a single file.
//
// Directory layout: train.{csv,jsonl} required, dev/test optional, plus an
// optional manifest.json. A bare file path is treated as a train-only
// dataset.
IntentDataset load_dataset(const std::filesystem::path& path, FileFormat format,
                           const std::optional<DatasetManifest>& manifest = std::nullopt);

// Parse one split file. Throws FormatError with a line number on malformed
// or blank-text rows.
std::vector<LabeledUtterance> load_split_file(const std::filesystem::path& path,
                                              FileFormat format);

DatasetManifest load_manifest(const std::filesystem::path& path);

StatsReport dataset_stats(const IntentDataset& ds);

// Draw k utterances per label from the train split, without replacement.
// Per-label RNG is seeded from (seed, label index) so draws are independent
// of label iteration order. Pure function of (dataset content, k, seed).
Episode sample_episode(const IntentDataset& ds, int k, int seed);

// Episode file round trip. serialize(parse(s)) == s for files written here.
std::string episode_to_json(const Episode& ep);
Episode episode_from_json(const std::string& text);
void save_episode(const Episode& ep, const std::filesystem::path& path);
Episode load_episode(const std::filesystem::path& path);

}  // namespace fewshot
