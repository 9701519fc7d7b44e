#include "fewshot/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace fewshot {

namespace {

// Two-column CSV: text,label. Handles quoted fields with embedded commas
// and doubled quotes.
std::vector<std::string> split_csv_row(const std::string& line, std::size_t lineno) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted)
        throw FormatError("line " + std::to_string(lineno) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

LabeledUtterance validate_row(std::string text, std::string label, std::size_t lineno) {
    text = trim(text);
    label = trim(label);
    if (text.empty())
        throw FormatError("line " + std::to_string(lineno) + ": empty utterance text");
    if (label.empty())
        throw FormatError("line " + std::to_string(lineno) + ": empty label");
    return {std::move(text), std::move(label)};
}

void hash_split(std::uint64_t& h, const std::vector<LabeledUtterance>& split) {
    for (const auto& u : split) {
        h = fnv1a(u.text, h);
        h = fnv1a("\x1f", h);
        h = fnv1a(u.label, h);
        h = fnv1a("\x1e", h);
    }
}

}  // namespace

int IntentDataset::label_index(const std::string& label) const {
    auto it = std::lower_bound(label_set.begin(), label_set.end(), label);
    if (it == label_set.end() || *it != label) return -1;
    return static_cast<int>(it - label_set.begin());
}

std::uint64_t IntentDataset::content_hash() const {
    std::uint64_t h = fnv1a(name);
    hash_split(h, train);
    h = fnv1a("|dev|", h);
    hash_split(h, dev);
    h = fnv1a("|test|", h);
    hash_split(h, test);
    for (const auto& l : label_set) h = fnv1a(l, h);
    return h;
}

std::uint64_t Episode::content_hash() const {
    std::uint64_t h = fnv1a(dataset_name);
    h = hash_combine(h, static_cast<std::uint64_t>(k));
    h = hash_combine(h, static_cast<std::uint64_t>(seed));
    hash_split(h, items);
    return h;
}

std::vector<LabeledUtterance> load_split_file(const std::filesystem::path& path,
                                              FileFormat format) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset file: " + path.string());
    std::vector<LabeledUtterance> out;
    std::string line;
    std::size_t lineno = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (format == FileFormat::csv) {
            auto fields = split_csv_row(line, lineno);
            if (fields.size() != 2)
                throw FormatError("line " + std::to_string(lineno) + ": expected 2 fields, got " +
                                  std::to_string(fields.size()));
            // Tolerate a "text,label" / "text,category" header row.
            if (first && trim(fields[0]) == "text" &&
                (trim(fields[1]) == "label" || trim(fields[1]) == "category")) {
                first = false;
                continue;
            }
            out.push_back(validate_row(fields[0], fields[1], lineno));
        } else {
            nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object())
                throw FormatError("line " + std::to_string(lineno) + ": invalid JSON object");
            if (!j.contains("text") || !j.contains("label"))
                throw FormatError("line " + std::to_string(lineno) +
                                  ": missing \"text\" or \"label\" field");
            out.push_back(validate_row(j["text"].get<std::string>(),
                                       j["label"].get<std::string>(), lineno));
        }
        first = false;
    }
    return out;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    DatasetManifest m;
    if (j.contains("splits"))
        for (auto& [k, v] : j["splits"].items())
            m.expected_split_sizes[k] = v.get<std::size_t>();
    if (j.contains("label_set"))
        for (auto& l : j["label_set"]) m.label_set.push_back(l.get<std::string>());
    return m;
}

IntentDataset load_dataset(const std::filesystem::path& path, FileFormat format,
                           const std::optional<DatasetManifest>& manifest_arg) {
    IntentDataset ds;
    std::optional<DatasetManifest> manifest = manifest_arg;
    const char* ext = format == FileFormat::csv ? ".csv" : ".jsonl";

    if (std::filesystem::is_directory(path)) {
        ds.name = path.filename().string();
        auto train_path = path / (std::string("train") + ext);
        if (!std::filesystem::exists(train_path))
            throw IoError("missing train split: " + train_path.string());
        ds.train = load_split_file(train_path, format);
        if (auto p = path / (std::string("dev") + ext); std::filesystem::exists(p))
            ds.dev = load_split_file(p, format);
        if (auto p = path / (std::string("test") + ext); std::filesystem::exists(p))
            ds.test = load_split_file(p, format);
        if (!manifest)
            if (auto p = path / "manifest.json"; std::filesystem::exists(p))
                manifest = load_manifest(p);
    } else {
        ds.name = path.stem().string();
        ds.train = load_split_file(path, format);
    }

    if (ds.train.empty()) throw ValidationError("train split is empty");

    std::set<std::string> labels;
    for (const auto* split : {&ds.train, &ds.dev, &ds.test})
        for (const auto& u : *split) labels.insert(u.label);
    ds.label_set.assign(labels.begin(), labels.end());  // sorted by construction

    if (manifest && !manifest->label_set.empty()) {
        std::set<std::string> declared(manifest->label_set.begin(), manifest->label_set.end());
        for (const auto& l : ds.label_set)
            if (!declared.count(l))
                throw ValidationError("label not in manifest label set: " + l);
        ds.label_set = manifest->label_set;
    }

    if (ds.label_set.size() < 2)
        throw ValidationError("dataset must have at least 2 labels, found " +
                              std::to_string(ds.label_set.size()));

    if (manifest) {
        auto check = [&](const char* name, std::size_t actual) {
            auto it = manifest->expected_split_sizes.find(name);
            if (it != manifest->expected_split_sizes.end() && it->second != actual)
                throw ValidationError(std::string("split ") + name + " has " +
                                      std::to_string(actual) + " rows, manifest declares " +
                                      std::to_string(it->second));
        };
        check("train", ds.train.size());
        check("dev", ds.dev.size());
        check("test", ds.test.size());
    }
    return ds;
}

StatsReport dataset_stats(const IntentDataset& ds) {
    StatsReport rep;
    rep.num_labels = ds.label_set.size();
    auto fill = [&](const char* name, const std::vector<LabeledUtterance>& split) {
        if (split.empty() && std::string(name) != "train") return;
        SplitStats s;
        s.count = split.size();
        for (const auto& u : split) s.per_label[u.label]++;
        rep.splits[name] = std::move(s);
    };
    fill("train", ds.train);
    fill("dev", ds.dev);
    fill("test", ds.test);
    return rep;
}

std::string StatsReport::to_text() const {
    std::ostringstream os;
    os << "labels: " << num_labels << "\n";
    for (const char* name : {"train", "dev", "test"}) {
        auto it = splits.find(name);
        if (it == splits.end()) continue;
        os << name << ": " << it->second.count << "\n";
    }
    return os.str();
}

Episode sample_episode(const IntentDataset& ds, int k, int seed) {
    if (k <= 0) throw ContractError("sample_episode: k must be positive");

    // Bucket train indices by label, preserving file order.
    std::vector<std::vector<std::size_t>> by_label(ds.label_set.size());
    for (std::size_t i = 0; i < ds.train.size(); ++i) {
        int li = ds.label_index(ds.train[i].label);
        if (li < 0) throw ValidationError("train label outside label set: " + ds.train[i].label);
        by_label[li].push_back(i);
    }

    for (std::size_t li = 0; li < by_label.size(); ++li)
        if (by_label[li].size() < static_cast<std::size_t>(k))
            throw InsufficientDataError("label \"" + ds.label_set[li] + "\" has only " +
                                        std::to_string(by_label[li].size()) +
                                        " train utterances, need " + std::to_string(k));

    Episode ep;
    ep.dataset_name = ds.name;
    ep.k = k;
    ep.seed = seed;
    ep.label_set = ds.label_set;

    for (std::size_t li = 0; li < by_label.size(); ++li) {
        // Partial Fisher-Yates: first k slots after shuffling prefix.
        auto idx = by_label[li];
        std::mt19937_64 rng(hash_combine(static_cast<std::uint64_t>(seed),
                                         hash_combine(0x5e5e5e5eULL, li)));
        for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i) {
            std::size_t j = i + bounded(rng, idx.size() - i);
            std::swap(idx[i], idx[j]);
        }
        for (std::size_t i = 0; i < static_cast<std::size_t>(k); ++i)
            ep.items.push_back(ds.train[idx[i]]);
    }

    ep.eval_pool = ds.dev.empty() ? ds.test : ds.dev;
    if (!ds.dev.empty())
        ep.eval_pool.insert(ep.eval_pool.end(), ds.test.begin(), ds.test.end());
    return ep;
}

std::string episode_to_json(const Episode& ep) {
    nlohmann::ordered_json j;
    j["dataset_name"] = ep.dataset_name;
    j["K"] = ep.k;
    j["seed"] = ep.seed;
    j["items"] = nlohmann::ordered_json::array();
    for (const auto& u : ep.items)
        j["items"].push_back({{"text", u.text}, {"label", u.label}});
    return j.dump(2) + "\n";
}

Episode episode_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    Episode ep;
    ep.dataset_name = j.at("dataset_name").get<std::string>();
    ep.k = j.at("K").get<int>();
    ep.seed = j.at("seed").get<int>();
    std::set<std::string> labels;
    for (const auto& it : j.at("items")) {
        ep.items.push_back({it.at("text").get<std::string>(), it.at("label").get<std::string>()});
        labels.insert(ep.items.back().label);
    }
    ep.label_set.assign(labels.begin(), labels.end());
    return ep;
}

void save_episode(const Episode& ep, const std::filesystem::path& path) {
    write_file_atomic(path, episode_to_json(ep));
}

Episode load_episode(const std::filesystem::path& path) {
    return episode_from_json(read_file(path));
}

}  // namespace fewshot
