#include "fewshot/contextgen.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace fewshot {

namespace {

std::string expand_index(const std::string& pattern, std::size_t i) {
    std::string out = pattern;
    if (auto pos = out.find("{i}"); pos != std::string::npos)
        out.replace(pos, 3, std::to_string(i));
    return out;
}

std::string escape_line(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '\n')
            out += "\\n";
        else if (c == '\r')
            continue;
        else
            out += c;
    }
    return out;
}

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

}  // namespace

void GenerationRequest::validate() const {
    if (prompt.empty()) throw ContractError("generation request: empty prompt");
    if (temperature <= 0.0) throw ContractError("generation request: temperature must be > 0");
    if (num_samples < 1) throw ContractError("generation request: num_samples must be >= 1");
    if (max_new_tokens < 1) throw ContractError("generation request: max_new_tokens must be >= 1");
}

std::string build_prompt(const std::vector<LabeledUtterance>& items, const PromptTemplate& tpl) {
    if (items.empty()) throw ContractError("build_prompt: no items");
    const std::string& label = items.front().label;
    for (const auto& u : items)
        if (u.label != label) throw ContractError("build_prompt: items span multiple labels");

    std::ostringstream os;
    if (tpl.header) os << *tpl.header << "\n";
    for (std::size_t i = 0; i < items.size(); ++i)
        os << expand_index(tpl.item_prefix, i + 1) << escape_line(items[i].text) << "\n";
    os << expand_index(tpl.continuation_slot, items.size() + 1);
    return os.str();
}

std::vector<std::string> parse_prompt_lines(const std::string& prompt, const PromptTemplate& tpl) {
    std::vector<std::string> items;
    std::istringstream is(prompt);
    std::string line;
    std::size_t index = 1;
    bool first = true;
    while (std::getline(is, line)) {
        if (first && tpl.header && line == *tpl.header) {
            first = false;
            continue;
        }
        first = false;
        const std::string prefix = expand_index(tpl.item_prefix, index);
        if (line.rfind(prefix, 0) == 0 && line.size() > prefix.size()) {
            items.push_back(line.substr(prefix.size()));
            ++index;
        }
    }
    return items;
}

std::vector<std::string> StubLMClient::generate(const GenerationRequest& req) {
    req.validate();
    auto lines = parse_prompt_lines(req.prompt, tpl_);
    std::vector<std::string> words;
    for (const auto& l : lines)
        for (auto& w : split_words(l)) words.push_back(w);
    if (words.empty()) words = {"hello"};

    std::mt19937_64 rng(hash_combine(fnv1a(req.prompt), req.seed));
    std::vector<std::string> out;
    for (int s = 0; s < req.num_samples; ++s) {
        const std::size_t len = 3 + bounded(rng, std::min<std::size_t>(8, words.size()));
        std::string text;
        for (std::size_t i = 0; i < len; ++i) {
            if (i) text += ' ';
            text += words[bounded(rng, words.size())];
        }
        out.push_back(text);
    }
    return out;
}

BigramLMClient::BigramLMClient(std::vector<std::string> extra_corpus)
    : extra_corpus_(std::move(extra_corpus)) {}

std::vector<std::string> BigramLMClient::generate(const GenerationRequest& req) {
    req.validate();
    // Bigram counts over prompt lines plus the seed corpus. <s> marks starts.
    std::map<std::string, std::map<std::string, double>> next;
    auto feed = [&](const std::string& line) {
        auto words = split_words(line);
        std::string prev = "<s>";
        for (const auto& w : words) {
            next[prev][w] += 1.0;
            prev = w;
        }
        next[prev]["</s>"] += 1.0;
    };
    {
        std::istringstream is(req.prompt);
        std::string line;
        while (std::getline(is, line))
            if (!trim(line).empty()) feed(line);
    }
    for (const auto& l : extra_corpus_) feed(l);
    if (next.empty()) return {};

    std::mt19937_64 rng(hash_combine(fnv1a(req.prompt), req.seed));
    std::vector<std::string> out;
    for (int s = 0; s < req.num_samples; ++s) {
        std::string cur = "<s>";
        std::string text;
        for (int i = 0; i < req.max_new_tokens; ++i) {
            auto it = next.find(cur);
            if (it == next.end() || it->second.empty()) break;
            // Temperature-scaled categorical over successor counts.
            double total = 0.0;
            std::vector<std::pair<const std::string*, double>> cands;
            for (const auto& [w, cnt] : it->second) {
                const double p = std::pow(cnt, 1.0 / req.temperature);
                cands.emplace_back(&w, p);
                total += p;
            }
            double u = uniform01(rng) * total;
            const std::string* pick = cands.back().first;
            for (const auto& [w, p] : cands) {
                if (u < p) {
                    pick = w;
                    break;
                }
                u -= p;
            }
            if (*pick == "</s>") break;
            if (!text.empty()) text += ' ';
            text += *pick;
            cur = *pick;
        }
        out.push_back(text);
    }
    return out;
}

HttpLMClient::HttpLMClient(HttpClientConfig cfg) : cfg_(std::move(cfg)) {}

std::vector<std::string> generate_context(GenerativeLMClient& client, const GenerationRequest& req,
                                          const PromptTemplate& tpl) {
    req.validate();
    std::set<std::string> prompt_items;
    for (const auto& l : parse_prompt_lines(req.prompt, tpl)) prompt_items.insert(l);

    std::vector<std::string> cleaned;
    for (const auto& raw : client.generate(req)) {
        std::string sample = raw;
        if (req.stop_at_newline)
            if (auto pos = sample.find('\n'); pos != std::string::npos) sample = sample.substr(0, pos);
        sample = trim(sample);
        if (sample.empty()) continue;
        if (prompt_items.count(sample)) continue;  // exact echo of a prompt line
        cleaned.push_back(sample);
        if (cleaned.size() >= static_cast<std::size_t>(req.num_samples)) break;
    }
    return cleaned;
}

const char* to_string(CorpusOrigin o) {
    switch (o) {
        case CorpusOrigin::generated: return "generated";
        case CorpusOrigin::given: return "given";
        case CorpusOrigin::external_file: return "external_file";
    }
    return "generated";
}

CorpusOrigin corpus_origin_from_string(const std::string& s) {
    if (s == "generated") return CorpusOrigin::generated;
    if (s == "given") return CorpusOrigin::given;
    if (s == "external_file") return CorpusOrigin::external_file;
    throw FormatError("unknown corpus origin: " + s);
}

std::vector<std::string> GeneratedCorpus::texts() const {
    std::vector<std::string> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.text);
    return out;
}

std::uint64_t GeneratedCorpus::content_hash() const {
    std::uint64_t h = fnv1a("corpus");
    for (const auto& e : entries) {
        h = fnv1a(e.text, h);
        h = fnv1a(e.source_label, h);
        h = fnv1a(to_string(e.origin), h);
        h = hash_combine(h, e.prompt_seed);
    }
    return h;
}

GeneratedCorpus assemble_daug(const Episode& episode, const std::vector<CorpusEntry>& generated,
                              const std::optional<std::filesystem::path>& external_file) {
    GeneratedCorpus corpus;
    corpus.entries = generated;
    for (const auto& u : episode.items)
        corpus.entries.push_back({u.text, u.label, CorpusOrigin::given, 0});
    if (external_file) {
        std::string content = read_file(*external_file);
        std::istringstream is(content);
        std::string line;
        while (std::getline(is, line)) {
            line = trim(line);
            if (!line.empty())
                corpus.entries.push_back({line, "", CorpusOrigin::external_file, 0});
        }
    }
    return corpus;
}

void save_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& path) {
    std::ostringstream os;
    for (const auto& e : corpus.entries) {
        nlohmann::ordered_json j;
        j["text"] = e.text;
        j["source_label"] = e.source_label;
        j["origin"] = to_string(e.origin);
        j["prompt_seed"] = e.prompt_seed;
        os << j.dump() << "\n";
    }
    write_file_atomic(path, os.str());
}

GeneratedCorpus load_corpus(const std::filesystem::path& path) {
    GeneratedCorpus corpus;
    std::istringstream is(read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw FormatError("corpus line " + std::to_string(lineno) + ": invalid JSON");
        corpus.entries.push_back({j.at("text").get<std::string>(),
                                  j.value("source_label", ""),
                                  corpus_origin_from_string(j.value("origin", "generated")),
                                  j.value("prompt_seed", std::uint64_t{0})});
    }
    return corpus;
}

std::vector<CorpusEntry> generate_for_episode(GenerativeLMClient& client, const Episode& episode,
                                              const AugmentOptions& opts) {
    // Group episode items per label, preserving sampling order.
    std::map<std::string, std::vector<LabeledUtterance>> by_label;
    for (const auto& u : episode.items) by_label[u.label].push_back(u);

    std::vector<CorpusEntry> out;
    for (const auto& [label, items] : by_label) {
        GenerationRequest req;
        req.prompt = build_prompt(items, opts.tpl);
        req.temperature = opts.temperature;
        req.max_new_tokens = opts.max_new_tokens;
        req.num_samples = opts.per_label;
        req.seed = hash_combine(opts.seed, fnv1a(label));
        auto lines = generate_context(client, req, opts.tpl);
        if (lines.empty())
            std::fprintf(stderr, "warning: no usable generations for label %s\n", label.c_str());
        for (const auto& text : lines)
            out.push_back({text, label, CorpusOrigin::generated, req.seed});
    }
    return out;
}

}  // namespace fewshot
