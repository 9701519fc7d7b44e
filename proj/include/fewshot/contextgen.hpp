#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"

namespace fewshot {

// Prompt layout: optional header line, one enumerated line per labeled
// utterance, then the continuation marker where generation begins. "{i}"
// in the prefix expands to the 1-based item number.
struct PromptTemplate {
    std::optional<std::string> header;
    std::string item_prefix = "{i}. ";
    std::string continuation_slot = "{i}. ";
};

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.8;
    int max_new_tokens = 32;
    int num_samples = 1;
    bool stop_at_newline = true;  // each sample is cut at its first line break
    std::uint64_t seed = 0;       // consumed by deterministic local clients

    void validate() const;
};

// Render K same-label utterances into a prompt. Deterministic; embedded
// newlines are escaped so line-oriented parsing recovers exactly K items.
std::string build_prompt(const std::vector<LabeledUtterance>& items, const PromptTemplate& tpl);

// Inverse of build_prompt's item rendering, for round-trip checks and for
// prompt-echo filtering.
std::vector<std::string> parse_prompt_lines(const std::string& prompt, const PromptTemplate& tpl);

class GenerativeLMClient {
public:
    virtual ~GenerativeLMClient() = default;
    virtual std::string name() const = 0;
    // Raw completions, one string per sample. May contain noise or trailing
    // text past the first line; cleaning happens in generate_context.
    virtual std::vector<std::string> generate(const GenerationRequest& req) = 0;
};

// Deterministic test client: samples are recombinations of the prompt's own
// item words, keyed by (prompt hash, seed, sample index).
class StubLMClient final : public GenerativeLMClient {
public:
    explicit StubLMClient(PromptTemplate tpl = {}) : tpl_(std::move(tpl)) {}
    std::string name() const override { return "stub"; }
    std::vector<std::string> generate(const GenerationRequest& req) override;

private:
    PromptTemplate tpl_;
};

// Local word-bigram sampler trained on the prompt plus an optional seed
// corpus. Stands in for a hosted causal LM when none is reachable;
// temperature widens the sampling distribution the same way.
class BigramLMClient final : public GenerativeLMClient {
public:
    explicit BigramLMClient(std::vector<std::string> extra_corpus = {});
    std::string name() const override { return "bigram"; }
    std::vector<std::string> generate(const GenerationRequest& req) override;

private:
    std::vector<std::string> extra_corpus_;
};

struct HttpClientConfig {
    std::string endpoint_url;              // e.g. http://host:port/generate
    std::string auth_token_env = "GENLM_API_TOKEN";
    int timeout_seconds = 30;
    int max_retries = 3;
};

// POSTs {prompt, temperature, max_new_tokens, num_samples} as JSON and
// expects {"samples": [...]}. Retries with exponential backoff, then
// throws TransportError.
class HttpLMClient final : public GenerativeLMClient {
public:
    explicit HttpLMClient(HttpClientConfig cfg);
    std::string name() const override { return "http"; }
    std::vector<std::string> generate(const GenerationRequest& req) override;

private:
    HttpClientConfig cfg_;
};

// Cleaned utterances from one request: split per the stop rule, trimmed,
// empty lines dropped, exact echoes of the prompt's own items dropped.
// Off-label or noisy generations are kept on purpose.
std::vector<std::string> generate_context(GenerativeLMClient& client, const GenerationRequest& req,
                                          const PromptTemplate& tpl);

enum class CorpusOrigin { generated, given, external_file };
const char* to_string(CorpusOrigin o);
CorpusOrigin corpus_origin_from_string(const std::string& s);

struct CorpusEntry {
    std::string text;
    std::string source_label;  // provenance only; no supervised consumer reads it
    CorpusOrigin origin = CorpusOrigin::generated;
    std::uint64_t prompt_seed = 0;
};

struct GeneratedCorpus {
    std::vector<CorpusEntry> entries;

    // Text-only view handed to the MLM pipeline; labels stay behind.
    std::vector<std::string> texts() const;
    std::uint64_t content_hash() const;
};

// D_aug = generated ∪ episode texts (∪ external file lines if given).
GeneratedCorpus assemble_daug(const Episode& episode, const std::vector<CorpusEntry>& generated,
                              const std::optional<std::filesystem::path>& external_file);

// Corpus file: JSONL of {text, source_label, origin, prompt_seed}.
void save_corpus(const GeneratedCorpus& corpus, const std::filesystem::path& path);
GeneratedCorpus load_corpus(const std::filesystem::path& path);

// Per-class generation over a whole episode: builds one prompt per label
// from its K utterances and requests `per_label` samples.
struct AugmentOptions {
    int per_label = 50;
    double temperature = 0.8;
    int max_new_tokens = 32;
    std::uint64_t seed = 0;
    PromptTemplate tpl;
};
std::vector<CorpusEntry> generate_for_episode(GenerativeLMClient& client, const Episode& episode,
                                              const AugmentOptions& opts);

}  // namespace fewshot
