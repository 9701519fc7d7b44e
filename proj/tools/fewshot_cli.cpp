// Command-line front end: one subcommand per pipeline stage so ablations
// (CA only, SSD only, CA+SSD) compose from the same artifacts.

#include <chrono>
#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "fewshot/eval.hpp"
#include "fewshot/harness.hpp"
#include "fewshot/manifest.hpp"
#include "fewshot/pipeline.hpp"

using namespace fewshot;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

FileFormat parse_format(const std::string& s) {
    if (s == "csv") return FileFormat::csv;
    if (s == "jsonl") return FileFormat::jsonl;
    throw ContractError("unknown format: " + s + " (expected csv or jsonl)");
}

std::unique_ptr<GenerativeLMClient> make_client(const std::string& kind,
                                                const std::string& endpoint) {
    if (kind == "stub") return std::make_unique<StubLMClient>();
    if (kind == "bigram") return std::make_unique<BigramLMClient>();
    if (kind == "http") {
        HttpClientConfig hc;
        hc.endpoint_url = endpoint;
        if (hc.endpoint_url.empty())
            throw ContractError("http client requires --endpoint");
        return std::make_unique<HttpLMClient>(hc);
    }
    throw CapabilityError("unknown client: " + kind);
}

// Loads an episode and rebuilds its eval pool from the dataset.
Episode load_episode_with_pool(const std::filesystem::path& episode_path,
                               const std::filesystem::path& dataset_path, FileFormat fmt) {
    Episode ep = load_episode(episode_path);
    if (!dataset_path.empty()) {
        IntentDataset ds = load_dataset(dataset_path, fmt);
        ep.label_set = ds.label_set;
        ep.eval_pool = ds.dev.empty() ? ds.test : ds.dev;
        if (!ds.dev.empty()) ep.eval_pool.insert(ep.eval_pool.end(), ds.test.begin(), ds.test.end());
    }
    return ep;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot intent detection: fine-tuning, context augmentation, "
                 "self-distillation, and multi-seed evaluation"};
    app.require_subcommand(1);

    std::string dataset, format = "csv", episode_path, corpus_path, out_path, mode = "dft";
    std::string client_kind = "stub", endpoint, config_path, checkpoint, external;
    int k = 5, seed = 0, per_label = 50, generations = 0, epochs = -1;
    double lambda = -1.0, gen_temperature = 0.8, distill_t = -1.0;
    bool force = false;

    auto* prepare = app.add_subcommand("prepare", "Validate a dataset and print statistics");
    prepare->add_option("--dataset", dataset, "dataset file or directory")->required();
    prepare->add_option("--format", format, "csv|jsonl");

    auto* sample = app.add_subcommand("sample", "Sample a deterministic K-shot episode");
    sample->add_option("--dataset", dataset)->required();
    sample->add_option("--format", format);
    sample->add_option("--k", k, "shots per label");
    sample->add_option("--seed", seed);
    sample->add_option("--out", out_path, "episode JSON path")->required();
    sample->add_flag("--force", force);

    auto* augment = app.add_subcommand("augment", "Generate contextual utterances per class");
    augment->add_option("--episode", episode_path)->required();
    augment->add_option("--per-label", per_label);
    augment->add_option("--gen-temperature,--temperature", gen_temperature);
    augment->add_option("--seed", seed);
    augment->add_option("--client", client_kind, "stub|bigram|http");
    augment->add_option("--endpoint", endpoint, "generation endpoint URL (http client)");
    augment->add_option("--external", external, "external corpus text file to merge");
    augment->add_option("--out", out_path, "corpus JSONL path")->required();
    augment->add_flag("--force", force);

    auto* train_cmd = app.add_subcommand("train", "Fine-tune a backbone on an episode");
    train_cmd->add_option("--episode", episode_path)->required();
    train_cmd->add_option("--dataset", dataset, "dataset for the eval pool")->required();
    train_cmd->add_option("--format", format);
    train_cmd->add_option("--mode", mode, "dft|dft_ca|eda_da|gptj_da");
    train_cmd->add_option("--lambda", lambda);
    train_cmd->add_option("--epochs", epochs);
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--corpus", corpus_path);
    train_cmd->add_option("--config", config_path, "pipeline config JSON");
    train_cmd->add_option("--out", out_path, "run directory")->required();
    train_cmd->add_flag("--force", force);

    auto* distill_cmd = app.add_subcommand("distill", "Sequential self-distillation chain");
    distill_cmd->add_option("--episode", episode_path)->required();
    distill_cmd->add_option("--dataset", dataset)->required();
    distill_cmd->add_option("--format", format);
    distill_cmd->add_option("--checkpoint", checkpoint, "generation-0 checkpoint dir")->required();
    distill_cmd->add_option("--distill-t", distill_t, "distillation temperature");
    distill_cmd->add_option("--generations", generations);
    distill_cmd->add_option("--epochs", epochs, "epochs per generation");
    distill_cmd->add_option("--seed", seed);
    distill_cmd->add_option("--lambda", lambda);
    distill_cmd->add_option("--corpus", corpus_path);
    distill_cmd->add_option("--config", config_path);
    distill_cmd->add_option("--out", out_path, "run directory")->required();
    distill_cmd->add_flag("--force", force);

    auto* grid_cmd = app.add_subcommand("grid", "Run a multi-seed experiment grid");
    grid_cmd->add_option("--config", config_path, "grid JSON")->required();
    grid_cmd->add_option("--out", out_path, "results directory")->required();
    grid_cmd->add_flag("--force", force);

    auto* report_cmd = app.add_subcommand("report", "Re-render report.md from grid cells");
    report_cmd->add_option("--grid-dir", out_path, "results directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        Timer timer;
        if (prepare->parsed()) {
            IntentDataset ds = load_dataset(dataset, parse_format(format));
            std::cout << dataset_stats(ds).to_text();
            return 0;
        }

        if (sample->parsed()) {
            IntentDataset ds = load_dataset(dataset, parse_format(format));
            std::map<std::string, std::string> inputs{
                {"dataset", hash_hex(ds.content_hash())},
                {"k", std::to_string(k)},
                {"seed", std::to_string(seed)}};
            auto manifest_path = std::filesystem::path(out_path + ".manifest.json");
            if (!force && RunManifest::matches_existing(manifest_path, "sample", inputs)) {
                std::cout << "up to date: " << out_path << "\n";
                return 0;
            }
            Episode ep = sample_episode(ds, k, seed);
            save_episode(ep, out_path);
            RunManifest m{"sample", "", inputs, {out_path}, timer.seconds(), 0};
            m.write(manifest_path);
            std::cout << "episode: " << ep.items.size() << " items (" << ep.label_set.size()
                      << " labels x " << k << ")\n";
            return 0;
        }

        if (augment->parsed()) {
            Episode ep = load_episode(episode_path);
            std::map<std::string, std::string> inputs{
                {"episode", file_hash_hex(episode_path)},
                {"per_label", std::to_string(per_label)},
                {"temperature", std::to_string(gen_temperature)},
                {"seed", std::to_string(seed)},
                {"client", client_kind}};
            if (!external.empty()) inputs["external"] = file_hash_hex(external);
            auto manifest_path = std::filesystem::path(out_path + ".manifest.json");
            if (!force && RunManifest::matches_existing(manifest_path, "augment", inputs)) {
                std::cout << "up to date: " << out_path << "\n";
                return 0;
            }
            auto client = make_client(client_kind, endpoint);
            AugmentOptions opts;
            opts.per_label = per_label;
            opts.temperature = gen_temperature;
            opts.seed = static_cast<std::uint64_t>(seed);
            auto generated = generate_for_episode(*client, ep, opts);
            auto corpus = assemble_daug(
                ep, generated,
                external.empty() ? std::nullopt
                                 : std::optional<std::filesystem::path>(external));
            save_corpus(corpus, out_path);
            RunManifest m{"augment", "", inputs, {out_path}, timer.seconds(), 0};
            m.write(manifest_path);
            std::cout << "corpus: " << corpus.entries.size() << " entries ("
                      << generated.size() << " generated)\n";
            return 0;
        }

        if (train_cmd->parsed()) {
            PipelineConfig cfg = config_path.empty()
                                     ? PipelineConfig{}
                                     : PipelineConfig::from_json(read_file(config_path));
            if (lambda >= 0.0) cfg.objective.lambda = lambda;
            if (epochs > 0) cfg.train.epochs = epochs;
            cfg.train.seed = seed;
            cfg.train.mode = train_mode_from_string(mode);

            Episode ep = load_episode_with_pool(episode_path, dataset, parse_format(format));
            GeneratedCorpus corpus;
            const GeneratedCorpus* corpus_ptr = nullptr;
            if (!corpus_path.empty()) {
                corpus = load_corpus(corpus_path);
                corpus_ptr = &corpus;
            } else if (cfg.train.mode == TrainMode::dft_ca || cfg.train.mode == TrainMode::gptj_da) {
                throw ContractError("mode " + mode + " requires --corpus (produce one with "
                                    "`fewshot augment`)");
            }

            std::map<std::string, std::string> inputs{
                {"episode", file_hash_hex(episode_path)},
                {"config", hash_hex(cfg.config_hash())},
                {"seed", std::to_string(seed)}};
            if (corpus_ptr) inputs["corpus"] = hash_hex(corpus.content_hash());
            auto manifest_path = std::filesystem::path(out_path) / "manifest.json";
            if (!force && RunManifest::matches_existing(manifest_path, "train", inputs)) {
                std::cout << "up to date: " << out_path << "\n";
                return 0;
            }

            StagePlan plan{false, false, cfg.train.mode};
            PipelineResult pr = run_pipeline(ep, plan, cfg, nullptr, corpus_ptr, out_path);
            std::printf("final eval accuracy: %.4f\n", pr.accuracy);

            CurveReport cr = curve_report(pr.curve);
            write_file_atomic(std::filesystem::path(out_path) / "curve.csv", cr.to_csv());
            RunManifest m{"train", cfg.to_json(), inputs,
                          {out_path + "/stage0", out_path + "/curve.csv"}, timer.seconds(), 0};
            m.write(manifest_path);
            return 0;
        }

        if (distill_cmd->parsed()) {
            PipelineConfig cfg = config_path.empty()
                                     ? PipelineConfig{}
                                     : PipelineConfig::from_json(read_file(config_path));
            if (distill_t > 0.0) cfg.distill.temperature = distill_t;
            if (generations > 0) cfg.distill.generations = generations;
            if (epochs > 0) cfg.distill.per_generation_epochs = epochs;
            if (lambda >= 0.0) cfg.objective.lambda = lambda;
            cfg.train.seed = seed;

            Episode ep = load_episode_with_pool(episode_path, dataset, parse_format(format));
            GeneratedCorpus corpus;
            const GeneratedCorpus* corpus_ptr = nullptr;
            if (!corpus_path.empty()) {
                corpus = load_corpus(corpus_path);
                corpus_ptr = &corpus;
            }

            std::map<std::string, std::string> inputs{
                {"episode", file_hash_hex(episode_path)},
                {"checkpoint", checkpoint_hash(checkpoint)},
                {"config", hash_hex(cfg.config_hash())},
                {"seed", std::to_string(seed)}};
            if (corpus_ptr) inputs["corpus"] = hash_hex(corpus.content_hash());
            auto manifest_path = std::filesystem::path(out_path) / "manifest.json";
            if (!force && RunManifest::matches_existing(manifest_path, "distill", inputs)) {
                std::cout << "up to date: " << out_path << "\n";
                return 0;
            }

            auto loaded = load_checkpoint(checkpoint);
            ModelBundle base{std::move(loaded.backbone), std::move(loaded.head)};
            DistillResult dr = distill_sequence(base, checkpoint, ep, cfg.distill, cfg.objective,
                                                cfg.train, corpus_ptr, out_path);
            for (const auto& rec : dr.records)
                std::printf("generation %d: accuracy %.4f, final KL %.6f\n", rec.k, rec.accuracy,
                            rec.kl_trace.back());

            std::vector<std::string> outputs;
            for (const auto& rec : dr.records) outputs.push_back(rec.student_checkpoint);
            RunManifest m{"distill", cfg.to_json(), inputs, outputs, timer.seconds(), 0};
            m.write(manifest_path);
            return 0;
        }

        if (grid_cmd->parsed()) {
            ExperimentGrid grid = ExperimentGrid::from_json(read_file(config_path));
            GridResult gr = run_grid(grid, out_path, force);
            std::cout << render_report(gr.cells);
            RunManifest m{"grid", grid.to_json(),
                          {{"grid_config", file_hash_hex(config_path)}},
                          {out_path + "/report.md"}, timer.seconds(), 0};
            m.write(std::filesystem::path(out_path) / "manifest.json");
            return 0;
        }

        if (report_cmd->parsed()) {
            std::vector<ResultCell> cells;
            std::map<std::pair<std::string, int>, ResultCell> agg;
            for (const auto& entry :
                 std::filesystem::directory_iterator(std::filesystem::path(out_path) / "cells")) {
                auto j = nlohmann::json::parse(read_file(entry.path()));
                auto key = std::make_pair(j.at("method").get<std::string>(), j.at("k").get<int>());
                auto& cell = agg[key];
                cell.method = key.first;
                cell.k = key.second;
                if (j.value("failed", false))
                    cell.failed = true;
                else
                    cell.per_seed_acc.push_back(j.at("accuracy").get<double>());
            }
            for (auto& [key, cell] : agg) {
                cell.mean_acc = mean_of(cell.per_seed_acc);
                cell.std_acc = stddev_of(cell.per_seed_acc);
                cells.push_back(cell);
            }
            std::string report = render_report(cells);
            write_file_atomic(std::filesystem::path(out_path) / "report.md", report);
            std::cout << report;
            return 0;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
