#include "fewshot/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <future>
#include <set>
#include <sstream>

#include "fewshot/plot.hpp"
#include "json.hpp"

namespace fewshot {

void ExperimentGrid::validate() const {
    if (k_values.empty() || seeds.empty() || methods.empty())
        throw ValidationError("grid: needs at least one K, seed, and method");
    std::set<int> s(seeds.begin(), seeds.end());
    if (s.size() != seeds.size()) throw ValidationError("grid: seeds must be distinct");
}

ExperimentGrid ExperimentGrid::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ExperimentGrid g;
    g.dataset_path = j.at("dataset").at("path").get<std::string>();
    g.dataset_format =
        j["dataset"].value("format", "csv") == "jsonl" ? FileFormat::jsonl : FileFormat::csv;
    for (const auto& k : j.at("k_values")) g.k_values.push_back(k.get<int>());
    for (const auto& s : j.at("seeds")) g.seeds.push_back(s.get<int>());
    g.workers = j.value("workers", 1);
    for (const auto& m : j.at("methods")) {
        GridMethod gm;
        gm.name = m.at("name").get<std::string>();
        gm.plan.use_ca = m.value("use_ca", false);
        gm.plan.use_ssd = m.value("use_ssd", false);
        gm.plan.mode = train_mode_from_string(m.value("mode", "dft"));
        gm.config = PipelineConfig::from_json(m.dump());
        gm.client = m.value("client", "stub");
        if (m.contains("http")) {
            gm.http.endpoint_url = m["http"].value("endpoint_url", "");
            gm.http.auth_token_env = m["http"].value("auth_token_env", "GENLM_API_TOKEN");
            gm.http.timeout_seconds = m["http"].value("timeout_seconds", 30);
            gm.http.max_retries = m["http"].value("max_retries", 3);
        }
        g.methods.push_back(std::move(gm));
    }
    g.validate();
    return g;
}

std::string ExperimentGrid::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = {{"path", dataset_path.string()},
                    {"format", dataset_format == FileFormat::csv ? "csv" : "jsonl"}};
    j["k_values"] = k_values;
    j["seeds"] = seeds;
    j["workers"] = workers;
    j["methods"] = nlohmann::ordered_json::array();
    for (const auto& m : methods) {
        auto mj = nlohmann::ordered_json::parse(m.config.to_json());
        mj["name"] = m.name;
        mj["use_ca"] = m.plan.use_ca;
        mj["use_ssd"] = m.plan.use_ssd;
        mj["mode"] = to_string(m.plan.mode);
        mj["client"] = m.client;
        j["methods"].push_back(mj);
    }
    return j.dump(2) + "\n";
}

namespace {

std::unique_ptr<GenerativeLMClient> make_client(const GridMethod& m) {
    if (m.client == "stub") return std::make_unique<StubLMClient>(m.config.augment.tpl);
    if (m.client == "bigram") return std::make_unique<BigramLMClient>();
    if (m.client == "http") return std::make_unique<HttpLMClient>(m.http);
    throw CapabilityError("unknown generator client: " + m.client);
}

struct CellRun {
    double accuracy = 0.0;
    double runtime = 0.0;
    bool failed = false;
    std::string error;
    LearningCurve curve;
};

std::string cell_id(const std::string& method, int k, int seed) {
    return method + "_k" + std::to_string(k) + "_seed" + std::to_string(seed);
}

std::string cell_provenance(const IntentDataset& ds, const GridMethod& m, int k, int seed) {
    std::uint64_t h = ds.content_hash();
    h = hash_combine(h, m.config.config_hash());
    h = fnv1a(m.name, h);
    h = fnv1a(m.client, h);
    h = hash_combine(h, static_cast<std::uint64_t>(k));
    h = hash_combine(h, static_cast<std::uint64_t>(seed));
    h = hash_combine(h, static_cast<std::uint64_t>(m.plan.use_ca) * 2 +
                            static_cast<std::uint64_t>(m.plan.use_ssd));
    return hash_hex(h);
}

}  // namespace

GridResult run_grid(const ExperimentGrid& grid, const std::filesystem::path& out_dir, bool force) {
    grid.validate();
    std::filesystem::create_directories(out_dir / "cells");
    std::filesystem::create_directories(out_dir / "curves");
    std::filesystem::create_directories(out_dir / "runs");
    write_file_atomic(out_dir / "grid.json", grid.to_json());

    IntentDataset ds = load_dataset(grid.dataset_path, grid.dataset_format);

    struct Task {
        const GridMethod* method;
        int k, seed;
        std::string id, prov;
    };
    std::vector<Task> tasks;
    for (const auto& m : grid.methods)
        for (int k : grid.k_values)
            for (int seed : grid.seeds)
                tasks.push_back({&m, k, seed, cell_id(m.name, k, seed),
                                 cell_provenance(ds, m, k, seed)});

    auto run_one = [&](const Task& t) {
        const auto cell_path = out_dir / "cells" / (t.id + ".json");
        if (!force && std::filesystem::exists(cell_path)) {
            // Resume: skip cells whose provenance still matches.
            auto j = nlohmann::json::parse(read_file(cell_path), nullptr, false);
            if (!j.is_discarded() && j.value("provenance", "") == t.prov && !j.value("failed", false))
                return;
        }
        CellRun run;
        const auto start = std::chrono::steady_clock::now();
        try {
            Episode ep = sample_episode(ds, t.k, t.seed);
            PipelineConfig cfg = t.method->config;
            cfg.train.seed = t.seed;
            cfg.augment.seed = static_cast<std::uint64_t>(t.seed);
            auto client = make_client(*t.method);
            PipelineResult pr = run_pipeline(ep, t.method->plan, cfg, client.get(), nullptr,
                                             out_dir / "runs" / t.id);
            run.accuracy = pr.accuracy;
            run.curve = pr.curve;
        } catch (const std::exception& e) {
            run.failed = true;
            run.error = e.what();
            std::fprintf(stderr, "cell %s failed: %s\n", t.id.c_str(), e.what());
        }
        run.runtime = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        nlohmann::ordered_json j;
        j["method"] = t.method->name;
        j["k"] = t.k;
        j["seed"] = t.seed;
        j["accuracy"] = run.accuracy;
        j["runtime_seconds"] = run.runtime;
        j["failed"] = run.failed;
        if (run.failed) j["error"] = run.error;
        j["provenance"] = t.prov;
        write_file_atomic(cell_path, j.dump(2) + "\n");

        if (!run.failed && !run.curve.points.empty()) {
            CurveReport cr = curve_report(run.curve);
            write_file_atomic(out_dir / "curves" / (t.id + ".csv"), cr.to_csv());
            write_line_plot_png(out_dir / "curves" / (t.id + ".png"),
                                {{"train_acc", cr.train_acc}, {"eval_acc", cr.eval_acc}});
        }
    };

    // Cells are independent runs; a bounded pool of async workers is enough.
    const int workers = std::max(1, grid.workers);
    for (std::size_t base = 0; base < tasks.size(); base += workers) {
        std::vector<std::future<void>> batch;
        for (std::size_t i = base; i < std::min(tasks.size(), base + workers); ++i)
            batch.push_back(std::async(std::launch::async, run_one, tasks[i]));
        for (auto& f : batch) f.get();
    }

    // Aggregate from the retained per-seed files, not from in-memory state,
    // so resumed grids report identically.
    GridResult result;
    result.out_dir = out_dir;
    for (const auto& m : grid.methods)
        for (int k : grid.k_values) {
            ResultCell cell;
            cell.method = m.name;
            cell.k = k;
            for (int seed : grid.seeds) {
                auto j = nlohmann::json::parse(
                    read_file(out_dir / "cells" / (cell_id(m.name, k, seed) + ".json")));
                if (j.value("failed", false)) {
                    cell.failed = true;
                    continue;
                }
                cell.per_seed_acc.push_back(j.at("accuracy").get<double>());
                cell.runtime_seconds += j.value("runtime_seconds", 0.0);
            }
            cell.mean_acc = mean_of(cell.per_seed_acc);
            cell.std_acc = stddev_of(cell.per_seed_acc);
            result.cells.push_back(std::move(cell));
        }

    write_file_atomic(out_dir / "report.md", render_report(result.cells));
    return result;
}

std::string render_report(const std::vector<ResultCell>& cells) {
    std::set<int> ks;
    std::vector<std::string> methods;
    for (const auto& c : cells) {
        ks.insert(c.k);
        if (std::find(methods.begin(), methods.end(), c.method) == methods.end())
            methods.push_back(c.method);
    }

    std::ostringstream os;
    os << "# Results\n\nAccuracy reported as mean(std) over seeds, in percent.\n\n";
    os << "| Method |";
    for (int k : ks) os << " " << k << "-shot |";
    os << "\n|---|";
    for (std::size_t i = 0; i < ks.size(); ++i) os << "---|";
    os << "\n";
    char buf[64];
    for (const auto& m : methods) {
        os << "| " << m << " |";
        for (int k : ks) {
            auto it = std::find_if(cells.begin(), cells.end(), [&](const ResultCell& c) {
                return c.method == m && c.k == k;
            });
            if (it == cells.end() || it->per_seed_acc.empty()) {
                os << " failed |";
            } else {
                std::snprintf(buf, sizeof(buf), " %.2f(%.2f) |", it->mean_acc * 100.0,
                              it->std_acc * 100.0);
                os << buf;
            }
        }
        os << "\n";
    }
    return os.str();
}

CurveReport curve_report(const LearningCurve& curve) {
    CurveReport rep;
    for (const auto& p : curve.points) {
        rep.train_acc.push_back(p.train_acc);
        rep.eval_acc.push_back(p.eval_acc);
        rep.train_loss.push_back(p.train_loss);
    }
    const std::size_t n = rep.eval_acc.size();
    double peak = 0.0;
    for (std::size_t e = 0; e < n; ++e) {
        peak = std::max(peak, rep.eval_acc[e]);
        if (e >= n / 2) rep.flatness_drop = std::max(rep.flatness_drop, peak - rep.eval_acc[e]);
    }
    return rep;
}

std::string CurveReport::to_csv() const {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,eval_acc\n";
    for (std::size_t i = 0; i < train_acc.size(); ++i)
        os << i << "," << train_loss[i] << "," << train_acc[i] << "," << eval_acc[i] << "\n";
    return os.str();
}

std::optional<int> crossing_point(const std::vector<double>& series_a,
                                  const std::vector<double>& series_b,
                                  const std::vector<int>& k_grid) {
    if (series_a.size() != series_b.size() || series_a.size() != k_grid.size())
        throw ContractError("crossing_point: series and K grid must align");
    for (std::size_t i = 0; i < k_grid.size(); ++i)
        if (series_a[i] >= series_b[i]) return k_grid[i];
    return std::nullopt;
}

}  // namespace fewshot
