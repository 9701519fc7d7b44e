#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/pipeline.hpp"

namespace fewshot {

struct GridMethod {
    std::string name;
    StagePlan plan;
    PipelineConfig config;
    std::string client = "stub";  // stub | bigram | http
    HttpClientConfig http;        // used when client == "http"
};

struct ExperimentGrid {
    std::filesystem::path dataset_path;
    FileFormat dataset_format = FileFormat::csv;
    std::vector<int> k_values;
    std::vector<int> seeds;
    std::vector<GridMethod> methods;
    int workers = 1;

    void validate() const;
    static ExperimentGrid from_json(const std::string& text);
    std::string to_json() const;
};

struct ResultCell {
    std::string method;
    int k = 0;
    double mean_acc = 0.0;
    double std_acc = 0.0;
    std::vector<double> per_seed_acc;
    double runtime_seconds = 0.0;
    bool failed = false;
};

struct GridResult {
    std::vector<ResultCell> cells;
    std::filesystem::path out_dir;
};

// Runs every (method, K, seed) cell, resuming completed ones by provenance
// hash. Individual failures mark the cell and the grid keeps going. Emits
// out_dir/{grid.json, cells/*.json, report.md, curves/*.csv, curves/*.png}.
GridResult run_grid(const ExperimentGrid& grid, const std::filesystem::path& out_dir,
                    bool force = false);

// mean(std) table in the reporting format of the result tables.
std::string render_report(const std::vector<ResultCell>& cells);

struct CurveReport {
    std::vector<double> train_acc;
    std::vector<double> eval_acc;
    std::vector<double> train_loss;
    // Largest eval-accuracy drop from its running peak over the final half
    // of training, in accuracy points (0..100 scale fractionally: 0..1).
    double flatness_drop = 0.0;

    std::string to_csv() const;
};
CurveReport curve_report(const LearningCurve& curve);

// Smallest K in the shared grid where series a >= series b, or nullopt.
std::optional<int> crossing_point(const std::vector<double>& series_a,
                                  const std::vector<double>& series_b,
                                  const std::vector<int>& k_grid);

}  // namespace fewshot
