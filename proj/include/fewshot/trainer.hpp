#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fewshot/backbone.hpp"
#include "fewshot/contextgen.hpp"
#include "fewshot/dataset.hpp"
#include "fewshot/objectives.hpp"

namespace fewshot {

enum class TrainMode { dft, dft_ca, eda_da, gptj_da };
const char* to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    double lr_plm = 2e-4;
    double lr_cls = 2e-5;
    double weight_decay = 1e-3;
    double warmup_frac = 0.05;
    int epochs = 200;
    int batch_size = 16;
    int seed = 0;
    TrainMode mode = TrainMode::dft;

    // eda_da mode only.
    int eda_ops_per_item = 1;
    std::optional<std::filesystem::path> eda_lexicon;

    void validate() const;
};

struct EpochPoint {
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_acc = 0.0;
};

struct LearningCurve {
    std::vector<EpochPoint> points;
};

// Relative LR multiplier in [0,1]: linear ramp to 1 at step
// ceil(warmup_frac * total), then linear decay to 0 at the end.
double lr_multiplier(std::size_t step, std::size_t total_steps, double warmup_frac);

// Decoupled-weight-decay Adam over named parameter groups with per-group
// base learning rates.
class AdamW {
public:
    struct GroupSpec {
        std::vector<ParamTensor> params;
        double lr = 1e-3;
    };

    AdamW(std::vector<GroupSpec> groups, double weight_decay, std::size_t total_steps,
          double warmup_frac, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();  // applies one update at the current schedule position
    void zero_grad();
    double current_lr_multiplier() const;
    std::size_t steps_taken() const { return t_; }

private:
    struct Slot {
        std::vector<double> m, v;
    };
    std::vector<GroupSpec> groups_;
    std::vector<std::vector<Slot>> slots_;
    double wd_, warmup_frac_, beta1_, beta2_, eps_;
    std::size_t total_steps_;
    std::size_t t_ = 0;
};

// Thrown when the loss goes non-finite; carries the path of a diagnostic
// state dump.
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    LearningCurve curve;
    double final_eval_acc = 0.0;
    double final_train_acc = 0.0;
};

// Fine-tune backbone+head on the episode. dft_ca adds the λ-weighted MLM
// term over the corpus; eda_da / gptj_da expand the supervised set instead.
// No early stopping: exactly cfg.epochs epochs, last model kept.
TrainResult train(const Episode& episode, EncoderBackbone& backbone, ClassifierHead& head,
                  const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                  const GeneratedCorpus* corpus);

// EDA: synonym replacement, insertion, swap, deletion. Each input item
// yields one perturbed copy with ops_per_item random edits; originals are
// always retained, and no edit may produce empty text.
using SynonymLexicon = std::map<std::string, std::vector<std::string>>;
SynonymLexicon load_synonym_lexicon(const std::filesystem::path& path);
std::vector<LabeledUtterance> eda_augment(const std::vector<LabeledUtterance>& items,
                                          int ops_per_item, int seed,
                                          const SynonymLexicon& lexicon);

}  // namespace fewshot
