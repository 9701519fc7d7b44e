#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "fewshot/contextgen.hpp"
#include "fewshot/distill.hpp"
#include "fewshot/trainer.hpp"

namespace fewshot {

// Stage composition: optional context augmentation, then fine-tuning, then
// an optional self-distillation chain.
struct StagePlan {
    bool use_ca = false;
    bool use_ssd = false;
    TrainMode mode = TrainMode::dft;
};

struct BackboneSpec {
    std::string kind = "toy";  // "toy" or a checkpoint directory to start from
    std::filesystem::path checkpoint;
    std::size_t hidden_dim = 32;
    std::size_t vocab_size = 256;
    std::size_t max_seq_len = 64;
};

struct PipelineConfig {
    BackboneSpec backbone;
    TrainConfig train;
    JointObjectiveConfig objective;
    DistillationSchedule distill;
    AugmentOptions augment;

    std::uint64_t config_hash() const;
    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
};

struct PipelineResult {
    ModelBundle model;
    double accuracy = 0.0;
    LearningCurve curve;
    std::vector<GenerationRecord> generation_records;
    std::string provenance_json;  // config/episode/corpus/checkpoint hashes
};

// End-to-end run into work_dir: corpus generation (when use_ca and no
// precomputed corpus is supplied), joint training, distillation chain.
PipelineResult run_pipeline(const Episode& episode, const StagePlan& plan,
                            const PipelineConfig& cfg, GenerativeLMClient* client,
                            const GeneratedCorpus* precomputed_corpus,
                            const std::filesystem::path& work_dir);

std::unique_ptr<EncoderBackbone> make_backbone(const BackboneSpec& spec, std::uint64_t init_seed);

}  // namespace fewshot
