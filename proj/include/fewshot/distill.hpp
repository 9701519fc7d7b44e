#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fewshot/trainer.hpp"

namespace fewshot {

enum class StudentInit { fresh_backbone_fresh_head };

struct DistillationSchedule {
    double temperature = 1.0;
    int generations = 1;
    int per_generation_epochs = 50;
    StudentInit student_init = StudentInit::fresh_backbone_fresh_head;
    bool include_mlm = true;

    void validate() const;
};

struct KdResult {
    double loss = 0.0;
    Matrix dstudent_logits;
};

// Batch-mean KL(softmax(teacher/t) || softmax(student/t)), teacher as the
// reference distribution. No t² gradient rescaling, so gradients shrink as
// t grows.
KdResult kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double t);
double kd_loss_value(const Matrix& student_logits, const Matrix& teacher_logits, double t);

struct GenerationRecord {
    int k = 0;
    std::string teacher_checkpoint;  // directory path
    std::string teacher_hash;
    std::string student_checkpoint;
    std::string student_hash;
    std::vector<double> kl_trace;  // per-epoch mean KL
    double accuracy = 0.0;

    std::string to_json(double temperature, int epochs) const;
};

struct ModelBundle {
    std::unique_ptr<EncoderBackbone> backbone;
    ClassifierHead head;
};

// One born-again generation: fresh student trained to match the teacher's
// temperature-scaled logits on D, pure KL (no gold-label CE term), plus the
// λ-weighted MLM term over the corpus when include_mlm is set.
GenerationRecord run_generation(const ModelBundle& teacher,
                                const std::filesystem::path& teacher_ckpt, ModelBundle& student,
                                const Episode& episode, const DistillationSchedule& sched,
                                const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                                const GeneratedCorpus* corpus,
                                const std::filesystem::path& out_ckpt);

struct DistillResult {
    ModelBundle final_model;
    std::vector<GenerationRecord> records;
};

// Chain of `generations` born-again students starting from the given base
// model (generation 0). All intermediate checkpoints are kept under
// work_dir/gen<k>.
DistillResult distill_sequence(const ModelBundle& base, const std::filesystem::path& base_ckpt,
                               const Episode& episode, const DistillationSchedule& sched,
                               const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                               const GeneratedCorpus* corpus,
                               const std::filesystem::path& work_dir);

}  // namespace fewshot
