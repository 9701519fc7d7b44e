#pragma once

#include <cstdint>
#include <vector>

#include "fewshot/backbone.hpp"
#include "fewshot/util.hpp"

namespace fewshot {

// BERT-style masking parameters. Fractions split the selected positions
// into MASK-replaced / random-token / kept-as-is.
struct MaskingScheme {
    double mask_prob = 0.15;
    double replace_mask_frac = 0.8;
    double replace_random_frac = 0.1;
    double keep_frac = 0.1;
    std::uint64_t rng_seed = 0;

    void validate() const;
};

struct JointObjectiveConfig {
    double lambda = 1.0;
    MaskingScheme masking;

    void validate() const;
};

// Mean over the batch of -log p(y_i). The probability-space entry point
// keeps oracle tests simple; the logits entry point also hands back
// d(loss)/d(logits).
double ce_loss(const Matrix& probs, const std::vector<int>& labels);

struct CeResult {
    double loss = 0.0;
    Matrix dlogits;  // d(mean CE)/d(logits)
};
CeResult ce_loss_from_logits(const Matrix& logits, const std::vector<int>& labels);

struct MaskedBatch {
    TokenBatch tokens;                    // ids after masking
    std::vector<std::size_t> positions;   // flat positions (b*T + t) of targets
    std::vector<int> target_ids;          // original ids at those positions
};

// Applies the scheme to every non-special, non-PAD position. Deterministic
// given scheme.rng_seed. Sequences with zero maskable tokens contribute no
// targets.
MaskedBatch apply_masking(const TokenBatch& batch, const MaskingScheme& scheme,
                          const SpecialTokens& specials, std::size_t vocab_size);

// Mean cross-entropy over masked positions. empty=true flags a batch with
// no targets anywhere, in which case loss is a defined zero and the joint
// objective degrades to plain CE.
struct MlmResult {
    double loss = 0.0;
    bool empty = false;
    Matrix dlogits;  // aligned with MaskedBatch.positions
};
MlmResult mlm_loss(const Matrix& logits_at_targets, const std::vector<int>& target_ids);

double joint_loss(double ce, double mlm, const JointObjectiveConfig& cfg);

}  // namespace fewshot
