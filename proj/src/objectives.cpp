#include "fewshot/objectives.hpp"

#include <cmath>

namespace fewshot {

void MaskingScheme::validate() const {
    if (mask_prob < 0.0 || mask_prob > 1.0)
        throw ContractError("masking: mask_prob must lie in [0,1]");
    if (std::abs(replace_mask_frac + replace_random_frac + keep_frac - 1.0) > 1e-9)
        throw ContractError("masking: replace/random/keep fractions must sum to 1");
}

void JointObjectiveConfig::validate() const {
    if (lambda < 0.0) throw ContractError("joint objective: lambda must be non-negative");
    masking.validate();
}

double ce_loss(const Matrix& probs, const std::vector<int>& labels) {
    if (probs.rows != labels.size()) throw ContractError("ce_loss: batch size mismatch");
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols)
            throw ContractError("ce_loss: label index out of range");
        total += -std::log(std::max(probs.at(r, y), 1e-300));
    }
    return total / static_cast<double>(probs.rows);
}

CeResult ce_loss_from_logits(const Matrix& logits, const std::vector<int>& labels) {
    Matrix p = softmax_rows(logits);
    CeResult res;
    res.loss = ce_loss(p, labels);
    res.dlogits = p;
    const double inv_b = 1.0 / static_cast<double>(logits.rows);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        res.dlogits.at(r, labels[r]) -= 1.0;
        for (std::size_t c = 0; c < logits.cols; ++c) res.dlogits.at(r, c) *= inv_b;
    }
    return res;
}

MaskedBatch apply_masking(const TokenBatch& batch, const MaskingScheme& scheme,
                          const SpecialTokens& specials, std::size_t vocab_size) {
    scheme.validate();
    MaskedBatch out;
    out.tokens = batch;
    if (scheme.mask_prob == 0.0) return out;

    std::mt19937_64 rng(scheme.rng_seed);
    const std::size_t regular = vocab_size - static_cast<std::size_t>(specials.count);
    for (std::size_t b = 0; b < batch.batch; ++b) {
        for (std::size_t t = 0; t < batch.seq_len; ++t) {
            const std::size_t p = b * batch.seq_len + t;
            if (!batch.attn[p]) continue;
            const int id = batch.ids[p];
            if (id < specials.count) continue;  // specials are never maskable
            if (uniform01(rng) >= scheme.mask_prob) continue;

            out.positions.push_back(p);
            out.target_ids.push_back(id);
            const double u = uniform01(rng);
            if (u < scheme.replace_mask_frac) {
                out.tokens.ids[p] = specials.mask;
            } else if (u < scheme.replace_mask_frac + scheme.replace_random_frac) {
                out.tokens.ids[p] = specials.count + static_cast<int>(bounded(rng, regular));
            }
            // else: keep original id, still a prediction target
        }
    }
    return out;
}

MlmResult mlm_loss(const Matrix& logits_at_targets, const std::vector<int>& target_ids) {
    MlmResult res;
    if (target_ids.empty()) {
        res.empty = true;
        return res;
    }
    if (logits_at_targets.rows != target_ids.size())
        throw ContractError("mlm_loss: target count mismatch");
    Matrix p = softmax_rows(logits_at_targets);
    double total = 0.0;
    res.dlogits = p;
    const double inv_n = 1.0 / static_cast<double>(target_ids.size());
    for (std::size_t r = 0; r < p.rows; ++r) {
        const int v = target_ids[r];
        if (v < 0 || static_cast<std::size_t>(v) >= p.cols)
            throw ContractError("mlm_loss: target id out of range");
        total += -std::log(std::max(p.at(r, v), 1e-300));
        res.dlogits.at(r, v) -= 1.0;
        for (std::size_t c = 0; c < p.cols; ++c) res.dlogits.at(r, c) *= inv_n;
    }
    res.loss = total * inv_n;
    return res;
}

double joint_loss(double ce, double mlm, const JointObjectiveConfig& cfg) {
    cfg.validate();
    return ce + cfg.lambda * mlm;
}

}  // namespace fewshot
