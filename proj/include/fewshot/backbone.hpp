#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "fewshot/util.hpp"

namespace fewshot {

struct SpecialTokens {
    int pad = 0;
    int cls = 1;
    int mask = 2;
    int unk = 3;
    int count = 4;  // ids below this are special and never maskable
};

// Padded token-id batch. attn[i] is 1 for real tokens, 0 for PAD.
struct TokenBatch {
    std::size_t batch = 0;
    std::size_t seq_len = 0;
    std::vector<int> ids;
    std::vector<std::uint8_t> attn;

    int id_at(std::size_t b, std::size_t t) const { return ids[b * seq_len + t]; }
    bool valid_at(std::size_t b, std::size_t t) const { return attn[b * seq_len + t] != 0; }
};

// Named view of one parameter tensor and its gradient buffer.
struct ParamTensor {
    std::string name;
    std::vector<double>* value = nullptr;
    std::vector<double>* grad = nullptr;
};

// Linear classifier on top of sentence vectors: softmax(W h + b).
struct ClassifierHead {
    std::size_t num_labels = 0;
    std::size_t hidden_dim = 0;
    std::vector<double> w;  // L×d row-major
    std::vector<double> b;  // L
    std::vector<double> gw;
    std::vector<double> gb;

    ClassifierHead() = default;
    ClassifierHead(std::size_t labels, std::size_t dim, std::uint64_t init_seed);

    Matrix logits(const Matrix& h) const;  // B×L
    Matrix probs(const Matrix& h) const;   // row-softmax of logits
    // Accumulates gw/gb and writes d(loss)/dh into dh (B×d, zeroed by caller).
    void backward(const Matrix& h, const Matrix& dlogits, Matrix& dh);
    void zero_grad();
    std::vector<ParamTensor> parameters();
};

Matrix softmax_rows(const Matrix& logits);

// Uniform interface over masked-LM encoders. ToyBackbone implements it for
// desk-scale tests; pretrained checkpoints load through the same seam.
class EncoderBackbone {
public:
    virtual ~EncoderBackbone() = default;

    virtual const std::string& identifier() const = 0;
    virtual std::size_t hidden_dim() const = 0;
    virtual std::size_t vocab_size() const = 0;
    virtual std::size_t max_seq_len() const = 0;
    virtual SpecialTokens specials() const = 0;
    virtual bool has_mask_token() const = 0;

    virtual TokenBatch tokenize(const std::vector<std::string>& texts) const = 0;

    // B×d sentence vectors (first-position hidden state).
    virtual Matrix encode(const TokenBatch& batch) const = 0;
    Matrix encode_texts(const std::vector<std::string>& texts) const {
        return encode(tokenize(texts));
    }

    // Vocabulary logits for every position: (B·T)×V.
    virtual Matrix mlm_logits(const TokenBatch& batch) const = 0;
    // Logits only at the given flat positions (b*T + t): |positions|×V.
    virtual Matrix mlm_logits_at(const TokenBatch& batch,
                                 const std::vector<std::size_t>& positions) const = 0;

    virtual void zero_grad() = 0;
    // d_sent is B×d = d(loss)/d(sentence vector). Recomputes the forward
    // pass internally and accumulates parameter gradients.
    virtual void accumulate_encode_grad(const TokenBatch& batch, const Matrix& d_sent) = 0;
    // d_logits is |positions|×V aligned with `positions`.
    virtual void accumulate_mlm_grad(const TokenBatch& batch,
                                     const std::vector<std::size_t>& positions,
                                     const Matrix& d_logits) = 0;

    virtual std::vector<ParamTensor> plm_parameters() = 0;

    // Freshly initialized sibling with identical architecture (born-again
    // student initialization).
    virtual std::unique_ptr<EncoderBackbone> clone_fresh(std::uint64_t init_seed) const = 0;
    virtual std::unique_ptr<EncoderBackbone> clone() const = 0;

    virtual void save_weights(std::vector<double>& out) const = 0;
    virtual void load_weights(const std::vector<double>& in) = 0;
};

// Small trainable encoder: token + position embeddings, one context-mixing
// tanh layer, tied-size MLM projection. d ≤ 64, vocab ≤ 1000; full
// forward/backward well under a second on CPU for B ≤ 32. No stochastic
// layers, so eval-mode determinism is unconditional.
class ToyBackbone final : public EncoderBackbone {
public:
    struct Config {
        std::size_t hidden_dim = 32;
        std::size_t vocab_size = 256;
        std::size_t max_seq_len = 64;
        std::uint64_t init_seed = 1234;
        bool with_mask_token = true;
    };

    explicit ToyBackbone(const Config& cfg);

    const std::string& identifier() const override { return identifier_; }
    std::size_t hidden_dim() const override { return d_; }
    std::size_t vocab_size() const override { return vocab_; }
    std::size_t max_seq_len() const override { return max_seq_len_; }
    SpecialTokens specials() const override { return specials_; }
    bool has_mask_token() const override { return with_mask_; }

    TokenBatch tokenize(const std::vector<std::string>& texts) const override;
    Matrix encode(const TokenBatch& batch) const override;
    Matrix mlm_logits(const TokenBatch& batch) const override;
    Matrix mlm_logits_at(const TokenBatch& batch,
                         const std::vector<std::size_t>& positions) const override;

    void zero_grad() override;
    void accumulate_encode_grad(const TokenBatch& batch, const Matrix& d_sent) override;
    void accumulate_mlm_grad(const TokenBatch& batch,
                             const std::vector<std::size_t>& positions,
                             const Matrix& d_logits) override;

    std::vector<ParamTensor> plm_parameters() override;

    std::unique_ptr<EncoderBackbone> clone_fresh(std::uint64_t init_seed) const override;
    std::unique_ptr<EncoderBackbone> clone() const override;

    void save_weights(std::vector<double>& out) const override;
    void load_weights(const std::vector<double>& in) override;

    const Config& config() const { return cfg_; }

    // Token id for a single word, for hand-rolled forward oracles in tests.
    int token_id(const std::string& word) const;

private:
    struct Activations {
        std::vector<double> x;  // B×T×d input embeddings
        std::vector<double> c;  // B×d context mean
        std::vector<double> h;  // B×T×d hidden states
        std::vector<double> inv_len;
    };
    Activations forward(const TokenBatch& batch) const;
    void backward_hidden(const TokenBatch& batch, const Activations& act,
                         std::vector<double>& dh);

    Config cfg_;
    std::string identifier_ = "toy";
    std::size_t d_, vocab_, max_seq_len_;
    bool with_mask_;
    SpecialTokens specials_;

    // Parameters: emb V×d, pos T×d, mix_self d×d, mix_ctx d×d, mix_bias d,
    // mlm_w V×d, mlm_b V. All in the PLM group.
    std::vector<double> emb_, pos_, mix_self_, mix_ctx_, mix_bias_, mlm_w_, mlm_b_;
    std::vector<double> g_emb_, g_pos_, g_mix_self_, g_mix_ctx_, g_mix_bias_, g_mlm_w_, g_mlm_b_;
};

// Parameter group split per the two-learning-rate optimizer setup.
struct ParamGroups {
    std::vector<ParamTensor> plm;
    std::vector<ParamTensor> cls;
};
ParamGroups parameter_groups(EncoderBackbone& backbone, ClassifierHead& head);

// Checkpoint directory: config.json + weights.bin + vocab.json. config
// records identifier, dims, label count, and caller-supplied provenance.
void save_checkpoint(const std::filesystem::path& dir, const EncoderBackbone& backbone,
                     const ClassifierHead& head, const std::string& provenance_json);
struct LoadedModel {
    std::unique_ptr<EncoderBackbone> backbone;
    ClassifierHead head;
    std::string provenance_json;
};
LoadedModel load_checkpoint(const std::filesystem::path& dir);
std::string checkpoint_hash(const std::filesystem::path& dir);

}  // namespace fewshot
