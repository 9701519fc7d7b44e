#include "fewshot/backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace fewshot {

namespace {

void init_uniform(std::vector<double>& v, double scale, std::mt19937_64& rng) {
    for (auto& x : v) x = (2.0 * uniform01(rng) - 1.0) * scale;
}

std::vector<std::string> word_split(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c == '\'') {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(cur);
    return words;
}

}  // namespace

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (std::size_t r = 0; r < logits.rows; ++r) {
        const double* z = logits.row(r);
        double m = z[0];
        for (std::size_t c = 1; c < logits.cols; ++c) m = std::max(m, z[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) {
            p.at(r, c) = std::exp(z[c] - m);
            sum += p.at(r, c);
        }
        for (std::size_t c = 0; c < logits.cols; ++c) p.at(r, c) /= sum;
    }
    return p;
}

ClassifierHead::ClassifierHead(std::size_t labels, std::size_t dim, std::uint64_t init_seed)
    : num_labels(labels), hidden_dim(dim), w(labels * dim), b(labels, 0.0),
      gw(labels * dim, 0.0), gb(labels, 0.0) {
    std::mt19937_64 rng(init_seed);
    init_uniform(w, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
}

Matrix ClassifierHead::logits(const Matrix& h) const {
    if (h.cols != hidden_dim)
        throw ContractError("classifier head: hidden dim mismatch (" + std::to_string(h.cols) +
                            " vs " + std::to_string(hidden_dim) + ")");
    Matrix out(h.rows, num_labels);
    for (std::size_t r = 0; r < h.rows; ++r)
        for (std::size_t l = 0; l < num_labels; ++l) {
            double s = b[l];
            const double* wr = w.data() + l * hidden_dim;
            const double* hr = h.row(r);
            for (std::size_t j = 0; j < hidden_dim; ++j) s += wr[j] * hr[j];
            out.at(r, l) = s;
        }
    return out;
}

Matrix ClassifierHead::probs(const Matrix& h) const { return softmax_rows(logits(h)); }

void ClassifierHead::backward(const Matrix& h, const Matrix& dlogits, Matrix& dh) {
    for (std::size_t r = 0; r < h.rows; ++r)
        for (std::size_t l = 0; l < num_labels; ++l) {
            const double dz = dlogits.at(r, l);
            if (dz == 0.0) continue;
            gb[l] += dz;
            double* gwr = gw.data() + l * hidden_dim;
            const double* wr = w.data() + l * hidden_dim;
            const double* hr = h.row(r);
            for (std::size_t j = 0; j < hidden_dim; ++j) {
                gwr[j] += dz * hr[j];
                dh.at(r, j) += dz * wr[j];
            }
        }
}

void ClassifierHead::zero_grad() {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
}

std::vector<ParamTensor> ClassifierHead::parameters() {
    return {{"cls.w", &w, &gw}, {"cls.b", &b, &gb}};
}

ToyBackbone::ToyBackbone(const Config& cfg)
    : cfg_(cfg), d_(cfg.hidden_dim), vocab_(cfg.vocab_size), max_seq_len_(cfg.max_seq_len),
      with_mask_(cfg.with_mask_token) {
    if (vocab_ <= static_cast<std::size_t>(specials_.count))
        throw ContractError("toy backbone: vocab too small");
    emb_.resize(vocab_ * d_);
    pos_.resize(max_seq_len_ * d_);
    mix_self_.resize(d_ * d_);
    mix_ctx_.resize(d_ * d_);
    mix_bias_.assign(d_, 0.0);
    mlm_w_.resize(vocab_ * d_);
    mlm_b_.assign(vocab_, 0.0);

    std::mt19937_64 rng(cfg.init_seed);
    const double s = 1.0 / std::sqrt(static_cast<double>(d_));
    init_uniform(emb_, 0.5, rng);
    init_uniform(pos_, 0.1, rng);
    init_uniform(mix_self_, s, rng);
    init_uniform(mix_ctx_, s, rng);
    init_uniform(mlm_w_, s, rng);

    g_emb_.assign(emb_.size(), 0.0);
    g_pos_.assign(pos_.size(), 0.0);
    g_mix_self_.assign(mix_self_.size(), 0.0);
    g_mix_ctx_.assign(mix_ctx_.size(), 0.0);
    g_mix_bias_.assign(mix_bias_.size(), 0.0);
    g_mlm_w_.assign(mlm_w_.size(), 0.0);
    g_mlm_b_.assign(mlm_b_.size(), 0.0);
}

int ToyBackbone::token_id(const std::string& word) const {
    const std::size_t regular = vocab_ - static_cast<std::size_t>(specials_.count);
    return specials_.count + static_cast<int>(fnv1a(word) % regular);
}

TokenBatch ToyBackbone::tokenize(const std::vector<std::string>& texts) const {
    std::vector<std::vector<int>> seqs;
    seqs.reserve(texts.size());
    bool truncated = false;
    for (const auto& text : texts) {
        std::vector<int> ids{specials_.cls};
        for (const auto& w : word_split(text)) {
            if (ids.size() >= max_seq_len_) {
                truncated = true;
                break;
            }
            ids.push_back(token_id(w));
        }
        seqs.push_back(std::move(ids));
    }
    if (truncated)
        std::fprintf(stderr, "warning: input truncated to %zu tokens\n", max_seq_len_);

    TokenBatch out;
    out.batch = seqs.size();
    out.seq_len = 1;
    for (const auto& s : seqs) out.seq_len = std::max(out.seq_len, s.size());
    out.ids.assign(out.batch * out.seq_len, specials_.pad);
    out.attn.assign(out.batch * out.seq_len, 0);
    for (std::size_t b = 0; b < seqs.size(); ++b)
        for (std::size_t t = 0; t < seqs[b].size(); ++t) {
            out.ids[b * out.seq_len + t] = seqs[b][t];
            out.attn[b * out.seq_len + t] = 1;
        }
    return out;
}

ToyBackbone::Activations ToyBackbone::forward(const TokenBatch& batch) const {
    const std::size_t B = batch.batch, T = batch.seq_len;
    Activations act;
    act.x.assign(B * T * d_, 0.0);
    act.c.assign(B * d_, 0.0);
    act.h.assign(B * T * d_, 0.0);
    act.inv_len.assign(B, 0.0);

    for (std::size_t b = 0; b < B; ++b) {
        std::size_t n = 0;
        for (std::size_t t = 0; t < T; ++t) {
            if (!batch.valid_at(b, t)) continue;
            ++n;
            const int id = batch.id_at(b, t);
            double* x = act.x.data() + (b * T + t) * d_;
            const double* e = emb_.data() + static_cast<std::size_t>(id) * d_;
            const double* p = pos_.data() + t * d_;
            for (std::size_t j = 0; j < d_; ++j) x[j] = e[j] + p[j];
            double* c = act.c.data() + b * d_;
            for (std::size_t j = 0; j < d_; ++j) c[j] += x[j];
        }
        act.inv_len[b] = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
        double* c = act.c.data() + b * d_;
        for (std::size_t j = 0; j < d_; ++j) c[j] *= act.inv_len[b];

        for (std::size_t t = 0; t < T; ++t) {
            if (!batch.valid_at(b, t)) continue;
            const double* x = act.x.data() + (b * T + t) * d_;
            double* h = act.h.data() + (b * T + t) * d_;
            for (std::size_t i = 0; i < d_; ++i) {
                double s = mix_bias_[i];
                const double* ms = mix_self_.data() + i * d_;
                const double* mc = mix_ctx_.data() + i * d_;
                for (std::size_t j = 0; j < d_; ++j) s += ms[j] * x[j] + mc[j] * c[j];
                h[i] = std::tanh(s);
            }
        }
    }
    return act;
}

Matrix ToyBackbone::encode(const TokenBatch& batch) const {
    if (batch.batch == 0) throw ContractError("encode: empty batch");
    Activations act = forward(batch);
    Matrix out(batch.batch, d_);
    for (std::size_t b = 0; b < batch.batch; ++b)
        std::memcpy(out.row(b), act.h.data() + b * batch.seq_len * d_, d_ * sizeof(double));
    return out;
}

Matrix ToyBackbone::mlm_logits_at(const TokenBatch& batch,
                                  const std::vector<std::size_t>& positions) const {
    Activations act = forward(batch);
    Matrix out(positions.size(), vocab_);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const double* h = act.h.data() + positions[r] * d_;
        for (std::size_t v = 0; v < vocab_; ++v) {
            double s = mlm_b_[v];
            const double* wv = mlm_w_.data() + v * d_;
            for (std::size_t j = 0; j < d_; ++j) s += wv[j] * h[j];
            out.at(r, v) = s;
        }
    }
    return out;
}

Matrix ToyBackbone::mlm_logits(const TokenBatch& batch) const {
    std::vector<std::size_t> all(batch.batch * batch.seq_len);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return mlm_logits_at(batch, all);
}

void ToyBackbone::backward_hidden(const TokenBatch& batch, const Activations& act,
                                  std::vector<double>& dh) {
    const std::size_t B = batch.batch, T = batch.seq_len;
    std::vector<double> dx(T * d_), dc(d_), dpre(d_);
    for (std::size_t b = 0; b < B; ++b) {
        std::fill(dx.begin(), dx.end(), 0.0);
        std::fill(dc.begin(), dc.end(), 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            if (!batch.valid_at(b, t)) continue;
            const double* h = act.h.data() + (b * T + t) * d_;
            const double* g = dh.data() + (b * T + t) * d_;
            bool any = false;
            for (std::size_t i = 0; i < d_; ++i) {
                dpre[i] = g[i] * (1.0 - h[i] * h[i]);
                any = any || dpre[i] != 0.0;
            }
            if (!any) continue;
            const double* x = act.x.data() + (b * T + t) * d_;
            const double* c = act.c.data() + b * d_;
            for (std::size_t i = 0; i < d_; ++i) {
                g_mix_bias_[i] += dpre[i];
                double* gs = g_mix_self_.data() + i * d_;
                double* gc = g_mix_ctx_.data() + i * d_;
                const double* ms = mix_self_.data() + i * d_;
                const double* mc = mix_ctx_.data() + i * d_;
                for (std::size_t j = 0; j < d_; ++j) {
                    gs[j] += dpre[i] * x[j];
                    gc[j] += dpre[i] * c[j];
                    dx[t * d_ + j] += ms[j] * dpre[i];
                    dc[j] += mc[j] * dpre[i];
                }
            }
        }
        for (std::size_t t = 0; t < T; ++t) {
            if (!batch.valid_at(b, t)) continue;
            double* dxt = dx.data() + t * d_;
            for (std::size_t j = 0; j < d_; ++j) dxt[j] += dc[j] * act.inv_len[b];
            const int id = batch.id_at(b, t);
            double* ge = g_emb_.data() + static_cast<std::size_t>(id) * d_;
            double* gp = g_pos_.data() + t * d_;
            for (std::size_t j = 0; j < d_; ++j) {
                ge[j] += dxt[j];
                gp[j] += dxt[j];
            }
        }
    }
}

void ToyBackbone::accumulate_encode_grad(const TokenBatch& batch, const Matrix& d_sent) {
    if (d_sent.rows != batch.batch || d_sent.cols != d_)
        throw ContractError("accumulate_encode_grad: gradient shape mismatch");
    Activations act = forward(batch);
    std::vector<double> dh(batch.batch * batch.seq_len * d_, 0.0);
    for (std::size_t b = 0; b < batch.batch; ++b)
        std::memcpy(dh.data() + b * batch.seq_len * d_, d_sent.row(b), d_ * sizeof(double));
    backward_hidden(batch, act, dh);
}

void ToyBackbone::accumulate_mlm_grad(const TokenBatch& batch,
                                      const std::vector<std::size_t>& positions,
                                      const Matrix& d_logits) {
    if (d_logits.rows != positions.size() || d_logits.cols != vocab_)
        throw ContractError("accumulate_mlm_grad: gradient shape mismatch");
    Activations act = forward(batch);
    std::vector<double> dh(batch.batch * batch.seq_len * d_, 0.0);
    for (std::size_t r = 0; r < positions.size(); ++r) {
        const std::size_t p = positions[r];
        const double* h = act.h.data() + p * d_;
        double* dhp = dh.data() + p * d_;
        for (std::size_t v = 0; v < vocab_; ++v) {
            const double dz = d_logits.at(r, v);
            if (dz == 0.0) continue;
            g_mlm_b_[v] += dz;
            double* gw = g_mlm_w_.data() + v * d_;
            const double* wv = mlm_w_.data() + v * d_;
            for (std::size_t j = 0; j < d_; ++j) {
                gw[j] += dz * h[j];
                dhp[j] += dz * wv[j];
            }
        }
    }
    backward_hidden(batch, act, dh);
}

void ToyBackbone::zero_grad() {
    for (auto* g : {&g_emb_, &g_pos_, &g_mix_self_, &g_mix_ctx_, &g_mix_bias_, &g_mlm_w_, &g_mlm_b_})
        std::fill(g->begin(), g->end(), 0.0);
}

std::vector<ParamTensor> ToyBackbone::plm_parameters() {
    return {
        {"plm.emb", &emb_, &g_emb_},           {"plm.pos", &pos_, &g_pos_},
        {"plm.mix_self", &mix_self_, &g_mix_self_}, {"plm.mix_ctx", &mix_ctx_, &g_mix_ctx_},
        {"plm.mix_bias", &mix_bias_, &g_mix_bias_}, {"plm.mlm_w", &mlm_w_, &g_mlm_w_},
        {"plm.mlm_b", &mlm_b_, &g_mlm_b_},
    };
}

std::unique_ptr<EncoderBackbone> ToyBackbone::clone_fresh(std::uint64_t init_seed) const {
    Config c = cfg_;
    c.init_seed = init_seed;
    return std::make_unique<ToyBackbone>(c);
}

std::unique_ptr<EncoderBackbone> ToyBackbone::clone() const {
    return std::make_unique<ToyBackbone>(*this);
}

void ToyBackbone::save_weights(std::vector<double>& out) const {
    out.clear();
    for (const auto* v : {&emb_, &pos_, &mix_self_, &mix_ctx_, &mix_bias_, &mlm_w_, &mlm_b_})
        out.insert(out.end(), v->begin(), v->end());
}

void ToyBackbone::load_weights(const std::vector<double>& in) {
    std::size_t off = 0;
    for (auto* v : {&emb_, &pos_, &mix_self_, &mix_ctx_, &mix_bias_, &mlm_w_, &mlm_b_}) {
        if (off + v->size() > in.size()) throw FormatError("weights blob too short");
        std::copy(in.begin() + off, in.begin() + off + v->size(), v->begin());
        off += v->size();
    }
    if (off != in.size()) throw FormatError("weights blob size mismatch");
}

ParamGroups parameter_groups(EncoderBackbone& backbone, ClassifierHead& head) {
    return {backbone.plm_parameters(), head.parameters()};
}

void save_checkpoint(const std::filesystem::path& dir, const EncoderBackbone& backbone,
                     const ClassifierHead& head, const std::string& provenance_json) {
    std::filesystem::create_directories(dir);

    nlohmann::ordered_json cfg;
    cfg["type"] = "toy";
    cfg["identifier"] = backbone.identifier();
    cfg["hidden_dim"] = backbone.hidden_dim();
    cfg["vocab_size"] = backbone.vocab_size();
    cfg["max_seq_len"] = backbone.max_seq_len();
    cfg["with_mask_token"] = backbone.has_mask_token();
    cfg["num_labels"] = head.num_labels;
    cfg["provenance"] =
        provenance_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(provenance_json);
    write_file_atomic(dir / "config.json", cfg.dump(2) + "\n");

    nlohmann::ordered_json vocab;
    vocab["type"] = "hashed-words";
    vocab["vocab_size"] = backbone.vocab_size();
    auto sp = backbone.specials();
    vocab["specials"] = {{"pad", sp.pad}, {"cls", sp.cls}, {"mask", sp.mask}, {"unk", sp.unk}};
    write_file_atomic(dir / "vocab.json", vocab.dump(2) + "\n");

    std::vector<double> blob;
    backbone.save_weights(blob);
    blob.insert(blob.end(), head.w.begin(), head.w.end());
    blob.insert(blob.end(), head.b.begin(), head.b.end());
    std::string bytes(reinterpret_cast<const char*>(blob.data()), blob.size() * sizeof(double));
    write_file_atomic(dir / "weights.bin", bytes);
}

LoadedModel load_checkpoint(const std::filesystem::path& dir) {
    nlohmann::json cfg = nlohmann::json::parse(read_file(dir / "config.json"));
    if (cfg.at("type").get<std::string>() != "toy")
        throw CapabilityError("unsupported backbone type in checkpoint: " +
                              cfg.at("type").get<std::string>());

    ToyBackbone::Config bc;
    bc.hidden_dim = cfg.at("hidden_dim").get<std::size_t>();
    bc.vocab_size = cfg.at("vocab_size").get<std::size_t>();
    bc.max_seq_len = cfg.at("max_seq_len").get<std::size_t>();
    bc.with_mask_token = cfg.value("with_mask_token", true);
    bc.init_seed = 0;

    LoadedModel m;
    auto bb = std::make_unique<ToyBackbone>(bc);
    m.head = ClassifierHead(cfg.at("num_labels").get<std::size_t>(), bc.hidden_dim, 0);

    std::string bytes = read_file(dir / "weights.bin");
    std::vector<double> blob(bytes.size() / sizeof(double));
    std::memcpy(blob.data(), bytes.data(), blob.size() * sizeof(double));

    std::vector<double> probe;
    bb->save_weights(probe);
    const std::size_t bw = probe.size();
    const std::size_t hw = m.head.w.size() + m.head.b.size();
    if (blob.size() != bw + hw) throw FormatError("weights blob size mismatch");
    bb->load_weights(std::vector<double>(blob.begin(), blob.begin() + bw));
    std::copy(blob.begin() + bw, blob.begin() + bw + m.head.w.size(), m.head.w.begin());
    std::copy(blob.begin() + bw + m.head.w.size(), blob.end(), m.head.b.begin());

    m.backbone = std::move(bb);
    m.provenance_json = cfg.value("provenance", nlohmann::json::object()).dump();
    return m;
}

std::string checkpoint_hash(const std::filesystem::path& dir) {
    std::uint64_t h = fnv1a(read_file(dir / "config.json"));
    h = fnv1a(read_file(dir / "weights.bin"), h);
    return hash_hex(h);
}

}  // namespace fewshot
