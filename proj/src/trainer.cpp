#include "fewshot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fewshot/eval.hpp"
#include "json.hpp"

namespace fewshot {

const char* to_string(TrainMode m) {
    switch (m) {
        case TrainMode::dft: return "dft";
        case TrainMode::dft_ca: return "dft_ca";
        case TrainMode::eda_da: return "eda_da";
        case TrainMode::gptj_da: return "gptj_da";
    }
    return "dft";
}

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "dft") return TrainMode::dft;
    if (s == "dft_ca") return TrainMode::dft_ca;
    if (s == "eda_da") return TrainMode::eda_da;
    if (s == "gptj_da") return TrainMode::gptj_da;
    throw ContractError("unknown train mode: " + s);
}

void TrainConfig::validate() const {
    if (lr_plm <= 0.0 || lr_cls <= 0.0) throw ContractError("train: learning rates must be > 0");
    if (warmup_frac < 0.0 || warmup_frac >= 1.0)
        throw ContractError("train: warmup_frac must lie in [0,1)");
    if (epochs < 1) throw ContractError("train: epochs must be >= 1");
    if (batch_size < 1) throw ContractError("train: batch_size must be >= 1");
}

double lr_multiplier(std::size_t step, std::size_t total_steps, double warmup_frac) {
    if (total_steps == 0) return 0.0;
    const std::size_t warmup =
        static_cast<std::size_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
    if (step < warmup)
        return static_cast<double>(step + 1) / static_cast<double>(warmup + 1);
    // Peak 1.0 at step == warmup, linear decay to 0 past the last step.
    return static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup);
}

AdamW::AdamW(std::vector<GroupSpec> groups, double weight_decay, std::size_t total_steps,
             double warmup_frac, double beta1, double beta2, double eps)
    : groups_(std::move(groups)), wd_(weight_decay), warmup_frac_(warmup_frac), beta1_(beta1),
      beta2_(beta2), eps_(eps), total_steps_(total_steps) {
    slots_.resize(groups_.size());
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        slots_[g].resize(groups_[g].params.size());
        for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
            slots_[g][p].m.assign(groups_[g].params[p].value->size(), 0.0);
            slots_[g][p].v.assign(groups_[g].params[p].value->size(), 0.0);
        }
    }
}

double AdamW::current_lr_multiplier() const { return lr_multiplier(t_, total_steps_, warmup_frac_); }

void AdamW::step() {
    const double mult = current_lr_multiplier();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_ + 1));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_ + 1));
    for (std::size_t g = 0; g < groups_.size(); ++g) {
        const double lr = groups_[g].lr * mult;
        for (std::size_t p = 0; p < groups_[g].params.size(); ++p) {
            auto& val = *groups_[g].params[p].value;
            auto& grad = *groups_[g].params[p].grad;
            auto& m = slots_[g][p].m;
            auto& v = slots_[g][p].v;
            for (std::size_t i = 0; i < val.size(); ++i) {
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                val[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * val[i]);
            }
        }
    }
    ++t_;
}

void AdamW::zero_grad() {
    for (auto& g : groups_)
        for (auto& p : g.params) std::fill(p.grad->begin(), p.grad->end(), 0.0);
}

namespace {

std::vector<int> label_indices(const std::vector<LabeledUtterance>& items,
                               const std::vector<std::string>& label_set) {
    std::vector<int> out;
    out.reserve(items.size());
    for (const auto& u : items) {
        auto it = std::lower_bound(label_set.begin(), label_set.end(), u.label);
        if (it == label_set.end() || *it != u.label)
            throw ContractError("label outside episode label set: " + u.label);
        out.push_back(static_cast<int>(it - label_set.begin()));
    }
    return out;
}

void dump_divergence(const TrainConfig& cfg, std::size_t step, int epoch, double loss) {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["loss_is_finite"] = std::isfinite(loss);
    j["loss"] = std::isfinite(loss) ? loss : 0.0;
    j["mode"] = to_string(cfg.mode);
    j["lr_plm"] = cfg.lr_plm;
    j["lr_cls"] = cfg.lr_cls;
    auto path = std::filesystem::temp_directory_path() / "fewshot_divergence.json";
    write_file_atomic(path, j.dump(2) + "\n");
    throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                          std::to_string(step) + "; state dumped to " + path.string());
}

}  // namespace

TrainResult train(const Episode& episode, EncoderBackbone& backbone, ClassifierHead& head,
                  const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                  const GeneratedCorpus* corpus) {
    cfg.validate();
    objcfg.validate();
    if (episode.items.empty()) throw ContractError("train: empty episode");
    if (cfg.mode == TrainMode::dft_ca && corpus == nullptr)
        throw ContractError("train: dft_ca mode requires a corpus");
    if (head.num_labels != episode.label_set.size())
        throw ContractError("train: head label count does not match episode");

    // Supervised set per mode. eda_da / gptj_da expand it with labeled
    // augmented copies; dft_ca leaves it alone and adds the MLM term.
    std::vector<LabeledUtterance> supervised = episode.items;
    if (cfg.mode == TrainMode::eda_da) {
        if (!cfg.eda_lexicon) throw CapabilityError("eda_da mode requires a synonym lexicon");
        auto lex = load_synonym_lexicon(*cfg.eda_lexicon);
        supervised = eda_augment(episode.items, cfg.eda_ops_per_item, cfg.seed, lex);
    } else if (cfg.mode == TrainMode::gptj_da) {
        if (corpus == nullptr) throw ContractError("train: gptj_da mode requires a corpus");
        for (const auto& e : corpus->entries)
            if (e.origin == CorpusOrigin::generated && !e.source_label.empty())
                supervised.push_back({e.text, e.source_label});
    }

    const auto labels = label_indices(supervised, episode.label_set);
    const std::size_t n = supervised.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);

    const bool use_mlm = cfg.mode == TrainMode::dft_ca && objcfg.lambda > 0.0 && corpus != nullptr;
    std::vector<std::string> mlm_texts;
    if (use_mlm) {
        mlm_texts = corpus->texts();
        if (mlm_texts.empty()) throw ContractError("train: dft_ca corpus is empty");
    }

    AdamW opt({{backbone.plm_parameters(), cfg.lr_plm}, {head.parameters(), cfg.lr_cls}},
              cfg.weight_decay, total_steps, cfg.warmup_frac);

    // Separate streams so the supervised trajectory is untouched by whether
    // the MLM branch consumes randomness.
    std::mt19937_64 data_rng(hash_combine(static_cast<std::uint64_t>(cfg.seed), fnv1a("data")));
    std::mt19937_64 mlm_rng(hash_combine(static_cast<std::uint64_t>(cfg.seed), fnv1a("mlm")));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainResult result;
    std::size_t step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[bounded(data_rng, i)]);

        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::vector<std::string> texts;
            std::vector<int> batch_labels;
            for (std::size_t i = start; i < end; ++i) {
                texts.push_back(supervised[order[i]].text);
                batch_labels.push_back(labels[order[i]]);
            }

            opt.zero_grad();
            TokenBatch tb = backbone.tokenize(texts);
            Matrix sent = backbone.encode(tb);
            Matrix logits = head.logits(sent);
            CeResult ce = ce_loss_from_logits(logits, batch_labels);
            Matrix dsent(sent.rows, sent.cols);
            head.backward(sent, ce.dlogits, dsent);
            backbone.accumulate_encode_grad(tb, dsent);

            double loss = ce.loss;
            if (use_mlm) {
                // One MLM batch per classification step, drawn with
                // replacement from D_aug.
                std::vector<std::string> mtexts;
                for (int i = 0; i < cfg.batch_size; ++i)
                    mtexts.push_back(mlm_texts[bounded(mlm_rng, mlm_texts.size())]);
                TokenBatch mtb = backbone.tokenize(mtexts);
                MaskingScheme scheme = objcfg.masking;
                scheme.rng_seed = hash_combine(objcfg.masking.rng_seed, mlm_rng());
                MaskedBatch masked =
                    apply_masking(mtb, scheme, backbone.specials(), backbone.vocab_size());
                if (!masked.positions.empty()) {
                    Matrix mlogits = backbone.mlm_logits_at(masked.tokens, masked.positions);
                    MlmResult mlm = mlm_loss(mlogits, masked.target_ids);
                    loss = joint_loss(ce.loss, mlm.loss, objcfg);
                    for (auto& g : mlm.dlogits.data) g *= objcfg.lambda;
                    backbone.accumulate_mlm_grad(masked.tokens, masked.positions, mlm.dlogits);
                }
            }
            if (!std::isfinite(loss)) dump_divergence(cfg, step, epoch, loss);
            epoch_loss += loss;
            opt.step();
            ++step;
        }

        EpochPoint pt;
        pt.train_loss = epoch_loss / static_cast<double>(steps_per_epoch);
        pt.train_acc = evaluate(backbone, head, supervised, episode.label_set);
        pt.eval_acc = episode.eval_pool.empty()
                          ? 0.0
                          : evaluate(backbone, head, episode.eval_pool, episode.label_set);
        result.curve.points.push_back(pt);
    }

    result.final_train_acc = result.curve.points.back().train_acc;
    result.final_eval_acc = result.curve.points.back().eval_acc;
    return result;
}

SynonymLexicon load_synonym_lexicon(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path))
        throw CapabilityError("synonym lexicon not found: " + path.string());
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    SynonymLexicon lex;
    for (auto& [word, syns] : j.items())
        for (const auto& s : syns) lex[word].push_back(s.get<std::string>());
    return lex;
}

namespace {

std::vector<std::string> tokenize_words(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string w;
    while (is >> w) out.push_back(w);
    return out;
}

std::string join_words(const std::vector<std::string>& ws) {
    std::string out;
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (i) out += ' ';
        out += ws[i];
    }
    return out;
}

}  // namespace

std::vector<LabeledUtterance> eda_augment(const std::vector<LabeledUtterance>& items,
                                          int ops_per_item, int seed,
                                          const SynonymLexicon& lexicon) {
    if (ops_per_item < 0) throw ContractError("eda_augment: ops_per_item must be >= 0");
    std::vector<LabeledUtterance> out = items;
    if (ops_per_item == 0) return out;
    if (lexicon.empty()) throw CapabilityError("eda_augment: empty synonym lexicon");

    std::mt19937_64 rng(hash_combine(static_cast<std::uint64_t>(seed), fnv1a("eda")));
    for (const auto& item : items) {
        auto words = tokenize_words(item.text);
        for (int op = 0; op < ops_per_item; ++op) {
            switch (bounded(rng, 4)) {
                case 0: {  // synonym replacement
                    std::vector<std::size_t> cand;
                    for (std::size_t i = 0; i < words.size(); ++i)
                        if (lexicon.count(words[i])) cand.push_back(i);
                    if (cand.empty()) break;
                    const std::size_t i = cand[bounded(rng, cand.size())];
                    const auto& syns = lexicon.at(words[i]);
                    words[i] = syns[bounded(rng, syns.size())];
                    break;
                }
                case 1: {  // random insertion of a synonym
                    std::vector<const std::vector<std::string>*> pools;
                    for (const auto& w : words)
                        if (auto it = lexicon.find(w); it != lexicon.end()) pools.push_back(&it->second);
                    if (pools.empty()) break;
                    const auto& pool = *pools[bounded(rng, pools.size())];
                    words.insert(words.begin() + bounded(rng, words.size() + 1),
                                 pool[bounded(rng, pool.size())]);
                    break;
                }
                case 2: {  // random swap
                    if (words.size() < 2) break;
                    const std::size_t a = bounded(rng, words.size());
                    const std::size_t b = bounded(rng, words.size());
                    std::swap(words[a], words[b]);
                    break;
                }
                case 3: {  // random deletion, never below one word
                    if (words.size() < 2) break;
                    words.erase(words.begin() + bounded(rng, words.size()));
                    break;
                }
            }
        }
        if (!words.empty()) out.push_back({join_words(words), item.label});
    }
    return out;
}

}  // namespace fewshot
