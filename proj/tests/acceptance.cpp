// Acceptance gate. Each check prints exactly one PASS / FAIL / SKIP line;
// the process exits nonzero if anything fails. Checks that require a
// pretrained encoder and a real dataset are gated on environment variables
// and report SKIP when the prerequisites are absent.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "fewshot/distill.hpp"
#include "fewshot/eval.hpp"
#include "fewshot/harness.hpp"
#include "fewshot/pipeline.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace fewshot;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* name, bool ok) {
    std::printf("%s: %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
}

void skip(const char* name, const std::string& reason) {
    std::printf("SKIP: %s (%s)\n", name, reason.c_str());
}

// ---------------------------------------------------------------- criterion 1

void check_kd_identities() {
    std::mt19937_64 rng(11);
    auto randm = [&](std::size_t r, std::size_t c) {
        Matrix m(r, c);
        for (auto& v : m.data) v = uniform01(rng) * 8.0 - 4.0;
        return m;
    };

    Matrix z = randm(6, 5);
    report("kd_loss is zero on identical logits",
           std::abs(kd_loss_value(z, z, 3.0)) < 1e-12);

    bool argmax_ok = true;
    for (int trial = 0; trial < 1000 && argmax_ok; ++trial) {
        Matrix logits = randm(1 + bounded(rng, 7), 2 + bounded(rng, 9));
        const double t = 0.05 + uniform01(rng) * 200.0;
        Matrix scaled = logits;
        for (auto& v : scaled.data) v /= t;
        Matrix p = softmax_rows(scaled);
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::size_t a = 0, b = 0;
            for (std::size_t c = 1; c < logits.cols; ++c) {
                if (logits.at(r, c) > logits.at(r, a)) a = c;
                if (p.at(r, c) > p.at(r, b)) b = c;
            }
            if (a != b) argmax_ok = false;
        }
    }
    report("temperature scaling preserves argmax on 1000 random batches", argmax_ok);

    bool closed_form_ok = true;
    for (int trial = 0; trial < 200; ++trial) {
        Matrix zt = randm(1, 2), zs = randm(1, 2);
        const double t = 0.5 + uniform01(rng) * 20.0;
        const double p = 1.0 / (1.0 + std::exp(-(zt.at(0, 0) - zt.at(0, 1)) / t));
        const double q = 1.0 / (1.0 + std::exp(-(zs.at(0, 0) - zs.at(0, 1)) / t));
        const double oracle = p * std::log(p / q) + (1.0 - p) * std::log((1.0 - p) / (1.0 - q));
        if (std::abs(kd_loss_value(zs, zt, t) - oracle) > 1e-9) closed_form_ok = false;
    }
    report("kd_loss matches the 2-class closed form to 1e-9", closed_form_ok);
}

void check_loss_oracles() {
    std::mt19937_64 rng(23);
    Matrix logits(7, 5);
    for (auto& v : logits.data) v = uniform01(rng) * 6.0 - 3.0;
    std::vector<int> labels;
    for (std::size_t r = 0; r < logits.rows; ++r) labels.push_back(int(bounded(rng, 5)));

    // Independent brute-force: per row, -log(exp(z_y)/sum exp(z_c)).
    double brute = 0.0;
    for (std::size_t r = 0; r < logits.rows; ++r) {
        double denom = 0.0;
        for (std::size_t c = 0; c < logits.cols; ++c) denom += std::exp(logits.at(r, c));
        brute += -std::log(std::exp(logits.at(r, size_t(labels[r]))) / denom);
    }
    brute /= double(logits.rows);
    report("ce_loss matches brute-force summation to 1e-6",
           std::abs(ce_loss_from_logits(logits, labels).loss - brute) < 1e-6);

    Matrix ml(9, 12);
    for (auto& v : ml.data) v = uniform01(rng) * 6.0 - 3.0;
    std::vector<int> targets;
    for (std::size_t r = 0; r < ml.rows; ++r) targets.push_back(int(bounded(rng, 12)));
    double mbrute = 0.0;
    for (std::size_t r = 0; r < ml.rows; ++r) {
        double denom = 0.0;
        for (std::size_t c = 0; c < ml.cols; ++c) denom += std::exp(ml.at(r, c));
        mbrute += -std::log(std::exp(ml.at(r, size_t(targets[r]))) / denom);
    }
    mbrute /= double(ml.rows);
    report("mlm_loss matches brute-force summation to 1e-6",
           std::abs(mlm_loss(ml, targets).loss - mbrute) < 1e-6);

    bool linear = true;
    for (int trial = 0; trial < 100; ++trial) {
        const double ce = uniform01(rng) * 4.0, mlm = uniform01(rng) * 4.0;
        const double l1 = uniform01(rng) * 3.0, l2 = uniform01(rng) * 3.0;
        JointObjectiveConfig a, b, sum;
        a.lambda = l1;
        b.lambda = l2;
        sum.lambda = l1 + l2;
        const double lhs = joint_loss(ce, mlm, sum) + ce;  // (ce + (λ1+λ2)·mlm) + ce
        const double rhs = joint_loss(ce, mlm, a) + joint_loss(ce, mlm, b);
        if (std::abs(lhs - rhs) > 1e-6) linear = false;
    }
    report("joint_loss is linear in lambda to 1e-6", linear);
}

void check_lambda_zero_trajectory() {
    auto run = [](TrainMode mode, const GeneratedCorpus* corpus, std::vector<double>& weights,
                  LearningCurve& curve) {
        auto ds = testutil::synth_dataset(3, 4, 2);
        Episode ep = sample_episode(ds, 3, 1);
        ToyBackbone::Config bc;
        bc.hidden_dim = 10;
        bc.vocab_size = 96;
        bc.init_seed = 4;
        ToyBackbone backbone(bc);
        ClassifierHead head(3, 10, 5);
        TrainConfig cfg;
        cfg.epochs = 12;
        cfg.batch_size = 4;
        cfg.lr_plm = 5e-3;
        cfg.lr_cls = 5e-2;
        cfg.mode = mode;
        JointObjectiveConfig obj;
        obj.lambda = 0.0;
        curve = train(ep, backbone, head, obj, cfg, corpus).curve;
        backbone.save_weights(weights);
    };

    auto ds = testutil::synth_dataset(3, 4, 2);
    Episode ep = sample_episode(ds, 3, 1);
    GeneratedCorpus corpus = assemble_daug(ep, {}, std::nullopt);

    std::vector<double> wa, wb;
    LearningCurve ca, cb;
    run(TrainMode::dft, nullptr, wa, ca);
    run(TrainMode::dft_ca, &corpus, wb, cb);

    bool equal = wa == wb && ca.points.size() == cb.points.size();
    for (std::size_t i = 0; equal && i < ca.points.size(); ++i)
        if (std::abs(ca.points[i].train_loss - cb.points[i].train_loss) > 1e-9) equal = false;
    report("lambda=0 training trajectory identical between dft and dft_ca", equal);
}

void check_gradients() {
    ToyBackbone::Config bc;
    bc.hidden_dim = 6;
    bc.vocab_size = 48;
    bc.max_seq_len = 12;
    bc.init_seed = 9;
    ToyBackbone backbone(bc);
    ClassifierHead head(3, 6, 10);

    std::vector<std::string> texts{"alpha beta gamma", "delta beta", "gamma epsilon zeta"};
    std::vector<int> labels{0, 2, 1};
    JointObjectiveConfig obj;
    obj.lambda = 0.5;
    obj.masking.rng_seed = 77;

    auto loss_of = [&]() {
        TokenBatch tb = backbone.tokenize(texts);
        Matrix sent = backbone.encode(tb);
        double ce = ce_loss_from_logits(head.logits(sent), labels).loss;
        MaskedBatch masked = apply_masking(tb, obj.masking, backbone.specials(),
                                           backbone.vocab_size());
        double mlm = masked.positions.empty()
                         ? 0.0
                         : mlm_loss(backbone.mlm_logits_at(masked.tokens, masked.positions),
                                    masked.target_ids)
                               .loss;
        return joint_loss(ce, mlm, obj);
    };

    // Analytic gradient of the same joint loss.
    backbone.zero_grad();
    head.zero_grad();
    {
        TokenBatch tb = backbone.tokenize(texts);
        Matrix sent = backbone.encode(tb);
        CeResult ce = ce_loss_from_logits(head.logits(sent), labels);
        Matrix dsent(sent.rows, sent.cols);
        head.backward(sent, ce.dlogits, dsent);
        backbone.accumulate_encode_grad(tb, dsent);
        MaskedBatch masked = apply_masking(tb, obj.masking, backbone.specials(),
                                           backbone.vocab_size());
        if (!masked.positions.empty()) {
            MlmResult mlm =
                mlm_loss(backbone.mlm_logits_at(masked.tokens, masked.positions), masked.target_ids);
            for (auto& g : mlm.dlogits.data) g *= obj.lambda;
            backbone.accumulate_mlm_grad(masked.tokens, masked.positions, mlm.dlogits);
        }
    }

    auto groups = parameter_groups(backbone, head);
    std::vector<ParamTensor> all = groups.plm;
    all.insert(all.end(), groups.cls.begin(), groups.cls.end());

    std::mt19937_64 rng(13);
    const double eps = 1e-5;
    int checked = 0;
    bool ok = true;
    while (checked < 12) {
        ParamTensor& p = all[bounded(rng, all.size())];
        const std::size_t i = bounded(rng, p.value->size());
        const double analytic = (*p.grad)[i];
        if (std::abs(analytic) < 1e-8) continue;  // avoid 0/0 relative error
        const double orig = (*p.value)[i];
        (*p.value)[i] = orig + eps;
        const double up = loss_of();
        (*p.value)[i] = orig - eps;
        const double down = loss_of();
        (*p.value)[i] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        if (std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-12) > 1e-3) ok = false;
        ++checked;
    }
    report("joint-loss gradients match central finite differences (rel err <= 1e-3, 12 coords)",
           ok);
}

void check_masking_statistics() {
    // 100 sequences x (1 CLS + 100 real tokens + 2 PAD): 10,000 maskable slots.
    TokenBatch tb;
    tb.batch = 100;
    tb.seq_len = 103;
    tb.ids.assign(tb.batch * tb.seq_len, 0);
    tb.attn.assign(tb.batch * tb.seq_len, 0);
    std::mt19937_64 rng(31);
    SpecialTokens sp;
    for (std::size_t b = 0; b < tb.batch; ++b) {
        tb.ids[b * tb.seq_len] = sp.cls;
        tb.attn[b * tb.seq_len] = 1;
        for (std::size_t t = 1; t <= 100; ++t) {
            tb.ids[b * tb.seq_len + t] = int(sp.count + bounded(rng, 200));
            tb.attn[b * tb.seq_len + t] = 1;
        }
    }

    MaskingScheme scheme;
    scheme.rng_seed = 404;
    MaskedBatch mb = apply_masking(tb, scheme, sp, 204);
    const double n = 10000.0, p = scheme.mask_prob;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    report("masked-position count within 3 binomial sigma of 0.15*10000",
           std::abs(double(mb.positions.size()) - n * p) <= 3.0 * sigma);

    bool specials_safe = true;
    for (std::uint64_t seed = 0; seed < 100 && specials_safe; ++seed) {
        MaskingScheme s = scheme;
        s.rng_seed = seed;
        MaskedBatch m = apply_masking(tb, s, sp, 204);
        for (std::size_t pos : m.positions) {
            const std::size_t t = pos % tb.seq_len;
            if (tb.ids[pos] < sp.count || tb.attn[pos] == 0 || t == 0) specials_safe = false;
        }
    }
    report("special and PAD tokens never selected for masking across 100 seeds", specials_safe);
}

void check_sampler() {
    auto ds = testutil::synth_dataset(11, 9, 3);
    std::mt19937_64 rng(47);
    bool ok = true;
    for (int trial = 0; trial < 100 && ok; ++trial) {
        const int k = 1 + int(bounded(rng, 8));
        const int seed = int(bounded(rng, 100000));
        Episode a = sample_episode(ds, k, seed);
        Episode b = sample_episode(ds, k, seed);
        if (a.content_hash() != b.content_hash()) ok = false;
        std::map<std::string, int> counts;
        std::set<std::string> seen;
        for (const auto& u : a.items) {
            ++counts[u.label];
            if (!seen.insert(u.text + "\x1f" + u.label).second) ok = false;
        }
        if (counts.size() != ds.label_set.size()) ok = false;
        for (const auto& [label, c] : counts)
            if (c != k) ok = false;
    }
    report("episode sampler deterministic with exactly K per label on 100 (K,seed) draws", ok);
}

void check_distillation_chain() {
    testutil::TempDir tmp;
    auto ds = testutil::synth_dataset(2, 4, 2);
    Episode ep = sample_episode(ds, 2, 0);

    ToyBackbone::Config bc;
    bc.hidden_dim = 12;
    bc.vocab_size = 64;
    bc.init_seed = 5;
    ModelBundle base;
    base.backbone = std::make_unique<ToyBackbone>(bc);
    base.head = ClassifierHead(2, 12, 6);

    TrainConfig cfg;
    cfg.epochs = 60;
    cfg.batch_size = 4;
    cfg.lr_plm = 5e-3;
    cfg.lr_cls = 5e-2;
    cfg.seed = 1;
    JointObjectiveConfig obj;
    train(ep, *base.backbone, base.head, obj, cfg, nullptr);
    save_checkpoint(tmp.path / "base", *base.backbone, base.head, "{}");

    DistillationSchedule sched;
    sched.temperature = 2.0;
    sched.generations = 3;
    sched.per_generation_epochs = 30;
    sched.include_mlm = false;
    DistillResult dr =
        distill_sequence(base, tmp.path / "base", ep, sched, obj, cfg, nullptr, tmp.path / "ssd");

    bool kl_ok = dr.records.size() == 3;
    for (const auto& rec : dr.records)
        if (rec.kl_trace.size() < 2 || !(rec.kl_trace.back() < rec.kl_trace.front())) kl_ok = false;
    report("per-generation KL decreases from first to last epoch in every generation", kl_ok);

    bool chain_ok = dr.records.size() == 3 &&
                    dr.records[0].teacher_hash == checkpoint_hash(tmp.path / "base");
    for (std::size_t k = 1; chain_ok && k < dr.records.size(); ++k)
        if (dr.records[k].teacher_hash != dr.records[k - 1].student_hash) chain_ok = false;
    report("checkpoint-hash chaining holds across generations=3", chain_ok);
}

// ---------------------------------------------------------------- criterion 2

void check_toy_end_to_end() {
    {
        auto ds = testutil::synth_dataset(4, 5, 3);
        Episode ep = sample_episode(ds, 5, 0);
        ToyBackbone::Config bc;
        bc.hidden_dim = 16;
        bc.vocab_size = 128;
        bc.init_seed = 2;
        ToyBackbone backbone(bc);
        ClassifierHead head(4, 16, 3);
        TrainConfig cfg;
        cfg.epochs = 80;
        cfg.batch_size = 4;
        cfg.lr_plm = 5e-3;
        cfg.lr_cls = 5e-2;
        JointObjectiveConfig obj;
        TrainResult r = train(ep, backbone, head, obj, cfg, nullptr);
        report("direct fine-tuning reaches train accuracy 1.0 on a synthetic 4-class task",
               r.final_train_acc == 1.0);
    }

    testutil::TempDir tmp;
    fs::create_directories(tmp.path / "data");
    {
        auto ds = testutil::synth_dataset(4, 6, 4);
        auto dump = [&](const fs::path& p, const std::vector<LabeledUtterance>& items) {
            std::ofstream out(p);
            out << "text,label\n";
            for (const auto& u : items) out << u.text << "," << u.label << "\n";
        };
        dump(tmp.path / "data" / "train.csv", ds.train);
        dump(tmp.path / "data" / "test.csv", ds.test);
    }

    ExperimentGrid grid;
    grid.dataset_path = tmp.path / "data";
    grid.k_values = {3};
    grid.seeds = {0, 1, 2};
    grid.workers = 2;
    GridMethod full;
    full.name = "dft_ca_ssd";
    full.plan = {true, true, TrainMode::dft};
    full.client = "stub";
    full.config.backbone.hidden_dim = 12;
    full.config.backbone.vocab_size = 96;
    full.config.train.epochs = 20;
    full.config.train.batch_size = 4;
    full.config.train.lr_plm = 5e-3;
    full.config.train.lr_cls = 5e-2;
    full.config.objective.lambda = 0.2;
    full.config.distill.generations = 2;
    full.config.distill.per_generation_epochs = 6;
    full.config.augment.per_label = 4;
    grid.methods = {full};

    GridResult gr = run_grid(grid, tmp.path / "out");
    bool pipeline_ok = gr.cells.size() == 1 && !gr.cells[0].failed &&
                       gr.cells[0].per_seed_acc.size() == 3 &&
                       fs::exists(tmp.path / "out" / "report.md");

    // Recompute mean/std independently from the per-seed cell files.
    bool recomputable = pipeline_ok;
    if (pipeline_ok) {
        std::vector<double> accs;
        for (const auto& e : fs::directory_iterator(tmp.path / "out" / "cells")) {
            auto j = nlohmann::json::parse(read_file(e.path()));
            accs.push_back(j.at("accuracy").get<double>());
        }
        double mean = 0.0;
        for (double a : accs) mean += a;
        mean /= double(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double stddev = std::sqrt(var / double(accs.size()));
        recomputable = accs.size() == 3 && std::abs(mean - gr.cells[0].mean_acc) < 1e-12 &&
                       std::abs(stddev - gr.cells[0].std_acc) < 1e-12;
    }
    report("full context-augmentation + self-distillation pipeline emits report.md",
           pipeline_ok);
    report("report mean/std recomputable from per-seed cell files", recomputable);
}

// ------------------------------------------------- criteria 3 and 4 (gated)

// These need a pretrained masked-LM encoder checkpoint (~110M parameters)
// and the BANKING77 dataset; neither ships with the repository. Point
// FEWSHOT_PRETRAINED_CHECKPOINT at a checkpoint directory loadable by
// load_checkpoint() and FEWSHOT_BANKING77_DIR at a train/test split
// directory to enable them. FEWSHOT_DFT_TARGET (default 69.01) selects the
// reference mean accuracy for the encoder family in use.

struct PretrainedEnv {
    fs::path checkpoint;
    fs::path dataset;
    double dft_target = 69.01;
    bool available = false;
    std::string reason;
};

PretrainedEnv pretrained_env() {
    PretrainedEnv env;
    const char* ckpt = std::getenv("FEWSHOT_PRETRAINED_CHECKPOINT");
    const char* data = std::getenv("FEWSHOT_BANKING77_DIR");
    if (!ckpt || !data) {
        env.reason =
            "requires FEWSHOT_PRETRAINED_CHECKPOINT and FEWSHOT_BANKING77_DIR; "
            "no pretrained encoder or dataset is bundled";
        return env;
    }
    env.checkpoint = ckpt;
    env.dataset = data;
    if (const char* target = std::getenv("FEWSHOT_DFT_TARGET")) env.dft_target = std::atof(target);
    if (!fs::exists(env.checkpoint / "weights.bin")) {
        env.reason = "checkpoint directory has no weights.bin: " + env.checkpoint.string();
        return env;
    }
    if (!fs::exists(env.dataset)) {
        env.reason = "dataset directory not found: " + env.dataset.string();
        return env;
    }
    env.available = true;
    return env;
}

struct MethodOutcome {
    std::vector<double> accs;
    double flatness = 0.0;  // worst flatness drop across seeds
};

MethodOutcome run_pretrained_method(const PretrainedEnv& env, const IntentDataset& ds,
                                    const StagePlan& plan, const fs::path& work,
                                    int per_label_generations) {
    PipelineConfig cfg;
    cfg.backbone.kind = "checkpoint";
    cfg.backbone.checkpoint = env.checkpoint;
    cfg.train.lr_plm = 2e-4;
    cfg.train.lr_cls = 2e-5;
    cfg.objective.lambda = 1.0;
    cfg.distill.temperature = 100.0;
    cfg.distill.generations = 6;
    cfg.augment.per_label = per_label_generations;

    std::vector<std::string> seed_texts;
    for (const auto& u : ds.train) seed_texts.push_back(u.text);
    BigramLMClient client(seed_texts);
    MethodOutcome out;
    for (int seed = 0; seed < 5; ++seed) {
        Episode ep = sample_episode(ds, 5, seed);
        PipelineConfig scfg = cfg;
        scfg.train.seed = seed;
        PipelineResult r = run_pipeline(ep, plan, scfg, &client, nullptr,
                                        work / ("seed" + std::to_string(seed)));
        out.accs.push_back(r.accuracy * 100.0);
        out.flatness = std::max(out.flatness, curve_report(r.curve).flatness_drop * 100.0);
    }
    return out;
}

void check_pretrained_tier() {
    PretrainedEnv env = pretrained_env();
    const char* names[] = {
        "5-seed mean accuracy of direct fine-tuning within +/-3.0 points of reference",
        "context augmentation improves over direct fine-tuning (mean accuracy)",
        "adding self-distillation does not hurt context augmentation (mean accuracy)",
        "eval-accuracy drop from running peak over final half of epochs <= 2.0 points",
        "accuracy non-decreasing in generated-corpus size up to 50/label (within noise)",
        "empty generated corpus with lambda>0 underperforms direct fine-tuning",
    };
    if (!env.available) {
        for (const char* n : names) skip(n, env.reason);
        return;
    }

    IntentDataset ds = load_dataset(env.dataset, FileFormat::csv, std::nullopt);
    testutil::TempDir tmp;

    MethodOutcome dft =
        run_pretrained_method(env, ds, {false, false, TrainMode::dft}, tmp.path / "dft", 0);
    MethodOutcome ca =
        run_pretrained_method(env, ds, {true, false, TrainMode::dft}, tmp.path / "ca", 50);
    MethodOutcome ca_ssd =
        run_pretrained_method(env, ds, {true, true, TrainMode::dft}, tmp.path / "ca_ssd", 50);

    report(names[0], std::abs(mean_of(dft.accs) - env.dft_target) <= 3.0);
    report(names[1], mean_of(ca.accs) > mean_of(dft.accs));
    report(names[2], mean_of(ca_ssd.accs) >= mean_of(ca.accs));
    report(names[3], std::max({dft.flatness, ca.flatness, ca_ssd.flatness}) <= 2.0);

    // Ablation: sweep generated-corpus size; allow 1.0-point noise per step.
    std::vector<int> sizes{0, 10, 25, 50};
    std::vector<double> sweep;
    for (int s : sizes) {
        MethodOutcome m = run_pretrained_method(
            env, ds, {true, false, TrainMode::dft}, tmp.path / ("sweep" + std::to_string(s)), s);
        sweep.push_back(mean_of(m.accs));
    }
    bool nondecreasing = true;
    for (std::size_t i = 1; i < sweep.size(); ++i)
        if (sweep[i] < sweep[i - 1] - 1.0) nondecreasing = false;
    report(names[4], nondecreasing);
    report(names[5], sweep.front() < mean_of(dft.accs));
}

}  // namespace

int main() {
    check_kd_identities();
    check_loss_oracles();
    check_lambda_zero_trajectory();
    check_gradients();
    check_masking_statistics();
    check_sampler();
    check_distillation_chain();
    check_toy_end_to_end();
    check_pretrained_tier();

    if (failures > 0) {
        std::printf("acceptance: %d check(s) failed\n", failures);
        return 1;
    }
    std::printf("acceptance: all executed checks passed\n");
    return 0;
}
