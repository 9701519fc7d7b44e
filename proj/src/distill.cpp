#include "fewshot/distill.hpp"

#include <algorithm>
#include <cmath>

#include "fewshot/eval.hpp"
#include "json.hpp"

namespace fewshot {

void DistillationSchedule::validate() const {
    if (temperature <= 0.0) throw ContractError("distillation: temperature must be > 0");
    if (generations < 1) throw ContractError("distillation: generations must be >= 1");
    if (per_generation_epochs < 1)
        throw ContractError("distillation: per_generation_epochs must be >= 1");
}

KdResult kd_loss(const Matrix& student_logits, const Matrix& teacher_logits, double t) {
    if (t <= 0.0) throw ContractError("kd_loss: temperature must be > 0");
    if (student_logits.rows != teacher_logits.rows || student_logits.cols != teacher_logits.cols)
        throw ContractError("kd_loss: logit shape mismatch");
    for (double z : student_logits.data)
        if (!std::isfinite(z)) throw ContractError("kd_loss: non-finite student logits");
    for (double z : teacher_logits.data)
        if (!std::isfinite(z)) throw ContractError("kd_loss: non-finite teacher logits");

    Matrix ts = teacher_logits, ss = student_logits;
    for (auto& z : ts.data) z /= t;
    for (auto& z : ss.data) z /= t;
    Matrix p = softmax_rows(ts);  // teacher, reference distribution
    Matrix q = softmax_rows(ss);  // student

    KdResult res;
    res.dstudent_logits = Matrix(p.rows, p.cols);
    const double inv_b = 1.0 / static_cast<double>(p.rows);
    double total = 0.0;
    for (std::size_t r = 0; r < p.rows; ++r) {
        for (std::size_t c = 0; c < p.cols; ++c) {
            const double pi = p.at(r, c);
            if (pi > 0.0) total += pi * std::log(pi / std::max(q.at(r, c), 1e-300));
            res.dstudent_logits.at(r, c) = (q.at(r, c) - pi) / t * inv_b;
        }
    }
    res.loss = total * inv_b;
    return res;
}

double kd_loss_value(const Matrix& student_logits, const Matrix& teacher_logits, double t) {
    return kd_loss(student_logits, teacher_logits, t).loss;
}

std::string GenerationRecord::to_json(double temperature, int epochs) const {
    nlohmann::ordered_json j;
    j["k"] = k;
    j["t"] = temperature;
    j["epochs"] = epochs;
    j["kl_trace"] = kl_trace;
    j["accuracy"] = accuracy;
    j["teacher_checkpoint"] = teacher_checkpoint;
    j["teacher_hash"] = teacher_hash;
    j["student_checkpoint"] = student_checkpoint;
    j["student_hash"] = student_hash;
    return j.dump(2) + "\n";
}

GenerationRecord run_generation(const ModelBundle& teacher,
                                const std::filesystem::path& teacher_ckpt, ModelBundle& student,
                                const Episode& episode, const DistillationSchedule& sched,
                                const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                                const GeneratedCorpus* corpus,
                                const std::filesystem::path& out_ckpt) {
    sched.validate();
    if (teacher.head.num_labels != student.head.num_labels)
        throw ContractError("run_generation: teacher/student label-space mismatch");
    if (episode.items.empty()) throw ContractError("run_generation: empty episode");

    const std::size_t n = episode.items.size();
    const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps =
        steps_per_epoch * static_cast<std::size_t>(sched.per_generation_epochs);

    const bool use_mlm = sched.include_mlm && objcfg.lambda > 0.0 && corpus != nullptr &&
                         !corpus->entries.empty();
    std::vector<std::string> mlm_texts;
    if (use_mlm) mlm_texts = corpus->texts();

    AdamW opt({{student.backbone->plm_parameters(), cfg.lr_plm},
               {student.head.parameters(), cfg.lr_cls}},
              cfg.weight_decay, total_steps, cfg.warmup_frac);

    std::mt19937_64 data_rng(hash_combine(static_cast<std::uint64_t>(cfg.seed), fnv1a("kd-data")));
    std::mt19937_64 mlm_rng(hash_combine(static_cast<std::uint64_t>(cfg.seed), fnv1a("kd-mlm")));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    GenerationRecord rec;
    for (int epoch = 0; epoch < sched.per_generation_epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[bounded(data_rng, i)]);

        double epoch_kl = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::vector<std::string> texts;
            for (std::size_t i = start; i < end; ++i) texts.push_back(episode.items[order[i]].text);

            opt.zero_grad();
            // Teacher logits recomputed per batch, deterministic eval path.
            TokenBatch teacher_tb = teacher.backbone->tokenize(texts);
            Matrix teacher_logits = teacher.head.logits(teacher.backbone->encode(teacher_tb));

            TokenBatch tb = student.backbone->tokenize(texts);
            Matrix sent = student.backbone->encode(tb);
            Matrix student_logits = student.head.logits(sent);

            KdResult kd = kd_loss(student_logits, teacher_logits, sched.temperature);
            Matrix dsent(sent.rows, sent.cols);
            student.head.backward(sent, kd.dstudent_logits, dsent);
            student.backbone->accumulate_encode_grad(tb, dsent);

            if (use_mlm) {
                std::vector<std::string> mtexts;
                for (int i = 0; i < cfg.batch_size; ++i)
                    mtexts.push_back(mlm_texts[bounded(mlm_rng, mlm_texts.size())]);
                TokenBatch mtb = student.backbone->tokenize(mtexts);
                MaskingScheme scheme = objcfg.masking;
                scheme.rng_seed = hash_combine(objcfg.masking.rng_seed, mlm_rng());
                MaskedBatch masked = apply_masking(mtb, scheme, student.backbone->specials(),
                                                   student.backbone->vocab_size());
                if (!masked.positions.empty()) {
                    Matrix mlogits = student.backbone->mlm_logits_at(masked.tokens, masked.positions);
                    MlmResult mlm = mlm_loss(mlogits, masked.target_ids);
                    for (auto& g : mlm.dlogits.data) g *= objcfg.lambda;
                    student.backbone->accumulate_mlm_grad(masked.tokens, masked.positions,
                                                          mlm.dlogits);
                }
            }
            if (!std::isfinite(kd.loss))
                throw DivergenceError("non-finite KD loss at epoch " + std::to_string(epoch));
            epoch_kl += kd.loss;
            opt.step();
        }
        rec.kl_trace.push_back(epoch_kl / static_cast<double>(steps_per_epoch));
    }

    rec.teacher_checkpoint = teacher_ckpt.string();
    rec.teacher_hash = checkpoint_hash(teacher_ckpt);
    rec.accuracy = episode.eval_pool.empty()
                       ? 0.0
                       : evaluate(*student.backbone, student.head, episode.eval_pool,
                                  episode.label_set);

    nlohmann::ordered_json prov;
    prov["stage"] = "distill";
    prov["episode_hash"] = hash_hex(episode.content_hash());
    prov["teacher_hash"] = rec.teacher_hash;
    save_checkpoint(out_ckpt, *student.backbone, student.head, prov.dump());
    rec.student_checkpoint = out_ckpt.string();
    rec.student_hash = checkpoint_hash(out_ckpt);
    return rec;
}

DistillResult distill_sequence(const ModelBundle& base, const std::filesystem::path& base_ckpt,
                               const Episode& episode, const DistillationSchedule& sched,
                               const JointObjectiveConfig& objcfg, const TrainConfig& cfg,
                               const GeneratedCorpus* corpus,
                               const std::filesystem::path& work_dir) {
    sched.validate();
    std::filesystem::create_directories(work_dir);

    DistillResult res;
    ModelBundle teacher{base.backbone->clone(), base.head};
    std::filesystem::path teacher_ckpt = base_ckpt;

    for (int k = 1; k <= sched.generations; ++k) {
        ModelBundle student;
        student.backbone = teacher.backbone->clone_fresh(
            hash_combine(static_cast<std::uint64_t>(cfg.seed), hash_combine(fnv1a("student"), k)));
        student.head = ClassifierHead(
            teacher.head.num_labels, teacher.backbone->hidden_dim(),
            hash_combine(static_cast<std::uint64_t>(cfg.seed), hash_combine(fnv1a("head"), k)));

        auto out_ckpt = work_dir / ("gen" + std::to_string(k));
        GenerationRecord rec = run_generation(teacher, teacher_ckpt, student, episode, sched,
                                              objcfg, cfg, corpus, out_ckpt);
        rec.k = k;
        write_file_atomic(out_ckpt / "record.json",
                          rec.to_json(sched.temperature, sched.per_generation_epochs));
        res.records.push_back(rec);

        teacher.backbone = std::move(student.backbone);
        teacher.head = std::move(student.head);
        teacher_ckpt = out_ckpt;
    }

    res.final_model = std::move(teacher);
    return res;
}

}  // namespace fewshot
