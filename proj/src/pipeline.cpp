#include "fewshot/pipeline.hpp"

#include "fewshot/eval.hpp"
#include "json.hpp"

namespace fewshot {

namespace {

nlohmann::ordered_json config_to_json_obj(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["backbone"] = {{"kind", c.backbone.kind},
                     {"checkpoint", c.backbone.checkpoint.string()},
                     {"hidden_dim", c.backbone.hidden_dim},
                     {"vocab_size", c.backbone.vocab_size},
                     {"max_seq_len", c.backbone.max_seq_len}};
    j["train"] = {{"lr_plm", c.train.lr_plm},
                  {"lr_cls", c.train.lr_cls},
                  {"weight_decay", c.train.weight_decay},
                  {"warmup_frac", c.train.warmup_frac},
                  {"epochs", c.train.epochs},
                  {"batch_size", c.train.batch_size},
                  {"seed", c.train.seed},
                  {"mode", to_string(c.train.mode)},
                  {"eda_ops_per_item", c.train.eda_ops_per_item},
                  {"eda_lexicon", c.train.eda_lexicon ? c.train.eda_lexicon->string() : ""}};
    j["objective"] = {{"lambda", c.objective.lambda},
                      {"masking",
                       {{"mask_prob", c.objective.masking.mask_prob},
                        {"replace_mask_frac", c.objective.masking.replace_mask_frac},
                        {"replace_random_frac", c.objective.masking.replace_random_frac},
                        {"keep_frac", c.objective.masking.keep_frac},
                        {"rng_seed", c.objective.masking.rng_seed}}}};
    j["distill"] = {{"temperature", c.distill.temperature},
                    {"generations", c.distill.generations},
                    {"per_generation_epochs", c.distill.per_generation_epochs},
                    {"include_mlm", c.distill.include_mlm}};
    j["augment"] = {{"per_label", c.augment.per_label},
                    {"temperature", c.augment.temperature},
                    {"max_new_tokens", c.augment.max_new_tokens},
                    {"seed", c.augment.seed}};
    return j;
}

}  // namespace

std::string PipelineConfig::to_json() const { return config_to_json_obj(*this).dump(2) + "\n"; }

std::uint64_t PipelineConfig::config_hash() const { return fnv1a(config_to_json_obj(*this).dump()); }

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    PipelineConfig c;
    if (j.contains("backbone")) {
        const auto& b = j["backbone"];
        c.backbone.kind = b.value("kind", "toy");
        c.backbone.checkpoint = b.value("checkpoint", "");
        c.backbone.hidden_dim = b.value("hidden_dim", c.backbone.hidden_dim);
        c.backbone.vocab_size = b.value("vocab_size", c.backbone.vocab_size);
        c.backbone.max_seq_len = b.value("max_seq_len", c.backbone.max_seq_len);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        c.train.lr_plm = t.value("lr_plm", c.train.lr_plm);
        c.train.lr_cls = t.value("lr_cls", c.train.lr_cls);
        c.train.weight_decay = t.value("weight_decay", c.train.weight_decay);
        c.train.warmup_frac = t.value("warmup_frac", c.train.warmup_frac);
        c.train.epochs = t.value("epochs", c.train.epochs);
        c.train.batch_size = t.value("batch_size", c.train.batch_size);
        c.train.seed = t.value("seed", c.train.seed);
        c.train.mode = train_mode_from_string(t.value("mode", "dft"));
        c.train.eda_ops_per_item = t.value("eda_ops_per_item", c.train.eda_ops_per_item);
        if (auto lex = t.value("eda_lexicon", std::string{}); !lex.empty())
            c.train.eda_lexicon = lex;
    }
    if (j.contains("objective")) {
        const auto& o = j["objective"];
        c.objective.lambda = o.value("lambda", c.objective.lambda);
        if (o.contains("masking")) {
            const auto& m = o["masking"];
            c.objective.masking.mask_prob = m.value("mask_prob", c.objective.masking.mask_prob);
            c.objective.masking.replace_mask_frac =
                m.value("replace_mask_frac", c.objective.masking.replace_mask_frac);
            c.objective.masking.replace_random_frac =
                m.value("replace_random_frac", c.objective.masking.replace_random_frac);
            c.objective.masking.keep_frac = m.value("keep_frac", c.objective.masking.keep_frac);
            c.objective.masking.rng_seed = m.value("rng_seed", c.objective.masking.rng_seed);
        }
    }
    if (j.contains("distill")) {
        const auto& d = j["distill"];
        c.distill.temperature = d.value("temperature", c.distill.temperature);
        c.distill.generations = d.value("generations", c.distill.generations);
        c.distill.per_generation_epochs =
            d.value("per_generation_epochs", c.distill.per_generation_epochs);
        c.distill.include_mlm = d.value("include_mlm", c.distill.include_mlm);
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        c.augment.per_label = a.value("per_label", c.augment.per_label);
        c.augment.temperature = a.value("temperature", c.augment.temperature);
        c.augment.max_new_tokens = a.value("max_new_tokens", c.augment.max_new_tokens);
        c.augment.seed = a.value("seed", c.augment.seed);
    }
    return c;
}

std::unique_ptr<EncoderBackbone> make_backbone(const BackboneSpec& spec, std::uint64_t init_seed) {
    if (spec.kind == "toy") {
        ToyBackbone::Config bc;
        bc.hidden_dim = spec.hidden_dim;
        bc.vocab_size = spec.vocab_size;
        bc.max_seq_len = spec.max_seq_len;
        bc.init_seed = init_seed;
        return std::make_unique<ToyBackbone>(bc);
    }
    if (spec.kind == "checkpoint") {
        auto loaded = load_checkpoint(spec.checkpoint);
        return std::move(loaded.backbone);
    }
    throw CapabilityError("unknown backbone kind: " + spec.kind);
}

PipelineResult run_pipeline(const Episode& episode, const StagePlan& plan,
                            const PipelineConfig& cfg, GenerativeLMClient* client,
                            const GeneratedCorpus* precomputed_corpus,
                            const std::filesystem::path& work_dir) {
    std::filesystem::create_directories(work_dir);

    nlohmann::ordered_json prov;
    prov["episode_hash"] = hash_hex(episode.content_hash());
    prov["config_hash"] = hash_hex(cfg.config_hash());
    prov["plan"] = {{"use_ca", plan.use_ca}, {"use_ssd", plan.use_ssd},
                    {"mode", to_string(plan.mode)}};

    // Stage 1: corpus.
    GeneratedCorpus corpus;
    const GeneratedCorpus* corpus_ptr = nullptr;
    const bool needs_corpus =
        plan.use_ca || plan.mode == TrainMode::dft_ca || plan.mode == TrainMode::gptj_da;
    if (precomputed_corpus) {
        corpus = *precomputed_corpus;
        corpus_ptr = &corpus;
    } else if (needs_corpus) {
        if (client == nullptr)
            throw ContractError("run_pipeline: context augmentation requires a generator client");
        auto generated = generate_for_episode(*client, episode, cfg.augment);
        corpus = assemble_daug(episode, generated, std::nullopt);
        save_corpus(corpus, work_dir / "corpus.jsonl");
        corpus_ptr = &corpus;
    }
    if (corpus_ptr) prov["corpus_hash"] = hash_hex(corpus_ptr->content_hash());

    // Stage 2: fine-tuning.
    TrainConfig tc = cfg.train;
    tc.mode = plan.mode;
    if (plan.use_ca && tc.mode == TrainMode::dft) tc.mode = TrainMode::dft_ca;

    PipelineResult res;
    res.model.backbone =
        make_backbone(cfg.backbone, hash_combine(static_cast<std::uint64_t>(tc.seed), fnv1a("bb")));
    res.model.head = ClassifierHead(episode.label_set.size(), res.model.backbone->hidden_dim(),
                                    hash_combine(static_cast<std::uint64_t>(tc.seed), fnv1a("hd")));

    TrainResult tr = train(episode, *res.model.backbone, res.model.head, cfg.objective, tc,
                           corpus_ptr);
    res.curve = tr.curve;

    auto stage0 = work_dir / "stage0";
    {
        nlohmann::ordered_json p0 = prov;
        p0["stage"] = "train";
        save_checkpoint(stage0, *res.model.backbone, res.model.head, p0.dump());
    }
    prov["stages"] = nlohmann::ordered_json::array();
    prov["stages"].push_back({{"stage", "train"},
                              {"mode", to_string(tc.mode)},
                              {"checkpoint", stage0.string()},
                              {"checkpoint_hash", checkpoint_hash(stage0)}});

    // Stage 3: sequential self-distillation.
    if (plan.use_ssd) {
        DistillResult dr = distill_sequence(res.model, stage0, episode, cfg.distill, cfg.objective,
                                            tc, corpus_ptr, work_dir);
        res.generation_records = dr.records;
        res.model = std::move(dr.final_model);
        for (const auto& rec : dr.records)
            prov["stages"].push_back({{"stage", "distill"},
                                      {"k", rec.k},
                                      {"checkpoint", rec.student_checkpoint},
                                      {"checkpoint_hash", rec.student_hash}});
    }

    res.accuracy = episode.eval_pool.empty()
                       ? tr.final_eval_acc
                       : evaluate(*res.model.backbone, res.model.head, episode.eval_pool,
                                  episode.label_set);
    res.provenance_json = prov.dump(2) + "\n";
    write_file_atomic(work_dir / "provenance.json", res.provenance_json);
    return res;
}

}  // namespace fewshot
