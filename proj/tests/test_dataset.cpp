#include "doctest.h"

#include <fstream>
#include <set>

#include "fewshot/dataset.hpp"
#include "test_util.hpp"

using namespace fewshot;
using testutil::TempDir;

TEST_CASE("csv loading parses text,label rows") {
    TempDir tmp;
    auto p = tmp.path / "train.csv";
    testutil::write_csv(p, {"text,label", "transfer money to savings,transfer",
                            "\"what is my balance, please\",balance", "lost my card,card_lost"});
    auto rows = load_split_file(p, FileFormat::csv);
    REQUIRE(rows.size() == 3);
    CHECK(rows[1].text == "what is my balance, please");
    CHECK(rows[1].label == "balance");
}

TEST_CASE("blank-text row fails with its line number") {
    TempDir tmp;
    auto p = tmp.path / "train.csv";
    testutil::write_csv(p, {"hello there,greet", "   ,greet", "bye,farewell"});
    CHECK_THROWS_WITH_AS(load_split_file(p, FileFormat::csv),
                         doctest::Contains("line 2"), FormatError);
}

TEST_CASE("jsonl loading and missing-field error") {
    TempDir tmp;
    auto p = tmp.path / "train.jsonl";
    {
        std::ofstream out(p);
        out << R"({"text":"check my balance","label":"balance"})" << "\n";
        out << R"({"text":"send cash"})" << "\n";
    }
    CHECK_THROWS_WITH_AS(load_split_file(p, FileFormat::jsonl),
                         doctest::Contains("line 2"), FormatError);
}

TEST_CASE("single-class dataset is rejected") {
    TempDir tmp;
    auto p = tmp.path / "train.csv";
    testutil::write_csv(p, {"a b c,only", "d e f,only"});
    CHECK_THROWS_AS(load_dataset(p, FileFormat::csv), ValidationError);
}

TEST_CASE("manifest validates split sizes against published statistics") {
    // Datasets shaped like the published statistics tables; content is
    // synthetic, only the counts matter here.
    struct Shape {
        const char* name;
        std::size_t labels, train, dev, test;
    };
    for (const Shape& s : {Shape{"banking77", 77, 10003, 0, 3080},
                           Shape{"mcid", 16, 1258, 148, 339},
                           Shape{"hwu64", 64, 8954, 1076, 1076}}) {
        TempDir tmp;
        auto dir = tmp.path / s.name;
        std::filesystem::create_directories(dir);
        auto emit = [&](const char* split, std::size_t total) {
            if (total == 0) return;
            std::ofstream out(dir / (std::string(split) + ".csv"));
            for (std::size_t i = 0; i < total; ++i)
                out << "utterance " << split << " " << i << ",intent_" << (i % s.labels) << "\n";
        };
        emit("train", s.train);
        emit("dev", s.dev);
        emit("test", s.test);
        {
            std::ofstream out(dir / "manifest.json");
            out << R"({"splits":{"train":)" << s.train << R"(,"dev":)" << s.dev << R"(,"test":)"
                << s.test << "}}";
        }
        IntentDataset ds = load_dataset(dir, FileFormat::csv);
        StatsReport rep = dataset_stats(ds);
        CHECK(rep.num_labels == s.labels);
        CHECK(rep.splits.at("train").count == s.train);
        if (s.dev) CHECK(rep.splits.at("dev").count == s.dev);
        CHECK(rep.splits.at("test").count == s.test);

        // A lying manifest must fail validation.
        {
            std::ofstream out(dir / "manifest.json");
            out << R"({"splits":{"train":)" << (s.train + 1) << "}}";
        }
        CHECK_THROWS_AS(load_dataset(dir, FileFormat::csv), ValidationError);
    }
}

TEST_CASE("dataset_stats on a tiny synthetic set") {
    auto ds = testutil::synth_dataset(2, 2, 0);
    auto rep = dataset_stats(ds);
    CHECK(rep.num_labels == 2);
    CHECK(rep.splits.at("train").count == 4);
}

TEST_CASE("episode has exactly K items per label") {
    auto ds = testutil::synth_dataset(77, 12, 1);
    Episode ep = sample_episode(ds, 5, 0);
    CHECK(ep.items.size() == 385);  // 5 x 77
    std::map<std::string, int> counts;
    for (const auto& u : ep.items) counts[u.label]++;
    for (const auto& [label, c] : counts) CHECK(c == 5);
}

TEST_CASE("episode sampling is deterministic and duplicate-free") {
    auto ds = testutil::synth_dataset(6, 20, 2);
    Episode a = sample_episode(ds, 4, 7);
    Episode b = sample_episode(ds, 4, 7);
    CHECK(episode_to_json(a) == episode_to_json(b));

    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& u : a.items) CHECK(seen.insert({u.text, u.label}).second);

    Episode c = sample_episode(ds, 4, 8);
    CHECK(episode_to_json(a) != episode_to_json(c));
}

TEST_CASE("per-label exactness and determinism across random (K, seed) draws") {
    auto ds = testutil::synth_dataset(9, 15, 1);
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = 1 + static_cast<int>(bounded(rng, 15));
        const int seed = static_cast<int>(bounded(rng, 1000000));
        Episode a = sample_episode(ds, k, seed);
        Episode b = sample_episode(ds, k, seed);
        REQUIRE(a.items.size() == static_cast<std::size_t>(k) * 9);
        std::map<std::string, int> counts;
        for (const auto& u : a.items) counts[u.label]++;
        for (const auto& [label, c] : counts) REQUIRE(c == k);
        REQUIRE(a.items == b.items);
    }
}

TEST_CASE("insufficient data names the offending label") {
    auto ds = testutil::synth_dataset(3, 4, 1);
    CHECK_THROWS_WITH_AS(sample_episode(ds, 100, 0), doctest::Contains("intent_000"),
                         InsufficientDataError);
}

TEST_CASE("eval pool merges dev and test when dev exists") {
    auto ds = testutil::synth_dataset(3, 5, 2);
    CHECK(sample_episode(ds, 2, 0).eval_pool.size() == 6);  // test only

    ds.dev.push_back({"dev utterance one", "intent_000"});
    ds.dev.push_back({"dev utterance two", "intent_001"});
    CHECK(sample_episode(ds, 2, 0).eval_pool.size() == 8);  // dev ∪ test
}

TEST_CASE("episode file round trip is bit-exact") {
    TempDir tmp;
    auto ds = testutil::synth_dataset(4, 6, 1);
    Episode ep = sample_episode(ds, 3, 11);
    auto p = tmp.path / "episode.json";
    save_episode(ep, p);
    std::string first = read_file(p);
    Episode loaded = load_episode(p);
    save_episode(loaded, p);
    CHECK(read_file(p) == first);
    CHECK(loaded.items == ep.items);
    CHECK(loaded.label_set == ep.label_set);
}
