#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "fewshot/dataset.hpp"

namespace testutil {

// Unique scratch directory, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("fewshot_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

// Synthetic dataset whose classes are separable by surface vocabulary:
// label j's utterances are built from words unique to j plus shared filler.
inline fewshot::IntentDataset synth_dataset(std::size_t num_labels, std::size_t train_per_label,
                                            std::size_t test_per_label, unsigned salt = 0) {
    fewshot::IntentDataset ds;
    ds.name = "synth" + std::to_string(num_labels);
    auto text_for = [&](std::size_t label, std::size_t i) {
        return "key" + std::to_string(salt) + "_" + std::to_string(label) + " topic" +
               std::to_string(label) + " filler" + std::to_string(i) + " please";
    };
    for (std::size_t l = 0; l < num_labels; ++l) {
        char namebuf[32];
        std::snprintf(namebuf, sizeof(namebuf), "intent_%03zu", l);
        const std::string name = namebuf;
        for (std::size_t i = 0; i < train_per_label; ++i) ds.train.push_back({text_for(l, i), name});
        for (std::size_t i = 0; i < test_per_label; ++i)
            ds.test.push_back({text_for(l, i + 1), name});
        ds.label_set.push_back(name);
    }
    return ds;
}

inline void write_csv(const std::filesystem::path& p, const std::vector<std::string>& rows) {
    std::ofstream out(p);
    for (const auto& r : rows) out << r << "\n";
}

}  // namespace testutil
