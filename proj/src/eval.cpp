#include "fewshot/eval.hpp"

#include <algorithm>

namespace fewshot {

double evaluate(const EncoderBackbone& backbone, const ClassifierHead& head,
                const std::vector<LabeledUtterance>& pool,
                const std::vector<std::string>& label_set) {
    if (pool.empty()) throw ContractError("evaluate: empty eval pool");
    if (head.num_labels != label_set.size())
        throw ContractError("evaluate: head label count does not match label set");

    std::size_t correct = 0;
    const std::size_t chunk = 64;
    for (std::size_t start = 0; start < pool.size(); start += chunk) {
        const std::size_t end = std::min(pool.size(), start + chunk);
        std::vector<std::string> texts;
        for (std::size_t i = start; i < end; ++i) texts.push_back(pool[i].text);
        Matrix logits = head.logits(backbone.encode(backbone.tokenize(texts)));
        for (std::size_t r = 0; r < logits.rows; ++r) {
            std::size_t best = 0;
            for (std::size_t l = 1; l < logits.cols; ++l)
                if (logits.at(r, l) > logits.at(r, best)) best = l;
            auto it = std::lower_bound(label_set.begin(), label_set.end(), pool[start + r].label);
            if (it == label_set.end() || *it != pool[start + r].label)
                throw ContractError("evaluate: label outside label set: " + pool[start + r].label);
            if (best == static_cast<std::size_t>(it - label_set.begin())) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(pool.size());
}

}  // namespace fewshot
