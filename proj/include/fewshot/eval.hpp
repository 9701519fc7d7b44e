#pragma once

#include <string>
#include <vector>

#include "fewshot/backbone.hpp"
#include "fewshot/dataset.hpp"

namespace fewshot {

// Micro accuracy under the argmax decision rule, batched internally.
// Throws ContractError on an empty pool or a label-space mismatch.
double evaluate(const EncoderBackbone& backbone, const ClassifierHead& head,
                const std::vector<LabeledUtterance>& pool,
                const std::vector<std::string>& label_set);

}  // namespace fewshot
