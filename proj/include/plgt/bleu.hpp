#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace plgt {

// Corpus-level BLEU-4 with clipped n-gram counts, no smoothing and brevity
// penalty min(1, e^(1 - ref/hyp)). An order with zero total n-grams counts
// as precision zero, so the score is zero (strict).
struct BleuReport {
    double bleu = 0.0;  // [0, 100]
    std::array<double, 4> precisions = {0, 0, 0, 0};
    double brevity_penalty = 0.0;
    int64_t hyp_length = 0;
    int64_t ref_length = 0;
};

// Case-sensitive whitespace-tokenized BLEU over aligned corpora.
BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

std::string format_bleu(const BleuReport& report);

}  // namespace plgt
