#pragma once

#include <functional>
#include <vector>

#include "plgt/model.hpp"

namespace plgt {

// Next-token logits over the target vocabulary for a prefix of ids that
// starts with START. Lets the search run against stub models in tests.
using StepFn = std::function<std::vector<double>(const std::vector<int>& prefix)>;

// One search hypothesis: ids start with START; log_prob accumulates the
// chosen tokens' log-softmax scores; finished hypotheses never extend.
struct Hypothesis {
    std::vector<int> ids;
    double log_prob = 0.0;
    bool finished = false;
};

// GNMT-style length normalization ((5+T)/6)^alpha.
double length_penalty(int64_t length, double alpha);

// Argmax decoding; ties go to the lowest id. Returns generated tokens
// (END included when emitted, START excluded), at most max_steps of them.
std::vector<int> greedy_core(const StepFn& step, int max_steps, int start_id, int end_id);

// Standard beam expansion over `width` live hypotheses. Finished hypotheses
// collect in a pool and are ranked by log_prob / length_penalty(T, alpha);
// unfinished hypotheses are eligible only when nothing finished.
std::vector<int> beam_core(const StepFn& step, int width, double alpha, int max_steps,
                           int start_id, int end_id);

// Wraps a trained model as a StepFn over one source sentence (inference
// mode; the decoder reruns the full prefix each step).
StepFn model_step_fn(const EncoderDecoderParams& params, const ModelConfig& cfg,
                     const std::vector<int>& src_ids);

// Decoding capped at len(src) + max_extra steps.
std::vector<int> greedy_decode(const std::vector<int>& src_ids,
                               const EncoderDecoderParams& params, const ModelConfig& cfg,
                               int max_extra = 50);

std::vector<int> beam_decode(const std::vector<int>& src_ids,
                             const EncoderDecoderParams& params, const ModelConfig& cfg,
                             int width = 4, double alpha = 0.6, int max_extra = 50);

}  // namespace plgt
