#include "plgt/decode.hpp"

#include <algorithm>
#include <cmath>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

std::vector<double> log_softmax_row(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    const double lse = mx + std::log(denom);
    std::vector<double> out(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

}  // namespace

double length_penalty(int64_t length, double alpha) {
    return std::pow((5.0 + static_cast<double>(length)) / 6.0, alpha);
}

std::vector<int> greedy_core(const StepFn& step, int max_steps, int start_id, int end_id) {
    std::vector<int> prefix = {start_id};
    std::vector<int> generated;
    for (int s = 0; s < max_steps; ++s) {
        const std::vector<double> logits = step(prefix);
        int best = 0;
        for (size_t v = 1; v < logits.size(); ++v) {
            if (logits[v] > logits[best]) best = static_cast<int>(v);
        }
        generated.push_back(best);
        prefix.push_back(best);
        if (best == end_id) break;
    }
    return generated;
}

std::vector<int> beam_core(const StepFn& step, int width, double alpha, int max_steps,
                           int start_id, int end_id) {
    if (width < 1) throw ConfigError("beam width must be >= 1, got " + std::to_string(width));

    std::vector<Hypothesis> live = {Hypothesis{{start_id}, 0.0, false}};
    std::vector<Hypothesis> finished;

    struct Candidate {
        size_t parent;
        int token;
        double log_prob;
    };

    for (int s = 0; s < max_steps && !live.empty(); ++s) {
        std::vector<Candidate> candidates;
        candidates.reserve(live.size() * 8);
        for (size_t b = 0; b < live.size(); ++b) {
            const std::vector<double> lp = log_softmax_row(step(live[b].ids));
            for (size_t v = 0; v < lp.size(); ++v) {
                candidates.push_back(
                    Candidate{b, static_cast<int>(v), live[b].log_prob + lp[v]});
            }
        }
        const size_t keep = std::min<size_t>(static_cast<size_t>(width), candidates.size());
        std::partial_sort(candidates.begin(), candidates.begin() + static_cast<int64_t>(keep),
                          candidates.end(), [](const Candidate& a, const Candidate& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.parent != b.parent) return a.parent < b.parent;
                              return a.token < b.token;
                          });

        std::vector<Hypothesis> next;
        for (size_t c = 0; c < keep; ++c) {
            Hypothesis h = live[candidates[c].parent];
            h.ids.push_back(candidates[c].token);
            h.log_prob = candidates[c].log_prob;
            if (candidates[c].token == end_id) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);
    }

    const auto normalized = [alpha](const Hypothesis& h) {
        const int64_t generated = static_cast<int64_t>(h.ids.size()) - 1;  // minus START
        return h.log_prob / length_penalty(generated, alpha);
    };
    const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
    size_t best = 0;
    for (size_t i = 1; i < pool.size(); ++i) {
        if (normalized(pool[i]) > normalized(pool[best])) best = i;
    }
    return std::vector<int>(pool[best].ids.begin() + 1, pool[best].ids.end());
}

StepFn model_step_fn(const EncoderDecoderParams& params, const ModelConfig& cfg,
                     const std::vector<int>& src_ids) {
    IdMatrix src;
    src.rows = 1;
    src.cols = static_cast<int64_t>(src_ids.size());
    src.ids.assign(src_ids.begin(), src_ids.end());
    return [&params, cfg, src](const std::vector<int>& prefix) {
        IdMatrix tgt;
        tgt.rows = 1;
        tgt.cols = static_cast<int64_t>(prefix.size());
        tgt.ids.assign(prefix.begin(), prefix.end());
        const ForwardResult fwd = model_forward(params, cfg, src, tgt, false, nullptr);
        const int64_t t = fwd.logits.shape()[1];
        const int64_t v = fwd.logits.shape()[2];
        const double* last = fwd.logits.data() + (t - 1) * v;
        return std::vector<double>(last, last + v);
    };
}

namespace {

constexpr int kStartId = 1;
constexpr int kEndId = 2;

}  // namespace

std::vector<int> greedy_decode(const std::vector<int>& src_ids,
                               const EncoderDecoderParams& params, const ModelConfig& cfg,
                               int max_extra) {
    const int max_steps = static_cast<int>(src_ids.size()) + max_extra;
    return greedy_core(model_step_fn(params, cfg, src_ids), max_steps, kStartId, kEndId);
}

std::vector<int> beam_decode(const std::vector<int>& src_ids,
                             const EncoderDecoderParams& params, const ModelConfig& cfg,
                             int width, double alpha, int max_extra) {
    const int max_steps = static_cast<int>(src_ids.size()) + max_extra;
    return beam_core(model_step_fn(params, cfg, src_ids), width, alpha, max_steps, kStartId,
                     kEndId);
}

}  // namespace plgt
