#include "plgt/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

std::vector<std::string> ws_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::map<std::string, int64_t> ngram_counts(const std::vector<std::string>& tokens, size_t n) {
    std::map<std::string, int64_t> counts;
    if (tokens.size() < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (size_t j = 0; j < n; ++j) {
            if (j) key += '\x1f';
            key += tokens[i + j];
        }
        ++counts[key];
    }
    return counts;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
    if (hypotheses.empty()) throw DataError("corpus_bleu requires at least one hypothesis");
    if (hypotheses.size() != references.size()) {
        throw DataError("hypothesis/reference counts differ: " +
                        std::to_string(hypotheses.size()) + " vs " +
                        std::to_string(references.size()));
    }

    BleuReport report;
    std::array<int64_t, 4> matches = {0, 0, 0, 0};
    std::array<int64_t, 4> totals = {0, 0, 0, 0};

    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = ws_tokens(hypotheses[i]);
        const auto ref = ws_tokens(references[i]);
        report.hyp_length += static_cast<int64_t>(hyp.size());
        report.ref_length += static_cast<int64_t>(ref.size());
        for (size_t n = 1; n <= 4; ++n) {
            const auto hyp_counts = ngram_counts(hyp, n);
            const auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : hyp_counts) {
                totals[n - 1] += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    matches[n - 1] += std::min(count, it->second);  // clipped
                }
            }
        }
    }

    for (size_t n = 0; n < 4; ++n) {
        report.precisions[n] =
            totals[n] > 0 ? static_cast<double>(matches[n]) / static_cast<double>(totals[n])
                          : 0.0;
    }

    report.brevity_penalty =
        report.hyp_length == 0
            ? 0.0
            : std::min(1.0, std::exp(1.0 - static_cast<double>(report.ref_length) /
                                               static_cast<double>(report.hyp_length)));

    bool any_zero = false;
    double log_sum = 0.0;
    for (double p : report.precisions) {
        if (p <= 0.0) {
            any_zero = true;
        } else {
            log_sum += std::log(p);
        }
    }
    report.bleu = any_zero ? 0.0 : 100.0 * report.brevity_penalty * std::exp(log_sum / 4.0);
    return report;
}

std::string format_bleu(const BleuReport& r) {
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "BLEU %.2f (p1 %.4f p2 %.4f p3 %.4f p4 %.4f BP %.4f hyp_len %lld ref_len %lld)",
                  r.bleu, r.precisions[0], r.precisions[1], r.precisions[2], r.precisions[3],
                  r.brevity_penalty, static_cast<long long>(r.hyp_length),
                  static_cast<long long>(r.ref_length));
    return buf;
}

}  // namespace plgt
