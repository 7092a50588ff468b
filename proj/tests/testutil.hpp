#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "plgt/attention.hpp"
#include "plgt/textpipe.hpp"
#include "plgt/rng.hpp"
#include "plgt/tensor.hpp"

namespace testutil {

inline plgt::Tensor random_tensor(plgt::Shape shape, plgt::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    std::vector<double> data(static_cast<size_t>(plgt::numel(shape)));
    for (auto& v : data) v = rng.uniform(lo, hi);
    return plgt::Tensor::from_data(std::move(shape), std::move(data));
}

inline plgt::Tensor random_leaf(plgt::Shape shape, plgt::Rng& rng, double lo = -1.0,
                                double hi = 1.0) {
    plgt::Tensor t = random_tensor(std::move(shape), rng, lo, hi);
    t.set_requires_grad(true);
    return t;
}

inline double max_abs_diff(const plgt::Tensor& a, const plgt::Tensor& b) {
    double m = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

inline double rel_err(double got, double want, double floor = 1e-8) {
    return std::fabs(got - want) / std::max({std::fabs(got), std::fabs(want), floor});
}

// Central finite difference of a scalar function of one tensor element.
// `eval` must recompute the full forward pass from current tensor contents.
inline double fd_wrt(plgt::Tensor& t, int64_t index, const std::function<double()>& eval,
                     double h = 1e-6) {
    const double saved = t.data()[index];
    t.data()[index] = saved + h;
    const double up = eval();
    t.data()[index] = saved - h;
    const double down = eval();
    t.data()[index] = saved;
    return (up - down) / (2.0 * h);
}

// Checks tape gradients of `loss_fn` against central finite differences at
// `probes` randomly chosen coordinates of each leaf. Returns the worst
// relative error seen. Central differences at h=1e-6 cannot resolve
// gradients below ~1e-9 (float64 cancellation), so the denominator is
// floored at `noise_floor`; below it the ratio degrades to a scaled
// absolute check.
inline double check_gradients(std::vector<plgt::Tensor> leaves,
                              const std::function<plgt::Tensor()>& loss_fn, plgt::Rng& rng,
                              int probes_per_leaf = 10, double h = 1e-6,
                              double noise_floor = 1e-5) {
    for (auto& l : leaves) l.zero_grad();
    {
        plgt::Tape tape;
        plgt::Tensor loss = loss_fn();
        tape.backward(loss);
    }
    const auto eval = [&]() { return loss_fn().item(); };
    double worst = 0.0;
    for (auto& leaf : leaves) {
        const int probes =
            static_cast<int>(std::min<int64_t>(probes_per_leaf, leaf.size()));
        for (int p = 0; p < probes; ++p) {
            const int64_t idx = static_cast<int64_t>(rng.next_u64() % leaf.size());
            const double fd = fd_wrt(leaf, idx, eval, h);
            const double an = leaf.has_grad() ? leaf.grad()[idx] : 0.0;
            worst = std::max(worst, rel_err(an, fd, noise_floor));
        }
    }
    return worst;
}

inline plgt::DenseParams random_dense(int64_t in, int64_t out, plgt::Rng& rng,
                                      double scale = 0.5) {
    plgt::DenseParams p;
    p.weight = random_leaf({in, out}, rng, -scale, scale);
    p.bias = random_leaf({out}, rng, -0.1, 0.1);
    return p;
}

inline plgt::LayerNormParams random_ln(int64_t d, plgt::Rng& rng) {
    plgt::LayerNormParams p;
    p.gain = random_leaf({d}, rng, 0.8, 1.2);
    p.bias = random_leaf({d}, rng, -0.1, 0.1);
    return p;
}

inline plgt::PlgaHeadParams random_head_params(int64_t dk, int64_t adff, int units,
                                               int dense_layers, plgt::Rng& rng) {
    plgt::PlgaHeadParams p;
    for (int u = 0; u < units; ++u) {
        plgt::ResidualUnitParams ru;
        ru.dense.push_back(random_dense(dk, adff, rng));
        for (int l = 1; l < dense_layers; ++l) ru.dense.push_back(random_dense(adff, adff, rng));
        ru.proj = random_dense(adff, dk, rng);
        ru.ln = random_ln(dk, rng);
        p.units.push_back(std::move(ru));
    }
    p.wrap = random_dense(dk, dk, rng);
    p.a = random_leaf({dk, dk}, rng, -0.5, 0.5);
    p.b_a = random_leaf({dk, dk}, rng, -0.1, 0.1);
    p.p = random_leaf({dk, dk}, rng, -0.4, 0.4);
    return p;
}

inline plgt::AttentionParams random_attention_params(int64_t d, int64_t h, int64_t adff,
                                                     int units, int dense_layers,
                                                     plgt::Rng& rng, bool plga = true) {
    plgt::AttentionParams p;
    p.wq = random_dense(d, d, rng);
    p.wk = random_dense(d, d, rng);
    p.wv = random_dense(d, d, rng);
    p.wo = random_dense(d, d, rng);
    if (plga) {
        for (int64_t i = 0; i < h; ++i) {
            p.heads.push_back(random_head_params(d / h, adff, units, dense_layers, rng));
        }
    }
    return p;
}

// Copy-task corpus: target equals source; words over a small letter
// alphabet so the vocabulary stays tiny.
inline plgt::ParallelCorpus copy_corpus(int n_pairs, plgt::Rng& rng, int max_words = 6) {
    plgt::ParallelCorpus corpus;
    const char alphabet[] = "abcdefgh";
    for (int i = 0; i < n_pairs; ++i) {
        const int words = 1 + static_cast<int>(rng.next_u64() % max_words);
        std::string s;
        for (int w = 0; w < words; ++w) {
            if (w) s += ' ';
            s += alphabet[rng.next_u64() % 8];
        }
        corpus.pairs.emplace_back(s, s);
    }
    return corpus;
}

// Independent triple-loop matrix product oracle.
inline std::vector<double> matmul_oracle(const std::vector<double>& a,
                                         const std::vector<double>& b, int64_t m, int64_t k,
                                         int64_t n) {
    std::vector<double> c(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (int64_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] = s;
        }
    }
    return c;
}

}  // namespace testutil
