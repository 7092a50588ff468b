#include "plgt/attention.hpp"

#include <cmath>

namespace plgt {

namespace {

// Squeeze a leading batch extent of 1 so captured records are plain 2-D.
Tensor squeeze_batch(const Tensor& t) {
    if (t.rank() == 3 && t.shape()[0] == 1) {
        return reshape(t, {t.shape()[1], t.shape()[2]});
    }
    return t;
}

}  // namespace

const char* stage_name(Stage s) {
    switch (s) {
        case Stage::SLM: return "SLM";
        case Stage::TLM: return "TLM";
        case Stage::XLM: return "XLM";
    }
    return "?";
}

Tensor dense(const Tensor& x, const DenseParams& p) {
    return matmul(x, p.weight) + p.bias;
}

Tensor density_operator(const Tensor& q) {
    return matmul(transpose_last2(q), q);
}

Tensor metric_tensor(const Tensor& d, const PlgaHeadParams& params,
                     const AttentionSettings& settings, bool training, Rng* rng) {
    Tensor x = d;
    for (const auto& unit : params.units) {
        Tensor h = x;
        for (const auto& layer : unit.dense) h = relu(dense(h, layer));
        h = dense(h, unit.proj);
        h = dropout(h, settings.dropout_res, training, rng);
        x = layer_norm(x + h, unit.ln.gain, unit.ln.bias, settings.ln_eps);
    }
    return relu(dense(x, params.wrap)) + kMetricEpsilon;
}

Tensor ec_tensor(const Tensor& a_lm, const Tensor& a, const Tensor& b_a, const Tensor& p) {
    return a * elem_pow(a_lm, p) + b_a;
}

Tensor localized_operator(const Tensor& q, const Tensor& k, const Tensor& g_lm,
                          const Tensor& mask, double leaky_slope) {
    const double d_k = static_cast<double>(q.shape().back());
    Tensor e_qk = matmul(matmul(q, g_lm), transpose_last2(k));
    Tensor e = leaky_relu(e_qk * (1.0 / std::sqrt(d_k)), leaky_slope);
    return softmax_lastdim(e + mask);
}

std::pair<Tensor, DeductiveRecord> plga_head_forward(const Tensor& q, const Tensor& k,
                                                     const Tensor& v,
                                                     const PlgaHeadParams& params,
                                                     const Tensor& mask,
                                                     const AttentionSettings& settings,
                                                     bool training, Rng* rng, bool capture) {
    Tensor d = density_operator(q);
    Tensor a_lm = metric_tensor(d, params, settings, training, rng);
    Tensor g_lm = ec_tensor(a_lm, params.a, params.b_a, params.p);
    Tensor e_lm = localized_operator(q, k, g_lm, mask, settings.leaky_slope);

    DeductiveRecord record;
    if (capture) {
        record.e_lm = squeeze_batch(e_lm);
        record.a_lm = squeeze_batch(a_lm);
        record.g_lm = squeeze_batch(g_lm);
        record.p = params.p;
        record.a = params.a;
        record.b_a = params.b_a;
    }

    Tensor v_lm = matmul(dropout(e_lm, settings.dropout_elm, training, rng), v);
    return {v_lm, record};
}

Tensor sdpa_head_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                         const Tensor& mask, double dropout_rate, bool training, Rng* rng) {
    const double d_k = static_cast<double>(q.shape().back());
    Tensor scores = matmul(q, transpose_last2(k)) * (1.0 / std::sqrt(d_k));
    Tensor weights = softmax_lastdim(scores + mask);
    return matmul(dropout(weights, dropout_rate, training, rng), v);
}

MultiHeadResult multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                           const AttentionParams& params, int64_t h, const Tensor& mask,
                           const AttentionSettings& settings, bool training, Rng* rng,
                           bool capture, Stage stage, int layer) {
    const int64_t d_lm = xq.shape().back();
    if (h <= 0 || d_lm % h != 0) {
        throw ConfigError("d_LM " + std::to_string(d_lm) + " is not divisible by h " +
                          std::to_string(h));
    }
    const bool plga = !params.heads.empty();
    if (plga && static_cast<int64_t>(params.heads.size()) != h) {
        throw ConfigError("head parameter count " + std::to_string(params.heads.size()) +
                          " does not match h " + std::to_string(h));
    }

    Tensor q = dropout(dense(xq, params.wq), settings.dropout_qk, training, rng);
    Tensor k = dropout(dense(xk, params.wk), settings.dropout_qk, training, rng);
    Tensor v = dense(xv, params.wv);

    const auto qh = split(q, -1, h);
    const auto kh = split(k, -1, h);
    const auto vh = split(v, -1, h);

    MultiHeadResult result;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(h));
    for (int64_t i = 0; i < h; ++i) {
        if (plga) {
            auto [v_lm, rec] = plga_head_forward(qh[i], kh[i], vh[i], params.heads[i], mask,
                                                 settings, training, rng, capture);
            outs.push_back(v_lm);
            if (capture) {
                rec.stage = stage;
                rec.layer = layer;
                rec.head = static_cast<int>(i);
                result.records.push_back(std::move(rec));
            }
        } else {
            outs.push_back(sdpa_head_forward(qh[i], kh[i], vh[i], mask, settings.dropout_elm,
                                             training, rng));
        }
    }
    result.out = dense(concat(outs, -1), params.wo);
    return result;
}

Masks build_masks(const IdMatrix& src_ids, const IdMatrix& tgt_ids, int pad_id) {
    const int64_t b = src_ids.rows;
    const int64_t s = src_ids.cols;
    const int64_t t = tgt_ids.cols;
    if (tgt_ids.rows != b) {
        throw ShapeError("source and target batch sizes differ: " + std::to_string(b) +
                         " vs " + std::to_string(tgt_ids.rows));
    }

    Tensor src_pad = Tensor::zeros({b, 1, s});
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < s; ++j) {
            if (src_ids.at(i, j) == pad_id) src_pad.at_ref({i, 0, j}) = kMaskValue;
        }
    }

    Tensor causal = Tensor::zeros({b, t, t});
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t r = 0; r < t; ++r) {
            for (int64_t c = 0; c < t; ++c) {
                if (c > r || tgt_ids.at(i, c) == pad_id) {
                    causal.at_ref({i, r, c}) = kMaskValue;
                }
            }
        }
    }

    return Masks{src_pad, causal, src_pad};
}

}  // namespace plgt
