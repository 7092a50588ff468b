#pragma once

#include <string>
#include <utility>
#include <vector>

#include "plgt/tensor.hpp"

namespace plgt {

// Additive mask value standing in for -inf; keeps softmax NaN-free while
// pushing masked scores far below any real score.
inline constexpr double kMaskValue = -1e9;

// Floor added after the ReLU wrap so the metric tensor stays strictly
// positive (required by the elementwise power law).
inline constexpr double kMetricEpsilon = 1e-9;

// y = x . W + b with W: [in, out], b: [out]; applied along the last axis.
struct DenseParams {
    Tensor weight;
    Tensor bias;
};

Tensor dense(const Tensor& x, const DenseParams& p);

struct LayerNormParams {
    Tensor gain;
    Tensor bias;
};

// One unit of the metric-tensor network: a stack of A-dff-wide ReLU layers,
// a linear projection back to d_k, dropout, residual add, layer norm.
struct ResidualUnitParams {
    std::vector<DenseParams> dense;  // [0]: d_k -> A-dff, rest: A-dff -> A-dff
    DenseParams proj;                // A-dff -> d_k
    LayerNormParams ln;              // width d_k
};

// Per-head parameters of the power law graph attention layer.
struct PlgaHeadParams {
    std::vector<ResidualUnitParams> units;
    DenseParams wrap;  // W, b_W of the positivity wrap
    Tensor a;          // d_k x d_k coupling weights
    Tensor b_a;        // d_k x d_k coupling bias
    Tensor p;          // d_k x d_k elementwise power matrix
};

// One multi-head attention block. `heads` is empty for the scaled dot-product
// baseline, which has no per-head parameters.
struct AttentionParams {
    DenseParams wq, wk, wv, wo;
    std::vector<PlgaHeadParams> heads;
};

enum class Stage { SLM, TLM, XLM };
const char* stage_name(Stage s);

// Deductive-task outputs captured from one forward pass of one head.
// e_lm/a_lm/g_lm are inferred per input instance; p/a/b_a are dataset-level
// parameters.
struct DeductiveRecord {
    Stage stage = Stage::SLM;
    int layer = 0;
    int head = 0;
    Tensor e_lm, a_lm, g_lm;
    Tensor p, a, b_a;
    std::vector<std::string> query_tokens, key_tokens;
};

struct AttentionSettings {
    double leaky_slope = 0.2;
    double dropout_res = 0.1;
    double dropout_elm = 0.1;
    double dropout_qk = 0.0;
    double ln_eps = 1e-6;
};

// D_Q = Q^T Q; symmetric positive semidefinite density operator of the
// (projected) input graph. Q: [.., S, d_k] -> [.., d_k, d_k].
Tensor density_operator(const Tensor& q);

// Runs the residual stack on the density operator and wraps the result
// through ReLU(dense(.)) + eps, so every element is >= kMetricEpsilon.
Tensor metric_tensor(const Tensor& d, const PlgaHeadParams& params,
                     const AttentionSettings& settings, bool training, Rng* rng);

// G_LM = a * A_LM^P + b_a, all elementwise.
Tensor ec_tensor(const Tensor& a_lm, const Tensor& a, const Tensor& b_a, const Tensor& p);

// E_LM = softmax(LeakyReLU(Q G_LM K^T / sqrt(d_k)) + mask); rows sum to 1.
Tensor localized_operator(const Tensor& q, const Tensor& k, const Tensor& g_lm,
                          const Tensor& mask, double leaky_slope);

// Full per-head pass: V_LM = dropout(E_LM) . V. The record snapshots E_LM
// before dropout.
std::pair<Tensor, DeductiveRecord> plga_head_forward(const Tensor& q, const Tensor& k,
                                                     const Tensor& v,
                                                     const PlgaHeadParams& params,
                                                     const Tensor& mask,
                                                     const AttentionSettings& settings,
                                                     bool training, Rng* rng,
                                                     bool capture = false);

// softmax(Q K^T / sqrt(d_k) + mask) . V, with optional attention-weight
// dropout for training.
Tensor sdpa_head_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                         const Tensor& mask, double dropout_rate = 0.0,
                         bool training = false, Rng* rng = nullptr);

struct MultiHeadResult {
    Tensor out;
    std::vector<DeductiveRecord> records;
};

// Projects q/k/v to width d_lm, splits into h heads of width d_k = d_lm / h,
// runs the per-head attention (PLGA when params.heads is non-empty, SDPA
// otherwise), concatenates and applies the output projection.
MultiHeadResult multi_head(const Tensor& xq, const Tensor& xk, const Tensor& xv,
                           const AttentionParams& params, int64_t h, const Tensor& mask,
                           const AttentionSettings& settings, bool training, Rng* rng,
                           bool capture = false, Stage stage = Stage::SLM, int layer = 0);

struct Masks {
    Tensor enc_pad;         // [B, 1, S_src]
    Tensor dec_causal_pad;  // [B, T, T]
    Tensor xlm_pad;         // [B, 1, S_src]
};

// Additive {0, kMaskValue} masks: encoder padding columns, decoder causal +
// padding, and source padding columns for the cross-attention stage.
Masks build_masks(const IdMatrix& src_ids, const IdMatrix& tgt_ids, int pad_id);

}  // namespace plgt
