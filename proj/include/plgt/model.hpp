#pragma once

#include <functional>
#include <string>
#include <vector>

#include "plgt/attention.hpp"
#include "plgt/tensor.hpp"

namespace plgt {

enum class AttentionKind { PLGA, SDPA };

const char* attention_kind_name(AttentionKind k);
AttentionKind attention_kind_from_name(const std::string& name);

struct ModelConfig {
    AttentionKind attention = AttentionKind::PLGA;
    int num_layers = 1;
    int heads = 4;
    int d_emb = 32;
    int d_lm = 32;  // equals d_emb
    int dff = 64;
    int a_dff = 16;
    int res_units = 2;
    int res_dense_layers = 2;
    int vocab_src = 0;
    int vocab_tgt = 0;
    int max_len = 128;
    double dropout_outside = 0.4;
    double dropout_res = 0.1;
    double dropout_elm = 0.1;
    double dropout_qk = 0.0;
    double leaky_slope = 0.2;
    double ln_eps = 1e-6;

    void validate() const;
    int d_k() const { return d_lm / heads; }
    AttentionSettings attention_settings() const;

    // Hyperparameter rows of the experiments table: rows 1..6 are PLGA
    // variants at d_lm=512; row 0 selects the 4-layer 8-head SDPA baseline.
    static ModelConfig table1_row(int row);
};

struct EncoderLayerParams {
    AttentionParams attn;
    DenseParams ffn1, ffn2;
    LayerNormParams ln_attn, ln_ffn;
};

struct DecoderLayerParams {
    AttentionParams tlm, xlm;
    DenseParams ffn1, ffn2;
    LayerNormParams ln_tlm, ln_xlm, ln_ffn;
};

struct EncoderDecoderParams {
    Tensor src_embed;  // [V_src, d_emb]
    Tensor tgt_embed;  // [V_tgt, d_emb]
    std::vector<EncoderLayerParams> encoder;
    std::vector<DecoderLayerParams> decoder;
    DenseParams final_proj;  // d_lm -> V_tgt
};

// Visits every learnable tensor in a fixed canonical order (used by the
// optimizer, checkpoints and parameter counting).
void visit_params(EncoderDecoderParams& params,
                  const std::function<void(const std::string&, Tensor&)>& fn);
void visit_params(const EncoderDecoderParams& params,
                  const std::function<void(const std::string&, const Tensor&)>& fn);

// Sinusoidal positional encoding table [len, d_emb]; values in [-1, 1].
Tensor positional_encoding(int64_t len, int64_t d_emb);

// gather(table, ids) * sqrt(d_emb) + PE, then outside dropout.
Tensor embed(const IdMatrix& ids, const Tensor& table, const ModelConfig& cfg, bool training,
             Rng* rng);

// dense(dff, relu) -> dense(d_lm); residual/norm handled by the caller.
Tensor ffn(const Tensor& x, const DenseParams& f1, const DenseParams& f2);

struct EncoderResult {
    Tensor v_slm;
    std::vector<DeductiveRecord> records;
};

struct DecoderResult {
    Tensor out;
    std::vector<DeductiveRecord> records;
};

struct ForwardResult {
    Tensor logits;  // [B, T, V_tgt]
    std::vector<DeductiveRecord> records;
};

EncoderResult encoder_forward(const IdMatrix& src_ids, const EncoderDecoderParams& params,
                              const ModelConfig& cfg, bool training, Rng* rng,
                              bool capture = false);

DecoderResult decoder_forward(const IdMatrix& tgt_in_ids, const Tensor& v_slm,
                              const EncoderDecoderParams& params, const ModelConfig& cfg,
                              const Tensor& causal_mask, const Tensor& xlm_mask,
                              bool training, Rng* rng, bool capture = false);

ForwardResult model_forward(const EncoderDecoderParams& params, const ModelConfig& cfg,
                            const IdMatrix& src_ids, const IdMatrix& tgt_in_ids,
                            bool training, Rng* rng, bool capture = false);

// Closed-form count of learnable scalars for a config; matches enumeration
// over the parameter records.
int64_t count_parameters(const ModelConfig& cfg);

}  // namespace plgt
