#include "plgt/model.hpp"

#include <cmath>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

constexpr int kPadId = 0;

template <class Params, class Fn>
void visit_dense(const std::string& prefix, Params& p, Fn&& fn) {
    fn(prefix + ".weight", p.weight);
    fn(prefix + ".bias", p.bias);
}

template <class Params, class Fn>
void visit_ln(const std::string& prefix, Params& p, Fn&& fn) {
    fn(prefix + ".gain", p.gain);
    fn(prefix + ".bias", p.bias);
}

template <class Params, class Fn>
void visit_attention(const std::string& prefix, Params& p, Fn&& fn) {
    visit_dense(prefix + ".wq", p.wq, fn);
    visit_dense(prefix + ".wk", p.wk, fn);
    visit_dense(prefix + ".wv", p.wv, fn);
    visit_dense(prefix + ".wo", p.wo, fn);
    for (size_t h = 0; h < p.heads.size(); ++h) {
        const std::string hp = prefix + ".h" + std::to_string(h);
        auto& head = p.heads[h];
        for (size_t u = 0; u < head.units.size(); ++u) {
            const std::string up = hp + ".res" + std::to_string(u);
            auto& unit = head.units[u];
            for (size_t l = 0; l < unit.dense.size(); ++l) {
                visit_dense(up + ".dense" + std::to_string(l), unit.dense[l], fn);
            }
            visit_dense(up + ".proj", unit.proj, fn);
            visit_ln(up + ".ln", unit.ln, fn);
        }
        visit_dense(hp + ".wrap", head.wrap, fn);
        fn(hp + ".a", head.a);
        fn(hp + ".b_a", head.b_a);
        fn(hp + ".P", head.p);
    }
}

template <class Params, class Fn>
void visit_all(Params& params, Fn&& fn) {
    fn("src_embed", params.src_embed);
    fn("tgt_embed", params.tgt_embed);
    for (size_t i = 0; i < params.encoder.size(); ++i) {
        const std::string lp = "enc" + std::to_string(i);
        auto& layer = params.encoder[i];
        visit_attention(lp + ".attn", layer.attn, fn);
        visit_dense(lp + ".ffn1", layer.ffn1, fn);
        visit_dense(lp + ".ffn2", layer.ffn2, fn);
        visit_ln(lp + ".ln_attn", layer.ln_attn, fn);
        visit_ln(lp + ".ln_ffn", layer.ln_ffn, fn);
    }
    for (size_t i = 0; i < params.decoder.size(); ++i) {
        const std::string lp = "dec" + std::to_string(i);
        auto& layer = params.decoder[i];
        visit_attention(lp + ".tlm", layer.tlm, fn);
        visit_attention(lp + ".xlm", layer.xlm, fn);
        visit_dense(lp + ".ffn1", layer.ffn1, fn);
        visit_dense(lp + ".ffn2", layer.ffn2, fn);
        visit_ln(lp + ".ln_tlm", layer.ln_tlm, fn);
        visit_ln(lp + ".ln_xlm", layer.ln_xlm, fn);
        visit_ln(lp + ".ln_ffn", layer.ln_ffn, fn);
    }
    visit_dense("final_proj", params.final_proj, fn);
}

}  // namespace

const char* attention_kind_name(AttentionKind k) {
    return k == AttentionKind::PLGA ? "plga" : "sdpa";
}

AttentionKind attention_kind_from_name(const std::string& name) {
    if (name == "plga" || name == "PLGA") return AttentionKind::PLGA;
    if (name == "sdpa" || name == "SDPA") return AttentionKind::SDPA;
    throw ConfigError("unknown attention kind: " + name);
}

void ModelConfig::validate() const {
    if (d_lm != d_emb) {
        throw ConfigError("d_lm (" + std::to_string(d_lm) + ") must equal d_emb (" +
                          std::to_string(d_emb) + ")");
    }
    if (d_emb % 2 != 0) throw ConfigError("d_emb must be even for sinusoidal encoding");
    if (heads < 1 || d_lm % heads != 0) {
        throw ConfigError("d_lm " + std::to_string(d_lm) + " is not divisible by heads " +
                          std::to_string(heads));
    }
    if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
    if (dff < 1) throw ConfigError("dff must be >= 1");
    if (attention == AttentionKind::PLGA) {
        if (a_dff < 1) throw ConfigError("a_dff must be >= 1 for PLGA");
        if (res_units < 0) throw ConfigError("res_units must be >= 0");
        if (res_dense_layers < 1) throw ConfigError("res_dense_layers must be >= 1");
    }
    for (double r : {dropout_outside, dropout_res, dropout_elm, dropout_qk}) {
        if (r < 0.0 || r >= 1.0) {
            throw ConfigError("dropout rate " + std::to_string(r) + " outside [0,1)");
        }
    }
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

AttentionSettings ModelConfig::attention_settings() const {
    AttentionSettings s;
    s.leaky_slope = leaky_slope;
    s.dropout_res = dropout_res;
    s.dropout_elm = dropout_elm;
    s.dropout_qk = dropout_qk;
    s.ln_eps = ln_eps;
    return s;
}

ModelConfig ModelConfig::table1_row(int row) {
    ModelConfig cfg;
    cfg.d_emb = cfg.d_lm = 512;
    cfg.dff = 2048;
    cfg.res_dense_layers = 2;
    cfg.num_layers = 1;
    switch (row) {
        case 0:  // SDPA baseline: 4 encoder-decoder layers, 8 heads, dropout 0.1
            cfg.attention = AttentionKind::SDPA;
            cfg.num_layers = 4;
            cfg.heads = 8;
            cfg.a_dff = 0;
            cfg.res_units = 0;
            cfg.res_dense_layers = 0;
            cfg.dropout_outside = 0.1;
            break;
        case 1: cfg.heads = 16; cfg.a_dff = 128; cfg.res_units = 10; break;
        case 2: cfg.heads = 8; cfg.a_dff = 256; cfg.res_units = 9; break;
        case 3: cfg.heads = 8; cfg.a_dff = 256; cfg.res_units = 8; break;
        case 4: cfg.heads = 4; cfg.a_dff = 512; cfg.res_units = 5; break;
        case 5: cfg.heads = 2; cfg.a_dff = 1024; cfg.res_units = 2; break;
        case 6: cfg.heads = 1; cfg.a_dff = 2048; cfg.res_units = 1; break;
        default:
            throw ConfigError("table1 row must be 1..6 (PLGA) or 0 (SDPA), got " +
                              std::to_string(row));
    }
    return cfg;
}

void visit_params(EncoderDecoderParams& params,
                  const std::function<void(const std::string&, Tensor&)>& fn) {
    visit_all(params, fn);
}

void visit_params(const EncoderDecoderParams& params,
                  const std::function<void(const std::string&, const Tensor&)>& fn) {
    visit_all(params, fn);
}

Tensor positional_encoding(int64_t len, int64_t d_emb) {
    if (d_emb % 2 != 0) {
        throw ConfigError("positional encoding requires even d_emb, got " +
                          std::to_string(d_emb));
    }
    Tensor pe = Tensor::zeros({len, d_emb});
    for (int64_t pos = 0; pos < len; ++pos) {
        for (int64_t i = 0; i < d_emb / 2; ++i) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_emb));
            pe.at_ref({pos, 2 * i}) = std::sin(angle);
            pe.at_ref({pos, 2 * i + 1}) = std::cos(angle);
        }
    }
    return pe;
}

Tensor embed(const IdMatrix& ids, const Tensor& table, const ModelConfig& cfg, bool training,
             Rng* rng) {
    Tensor x = embedding(table, ids) * std::sqrt(static_cast<double>(cfg.d_emb));
    Tensor pe = positional_encoding(ids.cols, cfg.d_emb);
    return dropout(x + pe, cfg.dropout_outside, training, rng);
}

Tensor ffn(const Tensor& x, const DenseParams& f1, const DenseParams& f2) {
    return dense(relu(dense(x, f1)), f2);
}

namespace {

Tensor sublayer(const Tensor& residual, const Tensor& out, const LayerNormParams& ln,
                const ModelConfig& cfg, bool training, Rng* rng) {
    return layer_norm(residual + dropout(out, cfg.dropout_outside, training, rng), ln.gain,
                      ln.bias, cfg.ln_eps);
}

Tensor pad_key_mask(const IdMatrix& ids) {
    Tensor mask = Tensor::zeros({ids.rows, 1, ids.cols});
    for (int64_t i = 0; i < ids.rows; ++i) {
        for (int64_t j = 0; j < ids.cols; ++j) {
            if (ids.at(i, j) == kPadId) mask.at_ref({i, 0, j}) = kMaskValue;
        }
    }
    return mask;
}

}  // namespace

EncoderResult encoder_forward(const IdMatrix& src_ids, const EncoderDecoderParams& params,
                              const ModelConfig& cfg, bool training, Rng* rng, bool capture) {
    const AttentionSettings settings = cfg.attention_settings();
    const Tensor mask = pad_key_mask(src_ids);

    EncoderResult result;
    Tensor x = embed(src_ids, params.src_embed, cfg, training, rng);
    for (size_t li = 0; li < params.encoder.size(); ++li) {
        const auto& layer = params.encoder[li];
        auto mh = multi_head(x, x, x, layer.attn, cfg.heads, mask, settings, training, rng,
                             capture, Stage::SLM, static_cast<int>(li));
        x = sublayer(x, mh.out, layer.ln_attn, cfg, training, rng);
        x = sublayer(x, ffn(x, layer.ffn1, layer.ffn2), layer.ln_ffn, cfg, training, rng);
        for (auto& rec : mh.records) result.records.push_back(std::move(rec));
    }
    result.v_slm = x;
    return result;
}

DecoderResult decoder_forward(const IdMatrix& tgt_in_ids, const Tensor& v_slm,
                              const EncoderDecoderParams& params, const ModelConfig& cfg,
                              const Tensor& causal_mask, const Tensor& xlm_mask,
                              bool training, Rng* rng, bool capture) {
    const AttentionSettings settings = cfg.attention_settings();

    DecoderResult result;
    Tensor y = embed(tgt_in_ids, params.tgt_embed, cfg, training, rng);
    for (size_t li = 0; li < params.decoder.size(); ++li) {
        const auto& layer = params.decoder[li];
        auto tlm = multi_head(y, y, y, layer.tlm, cfg.heads, causal_mask, settings, training,
                              rng, capture, Stage::TLM, static_cast<int>(li));
        y = sublayer(y, tlm.out, layer.ln_tlm, cfg, training, rng);
        auto xlm = multi_head(y, v_slm, v_slm, layer.xlm, cfg.heads, xlm_mask, settings,
                              training, rng, capture, Stage::XLM, static_cast<int>(li));
        y = sublayer(y, xlm.out, layer.ln_xlm, cfg, training, rng);
        y = sublayer(y, ffn(y, layer.ffn1, layer.ffn2), layer.ln_ffn, cfg, training, rng);
        for (auto& rec : tlm.records) result.records.push_back(std::move(rec));
        for (auto& rec : xlm.records) result.records.push_back(std::move(rec));
    }
    result.out = y;
    return result;
}

ForwardResult model_forward(const EncoderDecoderParams& params, const ModelConfig& cfg,
                            const IdMatrix& src_ids, const IdMatrix& tgt_in_ids,
                            bool training, Rng* rng, bool capture) {
    const Masks masks = build_masks(src_ids, tgt_in_ids, kPadId);

    ForwardResult result;
    EncoderResult enc = encoder_forward(src_ids, params, cfg, training, rng, capture);
    DecoderResult dec = decoder_forward(tgt_in_ids, enc.v_slm, params, cfg,
                                        masks.dec_causal_pad, masks.xlm_pad, training, rng,
                                        capture);
    result.logits = dense(dec.out, params.final_proj);
    result.records = std::move(enc.records);
    for (auto& rec : dec.records) result.records.push_back(std::move(rec));
    return result;
}

int64_t count_parameters(const ModelConfig& cfg) {
    cfg.validate();
    const int64_t d = cfg.d_lm;
    const int64_t h = cfg.heads;
    const int64_t dk = d / h;
    const int64_t adff = cfg.a_dff;
    const int64_t dff = cfg.dff;

    const auto dense_count = [](int64_t in, int64_t out) { return in * out + out; };
    const auto ln_count = [](int64_t width) { return 2 * width; };

    int64_t attn;
    if (cfg.attention == AttentionKind::PLGA) {
        int64_t unit = dense_count(dk, adff) + (cfg.res_dense_layers - 1) * dense_count(adff, adff) +
                       dense_count(adff, dk) + ln_count(dk);
        int64_t head = cfg.res_units * unit + dense_count(dk, dk) + 3 * dk * dk;
        attn = 4 * dense_count(d, d) + h * head;
    } else {
        attn = 4 * dense_count(d, d);
    }

    const int64_t ffn_count = dense_count(d, dff) + dense_count(dff, d);
    const int64_t enc_layer = attn + ffn_count + 2 * ln_count(d);
    const int64_t dec_layer = 2 * attn + ffn_count + 3 * ln_count(d);

    int64_t total = static_cast<int64_t>(cfg.vocab_src) * cfg.d_emb +
                    static_cast<int64_t>(cfg.vocab_tgt) * cfg.d_emb;
    total += cfg.num_layers * (enc_layer + dec_layer);
    total += dense_count(d, cfg.vocab_tgt);
    return total;
}

}  // namespace plgt
