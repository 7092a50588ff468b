#include "plgt/train.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "plgt/checkpoint.hpp"
#include "plgt/errors.hpp"

namespace plgt {

namespace {

double mask_total(const Tensor& mask) {
    double total = 0.0;
    for (int64_t i = 0; i < mask.size(); ++i) total += mask.data()[i];
    return total;
}

}  // namespace

Tensor masked_cross_entropy(const Tensor& logits, const IdMatrix& tgt_out,
                            const Tensor& loss_mask) {
    if (logits.rank() != 3) {
        throw ShapeError("masked_cross_entropy expects [B,T,V] logits, got " +
                         shape_str(logits.shape()));
    }
    const double total = mask_total(loss_mask);
    if (total <= 0.0) throw DataError("loss mask has no unmasked positions");
    Tensor logp = log_softmax_lastdim(logits);
    Tensor gold = one_hot(tgt_out, logits.shape()[2]);
    Tensor gold_logp = sum_axis(logp * gold, -1, false);  // [B,T]
    return sum_all(gold_logp * loss_mask) * (-1.0 / total);
}

double token_accuracy(const Tensor& logits, const IdMatrix& tgt_out,
                      const Tensor& loss_mask) {
    const int64_t b = logits.shape()[0];
    const int64_t t = logits.shape()[1];
    const int64_t v = logits.shape()[2];
    double correct = 0.0, total = 0.0;
    for (int64_t i = 0; i < b; ++i) {
        for (int64_t j = 0; j < t; ++j) {
            const double w = loss_mask.at({i, j});
            if (w == 0.0) continue;
            const double* row = logits.data() + (i * t + j) * v;
            int64_t argmax = 0;
            for (int64_t c = 1; c < v; ++c) {
                if (row[c] > row[argmax]) argmax = c;
            }
            total += w;
            if (argmax == tgt_out.at(i, j)) correct += w;
        }
    }
    if (total == 0.0) throw DataError("loss mask has no unmasked positions");
    return correct / total;
}

double lr_schedule(int64_t step, int64_t d_lm, int64_t warmup) {
    if (step < 1) throw ContractError("lr_schedule requires step >= 1");
    const double s = static_cast<double>(step);
    const double w = static_cast<double>(warmup);
    return std::pow(static_cast<double>(d_lm), -0.5) *
           std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

AdamState init_adam(const EncoderDecoderParams& params) {
    AdamState state;
    visit_params(params, [&](const std::string& name, const Tensor& p) {
        state.m.emplace_back(name, Tensor::zeros(p.shape()));
        state.v.emplace_back(name, Tensor::zeros(p.shape()));
    });
    return state;
}

void adam_update_tensor(Tensor& param, const double* grad, Tensor& m, Tensor& v, int64_t t,
                        double lr, const AdamConfig& cfg, const std::string& name) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (int64_t i = 0; i < param.size(); ++i) {
        const double g = grad != nullptr ? grad[i] : 0.0;
        if (!std::isfinite(g)) {
            throw TrainError("non-finite gradient in parameter " + name);
        }
        m.data()[i] = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
        v.data()[i] = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = m.data()[i] / bc1;
        const double vhat = v.data()[i] / bc2;
        param.data()[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void adam_step(EncoderDecoderParams& params, AdamState& state, double lr,
               const AdamConfig& cfg) {
    ++state.t;
    size_t idx = 0;
    visit_params(params, [&](const std::string& name, Tensor& p) {
        if (idx >= state.m.size() || state.m[idx].first != name) {
            throw TrainError("optimizer state does not match parameter order at " + name);
        }
        Tensor& m = state.m[idx].second;
        Tensor& v = state.v[idx].second;
        ++idx;
        adam_update_tensor(p, p.has_grad() ? p.grad().data() : nullptr, m, v, state.t, lr,
                           cfg, name);
    });
}

void zero_grads(EncoderDecoderParams& params) {
    visit_params(params, [](const std::string&, Tensor& p) { p.zero_grad(); });
}

namespace {

DenseParams dense_shapes(int64_t in, int64_t out) {
    DenseParams p;
    p.weight = Tensor::zeros({in, out});
    p.weight.set_requires_grad(true);
    p.bias = Tensor::zeros({out});
    p.bias.set_requires_grad(true);
    return p;
}

LayerNormParams ln_shapes(int64_t d) {
    LayerNormParams p;
    p.gain = Tensor::zeros({d});
    p.gain.set_requires_grad(true);
    p.bias = Tensor::zeros({d});
    p.bias.set_requires_grad(true);
    return p;
}

AttentionParams attention_shapes(const ModelConfig& cfg) {
    AttentionParams p;
    const int64_t d = cfg.d_lm;
    p.wq = dense_shapes(d, d);
    p.wk = dense_shapes(d, d);
    p.wv = dense_shapes(d, d);
    p.wo = dense_shapes(d, d);
    if (cfg.attention == AttentionKind::PLGA) {
        const int64_t dk = cfg.d_k();
        for (int h = 0; h < cfg.heads; ++h) {
            PlgaHeadParams head;
            for (int u = 0; u < cfg.res_units; ++u) {
                ResidualUnitParams unit;
                unit.dense.push_back(dense_shapes(dk, cfg.a_dff));
                for (int l = 1; l < cfg.res_dense_layers; ++l) {
                    unit.dense.push_back(dense_shapes(cfg.a_dff, cfg.a_dff));
                }
                unit.proj = dense_shapes(cfg.a_dff, dk);
                unit.ln = ln_shapes(dk);
                head.units.push_back(std::move(unit));
            }
            head.wrap = dense_shapes(dk, dk);
            head.a = Tensor::zeros({dk, dk});
            head.a.set_requires_grad(true);
            head.b_a = Tensor::zeros({dk, dk});
            head.b_a.set_requires_grad(true);
            head.p = Tensor::zeros({dk, dk});
            head.p.set_requires_grad(true);
            p.heads.push_back(std::move(head));
        }
    }
    return p;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_attention_projection(const std::string& name) {
    return ends_with(name, ".wq.weight") || ends_with(name, ".wk.weight") ||
           ends_with(name, ".wv.weight") || ends_with(name, ".wo.weight");
}

}  // namespace

EncoderDecoderParams build_param_shapes(const ModelConfig& cfg) {
    cfg.validate();
    if (cfg.vocab_src < 1 || cfg.vocab_tgt < 1) {
        throw ConfigError("vocab sizes must be set before building parameters");
    }
    EncoderDecoderParams params;
    params.src_embed = Tensor::zeros({cfg.vocab_src, cfg.d_emb});
    params.src_embed.set_requires_grad(true);
    params.tgt_embed = Tensor::zeros({cfg.vocab_tgt, cfg.d_emb});
    params.tgt_embed.set_requires_grad(true);
    for (int i = 0; i < cfg.num_layers; ++i) {
        EncoderLayerParams enc;
        enc.attn = attention_shapes(cfg);
        enc.ffn1 = dense_shapes(cfg.d_lm, cfg.dff);
        enc.ffn2 = dense_shapes(cfg.dff, cfg.d_lm);
        enc.ln_attn = ln_shapes(cfg.d_lm);
        enc.ln_ffn = ln_shapes(cfg.d_lm);
        params.encoder.push_back(std::move(enc));

        DecoderLayerParams dec;
        dec.tlm = attention_shapes(cfg);
        dec.xlm = attention_shapes(cfg);
        dec.ffn1 = dense_shapes(cfg.d_lm, cfg.dff);
        dec.ffn2 = dense_shapes(cfg.dff, cfg.d_lm);
        dec.ln_tlm = ln_shapes(cfg.d_lm);
        dec.ln_xlm = ln_shapes(cfg.d_lm);
        dec.ln_ffn = ln_shapes(cfg.d_lm);
        params.decoder.push_back(std::move(dec));
    }
    params.final_proj = dense_shapes(cfg.d_lm, cfg.vocab_tgt);
    return params;
}

EncoderDecoderParams init_parameters(const ModelConfig& cfg, const Rng& rng) {
    EncoderDecoderParams params = build_param_shapes(cfg);
    visit_params(params, [&](const std::string& name, Tensor& p) {
        Rng stream = rng.derive(name);
        if (ends_with(name, ".gain")) {
            for (int64_t i = 0; i < p.size(); ++i) p.data()[i] = 1.0;
            return;
        }
        if (ends_with(name, ".bias") || ends_with(name, ".b_a")) {
            return;  // zeros
        }
        const int64_t fan_in = p.shape()[0];
        const int64_t fan_out = p.shape().back();
        if (is_attention_projection(name) || ends_with(name, ".P")) {
            const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
            for (int64_t i = 0; i < p.size(); ++i) p.data()[i] = stream.normal() * stddev;
        } else {
            // fully-connected weights, coupling a and embeddings
            const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
            for (int64_t i = 0; i < p.size(); ++i) p.data()[i] = stream.uniform(-limit, limit);
        }
    });
    return params;
}

const char* TrainLog::csv_header() { return "epoch,train_loss,train_acc,val_loss,val_acc"; }

std::string TrainLog::to_csv(bool with_header) const {
    std::ostringstream os;
    if (with_header) os << csv_header() << '\n';
    char buf[160];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g",
                      static_cast<long long>(e.epoch), e.train_loss, e.train_acc, e.val_loss,
                      e.val_acc);
        os << buf << '\n';
    }
    return os.str();
}

TrainerState make_trainer(const RunConfig& run, Vocabulary vocab_src, Vocabulary vocab_tgt) {
    TrainerState state;
    state.run = run;
    state.run.model.vocab_src = vocab_src.size();
    state.run.model.vocab_tgt = vocab_tgt.size();
    state.vocab_src = std::move(vocab_src);
    state.vocab_tgt = std::move(vocab_tgt);
    state.params = init_parameters(state.run.model, Rng(run.seed).derive("init"));
    state.adam = init_adam(state.params);
    return state;
}

namespace {

constexpr const char* kVocabSrcMarker = "[vocab.src]\n";
constexpr const char* kVocabTgtMarker = "[vocab.tgt]\n";

std::string pack_blob(const TrainerState& state) {
    std::string blob = state.run.to_text();
    blob += kVocabSrcMarker;
    blob += state.vocab_src.serialize();
    blob += kVocabTgtMarker;
    blob += state.vocab_tgt.serialize();
    return blob;
}

uint64_t double_bits(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    return bits;
}

double bits_double(uint64_t bits) {
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace

void save_trainer(const std::string& path, const TrainerState& state) {
    CheckpointData data;
    data.config_blob = pack_blob(state);
    visit_params(state.params, [&](const std::string& name, const Tensor& p) {
        data.tensors.emplace_back("param." + name, p);
    });
    for (const auto& [name, t] : state.adam.m) data.tensors.emplace_back("adam.m." + name, t);
    for (const auto& [name, t] : state.adam.v) data.tensors.emplace_back("adam.v." + name, t);
    data.u64s.emplace_back(
        "meta", std::vector<uint64_t>{static_cast<uint64_t>(state.adam.t),
                                      static_cast<uint64_t>(state.epoch),
                                      static_cast<uint64_t>(state.global_step),
                                      double_bits(state.best_val_loss),
                                      static_cast<uint64_t>(state.best_val_loss_epoch + 1),
                                      double_bits(state.best_val_acc),
                                      state.has_best ? 1ull : 0ull});
    write_checkpoint(path, data);
}

TrainerState load_trainer(const std::string& path) {
    const CheckpointData data = read_checkpoint(path);

    const auto src_pos = data.config_blob.find(kVocabSrcMarker);
    const auto tgt_pos = data.config_blob.find(kVocabTgtMarker);
    if (src_pos == std::string::npos || tgt_pos == std::string::npos || tgt_pos < src_pos) {
        throw IoError("checkpoint config blob is missing vocabulary sections");
    }

    TrainerState state;
    state.run = RunConfig::parse_text(data.config_blob.substr(0, src_pos));
    state.vocab_src = Vocabulary::deserialize(data.config_blob.substr(
        src_pos + std::strlen(kVocabSrcMarker), tgt_pos - src_pos - std::strlen(kVocabSrcMarker)));
    state.vocab_tgt = Vocabulary::deserialize(
        data.config_blob.substr(tgt_pos + std::strlen(kVocabTgtMarker)));

    if (state.run.model.vocab_src != state.vocab_src.size() ||
        state.run.model.vocab_tgt != state.vocab_tgt.size()) {
        throw IoError("checkpoint vocabulary sizes do not match its config");
    }

    state.params = build_param_shapes(state.run.model);
    visit_params(state.params, [&](const std::string& name, Tensor& p) {
        const Tensor* stored = data.find_tensor("param." + name);
        if (stored == nullptr) throw IoError("checkpoint is missing parameter " + name);
        if (stored->shape() != p.shape()) {
            throw IoError("checkpoint shape mismatch for " + name + ": stored " +
                          shape_str(stored->shape()) + ", expected " + shape_str(p.shape()));
        }
        p.vec() = stored->vec();
    });

    state.adam = init_adam(state.params);
    for (auto& [name, t] : state.adam.m) {
        const Tensor* stored = data.find_tensor("adam.m." + name);
        if (stored == nullptr) throw IoError("checkpoint is missing optimizer state for " + name);
        if (stored->shape() != t.shape()) throw IoError("optimizer shape mismatch for " + name);
        t.vec() = stored->vec();
    }
    for (auto& [name, t] : state.adam.v) {
        const Tensor* stored = data.find_tensor("adam.v." + name);
        if (stored == nullptr) throw IoError("checkpoint is missing optimizer state for " + name);
        if (stored->shape() != t.shape()) throw IoError("optimizer shape mismatch for " + name);
        t.vec() = stored->vec();
    }

    const std::vector<uint64_t>* meta = data.find_u64("meta");
    if (meta == nullptr || meta->size() != 7) {
        throw IoError("checkpoint is missing its meta counters");
    }
    state.adam.t = static_cast<int64_t>((*meta)[0]);
    state.epoch = static_cast<int64_t>((*meta)[1]);
    state.global_step = static_cast<int64_t>((*meta)[2]);
    state.best_val_loss = bits_double((*meta)[3]);
    state.best_val_loss_epoch = static_cast<int64_t>((*meta)[4]) - 1;
    state.best_val_acc = bits_double((*meta)[5]);
    state.has_best = (*meta)[6] != 0;
    return state;
}

namespace {

EvalMetrics eval_batches(const TrainerState& state, const std::vector<Batch>& batches) {
    EvalMetrics metrics;
    double loss_weighted = 0.0, acc_weighted = 0.0;
    for (const auto& batch : batches) {
        auto fwd = model_forward(state.params, state.run.model, batch.src, batch.tgt_in,
                                 /*training=*/false, nullptr);
        const double tokens = mask_total(batch.loss_mask);
        const double loss =
            masked_cross_entropy(fwd.logits, batch.tgt_out, batch.loss_mask).item();
        const double acc = token_accuracy(fwd.logits, batch.tgt_out, batch.loss_mask);
        loss_weighted += loss * tokens;
        acc_weighted += acc * tokens;
        metrics.tokens += static_cast<int64_t>(tokens);
    }
    if (metrics.tokens > 0) {
        metrics.loss = loss_weighted / static_cast<double>(metrics.tokens);
        metrics.acc = acc_weighted / static_cast<double>(metrics.tokens);
    }
    return metrics;
}

}  // namespace

EvalMetrics evaluate_corpus(const TrainerState& state, const ParallelCorpus& corpus, Rng rng) {
    const auto batches = make_batches(corpus, state.vocab_src, state.vocab_tgt,
                                      state.run.batch_size, state.run.model.max_len, rng);
    return eval_batches(state, batches);
}

TrainResult train(TrainerState& state, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& val_corpus, const std::string& out_dir) {
    state.run.model.validate();
    const ParallelCorpus& val = val_corpus.pairs.empty() ? train_corpus : val_corpus;
    const Rng root(state.run.seed);

    TrainResult result;
    const auto save = [&](const std::string& name) {
        if (out_dir.empty()) return;
        std::filesystem::create_directories(out_dir);
        const std::string path = (std::filesystem::path(out_dir) / name).string();
        save_trainer(path, state);
        result.checkpoints_written.push_back(path);
    };

    if (state.epoch == 0) save("init.ckpt");

    for (int64_t epoch = state.epoch + 1; epoch <= state.run.epochs; ++epoch) {
        Rng shuffle_rng = root.derive("shuffle").derive(static_cast<uint64_t>(epoch));
        const auto batches =
            make_batches(train_corpus, state.vocab_src, state.vocab_tgt, state.run.batch_size,
                         state.run.model.max_len, shuffle_rng);

        double loss_weighted = 0.0, acc_weighted = 0.0;
        int64_t tokens_seen = 0;
        const Rng epoch_rng = root.derive("dropout").derive(static_cast<uint64_t>(epoch));
        for (size_t bi = 0; bi < batches.size(); ++bi) {
            const Batch& batch = batches[bi];
            ++state.global_step;
            const double lr =
                lr_schedule(state.global_step, state.run.model.d_lm, state.run.warmup);
            Rng step_rng = epoch_rng.derive(static_cast<uint64_t>(bi));

            Tape tape;
            auto fwd = model_forward(state.params, state.run.model, batch.src, batch.tgt_in,
                                     /*training=*/true, &step_rng);
            Tensor loss = masked_cross_entropy(fwd.logits, batch.tgt_out, batch.loss_mask);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw TrainError("training diverged (non-finite loss) at step " +
                                 std::to_string(state.global_step) +
                                 "; the last epoch checkpoint is retained");
            }
            const double tokens = mask_total(batch.loss_mask);
            loss_weighted += loss_value * tokens;
            acc_weighted += token_accuracy(fwd.logits, batch.tgt_out, batch.loss_mask) * tokens;
            tokens_seen += static_cast<int64_t>(tokens);

            tape.backward(loss);
            adam_step(state.params, state.adam, lr);
            zero_grads(state.params);
        }

        Rng val_rng = root.derive("val").derive(static_cast<uint64_t>(epoch));
        const EvalMetrics val_metrics = evaluate_corpus(state, val, val_rng);

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.train_loss = tokens_seen > 0 ? loss_weighted / static_cast<double>(tokens_seen) : 0;
        entry.train_acc = tokens_seen > 0 ? acc_weighted / static_cast<double>(tokens_seen) : 0;
        entry.val_loss = val_metrics.loss;
        entry.val_acc = val_metrics.acc;
        result.log.entries.push_back(entry);

        state.epoch = epoch;
        save("last.ckpt");
        if (!state.has_best || entry.val_loss < state.best_val_loss) {
            state.best_val_loss = entry.val_loss;
            state.best_val_loss_epoch = epoch;
            save("best_loss.ckpt");
        }
        if (!state.has_best || entry.val_acc > state.best_val_acc) {
            state.best_val_acc = entry.val_acc;
            save("best_acc.ckpt");
        }
        state.has_best = true;
        if (epoch == state.best_val_loss_epoch + 10) save("best_loss_plus10.ckpt");
        if (state.run.ckpt_every > 0 && epoch % state.run.ckpt_every == 0) {
            save("epoch" + std::to_string(epoch) + ".ckpt");
        }
    }
    return result;
}

}  // namespace plgt
