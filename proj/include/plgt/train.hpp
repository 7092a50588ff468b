#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "plgt/config.hpp"
#include "plgt/model.hpp"
#include "plgt/textpipe.hpp"

namespace plgt {

// Mean of -log softmax(logits)[gold] over unmasked positions, stabilized via
// log-sum-exp. logits: [B,T,V], tgt_out: [B,T], loss_mask: [B,T].
Tensor masked_cross_entropy(const Tensor& logits, const IdMatrix& tgt_out,
                            const Tensor& loss_mask);

// Fraction of unmasked positions whose argmax (ties to the lowest id) equals
// the gold token.
double token_accuracy(const Tensor& logits, const IdMatrix& tgt_out, const Tensor& loss_mask);

// d_lm^-0.5 * min(step^-0.5, step * warmup^-1.5).
double lr_schedule(int64_t step, int64_t d_lm, int64_t warmup);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

// First/second moment estimates aligned with the canonical parameter order.
struct AdamState {
    std::vector<std::pair<std::string, Tensor>> m;
    std::vector<std::pair<std::string, Tensor>> v;
    int64_t t = 0;
};

AdamState init_adam(const EncoderDecoderParams& params);

// One bias-corrected update of a single tensor; `t` is the already
// incremented step counter. grad may be nullptr for an all-zero gradient.
void adam_update_tensor(Tensor& param, const double* grad, Tensor& m, Tensor& v, int64_t t,
                        double lr, const AdamConfig& cfg, const std::string& name);

// Bias-corrected Adam update from the gradients currently held by the
// parameters; throws TrainError naming the parameter on non-finite gradients.
void adam_step(EncoderDecoderParams& params, AdamState& state, double lr,
               const AdamConfig& cfg = {});

void zero_grads(EncoderDecoderParams& params);

// Parameter records shaped for the config, zero-filled, requires_grad set.
EncoderDecoderParams build_param_shapes(const ModelConfig& cfg);

// Glorot normal for attention projections and the power matrix, glorot
// uniform for fully-connected weights / coupling a / embeddings, zeros for
// biases and b_a, ones for layer-norm gains. Each tensor draws from its own
// name-derived stream.
EncoderDecoderParams init_parameters(const ModelConfig& cfg, const Rng& rng);

struct TrainLogEntry {
    int64_t epoch = 0;
    double train_loss = 0, train_acc = 0, val_loss = 0, val_acc = 0;
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    static const char* csv_header();  // "epoch,train_loss,train_acc,val_loss,val_acc"
    std::string to_csv(bool with_header = true) const;
};

// Everything a checkpoint captures; sufficient to resume training bit-exactly
// or to run inference standalone.
struct TrainerState {
    RunConfig run;
    Vocabulary vocab_src, vocab_tgt;
    EncoderDecoderParams params;
    AdamState adam;
    int64_t epoch = 0;        // completed epochs
    int64_t global_step = 0;  // optimizer steps taken
    double best_val_loss = 0;
    int64_t best_val_loss_epoch = -1;
    double best_val_acc = 0;
    bool has_best = false;
};

// Fresh state with initialized parameters and optimizer moments.
TrainerState make_trainer(const RunConfig& run, Vocabulary vocab_src, Vocabulary vocab_tgt);

void save_trainer(const std::string& path, const TrainerState& state);
TrainerState load_trainer(const std::string& path);

struct EvalMetrics {
    double loss = 0;
    double acc = 0;
    int64_t tokens = 0;
};

// Inference-mode loss/accuracy over a corpus.
EvalMetrics evaluate_corpus(const TrainerState& state, const ParallelCorpus& corpus, Rng rng);

struct TrainResult {
    TrainLog log;  // entries for the epochs run by this call
    std::vector<std::string> checkpoints_written;
};

// Runs epochs state.epoch+1 .. run.epochs. Per epoch: deterministic shuffle,
// forward/backward/adam with the scheduled learning rate, metric logging and
// the checkpoint policy (init, last, best-val-loss, best-val-loss+10,
// best-val-acc, every ckpt_every epochs) into out_dir when non-empty.
// Divergence (non-finite loss) aborts with TrainError; the last epoch
// checkpoint stays on disk.
TrainResult train(TrainerState& state, const ParallelCorpus& train_corpus,
                  const ParallelCorpus& val_corpus, const std::string& out_dir);

}  // namespace plgt
