#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "plgt/bleu.hpp"
#include "plgt/decode.hpp"
#include "plgt/inspect.hpp"
#include "plgt/train.hpp"

namespace fs = std::filesystem;
using namespace plgt;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open file for writing: " + path);
    for (const auto& l : lines) out << l << '\n';
    if (!out) throw IoError("failed writing file: " + path);
}

// §5 baseline: 4 encoder-decoder layers, 8 heads, dropout 0.1; d_lm and dff
// stay as configured.
void apply_sdpa_preset(ModelConfig& m) {
    m.attention = AttentionKind::SDPA;
    m.num_layers = 4;
    m.heads = 8;
    m.a_dff = 0;
    m.res_units = 0;
    m.res_dense_layers = 0;
    m.dropout_outside = 0.1;
    m.dropout_elm = 0.1;
}

void apply_table1_row(RunConfig& run, int row) {
    const ModelConfig preset = ModelConfig::table1_row(row);
    const int vocab_src = run.model.vocab_src;
    const int vocab_tgt = run.model.vocab_tgt;
    const int max_len = run.model.max_len;
    run.model = preset;
    run.model.vocab_src = vocab_src;
    run.model.vocab_tgt = vocab_tgt;
    run.model.max_len = max_len;
    if (preset.attention == AttentionKind::PLGA) {
        run.warmup = 15000;
    } else {
        run.warmup = 4000;
    }
}

int cmd_build_vocab(const std::string& corpus_path, const std::string& side, int cap,
                    int min_freq, bool lowercase, const std::string& out_path) {
    const ParallelCorpus corpus = load_corpus(corpus_path, lowercase);
    if (corpus.pairs.empty()) throw DataError("corpus has no usable pairs: " + corpus_path);
    std::vector<std::string> lines;
    lines.reserve(corpus.pairs.size());
    for (const auto& [src, tgt] : corpus.pairs) {
        lines.push_back(side == "src" ? src : tgt);
    }
    const Vocabulary vocab = Vocabulary::train(lines, cap, min_freq);
    vocab.save(out_path);
    std::cout << "built " << side << " vocabulary: " << vocab.size() << " tokens -> "
              << out_path << '\n';
    return 0;
}

int cmd_train(RunConfig run, const std::string& resume_path) {
    if (run.out_dir.empty()) throw ConfigError("train needs an output directory (--out)");
    if (run.train_path.empty()) throw ConfigError("train needs a training corpus (--train)");

    const ParallelCorpus train_corpus = load_corpus(run.train_path, run.lowercase);
    ParallelCorpus val_corpus;
    if (!run.val_path.empty()) val_corpus = load_corpus(run.val_path, run.lowercase);

    TrainerState state;
    if (!resume_path.empty()) {
        state = load_trainer(resume_path);
        // epochs/output may be extended on resume; everything else is pinned
        state.run.epochs = run.epochs;
        state.run.out_dir = run.out_dir;
        std::cout << "resuming from " << resume_path << " at epoch " << state.epoch << '\n';
    } else {
        std::vector<std::string> src_lines, tgt_lines;
        for (const auto& [s, t] : train_corpus.pairs) {
            src_lines.push_back(s);
            tgt_lines.push_back(t);
        }
        const Vocabulary vs = Vocabulary::train(src_lines, run.vocab_cap, run.vocab_min_freq);
        const Vocabulary vt = Vocabulary::train(tgt_lines, run.vocab_cap, run.vocab_min_freq);
        state = make_trainer(run, vs, vt);
        fs::create_directories(run.out_dir);
        state.vocab_src.save((fs::path(run.out_dir) / "src.vocab").string());
        state.vocab_tgt.save((fs::path(run.out_dir) / "tgt.vocab").string());
    }

    std::cout << "model: " << attention_kind_name(state.run.model.attention)
              << ", layers " << state.run.model.num_layers << ", heads "
              << state.run.model.heads << ", d_lm " << state.run.model.d_lm << ", params "
              << count_parameters(state.run.model) << '\n';

    const TrainResult result = train(state, train_corpus, val_corpus, run.out_dir);
    for (const auto& e : result.log.entries) {
        std::printf("epoch %lld: train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f\n",
                    static_cast<long long>(e.epoch), e.train_loss, e.train_acc, e.val_loss,
                    e.val_acc);
    }

    const std::string log_path = (fs::path(run.out_dir) / "trainlog.csv").string();
    const bool append = !resume_path.empty() && fs::exists(log_path);
    std::ofstream log(log_path, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write train log: " + log_path);
    log << result.log.to_csv(/*with_header=*/!append);

    std::set<std::string> distinct(result.checkpoints_written.begin(),
                                   result.checkpoints_written.end());
    std::cout << "wrote " << distinct.size() << " checkpoint files and " << log_path << '\n';
    return 0;
}

int cmd_translate(const std::string& ckpt_path, const std::string& input_path, int beam,
                  double alpha, int max_extra, const std::string& out_path) {
    const TrainerState state = load_trainer(ckpt_path);
    const auto inputs = read_lines(input_path);
    std::vector<std::string> outputs;
    outputs.reserve(inputs.size());
    for (const auto& line : inputs) {
        const auto src = state.vocab_src.encode(line);
        if (src.empty()) {
            outputs.emplace_back();
            continue;
        }
        const auto ids =
            beam <= 1 ? greedy_decode(src, state.params, state.run.model, max_extra)
                      : beam_decode(src, state.params, state.run.model, beam, alpha, max_extra);
        outputs.push_back(state.vocab_tgt.decode(ids));
    }
    write_lines(out_path, outputs);
    std::cout << "translated " << outputs.size() << " lines -> " << out_path << '\n';
    return 0;
}

int cmd_evaluate(const std::string& hyp_path, const std::string& ref_path) {
    const auto hyp = read_lines(hyp_path);
    const auto ref = read_lines(ref_path);
    const BleuReport report = corpus_bleu(hyp, ref);
    std::cout << format_bleu(report) << '\n';
    return 0;
}

int cmd_inspect(const std::string& ckpt_path, const std::string& sentence,
                const std::string& out_dir, int max_extra, bool with_svg) {
    const TrainerState state = load_trainer(ckpt_path);
    if (state.run.model.attention != AttentionKind::PLGA) {
        throw DataError("inspect requires a PLGA checkpoint; this one is " +
                        std::string(attention_kind_name(state.run.model.attention)));
    }
    const CaptureResult cap = capture(state, sentence, max_extra);
    std::cout << "input      : " << sentence << '\n';
    std::cout << "prediction : " << cap.prediction << '\n';
    size_t files = 0;
    for (const auto& rec : cap.records) {
        files += export_record_bundle(rec, out_dir, with_svg).size();
    }
    std::cout << "wrote " << files << " files (" << cap.records.size() << " records) -> "
              << out_dir << '\n';
    return 0;
}

int cmd_compare(const std::string& ckpt_a, const std::string& ckpt_b,
                const std::string& testset_path, int beam, double alpha, int max_extra,
                std::string log_a, std::string log_b) {
    const TrainerState a = load_trainer(ckpt_a);
    const TrainerState b = load_trainer(ckpt_b);
    const ParallelCorpus testset = load_corpus(testset_path);
    if (testset.pairs.empty()) throw DataError("test set has no pairs: " + testset_path);

    const auto translate_all = [&](const TrainerState& state) {
        std::vector<std::string> outputs;
        for (const auto& [src_text, ref] : testset.pairs) {
            const auto src = state.vocab_src.encode(src_text);
            if (src.empty()) {
                outputs.emplace_back();
                continue;
            }
            const auto ids =
                beam <= 1
                    ? greedy_decode(src, state.params, state.run.model, max_extra)
                    : beam_decode(src, state.params, state.run.model, beam, alpha, max_extra);
            outputs.push_back(state.vocab_tgt.decode(ids));
        }
        return outputs;
    };

    std::vector<std::string> refs;
    for (const auto& [src_text, ref] : testset.pairs) refs.push_back(ref);

    const BleuReport report_a = corpus_bleu(translate_all(a), refs);
    const BleuReport report_b = corpus_bleu(translate_all(b), refs);

    std::cout << "A (" << attention_kind_name(a.run.model.attention) << ", " << ckpt_a
              << "): " << format_bleu(report_a) << '\n';
    std::cout << "B (" << attention_kind_name(b.run.model.attention) << ", " << ckpt_b
              << "): " << format_bleu(report_b) << '\n';

    if (log_a.empty()) log_a = (fs::path(ckpt_a).parent_path() / "trainlog.csv").string();
    if (log_b.empty()) log_b = (fs::path(ckpt_b).parent_path() / "trainlog.csv").string();
    if (fs::exists(log_a) && fs::exists(log_b)) {
        const auto la = read_lines(log_a);
        const auto lb = read_lines(log_b);
        std::cout << "\nepoch-by-epoch (A | B):\n";
        const size_t n = std::max(la.size(), lb.size());
        for (size_t i = 0; i < n; ++i) {
            std::cout << (i < la.size() ? la[i] : "-") << " | " << (i < lb.size() ? lb[i] : "-")
                      << '\n';
        }
    } else {
        std::cout << "(train logs not found next to both checkpoints; skipping loss table)\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Power law graph transformer: training, translation and inspection"};
    app.require_subcommand(1);

    // build-vocab
    auto* sc_vocab = app.add_subcommand("build-vocab", "Build a subword vocabulary");
    std::string bv_corpus, bv_side = "src", bv_out;
    int bv_cap = 200, bv_min_freq = 2;
    bool bv_lower = false;
    sc_vocab->add_option("--corpus", bv_corpus, "tab-separated parallel corpus")->required();
    sc_vocab->add_option("--side", bv_side, "src or tgt")
        ->check(CLI::IsMember({"src", "tgt"}));
    sc_vocab->add_option("--cap", bv_cap, "maximum vocabulary size");
    sc_vocab->add_option("--min-freq", bv_min_freq, "minimum pair frequency for merges");
    sc_vocab->add_flag("--lowercase", bv_lower, "lowercase the corpus first");
    sc_vocab->add_option("--out", bv_out, "output vocabulary file")->required();

    // train
    auto* sc_train = app.add_subcommand("train", "Train a model");
    std::string tr_config, tr_train, tr_val, tr_out, tr_attention, tr_resume;
    int tr_table1 = -1;
    RunConfig run;
    uint64_t tr_seed = 0;
    int tr_epochs = -1, tr_batch = -1, tr_warmup = -1, tr_ckpt_every = -1, tr_heads = -1;
    int tr_layers = -1, tr_d = -1, tr_dff = -1, tr_adff = -1, tr_units = -1, tr_cap = -1;
    int tr_max_len = -1;
    sc_train->add_option("--config", tr_config, "key = value config file");
    sc_train->add_option("--train", tr_train, "training corpus (tsv)");
    sc_train->add_option("--val", tr_val, "validation corpus (tsv)");
    sc_train->add_option("--out", tr_out, "checkpoint/output directory");
    sc_train->add_option("--attention", tr_attention, "plga or sdpa (sdpa applies the 4-layer 8-head baseline preset)")
        ->check(CLI::IsMember({"plga", "sdpa"}));
    sc_train->add_option("--table1-row", tr_table1,
                         "hyperparameter table row 1..6 (PLGA) or 0 (SDPA baseline)");
    sc_train->add_option("--resume", tr_resume, "checkpoint to resume from");
    auto* seed_opt = sc_train->add_option("--seed", tr_seed, "run seed");
    sc_train->add_option("--epochs", tr_epochs, "total epochs");
    sc_train->add_option("--batch-size", tr_batch, "batch size");
    sc_train->add_option("--warmup", tr_warmup, "schedule warmup steps");
    sc_train->add_option("--ckpt-every", tr_ckpt_every, "periodic checkpoint interval");
    sc_train->add_option("--heads", tr_heads, "attention heads");
    sc_train->add_option("--num-layers", tr_layers, "encoder/decoder layers");
    sc_train->add_option("--d-lm", tr_d, "model width (d_emb = d_lm)");
    sc_train->add_option("--dff", tr_dff, "pointwise feed-forward width");
    sc_train->add_option("--a-dff", tr_adff, "metric-network dense width");
    sc_train->add_option("--res-units", tr_units, "metric-network residual units");
    sc_train->add_option("--vocab-cap", tr_cap, "vocabulary cap");
    sc_train->add_option("--max-len", tr_max_len, "maximum sequence length");

    // translate
    auto* sc_translate = app.add_subcommand("translate", "Decode a file of sentences");
    std::string dx_ckpt, dx_input, dx_out;
    int dx_beam = 1, dx_extra = 50;
    double dx_alpha = 0.6;
    sc_translate->add_option("--ckpt", dx_ckpt, "checkpoint")->required();
    sc_translate->add_option("--input", dx_input, "input sentences, one per line")->required();
    sc_translate->add_option("--beam", dx_beam, "beam width (1 = greedy)");
    sc_translate->add_option("--alpha", dx_alpha, "length-normalization exponent");
    sc_translate->add_option("--max-extra", dx_extra, "decode steps above source length");
    sc_translate->add_option("--out", dx_out, "output file")->required();

    // evaluate
    auto* sc_eval = app.add_subcommand("evaluate", "Corpus BLEU of hypotheses vs references");
    std::string ev_hyp, ev_ref;
    sc_eval->add_option("--hyp", ev_hyp, "hypothesis file")->required();
    sc_eval->add_option("--ref", ev_ref, "reference file")->required();

    // inspect
    auto* sc_inspect = app.add_subcommand("inspect", "Export deductive-task outputs");
    std::string in_ckpt, in_sentence, in_outdir;
    int in_extra = 50;
    bool in_no_svg = false;
    sc_inspect->add_option("--ckpt", in_ckpt, "PLGA checkpoint")->required();
    sc_inspect->add_option("--sentence", in_sentence, "source sentence")->required();
    sc_inspect->add_option("--outdir", in_outdir, "output directory")->required();
    sc_inspect->add_option("--max-extra", in_extra, "decode steps above source length");
    sc_inspect->add_flag("--no-svg", in_no_svg, "write CSV only");

    // compare
    auto* sc_compare = app.add_subcommand("compare", "Compare two checkpoints on a test set");
    std::string cp_a, cp_b, cp_testset, cp_log_a, cp_log_b;
    int cp_beam = 1, cp_extra = 50;
    double cp_alpha = 0.6;
    sc_compare->add_option("--ckpt-a", cp_a, "first checkpoint")->required();
    sc_compare->add_option("--ckpt-b", cp_b, "second checkpoint")->required();
    sc_compare->add_option("--testset", cp_testset, "tab-separated test pairs")->required();
    sc_compare->add_option("--beam", cp_beam, "beam width (1 = greedy)");
    sc_compare->add_option("--alpha", cp_alpha, "length-normalization exponent");
    sc_compare->add_option("--max-extra", cp_extra, "decode steps above source length");
    sc_compare->add_option("--log-a", cp_log_a, "train log for A (default: next to ckpt)");
    sc_compare->add_option("--log-b", cp_log_b, "train log for B (default: next to ckpt)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sc_vocab->parsed()) {
            return cmd_build_vocab(bv_corpus, bv_side, bv_cap, bv_min_freq, bv_lower, bv_out);
        }
        if (sc_train->parsed()) {
            if (!tr_config.empty()) run = RunConfig::parse_file(tr_config);
            if (tr_table1 >= 0) apply_table1_row(run, tr_table1);
            if (tr_attention == "sdpa") apply_sdpa_preset(run.model);
            if (tr_attention == "plga") run.model.attention = AttentionKind::PLGA;
            if (!tr_train.empty()) run.train_path = tr_train;
            if (!tr_val.empty()) run.val_path = tr_val;
            if (!tr_out.empty()) run.out_dir = tr_out;
            if (seed_opt->count() > 0) run.seed = tr_seed;
            if (tr_epochs >= 0) run.epochs = tr_epochs;
            if (tr_batch > 0) run.batch_size = tr_batch;
            if (tr_warmup > 0) run.warmup = tr_warmup;
            if (tr_ckpt_every >= 0) run.ckpt_every = tr_ckpt_every;
            if (tr_heads > 0) run.model.heads = tr_heads;
            if (tr_layers > 0) run.model.num_layers = tr_layers;
            if (tr_d > 0) run.model.d_emb = run.model.d_lm = tr_d;
            if (tr_dff > 0) run.model.dff = tr_dff;
            if (tr_adff > 0) run.model.a_dff = tr_adff;
            if (tr_units >= 0) run.model.res_units = tr_units;
            if (tr_cap > 0) run.vocab_cap = tr_cap;
            if (tr_max_len > 0) run.model.max_len = tr_max_len;
            return cmd_train(run, tr_resume);
        }
        if (sc_translate->parsed()) {
            return cmd_translate(dx_ckpt, dx_input, dx_beam, dx_alpha, dx_extra, dx_out);
        }
        if (sc_eval->parsed()) {
            return cmd_evaluate(ev_hyp, ev_ref);
        }
        if (sc_inspect->parsed()) {
            return cmd_inspect(in_ckpt, in_sentence, in_outdir, in_extra, !in_no_svg);
        }
        if (sc_compare->parsed()) {
            return cmd_compare(cp_a, cp_b, cp_testset, cp_beam, cp_alpha, cp_extra, cp_log_a,
                               cp_log_b);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return kExitData;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << '\n';
        return kExitData;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    }
    return 0;
}
