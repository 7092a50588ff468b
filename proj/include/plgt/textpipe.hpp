#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "plgt/rng.hpp"
#include "plgt/tensor.hpp"

namespace plgt {

// Canonical text normalization: strips NUL bytes, trims, and collapses
// whitespace runs to single spaces. Lowercasing (ASCII) is optional and off
// by default; input is assumed to already be in NFC form.
std::string normalize_text(const std::string& text, bool lowercase = false);

// Byte-level subword vocabulary built by greedy byte-pair merges over
// whitespace-pretokenized text. Words after the first carry their leading
// space inside the token stream, so decoding is plain concatenation and
// encode/decode round-trips normalized text exactly. Unseen bytes encode to
// UNK; everything over the training byte set is covered.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kStart = 1;
    static constexpr int kEnd = 2;
    static constexpr int kUnk = 3;
    static constexpr int kNumSpecials = 4;

    // Greedy BPE over the corpus lines; deterministic given line order.
    // cap bounds the total vocabulary size including specials; merging stops
    // when no pair occurs at least min_freq times.
    static Vocabulary train(const std::vector<std::string>& lines, int cap, int min_freq = 2);

    // Longest-match segmentation against the vocabulary. Whitespace is
    // normalized internally; case is passed through.
    std::vector<int> encode(const std::string& text) const;

    // Concatenates token bytes, skipping special ids.
    std::string decode(const std::vector<int>& ids) const;

    int size() const { return static_cast<int>(id_to_token_.size()); }
    const std::string& token(int id) const;
    // Human-readable form of one id (specials by name, bytes escaped).
    std::string display_token(int id) const;
    std::vector<std::string> display_tokens(const std::vector<int>& ids) const;

    // One token per line, line number = id, specials first. Non-printable
    // bytes are \xHH-escaped so the file stays valid UTF-8.
    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

    std::string serialize() const;
    static Vocabulary deserialize(const std::string& blob);

private:
    void index_tokens();

    std::vector<std::string> id_to_token_;           // raw bytes; [0..3] specials
    std::unordered_map<std::string, int> piece_ids_;  // pieces only, no specials
    size_t max_piece_len_ = 0;
};

struct ParallelCorpus {
    std::vector<std::pair<std::string, std::string>> pairs;  // normalized (src, tgt)
};

// Tab-separated source/target pairs, one per line; lines starting with '#'
// are ignored; pairs empty on either side after normalization are dropped.
ParallelCorpus load_corpus(const std::string& path, bool lowercase = false);
ParallelCorpus corpus_from_lines(const std::vector<std::string>& lines, bool lowercase = false);

// One teacher-forced training batch. tgt_in is the right-shifted target
// (START + tokens), tgt_out the aligned prediction targets (tokens + END);
// loss_mask zeroes PAD positions of tgt_out.
struct Batch {
    IdMatrix src;
    IdMatrix tgt_in;
    IdMatrix tgt_out;
    Tensor loss_mask;
};

// Encodes, drops pairs exceeding max_len (counting the START/END extension),
// shuffles deterministically with `rng` and packs batches padded to the
// per-batch maximum.
std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& vocab_src,
                                const Vocabulary& vocab_tgt, int batch_size, int max_len,
                                Rng rng, int* dropped = nullptr);

}  // namespace plgt
