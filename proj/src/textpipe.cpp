#include "plgt/textpipe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

const char* kSpecialNames[] = {"<pad>", "<start>", "<end>", "<unk>"};

bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v';
}

// Splits a normalized line into pretokens; words after the first keep their
// leading space so decode is plain concatenation.
std::vector<std::string> pretokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ') {
            if (!cur.empty()) words.push_back(cur);
            cur = " ";
        } else {
            cur += c;
        }
    }
    if (!cur.empty() && cur != " ") words.push_back(cur);
    return words;
}

bool valid_utf8(const std::string& s) {
    size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        size_t len;
        if (c < 0x80) {
            len = 1;
        } else if ((c >> 5) == 0x6) {
            len = 2;
        } else if ((c >> 4) == 0xe) {
            len = 3;
        } else if ((c >> 3) == 0x1e) {
            len = 4;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (size_t j = 1; j < len; ++j) {
            if ((static_cast<unsigned char>(s[i + j]) >> 6) != 0x2) return false;
        }
        i += len;
    }
    return true;
}

std::string escape_token(const std::string& raw) {
    bool needs_escape = !valid_utf8(raw);
    for (unsigned char c : raw) {
        if (c < 0x21 || c == 0x7f || c == '\\') needs_escape = true;
    }
    if (!needs_escape) return raw;
    std::string out;
    for (unsigned char c : raw) {
        if (c == '\\') {
            out += "\\\\";
        } else if (c < 0x21 || c == 0x7f || c >= 0x80) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\x%02x", c);
            out += buf;
        } else {
            out += static_cast<char>(c);
        }
    }
    return out;
}

std::string unescape_token(const std::string& esc) {
    std::string out;
    size_t i = 0;
    while (i < esc.size()) {
        if (esc[i] == '\\' && i + 1 < esc.size()) {
            if (esc[i + 1] == '\\') {
                out += '\\';
                i += 2;
                continue;
            }
            if (esc[i + 1] == 'x' && i + 3 < esc.size()) {
                const std::string hex = esc.substr(i + 2, 2);
                out += static_cast<char>(std::stoi(hex, nullptr, 16));
                i += 4;
                continue;
            }
        }
        out += esc[i++];
    }
    return out;
}

}  // namespace

std::string normalize_text(const std::string& text, bool lowercase) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    bool started = false;
    for (char raw : text) {
        const unsigned char c = static_cast<unsigned char>(raw);
        if (c == 0) continue;
        if (is_space_byte(c)) {
            pending_space = started;
            continue;
        }
        if (pending_space) {
            out += ' ';
            pending_space = false;
        }
        started = true;
        out += lowercase ? static_cast<char>(std::tolower(c)) : raw;
    }
    return out;
}

Vocabulary Vocabulary::train(const std::vector<std::string>& lines, int cap, int min_freq) {
    if (cap < kNumSpecials + 1) {
        throw ConfigError("vocabulary cap " + std::to_string(cap) +
                          " is too small; specials need " + std::to_string(kNumSpecials) +
                          " slots plus at least one token");
    }
    if (min_freq < 1) min_freq = 1;

    // pretoken frequencies in first-appearance order
    std::vector<std::string> word_order;
    std::unordered_map<std::string, int64_t> word_freq;
    for (const auto& line : lines) {
        for (auto& w : pretokenize(normalize_text(line))) {
            auto [it, fresh] = word_freq.try_emplace(w, 0);
            if (fresh) word_order.push_back(w);
            ++it->second;
        }
    }

    Vocabulary v;
    for (const char* s : kSpecialNames) v.id_to_token_.emplace_back(s);

    // symbol sequences start as single bytes
    std::vector<std::vector<std::string>> symbols(word_order.size());
    std::vector<int64_t> freqs(word_order.size());
    std::unordered_map<std::string, bool> seen;
    for (size_t w = 0; w < word_order.size(); ++w) {
        freqs[w] = word_freq[word_order[w]];
        for (char c : word_order[w]) {
            std::string b(1, c);
            symbols[w].push_back(b);
            if (!seen.count(b) && static_cast<int>(v.id_to_token_.size()) < cap) {
                seen[b] = true;
                v.id_to_token_.push_back(b);
            }
        }
    }

    // greedy merges; ties broken by lexicographically smallest pair
    while (static_cast<int>(v.id_to_token_.size()) < cap) {
        std::map<std::pair<std::string, std::string>, int64_t> pair_freq;
        for (size_t w = 0; w < symbols.size(); ++w) {
            const auto& syms = symbols[w];
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                pair_freq[{syms[i], syms[i + 1]}] += freqs[w];
            }
        }
        if (pair_freq.empty()) break;
        auto best = pair_freq.begin();
        for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it) {
            if (it->second > best->second) best = it;
        }
        if (best->second < min_freq) break;

        const std::string left = best->first.first;
        const std::string right = best->first.second;
        const std::string merged = left + right;
        for (auto& syms : symbols) {
            std::vector<std::string> next;
            next.reserve(syms.size());
            size_t i = 0;
            while (i < syms.size()) {
                if (i + 1 < syms.size() && syms[i] == left && syms[i + 1] == right) {
                    next.push_back(merged);
                    i += 2;
                } else {
                    next.push_back(syms[i]);
                    ++i;
                }
            }
            syms = std::move(next);
        }
        if (!seen.count(merged)) {
            seen[merged] = true;
            v.id_to_token_.push_back(merged);
        }
    }

    v.index_tokens();
    return v;
}

void Vocabulary::index_tokens() {
    piece_ids_.clear();
    max_piece_len_ = 0;
    for (size_t id = kNumSpecials; id < id_to_token_.size(); ++id) {
        piece_ids_[id_to_token_[id]] = static_cast<int>(id);
        max_piece_len_ = std::max(max_piece_len_, id_to_token_[id].size());
    }
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
    std::vector<int> ids;
    const std::string norm = normalize_text(text);
    for (const auto& word : pretokenize(norm)) {
        size_t pos = 0;
        while (pos < word.size()) {
            const size_t longest = std::min(max_piece_len_, word.size() - pos);
            int id = kUnk;
            size_t len = 1;
            for (size_t l = longest; l >= 1; --l) {
                auto it = piece_ids_.find(word.substr(pos, l));
                if (it != piece_ids_.end()) {
                    id = it->second;
                    len = l;
                    break;
                }
            }
            ids.push_back(id);
            pos += len;
        }
    }
    return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= size()) {
            throw DataError("token id " + std::to_string(id) + " out of vocabulary range [0," +
                            std::to_string(size()) + ")");
        }
        if (id < kNumSpecials) continue;
        out += id_to_token_[static_cast<size_t>(id)];
    }
    // a leading word keeps no space, later words carry one; strip any lead
    if (!out.empty() && out.front() == ' ') out.erase(out.begin());
    return out;
}

const std::string& Vocabulary::token(int id) const {
    if (id < 0 || id >= size()) {
        throw DataError("token id " + std::to_string(id) + " out of vocabulary range");
    }
    return id_to_token_[static_cast<size_t>(id)];
}

std::string Vocabulary::display_token(int id) const {
    if (id >= 0 && id < kNumSpecials) return kSpecialNames[id];
    return escape_token(token(id));
}

std::vector<std::string> Vocabulary::display_tokens(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(display_token(id));
    return out;
}

std::string Vocabulary::serialize() const {
    std::string out;
    for (size_t id = 0; id < id_to_token_.size(); ++id) {
        if (id < kNumSpecials) {
            out += kSpecialNames[id];
        } else {
            out += escape_token(id_to_token_[id]);
        }
        out += '\n';
    }
    return out;
}

Vocabulary Vocabulary::deserialize(const std::string& blob) {
    Vocabulary v;
    std::istringstream in(blob);
    std::string line;
    while (std::getline(in, line)) {
        if (v.id_to_token_.size() < kNumSpecials) {
            v.id_to_token_.emplace_back(line);
        } else {
            v.id_to_token_.push_back(unescape_token(line));
        }
    }
    if (v.id_to_token_.size() < kNumSpecials) {
        throw DataError("vocabulary is missing special tokens");
    }
    v.index_tokens();
    return v;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open vocabulary file for writing: " + path);
    out << serialize();
    if (!out) throw IoError("failed writing vocabulary file: " + path);
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
}

ParallelCorpus corpus_from_lines(const std::vector<std::string>& lines, bool lowercase) {
    ParallelCorpus corpus;
    int64_t line_no = 0;
    for (const auto& raw : lines) {
        ++line_no;
        if (raw.empty() || raw[0] == '#') continue;
        const auto tab = raw.find('\t');
        if (tab == std::string::npos) {
            // skip whitespace-only lines, reject malformed content
            if (normalize_text(raw).empty()) continue;
            throw DataError("corpus line " + std::to_string(line_no) +
                            " has no tab separator");
        }
        std::string src = normalize_text(raw.substr(0, tab), lowercase);
        std::string tgt = normalize_text(raw.substr(tab + 1), lowercase);
        if (src.empty() || tgt.empty()) continue;
        corpus.pairs.emplace_back(std::move(src), std::move(tgt));
    }
    return corpus;
}

ParallelCorpus load_corpus(const std::string& path, bool lowercase) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return corpus_from_lines(lines, lowercase);
}

std::vector<Batch> make_batches(const ParallelCorpus& corpus, const Vocabulary& vocab_src,
                                const Vocabulary& vocab_tgt, int batch_size, int max_len,
                                Rng rng, int* dropped) {
    if (corpus.pairs.empty()) throw DataError("empty corpus");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");

    std::vector<std::pair<std::vector<int>, std::vector<int>>> encoded;
    int drop_count = 0;
    for (const auto& [src, tgt] : corpus.pairs) {
        auto s = vocab_src.encode(src);
        auto t = vocab_tgt.encode(tgt);
        // target grows by one for the START / END extension
        if (static_cast<int>(s.size()) > max_len || static_cast<int>(t.size()) + 1 > max_len ||
            s.empty() || t.empty()) {
            ++drop_count;
            continue;
        }
        encoded.emplace_back(std::move(s), std::move(t));
    }
    if (dropped != nullptr) *dropped = drop_count;
    if (encoded.empty()) {
        throw DataError("all " + std::to_string(corpus.pairs.size()) +
                        " corpus pairs exceed max_len " + std::to_string(max_len));
    }

    // Fisher-Yates with the epoch rng
    std::vector<size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    for (size_t i = order.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng.next_u64() % i);
        std::swap(order[i - 1], order[j]);
    }

    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
        const int64_t b = static_cast<int64_t>(end - start);
        int64_t s_max = 1, t_max = 1;
        for (size_t i = start; i < end; ++i) {
            const auto& [s, t] = encoded[order[i]];
            s_max = std::max<int64_t>(s_max, static_cast<int64_t>(s.size()));
            t_max = std::max<int64_t>(t_max, static_cast<int64_t>(t.size()) + 1);
        }

        Batch batch;
        batch.src.rows = b;
        batch.src.cols = s_max;
        batch.src.ids.assign(static_cast<size_t>(b * s_max), Vocabulary::kPad);
        batch.tgt_in.rows = b;
        batch.tgt_in.cols = t_max;
        batch.tgt_in.ids.assign(static_cast<size_t>(b * t_max), Vocabulary::kPad);
        batch.tgt_out.rows = b;
        batch.tgt_out.cols = t_max;
        batch.tgt_out.ids.assign(static_cast<size_t>(b * t_max), Vocabulary::kPad);
        batch.loss_mask = Tensor::zeros({b, t_max});

        for (size_t i = start; i < end; ++i) {
            const int64_t row = static_cast<int64_t>(i - start);
            const auto& [s, t] = encoded[order[i]];
            for (size_t j = 0; j < s.size(); ++j) {
                batch.src.at_ref(row, static_cast<int64_t>(j)) = s[j];
            }
            batch.tgt_in.at_ref(row, 0) = Vocabulary::kStart;
            for (size_t j = 0; j < t.size(); ++j) {
                batch.tgt_in.at_ref(row, static_cast<int64_t>(j + 1)) = t[j];
                batch.tgt_out.at_ref(row, static_cast<int64_t>(j)) = t[j];
            }
            batch.tgt_out.at_ref(row, static_cast<int64_t>(t.size())) = Vocabulary::kEnd;
            for (size_t j = 0; j <= t.size(); ++j) {
                batch.loss_mask.at_ref({row, static_cast<int64_t>(j)}) = 1.0;
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

}  // namespace plgt
