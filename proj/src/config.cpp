#include "plgt/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("invalid integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("invalid number for " + key + ": '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const uint64_t r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("invalid unsigned integer for " + key + ": '" + v + "'");
    }
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "attention") model.attention = attention_kind_from_name(value);
    else if (key == "num_layers") model.num_layers = to_int(key, value);
    else if (key == "heads") model.heads = to_int(key, value);
    else if (key == "d_emb") model.d_emb = to_int(key, value);
    else if (key == "d_lm") model.d_lm = to_int(key, value);
    else if (key == "dff") model.dff = to_int(key, value);
    else if (key == "a_dff") model.a_dff = to_int(key, value);
    else if (key == "res_units") model.res_units = to_int(key, value);
    else if (key == "res_dense_layers") model.res_dense_layers = to_int(key, value);
    else if (key == "vocab_src") model.vocab_src = to_int(key, value);
    else if (key == "vocab_tgt") model.vocab_tgt = to_int(key, value);
    else if (key == "max_len") model.max_len = to_int(key, value);
    else if (key == "dropout_outside") model.dropout_outside = to_double(key, value);
    else if (key == "dropout_res") model.dropout_res = to_double(key, value);
    else if (key == "dropout_elm") model.dropout_elm = to_double(key, value);
    else if (key == "dropout_qk") model.dropout_qk = to_double(key, value);
    else if (key == "leaky_slope") model.leaky_slope = to_double(key, value);
    else if (key == "ln_eps") model.ln_eps = to_double(key, value);
    else if (key == "seed") seed = to_u64(key, value);
    else if (key == "epochs") epochs = to_int(key, value);
    else if (key == "batch_size") batch_size = to_int(key, value);
    else if (key == "warmup") warmup = to_int(key, value);
    else if (key == "ckpt_every") ckpt_every = to_int(key, value);
    else if (key == "beam") beam = to_int(key, value);
    else if (key == "alpha") alpha = to_double(key, value);
    else if (key == "max_extra") max_extra = to_int(key, value);
    else if (key == "vocab_cap") vocab_cap = to_int(key, value);
    else if (key == "vocab_min_freq") vocab_min_freq = to_int(key, value);
    else if (key == "lowercase") lowercase = to_bool(key, value);
    else if (key == "train_path") train_path = value;
    else if (key == "val_path") val_path = value;
    else if (key == "out_dir") out_dir = value;
    else throw ConfigError("unknown config key: '" + key + "'");
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    os << "attention = " << attention_kind_name(model.attention) << '\n';
    os << "num_layers = " << model.num_layers << '\n';
    os << "heads = " << model.heads << '\n';
    os << "d_emb = " << model.d_emb << '\n';
    os << "d_lm = " << model.d_lm << '\n';
    os << "dff = " << model.dff << '\n';
    os << "a_dff = " << model.a_dff << '\n';
    os << "res_units = " << model.res_units << '\n';
    os << "res_dense_layers = " << model.res_dense_layers << '\n';
    os << "vocab_src = " << model.vocab_src << '\n';
    os << "vocab_tgt = " << model.vocab_tgt << '\n';
    os << "max_len = " << model.max_len << '\n';
    os << "dropout_outside = " << fmt_double(model.dropout_outside) << '\n';
    os << "dropout_res = " << fmt_double(model.dropout_res) << '\n';
    os << "dropout_elm = " << fmt_double(model.dropout_elm) << '\n';
    os << "dropout_qk = " << fmt_double(model.dropout_qk) << '\n';
    os << "leaky_slope = " << fmt_double(model.leaky_slope) << '\n';
    os << "ln_eps = " << fmt_double(model.ln_eps) << '\n';
    os << "seed = " << seed << '\n';
    os << "epochs = " << epochs << '\n';
    os << "batch_size = " << batch_size << '\n';
    os << "warmup = " << warmup << '\n';
    os << "ckpt_every = " << ckpt_every << '\n';
    os << "beam = " << beam << '\n';
    os << "alpha = " << fmt_double(alpha) << '\n';
    os << "max_extra = " << max_extra << '\n';
    os << "vocab_cap = " << vocab_cap << '\n';
    os << "vocab_min_freq = " << vocab_min_freq << '\n';
    os << "lowercase = " << (lowercase ? "true" : "false") << '\n';
    os << "train_path = " << train_path << '\n';
    os << "val_path = " << val_path << '\n';
    os << "out_dir = " << out_dir << '\n';
    return os.str();
}

RunConfig RunConfig::parse_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': '" + line + "'");
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

RunConfig RunConfig::parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str());
}

}  // namespace plgt
