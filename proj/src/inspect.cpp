#include "plgt/inspect.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "plgt/decode.hpp"
#include "plgt/errors.hpp"

namespace plgt {

namespace {

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        out += c;
    }
    out += '"';
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string join_labels(const std::vector<std::string>& labels) {
    std::string out;
    for (size_t i = 0; i < labels.size(); ++i) {
        if (i) out += ' ';
        out += labels[i];
    }
    return out;
}

std::vector<std::string> split_labels(const std::string& joined) {
    std::vector<std::string> out;
    std::istringstream in(joined);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

CaptureResult capture(const TrainerState& state, const std::string& src_sentence,
                      int max_extra) {
    CaptureResult result;
    result.src_ids = state.vocab_src.encode(src_sentence);
    if (result.src_ids.empty()) throw DataError("source sentence encodes to no tokens");

    result.pred_ids =
        greedy_decode(result.src_ids, state.params, state.run.model, max_extra);
    result.prediction = state.vocab_tgt.decode(result.pred_ids);

    // teacher-forced pass over the prediction, inference mode, with capture
    std::vector<int> tgt_in = {Vocabulary::kStart};
    for (int id : result.pred_ids) {
        if (id != Vocabulary::kEnd) tgt_in.push_back(id);
    }
    IdMatrix src = IdMatrix::from_rows({result.src_ids});
    IdMatrix tgt = IdMatrix::from_rows({tgt_in});
    ForwardResult fwd =
        model_forward(state.params, state.run.model, src, tgt, false, nullptr, true);

    const auto src_labels = state.vocab_src.display_tokens(result.src_ids);
    const auto tgt_labels = state.vocab_tgt.display_tokens(tgt_in);
    for (auto& rec : fwd.records) {
        switch (rec.stage) {
            case Stage::SLM:
                rec.query_tokens = src_labels;
                rec.key_tokens = src_labels;
                break;
            case Stage::TLM:
                rec.query_tokens = tgt_labels;
                rec.key_tokens = tgt_labels;
                break;
            case Stage::XLM:
                rec.query_tokens = tgt_labels;
                rec.key_tokens = src_labels;
                break;
        }
    }
    result.records = std::move(fwd.records);
    return result;
}

const std::vector<std::string>& record_tensor_keys() {
    static const std::vector<std::string> keys = {"E_LM", "A_LM", "G_LM", "P", "a", "b_a"};
    return keys;
}

const Tensor& record_tensor(const DeductiveRecord& rec, const std::string& key) {
    if (key == "E_LM") return rec.e_lm;
    if (key == "A_LM") return rec.a_lm;
    if (key == "G_LM") return rec.g_lm;
    if (key == "P") return rec.p;
    if (key == "a") return rec.a;
    if (key == "b_a") return rec.b_a;
    throw DataError("unknown record tensor key: " + key);
}

bool is_global_tensor(const std::string& key) {
    return key == "P" || key == "a" || key == "b_a";
}

void export_csv(const DeductiveRecord& rec, const std::string& tensor_key,
                const std::string& path) {
    const Tensor& t = record_tensor(rec, tensor_key);
    if (!t.defined() || t.rank() != 2) {
        throw DataError("record tensor " + tensor_key + " is not a 2-D capture");
    }
    const int64_t rows = t.shape()[0];
    const int64_t cols = t.shape()[1];

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open CSV for writing: " + path);

    const bool labeled = tensor_key == "E_LM";
    out << stage_name(rec.stage) << ',' << rec.head << ',' << tensor_key << ',' << rows << ','
        << cols << ',' << (is_global_tensor(tensor_key) ? "global" : "instance") << ','
        << csv_quote(labeled ? join_labels(rec.query_tokens) : "") << ','
        << csv_quote(labeled ? join_labels(rec.key_tokens) : "") << '\n';

    // %.17g round-trips doubles exactly; the power-law path can push G_LM
    // past 1e7 where fewer digits would break the 1e-9 export bound
    char buf[40];
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            std::snprintf(buf, sizeof(buf), "%.17g", t.at({r, c}));
            out << buf << (c + 1 < cols ? "," : "");
        }
        out << '\n';
    }
    if (!out) throw IoError("failed writing CSV: " + path);
}

CsvTensor parse_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty CSV: " + path);
    const auto header = split_csv_line(line);
    if (header.size() != 8) throw IoError("malformed CSV header in " + path);

    CsvTensor result;
    result.stage = header[0];
    result.head = std::stoi(header[1]);
    result.tensor = header[2];
    const int64_t rows = std::stoll(header[3]);
    const int64_t cols = std::stoll(header[4]);
    result.kind = header[5];
    result.row_labels = split_labels(header[6]);
    result.col_labels = split_labels(header[7]);

    std::vector<double> values;
    values.reserve(static_cast<size_t>(rows * cols));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        for (const auto& field : split_csv_line(line)) {
            // strtod instead of stod: subnormal values must parse, not throw
            char* end = nullptr;
            const double v = std::strtod(field.c_str(), &end);
            if (end == field.c_str()) throw IoError("non-numeric CSV field: '" + field + "'");
            values.push_back(v);
        }
    }
    if (static_cast<int64_t>(values.size()) != rows * cols) {
        throw IoError("CSV value count does not match its header shape in " + path);
    }
    result.values = Tensor::from_data({rows, cols}, std::move(values));
    return result;
}

HistogramSpec histogram(const Tensor& t, int bins) {
    if (t.size() < 1) throw DataError("histogram of an empty tensor");
    if (bins < 1) throw ConfigError("histogram needs at least one bin");

    HistogramSpec spec;
    spec.bins = bins;
    spec.lo = t.data()[0];
    spec.hi = t.data()[0];
    for (int64_t i = 0; i < t.size(); ++i) {
        spec.lo = std::min(spec.lo, t.data()[i]);
        spec.hi = std::max(spec.hi, t.data()[i]);
    }
    spec.counts.assign(static_cast<size_t>(bins), 0);
    const double width = spec.hi - spec.lo;
    for (int64_t i = 0; i < t.size(); ++i) {
        int64_t bin = 0;
        if (width > 0.0) {
            bin = static_cast<int64_t>((t.data()[i] - spec.lo) / width *
                                       static_cast<double>(bins));
            bin = std::min<int64_t>(bin, bins - 1);
        }
        ++spec.counts[static_cast<size_t>(bin)];
    }
    spec.zero_position = width > 0.0 ? (0.0 - spec.lo) / width : 0.0;
    return spec;
}

void render_heatmap_svg(const Tensor& t, const std::string& path,
                        const std::vector<std::string>& row_labels,
                        const std::vector<std::string>& col_labels) {
    if (t.rank() != 2) throw DataError("heatmap rendering needs a 2-D tensor");
    const int64_t rows = t.shape()[0];
    const int64_t cols = t.shape()[1];

    double lo = t.data()[0], hi = t.data()[0];
    for (int64_t i = 0; i < t.size(); ++i) {
        lo = std::min(lo, t.data()[i]);
        hi = std::max(hi, t.data()[i]);
    }
    const double range = hi - lo;

    const int cell = 24;
    const int left = row_labels.empty() ? 4 : 96;
    const int top = col_labels.empty() ? 4 : 72;
    const int64_t width = left + cols * cell + 4;
    const int64_t height = top + rows * cell + 4;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open SVG for writing: " + path);
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << width
        << "\" height=\"" << height << "\">\n";

    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            const double v = t.at({r, c});
            const double intensity = range > 0.0 ? (v - lo) / range : 0.0;
            const int g = static_cast<int>(std::lround(255.0 * intensity));
            char color[8];
            std::snprintf(color, sizeof(color), "#%02x%02x%02x", g, g, g);
            out << "  <rect x=\"" << left + c * cell << "\" y=\"" << top + r * cell
                << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\"" << color
                << "\"/>\n";
        }
    }

    for (size_t r = 0; r < row_labels.size() && r < static_cast<size_t>(rows); ++r) {
        out << "  <text x=\"" << left - 6 << "\" y=\"" << top + static_cast<int64_t>(r) * cell + cell / 2 + 4
            << "\" text-anchor=\"end\" font-size=\"10\" font-family=\"monospace\">"
            << xml_escape(row_labels[r]) << "</text>\n";
    }
    for (size_t c = 0; c < col_labels.size() && c < static_cast<size_t>(cols); ++c) {
        const int64_t x = left + static_cast<int64_t>(c) * cell + cell / 2;
        out << "  <text x=\"" << x << "\" y=\"" << top - 6
            << "\" text-anchor=\"start\" font-size=\"10\" font-family=\"monospace\""
            << " transform=\"rotate(-60 " << x << ' ' << top - 6 << ")\">"
            << xml_escape(col_labels[c]) << "</text>\n";
    }
    out << "</svg>\n";
    if (!out) throw IoError("failed writing SVG: " + path);
}

std::vector<std::string> export_record_bundle(const DeductiveRecord& rec,
                                              const std::string& out_dir, bool with_svg) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::vector<std::string> written;
    for (const auto& key : record_tensor_keys()) {
        const std::string base =
            std::string(stage_name(rec.stage)) + "_" + key + "_" + std::to_string(rec.head);
        const std::string csv_path = (fs::path(out_dir) / (base + ".csv")).string();
        export_csv(rec, key, csv_path);
        written.push_back(csv_path);
        if (with_svg) {
            const std::string svg_path = (fs::path(out_dir) / (base + ".svg")).string();
            const Tensor& t = record_tensor(rec, key);
            if (key == "E_LM") {
                render_heatmap_svg(t, svg_path, rec.query_tokens, rec.key_tokens);
            } else {
                render_heatmap_svg(t, svg_path);
            }
            written.push_back(svg_path);
        }
    }
    return written;
}

}  // namespace plgt
