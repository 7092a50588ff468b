#pragma once

#include <string>
#include <vector>

#include "plgt/train.hpp"

namespace plgt {

// Deductive-task outputs for one source sentence: the model greedy-decodes a
// prediction, then one inference forward captures every stage x head record
// with E_LM axes labeled by source/predicted tokens.
struct CaptureResult {
    std::vector<DeductiveRecord> records;
    std::vector<int> src_ids;
    std::vector<int> pred_ids;  // generated tokens, END included when emitted
    std::string prediction;
};

CaptureResult capture(const TrainerState& state, const std::string& src_sentence,
                      int max_extra = 50);

// Tensor keys of a record, in export order.
const std::vector<std::string>& record_tensor_keys();
const Tensor& record_tensor(const DeductiveRecord& rec, const std::string& key);
// Dataset-level parameters vs instance-level inferences (the exporter tags
// each record with this distinction).
bool is_global_tensor(const std::string& key);

// One tensor as CSV: a single header line (stage, head, tensor, shape, kind,
// axis labels) followed by one line per tensor row; file line count is
// rows + 1.
void export_csv(const DeductiveRecord& rec, const std::string& tensor_key,
                const std::string& path);

// Parsed-back CSV for round-trip verification and downstream tooling.
struct CsvTensor {
    std::string stage;
    int head = 0;
    std::string tensor;
    std::string kind;
    Tensor values;
    std::vector<std::string> row_labels, col_labels;
};
CsvTensor parse_csv(const std::string& path);

struct HistogramSpec {
    int bins = 80;
    double lo = 0.0, hi = 0.0;
    std::vector<int64_t> counts;
    // normalized coordinate of value zero within [lo, hi] (the zero-marker
    // position of the reference histograms)
    double zero_position = 0.0;
};

HistogramSpec histogram(const Tensor& t, int bins = 80);

// Linear grayscale heatmap, one <rect> per cell, optional token axis labels;
// standalone SVG 1.1.
void render_heatmap_svg(const Tensor& t, const std::string& path,
                        const std::vector<std::string>& row_labels = {},
                        const std::vector<std::string>& col_labels = {});

// Writes the full CSV (+ optional SVG) bundle for a record into out_dir,
// named "{stage}_{tensor}_{head}.{csv|svg}". Returns the file paths.
std::vector<std::string> export_record_bundle(const DeductiveRecord& rec,
                                              const std::string& out_dir, bool with_svg);

}  // namespace plgt
