#pragma once

#include <cstdint>
#include <string>

#include "plgt/model.hpp"

namespace plgt {

// Full run configuration: model hyperparameters plus data/training/decoding
// knobs. Parsed from flat "key = value" files with '#' comments and echoed
// verbatim into checkpoints.
struct RunConfig {
    ModelConfig model;
    uint64_t seed = 1;
    int epochs = 10;
    int batch_size = 64;
    int warmup = 15000;
    int ckpt_every = 0;  // 0 disables periodic checkpoints
    int beam = 4;
    double alpha = 0.6;
    int max_extra = 50;
    int vocab_cap = 200;
    int vocab_min_freq = 2;
    bool lowercase = false;
    std::string train_path;
    std::string val_path;
    std::string out_dir;

    void set(const std::string& key, const std::string& value);
    std::string to_text() const;

    static RunConfig parse_text(const std::string& text);
    static RunConfig parse_file(const std::string& path);
};

}  // namespace plgt
