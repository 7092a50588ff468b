#include "plgt/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

#include "plgt/errors.hpp"

namespace plgt {

namespace {

constexpr char kMagic[4] = {'P', 'L', 'G', 'T'};
constexpr uint8_t kDtypeF64 = 0;
constexpr uint8_t kDtypeU64 = 1;

std::array<uint32_t, 256> make_crc_table() {
    std::array<uint32_t, 256> table{};
    for (uint32_t i = 0; i < 256; ++i) {
        uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const std::array<uint32_t, 256>& crc_table() {
    static const auto table = make_crc_table();
    return table;
}

class Writer {
public:
    void u8(uint8_t v) { buf_.push_back(v); }
    void u16(uint16_t v) {
        for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    std::vector<uint8_t>& data() { return buf_; }

private:
    std::vector<uint8_t> buf_;
};

class Reader {
public:
    Reader(const uint8_t* data, size_t size) : data_(data), size_(size) {}

    uint8_t u8() { return take(1)[0]; }
    uint16_t u16() {
        const uint8_t* p = take(2);
        return static_cast<uint16_t>(p[0] | (p[1] << 8));
    }
    uint32_t u32() {
        const uint8_t* p = take(4);
        uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    uint64_t u64() {
        const uint8_t* p = take(8);
        uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    double f64() {
        const uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    const uint8_t* take(size_t n) {
        if (pos_ + n > size_) throw IoError("checkpoint file is truncated");
        const uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    size_t pos() const { return pos_; }

private:
    const uint8_t* data_;
    size_t size_;
    size_t pos_ = 0;
};

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
    uint32_t c = seed ^ 0xffffffffu;
    for (size_t i = 0; i < len; ++i) c = crc_table()[(c ^ data[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

const Tensor* CheckpointData::find_tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

const std::vector<uint64_t>* CheckpointData::find_u64(const std::string& name) const {
    for (const auto& [n, v] : u64s) {
        if (n == name) return &v;
    }
    return nullptr;
}

void write_checkpoint(const std::string& path, const CheckpointData& data) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(CheckpointData::kVersion);
    w.u64(data.config_blob.size());
    w.bytes(data.config_blob.data(), data.config_blob.size());

    w.u32(static_cast<uint32_t>(data.tensors.size() + data.u64s.size()));
    for (const auto& [name, tensor] : data.tensors) {
        if (name.size() > 0xffff) throw IoError("tensor name too long: " + name);
        w.u16(static_cast<uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(kDtypeF64);
        w.u8(static_cast<uint8_t>(tensor.rank()));
        for (int64_t e : tensor.shape()) w.u64(static_cast<uint64_t>(e));
        for (int64_t i = 0; i < tensor.size(); ++i) w.f64(tensor.data()[i]);
    }
    for (const auto& [name, values] : data.u64s) {
        w.u16(static_cast<uint16_t>(name.size()));
        w.bytes(name.data(), name.size());
        w.u8(kDtypeU64);
        w.u8(1);
        w.u64(values.size());
        for (uint64_t v : values) w.u64(v);
    }

    const uint32_t crc = crc32(w.data().data(), w.data().size());
    w.u32(crc);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(reinterpret_cast<const char*>(w.data().data()),
              static_cast<std::streamsize>(w.data().size()));
    if (!out) throw IoError("failed writing checkpoint: " + path);
}

CheckpointData read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    if (raw.size() < 16) throw IoError("checkpoint file is truncated: " + path);

    const uint32_t stored_crc = crc32(raw.data(), raw.size() - 4);
    Reader tail(raw.data() + raw.size() - 4, 4);
    if (tail.u32() != stored_crc) {
        throw IoError("checkpoint CRC mismatch (corrupt or truncated): " + path);
    }

    Reader r(raw.data(), raw.size() - 4);
    if (std::memcmp(r.take(4), kMagic, 4) != 0) {
        throw IoError("not a PLGT checkpoint: " + path);
    }
    const uint32_t version = r.u32();
    if (version != CheckpointData::kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(CheckpointData::kVersion) + ")");
    }

    CheckpointData data;
    const uint64_t blob_len = r.u64();
    const uint8_t* blob = r.take(blob_len);
    data.config_blob.assign(reinterpret_cast<const char*>(blob), blob_len);

    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        const uint8_t* name_p = r.take(name_len);
        std::string name(reinterpret_cast<const char*>(name_p), name_len);
        const uint8_t dtype = r.u8();
        const uint8_t rank = r.u8();
        Shape shape(rank);
        for (uint8_t d = 0; d < rank; ++d) shape[d] = static_cast<int64_t>(r.u64());
        const int64_t n = numel(shape);
        if (dtype == kDtypeF64) {
            std::vector<double> values(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) values[static_cast<size_t>(j)] = r.f64();
            data.tensors.emplace_back(std::move(name),
                                      Tensor::from_data(std::move(shape), std::move(values)));
        } else if (dtype == kDtypeU64) {
            std::vector<uint64_t> values(static_cast<size_t>(n));
            for (int64_t j = 0; j < n; ++j) values[static_cast<size_t>(j)] = r.u64();
            data.u64s.emplace_back(std::move(name), std::move(values));
        } else {
            throw IoError("unknown dtype tag " + std::to_string(dtype) + " in " + path);
        }
    }
    return data;
}

}  // namespace plgt
