#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "plgt/errors.hpp"
#include "plgt/rng.hpp"

namespace plgt {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);
Shape broadcast_shapes(const Shape& a, const Shape& b);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;   // leaf that accumulates gradient
    bool tape_connected = false;  // produced by a recorded op of the active tape
    std::vector<double> grad;     // allocated lazily during backward

    bool grad_flows() const { return requires_grad || tape_connected; }
};

// Dense multi-dimensional array of 64-bit floats. Value-semantic handle; the
// buffer is shared between copies. Rank 0 tensors (shape {}) hold one scalar.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor from_data(Shape shape, std::vector<double> data);
    // Leaf tensor that accumulates gradient during backward passes.
    static Tensor leaf(Shape shape, std::vector<double> data);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t rank() const { return static_cast<int64_t>(impl_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(impl_->data.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& vec() { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }

    // Scalar extraction; requires size() == 1.
    double item() const;
    double at(std::initializer_list<int64_t> idx) const;
    double& at_ref(std::initializer_list<int64_t> idx);

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<double>& grad() const { return impl_->grad; }
    void zero_grad() { impl_->grad.clear(); }

    bool all_finite() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<TensorImpl> impl) { return Tensor(std::move(impl)); }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// Records primitive applications of one forward pass; replayed in reverse for
// backward. One tape per forward/backward pass; single writer.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Propagates d(loss)/d(leaf) into every requires_grad leaf reachable from
    // `loss`. Repeated calls accumulate into leaf gradients.
    void backward(const Tensor& loss);

    size_t num_nodes() const { return nodes_.size(); }

    static Tape* active();
    static void record(std::shared_ptr<TensorImpl> out, std::function<void()> back);

private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> back;
    };
    std::vector<Node> nodes_;
    Tape* prev_ = nullptr;
};

// Suspends tape recording for the current scope (used during backward and for
// pure evaluation inside a training scope).
class NoTapeGuard {
public:
    NoTapeGuard();
    ~NoTapeGuard();

private:
    Tape* saved_;
};

// Integer id matrix, [rows, cols] row-major. Token ids for embedding lookup,
// one-hot construction and mask building.
struct IdMatrix {
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<int32_t> ids;

    static IdMatrix from_rows(const std::vector<std::vector<int>>& rows);
    int32_t at(int64_t r, int64_t c) const { return ids[r * cols + c]; }
    int32_t& at_ref(int64_t r, int64_t c) { return ids[r * cols + c]; }
};

// ---- elementwise binary ops (broadcasting, right-aligned) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add(a, Tensor::scalar(s)); }
inline Tensor operator-(const Tensor& a, double s) { return sub(a, Tensor::scalar(s)); }
inline Tensor operator*(const Tensor& a, double s) { return mul(a, Tensor::scalar(s)); }
inline Tensor operator/(const Tensor& a, double s) { return div(a, Tensor::scalar(s)); }
inline Tensor operator*(double s, const Tensor& a) { return mul(Tensor::scalar(s), a); }

// ---- matrix ops ----
// Batched matrix product [.., m, k] x [.., k, n] -> [.., m, n]; leading batch
// extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor permute(const Tensor& x, const std::vector<int64_t>& perm);
Tensor reshape(const Tensor& x, Shape shape);

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int64_t axis, bool keepdims);
Tensor mean_axis(const Tensor& x, int64_t axis, bool keepdims);

// ---- unary ----
Tensor exp_t(const Tensor& x);
Tensor log_t(const Tensor& x);
Tensor sqrt_t(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);

// out = exp(exponent * ln(base)); base must be strictly positive.
Tensor elem_pow(const Tensor& base, const Tensor& exponent);

// ---- structured ops ----
Tensor softmax_lastdim(const Tensor& x);
Tensor log_softmax_lastdim(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, int64_t axis);
std::vector<Tensor> split(const Tensor& x, int64_t axis, int64_t parts);

// table: [V, d]; out: [ids.rows, ids.cols, d]. Gradient scatter-adds into the
// looked-up table rows.
Tensor embedding(const Tensor& table, const IdMatrix& ids);
// Constant one-hot tensor [ids.rows, ids.cols, depth].
Tensor one_hot(const IdMatrix& ids, int64_t depth);

// Per last-dim slice: (x - mean) / sqrt(var + eps) * gain + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// Training: zeroes each element with probability `rate`, scales survivors by
// 1/(1-rate). Inference (or rate 0): identity, consumes no randomness.
Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng);

}  // namespace plgt
