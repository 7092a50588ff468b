#include "plgt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

namespace plgt {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int64_t d = static_cast<int64_t>(s.size()) - 2; d >= 0; --d) {
        st[d] = st[d + 1] * s[d + 1];
    }
    return st;
}

// Offset of the operand element feeding output position `flat`, with the
// operand shape right-aligned against the (broadcast) output shape.
int64_t broadcast_offset(const Shape& full, int64_t flat, const Shape& op,
                         const std::vector<int64_t>& op_strides) {
    int64_t off = 0;
    int64_t rem = flat;
    const int64_t fr = static_cast<int64_t>(full.size());
    const int64_t orank = static_cast<int64_t>(op.size());
    for (int64_t d = fr - 1; d >= 0; --d) {
        const int64_t coord = rem % full[d];
        rem /= full[d];
        const int64_t od = d - (fr - orank);
        if (od >= 0 && op[od] != 1) off += coord * op_strides[od];
    }
    return off;
}

std::shared_ptr<TensorImpl> make_impl(Shape shape) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(numel(shape)), 0.0);
    impl->shape = std::move(shape);
    return impl;
}

void ensure_grad(const std::shared_ptr<TensorImpl>& t) {
    if (t->grad.size() != t->data.size()) t->grad.resize(t->data.size(), 0.0);
}

bool flows(const Tensor& t) { return t.impl()->grad_flows(); }

void maybe_record(const std::shared_ptr<TensorImpl>& out, bool any_input_flows,
                  std::function<void()> back) {
    if (g_active_tape != nullptr && any_input_flows) {
        out->tape_connected = true;
        Tape::record(out, std::move(back));
    }
}

int64_t normalize_axis(int64_t axis, int64_t rank) {
    if (axis < 0) axis += rank;
    if (axis < 0 || axis >= rank) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    }
    return axis;
}

// Generic elementwise binary op with broadcasting. DFa/DFb map
// (out_grad, a_val, b_val, out_val) to the per-element input gradients.
template <class F, class DFa, class DFb>
Tensor binary_op(const Tensor& a, const Tensor& b, F f, DFa dfa, DFb dfb) {
    const Shape os = broadcast_shapes(a.shape(), b.shape());
    auto out = make_impl(os);
    const int64_t n = static_cast<int64_t>(out->data.size());
    auto ai = a.impl();
    auto bi = b.impl();

    if (ai->shape == bi->shape) {
        for (int64_t i = 0; i < n; ++i) out->data[i] = f(ai->data[i], bi->data[i]);
    } else {
        const auto ast = strides_of(ai->shape);
        const auto bst = strides_of(bi->shape);
        for (int64_t i = 0; i < n; ++i) {
            const double av = ai->data[broadcast_offset(os, i, ai->shape, ast)];
            const double bv = bi->data[broadcast_offset(os, i, bi->shape, bst)];
            out->data[i] = f(av, bv);
        }
    }

    maybe_record(out, flows(a) || flows(b), [ai, bi, out, os, dfa, dfb]() {
        const bool fa = ai->grad_flows();
        const bool fb = bi->grad_flows();
        if (fa) ensure_grad(ai);
        if (fb) ensure_grad(bi);
        const int64_t n = static_cast<int64_t>(out->data.size());
        if (ai->shape == bi->shape && ai->shape == os) {
            for (int64_t i = 0; i < n; ++i) {
                const double go = out->grad[i];
                if (fa) ai->grad[i] += dfa(go, ai->data[i], bi->data[i], out->data[i]);
                if (fb) bi->grad[i] += dfb(go, ai->data[i], bi->data[i], out->data[i]);
            }
        } else {
            const auto ast = strides_of(ai->shape);
            const auto bst = strides_of(bi->shape);
            for (int64_t i = 0; i < n; ++i) {
                const double go = out->grad[i];
                const int64_t ao = broadcast_offset(os, i, ai->shape, ast);
                const int64_t bo = broadcast_offset(os, i, bi->shape, bst);
                const double av = ai->data[ao];
                const double bv = bi->data[bo];
                if (fa) ai->grad[ao] += dfa(go, av, bv, out->data[i]);
                if (fb) bi->grad[bo] += dfb(go, av, bv, out->data[i]);
            }
        }
    });
    return Tensor::wrap(out);
}

// Generic elementwise unary op. DF maps (out_grad, x_val, out_val) to the
// input gradient.
template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
    auto xi = x.impl();
    auto out = make_impl(xi->shape);
    const int64_t n = static_cast<int64_t>(out->data.size());
    for (int64_t i = 0; i < n; ++i) out->data[i] = f(xi->data[i]);

    maybe_record(out, flows(x), [xi, out, df]() {
        ensure_grad(xi);
        const int64_t n = static_cast<int64_t>(out->data.size());
        for (int64_t i = 0; i < n; ++i) {
            xi->grad[i] += df(out->grad[i], xi->data[i], out->data[i]);
        }
    });
    return Tensor::wrap(out);
}

struct MatmulPlan {
    Shape batch;          // broadcast batch extents
    Shape a_batch, b_batch;
    int64_t m = 0, k = 0, n = 0;
    int64_t batch_count = 1;
};

MatmulPlan plan_matmul(const Shape& as, const Shape& bs) {
    if (as.size() < 2 || bs.size() < 2) {
        throw ShapeError("matmul requires rank >= 2 operands, got " + shape_str(as) +
                         " and " + shape_str(bs));
    }
    MatmulPlan p;
    p.m = as[as.size() - 2];
    p.k = as[as.size() - 1];
    const int64_t bk = bs[bs.size() - 2];
    p.n = bs[bs.size() - 1];
    if (p.k != bk) {
        throw ShapeError("matmul inner dimension mismatch: " + shape_str(as) + " vs " +
                         shape_str(bs));
    }
    p.a_batch.assign(as.begin(), as.end() - 2);
    p.b_batch.assign(bs.begin(), bs.end() - 2);
    p.batch = broadcast_shapes(p.a_batch, p.b_batch);
    p.batch_count = numel(p.batch);
    return p;
}

// c[m,n] (+)= a[m,k] * b[k,n], with optional transposes of the logical views.
void mm_kernel(const double* a, const double* b, double* c, int64_t m, int64_t k,
               int64_t n, bool ta, bool tb) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = ta ? a[kk * m + i] : a[i * k + kk];
            const double* brow = tb ? nullptr : b + kk * n;
            double* crow = c + i * n;
            if (tb) {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * k + kk];
            } else {
                for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

}  // namespace

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        const int64_t ae = i < a.size() ? a[a.size() - 1 - i] : 1;
        const int64_t be = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (ae != be && ae != 1 && be != 1) {
            throw ShapeError("shapes not broadcast-compatible: " + shape_str(a) + " vs " +
                             shape_str(b));
        }
        out[r - 1 - i] = std::max(ae, be);
    }
    return out;
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) { return Tensor(make_impl(std::move(shape))); }

Tensor Tensor::full(Shape shape, double value) {
    auto impl = make_impl(std::move(shape));
    std::fill(impl->data.begin(), impl->data.end(), value);
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) {
    auto impl = make_impl(Shape{});
    impl->data[0] = value;
    return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    if (numel(shape) != static_cast<int64_t>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    return Tensor(std::move(impl));
}

Tensor Tensor::leaf(Shape shape, std::vector<double> data) {
    Tensor t = from_data(std::move(shape), std::move(data));
    t.set_requires_grad(true);
    return t;
}

double Tensor::item() const {
    if (size() != 1) {
        throw ContractError("item() requires a single-element tensor, got shape " +
                            shape_str(shape()));
    }
    return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
    const auto st = strides_of(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) off += i * st[d++];
    return impl_->data[off];
}

double& Tensor::at_ref(std::initializer_list<int64_t> idx) {
    const auto st = strides_of(impl_->shape);
    int64_t off = 0;
    size_t d = 0;
    for (int64_t i : idx) off += i * st[d++];
    return impl_->data[off];
}

bool Tensor::all_finite() const {
    for (double v : impl_->data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- Tape ----

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::shared_ptr<TensorImpl> out, std::function<void()> back) {
    g_active_tape->nodes_.push_back(Node{std::move(out), std::move(back)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " +
                            shape_str(loss.shape()));
    }
    NoTapeGuard guard;
    for (auto& node : nodes_) {
        node.out->grad.assign(node.out->data.size(), 0.0);
    }
    ensure_grad(loss.impl());
    loss.impl()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (!it->out->grad.empty()) it->back();
    }
}

NoTapeGuard::NoTapeGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoTapeGuard::~NoTapeGuard() { g_active_tape = saved_; }

// ---- IdMatrix ----

IdMatrix IdMatrix::from_rows(const std::vector<std::vector<int>>& rows) {
    IdMatrix m;
    m.rows = static_cast<int64_t>(rows.size());
    m.cols = rows.empty() ? 0 : static_cast<int64_t>(rows[0].size());
    m.ids.reserve(static_cast<size_t>(m.rows * m.cols));
    for (const auto& r : rows) {
        if (static_cast<int64_t>(r.size()) != m.cols) {
            throw ShapeError("ragged rows in IdMatrix::from_rows");
        }
        for (int v : r) m.ids.push_back(static_cast<int32_t>(v));
    }
    return m;
}

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double go, double, double, double) { return go; },
        [](double go, double, double, double) { return go; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double go, double, double, double) { return go; },
        [](double go, double, double, double) { return -go; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double go, double, double bv, double) { return go * bv; },
        [](double go, double av, double, double) { return go * av; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double go, double, double bv, double) { return go / bv; },
        [](double go, double av, double bv, double) { return -go * av / (bv * bv); });
}

Tensor elem_pow(const Tensor& base, const Tensor& exponent) {
    const auto& bd = base.vec();
    for (double v : bd) {
        if (!(v > 0.0)) {
            throw DomainError("elem_pow requires a strictly positive base, got " +
                              std::to_string(v));
        }
    }
    return binary_op(
        base, exponent,
        [](double b, double e) { return std::exp(e * std::log(b)); },
        [](double go, double bv, double ev, double ov) { return go * ov * ev / bv; },
        [](double go, double bv, double, double ov) { return go * ov * std::log(bv); });
}

// ---- unary ----

Tensor exp_t(const Tensor& x) {
    return unary_op(
        x, [](double v) { return std::exp(v); },
        [](double go, double, double ov) { return go * ov; });
}

Tensor log_t(const Tensor& x) {
    for (double v : x.vec()) {
        if (!(v > 0.0)) {
            throw DomainError("log requires strictly positive input, got " + std::to_string(v));
        }
    }
    return unary_op(
        x, [](double v) { return std::log(v); },
        [](double go, double xv, double) { return go / xv; });
}

Tensor sqrt_t(const Tensor& x) {
    for (double v : x.vec()) {
        if (v < 0.0) {
            throw DomainError("sqrt requires non-negative input, got " + std::to_string(v));
        }
    }
    return unary_op(
        x, [](double v) { return std::sqrt(v); },
        [](double go, double, double ov) { return 0.5 * go / ov; });
}

Tensor relu(const Tensor& x) {
    return unary_op(
        x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double go, double xv, double) { return xv >= 0.0 ? go : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
    return unary_op(
        x, [slope](double v) { return v >= 0.0 ? v : slope * v; },
        [slope](double go, double xv, double) { return xv >= 0.0 ? go : slope * go; });
}

// ---- matmul and layout ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    auto ai = a.impl();
    auto bi = b.impl();
    const MatmulPlan p = plan_matmul(ai->shape, bi->shape);

    Shape os = p.batch;
    os.push_back(p.m);
    os.push_back(p.n);
    auto out = make_impl(os);

    const auto a_bst = strides_of(p.a_batch);
    const auto b_bst = strides_of(p.b_batch);
    const int64_t am = p.m * p.k, bm = p.k * p.n, cm = p.m * p.n;
    for (int64_t bidx = 0; bidx < p.batch_count; ++bidx) {
        const int64_t ao = broadcast_offset(p.batch, bidx, p.a_batch, a_bst) * am;
        const int64_t bo = broadcast_offset(p.batch, bidx, p.b_batch, b_bst) * bm;
        mm_kernel(ai->data.data() + ao, bi->data.data() + bo, out->data.data() + bidx * cm,
                  p.m, p.k, p.n, false, false);
    }

    maybe_record(out, flows(a) || flows(b), [ai, bi, out, p, a_bst, b_bst]() {
        const bool fa = ai->grad_flows();
        const bool fb = bi->grad_flows();
        if (fa) ensure_grad(ai);
        if (fb) ensure_grad(bi);
        const int64_t am = p.m * p.k, bm = p.k * p.n, cm = p.m * p.n;
        for (int64_t bidx = 0; bidx < p.batch_count; ++bidx) {
            const int64_t ao = broadcast_offset(p.batch, bidx, p.a_batch, a_bst) * am;
            const int64_t bo = broadcast_offset(p.batch, bidx, p.b_batch, b_bst) * bm;
            const double* gc = out->grad.data() + bidx * cm;
            // dA = dC . B^T   [m,n] x [n,k]
            if (fa) {
                mm_kernel(gc, bi->data.data() + bo, ai->grad.data() + ao, p.m, p.n, p.k,
                          false, true);
            }
            // dB = A^T . dC   [k,m] x [m,n]
            if (fb) {
                mm_kernel(ai->data.data() + ao, gc, bi->grad.data() + bo, p.k, p.m, p.n,
                          true, false);
            }
        }
    });
    return Tensor::wrap(out);
}

Tensor transpose_last2(const Tensor& x) {
    const int64_t r = x.rank();
    std::vector<int64_t> perm(static_cast<size_t>(r));
    std::iota(perm.begin(), perm.end(), 0);
    if (r < 2) throw ShapeError("transpose_last2 requires rank >= 2, got " + shape_str(x.shape()));
    std::swap(perm[r - 2], perm[r - 1]);
    return permute(x, perm);
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& perm) {
    auto xi = x.impl();
    const int64_t r = x.rank();
    if (static_cast<int64_t>(perm.size()) != r) {
        throw ShapeError("permute order rank mismatch for shape " + shape_str(xi->shape));
    }
    Shape os(static_cast<size_t>(r));
    for (int64_t d = 0; d < r; ++d) os[d] = xi->shape[perm[d]];
    auto out = make_impl(os);

    const auto in_st = strides_of(xi->shape);
    std::vector<int64_t> gather_st(static_cast<size_t>(r));
    for (int64_t d = 0; d < r; ++d) gather_st[d] = in_st[perm[d]];

    const int64_t n = static_cast<int64_t>(out->data.size());
    for (int64_t i = 0; i < n; ++i) {
        int64_t rem = i, off = 0;
        for (int64_t d = r - 1; d >= 0; --d) {
            off += (rem % os[d]) * gather_st[d];
            rem /= os[d];
        }
        out->data[i] = xi->data[off];
    }

    maybe_record(out, flows(x), [xi, out, os, gather_st, r]() {
        ensure_grad(xi);
        const int64_t n = static_cast<int64_t>(out->data.size());
        for (int64_t i = 0; i < n; ++i) {
            int64_t rem = i, off = 0;
            for (int64_t d = r - 1; d >= 0; --d) {
                off += (rem % os[d]) * gather_st[d];
                rem /= os[d];
            }
            xi->grad[off] += out->grad[i];
        }
    });
    return Tensor::wrap(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
    auto xi = x.impl();
    if (numel(shape) != x.size()) {
        throw ShapeError("cannot reshape " + shape_str(xi->shape) + " to " + shape_str(shape));
    }
    auto out = std::make_shared<TensorImpl>();
    out->shape = std::move(shape);
    out->data = xi->data;

    maybe_record(out, flows(x), [xi, out]() {
        ensure_grad(xi);
        const int64_t n = static_cast<int64_t>(out->data.size());
        for (int64_t i = 0; i < n; ++i) xi->grad[i] += out->grad[i];
    });
    return Tensor::wrap(out);
}

// ---- reductions ----

Tensor sum_all(const Tensor& x) {
    auto xi = x.impl();
    auto out = make_impl(Shape{});
    double s = 0.0;
    for (double v : xi->data) s += v;
    out->data[0] = s;

    maybe_record(out, flows(x), [xi, out]() {
        ensure_grad(xi);
        const double go = out->grad[0];
        for (auto& g : xi->grad) g += go;
    });
    return Tensor::wrap(out);
}

Tensor sum_axis(const Tensor& x, int64_t axis, bool keepdims) {
    auto xi = x.impl();
    const int64_t r = x.rank();
    axis = normalize_axis(axis, r);
    const int64_t extent = xi->shape[axis];
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= xi->shape[d];
    for (int64_t d = axis + 1; d < r; ++d) inner *= xi->shape[d];

    Shape os;
    for (int64_t d = 0; d < r; ++d) {
        if (d == axis) {
            if (keepdims) os.push_back(1);
        } else {
            os.push_back(xi->shape[d]);
        }
    }
    auto out = make_impl(os);
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t e = 0; e < extent; ++e) {
            const double* src = xi->data.data() + (o * extent + e) * inner;
            double* dst = out->data.data() + o * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }

    maybe_record(out, flows(x), [xi, out, outer, extent, inner]() {
        ensure_grad(xi);
        for (int64_t o = 0; o < outer; ++o) {
            const double* src = out->grad.data() + o * inner;
            for (int64_t e = 0; e < extent; ++e) {
                double* dst = xi->grad.data() + (o * extent + e) * inner;
                for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
        }
    });
    return Tensor::wrap(out);
}

Tensor mean_axis(const Tensor& x, int64_t axis, bool keepdims) {
    const int64_t extent = x.shape()[normalize_axis(axis, x.rank())];
    return sum_axis(x, axis, keepdims) * (1.0 / static_cast<double>(extent));
}

// ---- softmax family ----

Tensor softmax_lastdim(const Tensor& x) {
    auto xi = x.impl();
    if (x.rank() < 1) throw ShapeError("softmax_lastdim requires rank >= 1");
    const int64_t cols = xi->shape.back();
    const int64_t rows = x.size() / cols;
    auto out = make_impl(xi->shape);
    for (int64_t rix = 0; rix < rows; ++rix) {
        const double* in = xi->data.data() + rix * cols;
        double* o = out->data.data() + rix * cols;
        double mx = in[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            denom += o[j];
        }
        for (int64_t j = 0; j < cols; ++j) o[j] /= denom;
    }

    maybe_record(out, flows(x), [xi, out, rows, cols]() {
        ensure_grad(xi);
        for (int64_t rix = 0; rix < rows; ++rix) {
            const double* y = out->data.data() + rix * cols;
            const double* gy = out->grad.data() + rix * cols;
            double* gx = xi->grad.data() + rix * cols;
            double dot = 0.0;
            for (int64_t j = 0; j < cols; ++j) dot += gy[j] * y[j];
            for (int64_t j = 0; j < cols; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
    return Tensor::wrap(out);
}

Tensor log_softmax_lastdim(const Tensor& x) {
    auto xi = x.impl();
    if (x.rank() < 1) throw ShapeError("log_softmax_lastdim requires rank >= 1");
    const int64_t cols = xi->shape.back();
    const int64_t rows = x.size() / cols;
    auto out = make_impl(xi->shape);
    for (int64_t rix = 0; rix < rows; ++rix) {
        const double* in = xi->data.data() + rix * cols;
        double* o = out->data.data() + rix * cols;
        double mx = in[0];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < cols; ++j) denom += std::exp(in[j] - mx);
        const double lse = mx + std::log(denom);
        for (int64_t j = 0; j < cols; ++j) o[j] = in[j] - lse;
    }

    maybe_record(out, flows(x), [xi, out, rows, cols]() {
        ensure_grad(xi);
        for (int64_t rix = 0; rix < rows; ++rix) {
            const double* y = out->data.data() + rix * cols;
            const double* gy = out->grad.data() + rix * cols;
            double* gx = xi->grad.data() + rix * cols;
            double gsum = 0.0;
            for (int64_t j = 0; j < cols; ++j) gsum += gy[j];
            for (int64_t j = 0; j < cols; ++j) gx[j] += gy[j] - std::exp(y[j]) * gsum;
        }
    });
    return Tensor::wrap(out);
}

// ---- concat / split ----

Tensor concat(const std::vector<Tensor>& parts, int64_t axis) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    const int64_t r = parts[0].rank();
    axis = normalize_axis(axis, r);
    Shape os = parts[0].shape();
    int64_t total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat rank mismatch");
        for (int64_t d = 0; d < r; ++d) {
            if (d != axis && p.shape()[d] != os[d]) {
                throw ShapeError("concat extent mismatch: " + shape_str(p.shape()) + " vs " +
                                 shape_str(os));
            }
        }
        total += p.shape()[axis];
    }
    os[axis] = total;
    auto out = make_impl(os);

    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= os[d];
    for (int64_t d = axis + 1; d < r; ++d) inner *= os[d];

    std::vector<std::shared_ptr<TensorImpl>> impls;
    std::vector<int64_t> extents;
    bool any = false;
    for (const auto& p : parts) {
        impls.push_back(p.impl());
        extents.push_back(p.shape()[axis]);
        any = any || flows(p);
    }

    int64_t base = 0;
    for (size_t pi = 0; pi < impls.size(); ++pi) {
        const int64_t e = extents[pi];
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(out->data.data() + (o * total + base) * inner,
                        impls[pi]->data.data() + o * e * inner,
                        static_cast<size_t>(e * inner) * sizeof(double));
        }
        base += e;
    }

    maybe_record(out, any, [impls, extents, out, outer, inner, total]() {
        int64_t base = 0;
        for (size_t pi = 0; pi < impls.size(); ++pi) {
            const int64_t e = extents[pi];
            if (impls[pi]->grad_flows()) {
                ensure_grad(impls[pi]);
                for (int64_t o = 0; o < outer; ++o) {
                    const double* src = out->grad.data() + (o * total + base) * inner;
                    double* dst = impls[pi]->grad.data() + o * e * inner;
                    for (int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
                }
            }
            base += e;
        }
    });
    return Tensor::wrap(out);
}

std::vector<Tensor> split(const Tensor& x, int64_t axis, int64_t parts) {
    auto xi = x.impl();
    const int64_t r = x.rank();
    axis = normalize_axis(axis, r);
    const int64_t total = xi->shape[axis];
    if (parts <= 0 || total % parts != 0) {
        throw ShapeError("cannot split extent " + std::to_string(total) + " into " +
                         std::to_string(parts) + " parts");
    }
    const int64_t e = total / parts;
    int64_t outer = 1, inner = 1;
    for (int64_t d = 0; d < axis; ++d) outer *= xi->shape[d];
    for (int64_t d = axis + 1; d < r; ++d) inner *= xi->shape[d];

    std::vector<Tensor> result;
    Shape os = xi->shape;
    os[axis] = e;
    for (int64_t pi = 0; pi < parts; ++pi) {
        auto out = make_impl(os);
        const int64_t base = pi * e;
        for (int64_t o = 0; o < outer; ++o) {
            std::memcpy(out->data.data() + o * e * inner,
                        xi->data.data() + (o * total + base) * inner,
                        static_cast<size_t>(e * inner) * sizeof(double));
        }
        maybe_record(out, flows(x), [xi, out, base, outer, inner, e, total]() {
            ensure_grad(xi);
            for (int64_t o = 0; o < outer; ++o) {
                const double* src = out->grad.data() + o * e * inner;
                double* dst = xi->grad.data() + (o * total + base) * inner;
                for (int64_t i = 0; i < e * inner; ++i) dst[i] += src[i];
            }
        });
        result.push_back(Tensor::wrap(out));
    }
    return result;
}

// ---- embedding / one-hot ----

Tensor embedding(const Tensor& table, const IdMatrix& ids) {
    auto ti = table.impl();
    if (table.rank() != 2) {
        throw ShapeError("embedding table must be rank 2, got " + shape_str(ti->shape));
    }
    const int64_t v = ti->shape[0];
    const int64_t d = ti->shape[1];
    for (int64_t r = 0; r < ids.rows; ++r) {
        for (int64_t c = 0; c < ids.cols; ++c) {
            const int32_t id = ids.at(r, c);
            if (id < 0 || id >= v) {
                throw DataError("token id " + std::to_string(id) + " at (" + std::to_string(r) +
                                "," + std::to_string(c) + ") out of range [0," +
                                std::to_string(v) + ")");
            }
        }
    }
    auto out = make_impl(Shape{ids.rows, ids.cols, d});
    const int64_t n = ids.rows * ids.cols;
    for (int64_t i = 0; i < n; ++i) {
        std::memcpy(out->data.data() + i * d, ti->data.data() + ids.ids[i] * d,
                    static_cast<size_t>(d) * sizeof(double));
    }

    auto id_copy = ids.ids;
    maybe_record(out, flows(table), [ti, out, id_copy, n, d]() {
        ensure_grad(ti);
        for (int64_t i = 0; i < n; ++i) {
            const double* src = out->grad.data() + i * d;
            double* dst = ti->grad.data() + id_copy[i] * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    });
    return Tensor::wrap(out);
}

Tensor one_hot(const IdMatrix& ids, int64_t depth) {
    auto out = make_impl(Shape{ids.rows, ids.cols, depth});
    const int64_t n = ids.rows * ids.cols;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t id = ids.ids[i];
        if (id < 0 || id >= depth) {
            throw DataError("token id " + std::to_string(id) + " out of range [0," +
                            std::to_string(depth) + ") in one_hot");
        }
        out->data[i * depth + id] = 1.0;
    }
    return Tensor::wrap(out);
}

// ---- layer norm / dropout ----

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1) throw ShapeError("layer_norm requires rank >= 1");
    const Tensor mu = mean_axis(x, -1, true);
    const Tensor xc = sub(x, mu);
    const Tensor var = mean_axis(mul(xc, xc), -1, true);
    const Tensor inv = div(Tensor::scalar(1.0), sqrt_t(add(var, Tensor::scalar(eps))));
    return add(mul(mul(xc, inv), gain), bias);
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng* rng) {
    if (rate < 0.0 || rate >= 1.0) {
        throw ConfigError("dropout rate must lie in [0,1), got " + std::to_string(rate));
    }
    if (!training || rate == 0.0) return x;
    if (rng == nullptr) throw ContractError("dropout in training mode requires an rng");
    const double keep = 1.0 / (1.0 - rate);
    Tensor mask = Tensor::zeros(x.shape());
    double* m = mask.data();
    const int64_t n = x.size();
    for (int64_t i = 0; i < n; ++i) m[i] = rng->uniform() >= rate ? keep : 0.0;
    return mul(x, mask);
}

}  // namespace plgt
