#include "weakts/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace weakts {

long long shape_numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace {

void check_shape(const Shape& s) {
    for (int d : s) {
        if (d <= 0) throw DimensionError("tensor shape must have positive extents, got " + shape_str(s));
    }
    if (s.empty()) throw DimensionError("tensor shape must have at least one axis");
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

namespace detail {

std::vector<double>& TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
    return grad;
}

void record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> backward) {
    bool track = false;
    for (const Tensor* in : inputs) track = track || in->requires_grad();
    if (!track) return;
    out.impl()->requires_grad = true;
    Tape* tape = Tape::active();
    if (tape == nullptr) return;  // forward-only evaluation
    tape->push_node(op, out.impl_ptr(), std::move(backward));
}

}  // namespace detail

// ---- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    check_shape(shape);
    auto n = static_cast<size_t>(shape_numel(shape));
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values.assign(n, value);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    auto n = static_cast<size_t>(shape_numel(shape));
    if (values.empty()) values.assign(n, 0.0);
    if (values.size() != n) {
        throw DimensionError("tensor values length " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::scalar(double value) {
    return from({1}, {value});
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item(): tensor has " + std::to_string(size()) + " elements");
    return impl_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw DimensionError("at(): index rank mismatch");
    long long flat = 0;
    size_t axis = 0;
    for (int i : idx) {
        flat = flat * s[axis] + i;
        ++axis;
    }
    return impl_->values[static_cast<size_t>(flat)];
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_ || impl_->grad.empty()) throw TapeError("grad(): no gradient has been accumulated");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

// ---- Tape -----------------------------------------------------------------

Tape* Tape::active() {
    return g_active_tape;
}

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) {
    g_active_tape = &tape;
}

Tape::Scope::~Scope() {
    g_active_tape = previous_;
}

void Tape::push_node(const char* op, std::shared_ptr<detail::TensorImpl> out,
                     std::function<void()> backward) {
    out->tape = this;
    out->tape_generation = generation_;
    nodes_.push_back(Node{op, std::move(out), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward: loss must be a single-element tensor");
    }
    detail::TensorImpl* li = loss.impl();
    if (li->tape != this || li->tape_generation != generation_) {
        throw TapeError("backward: loss is not recorded on this tape");
    }
    if (swept_) throw TapeError("backward: tape already swept; call reset() first");
    li->ensure_grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->out->grad.empty()) continue;  // no downstream influence
        it->backward();
    }
    swept_ = true;
}

void Tape::reset() {
    nodes_.clear();
    swept_ = false;
    ++generation_;
}

// ---- elementwise ------------------------------------------------------------

namespace {

using detail::TensorImpl;
using Impl = std::shared_ptr<TensorImpl>;

// Shared skeleton for binary elementwise ops with per-element partials.
template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_same_shape(op, a, b);
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
    Tensor r = Tensor::from(a.shape(), std::move(out));
    detail::record(op, {&a, &b}, r, [ai = a.impl_ptr(), bi = b.impl_ptr(), ri = r.impl_ptr(), bwd] {
        const auto& g = ri->grad;
        const bool need_a = ai->requires_grad;
        const bool need_b = bi->requires_grad;
        auto* ga = need_a ? ai->ensure_grad().data() : nullptr;
        auto* gb = need_b ? bi->ensure_grad().data() : nullptr;
        for (size_t i = 0; i < g.size(); ++i) {
            auto [da, db] = bwd(ai->values[i], bi->values[i], ri->values[i]);
            if (need_a) ga[i] += g[i] * da;
            if (need_b) gb[i] += g[i] * db;
        }
    });
    return r;
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* op, const Tensor& x, Fwd fwd, Bwd bwd) {
    const auto& xv = x.values();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) out[i] = fwd(xv[i]);
    Tensor r = Tensor::from(x.shape(), std::move(out));
    detail::record(op, {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr(), bwd] {
        if (!xi->requires_grad) return;
        const auto& g = ri->grad;
        auto* gx = xi->ensure_grad().data();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * bwd(xi->values[i], ri->values[i]);
    });
    return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

Tensor scale(const Tensor& x, double c) {
    return unary_elementwise(
        "scale", x, [c](double v) { return v * c; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
    return unary_elementwise(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
    return unary_elementwise(
        "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

// ---- shape ops --------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    const int rank = static_cast<int>(s0.size());
    if (axis < 0 || axis >= rank) throw DimensionError("concat: axis out of range");
    Shape out_shape = s0;
    out_shape[static_cast<size_t>(axis)] = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (static_cast<int>(s.size()) != rank) throw DimensionError("concat: rank mismatch");
        for (int a = 0; a < rank; ++a) {
            if (a != axis && s[static_cast<size_t>(a)] != s0[static_cast<size_t>(a)]) {
                throw DimensionError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
            }
        }
        out_shape[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
    }

    // outer = product of extents before axis, inner = product after.
    long long outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s0[static_cast<size_t>(a)];
    for (int a = axis + 1; a < rank; ++a) inner *= s0[static_cast<size_t>(a)];

    std::vector<double> out(static_cast<size_t>(shape_numel(out_shape)));
    const long long total_axis = out_shape[static_cast<size_t>(axis)];
    long long offset = 0;
    for (const Tensor& p : parts) {
        const long long ext = p.dim(axis);
        const auto& v = p.values();
        for (long long o = 0; o < outer; ++o) {
            const double* src = v.data() + o * ext * inner;
            double* dst = out.data() + (o * total_axis + offset) * inner;
            std::copy(src, src + ext * inner, dst);
        }
        offset += ext;
    }

    Tensor r = Tensor::from(out_shape, std::move(out));
    std::vector<const Tensor*> in_ptrs;
    std::vector<Impl> impls;
    bool track = false;
    for (const Tensor& p : parts) {
        impls.push_back(p.impl_ptr());
        track = track || p.requires_grad();
    }
    if (track) {
        Tensor* rp = &r;
        r.impl()->requires_grad = true;
        if (Tape* tape = Tape::active()) {
            tape->push_node("concat", rp->impl_ptr(),
                            [impls, ri = r.impl_ptr(), axis, outer, inner, total_axis] {
                                const auto& g = ri->grad;
                                long long off = 0;
                                for (const Impl& pi : impls) {
                                    const long long ext = pi->shape[static_cast<size_t>(axis)];
                                    if (pi->requires_grad) {
                                        auto* gp = pi->ensure_grad().data();
                                        for (long long o = 0; o < outer; ++o) {
                                            const double* src = g.data() + (o * total_axis + off) * inner;
                                            double* dst = gp + o * ext * inner;
                                            for (long long i = 0; i < ext * inner; ++i) dst[i] += src[i];
                                        }
                                    }
                                    off += ext;
                                }
                            });
        }
    }
    return r;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    const Shape& s = x.shape();
    const int rank = static_cast<int>(s.size());
    if (axis < 0 || axis >= rank) throw DimensionError("slice: axis out of range");
    const int ext = s[static_cast<size_t>(axis)];
    if (len <= 0 || start < 0 || start + len > ext) {
        throw DimensionError("slice: range [" + std::to_string(start) + "," +
                             std::to_string(start + len) + ") out of bounds for extent " +
                             std::to_string(ext));
    }
    long long outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
    for (int a = axis + 1; a < rank; ++a) inner *= s[static_cast<size_t>(a)];

    Shape out_shape = s;
    out_shape[static_cast<size_t>(axis)] = len;
    std::vector<double> out(static_cast<size_t>(outer * len * inner));
    const auto& v = x.values();
    for (long long o = 0; o < outer; ++o) {
        const double* src = v.data() + (o * ext + start) * inner;
        std::copy(src, src + static_cast<long long>(len) * inner, out.data() + o * len * inner);
    }
    Tensor r = Tensor::from(out_shape, std::move(out));
    detail::record("slice", {&x}, r,
                   [xi = x.impl_ptr(), ri = r.impl_ptr(), outer, inner, ext, start, len] {
                       if (!xi->requires_grad) return;
                       const auto& g = ri->grad;
                       auto* gx = xi->ensure_grad().data();
                       for (long long o = 0; o < outer; ++o) {
                           const double* src = g.data() + o * len * inner;
                           double* dst = gx + (o * ext + start) * inner;
                           for (long long i = 0; i < static_cast<long long>(len) * inner; ++i)
                               dst[i] += src[i];
                       }
                   });
    return r;
}

Tensor transpose(const Tensor& x) {
    if (x.ndim() != 2) throw DimensionError("transpose: expected 2-d tensor, got " + shape_str(x.shape()));
    const int m = x.dim(0), n = x.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n);
    const auto& v = x.values();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = v[static_cast<size_t>(i) * n + j];
    Tensor r = Tensor::from({n, m}, std::move(out));
    detail::record("transpose", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr(), m, n] {
        if (!xi->requires_grad) return;
        const auto& g = ri->grad;
        auto* gx = xi->ensure_grad().data();
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < m; ++i) gx[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(j) * m + i];
    });
    return r;
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_shape(shape);
    if (shape_numel(shape) != x.size()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor r = Tensor::from(std::move(shape), x.values());
    detail::record("reshape", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr()] {
        if (!xi->requires_grad) return;
        const auto& g = ri->grad;
        auto* gx = xi->ensure_grad().data();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    return r;
}

// ---- reductions -------------------------------------------------------------

Tensor reduce_sum(const Tensor& x) {
    const auto& v = x.values();
    double acc = 0.0;
    for (double d : v) acc += d;
    Tensor r = Tensor::scalar(acc);
    detail::record("reduce_sum", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr()] {
        if (!xi->requires_grad) return;
        const double g = ri->grad[0];
        auto* gx = xi->ensure_grad().data();
        for (size_t i = 0; i < xi->values.size(); ++i) gx[i] += g;
    });
    return r;
}

Tensor reduce_mean(const Tensor& x) {
    const auto& v = x.values();
    double acc = 0.0;
    for (double d : v) acc += d;
    const double inv_n = 1.0 / static_cast<double>(v.size());
    Tensor r = Tensor::scalar(acc * inv_n);
    detail::record("reduce_mean", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr(), inv_n] {
        if (!xi->requires_grad) return;
        const double g = ri->grad[0] * inv_n;
        auto* gx = xi->ensure_grad().data();
        for (size_t i = 0; i < xi->values.size(); ++i) gx[i] += g;
    });
    return r;
}

// ---- matmul -----------------------------------------------------------------

namespace {

// out[m,n] += a[m,k] * b[k,n]; plain row-major loops, k-major accumulation per
// element. The j loop vectorizes without reassociating any per-element sum.
void gemm_acc(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* orow = out + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

// out[m,k] += a[m,n] * b^T where b is [k,n]  (i.e. a * b^T)
void gemm_abt_acc(const double* a, const double* b, double* out, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * n;
        double* orow = out + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* brow = b + static_cast<size_t>(p) * n;
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += arow[j] * brow[j];
            orow[p] += acc;
        }
    }
}

// out[k,n] += a^T * b where a is [m,k], b is [m,n]
void gemm_atb_acc(const double* a, const double* b, double* out, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        const double* brow = b + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            double* orow = out + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    Tensor r = Tensor::from({m, n}, std::move(out));
    detail::record("matmul", {&a, &b}, r, [ai = a.impl_ptr(), bi = b.impl_ptr(), ri = r.impl_ptr(), m, k, n] {
        const auto& g = ri->grad;
        if (ai->requires_grad) {  // dA = g * B^T
            gemm_abt_acc(g.data(), bi->values.data(), ai->ensure_grad().data(), m, n, k);
        }
        if (bi->requires_grad) {  // dB = A^T * g
            gemm_atb_acc(ai->values.data(), g.data(), bi->ensure_grad().data(), m, k, n);
        }
    });
    return r;
}

// ---- conv1d -----------------------------------------------------------------

namespace {

struct ConvDims {
    int batch, cin, len, cout, ksize, pad_left, len_pad, len_out;
    bool batched;
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernels, const Tensor& bias, Pad pad) {
    if (kernels.ndim() != 3) {
        throw DimensionError("conv1d: kernels must be [C_out,C_in,K], got " + shape_str(kernels.shape()));
    }
    ConvDims d{};
    d.batched = x.ndim() == 3;
    if (!d.batched && x.ndim() != 2) {
        throw DimensionError("conv1d: input must be [C,L] or [B,C,L], got " + shape_str(x.shape()));
    }
    d.batch = d.batched ? x.dim(0) : 1;
    d.cin = x.dim(d.batched ? 1 : 0);
    d.len = x.dim(d.batched ? 2 : 1);
    d.cout = kernels.dim(0);
    d.ksize = kernels.dim(2);
    if (kernels.dim(1) != d.cin) {
        throw DimensionError("conv1d: input channels " + shape_str(x.shape()) +
                             " do not match kernels " + shape_str(kernels.shape()));
    }
    if (bias.ndim() != 1 || bias.dim(0) != d.cout) {
        throw DimensionError("conv1d: bias must be [C_out], got " + shape_str(bias.shape()));
    }
    d.pad_left = pad == Pad::kSame ? (d.ksize - 1) / 2 : 0;
    const int pad_total = pad == Pad::kSame ? d.ksize - 1 : 0;
    if (d.ksize > d.len + pad_total) {
        throw DimensionError("conv1d: kernel size " + std::to_string(d.ksize) +
                             " exceeds padded input length " + std::to_string(d.len + pad_total));
    }
    d.len_pad = d.len + pad_total;
    d.len_out = pad == Pad::kSame ? d.len : d.len - d.ksize + 1;
    return d;
}

// Zero-padded copy of one sample's channels.
void pad_sample(const double* x, double* xp, int cin, int len, int len_pad, int pad_left) {
    std::fill(xp, xp + static_cast<size_t>(cin) * len_pad, 0.0);
    for (int c = 0; c < cin; ++c) {
        std::copy(x + static_cast<size_t>(c) * len, x + static_cast<size_t>(c + 1) * len,
                  xp + static_cast<size_t>(c) * len_pad + pad_left);
    }
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Pad pad) {
    const ConvDims d = conv_dims(x, kernels, bias, pad);
    std::vector<double> out(static_cast<size_t>(d.batch) * d.cout * d.len_out);
    std::vector<double> xp(static_cast<size_t>(d.cin) * d.len_pad);
    const double* xv = x.values().data();
    const double* wv = kernels.values().data();
    const double* bv = bias.values().data();

    for (int b = 0; b < d.batch; ++b) {
        pad_sample(xv + static_cast<size_t>(b) * d.cin * d.len, xp.data(), d.cin, d.len, d.len_pad,
                   d.pad_left);
        for (int co = 0; co < d.cout; ++co) {
            double* orow = out.data() + (static_cast<size_t>(b) * d.cout + co) * d.len_out;
            std::fill(orow, orow + d.len_out, bv[co]);
            for (int ci = 0; ci < d.cin; ++ci) {
                const double* xrow = xp.data() + static_cast<size_t>(ci) * d.len_pad;
                const double* wrow = wv + (static_cast<size_t>(co) * d.cin + ci) * d.ksize;
                for (int k = 0; k < d.ksize; ++k) {
                    const double w = wrow[k];
                    const double* xk = xrow + k;
                    for (int t = 0; t < d.len_out; ++t) orow[t] += w * xk[t];
                }
            }
        }
    }

    Shape out_shape = d.batched ? Shape{d.batch, d.cout, d.len_out} : Shape{d.cout, d.len_out};
    Tensor r = Tensor::from(std::move(out_shape), std::move(out));
    detail::record("conv1d", {&x, &kernels, &bias}, r,
                   [xi = x.impl_ptr(), wi = kernels.impl_ptr(), bi = bias.impl_ptr(),
                    ri = r.impl_ptr(), d] {
                       const auto& g = ri->grad;
                       const double* xv = xi->values.data();
                       const double* wv = wi->values.data();
                       double* gw = wi->requires_grad ? wi->ensure_grad().data() : nullptr;
                       double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;
                       double* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
                       std::vector<double> xp(static_cast<size_t>(d.cin) * d.len_pad);
                       std::vector<double> gxp(static_cast<size_t>(d.cin) * d.len_pad);

                       for (int b = 0; b < d.batch; ++b) {
                           const double* gout = g.data() + static_cast<size_t>(b) * d.cout * d.len_out;
                           if (gw != nullptr) {
                               pad_sample(xv + static_cast<size_t>(b) * d.cin * d.len, xp.data(), d.cin,
                                          d.len, d.len_pad, d.pad_left);
                               for (int co = 0; co < d.cout; ++co) {
                                   const double* grow = gout + static_cast<size_t>(co) * d.len_out;
                                   for (int ci = 0; ci < d.cin; ++ci) {
                                       const double* xrow = xp.data() + static_cast<size_t>(ci) * d.len_pad;
                                       double* wrow = gw + (static_cast<size_t>(co) * d.cin + ci) * d.ksize;
                                       for (int k = 0; k < d.ksize; ++k) {
                                           const double* xk = xrow + k;
                                           double acc = 0.0;
                                           for (int t = 0; t < d.len_out; ++t) acc += grow[t] * xk[t];
                                           wrow[k] += acc;
                                       }
                                   }
                               }
                           }
                           if (gb != nullptr) {
                               for (int co = 0; co < d.cout; ++co) {
                                   const double* grow = gout + static_cast<size_t>(co) * d.len_out;
                                   double acc = 0.0;
                                   for (int t = 0; t < d.len_out; ++t) acc += grow[t];
                                   gb[co] += acc;
                               }
                           }
                           if (gx != nullptr) {
                               std::fill(gxp.begin(), gxp.end(), 0.0);
                               for (int co = 0; co < d.cout; ++co) {
                                   const double* grow = gout + static_cast<size_t>(co) * d.len_out;
                                   for (int ci = 0; ci < d.cin; ++ci) {
                                       double* gxrow = gxp.data() + static_cast<size_t>(ci) * d.len_pad;
                                       const double* wrow =
                                           wv + (static_cast<size_t>(co) * d.cin + ci) * d.ksize;
                                       for (int k = 0; k < d.ksize; ++k) {
                                           const double w = wrow[k];
                                           double* gxk = gxrow + k;
                                           for (int t = 0; t < d.len_out; ++t) gxk[t] += w * grow[t];
                                       }
                                   }
                               }
                               for (int ci = 0; ci < d.cin; ++ci) {
                                   const double* src = gxp.data() + static_cast<size_t>(ci) * d.len_pad +
                                                       d.pad_left;
                                   double* dst = gx + (static_cast<size_t>(b) * d.cin + ci) * d.len;
                                   for (int t = 0; t < d.len; ++t) dst[t] += src[t];
                               }
                           }
                       }
                   });
    return r;
}

// ---- softmax ----------------------------------------------------------------

Tensor softmax(const Tensor& x, int axis) {
    const Shape& s = x.shape();
    const int rank = static_cast<int>(s.size());
    if (axis < 0 || axis >= rank) throw DimensionError("softmax: axis out of range");
    for (double v : x.values()) {
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    }
    const long long d = s[static_cast<size_t>(axis)];
    long long outer = 1, inner = 1;
    for (int a = 0; a < axis; ++a) outer *= s[static_cast<size_t>(a)];
    for (int a = axis + 1; a < rank; ++a) inner *= s[static_cast<size_t>(a)];

    std::vector<double> out(x.values().size());
    const double* xv = x.values().data();
    for (long long o = 0; o < outer; ++o) {
        for (long long in = 0; in < inner; ++in) {
            const long long base = o * d * inner + in;
            double mx = xv[base];
            for (long long j = 1; j < d; ++j) mx = std::max(mx, xv[base + j * inner]);
            double denom = 0.0;
            for (long long j = 0; j < d; ++j) {
                const double e = std::exp(xv[base + j * inner] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                denom += e;
            }
            const double inv = 1.0 / denom;
            for (long long j = 0; j < d; ++j) out[static_cast<size_t>(base + j * inner)] *= inv;
        }
    }
    Tensor r = Tensor::from(s, std::move(out));
    detail::record("softmax", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr(), outer, inner, d] {
        if (!xi->requires_grad) return;
        const auto& g = ri->grad;
        const auto& y = ri->values;
        auto* gx = xi->ensure_grad().data();
        for (long long o = 0; o < outer; ++o) {
            for (long long in = 0; in < inner; ++in) {
                const long long base = o * d * inner + in;
                double dot = 0.0;
                for (long long j = 0; j < d; ++j) {
                    const auto idx = static_cast<size_t>(base + j * inner);
                    dot += g[idx] * y[idx];
                }
                for (long long j = 0; j < d; ++j) {
                    const auto idx = static_cast<size_t>(base + j * inner);
                    gx[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
    return r;
}

// ---- global average pool ------------------------------------------------------

Tensor global_avg_pool(const Tensor& x) {
    const bool batched = x.ndim() == 3;
    if (!batched && x.ndim() != 2) {
        throw DimensionError("global_avg_pool: input must be [C,L] or [B,C,L], got " +
                             shape_str(x.shape()));
    }
    const int rows = batched ? x.dim(0) * x.dim(1) : x.dim(0);
    const int len = x.dim(batched ? 2 : 1);
    if (len < 1) throw DimensionError("global_avg_pool: empty time axis");
    const double inv = 1.0 / len;
    std::vector<double> out(static_cast<size_t>(rows));
    const double* xv = x.values().data();
    for (int rix = 0; rix < rows; ++rix) {
        const double* row = xv + static_cast<size_t>(rix) * len;
        double acc = 0.0;
        for (int t = 0; t < len; ++t) acc += row[t];
        out[static_cast<size_t>(rix)] = acc * inv;
    }
    Shape out_shape = batched ? Shape{x.dim(0), x.dim(1)} : Shape{x.dim(0)};
    Tensor r = Tensor::from(std::move(out_shape), std::move(out));
    detail::record("global_avg_pool", {&x}, r, [xi = x.impl_ptr(), ri = r.impl_ptr(), rows, len, inv] {
        if (!xi->requires_grad) return;
        const auto& g = ri->grad;
        auto* gx = xi->ensure_grad().data();
        for (int rix = 0; rix < rows; ++rix) {
            const double gv = g[static_cast<size_t>(rix)] * inv;
            double* row = gx + static_cast<size_t>(rix) * len;
            for (int t = 0; t < len; ++t) row[t] += gv;
        }
    });
    return r;
}

// ---- batch norm ---------------------------------------------------------------

namespace {
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.9;
}  // namespace

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats,
                  BatchNormMode mode) {
    if (x.ndim() != 3) {
        throw DimensionError("batch_norm: input must be [B,C,L], got " + shape_str(x.shape()));
    }
    const int batch = x.dim(0), ch = x.dim(1), len = x.dim(2);
    if (gamma.ndim() != 1 || gamma.dim(0) != ch || beta.ndim() != 1 || beta.dim(0) != ch) {
        throw DimensionError("batch_norm: gamma/beta must be [C]");
    }
    if (static_cast<int>(stats.mean.size()) != ch) {
        throw ConfigError("batch_norm: running stats track " + std::to_string(stats.mean.size()) +
                          " channels, input has " + std::to_string(ch));
    }
    const bool train = mode == BatchNormMode::kTrain;
    if (train && batch < 2) {
        throw ConfigError("batch_norm: train mode requires batch >= 2, got " + std::to_string(batch));
    }

    const long long m = static_cast<long long>(batch) * len;  // samples per channel
    const double* xv = x.values().data();
    const double* gv = gamma.values().data();
    const double* bv = beta.values().data();

    std::vector<double> mean(static_cast<size_t>(ch)), var(static_cast<size_t>(ch));
    if (train) {
        for (int c = 0; c < ch; ++c) {
            double acc = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double* row = xv + (static_cast<size_t>(b) * ch + c) * len;
                for (int t = 0; t < len; ++t) acc += row[t];
            }
            const double mu = acc / static_cast<double>(m);
            double vacc = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double* row = xv + (static_cast<size_t>(b) * ch + c) * len;
                for (int t = 0; t < len; ++t) {
                    const double dv = row[t] - mu;
                    vacc += dv * dv;
                }
            }
            mean[static_cast<size_t>(c)] = mu;
            var[static_cast<size_t>(c)] = vacc / static_cast<double>(m);
        }
        for (int c = 0; c < ch; ++c) {
            stats.mean[static_cast<size_t>(c)] =
                kBnMomentum * stats.mean[static_cast<size_t>(c)] + (1.0 - kBnMomentum) * mean[static_cast<size_t>(c)];
            stats.var[static_cast<size_t>(c)] =
                kBnMomentum * stats.var[static_cast<size_t>(c)] + (1.0 - kBnMomentum) * var[static_cast<size_t>(c)];
        }
    } else {
        mean = stats.mean;
        var = stats.var;
    }

    std::vector<double> out(x.values().size());
    std::vector<double> inv_std(static_cast<size_t>(ch));
    for (int c = 0; c < ch; ++c)
        inv_std[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[static_cast<size_t>(c)] + kBnEps);
    for (int b = 0; b < batch; ++b) {
        for (int c = 0; c < ch; ++c) {
            const double* row = xv + (static_cast<size_t>(b) * ch + c) * len;
            double* orow = out.data() + (static_cast<size_t>(b) * ch + c) * len;
            const double mu = mean[static_cast<size_t>(c)];
            const double is = inv_std[static_cast<size_t>(c)];
            const double gm = gv[c], bt = bv[c];
            for (int t = 0; t < len; ++t) orow[t] = (row[t] - mu) * is * gm + bt;
        }
    }

    Tensor r = Tensor::from(x.shape(), std::move(out));
    detail::record(
        "batch_norm", {&x, &gamma, &beta}, r,
        [xi = x.impl_ptr(), gi = gamma.impl_ptr(), bi = beta.impl_ptr(), ri = r.impl_ptr(), mean,
         inv_std, batch, ch, len, m, train] {
            const auto& g = ri->grad;
            const double* xv = xi->values.data();
            const double* gv = gi->values.data();
            double* gx = xi->requires_grad ? xi->ensure_grad().data() : nullptr;
            double* gg = gi->requires_grad ? gi->ensure_grad().data() : nullptr;
            double* gb = bi->requires_grad ? bi->ensure_grad().data() : nullptr;

            for (int c = 0; c < ch; ++c) {
                const double mu = mean[static_cast<size_t>(c)];
                const double is = inv_std[static_cast<size_t>(c)];
                // Per-channel reductions over (B,L).
                double sum_g = 0.0, sum_gx = 0.0;
                for (int b = 0; b < batch; ++b) {
                    const size_t off = (static_cast<size_t>(b) * ch + c) * len;
                    const double* grow = g.data() + off;
                    const double* xrow = xv + off;
                    for (int t = 0; t < len; ++t) {
                        sum_g += grow[t];
                        sum_gx += grow[t] * (xrow[t] - mu) * is;
                    }
                }
                if (gg != nullptr) gg[c] += sum_gx;
                if (gb != nullptr) gb[c] += sum_g;
                if (gx == nullptr) continue;
                const double gm = gv[c];
                if (train) {
                    const double inv_m = 1.0 / static_cast<double>(m);
                    for (int b = 0; b < batch; ++b) {
                        const size_t off = (static_cast<size_t>(b) * ch + c) * len;
                        const double* grow = g.data() + off;
                        const double* xrow = xv + off;
                        double* gxrow = gx + off;
                        for (int t = 0; t < len; ++t) {
                            const double xhat = (xrow[t] - mu) * is;
                            gxrow[t] += gm * is * (grow[t] - inv_m * (sum_g + xhat * sum_gx));
                        }
                    }
                } else {
                    for (int b = 0; b < batch; ++b) {
                        const size_t off = (static_cast<size_t>(b) * ch + c) * len;
                        const double* grow = g.data() + off;
                        double* gxrow = gx + off;
                        for (int t = 0; t < len; ++t) gxrow[t] += gm * is * grow[t];
                    }
                }
            }
        });
    return r;
}

}  // namespace weakts
