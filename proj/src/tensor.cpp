#include "e2r/tensor.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "e2r/kernels.hpp"

namespace e2r {

namespace {

thread_local Tape* t_active = nullptr;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

void check_shape_positive(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (int d : s)
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
}

std::vector<double>& grad_buf(TensorImpl& t) {
    if (!t.grad) t.grad = std::make_unique<std::vector<double>>(t.data.size(), 0.0);
    return *t.grad;
}

#ifndef NDEBUG
void debug_check_finite(const char* op, const std::vector<double>& v) {
    (void)op;
    for (double x : v) assert(std::isfinite(x) && "non-finite value produced by op");
}
#else
void debug_check_finite(const char*, const std::vector<double>&) {}
#endif

// leading-1 broadcasting: the smaller operand, after stripping leading 1s,
// must equal a trailing suffix of the larger shape. It then tiles as a
// contiguous block. Returns 0 equal, 1 b tiles onto a, 2 a tiles onto b.
bool suffix_match(const Shape& big, const Shape& small) {
    size_t k = 0;
    while (k < small.size() && small[k] == 1) ++k;
    size_t len = small.size() - k;
    if (len > big.size()) return false;
    for (size_t i = 0; i < len; ++i)
        if (small[k + i] != big[big.size() - len + i]) return false;
    return true;
}

int broadcast_mode(const char* op, const Shape& a, const Shape& b) {
    if (a == b) return 0;
    int64_t na = shape_numel(a), nb = shape_numel(b);
    if (nb <= na && suffix_match(a, b)) return 1;
    if (na < nb && suffix_match(b, a)) return 2;
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                     " are not broadcast-compatible (leading-1 broadcasting only)");
}

}  // namespace

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

Tensor Tensor::zeros(Shape shape) {
    check_shape_positive(shape);
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
    impl->shape = std::move(shape);
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.vec().begin(), t.vec().end(), v);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
    check_shape_positive(shape);
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.vec()) x = rng.normal() * stddev;
    return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (double& x : t.vec()) x = rng.trunc_normal(stddev);
    return t;
}

double Tensor::item() const {
    if (numel() != 1)
        throw AutodiffError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_->grad) throw AutodiffError("grad(): no gradient buffer present");
    return *impl_->grad;
}

std::vector<double>& Tensor::grad_ref() { return grad_buf(*impl_); }

void Tensor::zero_grad() {
    if (impl_->grad) std::fill(impl_->grad->begin(), impl_->grad->end(), 0.0);
}

void Tensor::drop_grad() { impl_->grad.reset(); }

Tensor Tensor::clone() const {
    Tensor t = Tensor::from(impl_->shape, impl_->data);
    return t;
}

Tensor Tensor::wrap(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

Tape* Tape::active() { return t_active; }

TapeScope::TapeScope(Tape& t) : prev_(t_active) { t_active = &t; }
TapeScope::~TapeScope() { t_active = prev_; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw AutodiffError("backward: loss must be a scalar tensor, got shape " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    grad_buf(*loss.impl())[0] += 1.0;
    for (auto it = recs_.rbegin(); it != recs_.rend(); ++it)
        if (it->out->grad) it->backward();
}

namespace {

bool recording(std::initializer_list<const Tensor*> ins) {
    if (t_active == nullptr) return false;
    for (const Tensor* t : ins)
        if (t != nullptr && t->defined() && t->requires_grad()) return true;
    return false;
}

Tensor finish_op(const char* name, Tensor out, bool rec, std::function<void()> bw) {
    debug_check_finite(name, out.vec());
    if (rec) {
        out.impl()->requires_grad = true;
        out.impl()->leaf = false;
        t_active->push({out.impl(), std::move(bw)});
    }
    return out;
}

void axpy(std::vector<double>& y, const std::vector<double>& x, double a = 1.0) {
    for (size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

}  // namespace

Tensor elementwise(Ew kind, const Tensor& a, const Tensor& b, double c) {
    switch (kind) {
        case Ew::add: return add(a, b);
        case Ew::sub: return sub(a, b);
        case Ew::mul: return mul(a, b);
        case Ew::scale: return scale(a, c);
        case Ew::gelu: return gelu(a);
        case Ew::silu: return silu(a);
    }
    throw AutodiffError("elementwise: unknown op kind");
}

namespace {

// shared body for add/sub/mul with leading-1 tiling
template <typename Fwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 int which) {  // 0 add, 1 sub, 2 mul
    int mode = broadcast_mode(name, a.shape(), b.shape());
    const Tensor& big = (mode == 2) ? b : a;
    int64_t n = big.numel();
    int64_t na = a.numel(), nb = b.numel();
    std::vector<double> out(static_cast<size_t>(n));
    const double* pa = a.data();
    const double* pb = b.data();
    for (int64_t i = 0; i < n; ++i)
        out[static_cast<size_t>(i)] = fwd(pa[mode == 2 ? i % na : i], pb[mode == 1 ? i % nb : i]);

    bool rec = recording({&a, &b});
    Tensor t = Tensor::from(big.shape(), std::move(out));
    if (!rec) return finish_op(name, std::move(t), false, {});
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = t.impl();
    auto bw = [ai, bi, oi, mode, which, na, nb, n]() {
        const std::vector<double>& go = *oi->grad;
        if (ai->requires_grad) {
            std::vector<double>& ga = grad_buf(*ai);
            for (int64_t i = 0; i < n; ++i) {
                double g = go[static_cast<size_t>(i)];
                if (which == 2) g *= bi->data[static_cast<size_t>(mode == 1 ? i % nb : i)];
                ga[static_cast<size_t>(mode == 2 ? i % na : i)] += g;
            }
        }
        if (bi->requires_grad) {
            std::vector<double>& gb = grad_buf(*bi);
            for (int64_t i = 0; i < n; ++i) {
                double g = go[static_cast<size_t>(i)];
                if (which == 1) g = -g;
                if (which == 2) g *= ai->data[static_cast<size_t>(mode == 2 ? i % na : i)];
                gb[static_cast<size_t>(mode == 1 ? i % nb : i)] += g;
            }
        }
    };
    return finish_op(name, std::move(t), true, std::move(bw));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b, [](double x, double y) { return x + y; }, 0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b, [](double x, double y) { return x - y; }, 1);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b, [](double x, double y) { return x * y; }, 2);
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.vec());
    for (double& x : out) x *= c;
    bool rec = recording({&a});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("scale", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("scale", std::move(t), true, [ai, oi, c]() {
        if (!ai->requires_grad) return;
        axpy(grad_buf(*ai), *oi->grad, c);
    });
}

Tensor add_scalar(const Tensor& a, double c) {
    std::vector<double> out(a.vec());
    for (double& x : out) x += c;
    bool rec = recording({&a});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("add_scalar", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("add_scalar", std::move(t), true, [ai, oi]() {
        if (!ai->requires_grad) return;
        axpy(grad_buf(*ai), *oi->grad);
    });
}

namespace {
constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;            // cubic coefficient, tanh form
}  // namespace

Tensor gelu(const Tensor& a) {
    std::vector<double> out(a.vec().size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double x = p[i];
        out[i] = 0.5 * x * (1.0 + std::tanh(kGeluC0 * (x + kGeluC1 * x * x * x)));
    }
    bool rec = recording({&a});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("gelu", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("gelu", std::move(t), true, [ai, oi]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (size_t i = 0; i < ga.size(); ++i) {
            double x = ai->data[i];
            double u = kGeluC0 * (x + kGeluC1 * x * x * x);
            double th = std::tanh(u);
            double d = 0.5 * (1.0 + th) +
                       0.5 * x * (1.0 - th * th) * kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
            ga[i] += go[i] * d;
        }
    });
}

Tensor silu(const Tensor& a) {
    std::vector<double> out(a.vec().size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-p[i]));
        out[i] = p[i] * s;
    }
    bool rec = recording({&a});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("silu", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("silu", std::move(t), true, [ai, oi]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (size_t i = 0; i < ga.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-ai->data[i]));
            ga[i] += go[i] * s * (1.0 + ai->data[i] * (1.0 - s));
        }
    });
}

namespace {
void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2)
        throw ShapeError(std::string(op) + ": expected a rank-2 tensor, got " +
                         shape_str(t.shape()));
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor t = Tensor::zeros({m, n});
    kern::matmul_nn(a.data(), b.data(), t.data(), m, k, n);
    bool rec = recording({&a, &b});
    if (!rec) return finish_op("matmul", std::move(t), false, {});
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = t.impl();
    return finish_op("matmul", std::move(t), true, [ai, bi, oi, m, k, n]() {
        const double* go = oi->grad->data();
        if (ai->requires_grad)  // dA += dC * B^T
            kern::matmul_nt(go, bi->data.data(), grad_buf(*ai).data(), m, n, k, true);
        if (bi->requires_grad)  // dB += A^T * dC
            kern::matmul_tn(ai->data.data(), go, grad_buf(*bi).data(), m, k, n, true);
    });
}

Tensor matmul_bt(const Tensor& a, const Tensor& b) {
    require_rank2("matmul_bt", a);
    require_rank2("matmul_bt", b);
    int m = a.dim(0), k = a.dim(1), n = b.dim(0);
    if (k != b.dim(1))
        throw ShapeError("matmul_bt: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + "^T");
    Tensor t = Tensor::zeros({m, n});
    kern::matmul_nt(a.data(), b.data(), t.data(), m, k, n);
    bool rec = recording({&a, &b});
    if (!rec) return finish_op("matmul_bt", std::move(t), false, {});
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = t.impl();
    return finish_op("matmul_bt", std::move(t), true, [ai, bi, oi, m, k, n]() {
        const double* go = oi->grad->data();
        if (ai->requires_grad)  // dA += dC * B
            kern::matmul_nn(go, bi->data.data(), grad_buf(*ai).data(), m, n, k, true);
        if (bi->requires_grad)  // dB += dC^T * A
            kern::matmul_tn(go, ai->data.data(), grad_buf(*bi).data(), m, n, k, true);
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank2("linear", x);
    require_rank2("linear", w);
    int t_rows = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (in != w.dim(1))
        throw ShapeError("linear: input width " + shape_str(x.shape()) +
                         " does not match weight " + shape_str(w.shape()));
    if (bias.defined() && bias.numel() != out_dim)
        throw ShapeError("linear: bias length does not match weight rows");
    Tensor t = Tensor::zeros({t_rows, out_dim});
    kern::matmul_nt(x.data(), w.data(), t.data(), t_rows, in, out_dim);
    if (bias.defined()) {
        double* p = t.data();
        const double* pb = bias.data();
        for (int i = 0; i < t_rows; ++i)
            for (int j = 0; j < out_dim; ++j) p[static_cast<int64_t>(i) * out_dim + j] += pb[j];
    }
    const Tensor* bptr = bias.defined() ? &bias : nullptr;
    bool rec = recording({&x, &w, bptr});
    if (!rec) return finish_op("linear", std::move(t), false, {});
    auto xi = x.impl();
    auto wi = w.impl();
    auto bi = bias.defined() ? bias.impl() : nullptr;
    auto oi = t.impl();
    return finish_op("linear", std::move(t), true, [xi, wi, bi, oi, t_rows, in, out_dim]() {
        const double* go = oi->grad->data();
        if (xi->requires_grad)  // dX += dY * W
            kern::matmul_nn(go, wi->data.data(), grad_buf(*xi).data(), t_rows, out_dim, in, true);
        if (wi->requires_grad)  // dW += dY^T * X
            kern::matmul_tn(go, xi->data.data(), grad_buf(*wi).data(), t_rows, out_dim, in, true);
        if (bi && bi->requires_grad) {
            std::vector<double>& gb = grad_buf(*bi);
            for (int i = 0; i < t_rows; ++i)
                for (int j = 0; j < out_dim; ++j)
                    gb[static_cast<size_t>(j)] += go[static_cast<int64_t>(i) * out_dim + j];
        }
    });
}

Tensor softmax(const Tensor& a, int axis) {
    int r = a.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis out of range for shape " + shape_str(a.shape()));
    int64_t n = a.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= a.dim(i);
    for (int i = 0; i < axis; ++i) outer *= a.dim(i);

    std::vector<double> out(a.vec().size());
    const double* p = a.data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            double mx = p[base];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, p[base + j * inner]);
            double z = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                double e = std::exp(p[base + j * inner] - mx);
                out[static_cast<size_t>(base + j * inner)] = e;
                z += e;
            }
            for (int64_t j = 0; j < n; ++j) out[static_cast<size_t>(base + j * inner)] /= z;
        }
    }
    bool rec = recording({&a});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("softmax", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("softmax", std::move(t), true, [ai, oi, outer, n, inner]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        const std::vector<double>& y = oi->data;
        std::vector<double>& ga = grad_buf(*ai);
        for (int64_t o = 0; o < outer; ++o) {
            for (int64_t in = 0; in < inner; ++in) {
                const int64_t base = o * n * inner + in;
                double dot = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    size_t idx = static_cast<size_t>(base + j * inner);
                    dot += go[idx] * y[idx];
                }
                for (int64_t j = 0; j < n; ++j) {
                    size_t idx = static_cast<size_t>(base + j * inner);
                    ga[idx] += y[idx] * (go[idx] - dot);
                }
            }
        }
    });
}

Tensor layernorm(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0) throw NumericError("layernorm: eps must be positive");
    int64_t n = a.dim(a.rank() - 1);
    int64_t rows = a.numel() / n;
    if (gain.defined() && gain.numel() != n)
        throw ShapeError("layernorm: gain length " + std::to_string(gain.numel()) +
                         " does not match last extent " + std::to_string(n));
    if (bias.defined() && bias.numel() != n)
        throw ShapeError("layernorm: bias length does not match last extent");

    std::vector<double> out(a.vec().size());
    auto xhat = std::make_shared<std::vector<double>>(a.vec().size());
    auto inv_std = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
    const double* p = a.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* row = p + r * n;
        double mu = 0.0;
        for (int64_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; ++j) {
            double d = row[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(n);
        double inv = 1.0 / std::sqrt(var + eps);
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < n; ++j) {
            double xh = (row[j] - mu) * inv;
            (*xhat)[static_cast<size_t>(r * n + j)] = xh;
            double y = xh;
            if (gain.defined()) y *= gain.data()[j];
            if (bias.defined()) y += bias.data()[j];
            out[static_cast<size_t>(r * n + j)] = y;
        }
    }
    const Tensor* gptr = gain.defined() ? &gain : nullptr;
    const Tensor* bptr = bias.defined() ? &bias : nullptr;
    bool rec = recording({&a, gptr, bptr});
    Tensor t = Tensor::from(a.shape(), std::move(out));
    if (!rec) return finish_op("layernorm", std::move(t), false, {});
    auto ai = a.impl();
    auto gi = gain.defined() ? gain.impl() : nullptr;
    auto bi = bias.defined() ? bias.impl() : nullptr;
    auto oi = t.impl();
    return finish_op("layernorm", std::move(t), true, [ai, gi, bi, oi, xhat, inv_std, rows, n]() {
        const std::vector<double>& go = *oi->grad;
        if (gi && gi->requires_grad) {
            std::vector<double>& gg = grad_buf(*gi);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j)
                    gg[static_cast<size_t>(j)] +=
                        go[static_cast<size_t>(r * n + j)] * (*xhat)[static_cast<size_t>(r * n + j)];
        }
        if (bi && bi->requires_grad) {
            std::vector<double>& gb = grad_buf(*bi);
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t j = 0; j < n; ++j)
                    gb[static_cast<size_t>(j)] += go[static_cast<size_t>(r * n + j)];
        }
        if (!ai->requires_grad) return;
        std::vector<double>& ga = grad_buf(*ai);
        for (int64_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                size_t idx = static_cast<size_t>(r * n + j);
                double dxh = go[idx];
                if (gi) dxh *= gi->data[static_cast<size_t>(j)];
                m1 += dxh;
                m2 += dxh * (*xhat)[idx];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            double inv = (*inv_std)[static_cast<size_t>(r)];
            for (int64_t j = 0; j < n; ++j) {
                size_t idx = static_cast<size_t>(r * n + j);
                double dxh = go[idx];
                if (gi) dxh *= gi->data[static_cast<size_t>(j)];
                ga[idx] += inv * (dxh - m1 - (*xhat)[idx] * m2);
            }
        }
    });
}

namespace {
Tensor reduce_op(const char* name, const Tensor& a, double w) {
    double s = 0.0;
    for (double x : a.vec()) s += x;
    s *= w;
    bool rec = recording({&a});
    Tensor t = Tensor::scalar(s);
    if (!rec) return finish_op(name, std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op(name, std::move(t), true, [ai, oi, w]() {
        if (!ai->requires_grad) return;
        double g = (*oi->grad)[0] * w;
        std::vector<double>& ga = grad_buf(*ai);
        for (double& x : ga) x += g;
    });
}
}  // namespace

Tensor sum(const Tensor& a) { return reduce_op("sum", a, 1.0); }

Tensor mean(const Tensor& a) { return reduce_op("mean", a, 1.0 / static_cast<double>(a.numel())); }

Tensor mse(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mse: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor d = sub(a, b);
    return mean(mul(d, d));
}

Tensor reshape(const Tensor& a, Shape shape) {
    check_shape_positive(shape);
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: element count mismatch, " + shape_str(a.shape()) + " -> " +
                         shape_str(shape));
    std::vector<double> out(a.vec());
    bool rec = recording({&a});
    Tensor t = Tensor::from(std::move(shape), std::move(out));
    if (!rec) return finish_op("reshape", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("reshape", std::move(t), true, [ai, oi]() {
        if (!ai->requires_grad) return;
        axpy(grad_buf(*ai), *oi->grad);
    });
}

Tensor transpose2d(const Tensor& a) {
    require_rank2("transpose2d", a);
    int m = a.dim(0), n = a.dim(1);
    std::vector<double> out(a.vec().size());
    const double* p = a.data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<size_t>(static_cast<int64_t>(j) * m + i)] =
                p[static_cast<int64_t>(i) * n + j];
    bool rec = recording({&a});
    Tensor t = Tensor::from({n, m}, std::move(out));
    if (!rec) return finish_op("transpose2d", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("transpose2d", std::move(t), true, [ai, oi, m, n]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                ga[static_cast<size_t>(static_cast<int64_t>(i) * n + j)] +=
                    go[static_cast<size_t>(static_cast<int64_t>(j) * m + i)];
    });
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_rank2("slice_rows", a);
    int m = a.dim(0), n = a.dim(1);
    if (r0 < 0 || r1 > m || r0 >= r1)
        throw ShapeError("slice_rows: invalid range [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") for " + shape_str(a.shape()));
    std::vector<double> out(a.data() + static_cast<int64_t>(r0) * n,
                            a.data() + static_cast<int64_t>(r1) * n);
    bool rec = recording({&a});
    Tensor t = Tensor::from({r1 - r0, n}, std::move(out));
    if (!rec) return finish_op("slice_rows", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("slice_rows", std::move(t), true, [ai, oi, r0, n]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (size_t i = 0; i < go.size(); ++i)
            ga[static_cast<size_t>(static_cast<int64_t>(r0) * n) + i] += go[i];
    });
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_rank2("slice_cols", a);
    int m = a.dim(0), n = a.dim(1);
    if (c0 < 0 || c1 > n || c0 >= c1)
        throw ShapeError("slice_cols: invalid range [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") for " + shape_str(a.shape()));
    int w = c1 - c0;
    std::vector<double> out(static_cast<size_t>(m) * w);
    const double* p = a.data();
    for (int i = 0; i < m; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * w,
                    p + static_cast<int64_t>(i) * n + c0, sizeof(double) * w);
    bool rec = recording({&a});
    Tensor t = Tensor::from({m, w}, std::move(out));
    if (!rec) return finish_op("slice_cols", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("slice_cols", std::move(t), true, [ai, oi, m, n, c0, w]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                ga[static_cast<size_t>(static_cast<int64_t>(i) * n + c0 + j)] +=
                    go[static_cast<size_t>(static_cast<int64_t>(i) * w + j)];
    });
}

namespace {
Tensor concat_impl(const char* name, const std::vector<Tensor>& parts, bool rows) {
    if (parts.empty()) throw ShapeError(std::string(name) + ": no parts");
    for (const Tensor& p : parts) require_rank2(name, p);
    int fixed = rows ? parts[0].dim(1) : parts[0].dim(0);
    int total = 0;
    for (const Tensor& p : parts) {
        int f = rows ? p.dim(1) : p.dim(0);
        if (f != fixed)
            throw ShapeError(std::string(name) + ": mismatched extents, " +
                             shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
        total += rows ? p.dim(0) : p.dim(1);
    }
    int m = rows ? total : fixed;
    int n = rows ? fixed : total;
    std::vector<double> out(static_cast<size_t>(m) * n);
    if (rows) {
        size_t off = 0;
        for (const Tensor& p : parts) {
            std::memcpy(out.data() + off, p.data(), sizeof(double) * p.vec().size());
            off += p.vec().size();
        }
    } else {
        int c0 = 0;
        for (const Tensor& p : parts) {
            int w = p.dim(1);
            for (int i = 0; i < m; ++i)
                std::memcpy(out.data() + static_cast<int64_t>(i) * n + c0,
                            p.data() + static_cast<int64_t>(i) * w, sizeof(double) * w);
            c0 += w;
        }
    }
    bool rec = false;
    for (const Tensor& p : parts)
        if (recording({&p})) rec = true;
    Tensor t = Tensor::from({m, n}, std::move(out));
    if (!rec) return finish_op(name, std::move(t), false, {});
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const Tensor& p : parts) impls.push_back(p.impl());
    auto oi = t.impl();
    return finish_op(name, std::move(t), true, [impls, oi, m, n, rows]() {
        const std::vector<double>& go = *oi->grad;
        if (rows) {
            size_t off = 0;
            for (const auto& pi : impls) {
                if (pi->requires_grad) {
                    std::vector<double>& gp = grad_buf(*pi);
                    for (size_t i = 0; i < gp.size(); ++i) gp[i] += go[off + i];
                }
                off += pi->data.size();
            }
        } else {
            int c0 = 0;
            for (const auto& pi : impls) {
                int w = pi->shape[1];
                if (pi->requires_grad) {
                    std::vector<double>& gp = grad_buf(*pi);
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            gp[static_cast<size_t>(static_cast<int64_t>(i) * w + j)] +=
                                go[static_cast<size_t>(static_cast<int64_t>(i) * n + c0 + j)];
                }
                c0 += w;
            }
        }
    });
}
}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) { return concat_impl("concat_rows", parts, true); }

Tensor concat_cols(const std::vector<Tensor>& parts) { return concat_impl("concat_cols", parts, false); }

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    require_rank2("embedding", table);
    int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v)
            throw ShapeError("embedding: id " + std::to_string(id) + " out of range [0, " +
                             std::to_string(v) + ")");
    int l = static_cast<int>(ids.size());
    std::vector<double> out(static_cast<size_t>(l) * d);
    for (int i = 0; i < l; ++i)
        std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                    table.data() + static_cast<int64_t>(ids[static_cast<size_t>(i)]) * d,
                    sizeof(double) * d);
    bool rec = recording({&table});
    Tensor t = Tensor::from({l, d}, std::move(out));
    if (!rec) return finish_op("embedding", std::move(t), false, {});
    auto ti = table.impl();
    auto oi = t.impl();
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    return finish_op("embedding", std::move(t), true, [ti, oi, ids_copy, d]() {
        if (!ti->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& gt = grad_buf(*ti);
        for (size_t i = 0; i < ids_copy->size(); ++i)
            for (int j = 0; j < d; ++j)
                gt[static_cast<size_t>(static_cast<int64_t>((*ids_copy)[i]) * d + j)] +=
                    go[static_cast<size_t>(static_cast<int64_t>(i) * d + j)];
    });
}

Tensor permute_elements(const Tensor& a, std::shared_ptr<const std::vector<int64_t>> index,
                        Shape out_shape) {
    check_shape_positive(out_shape);
    if (static_cast<int64_t>(index->size()) != shape_numel(out_shape))
        throw ShapeError("permute_elements: index length does not match output shape");
    std::vector<double> out(index->size());
    const double* p = a.data();
    for (size_t i = 0; i < out.size(); ++i) out[i] = p[(*index)[i]];
    bool rec = recording({&a});
    Tensor t = Tensor::from(std::move(out_shape), std::move(out));
    if (!rec) return finish_op("permute_elements", std::move(t), false, {});
    auto ai = a.impl();
    auto oi = t.impl();
    return finish_op("permute_elements", std::move(t), true, [ai, oi, index]() {
        if (!ai->requires_grad) return;
        const std::vector<double>& go = *oi->grad;
        std::vector<double>& ga = grad_buf(*ai);
        for (size_t i = 0; i < go.size(); ++i) ga[static_cast<size_t>((*index)[i])] += go[i];
    });
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h, double tol, int max_coords, uint64_t coord_seed) {
    Tensor xx = x;
    bool prev_rg = xx.requires_grad();
    xx.set_requires_grad(true);
    xx.drop_grad();

    Tape tape;
    {
        TapeScope scope(tape);
        Tensor y = f(xx);
        if (!y.defined() || y.numel() != 1)
            throw AutodiffError("grad_check: f must be scalar-valued");
        tape.backward(y);
    }
    std::vector<double> ga = xx.has_grad()
                                 ? xx.grad()
                                 : std::vector<double>(static_cast<size_t>(xx.numel()), 0.0);

    std::vector<int64_t> coords;
    int64_t n = xx.numel();
    if (max_coords <= 0 || max_coords >= n) {
        coords.resize(static_cast<size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
    } else {
        Rng rng(coord_seed);
        std::unordered_set<int64_t> seen;
        while (static_cast<int>(coords.size()) < max_coords) {
            int64_t c = rng.uniform_int(n);
            if (seen.insert(c).second) coords.push_back(c);
        }
    }

    GradCheckReport rep;
    rep.tol = tol;
    for (int64_t c : coords) {
        double orig = xx.data()[c];
        xx.data()[c] = orig + h;
        double yp = f(xx).item();
        xx.data()[c] = orig - h;
        double ym = f(xx).item();
        xx.data()[c] = orig;
        double gn = (yp - ym) / (2.0 * h);
        double gav = ga[static_cast<size_t>(c)];
        // the denominator floor keeps coordinates whose true gradient sits
        // below the central-difference noise floor from dominating the report
        double rel = std::abs(gav - gn) / std::max(1e-4, std::abs(gav) + std::abs(gn));
        if (rel >= rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_coord = c;
            rep.analytic_at_worst = gav;
            rep.numeric_at_worst = gn;
        }
    }
    rep.pass = rep.max_rel_err < tol;
    {
        std::ostringstream os;
        os << (rep.pass ? "pass" : "FAIL") << ": max rel err " << rep.max_rel_err << " at coord "
           << rep.worst_coord << " (analytic " << rep.analytic_at_worst << ", numeric "
           << rep.numeric_at_worst << ", tol " << tol << ")";
        rep.detail = os.str();
    }
    xx.set_requires_grad(prev_rg);
    xx.drop_grad();
    return rep;
}

uint64_t tensor_checksum(const Tensor& t) {
    uint64_t h = fnv1a64(t.data(), sizeof(double) * t.vec().size());
    for (int d : t.shape()) h = fnv1a64(&d, sizeof(d), h);
    return h;
}

}  // namespace e2r
