#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "e2r/rng.hpp"

namespace e2r {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& m) : std::runtime_error(m) {}
};
struct AutodiffError : std::runtime_error {
    explicit AutodiffError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;  // participates in differentiation
    bool leaf = true;            // not produced by a recorded op
    std::unique_ptr<std::vector<double>> grad;  // absent until backward touches it
};

// Dense row-major f64 tensor. Value-semantic handle over shared storage:
// copies alias the same buffer, which is what lets an optimizer update
// parameters through handles collected from a module.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
    static Tensor trunc_normal(Shape shape, Rng& rng, double stddev);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& vec() { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }
    double item() const;

    bool requires_grad() const { return impl_->requires_grad; }
    Tensor& set_requires_grad(bool b);

    bool has_grad() const { return impl_->grad != nullptr; }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_ref();  // allocates zeros if absent
    void zero_grad();                 // zeroes buffer if present
    void drop_grad();                 // removes the buffer entirely

    Tensor clone() const;  // deep copy (data only, no grad, leaf)

    std::shared_ptr<TensorImpl> impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<TensorImpl> impl);

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Ordered record of operations from one forward pass. Reverse iteration is
// reverse topological order because ops are recorded eagerly at execution.
class Tape {
public:
    struct Record {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> backward;
    };

    // Seeds d(loss)/d(loss) = 1 and runs every record's backward rule once,
    // in reverse order. Grad buffers accumulate additively across uses.
    void backward(const Tensor& loss);

    size_t size() const { return recs_.size(); }
    void clear() { recs_.clear(); }
    void push(Record r) { recs_.push_back(std::move(r)); }

    static Tape* active();

private:
    std::vector<Record> recs_;
};

// RAII guard making a tape the active recorder. No active tape = inference
// mode: ops do not record and outputs do not require grad.
class TapeScope {
public:
    explicit TapeScope(Tape& t);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

enum class Ew { add, sub, mul, scale, gelu, silu };

// op_kind dispatcher; binary kinds take b, scale takes c, unary kinds ignore both
Tensor elementwise(Ew kind, const Tensor& a, const Tensor& b = Tensor(), double c = 0.0);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);     // [m x k] * [k x n]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // [m x k] * [n x k]^T
// y = x * w^T (+ bias); w is [out x in], bias [out] (optional, pass Tensor())
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

Tensor softmax(const Tensor& a, int axis);
// normalization over the last axis; gain/bias are [last] vectors or undefined
Tensor layernorm(const Tensor& a, const Tensor& gain = Tensor(),
                 const Tensor& bias = Tensor(), double eps = 1e-6);

Tensor sum(const Tensor& a);   // -> shape {1}
Tensor mean(const Tensor& a);  // -> shape {1}
Tensor mse(const Tensor& a, const Tensor& b);

Tensor reshape(const Tensor& a, Shape shape);  // copies (no strided views)
Tensor transpose2d(const Tensor& a);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
// rows of table selected by ids -> [ids.size() x d]; backward scatters
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
// out[i] = a[index[i]] for a precomputed (usually bijective) index map;
// used for the patch <-> pixel rearrangements
Tensor permute_elements(const Tensor& a, std::shared_ptr<const std::vector<int64_t>> index,
                        Shape out_shape);

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    double tol = 0.0;
    int64_t worst_coord = -1;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::string detail;
};

// Central-difference verification of d f(x) / d x. f must build its graph
// from the tensor it is handed. max_coords > 0 samples that many coordinates
// (deterministically from coord_seed) instead of sweeping all of them.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f,
                           const Tensor& x, double h = 1e-5, double tol = 1e-4,
                           int max_coords = -1, uint64_t coord_seed = 0);

uint64_t tensor_checksum(const Tensor& t);

}  // namespace e2r
