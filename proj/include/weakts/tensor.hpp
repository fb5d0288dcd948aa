#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "weakts/errors.hpp"

namespace weakts {

using Shape = std::vector<int>;

long long shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {

struct TensorImpl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty until the backward sweep touches it
    bool requires_grad = false;
    Tape* tape = nullptr;  // tape this value was recorded on, if any
    std::uint64_t tape_generation = 0;

    long long size() const { return static_cast<long long>(values.size()); }
    std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense float64 n-d array in row-major order. Copies are shallow handles to
// the same storage; ops return fresh tensors. When a Tape is active and an
// input participates in differentiation, the producing op is recorded so that
// Tape::backward can accumulate gradients.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int axis) const { return impl_->shape[static_cast<size_t>(axis)]; }
    long long size() const { return impl_->size(); }

    const std::vector<double>& values() const { return impl_->values; }
    std::vector<double>& values() { return impl_->values; }
    double item() const;                             // 1-element tensors only
    double at(std::initializer_list<int> idx) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool b) { impl_->requires_grad = b; }
    bool has_grad() const { return impl_ && !impl_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad();

    detail::TensorImpl* impl() const { return impl_.get(); }
    std::shared_ptr<detail::TensorImpl> impl_ptr() const { return impl_; }

  private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

enum class Pad { kValid, kSame };
enum class BatchNormMode { kTrain, kEval };

// Per-channel running statistics owned by a batch-norm layer. Updated in
// train mode, read in eval mode.
struct BatchNormStats {
    std::vector<double> mean;
    std::vector<double> var;
    explicit BatchNormStats(int channels = 0)
        : mean(static_cast<size_t>(channels), 0.0), var(static_cast<size_t>(channels), 1.0) {}
};

// Records primitive applications in execution order (inputs always precede
// their outputs) and replays them in reverse to accumulate gradients.
// Single-threaded; distinct tapes are fully independent and may run on
// different threads.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Reverse sweep from `loss`, which must be a 1-element tensor recorded on
    // this tape. Every participating leaf reachable from the loss receives
    // dLoss/dLeaf in its grad buffer. Calling twice without reset() throws.
    void backward(const Tensor& loss);

    // Drops all recorded nodes and invalidates tensors recorded so far.
    void reset();

    std::size_t node_count() const { return nodes_.size(); }
    std::uint64_t generation() const { return generation_; }

    static Tape* active();

    // RAII activation of a tape on the current thread.
    class Scope {
      public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

      private:
        Tape* previous_;
    };

    void push_node(const char* op, std::shared_ptr<detail::TensorImpl> out,
                   std::function<void()> backward);

  private:
    struct Node {
        const char* op;
        std::shared_ptr<detail::TensorImpl> out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
    std::uint64_t generation_ = 1;
    bool swept_ = false;
};

namespace detail {

// Marks `out` as participating if any input does, and registers the backward
// closure on the active tape. No-op when gradients are not being tracked.
void record(const char* op, std::initializer_list<const Tensor*> inputs, Tensor& out,
            std::function<void()> backward);

}  // namespace detail

// ---- elementwise primitives --------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);  // multiply by a constant
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);

// ---- shape primitives ---------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor transpose(const Tensor& x);  // 2-d only
Tensor reshape(const Tensor& x, Shape shape);

// ---- reductions ---------------------------------------------------------

Tensor reduce_sum(const Tensor& x);   // -> [1]
Tensor reduce_mean(const Tensor& x);  // -> [1]

// ---- linear algebra / nn primitives --------------------------------------

// Standard matrix product of 2-d tensors [m,k]x[k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// 1-d cross-correlation (no kernel flip) of x [C_in,L] or [B,C_in,L] with
// kernels [C_out,C_in,K] and bias [C_out]. `same` zero-pads to preserve L.
// Each output element accumulates starting from the bias, then over input
// channels (outer) and kernel taps (inner); that summation order is part of
// the contract.
Tensor conv1d(const Tensor& x, const Tensor& kernels, const Tensor& bias, Pad pad);

// Exp-normalization along `axis` with max-subtraction; every slice along the
// axis sums to 1. Throws NumericError on non-finite input.
Tensor softmax(const Tensor& x, int axis);

// Per-channel mean over the trailing time axis: [C,L] -> [C], [B,C,L] -> [B,C].
Tensor global_avg_pool(const Tensor& x);

// Per-channel normalization of x [B,C,L] over the (B,L) slice, eps 1e-5.
// Train mode uses batch statistics and folds them into `stats` with momentum
// 0.9; eval mode reads `stats`. Affine gamma/beta of shape [C].
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormStats& stats, BatchNormMode mode);

}  // namespace weakts
