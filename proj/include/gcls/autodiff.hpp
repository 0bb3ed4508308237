#pragma once

// Reverse-mode differentiation over a define-by-run tape. Every primitive
// computes its forward value eagerly and records a closure that maps the
// output gradient back onto its inputs. All arithmetic is in double.

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gcls/kernels.hpp"
#include "gcls/rng.hpp"

namespace gcls::ad {

/// Dense row-major 2-D tensor. Scalars are 1x1, vectors 1xn.
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> v);
  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::array<std::size_t, 2> shape() const { return {rows, cols}; }
  std::size_t size() const { return values.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double* row(std::size_t r) { return values.data() + r * cols; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }
  double item() const;

  bool operator==(const Tensor&) const = default;
};

class Tape;

/// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::uint32_t self)>;

  /// `train` enables dropout; masks are drawn from a stream seeded by dropout_seed.
  explicit Tape(bool train = false, std::uint64_t dropout_seed = 0) : train_(train), rng_(dropout_seed) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Differentiable input. When grad_sink is set, backward adds this leaf's
  /// gradient into it (resizing an empty sink).
  Var leaf(Tensor value, Tensor* grad_sink = nullptr);

  const Tensor& value(Var v) const;
  /// Gradient of a node after backward; zero-sized when it never received one.
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse. The tape is
  /// consumed: a second call throws DetachedLoss.
  void backward(Var loss);
  /// Same with an explicit upstream gradient for a non-scalar output.
  void backward(Var output, const Tensor& seed);

  bool train() const { return train_; }
  Rng& rng() { return rng_; }
  std::size_t size() const { return nodes_.size(); }

  /// Sign pattern of every ReLU input seen so far, in execution order.
  const std::vector<std::uint8_t>& relu_pattern() const { return relu_pattern_; }
  void record_relu_signs(const Tensor& pre);

  // Primitive authoring interface.
  Var push(Tensor value, std::vector<std::uint32_t> parents, BackwardFn backward);
  Tensor& grad_mut(std::uint32_t id);
  bool needs_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    BackwardFn backward;
    Tensor* sink = nullptr;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
  bool train_;
  bool consumed_ = false;
  Rng rng_;
  std::vector<std::uint8_t> relu_pattern_;
};

// Primitives. Shapes are checked; mismatches throw ShapeMismatch and any
// non-finite forward value throws NonFiniteValue.

Var matmul(Var a, Var b);     // [m x k] * [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] * [n x k]^T
Var add(Var a, Var b);
Var add_row(Var a, Var row);  // broadcast a 1 x n row over every row of a
Var scale(Var a, double c);
Var mul(Var a, Var b);        // elementwise
Var sum(Var a);               // -> 1x1
Var transpose(Var a);
Var relu(Var a);
/// Inverted dropout in training mode (mask / (1-p)); identity otherwise.
Var dropout(Var a, double p);
/// Per-row normalization with learnable gain/bias (1 x n each).
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// out[v] = mean over incoming neighbours of h (zero when there are none).
Var relation_mean(Var h, const kernels::RelationCsr& rel);
Var mean_rows(Var a);  // -> 1 x n
/// One mean row per half-open row range; empty ranges are not allowed.
Var segment_mean(Var a, std::span<const std::pair<std::size_t, std::size_t>> ranges);
Var stack_rows(std::span<const Var> rows);
/// Row-wise L2 normalization; throws ZeroRow on a zero-norm row.
Var l2_normalize_rows(Var a);
/// -(1/B) sum_i log softmax(S_i)_i, stabilized by row-max subtraction.
Var diag_cross_entropy(Var s);
/// sum_b coeffs(r, b) * bases[b]
Var basis_combine(Var coeffs, std::size_t r, std::span<const Var> bases);
/// sum_r coeffs(r, b) * terms[r]
Var relation_combine(Var coeffs, std::size_t b, std::span<const Var> terms);

struct GradCheckOptions {
  double h = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded sample of this many per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t sample_seed = 0;
  bool train = false;
  std::uint64_t dropout_seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // coordinates whose perturbation flips a ReLU
  std::string worst;         // "input:index" of the worst coordinate
};

using MultiScalarFn = std::function<Var(Tape&, std::span<const Var>)>;
using ScalarFn = std::function<Var(Tape&, Var)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h against the analytic
/// gradient, relative error |a-b| / max(|a|, |b|, 1e-8). A coordinate is
/// excluded when either perturbation changes the ReLU sign pattern.
GradCheckResult gradient_check(const MultiScalarFn& f, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& options = {});
GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double h);

}  // namespace gcls::ad
