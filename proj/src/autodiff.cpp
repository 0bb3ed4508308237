#include "gcls/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gcls/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace gcls::ad {

namespace {

#if defined(__GLIBC__)
// Tape tensors are short-lived and often larger than glibc's mmap threshold;
// serving them from the heap avoids a page-fault storm on every allocation.
[[maybe_unused]] const bool kAllocatorTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
#endif

std::string shape_str(const Tensor& t) { return std::to_string(t.rows) + "x" + std::to_string(t.cols); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < src.values.size(); ++i) dst.values[i] += src.values[i];
}

}  // namespace

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> v) : rows(r), cols(c), values(std::move(v)) {
  if (values.size() != r * c) throw Error(ErrorCode::ShapeMismatch, "tensor data size does not match shape");
}

double Tensor::item() const {
  if (values.size() != 1) throw Error(ErrorCode::ShapeMismatch, "item() on " + shape_str(*this));
  return values[0];
}

const Tensor& Var::value() const { return tape->value(*this); }

void Tape::check_owned(Var v) const {
  if (v.tape != this || v.id >= nodes_.size()) throw Error(ErrorCode::DetachedLoss, "variable is not on this tape");
}

Var Tape::constant(Tensor value) { return push(std::move(value), {}, nullptr); }

Var Tape::leaf(Tensor value, Tensor* grad_sink) {
  Var v = push(std::move(value), {}, nullptr);
  nodes_[v.id].requires_grad = true;
  nodes_[v.id].sink = grad_sink;
  return v;
}

const Tensor& Tape::value(Var v) const {
  check_owned(v);
  return nodes_[v.id].value;
}

const Tensor& Tape::grad(Var v) const {
  check_owned(v);
  return nodes_[v.id].grad;
}

Tensor& Tape::grad_mut(std::uint32_t id) {
  auto& n = nodes_[id];
  if (n.grad.values.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
  return n.grad;
}

void Tape::record_relu_signs(const Tensor& pre) {
  for (double x : pre.values) relu_pattern_.push_back(x > 0.0 ? 1 : 0);
}

Var Tape::push(Tensor value, std::vector<std::uint32_t> parents, BackwardFn backward) {
  for (double x : value.values) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteValue, "primitive produced a non-finite value");
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(parents.begin(), parents.end(), [this](auto p) { return nodes_[p].requires_grad; });
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::backward(Var loss) {
  check_owned(loss);
  if (nodes_[loss.id].value.size() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "backward(loss) needs a scalar, got " + shape_str(nodes_[loss.id].value));
  }
  backward(loss, Tensor::scalar(1.0));
}

void Tape::backward(Var output, const Tensor& seed) {
  if (consumed_) throw Error(ErrorCode::DetachedLoss, "tape already consumed by an earlier backward");
  check_owned(output);
  if (!seed.same_shape(nodes_[output.id].value)) shape_error("backward seed", seed, nodes_[output.id].value);
  consumed_ = true;
  if (!nodes_[output.id].requires_grad) return;
  accumulate(grad_mut(output.id), seed);
  for (std::int64_t i = output.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.values.empty()) continue;
    if (n.backward) n.backward(*this, static_cast<std::uint32_t>(i));
    if (n.sink) {
      if (n.sink->values.empty()) *n.sink = Tensor(n.value.rows, n.value.cols);
      if (!n.sink->same_shape(n.grad)) shape_error("gradient sink", *n.sink, n.grad);
      accumulate(*n.sink, n.grad);
    }
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols != B.rows) shape_error("matmul", A, B);
  Tensor out(A.rows, B.cols);
  kernels::omp::matmul(A.rows, A.cols, B.cols, A.values.data(), B.values.data(), out.values.data());
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_mut(self);
    const auto& A = t.value_of(ai);
    const auto& B = t.value_of(bi);
    if (t.needs_grad(ai)) {
      kernels::omp::matmul_nt(A.rows, B.cols, A.cols, g.values.data(), B.values.data(), t.grad_mut(ai).values.data());
    }
    if (t.needs_grad(bi)) {
      kernels::omp::matmul_tn(B.rows, A.rows, B.cols, A.values.data(), g.values.data(), t.grad_mut(bi).values.data());
    }
  });
}

Var matmul_nt(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols != B.cols) shape_error("matmul_nt", A, B);
  Tensor out(A.rows, B.rows);
  kernels::omp::matmul_nt(A.rows, A.cols, B.rows, A.values.data(), B.values.data(), out.values.data());
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::uint32_t self) {
    const auto& g = t.grad_mut(self);  // m x n
    const auto& A = t.value_of(ai);    // m x k
    const auto& B = t.value_of(bi);    // n x k
    if (t.needs_grad(ai)) {
      kernels::omp::matmul(A.rows, B.rows, A.cols, g.values.data(), B.values.data(), t.grad_mut(ai).values.data());
    }
    if (t.needs_grad(bi)) {
      kernels::omp::matmul_tn(B.rows, A.rows, A.cols, g.values.data(), A.values.data(), t.grad_mut(bi).values.data());
    }
  });
}

Var add(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) shape_error("add", A, B);
  Tensor out = A;
  accumulate(out, B);
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    if (t.needs_grad(ai)) accumulate(t.grad_mut(ai), g);
    if (t.needs_grad(bi)) accumulate(t.grad_mut(bi), g);
  });
}

Var add_row(Var a, Var row) {
  const auto& A = a.value();
  const auto& R = row.value();
  if (R.rows != 1 || R.cols != A.cols) shape_error("add_row", A, R);
  Tensor out = A;
  for (std::size_t i = 0; i < A.rows; ++i) {
    for (std::size_t j = 0; j < A.cols; ++j) out(i, j) += R.values[j];
  }
  return a.tape->push(std::move(out), {a.id, row.id}, [ai = a.id, ri = row.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    if (t.needs_grad(ai)) accumulate(t.grad_mut(ai), g);
    if (t.needs_grad(ri)) {
      auto& gr = t.grad_mut(ri);
      for (std::size_t i = 0; i < g.rows; ++i) {
        for (std::size_t j = 0; j < g.cols; ++j) gr.values[j] += g(i, j);
      }
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a.value();
  for (auto& x : out.values) x *= c;
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, c](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += c * g.values[i];
  });
}

Var mul(Var a, Var b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", A, B);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= B.values[i];
  return a.tape->push(std::move(out), {a.id, b.id}, [ai = a.id, bi = b.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& A = t.value_of(ai);
    const Tensor& B = t.value_of(bi);
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_mut(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * B.values[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_mut(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb.values[i] += g.values[i] * A.values[i];
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().values) s += x;
  return a.tape->push(Tensor::scalar(s), {a.id}, [ai = a.id](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self).values[0];
    for (auto& x : t.grad_mut(ai).values) x += g;
  });
}

Var transpose(Var a) {
  const auto& A = a.value();
  Tensor out(A.cols, A.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    for (std::size_t j = 0; j < A.cols; ++j) out(j, i) = A(i, j);
  }
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.rows; ++i) {
      for (std::size_t j = 0; j < g.cols; ++j) ga(j, i) += g(i, j);
    }
  });
}

Var relu(Var a) {
  a.tape->record_relu_signs(a.value());
  Tensor out = a.value();
  for (auto& x : out.values) x = x > 0.0 ? x : 0.0;
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& A = t.value_of(ai);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (A.values[i] > 0.0) ga.values[i] += g.values[i];
    }
  });
}

Var dropout(Var a, double p) {
  Tape& tape = *a.tape;
  if (!tape.train() || p <= 0.0) return a;
  if (p >= 1.0) throw Error(ErrorCode::BadConfig, "dropout probability must be < 1");
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(a.rows(), a.cols());
  for (auto& m : mask.values) m = tape.rng().uniform() >= p ? keep_scale : 0.0;
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= mask.values[i];
  return tape.push(std::move(out), {a.id}, [ai = a.id, mask = std::move(mask)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga.values[i] += g.values[i] * mask.values[i];
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  if (G.rows != 1 || G.cols != X.cols) shape_error("layer_norm gain", X, G);
  if (B.rows != 1 || B.cols != X.cols) shape_error("layer_norm bias", X, B);
  const std::size_t n = X.rows, d = X.cols;
  Tensor xhat(n, d), out(n, d);
  std::vector<double> inv_std(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* r = X.row(i);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += r[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<double>(d);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat(i, j) = (r[j] - mean) * inv_std[i];
      out(i, j) = xhat(i, j) * G.values[j] + B.values[j];
    }
  }
  return x.tape->push(std::move(out), {x.id, gain.id, bias.id},
                      [xi = x.id, gi = gain.id, bi = bias.id, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                          Tape& t, std::uint32_t self) {
                        const Tensor& g = t.grad_mut(self);
                        const Tensor& G = t.value_of(gi);
                        const std::size_t n = g.rows, d = g.cols;
                        if (t.needs_grad(gi)) {
                          auto& gg = t.grad_mut(gi);
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < d; ++j) gg.values[j] += g(i, j) * xhat(i, j);
                          }
                        }
                        if (t.needs_grad(bi)) {
                          auto& gb = t.grad_mut(bi);
                          for (std::size_t i = 0; i < n; ++i) {
                            for (std::size_t j = 0; j < d; ++j) gb.values[j] += g(i, j);
                          }
                        }
                        if (t.needs_grad(xi)) {
                          auto& gx = t.grad_mut(xi);
                          std::vector<double> gh(d);
                          for (std::size_t i = 0; i < n; ++i) {
                            double mean_gh = 0.0, mean_ghx = 0.0;
                            for (std::size_t j = 0; j < d; ++j) {
                              gh[j] = g(i, j) * G.values[j];
                              mean_gh += gh[j];
                              mean_ghx += gh[j] * xhat(i, j);
                            }
                            mean_gh /= static_cast<double>(d);
                            mean_ghx /= static_cast<double>(d);
                            for (std::size_t j = 0; j < d; ++j) {
                              gx(i, j) += inv_std[i] * (gh[j] - mean_gh - xhat(i, j) * mean_ghx);
                            }
                          }
                        }
                      });
}

Var relation_mean(Var h, const kernels::RelationCsr& rel) {
  const auto& H = h.value();
  if (rel.n != H.rows) {
    throw Error(ErrorCode::ShapeMismatch,
                "relation over " + std::to_string(rel.n) + " nodes applied to " + shape_str(H));
  }
  Tensor out(H.rows, H.cols);
  kernels::omp::relation_mean(rel, H.cols, H.values.data(), out.values.data());
  return h.tape->push(std::move(out), {h.id}, [hi = h.id, rel = &rel](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    kernels::omp::relation_mean_backward(*rel, g.cols, g.values.data(), t.grad_mut(hi).values.data());
  });
}

Var mean_rows(Var a) {
  const auto& A = a.value();
  if (A.rows == 0) throw Error(ErrorCode::ShapeMismatch, "mean_rows of an empty tensor");
  Tensor out(1, A.cols);
  for (std::size_t i = 0; i < A.rows; ++i) {
    for (std::size_t j = 0; j < A.cols; ++j) out.values[j] += A(i, j);
  }
  for (auto& x : out.values) x /= static_cast<double>(A.rows);
  return a.tape->push(std::move(out), {a.id}, [ai = a.id](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ai);
    const double inv = 1.0 / static_cast<double>(ga.rows);
    for (std::size_t i = 0; i < ga.rows; ++i) {
      for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) += inv * g.values[j];
    }
  });
}

Var segment_mean(Var a, std::span<const std::pair<std::size_t, std::size_t>> ranges) {
  const auto& A = a.value();
  std::vector<std::pair<std::size_t, std::size_t>> rs(ranges.begin(), ranges.end());
  Tensor out(rs.size(), A.cols);
  for (std::size_t s = 0; s < rs.size(); ++s) {
    auto [b, e] = rs[s];
    if (b >= e || e > A.rows) throw Error(ErrorCode::ShapeMismatch, "segment_mean: bad row range");
    for (std::size_t i = b; i < e; ++i) {
      for (std::size_t j = 0; j < A.cols; ++j) out(s, j) += A(i, j);
    }
    const double inv = 1.0 / static_cast<double>(e - b);
    for (std::size_t j = 0; j < A.cols; ++j) out(s, j) *= inv;
  }
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, rs = std::move(rs)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    auto& ga = t.grad_mut(ai);
    for (std::size_t s = 0; s < rs.size(); ++s) {
      auto [b, e] = rs[s];
      const double inv = 1.0 / static_cast<double>(e - b);
      for (std::size_t i = b; i < e; ++i) {
        for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) += inv * g(s, j);
      }
    }
  });
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw Error(ErrorCode::ShapeMismatch, "stack_rows of nothing");
  Tape* tape = rows.front().tape;
  const std::size_t d = rows.front().cols();
  std::size_t total = 0;
  std::vector<std::uint32_t> ids;
  for (const auto& r : rows) {
    if (r.tape != tape) throw Error(ErrorCode::DetachedLoss, "stack_rows across tapes");
    if (r.cols() != d) shape_error("stack_rows", rows.front().value(), r.value());
    total += r.rows();
    ids.push_back(r.id);
  }
  Tensor out(total, d);
  std::size_t at = 0;
  for (const auto& r : rows) {
    const auto& v = r.value().values;
    std::copy(v.begin(), v.end(), out.values.begin() + static_cast<std::ptrdiff_t>(at * d));
    at += r.rows();
  }
  auto parents = ids;
  return tape->push(std::move(out), std::move(parents), [ids = std::move(ids)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    std::size_t at = 0;
    for (auto id : ids) {
      const auto n = t.value_of(id).size();
      if (t.needs_grad(id)) {
        auto& gi = t.grad_mut(id);
        for (std::size_t k = 0; k < n; ++k) gi.values[k] += g.values[at + k];
      }
      at += n;
    }
  });
}

Var l2_normalize_rows(Var a) {
  const auto& A = a.value();
  Tensor out(A.rows, A.cols);
  std::vector<double> norms(A.rows);
  for (std::size_t i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < A.cols; ++j) s += A(i, j) * A(i, j);
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 1e-12)) throw Error(ErrorCode::ZeroRow, "row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < A.cols; ++j) out(i, j) = A(i, j) / norms[i];
  }
  return a.tape->push(std::move(out), {a.id}, [ai = a.id, norms = std::move(norms)](Tape& t, std::uint32_t self) {
    const Tensor& g = t.grad_mut(self);
    const Tensor& Y = t.value_of(self);
    auto& ga = t.grad_mut(ai);
    for (std::size_t i = 0; i < g.rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < g.cols; ++j) dot += Y(i, j) * g(i, j);
      for (std::size_t j = 0; j < g.cols; ++j) ga(i, j) += (g(i, j) - Y(i, j) * dot) / norms[i];
    }
  });
}

Var diag_cross_entropy(Var s) {
  const auto& S = s.value();
  if (S.rows != S.cols || S.rows == 0) throw Error(ErrorCode::ShapeMismatch, "diag_cross_entropy needs a square matrix");
  const std::size_t b = S.rows;
  Tensor softmax(b, b);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* r = S.row(i);
    const double m = *std::max_element(r, r + b);
    double z = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      softmax(i, j) = std::exp(r[j] - m);
      z += softmax(i, j);
    }
    for (std::size_t j = 0; j < b; ++j) softmax(i, j) /= z;
    loss += (m + std::log(z)) - r[i];
  }
  loss /= static_cast<double>(b);
  return s.tape->push(Tensor::scalar(loss), {s.id}, [si = s.id, softmax = std::move(softmax)](Tape& t, std::uint32_t self) {
    const double g = t.grad_mut(self).values[0];
    auto& gs = t.grad_mut(si);
    const std::size_t b = softmax.rows;
    const double c = g / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t j = 0; j < b; ++j) gs(i, j) += c * (softmax(i, j) - (i == j ? 1.0 : 0.0));
    }
  });
}

namespace {

/// sum_i coeff(i) * terms[i] where coeff(i) is row `fixed` (by_row) or column `fixed` of the table.
Var weighted_terms(Var coeffs, std::size_t fixed, bool by_row, std::span<const Var> terms) {
  const auto& C = coeffs.value();
  const std::size_t n_terms = by_row ? C.cols : C.rows;
  const std::size_t n_fixed = by_row ? C.rows : C.cols;
  if (fixed >= n_fixed || n_terms != terms.size() || terms.empty()) {
    throw Error(ErrorCode::ShapeMismatch, "weighted sum: coefficient table " + shape_str(C) + " vs " +
                                              std::to_string(terms.size()) + " terms");
  }
  auto coef = [by_row, fixed](const Tensor& c, std::size_t i) { return by_row ? c(fixed, i) : c(i, fixed); };
  const auto& T0 = terms.front().value();
  Tensor out(T0.rows, T0.cols);
  std::vector<std::uint32_t> parents{coeffs.id};
  std::vector<std::uint32_t> ids;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    const auto& V = terms[i].value();
    if (!V.same_shape(T0)) shape_error("weighted sum", T0, V);
    const double a = coef(C, i);
    if (a != 0.0) {
      for (std::size_t k = 0; k < V.size(); ++k) out.values[k] += a * V.values[k];
    }
    parents.push_back(terms[i].id);
    ids.push_back(terms[i].id);
  }
  return coeffs.tape->push(std::move(out), std::move(parents),
                           [ci = coeffs.id, fixed, by_row, ids = std::move(ids)](Tape& t, std::uint32_t self) {
                             const Tensor& g = t.grad_mut(self);
                             const Tensor& C = t.value_of(ci);
                             for (std::size_t i = 0; i < ids.size(); ++i) {
                               const auto id = ids[i];
                               if (t.needs_grad(ci)) {
                                 const Tensor& V = t.value_of(id);
                                 double dot = 0.0;
                                 for (std::size_t k = 0; k < g.size(); ++k) dot += g.values[k] * V.values[k];
                                 auto& gc = t.grad_mut(ci);
                                 (by_row ? gc(fixed, i) : gc(i, fixed)) += dot;
                               }
                               if (t.needs_grad(id)) {
                                 auto& gv = t.grad_mut(id);
                                 const double a = by_row ? C(fixed, i) : C(i, fixed);
                                 for (std::size_t k = 0; k < g.size(); ++k) gv.values[k] += a * g.values[k];
                               }
                             }
                           });
}

}  // namespace

Var basis_combine(Var coeffs, std::size_t r, std::span<const Var> bases) {
  return weighted_terms(coeffs, r, true, bases);
}

Var relation_combine(Var coeffs, std::size_t b, std::span<const Var> terms) {
  return weighted_terms(coeffs, b, false, terms);
}

// ---------------------------------------------------------------------------

namespace {

struct Evaluation {
  double value = 0.0;
  std::vector<std::uint8_t> pattern;
};

Evaluation evaluate(const MultiScalarFn& f, const std::vector<Tensor>& inputs, const GradCheckOptions& opt) {
  Tape tape(opt.train, opt.dropout_seed);
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const auto& x : inputs) vars.push_back(tape.constant(x));
  Var out = f(tape, vars);
  return {out.value().item(), tape.relu_pattern()};
}

}  // namespace

GradCheckResult gradient_check(const MultiScalarFn& f, const std::vector<Tensor>& inputs,
                               const GradCheckOptions& opt) {
  // Analytic gradients.
  std::vector<Tensor> analytic(inputs.size());
  std::vector<std::uint8_t> base_pattern;
  {
    Tape tape(opt.train, opt.dropout_seed);
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.leaf(inputs[i], &analytic[i]));
    Var out = f(tape, vars);
    base_pattern = tape.relu_pattern();
    tape.backward(out);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (analytic[i].values.empty()) analytic[i] = Tensor(inputs[i].rows, inputs[i].cols);
    }
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  Rng rng(opt.sample_seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto n = inputs[i].size();
    if (opt.max_coords_per_input == 0 || opt.max_coords_per_input >= n) {
      for (std::size_t k = 0; k < n; ++k) coords.emplace_back(i, k);
    } else {
      for (auto k : rng.sample_without_replacement(n, opt.max_coords_per_input)) coords.emplace_back(i, k);
    }
  }

  std::vector<double> errors(coords.size(), 0.0);
  std::vector<std::uint8_t> excluded(coords.size(), 0);
  const auto n = static_cast<std::int64_t>(coords.size());
#pragma omp parallel
  {
    std::vector<Tensor> local = inputs;
#pragma omp for schedule(dynamic)
    for (std::int64_t c = 0; c < n; ++c) {
      auto [i, k] = coords[static_cast<std::size_t>(c)];
      const double x0 = local[i].values[k];
      local[i].values[k] = x0 + opt.h;
      auto plus = evaluate(f, local, opt);
      local[i].values[k] = x0 - opt.h;
      auto minus = evaluate(f, local, opt);
      local[i].values[k] = x0;
      if (plus.pattern != base_pattern || minus.pattern != base_pattern) {
        excluded[static_cast<std::size_t>(c)] = 1;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opt.h);
      const double a = analytic[i].values[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      errors[static_cast<std::size_t>(c)] = std::abs(a - numeric) / denom;
    }
  }

  GradCheckResult res;
  for (std::size_t c = 0; c < coords.size(); ++c) {
    if (excluded[c]) {
      ++res.excluded;
      continue;
    }
    ++res.checked;
    if (errors[c] > res.max_rel_error) {
      res.max_rel_error = errors[c];
      res.worst = std::to_string(coords[c].first) + ":" + std::to_string(coords[c].second);
    }
  }
  return res;
}

GradCheckResult gradient_check(const ScalarFn& f, const Tensor& x, double h) {
  GradCheckOptions opt;
  opt.h = h;
  return gradient_check([&f](Tape& t, std::span<const Var> v) { return f(t, v[0]); }, std::vector<Tensor>{x}, opt);
}

}  // namespace gcls::ad
