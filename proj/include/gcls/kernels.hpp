#pragma once

// Dense and sparse inner loops shared by the encoder, the loss and the
// clusterer. Every kernel has a plain serial reference in `serial` and an
// OpenMP implementation in `omp`; the rest of the library calls the `omp`
// versions, tests check them against `serial`.
//
// Matrices are row-major. Products accumulate into the output (C += ...).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace gcls::kernels {

/// Incoming-neighbour lists of one relation, in CSR form keyed by destination
/// node, together with the transposed (source-keyed) lists used by backward.
struct RelationCsr {
  std::size_t n = 0;
  std::vector<std::uint32_t> in_offsets;   // size n+1
  std::vector<std::uint32_t> in_sources;   // u for each edge u->v, grouped by v
  std::vector<std::uint32_t> out_offsets;  // size n+1
  std::vector<std::uint32_t> out_targets;  // v for each edge u->v, grouped by u

  static RelationCsr from_edges(std::size_t n, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges);
  std::uint32_t in_degree(std::size_t v) const { return in_offsets[v + 1] - in_offsets[v]; }
};

namespace serial {

void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
void relation_mean(const RelationCsr& rel, std::size_t d, const double* h, double* out);
void relation_mean_backward(const RelationCsr& rel, std::size_t d, const double* grad_out, double* grad_h);
void squared_distances(std::size_t n, std::size_t k, std::size_t d, const double* x, const double* c, double* out);

}  // namespace serial

namespace omp {

/// c[m x n] += a[m x k] * b[k x n]
void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
/// c[m x n] += a[k x m]^T * b[k x n]
void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
/// c[m x n] += a[m x k] * b[n x k]^T
void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c);
/// out[v] += mean_{u in N(v)} h[u]; rows with no neighbours are left untouched.
void relation_mean(const RelationCsr& rel, std::size_t d, const double* h, double* out);
void relation_mean_backward(const RelationCsr& rel, std::size_t d, const double* grad_out, double* grad_h);
/// out[i*k + j] = ||x_i - c_j||^2
void squared_distances(std::size_t n, std::size_t k, std::size_t d, const double* x, const double* c, double* out);

}  // namespace omp

/// Index of the nearest centroid per row, ties to the lowest index.
std::vector<std::uint32_t> nearest_centroid(std::size_t n, std::size_t k, std::size_t d, const double* x,
                                            const double* c, std::vector<double>* best_dist = nullptr);

}  // namespace gcls::kernels
