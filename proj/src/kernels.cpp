#include "gcls/kernels.hpp"

#include <algorithm>
#include <cstring>

namespace gcls::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelFlops = 1u << 15;
constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kVecWidth = 8;
constexpr std::size_t kColTile = 2 * kVecWidth;

typedef double Vec __attribute__((vector_size(kVecWidth * sizeof(double))));

Vec load(const double* p) {
  Vec v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

void store(double* p, Vec v) { std::memcpy(p, &v, sizeof v); }

// c[r, :] += sum_p a(r, p) * b[p, :] for up to kRowBlock rows, with a(r, p) at
// a[r * row_stride + p * col_stride]. Full blocks keep a 4 x 16 tile of c in
// registers; every output element accumulates in p order.
void row_block(std::size_t rows, std::size_t k, std::size_t n, const double* a, std::size_t row_stride,
               std::size_t col_stride, const double* b, double* c) {
  if (rows == kRowBlock) {
    std::size_t j0 = 0;
    for (; j0 + kColTile <= n; j0 += kColTile) {
      Vec acc[kRowBlock][2];
      for (std::size_t r = 0; r < kRowBlock; ++r) {
        acc[r][0] = load(c + r * n + j0);
        acc[r][1] = load(c + r * n + j0 + kVecWidth);
      }
      for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n + j0;
        const Vec b0 = load(brow);
        const Vec b1 = load(brow + kVecWidth);
        for (std::size_t r = 0; r < kRowBlock; ++r) {
          const double av = a[r * row_stride + p * col_stride];
          acc[r][0] += av * b0;
          acc[r][1] += av * b1;
        }
      }
      for (std::size_t r = 0; r < kRowBlock; ++r) {
        store(c + r * n + j0, acc[r][0]);
        store(c + r * n + j0 + kVecWidth, acc[r][1]);
      }
    }
    if (j0 == n) return;
    for (std::size_t r = 0; r < kRowBlock; ++r) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[r * row_stride + p * col_stride];
        for (std::size_t j = j0; j < n; ++j) c[r * n + j] += av * b[p * n + j];
      }
    }
    return;
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double* crow = c + r * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[r * row_stride + p * col_stride];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

RelationCsr RelationCsr::from_edges(std::size_t n, std::span<const std::pair<std::uint32_t, std::uint32_t>> edges) {
  RelationCsr r;
  r.n = n;
  r.in_offsets.assign(n + 1, 0);
  r.out_offsets.assign(n + 1, 0);
  for (auto [u, v] : edges) {
    ++r.in_offsets[v + 1];
    ++r.out_offsets[u + 1];
  }
  for (std::size_t i = 0; i < n; ++i) {
    r.in_offsets[i + 1] += r.in_offsets[i];
    r.out_offsets[i + 1] += r.out_offsets[i];
  }
  r.in_sources.resize(edges.size());
  r.out_targets.resize(edges.size());
  std::vector<std::uint32_t> in_fill(r.in_offsets.begin(), r.in_offsets.end() - 1);
  std::vector<std::uint32_t> out_fill(r.out_offsets.begin(), r.out_offsets.end() - 1);
  for (auto [u, v] : edges) {
    r.in_sources[in_fill[v]++] = u;
    r.out_targets[out_fill[u]++] = v;
  }
  return r;
}

namespace serial {

void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] += acc;
    }
  }
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] += acc;
    }
  }
}

void relation_mean(const RelationCsr& rel, std::size_t d, const double* h, double* out) {
  for (std::size_t v = 0; v < rel.n; ++v) {
    const auto deg = rel.in_degree(v);
    if (deg == 0) continue;
    const double inv = 1.0 / deg;
    for (auto e = rel.in_offsets[v]; e < rel.in_offsets[v + 1]; ++e) {
      const double* src = h + rel.in_sources[e] * d;
      for (std::size_t j = 0; j < d; ++j) out[v * d + j] += inv * src[j];
    }
  }
}

void relation_mean_backward(const RelationCsr& rel, std::size_t d, const double* grad_out, double* grad_h) {
  for (std::size_t v = 0; v < rel.n; ++v) {
    const auto deg = rel.in_degree(v);
    if (deg == 0) continue;
    const double inv = 1.0 / deg;
    for (auto e = rel.in_offsets[v]; e < rel.in_offsets[v + 1]; ++e) {
      double* dst = grad_h + rel.in_sources[e] * d;
      for (std::size_t j = 0; j < d; ++j) dst[j] += inv * grad_out[v * d + j];
    }
  }
}

void squared_distances(std::size_t n, std::size_t k, std::size_t d, const double* x, const double* c, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = x[i * d + p] - c[j * d + p];
        s += diff * diff;
      }
      out[i * k + j] = s;
    }
  }
}

}  // namespace serial

namespace omp {

void matmul(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  const auto blocks = static_cast<std::int64_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops)
  for (std::int64_t bb = 0; bb < blocks; ++bb) {
    const auto i0 = static_cast<std::size_t>(bb) * kRowBlock;
    row_block(std::min(kRowBlock, m - i0), k, n, a + i0 * k, k, 1, b, c + i0 * n);
  }
}

void matmul_tn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  const auto blocks = static_cast<std::int64_t>((m + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for schedule(static) if (m * k * n > kParallelFlops)
  for (std::int64_t bb = 0; bb < blocks; ++bb) {
    const auto i0 = static_cast<std::size_t>(bb) * kRowBlock;
    row_block(std::min(kRowBlock, m - i0), k, n, a + i0, 1, m, b, c + i0 * n);
  }
}

void matmul_nt(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b, double* c) {
  // Transpose b once so the inner loop runs over contiguous memory.
  std::vector<double> bt(k * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
  }
  matmul(m, k, n, a, bt.data(), c);
}

void relation_mean(const RelationCsr& rel, std::size_t d, const double* h, double* out) {
  const auto n = static_cast<std::int64_t>(rel.n);
#pragma omp parallel for schedule(static) if (rel.in_sources.size() * d > kParallelFlops)
  for (std::int64_t vv = 0; vv < n; ++vv) {
    const auto v = static_cast<std::size_t>(vv);
    const auto deg = rel.in_degree(v);
    if (deg == 0) continue;
    const double inv = 1.0 / deg;
    double* dst = out + v * d;
    for (auto e = rel.in_offsets[v]; e < rel.in_offsets[v + 1]; ++e) {
      const double* src = h + rel.in_sources[e] * d;
#pragma omp simd
      for (std::size_t j = 0; j < d; ++j) dst[j] += inv * src[j];
    }
  }
}

void relation_mean_backward(const RelationCsr& rel, std::size_t d, const double* grad_out, double* grad_h) {
  // Gather over the transposed lists so every output row has one writer.
  const auto n = static_cast<std::int64_t>(rel.n);
#pragma omp parallel for schedule(static) if (rel.out_targets.size() * d > kParallelFlops)
  for (std::int64_t uu = 0; uu < n; ++uu) {
    const auto u = static_cast<std::size_t>(uu);
    double* dst = grad_h + u * d;
    for (auto e = rel.out_offsets[u]; e < rel.out_offsets[u + 1]; ++e) {
      const auto v = rel.out_targets[e];
      const double inv = 1.0 / rel.in_degree(v);
      const double* src = grad_out + static_cast<std::size_t>(v) * d;
#pragma omp simd
      for (std::size_t j = 0; j < d; ++j) dst[j] += inv * src[j];
    }
  }
}

void squared_distances(std::size_t n, std::size_t k, std::size_t d, const double* x, const double* c, double* out) {
  const auto rows = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (n * k * d > kParallelFlops)
  for (std::int64_t ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const double* xi = x + i * d;
    for (std::size_t j = 0; j < k; ++j) {
      const double* cj = c + j * d;
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) {
        const double diff = xi[p] - cj[p];
        s += diff * diff;
      }
      out[i * k + j] = s;
    }
  }
}

}  // namespace omp

std::vector<std::uint32_t> nearest_centroid(std::size_t n, std::size_t k, std::size_t d, const double* x,
                                            const double* c, std::vector<double>* best_dist) {
  std::vector<double> dist(n * k);
  omp::squared_distances(n, k, d, x, c, dist.data());
  std::vector<std::uint32_t> labels(n, 0);
  if (best_dist) best_dist->assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (dist[i * k + j] < dist[i * k + best]) best = j;
    }
    labels[i] = static_cast<std::uint32_t>(best);
    if (best_dist) (*best_dist)[i] = dist[i * k + best];
  }
  return labels;
}

}  // namespace gcls::kernels
