#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/autodiff.hpp"

namespace gcls::optim {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(AdamWConfig config) : config_(config) {}

  void step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor* const> grads, double lr);

  std::uint64_t steps() const { return t_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<ad::Tensor>& first_moments() const { return m_; }
  const std::vector<ad::Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::uint64_t t_ = 0;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
};

/// 0.5 * lr0 * (1 + cos(pi * t / T)), floored at 0.
double cosine_lr(std::uint64_t t, std::uint64_t total, double lr0);

/// Scales grads in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Tensor* const> grads, double max_norm);

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

/// Writes `<stem>.json` (names, shapes, metadata) and `<stem>.bin`
/// (little-endian float64 payload, tensors back to back in header order).
void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& metadata);

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json metadata;
};

Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace gcls::optim
