#include "gcls/optim.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "gcls/error.hpp"

namespace gcls::optim {

void AdamW::step(std::span<ad::Tensor* const> params, std::span<const ad::Tensor* const> grads, double lr) {
  if (params.size() != grads.size()) throw Error(ErrorCode::ShapeMismatch, "AdamW: params/grads count differ");
  if (m_.empty()) {
    for (auto* p : params) {
      m_.emplace_back(p->rows, p->cols);
      v_.emplace_back(p->rows, p->cols);
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorCode::ShapeMismatch, "AdamW: parameter set changed");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(*grads[i]) || !params[i]->same_shape(m_[i])) {
      throw Error(ErrorCode::ShapeMismatch, "AdamW: parameter " + std::to_string(i) + " shape mismatch");
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params[i]->values;
    const auto& g = grads[i]->values;
    auto& m = m_[i].values;
    auto& v = v_[i].values;
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      const double decay = lr * config_.weight_decay * theta[k];
      theta[k] = theta[k] - lr * m_hat / (std::sqrt(v_hat) + config_.eps) - decay;
    }
  }
}

double cosine_lr(std::uint64_t t, std::uint64_t total, double lr0) {
  if (total == 0) return lr0;
  if (t > total) t = total;
  const double lr =
      0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
  return lr > 0.0 ? lr : 0.0;
}

double clip_grad_norm(std::span<ad::Tensor* const> grads, double max_norm) {
  double sq = 0.0;
  for (const auto* g : grads) {
    for (double x : g->values) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto* g : grads) {
      for (auto& x : g->values) x *= s;
    }
  }
  return norm;
}

namespace {

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
  return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& stem, const std::vector<NamedTensor>& tensors,
                     const nlohmann::json& metadata) {
  static_assert(std::endian::native == std::endian::little, "payload is written in native little-endian order");
  nlohmann::json header;
  header["format"] = "gcls-checkpoint-v1";
  header["dtype"] = "float64-le";
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::ofstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::MissingFile, "cannot write " + with_ext(stem, ".bin").string());
  std::uint64_t offset = 0;
  for (const auto& t : tensors) {
    header["tensors"].push_back(
        {{"name", t.name}, {"shape", {t.tensor.rows, t.tensor.cols}}, {"offset", offset}});
    bin.write(reinterpret_cast<const char*>(t.tensor.values.data()),
              static_cast<std::streamsize>(t.tensor.values.size() * sizeof(double)));
    offset += t.tensor.values.size();
  }
  std::ofstream js(with_ext(stem, ".json"));
  if (!js) throw Error(ErrorCode::MissingFile, "cannot write " + with_ext(stem, ".json").string());
  js << header.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  std::ifstream js(with_ext(stem, ".json"));
  if (!js) throw Error(ErrorCode::MissingFile, with_ext(stem, ".json").string());
  std::ifstream bin(with_ext(stem, ".bin"), std::ios::binary);
  if (!bin) throw Error(ErrorCode::MissingFile, with_ext(stem, ".bin").string());
  Checkpoint ck;
  try {
    nlohmann::json header;
    js >> header;
    ck.metadata = header.value("metadata", nlohmann::json::object());
    std::vector<char> payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());
    const std::size_t n_doubles = payload.size() / sizeof(double);
    for (const auto& jt : header.at("tensors")) {
      const auto shape = jt.at("shape").get<std::vector<std::size_t>>();
      const auto offset = jt.at("offset").get<std::size_t>();
      if (shape.size() != 2) throw Error(ErrorCode::BadArtifact, "checkpoint tensor must be 2-D");
      const std::size_t count = shape[0] * shape[1];
      if (offset + count > n_doubles) throw Error(ErrorCode::BadArtifact, "checkpoint payload truncated");
      ad::Tensor t(shape[0], shape[1]);
      std::memcpy(t.values.data(), payload.data() + offset * sizeof(double), count * sizeof(double));
      ck.tensors.push_back({jt.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadArtifact, with_ext(stem, ".json").string() + ": " + e.what());
  }
  return ck;
}

}  // namespace gcls::optim
