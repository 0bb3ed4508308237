#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/autodiff.hpp"
#include "gcls/features.hpp"
#include "gcls/rgcn.hpp"

namespace gcls {

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 100;
  double lr0 = 7e-4;
  double temperature = 0.05;
  double split_ratio = 0.8;
  std::uint64_t seed = 0;
  std::size_t patience = 20;
  double grad_clip = 1.0;
  double weight_decay = 0.01;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct DatasetSplit {
  std::vector<std::uint64_t> train;
  std::vector<std::uint64_t> validation;
};

/// Seeded uniform shuffle; the first round(ratio * N) ids go to training.
DatasetSplit split_dataset(std::span<const std::uint64_t> launch_ids, double ratio, std::uint64_t seed);

/// Symmetric InfoNCE over two [B x d] view batches:
///   S = (1/tau) * norm(Z1) * norm(Z2)^T,  L = (CE(S) + CE(S^T)) / 2
ad::Var infonce_loss(ad::Var z1, ad::Var z2, double temperature);
double infonce_loss(const ad::Tensor& z1, const ad::Tensor& z2, double temperature);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when the validation set yields no batch of size >= 2
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  std::size_t steps = 0;

  /// One JSON object per epoch.
  std::string to_jsonl() const;
};

struct TrainResult {
  RgcnParams params;  // best-validation checkpoint
  TrainLog log;
  DatasetSplit split;
};

/// Kernel graph with its launch id; features are the un-augmented ones.
struct TrainingSample {
  std::uint64_t launch_id = 0;
  GraphView view;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainResult train(std::span<const TrainingSample> corpus, const TrainConfig& config, const EncoderConfig& encoder,
                  const AugmentationPool& pool = {}, const EpochCallback& on_epoch = {});

/// Mean InfoNCE over validation batches with views drawn from a fixed
/// validation stream, dropout off. Size-1 batches are skipped.
double validate(std::span<const TrainingSample> samples, const RgcnParams& params, const TrainConfig& config,
                const AugmentationPool& pool = {});

/// Batch slicing: size-1 remainders are dropped.
std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t n, std::size_t batch_size);

/// One optimisation step on a batch. Returns the batch loss and fills grads
/// (summed over kernels in batch order). Exposed for tests.
double batch_loss_and_grads(std::span<const TrainingSample* const> batch, const RgcnParams& params,
                            const TrainConfig& config, const AugmentationPool& pool, std::uint64_t view_stream,
                            std::uint64_t dropout_stream, bool train_mode, RgcnParams* grads);

}  // namespace gcls
