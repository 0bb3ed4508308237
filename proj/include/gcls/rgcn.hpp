#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gcls/autodiff.hpp"
#include "gcls/features.hpp"
#include "gcls/graph.hpp"
#include "gcls/kernels.hpp"

namespace gcls {

struct EncoderConfig {
  std::size_t in_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t out_dim = 256;
  std::size_t n_layers = 3;
  std::size_t n_relations = kNumRelations;
  std::size_t n_bases = 2;
  double dropout = 0.1;
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 64;

  /// Throws BadConfig when the fixed dimensions are changed.
  void validate() const;
  std::size_t layer_in(std::size_t k) const { return k == 0 ? in_dim : hidden_dim; }
  std::size_t layer_out(std::size_t k) const { return k + 1 == n_layers ? out_dim : hidden_dim; }
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

/// Weights of one relational convolution. Relation r uses
/// W_r = sum_b coeffs(r, b) * bases[b]; self_weight is the self-loop W_0.
struct RgcnLayerParams {
  std::vector<ad::Tensor> bases;  // n_bases x [in x out]
  ad::Tensor coeffs;              // n_relations x n_bases
  ad::Tensor self_weight;         // in x out
  ad::Tensor ln_gain;             // 1 x out
  ad::Tensor ln_bias;             // 1 x out
};

struct RgcnParams {
  EncoderConfig config;
  std::vector<RgcnLayerParams> layers;
  ad::Tensor proj_w1, proj_b1;  // 256 -> 128
  ad::Tensor proj_w2, proj_b2;  // 128 -> 64

  /// Every tensor with a stable name, in a fixed order.
  std::vector<std::pair<std::string, ad::Tensor*>> tensors();
  std::vector<std::pair<std::string, const ad::Tensor*>> tensors() const;
  std::size_t parameter_count() const;
  /// Same shapes, all zeros; used as a gradient accumulator.
  RgcnParams zeros_like() const;
  /// Dense relation weight W_r of layer k.
  ad::Tensor relation_weight(std::size_t layer, std::size_t relation) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, unit gain, zero bias.
RgcnParams init_params(const EncoderConfig& config, std::uint64_t seed);
/// Parameter count of the same model with one free matrix per relation.
std::size_t unfactored_parameter_count(const EncoderConfig& config);

/// Graph topology in encoder-ready form: per-relation neighbour lists and
/// the row range of every non-empty warp.
struct PreparedGraph {
  std::size_t node_count = 0;
  std::array<kernels::RelationCsr, kNumRelations> relations;
  std::vector<std::pair<std::size_t, std::size_t>> warp_ranges;

  static PreparedGraph from(const TraceGraph& g);
};

/// Parameters registered on a tape.
struct BoundLayer {
  std::vector<ad::Var> bases;
  ad::Var coeffs, self_weight, ln_gain, ln_bias;
};
struct BoundParams {
  std::vector<BoundLayer> layers;
  ad::Var proj_w1, proj_b1, proj_w2, proj_b2;
  double dropout = 0.0;
};

/// With grads set, backward accumulates parameter gradients into it.
BoundParams bind(ad::Tape& tape, const RgcnParams& params, RgcnParams* grads = nullptr);

/// h' = Dropout(ReLU(LayerNorm(sum_r sum_{u in N_r(v)} W_r h_u / |N_r(v)| + W_0 h_v)))
/// Dropout is skipped when `last` is set and outside training mode.
ad::Var rgcn_layer(ad::Var h, const PreparedGraph& g, const BoundLayer& layer, double dropout, bool last);

/// All layers, then one mean-pooled row per non-empty warp ([warps x 256]).
ad::Var encode_warps(ad::Var features, const PreparedGraph& g, const BoundParams& p);
/// Layers plus mean pooling over all rows of a single-warp graph.
ad::Var encode_warp(ad::Var features, const PreparedGraph& g, const BoundParams& p);
/// z_k: mean over the warp embeddings of a kernel graph ([1 x 256]).
ad::Var encode_kernel(ad::Var features, const PreparedGraph& g, const BoundParams& p);
/// z_k from separately encoded warp graphs.
ad::Var encode_kernel(std::span<const ad::Var> warp_embeddings);
/// Linear(256->128) -> ReLU -> Dropout -> Linear(128->64).
ad::Var project(ad::Var z, const BoundParams& p);

/// Eval-mode z_k of one kernel view.
std::vector<double> embed_kernel(const GraphView& view, const RgcnParams& params);

}  // namespace gcls
