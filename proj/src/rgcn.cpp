#include "gcls/rgcn.hpp"

#include <cmath>

#include "gcls/error.hpp"
#include "gcls/rng.hpp"

namespace gcls {

void EncoderConfig::validate() const {
  if (in_dim != kFeatureDim) throw Error(ErrorCode::BadConfig, "encoder input dimension is fixed at 64");
  if (out_dim != 256) throw Error(ErrorCode::BadConfig, "encoder output dimension is fixed at 256");
  if (n_relations != kNumRelations) throw Error(ErrorCode::BadConfig, "encoder handles exactly 4 relations");
  if (n_layers < 1 || n_bases < 1 || hidden_dim < 1 || proj_hidden < 1 || proj_out < 1) {
    throw Error(ErrorCode::BadConfig, "encoder sizes must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw Error(ErrorCode::BadConfig, "dropout must be in [0, 1)");
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"in_dim", c.in_dim},           {"hidden_dim", c.hidden_dim}, {"out_dim", c.out_dim},
       {"n_layers", c.n_layers},       {"n_relations", c.n_relations}, {"n_bases", c.n_bases},
       {"dropout", c.dropout},         {"proj_hidden", c.proj_hidden}, {"proj_out", c.proj_out}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  EncoderConfig d;
  c.in_dim = j.value("in_dim", d.in_dim);
  c.hidden_dim = j.value("hidden_dim", d.hidden_dim);
  c.out_dim = j.value("out_dim", d.out_dim);
  c.n_layers = j.value("n_layers", d.n_layers);
  c.n_relations = j.value("n_relations", d.n_relations);
  c.n_bases = j.value("n_bases", d.n_bases);
  c.dropout = j.value("dropout", d.dropout);
  c.proj_hidden = j.value("proj_hidden", d.proj_hidden);
  c.proj_out = j.value("proj_out", d.proj_out);
}

std::vector<std::pair<std::string, ad::Tensor*>> RgcnParams::tensors() {
  std::vector<std::pair<std::string, ad::Tensor*>> out;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto& l = layers[k];
    const std::string p = "layer" + std::to_string(k) + ".";
    for (std::size_t b = 0; b < l.bases.size(); ++b) out.emplace_back(p + "basis" + std::to_string(b), &l.bases[b]);
    out.emplace_back(p + "coeffs", &l.coeffs);
    out.emplace_back(p + "self_weight", &l.self_weight);
    out.emplace_back(p + "ln_gain", &l.ln_gain);
    out.emplace_back(p + "ln_bias", &l.ln_bias);
  }
  out.emplace_back("proj.w1", &proj_w1);
  out.emplace_back("proj.b1", &proj_b1);
  out.emplace_back("proj.w2", &proj_w2);
  out.emplace_back("proj.b2", &proj_b2);
  return out;
}

std::vector<std::pair<std::string, const ad::Tensor*>> RgcnParams::tensors() const {
  auto mut = const_cast<RgcnParams*>(this)->tensors();
  std::vector<std::pair<std::string, const ad::Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(std::move(n), t);
  return out;
}

std::size_t RgcnParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors()) n += t->size();
  return n;
}

RgcnParams RgcnParams::zeros_like() const {
  RgcnParams z = *this;
  for (auto& [name, t] : z.tensors()) std::fill(t->values.begin(), t->values.end(), 0.0);
  return z;
}

ad::Tensor RgcnParams::relation_weight(std::size_t layer, std::size_t relation) const {
  const auto& l = layers.at(layer);
  ad::Tensor w(l.bases.front().rows, l.bases.front().cols);
  for (std::size_t b = 0; b < l.bases.size(); ++b) {
    const double a = l.coeffs(relation, b);
    for (std::size_t i = 0; i < w.size(); ++i) w.values[i] += a * l.bases[b].values[i];
  }
  return w;
}

namespace {

ad::Tensor uniform_tensor(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  ad::Tensor t(rows, cols);
  for (auto& x : t.values) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

RgcnParams init_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  RgcnParams p;
  p.config = config;
  Rng rng({seed, 0x1417ULL});
  for (std::size_t k = 0; k < config.n_layers; ++k) {
    const auto in = config.layer_in(k), out = config.layer_out(k);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    RgcnLayerParams l;
    for (std::size_t b = 0; b < config.n_bases; ++b) l.bases.push_back(uniform_tensor(rng, in, out, bound));
    l.coeffs = uniform_tensor(rng, config.n_relations, config.n_bases, 1.0 / std::sqrt(static_cast<double>(config.n_bases)));
    l.self_weight = uniform_tensor(rng, in, out, bound);
    l.ln_gain = ad::Tensor(1, out, 1.0);
    l.ln_bias = ad::Tensor(1, out, 0.0);
    p.layers.push_back(std::move(l));
  }
  p.proj_w1 = uniform_tensor(rng, config.out_dim, config.proj_hidden, 1.0 / std::sqrt(static_cast<double>(config.out_dim)));
  p.proj_b1 = ad::Tensor(1, config.proj_hidden, 0.0);
  p.proj_w2 = uniform_tensor(rng, config.proj_hidden, config.proj_out,
                             1.0 / std::sqrt(static_cast<double>(config.proj_hidden)));
  p.proj_b2 = ad::Tensor(1, config.proj_out, 0.0);
  return p;
}

std::size_t unfactored_parameter_count(const EncoderConfig& c) {
  std::size_t n = 0;
  for (std::size_t k = 0; k < c.n_layers; ++k) {
    const auto in = c.layer_in(k), out = c.layer_out(k);
    n += (c.n_relations + 1) * in * out + 2 * out;
  }
  n += c.out_dim * c.proj_hidden + c.proj_hidden + c.proj_hidden * c.proj_out + c.proj_out;
  return n;
}

PreparedGraph PreparedGraph::from(const TraceGraph& g) {
  PreparedGraph p;
  p.node_count = g.nodes.size();
  std::array<std::vector<std::pair<std::uint32_t, std::uint32_t>>, kNumRelations> lists;
  for (const auto& e : g.edges) lists[static_cast<std::size_t>(e.relation)].emplace_back(e.src, e.dst);
  for (std::size_t r = 0; r < kNumRelations; ++r) p.relations[r] = kernels::RelationCsr::from_edges(p.node_count, lists[r]);
  for (const auto& s : g.warp_spans) {
    if (s.end > s.begin) p.warp_ranges.emplace_back(s.begin, s.end);
  }
  if (g.warp_spans.empty() && p.node_count > 0) p.warp_ranges.emplace_back(0, p.node_count);
  return p;
}

BoundParams bind(ad::Tape& tape, const RgcnParams& params, RgcnParams* grads) {
  auto take = [&](const ad::Tensor& value, ad::Tensor* sink) {
    return grads ? tape.leaf(value, sink) : tape.constant(value);
  };
  BoundParams b;
  b.dropout = params.config.dropout;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& l = params.layers[k];
    RgcnLayerParams* gl = grads ? &grads->layers[k] : nullptr;
    BoundLayer bl;
    for (std::size_t i = 0; i < l.bases.size(); ++i) bl.bases.push_back(take(l.bases[i], gl ? &gl->bases[i] : nullptr));
    bl.coeffs = take(l.coeffs, gl ? &gl->coeffs : nullptr);
    bl.self_weight = take(l.self_weight, gl ? &gl->self_weight : nullptr);
    bl.ln_gain = take(l.ln_gain, gl ? &gl->ln_gain : nullptr);
    bl.ln_bias = take(l.ln_bias, gl ? &gl->ln_bias : nullptr);
    b.layers.push_back(std::move(bl));
  }
  b.proj_w1 = take(params.proj_w1, grads ? &grads->proj_w1 : nullptr);
  b.proj_b1 = take(params.proj_b1, grads ? &grads->proj_b1 : nullptr);
  b.proj_w2 = take(params.proj_w2, grads ? &grads->proj_w2 : nullptr);
  b.proj_b2 = take(params.proj_b2, grads ? &grads->proj_b2 : nullptr);
  return b;
}

ad::Var rgcn_layer(ad::Var h, const PreparedGraph& g, const BoundLayer& layer, double dropout, bool last) {
  if (h.rows() != g.node_count) {
    throw Error(ErrorCode::ShapeMismatch,
                "feature rows " + std::to_string(h.rows()) + " vs " + std::to_string(g.node_count) + " nodes");
  }
  ad::Var acc = ad::matmul(h, layer.self_weight);
  // sum_r A_r H W_r with W_r = sum_b a_rb V_b, regrouped as sum_b (sum_r a_rb A_r H) V_b.
  std::vector<ad::Var> aggregated;
  aggregated.reserve(kNumRelations);
  for (const auto& rel : g.relations) aggregated.push_back(ad::relation_mean(h, rel));
  for (std::size_t b = 0; b < layer.bases.size(); ++b) {
    ad::Var mixed = ad::relation_combine(layer.coeffs, b, aggregated);
    acc = ad::add(acc, ad::matmul(mixed, layer.bases[b]));
  }
  ad::Var out = ad::relu(ad::layer_norm(acc, layer.ln_gain, layer.ln_bias));
  return last ? out : ad::dropout(out, dropout);
}

namespace {

ad::Var run_layers(ad::Var features, const PreparedGraph& g, const BoundParams& p) {
  if (g.node_count == 0) throw Error(ErrorCode::EmptyGraph, "graph has no nodes");
  ad::Var h = features;
  for (std::size_t k = 0; k < p.layers.size(); ++k) h = rgcn_layer(h, g, p.layers[k], p.dropout, k + 1 == p.layers.size());
  return h;
}

}  // namespace

ad::Var encode_warps(ad::Var features, const PreparedGraph& g, const BoundParams& p) {
  if (g.warp_ranges.empty()) throw Error(ErrorCode::NoWarps, "graph has no non-empty warp");
  return ad::segment_mean(run_layers(features, g, p), g.warp_ranges);
}

ad::Var encode_warp(ad::Var features, const PreparedGraph& g, const BoundParams& p) {
  return ad::mean_rows(run_layers(features, g, p));
}

ad::Var encode_kernel(ad::Var features, const PreparedGraph& g, const BoundParams& p) {
  return ad::mean_rows(encode_warps(features, g, p));
}

ad::Var encode_kernel(std::span<const ad::Var> warp_embeddings) {
  if (warp_embeddings.empty()) throw Error(ErrorCode::NoWarps, "no warp embeddings");
  return ad::mean_rows(ad::stack_rows(warp_embeddings));
}

ad::Var project(ad::Var z, const BoundParams& p) {
  if (z.cols() != p.proj_w1.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "projection expects " + std::to_string(p.proj_w1.rows()) + " columns");
  }
  ad::Var h = ad::relu(ad::add_row(ad::matmul(z, p.proj_w1), p.proj_b1));
  h = ad::dropout(h, p.dropout);
  return ad::add_row(ad::matmul(h, p.proj_w2), p.proj_b2);
}

std::vector<double> embed_kernel(const GraphView& view, const RgcnParams& params) {
  ad::Tape tape(false);
  auto bound = bind(tape, params);
  auto prepared = PreparedGraph::from(view.graph);
  auto z = encode_kernel(tape.constant(view.features), prepared, bound);
  return z.value().values;
}

}  // namespace gcls
