#include "gcls/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

#include "gcls/error.hpp"
#include "gcls/optim.hpp"
#include "gcls/rng.hpp"

namespace gcls {

namespace {

constexpr std::uint64_t kSplitTag = 0x5B17;
constexpr std::uint64_t kTrainViewTag = 0x7A1E;
constexpr std::uint64_t kValViewTag = 0x7A1F;
constexpr std::uint64_t kDropoutTag = 0xD809;
constexpr std::uint64_t kShuffleTag = 0x5F0F;

// Runs body(i) for i in [0, n) in parallel and rethrows the first failure
// by index so the reported error does not depend on scheduling.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      body(i);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct ViewPair {
  GraphView first, second;
  PreparedGraph first_prep, second_prep;
};

ViewPair draw_views(const TrainingSample& s, const AugmentationPool& pool, std::uint64_t stream) {
  Rng rng(derive_seed({stream, s.launch_id}));
  auto [a, b] = make_views(s.view, rng, pool);
  ViewPair out{std::move(a.view), std::move(b.view), {}, {}};
  out.first_prep = PreparedGraph::from(out.first.graph);
  out.second_prep = PreparedGraph::from(out.second.graph);
  return out;
}

// Projected outputs of both views stacked as a 2 x 64 tensor.
ad::Var forward_pair(ad::Tape& tape, const ViewPair& v, const BoundParams& bound) {
  auto p1 = project(encode_kernel(tape.constant(v.first.features), v.first_prep, bound), bound);
  auto p2 = project(encode_kernel(tape.constant(v.second.features), v.second_prep, bound), bound);
  std::vector<ad::Var> rows{p1, p2};
  return ad::stack_rows(rows);
}

void add_into(RgcnParams& acc, const RgcnParams& g) {
  auto dst = acc.tensors();
  auto src = g.tensors();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto& d = dst[i].second->values;
    const auto& s = src[i].second->values;
    if (s.empty()) continue;
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
  }
}

double mean_or_nan(double total, std::size_t count) {
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(count);
}

}  // namespace

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::BadConfig, "train: " + what); };
  if (batch_size < 2) bad("batch_size must be >= 2");
  if (epochs == 0) bad("epochs must be positive");
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) bad("lr0 must be positive");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) bad("temperature must be positive");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) bad("split_ratio must be in (0, 1)");
  if (patience == 0) bad("patience must be positive");
  if (!(grad_clip > 0.0)) bad("grad_clip must be positive");
  if (!(weight_decay >= 0.0)) bad("weight_decay must be non-negative");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},   {"epochs", c.epochs},
                     {"lr0", c.lr0},                 {"temperature", c.temperature},
                     {"split_ratio", c.split_ratio}, {"seed", c.seed},
                     {"patience", c.patience},       {"grad_clip", c.grad_clip},
                     {"weight_decay", c.weight_decay}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  static const char* known[] = {"batch_size", "epochs", "lr0",       "temperature", "split_ratio",
                                "seed",       "patience", "grad_clip", "weight_decay"};
  if (!j.is_object()) throw Error(ErrorCode::BadConfig, "train config must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(known), std::end(known), it.key()) == std::end(known))
      throw Error(ErrorCode::BadConfig, "unknown train key '" + it.key() + "'");
  }
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.lr0 = j.value("lr0", c.lr0);
    c.temperature = j.value("temperature", c.temperature);
    c.split_ratio = j.value("split_ratio", c.split_ratio);
    c.seed = j.value("seed", c.seed);
    c.patience = j.value("patience", c.patience);
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BadConfig, std::string("train config: ") + e.what());
  }
}

DatasetSplit split_dataset(std::span<const std::uint64_t> launch_ids, double ratio, std::uint64_t seed) {
  const std::size_t n = launch_ids.size();
  if (n < 5) throw Error(ErrorCode::TooFewKernels, "need at least 5 kernels, got " + std::to_string(n));
  if (!(ratio > 0.0 && ratio < 1.0)) throw Error(ErrorCode::BadConfig, "split ratio must be in (0, 1)");
  std::vector<std::uint64_t> ids(launch_ids.begin(), launch_ids.end());
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw Error(ErrorCode::DuplicateLaunchId, "duplicate launch id in split input");
  Rng rng(derive_seed({seed, kSplitTag}));
  rng.shuffle(ids);
  auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  DatasetSplit out;
  out.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  out.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return out;
}

ad::Var infonce_loss(ad::Var z1, ad::Var z2, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::BadConfig, "temperature must be positive");
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols())
    throw Error(ErrorCode::ShapeMismatch, "infonce: view batches differ in shape");
  auto n1 = ad::l2_normalize_rows(z1);
  auto n2 = ad::l2_normalize_rows(z2);
  auto s = ad::scale(ad::matmul_nt(n1, n2), 1.0 / temperature);
  auto forward = ad::diag_cross_entropy(s);
  auto backward = ad::diag_cross_entropy(ad::transpose(s));
  return ad::scale(ad::add(forward, backward), 0.5);
}

double infonce_loss(const ad::Tensor& z1, const ad::Tensor& z2, double temperature) {
  ad::Tape tape(false);
  return infonce_loss(tape.constant(z1), tape.constant(z2), temperature).value().item();
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"train_loss", e.train_loss},
                     {"val_loss", std::isnan(e.val_loss) ? nlohmann::json(nullptr) : nlohmann::json(e.val_loss)},
                     {"lr", e.lr},
                     {"wall_seconds", e.wall_seconds}};
    out << j.dump() << '\n';
  }
  return out.str();
}

std::vector<std::pair<std::size_t, std::size_t>> make_batches(std::size_t n, std::size_t batch_size) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size) {
    std::size_t e = std::min(n, b + batch_size);
    if (e - b >= 2) out.emplace_back(b, e);
  }
  return out;
}

double batch_loss_and_grads(std::span<const TrainingSample* const> batch, const RgcnParams& params,
                            const TrainConfig& config, const AugmentationPool& pool, std::uint64_t view_stream,
                            std::uint64_t dropout_stream, bool train_mode, RgcnParams* grads) {
  const std::size_t b = batch.size();
  if (b < 2) throw Error(ErrorCode::ShapeMismatch, "batch needs at least two kernels");
  const std::size_t d = params.config.proj_out;

  std::vector<ViewPair> views(b);
  std::vector<std::unique_ptr<ad::Tape>> tapes(b);
  std::vector<ad::Var> outputs(b);
  std::vector<RgcnParams> partial(grads ? b : 0);
  ad::Tensor z1(b, d), z2(b, d);

  // One tape per kernel holding both views; kept alive until the loss
  // gradient is known.
  parallel_for(b, [&](std::size_t i) {
    views[i] = draw_views(*batch[i], pool, view_stream);
    tapes[i] = std::make_unique<ad::Tape>(train_mode, derive_seed({dropout_stream, batch[i]->launch_id}));
    if (grads) partial[i] = params.zeros_like();
    outputs[i] = forward_pair(*tapes[i], views[i], bind(*tapes[i], params, grads ? &partial[i] : nullptr));
    const auto& out = outputs[i].value();
    std::copy(out.row(0), out.row(0) + d, z1.row(i));
    std::copy(out.row(1), out.row(1) + d, z2.row(i));
    if (!grads) tapes[i].reset();
  });

  ad::Tape loss_tape(false);
  auto v1 = loss_tape.leaf(z1);
  auto v2 = loss_tape.leaf(z2);
  auto loss = infonce_loss(v1, v2, config.temperature);
  const double loss_value = loss.value().item();
  if (grads == nullptr) return loss_value;
  loss_tape.backward(loss);
  const auto& g1 = loss_tape.grad(v1);
  const auto& g2 = loss_tape.grad(v2);

  parallel_for(b, [&](std::size_t i) {
    ad::Tensor seed(2, d);
    std::copy(g1.row(i), g1.row(i) + d, seed.row(0));
    std::copy(g2.row(i), g2.row(i) + d, seed.row(1));
    tapes[i]->backward(outputs[i], seed);
    tapes[i].reset();
  });
  *grads = params.zeros_like();
  for (const auto& p : partial) add_into(*grads, p);
  return loss_value;
}

double validate(std::span<const TrainingSample> samples, const RgcnParams& params, const TrainConfig& config,
                const AugmentationPool& pool) {
  std::vector<const TrainingSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  std::sort(ptrs.begin(), ptrs.end(), [](auto* a, auto* b) { return a->launch_id < b->launch_id; });
  double total = 0.0;
  std::size_t count = 0;
  const auto stream = derive_seed({config.seed, kValViewTag});
  for (auto [b, e] : make_batches(ptrs.size(), config.batch_size)) {
    std::span<const TrainingSample* const> batch(ptrs.data() + b, e - b);
    total += batch_loss_and_grads(batch, params, config, pool, stream, 0, false, nullptr);
    ++count;
  }
  return mean_or_nan(total, count);
}

TrainResult train(std::span<const TrainingSample> corpus, const TrainConfig& config, const EncoderConfig& encoder,
                  const AugmentationPool& pool, const EpochCallback& on_epoch) {
  config.validate();
  encoder.validate();
  std::map<std::uint64_t, const TrainingSample*> by_id;
  std::vector<std::uint64_t> ids;
  for (const auto& s : corpus) {
    if (!by_id.emplace(s.launch_id, &s).second)
      throw Error(ErrorCode::DuplicateLaunchId, "launch id " + std::to_string(s.launch_id));
    if (s.view.graph.nodes.empty())
      throw Error(ErrorCode::EmptyGraph, "launch id " + std::to_string(s.launch_id));
    ids.push_back(s.launch_id);
  }

  TrainResult result;
  result.split = split_dataset(ids, config.split_ratio, config.seed);
  std::vector<const TrainingSample*> train_set;
  for (auto id : result.split.train) train_set.push_back(by_id.at(id));
  std::sort(train_set.begin(), train_set.end(), [](auto* a, auto* b) { return a->launch_id < b->launch_id; });
  std::vector<TrainingSample> val_set;
  for (auto id : result.split.validation) val_set.push_back(*by_id.at(id));

  RgcnParams params = init_params(encoder, config.seed);
  optim::AdamW opt(optim::AdamWConfig{.weight_decay = config.weight_decay});
  const std::size_t per_epoch = make_batches(train_set.size(), config.batch_size).size();
  const std::uint64_t total_steps = static_cast<std::uint64_t>(per_epoch * config.epochs);

  result.params = params;
  result.log.best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::uint64_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto order = train_set;
    Rng shuffle(derive_seed({config.seed, kShuffleTag, epoch}));
    shuffle.shuffle(order);

    double total = 0.0;
    std::size_t count = 0;
    double lr = 0.0;
    auto batches = make_batches(order.size(), config.batch_size);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto [b, e] = batches[bi];
      std::span<const TrainingSample* const> batch(order.data() + b, e - b);
      lr = optim::cosine_lr(step, total_steps, config.lr0);
      try {
        RgcnParams grads;
        total += batch_loss_and_grads(batch, params, config, pool, derive_seed({config.seed, kTrainViewTag, epoch}),
                                      derive_seed({config.seed, kDropoutTag, step}), true, &grads);
        auto named_p = params.tensors();
        auto named_g = grads.tensors();
        std::vector<ad::Tensor*> ps, gs;
        for (auto& [_, t] : named_p) ps.push_back(t);
        for (auto& [_, t] : named_g) gs.push_back(t);
        double norm = optim::clip_grad_norm(gs, config.grad_clip);
        if (!std::isfinite(norm)) throw Error(ErrorCode::NonFiniteValue, "gradient norm is not finite");
        std::vector<const ad::Tensor*> cgs(gs.begin(), gs.end());
        opt.step(ps, cgs, lr);
      } catch (const Error& err) {
        throw err.with_context("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi));
      }
      ++count;
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = mean_or_nan(total, count);
    rec.lr = lr;
    try {
      rec.val_loss = validate(val_set, params, config, pool);
    } catch (const Error& err) {
      throw err.with_context("epoch " + std::to_string(epoch) + " validation");
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    // Model selection falls back to the training loss when validation is
    // too small to form a batch.
    double score = std::isnan(rec.val_loss) ? rec.train_loss : rec.val_loss;
    if (score < result.log.best_loss) {
      result.log.best_loss = score;
      result.log.best_epoch = epoch;
      result.params = params;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  result.log.steps = step;
  return result;
}

}  // namespace gcls
