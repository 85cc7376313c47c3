// SPDX-License-Identifier: Apache-2.0
#include "tgm/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "binio.hpp"
#include "tgm/eval.hpp"

namespace tgm {

AdamState initAdamState(const std::vector<TensorView>& params) {
  AdamState state;
  for (const TensorView& v : params) {
    if (!v.learnable) continue;
    state.m.push_back(Vector::Zero(v.size));
    state.v.push_back(Vector::Zero(v.size));
  }
  return state;
}

void adamStep(AdamState& state, const std::vector<TensorView>& params,
              const std::vector<TensorView>& grads, double lr, const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw UsageError("adamStep: parameter/gradient view count mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t k = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].learnable) continue;
    if (k >= state.m.size() || state.m[k].size() != params[i].size)
      throw UsageError("adamStep: optimizer state does not match parameters");
    Vector& m = state.m[k];
    Vector& v = state.v[k];
    ++k;
    for (Index j = 0; j < params[i].size; ++j) {
      const double g = grads[i].data[j];
      if (!std::isfinite(g))
        throw NumericError("non-finite gradient in tensor '" + params[i].name + "'");
      m(j) = cfg.beta1 * m(j) + (1.0 - cfg.beta1) * g;
      v(j) = cfg.beta2 * v(j) + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m(j) / bc1;
      const double v_hat = v(j) / bc2;
      params[i].data[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

double lrForEpoch(const TrainPlan& plan, int epoch) {
  if (epoch < 0 || epoch >= plan.epochs)
    throw UsageError("lrForEpoch: epoch out of range");
  return plan.base_lr * std::pow(0.1, epoch / 10);
}

std::pair<std::vector<int>, std::vector<int>> splitDataset(int n, std::uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(deriveSeed(seed, SeedStream::DatasetSplit));
  for (int i = n - 1; i > 0; --i)
    std::swap(idx[i], idx[static_cast<int>(rng.bounded(i + 1))]);
  const int n_train = std::max(1, (n * 8) / 10);
  std::vector<int> train(idx.begin(), idx.begin() + n_train);
  std::vector<int> val(idx.begin() + n_train, idx.end());
  return {train, val};
}

std::string epochRecordJson(const EpochRecord& rec) {
  nlohmann::json j;
  j["epoch"] = rec.epoch;
  j["lr"] = rec.lr;
  j["mean_loss"] = rec.mean_loss;
  j["val_map"] = std::isnan(rec.val_map) ? nlohmann::json() : nlohmann::json(rec.val_map);
  j["wall_ms"] = rec.wall_ms;
  return j.dump();
}

MapReport evaluateModel(const Model& model, const Dataset& data,
                        const std::vector<int>& indices, int threads) {
  std::vector<Matrix> probs(indices.size());
  std::vector<FrameLabels> labels(indices.size());
  const auto evalRange = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      probs[i] = modelForward(model, data.features[indices[i]].values[0]).probs;
      labels[i] = data.labels[indices[i]];
    }
  };
  if (threads <= 1 || indices.size() < 2) {
    evalRange(0, indices.size());
  } else {
    // independent videos written to their own slots; collection order is fixed
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(threads), indices.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (indices.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t b = t * chunk;
      const std::size_t e = std::min(indices.size(), b + chunk);
      if (b < e) pool.emplace_back(evalRange, b, e);
    }
    for (auto& th : pool) th.join();
  }
  return perFrameMap(probs, labels);
}

namespace {

void saveOptionalCheckpoint(const Model& model, const AdamState& adam, int next_epoch,
                            const std::string& out_dir, const std::string& stem) {
  if (out_dir.empty()) return;
  const std::filesystem::path dir(out_dir);
  saveCheckpoint(model, (dir / (stem + ".tgmm")).string());
  saveAdamState(adam, next_epoch, (dir / (stem + ".tgmo")).string());
}

}  // namespace

FitResult fit(Model& model, const Dataset& data, const TrainPlan& plan,
              const FitOptions& opts) {
  if (data.size() == 0) throw ConfigError("fit: dataset is empty");
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.features[i].c != 1)
      throw ConfigError("fit: training videos must be 1 x D x T");
    if (data.features[i].t != data.labels[i].t ||
        data.labels[i].num_classes != model.config.num_classes)
      throw ConfigError("fit: video " + std::to_string(i) + " labels do not match");
  }

  const auto views = parameterViews(model);
  AdamState adam = opts.adam ? *opts.adam : initAdamState(views);
  auto [train_idx, val_idx] = splitDataset(static_cast<int>(data.size()), plan.seed);

  std::ofstream log_os;
  if (!opts.out_dir.empty()) {
    std::filesystem::path dir(opts.out_dir);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir))
      throw IoError("cannot create output directory '" + opts.out_dir + "'");
    const auto mode = opts.start_epoch > 0 ? std::ios::app : std::ios::trunc;
    log_os.open((dir / "train_log.ndjson").string(), mode);
    if (!log_os) throw IoError("cannot open training log in '" + opts.out_dir + "'");
  }
  if (opts.start_epoch == 0)
    saveOptionalCheckpoint(model, adam, 0, opts.out_dir, "ckpt_init");

  FitResult result;
  for (int epoch = opts.start_epoch; epoch < plan.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    const double lr = lrForEpoch(plan, epoch);

    std::vector<int> order = train_idx;
    if (plan.shuffle) {
      Rng rng(deriveSeed(deriveSeed(plan.seed, SeedStream::EpochShuffle),
                         static_cast<std::uint64_t>(epoch)));
      for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[i], order[static_cast<int>(rng.bounded(i + 1))]);
    }

    double loss_sum = 0.0;
    long frame_count = 0;
    for (int vi : order) {
      const Matrix& x = data.features[vi].values[0];
      const Matrix& z = data.labels[vi].z;
      ModelCache cache;
      const PredictionSequence pred = modelForward(model, x, &cache);
      const double loss = bceLoss(pred.logits, z);
      if (!std::isfinite(loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", video " +
                           std::to_string(vi));
      loss_sum += loss;
      frame_count += static_cast<long>(x.cols());
      // per-video loss scaled by 1/T for the optimizer step
      Matrix d_logits = bceLossGrad(pred.logits, z) / static_cast<double>(x.cols());
      ModelGrads grads = modelBackward(model, cache, d_logits);
      const auto grad_views = gradViews(model, grads);
      adamStep(adam, views, grad_views, lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.mean_loss = loss_sum / static_cast<double>(frame_count);
    rec.val_map = val_idx.empty()
                      ? std::numeric_limits<double>::quiet_NaN()
                      : evaluateModel(model, data, val_idx, opts.eval_threads).map;
    rec.wall_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                        std::chrono::steady_clock::now() - t_start)
                                        .count());
    result.log.push_back(rec);
    if (log_os) {
      log_os << epochRecordJson(rec) << '\n';
      log_os.flush();
    }
    char stem[32];
    std::snprintf(stem, sizeof(stem), "ckpt_epoch_%04d", epoch);
    saveOptionalCheckpoint(model, adam, epoch + 1, opts.out_dir, stem);
  }
  result.adam = std::move(adam);
  return result;
}

namespace {
constexpr char kAdamMagic[4] = {'T', 'G', 'M', 'O'};
constexpr std::uint32_t kAdamVersion = 1;
}  // namespace

void saveAdamState(const AdamState& state, int next_epoch, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  binio::writeBytes(os, kAdamMagic, 4);
  binio::writeU32(os, kAdamVersion);
  binio::writeU32(os, static_cast<std::uint32_t>(next_epoch));
  binio::writeU64(os, static_cast<std::uint64_t>(state.step));
  binio::writeU32(os, static_cast<std::uint32_t>(state.m.size()));
  for (const auto& vecs : {&state.m, &state.v})
    for (const Vector& v : *vecs) {
      binio::writeU32(os, static_cast<std::uint32_t>(v.size()));
      for (Index i = 0; i < v.size(); ++i) binio::writeF64(os, v(i));
    }
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

std::pair<AdamState, int> loadAdamState(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::Reader r(is, "optimizer state '" + path + "'");
  r.expectMagic(kAdamMagic);
  if (r.readU32() != kAdamVersion)
    throw FormatError("optimizer state '" + path + "': unsupported version");
  const int next_epoch = static_cast<int>(r.readU32());
  AdamState state;
  state.step = static_cast<std::int64_t>(r.readU64());
  const std::uint32_t n = r.readU32();
  for (auto* vecs : {&state.m, &state.v})
    for (std::uint32_t i = 0; i < n; ++i) {
      Vector v(static_cast<Index>(r.readU32()));
      for (Index j = 0; j < v.size(); ++j) v(j) = r.readF64();
      vecs->push_back(std::move(v));
    }
  if (!r.atEof())
    throw FormatError("optimizer state '" + path + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  return {std::move(state), next_epoch};
}

GradCheckReport gradCheckAgainst(Model& model, ModelGrads& analytic,
                                 const Matrix& features, const Matrix& labels,
                                 const GradCheckOptions& opts) {
  const auto params = parameterViews(model);
  const auto grads = gradViews(model, analytic);
  const double scale = 1.0 / static_cast<double>(features.cols());
  const auto lossAt = [&]() {
    return scale * bceLoss(modelForward(model, features).logits, labels);
  };

  GradCheckReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].learnable) {
      report.skipped.push_back(params[i].name);
      continue;
    }
    for (Index j = 0; j < params[i].size; ++j) {
      const double saved = params[i].data[j];
      params[i].data[j] = saved + opts.h;
      const double f_plus = lossAt();
      params[i].data[j] = saved - opts.h;
      const double f_minus = lossAt();
      params[i].data[j] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * opts.h);
      const double a = grads[i].data[j];
      const double rel = std::abs(a - numeric) /
                         std::max({std::abs(a), std::abs(numeric), 1e-8});
      report.max_abs_diff = std::max(report.max_abs_diff, std::abs(a - numeric));
      // absolute floor: differences below 1e-8 are under the precision a
      // central difference of a 64-bit loss can resolve
      const bool absolute_exempt = std::abs(a - numeric) < 1e-8;
      ++report.checked_coords;
      if (absolute_exempt) continue;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_parameter = params[i].name;
      }
      if (rel >= opts.tol) report.pass = false;
    }
  }
  return report;
}

ModelGrads scaledLossGradients(Model& model, const Matrix& features, const Matrix& labels) {
  ModelCache cache;
  const PredictionSequence pred = modelForward(model, features, &cache);
  const Matrix d_logits =
      bceLossGrad(pred.logits, labels) / static_cast<double>(features.cols());
  return modelBackward(model, cache, d_logits);
}

GradCheckReport gradCheck(Model& model, const Matrix& features, const Matrix& labels,
                          const GradCheckOptions& opts) {
  ModelGrads analytic = scaledLossGradients(model, features, labels);
  return gradCheckAgainst(model, analytic, features, labels, opts);
}

namespace {

std::vector<KernelSource> validSources(LayerForm form) {
  if (form == LayerForm::Conv1dStandard || form == LayerForm::TcUnconstrained)
    return {KernelSource::UnconstrainedFree};
  return {KernelSource::LearnedGaussianMixture, KernelSource::FixedGaussianMixture,
          KernelSource::FixedRandomFilters, KernelSource::UnconstrainedFree};
}

// Layer chain exercising one form x source cell. Forms that read more than
// one channel get a small unconstrained lead-in layer to feed them.
std::vector<LayerConfig> matrixLayerChain(LayerForm form, KernelSource source, bool per_row) {
  LayerConfig lc;
  lc.form = form;
  lc.source = source;
  lc.per_row_gaussians = per_row;
  lc.L = 5;
  lc.M = 3;
  switch (form) {
    case LayerForm::Conv1dStandard:
    case LayerForm::Conv1dSharedGaussian:
    case LayerForm::Conv1dPerChannelGaussian:
    case LayerForm::TgmSingle:
      lc.c_in = 1;
      lc.c_out = 3;
      lc.d = 4;
      return {lc};
    case LayerForm::TgmGrouped:
      lc.c_in = lc.c_out = 3;
      lc.d = 4;
      break;
    case LayerForm::TgmChannelCombine1x1:
    case LayerForm::TgmChannelCombineSoft:
    case LayerForm::TcUnconstrained:
      lc.c_in = 2;
      lc.c_out = 3;
      lc.d = 3;
      break;
  }
  LayerConfig lead;
  lead.form = LayerForm::TgmSingle;
  lead.source = KernelSource::UnconstrainedFree;
  lead.c_in = 1;
  lead.c_out = lc.c_in;
  lead.L = 3;
  lead.M = 1;
  lead.d = lc.d;
  return {lead, lc};
}

// Minimum |pre-activation| over all ReLU inputs in the caches; inf when the
// model has none.
double minReluMargin(const ModelCache& cache) {
  double margin = std::numeric_limits<double>::infinity();
  for (const LayerCache& lc : cache.layers)
    for (const Matrix& pre : lc.pre) margin = std::min(margin, pre.cwiseAbs().minCoeff());
  return margin;
}

GradCheckCase makeMatrixCase(std::string name, const ModelConfig& mc, std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t case_seed =
        deriveSeed(deriveSeed(seed, SeedStream::GradCheck), attempt);
    GradCheckCase c;
    c.name = name;
    c.model = initModel(mc, case_seed);
    Rng rng(case_seed + 1);
    // jitter every learnable tensor to a generic position
    for (const TensorView& v : parameterViews(c.model)) {
      if (!v.learnable) continue;
      for (Index i = 0; i < v.size; ++i) v.data[i] += 0.5 * rng.normal();
    }
    const int t = 9 + static_cast<int>(rng.bounded(8));  // 9..16
    c.features.resize(mc.d, t);
    for (Index i = 0; i < c.features.size(); ++i) c.features.data()[i] = rng.normal();
    c.labels.resize(mc.num_classes, t);
    for (Index i = 0; i < c.labels.size(); ++i)
      c.labels.data()[i] = rng.bounded(2) ? 1.0 : 0.0;

    ModelCache cache;
    modelForward(c.model, c.features, &cache);
    if (minReluMargin(cache) > 1e-3) return c;
    // a pre-activation sits too close to the ReLU kink for finite
    // differences; redraw
  }
}

}  // namespace

std::vector<GradCheckCase> gradCheckMatrix(std::uint64_t seed) {
  std::vector<GradCheckCase> cases;
  for (LayerForm form :
       {LayerForm::Conv1dStandard, LayerForm::Conv1dSharedGaussian,
        LayerForm::Conv1dPerChannelGaussian, LayerForm::TgmSingle, LayerForm::TgmGrouped,
        LayerForm::TgmChannelCombine1x1, LayerForm::TgmChannelCombineSoft,
        LayerForm::TcUnconstrained}) {
    for (KernelSource source : validSources(form)) {
      const bool has_layouts = source != KernelSource::UnconstrainedFree;
      for (bool per_row : has_layouts ? std::vector<bool>{false, true}
                                      : std::vector<bool>{false}) {
        const std::vector<LayerConfig> chain = matrixLayerChain(form, source, per_row);
        for (ClassifierKind kind :
             {ClassifierKind::PerClassLinear, ClassifierKind::SharedLinear}) {
          ModelConfig mc;
          mc.d = chain.front().d;
          mc.num_classes = chain.back().c_out;
          mc.classifier = kind;
          mc.layers = chain;
          std::string name = std::string(formName(form)) + " / " + sourceName(source);
          if (per_row) name += " / per_row";
          name += kind == ClassifierKind::PerClassLinear ? " / per_class" : " / shared";
          cases.push_back(makeMatrixCase(std::move(name), mc, seed + cases.size()));
        }
      }
    }
  }
  {
    ModelConfig mc;  // per-frame baseline: classifier only
    mc.d = 5;
    mc.num_classes = 3;
    mc.classifier = ClassifierKind::SharedLinear;
    cases.push_back(makeMatrixCase("zero_layer_baseline", mc, seed + cases.size()));
  }
  {
    ModelConfig mc;  // full two-layer model
    mc.d = 4;
    mc.num_classes = 3;
    mc.classifier = ClassifierKind::PerClassLinear;
    LayerConfig l0;
    l0.form = LayerForm::TgmSingle;
    l0.c_in = 1;
    l0.c_out = 3;
    l0.L = 3;
    l0.M = 2;
    l0.d = 4;
    LayerConfig l1;
    l1.form = LayerForm::TgmChannelCombine1x1;
    l1.c_in = 3;
    l1.c_out = 3;
    l1.L = 3;
    l1.M = 2;
    l1.d = 4;
    mc.layers = {l0, l1};
    cases.push_back(makeMatrixCase("two_layer_model", mc, seed + cases.size()));
  }
  return cases;
}

}  // namespace tgm
