// SPDX-License-Identifier: Apache-2.0
#include "tgm/model.hpp"

#include <cmath>
#include <fstream>
#include <ostream>

#include "binio.hpp"
#include "tgm/config.hpp"

namespace tgm {

void validateModel(const ModelConfig& cfg) {
  if (cfg.d < 1) throw ConfigError("model config: d must be positive");
  if (cfg.num_classes < 1) throw ConfigError("model config: num_classes must be positive");
  int c = 1, d = cfg.d;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const LayerConfig& lc = cfg.layers[i];
    validateLayer(lc);
    if (lc.c_in != c || lc.d != d)
      throw ConfigError("model config: layer " + std::to_string(i) + " expects " +
                        std::to_string(lc.c_in) + "x" + std::to_string(lc.d) +
                        " input but the chain provides " + std::to_string(c) + "x" +
                        std::to_string(d));
    c = outputChannels(lc);
    d = outputDim(lc);
  }
  if (cfg.classifier == ClassifierKind::PerClassLinear && c != cfg.num_classes)
    throw ConfigError("model config: per-class classifier needs final c_out = num_classes (" +
                      std::to_string(c) + " != " + std::to_string(cfg.num_classes) + ")");
}

std::pair<int, int> finalShape(const ModelConfig& cfg) {
  int c = 1, d = cfg.d;
  for (const LayerConfig& lc : cfg.layers) {
    c = outputChannels(lc);
    d = outputDim(lc);
  }
  return {c, d};
}

namespace {

int classifierInputDim(const ModelConfig& cfg) {
  const auto [c, d] = finalShape(cfg);
  return cfg.classifier == ClassifierKind::PerClassLinear ? d : c * d;
}

LayerParams allocateLayerParams(const LayerConfig& c) {
  const int nr = mixtureRows(c);
  LayerParams p;
  if (usesGaussianParams(c.source)) {
    const int n_gauss = c.per_row_gaussians ? nr * c.M : c.M;
    p.mu_hat = Vector::Zero(n_gauss);
    p.sigma_hat = Vector::Zero(n_gauss);
  }
  if (usesMixtureWeights(c.source)) p.omega = Matrix::Zero(nr, c.M);
  if (c.source == KernelSource::UnconstrainedFree) p.raw_rows = Matrix::Zero(nr, c.L);
  if (c.source == KernelSource::FixedRandomFilters)
    p.fixed_rows = Matrix::Zero(c.per_row_gaussians ? nr * c.M : c.M, c.L);
  if (usesCombineWeights(c.form)) p.combine_w = Matrix::Zero(c.c_out, c.c_in);
  return p;
}

Model allocateModel(const ModelConfig& cfg) {
  validateModel(cfg);
  Model m;
  m.config = cfg;
  m.layers.reserve(cfg.layers.size());
  for (const LayerConfig& lc : cfg.layers) m.layers.push_back(allocateLayerParams(lc));
  m.cls_w = Matrix::Zero(cfg.num_classes, classifierInputDim(cfg));
  m.cls_b = Vector::Zero(cfg.num_classes);
  return m;
}

double stableSigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Model initModel(const ModelConfig& cfg, std::uint64_t seed) {
  validateModel(cfg);
  Rng rng(deriveSeed(seed, SeedStream::ModelInit));
  Model m;
  m.config = cfg;
  m.layers.reserve(cfg.layers.size());
  for (const LayerConfig& lc : cfg.layers) m.layers.push_back(initLayerParams(lc, rng));
  m.cls_w = Matrix::Zero(cfg.num_classes, classifierInputDim(cfg));
  for (Index i = 0; i < m.cls_w.rows(); ++i)
    for (Index j = 0; j < m.cls_w.cols(); ++j) m.cls_w(i, j) = 0.01 * rng.normal();
  m.cls_b = Vector::Zero(cfg.num_classes);
  return m;
}

PredictionSequence modelForward(const Model& model, const Matrix& features,
                                ModelCache* cache) {
  const ModelConfig& cfg = model.config;
  if (features.rows() != cfg.d)
    throw ConfigError("forward: features have dim " + std::to_string(features.rows()) +
                      " but model expects " + std::to_string(cfg.d));
  if (features.cols() < 1) throw ConfigError("forward: empty time axis");

  if (cache) {
    cache->layers.assign(cfg.layers.size(), LayerCache{});
    cache->valid = true;
  }

  ChannelStack stack{features};
  for (std::size_t i = 0; i < cfg.layers.size(); ++i)
    stack = layerForward(cfg.layers[i], model.layers[i], stack,
                         cache ? &cache->layers[i] : nullptr);

  const Index t = stackTime(stack);
  PredictionSequence pred;
  pred.logits.resize(cfg.num_classes, t);
  if (cfg.classifier == ClassifierKind::PerClassLinear) {
    for (int i = 0; i < cfg.num_classes; ++i)
      pred.logits.row(i) =
          (model.cls_w.row(i) * stack[i]).array() + model.cls_b(i);
  } else {
    const int d = static_cast<int>(stackDim(stack));
    pred.logits = model.cls_b.replicate(1, t);
    for (std::size_t c = 0; c < stack.size(); ++c)
      pred.logits += model.cls_w.middleCols(static_cast<Index>(c) * d, d) * stack[c];
  }
  pred.probs = pred.logits.unaryExpr([](double x) { return stableSigmoid(x); });
  if (cache) {
    cache->final_repr = std::move(stack);
    cache->logits = pred.logits;
  }
  return pred;
}

double bceLoss(const Matrix& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ConfigError("bceLoss: logits/labels shape mismatch");
  double loss = 0.0;
  for (Index i = 0; i < logits.rows(); ++i)
    for (Index j = 0; j < logits.cols(); ++j) {
      const double x = logits(i, j);
      const double z = labels(i, j);
      loss += std::max(x, 0.0) - x * z + std::log1p(std::exp(-std::abs(x)));
    }
  return loss;
}

Matrix bceLossGrad(const Matrix& logits, const Matrix& labels) {
  if (logits.rows() != labels.rows() || logits.cols() != labels.cols())
    throw ConfigError("bceLossGrad: logits/labels shape mismatch");
  return logits.unaryExpr([](double x) { return stableSigmoid(x); }) - labels;
}

ModelGrads modelBackward(const Model& model, const ModelCache& cache,
                         const Matrix& d_logits) {
  if (!cache.valid) throw UsageError("modelBackward: forward cache missing");
  const ModelConfig& cfg = model.config;
  const ChannelStack& repr = cache.final_repr;
  const Index t = stackTime(repr);
  if (d_logits.rows() != cfg.num_classes || d_logits.cols() != t)
    throw ConfigError("modelBackward: d_logits shape mismatch");

  ModelGrads grads;
  grads.cls_b = d_logits.rowwise().sum();
  grads.cls_w = Matrix::Zero(model.cls_w.rows(), model.cls_w.cols());
  ChannelStack d_stack = zerosLike(repr);
  if (cfg.classifier == ClassifierKind::PerClassLinear) {
    for (int i = 0; i < cfg.num_classes; ++i) {
      grads.cls_w.row(i) = d_logits.row(i) * repr[i].transpose();
      d_stack[i] = model.cls_w.row(i).transpose() * d_logits.row(i);
    }
  } else {
    const int d = static_cast<int>(stackDim(repr));
    for (std::size_t c = 0; c < repr.size(); ++c) {
      grads.cls_w.middleCols(static_cast<Index>(c) * d, d) = d_logits * repr[c].transpose();
      d_stack[c] = model.cls_w.middleCols(static_cast<Index>(c) * d, d).transpose() * d_logits;
    }
  }

  grads.layers.resize(cfg.layers.size());
  for (int i = static_cast<int>(cfg.layers.size()) - 1; i >= 0; --i) {
    LayerGrads lg = layerBackward(cfg.layers[i], model.layers[i], cache.layers[i], d_stack);
    grads.layers[i] = std::move(lg.params);
    d_stack = std::move(lg.input);
  }
  return grads;
}

namespace {

template <class Params, class Fn>
void forEachLayerTensor(const LayerConfig& cfg, Params& p, int layer_index, Fn&& fn) {
  const std::string prefix = "layer" + std::to_string(layer_index) + ".";
  const bool gauss_learnable = cfg.source == KernelSource::LearnedGaussianMixture;
  if (p.mu_hat.size()) fn(prefix + "mu_hat", p.mu_hat.data(), p.mu_hat.size(), gauss_learnable);
  if (p.sigma_hat.size())
    fn(prefix + "sigma_hat", p.sigma_hat.data(), p.sigma_hat.size(), gauss_learnable);
  if (p.omega.size()) fn(prefix + "omega", p.omega.data(), p.omega.size(), true);
  if (p.raw_rows.size()) fn(prefix + "raw_rows", p.raw_rows.data(), p.raw_rows.size(), true);
  if (p.fixed_rows.size())
    fn(prefix + "fixed_rows", p.fixed_rows.data(), p.fixed_rows.size(), false);
  if (p.combine_w.size()) fn(prefix + "combine_w", p.combine_w.data(), p.combine_w.size(), true);
}

template <class ModelT, class LayersT>
std::vector<TensorView> buildViews(const ModelT& model, LayersT& layers, Matrix& cls_w,
                                   Vector& cls_b) {
  std::vector<TensorView> views;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    forEachLayerTensor(model.config.layers[i], layers[i], static_cast<int>(i),
                       [&](std::string name, Scalar* data, Index size, bool learnable) {
                         views.push_back({std::move(name), data, size, learnable});
                       });
  }
  views.push_back({"classifier.weight", cls_w.data(), cls_w.size(), true});
  views.push_back({"classifier.bias", cls_b.data(), cls_b.size(), true});
  return views;
}

}  // namespace

std::vector<TensorView> parameterViews(Model& model) {
  return buildViews(model, model.layers, model.cls_w, model.cls_b);
}

std::vector<TensorView> gradViews(const Model& model, ModelGrads& grads) {
  return buildViews(model, grads.layers, grads.cls_w, grads.cls_b);
}

long classifierParamCount(const ModelConfig& cfg) {
  return static_cast<long>(cfg.num_classes) * classifierInputDim(cfg) + cfg.num_classes;
}

long totalParamCount(const ModelConfig& cfg) {
  long total = classifierParamCount(cfg);
  for (const LayerConfig& lc : cfg.layers) total += paramCount(lc);
  return total;
}

namespace {
constexpr char kCheckpointMagic[4] = {'T', 'G', 'M', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void saveCheckpoint(const Model& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  binio::writeBytes(os, kCheckpointMagic, 4);
  binio::writeU32(os, kCheckpointVersion);
  const std::string header = modelConfigJson(model.config);
  binio::writeU32(os, static_cast<std::uint32_t>(header.size()));
  binio::writeBytes(os, header.data(), header.size());
  Model& mutable_model = const_cast<Model&>(model);  // views only read here
  for (const TensorView& v : parameterViews(mutable_model))
    for (Index i = 0; i < v.size; ++i) binio::writeF64(os, v.data[i]);
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

Model loadCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::Reader r(is, "checkpoint '" + path + "'");
  r.expectMagic(kCheckpointMagic);
  const std::uint32_t version = r.readU32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "': unsupported version " +
                      std::to_string(version));
  const std::uint32_t header_len = r.readU32();
  std::string header(header_len, '\0');
  r.readBytes(header.data(), header_len);
  Model model = allocateModel(parseModelConfig(header));
  for (const TensorView& v : parameterViews(model))
    for (Index i = 0; i < v.size; ++i) v.data[i] = r.readF64();
  if (!r.atEof())
    throw FormatError("checkpoint '" + path + "': trailing bytes at offset " +
                      std::to_string(r.offset()));
  return model;
}

void exportKernelsCsv(const Model& model, std::ostream& os) {
  os << "out_channel,in_channel,tap,value\n";
  for (std::size_t li = 0; li < model.config.layers.size(); ++li) {
    const LayerConfig& c = model.config.layers[li];
    // effective mixed kernels, identical to what the forward pass applies
    Matrix rows;
    switch (c.source) {
      case KernelSource::LearnedGaussianMixture:
      case KernelSource::FixedGaussianMixture: {
        GaussianParams gp{model.layers[li].mu_hat, model.layers[li].sigma_hat, c.L, c.M};
        rows = buildGaussianBank(gp, model.layers[li].omega,
                                 c.per_row_gaussians ? MixLayout::PerRow : MixLayout::Shared,
                                 false)
                   .rows;
        break;
      }
      case KernelSource::FixedRandomFilters:
        rows = buildFixedBank(model.layers[li].fixed_rows, model.layers[li].omega,
                              c.per_row_gaussians ? MixLayout::PerRow : MixLayout::Shared,
                              false)
                   .rows;
        break;
      case KernelSource::UnconstrainedFree:
        rows = model.layers[li].raw_rows;
        break;
    }
    writeKernelRowsCsvBody(os, rows, [&c](int r) -> std::pair<int, int> {
      switch (c.form) {
        case LayerForm::Conv1dStandard:
        case LayerForm::Conv1dPerChannelGaussian:
          return {r / c.d, r % c.d};
        case LayerForm::Conv1dSharedGaussian:
        case LayerForm::TgmSingle:
          return {r, 0};
        case LayerForm::TgmGrouped:
          return {r, r};
        case LayerForm::TgmChannelCombine1x1:
        case LayerForm::TgmChannelCombineSoft:
        case LayerForm::TcUnconstrained:
          return {r / c.c_in, r % c.c_in};
      }
      return {r, 0};
    });
  }
}

}  // namespace tgm
