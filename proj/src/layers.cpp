// SPDX-License-Identifier: Apache-2.0
#include "tgm/layers.hpp"

#include <cmath>

namespace tgm {

const char* formName(LayerForm f) {
  switch (f) {
    case LayerForm::Conv1dStandard: return "conv1d_standard";
    case LayerForm::Conv1dSharedGaussian: return "conv1d_shared_gaussian";
    case LayerForm::Conv1dPerChannelGaussian: return "conv1d_per_channel_gaussian";
    case LayerForm::TgmSingle: return "tgm_single";
    case LayerForm::TgmGrouped: return "tgm_grouped";
    case LayerForm::TgmChannelCombine1x1: return "tgm_channel_combine_1x1";
    case LayerForm::TgmChannelCombineSoft: return "tgm_channel_combine_soft";
    case LayerForm::TcUnconstrained: return "tc_unconstrained";
  }
  return "?";
}

const char* sourceName(KernelSource s) {
  switch (s) {
    case KernelSource::LearnedGaussianMixture: return "learned_gaussian_mixture";
    case KernelSource::FixedGaussianMixture: return "fixed_gaussian_mixture";
    case KernelSource::FixedRandomFilters: return "fixed_random_filters";
    case KernelSource::UnconstrainedFree: return "unconstrained_free";
  }
  return "?";
}

bool isConv1dForm(LayerForm f) {
  return f == LayerForm::Conv1dStandard || f == LayerForm::Conv1dSharedGaussian ||
         f == LayerForm::Conv1dPerChannelGaussian;
}

bool usesCombineWeights(LayerForm f) {
  return f == LayerForm::TgmChannelCombine1x1 || f == LayerForm::TgmChannelCombineSoft ||
         f == LayerForm::TcUnconstrained;
}

bool usesGaussianParams(KernelSource s) {
  return s == KernelSource::LearnedGaussianMixture || s == KernelSource::FixedGaussianMixture;
}

bool usesMixtureWeights(KernelSource s) { return s != KernelSource::UnconstrainedFree; }

int mixtureRows(const LayerConfig& c) {
  switch (c.form) {
    case LayerForm::Conv1dStandard:
    case LayerForm::Conv1dPerChannelGaussian:
      return c.c_out * c.d;
    case LayerForm::Conv1dSharedGaussian:
    case LayerForm::TgmSingle:
    case LayerForm::TgmGrouped:
      return c.c_out;
    case LayerForm::TgmChannelCombine1x1:
    case LayerForm::TgmChannelCombineSoft:
    case LayerForm::TcUnconstrained:
      return c.c_out * c.c_in;
  }
  return 0;
}

int outputChannels(const LayerConfig& c) { return c.c_out; }

int outputDim(const LayerConfig& c) { return isConv1dForm(c.form) ? 1 : c.d; }

void validateLayer(const LayerConfig& c) {
  if (c.c_in < 1 || c.c_out < 1 || c.L < 1 || c.M < 1 || c.d < 1)
    throw ConfigError("layer config: c_in, c_out, L, M and d must be positive");
  if ((isConv1dForm(c.form) || c.form == LayerForm::TgmSingle) && c.c_in != 1)
    throw ConfigError(std::string(formName(c.form)) + " requires c_in = 1");
  if (c.form == LayerForm::TgmGrouped && c.c_in != c.c_out)
    throw ConfigError("tgm_grouped requires c_in = c_out");
  const bool unconstrained_by_definition =
      c.form == LayerForm::Conv1dStandard || c.form == LayerForm::TcUnconstrained;
  if (unconstrained_by_definition && c.source != KernelSource::UnconstrainedFree)
    throw ConfigError(std::string(formName(c.form)) +
                      " requires source = unconstrained_free");
}

long paramCount(const LayerConfig& c) {
  validateLayer(c);
  const long nr = mixtureRows(c);
  long count = 0;
  switch (c.source) {
    case KernelSource::LearnedGaussianMixture: {
      const long n_gauss = c.per_row_gaussians ? nr * c.M : c.M;
      count = 2 * n_gauss + nr * c.M;
      break;
    }
    case KernelSource::FixedGaussianMixture:
    case KernelSource::FixedRandomFilters:
      count = nr * c.M;
      break;
    case KernelSource::UnconstrainedFree:
      count = nr * c.L;
      break;
  }
  if (usesCombineWeights(c.form)) count += static_cast<long>(c.c_out) * c.c_in;
  return count;
}

LayerParams initLayerParams(const LayerConfig& c, Rng& rng) {
  validateLayer(c);
  const int nr = mixtureRows(c);
  LayerParams p;
  if (usesGaussianParams(c.source)) {
    const int n_gauss = c.per_row_gaussians ? nr * c.M : c.M;
    p.mu_hat.resize(n_gauss);
    for (int i = 0; i < n_gauss; ++i) {
      const double u = rng.uniform(0.05, 0.95);  // centers spread over [0, L-1]
      p.mu_hat(i) = std::atanh(2.0 * u - 1.0);
    }
    p.sigma_hat = Vector::Zero(n_gauss);  // sigma^2 = 1
  }
  if (usesMixtureWeights(c.source)) {
    p.omega.resize(nr, c.M);
    for (int r = 0; r < nr; ++r)
      for (int m = 0; m < c.M; ++m) p.omega(r, m) = 0.01 * rng.normal();
  }
  if (c.source == KernelSource::UnconstrainedFree) {
    p.raw_rows.resize(nr, c.L);
    if (isConv1dForm(c.form)) {
      const double std = 1.0 / std::sqrt(static_cast<double>(c.d) * c.L);
      for (int r = 0; r < nr; ++r)
        for (int l = 0; l < c.L; ++l) p.raw_rows(r, l) = std * rng.normal();
    } else {
      // start near the unit-sum smoothing regime the Gaussian forms start in
      for (int r = 0; r < nr; ++r)
        for (int l = 0; l < c.L; ++l) p.raw_rows(r, l) = 1.0 / c.L + 0.01 * rng.normal();
    }
  }
  if (c.source == KernelSource::FixedRandomFilters) {
    const int n_fixed = c.per_row_gaussians ? nr * c.M : c.M;
    p.fixed_rows.resize(n_fixed, c.L);
    for (int r = 0; r < n_fixed; ++r) {
      for (int l = 0; l < c.L; ++l) p.fixed_rows(r, l) = rng.uniform01();
      p.fixed_rows.row(r) /= p.fixed_rows.row(r).sum();
    }
  }
  if (usesCombineWeights(c.form)) {
    p.combine_w.resize(c.c_out, c.c_in);
    for (int i = 0; i < c.c_out; ++i)
      for (int j = 0; j < c.c_in; ++j) p.combine_w(i, j) = 1.0 / c.c_in + 0.01 * rng.normal();
  }
  return p;
}

LayerParams zeroLayerParamsLike(const LayerParams& p) {
  LayerParams z;
  z.mu_hat = Vector::Zero(p.mu_hat.size());
  z.sigma_hat = Vector::Zero(p.sigma_hat.size());
  z.omega = Matrix::Zero(p.omega.rows(), p.omega.cols());
  z.raw_rows = Matrix::Zero(p.raw_rows.rows(), p.raw_rows.cols());
  z.fixed_rows = Matrix::Zero(p.fixed_rows.rows(), p.fixed_rows.cols());
  z.combine_w = Matrix::Zero(p.combine_w.rows(), p.combine_w.cols());
  return z;
}

namespace {

MixLayout layoutOf(const LayerConfig& c) {
  return c.per_row_gaussians ? MixLayout::PerRow : MixLayout::Shared;
}

Matrix effectiveRows(const LayerConfig& c, const LayerParams& p, KernelBank* bank,
                     bool with_cache) {
  switch (c.source) {
    case KernelSource::LearnedGaussianMixture:
    case KernelSource::FixedGaussianMixture: {
      GaussianParams gp{p.mu_hat, p.sigma_hat, c.L, c.M};
      KernelBank b = buildGaussianBank(gp, p.omega, layoutOf(c), with_cache);
      Matrix rows = b.rows;
      if (bank) *bank = std::move(b);
      return rows;
    }
    case KernelSource::FixedRandomFilters: {
      KernelBank b = buildFixedBank(p.fixed_rows, p.omega, layoutOf(c), with_cache);
      Matrix rows = b.rows;
      if (bank) *bank = std::move(b);
      return rows;
    }
    case KernelSource::UnconstrainedFree:
      return p.raw_rows;
  }
  throw ConfigError("unknown kernel source");
}

void checkInputShape(const LayerConfig& c, const ChannelStack& input) {
  if (static_cast<int>(input.size()) != c.c_in)
    throw ConfigError("layer input: expected " + std::to_string(c.c_in) + " channels, got " +
                      std::to_string(input.size()));
  const Index t = stackTime(input);
  if (t < 1) throw ConfigError("layer input: empty time axis");
  for (const Matrix& ch : input) {
    if (ch.rows() != c.d || ch.cols() != t)
      throw ConfigError("layer input: inconsistent channel shape");
  }
}

}  // namespace

ChannelStack layerForward(const LayerConfig& c, const LayerParams& p,
                          const ChannelStack& input, LayerCache* cache) {
  validateLayer(c);
  checkInputShape(c, input);
  const Index t = stackTime(input);
  const int nr = mixtureRows(c);

  Matrix rows = effectiveRows(c, p, cache ? &cache->bank : nullptr, cache != nullptr);
  if (rows.rows() != nr || rows.cols() != c.L)
    throw ConfigError("layer kernels: wrong shape for form");

  ChannelStack out;
  if (cache) {
    cache->input = input;
    cache->rows = rows;
    cache->combine_g.clear();
    cache->pre.clear();
    cache->alpha.resize(0, 0);
    cache->valid = true;
  }

  switch (c.form) {
    case LayerForm::Conv1dStandard:
    case LayerForm::Conv1dPerChannelGaussian: {
      const Matrix& x = input[0];
      out.assign(c.c_out, Matrix::Zero(1, t));
      for (int i = 0; i < c.c_out; ++i)
        for (int dd = 0; dd < c.d; ++dd) {
          const Vector k = rows.row(i * c.d + dd);
          corrAccum(x.row(dd), k, out[i].row(0));
        }
      break;
    }
    case LayerForm::Conv1dSharedGaussian: {
      const Matrix colsum = input[0].colwise().sum();
      out.assign(c.c_out, Matrix::Zero(1, t));
      for (int i = 0; i < c.c_out; ++i) {
        const Vector k = rows.row(i);
        corrAccum(colsum, k, out[i]);
      }
      break;
    }
    case LayerForm::TgmSingle: {
      out.assign(c.c_out, Matrix::Zero(c.d, t));
      for (int i = 0; i < c.c_out; ++i) {
        const Vector k = rows.row(i);
        corrAccum(input[0], k, out[i]);
      }
      break;
    }
    case LayerForm::TgmGrouped: {
      out.assign(c.c_out, Matrix::Zero(c.d, t));
      for (int i = 0; i < c.c_out; ++i) {
        const Vector k = rows.row(i);
        corrAccum(input[i], k, out[i]);
      }
      break;
    }
    case LayerForm::TgmChannelCombine1x1:
    case LayerForm::TgmChannelCombineSoft:
    case LayerForm::TcUnconstrained: {
      const bool soft = c.form == LayerForm::TgmChannelCombineSoft;
      Matrix alpha;
      if (soft) alpha = attentionWeights(p.combine_w);
      ChannelStack g;
      g.reserve(static_cast<size_t>(c.c_out) * c.c_in);
      out.assign(c.c_out, Matrix::Zero(c.d, t));
      ChannelStack pre;
      if (!soft) pre.assign(c.c_out, Matrix::Zero(c.d, t));
      for (int i = 0; i < c.c_out; ++i) {
        for (int j = 0; j < c.c_in; ++j) {
          Matrix gij = Matrix::Zero(c.d, t);
          const Vector k = rows.row(i * c.c_in + j);
          corrAccum(input[j], k, gij);
          if (soft)
            out[i] += alpha(i, j) * gij;
          else
            pre[i] += p.combine_w(i, j) * gij;
          if (cache) g.push_back(std::move(gij));
        }
        if (!soft) out[i] = pre[i].cwiseMax(0.0);
      }
      if (cache) {
        cache->combine_g = std::move(g);
        if (soft)
          cache->alpha = std::move(alpha);
        else
          cache->pre = std::move(pre);
      }
      break;
    }
  }
  return out;
}

LayerGrads layerBackward(const LayerConfig& c, const LayerParams& p,
                         const LayerCache& cache, const ChannelStack& d_output) {
  if (!cache.valid) throw UsageError("layerBackward: forward cache missing");
  const Index t = stackTime(cache.input);
  if (static_cast<int>(d_output.size()) != c.c_out || stackTime(d_output) != t ||
      stackDim(d_output) != outputDim(c))
    throw ConfigError("layerBackward: d_output shape mismatch");

  LayerGrads grads;
  grads.params = zeroLayerParamsLike(p);
  grads.input = zerosLike(cache.input);
  Matrix d_rows = Matrix::Zero(cache.rows.rows(), cache.rows.cols());

  switch (c.form) {
    case LayerForm::Conv1dStandard:
    case LayerForm::Conv1dPerChannelGaussian: {
      const Matrix& x = cache.input[0];
      for (int i = 0; i < c.c_out; ++i)
        for (int dd = 0; dd < c.d; ++dd) {
          const int r = i * c.d + dd;
          Vector dk = d_rows.row(r);
          corrKernelGradAccum(x.row(dd), d_output[i].row(0), dk);
          d_rows.row(r) = dk;
          const Vector k = cache.rows.row(r);
          corrTransposeAccum(d_output[i].row(0), k, grads.input[0].row(dd));
        }
      break;
    }
    case LayerForm::Conv1dSharedGaussian: {
      const Matrix colsum = cache.input[0].colwise().sum();
      Matrix d_colsum = Matrix::Zero(1, t);
      for (int i = 0; i < c.c_out; ++i) {
        Vector dk = d_rows.row(i);
        corrKernelGradAccum(colsum, d_output[i], dk);
        d_rows.row(i) = dk;
        const Vector k = cache.rows.row(i);
        corrTransposeAccum(d_output[i], k, d_colsum);
      }
      grads.input[0] = d_colsum.replicate(c.d, 1);
      break;
    }
    case LayerForm::TgmSingle: {
      for (int i = 0; i < c.c_out; ++i) {
        Vector dk = d_rows.row(i);
        corrKernelGradAccum(cache.input[0], d_output[i], dk);
        d_rows.row(i) = dk;
        const Vector k = cache.rows.row(i);
        corrTransposeAccum(d_output[i], k, grads.input[0]);
      }
      break;
    }
    case LayerForm::TgmGrouped: {
      for (int i = 0; i < c.c_out; ++i) {
        Vector dk = d_rows.row(i);
        corrKernelGradAccum(cache.input[i], d_output[i], dk);
        d_rows.row(i) = dk;
        const Vector k = cache.rows.row(i);
        corrTransposeAccum(d_output[i], k, grads.input[i]);
      }
      break;
    }
    case LayerForm::TgmChannelCombine1x1:
    case LayerForm::TgmChannelCombineSoft:
    case LayerForm::TcUnconstrained: {
      const bool soft = c.form == LayerForm::TgmChannelCombineSoft;
      Matrix d_alpha;
      if (soft) d_alpha = Matrix::Zero(c.c_out, c.c_in);
      for (int i = 0; i < c.c_out; ++i) {
        // ReLU subgradient at 0 is 0
        Matrix d_mix;
        if (soft)
          d_mix = d_output[i];
        else
          d_mix = (cache.pre[i].array() > 0.0).select(d_output[i], Matrix::Zero(c.d, t));
        for (int j = 0; j < c.c_in; ++j) {
          const int r = i * c.c_in + j;
          const Matrix& gij = cache.combine_g[static_cast<size_t>(r)];
          if (soft)
            d_alpha(i, j) = d_mix.cwiseProduct(gij).sum();
          else
            grads.params.combine_w(i, j) = d_mix.cwiseProduct(gij).sum();
          const double wij = soft ? cache.alpha(i, j) : p.combine_w(i, j);
          const Matrix d_g = wij * d_mix;
          Vector dk = d_rows.row(r);
          corrKernelGradAccum(cache.input[j], d_g, dk);
          d_rows.row(r) = dk;
          const Vector k = cache.rows.row(r);
          corrTransposeAccum(d_g, k, grads.input[j]);
        }
      }
      if (soft) grads.params.combine_w = softmaxRowsBackward(cache.alpha, d_alpha);
      break;
    }
  }

  switch (c.source) {
    case KernelSource::LearnedGaussianMixture: {
      KernelGrads kg = kernelBackward(d_rows, cache.bank);
      grads.params.mu_hat = std::move(kg.d_mu_hat);
      grads.params.sigma_hat = std::move(kg.d_sigma_hat);
      grads.params.omega = std::move(kg.d_omega);
      break;
    }
    case KernelSource::FixedGaussianMixture: {
      KernelGrads kg = kernelBackward(d_rows, cache.bank);
      grads.params.omega = std::move(kg.d_omega);
      break;  // frozen mu_hat / sigma_hat stay zero-filled
    }
    case KernelSource::FixedRandomFilters: {
      KernelGrads kg = kernelBackward(d_rows, cache.bank);
      grads.params.omega = std::move(kg.d_omega);
      break;
    }
    case KernelSource::UnconstrainedFree:
      grads.params.raw_rows = std::move(d_rows);
      break;
  }
  return grads;
}

}  // namespace tgm
