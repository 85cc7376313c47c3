// SPDX-License-Identifier: Apache-2.0
#include "tgm/kernel.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

namespace tgm {

namespace {

constexpr double kSigmaHatClamp = 8.0;
// Additive floor applied to the (max-shifted) Gaussian values before
// normalization. Keeps every kernel entry strictly positive when far taps
// underflow; at 1e-300 relative magnitude it is invisible to values and to
// finite-difference checks.
constexpr double kRowFloor = 1e-300;

}  // namespace

void GaussianParams::validate() const {
  if (L < 1) throw ConfigError("GaussianParams: L must be >= 1");
  if (M < 1) throw ConfigError("GaussianParams: M must be >= 1");
  if (mu_hat.size() != sigma_hat.size())
    throw ConfigError("GaussianParams: mu_hat and sigma_hat must have identical length");
  if (mu_hat.size() == 0 || mu_hat.size() % M != 0)
    throw ConfigError("GaussianParams: parameter length must be a positive multiple of M");
}

double reparamCenter(double mu_hat, int L) {
  return (L - 1) * (std::tanh(mu_hat) + 1.0) / 2.0;
}

double reparamVariance(double sigma_hat) {
  const double clamped = std::clamp(sigma_hat, -kSigmaHatClamp, kSigmaHatClamp);
  return std::exp(clamped);
}

Vector reparamCenters(const Vector& mu_hat, int L) {
  return mu_hat.unaryExpr([L](double m) { return reparamCenter(m, L); });
}

Vector reparamVariances(const Vector& sigma_hat) {
  return sigma_hat.unaryExpr([](double s) { return reparamVariance(s); });
}

namespace {

// Shifted unnormalized Gaussian values and their per-row sums.
void gaussianRawRows(const Vector& mu, const Vector& sigma_sq, int L,
                     Matrix& gauss, Vector& norm) {
  const Index n = mu.size();
  gauss.resize(n, L);
  norm.resize(n);
  for (Index i = 0; i < n; ++i) {
    double emax = -std::numeric_limits<double>::infinity();
    for (int l = 0; l < L; ++l) {
      const double d = l - mu(i);
      const double e = -d * d / (2.0 * sigma_sq(i));
      gauss(i, l) = e;
      emax = std::max(emax, e);
    }
    assert(std::isfinite(emax));
    double z = 0.0;
    for (int l = 0; l < L; ++l) {
      const double g = std::exp(gauss(i, l) - emax) + kRowFloor;
      gauss(i, l) = g;
      z += g;
    }
    norm(i) = z;
  }
}

}  // namespace

Matrix gaussianKernelRows(const Vector& mu, const Vector& sigma_sq, int L) {
  Matrix gauss;
  Vector norm;
  gaussianRawRows(mu, sigma_sq, L, gauss, norm);
  return gauss.array().colwise() / norm.array();
}

Matrix attentionWeights(const Matrix& omega) {
  Matrix attn(omega.rows(), omega.cols());
  for (Index r = 0; r < omega.rows(); ++r) {
    const double mx = omega.row(r).maxCoeff();
    attn.row(r) = (omega.row(r).array() - mx).exp();
    attn.row(r) /= attn.row(r).sum();
  }
  return attn;
}

Matrix softmaxRowsBackward(const Matrix& attn, const Matrix& d_attn) {
  Matrix d_omega(attn.rows(), attn.cols());
  for (Index r = 0; r < attn.rows(); ++r) {
    const double dot = attn.row(r).dot(d_attn.row(r));
    d_omega.row(r) = attn.row(r).array() * (d_attn.row(r).array() - dot);
  }
  return d_omega;
}

Matrix mixKernels(const Matrix& attn, const Matrix& k_hat, MixLayout layout) {
  const Index nr = attn.rows();
  const Index m = attn.cols();
  if (layout == MixLayout::Shared) {
    if (k_hat.rows() != m)
      throw ConfigError("mixKernels: shared layout expects one k_hat row per Gaussian");
    return attn * k_hat;
  }
  if (k_hat.rows() != nr * m)
    throw ConfigError("mixKernels: per-row layout expects NR*M k_hat rows");
  Matrix rows = Matrix::Zero(nr, k_hat.cols());
  for (Index r = 0; r < nr; ++r)
    for (Index j = 0; j < m; ++j) rows.row(r) += attn(r, j) * k_hat.row(r * m + j);
  return rows;
}

namespace {

KernelBank buildBankCommon(Matrix k_hat, const Matrix& omega, MixLayout layout) {
  KernelBank bank;
  bank.attn = attentionWeights(omega);
  bank.k_hat = std::move(k_hat);
  bank.rows = mixKernels(bank.attn, bank.k_hat, layout);
  bank.layout = layout;
  return bank;
}

}  // namespace

KernelBank buildGaussianBank(const GaussianParams& params, const Matrix& omega,
                             MixLayout layout, bool with_cache) {
  params.validate();
  const Index n_gauss = params.mu_hat.size();
  if (omega.cols() != params.M)
    throw ConfigError("buildGaussianBank: omega must have M columns");
  if (layout == MixLayout::Shared && n_gauss != params.M)
    throw ConfigError("buildGaussianBank: shared layout expects M Gaussians");
  if (layout == MixLayout::PerRow && n_gauss != omega.rows() * params.M)
    throw ConfigError("buildGaussianBank: per-row layout expects NR*M Gaussians");

  const Vector mu = reparamCenters(params.mu_hat, params.L);
  const Vector sigma_sq = reparamVariances(params.sigma_hat);
  Matrix gauss;
  Vector norm;
  gaussianRawRows(mu, sigma_sq, params.L, gauss, norm);
  KernelBank bank =
      buildBankCommon(gauss.array().colwise() / norm.array(), omega, layout);
  bank.gaussian_path = true;
  if (with_cache) {
    bank.mu = mu;
    bank.sigma_sq = sigma_sq;
    bank.dmu_dmuhat = params.mu_hat.unaryExpr([L = params.L](double m) {
      const double th = std::tanh(m);
      return (L - 1) * (1.0 - th * th) / 2.0;
    });
    bank.dsig2_dsighat = Vector(n_gauss);
    for (Index i = 0; i < n_gauss; ++i) {
      const bool inside = params.sigma_hat(i) >= -kSigmaHatClamp && params.sigma_hat(i) <= kSigmaHatClamp;
      bank.dsig2_dsighat(i) = inside ? sigma_sq(i) : 0.0;
    }
    bank.gauss = std::move(gauss);
    bank.norm = std::move(norm);
    bank.has_cache = true;
  }
  return bank;
}

KernelBank buildFixedBank(const Matrix& fixed_rows, const Matrix& omega,
                          MixLayout layout, bool with_cache) {
  KernelBank bank = buildBankCommon(fixed_rows, omega, layout);
  bank.gaussian_path = false;
  bank.has_cache = with_cache;
  return bank;
}

KernelGrads kernelBackward(const Matrix& d_rows, const KernelBank& bank) {
  if (!bank.has_cache) throw UsageError("kernelBackward: bank was built without a cache");
  if (d_rows.rows() != bank.rows.rows() || d_rows.cols() != bank.rows.cols())
    throw ConfigError("kernelBackward: d_rows shape mismatch");

  const Index nr = bank.attn.rows();
  const Index m = bank.attn.cols();
  const Index L = bank.rows.cols();

  // rows = mix(attn, k_hat)
  Matrix d_attn(nr, m);
  Matrix d_k_hat = Matrix::Zero(bank.k_hat.rows(), L);
  if (bank.layout == MixLayout::Shared) {
    d_attn = d_rows * bank.k_hat.transpose();
    d_k_hat = bank.attn.transpose() * d_rows;
  } else {
    for (Index r = 0; r < nr; ++r) {
      for (Index j = 0; j < m; ++j) {
        d_attn(r, j) = d_rows.row(r).dot(bank.k_hat.row(r * m + j));
        d_k_hat.row(r * m + j) = bank.attn(r, j) * d_rows.row(r);
      }
    }
  }

  KernelGrads grads;
  grads.d_omega = softmaxRowsBackward(bank.attn, d_attn);
  if (!bank.gaussian_path) return grads;

  // k_hat = gauss / norm, gauss_l = exp(e_l - shift), e_l = -(l-mu)^2 / (2 s).
  // The shift and the additive floor are treated as constants; both are exact
  // to double precision because k_hat is invariant under the shift.
  const Index n_gauss = bank.k_hat.rows();
  grads.d_mu_hat.setZero(n_gauss);
  grads.d_sigma_hat.setZero(n_gauss);
  for (Index i = 0; i < n_gauss; ++i) {
    const double z = bank.norm(i);
    const double dot = d_k_hat.row(i).dot(bank.k_hat.row(i));
    double d_mu = 0.0;
    double d_s = 0.0;
    const double s = bank.sigma_sq(i);
    for (Index l = 0; l < L; ++l) {
      const double d_gauss = (d_k_hat(i, l) - dot) / z;
      const double d_e = d_gauss * bank.gauss(i, l);
      const double diff = static_cast<double>(l) - bank.mu(i);
      d_mu += d_e * diff / s;
      d_s += d_e * diff * diff / (2.0 * s * s);
    }
    grads.d_mu_hat(i) = d_mu * bank.dmu_dmuhat(i);
    grads.d_sigma_hat(i) = d_s * bank.dsig2_dsighat(i);
  }
  return grads;
}

void writeKernelRowsCsvBody(std::ostream& os, const Matrix& rows,
                            const std::function<std::pair<int, int>(int)>& channels_of) {
  char buf[64];
  for (Index r = 0; r < rows.rows(); ++r) {
    const auto [out_c, in_c] = channels_of(static_cast<int>(r));
    for (Index l = 0; l < rows.cols(); ++l) {
      std::snprintf(buf, sizeof(buf), "%d,%d,%ld,%.9g", out_c, in_c, static_cast<long>(l), rows(r, l));
      os << buf << '\n';
    }
  }
}

}  // namespace tgm
