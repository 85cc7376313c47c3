// SPDX-License-Identifier: Apache-2.0
//
// Construction of temporal Gaussian-mixture convolution kernels and the exact
// gradients of any loss through that construction.
//
// A kernel bank turns raw parameters into NR unit-sum 1xL filters:
//
//   mu      = (L-1) * (tanh(mu_hat) + 1) / 2          centers in [0, L-1]
//   sigma^2 = exp(clamp(sigma_hat, -8, 8))            strictly positive
//   khat_m  = normalize_l exp(-(l - mu_m)^2 / (2 sigma_m^2))
//   a       = row-softmax(omega)                       NR x M mixing weights
//   row_r   = sum_m a(r,m) * khat_{g(r,m)}             convex, unit-sum
//
// where g(r,m) = m when the M Gaussians are shared across all mixture rows
// (MixLayout::Shared) and g(r,m) = r*M + m when every row owns its own group
// of M Gaussians (MixLayout::PerRow).
//
// The backward pass differentiates through the normalization constant, the
// clamp (zero gradient outside the interval) and the tanh/exp/softmax
// reparameterizations.
#pragma once

#include <functional>
#include <iosfwd>
#include <utility>

#include "tgm/types.hpp"

namespace tgm {

enum class MixLayout { Shared, PerRow };

struct GaussianParams {
  Vector mu_hat;     // length M (Shared) or NR*M (PerRow)
  Vector sigma_hat;  // same length as mu_hat
  int L = 1;
  int M = 1;

  void validate() const;
};

struct KernelBank {
  Matrix rows;   // NR x L mixed kernels; every row sums to 1
  Matrix k_hat;  // per-Gaussian normalized rows (or the fixed filter bank)
  Matrix attn;   // NR x M row-softmax of omega

  // Cache for the backward pass (populated when built with with_cache).
  Vector mu, sigma_sq;
  Vector dmu_dmuhat;       // (L-1)/2 * (1 - tanh^2(mu_hat))
  Vector dsig2_dsighat;    // sigma^2 inside the clamp interval, 0 outside
  Matrix gauss;            // shifted unnormalized Gaussian values (pre-normalization)
  Vector norm;             // per-Gaussian normalization constant
  MixLayout layout = MixLayout::Shared;
  bool gaussian_path = true;  // false when k_hat is a fixed filter bank
  bool has_cache = false;
};

struct KernelGrads {
  Vector d_mu_hat;   // empty for fixed-filter banks
  Vector d_sigma_hat;
  Matrix d_omega;
};

double reparamCenter(double mu_hat, int L);
double reparamVariance(double sigma_hat);
Vector reparamCenters(const Vector& mu_hat, int L);
Vector reparamVariances(const Vector& sigma_hat);

// One normalized Gaussian row per (mu, sigma^2) pair. Rows sum to 1 and are
// strictly positive for every finite input.
Matrix gaussianKernelRows(const Vector& mu, const Vector& sigma_sq, int L);

// Row-wise softmax with max subtraction.
Matrix attentionWeights(const Matrix& omega);
// d_omega from (attn, d_attn) for a row-wise softmax.
Matrix softmaxRowsBackward(const Matrix& attn, const Matrix& d_attn);

// rows(r) = sum_m attn(r,m) * k_hat(g(r,m)).
Matrix mixKernels(const Matrix& attn, const Matrix& k_hat, MixLayout layout);

KernelBank buildGaussianBank(const GaussianParams& params, const Matrix& omega,
                             MixLayout layout, bool with_cache);
// Same mixing machinery over a frozen filter bank; only omega gets gradients.
KernelBank buildFixedBank(const Matrix& fixed_rows, const Matrix& omega,
                          MixLayout layout, bool with_cache);

KernelGrads kernelBackward(const Matrix& d_rows, const KernelBank& bank);

// CSV export of mixed kernels: header `out_channel,in_channel,tap,value`,
// values printed with 9 significant digits. `in_channel_of(r)` maps a mixture
// row to the input channel it is applied to.
void writeKernelRowsCsvBody(std::ostream& os, const Matrix& rows,
                            const std::function<std::pair<int, int>(int)>& channels_of);

}  // namespace tgm
