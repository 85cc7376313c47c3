// SPDX-License-Identifier: Apache-2.0
//
// Forward and backward passes for every temporal layer form over C x D x T
// inputs, plus closed-form parameter counting.
//
// A layer form fixes the connectivity and the number NR of distinct 1xL
// kernel rows; the kernel source fixes how those rows are produced:
//
//   form                      input        output           NR
//   Conv1dStandard            1 x D x T    C_out x 1 x T    C_out * D
//   Conv1dSharedGaussian      1 x D x T    C_out x 1 x T    C_out
//   Conv1dPerChannelGaussian  1 x D x T    C_out x 1 x T    C_out * D
//   TgmSingle                 1 x D x T    C_out x D x T    C_out
//   TgmGrouped                C x D x T    C x D x T        C
//   TgmChannelCombine1x1      C_in x D x T C_out x D x T    C_out * C_in
//   TgmChannelCombineSoft     C_in x D x T C_out x D x T    C_out * C_in
//   TcUnconstrained           C_in x D x T C_out x D x T    C_out * C_in
//
//   source                    row construction          learnable tensors
//   LearnedGaussianMixture    softmax(omega) * k_hat    mu_hat, sigma_hat, omega
//   FixedGaussianMixture      same, mu/sigma frozen     omega
//   FixedRandomFilters        softmax(omega) * frozen   omega
//   UnconstrainedFree         raw NR x L taps           raw_rows
//
// Conv1dStandard and TcUnconstrained are unconstrained by definition and pin
// their source to UnconstrainedFree. Combine forms add a C_out x C_in weight
// map (1x1 + ReLU, or row-softmax soft attention).
//
// Kernels are applied as cross-correlation with "same" zero padding and
// center tap floor(L/2), so the output time length always equals T.
#pragma once

#include "tgm/kernel.hpp"
#include "tgm/types.hpp"

namespace tgm {

enum class LayerForm {
  Conv1dStandard,
  Conv1dSharedGaussian,
  Conv1dPerChannelGaussian,
  TgmSingle,
  TgmGrouped,
  TgmChannelCombine1x1,
  TgmChannelCombineSoft,
  TcUnconstrained,
};

enum class KernelSource {
  LearnedGaussianMixture,
  FixedGaussianMixture,
  FixedRandomFilters,
  UnconstrainedFree,
};

struct LayerConfig {
  LayerForm form = LayerForm::TgmSingle;
  KernelSource source = KernelSource::LearnedGaussianMixture;
  int c_in = 1;
  int c_out = 1;
  int L = 1;
  int M = 1;
  int d = 1;  // input feature dimensionality
  // When true, every mixture row owns its own group of M Gaussians (or fixed
  // filters) instead of sharing one group across the layer.
  bool per_row_gaussians = false;
};

const char* formName(LayerForm f);
const char* sourceName(KernelSource s);

bool isConv1dForm(LayerForm f);
bool usesCombineWeights(LayerForm f);
bool usesGaussianParams(KernelSource s);
bool usesMixtureWeights(KernelSource s);

// Number of distinct 1xL kernel rows the layer materializes.
int mixtureRows(const LayerConfig& c);
// Output shape: (channels, feature dim); time is preserved.
int outputChannels(const LayerConfig& c);
int outputDim(const LayerConfig& c);

void validateLayer(const LayerConfig& c);

// Learnable parameter count of one layer (frozen tensors excluded).
long paramCount(const LayerConfig& c);

struct LayerParams {
  Vector mu_hat;      // Gaussian sources only
  Vector sigma_hat;
  Matrix omega;       // NR x M, mixture sources only
  Matrix raw_rows;    // NR x L, UnconstrainedFree only
  Matrix fixed_rows;  // frozen filter bank, FixedRandomFilters only
  Matrix combine_w;   // c_out x c_in, combine forms only
};

LayerParams initLayerParams(const LayerConfig& c, Rng& rng);
// Zero-valued tensors with the same shapes as `p` (gradient accumulator).
LayerParams zeroLayerParamsLike(const LayerParams& p);

struct LayerCache {
  ChannelStack input;
  KernelBank bank;        // mixture sources
  Matrix rows;            // NR x L effective kernels
  ChannelStack combine_g; // combine forms: c_out*c_in entries of D x T
  ChannelStack pre;       // 1x1 combine pre-activations
  Matrix alpha;           // soft combine row-softmax of combine_w
  bool valid = false;
};

ChannelStack layerForward(const LayerConfig& c, const LayerParams& p,
                          const ChannelStack& input, LayerCache* cache);

struct LayerGrads {
  LayerParams params;   // frozen tensors zero-filled
  ChannelStack input;
};

LayerGrads layerBackward(const LayerConfig& c, const LayerParams& p,
                         const LayerCache& cache, const ChannelStack& d_output);

// --- correlation primitives ("same" zero padding, center tap L/2) ---------
//
// Free functions over arbitrary Eigen expressions so rows, blocks and whole
// matrices all work without copies.

// out(d, t) += sum_l k(l) * in(d, t + l - L/2)
template <class In, class Out>
void corrAccum(const Eigen::MatrixBase<In>& in, const Vector& k,
               const Eigen::MatrixBase<Out>& out_) {
  auto& out = const_cast<Eigen::MatrixBase<Out>&>(out_);
  const Index t = in.cols();
  const int L = static_cast<int>(k.size());
  const int off = L / 2;
  for (int l = 0; l < L; ++l) {
    const Index shift = l - off;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(t, t - shift);
    if (t1 <= t0) continue;
    out.middleCols(t0, t1 - t0) += k(l) * in.middleCols(t0 + shift, t1 - t0);
  }
}

// d_in(d, t + l - L/2) += k(l) * d_out(d, t)  (adjoint of corrAccum)
template <class DOut, class DIn>
void corrTransposeAccum(const Eigen::MatrixBase<DOut>& d_out, const Vector& k,
                        const Eigen::MatrixBase<DIn>& d_in_) {
  auto& d_in = const_cast<Eigen::MatrixBase<DIn>&>(d_in_);
  const Index t = d_out.cols();
  const int L = static_cast<int>(k.size());
  const int off = L / 2;
  for (int l = 0; l < L; ++l) {
    const Index shift = l - off;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(t, t - shift);
    if (t1 <= t0) continue;
    d_in.middleCols(t0 + shift, t1 - t0) += k(l) * d_out.middleCols(t0, t1 - t0);
  }
}

// d_k(l) += sum_{d,t} d_out(d, t) * in(d, t + l - L/2)
template <class In, class DOut>
void corrKernelGradAccum(const Eigen::MatrixBase<In>& in,
                         const Eigen::MatrixBase<DOut>& d_out, Vector& d_k) {
  const Index t = in.cols();
  const int L = static_cast<int>(d_k.size());
  const int off = L / 2;
  for (int l = 0; l < L; ++l) {
    const Index shift = l - off;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(t, t - shift);
    if (t1 <= t0) continue;
    d_k(l) += d_out.middleCols(t0, t1 - t0)
                  .cwiseProduct(in.middleCols(t0 + shift, t1 - t0))
                  .sum();
  }
}

}  // namespace tgm
