// SPDX-License-Identifier: Apache-2.0
//
// Adam optimizer, learning-rate schedule, training loop, and the
// finite-difference gradient-check harness that serves as the library's
// correctness oracle.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tgm/data.hpp"
#include "tgm/eval.hpp"
#include "tgm/model.hpp"
#include "tgm/types.hpp"

namespace tgm {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Vector> m, v;  // one entry per learnable tensor, view order
  std::int64_t step = 0;
};

AdamState initAdamState(const std::vector<TensorView>& params);

// Standard bias-corrected Adam update, in place, deterministic. Throws
// NumericError naming the tensor on a non-finite gradient.
void adamStep(AdamState& state, const std::vector<TensorView>& params,
              const std::vector<TensorView>& grads, double lr,
              const AdamConfig& cfg = {});

struct TrainPlan {
  int epochs = 50;
  double base_lr = 0.01;
  std::uint64_t seed = 0;
  bool shuffle = true;  // per-epoch video order; one video per optimizer step
};

// base_lr * 0.1^floor(epoch / 10)
double lrForEpoch(const TrainPlan& plan, int epoch);

// 80/20 train/validation split of [0, n), fixed by seed.
std::pair<std::vector<int>, std::vector<int>> splitDataset(int n, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;
  double mean_loss = 0.0;  // per-frame mean over the training split
  double val_map = 0.0;    // NaN when the validation split is empty
  long wall_ms = 0;
};

std::string epochRecordJson(const EpochRecord& rec);

struct FitOptions {
  std::string out_dir;      // when set: per-epoch TGMM checkpoints + NDJSON log
  int start_epoch = 0;      // resume point (model/adam already restored)
  std::optional<AdamState> adam;
  int eval_threads = 1;     // validation mAP; fixed reduction order
};

struct FitResult {
  std::vector<EpochRecord> log;
  AdamState adam;
};

// One video per optimizer step; per-video loss scaled by 1/T for the update
// (reported losses stay per-frame means). Checkpoints are written per epoch
// together with a TGMO optimizer-state sidecar so training can resume
// bit-exactly. A non-finite loss aborts with the last checkpoint retained.
FitResult fit(Model& model, const Dataset& data, const TrainPlan& plan,
              const FitOptions& opts = {});

// Optimizer-state sidecar: magic `TGMO`, u32 version, u32 next_epoch,
// u64 adam step, then the m and v tensors as 64-bit little-endian floats.
void saveAdamState(const AdamState& state, int next_epoch, const std::string& path);
std::pair<AdamState, int> loadAdamState(const std::string& path);

// Validation predictions for a list of videos (deterministic; threads only
// parallelize independent videos, results collected in index order).
MapReport evaluateModel(const Model& model, const Dataset& data,
                        const std::vector<int>& indices, int threads = 1);

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-5;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;       // over non-exempt coordinates
  double max_abs_diff = 0.0;      // over all coordinates
  std::string worst_parameter;
  long checked_coords = 0;
  std::vector<std::string> skipped;  // frozen tensors
};

// Central differences (f(x+h) - f(x-h)) / 2h per coordinate against the
// analytic gradient; rel err = |a-n| / max(|a|, |n|, 1e-8). A coordinate also
// passes when |a-n| < 1e-8, which is below what a central difference of a
// 64-bit loss can resolve. The checked scalar is the per-frame-scaled loss
// bceLoss(...) / T, the same objective the trainer steps on. Frozen tensors
// are skipped and reported as skipped.
GradCheckReport gradCheck(Model& model, const Matrix& features, const Matrix& labels,
                          const GradCheckOptions& opts = {});
// Same, against externally supplied analytic gradients (harness self-test).
GradCheckReport gradCheckAgainst(Model& model, ModelGrads& analytic,
                                 const Matrix& features, const Matrix& labels,
                                 const GradCheckOptions& opts = {});

// Analytic gradients of the per-frame-scaled loss, as gradCheck compares them.
ModelGrads scaledLossGradients(Model& model, const Matrix& features, const Matrix& labels);

struct GradCheckCase {
  std::string name;
  Model model;
  Matrix features;
  Matrix labels;
};

// One small randomized case per valid LayerForm x KernelSource combination
// (both Gaussian layouts for mixture sources), plus a zero-layer model and a
// full two-layer model. Parameters are jittered to generic positions and
// ReLU-form instances are redrawn until no pre-activation sits within an
// FD step of the kink.
std::vector<GradCheckCase> gradCheckMatrix(std::uint64_t seed);

}  // namespace tgm
