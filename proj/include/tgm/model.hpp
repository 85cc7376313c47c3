// SPDX-License-Identifier: Apache-2.0
//
// Stacked temporal layers over a feature sequence, a per-frame multi-label
// classifier head, the detection loss, and model checkpointing.
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "tgm/layers.hpp"
#include "tgm/types.hpp"

namespace tgm {

enum class ClassifierKind { PerClassLinear, SharedLinear };

struct ModelConfig {
  int d = 1;            // input feature dimensionality
  int num_classes = 1;
  ClassifierKind classifier = ClassifierKind::PerClassLinear;
  std::vector<LayerConfig> layers;  // may be empty (per-frame baseline)
};

// Throws ConfigError unless the layer chain is consistent: first layer reads
// 1 x d x T, consecutive layers chain c_out -> c_in and feature dims, and a
// per-class classifier sees num_classes final channels.
void validateModel(const ModelConfig& cfg);
// (channels, feature dim) entering the classifier.
std::pair<int, int> finalShape(const ModelConfig& cfg);

struct Model {
  ModelConfig config;
  std::vector<LayerParams> layers;
  Matrix cls_w;  // num_classes x d_fin (per-class) or num_classes x (c_fin * d_fin)
  Vector cls_b;  // num_classes
};

Model initModel(const ModelConfig& cfg, std::uint64_t seed);

struct PredictionSequence {
  Matrix logits;  // num_classes x T
  Matrix probs;   // sigmoid(logits)
};

struct ModelCache {
  std::vector<LayerCache> layers;
  ChannelStack final_repr;
  Matrix logits;
  bool valid = false;
};

PredictionSequence modelForward(const Model& model, const Matrix& features,
                                ModelCache* cache = nullptr);

// Multi-label binary cross entropy, sum over (t, c), computed in the stable
// log-sigmoid form from logits. Labels are num_classes x T in {0, 1}.
double bceLoss(const Matrix& logits, const Matrix& labels);
Matrix bceLossGrad(const Matrix& logits, const Matrix& labels);  // sigmoid(x) - z

struct ModelGrads {
  std::vector<LayerParams> layers;  // frozen tensors zero-filled
  Matrix cls_w;
  Vector cls_b;
};

ModelGrads modelBackward(const Model& model, const ModelCache& cache,
                         const Matrix& d_logits);

// Flat named views over all parameter tensors in declaration order. Frozen
// tensors are included (they serialize) but marked non-learnable.
struct TensorView {
  std::string name;
  Scalar* data;
  Index size;
  bool learnable;
};

std::vector<TensorView> parameterViews(Model& model);
std::vector<TensorView> gradViews(const Model& model, ModelGrads& grads);

long totalParamCount(const ModelConfig& cfg);   // learnable, layers + classifier
long classifierParamCount(const ModelConfig& cfg);

// Checkpoint file: magic `TGMM`, u32 version, u32 header length, JSON model
// config, then every parameter tensor as 64-bit little-endian floats in
// declaration order (matrices in column-major storage order).
void saveCheckpoint(const Model& model, const std::string& path);
Model loadCheckpoint(const std::string& path);

// CSV of all mixed kernels: header `out_channel,in_channel,tap,value`, layers
// concatenated in order, 9 significant digits.
void exportKernelsCsv(const Model& model, std::ostream& os);

}  // namespace tgm
