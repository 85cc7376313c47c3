// SPDX-License-Identifier: Apache-2.0
//
// Per-frame mean average precision. AP is non-interpolated (mean precision at
// each positive rank), ties broken by original index so results are
// deterministic. Classes with zero positives are excluded from the mean and
// reported separately.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tgm/data.hpp"
#include "tgm/types.hpp"

namespace tgm {

std::optional<double> averagePrecision(const Vector& scores, const Vector& labels);

struct ClassAp {
  int class_index = 0;
  std::optional<double> ap;
  long num_positives = 0;
};

struct MapReport {
  double map = 0.0;
  std::vector<ClassAp> per_class;
};

// Concatenates frames across all videos per class. `probs[v]` is the
// num_classes x T_v prediction for video v.
MapReport perFrameMap(const std::vector<Matrix>& probs,
                      const std::vector<FrameLabels>& labels);

// {"map": ..., "per_class": [{"class": c, "ap": a|null, "num_positives": n}]}
std::string mapReportJson(const MapReport& report);

}  // namespace tgm
