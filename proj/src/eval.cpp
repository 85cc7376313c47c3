// SPDX-License-Identifier: Apache-2.0
#include "tgm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

namespace tgm {

std::optional<double> averagePrecision(const Vector& scores, const Vector& labels) {
  if (scores.size() == 0) throw UsageError("averagePrecision: empty input");
  if (scores.size() != labels.size())
    throw UsageError("averagePrecision: scores/labels length mismatch");

  const Index n = scores.size();
  long num_pos = 0;
  for (Index i = 0; i < n; ++i) {
    if (labels(i) != 0.0 && labels(i) != 1.0)
      throw UsageError("averagePrecision: labels must be 0 or 1");
    if (labels(i) == 1.0) ++num_pos;
  }
  if (num_pos == 0) return std::nullopt;

  // descending score, ties broken by original index (ascending)
  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return scores(a) > scores(b); });

  double sum = 0.0;
  long tp = 0;
  for (Index rank = 0; rank < n; ++rank) {
    if (labels(order[rank]) == 1.0) {
      ++tp;
      sum += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return sum / static_cast<double>(num_pos);
}

MapReport perFrameMap(const std::vector<Matrix>& probs,
                      const std::vector<FrameLabels>& labels) {
  if (probs.size() != labels.size())
    throw UsageError("perFrameMap: prediction/label video count mismatch");
  if (probs.empty()) throw UsageError("perFrameMap: empty input");

  const Index num_classes = probs.front().rows();
  Index total_t = 0;
  for (std::size_t v = 0; v < probs.size(); ++v) {
    if (probs[v].rows() != num_classes || labels[v].num_classes != num_classes)
      throw UsageError("perFrameMap: class count mismatch at video " + std::to_string(v));
    if (probs[v].cols() != labels[v].t)
      throw UsageError("perFrameMap: frame count mismatch at video " + std::to_string(v));
    total_t += probs[v].cols();
  }

  MapReport report;
  double sum = 0.0;
  int defined = 0;
  for (Index c = 0; c < num_classes; ++c) {
    Vector scores(total_t), z(total_t);
    Index at = 0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
      const Index t = probs[v].cols();
      scores.segment(at, t) = probs[v].row(c).transpose();
      z.segment(at, t) = labels[v].z.row(c).transpose();
      at += t;
    }
    ClassAp entry;
    entry.class_index = static_cast<int>(c);
    entry.num_positives = static_cast<long>(z.sum());
    entry.ap = averagePrecision(scores, z);
    if (entry.ap) {
      sum += *entry.ap;
      ++defined;
    }
    report.per_class.push_back(std::move(entry));
  }
  report.map = defined > 0 ? sum / defined : std::numeric_limits<double>::quiet_NaN();
  return report;
}

std::string mapReportJson(const MapReport& report) {
  nlohmann::json j;
  j["map"] = std::isnan(report.map) ? nlohmann::json() : nlohmann::json(report.map);
  j["per_class"] = nlohmann::json::array();
  for (const ClassAp& c : report.per_class) {
    nlohmann::json e;
    e["class"] = c.class_index;
    e["ap"] = c.ap ? nlohmann::json(*c.ap) : nlohmann::json();
    e["num_positives"] = c.num_positives;
    j["per_class"].push_back(std::move(e));
  }
  return j.dump(2);
}

}  // namespace tgm
