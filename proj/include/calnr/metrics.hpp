#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "calnr/tensor.hpp"

namespace calnr {

struct EvalReport {
  std::vector<double> per_class_ap;         // 0 for excluded classes
  std::vector<std::uint8_t> class_included; // had at least one positive
  double map = 0.0;                         // mean AP over included classes
  double op = 0.0, cp = 0.0;                // overall / per-class precision
  double orec = 0.0, cr = 0.0;              // overall / per-class recall
  double of1 = 0.0, cf1 = 0.0;
  double score_threshold = 0.5;
};

// Average precision: rank by descending score (ties broken by ascending
// sample index), then average precision@k over the ranks k holding a
// positive. No interpolation. truth values are in {-1,+1} and must contain
// at least one positive.
double average_precision(std::span<const double> scores,
                         std::span<const std::int8_t> truth);

// Full evaluation report: per-class AP and mAP (classes without positives
// are excluded and flagged), plus OP/CP/OR/CR and OF1/CF1 at the given
// score threshold. Classes with no predicted positives contribute
// precision 0.
EvalReport f1_report(const Tensor& scores, std::span<const std::int8_t> truth,
                     double threshold = 0.5);

} // namespace calnr
