#include "calnr/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "calnr/common.hpp"

namespace calnr {

double average_precision(std::span<const double> scores,
                         std::span<const std::int8_t> truth) {
  if (scores.size() != truth.size() || scores.empty())
    throw data_error("average_precision: size mismatch or empty input");
  std::size_t num_positive = 0;
  for (std::int8_t t : truth) {
    if (t != 1 && t != -1)
      throw data_error("average_precision: truth must be in {-1,+1}");
    if (t == 1) ++num_positive;
  }
  if (num_positive == 0)
    throw data_error("average_precision: no positive in truth");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return scores[a] > scores[b]; // ties keep index order
                   });

  double ap = 0.0;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (truth[order[k]] == 1) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  return ap / static_cast<double>(num_positive);
}

EvalReport f1_report(const Tensor& scores, std::span<const std::int8_t> truth,
                     double threshold) {
  if (scores.rank() != 2)
    throw data_error("f1_report: scores must be N x C");
  const std::size_t n = scores.dim(0), c = scores.dim(1);
  if (truth.size() != n * c)
    throw data_error("f1_report: truth size mismatch");

  EvalReport report;
  report.score_threshold = threshold;
  report.per_class_ap.assign(c, 0.0);
  report.class_included.assign(c, 0);

  std::size_t sum_correct = 0, sum_predicted = 0, sum_truth = 0;
  double cp_sum = 0.0, cr_sum = 0.0, map_sum = 0.0;
  std::size_t included = 0;

  std::vector<double> class_scores(n);
  std::vector<std::int8_t> class_truth(n);
  for (std::size_t ci = 0; ci < c; ++ci) {
    std::size_t correct = 0, predicted = 0, ground = 0;
    for (std::size_t i = 0; i < n; ++i) {
      class_scores[i] = scores(i, ci);
      class_truth[i] = truth[i * c + ci];
      const bool pred_pos = class_scores[i] >= threshold;
      const bool is_pos = class_truth[i] == 1;
      if (pred_pos) ++predicted;
      if (is_pos) ++ground;
      if (pred_pos && is_pos) ++correct;
    }
    sum_correct += correct;
    sum_predicted += predicted;
    sum_truth += ground;
    cp_sum += predicted == 0 ? 0.0
                             : static_cast<double>(correct) /
                                   static_cast<double>(predicted);
    cr_sum += ground == 0 ? 0.0
                          : static_cast<double>(correct) /
                                static_cast<double>(ground);
    if (ground > 0) {
      report.per_class_ap[ci] = average_precision(class_scores, class_truth);
      report.class_included[ci] = 1;
      map_sum += report.per_class_ap[ci];
      ++included;
    }
  }

  report.op = sum_predicted == 0 ? 0.0
                                 : static_cast<double>(sum_correct) /
                                       static_cast<double>(sum_predicted);
  report.orec = sum_truth == 0 ? 0.0
                               : static_cast<double>(sum_correct) /
                                     static_cast<double>(sum_truth);
  report.cp = cp_sum / static_cast<double>(c);
  report.cr = cr_sum / static_cast<double>(c);
  report.of1 = (report.op + report.orec) == 0.0
                   ? 0.0
                   : 2.0 * report.op * report.orec / (report.op + report.orec);
  report.cf1 = (report.cp + report.cr) == 0.0
                   ? 0.0
                   : 2.0 * report.cp * report.cr / (report.cp + report.cr);
  report.map = included == 0 ? 0.0 : map_sum / static_cast<double>(included);
  return report;
}

} // namespace calnr
