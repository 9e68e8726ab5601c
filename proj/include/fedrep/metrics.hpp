#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/matrix.hpp"

namespace fedrep {

// Fraction of queries whose ground-truth gallery item ranks in the top K by
// dot-product similarity. Ties break toward the lower gallery index, so the
// metric is deterministic on degenerate inputs.
inline std::map<int, double> recall_at_k(const Matrix& query_reps,
                                         const Matrix& gallery_reps,
                                         const std::vector<int>& ground_truth,
                                         const std::vector<int>& ks) {
  if (query_reps.cols() != gallery_reps.cols())
    throw ConfigError("recall_at_k: dimension mismatch");
  if (ground_truth.size() != query_reps.rows())
    throw ConfigError("recall_at_k: one ground-truth index per query required");
  for (int k : ks)
    if (k < 1 || static_cast<std::size_t>(k) > gallery_reps.rows())
      throw ConfigError("recall_at_k: K=" + std::to_string(k) +
                        " outside gallery size " +
                        std::to_string(gallery_reps.rows()));

  std::map<int, double> out;
  for (int k : ks) out[k] = 0.0;
  for (std::size_t q = 0; q < query_reps.rows(); ++q) {
    const auto truth = static_cast<std::size_t>(ground_truth[q]);
    if (truth >= gallery_reps.rows())
      throw ConfigError("recall_at_k: ground-truth index out of range");
    const double true_sim = dot(query_reps.row(q), gallery_reps.row(truth));
    // rank = 1 + #{better} where "better" is higher similarity, or equal
    // similarity at a lower index.
    std::size_t rank = 1;
    for (std::size_t g = 0; g < gallery_reps.rows(); ++g) {
      if (g == truth) continue;
      const double sim = dot(query_reps.row(q), gallery_reps.row(g));
      if (sim > true_sim || (sim == true_sim && g < truth)) ++rank;
    }
    for (int k : ks)
      if (rank <= static_cast<std::size_t>(k)) out[k] += 1.0;
  }
  const double n = static_cast<double>(query_reps.rows());
  for (auto& [k, v] : out) v /= n;
  return out;
}

struct RetrievalReport {
  std::map<int, double> i2t_r_at;
  std::map<int, double> t2i_r_at;
  double r1_sum = 0.0;  // 100 * (i2t R@1 + t2i R@1), percentage points
};

// Both retrieval directions over aligned (image, text) pairs: row k of each
// matrix encodes the two views of the same item.
inline RetrievalReport retrieval_report(const Matrix& img_reps,
                                        const Matrix& txt_reps,
                                        const std::vector<int>& ks) {
  if (img_reps.rows() != txt_reps.rows())
    throw ConfigError("retrieval_report: pair count mismatch");
  std::vector<int> identity(img_reps.rows());
  for (std::size_t i = 0; i < identity.size(); ++i) identity[i] = static_cast<int>(i);
  RetrievalReport rep;
  rep.i2t_r_at = recall_at_k(img_reps, txt_reps, identity, ks);
  rep.t2i_r_at = recall_at_k(txt_reps, img_reps, identity, ks);
  rep.r1_sum = 100.0 * (rep.i2t_r_at.at(1) + rep.t2i_r_at.at(1));
  return rep;
}

struct DriftReport {
  double per_modality_drift = 0.0;
};

// Mean over probe items of the mean pairwise Euclidean distance between
// distinct clients' representations of that item. Zero iff all clients agree
// on every probe.
inline DriftReport drift_metric(const std::map<int, Matrix>& probe_reps) {
  if (probe_reps.size() < 2)
    throw ConfigError("drift_metric: needs at least 2 clients");
  std::vector<const Matrix*> mats;
  for (const auto& [id, m] : probe_reps) mats.push_back(&m);
  const auto rows = mats.front()->rows();
  const auto cols = mats.front()->cols();
  for (const auto* m : mats)
    if (m->rows() != rows || m->cols() != cols)
      throw ConfigError("drift_metric: probe matrices are not aligned");
  if (rows == 0) throw ConfigError("drift_metric: empty probe set");

  const std::size_t n = mats.size();
  const double num_pairs = static_cast<double>(n * (n - 1) / 2);
  double total = 0.0;
  for (std::size_t k = 0; k < rows; ++k) {
    double item_sum = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b) {
        double sq = 0.0;
        for (std::size_t d = 0; d < cols; ++d) {
          const double diff = (*mats[a])(k, d) - (*mats[b])(k, d);
          sq += diff * diff;
        }
        item_sum += std::sqrt(sq);
      }
    total += item_sum / num_pairs;
  }
  return DriftReport{total / static_cast<double>(rows)};
}

}  // namespace fedrep
