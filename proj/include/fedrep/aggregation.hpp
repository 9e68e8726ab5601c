#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/losses.hpp"
#include "fedrep/matrix.hpp"

namespace fedrep {

enum class Modality { image, text };

inline std::string to_string(Modality m) {
  return m == Modality::image ? "image" : "text";
}

// One client's public-batch representations for a single modality, plus the
// metadata the server is allowed to see. Row k corresponds to public item k.
struct Contribution {
  int client_id = 0;
  Modality modality = Modality::image;
  Matrix reps;
  int num_private_samples = 1;
  bool is_multimodal = false;
};

// batch x contributors scores; column order is client_id-sorted and recorded
// in client_ids so weights and contributions stay matched.
struct ScoreMatrix {
  Matrix data;
  std::vector<int> client_ids;
};

// Per-item simplex weights over contributors (rows sum to 1, entries >= 0).
struct WeightMatrix {
  Matrix data;
  std::vector<int> client_ids;
};

enum class AggregatorStrategy { gca, mean, sample_count, iot_boost };

inline std::string to_string(AggregatorStrategy s) {
  switch (s) {
    case AggregatorStrategy::gca: return "gca";
    case AggregatorStrategy::mean: return "mean";
    case AggregatorStrategy::sample_count: return "sample_count";
    case AggregatorStrategy::iot_boost: return "iot_boost";
  }
  return "?";
}

namespace detail {

// Contributions sorted by client_id; validates a consistent single-modality
// batch of unit-norm representation matrices.
inline std::vector<const Contribution*> sorted_contributors(
    const std::vector<Contribution>& contribs) {
  if (contribs.empty())
    throw ConfigError("aggregation: at least one contributor required");
  std::vector<const Contribution*> out;
  out.reserve(contribs.size());
  for (const auto& c : contribs) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const Contribution* a, const Contribution* b) {
    return a->client_id < b->client_id;
  });
  const auto rows = out.front()->reps.rows();
  const auto cols = out.front()->reps.cols();
  const auto modality = out.front()->modality;
  for (const auto* c : out) {
    if (c->modality != modality)
      throw ConfigError("aggregation: mixed modalities in one contributor set");
    if (c->reps.rows() != rows || c->reps.cols() != cols)
      throw ConfigError("aggregation: contributor " + std::to_string(c->client_id) +
                        " has mismatched representation shape");
  }
  return out;
}

}  // namespace detail

// Cross-modal contrastive score of every contributor representation against
// the server's global representations of the other modality: the aligned row
// is the positive, and by default the diagonal is excluded from the
// denominator. include_diagonal switches to a full-batch denominator.
inline ScoreMatrix contrastive_scores(const std::vector<Contribution>& contribs,
                                      const Matrix& global_cross,
                                      const ContrastConfig& cfg,
                                      bool include_diagonal = false) {
  cfg.validate();
  const auto sorted = detail::sorted_contributors(contribs);
  const auto batch = global_cross.rows();
  if (sorted.front()->reps.rows() != batch)
    throw ConfigError("contrastive_scores: contributor batch differs from global batch");
  if (batch < 2 && !include_diagonal)
    throw ConfigError("GCA requires public batch >= 2");

  const double inv_tau = 1.0 / cfg.temperature;
  ScoreMatrix s;
  s.data = Matrix(batch, sorted.size());
  for (const auto* c : sorted) s.client_ids.push_back(c->client_id);

  for (std::size_t ci = 0; ci < sorted.size(); ++ci) {
    const Matrix& reps = sorted[ci]->reps;
    for (std::size_t k = 0; k < batch; ++k) {
      const double pos = dot(reps.row(k), global_cross.row(k)) * inv_tau;
      // log-sum-exp over the negatives with max subtraction
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < batch; ++j) {
        if (!include_diagonal && j == k) continue;
        mx = std::max(mx, dot(reps.row(k), global_cross.row(j)) * inv_tau);
      }
      double sum = 0.0;
      for (std::size_t j = 0; j < batch; ++j) {
        if (!include_diagonal && j == k) continue;
        sum += std::exp(dot(reps.row(k), global_cross.row(j)) * inv_tau - mx);
      }
      s.data(k, ci) = pos - (mx + std::log(sum));
    }
  }
  if (!s.data.all_finite())
    throw NumericError("contrastive_scores: non-finite score");
  return s;
}

// Row-wise softmax over contributors, stabilized by row-max subtraction.
inline WeightMatrix gca_weights(const ScoreMatrix& scores) {
  if (!scores.data.all_finite())
    throw ConfigError("gca_weights: scores must be finite");
  WeightMatrix w;
  w.client_ids = scores.client_ids;
  w.data = scores.data;
  for (std::size_t r = 0; r < w.data.rows(); ++r) {
    auto row = w.data.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
  }
  return w;
}

// Fixed (per-round, item-independent) weighting baselines. All rows of the
// result are identical and normalized to sum 1.
inline WeightMatrix baseline_weights(const std::vector<Contribution>& contribs,
                                     AggregatorStrategy strategy,
                                     double boost = 100.0) {
  const auto sorted = detail::sorted_contributors(contribs);
  const auto batch = sorted.front()->reps.rows();

  std::vector<double> raw(sorted.size(), 1.0);
  switch (strategy) {
    case AggregatorStrategy::mean:
      break;
    case AggregatorStrategy::sample_count:
      for (std::size_t i = 0; i < sorted.size(); ++i)
        raw[i] = static_cast<double>(sorted[i]->num_private_samples);
      break;
    case AggregatorStrategy::iot_boost:
      for (std::size_t i = 0; i < sorted.size(); ++i)
        raw[i] = sorted[i]->is_multimodal ? boost : 1.0;
      break;
    case AggregatorStrategy::gca:
      throw ConfigError("baseline_weights: gca is not a fixed-weight strategy");
  }
  double sum = 0.0;
  for (double v : raw) sum += v;
  if (sum <= 0.0) throw ConfigError("baseline_weights: weights sum to zero");

  WeightMatrix w;
  w.data = Matrix(batch, sorted.size());
  for (const auto* c : sorted) w.client_ids.push_back(c->client_id);
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t i = 0; i < sorted.size(); ++i) w.data(r, i) = raw[i] / sum;
  return w;
}

// Per-item convex combination of contributor rows. The result is a
// distillation target and is deliberately not re-normalized.
inline Matrix aggregate(const WeightMatrix& weights,
                        const std::vector<Contribution>& contribs) {
  const auto sorted = detail::sorted_contributors(contribs);
  if (sorted.size() != weights.client_ids.size())
    throw ConfigError("aggregate: contributor count differs from weight columns");
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i]->client_id != weights.client_ids[i])
      throw ConfigError("aggregate: contributor order does not match weights");
  const auto batch = sorted.front()->reps.rows();
  const auto dim = sorted.front()->reps.cols();
  if (weights.data.rows() != batch || weights.data.cols() != sorted.size())
    throw ConfigError("aggregate: weight matrix shape mismatch");

  Matrix out(batch, dim);
  for (std::size_t k = 0; k < batch; ++k)
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      const double a = weights.data(k, i);
      if (a == 0.0) continue;
      for (std::size_t d = 0; d < dim; ++d) out(k, d) += a * sorted[i]->reps(k, d);
    }
  return out;
}

}  // namespace fedrep
