#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/matrix.hpp"

namespace fedrep {

// Temperature divides every dot product; 1.0 leaves the raw products
// unchanged. batch_size is the number of negatives per anchor used when a
// caller samples mini-batches.
struct ContrastConfig {
  double temperature = 1.0;
  int batch_size = 128;

  void validate() const {
    if (temperature <= 0.0)
      throw ConfigError("ContrastConfig: temperature must be positive");
    if (batch_size < 2)
      throw ConfigError("ContrastConfig: batch_size must be >= 2");
  }
};

// Scalar loss value plus its gradient w.r.t. the anchor-side representation
// rows (aligned index-wise).
struct LossResult {
  double value = 0.0;
  Matrix grad;
};

struct ClassificationResult {
  double value = 0.0;
  Matrix grad_reps;
  Matrix grad_head;
};

struct PairLossResult {
  double value = 0.0;
  Matrix grad_img;
  Matrix grad_txt;
};

enum class DistillMode { squared_l2, l2 };

namespace detail {

inline void require_aligned(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ConfigError(std::string(op) + ": row/column mismatch (" +
                      std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()) + "x" +
                      std::to_string(b.cols()) + ")");
}

// Row-wise softmax of logits, in place; returns the per-row log-sum-exp
// (computed with max subtraction).
inline std::vector<double> softmax_rows(Matrix& logits) {
  std::vector<double> lse(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (auto& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : row) v /= sum;
    lse[r] = mx + std::log(sum);
  }
  return lse;
}

}  // namespace detail

// One-directional InfoNCE over a batch: anchors in `local`, the aligned rows
// of `global_other` are the positives and the whole batch (including the
// diagonal) forms the denominator. `global_other` is treated as a constant;
// no gradient flows to it.
inline LossResult inter_modal_loss(const Matrix& local,
                                   const Matrix& global_other,
                                   const ContrastConfig& cfg) {
  cfg.validate();
  detail::require_aligned(local, global_other, "inter_modal_loss");
  if (local.rows() < 2)
    throw ConfigError("inter_modal_loss: needs at least 2 rows");

  const auto b = local.rows();
  const double inv_tau = 1.0 / cfg.temperature;
  Matrix logits = matmul_bt(local, global_other);
  for (auto& v : logits.data()) v *= inv_tau;

  Matrix probs = logits;  // becomes the softmax below
  const std::vector<double> lse = detail::softmax_rows(probs);

  LossResult res;
  res.grad = Matrix(b, local.cols());
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t k = 0; k < b; ++k) {
    res.value += lse[k] - logits(k, k);
    // d/d l_k = (1/(B tau)) (sum_j p_kj g_j - g_k)
    for (std::size_t j = 0; j < b; ++j) {
      const double w = probs(k, j) - (j == k ? 1.0 : 0.0);
      if (w == 0.0) continue;
      for (std::size_t d = 0; d < local.cols(); ++d)
        res.grad(k, d) += w * global_other(j, d) * inv_tau * inv_b;
    }
  }
  res.value *= inv_b;
  if (!std::isfinite(res.value) || !res.grad.all_finite())
    throw NumericError("inter_modal_loss: non-finite result");
  return res;
}

// Two-way softmax between the aligned global positive and the cached
// previous-round representation as the sole negative. A client's first
// participating round has no previous representations; pass nullptr and the
// term is skipped entirely (zero value, zero gradient). Gradient flows only
// to `local`.
inline LossResult intra_modal_loss(const Matrix& local,
                                   const Matrix& global_same,
                                   const Matrix* prev_local,
                                   const ContrastConfig& cfg) {
  cfg.validate();
  detail::require_aligned(local, global_same, "intra_modal_loss");
  LossResult res;
  res.grad = Matrix(local.rows(), local.cols());
  if (prev_local == nullptr) return res;
  detail::require_aligned(local, *prev_local, "intra_modal_loss(prev)");

  const double inv_tau = 1.0 / cfg.temperature;
  const double inv_b = 1.0 / static_cast<double>(local.rows());
  for (std::size_t k = 0; k < local.rows(); ++k) {
    const double a = dot(local.row(k), global_same.row(k)) * inv_tau;
    const double bb = dot(local.row(k), prev_local->row(k)) * inv_tau;
    // loss_k = log(1 + exp(b - a)), computed stably.
    const double z = bb - a;
    res.value += z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    const double q = 1.0 / (1.0 + std::exp(-z));  // sigmoid(b - a)
    for (std::size_t d = 0; d < local.cols(); ++d)
      res.grad(k, d) +=
          q * inv_tau * inv_b * ((*prev_local)(k, d) - global_same(k, d));
  }
  res.value *= inv_b;
  if (!std::isfinite(res.value) || !res.grad.all_finite())
    throw NumericError("intra_modal_loss: non-finite result");
  return res;
}

// Mean softmax cross-entropy of head * rep^T, with gradients to both the
// representations and the class-weight head.
inline ClassificationResult classification_loss(const Matrix& reps,
                                                const Matrix& head,
                                                const std::vector<int>& labels) {
  if (head.cols() != reps.cols())
    throw ConfigError("classification_loss: head width does not match reps");
  if (labels.size() != reps.rows())
    throw ConfigError("classification_loss: one label per row required");
  const auto num_classes = head.rows();
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw ConfigError("classification_loss: label " + std::to_string(y) +
                        " out of range [0, " + std::to_string(num_classes) + ")");

  Matrix probs = matmul_bt(reps, head);  // rows x classes
  const std::vector<double> lse = detail::softmax_rows(probs);

  ClassificationResult res;
  const auto b = reps.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t k = 0; k < b; ++k) {
    const auto y = static_cast<std::size_t>(labels[k]);
    res.value -= std::log(std::max(probs(k, y), 1e-300));
    probs(k, y) -= 1.0;  // probs now holds dLoss/dlogits * B
  }
  res.value *= inv_b;
  for (auto& v : probs.data()) v *= inv_b;
  res.grad_reps = matmul(probs, head);
  res.grad_head = matmul_at(probs, reps);
  if (!std::isfinite(res.value))
    throw NumericError("classification_loss: non-finite result");
  return res;
}

// Symmetric contrastive pair loss: the mean of both InfoNCE directions, with
// gradients flowing to both matrices (each side also appears in the other
// direction's denominator).
inline PairLossResult bidirectional_pair_loss(const Matrix& img,
                                              const Matrix& txt,
                                              const ContrastConfig& cfg) {
  cfg.validate();
  detail::require_aligned(img, txt, "bidirectional_pair_loss");
  if (img.rows() < 2)
    throw ConfigError("bidirectional_pair_loss: needs at least 2 rows");

  const auto b = img.rows();
  const double inv_tau = 1.0 / cfg.temperature;
  const double scale = 0.5 / static_cast<double>(b);

  PairLossResult res;
  res.grad_img = Matrix(b, img.cols());
  res.grad_txt = Matrix(b, txt.cols());

  // Direction A: image anchors over text candidates. S_kj = <i_k, t_j>/tau.
  // Direction B is the transpose.
  Matrix logits = matmul_bt(img, txt);
  for (auto& v : logits.data()) v *= inv_tau;

  auto accumulate = [&](const Matrix& l, const Matrix& anchors,
                        const Matrix& cands, Matrix& g_anchor, Matrix& g_cand) {
    Matrix probs = l;
    const std::vector<double> lse = detail::softmax_rows(probs);
    double v = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      v += lse[k] - l(k, k);
      for (std::size_t j = 0; j < b; ++j) {
        const double w = (probs(k, j) - (j == k ? 1.0 : 0.0)) * inv_tau * scale;
        if (w == 0.0) continue;
        for (std::size_t d = 0; d < anchors.cols(); ++d) {
          g_anchor(k, d) += w * cands(j, d);
          g_cand(j, d) += w * anchors(k, d);
        }
      }
    }
    return v * scale;
  };

  res.value += accumulate(logits, img, txt, res.grad_img, res.grad_txt);
  Matrix logits_t(b, b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) logits_t(i, j) = logits(j, i);
  res.value += accumulate(logits_t, txt, img, res.grad_txt, res.grad_img);

  if (!std::isfinite(res.value))
    throw NumericError("bidirectional_pair_loss: non-finite result");
  return res;
}

// Combined client objective: task plus gamma-weighted regularizers. The
// gradients live in different spaces (task on private-batch representations,
// inter/intra on public-batch representations), so they are combined at the
// parameter level after backprop: the caller sums parameter gradients with
// weight gamma on the regularizer terms. Only the scalar is combined here.
inline LossResult local_objective(const LossResult& task,
                                  const LossResult& inter,
                                  const LossResult& intra, double gamma) {
  if (gamma < 0.0) throw ConfigError("local_objective: gamma must be >= 0");
  LossResult res;
  res.value = task.value + gamma * (inter.value + intra.value);
  return res;
}

// Distance between server outputs and aggregated targets. squared_l2 is the
// default (smooth at zero); l2 is the unsquared norm with a gradient guard
// at zero distance. Targets are constant; gradient flows to server_reps only.
inline LossResult distill_loss(const Matrix& server_reps, const Matrix& targets,
                               DistillMode mode = DistillMode::squared_l2) {
  detail::require_aligned(server_reps, targets, "distill_loss");
  const auto b = server_reps.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  LossResult res;
  res.grad = Matrix(b, server_reps.cols());
  for (std::size_t k = 0; k < b; ++k) {
    double sq = 0.0;
    for (std::size_t d = 0; d < server_reps.cols(); ++d) {
      const double diff = server_reps(k, d) - targets(k, d);
      sq += diff * diff;
    }
    if (mode == DistillMode::squared_l2) {
      res.value += 0.5 * sq * inv_b;
      for (std::size_t d = 0; d < server_reps.cols(); ++d)
        res.grad(k, d) = (server_reps(k, d) - targets(k, d)) * inv_b;
    } else {
      const double dist = std::sqrt(sq);
      res.value += dist * inv_b;
      const double denom = std::max(dist, 1e-12);
      for (std::size_t d = 0; d < server_reps.cols(); ++d)
        res.grad(k, d) = (server_reps(k, d) - targets(k, d)) / denom * inv_b;
    }
  }
  if (!std::isfinite(res.value) || !res.grad.all_finite())
    throw NumericError("distill_loss: non-finite result");
  return res;
}

}  // namespace fedrep
