#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fedrep/adam.hpp"
#include "fedrep/aggregation.hpp"
#include "fedrep/config.hpp"
#include "fedrep/encoder.hpp"
#include "fedrep/errors.hpp"
#include "fedrep/losses.hpp"
#include "fedrep/matrix.hpp"
#include "fedrep/metrics.hpp"
#include "fedrep/round_log.hpp"
#include "fedrep/rng.hpp"
#include "fedrep/synth.hpp"

namespace fedrep {

enum class ClientKind { image, text, multimodal };

inline std::string to_string(ClientKind k) {
  switch (k) {
    case ClientKind::image: return "image";
    case ClientKind::text: return "text";
    case ClientKind::multimodal: return "multimodal";
  }
  return "?";
}

// Seed stream tags. Every random decision in a run draws from a stream
// derived from (master_seed, tag, ...), so client work is order- and
// thread-independent.
namespace seeds {
constexpr std::uint64_t kPartition = 11;
constexpr std::uint64_t kInit = 12;
constexpr std::uint64_t kSelect = 13;
constexpr std::uint64_t kPublicSubset = 14;
constexpr std::uint64_t kClientRound = 15;
constexpr std::uint64_t kServerTrain = 16;
}  // namespace seeds

struct EncoderSlot {
  EncoderSpec spec;
  std::vector<double> params;
  AdamState adam;
};

inline EncoderSlot make_slot(const EncoderSpec& spec, std::uint64_t seed) {
  EncoderSlot s;
  s.spec = spec;
  s.params = init_params(spec, seed);
  s.adam = AdamState(s.params.size());
  return s;
}

// Representations a client transmitted last time it participated, keyed by
// the world item ids of the public subset it saw.
struct RepCache {
  std::vector<int> item_ids;
  Matrix reps;
};

struct ClientState {
  int client_id = 0;
  ClientKind kind = ClientKind::image;
  std::optional<EncoderSlot> image_enc;
  std::optional<EncoderSlot> text_enc;
  Matrix head;  // uni-modal task head, num_classes x d
  AdamState head_adam;
  // Private shard, materialized. Uni-modal clients hold one view plus labels;
  // multimodal clients hold aligned view pairs.
  Matrix priv_img;
  Matrix priv_txt;
  std::vector<int> labels;
  int num_private = 0;
  std::optional<RepCache> prev_image;
  std::optional<RepCache> prev_text;

  bool has_image() const { return kind != ClientKind::text; }
  bool has_text() const { return kind != ClientKind::image; }
};

struct ServerState {
  EncoderSlot image_enc;
  EncoderSlot text_enc;
  int round = 0;
};

struct CommCost {
  std::uint64_t up_bytes = 0;
  std::uint64_t down_bytes = 0;
};

// Representation traffic for one round: every modality-capable selected
// client uploads one batch x d block per owned modality; the server
// broadcasts both modalities' global blocks to every selected client.
inline CommCost comm_cost(int n_selected_total, int n_selected_img_capable,
                          int n_selected_txt_capable, int n_public_batch, int d,
                          int bytes_per_scalar = 8) {
  if (n_selected_total < 0 || n_selected_img_capable < 0 ||
      n_selected_txt_capable < 0 || n_public_batch < 0 || d < 0 ||
      bytes_per_scalar < 0)
    throw ConfigError("comm_cost: negative input");
  const auto block = static_cast<std::uint64_t>(n_public_batch) *
                     static_cast<std::uint64_t>(d) *
                     static_cast<std::uint64_t>(bytes_per_scalar);
  CommCost c;
  c.up_bytes = (static_cast<std::uint64_t>(n_selected_img_capable) +
                static_cast<std::uint64_t>(n_selected_txt_capable)) *
               block;
  c.down_bytes = static_cast<std::uint64_t>(n_selected_total) * 2 * block;
  return c;
}

// Exactly max(ceil(fraction * C), 1) distinct ids, drawn without replacement
// from a stream seeded by (master_seed, round); returned sorted.
inline std::vector<int> select_clients(const std::vector<int>& all_ids,
                                       double fraction, int round,
                                       std::uint64_t master_seed) {
  if (all_ids.empty()) throw ConfigError("select_clients: empty client list");
  if (fraction <= 0.0 || fraction > 1.0)
    throw ConfigError("select_clients: fraction must be in (0, 1]");
  const auto c = static_cast<double>(all_ids.size());
  const int want = std::max(
      static_cast<int>(std::ceil(fraction * c - 1e-9)), 1);
  Rng rng(seed_combine(master_seed, seeds::kSelect,
                       static_cast<std::uint64_t>(round)));
  const std::vector<int> picks = rng.sample_without_replacement(
      static_cast<int>(all_ids.size()), want);
  std::vector<int> out;
  out.reserve(picks.size());
  for (int p : picks) out.push_back(all_ids[static_cast<std::size_t>(p)]);
  std::sort(out.begin(), out.end());
  return out;
}

// Shared view of one round, as received by clients: the public subset inputs
// and the server's start-of-round representations of it.
struct RoundContext {
  int round = 0;
  std::vector<int> subset_ids;  // world item id per subset row
  Matrix pub_img;               // subset x img_dim
  Matrix pub_txt;               // subset x txt_dim
  Matrix global_img;            // subset x d, start-of-round server output
  Matrix global_txt;
};

struct TrainHyper {
  int local_epochs = 2;
  double client_lr = 1e-3;
  double gamma = 0.5;
  int private_batch = 64;
  int public_batch = 128;
  ContrastConfig contrast;
  Regularizer regularizer = Regularizer::both;
};

struct ClientRoundResult {
  std::vector<Contribution> contributions;
  double task_loss = 0.0;
  double inter_loss = 0.0;
  double intra_loss = 0.0;
  int steps = 0;
};

namespace detail {

struct RegAccum {
  double inter = 0.0;
  double intra = 0.0;
  int inter_terms = 0;
  int intra_terms = 0;
};

// One gamma-weighted regularization pass for a single owned modality.
// Returns the parameter gradient contribution (empty if no term applied).
inline std::vector<double> regularizer_grads(
    const EncoderSlot& enc, const Matrix& pub_inputs_batch,
    const Matrix& global_other_batch, const Matrix& global_same_batch,
    const std::vector<int>& batch_item_ids, const std::optional<RepCache>& cache,
    const TrainHyper& hp, RegAccum& acc) {
  const EncoderTrace trace =
      encoder_forward_traced(enc.spec, enc.params, pub_inputs_batch);
  Matrix grad_reps(trace.output.rows(), trace.output.cols());
  bool any = false;

  if (regularizer_has_inter(hp.regularizer)) {
    const LossResult res =
        inter_modal_loss(trace.output, global_other_batch, hp.contrast);
    add_scaled(grad_reps, res.grad, hp.gamma);
    acc.inter += res.value;
    acc.inter_terms += 1;
    any = true;
  }

  if (regularizer_has_intra(hp.regularizer) && cache.has_value()) {
    // Align anchors with the cached previous-round rows by item id; anchors
    // the cache has never seen are skipped (first-round rule, per item).
    std::unordered_map<int, int> id_to_row;
    id_to_row.reserve(cache->item_ids.size());
    for (std::size_t r = 0; r < cache->item_ids.size(); ++r)
      id_to_row[cache->item_ids[r]] = static_cast<int>(r);
    std::vector<int> anchor_pos, cache_rows;
    for (std::size_t p = 0; p < batch_item_ids.size(); ++p) {
      auto it = id_to_row.find(batch_item_ids[p]);
      if (it != id_to_row.end()) {
        anchor_pos.push_back(static_cast<int>(p));
        cache_rows.push_back(it->second);
      }
    }
    if (!anchor_pos.empty()) {
      const Matrix local_sub = gather_rows(trace.output, anchor_pos);
      const Matrix global_sub = gather_rows(global_same_batch, anchor_pos);
      const Matrix prev_sub = gather_rows(cache->reps, cache_rows);
      const LossResult res =
          intra_modal_loss(local_sub, global_sub, &prev_sub, hp.contrast);
      for (std::size_t i = 0; i < anchor_pos.size(); ++i) {
        const auto row = static_cast<std::size_t>(anchor_pos[i]);
        for (std::size_t d = 0; d < grad_reps.cols(); ++d)
          grad_reps(row, d) += hp.gamma * res.grad(i, d);
      }
      acc.intra += res.value;
      acc.intra_terms += 1;
      any = true;
    }
  }

  if (!any) return {};
  return encoder_backward_from_trace(enc.spec, enc.params, trace, grad_reps);
}

}  // namespace detail

// ClientLocalTraining: E epochs of Adam steps on the combined objective
// (task loss on a private mini-batch plus gamma-weighted inter/intra
// contrasts on a public mini-batch), then encode the full round subset and
// refresh the previous-round cache.
inline ClientRoundResult client_local_training(ClientState& client,
                                               const RoundContext& ctx,
                                               const TrainHyper& hp,
                                               std::uint64_t master_seed) {
  Rng rng(seed_combine(master_seed, seeds::kClientRound,
                       static_cast<std::uint64_t>(client.client_id),
                       static_cast<std::uint64_t>(ctx.round)));
  ClientRoundResult out;
  detail::RegAccum reg;
  double task_acc = 0.0;
  int task_terms = 0;

  const auto subset_rows = static_cast<int>(ctx.subset_ids.size());
  const int pub_batch = std::min(hp.public_batch, subset_rows);

  for (int epoch = 0; epoch < hp.local_epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(client.num_private));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    for (int start = 0; start < client.num_private; start += hp.private_batch) {
      const int stop = std::min(start + hp.private_batch, client.num_private);
      std::vector<int> idx(order.begin() + start, order.begin() + stop);
      const int step = out.steps;

      try {
        std::vector<double> grad_img, grad_txt, grad_head;

        if (client.kind == ClientKind::multimodal) {
          if (idx.size() < 2) continue;  // pair loss needs negatives
          const Matrix xi = gather_rows(client.priv_img, idx);
          const Matrix xt = gather_rows(client.priv_txt, idx);
          const EncoderTrace ti =
              encoder_forward_traced(client.image_enc->spec,
                                     client.image_enc->params, xi);
          const EncoderTrace tt =
              encoder_forward_traced(client.text_enc->spec,
                                     client.text_enc->params, xt);
          const PairLossResult pair =
              bidirectional_pair_loss(ti.output, tt.output, hp.contrast);
          grad_img = encoder_backward_from_trace(
              client.image_enc->spec, client.image_enc->params, ti, pair.grad_img);
          grad_txt = encoder_backward_from_trace(
              client.text_enc->spec, client.text_enc->params, tt, pair.grad_txt);
          task_acc += pair.value;
          ++task_terms;
        } else {
          EncoderSlot& enc = client.kind == ClientKind::image
                                 ? *client.image_enc
                                 : *client.text_enc;
          const Matrix& pool = client.kind == ClientKind::image
                                   ? client.priv_img
                                   : client.priv_txt;
          const Matrix xb = gather_rows(pool, idx);
          std::vector<int> yb(idx.size());
          for (std::size_t i = 0; i < idx.size(); ++i)
            yb[i] = client.labels[static_cast<std::size_t>(idx[i])];
          const EncoderTrace tr =
              encoder_forward_traced(enc.spec, enc.params, xb);
          const ClassificationResult cls =
              classification_loss(tr.output, client.head, yb);
          std::vector<double> g = encoder_backward_from_trace(
              enc.spec, enc.params, tr, cls.grad_reps);
          if (client.kind == ClientKind::image)
            grad_img = std::move(g);
          else
            grad_txt = std::move(g);
          grad_head = cls.grad_head.data();
          task_acc += cls.value;
          ++task_terms;
        }

        if (hp.gamma > 0.0 && hp.regularizer != Regularizer::none) {
          const std::vector<int> pub_idx =
              rng.sample_without_replacement(subset_rows, pub_batch);
          std::vector<int> batch_ids(pub_idx.size());
          for (std::size_t i = 0; i < pub_idx.size(); ++i)
            batch_ids[i] = ctx.subset_ids[static_cast<std::size_t>(pub_idx[i])];
          const Matrix glob_img_b = gather_rows(ctx.global_img, pub_idx);
          const Matrix glob_txt_b = gather_rows(ctx.global_txt, pub_idx);

          if (client.has_image()) {
            const std::vector<double> g = detail::regularizer_grads(
                *client.image_enc, gather_rows(ctx.pub_img, pub_idx),
                glob_txt_b, glob_img_b, batch_ids, client.prev_image, hp, reg);
            if (!g.empty()) {
              if (grad_img.empty()) grad_img.assign(g.size(), 0.0);
              for (std::size_t i = 0; i < g.size(); ++i) grad_img[i] += g[i];
            }
          }
          if (client.has_text()) {
            const std::vector<double> g = detail::regularizer_grads(
                *client.text_enc, gather_rows(ctx.pub_txt, pub_idx),
                glob_img_b, glob_txt_b, batch_ids, client.prev_text, hp, reg);
            if (!g.empty()) {
              if (grad_txt.empty()) grad_txt.assign(g.size(), 0.0);
              for (std::size_t i = 0; i < g.size(); ++i) grad_txt[i] += g[i];
            }
          }
        }

        if (!grad_img.empty())
          adam_step(client.image_enc->params, grad_img, client.image_enc->adam,
                    hp.client_lr);
        if (!grad_txt.empty())
          adam_step(client.text_enc->params, grad_txt, client.text_enc->adam,
                    hp.client_lr);
        if (!grad_head.empty())
          adam_step(client.head.data(), grad_head, client.head_adam,
                    hp.client_lr);
        ++out.steps;
      } catch (const NumericError& e) {
        throw NumericError("client " + std::to_string(client.client_id) +
                           ", round " + std::to_string(ctx.round) + ", step " +
                           std::to_string(step) + ": " + e.what());
      }
    }
  }

  // Encode the full round subset per owned modality, transmit, and refresh
  // the cache with exactly what was transmitted.
  if (client.has_image()) {
    Matrix reps = encoder_forward(client.image_enc->spec,
                                  client.image_enc->params, ctx.pub_img);
    client.prev_image = RepCache{ctx.subset_ids, reps};
    out.contributions.push_back({client.client_id, Modality::image,
                                 std::move(reps),
                                 std::max(client.num_private, 1),
                                 client.kind == ClientKind::multimodal});
  }
  if (client.has_text()) {
    Matrix reps = encoder_forward(client.text_enc->spec,
                                  client.text_enc->params, ctx.pub_txt);
    client.prev_text = RepCache{ctx.subset_ids, reps};
    out.contributions.push_back({client.client_id, Modality::text,
                                 std::move(reps),
                                 std::max(client.num_private, 1),
                                 client.kind == ClientKind::multimodal});
  }

  out.task_loss = task_terms > 0 ? task_acc / task_terms : 0.0;
  out.inter_loss = reg.inter_terms > 0 ? reg.inter / reg.inter_terms : 0.0;
  out.intra_loss = reg.intra_terms > 0 ? reg.intra / reg.intra_terms : 0.0;
  return out;
}

struct ServerHyper {
  double lr = 2e-4;
  int distill_epochs = 2;
  int public_train_epochs = 1;
  int public_batch = 128;
  DistillMode distill_mode = DistillMode::squared_l2;
  ContrastConfig contrast;
  AggregatorStrategy aggregator = AggregatorStrategy::gca;
  double iot_boost = 100.0;
  bool gca_include_diagonal = false;
};

struct ServerRoundResult {
  double pair_loss = 0.0;
  double distill_loss_value = 0.0;
  bool no_op = false;
};

// Weighting plus convex combination for one modality's contributor set,
// scored against the broadcast global representations of the other modality.
inline std::optional<Matrix> aggregation_targets(
    const std::vector<Contribution>& contribs, const Matrix& global_cross,
    AggregatorStrategy strategy, const ContrastConfig& contrast,
    double iot_boost, bool include_diagonal) {
  if (contribs.empty()) return std::nullopt;
  WeightMatrix w;
  if (strategy == AggregatorStrategy::gca) {
    const ScoreMatrix s =
        contrastive_scores(contribs, global_cross, contrast, include_diagonal);
    w = gca_weights(s);
  } else {
    w = baseline_weights(contribs, strategy, iot_boost);
  }
  return aggregate(w, contribs);
}

// One server phase: (a) contrastive training on public pairs, (b) weighting
// and aggregation of client representations per modality, (c) distillation
// onto the aggregated targets. Receives only representations and contributor
// metadata; client parameters and private shards never cross this interface.
inline ServerRoundResult server_round(ServerState& server,
                                      const std::vector<Contribution>& contribs,
                                      const RoundContext& ctx,
                                      const ServerHyper& hp,
                                      std::uint64_t master_seed) {
  ServerRoundResult out;
  std::vector<Contribution> img_c, txt_c;
  for (const auto& c : contribs)
    (c.modality == Modality::image ? img_c : txt_c).push_back(c);
  if (img_c.empty() && txt_c.empty()) {
    out.no_op = true;
    server.round += 1;
    return out;
  }

  const auto subset_rows = static_cast<int>(ctx.subset_ids.size());
  const int batch = std::min(hp.public_batch, subset_rows);

  // (a) public pair training
  Rng rng(seed_combine(master_seed, seeds::kServerTrain,
                       static_cast<std::uint64_t>(ctx.round)));
  double pair_acc = 0.0;
  int pair_steps = 0;
  for (int epoch = 0; epoch < hp.public_train_epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(subset_rows));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    for (int start = 0; start + 2 <= subset_rows; start += batch) {
      const int stop = std::min(start + batch, subset_rows);
      if (stop - start < 2) break;
      const std::vector<int> idx(order.begin() + start, order.begin() + stop);
      const Matrix xi = gather_rows(ctx.pub_img, idx);
      const Matrix xt = gather_rows(ctx.pub_txt, idx);
      const EncoderTrace ti = encoder_forward_traced(server.image_enc.spec,
                                                     server.image_enc.params, xi);
      const EncoderTrace tt = encoder_forward_traced(server.text_enc.spec,
                                                     server.text_enc.params, xt);
      const PairLossResult pair =
          bidirectional_pair_loss(ti.output, tt.output, hp.contrast);
      const std::vector<double> gi = encoder_backward_from_trace(
          server.image_enc.spec, server.image_enc.params, ti, pair.grad_img);
      const std::vector<double> gt = encoder_backward_from_trace(
          server.text_enc.spec, server.text_enc.params, tt, pair.grad_txt);
      adam_step(server.image_enc.params, gi, server.image_enc.adam, hp.lr);
      adam_step(server.text_enc.params, gt, server.text_enc.adam, hp.lr);
      pair_acc += pair.value;
      ++pair_steps;
    }
  }
  out.pair_loss = pair_steps > 0 ? pair_acc / pair_steps : 0.0;

  // (b) aggregate per modality against the start-of-round global
  // representations of the other modality (the broadcast values).
  const std::optional<Matrix> img_targets =
      aggregation_targets(img_c, ctx.global_txt, hp.aggregator, hp.contrast,
                          hp.iot_boost, hp.gca_include_diagonal);
  const std::optional<Matrix> txt_targets =
      aggregation_targets(txt_c, ctx.global_img, hp.aggregator, hp.contrast,
                          hp.iot_boost, hp.gca_include_diagonal);

  // (c) distillation, full subset per epoch
  double distill_acc = 0.0;
  int distill_steps = 0;
  for (int epoch = 0; epoch < hp.distill_epochs; ++epoch) {
    auto distill_one = [&](EncoderSlot& enc, const Matrix& inputs,
                           const Matrix& targets) {
      const EncoderTrace tr =
          encoder_forward_traced(enc.spec, enc.params, inputs);
      const LossResult res =
          distill_loss(tr.output, targets, hp.distill_mode);
      const std::vector<double> g =
          encoder_backward_from_trace(enc.spec, enc.params, tr, res.grad);
      adam_step(enc.params, g, enc.adam, hp.lr);
      distill_acc += res.value;
      ++distill_steps;
    };
    if (img_targets) distill_one(server.image_enc, ctx.pub_img, *img_targets);
    if (txt_targets) distill_one(server.text_enc, ctx.pub_txt, *txt_targets);
  }
  out.distill_loss_value = distill_steps > 0 ? distill_acc / distill_steps : 0.0;

  server.round += 1;
  return out;
}

// --- full simulation -----------------------------------------------------

struct Simulation {
  World world;
  Splits splits;
  std::uint64_t world_content_hash = 0;
  Matrix pub_img, pub_txt;     // all public items
  std::vector<int> pub_ids;    // world item id per public row
  Matrix test_img, test_txt;   // aligned test pairs
  std::vector<ClientState> clients;
  ServerState server;
};

namespace detail {

inline Matrix views_to_matrix(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

}  // namespace detail

inline Simulation build_simulation(const RunConfig& cfg) {
  cfg.validate();
  Simulation sim;
  sim.world = generate_world(cfg.world);
  sim.world_content_hash = world_hash(sim.world);
  sim.splits = make_splits(sim.world, cfg.world);

  const auto& pub = sim.splits.public_items;
  sim.pub_img = Matrix(pub.size(), static_cast<std::size_t>(cfg.world.img_dim));
  sim.pub_txt = Matrix(pub.size(), static_cast<std::size_t>(cfg.world.txt_dim));
  for (std::size_t i = 0; i < pub.size(); ++i) {
    sim.pub_ids.push_back(pub[i].id);
    for (std::size_t j = 0; j < sim.pub_img.cols(); ++j)
      sim.pub_img(i, j) = pub[i].img_view[j];
    for (std::size_t j = 0; j < sim.pub_txt.cols(); ++j)
      sim.pub_txt(i, j) = pub[i].txt_view[j];
  }
  const auto& test = sim.splits.test_items;
  sim.test_img = Matrix(test.size(), static_cast<std::size_t>(cfg.world.img_dim));
  sim.test_txt = Matrix(test.size(), static_cast<std::size_t>(cfg.world.txt_dim));
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t j = 0; j < sim.test_img.cols(); ++j)
      sim.test_img(i, j) = test[i].img_view[j];
    for (std::size_t j = 0; j < sim.test_txt.cols(); ++j)
      sim.test_txt(i, j) = test[i].txt_view[j];
  }

  const int d = cfg.server.rep_dim;
  const EncoderSpec server_img{cfg.world.img_dim, cfg.server.server_hidden_dims,
                               d, cfg.server.activation};
  const EncoderSpec server_txt{cfg.world.txt_dim, cfg.server.server_hidden_dims,
                               d, cfg.server.activation};
  const EncoderSpec client_img{cfg.world.img_dim, cfg.server.client_hidden_dims,
                               d, cfg.server.activation};
  const EncoderSpec client_txt{cfg.world.txt_dim, cfg.server.client_hidden_dims,
                               d, cfg.server.activation};

  const std::uint64_t ms = cfg.run.master_seed;
  sim.server.image_enc = make_slot(server_img, seed_combine(ms, seeds::kInit, 1000));
  sim.server.text_enc = make_slot(server_txt, seed_combine(ms, seeds::kInit, 1001));

  // Non-IID shards per pool.
  auto labels_of = [](const auto& pool) {
    std::vector<int> ys;
    ys.reserve(pool.size());
    for (const auto& e : pool) ys.push_back(e.label);
    return ys;
  };
  auto partition_pool = [&](const std::vector<int>& labels, int n_clients,
                            std::uint64_t tag) {
    if (n_clients == 0) return std::vector<Shard>{};
    return dirichlet_partition(labels, n_clients, cfg.clients.dirichlet_alpha,
                               seed_combine(ms, seeds::kPartition, tag));
  };
  const auto img_shards =
      partition_pool(labels_of(sim.splits.private_img), cfg.clients.n_img, 0);
  const auto txt_shards =
      partition_pool(labels_of(sim.splits.private_txt), cfg.clients.n_txt, 1);
  const auto mm_shards =
      partition_pool(labels_of(sim.splits.private_mm), cfg.clients.n_mm, 2);

  int next_id = 0;
  auto head_init = [&](std::uint64_t seed) {
    // Small seeded head; zero rows would also work, nonzero breaks ties.
    Matrix h(static_cast<std::size_t>(cfg.world.num_classes),
             static_cast<std::size_t>(d));
    Rng r(seed);
    const double a = std::sqrt(6.0 / static_cast<double>(cfg.world.num_classes + d));
    for (auto& v : h.data()) v = r.uniform(-a, a);
    return h;
  };

  for (int i = 0; i < cfg.clients.n_img; ++i) {
    ClientState c;
    c.client_id = next_id++;
    c.kind = ClientKind::image;
    c.image_enc = make_slot(
        client_img, seed_combine(ms, seeds::kInit,
                                 static_cast<std::uint64_t>(c.client_id), 0));
    c.head = head_init(seed_combine(ms, seeds::kInit,
                                    static_cast<std::uint64_t>(c.client_id), 2));
    c.head_adam = AdamState(c.head.data().size());
    const auto& shard = img_shards[static_cast<std::size_t>(i)].item_ids;
    c.num_private = static_cast<int>(shard.size());
    c.priv_img = Matrix(shard.size(), static_cast<std::size_t>(cfg.world.img_dim));
    for (std::size_t r = 0; r < shard.size(); ++r) {
      const auto& ex = sim.splits.private_img[static_cast<std::size_t>(shard[r])];
      for (std::size_t j = 0; j < c.priv_img.cols(); ++j) c.priv_img(r, j) = ex.view[j];
      c.labels.push_back(ex.label);
    }
    sim.clients.push_back(std::move(c));
  }
  for (int i = 0; i < cfg.clients.n_txt; ++i) {
    ClientState c;
    c.client_id = next_id++;
    c.kind = ClientKind::text;
    c.text_enc = make_slot(
        client_txt, seed_combine(ms, seeds::kInit,
                                 static_cast<std::uint64_t>(c.client_id), 1));
    c.head = head_init(seed_combine(ms, seeds::kInit,
                                    static_cast<std::uint64_t>(c.client_id), 2));
    c.head_adam = AdamState(c.head.data().size());
    const auto& shard = txt_shards[static_cast<std::size_t>(i)].item_ids;
    c.num_private = static_cast<int>(shard.size());
    c.priv_txt = Matrix(shard.size(), static_cast<std::size_t>(cfg.world.txt_dim));
    for (std::size_t r = 0; r < shard.size(); ++r) {
      const auto& ex = sim.splits.private_txt[static_cast<std::size_t>(shard[r])];
      for (std::size_t j = 0; j < c.priv_txt.cols(); ++j) c.priv_txt(r, j) = ex.view[j];
      c.labels.push_back(ex.label);
    }
    sim.clients.push_back(std::move(c));
  }
  for (int i = 0; i < cfg.clients.n_mm; ++i) {
    ClientState c;
    c.client_id = next_id++;
    c.kind = ClientKind::multimodal;
    c.image_enc = make_slot(
        client_img, seed_combine(ms, seeds::kInit,
                                 static_cast<std::uint64_t>(c.client_id), 0));
    c.text_enc = make_slot(
        client_txt, seed_combine(ms, seeds::kInit,
                                 static_cast<std::uint64_t>(c.client_id), 1));
    const auto& shard = mm_shards[static_cast<std::size_t>(i)].item_ids;
    c.num_private = static_cast<int>(shard.size());
    c.priv_img = Matrix(shard.size(), static_cast<std::size_t>(cfg.world.img_dim));
    c.priv_txt = Matrix(shard.size(), static_cast<std::size_t>(cfg.world.txt_dim));
    for (std::size_t r = 0; r < shard.size(); ++r) {
      const auto& ex = sim.splits.private_mm[static_cast<std::size_t>(shard[r])];
      for (std::size_t j = 0; j < c.priv_img.cols(); ++j) c.priv_img(r, j) = ex.img_view[j];
      for (std::size_t j = 0; j < c.priv_txt.cols(); ++j) c.priv_txt(r, j) = ex.txt_view[j];
      c.labels.push_back(ex.label);
    }
    sim.clients.push_back(std::move(c));
  }
  return sim;
}

inline RetrievalReport evaluate_server(const Simulation& sim) {
  const Matrix img_reps = encoder_forward(sim.server.image_enc.spec,
                                          sim.server.image_enc.params,
                                          sim.test_img);
  const Matrix txt_reps = encoder_forward(sim.server.text_enc.spec,
                                          sim.server.text_enc.params,
                                          sim.test_txt);
  return retrieval_report(img_reps, txt_reps, {1, 5, 10});
}

struct TrainingResult {
  std::vector<RoundRecord> records;
  RetrievalReport final_retrieval;
  double final_drift = 0.0;
  std::uint64_t total_comm_bytes = 0;
  std::uint64_t world_content_hash = 0;
};

// Algorithm loop: broadcast, parallel client training, collection in
// client_id order, server phase, evaluation, record. Deterministic for a
// given config and master seed, independent of worker thread count:
// worker_threads only schedules the already-independent client tasks.
inline TrainingResult run_training(const RunConfig& cfg,
                                   JsonlSink* sink = nullptr,
                                   int worker_threads = 1) {
  Simulation sim = build_simulation(cfg);
  TrainingResult result;
  result.world_content_hash = sim.world_content_hash;

  TrainHyper hp;
  hp.local_epochs = cfg.clients.local_epochs;
  hp.client_lr = cfg.clients.client_lr;
  hp.gamma = cfg.clients.gamma;
  hp.private_batch = cfg.clients.private_batch;
  hp.public_batch = cfg.clients.public_batch;
  hp.contrast = ContrastConfig{cfg.clients.temperature, cfg.clients.public_batch};
  hp.regularizer = cfg.run.regularizer;

  ServerHyper sh;
  sh.lr = cfg.server.server_lr;
  sh.distill_epochs = cfg.server.distill_epochs;
  sh.public_train_epochs = cfg.server.public_train_epochs;
  sh.public_batch = cfg.clients.public_batch;
  sh.distill_mode = cfg.server.distill_mode;
  sh.contrast = hp.contrast;
  if (cfg.run.gca_temperature > 0.0)
    sh.contrast.temperature = cfg.run.gca_temperature;
  sh.aggregator = cfg.run.aggregator;
  sh.iot_boost = cfg.run.iot_boost_value;
  sh.gca_include_diagonal = cfg.run.gca_include_diagonal;

  std::vector<int> all_ids;
  for (const auto& c : sim.clients) all_ids.push_back(c.client_id);

  const std::uint64_t ms = cfg.run.master_seed;
  for (int round = 0; round < cfg.run.rounds; ++round) {
    // Seeded public subset for the round, in ascending public-row order.
    Rng sub_rng(seed_combine(ms, seeds::kPublicSubset,
                             static_cast<std::uint64_t>(round)));
    std::vector<int> subset_rows = sub_rng.sample_without_replacement(
        static_cast<int>(sim.pub_ids.size()), cfg.run.round_public_size);
    std::sort(subset_rows.begin(), subset_rows.end());

    RoundContext ctx;
    ctx.round = round;
    for (int r : subset_rows)
      ctx.subset_ids.push_back(sim.pub_ids[static_cast<std::size_t>(r)]);
    ctx.pub_img = gather_rows(sim.pub_img, subset_rows);
    ctx.pub_txt = gather_rows(sim.pub_txt, subset_rows);
    ctx.global_img = encoder_forward(sim.server.image_enc.spec,
                                     sim.server.image_enc.params, ctx.pub_img);
    ctx.global_txt = encoder_forward(sim.server.text_enc.spec,
                                     sim.server.text_enc.params, ctx.pub_txt);

    const std::vector<int> selected =
        select_clients(all_ids, cfg.run.participation_fraction, round, ms);

    // Client training, optionally across worker threads. Results land in
    // fixed slots so completion order cannot matter.
    std::vector<ClientRoundResult> results(selected.size());
    std::vector<std::exception_ptr> errors(selected.size());
    auto run_client = [&](std::size_t i) {
      try {
        ClientState& c = sim.clients[static_cast<std::size_t>(selected[i])];
        results[i] = client_local_training(c, ctx, hp, ms);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    };
    const int threads =
        std::min<int>(worker_threads, static_cast<int>(selected.size()));
    if (threads <= 1) {
      for (std::size_t i = 0; i < selected.size(); ++i) run_client(i);
    } else {
      std::vector<std::thread> pool;
      std::atomic<std::size_t> next{0};
      for (int t = 0; t < threads; ++t)
        pool.emplace_back([&] {
          for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= selected.size()) break;
            run_client(i);
          }
        });
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);

    std::vector<Contribution> contributions;
    double task_sum = 0.0, inter_sum = 0.0, intra_sum = 0.0;
    for (const auto& r : results) {
      for (const auto& c : r.contributions) contributions.push_back(c);
      task_sum += r.task_loss;
      inter_sum += r.inter_loss;
      intra_sum += r.intra_loss;
    }
    const double n_sel = static_cast<double>(selected.size());

    ServerRoundResult srv;
    try {
      srv = server_round(sim.server, contributions, ctx, sh, ms);
    } catch (const NumericError& e) {
      throw NumericError("server, round " + std::to_string(round) + ": " +
                         e.what());
    }

    // Per-modality drift over this round's contributors, averaged over the
    // modalities that have at least two contributors.
    double drift = 0.0;
    {
      std::map<int, Matrix> img_probe, txt_probe;
      for (const auto& c : contributions)
        (c.modality == Modality::image ? img_probe : txt_probe)[c.client_id] =
            c.reps;
      double acc = 0.0;
      int terms = 0;
      if (img_probe.size() >= 2) {
        acc += drift_metric(img_probe).per_modality_drift;
        ++terms;
      }
      if (txt_probe.size() >= 2) {
        acc += drift_metric(txt_probe).per_modality_drift;
        ++terms;
      }
      if (terms > 0) drift = acc / terms;
    }

    int img_capable = 0, txt_capable = 0;
    for (int id : selected) {
      const ClientState& c = sim.clients[static_cast<std::size_t>(id)];
      if (c.has_image()) ++img_capable;
      if (c.has_text()) ++txt_capable;
    }
    const CommCost cost =
        comm_cost(static_cast<int>(selected.size()), img_capable, txt_capable,
                  static_cast<int>(ctx.subset_ids.size()), cfg.server.rep_dim);

    const RetrievalReport rep = evaluate_server(sim);

    RoundRecord rec;
    rec.round = round;
    rec.selected = selected;
    rec.comm_up = cost.up_bytes;
    rec.comm_down = cost.down_bytes;
    rec.i2t_r1 = rep.i2t_r_at.at(1);
    rec.i2t_r5 = rep.i2t_r_at.at(5);
    rec.i2t_r10 = rep.i2t_r_at.at(10);
    rec.t2i_r1 = rep.t2i_r_at.at(1);
    rec.t2i_r5 = rep.t2i_r_at.at(5);
    rec.t2i_r10 = rep.t2i_r_at.at(10);
    rec.r1_sum = rep.r1_sum;
    rec.drift = drift;
    rec.losses["task"] = n_sel > 0 ? task_sum / n_sel : 0.0;
    rec.losses["inter"] = n_sel > 0 ? inter_sum / n_sel : 0.0;
    rec.losses["intra"] = n_sel > 0 ? intra_sum / n_sel : 0.0;
    rec.losses["server_pair"] = srv.pair_loss;
    rec.losses["distill"] = srv.distill_loss_value;
    if (sink) emit_round_record(rec, *sink);
    result.records.push_back(std::move(rec));

    result.total_comm_bytes += cost.up_bytes + cost.down_bytes;
    result.final_retrieval = rep;
    result.final_drift = drift;
  }

  if (cfg.run.rounds == 0) result.final_retrieval = evaluate_server(sim);
  return result;
}

}  // namespace fedrep
