#pragma once

#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <thread>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "fedrep/config.hpp"
#include "fedrep/federation.hpp"
#include "fedrep/gradcheck.hpp"
#include "fedrep/round_log.hpp"

namespace fedrep {

// FEDREP_OUT_DIR redirects all artifacts into one directory, keeping only
// the configured file names.
inline std::string resolve_output_path(const std::string& path) {
  const char* dir = std::getenv("FEDREP_OUT_DIR");
  if (dir == nullptr || *dir == '\0') return path;
  return (std::filesystem::path(dir) /
          std::filesystem::path(path).filename())
      .string();
}

struct ExperimentResult {
  RunConfig config;
  std::uint64_t world_hash = 0;
  TrainingResult training;
  SummaryRow summary;
  std::string log_path;
};

inline nlohmann::json run_header_json(const RunConfig& cfg,
                                      std::uint64_t whash) {
  nlohmann::json j;
  j["type"] = "header";
  j["variant"] = cfg.variant_name();
  j["world_hash"] = whash;
  j["config"] = config_to_json(cfg);
  return j;
}

// One run, log only: builds world and participants, executes the round loop,
// and writes the JSON-lines log (header first). Summary emission belongs to
// the caller so matrices can append rows in a deterministic order.
inline ExperimentResult run_single(const RunConfig& cfg,
                                   int worker_threads = 1) {
  cfg.validate();
  ExperimentResult res;
  res.config = cfg;
  res.log_path = resolve_output_path(cfg.output.log_path);

  // The header needs the world hash, which requires generating the world;
  // build_simulation inside run_training regenerates it deterministically,
  // so hash the world up front at negligible desk-scale cost.
  res.world_hash = world_hash(generate_world(cfg.world));

  JsonlSink sink(res.log_path);
  sink.write_json(run_header_json(cfg, res.world_hash));
  res.training = run_training(cfg, &sink, worker_threads);

  res.summary.variant = cfg.variant_name();
  res.summary.seed = cfg.run.master_seed;
  res.summary.rounds = cfg.run.rounds;
  res.summary.final_r1_sum = res.training.final_retrieval.r1_sum;
  res.summary.final_drift = res.training.final_drift;
  res.summary.total_comm_bytes = res.training.total_comm_bytes;
  return res;
}

inline void print_summary_line(const SummaryRow& row) {
  std::cout << "variant=" << row.variant << " seed=" << row.seed
            << " final_r1_sum=" << format_full(row.final_r1_sum)
            << " final_drift=" << format_full(row.final_drift)
            << " comm_bytes=" << row.total_comm_bytes << '\n';
}

// One full run: log, one summary CSV row, and the headline numbers on stdout.
inline ExperimentResult run_experiment(const RunConfig& cfg,
                                       bool quiet = false,
                                       int worker_threads = 1) {
  const ExperimentResult res = run_single(cfg, worker_threads);
  append_summary_row(resolve_output_path(cfg.output.summary_path), res.summary);
  if (!quiet) print_summary_line(res.summary);
  return res;
}

struct Variant {
  AggregatorStrategy aggregator = AggregatorStrategy::gca;
  Regularizer regularizer = Regularizer::both;

  std::string name() const {
    return to_string(aggregator) + "+" + to_string(regularizer);
  }
};

// "gca+both", "mean+none", ...
inline Variant parse_variant(const std::string& s) {
  const auto pos = s.find('+');
  if (pos == std::string::npos)
    throw ConfigError("variant must look like <aggregator>+<regularizer>, got \"" +
                      s + "\"");
  Variant v;
  v.aggregator = detail::parse_aggregator(s.substr(0, pos));
  v.regularizer = detail::parse_regularizer(s.substr(pos + 1));
  return v;
}

inline std::string insert_suffix(const std::string& path,
                                 const std::string& suffix) {
  std::filesystem::path p(path);
  const std::string stem = p.stem().string();
  const std::string ext = p.extension().string();
  return (p.parent_path() / (stem + suffix + ext)).string();
}

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  SummaryRow summary;
  bool ok = false;
  std::string error;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::map<std::string, double> pivot_mean_r1;  // variant -> mean final_r1_sum
  std::string pivot_path;
};

namespace detail {

// Executes independent runs sequentially or on a small thread pool; results
// land in fixed slots so the emission order never depends on scheduling.
inline void execute_jobs(std::size_t count,
                         const std::function<void(std::size_t)>& job,
                         int parallel_runs) {
  if (parallel_runs <= 1) {
    for (std::size_t i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int n = std::min<int>(parallel_runs, static_cast<int>(count));
  for (int t = 0; t < n; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        job(i);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace detail

// Cross product of variants x seeds over a shared base config: every run of
// one seed shares the same world and client initializations, so variants are
// compared under matched conditions. Per-run failures are recorded and the
// remaining runs proceed. Runs are sequential by default; parallel_runs > 1
// executes them concurrently, with summary rows still appended in matrix
// order so artifacts stay byte-reproducible.
inline AblationResult run_ablation(const RunConfig& base,
                                   const std::vector<Variant>& variants,
                                   const std::vector<std::uint64_t>& seeds,
                                   bool quiet = false, int worker_threads = 1,
                                   int parallel_runs = 1) {
  if (variants.empty()) throw ConfigError("run_ablation: no variants");
  if (seeds.empty()) throw ConfigError("run_ablation: no seeds");

  std::vector<RunConfig> jobs;
  AblationResult out;
  for (const Variant& v : variants) {
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.run.aggregator = v.aggregator;
      cfg.run.regularizer = v.regularizer;
      cfg.run.master_seed = seed;
      cfg.output.log_path = insert_suffix(
          base.output.log_path, "_" + v.name() + "_s" + std::to_string(seed));
      jobs.push_back(std::move(cfg));
      AblationRow row;
      row.variant = v.name();
      row.seed = seed;
      out.rows.push_back(std::move(row));
    }
  }

  detail::execute_jobs(
      jobs.size(),
      [&](std::size_t i) {
        try {
          const ExperimentResult res = run_single(jobs[i], worker_threads);
          out.rows[i].summary = res.summary;
          out.rows[i].ok = true;
        } catch (const std::exception& e) {
          out.rows[i].error = e.what();
          out.rows[i].summary.variant = out.rows[i].variant;
          out.rows[i].summary.seed = out.rows[i].seed;
          out.rows[i].summary.status = "failed";
        }
      },
      parallel_runs);

  std::map<std::string, std::pair<double, int>> agg;
  for (const AblationRow& row : out.rows) {
    append_summary_row(resolve_output_path(base.output.summary_path),
                       row.summary);
    if (row.ok) {
      if (!quiet) print_summary_line(row.summary);
      auto& [sum, n] = agg[row.variant];
      sum += row.summary.final_r1_sum;
      n += 1;
    } else {
      std::cerr << "run " << row.variant << " seed " << row.seed
                << " failed: " << row.error << '\n';
    }
  }

  for (const auto& [name, sn] : agg)
    out.pivot_mean_r1[name] = sn.first / static_cast<double>(sn.second);

  out.pivot_path = resolve_output_path(
      insert_suffix(base.output.summary_path, "_pivot"));
  {
    const auto parent = std::filesystem::path(out.pivot_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream piv(out.pivot_path, std::ios::trunc);
    if (!piv) throw IoError("cannot open pivot file " + out.pivot_path);
    piv << "variant,runs,mean_final_r1_sum\n";
    for (const Variant& v : variants) {
      const auto it = agg.find(v.name());
      if (it == agg.end()) continue;
      piv << v.name() << ',' << it->second.second << ','
          << format_full(out.pivot_mean_r1.at(v.name())) << '\n';
    }
  }
  return out;
}

struct SweepRow {
  std::string axis;  // "num" (public items per round) or "dim"
  int value = 0;
  std::uint64_t seed = 0;
  std::uint64_t total_comm_bytes = 0;
  double final_r1_sum = 0.0;
  bool ok = false;
  std::string error;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string csv_path;
};

// Communication sweep: vary the number of public items transmitted per round
// at fixed representation dimension, then vary the dimension at fixed public
// count. The world itself is shared by every sweep point.
inline SweepResult run_comm_sweep(const RunConfig& base,
                                  const std::vector<int>& public_values,
                                  const std::vector<int>& dim_values,
                                  const std::vector<std::uint64_t>& seeds,
                                  bool quiet = false, int worker_threads = 1,
                                  int parallel_runs = 1) {
  if (public_values.empty() || dim_values.empty())
    throw ConfigError("run_comm_sweep: value lists must be non-empty");
  if (seeds.empty()) throw ConfigError("run_comm_sweep: no seeds");

  SweepResult out;
  std::vector<RunConfig> jobs;
  auto plan = [&](const std::string& axis, int value, std::uint64_t seed) {
    RunConfig cfg = base;
    cfg.run.master_seed = seed;
    if (axis == "num") {
      cfg.run.round_public_size = value;
    } else {
      cfg.server.rep_dim = value;
    }
    cfg.output.log_path =
        insert_suffix(base.output.log_path, "_" + axis + std::to_string(value) +
                                                "_s" + std::to_string(seed));
    jobs.push_back(std::move(cfg));
    SweepRow row;
    row.axis = axis;
    row.value = value;
    row.seed = seed;
    out.rows.push_back(row);
  };
  for (int v : public_values)
    for (std::uint64_t s : seeds) plan("num", v, s);
  for (int v : dim_values)
    for (std::uint64_t s : seeds) plan("dim", v, s);

  std::vector<SummaryRow> summaries(jobs.size());
  detail::execute_jobs(
      jobs.size(),
      [&](std::size_t i) {
        try {
          const ExperimentResult res = run_single(jobs[i], worker_threads);
          out.rows[i].total_comm_bytes = res.summary.total_comm_bytes;
          out.rows[i].final_r1_sum = res.summary.final_r1_sum;
          out.rows[i].ok = true;
          summaries[i] = res.summary;
        } catch (const std::exception& e) {
          out.rows[i].error = e.what();
          summaries[i].variant = jobs[i].variant_name();
          summaries[i].seed = out.rows[i].seed;
          summaries[i].status = "failed";
        }
      },
      parallel_runs);

  for (std::size_t i = 0; i < out.rows.size(); ++i) {
    append_summary_row(resolve_output_path(base.output.summary_path),
                       summaries[i]);
    if (out.rows[i].ok) {
      if (!quiet) print_summary_line(summaries[i]);
    } else {
      std::cerr << "sweep " << out.rows[i].axis << "=" << out.rows[i].value
                << " seed " << out.rows[i].seed
                << " failed: " << out.rows[i].error << '\n';
    }
  }

  out.csv_path = resolve_output_path(
      insert_suffix(base.output.summary_path, "_sweep"));
  const auto parent = std::filesystem::path(out.csv_path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream csv(out.csv_path, std::ios::trunc);
  if (!csv) throw IoError("cannot open sweep file " + out.csv_path);
  csv << "axis,value,seed,total_comm_bytes,final_r1_sum\n";
  for (const SweepRow& r : out.rows)
    csv << r.axis << ',' << r.value << ',' << r.seed << ','
        << r.total_comm_bytes << ',' << format_full(r.final_r1_sum) << '\n';
  return out;
}

// --- gradient verification suite -----------------------------------------

// Every loss composed with a one-hidden-layer encoder, checked against
// central finite differences on seeded instances. Used by both the CLI verb
// and the acceptance suite.
inline std::map<std::string, double> gradcheck_suite(int probes = 32,
                                                     double step = 1e-5,
                                                     int num_seeds = 3) {
  const int batch = 8, in_dim = 6, hidden = 5, d = 4, num_classes = 3;
  const EncoderSpec spec{in_dim, {hidden}, d, Activation::tanh};
  // Temperature 1 reproduces the losses in their plain dot-product form and
  // keeps every softmax away from the saturated regime where central
  // differences drown in roundoff.
  const ContrastConfig cc{1.0, batch};

  std::map<std::string, double> worst;
  auto note = [&](const std::string& name, double err) {
    auto it = worst.find(name);
    if (it == worst.end() || err > it->second) worst[name] = err;
  };

  for (int s = 0; s < num_seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(1000 + s);
    Rng rng(seed);
    auto rand_inputs = [&](int rows, int cols) {
      Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
      for (auto& v : m.data()) v = rng.normal();
      return m;
    };
    auto rand_unit = [&](int rows, int cols) {
      Matrix m = rand_inputs(rows, cols);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = std::max(l2_norm(m.row(r)), 1e-12);
        for (std::size_t j = 0; j < m.cols(); ++j) m(r, j) /= n;
      }
      return m;
    };

    const Matrix x = rand_inputs(batch, in_dim);
    const Matrix global_a = rand_unit(batch, d);
    const Matrix global_b = rand_unit(batch, d);
    const std::vector<double> p0 = init_params(spec, seed_combine(seed, 7));

    note("inter",
         grad_check(
             [&](const std::vector<double>& p) {
               const EncoderTrace t = encoder_forward_traced(spec, p, x);
               const LossResult r = inter_modal_loss(t.output, global_a, cc);
               return std::make_pair(
                   r.value, encoder_backward_from_trace(spec, p, t, r.grad));
             },
             p0, step, probes, seed_combine(seed, 1)));

    note("intra",
         grad_check(
             [&](const std::vector<double>& p) {
               const EncoderTrace t = encoder_forward_traced(spec, p, x);
               const LossResult r =
                   intra_modal_loss(t.output, global_a, &global_b, cc);
               return std::make_pair(
                   r.value, encoder_backward_from_trace(spec, p, t, r.grad));
             },
             p0, step, probes, seed_combine(seed, 2)));

    {
      // Encoder and head parameters concatenated into one vector.
      std::vector<int> labels(batch);
      for (int i = 0; i < batch; ++i)
        labels[static_cast<std::size_t>(i)] =
            static_cast<int>(rng.uniform_int(num_classes));
      const std::size_t enc_n = param_count(spec);
      std::vector<double> joint = p0;
      for (int i = 0; i < num_classes * d; ++i) joint.push_back(rng.normal() * 0.3);
      note("classification",
           grad_check(
               [&](const std::vector<double>& p) {
                 const std::vector<double> pe(p.begin(),
                                              p.begin() + static_cast<long>(enc_n));
                 Matrix head(static_cast<std::size_t>(num_classes),
                             static_cast<std::size_t>(d));
                 std::copy(p.begin() + static_cast<long>(enc_n), p.end(),
                           head.data().begin());
                 const EncoderTrace t = encoder_forward_traced(spec, pe, x);
                 const ClassificationResult r =
                     classification_loss(t.output, head, labels);
                 std::vector<double> g =
                     encoder_backward_from_trace(spec, pe, t, r.grad_reps);
                 g.insert(g.end(), r.grad_head.data().begin(),
                          r.grad_head.data().end());
                 return std::make_pair(r.value, g);
               },
               joint, step, probes, seed_combine(seed, 3)));
    }

    {
      // Two encoders (image and text side) concatenated.
      const EncoderSpec spec_b{in_dim + 1, {hidden}, d, Activation::tanh};
      const Matrix xb = rand_inputs(batch, in_dim + 1);
      const std::vector<double> pb0 = init_params(spec_b, seed_combine(seed, 8));
      const std::size_t na = param_count(spec);
      std::vector<double> joint = p0;
      joint.insert(joint.end(), pb0.begin(), pb0.end());
      note("bidirectional",
           grad_check(
               [&](const std::vector<double>& p) {
                 const std::vector<double> pa(p.begin(),
                                              p.begin() + static_cast<long>(na));
                 const std::vector<double> pb(p.begin() + static_cast<long>(na),
                                              p.end());
                 const EncoderTrace ta = encoder_forward_traced(spec, pa, x);
                 const EncoderTrace tb = encoder_forward_traced(spec_b, pb, xb);
                 const PairLossResult r =
                     bidirectional_pair_loss(ta.output, tb.output, cc);
                 std::vector<double> g =
                     encoder_backward_from_trace(spec, pa, ta, r.grad_img);
                 const std::vector<double> gb =
                     encoder_backward_from_trace(spec_b, pb, tb, r.grad_txt);
                 g.insert(g.end(), gb.begin(), gb.end());
                 return std::make_pair(r.value, g);
               },
               joint, step, probes, seed_combine(seed, 4)));
    }

    note("distill_squared",
         grad_check(
             [&](const std::vector<double>& p) {
               const EncoderTrace t = encoder_forward_traced(spec, p, x);
               const LossResult r =
                   distill_loss(t.output, global_a, DistillMode::squared_l2);
               return std::make_pair(
                   r.value, encoder_backward_from_trace(spec, p, t, r.grad));
             },
             p0, step, probes, seed_combine(seed, 5)));
  }
  return worst;
}

}  // namespace fedrep
