#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fedrep/errors.hpp"

#include <nlohmann/json.hpp>

namespace fedrep {

// Everything recorded about one communication round. Serialized as one JSON
// object per line with stable field names; numeric fields round-trip at full
// double precision.
struct RoundRecord {
  int round = 0;
  std::vector<int> selected;
  std::uint64_t comm_up = 0;
  std::uint64_t comm_down = 0;
  double i2t_r1 = 0.0, i2t_r5 = 0.0, i2t_r10 = 0.0;
  double t2i_r1 = 0.0, t2i_r5 = 0.0, t2i_r10 = 0.0;
  double r1_sum = 0.0;
  double drift = 0.0;
  std::map<std::string, double> losses;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

inline nlohmann::json round_record_to_json(const RoundRecord& r) {
  nlohmann::json j;
  j["round"] = r.round;
  j["selected"] = r.selected;
  j["comm_up"] = r.comm_up;
  j["comm_down"] = r.comm_down;
  j["i2t_r1"] = r.i2t_r1;
  j["i2t_r5"] = r.i2t_r5;
  j["i2t_r10"] = r.i2t_r10;
  j["t2i_r1"] = r.t2i_r1;
  j["t2i_r5"] = r.t2i_r5;
  j["t2i_r10"] = r.t2i_r10;
  j["r1_sum"] = r.r1_sum;
  j["drift"] = r.drift;
  for (const auto& [name, v] : r.losses) j["loss." + name] = v;
  return j;
}

inline RoundRecord round_record_from_json(const nlohmann::json& j) {
  RoundRecord r;
  r.round = j.at("round").get<int>();
  r.selected = j.at("selected").get<std::vector<int>>();
  r.comm_up = j.at("comm_up").get<std::uint64_t>();
  r.comm_down = j.at("comm_down").get<std::uint64_t>();
  r.i2t_r1 = j.at("i2t_r1").get<double>();
  r.i2t_r5 = j.at("i2t_r5").get<double>();
  r.i2t_r10 = j.at("i2t_r10").get<double>();
  r.t2i_r1 = j.at("t2i_r1").get<double>();
  r.t2i_r5 = j.at("t2i_r5").get<double>();
  r.t2i_r10 = j.at("t2i_r10").get<double>();
  r.r1_sum = j.at("r1_sum").get<double>();
  r.drift = j.at("drift").get<double>();
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.key().rfind("loss.", 0) == 0)
      r.losses[it.key().substr(5)] = it.value().get<double>();
  }
  return r;
}

// Append-only JSON-lines sink. The first line of a run log is a header
// object carrying the fully resolved config and the world content hash.
class JsonlSink {
 public:
  JsonlSink() = default;
  explicit JsonlSink(const std::string& path) { open(path); }

  void open(const std::string& path) {
    path_ = path;
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    out_.open(path, std::ios::trunc);
    if (!out_) throw IoError("cannot open log file " + path);
  }

  bool is_open() const { return out_.is_open(); }
  const std::string& path() const { return path_; }

  void write_json(const nlohmann::json& j) {
    if (!out_.is_open()) return;
    out_ << j.dump() << '\n';
    out_.flush();
    if (!out_) throw IoError("write failed on " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
};

inline void emit_round_record(const RoundRecord& record, JsonlSink& sink) {
  sink.write_json(round_record_to_json(record));
}

// One summary row per (variant, seed). Creates the file with a header when
// absent, appends otherwise.
struct SummaryRow {
  std::string variant;
  std::uint64_t seed = 0;
  int rounds = 0;
  double final_r1_sum = 0.0;
  double final_drift = 0.0;
  std::uint64_t total_comm_bytes = 0;
  std::string status = "ok";
};

inline std::string format_full(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void append_summary_row(const std::string& path, const SummaryRow& row) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  const bool fresh = !std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open summary file " + path);
  if (fresh)
    out << "variant,seed,rounds,final_r1_sum,final_drift,total_comm_bytes,status\n";
  out << row.variant << ',' << row.seed << ',' << row.rounds << ','
      << format_full(row.final_r1_sum) << ',' << format_full(row.final_drift)
      << ',' << row.total_comm_bytes << ',' << row.status << '\n';
  if (!out) throw IoError("write failed on " + path);
}

}  // namespace fedrep
