#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fedrep/aggregation.hpp"
#include "fedrep/encoder.hpp"
#include "fedrep/errors.hpp"
#include "fedrep/synth.hpp"

#include <nlohmann/json.hpp>

namespace fedrep {

enum class Regularizer { none, inter, intra, both };

inline std::string to_string(Regularizer r) {
  switch (r) {
    case Regularizer::none: return "none";
    case Regularizer::inter: return "inter";
    case Regularizer::intra: return "intra";
    case Regularizer::both: return "both";
  }
  return "?";
}

inline bool regularizer_has_inter(Regularizer r) {
  return r == Regularizer::inter || r == Regularizer::both;
}
inline bool regularizer_has_intra(Regularizer r) {
  return r == Regularizer::intra || r == Regularizer::both;
}

struct ClientsConfig {
  int n_img = 4;
  int n_txt = 4;
  int n_mm = 4;
  double dirichlet_alpha = 0.1;
  int local_epochs = 2;
  double client_lr = 1e-3;
  double gamma = 0.5;
  int private_batch = 64;
  int public_batch = 128;
  double temperature = 0.07;
};

struct ServerConfig {
  int rep_dim = 16;
  std::vector<int> server_hidden_dims = {64};
  std::vector<int> client_hidden_dims = {32};
  Activation activation = Activation::tanh;
  double server_lr = 2e-4;
  int distill_epochs = 2;
  int public_train_epochs = 1;
  DistillMode distill_mode = DistillMode::squared_l2;
};

struct RunSection {
  int rounds = 30;
  double participation_fraction = 0.5;
  std::uint64_t master_seed = 0;
  AggregatorStrategy aggregator = AggregatorStrategy::gca;
  Regularizer regularizer = Regularizer::both;
  double iot_boost_value = 100.0;
  int round_public_size = 256;
  bool gca_include_diagonal = false;
  // 0 inherits clients.temperature; any positive value overrides the
  // temperature used for aggregation scoring only.
  double gca_temperature = 0.0;
};

struct OutputConfig {
  std::string log_path = "out/run.jsonl";
  std::string summary_path = "out/summary.csv";
};

// Full experiment configuration. The defaults are the reference benchmark:
// an empty config file is a valid, complete run.
struct RunConfig {
  WorldSpec world;
  ClientsConfig clients;
  ServerConfig server;
  RunSection run;
  OutputConfig output;

  std::string variant_name() const {
    return to_string(run.aggregator) + "+" + to_string(run.regularizer);
  }

  void validate() const {
    world.validate();
    if (clients.n_img < 0 || clients.n_txt < 0 || clients.n_mm < 0)
      throw ConfigError("clients: counts must be non-negative");
    if (clients.n_img + clients.n_txt + clients.n_mm < 1)
      throw ConfigError("clients: at least one client required");
    if (clients.dirichlet_alpha <= 0.0)
      throw ConfigError("clients.dirichlet_alpha must be > 0");
    if (clients.local_epochs < 0)
      throw ConfigError("clients.local_epochs must be >= 0");
    if (clients.client_lr <= 0.0)
      throw ConfigError("clients.client_lr must be > 0");
    if (clients.gamma < 0.0) throw ConfigError("clients.gamma must be >= 0");
    if (clients.private_batch < 1)
      throw ConfigError("clients.private_batch must be >= 1");
    if (clients.public_batch < 2)
      throw ConfigError("clients.public_batch must be >= 2");
    if (clients.temperature <= 0.0)
      throw ConfigError("clients.temperature must be > 0");
    if (server.rep_dim < 1) throw ConfigError("server.rep_dim must be >= 1");
    for (int h : server.server_hidden_dims)
      if (h < 1) throw ConfigError("server.server_hidden_dims must be positive");
    for (int h : server.client_hidden_dims)
      if (h < 1) throw ConfigError("server.client_hidden_dims must be positive");
    if (server.server_lr <= 0.0) throw ConfigError("server.server_lr must be > 0");
    if (server.distill_epochs < 0)
      throw ConfigError("server.distill_epochs must be >= 0");
    if (server.public_train_epochs < 0)
      throw ConfigError("server.public_train_epochs must be >= 0");
    if (run.rounds < 0) throw ConfigError("run.rounds must be >= 0");
    if (run.participation_fraction <= 0.0 || run.participation_fraction > 1.0)
      throw ConfigError("run.participation_fraction must be in (0, 1]");
    if (run.iot_boost_value <= 0.0)
      throw ConfigError("run.iot_boost_value must be > 0");
    if (run.round_public_size < 2)
      throw ConfigError("run.round_public_size must be >= 2");
    if (run.gca_temperature < 0.0)
      throw ConfigError("run.gca_temperature must be >= 0 (0 inherits)");
    if (run.round_public_size > world.sizes.n_public)
      throw ConfigError("run.round_public_size exceeds world.sizes.n_public");
    if (world.sizes.n_test < 10)
      throw ConfigError("world.sizes.n_test must be >= 10 (rounds record Recall@10)");
    if (output.log_path.empty() || output.summary_path.empty())
      throw ConfigError("output paths must be non-empty");
  }
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j,
                                const std::set<std::string>& known,
                                const std::string& section) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key \"" + it.key() + "\" in section \"" +
                        section + "\"");
}

template <typename T>
void read_if(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  throw ConfigError("activation must be \"tanh\" or \"relu\", got \"" + s + "\"");
}

inline AggregatorStrategy parse_aggregator(const std::string& s) {
  if (s == "gca") return AggregatorStrategy::gca;
  if (s == "mean") return AggregatorStrategy::mean;
  if (s == "sample_count") return AggregatorStrategy::sample_count;
  if (s == "iot_boost") return AggregatorStrategy::iot_boost;
  throw ConfigError("run.aggregator must be one of gca|mean|sample_count|iot_boost, got \"" + s + "\"");
}

inline Regularizer parse_regularizer(const std::string& s) {
  if (s == "none") return Regularizer::none;
  if (s == "inter") return Regularizer::inter;
  if (s == "intra") return Regularizer::intra;
  if (s == "both") return Regularizer::both;
  throw ConfigError("run.regularizer must be one of none|inter|intra|both, got \"" + s + "\"");
}

inline DistillMode parse_distill_mode(const std::string& s) {
  if (s == "squared_l2") return DistillMode::squared_l2;
  if (s == "l2") return DistillMode::l2;
  throw ConfigError("server.distill_mode must be \"squared_l2\" or \"l2\", got \"" + s + "\"");
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  detail::reject_unknown_keys(
      j, {"world", "clients", "server", "run", "output"}, "<root>");

  if (j.contains("world")) {
    const auto& w = j.at("world");
    detail::reject_unknown_keys(w,
                                {"latent_dim", "img_dim", "txt_dim",
                                 "num_classes", "noise_std", "sizes", "seed"},
                                "world");
    detail::read_if(w, "latent_dim", cfg.world.latent_dim);
    detail::read_if(w, "img_dim", cfg.world.img_dim);
    detail::read_if(w, "txt_dim", cfg.world.txt_dim);
    detail::read_if(w, "num_classes", cfg.world.num_classes);
    detail::read_if(w, "noise_std", cfg.world.noise_std);
    detail::read_if(w, "seed", cfg.world.seed);
    if (w.contains("sizes")) {
      const auto& s = w.at("sizes");
      detail::reject_unknown_keys(s,
                                  {"n_public", "n_test", "n_private_img",
                                   "n_private_txt", "n_private_mm"},
                                  "world.sizes");
      detail::read_if(s, "n_public", cfg.world.sizes.n_public);
      detail::read_if(s, "n_test", cfg.world.sizes.n_test);
      detail::read_if(s, "n_private_img", cfg.world.sizes.n_private_img);
      detail::read_if(s, "n_private_txt", cfg.world.sizes.n_private_txt);
      detail::read_if(s, "n_private_mm", cfg.world.sizes.n_private_mm);
    }
  }

  if (j.contains("clients")) {
    const auto& c = j.at("clients");
    detail::reject_unknown_keys(
        c,
        {"n_img", "n_txt", "n_mm", "dirichlet_alpha", "local_epochs",
         "client_lr", "gamma", "private_batch", "public_batch", "temperature"},
        "clients");
    detail::read_if(c, "n_img", cfg.clients.n_img);
    detail::read_if(c, "n_txt", cfg.clients.n_txt);
    detail::read_if(c, "n_mm", cfg.clients.n_mm);
    detail::read_if(c, "dirichlet_alpha", cfg.clients.dirichlet_alpha);
    detail::read_if(c, "local_epochs", cfg.clients.local_epochs);
    detail::read_if(c, "client_lr", cfg.clients.client_lr);
    detail::read_if(c, "gamma", cfg.clients.gamma);
    detail::read_if(c, "private_batch", cfg.clients.private_batch);
    detail::read_if(c, "public_batch", cfg.clients.public_batch);
    detail::read_if(c, "temperature", cfg.clients.temperature);
  }

  if (j.contains("server")) {
    const auto& s = j.at("server");
    detail::reject_unknown_keys(
        s,
        {"rep_dim", "server_hidden_dims", "client_hidden_dims", "activation",
         "server_lr", "distill_epochs", "public_train_epochs", "distill_mode"},
        "server");
    detail::read_if(s, "rep_dim", cfg.server.rep_dim);
    detail::read_if(s, "server_hidden_dims", cfg.server.server_hidden_dims);
    detail::read_if(s, "client_hidden_dims", cfg.server.client_hidden_dims);
    if (s.contains("activation"))
      cfg.server.activation =
          detail::parse_activation(s.at("activation").get<std::string>());
    detail::read_if(s, "server_lr", cfg.server.server_lr);
    detail::read_if(s, "distill_epochs", cfg.server.distill_epochs);
    detail::read_if(s, "public_train_epochs", cfg.server.public_train_epochs);
    if (s.contains("distill_mode"))
      cfg.server.distill_mode =
          detail::parse_distill_mode(s.at("distill_mode").get<std::string>());
  }

  if (j.contains("run")) {
    const auto& r = j.at("run");
    detail::reject_unknown_keys(
        r,
        {"rounds", "participation_fraction", "master_seed", "aggregator",
         "regularizer", "iot_boost_value", "round_public_size",
         "gca_include_diagonal", "gca_temperature"},
        "run");
    detail::read_if(r, "rounds", cfg.run.rounds);
    detail::read_if(r, "participation_fraction", cfg.run.participation_fraction);
    detail::read_if(r, "master_seed", cfg.run.master_seed);
    if (r.contains("aggregator"))
      cfg.run.aggregator =
          detail::parse_aggregator(r.at("aggregator").get<std::string>());
    if (r.contains("regularizer"))
      cfg.run.regularizer =
          detail::parse_regularizer(r.at("regularizer").get<std::string>());
    detail::read_if(r, "iot_boost_value", cfg.run.iot_boost_value);
    detail::read_if(r, "round_public_size", cfg.run.round_public_size);
    detail::read_if(r, "gca_include_diagonal", cfg.run.gca_include_diagonal);
    detail::read_if(r, "gca_temperature", cfg.run.gca_temperature);
  }

  if (j.contains("output")) {
    const auto& o = j.at("output");
    detail::reject_unknown_keys(o, {"log_path", "summary_path"}, "output");
    detail::read_if(o, "log_path", cfg.output.log_path);
    detail::read_if(o, "summary_path", cfg.output.summary_path);
  }

  cfg.validate();
  return cfg;
}

// Fully resolved echo of the effective configuration; embedded in every run
// log header so a run is reconstructible from its artifacts alone.
inline nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["world"] = {{"latent_dim", cfg.world.latent_dim},
                {"img_dim", cfg.world.img_dim},
                {"txt_dim", cfg.world.txt_dim},
                {"num_classes", cfg.world.num_classes},
                {"noise_std", cfg.world.noise_std},
                {"seed", cfg.world.seed},
                {"sizes",
                 {{"n_public", cfg.world.sizes.n_public},
                  {"n_test", cfg.world.sizes.n_test},
                  {"n_private_img", cfg.world.sizes.n_private_img},
                  {"n_private_txt", cfg.world.sizes.n_private_txt},
                  {"n_private_mm", cfg.world.sizes.n_private_mm}}}};
  j["clients"] = {{"n_img", cfg.clients.n_img},
                  {"n_txt", cfg.clients.n_txt},
                  {"n_mm", cfg.clients.n_mm},
                  {"dirichlet_alpha", cfg.clients.dirichlet_alpha},
                  {"local_epochs", cfg.clients.local_epochs},
                  {"client_lr", cfg.clients.client_lr},
                  {"gamma", cfg.clients.gamma},
                  {"private_batch", cfg.clients.private_batch},
                  {"public_batch", cfg.clients.public_batch},
                  {"temperature", cfg.clients.temperature}};
  j["server"] = {{"rep_dim", cfg.server.rep_dim},
                 {"server_hidden_dims", cfg.server.server_hidden_dims},
                 {"client_hidden_dims", cfg.server.client_hidden_dims},
                 {"activation", to_string(cfg.server.activation)},
                 {"server_lr", cfg.server.server_lr},
                 {"distill_epochs", cfg.server.distill_epochs},
                 {"public_train_epochs", cfg.server.public_train_epochs},
                 {"distill_mode", cfg.server.distill_mode == DistillMode::squared_l2
                                      ? "squared_l2"
                                      : "l2"}};
  j["run"] = {{"rounds", cfg.run.rounds},
              {"participation_fraction", cfg.run.participation_fraction},
              {"master_seed", cfg.run.master_seed},
              {"aggregator", to_string(cfg.run.aggregator)},
              {"regularizer", to_string(cfg.run.regularizer)},
              {"iot_boost_value", cfg.run.iot_boost_value},
              {"round_public_size", cfg.run.round_public_size},
              {"gca_include_diagonal", cfg.run.gca_include_diagonal},
              {"gca_temperature", cfg.run.gca_temperature}};
  j["output"] = {{"log_path", cfg.output.log_path},
                 {"summary_path", cfg.output.summary_path}};
  return j;
}

inline RunConfig parse_config_text(const std::string& text,
                                   const std::string& origin = "<string>") {
  // An empty or whitespace-only file means "all defaults".
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    return config_from_json(nlohmann::json::object());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // Translate the byte offset into a line number.
    std::size_t line = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i)
      if (text[i] == '\n') ++line;
    throw ConfigError(origin + ": parse error at line " + std::to_string(line) +
                      ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": top level must be an object");
  return config_from_json(j);
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

}  // namespace fedrep
