#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fedrep/errors.hpp"
#include "fedrep/matrix.hpp"
#include "fedrep/rng.hpp"

#include <nlohmann/json.hpp>

namespace fedrep {

struct WorldSizes {
  int n_public = 256;
  int n_test = 200;
  int n_private_img = 2000;
  int n_private_txt = 2000;
  int n_private_mm = 2000;

  int total() const {
    return n_public + n_test + n_private_img + n_private_txt + n_private_mm;
  }
};

// Generator parameters for the paired-modality corpus. Mixing matrices may
// project up or down; img_dim/txt_dim need not exceed latent_dim.
struct WorldSpec {
  int latent_dim = 8;
  int img_dim = 32;
  int txt_dim = 24;
  int num_classes = 10;
  double noise_std = 0.1;
  WorldSizes sizes;
  std::uint64_t seed = 42;

  void validate() const {
    if (latent_dim <= 0) throw ConfigError("WorldSpec: latent_dim must be positive");
    if (img_dim <= 0) throw ConfigError("WorldSpec: img_dim must be positive");
    if (txt_dim <= 0) throw ConfigError("WorldSpec: txt_dim must be positive");
    if (num_classes < 2) throw ConfigError("WorldSpec: num_classes must be >= 2");
    if (noise_std < 0.0) throw ConfigError("WorldSpec: noise_std must be >= 0");
    if (sizes.n_public < 0 || sizes.n_test < 0 || sizes.n_private_img < 0 ||
        sizes.n_private_txt < 0 || sizes.n_private_mm < 0)
      throw ConfigError("WorldSpec: sizes must be non-negative");
  }
};

inline std::uint64_t spec_hash(const WorldSpec& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.latent_dim));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.img_dim));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.txt_dim));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.num_classes));
  h = fnv1a64_add(h, s.noise_std);
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.sizes.n_public));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.sizes.n_test));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.sizes.n_private_img));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.sizes.n_private_txt));
  h = fnv1a64_add(h, static_cast<std::uint64_t>(s.sizes.n_private_mm));
  h = fnv1a64_add(h, s.seed);
  return h;
}

// One corpus item: both views derive from the same latent sample.
struct Item {
  int id = 0;
  std::vector<double> latent;
  std::vector<double> img_view;
  std::vector<double> txt_view;
  int label = 0;
};

struct World {
  Matrix class_means;  // num_classes x latent_dim, unit rows
  Matrix mix_img;      // img_dim x latent_dim
  Matrix mix_txt;      // txt_dim x latent_dim
  std::vector<Item> items;
};

struct WorldGenOptions {
  bool identity_mixing = false;  // test hook; requires matching dims
};

inline World generate_world(const WorldSpec& spec,
                            const WorldGenOptions& opts = {}) {
  spec.validate();
  World w;

  Rng means_rng(seed_combine(spec.seed, 1));
  w.class_means = Matrix(static_cast<std::size_t>(spec.num_classes),
                         static_cast<std::size_t>(spec.latent_dim));
  for (std::size_t c = 0; c < w.class_means.rows(); ++c) {
    double norm = 0.0;
    do {
      for (std::size_t j = 0; j < w.class_means.cols(); ++j)
        w.class_means(c, j) = means_rng.normal();
      norm = l2_norm(w.class_means.row(c));
    } while (norm < 1e-12);
    for (std::size_t j = 0; j < w.class_means.cols(); ++j)
      w.class_means(c, j) /= norm;
  }

  Rng mix_rng(seed_combine(spec.seed, 2));
  auto draw_mix = [&](int rows) {
    Matrix m(static_cast<std::size_t>(rows),
             static_cast<std::size_t>(spec.latent_dim));
    const double scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
    for (auto& v : m.data()) v = mix_rng.normal() * scale;
    return m;
  };
  w.mix_img = draw_mix(spec.img_dim);
  w.mix_txt = draw_mix(spec.txt_dim);
  if (opts.identity_mixing) {
    if (spec.img_dim != spec.latent_dim || spec.txt_dim != spec.latent_dim)
      throw ConfigError("identity_mixing requires img_dim == txt_dim == latent_dim");
    w.mix_img = Matrix::identity(static_cast<std::size_t>(spec.latent_dim));
    w.mix_txt = Matrix::identity(static_cast<std::size_t>(spec.latent_dim));
  }

  Rng item_rng(seed_combine(spec.seed, 3));
  const int total = spec.sizes.total();
  w.items.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    Item it;
    it.id = i;
    it.label = static_cast<int>(
        item_rng.uniform_int(static_cast<std::uint64_t>(spec.num_classes)));
    it.latent.resize(static_cast<std::size_t>(spec.latent_dim));
    for (std::size_t j = 0; j < it.latent.size(); ++j)
      it.latent[j] = w.class_means(static_cast<std::size_t>(it.label), j) +
                     item_rng.normal(0.0, 0.5);  // variance 0.25 per coordinate
    auto mix_view = [&](const Matrix& mix) {
      std::vector<double> v(mix.rows(), 0.0);
      for (std::size_t r = 0; r < mix.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < mix.cols(); ++c)
          s += mix(r, c) * it.latent[c];
        v[r] = s + (spec.noise_std > 0.0
                        ? item_rng.normal(0.0, spec.noise_std)
                        : 0.0);
      }
      return v;
    };
    it.img_view = mix_view(w.mix_img);
    it.txt_view = mix_view(w.mix_txt);
    w.items.push_back(std::move(it));
  }
  return w;
}

inline std::uint64_t world_hash(const World& w) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (double v : w.class_means.data()) h = fnv1a64_add(h, v);
  for (double v : w.mix_img.data()) h = fnv1a64_add(h, v);
  for (double v : w.mix_txt.data()) h = fnv1a64_add(h, v);
  for (const Item& it : w.items) {
    h = fnv1a64_add(h, static_cast<std::uint64_t>(it.id));
    h = fnv1a64_add(h, static_cast<std::uint64_t>(it.label));
    for (double v : it.latent) h = fnv1a64_add(h, v);
    for (double v : it.img_view) h = fnv1a64_add(h, v);
    for (double v : it.txt_view) h = fnv1a64_add(h, v);
  }
  return h;
}

// Modality-stripped private pools: an image example never carries the text
// view, and vice versa.
struct ImageExample {
  int id;
  std::vector<double> view;
  int label;
};

struct TextExample {
  int id;
  std::vector<double> view;
  int label;
};

struct PairExample {
  int id;
  std::vector<double> img_view;
  std::vector<double> txt_view;
  int label;
};

struct Splits {
  std::vector<PairExample> public_items;
  std::vector<PairExample> test_items;
  std::vector<ImageExample> private_img;
  std::vector<TextExample> private_txt;
  std::vector<PairExample> private_mm;
};

// The documented split procedure: shuffle all item indices with a stream
// derived from (seed, 4), then cut consecutive ranges in the order
// public, test, private_img, private_txt, private_mm.
inline std::vector<int> split_order(const WorldSpec& spec,
                                    std::size_t n_items) {
  std::vector<int> order(n_items);
  for (std::size_t i = 0; i < n_items; ++i) order[i] = static_cast<int>(i);
  Rng rng(seed_combine(spec.seed, 4));
  rng.shuffle(order);
  return order;
}

inline Splits make_splits(const World& world, const WorldSpec& spec) {
  const auto& sz = spec.sizes;
  if (static_cast<std::size_t>(sz.total()) > world.items.size())
    throw ConfigError("make_splits: requested sizes exceed world item count (" +
                      std::to_string(sz.total()) + " > " +
                      std::to_string(world.items.size()) + ")");

  const std::vector<int> order = split_order(spec, world.items.size());
  Splits out;
  std::size_t pos = 0;
  auto take_pairs = [&](int n, std::vector<PairExample>& dst) {
    for (int i = 0; i < n; ++i) {
      const Item& it = world.items[static_cast<std::size_t>(order[pos++])];
      dst.push_back({it.id, it.img_view, it.txt_view, it.label});
    }
  };
  take_pairs(sz.n_public, out.public_items);
  take_pairs(sz.n_test, out.test_items);
  for (int i = 0; i < sz.n_private_img; ++i) {
    const Item& it = world.items[static_cast<std::size_t>(order[pos++])];
    out.private_img.push_back({it.id, it.img_view, it.label});
  }
  for (int i = 0; i < sz.n_private_txt; ++i) {
    const Item& it = world.items[static_cast<std::size_t>(order[pos++])];
    out.private_txt.push_back({it.id, it.txt_view, it.label});
  }
  take_pairs(sz.n_private_mm, out.private_mm);
  return out;
}

struct Shard {
  int client_id = 0;
  std::vector<int> item_ids;  // positions within the owning pool
};

// Per class, draw proportions ~ Dirichlet(alpha) over clients and split that
// class's items with largest-remainder rounding. Every input position is
// assigned exactly once.
inline std::vector<Shard> dirichlet_partition(const std::vector<int>& labels,
                                              int num_clients, double alpha,
                                              std::uint64_t seed) {
  if (num_clients < 1)
    throw ConfigError("dirichlet_partition: num_clients must be >= 1");
  if (alpha <= 0.0) throw ConfigError("dirichlet_partition: alpha must be > 0");

  std::vector<Shard> shards(static_cast<std::size_t>(num_clients));
  for (int c = 0; c < num_clients; ++c) shards[static_cast<std::size_t>(c)].client_id = c;
  if (labels.empty()) return shards;

  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);

  Rng rng(seed);
  for (int cls = 0; cls < num_classes; ++cls) {
    std::vector<int> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) members.push_back(static_cast<int>(i));
    if (members.empty()) continue;
    rng.shuffle(members);

    const std::vector<double> p =
        rng.dirichlet(alpha, static_cast<std::size_t>(num_clients));
    const auto n = static_cast<double>(members.size());

    // Largest-remainder rounding conserves the count exactly.
    std::vector<int> counts(static_cast<std::size_t>(num_clients), 0);
    std::vector<std::pair<double, int>> rema;
    int assigned = 0;
    for (int c = 0; c < num_clients; ++c) {
      const double quota = p[static_cast<std::size_t>(c)] * n;
      counts[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(quota));
      assigned += counts[static_cast<std::size_t>(c)];
      rema.emplace_back(quota - std::floor(quota), c);
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;  // deterministic tie-break
    });
    for (int r = 0; r < static_cast<int>(members.size()) - assigned; ++r)
      counts[static_cast<std::size_t>(rema[static_cast<std::size_t>(r)].second)]++;

    std::size_t cursor = 0;
    for (int c = 0; c < num_clients; ++c)
      for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k)
        shards[static_cast<std::size_t>(c)].item_ids.push_back(members[cursor++]);
  }
  return shards;
}

// --- world dump/load, keyed by spec hash --------------------------------

inline nlohmann::json world_to_json(const World& w, const WorldSpec& spec) {
  nlohmann::json j;
  j["spec_hash"] = spec_hash(spec);
  j["class_means"] = w.class_means.data();
  j["mix_img"] = w.mix_img.data();
  j["mix_txt"] = w.mix_txt.data();
  nlohmann::json items = nlohmann::json::array();
  for (const Item& it : w.items) {
    items.push_back({{"id", it.id},
                     {"label", it.label},
                     {"latent", it.latent},
                     {"img_view", it.img_view},
                     {"txt_view", it.txt_view}});
  }
  j["items"] = std::move(items);
  return j;
}

inline World world_from_json(const nlohmann::json& j, const WorldSpec& spec) {
  if (j.at("spec_hash").get<std::uint64_t>() != spec_hash(spec))
    throw ConfigError("world file does not match the requested WorldSpec");
  World w;
  auto load_matrix = [&](const char* key, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    m.data() = j.at(key).get<std::vector<double>>();
    if (m.data().size() != rows * cols)
      throw ConfigError(std::string("world file: bad size for ") + key);
    return m;
  };
  w.class_means = load_matrix("class_means",
                              static_cast<std::size_t>(spec.num_classes),
                              static_cast<std::size_t>(spec.latent_dim));
  w.mix_img = load_matrix("mix_img", static_cast<std::size_t>(spec.img_dim),
                          static_cast<std::size_t>(spec.latent_dim));
  w.mix_txt = load_matrix("mix_txt", static_cast<std::size_t>(spec.txt_dim),
                          static_cast<std::size_t>(spec.latent_dim));
  for (const auto& ji : j.at("items")) {
    Item it;
    it.id = ji.at("id").get<int>();
    it.label = ji.at("label").get<int>();
    it.latent = ji.at("latent").get<std::vector<double>>();
    it.img_view = ji.at("img_view").get<std::vector<double>>();
    it.txt_view = ji.at("txt_view").get<std::vector<double>>();
    w.items.push_back(std::move(it));
  }
  return w;
}

inline void save_world(const World& w, const WorldSpec& spec,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("save_world: cannot open " + path);
  out << world_to_json(w, spec).dump();
  if (!out) throw IoError("save_world: write failed on " + path);
}

inline World load_world(const std::string& path, const WorldSpec& spec) {
  std::ifstream in(path);
  if (!in) throw IoError("load_world: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return world_from_json(j, spec);
}

}  // namespace fedrep
