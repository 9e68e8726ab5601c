#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <set>
#include <vector>

#include "fedrep/rng.hpp"
#include "fedrep/synth.hpp"

using namespace fedrep;

namespace {

WorldSpec tiny_spec() {
  WorldSpec s;
  s.latent_dim = 4;
  s.img_dim = 6;
  s.txt_dim = 5;
  s.num_classes = 3;
  s.noise_std = 0.0;
  s.sizes = {8, 4, 10, 10, 10};
  s.seed = 77;
  return s;
}

}  // namespace

TEST_CASE("noiseless views are an exact function of the latent") {
  const WorldSpec spec = tiny_spec();
  const World w = generate_world(spec);
  for (const Item& it : w.items) {
    for (std::size_t r = 0; r < w.mix_img.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < w.mix_img.cols(); ++c)
        s += w.mix_img(r, c) * it.latent[c];
      CHECK(it.img_view[r] == s);  // identical arithmetic, bit-equal
    }
  }
}

TEST_CASE("same spec and seed produce bit-identical worlds") {
  const WorldSpec spec = tiny_spec();
  const World a = generate_world(spec);
  const World b = generate_world(spec);
  CHECK(world_hash(a) == world_hash(b));
  REQUIRE(a.items.size() == b.items.size());
  for (std::size_t i = 0; i < a.items.size(); ++i) {
    CHECK(a.items[i].latent == b.items[i].latent);
    CHECK(a.items[i].img_view == b.items[i].img_view);
    CHECK(a.items[i].label == b.items[i].label);
  }
}

TEST_CASE("identity mixing exposes the latent directly") {
  WorldSpec spec = tiny_spec();
  spec.img_dim = spec.latent_dim;
  spec.txt_dim = spec.latent_dim;
  const World w = generate_world(spec, WorldGenOptions{true});
  for (const Item& it : w.items) {
    CHECK(it.img_view == it.latent);
    CHECK(it.txt_view == it.latent);
  }
  CHECK_THROWS_AS(generate_world(tiny_spec(), WorldGenOptions{true}), ConfigError);
}

TEST_CASE("class means lie on the unit sphere") {
  const World w = generate_world(tiny_spec());
  for (std::size_t c = 0; c < w.class_means.rows(); ++c)
    CHECK(l2_norm(w.class_means.row(c)) == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("single-client partition owns every item") {
  std::vector<int> labels = {0, 1, 2, 1, 0, 2, 2, 1};
  const auto shards = dirichlet_partition(labels, 1, 0.1, 5);
  REQUIRE(shards.size() == 1);
  CHECK(shards[0].item_ids.size() == labels.size());
}

TEST_CASE("partition assigns every position exactly once") {
  Rng rng(123);
  std::vector<int> labels(1000);
  for (auto& y : labels) y = static_cast<int>(rng.uniform_int(7));
  const auto shards = dirichlet_partition(labels, 9, 0.1, 42);
  std::set<int> seen;
  std::size_t total = 0;
  for (const Shard& s : shards) {
    total += s.item_ids.size();
    for (int id : s.item_ids) {
      CHECK(!seen.count(id));
      seen.insert(id);
    }
  }
  CHECK(total == labels.size());
  CHECK(seen.size() == labels.size());
}

TEST_CASE("partition completeness holds across seeds and alphas") {
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    for (double alpha : {0.05, 0.5, 5.0}) {
      Rng rng(seed * 31);
      std::vector<int> labels(257);
      for (auto& y : labels) y = static_cast<int>(rng.uniform_int(5));
      const auto shards = dirichlet_partition(labels, 6, alpha, seed);
      std::set<int> seen;
      for (const Shard& s : shards)
        for (int id : s.item_ids) seen.insert(id);
      CHECK(seen.size() == labels.size());
    }
  }
}

TEST_CASE("huge alpha concentrates the partition at uniform") {
  Rng rng(9);
  std::vector<int> labels(10000);
  for (auto& y : labels) y = static_cast<int>(rng.uniform_int(10));
  const int clients = 10;
  const auto shards = dirichlet_partition(labels, clients, 1e6, 0);

  std::vector<int> class_totals(10, 0);
  for (int y : labels) class_totals[static_cast<std::size_t>(y)]++;
  for (const Shard& s : shards) {
    std::vector<int> counts(10, 0);
    for (int pos : s.item_ids) counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(pos)])]++;
    for (int cls = 0; cls < 10; ++cls) {
      const double uniform = static_cast<double>(class_totals[static_cast<std::size_t>(cls)]) / clients;
      CHECK(std::abs(counts[static_cast<std::size_t>(cls)] - uniform) <= 0.2 * uniform);
    }
  }
}

TEST_CASE("empty label list yields empty shards") {
  const auto shards = dirichlet_partition({}, 4, 0.1, 0);
  REQUIRE(shards.size() == 4);
  for (const auto& s : shards) CHECK(s.item_ids.empty());
}

TEST_CASE("partition rejects invalid arguments") {
  CHECK_THROWS_AS(dirichlet_partition({0, 1}, 0, 0.1, 0), ConfigError);
  CHECK_THROWS_AS(dirichlet_partition({0, 1}, 2, 0.0, 0), ConfigError);
}

TEST_CASE("five singleton splits cover a five-item world exactly") {
  WorldSpec spec = tiny_spec();
  spec.sizes = {1, 1, 1, 1, 1};
  const World w = generate_world(spec);
  const Splits sp = make_splits(w, spec);
  std::set<int> ids;
  ids.insert(sp.public_items[0].id);
  ids.insert(sp.test_items[0].id);
  ids.insert(sp.private_img[0].id);
  ids.insert(sp.private_txt[0].id);
  ids.insert(sp.private_mm[0].id);
  CHECK(ids.size() == 5);
  for (int id : ids) CHECK((id >= 0 && id < 5));
}

TEST_CASE("split id sets are pairwise disjoint") {
  const WorldSpec spec = tiny_spec();
  const World w = generate_world(spec);
  const Splits sp = make_splits(w, spec);
  std::vector<std::set<int>> sets(5);
  for (const auto& e : sp.public_items) sets[0].insert(e.id);
  for (const auto& e : sp.test_items) sets[1].insert(e.id);
  for (const auto& e : sp.private_img) sets[2].insert(e.id);
  for (const auto& e : sp.private_txt) sets[3].insert(e.id);
  for (const auto& e : sp.private_mm) sets[4].insert(e.id);
  for (std::size_t a = 0; a < 5; ++a)
    for (std::size_t b = a + 1; b < 5; ++b)
      for (int id : sets[a]) CHECK(!sets[b].count(id));
}

TEST_CASE("public split ids match an independent rerun of the seeded shuffle") {
  WorldSpec spec = tiny_spec();
  spec.sizes = {6, 2, 4, 4, 4};
  const World w = generate_world(spec);
  const Splits sp = make_splits(w, spec);

  // Independent re-execution of the documented procedure: Fisher-Yates over
  // all indices with the (seed, 4) stream, then the first n_public entries.
  std::vector<int> order(w.items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  Rng rng(seed_combine(spec.seed, 4));
  rng.shuffle(order);
  for (int i = 0; i < spec.sizes.n_public; ++i)
    CHECK(sp.public_items[static_cast<std::size_t>(i)].id ==
          w.items[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].id);
}

TEST_CASE("splits reject oversubscribed sizes") {
  WorldSpec spec = tiny_spec();
  const World w = generate_world(spec);
  WorldSpec bigger = spec;
  bigger.sizes.n_public = 10000;
  CHECK_THROWS_AS(make_splits(w, bigger), ConfigError);
}

namespace {
template <typename T>
concept HasTxtView = requires(T e) { e.txt_view; };
template <typename T>
concept HasImgView = requires(T e) { e.img_view; };
}  // namespace

TEST_CASE("private pools are modality-stripped at the type level") {
  static_assert(!HasTxtView<ImageExample>);
  static_assert(!HasImgView<TextExample>);
  static_assert(HasTxtView<PairExample> && HasImgView<PairExample>);
  SUCCEED();
}

namespace {

// Gaussian elimination with partial pivoting; solves A x = b in place.
std::vector<double> solve_linear(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
    if (pivot != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(pivot, j));
      std::swap(b[col], b[pivot]);
    }
    const double d = a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / d;
      for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n, 0.0);
  for (std::size_t r = n; r-- > 0;) {
    double s = b[r];
    for (std::size_t j = r + 1; j < n; ++j) s -= a(r, j) * x[j];
    x[r] = s / a(r, r);
  }
  return x;
}

}  // namespace

TEST_CASE("noiseless world carries a perfect retrieval signal") {
  // Sanity oracle for the generator: fit a linear decoder img_view ->
  // txt_view by least squares on the public split, then match test pairs by
  // nearest neighbor. Run once; must be perfect without noise.
  WorldSpec spec;
  spec.latent_dim = 6;
  spec.img_dim = 12;
  spec.txt_dim = 9;
  spec.num_classes = 4;
  spec.noise_std = 0.0;
  spec.sizes = {64, 24, 4, 4, 4};
  spec.seed = 31;
  const World w = generate_world(spec);
  const Splits sp = make_splits(w, spec);

  const std::size_t n = sp.public_items.size();
  const std::size_t di = static_cast<std::size_t>(spec.img_dim);
  const std::size_t dt = static_cast<std::size_t>(spec.txt_dim);
  Matrix x(n, di), y(n, dt);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < di; ++j) x(i, j) = sp.public_items[i].img_view[j];
    for (std::size_t j = 0; j < dt; ++j) y(i, j) = sp.public_items[i].txt_view[j];
  }

  // Normal equations per output column: (X^T X) w = X^T y_col.
  const Matrix xtx = matmul_at(x, x);
  const Matrix xty = matmul_at(x, y);
  Matrix w_ls(di, dt);
  for (std::size_t col = 0; col < dt; ++col) {
    std::vector<double> rhs(di);
    for (std::size_t r = 0; r < di; ++r) rhs[r] = xty(r, col);
    const std::vector<double> sol = solve_linear(xtx, rhs);
    for (std::size_t r = 0; r < di; ++r) w_ls(r, col) = sol[r];
  }

  int hits = 0;
  for (std::size_t q = 0; q < sp.test_items.size(); ++q) {
    std::vector<double> pred(dt, 0.0);
    for (std::size_t j = 0; j < dt; ++j)
      for (std::size_t i = 0; i < di; ++i)
        pred[j] += sp.test_items[q].img_view[i] * w_ls(i, j);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < sp.test_items.size(); ++g) {
      double d2 = 0.0;
      for (std::size_t j = 0; j < dt; ++j) {
        const double diff = pred[j] - sp.test_items[g].txt_view[j];
        d2 += diff * diff;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = g;
      }
    }
    if (best == q) ++hits;
  }
  CHECK(hits == static_cast<int>(sp.test_items.size()));  // Recall@1 = 1.0
}

TEST_CASE("world dump and load round-trips and is keyed by spec hash") {
  const WorldSpec spec = tiny_spec();
  const World w = generate_world(spec);
  const std::string path = "test_world_dump.json";
  save_world(w, spec, path);
  const World loaded = load_world(path, spec);
  CHECK(world_hash(loaded) == world_hash(w));

  WorldSpec other = spec;
  other.seed = spec.seed + 1;
  CHECK_THROWS_AS(load_world(path, other), ConfigError);
  std::remove(path.c_str());
}
