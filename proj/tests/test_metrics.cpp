#include "oracles.hpp"

#include "skd/error.hpp"
#include "skd/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace skd;

namespace {

// Identity encoder/decoder over a 4-d latent whose operator is block
// diagonal: coordinate 0 decays at 0.99 and carries colour, coordinate 1
// decays at 0.95 and carries size, coordinates 2-3 rotate and carry motion.
struct Constructed {
  Model model;
  SequenceBatch batch;
};

Model identity_model() {
  ModelConfig c;
  c.m = 4;
  c.k = 4;
  c.hidden = {};
  c.nonlinearity = Nonlinearity::identity;
  c.output_range = ValueRange::unbounded;
  c.spectral.k_s = 2;
  ModelParams p;
  p.encoder.push_back({Matrix::Identity(4, 4), Matrix::Zero(1, 4)});
  p.decoder.push_back({Matrix::Identity(4, 4), Matrix::Zero(1, 4)});
  return Model(c, p);
}

Constructed constructed(std::size_t n, std::uint64_t seed, bool constant_shade = false) {
  Rng rng(seed);
  const std::size_t frames = 8;
  Matrix x(Index(n * frames), 4);
  std::vector<int> color(n), size(n), motion(n), shade(n, 0);
  const double theta = 0.6, radius = 0.9;
  for (std::size_t i = 0; i < n; ++i) {
    color[i] = int(rng.below(2));
    size[i] = int(rng.below(2));
    motion[i] = int(rng.below(2));
    const double a = (color[i] ? 1.0 : -1.0) * (1.0 + 0.3 * rng.uniform());
    const double b = (size[i] ? 1.0 : -1.0) * (1.0 + 0.3 * rng.uniform());
    const double amp = 1.0 + 0.3 * rng.uniform();
    const double phase = (motion[i] ? M_PI / 2 : 0.0) + rng.uniform(-0.2, 0.2);
    for (std::size_t j = 0; j < frames; ++j) {
      const Index r = Index(i * frames + j);
      x(r, 0) = a * std::pow(0.99, double(j));
      x(r, 1) = b * std::pow(0.95, double(j));
      // Row-vector dynamics z C with C = radius * [[cos, sin], [-sin, cos]].
      const double rj = amp * std::pow(radius, double(j));
      x(r, 2) = rj * std::cos(phase + theta * double(j));
      x(r, 3) = rj * std::sin(phase + theta * double(j));
    }
  }
  SequenceBatch b;
  b.frames = Tensor::from_matrix(x, {n, frames, 4});
  b.factors = {{"color", 2, FactorKind::static_factor},
               {"size", 2, FactorKind::static_factor},
               {"motion", 2, FactorKind::dynamic_factor}};
  b.labels = {color, size, motion};
  if (constant_shade) {
    b.factors.push_back({"shade", 2, FactorKind::static_factor});
    b.labels.push_back(shade);
  }
  return {identity_model(), b};
}

SequenceBatch random_batch(std::size_t n, std::size_t frames, std::size_t m, std::size_t arity, std::uint64_t seed) {
  const Matrix x = oracle::random_matrix(Index(n * frames), Index(m), seed);
  Rng rng(seed + 1);
  std::vector<int> labels(n);
  for (auto& l : labels) l = int(rng.below(arity));
  SequenceBatch b;
  b.frames = Tensor::from_matrix(x, {n, frames, m});
  b.factors = {{"f", arity, FactorKind::dynamic_factor}};
  b.labels = {labels};
  return b;
}

double silhouette(const Matrix& pts, const std::vector<int>& labels) {
  const Index n = pts.rows();
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    double own = 0.0, other = 0.0;
    int n_own = 0, n_other = 0;
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double d = (pts.row(i) - pts.row(j)).norm();
      if (labels[std::size_t(i)] == labels[std::size_t(j)]) {
        own += d;
        ++n_own;
      } else {
        other += d;
        ++n_other;
      }
    }
    const double a = own / n_own, b = other / n_other;
    total += (b - a) / std::max(a, b);
  }
  return total / double(n);
}

}  // namespace

TEST_CASE("judge separates linearly separable data") {
  auto b = random_batch(200, 3, 5, 3, 1);
  // Shift each sample by a class-dependent offset on feature 0.
  Matrix x = b.frames.as_matrix();
  for (std::size_t i = 0; i < 200; ++i) x.middleRows(Index(i * 3), 3).col(0).array() += 8.0 * b.labels[0][i];
  b.frames = Tensor::from_matrix(x, b.frames.shape());
  const Judge judge = train_judge(b);
  CHECK(judge.classifier("f").train_accuracy == 1.0);
  CHECK(judge.accuracy(b.frames, "f", b.labels[0]) == 1.0);
  const Matrix p = judge.probabilities(b.frames, "f");
  CHECK((p.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-9);
  CHECK(p.minCoeff() >= 0.0);
  CHECK_THROWS_AS(judge.classifier("g"), PreconditionError);
}

TEST_CASE("judge is at chance on shuffled labels") {
  const std::size_t arity = 4;
  const auto train = random_batch(800, 2, 6, arity, 2);
  const auto test = random_batch(4000, 2, 6, arity, 3);
  const Judge judge = train_judge(train);
  CHECK(std::abs(judge.accuracy(test.frames, "f", test.labels[0]) - 1.0 / double(arity)) <= 0.05);
}

TEST_CASE("judge needs labels and is deterministic") {
  auto b = random_batch(50, 2, 3, 2, 4);
  const Judge a = train_judge(b), c = train_judge(b);
  CHECK(a.classifier("f").weight == c.classifier("f").weight);
  b.factors.clear();
  b.labels.clear();
  CHECK_THROWS_AS(train_judge(b), PreconditionError);
}

TEST_CASE("identify_two_factor delegates to partition_spectrum") {
  WarningCapture quiet;
  for (int trial = 0; trial < 10; ++trial) {
    const auto s = spectrum_of(oracle::random_matrix(12, 12, 50 + std::uint64_t(trial)) / 4.0);
    const auto a = identify_two_factor(s, 8);
    const auto b = partition_spectrum(s, 8);
    CHECK(a.stat == b.stat);
    CHECK(a.dyn == b.dyn);
    CHECK((a.stat.size() == 8 || a.stat.size() == 9));
  }
}

TEST_CASE("candidate subsets") {
  // Static groups in ranked order: {0}, {1, 2}, {3}.
  const std::vector<Complex> v{1.0, Complex(0.98, 0.01), Complex(0.98, -0.01), 0.9, 0.1};
  const auto p = select_static(v, 4);
  REQUIRE(p.stat.size() == 4);
  const auto runs = candidate_subsets(p, v, false, 1 << 15);
  CHECK(runs.size() == 6);  // contiguous runs of 3 groups
  for (const auto& r : runs) {
    std::vector<Index> partner{-1, 2, 1, -1, -1};
    CHECK(conjugate_closed(r, partner));
  }
  const auto all = candidate_subsets(p, v, true, 1 << 15);
  CHECK(all.size() == 7);
  CHECK_THROWS_AS(candidate_subsets(p, v, true, 4), ConfigError);
}

TEST_CASE("constructed block-diagonal operator: exact block recovery") {
  const auto c = constructed(300, 7);
  const Judge judge = train_judge(c.batch);
  for (const auto& cl : judge.classifiers()) CHECK(cl.train_accuracy == 1.0);

  const auto s = estimate_operator(c.model.encode(c.batch.frames));
  CHECK(std::abs(s.values()(0) - 0.99) <= 1e-10);
  CHECK(std::abs(s.values()(1) - 0.95) <= 1e-10);

  const auto color = identify_factor_subspace(c.model, c.batch, judge, "color");
  REQUIRE(color.identified);
  CHECK(color.indices == std::vector<std::size_t>{0});
  CHECK(color.best.target_transfer == 1.0);
  for (double r : color.best.other_retention) CHECK(r == 1.0);

  const auto size = identify_factor_subspace(c.model, c.batch, judge, "size");
  REQUIRE(size.identified);
  CHECK(size.indices == std::vector<std::size_t>{1});

  // Swapping colour between two samples of different colour flips the label.
  const auto z = c.model.encode(c.batch.frames);
  const auto zb = project(z, s);
  const auto& labels = c.batch.labels_of("color");
  std::size_t u = 0, v = 1;
  while (labels[v] == labels[u]) ++v;
  const auto swapped = c.model.decode(reconstruct(swap_factors(zb, u, v, color.indices), s).z);
  const auto pred = judge.predict(swapped, "color");
  CHECK(pred[u] == labels[v]);
  CHECK(pred[v] == labels[u]);
}

TEST_CASE("a factor without signal is not identified") {
  const auto c = constructed(200, 8, true);
  const Judge judge = train_judge(c.batch);
  const auto r = identify_factor_subspace(c.model, c.batch, judge, "shade");
  CHECK(!r.identified);
  CHECK(r.indices.empty());
  CHECK(!r.reason.empty());
}

TEST_CASE("score_probabilities examples") {
  Matrix point = Matrix::Zero(9, 9);
  for (Index i = 0; i < 9; ++i) point(i, i) = 1.0;
  const auto s = score_probabilities(point);
  CHECK(s.is == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(s.h_y_given_x == 0.0);
  CHECK(s.h_y == doctest::Approx(std::log(9.0)).epsilon(1e-12));
  CHECK(s.h_y == doctest::Approx(2.197).epsilon(1e-3));

  Matrix same(5, 3);
  same.rowwise() = RowVector((RowVector(3) << 0.2, 0.5, 0.3).finished());
  CHECK(score_probabilities(same).is == doctest::Approx(1.0).epsilon(1e-12));

  std::vector<int> labels{0, 1, 2, 3, 4, 5, 6, 7, 0};
  CHECK(score_probabilities(point, &labels).acc == doctest::Approx(8.0 / 9.0));
}

TEST_CASE("metric bounds on random probabilities") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Index classes = 2 + Index(rng.below(6));
    Matrix p(20, classes);
    for (Index i = 0; i < 20; ++i) {
      const auto row = rng.simplex(std::size_t(classes));
      for (Index c = 0; c < classes; ++c) p(i, c) = row[std::size_t(c)];
    }
    const auto s = score_probabilities(p);
    CHECK(s.is >= 1.0 - 1e-9);
    CHECK(s.is <= double(classes) + 1e-9);
    CHECK(s.h_y_given_x >= -1e-9);
    CHECK(s.h_y_given_x <= s.h_y + 1e-9);
    CHECK(s.h_y <= std::log(double(classes)) + 1e-9);
  }
}

TEST_CASE("dirichlet weights") {
  const Matrix w = dirichlet_weights(6, 3);
  CHECK(w.minCoeff() >= 0.0);
  CHECK((w.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK(dirichlet_weights(6, 3) == w);
  CHECK(!(dirichlet_weights(6, 4) == w));
}

TEST_CASE("generation metrics on the constructed model") {
  const auto c = constructed(200, 10);
  const Judge judge = train_judge(c.batch);
  const auto g = eval_generation_metrics(c.model, c.batch, judge, SamplingProtocol::fix_dynamic_sample_static, {20, 0});
  CHECK(g.preserved == std::vector<std::string>{"motion"});
  CHECK(g.per_epoch.size() == 20);
  CHECK(g.mean.acc >= 0.95);
  for (const auto& e : g.per_epoch) {
    CHECK(e.acc >= 0.0);
    CHECK(e.acc <= 1.0);
    CHECK(e.is >= 1.0 - 1e-9);
    CHECK(e.is <= 2.0 + 1e-9);
    CHECK(e.h_y_given_x <= e.h_y + 1e-9);
    CHECK(e.h_y <= std::log(2.0) + 1e-9);
  }
  const auto again = eval_generation_metrics(c.model, c.batch, judge, SamplingProtocol::fix_dynamic_sample_static, {20, 0});
  CHECK(again.mean.acc == g.mean.acc);
  CHECK(again.std.is == g.std.is);

  const auto st = eval_generation_metrics(c.model, c.batch, judge, SamplingProtocol::fix_static_sample_dynamic, {5, 0});
  CHECK(st.preserved == std::vector<std::string>{"color", "size"});

  auto no_dynamic = c.batch;
  no_dynamic.factors.pop_back();
  no_dynamic.labels.pop_back();
  const Judge static_judge = train_judge(no_dynamic);
  CHECK_THROWS_AS(eval_generation_metrics(c.model, no_dynamic, static_judge,
                                          SamplingProtocol::fix_dynamic_sample_static, {2, 0}),
                  ConfigError);
  CHECK(parse_protocol("fix-dynamic") == SamplingProtocol::fix_dynamic_sample_static);
  CHECK(parse_protocol(to_string(SamplingProtocol::fix_static_sample_dynamic)) ==
        SamplingProtocol::fix_static_sample_dynamic);
  CHECK_THROWS_AS(parse_protocol("sample-everything"), ConfigError);
}

TEST_CASE("equal error rate") {
  SUBCASE("perfect separation") {
    const std::vector<double> s{0.9, 0.8, 0.95, 0.1, 0.2, 0.3};
    const std::vector<bool> same{true, true, true, false, false, false};
    CHECK(equal_error_rate(s, same) == 0.0);
  }
  SUBCASE("fully inverted") {
    const std::vector<double> s{0.1, 0.9};
    const std::vector<bool> same{true, false};
    CHECK(equal_error_rate(s, same) == 1.0);
  }
  SUBCASE("interpolated crossing") {
    // One positive below one negative out of two each: FAR = FRR = 0.5 at
    // the threshold between them.
    const std::vector<double> s{0.1, 0.3, 0.2, 0.4};
    const std::vector<bool> same{false, false, true, true};
    CHECK(equal_error_rate(s, same) == doctest::Approx(0.5));
  }
  SUBCASE("label-independent scores sit at chance") {
    Rng rng(11);
    std::vector<double> s(20000);
    std::vector<bool> same(20000);
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i] = rng.uniform();
      same[i] = rng.uniform() < 0.3;
    }
    CHECK(std::abs(equal_error_rate(s, same) - 0.5) <= 0.05);
  }
  SUBCASE("self-dual under relabelling") {
    Rng rng(12);
    std::vector<double> s(500), neg(500);
    std::vector<bool> same(500), flipped(500);
    for (std::size_t i = 0; i < s.size(); ++i) {
      same[i] = rng.uniform() < 0.4;
      s[i] = rng.normal() + (same[i] ? 1.0 : 0.0);
      neg[i] = -s[i];
      flipped[i] = !same[i];
    }
    CHECK(equal_error_rate(neg, flipped) == doctest::Approx(equal_error_rate(s, same)).epsilon(1e-12));
  }
  SUBCASE("degenerate input") {
    const std::vector<double> s{0.1, 0.2};
    CHECK_THROWS_AS(equal_error_rate(s, {true, true}), PreconditionError);
  }
}

TEST_CASE("code EER separates identity clusters") {
  Matrix codes(40, 3);
  std::vector<int> labels(40);
  for (Index i = 0; i < 40; ++i) {
    labels[std::size_t(i)] = int(i % 4);
    codes.row(i) = 0.05 * oracle::random_matrix(1, 3, 100 + std::uint64_t(i));
    const int axis = labels[std::size_t(i)] % 3;
    codes(i, axis) += 1.0;
    if (labels[std::size_t(i)] == 3) codes.row(i) = -codes.row(i);
  }
  // Classes 0 and 3 share an axis but point in opposite directions.
  CHECK(code_eer(codes, labels) <= 0.01);
}

TEST_CASE("eval_eer requires two identity classes and ignores sample order") {
  const auto c = constructed(120, 14);
  const auto r = eval_eer(c.model, c.batch, "color");
  CHECK(r.eer_static >= 0.0);
  CHECK(r.eer_static <= 1.0);
  // The static subspace carries colour, the dynamic one does not.
  CHECK(r.eer_static < r.eer_dynamic);

  std::vector<std::size_t> order(120);
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  const auto rev = eval_eer(c.model, c.batch.subset(order), "color");
  CHECK(rev.eer_static == doctest::Approx(r.eer_static).epsilon(1e-9));
  CHECK(rev.eer_dynamic == doctest::Approx(r.eer_dynamic).epsilon(1e-9));

  const Judge judge = train_judge(c.batch);
  CHECK(judge.accuracy(c.batch.subset(order).frames, "motion", c.batch.subset(order).labels[2]) ==
        judge.accuracy(c.batch.frames, "motion", c.batch.labels[2]));

  auto single = c.batch;
  std::fill(single.labels[0].begin(), single.labels[0].end(), 1);
  CHECK_THROWS_AS(eval_eer(c.model, single, "color"), PreconditionError);
}

TEST_CASE("2-D embedding") {
  SUBCASE("two separated clusters") {
    ProjectionCoefficients zb;
    zb.samples = 60;
    zb.frames_per_sample = 2;
    zb.values = ComplexMatrix::Zero(120, 4);
    zb.partner = {1, 0, 3, 2};
    std::vector<int> labels(60);
    Rng rng(15);
    for (std::size_t i = 0; i < 60; ++i) {
      labels[i] = int(i % 2);
      for (Index f = 0; f < 2; ++f)
        for (Index c = 0; c < 4; ++c)
          zb.values(Index(i) * 2 + f, c) = Complex(rng.normal() * 0.3 + (labels[i] ? 3.0 : -3.0), rng.normal() * 0.3);
    }
    const std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto e = export_embedding_2d(zb, idx);
    CHECK(!e.rank_deficient);
    CHECK(silhouette(e.points, labels) > 0.5);
  }
  SUBCASE("one real eigenvalue gives a line") {
    ProjectionCoefficients zb;
    zb.samples = 10;
    zb.frames_per_sample = 1;
    zb.values = ComplexMatrix::Zero(10, 2);
    for (Index i = 0; i < 10; ++i) zb.values(i, 0) = Complex(double(i), 0.0);
    zb.partner = {-1, -1};
    const std::vector<std::size_t> idx{0};
    const auto e = export_embedding_2d(zb, idx);
    CHECK(e.rank_deficient);
    CHECK(e.points.col(1).cwiseAbs().maxCoeff() == 0.0);
    CHECK(e.explained_variance_ratio(0) == doctest::Approx(1.0));
  }
  SUBCASE("isotropic coefficients") {
    const Index dim = 10;
    const auto e = pca_2d(oracle::random_matrix(5000, dim, 16));
    const double ratio = e.explained_variance_ratio.sum();
    CHECK(std::abs(ratio - 2.0 / double(dim)) <= 0.2 * 2.0 / double(dim));
  }
  SUBCASE("deterministic sign convention") {
    const Matrix f = oracle::random_matrix(30, 4, 17);
    const auto a = pca_2d(f), b = pca_2d(-f);
    // Flipping the data flips the scores, never the loadings' sign rule.
    CHECK((a.points + b.points).cwiseAbs().maxCoeff() <= 1e-10);
  }
  SUBCASE("empty index set") {
    ProjectionCoefficients zb;
    zb.samples = 1;
    zb.frames_per_sample = 1;
    zb.values = ComplexMatrix::Zero(1, 2);
    CHECK_THROWS_AS(export_embedding_2d(zb, {}), PreconditionError);
  }
}
