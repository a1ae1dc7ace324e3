#include "oracles.hpp"

#include "skd/error.hpp"
#include "skd/synthdata.hpp"

#include <doctest.h>

#include <cmath>
#include <set>
#include <tuple>

using namespace skd;

namespace {

GeneratorConfig sprites(std::uint64_t seed, std::size_t train = 200, std::size_t test = 100) {
  GeneratorConfig g;
  g.seed = seed;
  g.train_count = train;
  g.test_count = test;
  return g;
}

GeneratorConfig oscillators(std::uint64_t seed) {
  GeneratorConfig g;
  g.dataset = "oscillators";
  g.t = 15;
  g.seed = seed;
  g.train_count = 400;
  g.test_count = 200;
  return g;
}

Matrix sample_frames(const SequenceBatch& b, std::size_t i) {
  const std::size_t per = b.frames_per_sample() * b.dim();
  return Eigen::Map<const Matrix>(b.frames.data() + i * per, Index(b.frames_per_sample()), Index(b.dim()));
}

Matrix time_means(const SequenceBatch& b) {
  Matrix out(Index(b.samples()), Index(b.dim()));
  for (std::size_t i = 0; i < b.samples(); ++i) out.row(Index(i)) = sample_frames(b, i).colwise().mean();
  return out;
}

// Multinomial logistic regression by plain gradient descent; returns the
// predicted class per row of `test`.
std::vector<int> logistic_probe(const Matrix& train, const std::vector<int>& labels, int classes, const Matrix& test) {
  const Index d = train.cols(), n = train.rows();
  Matrix w = Matrix::Zero(d + 1, classes);
  Matrix xa(n, d + 1);
  xa << train, Matrix::Ones(n, 1);
  for (int it = 0; it < 3000; ++it) {
    Matrix logits = xa * w;
    for (Index i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
      logits(i, labels[std::size_t(i)]) -= 1.0;
    }
    w -= 0.5 * (xa.transpose() * logits) / double(n);
  }
  Matrix ta(test.rows(), d + 1);
  ta << test, Matrix::Ones(test.rows(), 1);
  const Matrix scores = ta * w;
  std::vector<int> pred;
  for (Index i = 0; i < scores.rows(); ++i) {
    Index arg;
    scores.row(i).maxCoeff(&arg);
    pred.push_back(int(arg));
  }
  return pred;
}

}  // namespace

TEST_CASE("toy-sprites generation is deterministic") {
  auto g = sprites(3);
  g.noise = 0.0;
  const auto a = generate(g), b = generate(g);
  CHECK(a.train.frames == b.train.frames);
  CHECK(a.test.frames == b.test.frames);
  CHECK(a.train.labels == b.train.labels);
  g.noise = 0.01;
  CHECK(generate(g).train.frames == generate(g).train.frames);
}

TEST_CASE("generation does not depend on the worker count") {
  auto g = sprites(4, 40, 10);
  const auto single = generate(g);
  setenv("SKD_THREADS", "3", 1);
  const auto multi = generate(g);
  unsetenv("SKD_THREADS");
  CHECK(single.train.frames == multi.train.frames);
  CHECK(single.test.labels == multi.test.labels);
}

TEST_CASE("horizontal bounce mirrors about the vertical axis at half period") {
  GeneratorConfig g;
  g.t = 8;
  g.noise = 0.0;
  const std::size_t n = g.grid;
  for (std::size_t size = 0; size < g.sizes; ++size) {
    const Matrix x = render_toy_sprite(g, 2, size, std::size_t(Motion::horizontal_bounce));
    double worst = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          const double a = x(0, Index(ch * n * n + r * n + c));
          const double b = x(Index(g.t / 2), Index(ch * n * n + r * n + (n - 1 - c)));
          worst = std::max(worst, std::abs(a - b));
        }
    CHECK(worst <= 1e-12);
    // The object actually moved.
    CHECK((x.row(0) - x.row(Index(g.t / 2))).cwiseAbs().maxCoeff() > 0.1);
  }
}

TEST_CASE("motion offsets") {
  const auto [x0, y0] = motion_offset(Motion::vertical_bounce, 0, 8);
  CHECK(x0 == 0.0);
  CHECK(y0 == 1.0);
  const auto [x1, y1] = motion_offset(Motion::circular, 2, 8);
  CHECK(std::abs(x1) <= 1e-15);
  CHECK(y1 == doctest::Approx(1.0));
  // Periodic with period t.
  CHECK(motion_offset(Motion::diagonal, 3, 8) == motion_offset(Motion::diagonal, 11, 8));
}

TEST_CASE("label marginals are uniform without the holdout guard") {
  auto g = sprites(5, 10000, 10);
  g.holdout_combinations = false;
  g.noise = 0.0;
  const auto d = generate(g);
  for (std::size_t f = 0; f < d.train.factors.size(); ++f) {
    std::vector<double> counts(d.train.factors[f].arity, 0.0);
    for (int c : d.train.labels[f]) counts[std::size_t(c)] += 1.0;
    for (double c : counts) CHECK(std::abs(c / 10000.0 - 1.0 / double(counts.size())) <= 0.02);
  }
}

TEST_CASE("held-out combinations never reach the training set") {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u}) {
    auto g = sprites(seed, 600, 300);
    const auto d = generate(g);
    std::set<std::tuple<int, int, int>> train;
    for (std::size_t i = 0; i < d.train.samples(); ++i)
      train.emplace(d.train.labels[0][i], d.train.labels[1][i], d.train.labels[2][i]);
    for (std::size_t i = 0; i < d.test.samples(); ++i)
      CHECK(train.count({d.test.labels[0][i], d.test.labels[1][i], d.test.labels[2][i]}) == 0);
    // Every class still appears in both splits.
    for (const auto* b : {&d.train, &d.test})
      for (std::size_t f = 0; f < 3; ++f) {
        std::set<int> seen(b->labels[f].begin(), b->labels[f].end());
        CHECK(seen.size() == b->factors[f].arity);
      }
  }
}

TEST_CASE("frames stay in range and re-render bit-for-bit from labels") {
  auto g = sprites(6, 60, 20);
  g.noise = 0.0;
  const auto d = generate(g);
  d.train.validate();
  d.test.validate();
  for (std::size_t i = 0; i < d.train.samples(); ++i) {
    const Matrix ref = render_toy_sprite(g, std::size_t(d.train.labels[0][i]), std::size_t(d.train.labels[1][i]),
                                         std::size_t(d.train.labels[2][i]));
    CHECK(sample_frames(d.train, i) == ref);
  }
  g.noise = 0.3;
  const auto noisy = generate(g);
  noisy.train.validate();
  for (double v : noisy.train.frames.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("sprite colours have equal channel sums") {
  for (std::size_t c = 0; c < 6; ++c) {
    const auto rgb = sprite_color(c, 6);
    CHECK(rgb[0] + rgb[1] + rgb[2] == doctest::Approx(1.5));
  }
}

TEST_CASE("generator config errors") {
  GeneratorConfig g;
  g.grid = 8;
  g.sizes = 6;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g = GeneratorConfig{};
  g.grid = 7;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g = GeneratorConfig{};
  g.colors = 1;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g = GeneratorConfig{};
  g.dataset = "oscillators";
  g.t = 7;
  CHECK_THROWS_AS(generate(g), ConfigError);
  g.dataset = "mnist";
  CHECK_THROWS_AS(generate(g), ConfigError);
}

TEST_CASE("oscillators with zero frequency are constant") {
  auto g = oscillators(1);
  g.noise = 0.0;
  g.base_frequency = 0.0;
  const auto d = generate(g);
  for (std::size_t i = 0; i < 20; ++i) {
    const Matrix x = sample_frames(d.train, i);
    CHECK((x.rowwise() - x.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("oscillator static state depends only on the speaker") {
  auto g = oscillators(2);
  g.jitter = 0.0;
  g.noise = 0.0;
  const Vector s = oscillator_static(g, 3, 11);
  CHECK(oscillator_static(g, 3, 999) == s);
  CHECK(!(oscillator_static(g, 4, 11) == s));

  // Invert the observation model on generated data: atanh(x) = W [s; cos; sin].
  const Matrix w = oscillator_mixing(g);
  const auto d = generate(g);
  const Matrix wp = oracle::normal_equations_pinv(w);
  for (std::size_t i = 0; i < 40; ++i) {
    const Matrix x = sample_frames(d.train, i);
    const int spk = d.train.labels[0][i];
    const Vector centroid = oscillator_static(g, std::size_t(spk), 0);
    for (Index j = 0; j < x.rows(); ++j) {
      const Vector state = wp * x.row(j).transpose().array().atanh().matrix();
      CHECK((state.head(Index(g.static_dim)) - centroid).cwiseAbs().maxCoeff() <= 1e-8);
      CHECK(std::hypot(state(Index(g.static_dim)), state(Index(g.static_dim + 1))) == doctest::Approx(1.0).epsilon(1e-8));
    }
  }
}

TEST_CASE("a linear probe recovers the speaker from time-mean observations") {
  const auto d = generate(oscillators(3));
  const auto pred = logistic_probe(time_means(d.train), d.train.labels[0], int(d.train.factors[0].arity),
                                   time_means(d.test));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == d.test.labels[0][i] ? 1 : 0;
  CHECK(double(hit) / double(pred.size()) >= 0.95);
}

TEST_CASE("split_train_test") {
  auto g = sprites(7, 100, 10);
  g.holdout_combinations = false;
  const auto d = generate(g);
  const auto [a, b] = split_train_test(d.train, 0.75, 1);
  CHECK(a.samples() == 75);
  CHECK(b.samples() == 25);
  const auto [a2, b2] = split_train_test(d.train, 0.75, 1);
  CHECK(a.frames == a2.frames);
  CHECK(b.labels == b2.labels);
  CHECK_THROWS_AS(split_train_test(d.train, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(split_train_test(d.train, 0.001, 1), ConfigError);

  auto big = sprites(8, 900, 10);
  big.holdout_combinations = false;
  const auto all = generate(big).train;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto [tr, te] = split_train_test(all, 0.75, seed);
    CHECK(tr.samples() + te.samples() == 900);
    for (const auto* side : {&tr, &te})
      for (std::size_t f = 0; f < 3; ++f) {
        std::set<int> seen(side->labels[f].begin(), side->labels[f].end());
        CHECK(seen.size() == side->factors[f].arity);
      }
  }
}

TEST_CASE("batch helpers") {
  const auto d = generate(sprites(9, 10, 5));
  CHECK(d.train.factor_index("size") == std::optional<std::size_t>(1));
  CHECK(!d.train.factor_index("hair"));
  CHECK_THROWS_AS(d.train.labels_of("hair"), PreconditionError);
  const auto sub = d.train.subset({3, 3, 0});
  CHECK(sub.samples() == 3);
  CHECK(sub.labels[0][0] == d.train.labels[0][3]);
  CHECK(sample_frames(sub, 2) == sample_frames(d.train, 0));
  auto bad = d.train;
  bad.labels[0][0] = 99;
  CHECK_THROWS_AS(bad.validate(), IntegrityError);
}
