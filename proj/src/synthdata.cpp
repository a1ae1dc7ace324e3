#include "skd/synthdata.hpp"

#include "skd/error.hpp"
#include "skd/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>

namespace skd {

std::optional<std::size_t> SequenceBatch::factor_index(const std::string& name) const {
  for (std::size_t f = 0; f < factors.size(); ++f) {
    if (factors[f].name == name) return f;
  }
  return std::nullopt;
}

const std::vector<int>& SequenceBatch::labels_of(const std::string& name) const {
  auto f = factor_index(name);
  if (!f) throw PreconditionError("batch has no factor named '" + name + "'");
  return labels[*f];
}

SequenceBatch SequenceBatch::subset(const std::vector<std::size_t>& indices) const {
  const std::size_t per = frames_per_sample() * dim();
  std::vector<double> values(indices.size() * per);
  const auto src = frames.values();
  SequenceBatch out;
  out.factors = factors;
  out.range = range;
  out.labels.assign(labels.size(), {});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t s = indices[i];
    if (s >= samples()) throw PreconditionError("subset index out of range");
    std::copy_n(src.begin() + std::ptrdiff_t(s * per), per, values.begin() + std::ptrdiff_t(i * per));
    for (std::size_t f = 0; f < labels.size(); ++f) out.labels[f].push_back(labels[f][s]);
  }
  out.frames = Tensor({indices.size(), frames_per_sample(), dim()}, std::move(values));
  return out;
}

void SequenceBatch::validate() const {
  if (frames.rank() != 3) throw IntegrityError("sequence frames must be rank 3");
  if (range == ValueRange::unit) {
    for (double v : frames.values()) {
      if (v < 0.0 || v > 1.0) throw IntegrityError("frame value outside the declared [0, 1] range");
    }
  }
  if (labels.size() != factors.size()) throw IntegrityError("label table does not match factor list");
  for (std::size_t f = 0; f < factors.size(); ++f) {
    if (labels[f].size() != samples()) throw IntegrityError("factor '" + factors[f].name + "' label count mismatch");
    for (int c : labels[f]) {
      if (c < 0 || std::size_t(c) >= factors[f].arity) {
        throw IntegrityError("factor '" + factors[f].name + "' label outside its arity");
      }
    }
  }
}

void GeneratorConfig::validate() const {
  if (dataset != "toy-sprites" && dataset != "oscillators") {
    throw ConfigError("dataset", "unknown dataset '" + dataset + "'");
  }
  if (train_count < 1) throw ConfigError("train_count", "must be at least 1");
  if (test_count < 1) throw ConfigError("test_count", "must be at least 1");
  if (!(noise >= 0.0)) throw ConfigError("noise", "must be non-negative");
  if (dataset == "toy-sprites") {
    if (grid < 8) throw ConfigError("grid", "must be at least 8");
    if (t < 4) throw ConfigError("t", "toy-sprites needs t >= 4");
    if (colors < 2) throw ConfigError("colors", "arity must be at least 2");
    if (sizes < 2) throw ConfigError("sizes", "arity must be at least 2");
    if (motions < 2 || motions > 4) throw ConfigError("motions", "arity must lie in [2, 4]");
    if (sprite_side(sizes - 1) + 3.0 > double(grid)) {
      throw ConfigError("sizes", "largest object (side " + std::to_string(sprite_side(sizes - 1)) +
                                     ") does not fit the grid with room to move");
    }
  } else {
    if (t < 8) throw ConfigError("t", "oscillators needs t >= 8");
    if (speakers < 2) throw ConfigError("speakers", "arity must be at least 2");
    if (contents < 2) throw ConfigError("contents", "arity must be at least 2");
    if (static_dim < 1) throw ConfigError("static_dim", "must be at least 1");
    if (obs_dim < 1) throw ConfigError("obs_dim", "must be at least 1");
    if (!(jitter >= 0.0)) throw ConfigError("jitter", "must be non-negative");
  }
}

std::pair<double, double> motion_offset(Motion motion, std::size_t frame, std::size_t t) {
  const double p = double(frame % t) / double(t);
  const double tri = 4.0 * std::abs(p - 0.5) - 1.0;  // +1 at p = 0, -1 at p = 1/2
  switch (motion) {
    case Motion::horizontal_bounce: return {tri, 0.0};
    case Motion::vertical_bounce: return {0.0, tri};
    case Motion::diagonal: return {tri, tri};
    case Motion::circular: return {std::cos(2.0 * M_PI * p), std::sin(2.0 * M_PI * p)};
  }
  return {0.0, 0.0};
}

std::array<double, 3> sprite_color(std::size_t c, std::size_t n) {
  const double h = double(c) / double(n);
  std::array<double, 3> rgb{};
  for (std::size_t ch = 0; ch < 3; ++ch) rgb[ch] = 0.5 + 0.5 * std::cos(2.0 * M_PI * (h - double(ch) / 3.0));
  return rgb;
}

double sprite_side(std::size_t size_class) { return 2.0 + double(size_class); }

namespace {

double overlap(double a0, double a1, double b0, double b1) { return std::max(0.0, std::min(a1, b1) - std::max(a0, b0)); }

template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(generation_threads(), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
}

struct Combo {
  std::size_t color, size, motion;
};

SequenceBatch sprite_batch(const GeneratorConfig& cfg, const std::vector<Combo>& combos, std::size_t count,
                           std::uint64_t stream) {
  const std::size_t frames = cfg.t + 1;
  const std::size_t m = 3 * cfg.grid * cfg.grid;
  std::vector<double> values(count * frames * m);
  std::vector<Combo> chosen(count);
  parallel_for(count, [&](std::size_t i) {
    Rng rng(mix_seed(mix_seed(cfg.seed, stream), i));
    const Combo c = combos[rng.below(combos.size())];
    chosen[i] = c;
    Matrix x = render_toy_sprite(cfg, c.color, c.size, c.motion);
    if (cfg.noise > 0.0) {
      for (Index j = 0; j < x.size(); ++j) {
        x.data()[j] = std::clamp(x.data()[j] + cfg.noise * rng.normal(), 0.0, 1.0);
      }
    }
    std::copy_n(x.data(), x.size(), values.begin() + std::ptrdiff_t(i * frames * m));
  });
  SequenceBatch out;
  out.frames = Tensor({count, frames, m}, std::move(values));
  out.range = ValueRange::unit;
  out.factors = {{"color", cfg.colors, FactorKind::static_factor},
                 {"size", cfg.sizes, FactorKind::static_factor},
                 {"motion", cfg.motions, FactorKind::dynamic_factor}};
  out.labels.assign(3, std::vector<int>(count));
  for (std::size_t i = 0; i < count; ++i) {
    out.labels[0][i] = int(chosen[i].color);
    out.labels[1][i] = int(chosen[i].size);
    out.labels[2][i] = int(chosen[i].motion);
  }
  return out;
}

}  // namespace

Matrix render_toy_sprite(const GeneratorConfig& cfg, std::size_t color, std::size_t size, std::size_t motion) {
  const std::size_t g = cfg.grid;
  const double side = sprite_side(size);
  const double amplitude = (double(g) - sprite_side(cfg.sizes - 1)) / 2.0 - 0.5;
  const auto rgb = sprite_color(color, cfg.colors);
  Matrix x = Matrix::Zero(Index(cfg.t + 1), Index(3 * g * g));
  for (std::size_t j = 0; j <= cfg.t; ++j) {
    const auto [ox, oy] = motion_offset(static_cast<Motion>(motion), j, cfg.t);
    const double cx = double(g) / 2.0 + amplitude * ox;
    const double cy = double(g) / 2.0 + amplitude * oy;
    for (std::size_t r = 0; r < g; ++r) {
      const double wy = overlap(double(r), double(r) + 1.0, cy - side / 2.0, cy + side / 2.0);
      if (wy == 0.0) continue;
      for (std::size_t c = 0; c < g; ++c) {
        const double cover = wy * overlap(double(c), double(c) + 1.0, cx - side / 2.0, cx + side / 2.0);
        for (std::size_t ch = 0; ch < 3; ++ch) x(Index(j), Index(ch * g * g + r * g + c)) = rgb[ch] * cover;
      }
    }
  }
  return x;
}

DatasetSplit gen_toy_sprites(const GeneratorConfig& cfg) {
  cfg.validate();
  if (cfg.dataset != "toy-sprites") throw ConfigError("dataset", "expected toy-sprites");
  std::vector<Combo> train_combos, test_combos;
  const std::size_t offset = cfg.seed % cfg.motions;
  for (std::size_t c = 0; c < cfg.colors; ++c) {
    for (std::size_t s = 0; s < cfg.sizes; ++s) {
      for (std::size_t mo = 0; mo < cfg.motions; ++mo) {
        const Combo combo{c, s, mo};
        if (!cfg.holdout_combinations) {
          train_combos.push_back(combo);
          test_combos.push_back(combo);
        } else if ((c + s + mo + offset) % cfg.motions == 0) {
          test_combos.push_back(combo);
        } else {
          train_combos.push_back(combo);
        }
      }
    }
  }
  if (cfg.holdout_combinations) {
    // Latin held-out pattern: every class keeps combinations on both sides.
    auto covers = [](const std::vector<Combo>& v, auto member, std::size_t arity) {
      std::vector<bool> seen(arity, false);
      for (const auto& c : v) seen[c.*member] = true;
      return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
    };
    for (const auto* side : {&train_combos, &test_combos}) {
      if (!covers(*side, &Combo::color, cfg.colors) || !covers(*side, &Combo::size, cfg.sizes) ||
          !covers(*side, &Combo::motion, cfg.motions)) {
        throw ConfigError("holdout_combinations", "arities too small to hold out combinations with full coverage");
      }
    }
  }
  return {sprite_batch(cfg, train_combos, cfg.train_count, 1), sprite_batch(cfg, test_combos, cfg.test_count, 2)};
}

Matrix oscillator_mixing(const GeneratorConfig& cfg) {
  const std::size_t in = cfg.static_dim + 2;
  Rng rng(mix_seed(cfg.seed, 0x3A));
  Matrix w(Index(cfg.obs_dim), Index(in));
  const double scale = 1.0 / std::sqrt(double(in));
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = scale * rng.normal();
  return w;
}

namespace {

Matrix oscillator_centroids(const GeneratorConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, 0xCE));
  Matrix c(Index(cfg.speakers), Index(cfg.static_dim));
  for (Index i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
  return c;
}

SequenceBatch oscillator_batch(const GeneratorConfig& cfg, std::size_t count, std::uint64_t stream) {
  const Matrix w = oscillator_mixing(cfg);
  const Matrix centroids = oscillator_centroids(cfg);
  const double base = cfg.base_frequency < 0.0 ? 2.0 * M_PI / double(cfg.t) : cfg.base_frequency;
  const std::size_t frames = cfg.t + 1;
  const std::size_t m = cfg.obs_dim;
  std::vector<double> values(count * frames * m);
  std::vector<int> speaker(count), content(count);
  parallel_for(count, [&](std::size_t i) {
    const std::uint64_t sample_stream = mix_seed(stream, i);
    Rng rng(mix_seed(cfg.seed, sample_stream));
    const auto s_id = rng.below(cfg.speakers);
    const auto c_id = rng.below(cfg.contents);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    speaker[i] = int(s_id);
    content[i] = int(c_id);
    Vector state(Index(cfg.static_dim + 2));
    state.head(Index(cfg.static_dim)) = centroids.row(Index(s_id)).transpose();
    if (cfg.jitter > 0.0) {
      for (std::size_t d = 0; d < cfg.static_dim; ++d) state(Index(d)) += cfg.jitter * rng.normal();
    }
    const double omega = base * double(c_id + 1);
    for (std::size_t j = 0; j < frames; ++j) {
      state(Index(cfg.static_dim)) = std::cos(phase + omega * double(j));
      state(Index(cfg.static_dim + 1)) = std::sin(phase + omega * double(j));
      const Vector x = (w * state).array().tanh().matrix();
      for (std::size_t d = 0; d < m; ++d) {
        double v = x(Index(d));
        if (cfg.noise > 0.0) v += cfg.noise * rng.normal();
        values[(i * frames + j) * m + d] = v;
      }
    }
  });
  SequenceBatch out;
  out.frames = Tensor({count, frames, m}, std::move(values));
  out.range = ValueRange::unbounded;
  out.factors = {{"speaker", cfg.speakers, FactorKind::static_factor},
                 {"content", cfg.contents, FactorKind::dynamic_factor}};
  out.labels = {speaker, content};
  return out;
}

}  // namespace

Vector oscillator_static(const GeneratorConfig& cfg, std::size_t speaker, std::uint64_t sample_stream) {
  if (speaker >= cfg.speakers) throw PreconditionError("speaker id out of range");
  Vector s = oscillator_centroids(cfg).row(Index(speaker)).transpose();
  if (cfg.jitter > 0.0) {
    Rng rng(mix_seed(cfg.seed, sample_stream));
    rng.below(cfg.speakers);
    rng.below(cfg.contents);
    rng.uniform();
    for (Index d = 0; d < s.size(); ++d) s(d) += cfg.jitter * rng.normal();
  }
  return s;
}

DatasetSplit gen_oscillators(const GeneratorConfig& cfg) {
  cfg.validate();
  if (cfg.dataset != "oscillators") throw ConfigError("dataset", "expected oscillators");
  return {oscillator_batch(cfg, cfg.train_count, 1), oscillator_batch(cfg, cfg.test_count, 2)};
}

DatasetSplit generate(const GeneratorConfig& cfg) {
  cfg.validate();
  return cfg.dataset == "toy-sprites" ? gen_toy_sprites(cfg) : gen_oscillators(cfg);
}

std::pair<SequenceBatch, SequenceBatch> split_train_test(const SequenceBatch& batch, double fraction,
                                                         std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("fraction", "must lie strictly between 0 and 1");
  const std::size_t n = batch.samples();
  const auto n_train = static_cast<std::size_t>(std::llround(fraction * double(n)));
  if (n_train == 0 || n_train >= n) throw ConfigError("fraction", "split leaves one side empty");

  Rng rng(mix_seed(seed, 0x5B));
  const auto order = rng.permutation(n);
  std::vector<std::size_t> train(order.begin(), order.begin() + std::ptrdiff_t(n_train));
  std::vector<std::size_t> test(order.begin() + std::ptrdiff_t(n_train), order.end());

  // Repair coverage: move a missing class onto the deficient side by swapping
  // with a sample whose classes are all duplicated there.
  auto count = [&](const std::vector<std::size_t>& side, std::size_t f, int c) {
    return std::count_if(side.begin(), side.end(), [&](std::size_t i) { return batch.labels[f][i] == c; });
  };
  auto redundant = [&](const std::vector<std::size_t>& side, std::size_t idx) {
    for (std::size_t f = 0; f < batch.labels.size(); ++f) {
      if (count(side, f, batch.labels[f][idx]) < 2) return false;
    }
    return true;
  };
  for (int pass = 0; pass < 4; ++pass) {
    bool changed = false;
    for (std::size_t f = 0; f < batch.factors.size(); ++f) {
      for (int c = 0; c < int(batch.factors[f].arity); ++c) {
        for (auto [lacking, donor] : {std::pair{&train, &test}, std::pair{&test, &train}}) {
          if (count(*lacking, f, c) > 0 || count(*donor, f, c) < 2) continue;
          auto give = std::find_if(donor->begin(), donor->end(), [&](std::size_t i) { return batch.labels[f][i] == c; });
          auto take = std::find_if(lacking->begin(), lacking->end(), [&](std::size_t i) {
            return redundant(*lacking, i) && batch.labels[f][i] != c;
          });
          if (take == lacking->end()) continue;
          std::swap(*give, *take);
          changed = true;
        }
      }
    }
    if (!changed) break;
  }
  return {batch.subset(train), batch.subset(test)};
}

std::size_t generation_threads() {
  const char* env = std::getenv("SKD_THREADS");
  if (env == nullptr) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || v < 1) return 1;
  return static_cast<std::size_t>(v);
}

}  // namespace skd
