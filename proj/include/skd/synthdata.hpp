#pragma once

#include "skd/tensor.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace skd {

enum class FactorKind { static_factor, dynamic_factor };

struct Factor {
  std::string name;
  std::size_t arity = 0;
  FactorKind kind = FactorKind::static_factor;
};

// A batch of observed sequences, frames b x (t+1) x m, with optional
// per-sample class labels for each factor.
struct SequenceBatch {
  Tensor frames;
  std::vector<Factor> factors;
  std::vector<std::vector<int>> labels;  // labels[f][i], one row per factor
  ValueRange range = ValueRange::unbounded;

  std::size_t samples() const { return frames.empty() ? 0 : frames.extent(0); }
  std::size_t frames_per_sample() const { return frames.extent(1); }
  std::size_t dim() const { return frames.extent(2); }
  bool has_labels() const noexcept { return !factors.empty(); }

  std::optional<std::size_t> factor_index(const std::string& name) const;
  const std::vector<int>& labels_of(const std::string& name) const;

  SequenceBatch subset(const std::vector<std::size_t>& indices) const;
  // Checks shapes, the declared range, and label arities; throws IntegrityError.
  void validate() const;
};

// Generator parameters for both synthetic datasets. Fields that only apply
// to one generator are ignored by the other.
struct GeneratorConfig {
  std::string dataset = "toy-sprites";  // "toy-sprites" | "oscillators"
  std::size_t t = 7;                    // sequences hold t+1 frames
  double noise = 0.01;                  // observation noise sigma
  std::size_t train_count = 900;
  std::size_t test_count = 300;
  std::uint64_t seed = 0;

  // toy-sprites
  std::size_t grid = 12;
  std::size_t colors = 6;
  std::size_t sizes = 3;
  std::size_t motions = 4;
  bool holdout_combinations = true;  // no (color, size, motion) triple shared by train and test

  // oscillators
  std::size_t speakers = 8;
  std::size_t contents = 4;
  std::size_t static_dim = 4;
  std::size_t obs_dim = 16;
  double jitter = 0.05;
  double base_frequency = -1.0;  // radians/step for content 0; negative selects 2*pi/t

  void validate() const;
};

struct DatasetSplit {
  SequenceBatch train;
  SequenceBatch test;
};

// Motion patterns of toy-sprites, in label order.
enum class Motion { horizontal_bounce = 0, vertical_bounce = 1, diagonal = 2, circular = 3 };

// Square centre offset from the grid centre, in units of the motion
// amplitude, for frame j of a period-t motion.
std::pair<double, double> motion_offset(Motion motion, std::size_t frame, std::size_t t);

// RGB colour for class c of n; every colour has channel sum 1.5.
std::array<double, 3> sprite_color(std::size_t c, std::size_t n);
double sprite_side(std::size_t size_class);

// Noise-free frames (t+1) x 3G^2 for one label triple. Planes are stored
// channel-major, each row-major over the grid.
Matrix render_toy_sprite(const GeneratorConfig& cfg, std::size_t color, std::size_t size, std::size_t motion);

DatasetSplit gen_toy_sprites(const GeneratorConfig& cfg);
DatasetSplit gen_oscillators(const GeneratorConfig& cfg);
// Dispatches on cfg.dataset.
DatasetSplit generate(const GeneratorConfig& cfg);

// Fixed seeded mixing matrix W (obs_dim x (static_dim + 2)).
Matrix oscillator_mixing(const GeneratorConfig& cfg);
// Static embedding of a sample: class centroid plus per-sample jitter.
Vector oscillator_static(const GeneratorConfig& cfg, std::size_t speaker, std::uint64_t sample_stream);

// Seeded disjoint split. Afterwards both sides contain every class of every
// factor whenever the class has at least two samples.
std::pair<SequenceBatch, SequenceBatch> split_train_test(const SequenceBatch& batch, double fraction,
                                                         std::uint64_t seed);

// Worker count for data generation, from SKD_THREADS (default 1).
std::size_t generation_threads();

}  // namespace skd
