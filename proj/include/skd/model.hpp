#pragma once

#include "skd/error.hpp"
#include "skd/koopman.hpp"
#include "skd/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace skd {

enum class Nonlinearity { tanh, leaky_relu, identity };

inline constexpr double kLeakySlope = 0.2;

struct ModelConfig {
  std::size_t m = 0;   // observation dimension
  std::size_t k = 40;  // latent dimension
  std::vector<std::size_t> hidden{256};
  Nonlinearity nonlinearity = Nonlinearity::tanh;
  ValueRange output_range = ValueRange::unit;

  SpectralLossOptions spectral{};  // k_s, epsilon, mode, delta, static selection
  double lambda_rec = 15.0;
  double lambda_pred = 1.0;
  double lambda_eig = 1.0;
  double noise_scale = 0.005;

  double lr = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

struct DenseLayer {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out
};

struct AdamState {
  std::vector<Matrix> first;
  std::vector<Matrix> second;
  std::uint64_t step = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

struct ModelParams {
  std::vector<DenseLayer> encoder;
  std::vector<DenseLayer> decoder;
  AdamState adam;

  // Weights and biases in a fixed order: encoder layers, then decoder layers,
  // weight before bias.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;
  std::size_t parameter_count() const;
};

// Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn
// from the config seed.
ModelParams initialize_params(const ModelConfig& config);

// Frame-wise encoder/decoder pair around the Koopman layer.
class Model {
 public:
  Model(ModelConfig config, ModelParams params);
  static Model initialize(const ModelConfig& config) { return Model(config, initialize_params(config)); }

  const ModelConfig& config() const noexcept { return config_; }
  const ModelParams& params() const noexcept { return params_; }
  ModelParams& mutable_params() noexcept { return params_; }

  // frames: b x (t+1) x m. No latent noise.
  LatentBatch encode(const Tensor& frames) const;
  // Returns b x (t+1) x m.
  Tensor decode(const LatentBatch& z) const;

  Matrix encode_frames(const Matrix& x) const;
  Matrix decode_frames(const Matrix& z) const;

 private:
  ModelConfig config_;
  ModelParams params_;
};

struct LossBreakdown {
  double total = 0.0;
  double rec = 0.0;
  double pred = 0.0;
  double stat = 0.0;
  double dyn = 0.0;
};

struct LossEvaluation {
  LossBreakdown loss;
  // Gradients aligned with ModelParams::tensors(); empty when not requested.
  std::vector<Matrix> gradients;
  KoopmanSpectrum spectrum;
};

// Composite loss on one batch:
//   L = lambda_rec L_rec + lambda_pred L_pred + lambda_eig (L_stat + L_dyn)
// with L_rec = MSE(dec(Z), X), L_pred = MSE(Zp C, Zf) + MSE(dec(Zp C), Xf),
// C = pinv(Zp) Zf. `latent_noise`, when non-empty, is added to Z (already
// scaled). Throws NumericError naming the first non-finite term.
LossEvaluation total_loss(const Tensor& frames, const Model& model, const Matrix& latent_noise = Matrix(),
                          bool with_gradients = true);
// Same, without constructing a Model; params must match config.
LossEvaluation total_loss(const Tensor& frames, const ModelConfig& config, const ModelParams& params,
                          const Matrix& latent_noise = Matrix(), bool with_gradients = true);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // means over the epoch's batches
};

struct ModelCheckpoint {
  ModelConfig config;
  ModelParams params;
  std::size_t epochs_completed = 0;
  std::vector<EpochRecord> history;
  std::vector<Complex> last_spectrum;  // eigenvalues of the last batch's operator

  Model model() const { return Model(config, params); }
};

class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& message, std::vector<Complex> spectrum)
      : NumericError(message), spectrum_(std::move(spectrum)) {}
  const std::vector<Complex>& spectrum() const noexcept { return spectrum_; }

 private:
  std::vector<Complex> spectrum_;
};

inline constexpr double kDivergenceLimit = 1e6;

using EpochCallback = std::function<void(const EpochRecord&)>;

// Applies one Adam update to params using gradients aligned with tensors().
void adam_step(ModelParams& params, const std::vector<Matrix>& gradients, double lr);

// Runs config.epochs epochs of shuffled mini-batch Adam on frames
// (n x (t+1) x m). Incomplete trailing batches are dropped.
ModelCheckpoint train(const ModelConfig& config, const Tensor& frames, const EpochCallback& on_epoch = {});
// Continues a checkpoint for `epochs` more epochs; equivalent to having
// trained for the combined count in one call.
ModelCheckpoint resume(ModelCheckpoint checkpoint, const Tensor& frames, std::size_t epochs,
                       const EpochCallback& on_epoch = {});

std::string to_string(Nonlinearity n);
std::string to_string(DynamicLossMode m);
std::string to_string(StaticSelection s);
std::string to_string(ValueRange r);
Nonlinearity parse_nonlinearity(const std::string& s);
DynamicLossMode parse_dynamic_mode(const std::string& s);
StaticSelection parse_static_selection(const std::string& s);
ValueRange parse_value_range(const std::string& s);

}  // namespace skd
