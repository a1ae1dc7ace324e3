#include "skd/model.hpp"

#include "skd/autodiff.hpp"
#include "skd/error.hpp"
#include "skd/rng.hpp"

#include <cmath>
#include <memory>
#include <sstream>

namespace skd {

void ModelConfig::validate() const {
  if (m < 1) throw ConfigError("m", "observation dimension must be positive");
  if (k < 2) throw ConfigError("k", "latent dimension must be at least 2");
  for (auto h : hidden) {
    if (h < 1) throw ConfigError("hidden", "layer widths must be positive");
  }
  if (spectral.k_s < 1 || k < spectral.k_s + 1) throw ConfigError("k_s", "need 1 <= k_s <= k - 1");
  if (spectral.mode == DynamicLossMode::threshold && !(spectral.epsilon > 0.0 && spectral.epsilon < 1.0)) {
    throw ConfigError("epsilon", "dynamic threshold must lie in (0, 1)");
  }
  if (!(spectral.delta > 0.0)) throw ConfigError("delta", "must be positive");
  if (!(lambda_rec >= 0.0)) throw ConfigError("lambda_rec", "must be non-negative");
  if (!(lambda_pred >= 0.0)) throw ConfigError("lambda_pred", "must be non-negative");
  if (!(lambda_eig >= 0.0)) throw ConfigError("lambda_eig", "must be non-negative");
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale", "must be non-negative");
  if (!(lr > 0.0)) throw ConfigError("lr", "must be positive");
  if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out;
  for (auto* layers : {&encoder, &decoder}) {
    for (auto& l : *layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  std::vector<const Matrix*> out;
  for (const auto* layers : {&encoder, &decoder}) {
    for (const auto& l : *layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
    }
  }
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

namespace {

std::vector<std::size_t> encoder_widths(const ModelConfig& c) {
  std::vector<std::size_t> w{c.m};
  w.insert(w.end(), c.hidden.begin(), c.hidden.end());
  w.push_back(c.k);
  return w;
}

std::vector<std::size_t> decoder_widths(const ModelConfig& c) {
  std::vector<std::size_t> w{c.k};
  w.insert(w.end(), c.hidden.rbegin(), c.hidden.rend());
  w.push_back(c.m);
  return w;
}

std::vector<DenseLayer> make_layers(const std::vector<std::size_t>& widths, Rng& rng) {
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(widths[i]));
    DenseLayer l{Matrix(Index(widths[i]), Index(widths[i + 1])), Matrix(1, Index(widths[i + 1]))};
    for (Index j = 0; j < l.weight.size(); ++j) l.weight.data()[j] = rng.uniform(-bound, bound);
    for (Index j = 0; j < l.bias.size(); ++j) l.bias.data()[j] = rng.uniform(-bound, bound);
    layers.push_back(std::move(l));
  }
  return layers;
}

void check_layers(const std::vector<DenseLayer>& layers, const std::vector<std::size_t>& widths, const char* which) {
  if (layers.size() + 1 != widths.size()) {
    throw ConfigError(which, "layer count does not match the configured widths");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weight.rows() != Index(widths[i]) || layers[i].weight.cols() != Index(widths[i + 1]) ||
        layers[i].bias.rows() != 1 || layers[i].bias.cols() != Index(widths[i + 1])) {
      throw ConfigError(which, "layer " + std::to_string(i) + " shape does not match the configured widths");
    }
    require_finite(layers[i].weight, "layer weight");
    require_finite(layers[i].bias, "layer bias");
  }
}

Matrix activate(const Matrix& x, Nonlinearity n) {
  switch (n) {
    case Nonlinearity::tanh: return x.array().tanh().matrix();
    case Nonlinearity::leaky_relu: return x.unaryExpr([](double v) { return v > 0.0 ? v : kLeakySlope * v; });
    case Nonlinearity::identity: return x;
  }
  return x;
}

Var activate(const Var& x, Nonlinearity n) {
  switch (n) {
    case Nonlinearity::tanh: return ad::tanh(x);
    case Nonlinearity::leaky_relu: return ad::leaky_relu(x, kLeakySlope);
    case Nonlinearity::identity: return x;
  }
  return x;
}

Matrix run_layers(const std::vector<DenseLayer>& layers, Matrix x, Nonlinearity n, bool sigmoid_out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = (x * layers[i].weight).rowwise() + layers[i].bias.row(0);
    if (i + 1 < layers.size()) {
      x = activate(x, n);
    } else if (sigmoid_out) {
      x = (1.0 / (1.0 + (-x.array()).exp())).matrix();
    }
  }
  return x;
}

Var run_layers(const std::vector<std::pair<Var, Var>>& layers, Var x, Nonlinearity n, bool sigmoid_out) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = ad::add_row(ad::matmul(x, layers[i].first), layers[i].second);
    if (i + 1 < layers.size()) {
      x = activate(x, n);
    } else if (sigmoid_out) {
      x = ad::sigmoid(x);
    }
  }
  return x;
}

}  // namespace

ModelParams initialize_params(const ModelConfig& config) {
  config.validate();
  Rng rng(mix_seed(config.seed, 0x1A17));
  ModelParams p;
  p.encoder = make_layers(encoder_widths(config), rng);
  p.decoder = make_layers(decoder_widths(config), rng);
  return p;
}

Model::Model(ModelConfig config, ModelParams params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  check_layers(params_.encoder, encoder_widths(config_), "encoder");
  check_layers(params_.decoder, decoder_widths(config_), "decoder");
}

Matrix Model::encode_frames(const Matrix& x) const {
  if (x.cols() != Index(config_.m)) {
    throw ConfigError("m", "frame dimension " + std::to_string(x.cols()) + " does not match m = " +
                               std::to_string(config_.m));
  }
  return run_layers(params_.encoder, x, config_.nonlinearity, false);
}

Matrix Model::decode_frames(const Matrix& z) const {
  if (z.cols() != Index(config_.k)) {
    throw ConfigError("k", "latent dimension " + std::to_string(z.cols()) + " does not match k = " +
                               std::to_string(config_.k));
  }
  return run_layers(params_.decoder, z, config_.nonlinearity, config_.output_range == ValueRange::unit);
}

LatentBatch Model::encode(const Tensor& frames) const {
  if (frames.rank() != 3) throw ShapeError("sequence batch must be rank 3 (b, t+1, m)");
  const Matrix z = encode_frames(frames.as_matrix());
  return LatentBatch(z, frames.extent(0));
}

Tensor Model::decode(const LatentBatch& z) const {
  const Matrix x = decode_frames(z.frames());
  return Tensor::from_matrix(x, {z.samples(), z.frames_per_sample(), config_.m});
}

LossEvaluation total_loss(const Tensor& frames, const Model& model, const Matrix& latent_noise, bool with_gradients) {
  return total_loss(frames, model.config(), model.params(), latent_noise, with_gradients);
}

LossEvaluation total_loss(const Tensor& frames, const ModelConfig& cfg, const ModelParams& params,
                          const Matrix& latent_noise, bool with_gradients) {
  if (frames.rank() != 3) throw ShapeError("sequence batch must be rank 3 (b, t+1, m)");
  if (frames.extent(2) != cfg.m) throw ConfigError("m", "batch frame dimension does not match the model");
  const std::size_t b = frames.extent(0);
  const std::size_t t = frames.extent(1) - 1;
  if (frames.extent(1) < 2) throw ShapeError("sequences need at least two frames");

  Tape tape;
  auto param = [&](const Matrix& m) { return with_gradients ? tape.parameter(m) : tape.constant(m); };
  std::vector<std::pair<Var, Var>> enc, dec;
  std::vector<Var> param_vars;
  for (const auto& l : params.encoder) {
    enc.emplace_back(param(l.weight), param(l.bias));
    param_vars.push_back(enc.back().first);
    param_vars.push_back(enc.back().second);
  }
  for (const auto& l : params.decoder) {
    dec.emplace_back(param(l.weight), param(l.bias));
    param_vars.push_back(dec.back().first);
    param_vars.push_back(dec.back().second);
  }
  const bool sigmoid_out = cfg.output_range == ValueRange::unit;

  const Var x = tape.constant(Matrix(frames.as_matrix()));
  Var z = run_layers(enc, x, cfg.nonlinearity, false);
  if (latent_noise.size() > 0) {
    if (latent_noise.rows() != z.rows() || latent_noise.cols() != z.cols()) {
      throw ShapeError("latent noise shape does not match Z");
    }
    z = ad::add(z, tape.constant(latent_noise));
  }
  const auto past = past_rows(b, t);
  const auto future = future_rows(b, t);
  const Var zp = ad::gather_rows(z, past);
  const Var zf = ad::gather_rows(z, future);
  if (zp.value().isZero(0.0)) throw NumericError("past view is all zero; operator is undefined");
  const Var c = ad::matmul(ad::pinv(zp), zf);
  const Var zf_pred = ad::matmul(zp, c);

  const Var x_rec = run_layers(dec, z, cfg.nonlinearity, sigmoid_out);
  const Var xf_pred = run_layers(dec, zf_pred, cfg.nonlinearity, sigmoid_out);
  const Var xf = ad::gather_rows(x, future);

  const Var l_rec = ad::mse(x_rec, x);
  const Var l_pred = ad::add(ad::mse(zf_pred, zf), ad::mse(xf_pred, xf));

  require_finite(c.value(), "Koopman operator");
  auto decomposition = std::make_shared<const EigenDecomposition>(eig(c.value()));
  const auto& values = decomposition->values;
  const auto spectral =
      spectral_loss(std::span<const Complex>(values.data(), std::size_t(values.size())), cfg.spectral);
  const Var l_stat = ad::eigenvalue_functional(c, decomposition, spectral.stat, spectral.grad_stat);
  const Var l_dyn = ad::eigenvalue_functional(c, decomposition, spectral.dyn, spectral.grad_dyn);

  const Var total = ad::weighted_sum({{cfg.lambda_rec, l_rec},
                                      {cfg.lambda_pred, l_pred},
                                      {cfg.lambda_eig, l_stat},
                                      {cfg.lambda_eig, l_dyn}});

  LossEvaluation out;
  out.loss = {total.scalar(), l_rec.scalar(), l_pred.scalar(), l_stat.scalar(), l_dyn.scalar()};
  const std::pair<const char*, double> terms[] = {{"L_rec", out.loss.rec},
                                                  {"L_pred", out.loss.pred},
                                                  {"L_stat", out.loss.stat},
                                                  {"L_dyn", out.loss.dyn},
                                                  {"L", out.loss.total}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v)) throw NumericError(std::string("loss term ") + name + " is not finite");
  }
  out.spectrum = KoopmanSpectrum{c.value(), *decomposition};

  if (with_gradients) {
    tape.backward(total);
    out.gradients.reserve(param_vars.size());
    for (const auto& v : param_vars) out.gradients.push_back(tape.grad(v));
  }
  return out;
}

void adam_step(ModelParams& params, const std::vector<Matrix>& gradients, double lr) {
  auto tensors = params.tensors();
  if (gradients.size() != tensors.size()) throw ShapeError("gradient count does not match parameter count");
  AdamState& s = params.adam;
  if (s.first.empty()) {
    for (const auto* t : tensors) {
      s.first.push_back(Matrix::Zero(t->rows(), t->cols()));
      s.second.push_back(Matrix::Zero(t->rows(), t->cols()));
    }
  }
  s.step += 1;
  const double c1 = 1.0 - std::pow(kAdamBeta1, double(s.step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, double(s.step));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Matrix& g = gradients[i];
    s.first[i] = kAdamBeta1 * s.first[i] + (1.0 - kAdamBeta1) * g;
    s.second[i] = kAdamBeta2 * s.second[i] + (1.0 - kAdamBeta2) * g.cwiseProduct(g);
    *tensors[i] -= (lr * (s.first[i].array() / c1) / ((s.second[i].array() / c2).sqrt() + kAdamEpsilon)).matrix();
  }
}

namespace {

constexpr std::uint64_t kShuffleStream = 0x5u;
constexpr std::uint64_t kNoiseStream = 0x7u;

Tensor gather_samples(const Tensor& frames, const std::vector<std::size_t>& order, std::size_t begin,
                      std::size_t count) {
  const std::size_t per = frames.extent(1) * frames.extent(2);
  std::vector<double> values(count * per);
  const auto src = frames.values();
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t s = order[begin + i];
    std::copy(src.begin() + std::ptrdiff_t(s * per), src.begin() + std::ptrdiff_t((s + 1) * per),
              values.begin() + std::ptrdiff_t(i * per));
  }
  return Tensor({count, frames.extent(1), frames.extent(2)}, std::move(values));
}

std::string spectrum_text(const std::vector<Complex>& values) {
  std::ostringstream os;
  os.precision(6);
  for (const auto& v : values) os << ' ' << v.real() << (v.imag() < 0 ? "-" : "+") << std::abs(v.imag()) << 'i';
  return os.str();
}

}  // namespace

ModelCheckpoint resume(ModelCheckpoint ckpt, const Tensor& frames, std::size_t epochs, const EpochCallback& on_epoch) {
  const ModelConfig& cfg = ckpt.config;
  (void)Model(cfg, ckpt.params);  // validates config and layer shapes
  if (frames.rank() != 3) throw ShapeError("training data must be rank 3 (n, t+1, m)");
  if (frames.extent(2) != cfg.m) throw ConfigError("m", "dataset frame dimension does not match the model");
  const std::size_t n = frames.extent(0);
  const std::size_t batches = n / cfg.batch_size;
  if (epochs > 0 && batches == 0) throw ConfigError("batch_size", "larger than the dataset");
  const std::size_t rows = cfg.batch_size * frames.extent(1);

  for (std::size_t e = 0; e < epochs; ++e) {
    const std::size_t epoch = ckpt.epochs_completed;
    Rng shuffle(mix_seed(mix_seed(cfg.seed, kShuffleStream), epoch));
    const auto order = shuffle.permutation(n);
    LossBreakdown sum;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      const Tensor batch = gather_samples(frames, order, bi * cfg.batch_size, cfg.batch_size);
      Matrix noise;
      if (cfg.noise_scale > 0.0) {
        Rng rng(mix_seed(mix_seed(cfg.seed, kNoiseStream), ckpt.params.adam.step));
        noise.resize(Index(rows), Index(cfg.k));
        for (Index i = 0; i < noise.size(); ++i) noise.data()[i] = cfg.noise_scale * rng.uniform();
      }
      LossEvaluation eval;
      try {
        eval = total_loss(batch, cfg, ckpt.params, noise, true);
      } catch (const NumericError& err) {
        throw DivergenceError(std::string("training diverged at epoch ") + std::to_string(epoch) + ": " + err.what(),
                              ckpt.last_spectrum);
      }
      std::vector<Complex> spectrum(eval.spectrum.values().data(),
                                    eval.spectrum.values().data() + eval.spectrum.values().size());
      if (!(eval.loss.total <= kDivergenceLimit)) {
        throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": L = " +
                                  std::to_string(eval.loss.total) + "; spectrum:" + spectrum_text(spectrum),
                              spectrum);
      }
      adam_step(ckpt.params, eval.gradients, cfg.lr);
      ckpt.last_spectrum = std::move(spectrum);
      sum.total += eval.loss.total;
      sum.rec += eval.loss.rec;
      sum.pred += eval.loss.pred;
      sum.stat += eval.loss.stat;
      sum.dyn += eval.loss.dyn;
    }
    const double inv = 1.0 / double(batches);
    EpochRecord record{epoch, {sum.total * inv, sum.rec * inv, sum.pred * inv, sum.stat * inv, sum.dyn * inv}};
    ckpt.history.push_back(record);
    ckpt.epochs_completed += 1;
    if (on_epoch) on_epoch(record);
  }
  return ckpt;
}

ModelCheckpoint train(const ModelConfig& config, const Tensor& frames, const EpochCallback& on_epoch) {
  ModelCheckpoint ckpt;
  ckpt.config = config;
  ckpt.params = initialize_params(config);
  return resume(std::move(ckpt), frames, config.epochs, on_epoch);
}

std::string to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::tanh: return "tanh";
    case Nonlinearity::leaky_relu: return "leaky_relu";
    case Nonlinearity::identity: return "identity";
  }
  return "?";
}

std::string to_string(DynamicLossMode m) {
  switch (m) {
    case DynamicLossMode::threshold: return "threshold";
    case DynamicLossMode::measure_preserving: return "measure-preserving";
    case DynamicLossMode::growing: return "growing";
    case DynamicLossMode::none: return "none";
  }
  return "?";
}

std::string to_string(StaticSelection s) {
  return s == StaticSelection::distance_to_one ? "distance" : "modulus";
}

std::string to_string(ValueRange r) { return r == ValueRange::unit ? "unit" : "unbounded"; }

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "tanh") return Nonlinearity::tanh;
  if (s == "leaky_relu") return Nonlinearity::leaky_relu;
  if (s == "identity") return Nonlinearity::identity;
  throw ConfigError("nonlinearity", "unknown nonlinearity '" + s + "'");
}

DynamicLossMode parse_dynamic_mode(const std::string& s) {
  if (s == "threshold" || s == "default") return DynamicLossMode::threshold;
  if (s == "measure-preserving") return DynamicLossMode::measure_preserving;
  if (s == "growing") return DynamicLossMode::growing;
  if (s == "none") return DynamicLossMode::none;
  throw ConfigError("dynamic_mode", "unknown dynamic loss mode '" + s + "'");
}

StaticSelection parse_static_selection(const std::string& s) {
  if (s == "distance") return StaticSelection::distance_to_one;
  if (s == "modulus") return StaticSelection::modulus;
  throw ConfigError("static_selection", "unknown static selection '" + s + "'");
}

ValueRange parse_value_range(const std::string& s) {
  if (s == "unit") return ValueRange::unit;
  if (s == "unbounded") return ValueRange::unbounded;
  throw ConfigError("range", "unknown value range '" + s + "'");
}

}  // namespace skd
