#include "skd/metrics.hpp"

#include "skd/error.hpp"
#include "skd/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace skd {

// ---------------------------------------------------------------------------
// Judge

std::optional<std::size_t> Judge::factor_index(const std::string& name) const {
  for (std::size_t i = 0; i < classifiers_.size(); ++i) {
    if (classifiers_[i].factor.name == name) return i;
  }
  return std::nullopt;
}

const FactorClassifier& Judge::classifier(const std::string& name) const {
  auto i = factor_index(name);
  if (!i) throw PreconditionError("judge has no classifier for factor '" + name + "'");
  return classifiers_[*i];
}

Matrix judge_features(const Tensor& frames, JudgeFeatures kind) {
  if (frames.rank() != 3) throw ShapeError("judge input must be b x (t+1) x m");
  const Index b = Index(frames.extent(0));
  const Index f = Index(frames.extent(1));
  const Index m = Index(frames.extent(2));
  if (kind == JudgeFeatures::flat) return frames.as_matrix(b, f * m);
  Matrix out = Matrix::Zero(b, m);
  const auto all = frames.as_matrix(b * f, m);
  for (Index i = 0; i < b; ++i) out.row(i) = all.middleRows(i * f, f).colwise().mean();
  return out;
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (Index i = 0; i < p.rows(); ++i) {
    p.row(i).array() -= p.row(i).maxCoeff();
    p.row(i) = p.row(i).array().exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

namespace {

Matrix logits_of(const FactorClassifier& c, const Tensor& frames) {
  Matrix x = judge_features(frames, c.features);
  if (x.cols() != c.mean.size()) throw ShapeError("judge feature width mismatch");
  x.rowwise() -= c.mean;
  x.array().rowwise() /= c.scale.array();
  Matrix logits = x * c.weight;
  logits.rowwise() += c.bias;
  return logits;
}

}  // namespace

Matrix Judge::probabilities(const Tensor& frames, const std::string& factor) const {
  return softmax_rows(logits_of(classifier(factor), frames));
}

std::vector<int> Judge::predict(const Tensor& frames, const std::string& factor) const {
  const Matrix p = logits_of(classifier(factor), frames);
  std::vector<int> out(std::size_t(p.rows()));
  for (Index i = 0; i < p.rows(); ++i) {
    Index arg = 0;
    p.row(i).maxCoeff(&arg);
    out[std::size_t(i)] = int(arg);
  }
  return out;
}

double Judge::accuracy(const Tensor& frames, const std::string& factor, const std::vector<int>& labels) const {
  const auto pred = predict(frames, factor);
  if (pred.size() != labels.size()) throw ShapeError("label count does not match the batch");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return double(hit) / double(pred.size());
}

Judge train_judge(const SequenceBatch& train, const JudgeOptions& options) {
  if (!train.has_labels()) throw PreconditionError("judge training needs labelled sequences");
  if (train.samples() == 0) throw PreconditionError("judge training needs at least one sample");
  std::vector<FactorClassifier> classifiers;
  for (std::size_t f = 0; f < train.factors.size(); ++f) {
    FactorClassifier c;
    c.factor = train.factors[f];
    const bool is_static = c.factor.kind == FactorKind::static_factor;
    c.features = is_static ? options.static_features : options.dynamic_features;
    const double l2 = is_static ? options.static_l2 : options.dynamic_l2;
    Matrix x = judge_features(train.frames, c.features);
    c.mean = x.colwise().mean();
    x.rowwise() -= c.mean;
    c.scale = (x.array().square().colwise().mean()).sqrt().matrix();
    for (Index j = 0; j < c.scale.size(); ++j) {
      if (!options.standardize || c.scale(j) < 1e-8) c.scale(j) = 1.0;
    }
    x.array().rowwise() /= c.scale.array();
    const double n = double(x.rows());

    const Index a = Index(c.factor.arity);
    Matrix y = Matrix::Zero(x.rows(), a);
    for (Index i = 0; i < x.rows(); ++i) y(i, train.labels[f][std::size_t(i)]) = 1.0;

    Matrix w = Matrix::Zero(x.cols(), a);
    RowVector bias = RowVector::Zero(a);
    Matrix mw = Matrix::Zero(w.rows(), w.cols()), vw = mw;
    RowVector mb = RowVector::Zero(a), vb = mb;
    for (std::size_t it = 1; it <= options.iterations; ++it) {
      Matrix logits = x * w;
      logits.rowwise() += bias;
      const Matrix resid = (softmax_rows(logits) - y) / n;
      const Matrix gw = x.transpose() * resid + l2 * w;
      const RowVector gb = resid.colwise().sum();
      const double c1 = 1.0 - std::pow(kAdamBeta1, double(it));
      const double c2 = 1.0 - std::pow(kAdamBeta2, double(it));
      mw = kAdamBeta1 * mw + (1 - kAdamBeta1) * gw;
      vw = kAdamBeta2 * vw + (1 - kAdamBeta2) * gw.cwiseProduct(gw);
      mb = kAdamBeta1 * mb + (1 - kAdamBeta1) * gb;
      vb = kAdamBeta2 * vb + (1 - kAdamBeta2) * gb.cwiseProduct(gb);
      w.array() -= options.lr * (mw.array() / c1) / ((vw.array() / c2).sqrt() + kAdamEpsilon);
      bias.array() -= options.lr * (mb.array() / c1) / ((vb.array() / c2).sqrt() + kAdamEpsilon);
    }
    c.weight = std::move(w);
    c.bias = std::move(bias);
    classifiers.push_back(std::move(c));
  }
  Judge judge(classifiers);
  for (std::size_t f = 0; f < classifiers.size(); ++f) {
    classifiers[f].train_accuracy = judge.accuracy(train.frames, classifiers[f].factor.name, train.labels[f]);
  }
  return Judge(std::move(classifiers));
}

// ---------------------------------------------------------------------------
// Identification

SpectralPartition identify_two_factor(const KoopmanSpectrum& spectrum, std::size_t k_s, StaticSelection selection) {
  return partition_spectrum(spectrum, k_s, selection);
}

namespace {

// Static-set groups (conjugate pairs kept together) in static rank order.
std::vector<std::vector<std::size_t>> static_groups(const SpectralPartition& partition,
                                                    std::span<const Complex> values) {
  const auto groups = spectral_groups(values);
  std::vector<int> group_of(values.size(), -1);
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (auto i : groups[g]) group_of[i] = int(g);
  }
  std::vector<std::vector<std::size_t>> out;
  std::vector<bool> taken(groups.size(), false);
  for (auto i : partition.stat) {
    const int g = group_of[i];
    if (taken[std::size_t(g)]) continue;
    taken[std::size_t(g)] = true;
    out.push_back(groups[std::size_t(g)]);
  }
  return out;
}

std::vector<std::size_t> union_of(const std::vector<std::vector<std::size_t>>& groups, auto&& pick) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (pick(g)) out.insert(out.end(), groups[g].begin(), groups[g].end());
  }
  return out;
}

}  // namespace

std::vector<std::vector<std::size_t>> candidate_subsets(const SpectralPartition& partition,
                                                        std::span<const Complex> values, bool power_set,
                                                        std::size_t cap) {
  const auto groups = static_groups(partition, values);
  const std::size_t g = groups.size();
  std::vector<std::vector<std::size_t>> out;
  if (power_set) {
    if (g >= 63 || (std::size_t(1) << g) - 1 > cap) {
      throw ConfigError("power_set", "power-set search over " + std::to_string(g) + " groups exceeds the cap");
    }
    for (std::size_t mask = 1; mask < (std::size_t(1) << g); ++mask) {
      out.push_back(union_of(groups, [&](std::size_t i) { return (mask >> i) & 1U; }));
    }
    return out;
  }
  for (std::size_t len = 1; len <= g; ++len) {
    for (std::size_t a = 0; a + len <= g; ++a) {
      out.push_back(union_of(groups, [&](std::size_t i) { return i >= a && i < a + len; }));
    }
  }
  return out;
}

CandidateScore score_transfer(const Model& model, const SequenceBatch& batch, const Judge& judge,
                              const std::string& factor, const KoopmanSpectrum& spectrum,
                              const ProjectionCoefficients& zbar, std::span<const std::size_t> donors,
                              std::span<const std::size_t> indices) {
  CandidateScore s;
  s.indices.assign(indices.begin(), indices.end());
  const auto moved = transfer_factors(zbar, donors, indices);
  const Tensor decoded = model.decode(reconstruct(moved, spectrum).z);
  const auto pred = judge.predict(decoded, factor);
  const auto& labels = batch.labels_of(factor);
  std::size_t kept = 0, taken = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    kept += pred[i] == labels[i];
    taken += pred[i] == labels[donors[i]];
  }
  s.target_retention = double(kept) / double(pred.size());
  s.target_transfer = double(taken) / double(pred.size());
  for (const auto& c : judge.classifiers()) {
    if (c.factor.name == factor || !batch.factor_index(c.factor.name)) continue;
    s.other_retention.push_back(judge.accuracy(decoded, c.factor.name, batch.labels_of(c.factor.name)));
  }
  return s;
}

SubspaceIdentification identify_factor_subspace(const Model& model, const SequenceBatch& batch, const Judge& judge,
                                                const std::string& factor, const IdentifyOptions& options) {
  judge.classifier(factor);
  if (!batch.factor_index(factor)) throw PreconditionError("batch has no labels for factor '" + factor + "'");
  SubspaceIdentification result;
  result.factor = factor;

  const LatentBatch z = model.encode(batch.frames);
  const KoopmanSpectrum spectrum = estimate_operator(z);
  const auto partition =
      identify_two_factor(spectrum, model.config().spectral.k_s, model.config().spectral.selection);
  const auto zbar = project(z, spectrum);

  const Tensor base = model.decode(reconstruct(zbar, spectrum).z);
  result.baseline = judge.accuracy(base, factor, batch.labels_of(factor));
  for (const auto& c : judge.classifiers()) {
    if (c.factor.name == factor || !batch.factor_index(c.factor.name)) continue;
    result.other_factors.push_back(c.factor.name);
    result.other_baseline.push_back(judge.accuracy(base, c.factor.name, batch.labels_of(c.factor.name)));
  }

  Rng rng(mix_seed(options.seed, 0x1D));
  const auto donors = rng.permutation(batch.samples());
  bool found = false;
  for (const auto& indices : candidate_subsets(partition, std::span<const Complex>(spectrum.values().data(), std::size_t(spectrum.values().size())), options.power_set,
                                               options.power_set_cap)) {
    auto s = score_transfer(model, batch, judge, factor, spectrum, zbar, donors, indices);
    s.admissible = result.baseline - s.target_retention >= options.min_drop;
    for (std::size_t o = 0; o < s.other_retention.size(); ++o) {
      s.admissible = s.admissible && s.other_retention[o] >= options.retention_floor * result.other_baseline[o];
    }
    if (s.admissible && (!found || s.target_retention < result.best.target_retention)) {
      result.best = s;
      found = true;
    }
    result.candidates.push_back(std::move(s));
  }
  result.identified = found;
  if (found) {
    result.indices = result.best.indices;
  } else {
    result.reason = result.candidates.empty()
                        ? "no candidate subsets"
                        : "no candidate lowers '" + factor + "' accuracy while keeping the other factors";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generation metrics

std::string to_string(SamplingProtocol p) {
  return p == SamplingProtocol::fix_dynamic_sample_static ? "fix-dynamic-sample-static"
                                                          : "fix-static-sample-dynamic";
}

SamplingProtocol parse_protocol(const std::string& s) {
  if (s == "fix-dynamic-sample-static" || s == "fix-dynamic") return SamplingProtocol::fix_dynamic_sample_static;
  if (s == "fix-static-sample-dynamic" || s == "fix-static") return SamplingProtocol::fix_static_sample_dynamic;
  throw ConfigError("protocol", "unknown protocol '" + s + "'");
}

ScoreSummary score_probabilities(const Matrix& probs, const std::vector<int>* labels) {
  ScoreSummary out;
  const Index n = probs.rows();
  if (n == 0) throw PreconditionError("no samples to score");
  auto xlogy = [](double p, double q) { return p > 0.0 ? p * std::log(p / q) : 0.0; };
  const RowVector marginal = probs.colwise().mean();
  double kl = 0.0, cond = 0.0;
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < probs.cols(); ++c) {
      kl += xlogy(probs(i, c), marginal(c));
      cond -= xlogy(probs(i, c), 1.0);
    }
  }
  out.is = std::exp(kl / double(n));
  out.h_y_given_x = cond / double(n);
  for (Index c = 0; c < marginal.size(); ++c) out.h_y -= xlogy(marginal(c), 1.0);
  if (labels != nullptr) {
    if (labels->size() != std::size_t(n)) throw ShapeError("label count does not match probabilities");
    std::size_t hit = 0;
    for (Index i = 0; i < n; ++i) {
      Index arg = 0;
      probs.row(i).maxCoeff(&arg);
      hit += int(arg) == (*labels)[std::size_t(i)];
    }
    out.acc = double(hit) / double(n);
  }
  return out;
}

Matrix dirichlet_weights(std::size_t samples, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0xD1));
  const Index n = Index(samples);
  Matrix w(n, n);
  for (std::size_t i = 0; i < samples; ++i) {
    const auto row = rng.simplex(samples);
    for (std::size_t j = 0; j < samples; ++j) w(Index(i), Index(j)) = row[j];
  }
  return w;
}

GenerationMetrics eval_generation_metrics(const Model& model, const SequenceBatch& test, const Judge& judge,
                                          SamplingProtocol protocol, const GenerationOptions& options) {
  if (options.epochs == 0) throw ConfigError("epochs", "need at least one sampling epoch");
  GenerationMetrics out;
  out.protocol = protocol;
  out.epochs = options.epochs;
  const FactorKind kept = protocol == SamplingProtocol::fix_dynamic_sample_static ? FactorKind::dynamic_factor
                                                                                  : FactorKind::static_factor;
  for (const auto& f : test.factors) {
    if (f.kind == kept && judge.factor_index(f.name)) out.preserved.push_back(f.name);
  }
  if (out.preserved.empty()) {
    throw ConfigError("protocol", to_string(protocol) + " needs a labelled " +
                                      (kept == FactorKind::dynamic_factor ? "dynamic" : "static") + " factor");
  }

  const LatentBatch z = model.encode(test.frames);
  const KoopmanSpectrum spectrum = estimate_operator(z);
  const auto partition =
      identify_two_factor(spectrum, model.config().spectral.k_s, model.config().spectral.selection);
  const auto zbar = project(z, spectrum);
  const auto& sampled = protocol == SamplingProtocol::fix_dynamic_sample_static ? partition.stat : partition.dyn;

  for (std::size_t e = 0; e < options.epochs; ++e) {
    const Matrix w = dirichlet_weights(test.samples(), options.seed + e);
    const auto mixed = sample_convex(zbar, sampled, w);
    const Tensor decoded = model.decode(reconstruct(mixed, spectrum).z);
    ScoreSummary avg;
    for (const auto& name : out.preserved) {
      const auto s = score_probabilities(judge.probabilities(decoded, name), &test.labels_of(name));
      avg.acc += s.acc;
      avg.is += s.is;
      avg.h_y_given_x += s.h_y_given_x;
      avg.h_y += s.h_y;
    }
    const double k = double(out.preserved.size());
    out.per_epoch.push_back({avg.acc / k, avg.is / k, avg.h_y_given_x / k, avg.h_y / k});
  }

  auto stat = [&](double ScoreSummary::*field, double& mean, double& sd) {
    double sum = 0.0;
    for (const auto& s : out.per_epoch) sum += s.*field;
    mean = sum / double(out.per_epoch.size());
    double sq = 0.0;
    for (const auto& s : out.per_epoch) sq += (s.*field - mean) * (s.*field - mean);
    sd = out.per_epoch.size() > 1 ? std::sqrt(sq / double(out.per_epoch.size() - 1)) : 0.0;
  };
  stat(&ScoreSummary::acc, out.mean.acc, out.std.acc);
  stat(&ScoreSummary::is, out.mean.is, out.std.is);
  stat(&ScoreSummary::h_y_given_x, out.mean.h_y_given_x, out.std.h_y_given_x);
  stat(&ScoreSummary::h_y, out.mean.h_y, out.std.h_y);
  return out;
}

// ---------------------------------------------------------------------------
// Verification

double equal_error_rate(std::span<const double> scores, const std::vector<bool>& same) {
  if (scores.size() != same.size()) throw ShapeError("score and label counts differ");
  const auto positives = std::size_t(std::count(same.begin(), same.end(), true));
  const std::size_t negatives = same.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw PreconditionError("equal error rate undefined without both positive and negative pairs");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Operating points for thresholds at each distinct score (accept score >= theta)
  // and above the maximum.
  std::vector<std::pair<double, double>> points;  // (FAR, FRR)
  std::size_t pos_below = 0, neg_below = 0;
  for (std::size_t k = 0; k < order.size();) {
    points.emplace_back(double(negatives - neg_below) / double(negatives), double(pos_below) / double(positives));
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (same[order[k]] ? pos_below : neg_below) += 1;
      ++k;
    }
  }
  points.emplace_back(0.0, 1.0);

  for (std::size_t i = 0; i < points.size(); ++i) {
    const double d = points[i].second - points[i].first;
    if (d < 0.0) continue;
    if (i == 0) return points[0].first;
    const double d0 = points[i - 1].second - points[i - 1].first;
    const double t = -d0 / (d - d0);
    return points[i - 1].first + t * (points[i].first - points[i - 1].first);
  }
  return points.back().first;
}

double code_eer(const Matrix& codes, const std::vector<int>& labels) {
  if (labels.size() != std::size_t(codes.rows())) throw ShapeError("label count does not match codes");
  const Index n = codes.rows();
  Vector norms = codes.rowwise().norm();
  std::vector<double> scores;
  std::vector<bool> same;
  scores.reserve(std::size_t(n * (n - 1)));
  same.reserve(scores.capacity());
  const Matrix gram = codes * codes.transpose();
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double denom = norms(i) * norms(j);
      scores.push_back(denom > 0.0 ? gram(i, j) / denom : 0.0);
      same.push_back(labels[std::size_t(i)] == labels[std::size_t(j)]);
    }
  }
  return equal_error_rate(scores, same);
}

namespace {

Matrix time_mean_codes(const Matrix& frames, std::size_t samples, std::size_t per) {
  Matrix out(Index(samples), frames.cols());
  for (std::size_t i = 0; i < samples; ++i) {
    out.row(Index(i)) = frames.middleRows(Index(i * per), Index(per)).colwise().mean();
  }
  return out;
}

}  // namespace

EerResult eval_eer(const Model& model, const SequenceBatch& test, const std::string& static_label) {
  const auto& labels = test.labels_of(static_label);
  if (std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end()) {
    throw PreconditionError("EER undefined with a single identity class");
  }
  const LatentBatch z = model.encode(test.frames);
  const KoopmanSpectrum spectrum = estimate_operator(z);
  const auto partition =
      identify_two_factor(spectrum, model.config().spectral.k_s, model.config().spectral.selection);
  EerResult r;
  const auto per = z.frames_per_sample();
  r.eer_static = code_eer(time_mean_codes(project_subspace(z, spectrum, partition.stat), z.samples(), per), labels);
  r.eer_dynamic = code_eer(time_mean_codes(project_subspace(z, spectrum, partition.dyn), z.samples(), per), labels);
  return r;
}

// ---------------------------------------------------------------------------
// Embeddings

Embedding2d pca_2d(const Matrix& features) {
  if (features.rows() < 1 || features.cols() < 1) throw PreconditionError("PCA needs a non-empty feature matrix");
  Matrix x = features;
  x.rowwise() -= x.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Eigen::MatrixXd(x), Eigen::ComputeThinV);
  const auto& sigma = svd.singularValues();
  const double total = sigma.squaredNorm();
  Embedding2d out;
  out.points = Matrix::Zero(x.rows(), 2);
  out.explained_variance_ratio = RowVector::Zero(2);
  const double tol = 1e-10 * (sigma.size() > 0 ? sigma(0) : 0.0);
  Index rank = 0;
  for (Index c = 0; c < std::min<Index>(2, sigma.size()); ++c) {
    if (!(sigma(c) > tol) || sigma(c) == 0.0) break;
    Vector v = svd.matrixV().col(c);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    out.points.col(c) = x * v;
    out.explained_variance_ratio(c) = sigma(c) * sigma(c) / total;
    ++rank;
  }
  out.rank_deficient = rank < 2;
  return out;
}

Embedding2d export_embedding_2d(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices) {
  if (indices.empty()) throw PreconditionError("embedding needs at least one eigen index");
  const Index w = Index(indices.size());
  Matrix features(Index(zbar.samples), 2 * w);
  for (std::size_t i = 0; i < zbar.samples; ++i) {
    const auto rows = zbar.sample_rows(i);
    for (Index c = 0; c < w; ++c) {
      const Index col = Index(indices[std::size_t(c)]);
      if (col >= rows.cols()) throw PreconditionError("eigen index out of range");
      const Complex m = rows.col(col).mean();
      features(Index(i), c) = m.real();
      features(Index(i), w + c) = m.imag();
    }
  }
  return pca_2d(features);
}

}  // namespace skd
