#pragma once

#include "skd/koopman.hpp"
#include "skd/model.hpp"
#include "skd/synthdata.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace skd {

// ---------------------------------------------------------------------------
// Judge: one linear softmax classifier per labelled factor.

enum class JudgeFeatures { flat, time_mean };

struct JudgeOptions {
  JudgeFeatures static_features = JudgeFeatures::time_mean;  // for static factors
  JudgeFeatures dynamic_features = JudgeFeatures::flat;      // for dynamic factors
  double static_l2 = 0.03;
  double dynamic_l2 = 1e-4;
  std::size_t iterations = 600;  // full-batch Adam steps
  double lr = 0.05;
  bool standardize = false;  // per-feature unit variance; otherwise centring only
};

struct FactorClassifier {
  Factor factor;
  JudgeFeatures features = JudgeFeatures::flat;
  RowVector mean;   // feature centring
  RowVector scale;  // feature scaling
  Matrix weight;    // features x arity
  RowVector bias;   // arity
  double train_accuracy = 0.0;
};

class Judge {
 public:
  Judge() = default;
  explicit Judge(std::vector<FactorClassifier> classifiers) : classifiers_(std::move(classifiers)) {}

  const std::vector<FactorClassifier>& classifiers() const noexcept { return classifiers_; }
  std::optional<std::size_t> factor_index(const std::string& name) const;
  const FactorClassifier& classifier(const std::string& name) const;

  // b x arity class probabilities for frames b x (t+1) x m; rows sum to one.
  Matrix probabilities(const Tensor& frames, const std::string& factor) const;
  std::vector<int> predict(const Tensor& frames, const std::string& factor) const;
  // Fraction of samples whose predicted class equals the label.
  double accuracy(const Tensor& frames, const std::string& factor, const std::vector<int>& labels) const;

 private:
  std::vector<FactorClassifier> classifiers_;
};

// Feature rows, one per sample of a b x (t+1) x m tensor.
Matrix judge_features(const Tensor& frames, JudgeFeatures kind);

// Trains one classifier per factor of `train`. Deterministic: full-batch
// optimisation from a zero initialisation. Throws PreconditionError when the
// batch carries no labels.
Judge train_judge(const SequenceBatch& train, const JudgeOptions& options = {});

Matrix softmax_rows(const Matrix& logits);

// ---------------------------------------------------------------------------
// Factor identification.

SpectralPartition identify_two_factor(const KoopmanSpectrum& spectrum, std::size_t k_s,
                                      StaticSelection selection = StaticSelection::distance_to_one);

struct IdentifyOptions {
  double retention_floor = 0.8;  // other factors must keep this fraction of baseline accuracy
  double min_drop = 0.1;         // target accuracy must fall by at least this much
  bool power_set = false;        // search every subset of static groups
  std::size_t power_set_cap = std::size_t(1) << 15;
  std::uint64_t seed = 0;        // donor permutation
};

struct CandidateScore {
  std::vector<std::size_t> indices;
  double target_retention = 0.0;  // fraction keeping the recipient's target label
  double target_transfer = 0.0;   // fraction taking the donor's target label
  std::vector<double> other_retention;
  bool admissible = false;
};

struct SubspaceIdentification {
  bool identified = false;
  std::string factor;
  std::vector<std::size_t> indices;  // empty when not identified
  double baseline = 0.0;             // target accuracy on unswapped reconstructions
  std::vector<double> other_baseline;
  std::vector<std::string> other_factors;
  CandidateScore best;
  std::vector<CandidateScore> candidates;
  std::string reason;  // why nothing was identified
};

// Scores one candidate index set: every sample of `batch` receives the
// coefficients of its donor (a seeded permutation) at `indices`, the result is
// decoded and judged.
CandidateScore score_transfer(const Model& model, const SequenceBatch& batch, const Judge& judge,
                              const std::string& factor, const KoopmanSpectrum& spectrum,
                              const ProjectionCoefficients& zbar, std::span<const std::size_t> donors,
                              std::span<const std::size_t> indices);

// Searches static-set subsets (contiguous runs of spectral groups in the
// static ranking, or the capped power set) for the one whose transfer most
// reduces the target factor's retained accuracy.
SubspaceIdentification identify_factor_subspace(const Model& model, const SequenceBatch& batch, const Judge& judge,
                                                const std::string& factor, const IdentifyOptions& options = {});

// Candidate sets of the search, in enumeration order.
std::vector<std::vector<std::size_t>> candidate_subsets(const SpectralPartition& partition,
                                                        std::span<const Complex> values, bool power_set,
                                                        std::size_t cap);

// ---------------------------------------------------------------------------
// Generation metrics.

enum class SamplingProtocol { fix_dynamic_sample_static, fix_static_sample_dynamic };

std::string to_string(SamplingProtocol p);
SamplingProtocol parse_protocol(const std::string& s);

struct ScoreSummary {
  double acc = 0.0;
  double is = 0.0;
  double h_y_given_x = 0.0;
  double h_y = 0.0;
};

// Scores from a matrix of class probabilities (rows = samples).
// IS = exp(mean KL(p(y|x) || p(y))), H(y|x) = mean row entropy, H(y) =
// entropy of the mean row. `acc` is filled only when labels are given.
ScoreSummary score_probabilities(const Matrix& probs, const std::vector<int>* labels = nullptr);

struct GenerationMetrics {
  SamplingProtocol protocol = SamplingProtocol::fix_dynamic_sample_static;
  std::vector<std::string> preserved;  // judged factors
  std::size_t epochs = 0;
  ScoreSummary mean;
  ScoreSummary std;
  std::vector<ScoreSummary> per_epoch;  // averaged over preserved factors
};

struct GenerationOptions {
  std::size_t epochs = 300;
  std::uint64_t seed = 0;  // epoch e uses seed + e
};

// Convex-hull resampling of one subspace (static or dynamic per protocol)
// while the other is kept, judged on the kept factors.
GenerationMetrics eval_generation_metrics(const Model& model, const SequenceBatch& test, const Judge& judge,
                                          SamplingProtocol protocol, const GenerationOptions& options = {});

// Per-sample uniform simplex weights, b x b, for convex-hull sampling.
Matrix dirichlet_weights(std::size_t samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Verification.

// Equal error rate of a score list where `same[i]` marks positive pairs.
// Thresholds sweep the sorted scores; the crossing of false-accept and
// false-reject rates is linearly interpolated.
double equal_error_rate(std::span<const double> scores, const std::vector<bool>& same);

struct EerResult {
  double eer_static = 0.0;
  double eer_dynamic = 0.0;
};

// Time-mean identity codes from the static and dynamic subspaces, scored by
// cosine similarity over ordered pairs.
EerResult eval_eer(const Model& model, const SequenceBatch& test, const std::string& static_label);

// EER of per-sample code rows (cosine similarity, ordered pairs i != j).
double code_eer(const Matrix& codes, const std::vector<int>& labels);

// ---------------------------------------------------------------------------
// Embedding export.

struct Embedding2d {
  Matrix points;  // samples x 2
  RowVector explained_variance_ratio;  // 2 entries
  bool rank_deficient = false;         // second component padded with zeros
};

// PCA to two components on the per-sample time-mean coefficients restricted
// to `indices`, real and imaginary parts stacked as features.
Embedding2d export_embedding_2d(const ProjectionCoefficients& zbar, std::span<const std::size_t> indices);
// PCA on arbitrary feature rows.
Embedding2d pca_2d(const Matrix& features);

}  // namespace skd
