#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "dina/classifier.hpp"
#include "dina/dataset.hpp"

namespace dina {

// Votes are class indices; kMissingVote marks absent annotations.
inline constexpr int kMissingVote = -1;

struct AnnotationMatrix {
  std::vector<std::string> item_ids;
  std::vector<std::string> annotator_ids;
  Eigen::MatrixXi votes;  // items x annotators

  int n_items() const { return static_cast<int>(votes.rows()); }
  int n_annotators() const { return static_cast<int>(votes.cols()); }
};

void save_annotations(const AnnotationMatrix& ann, const Dataset& data, const std::string& path);
AnnotationMatrix load_annotations(const std::string& path, const Dataset& data);

struct WeakEnsembleConfig {
  int k = 5;
  double subset_fraction = 0.5;
  double hidden_fraction = 0.5;      // share of each subset held out for self-training
  double pseudo_confidence = 0.8;    // min max-probability to adopt a pseudo-label
  int self_train_rounds = 2;
  TrainConfig base;
  std::uint64_t seed = 0;
};

// Deterministic per-learner seed; exposed so "k=1, full subset, nothing hidden"
// can be reproduced with a plain training call.
std::uint64_t weak_learner_seed(std::uint64_t ensemble_seed, int learner);

// k classifiers, each self-trained on an overlapping subset of the train split.
// Each round retrains from scratch on visible + confidently pseudo-labeled
// hidden items, so a learner is a pure function of its subset and seed.
std::vector<Classifier> train_weak_ensemble(const Dataset& data, const WeakEnsembleConfig& cfg,
                                            const FeatureSpace& space, int threads = 1);

// One vote column per learner: its argmax prediction for every pool item.
AnnotationMatrix synthesize_annotations(const std::vector<Classifier>& ensemble,
                                        const Dataset& pool, int threads = 1);

struct AnnotatorParams {
  Eigen::VectorXd sensitivity;  // per annotator: P(vote 1 | true 1)
  Eigen::VectorXd specificity;  // per annotator: P(vote 0 | true 0)
};

struct CrowdPosterior {
  Eigen::VectorXd mu;  // P(true label = 1 | votes, classifier)
  bool converged = false;
  bool degenerate = false;
  std::vector<double> log_likelihoods;  // one entry per EM iteration
};

struct LfcConfig {
  int max_iter = 200;
  double tol = 1e-6;
  TrainConfig refit;  // classifier M substep; l2 forced to 0, few epochs
  std::uint64_t seed = 0;

  LfcConfig() {
    refit.epochs = 2;
    refit.l2_lambda = 0.0;
  }
};

struct LfcResult {
  CrowdPosterior posterior;
  AnnotatorParams params;
  Classifier model;
};

// Single E-step posterior for one item: prior p = P(y=1 | x) plus independent
// annotator votes under (sensitivity, specificity). Computed in the log domain.
double lfc_item_posterior(double p, const std::vector<int>& votes,
                          const Eigen::VectorXd& sensitivity,
                          const Eigen::VectorXd& specificity);

// EM over annotator reliabilities and true-label posteriors with a classifier
// prior refit each iteration (reverted whenever it lowers the EM objective, so
// the recorded log-likelihood trace is monotone). Binary labels only.
// Parameters are clamped to [1e-6, 1 - 1e-6].
LfcResult lfc_em(const AnnotationMatrix& ann, const std::vector<FeatureVector>& features,
                 const LfcConfig& cfg, const FeatureSpace& space);

// Items whose posterior commits to either class with confidence >= tau_trust,
// relabeled to the posterior's argmax. Preserves pool order; DataError if
// nothing qualifies.
Dataset select_trusted(const Dataset& pool, const CrowdPosterior& posterior, double tau_trust);

// Full pool relabeled to the posterior argmax (trusted or not).
Dataset relabel_all(const Dataset& pool, const CrowdPosterior& posterior);

}  // namespace dina
