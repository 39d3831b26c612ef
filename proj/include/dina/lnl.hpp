#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "dina/classifier.hpp"
#include "dina/dataset.hpp"
#include "dina/features.hpp"

namespace dina {

class Rng;

struct DivideMixConfig {
  int warmup_epochs = 3;
  int main_epochs = 15;
  double clean_threshold = 0.5;     // co-divide posterior cut
  double sharpen_temperature = 0.5;
  double mixup_alpha = 4.0;
  double unlabeled_weight = 25.0;   // ramped linearly from 0 over ramp epochs
  int unlabeled_ramp_epochs = 5;
  int augmentations = 2;            // token-dropout variants per example
  double token_dropout = 0.1;
  TrainConfig base;
  std::uint64_t seed = 0;
};

// One row per training epoch. dev_accuracy / clean_set_precision are NaN when
// the context lacks a dev set / noise oracle. For methods without an explicit
// clean set (SEAL, warm-up epochs) the clean set is the full train split; for
// PLC it is the not-yet-corrected items.
struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_accuracy = 0.0;
  int clean_set_size = 0;
  double clean_set_precision = 0.0;
};

// Optional observers; never influence training.
struct LnlContext {
  const Dataset* dev = nullptr;
  const std::set<std::string>* flipped_ids = nullptr;  // ground-truth corrupted ids
};

struct LnlResult {
  std::vector<Classifier> networks;  // two for co-training, one otherwise
  std::vector<EpochMetrics> metrics;
  std::vector<int> final_clean;  // train-split positions, last co-divide
  std::vector<int> final_noisy;

  Eigen::VectorXd predict_proba(const FeatureVector& x) const;  // prediction average
  int predict(const FeatureVector& x) const;
  double eval_accuracy(const Dataset& data, std::string_view split) const;

  // Single network for the adversarial stage: parameter mean, which for the
  // softmax-linear form equals averaging logits. Falls back to the first
  // network when the models are MLPs.
  Classifier collapsed() const;
};

// Label co-refinement: convex mix of the nominal label and the network's
// averaged prediction, sharpened.
Eigen::VectorXd co_refine(double clean_weight, int label, const Eigen::VectorXd& mean_pred,
                          double temperature, int n_classes);

// Co-guessing for unlabeled items: sharpen the mean of the networks' averaged
// predictions.
Eigen::VectorXd co_guess(const std::vector<Eigen::VectorXd>& network_preds, double temperature);

struct SoftExample {
  FeatureVector x;
  Eigen::VectorXd y;
};

// lambda' is already folded toward the first argument (>= 0.5): the mix stays
// closer to a than to b.
SoftExample mixup_with_lambda(const SoftExample& a, const SoftExample& b, double lambda_prime);
SoftExample mixup(const SoftExample& a, const SoftExample& b, double alpha, Rng& rng);

// Two-network co-training: per epoch and per network the other network's
// per-sample losses are fit with the loss GMM, the clean/noisy split drives
// refinement/guessing, and MixUp-ed batches train with CE + ramped MSE +
// uniform-prior regularizer. forced_unlabeled lists train positions that are
// never allowed into the clean set (the below-trust-threshold crowd items).
LnlResult dividemix_train(const Dataset& data, const DivideMixConfig& cfg,
                          const FeatureSpace& space,
                          const std::vector<int>* forced_unlabeled = nullptr,
                          const LnlContext* ctx = nullptr, int threads = 1);

struct PlcConfig {
  double theta0 = 0.95;      // initial correction confidence
  double theta_floor = 0.7;
  double delta = 0.05;       // per-epoch threshold decay
  TrainConfig base;          // base.epochs is the epoch count
  std::uint64_t seed = 0;
};

// Progressive label correction: after each epoch, confident disagreements
// overwrite the working labels; the threshold decays toward the floor.
LnlResult plc_train(const Dataset& data, const PlcConfig& cfg, const FeatureSpace& space,
                    const LnlContext* ctx = nullptr);

struct SealConfig {
  int rounds = 2;    // retraining rounds after the initial one
  TrainConfig base;
  std::uint64_t seed = 0;
};

// Self-evolution: each round retrains from scratch against the previous
// round's epoch-averaged soft predictions. rounds = 0 is the plain baseline.
LnlResult seal_train(const Dataset& data, const SealConfig& cfg, const FeatureSpace& space,
                     const LnlContext* ctx = nullptr);

// Deterministic per-method model seeds, exposed so reductions to plain
// training can be reproduced exactly.
std::uint64_t plc_model_seed(std::uint64_t seed);
std::uint64_t seal_round_seed(std::uint64_t seed, int round);
std::uint64_t dividemix_net_seed(std::uint64_t seed, int net);

// epoch, method, noise_rate, seed, train_loss, dev_accuracy, clean_set_size,
// clean_set_precision. NaN renders as an empty field.
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics,
                       const std::string& method, double noise_rate, std::uint64_t seed);

}  // namespace dina
