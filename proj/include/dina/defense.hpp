#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dina/attack.hpp"
#include "dina/classifier.hpp"
#include "dina/dataset.hpp"

namespace dina {

struct A2TConfig {
  int n_adv = 2000;    // adversarial examples budgeted across all epochs
  int epochs = 5;
  AttackConfig attack;  // greedy attack against the in-training model
  TrainConfig train;    // per-epoch optimizer settings
  std::uint64_t seed = 0;
};

struct AdvExample {
  std::string source_id;
  std::vector<std::string> tokens;
  int label = 0;  // always the source doc's label
  int epoch = 0;
};

// Adversarial training: each epoch greedily attacks a share of the
// currently-correctly-classified train docs with the current model, appends
// the successful perturbations under their original labels, and runs one
// standard epoch over clean + adversarial examples. n_adv = 0 never touches
// the attack machinery, so it is exactly continued plain training.
Classifier a2t_train(const Classifier& start, const Dataset& data, const A2TConfig& cfg,
                     const ConfusableTable& table, int threads = 1,
                     std::vector<AdvExample>* adv_log = nullptr);

// Training-order stream for a2t_train; exposed so the n_adv = 0 reduction can
// be reproduced with plain epoch calls.
std::uint64_t a2t_order_seed(std::uint64_t seed);

struct AdvSweepPoint {
  int n_adv = 0;
  double clean_accuracy = 0.0;
  double acc_under_random = 0.0;
  double acc_under_greedy = 0.0;
  double asr_greedy = 0.0;
};

// One a2t_train per grid value, all from the same starting checkpoint;
// n_adv = 0 evaluates the starting model untouched. Evaluation attacks run on
// eval_split with the given attack config.
std::vector<AdvSweepPoint> sweep_adv_count(const Classifier& start, const Dataset& data,
                                           const std::vector<int>& grid, const A2TConfig& base,
                                           const ConfusableTable& table,
                                           std::string_view eval_split, int threads = 1);

// n_adv, seed, clean_accuracy, acc_under_random, acc_under_greedy, asr_greedy.
void write_adv_sweep_csv(const std::string& path,
                         const std::vector<std::pair<std::uint64_t, AdvSweepPoint>>& rows);

// L2 norm of the cross-entropy gradient (at the predicted label) restricted to
// the doc's active feature weights, scaled by 1/sqrt(token count). Perturbed
// inputs land in rarer hash buckets and pull larger gradients. Empty docs
// score 0.
double gradient_suspicion(const Classifier& model, const std::vector<std::string>& tokens);

// Threshold at the given percentile of suspicion scores over the dev split
// (>= 100 docs). Flag rule is score > threshold; percentile 100 flags nothing
// on dev, percentile <= 0 flags everything.
double calibrate_detector(const Classifier& model, const Dataset& data, double percentile = 95.0);

// Mann-Whitney AUC: probability a positive outscores a negative, ties at 1/2.
double rank_auc(const std::vector<double>& negatives, const std::vector<double>& positives);

}  // namespace dina
