#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dina/dataset.hpp"
#include "dina/features.hpp"

namespace dina {

class Rng;

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.5;
  double l2_lambda = 1e-6;
  int mlp_hidden = 0;  // 0 = linear softmax, > 0 = one ReLU hidden layer
  std::uint64_t seed = 0;
};

// Softmax classifier over hashed character n-grams. Linear form keeps w1 as
// the K x D output matrix; the MLP form inserts one ReLU layer (w1: H x D,
// w2: K x H).
class Classifier {
 public:
  FeatureSpace space;
  int n_classes = 2;
  int mlp_hidden = 0;
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;

  bool is_mlp() const { return mlp_hidden > 0; }
  Eigen::VectorXd logits(const FeatureVector& x) const;
  Eigen::VectorXd predict_proba(const FeatureVector& x) const;
  Eigen::VectorXd predict_proba(const std::vector<std::string>& tokens) const;
  int predict(const FeatureVector& x) const;
};

// Zero-initialized linear model or small-uniform MLP (seeded, so construction
// is reproducible).
Classifier make_classifier(const FeatureSpace& space, int n_classes, const TrainConfig& cfg);

// Dense gradient of the regularized mean cross-entropy over a batch; exists
// for finite-difference checks and the suspicion scorer, training itself uses
// an equivalent sparse in-place path.
struct GradBuffer {
  Eigen::MatrixXd w1;
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;
  Eigen::VectorXd b2;
};

double ce_batch_loss(const Classifier& model, const std::vector<const FeatureVector*>& xs,
                     const std::vector<int>& ys, double l2_lambda);
GradBuffer ce_gradient(const Classifier& model, const std::vector<const FeatureVector*>& xs,
                       const std::vector<int>& ys, double l2_lambda);

// One shuffled minibatch CE pass over (xs, targets) rows; returns the mean
// pre-update loss of each batch. Weight decay hits w only, never biases.
double train_epoch(Classifier& model, const std::vector<const FeatureVector*>& xs,
                   const Eigen::MatrixXd& targets, const TrainConfig& cfg, Rng& order_rng);

Classifier train(const Dataset& data, const TrainConfig& cfg, const FeatureSpace& space);
Classifier train_featurized(const std::vector<FeatureVector>& xs, const std::vector<int>& ys,
                            int n_classes, const TrainConfig& cfg, const FeatureSpace& space,
                            std::vector<double>* epoch_losses = nullptr);
Classifier train_featurized_soft(const std::vector<FeatureVector>& xs,
                                 const Eigen::MatrixXd& targets, const TrainConfig& cfg,
                                 const FeatureSpace& space,
                                 std::vector<double>* epoch_losses = nullptr);

Eigen::MatrixXd one_hot(const std::vector<int>& ys, int n_classes);

// Per-example cross-entropy against the stored labels, probability floored at
// 1e-12. Dataset order.
Eigen::VectorXd per_sample_losses(const Classifier& model, const Dataset& data);
Eigen::VectorXd per_sample_losses_featurized(const Classifier& model,
                                             const std::vector<FeatureVector>& xs,
                                             const std::vector<int>& ys);

std::vector<FeatureVector> featurize_all(const Dataset& data, const FeatureSpace& space,
                                         int threads = 1);

double accuracy(const Classifier& model, const Dataset& data, std::string_view split);

// JSON checkpoint {"format":"dina-model","version":1,...}; weights row-major.
void save_model(const Classifier& model, const std::string& path);
Classifier load_model(const std::string& path);

}  // namespace dina
