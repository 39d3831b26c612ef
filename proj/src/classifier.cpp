#include "dina/classifier.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dina/errors.hpp"
#include "dina/math.hpp"
#include "dina/parallel.hpp"
#include "dina/rng.hpp"

namespace dina {

namespace {
constexpr double kProbFloor = 1e-12;

void check_dim(const Classifier& model, const FeatureVector& x) {
  if (x.dim != model.space.dim) {
    throw DataError("feature vector dimension " + std::to_string(x.dim) +
                    " does not match model dimension " + std::to_string(model.space.dim));
  }
}

Eigen::VectorXd sparse_affine(const Eigen::MatrixXd& w, const Eigen::VectorXd& b,
                              const FeatureVector& x) {
  Eigen::VectorXd z = b;
  for (std::size_t i = 0; i < x.idx.size(); ++i) {
    z.noalias() += x.val[i] * w.col(x.idx[i]);
  }
  return z;
}
}  // namespace

Eigen::VectorXd Classifier::logits(const FeatureVector& x) const {
  check_dim(*this, x);
  Eigen::VectorXd z1 = sparse_affine(w1, b1, x);
  if (!is_mlp()) return z1;
  const Eigen::VectorXd h = z1.cwiseMax(0.0);
  return w2 * h + b2;
}

Eigen::VectorXd Classifier::predict_proba(const FeatureVector& x) const {
  return softmax(logits(x));
}

Eigen::VectorXd Classifier::predict_proba(const std::vector<std::string>& tokens) const {
  return predict_proba(featurize(tokens, space));
}

int Classifier::predict(const FeatureVector& x) const { return argmax(logits(x)); }

Classifier make_classifier(const FeatureSpace& space, int n_classes, const TrainConfig& cfg) {
  validate(space);
  if (n_classes < 2) throw ConfigError("classifier needs at least 2 classes");
  if (cfg.mlp_hidden < 0) throw ConfigError("mlp_hidden must be non-negative");
  Classifier m;
  m.space = space;
  m.n_classes = n_classes;
  m.mlp_hidden = cfg.mlp_hidden;
  if (cfg.mlp_hidden == 0) {
    m.w1 = Eigen::MatrixXd::Zero(n_classes, space.dim);
    m.b1 = Eigen::VectorXd::Zero(n_classes);
  } else {
    Rng rng(derive_seed(cfg.seed, "init"));
    const int h = cfg.mlp_hidden;
    auto uniform_matrix = [&](int rows, int cols) {
      Eigen::MatrixXd w(rows, cols);
      for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < rows; ++r) w(r, c) = 0.1 * rng.uniform() - 0.05;
      }
      return w;
    };
    m.w1 = uniform_matrix(h, space.dim);
    m.b1 = Eigen::VectorXd::Zero(h);
    m.w2 = uniform_matrix(n_classes, h);
    m.b2 = Eigen::VectorXd::Zero(n_classes);
  }
  return m;
}

double ce_batch_loss(const Classifier& model, const std::vector<const FeatureVector*>& xs,
                     const std::vector<int>& ys, double l2_lambda) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw ConfigError("ce_batch_loss: batch must be non-empty and aligned");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::VectorXd p = model.predict_proba(*xs[i]);
    loss += -std::log(std::max(p(ys[i]), kProbFloor));
  }
  loss /= static_cast<double>(xs.size());
  loss += 0.5 * l2_lambda * model.w1.squaredNorm();
  if (model.is_mlp()) loss += 0.5 * l2_lambda * model.w2.squaredNorm();
  return loss;
}

GradBuffer ce_gradient(const Classifier& model, const std::vector<const FeatureVector*>& xs,
                       const std::vector<int>& ys, double l2_lambda) {
  if (xs.empty() || xs.size() != ys.size()) {
    throw ConfigError("ce_gradient: batch must be non-empty and aligned");
  }
  GradBuffer g;
  g.w1 = Eigen::MatrixXd::Zero(model.w1.rows(), model.w1.cols());
  g.b1 = Eigen::VectorXd::Zero(model.b1.size());
  if (model.is_mlp()) {
    g.w2 = Eigen::MatrixXd::Zero(model.w2.rows(), model.w2.cols());
    g.b2 = Eigen::VectorXd::Zero(model.b2.size());
  }
  const double inv_n = 1.0 / static_cast<double>(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const FeatureVector& x = *xs[i];
    check_dim(model, x);
    const Eigen::VectorXd z1 = sparse_affine(model.w1, model.b1, x);
    Eigen::VectorXd dz1;
    if (model.is_mlp()) {
      const Eigen::VectorXd h = z1.cwiseMax(0.0);
      Eigen::VectorXd dz2 = softmax((model.w2 * h + model.b2).eval());
      dz2(ys[i]) -= 1.0;
      g.w2.noalias() += inv_n * dz2 * h.transpose();
      g.b2.noalias() += inv_n * dz2;
      dz1 = (model.w2.transpose() * dz2).cwiseProduct(
          (z1.array() > 0.0).cast<double>().matrix());
    } else {
      dz1 = softmax(z1);
      dz1(ys[i]) -= 1.0;
    }
    for (std::size_t j = 0; j < x.idx.size(); ++j) {
      g.w1.col(x.idx[j]).noalias() += (inv_n * x.val[j]) * dz1;
    }
    g.b1.noalias() += inv_n * dz1;
  }
  g.w1.noalias() += l2_lambda * model.w1;
  if (model.is_mlp()) g.w2.noalias() += l2_lambda * model.w2;
  return g;
}

double train_epoch(Classifier& model, const std::vector<const FeatureVector*>& xs,
                   const Eigen::MatrixXd& targets, const TrainConfig& cfg, Rng& order_rng) {
  const int n = static_cast<int>(xs.size());
  if (n == 0) throw DataError("train_epoch: empty training set");
  if (targets.rows() != n || targets.cols() != model.n_classes) {
    throw DataError("train_epoch: target matrix shape mismatch");
  }
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (cfg.l2_lambda < 0.0) throw ConfigError("l2_lambda must be non-negative");

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  order_rng.shuffle(perm);

  const bool mlp = model.is_mlp();
  double total_loss = 0.0;
  std::vector<Eigen::VectorXd> dz1s, dz2s, hs;
  for (int start = 0; start < n; start += cfg.batch_size) {
    const int bn = std::min(cfg.batch_size, n - start);
    dz1s.clear();
    dz2s.clear();
    hs.clear();
    // Pass 1: forward everything at the pre-update parameters.
    for (int b = 0; b < bn; ++b) {
      const int i = perm[static_cast<std::size_t>(start + b)];
      const FeatureVector& x = *xs[static_cast<std::size_t>(i)];
      check_dim(model, x);
      const Eigen::VectorXd t = targets.row(i).transpose();
      const Eigen::VectorXd z1 = sparse_affine(model.w1, model.b1, x);
      Eigen::VectorXd p;
      if (mlp) {
        const Eigen::VectorXd h = z1.cwiseMax(0.0);
        p = softmax((model.w2 * h + model.b2).eval());
        const Eigen::VectorXd dz2 = p - t;
        dz2s.push_back(dz2);
        hs.push_back(h);
        dz1s.push_back((model.w2.transpose() * dz2)
                           .cwiseProduct((z1.array() > 0.0).cast<double>().matrix()));
      } else {
        p = softmax(z1);
        dz1s.push_back(p - t);
      }
      for (int c = 0; c < model.n_classes; ++c) {
        if (t(c) > 0.0) total_loss += -t(c) * std::log(std::max(p(c), kProbFloor));
      }
    }
    // Pass 2: decay, then apply the accumulated sparse gradients.
    const double step = cfg.learning_rate / static_cast<double>(bn);
    if (cfg.l2_lambda > 0.0) {
      model.w1 *= 1.0 - cfg.learning_rate * cfg.l2_lambda;
      if (mlp) model.w2 *= 1.0 - cfg.learning_rate * cfg.l2_lambda;
    }
    for (int b = 0; b < bn; ++b) {
      const int i = perm[static_cast<std::size_t>(start + b)];
      const FeatureVector& x = *xs[static_cast<std::size_t>(i)];
      const Eigen::VectorXd& dz1 = dz1s[static_cast<std::size_t>(b)];
      for (std::size_t j = 0; j < x.idx.size(); ++j) {
        model.w1.col(x.idx[j]).noalias() -= (step * x.val[j]) * dz1;
      }
      model.b1.noalias() -= step * dz1;
      if (mlp) {
        model.w2.noalias() -= step * dz2s[static_cast<std::size_t>(b)] *
                              hs[static_cast<std::size_t>(b)].transpose();
        model.b2.noalias() -= step * dz2s[static_cast<std::size_t>(b)];
      }
    }
  }
  return total_loss / static_cast<double>(n);
}

Eigen::MatrixXd one_hot(const std::vector<int>& ys, int n_classes) {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ys.size()), n_classes);
  for (std::size_t i = 0; i < ys.size(); ++i) {
    if (ys[i] < 0 || ys[i] >= n_classes) throw DataError("one_hot: label out of range");
    t(static_cast<Eigen::Index>(i), ys[i]) = 1.0;
  }
  return t;
}

Classifier train_featurized_soft(const std::vector<FeatureVector>& xs,
                                 const Eigen::MatrixXd& targets, const TrainConfig& cfg,
                                 const FeatureSpace& space,
                                 std::vector<double>* epoch_losses) {
  if (xs.empty()) throw DataError("train: empty training set");
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  Classifier model = make_classifier(space, static_cast<int>(targets.cols()), cfg);
  std::vector<const FeatureVector*> ptrs(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ptrs[i] = &xs[i];
  Rng order_rng(derive_seed(cfg.seed, "train-shuffle"));
  for (int e = 0; e < cfg.epochs; ++e) {
    const double loss = train_epoch(model, ptrs, targets, cfg, order_rng);
    if (epoch_losses) epoch_losses->push_back(loss);
  }
  return model;
}

Classifier train_featurized(const std::vector<FeatureVector>& xs, const std::vector<int>& ys,
                            int n_classes, const TrainConfig& cfg, const FeatureSpace& space,
                            std::vector<double>* epoch_losses) {
  if (xs.size() != ys.size()) throw DataError("train: features and labels misaligned");
  return train_featurized_soft(xs, one_hot(ys, n_classes), cfg, space, epoch_losses);
}

Classifier train(const Dataset& data, const TrainConfig& cfg, const FeatureSpace& space) {
  const auto idx = split_indices(data, "train");
  if (idx.empty()) throw DataError("train: dataset has no train split");
  const Dataset tr = subset(data, idx);
  const auto xs = featurize_all(tr, space);
  std::vector<int> ys(static_cast<std::size_t>(tr.size()));
  for (int i = 0; i < tr.size(); ++i) ys[static_cast<std::size_t>(i)] = tr.examples[static_cast<std::size_t>(i)].label;
  return train_featurized(xs, ys, data.num_classes, cfg, space);
}

Eigen::VectorXd per_sample_losses_featurized(const Classifier& model,
                                             const std::vector<FeatureVector>& xs,
                                             const std::vector<int>& ys) {
  if (xs.size() != ys.size()) throw DataError("per_sample_losses: misaligned inputs");
  Eigen::VectorXd losses(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Eigen::VectorXd p = model.predict_proba(xs[i]);
    losses(static_cast<Eigen::Index>(i)) = -std::log(std::max(p(ys[i]), kProbFloor));
  }
  return losses;
}

Eigen::VectorXd per_sample_losses(const Classifier& model, const Dataset& data) {
  const auto xs = featurize_all(data, model.space);
  std::vector<int> ys(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) ys[static_cast<std::size_t>(i)] = data.examples[static_cast<std::size_t>(i)].label;
  return per_sample_losses_featurized(model, xs, ys);
}

std::vector<FeatureVector> featurize_all(const Dataset& data, const FeatureSpace& space,
                                         int threads) {
  std::vector<FeatureVector> xs(static_cast<std::size_t>(data.size()));
  parallel_for(data.size(), threads, [&](int i) {
    xs[static_cast<std::size_t>(i)] = featurize(data.examples[static_cast<std::size_t>(i)].tokens, space);
  });
  return xs;
}

double accuracy(const Classifier& model, const Dataset& data, std::string_view split) {
  const auto idx = split_indices(data, split);
  if (idx.empty()) throw DataError("accuracy: empty split '" + std::string(split) + "'");
  int correct = 0;
  for (int i : idx) {
    const auto& ex = data.examples[static_cast<std::size_t>(i)];
    if (model.predict(featurize(ex.tokens, model.space)) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

void save_model(const Classifier& model, const std::string& path) {
  nlohmann::ordered_json j;
  j["format"] = "dina-model";
  j["version"] = 1;
  j["feature_dim"] = model.space.dim;
  j["n_classes"] = model.n_classes;
  j["hash_seed"] = model.space.hash_seed;
  j["ngram_orders"] = model.space.ngram_orders;
  j["mlp_hidden"] = model.mlp_hidden;
  std::vector<double> weights;
  std::vector<double> bias;
  auto push_row_major = [&weights](const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) weights.push_back(m(r, c));
    }
  };
  push_row_major(model.w1);
  for (Eigen::Index i = 0; i < model.b1.size(); ++i) bias.push_back(model.b1(i));
  if (model.is_mlp()) {
    push_row_major(model.w2);
    for (Eigen::Index i = 0; i < model.b2.size(); ++i) bias.push_back(model.b2(i));
  }
  j["weights"] = weights;
  j["bias"] = bias;
  write_file_atomic(path, j.dump() + "\n");
}

Classifier load_model(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  try {
    if (j.value("format", "") != "dina-model") {
      throw DataError(path + ": expected dina-model format");
    }
    const int version = j.value("version", -1);
    if (version != 1) {
      throw DataError(path + ": unsupported model version " + std::to_string(version) +
                      " (expected 1)");
    }
    Classifier m;
    m.space.dim = j.at("feature_dim").get<int>();
    m.space.hash_seed = j.at("hash_seed").get<std::uint64_t>();
    m.space.ngram_orders = j.at("ngram_orders").get<std::vector<int>>();
    m.n_classes = j.at("n_classes").get<int>();
    m.mlp_hidden = j.at("mlp_hidden").get<int>();
    validate(m.space);
    if (m.n_classes < 2) throw DataError(path + ": n_classes must be >= 2");
    const auto weights = j.at("weights").get<std::vector<double>>();
    const auto bias = j.at("bias").get<std::vector<double>>();
    const int k = m.n_classes;
    const int d = m.space.dim;
    const int h = m.mlp_hidden;
    const std::size_t want_w = h == 0 ? static_cast<std::size_t>(k) * d
                                      : static_cast<std::size_t>(h) * d +
                                            static_cast<std::size_t>(k) * h;
    const std::size_t want_b =
        h == 0 ? static_cast<std::size_t>(k) : static_cast<std::size_t>(h + k);
    if (weights.size() != want_w || bias.size() != want_b) {
      throw DataError(path + ": checkpoint dimension mismatch (weights " +
                      std::to_string(weights.size()) + ", expected " + std::to_string(want_w) +
                      "; bias " + std::to_string(bias.size()) + ", expected " +
                      std::to_string(want_b) + ")");
    }
    std::size_t w = 0;
    auto read_row_major = [&weights, &w](int rows, int cols) {
      Eigen::MatrixXd m2(rows, cols);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m2(r, c) = weights[w++];
      }
      return m2;
    };
    if (h == 0) {
      m.w1 = read_row_major(k, d);
      m.b1 = Eigen::Map<const Eigen::VectorXd>(bias.data(), k);
    } else {
      m.w1 = read_row_major(h, d);
      m.w2 = read_row_major(k, h);
      m.b1 = Eigen::Map<const Eigen::VectorXd>(bias.data(), h);
      m.b2 = Eigen::Map<const Eigen::VectorXd>(bias.data() + h, k);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace dina
