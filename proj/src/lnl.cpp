#include "dina/lnl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dina/errors.hpp"
#include "dina/loss_gmm.hpp"
#include "dina/math.hpp"
#include "dina/rng.hpp"
#include "dina/text.hpp"

namespace dina {

namespace {
constexpr double kProbFloor = 1e-12;

struct TrainView {
  Dataset data;                     // train split only
  std::vector<FeatureVector> features;
  std::vector<int> labels;
  int n_classes = 2;
};

TrainView make_train_view(const Dataset& data, const FeatureSpace& space, int threads) {
  const auto idx = split_indices(data, "train");
  if (idx.empty()) throw DataError("training requires a non-empty train split");
  TrainView v;
  v.data = subset(data, idx);
  v.features = featurize_all(v.data, space, threads);
  v.labels.resize(static_cast<std::size_t>(v.data.size()));
  for (int i = 0; i < v.data.size(); ++i) {
    v.labels[static_cast<std::size_t>(i)] = v.data.examples[static_cast<std::size_t>(i)].label;
  }
  v.n_classes = data.num_classes;
  return v;
}

struct Observer {
  std::vector<FeatureVector> dev_features;
  std::vector<int> dev_labels;
  const std::set<std::string>* flipped = nullptr;

  Observer(const LnlContext* ctx, const FeatureSpace& space) {
    if (!ctx) return;
    flipped = ctx->flipped_ids;
    if (ctx->dev) {
      const auto idx = split_indices(*ctx->dev, "dev");
      const Dataset dev = subset(*ctx->dev, idx);
      dev_features = featurize_all(dev, space);
      for (const auto& ex : dev.examples) dev_labels.push_back(ex.label);
    }
  }

  double dev_accuracy(const std::vector<const Classifier*>& nets) const {
    if (dev_features.empty()) return std::numeric_limits<double>::quiet_NaN();
    int correct = 0;
    for (std::size_t i = 0; i < dev_features.size(); ++i) {
      Eigen::VectorXd p = nets[0]->predict_proba(dev_features[i]);
      for (std::size_t a = 1; a < nets.size(); ++a) {
        p += nets[a]->predict_proba(dev_features[i]);
      }
      if (argmax(p) == dev_labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dev_features.size());
  }

  // Fraction of the claimed-clean positions that are truly uncorrupted.
  double clean_precision(const TrainView& v, const std::vector<int>& clean) const {
    if (!flipped || clean.empty()) return std::numeric_limits<double>::quiet_NaN();
    int good = 0;
    for (int i : clean) {
      if (!flipped->count(v.data.examples[static_cast<std::size_t>(i)].id)) ++good;
    }
    return static_cast<double>(good) / static_cast<double>(clean.size());
  }
};

double ensemble_train_loss(const std::vector<const Classifier*>& nets, const TrainView& v) {
  double loss = 0.0;
  for (std::size_t i = 0; i < v.features.size(); ++i) {
    Eigen::VectorXd p = nets[0]->predict_proba(v.features[i]);
    for (std::size_t a = 1; a < nets.size(); ++a) p += nets[a]->predict_proba(v.features[i]);
    p /= static_cast<double>(nets.size());
    loss += -std::log(std::max(p(v.labels[i]), kProbFloor));
  }
  return loss / static_cast<double>(v.features.size());
}
}  // namespace

Eigen::VectorXd LnlResult::predict_proba(const FeatureVector& x) const {
  Eigen::VectorXd p = networks.at(0).predict_proba(x);
  for (std::size_t a = 1; a < networks.size(); ++a) p += networks[a].predict_proba(x);
  return p / static_cast<double>(networks.size());
}

int LnlResult::predict(const FeatureVector& x) const { return argmax(predict_proba(x)); }

double LnlResult::eval_accuracy(const Dataset& data, std::string_view split) const {
  const auto idx = split_indices(data, split);
  if (idx.empty()) throw DataError("eval_accuracy: empty split '" + std::string(split) + "'");
  int correct = 0;
  for (int i : idx) {
    const auto& ex = data.examples[static_cast<std::size_t>(i)];
    if (predict(featurize(ex.tokens, networks.front().space)) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size());
}

Classifier LnlResult::collapsed() const {
  if (networks.empty()) throw DataError("collapsed: no networks");
  if (networks.size() == 1 || networks.front().is_mlp()) return networks.front();
  Classifier out = networks.front();
  for (std::size_t a = 1; a < networks.size(); ++a) {
    out.w1 += networks[a].w1;
    out.b1 += networks[a].b1;
  }
  out.w1 /= static_cast<double>(networks.size());
  out.b1 /= static_cast<double>(networks.size());
  return out;
}

Eigen::VectorXd co_refine(double clean_weight, int label, const Eigen::VectorXd& mean_pred,
                          double temperature, int n_classes) {
  if (label < 0 || label >= n_classes) throw DataError("co_refine: label out of range");
  Eigen::VectorXd mixed = (1.0 - clean_weight) * mean_pred;
  mixed(label) += clean_weight;
  return sharpen(mixed, temperature);
}

Eigen::VectorXd co_guess(const std::vector<Eigen::VectorXd>& network_preds, double temperature) {
  if (network_preds.empty()) throw ConfigError("co_guess: no predictions");
  Eigen::VectorXd mean = network_preds[0];
  for (std::size_t a = 1; a < network_preds.size(); ++a) mean += network_preds[a];
  mean /= static_cast<double>(network_preds.size());
  return sharpen(mean, temperature);
}

SoftExample mixup_with_lambda(const SoftExample& a, const SoftExample& b, double lambda_prime) {
  SoftExample out;
  out.x = axpy_merge(lambda_prime, a.x, 1.0 - lambda_prime, b.x);
  out.y = lambda_prime * a.y + (1.0 - lambda_prime) * b.y;
  return out;
}

SoftExample mixup(const SoftExample& a, const SoftExample& b, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  const double lambda = rng.beta(alpha, alpha);
  return mixup_with_lambda(a, b, std::max(lambda, 1.0 - lambda));
}

std::uint64_t plc_model_seed(std::uint64_t seed) { return derive_seed(seed, "plc-model"); }

std::uint64_t seal_round_seed(std::uint64_t seed, int round) {
  return derive_seed(seed, "seal-round", static_cast<std::uint64_t>(round));
}

std::uint64_t dividemix_net_seed(std::uint64_t seed, int net) {
  return derive_seed(seed, "dm-net", static_cast<std::uint64_t>(net));
}

namespace {

// Soft targets for one epoch, all taken at the previous epoch's parameters:
// co-refined on the clean side (refine_net's own averaged prediction), co-guessed
// on the noisy side (both networks vote). Positions outside clean/noisy stay empty.
std::vector<Eigen::VectorXd> epoch_targets(const Classifier& refine_net,
                                           const std::vector<const Classifier*>& guess_nets,
                                           const TrainView& v, const std::vector<int>& clean,
                                           const std::vector<int>& noisy,
                                           const Eigen::VectorXd& clean_weight,
                                           const DivideMixConfig& cfg, Rng& rng) {
  const int k = v.n_classes;
  std::vector<Eigen::VectorXd> targets(static_cast<std::size_t>(v.data.size()));
  for (int i : clean) {
    const auto& tokens = v.data.examples[static_cast<std::size_t>(i)].tokens;
    Eigen::VectorXd mean_pred = Eigen::VectorXd::Zero(k);
    for (int m = 0; m < cfg.augmentations; ++m) {
      mean_pred +=
          refine_net.predict_proba(featurize(drop_tokens(tokens, cfg.token_dropout, rng),
                                             refine_net.space));
    }
    mean_pred /= static_cast<double>(cfg.augmentations);
    targets[static_cast<std::size_t>(i)] =
        co_refine(clean_weight(i), v.labels[static_cast<std::size_t>(i)], mean_pred,
                  cfg.sharpen_temperature, k);
  }
  for (int u : noisy) {
    const auto& tokens = v.data.examples[static_cast<std::size_t>(u)].tokens;
    std::vector<Eigen::VectorXd> per_net(guess_nets.size(), Eigen::VectorXd::Zero(k));
    for (int m = 0; m < cfg.augmentations; ++m) {
      const FeatureVector fv =
          featurize(drop_tokens(tokens, cfg.token_dropout, rng), guess_nets[0]->space);
      for (std::size_t a = 0; a < guess_nets.size(); ++a) {
        per_net[a] += guess_nets[a]->predict_proba(fv);
      }
    }
    for (auto& p : per_net) p /= static_cast<double>(cfg.augmentations);
    targets[static_cast<std::size_t>(u)] = co_guess(per_net, cfg.sharpen_temperature);
  }
  return targets;
}

// One semi-supervised pass for one network: MixUp-ed labeled CE plus weighted
// unlabeled MSE plus a uniform-prior regularizer (coefficient 1). Targets are
// fixed for the pass; inputs are fresh token-dropout variants.
void sgd_pass(Classifier& net, const TrainView& v, const std::vector<int>& clean,
              const std::vector<int>& noisy, const std::vector<Eigen::VectorXd>& targets,
              double lambda_u, const DivideMixConfig& cfg, Rng& rng) {
  const int k = v.n_classes;
  std::vector<int> clean_order = clean;
  std::vector<int> noisy_order = noisy;
  rng.shuffle(clean_order);
  rng.shuffle(noisy_order);
  std::size_t noisy_cursor = 0;

  auto next_noisy = [&]() {
    if (noisy_order.empty()) return -1;
    if (noisy_cursor == noisy_order.size()) {
      rng.shuffle(noisy_order);
      noisy_cursor = 0;
    }
    return noisy_order[noisy_cursor++];
  };

  auto augmented_views = [&](int i, std::vector<SoftExample>& pool) {
    const auto& tokens = v.data.examples[static_cast<std::size_t>(i)].tokens;
    const Eigen::VectorXd& target = targets[static_cast<std::size_t>(i)];
    for (int m = 0; m < cfg.augmentations; ++m) {
      pool.push_back({featurize(drop_tokens(tokens, cfg.token_dropout, rng), net.space), target});
    }
  };

  const int batch = cfg.base.batch_size;
  for (std::size_t start = 0; start < clean_order.size();
       start += static_cast<std::size_t>(batch)) {
    const std::size_t stop = std::min(clean_order.size(), start + static_cast<std::size_t>(batch));
    std::vector<SoftExample> pool;
    for (std::size_t s = start; s < stop; ++s) augmented_views(clean_order[s], pool);
    const std::size_t n_labeled = pool.size();
    for (std::size_t s = start; s < stop; ++s) {
      const int u = next_noisy();
      if (u < 0) break;
      augmented_views(u, pool);
    }

    // MixUp against a shuffled copy of the whole pool.
    std::vector<int> partner(pool.size());
    std::iota(partner.begin(), partner.end(), 0);
    rng.shuffle(partner);
    std::vector<SoftExample> mixed;
    mixed.reserve(pool.size());
    for (std::size_t t = 0; t < pool.size(); ++t) {
      mixed.push_back(mixup(pool[t], pool[static_cast<std::size_t>(partner[t])],
                            cfg.mixup_alpha, rng));
    }

    // Forward everything at pre-update parameters.
    const std::size_t n_total = mixed.size();
    const std::size_t n_unlabeled = n_total - n_labeled;
    std::vector<Eigen::VectorXd> probs(n_total);
    Eigen::VectorXd mean_p = Eigen::VectorXd::Zero(k);
    for (std::size_t t = 0; t < n_total; ++t) {
      probs[t] = net.predict_proba(mixed[t].x);
      mean_p += probs[t];
    }
    mean_p /= static_cast<double>(n_total);

    // Uniform-prior regularizer gradient w.r.t. each item's probabilities.
    const Eigen::VectorXd g_reg =
        (-1.0 / (static_cast<double>(k) * static_cast<double>(n_total))) *
        mean_p.cwiseMax(kProbFloor).cwiseInverse();

    const double lr = cfg.base.learning_rate;
    if (cfg.base.l2_lambda > 0.0) {
      net.w1 *= 1.0 - lr * cfg.base.l2_lambda;
      if (net.is_mlp()) net.w2 *= 1.0 - lr * cfg.base.l2_lambda;
    }
    for (std::size_t t = 0; t < n_total; ++t) {
      const Eigen::VectorXd& p = probs[t];
      Eigen::VectorXd dz;
      Eigen::VectorXd dp = g_reg;
      if (t < n_labeled) {
        dz = (p - mixed[t].y) / static_cast<double>(n_labeled);
      } else {
        dz = Eigen::VectorXd::Zero(k);
        dp += (2.0 * lambda_u / (static_cast<double>(k) * static_cast<double>(n_unlabeled))) *
              (p - mixed[t].y);
      }
      // Chain dp through the softmax Jacobian: dz += p .* dp - p * (p . dp).
      dz += p.cwiseProduct(dp) - p * p.dot(dp);

      // Sparse parameter update (linear form; MLPs go through the dense path).
      if (!net.is_mlp()) {
        const FeatureVector& x = mixed[t].x;
        for (std::size_t j = 0; j < x.idx.size(); ++j) {
          net.w1.col(x.idx[j]).noalias() -= (lr * x.val[j]) * dz;
        }
        net.b1.noalias() -= lr * dz;
      } else {
        const FeatureVector& x = mixed[t].x;
        Eigen::VectorXd z1 = net.b1;
        for (std::size_t j = 0; j < x.idx.size(); ++j) {
          z1.noalias() += x.val[j] * net.w1.col(x.idx[j]);
        }
        const Eigen::VectorXd h = z1.cwiseMax(0.0);
        const Eigen::VectorXd dz1 =
            (net.w2.transpose() * dz).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
        net.w2.noalias() -= lr * dz * h.transpose();
        net.b2.noalias() -= lr * dz;
        for (std::size_t j = 0; j < x.idx.size(); ++j) {
          net.w1.col(x.idx[j]).noalias() -= (lr * x.val[j]) * dz1;
        }
        net.b1.noalias() -= lr * dz1;
      }
    }
  }
}

void validate_dividemix(const DivideMixConfig& cfg) {
  if (cfg.warmup_epochs < 0 || cfg.main_epochs < 0) {
    throw ConfigError("dividemix: epoch counts must be non-negative");
  }
  if (!(cfg.clean_threshold >= 0.0 && cfg.clean_threshold <= 1.0)) {
    throw ConfigError("dividemix: clean_threshold must be in [0, 1]");
  }
  if (!(cfg.sharpen_temperature > 0.0)) {
    throw ConfigError("dividemix: sharpen_temperature must be positive");
  }
  if (!(cfg.mixup_alpha > 0.0)) throw ConfigError("dividemix: mixup_alpha must be positive");
  if (cfg.unlabeled_weight < 0.0) {
    throw ConfigError("dividemix: unlabeled_weight must be non-negative");
  }
  if (cfg.unlabeled_ramp_epochs < 0) {
    throw ConfigError("dividemix: unlabeled_ramp_epochs must be non-negative");
  }
  if (cfg.augmentations < 1) throw ConfigError("dividemix: augmentations must be positive");
  if (!(cfg.token_dropout >= 0.0 && cfg.token_dropout < 1.0)) {
    throw ConfigError("dividemix: token_dropout must be in [0, 1)");
  }
}

}  // namespace

LnlResult dividemix_train(const Dataset& data, const DivideMixConfig& cfg,
                          const FeatureSpace& space, const std::vector<int>* forced_unlabeled,
                          const LnlContext* ctx, int threads) {
  validate_dividemix(cfg);
  TrainView v = make_train_view(data, space, threads);
  const int n = v.data.size();
  Observer obs(ctx, space);

  std::vector<bool> forced(static_cast<std::size_t>(n), false);
  if (forced_unlabeled) {
    for (int i : *forced_unlabeled) {
      if (i < 0 || i >= n) throw DataError("dividemix: forced_unlabeled position out of range");
      forced[static_cast<std::size_t>(i)] = true;
    }
  }

  LnlResult out;
  std::vector<const FeatureVector*> xs(v.features.size());
  for (std::size_t i = 0; i < v.features.size(); ++i) xs[i] = &v.features[i];
  const Eigen::MatrixXd hard_targets = one_hot(v.labels, v.n_classes);

  std::vector<Classifier> nets;
  std::vector<Rng> warm_rngs;
  for (int a = 0; a < 2; ++a) {
    TrainConfig net_cfg = cfg.base;
    net_cfg.seed = dividemix_net_seed(cfg.seed, a);
    nets.push_back(make_classifier(space, v.n_classes, net_cfg));
    warm_rngs.emplace_back(derive_seed(net_cfg.seed, "train-shuffle"));
  }
  std::vector<const Classifier*> net_ptrs = {&nets[0], &nets[1]};

  std::vector<int> all_positions(static_cast<std::size_t>(n));
  std::iota(all_positions.begin(), all_positions.end(), 0);
  const double overall_clean =
      obs.flipped ? obs.clean_precision(v, all_positions) : std::numeric_limits<double>::quiet_NaN();

  for (int e = 0; e < cfg.warmup_epochs; ++e) {
    double loss = 0.0;
    for (int a = 0; a < 2; ++a) {
      loss += train_epoch(nets[static_cast<std::size_t>(a)], xs, hard_targets, cfg.base,
                          warm_rngs[static_cast<std::size_t>(a)]);
    }
    out.metrics.push_back({e, loss / 2.0, obs.dev_accuracy(net_ptrs), n, overall_clean});
  }

  std::vector<int> last_clean = all_positions;
  std::vector<int> last_noisy;
  for (int e = 0; e < cfg.main_epochs; ++e) {
    const double ramp = cfg.unlabeled_ramp_epochs > 0
                            ? std::min(1.0, static_cast<double>(e) /
                                                static_cast<double>(cfg.unlabeled_ramp_epochs))
                            : 1.0;
    const double lambda_u = cfg.unlabeled_weight * ramp;
    // The epoch trains against a frozen snapshot of the pair: partitions, refined
    // labels and guesses all come from the previous parameters, never from the
    // net mid-update.
    const std::vector<Classifier> prev = nets;
    const std::vector<const Classifier*> prev_ptrs = {&prev[0], &prev[1]};
    for (int a = 0; a < 2; ++a) {
      const int b = 1 - a;
      // Each net's partition comes from the other net's losses so a point a net
      // has privately memorized cannot vouch for itself.
      const Eigen::VectorXd losses =
          per_sample_losses_featurized(prev[static_cast<std::size_t>(b)], v.features, v.labels);
      const LossGmm gmm = fit_loss_gmm(losses);
      std::vector<int> clean, noisy;
      for (int i = 0; i < n; ++i) {
        if (!forced[static_cast<std::size_t>(i)] && gmm.clean_posterior(i) >= cfg.clean_threshold) {
          clean.push_back(i);
        } else {
          noisy.push_back(i);
        }
      }
      Eigen::VectorXd weight = gmm.clean_posterior;
      if (clean.empty()) {
        // Nothing passed the cut; fall back to treating the epoch as fully
        // labeled rather than skipping training.
        clean = all_positions;
        noisy.clear();
        weight.setOnes();
      }
      Rng epoch_rng(derive_seed(cfg.seed, "dm-epoch",
                                static_cast<std::uint64_t>(e) * 2 + static_cast<std::uint64_t>(a)));
      const std::vector<Eigen::VectorXd> targets =
          epoch_targets(prev[static_cast<std::size_t>(a)], prev_ptrs, v, clean, noisy, weight,
                        cfg, epoch_rng);
      sgd_pass(nets[static_cast<std::size_t>(a)], v, clean, noisy, targets, lambda_u, cfg,
               epoch_rng);
      last_clean = std::move(clean);
      last_noisy = std::move(noisy);
    }
    EpochMetrics row;
    row.epoch = cfg.warmup_epochs + e;
    row.train_loss = ensemble_train_loss(net_ptrs, v);
    row.dev_accuracy = obs.dev_accuracy(net_ptrs);
    row.clean_set_size = static_cast<int>(last_clean.size());
    row.clean_set_precision = obs.clean_precision(v, last_clean);
    out.metrics.push_back(row);
  }

  out.networks = std::move(nets);
  out.final_clean = std::move(last_clean);
  out.final_noisy = std::move(last_noisy);
  return out;
}

LnlResult plc_train(const Dataset& data, const PlcConfig& cfg, const FeatureSpace& space,
                    const LnlContext* ctx) {
  if (!(cfg.theta0 >= 0.5 && cfg.theta0 <= 1.0)) {
    throw ConfigError("plc: theta0 must be in [0.5, 1]");
  }
  if (!(cfg.theta_floor >= 0.5 && cfg.theta_floor <= cfg.theta0)) {
    throw ConfigError("plc: theta_floor must be in [0.5, theta0]");
  }
  if (cfg.delta < 0.0) throw ConfigError("plc: delta must be non-negative");

  TrainView v = make_train_view(data, space, 1);
  const int n = v.data.size();
  Observer obs(ctx, space);

  std::vector<int> labels = v.labels;
  std::vector<const FeatureVector*> xs(v.features.size());
  for (std::size_t i = 0; i < v.features.size(); ++i) xs[i] = &v.features[i];

  TrainConfig model_cfg = cfg.base;
  model_cfg.seed = plc_model_seed(cfg.seed);
  Classifier model = make_classifier(space, v.n_classes, model_cfg);
  Rng order_rng(derive_seed(model_cfg.seed, "train-shuffle"));

  std::vector<bool> corrected(static_cast<std::size_t>(n), false);
  int corrected_count = 0;
  double theta = cfg.theta0;

  LnlResult out;
  for (int e = 0; e < cfg.base.epochs; ++e) {
    const double loss = train_epoch(model, xs, one_hot(labels, v.n_classes), model_cfg, order_rng);
    // Confident disagreements overwrite the working labels; corrections are
    // cumulative and never revert on their own.
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd p = model.predict_proba(v.features[static_cast<std::size_t>(i)]);
      const int pred = argmax(p);
      if (pred != labels[static_cast<std::size_t>(i)] && p(pred) >= theta) {
        labels[static_cast<std::size_t>(i)] = pred;
        if (!corrected[static_cast<std::size_t>(i)]) {
          corrected[static_cast<std::size_t>(i)] = true;
          ++corrected_count;
        }
      }
    }
    theta = std::max(cfg.theta_floor, theta - cfg.delta);

    std::vector<int> untouched;
    for (int i = 0; i < n; ++i) {
      if (!corrected[static_cast<std::size_t>(i)]) untouched.push_back(i);
    }
    EpochMetrics row;
    row.epoch = e;
    row.train_loss = loss;
    row.dev_accuracy = obs.dev_accuracy({&model});
    row.clean_set_size = n - corrected_count;
    row.clean_set_precision = obs.clean_precision(v, untouched);
    out.metrics.push_back(row);
  }
  out.networks.push_back(std::move(model));
  out.final_clean.resize(static_cast<std::size_t>(n));
  std::iota(out.final_clean.begin(), out.final_clean.end(), 0);
  return out;
}

LnlResult seal_train(const Dataset& data, const SealConfig& cfg, const FeatureSpace& space,
                     const LnlContext* ctx) {
  if (cfg.rounds < 0) throw ConfigError("seal: rounds must be non-negative");
  TrainView v = make_train_view(data, space, 1);
  const int n = v.data.size();
  Observer obs(ctx, space);

  std::vector<const FeatureVector*> xs(v.features.size());
  for (std::size_t i = 0; i < v.features.size(); ++i) xs[i] = &v.features[i];
  std::vector<int> all_positions(static_cast<std::size_t>(n));
  std::iota(all_positions.begin(), all_positions.end(), 0);
  const double overall_clean =
      obs.flipped ? obs.clean_precision(v, all_positions) : std::numeric_limits<double>::quiet_NaN();

  Eigen::MatrixXd targets = one_hot(v.labels, v.n_classes);
  Classifier model;
  LnlResult out;
  for (int r = 0; r <= cfg.rounds; ++r) {
    TrainConfig round_cfg = cfg.base;
    round_cfg.seed = seal_round_seed(cfg.seed, r);
    model = make_classifier(space, v.n_classes, round_cfg);
    Rng order_rng(derive_seed(round_cfg.seed, "train-shuffle"));
    Eigen::MatrixXd accum = Eigen::MatrixXd::Zero(n, v.n_classes);
    for (int e = 0; e < round_cfg.epochs; ++e) {
      const double loss = train_epoch(model, xs, targets, round_cfg, order_rng);
      for (int i = 0; i < n; ++i) {
        accum.row(i) += model.predict_proba(v.features[static_cast<std::size_t>(i)]).transpose();
      }
      EpochMetrics row;
      row.epoch = r * round_cfg.epochs + e;
      row.train_loss = loss;
      row.dev_accuracy = obs.dev_accuracy({&model});
      row.clean_set_size = n;
      row.clean_set_precision = overall_clean;
      out.metrics.push_back(row);
    }
    if (round_cfg.epochs > 0) {
      targets = accum / static_cast<double>(round_cfg.epochs);
    }
  }
  out.networks.push_back(std::move(model));
  out.final_clean = std::move(all_positions);
  return out;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics,
                       const std::string& method, double noise_rate, std::uint64_t seed) {
  std::string out =
      "epoch,method,noise_rate,seed,train_loss,dev_accuracy,clean_set_size,clean_set_precision\n";
  char buf[256];
  for (const auto& row : metrics) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.4f,%llu,%.6f,", row.epoch, method.c_str(),
                  noise_rate, static_cast<unsigned long long>(seed), row.train_loss);
    out += buf;
    if (std::isnan(row.dev_accuracy)) {
      out += ',';
    } else {
      std::snprintf(buf, sizeof buf, "%.6f,", row.dev_accuracy);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "%d,", row.clean_set_size);
    out += buf;
    if (!std::isnan(row.clean_set_precision)) {
      std::snprintf(buf, sizeof buf, "%.6f", row.clean_set_precision);
      out += buf;
    }
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace dina
