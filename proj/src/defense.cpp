#include "dina/defense.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dina/errors.hpp"
#include "dina/math.hpp"
#include "dina/parallel.hpp"
#include "dina/rng.hpp"

namespace dina {

std::uint64_t a2t_order_seed(std::uint64_t seed) { return derive_seed(seed, "a2t-order"); }

Classifier a2t_train(const Classifier& start, const Dataset& data, const A2TConfig& cfg,
                     const ConfusableTable& table, int threads,
                     std::vector<AdvExample>* adv_log) {
  if (cfg.n_adv < 0) throw ConfigError("a2t: n_adv must be non-negative");
  if (cfg.epochs < 1) throw ConfigError("a2t: epochs must be positive");

  const auto train_idx = split_indices(data, "train");
  if (train_idx.empty()) throw DataError("a2t: dataset has no train split");
  const Dataset tr = subset(data, train_idx);
  const int n = tr.size();
  const auto clean_features = featurize_all(tr, start.space, threads);
  std::vector<int> clean_labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    clean_labels[static_cast<std::size_t>(i)] = tr.examples[static_cast<std::size_t>(i)].label;
  }

  Classifier model = start;
  Rng order_rng(a2t_order_seed(cfg.seed));
  std::vector<FeatureVector> adv_features;
  std::vector<int> adv_labels;

  for (int e = 0; e < cfg.epochs; ++e) {
    // Per-epoch share of the adversarial budget, remainder spread over the
    // earliest epochs.
    const int share = cfg.n_adv / cfg.epochs + (e < cfg.n_adv % cfg.epochs ? 1 : 0);
    if (share > 0) {
      std::vector<int> correct;
      for (int i = 0; i < n; ++i) {
        if (model.predict(clean_features[static_cast<std::size_t>(i)]) ==
            clean_labels[static_cast<std::size_t>(i)]) {
          correct.push_back(i);
        }
      }
      std::vector<int> picked;
      if (static_cast<int>(correct.size()) <= share) {
        picked = correct;
      } else {
        Rng sample_rng(derive_seed(cfg.seed, "a2t-sample", static_cast<std::uint64_t>(e)));
        for (int p : sample_rng.sample_indices(static_cast<int>(correct.size()), share)) {
          picked.push_back(correct[static_cast<std::size_t>(p)]);
        }
      }
      std::vector<AttackResult> results(picked.size());
      parallel_for(static_cast<int>(picked.size()), threads, [&](int p) {
        const auto& ex = tr.examples[static_cast<std::size_t>(picked[static_cast<std::size_t>(p)])];
        results[static_cast<std::size_t>(p)] =
            greedy_attack(model, ex.tokens, ex.label, table, cfg.attack);
      });
      for (std::size_t p = 0; p < picked.size(); ++p) {
        if (!results[p].success) continue;
        const auto& ex = tr.examples[static_cast<std::size_t>(picked[p])];
        adv_features.push_back(featurize(results[p].perturbed, start.space));
        adv_labels.push_back(ex.label);  // labels are never altered
        if (adv_log) adv_log->push_back({ex.id, results[p].perturbed, ex.label, e});
      }
    }

    std::vector<const FeatureVector*> xs;
    std::vector<int> ys;
    xs.reserve(clean_features.size() + adv_features.size());
    for (const auto& fv : clean_features) xs.push_back(&fv);
    for (const auto& fv : adv_features) xs.push_back(&fv);
    ys = clean_labels;
    ys.insert(ys.end(), adv_labels.begin(), adv_labels.end());
    train_epoch(model, xs, one_hot(ys, data.num_classes), cfg.train, order_rng);
  }
  return model;
}

std::vector<AdvSweepPoint> sweep_adv_count(const Classifier& start, const Dataset& data,
                                           const std::vector<int>& grid, const A2TConfig& base,
                                           const ConfusableTable& table,
                                           std::string_view eval_split, int threads) {
  if (grid.empty()) throw ConfigError("sweep_adv_count: empty grid");
  std::vector<AdvSweepPoint> out;
  for (int g : grid) {
    if (g < 0) throw ConfigError("sweep_adv_count: grid values must be non-negative");
    Classifier model;
    if (g == 0) {
      model = start;  // the undefended reference point
    } else {
      A2TConfig cfg = base;
      cfg.n_adv = g;
      model = a2t_train(start, data, cfg, table, threads);
    }
    AdvSweepPoint pt;
    pt.n_adv = g;
    const auto random_m =
        evaluate_attack(model, data, eval_split, AttackKind::Random, table, base.attack, threads);
    const auto greedy_m =
        evaluate_attack(model, data, eval_split, AttackKind::Greedy, table, base.attack, threads);
    pt.clean_accuracy = greedy_m.clean_accuracy;
    pt.acc_under_random = random_m.accuracy_under_attack;
    pt.acc_under_greedy = greedy_m.accuracy_under_attack;
    pt.asr_greedy = greedy_m.asr;
    out.push_back(pt);
  }
  return out;
}

void write_adv_sweep_csv(const std::string& path,
                         const std::vector<std::pair<std::uint64_t, AdvSweepPoint>>& rows) {
  std::string out = "n_adv,seed,clean_accuracy,acc_under_random,acc_under_greedy,asr_greedy\n";
  char buf[256];
  for (const auto& [seed, pt] : rows) {
    std::snprintf(buf, sizeof buf, "%d,%llu,%.6f,%.6f,%.6f,%.6f\n", pt.n_adv,
                  static_cast<unsigned long long>(seed), pt.clean_accuracy, pt.acc_under_random,
                  pt.acc_under_greedy, pt.asr_greedy);
    out += buf;
  }
  write_file_atomic(path, out);
}

double gradient_suspicion(const Classifier& model, const std::vector<std::string>& tokens) {
  if (tokens.empty()) return 0.0;
  const FeatureVector x = featurize(tokens, model.space);
  if (x.idx.empty()) return 0.0;

  Eigen::VectorXd z1 = model.b1;
  for (std::size_t j = 0; j < x.idx.size(); ++j) {
    z1.noalias() += x.val[j] * model.w1.col(x.idx[j]);
  }
  Eigen::VectorXd dz1;
  if (model.is_mlp()) {
    const Eigen::VectorXd h = z1.cwiseMax(0.0);
    Eigen::VectorXd p = softmax((model.w2 * h + model.b2).eval());
    p(argmax(p)) -= 1.0;
    dz1 = (model.w2.transpose() * p).cwiseProduct((z1.array() > 0.0).cast<double>().matrix());
  } else {
    dz1 = softmax(z1);
    dz1(argmax(dz1)) -= 1.0;
  }
  // Gradient w.r.t. active columns of w1 is dz1 * x_j per column; its
  // Frobenius norm factorizes.
  const double norm = dz1.norm() * std::sqrt(x.squared_norm());
  return norm / std::sqrt(static_cast<double>(tokens.size()));
}

double calibrate_detector(const Classifier& model, const Dataset& data, double percentile) {
  if (!(percentile >= 0.0 && percentile <= 100.0)) {
    throw ConfigError("calibrate_detector: percentile must be in [0, 100]");
  }
  const auto idx = split_indices(data, "dev");
  if (static_cast<int>(idx.size()) < 100) {
    throw ConfigError("calibrate_detector: need at least 100 dev docs");
  }
  std::vector<double> scores;
  scores.reserve(idx.size());
  for (int i : idx) {
    scores.push_back(gradient_suspicion(model, data.examples[static_cast<std::size_t>(i)].tokens));
  }
  std::sort(scores.begin(), scores.end());
  const int n = static_cast<int>(scores.size());
  const int k = static_cast<int>(std::ceil(percentile / 100.0 * n));
  if (k <= 0) return -1.0;  // below every score: flag everything
  return scores[static_cast<std::size_t>(std::min(k, n) - 1)];
}

double rank_auc(const std::vector<double>& negatives, const std::vector<double>& positives) {
  if (negatives.empty() || positives.empty()) {
    throw ConfigError("rank_auc: both score sets must be non-empty");
  }
  // Average ranks over the pooled sample; ties get the midrank.
  struct Tagged {
    double score;
    bool positive;
  };
  std::vector<Tagged> all;
  all.reserve(negatives.size() + positives.size());
  for (double s : negatives) all.push_back({s, false});
  for (double s : positives) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Tagged& a, const Tagged& b) {
    return a.score < b.score;
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t) {
      if (all[t].positive) rank_sum_pos += midrank;
    }
    i = j;
  }
  const double np = static_cast<double>(positives.size());
  const double nn = static_cast<double>(negatives.size());
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace dina
