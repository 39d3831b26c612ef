#include "dina/crowd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <json.hpp>

#include "dina/errors.hpp"
#include "dina/math.hpp"
#include "dina/parallel.hpp"
#include "dina/rng.hpp"

namespace dina {

namespace {
constexpr double kParamClamp = 1e-6;
constexpr double kProbClamp = 1e-12;

double clamp01(double v, double eps) { return std::min(std::max(v, eps), 1.0 - eps); }
}  // namespace

void save_annotations(const AnnotationMatrix& ann, const Dataset& data, const std::string& path) {
  std::string out;
  for (int i = 0; i < ann.n_items(); ++i) {
    nlohmann::ordered_json j;
    j["id"] = ann.item_ids[static_cast<std::size_t>(i)];
    nlohmann::ordered_json votes;
    for (int a = 0; a < ann.n_annotators(); ++a) {
      const int v = ann.votes(i, a);
      if (v == kMissingVote) continue;
      votes[ann.annotator_ids[static_cast<std::size_t>(a)]] =
          data.class_names.at(static_cast<std::size_t>(v));
    }
    j["votes"] = votes;
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

AnnotationMatrix load_annotations(const std::string& path, const Dataset& data) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open annotations '" + path + "'");
  std::string line;
  int line_no = 0;
  std::vector<std::pair<std::string, std::map<std::string, int>>> rows;
  std::set<std::string> annotators;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::map<std::string, int> votes;
      for (const auto& [annotator, vote] : j.at("votes").items()) {
        votes[annotator] = data.label_index(vote.get<std::string>());
        annotators.insert(annotator);
      }
      rows.emplace_back(j.at("id").get<std::string>(), std::move(votes));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  AnnotationMatrix ann;
  ann.annotator_ids.assign(annotators.begin(), annotators.end());
  ann.votes = Eigen::MatrixXi::Constant(static_cast<int>(rows.size()),
                                        static_cast<int>(ann.annotator_ids.size()),
                                        kMissingVote);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ann.item_ids.push_back(rows[i].first);
    for (int a = 0; a < ann.n_annotators(); ++a) {
      const auto it = rows[i].second.find(ann.annotator_ids[static_cast<std::size_t>(a)]);
      if (it != rows[i].second.end()) ann.votes(static_cast<int>(i), a) = it->second;
    }
  }
  return ann;
}

std::uint64_t weak_learner_seed(std::uint64_t ensemble_seed, int learner) {
  return derive_seed(ensemble_seed, "weak-train", static_cast<std::uint64_t>(learner));
}

std::vector<Classifier> train_weak_ensemble(const Dataset& data, const WeakEnsembleConfig& cfg,
                                            const FeatureSpace& space, int threads) {
  if (cfg.k < 1) throw ConfigError("train_weak_ensemble: k must be positive");
  if (!(cfg.hidden_fraction >= 0.0 && cfg.hidden_fraction < 1.0)) {
    throw ConfigError("train_weak_ensemble: hidden_fraction must be in [0, 1)");
  }
  if (!(cfg.pseudo_confidence >= 0.0 && cfg.pseudo_confidence <= 1.0)) {
    throw ConfigError("train_weak_ensemble: pseudo_confidence must be in [0, 1]");
  }
  if (cfg.self_train_rounds < 0) {
    throw ConfigError("train_weak_ensemble: self_train_rounds must be non-negative");
  }
  const auto train_idx = split_indices(data, "train");
  if (train_idx.empty()) throw DataError("train_weak_ensemble: dataset has no train split");
  const Dataset tr = subset(data, train_idx);
  const auto all_features = featurize_all(tr, space, threads);
  std::vector<int> all_labels(static_cast<std::size_t>(tr.size()));
  for (int i = 0; i < tr.size(); ++i) {
    all_labels[static_cast<std::size_t>(i)] = tr.examples[static_cast<std::size_t>(i)].label;
  }

  const auto subsets =
      split_subsets(tr.size(), cfg.k, cfg.subset_fraction, derive_seed(cfg.seed, "subsets"));
  std::vector<Classifier> ensemble(static_cast<std::size_t>(cfg.k));

  parallel_for(cfg.k, threads, [&](int j) {
    const auto& sub = subsets[static_cast<std::size_t>(j)];
    const int sub_n = static_cast<int>(sub.size());
    const int hidden_n = static_cast<int>(std::llround(cfg.hidden_fraction * sub_n));
    Rng hide_rng(derive_seed(cfg.seed, "weak-hide", static_cast<std::uint64_t>(j)));
    const auto hidden_pos = hide_rng.sample_indices(sub_n, hidden_n);
    std::vector<bool> is_hidden(static_cast<std::size_t>(sub_n), false);
    for (int p : hidden_pos) is_hidden[static_cast<std::size_t>(p)] = true;

    std::vector<int> visible, hidden;
    for (int p = 0; p < sub_n; ++p) {
      (is_hidden[static_cast<std::size_t>(p)] ? hidden : visible)
          .push_back(sub[static_cast<std::size_t>(p)]);
    }
    if (visible.empty()) {
      throw DataError("train_weak_ensemble: learner " + std::to_string(j) +
                      " has no visible examples");
    }
    {
      std::set<int> seen;
      for (int i : visible) seen.insert(all_labels[static_cast<std::size_t>(i)]);
      if (seen.size() < 2) {
        throw DataError("train_weak_ensemble: learner " + std::to_string(j) +
                        " subset does not contain both classes");
      }
    }

    TrainConfig learner_cfg = cfg.base;
    learner_cfg.seed = weak_learner_seed(cfg.seed, j);

    auto fit = [&](const std::vector<int>& idx, const std::vector<int>& labels) {
      std::vector<FeatureVector> xs;
      xs.reserve(idx.size());
      for (int i : idx) xs.push_back(all_features[static_cast<std::size_t>(i)]);
      return train_featurized(xs, labels, data.num_classes, learner_cfg, space);
    };

    std::vector<int> visible_labels;
    for (int i : visible) visible_labels.push_back(all_labels[static_cast<std::size_t>(i)]);
    Classifier model = fit(visible, visible_labels);

    // Each round rebuilds the pseudo-label set from scratch and retrains from
    // scratch, so the learner depends only on (subset, seed, rounds).
    for (int round = 0; round < cfg.self_train_rounds; ++round) {
      std::vector<int> idx = visible;
      std::vector<int> labels = visible_labels;
      for (int i : hidden) {
        const Eigen::VectorXd p = model.predict_proba(all_features[static_cast<std::size_t>(i)]);
        const int pred = argmax(p);
        if (p(pred) >= cfg.pseudo_confidence) {
          idx.push_back(i);
          labels.push_back(pred);
        }
      }
      model = fit(idx, labels);
    }
    ensemble[static_cast<std::size_t>(j)] = std::move(model);
  });
  return ensemble;
}

AnnotationMatrix synthesize_annotations(const std::vector<Classifier>& ensemble,
                                        const Dataset& pool, int threads) {
  if (ensemble.empty()) throw ConfigError("synthesize_annotations: empty ensemble");
  AnnotationMatrix ann;
  for (const auto& ex : pool.examples) ann.item_ids.push_back(ex.id);
  for (std::size_t j = 0; j < ensemble.size(); ++j) {
    ann.annotator_ids.push_back("learner-" + std::to_string(j));
  }
  ann.votes.resize(pool.size(), static_cast<int>(ensemble.size()));
  const auto features = featurize_all(pool, ensemble.front().space, threads);
  parallel_for(pool.size(), threads, [&](int i) {
    for (std::size_t j = 0; j < ensemble.size(); ++j) {
      ann.votes(i, static_cast<int>(j)) =
          ensemble[j].predict(features[static_cast<std::size_t>(i)]);
    }
  });
  return ann;
}

double lfc_item_posterior(double p, const std::vector<int>& votes,
                          const Eigen::VectorXd& sensitivity,
                          const Eigen::VectorXd& specificity) {
  p = clamp01(p, kProbClamp);
  double log_pos = std::log(p);
  double log_neg = std::log(1.0 - p);
  for (std::size_t j = 0; j < votes.size(); ++j) {
    if (votes[j] == kMissingVote) continue;
    const double a = sensitivity(static_cast<Eigen::Index>(j));
    const double b = specificity(static_cast<Eigen::Index>(j));
    if (votes[j] == 1) {
      log_pos += std::log(a);
      log_neg += std::log(1.0 - b);
    } else {
      log_pos += std::log(1.0 - a);
      log_neg += std::log(b);
    }
  }
  return std::exp(log_pos - log_sum_exp2(log_pos, log_neg));
}

LfcResult lfc_em(const AnnotationMatrix& ann, const std::vector<FeatureVector>& features,
                 const LfcConfig& cfg, const FeatureSpace& space) {
  const int n = ann.n_items();
  const int m = ann.n_annotators();
  if (n == 0 || m == 0) throw DataError("lfc_em: empty annotation matrix");
  if (static_cast<int>(features.size()) != n) {
    throw DataError("lfc_em: features and annotations misaligned");
  }
  if (cfg.max_iter < 1) throw ConfigError("lfc_em: max_iter must be positive");
  for (int i = 0; i < n; ++i) {
    int present = 0;
    for (int j = 0; j < m; ++j) {
      const int v = ann.votes(i, j);
      if (v == kMissingVote) continue;
      if (v != 0 && v != 1) throw ConfigError("lfc_em: votes must be binary");
      ++present;
    }
    if (present == 0) {
      throw DataError("lfc_em: item " + ann.item_ids[static_cast<std::size_t>(i)] +
                      " has no votes");
    }
  }

  LfcResult out;
  TrainConfig refit_cfg = cfg.refit;
  refit_cfg.l2_lambda = 0.0;
  out.model = make_classifier(space, 2, refit_cfg);
  out.params.sensitivity = Eigen::VectorXd::Constant(m, 0.5);
  out.params.specificity = Eigen::VectorXd::Constant(m, 0.5);

  // Identifiability needs vote variation; a matrix of identical votes gets the
  // majority answer directly.
  {
    int first = kMissingVote;
    bool uniform = true;
    for (int i = 0; i < n && uniform; ++i) {
      for (int j = 0; j < m; ++j) {
        const int v = ann.votes(i, j);
        if (v == kMissingVote) continue;
        if (first == kMissingVote) first = v;
        if (v != first) {
          uniform = false;
          break;
        }
      }
    }
    if (uniform) {
      std::cerr << "warning: lfc_em: all votes identical, returning majority labels\n";
      out.posterior.degenerate = true;
      out.posterior.mu = Eigen::VectorXd::Constant(
          n, first == 1 ? 1.0 - kParamClamp : kParamClamp);
      out.params.sensitivity.setConstant(1.0 - kParamClamp);
      out.params.specificity.setConstant(1.0 - kParamClamp);
      return out;
    }
  }

  Eigen::VectorXd mu(n);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    int present = 0;
    for (int j = 0; j < m; ++j) {
      if (ann.votes(i, j) == kMissingVote) continue;
      sum += ann.votes(i, j);
      ++present;
    }
    mu(i) = sum / static_cast<double>(present);
  }

  std::vector<const FeatureVector*> xs(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) xs[i] = &features[i];

  auto classifier_term = [&](const Classifier& model) {
    double q = 0.0;
    for (int i = 0; i < n; ++i) {
      const double p = clamp01(model.predict_proba(features[static_cast<std::size_t>(i)])(1),
                               kProbClamp);
      q += mu(i) * std::log(p) + (1.0 - mu(i)) * std::log(1.0 - p);
    }
    return q;
  };

  double prev_ll = 0.0;
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    // M step: annotator reliabilities, restricted to each annotator's votes.
    for (int j = 0; j < m; ++j) {
      double num_a = 0.0, den_a = 0.0, num_b = 0.0, den_b = 0.0;
      for (int i = 0; i < n; ++i) {
        const int v = ann.votes(i, j);
        if (v == kMissingVote) continue;
        num_a += mu(i) * v;
        den_a += mu(i);
        num_b += (1.0 - mu(i)) * (1 - v);
        den_b += 1.0 - mu(i);
      }
      out.params.sensitivity(j) = clamp01(den_a > 0.0 ? num_a / den_a : 0.5, kParamClamp);
      out.params.specificity(j) = clamp01(den_b > 0.0 ? num_b / den_b : 0.5, kParamClamp);
    }

    // M step: classifier prior, guarded so the EM objective never moves down.
    {
      Eigen::MatrixXd targets(n, 2);
      targets.col(1) = mu;
      targets.col(0) = 1.0 - mu.array();
      const double q_before = classifier_term(out.model);
      const Classifier backup = out.model;
      Rng order_rng(derive_seed(cfg.seed, "lfc-refit", static_cast<std::uint64_t>(iter)));
      for (int e = 0; e < refit_cfg.epochs; ++e) {
        train_epoch(out.model, xs, targets, refit_cfg, order_rng);
      }
      if (classifier_term(out.model) < q_before) out.model = backup;
    }

    // E step plus the observed-data log likelihood at the new parameters.
    double ll = 0.0;
    std::vector<int> votes_i(static_cast<std::size_t>(m));
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < m; ++j) votes_i[static_cast<std::size_t>(j)] = ann.votes(i, j);
      const double p = clamp01(out.model.predict_proba(features[static_cast<std::size_t>(i)])(1),
                               kProbClamp);
      double log_pos = std::log(p);
      double log_neg = std::log(1.0 - p);
      for (int j = 0; j < m; ++j) {
        const int v = votes_i[static_cast<std::size_t>(j)];
        if (v == kMissingVote) continue;
        const double a = out.params.sensitivity(j);
        const double b = out.params.specificity(j);
        log_pos += v == 1 ? std::log(a) : std::log(1.0 - a);
        log_neg += v == 1 ? std::log(1.0 - b) : std::log(b);
      }
      const double lse = log_sum_exp2(log_pos, log_neg);
      mu(i) = std::exp(log_pos - lse);
      ll += lse;
    }
    out.posterior.log_likelihoods.push_back(ll);
    if (iter > 0 && std::abs(ll - prev_ll) / std::max(1.0, std::abs(prev_ll)) < cfg.tol) {
      out.posterior.converged = true;
      break;
    }
    prev_ll = ll;
  }
  out.posterior.mu = mu;
  return out;
}

Dataset select_trusted(const Dataset& pool, const CrowdPosterior& posterior, double tau_trust) {
  if (!(tau_trust >= 0.0 && tau_trust <= 1.0)) {
    throw ConfigError("select_trusted: tau_trust must be in [0, 1]");
  }
  if (posterior.mu.size() != pool.size()) {
    throw DataError("select_trusted: posterior and pool misaligned");
  }
  Dataset out;
  out.num_classes = pool.num_classes;
  out.class_names = pool.class_names;
  for (int i = 0; i < pool.size(); ++i) {
    const double mu = posterior.mu(i);
    if (std::max(mu, 1.0 - mu) >= tau_trust) {
      LabeledExample ex = pool.examples[static_cast<std::size_t>(i)];
      ex.label = mu >= 0.5 ? 1 : 0;
      out.examples.push_back(std::move(ex));
    }
  }
  if (out.examples.empty()) {
    throw DataError("select_trusted: no items reach the trust threshold");
  }
  return out;
}

Dataset relabel_all(const Dataset& pool, const CrowdPosterior& posterior) {
  if (posterior.mu.size() != pool.size()) {
    throw DataError("relabel_all: posterior and pool misaligned");
  }
  Dataset out = pool;
  for (int i = 0; i < out.size(); ++i) {
    out.examples[static_cast<std::size_t>(i)].label = posterior.mu(i) >= 0.5 ? 1 : 0;
  }
  return out;
}

}  // namespace dina
