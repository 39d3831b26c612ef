#include "dina/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dina/errors.hpp"
#include "dina/math.hpp"
#include "dina/parallel.hpp"
#include "dina/rng.hpp"

namespace dina {

namespace fs = std::filesystem;
using json = nlohmann::json;  // object keys serialize sorted, which keeps reports stable

namespace {

std::string trim_copy(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double_value(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': invalid number '" + value + "'");
}

long long parse_int_value(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    long long v = std::stoll(value, &pos);
    if (pos == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': invalid integer '" + value + "'");
}

std::uint64_t parse_u64_value(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    std::uint64_t v = std::stoull(value, &pos);
    if (pos == value.size()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': invalid unsigned integer '" + value + "'");
}

std::vector<int> parse_int_list_value(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim_copy(part);
    if (part.empty()) throw ConfigError("config key '" + key + "': empty list entry");
    out.push_back(static_cast<int>(parse_int_value(key, part)));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

// Shortest round-trip form, so a dumped config re-parses to the same doubles.
std::string fmt_double(double v) { return json(v).dump(); }

std::string fmt_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string noise_kind_name(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::SymmetricFlip: return "symmetric";
    case NoiseKind::AsymmetricFlip: return "asymmetric";
    case NoiseKind::AnnotatorConfusion: return "confusion";
  }
  return "symmetric";
}

PipelineConfig normalized(PipelineConfig cfg) {
  validate(cfg.features);
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  if (!(cfg.trust_threshold > 0.5 && cfg.trust_threshold <= 1.0)) {
    throw ConfigError("trust_threshold must lie in (0.5, 1]");
  }
  if (cfg.use_corpus &&
      (cfg.corpus.n_train <= 0 || cfg.corpus.n_dev <= 0 || cfg.corpus.n_test <= 0)) {
    throw ConfigError("corpus split sizes must be positive");
  }
  if (!(cfg.noise.rate >= 0.0 && cfg.noise.rate <= 1.0)) {
    throw ConfigError("noise.rate must lie in [0, 1]");
  }
  if (cfg.stage1_epochs < 0) throw ConfigError("stage1.epochs must be >= 0");
  if (cfg.stage1_learning_rate < 0.0) throw ConfigError("stage1.learning_rate must be >= 0");
  if (cfg.stage2_refit_epochs < 0) throw ConfigError("stage2.refit_epochs must be >= 0");
  if (cfg.stage3_learning_rate < 0.0) throw ConfigError("stage3.learning_rate must be >= 0");

  cfg.corpus.seed = derive_seed(cfg.seed, "corpus");
  cfg.noise.seed = derive_seed(cfg.seed, "noise");

  cfg.stage1.base = cfg.train;
  if (cfg.stage1_epochs > 0) cfg.stage1.base.epochs = cfg.stage1_epochs;
  if (cfg.stage1_learning_rate > 0.0) cfg.stage1.base.learning_rate = cfg.stage1_learning_rate;
  cfg.stage1.seed = derive_seed(cfg.seed, "stage1");

  cfg.stage2.refit = cfg.train;
  cfg.stage2.refit.epochs = 2;
  cfg.stage2.refit.l2_lambda = 0.0;
  if (cfg.stage2_refit_epochs > 0) cfg.stage2.refit.epochs = cfg.stage2_refit_epochs;
  cfg.stage2.seed = derive_seed(cfg.seed, "stage2");

  cfg.stage3.base = cfg.train;
  if (cfg.stage3_learning_rate > 0.0) cfg.stage3.base.learning_rate = cfg.stage3_learning_rate;
  cfg.stage3.seed = derive_seed(cfg.seed, "stage3");

  if (cfg.stage4_learning_rate < 0.0) throw ConfigError("stage4.learning_rate must be >= 0");
  cfg.stage4.train = cfg.train;
  if (cfg.stage4_learning_rate > 0.0) {
    cfg.stage4.train.learning_rate = cfg.stage4_learning_rate;
  }
  cfg.stage4.attack = cfg.eval_attack;
  cfg.stage4.attack.seed = derive_seed(cfg.seed, "stage4-attack");
  cfg.stage4.seed = derive_seed(cfg.seed, "stage4");

  cfg.eval_attack.seed = derive_seed(cfg.seed, "eval-attack");
  return cfg;
}

struct Paths {
  fs::path root;
  fs::path config;
  fs::path data;
  fs::path flipped;
  fs::path baseline_model;
  fs::path baseline_summary;
  fs::path stage1_dir;
  fs::path stage2_ann;
  fs::path stage2_post;
  fs::path stage2_relabel;
  fs::path stage2_summary;
  fs::path stage3_net0;
  fs::path stage3_net1;
  fs::path stage3_model;
  fs::path stage3_metrics;
  fs::path stage3_summary;
  fs::path stage4_model;
  fs::path report_json;
  fs::path report_txt;
};

Paths layout(const std::string& out_dir) {
  Paths p;
  p.root = fs::path(out_dir);
  p.config = p.root / "config.txt";
  p.data = p.root / "data" / "working.jsonl";
  p.flipped = p.root / "data" / "flipped.txt";
  p.baseline_model = p.root / "baseline" / "model.json";
  p.baseline_summary = p.root / "baseline" / "summary.json";
  p.stage1_dir = p.root / "stage1";
  p.stage2_ann = p.root / "stage2" / "annotations.jsonl";
  p.stage2_post = p.root / "stage2" / "posterior.csv";
  p.stage2_relabel = p.root / "stage2" / "relabeled.jsonl";
  p.stage2_summary = p.root / "stage2" / "summary.json";
  p.stage3_net0 = p.root / "stage3" / "net_0.json";
  p.stage3_net1 = p.root / "stage3" / "net_1.json";
  p.stage3_model = p.root / "stage3" / "model.json";
  p.stage3_metrics = p.root / "stage3" / "metrics.csv";
  p.stage3_summary = p.root / "stage3" / "summary.json";
  p.stage4_model = p.root / "stage4" / "model.json";
  p.report_json = p.root / "report.json";
  p.report_txt = p.root / "report.txt";
  return p;
}

fs::path learner_path(const Paths& p, int j) {
  return p.stage1_dir / ("learner_" + std::to_string(j) + ".json");
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_summary(const fs::path& path, const json& j) {
  write_file_atomic(path.string(), j.dump(2) + "\n");
}

json read_summary(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw DataError("malformed summary file " + path.string() + ": " + e.what());
  }
}

void write_flipped_ids(const fs::path& path, const std::set<std::string>& ids) {
  std::string body;
  for (const auto& id : ids) body += id + "\n";
  write_file_atomic(path.string(), body);
}

std::set<std::string> read_flipped_ids(const fs::path& path) {
  std::set<std::string> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.insert(line);
  }
  return out;
}

// One row per train-pool item. mu is written in round-trip form: the trusted
// split must survive a save/load cycle bit-exactly or resumed runs diverge.
void write_posterior_csv(const fs::path& path, const Dataset& pool, const Eigen::VectorXd& mu,
                         double tau) {
  std::string body = "id,mu,chosen_label,trusted\n";
  for (int i = 0; i < pool.size(); ++i) {
    double m = mu(i);
    int chosen = m >= 0.5 ? 1 : 0;
    int trusted = std::max(m, 1.0 - m) >= tau ? 1 : 0;
    body += pool.examples[static_cast<std::size_t>(i)].id;
    body += ",";
    body += fmt_double(m);
    body += ",";
    body += pool.class_names[static_cast<std::size_t>(chosen)];
    body += ",";
    body += std::to_string(trusted);
    body += "\n";
  }
  write_file_atomic(path.string(), body);
}

Eigen::VectorXd read_posterior_csv(const fs::path& path, const Dataset& pool) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  Eigen::VectorXd mu(pool.size());
  int row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (row >= pool.size()) throw DataError(path.string() + ": more rows than train items");
    std::size_t c1 = line.find(',');
    std::size_t c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw DataError(path.string() + ": malformed row " + std::to_string(row + 1));
    }
    std::string id = line.substr(0, c1);
    if (id != pool.examples[static_cast<std::size_t>(row)].id) {
      throw DataError(path.string() + ": row " + std::to_string(row + 1) +
                      " does not match the train pool (found id '" + id + "')");
    }
    try {
      mu(row) = parse_double_value("mu", line.substr(c1 + 1, c2 - c1 - 1));
    } catch (const ConfigError&) {
      throw DataError(path.string() + ": malformed mu in row " + std::to_string(row + 1));
    }
    ++row;
  }
  if (row != pool.size()) throw DataError(path.string() + ": fewer rows than train items");
  return mu;
}

std::vector<int> forced_positions(const Eigen::VectorXd& mu, double tau) {
  std::vector<int> out;
  for (int i = 0; i < mu.size(); ++i) {
    if (std::max(mu(i), 1.0 - mu(i)) < tau) out.push_back(i);
  }
  return out;
}

Dataset with_train_labels(const Dataset& base, const std::vector<int>& train_idx,
                          const Dataset& relabeled_pool) {
  Dataset out = base;
  for (std::size_t i = 0; i < train_idx.size(); ++i) {
    out.examples[static_cast<std::size_t>(train_idx[i])].label =
        relabeled_pool.examples[i].label;
  }
  return out;
}

json attack_json(const AttackMetrics& m) {
  json j;
  j["n"] = m.n;
  j["n_correct"] = m.n_correct;
  j["n_success"] = m.n_success;
  j["accuracy_under_attack"] = m.accuracy_under_attack;
  j["attack_success_rate"] = m.asr;
  j["mean_edits"] = m.mean_edits;
  j["mean_queries"] = m.mean_queries;
  return j;
}

json eval_json(const ModelEval& ev, const std::vector<std::string>& class_names) {
  json j;
  j["clean_accuracy"] = ev.clean_accuracy;
  json pcs = json::array();
  for (std::size_t c = 0; c < ev.per_class.size(); ++c) {
    json pc;
    pc["class"] = class_names[c];
    pc["precision"] = ev.per_class[c].precision;
    pc["recall"] = ev.per_class[c].recall;
    pc["f1"] = ev.per_class[c].f1;
    pcs.push_back(pc);
  }
  j["per_class"] = pcs;
  j["random_attack"] = attack_json(ev.random_attack);
  j["greedy_attack"] = attack_json(ev.greedy_attack);
  return j;
}

}  // namespace

void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") {
    cfg.seed = parse_u64_value(key, value);
  } else if (key == "threads") {
    cfg.threads = static_cast<int>(parse_int_value(key, value));
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else if (key == "data.path") {
    cfg.dataset_path = value;
    cfg.use_corpus = value.empty();
  } else if (key == "confusables.path") {
    cfg.confusable_path = value;
  } else if (key == "corpus.n_train") {
    cfg.corpus.n_train = static_cast<int>(parse_int_value(key, value));
  } else if (key == "corpus.n_dev") {
    cfg.corpus.n_dev = static_cast<int>(parse_int_value(key, value));
  } else if (key == "corpus.n_test") {
    cfg.corpus.n_test = static_cast<int>(parse_int_value(key, value));
  } else if (key == "corpus.spam_fraction") {
    cfg.corpus.spam_fraction = parse_double_value(key, value);
  } else if (key == "corpus.hard_fraction") {
    cfg.corpus.hard_fraction = parse_double_value(key, value);
  } else if (key == "noise.rate") {
    cfg.noise.rate = parse_double_value(key, value);
  } else if (key == "noise.kind") {
    if (value == "symmetric") {
      cfg.noise.kind = NoiseKind::SymmetricFlip;
    } else if (value == "asymmetric") {
      cfg.noise.kind = NoiseKind::AsymmetricFlip;
    } else {
      throw ConfigError("config key 'noise.kind': expected symmetric or asymmetric, got '" +
                        value + "'");
    }
  } else if (key == "features.dim") {
    cfg.features.dim = static_cast<int>(parse_int_value(key, value));
  } else if (key == "features.hash_seed") {
    cfg.features.hash_seed = parse_u64_value(key, value);
  } else if (key == "features.ngram_orders") {
    cfg.features.ngram_orders = parse_int_list_value(key, value);
  } else if (key == "train.epochs") {
    cfg.train.epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "train.batch_size") {
    cfg.train.batch_size = static_cast<int>(parse_int_value(key, value));
  } else if (key == "train.learning_rate") {
    cfg.train.learning_rate = parse_double_value(key, value);
  } else if (key == "train.l2_lambda") {
    cfg.train.l2_lambda = parse_double_value(key, value);
  } else if (key == "train.mlp_hidden") {
    cfg.train.mlp_hidden = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage1.learners") {
    cfg.stage1.k = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage1.subset_fraction") {
    cfg.stage1.subset_fraction = parse_double_value(key, value);
  } else if (key == "stage1.hidden_fraction") {
    cfg.stage1.hidden_fraction = parse_double_value(key, value);
  } else if (key == "stage1.pseudo_confidence") {
    cfg.stage1.pseudo_confidence = parse_double_value(key, value);
  } else if (key == "stage1.self_train_rounds") {
    cfg.stage1.self_train_rounds = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage1.epochs") {
    cfg.stage1_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage1.learning_rate") {
    cfg.stage1_learning_rate = parse_double_value(key, value);
  } else if (key == "stage2.max_iter") {
    cfg.stage2.max_iter = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage2.tol") {
    cfg.stage2.tol = parse_double_value(key, value);
  } else if (key == "stage2.refit_epochs") {
    cfg.stage2_refit_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "trust_threshold") {
    cfg.trust_threshold = parse_double_value(key, value);
  } else if (key == "stage3.warmup_epochs") {
    cfg.stage3.warmup_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage3.main_epochs") {
    cfg.stage3.main_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage3.clean_threshold") {
    cfg.stage3.clean_threshold = parse_double_value(key, value);
  } else if (key == "stage3.sharpen_temperature") {
    cfg.stage3.sharpen_temperature = parse_double_value(key, value);
  } else if (key == "stage3.mixup_alpha") {
    cfg.stage3.mixup_alpha = parse_double_value(key, value);
  } else if (key == "stage3.unlabeled_weight") {
    cfg.stage3.unlabeled_weight = parse_double_value(key, value);
  } else if (key == "stage3.unlabeled_ramp_epochs") {
    cfg.stage3.unlabeled_ramp_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage3.augmentations") {
    cfg.stage3.augmentations = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage3.token_dropout") {
    cfg.stage3.token_dropout = parse_double_value(key, value);
  } else if (key == "stage3.learning_rate") {
    cfg.stage3_learning_rate = parse_double_value(key, value);
  } else if (key == "stage4.n_adv") {
    cfg.stage4.n_adv = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage4.epochs") {
    cfg.stage4.epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "stage4.learning_rate") {
    cfg.stage4_learning_rate = parse_double_value(key, value);
  } else if (key == "attack.edit_budget_fraction") {
    cfg.eval_attack.edit_budget_fraction = parse_double_value(key, value);
  } else if (key == "attack.max_queries") {
    cfg.eval_attack.max_queries = static_cast<int>(parse_int_value(key, value));
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

PipelineConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  PipelineConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim_copy(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim_copy(line.substr(0, eq));
    std::string value = trim_copy(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
    }
    apply_config_entry(cfg, key, value);
  }
  return cfg;
}

// Every accepted key with its effective value, sorted. threads and out_dir are
// deliberately left out: neither may change the numbers, so neither should
// invalidate resumable artifacts.
std::string canonical_config(const PipelineConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["seed"] = std::to_string(cfg.seed);
  kv["data.path"] = cfg.dataset_path;
  kv["confusables.path"] = cfg.confusable_path;
  kv["corpus.n_train"] = std::to_string(cfg.corpus.n_train);
  kv["corpus.n_dev"] = std::to_string(cfg.corpus.n_dev);
  kv["corpus.n_test"] = std::to_string(cfg.corpus.n_test);
  kv["corpus.spam_fraction"] = fmt_double(cfg.corpus.spam_fraction);
  kv["corpus.hard_fraction"] = fmt_double(cfg.corpus.hard_fraction);
  kv["noise.rate"] = fmt_double(cfg.noise.rate);
  kv["noise.kind"] = noise_kind_name(cfg.noise.kind);
  kv["features.dim"] = std::to_string(cfg.features.dim);
  kv["features.hash_seed"] = std::to_string(cfg.features.hash_seed);
  kv["features.ngram_orders"] = fmt_int_list(cfg.features.ngram_orders);
  kv["train.epochs"] = std::to_string(cfg.train.epochs);
  kv["train.batch_size"] = std::to_string(cfg.train.batch_size);
  kv["train.learning_rate"] = fmt_double(cfg.train.learning_rate);
  kv["train.l2_lambda"] = fmt_double(cfg.train.l2_lambda);
  kv["train.mlp_hidden"] = std::to_string(cfg.train.mlp_hidden);
  kv["stage1.learners"] = std::to_string(cfg.stage1.k);
  kv["stage1.subset_fraction"] = fmt_double(cfg.stage1.subset_fraction);
  kv["stage1.hidden_fraction"] = fmt_double(cfg.stage1.hidden_fraction);
  kv["stage1.pseudo_confidence"] = fmt_double(cfg.stage1.pseudo_confidence);
  kv["stage1.self_train_rounds"] = std::to_string(cfg.stage1.self_train_rounds);
  kv["stage1.epochs"] = std::to_string(cfg.stage1_epochs);
  kv["stage1.learning_rate"] = fmt_double(cfg.stage1_learning_rate);
  kv["stage2.max_iter"] = std::to_string(cfg.stage2.max_iter);
  kv["stage2.tol"] = fmt_double(cfg.stage2.tol);
  kv["stage2.refit_epochs"] = std::to_string(cfg.stage2_refit_epochs);
  kv["trust_threshold"] = fmt_double(cfg.trust_threshold);
  kv["stage3.warmup_epochs"] = std::to_string(cfg.stage3.warmup_epochs);
  kv["stage3.main_epochs"] = std::to_string(cfg.stage3.main_epochs);
  kv["stage3.clean_threshold"] = fmt_double(cfg.stage3.clean_threshold);
  kv["stage3.sharpen_temperature"] = fmt_double(cfg.stage3.sharpen_temperature);
  kv["stage3.mixup_alpha"] = fmt_double(cfg.stage3.mixup_alpha);
  kv["stage3.unlabeled_weight"] = fmt_double(cfg.stage3.unlabeled_weight);
  kv["stage3.unlabeled_ramp_epochs"] = std::to_string(cfg.stage3.unlabeled_ramp_epochs);
  kv["stage3.augmentations"] = std::to_string(cfg.stage3.augmentations);
  kv["stage3.token_dropout"] = fmt_double(cfg.stage3.token_dropout);
  kv["stage3.learning_rate"] = fmt_double(cfg.stage3_learning_rate);
  kv["stage4.n_adv"] = std::to_string(cfg.stage4.n_adv);
  kv["stage4.epochs"] = std::to_string(cfg.stage4.epochs);
  kv["stage4.learning_rate"] = fmt_double(cfg.stage4_learning_rate);
  kv["attack.edit_budget_fraction"] = fmt_double(cfg.eval_attack.edit_budget_fraction);
  kv["attack.max_queries"] = std::to_string(cfg.eval_attack.max_queries);
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out += "\n";
  }
  return out;
}

std::string config_hash(const PipelineConfig& cfg) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical_config(cfg))));
  return buf;
}

std::string eval_report_json(const ModelEval& ev, const std::vector<std::string>& class_names) {
  return eval_json(ev, class_names).dump(2) + "\n";
}

const ConfusableTable& pipeline_table(const PipelineConfig& cfg, ConfusableTable& storage) {
  if (cfg.confusable_path.empty()) return builtin_confusable_table();
  storage = load_confusable_table(cfg.confusable_path);
  return storage;
}

ModelEval evaluate_model(const Classifier& model, const Dataset& data, std::string_view split,
                         const ConfusableTable& table, const AttackConfig& attack, int threads) {
  const auto idx = split_indices(data, split);
  if (idx.empty()) throw DataError("evaluation split '" + std::string(split) + "' is empty");
  const int k = data.num_classes;

  std::vector<int> preds(idx.size());
  parallel_for(static_cast<int>(idx.size()), threads, [&](int i) {
    const auto& ex = data.examples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    preds[static_cast<std::size_t>(i)] = argmax(model.predict_proba(featurize(ex.tokens, model.space)));
  });

  ModelEval ev;
  std::vector<int> tp(static_cast<std::size_t>(k), 0), fp(static_cast<std::size_t>(k), 0),
      fn(static_cast<std::size_t>(k), 0);
  int correct = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    int gold = data.examples[static_cast<std::size_t>(idx[i])].label;
    int pred = preds[i];
    if (pred == gold) {
      ++correct;
      ++tp[static_cast<std::size_t>(gold)];
    } else {
      ++fp[static_cast<std::size_t>(pred)];
      ++fn[static_cast<std::size_t>(gold)];
    }
  }
  ev.clean_accuracy = static_cast<double>(correct) / static_cast<double>(idx.size());
  ev.per_class.resize(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    auto& pc = ev.per_class[static_cast<std::size_t>(c)];
    int tpc = tp[static_cast<std::size_t>(c)];
    int denp = tpc + fp[static_cast<std::size_t>(c)];
    int denr = tpc + fn[static_cast<std::size_t>(c)];
    pc.precision = denp > 0 ? static_cast<double>(tpc) / denp : 0.0;
    pc.recall = denr > 0 ? static_cast<double>(tpc) / denr : 0.0;
    pc.f1 = pc.precision + pc.recall > 0.0
                ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
  }
  ev.random_attack = evaluate_attack(model, data, split, AttackKind::Random, table, attack, threads);
  ev.greedy_attack = evaluate_attack(model, data, split, AttackKind::Greedy, table, attack, threads);
  return ev;
}

CrowdStageOutput run_crowd_stages(const Dataset& noisy, const PipelineConfig& cfg0) {
  const PipelineConfig cfg = normalized(cfg0);
  const auto train_idx = split_indices(noisy, "train");
  if (train_idx.empty()) throw DataError("train split is empty");

  CrowdStageOutput out;
  out.ensemble = train_weak_ensemble(noisy, cfg.stage1, cfg.features, cfg.threads);

  const Dataset pool = subset(noisy, train_idx);
  out.annotations = synthesize_annotations(out.ensemble, pool, cfg.threads);
  const auto feats = featurize_all(pool, cfg.features, cfg.threads);
  out.lfc = lfc_em(out.annotations, feats, cfg.stage2, cfg.features);

  const Dataset trusted = select_trusted(pool, out.lfc.posterior, cfg.trust_threshold);
  out.trusted_count = trusted.size();
  const Dataset relabeled_pool = relabel_all(pool, out.lfc.posterior);
  out.relabeled = with_train_labels(noisy, train_idx, relabeled_pool);
  out.forced_unlabeled = forced_positions(out.lfc.posterior.mu, cfg.trust_threshold);
  return out;
}

DinaRunResult run_dina(const PipelineConfig& user_cfg, int first_stage, int last_stage,
                       bool resume) {
  if (first_stage < 1 || first_stage > 4 || last_stage < first_stage || last_stage > 4) {
    throw ConfigError("stage range must satisfy 1 <= first <= last <= 4");
  }
  const PipelineConfig cfg = normalized(user_cfg);
  if (cfg.out_dir.empty()) throw ConfigError("pipeline runs need an output directory");

  const Paths P = layout(cfg.out_dir);
  fs::create_directories(P.root / "data");
  fs::create_directories(P.root / "baseline");
  fs::create_directories(P.stage1_dir);
  fs::create_directories(P.root / "stage2");
  fs::create_directories(P.root / "stage3");
  fs::create_directories(P.root / "stage4");

  const std::string canon = canonical_config(cfg);
  if (fs::exists(P.config)) {
    if (read_text_file(P.config) != canon) {
      if (resume || first_stage > 1) {
        throw ConfigError("output directory '" + cfg.out_dir +
                          "' holds artifacts from a different config; refusing to mix them");
      }
      write_file_atomic(P.config.string(), canon);
    }
  } else {
    write_file_atomic(P.config.string(), canon);
  }

  ConfusableTable table_storage;
  const ConfusableTable& table = pipeline_table(cfg, table_storage);

  auto in_range = [&](int s) { return s >= first_stage && s <= last_stage; };

  // Working data: generated fresh on a full run, reused whenever the run
  // continues past earlier artifacts.
  Dataset working;
  std::set<std::string> flipped;
  const bool reuse_data = fs::exists(P.data) && (resume || first_stage > 1);
  if (reuse_data) {
    working = load_dataset(P.data.string());
    flipped = read_flipped_ids(P.flipped);
  } else {
    Dataset clean = cfg.use_corpus ? generate_synthetic_corpus(cfg.corpus)
                                   : load_dataset(cfg.dataset_path);
    NoiseInjection inj = inject_noise_split(clean, "train", cfg.noise);
    working = std::move(inj.dataset);
    flipped = std::set<std::string>(inj.flipped_ids.begin(), inj.flipped_ids.end());
    save_dataset(working, P.data.string());
    write_flipped_ids(P.flipped, flipped);
  }
  const auto train_idx = split_indices(working, "train");
  if (train_idx.empty()) throw DataError("train split is empty");
  const Dataset pool = subset(working, train_idx);

  DinaRunResult res;

  // Stage 1: weak-learner ensemble.
  std::vector<Classifier> ensemble;
  bool s1_have = true;
  for (int j = 0; j < cfg.stage1.k; ++j) s1_have = s1_have && fs::exists(learner_path(P, j));
  if (in_range(1) && !(resume && s1_have)) {
    try {
      ensemble = train_weak_ensemble(working, cfg.stage1, cfg.features, cfg.threads);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(std::string("stage 1 failed: ") + e.what());
    }
    for (int j = 0; j < cfg.stage1.k; ++j) {
      save_model(ensemble[static_cast<std::size_t>(j)], learner_path(P, j).string());
    }
  }
  auto load_ensemble = [&]() {
    if (!ensemble.empty()) return;
    for (int j = 0; j < cfg.stage1.k; ++j) {
      const fs::path lp = learner_path(P, j);
      if (!fs::exists(lp)) {
        throw StageError("stage 1 artifact missing: " + lp.string() + "; run earlier stages first");
      }
      ensemble.push_back(load_model(lp.string()));
    }
  };

  // Stage 2: synthesized annotations, reliability EM, trust split.
  std::optional<Dataset> relabeled;
  std::vector<int> forced;
  const bool s2_have = fs::exists(P.stage2_ann) && fs::exists(P.stage2_post) &&
                       fs::exists(P.stage2_relabel) && fs::exists(P.stage2_summary);
  if (in_range(2) && !(resume && s2_have)) {
    load_ensemble();
    try {
      AnnotationMatrix ann = synthesize_annotations(ensemble, pool, cfg.threads);
      save_annotations(ann, working, P.stage2_ann.string());
      const auto feats = featurize_all(pool, cfg.features, cfg.threads);
      const LfcResult lfc = lfc_em(ann, feats, cfg.stage2, cfg.features);
      write_posterior_csv(P.stage2_post, pool, lfc.posterior.mu, cfg.trust_threshold);

      const Dataset trusted = select_trusted(pool, lfc.posterior, cfg.trust_threshold);
      res.trusted_count = trusted.size();
      const Dataset relabeled_pool = relabel_all(pool, lfc.posterior);
      relabeled = with_train_labels(working, train_idx, relabeled_pool);
      save_dataset(*relabeled, P.stage2_relabel.string());
      forced = forced_positions(lfc.posterior.mu, cfg.trust_threshold);

      // Same gentle optimizer as the EM prior refit: a full-length run here
      // would re-memorize whatever label noise survived the trust filter.
      TrainConfig trusted_cfg = cfg.stage2.refit;
      trusted_cfg.seed = derive_seed(cfg.seed, "stage2-train");
      const Classifier trusted_model = train(trusted, trusted_cfg, cfg.features);
      res.stage2_dev = accuracy(trusted_model, working, "dev");

      json summary;
      summary["dev_accuracy"] = res.stage2_dev;
      summary["trusted_count"] = res.trusted_count;
      write_summary(P.stage2_summary, summary);
    } catch (const ConfigError&) {
      throw;
    } catch (const DataError& e) {
      throw StageError(std::string("stage 2 failed: ") + e.what());
    }
  }
  auto load_stage2 = [&]() {
    if (relabeled) return;
    if (!fs::exists(P.stage2_relabel) || !fs::exists(P.stage2_post) ||
        !fs::exists(P.stage2_summary)) {
      throw StageError("stage 2 artifacts missing under '" + cfg.out_dir +
                       "'; run earlier stages first");
    }
    relabeled = load_dataset(P.stage2_relabel.string());
    const Eigen::VectorXd mu = read_posterior_csv(P.stage2_post, pool);
    forced = forced_positions(mu, cfg.trust_threshold);
    const json summary = read_summary(P.stage2_summary);
    res.stage2_dev = summary.at("dev_accuracy").get<double>();
    res.trusted_count = summary.at("trusted_count").get<int>();
  };

  // Stage 3: loss-partitioned co-training on the relabeled pool.
  const bool s3_have = fs::exists(P.stage3_net0) && fs::exists(P.stage3_net1) &&
                       fs::exists(P.stage3_model) && fs::exists(P.stage3_summary);
  bool have_stage3_model = false;
  if (in_range(3) && !(resume && s3_have)) {
    load_stage2();
    try {
      LnlContext ctx;
      ctx.dev = &working;
      ctx.flipped_ids = &flipped;
      const LnlResult lnl =
          dividemix_train(*relabeled, cfg.stage3, cfg.features, &forced, &ctx, cfg.threads);
      save_model(lnl.networks.at(0), P.stage3_net0.string());
      save_model(lnl.networks.at(1), P.stage3_net1.string());
      res.stage3_model = lnl.collapsed();
      save_model(res.stage3_model, P.stage3_model.string());
      write_metrics_csv(P.stage3_metrics.string(), lnl.metrics, "dividemix", cfg.noise.rate,
                        cfg.seed);
      res.stage3_dev = lnl.eval_accuracy(working, "dev");
      json summary;
      summary["dev_accuracy"] = res.stage3_dev;
      write_summary(P.stage3_summary, summary);
      have_stage3_model = true;
    } catch (const ConfigError&) {
      throw;
    } catch (const DataError& e) {
      throw StageError(std::string("stage 3 failed: ") + e.what());
    }
  }
  auto load_stage3 = [&]() {
    if (have_stage3_model) return;
    if (!fs::exists(P.stage3_model) || !fs::exists(P.stage3_summary)) {
      throw StageError("stage 3 artifacts missing under '" + cfg.out_dir +
                       "'; run earlier stages first");
    }
    res.stage3_model = load_model(P.stage3_model.string());
    res.stage3_dev = read_summary(P.stage3_summary).at("dev_accuracy").get<double>();
    have_stage3_model = true;
  };

  // Stage 4: adversarial training from the collapsed checkpoint.
  bool have_final = false;
  if (in_range(4) && !(resume && fs::exists(P.stage4_model))) {
    load_stage3();
    load_stage2();
    try {
      res.final_model = a2t_train(res.stage3_model, *relabeled, cfg.stage4, table, cfg.threads);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(std::string("stage 4 failed: ") + e.what());
    }
    save_model(res.final_model, P.stage4_model.string());
    have_final = true;
  }

  // Report: baseline vs the defended models on the held-out test split.
  if (last_stage == 4) {
    load_stage3();
    if (!have_final) {
      if (!fs::exists(P.stage4_model)) {
        throw StageError("stage 4 artifact missing under '" + cfg.out_dir + "'");
      }
      res.final_model = load_model(P.stage4_model.string());
      have_final = true;
    }
    if (fs::exists(P.baseline_model) && fs::exists(P.baseline_summary)) {
      res.baseline = load_model(P.baseline_model.string());
      res.baseline_dev = read_summary(P.baseline_summary).at("dev_accuracy").get<double>();
    } else {
      TrainConfig base_cfg = cfg.train;
      base_cfg.seed = derive_seed(cfg.seed, "baseline");
      res.baseline = train(working, base_cfg, cfg.features);
      save_model(res.baseline, P.baseline_model.string());
      res.baseline_dev = accuracy(res.baseline, working, "dev");
      json summary;
      summary["dev_accuracy"] = res.baseline_dev;
      write_summary(P.baseline_summary, summary);
    }
    if (!relabeled) load_stage2();  // restores stage2_dev / trusted_count for the report

    res.final_dev = accuracy(res.final_model, working, "dev");
    res.baseline_eval =
        evaluate_model(res.baseline, working, "test", table, cfg.eval_attack, cfg.threads);
    res.stage3_eval =
        evaluate_model(res.stage3_model, working, "test", table, cfg.eval_attack, cfg.threads);
    res.final_eval =
        evaluate_model(res.final_model, working, "test", table, cfg.eval_attack, cfg.threads);

    json report;
    report["format"] = "dina-report";
    report["version"] = 1;
    report["config_hash"] = config_hash(cfg);
    report["seed"] = cfg.seed;
    report["test_size"] = static_cast<int>(split_indices(working, "test").size());
    json stages;
    stages["baseline_dev_accuracy"] = res.baseline_dev;
    stages["stage2_trusted_count"] = res.trusted_count;
    stages["stage2_dev_accuracy"] = res.stage2_dev;
    stages["stage3_dev_accuracy"] = res.stage3_dev;
    stages["final_dev_accuracy"] = res.final_dev;
    report["stages"] = stages;
    json models;
    models["baseline"] = eval_json(res.baseline_eval, working.class_names);
    models["stage3"] = eval_json(res.stage3_eval, working.class_names);
    models["final"] = eval_json(res.final_eval, working.class_names);
    report["models"] = models;
    res.report_json = report.dump(2) + "\n";

    char buf[256];
    std::string txt;
    txt += "pipeline report (config " + config_hash(cfg) + ", seed " + std::to_string(cfg.seed) +
           ")\n\n";
    std::snprintf(buf, sizeof buf, "  baseline dev accuracy  %.6f\n", res.baseline_dev);
    txt += buf;
    std::snprintf(buf, sizeof buf, "  trusted train items    %d\n", res.trusted_count);
    txt += buf;
    std::snprintf(buf, sizeof buf, "  stage2 dev accuracy    %.6f\n", res.stage2_dev);
    txt += buf;
    std::snprintf(buf, sizeof buf, "  stage3 dev accuracy    %.6f\n", res.stage3_dev);
    txt += buf;
    std::snprintf(buf, sizeof buf, "  final dev accuracy     %.6f\n", res.final_dev);
    txt += buf;
    txt += "\ntest split\n";
    std::snprintf(buf, sizeof buf, "  %-9s %9s %9s %9s %9s %9s\n", "model", "clean", "random",
                  "greedy", "asr", "edits");
    txt += buf;
    const std::pair<const char*, const ModelEval*> rows[] = {
        {"baseline", &res.baseline_eval}, {"stage3", &res.stage3_eval}, {"final", &res.final_eval}};
    for (const auto& [name, ev] : rows) {
      std::snprintf(buf, sizeof buf, "  %-9s %9.4f %9.4f %9.4f %9.4f %9.2f\n", name,
                    ev->clean_accuracy, ev->random_attack.accuracy_under_attack,
                    ev->greedy_attack.accuracy_under_attack, ev->greedy_attack.asr,
                    ev->greedy_attack.mean_edits);
      txt += buf;
    }
    res.report_text = txt;
    write_file_atomic(P.report_json.string(), res.report_json);
    write_file_atomic(P.report_txt.string(), res.report_text);
  }
  return res;
}

namespace {

const std::vector<std::string>& known_sweep_methods() {
  static const std::vector<std::string> methods = {"baseline", "plc",        "seal",
                                                   "dividemix", "stage2-lfc", "stage3-full"};
  return methods;
}

}  // namespace

std::vector<NoiseSweepRow> sweep_noise(const PipelineConfig& base,
                                       const std::vector<std::string>& methods,
                                       const std::vector<double>& rates, int n_seeds,
                                       int threads) {
  if (methods.empty()) throw ConfigError("sweep needs at least one method");
  for (const auto& m : methods) {
    const auto& known = known_sweep_methods();
    if (std::find(known.begin(), known.end(), m) == known.end()) {
      throw ConfigError("unknown sweep method '" + m + "'");
    }
  }
  if (rates.empty()) throw ConfigError("sweep needs at least one noise rate");
  for (double r : rates) {
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("sweep noise rates must lie in [0, 1]");
  }
  if (n_seeds < 3) throw ConfigError("noise sweep medians need at least 3 seeds");

  struct Cell {
    double rate;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (double r : rates) {
    for (int i = 0; i < n_seeds; ++i) cells.push_back({r, base.seed + static_cast<std::uint64_t>(i)});
  }

  const bool want_crowd =
      std::find(methods.begin(), methods.end(), "stage2-lfc") != methods.end() ||
      std::find(methods.begin(), methods.end(), "stage3-full") != methods.end();

  std::vector<std::vector<NoiseSweepRow>> per_cell(cells.size());
  parallel_for(static_cast<int>(cells.size()), threads, [&](int ci) {
    const Cell cell = cells[static_cast<std::size_t>(ci)];
    PipelineConfig cfg = base;
    cfg.seed = cell.seed;
    cfg.noise.rate = cell.rate;
    cfg.threads = 1;
    cfg = normalized(cfg);

    Dataset clean = cfg.use_corpus ? generate_synthetic_corpus(cfg.corpus)
                                   : load_dataset(cfg.dataset_path);
    NoiseInjection inj = inject_noise_split(clean, "train", cfg.noise);
    const Dataset& working = inj.dataset;

    std::optional<CrowdStageOutput> crowd;
    if (want_crowd) crowd = run_crowd_stages(working, cfg);

    auto& rows = per_cell[static_cast<std::size_t>(ci)];
    for (const auto& method : methods) {
      double acc = 0.0;
      if (method == "baseline") {
        TrainConfig t = cfg.train;
        t.seed = derive_seed(cfg.seed, "baseline");
        acc = accuracy(train(working, t, cfg.features), working, "dev");
      } else if (method == "plc") {
        PlcConfig pc;
        pc.base = cfg.train;
        pc.seed = derive_seed(cfg.seed, "plc");
        acc = plc_train(working, pc, cfg.features).eval_accuracy(working, "dev");
      } else if (method == "seal") {
        SealConfig sc;
        sc.base = cfg.train;
        sc.seed = derive_seed(cfg.seed, "seal");
        acc = seal_train(working, sc, cfg.features).eval_accuracy(working, "dev");
      } else if (method == "dividemix") {
        DivideMixConfig dc = cfg.stage3;
        dc.seed = derive_seed(cfg.seed, "dividemix");
        acc = dividemix_train(working, dc, cfg.features, nullptr, nullptr, 1)
                  .eval_accuracy(working, "dev");
      } else if (method == "stage2-lfc") {
        const auto pool_idx = split_indices(working, "train");
        const Dataset pool = subset(working, pool_idx);
        const Dataset trusted = select_trusted(pool, crowd->lfc.posterior, cfg.trust_threshold);
        TrainConfig t = cfg.stage2.refit;
        t.seed = derive_seed(cfg.seed, "stage2-train");
        acc = accuracy(train(trusted, t, cfg.features), working, "dev");
      } else {  // stage3-full
        acc = dividemix_train(crowd->relabeled, cfg.stage3, cfg.features,
                              &crowd->forced_unlabeled, nullptr, 1)
                  .eval_accuracy(working, "dev");
      }
      rows.push_back({method, cell.rate, cell.seed, acc});
    }
  });

  std::vector<NoiseSweepRow> out;
  for (const auto& rows : per_cell) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

void write_noise_sweep_csv(const std::string& path, const std::vector<NoiseSweepRow>& rows) {
  std::string body = "method,noise_rate,seed,dev_accuracy\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.4f,%llu,%.6f\n", r.method.c_str(), r.rate,
                  static_cast<unsigned long long>(r.seed), r.dev_accuracy);
    body += buf;
  }
  write_file_atomic(path, body);
}

void write_noise_sweep_medians_csv(const std::string& path,
                                   const std::vector<NoiseSweepRow>& rows) {
  // First-appearance order of (method, rate) groups keeps the file stable.
  std::vector<std::pair<std::string, double>> keys;
  std::map<std::pair<std::string, double>, std::vector<double>> groups;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.method, r.rate);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(r.dev_accuracy);
  }
  std::string body = "method,noise_rate,median_dev_accuracy\n";
  char buf[160];
  for (const auto& key : keys) {
    std::snprintf(buf, sizeof buf, "%s,%.4f,%.6f\n", key.first.c_str(), key.second,
                  median(groups.at(key)));
    body += buf;
  }
  write_file_atomic(path, body);
}

std::vector<std::pair<std::uint64_t, AdvSweepPoint>> sweep_adv(const PipelineConfig& base,
                                                               const std::vector<int>& grid,
                                                               int n_seeds, int threads) {
  if (grid.empty()) throw ConfigError("adversarial sweep needs a non-empty grid");
  for (int g : grid) {
    if (g < 0) throw ConfigError("adversarial sweep grid entries must be >= 0");
  }
  if (n_seeds < 1) throw ConfigError("sweep needs at least one seed");

  std::vector<std::vector<std::pair<std::uint64_t, AdvSweepPoint>>> per_seed(
      static_cast<std::size_t>(n_seeds));
  parallel_for(n_seeds, threads, [&](int i) {
    PipelineConfig cfg = base;
    cfg.seed = base.seed + static_cast<std::uint64_t>(i);
    cfg.threads = 1;
    cfg = normalized(cfg);

    ConfusableTable storage;
    const ConfusableTable& table = pipeline_table(cfg, storage);

    Dataset clean = cfg.use_corpus ? generate_synthetic_corpus(cfg.corpus)
                                   : load_dataset(cfg.dataset_path);
    NoiseInjection inj = inject_noise_split(clean, "train", cfg.noise);
    const Dataset& working = inj.dataset;

    const CrowdStageOutput crowd = run_crowd_stages(working, cfg);
    const LnlResult lnl = dividemix_train(crowd.relabeled, cfg.stage3, cfg.features,
                                          &crowd.forced_unlabeled, nullptr, 1);
    const Classifier start = lnl.collapsed();

    const auto pts = sweep_adv_count(start, crowd.relabeled, grid, cfg.stage4, table, "test", 1);
    auto& rows = per_seed[static_cast<std::size_t>(i)];
    for (const auto& pt : pts) rows.emplace_back(cfg.seed, pt);
  });

  std::vector<std::pair<std::uint64_t, AdvSweepPoint>> out;
  for (const auto& rows : per_seed) out.insert(out.end(), rows.begin(), rows.end());
  return out;
}

}  // namespace dina
