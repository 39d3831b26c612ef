#include "dina/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "dina/errors.hpp"
#include "dina/math.hpp"
#include "dina/parallel.hpp"
#include "dina/rng.hpp"
#include "dina/text.hpp"

namespace dina {

namespace {

void validate_entry(const std::string& key, const std::string& replacement,
                    const std::string& where) {
  if (tokenize(key).size() != 1) {
    throw ConfigError(where + ": key '" + key + "' must be a single token");
  }
  const auto rep = tokenize(replacement);
  if (rep.empty() || rep.size() > 2) {
    throw ConfigError(where + ": replacement '" + replacement + "' must be 1 or 2 tokens");
  }
  if (replacement == key) {
    throw ConfigError(where + ": replacement equals its key '" + key + "'");
  }
}

void validate_config(const AttackConfig& cfg) {
  if (!(cfg.edit_budget_fraction > 0.0 && cfg.edit_budget_fraction <= 1.0)) {
    throw ConfigError("attack: edit_budget_fraction must be in (0, 1]");
  }
  if (cfg.max_queries < 1) throw ConfigError("attack: max_queries must be positive");
}

// Edited docs are tracked as per-position cells: an edit replaces one original
// token with the candidate's tokens, so edits at different positions never
// interfere and the edit count is exact.
std::vector<std::string> flatten(const std::vector<std::vector<std::string>>& cells) {
  std::vector<std::string> out;
  for (const auto& cell : cells) out.insert(out.end(), cell.begin(), cell.end());
  return out;
}

std::vector<std::vector<std::string>> to_cells(const std::vector<std::string>& tokens) {
  std::vector<std::vector<std::string>> cells;
  cells.reserve(tokens.size());
  for (const auto& t : tokens) cells.push_back({t});
  return cells;
}

}  // namespace

const ConfusableTable& builtin_confusable_table() {
  static const ConfusableTable table = [] {
    ConfusableTable t;
    auto add = [&t](const char* key, std::initializer_list<const char*> reps) {
      for (const char* r : reps) t.entries[key].push_back(r);
    };
    add("a", {"@", "\xD0\xB0"});            // cyrillic a
    add("b", {"6"});
    add("c", {"\xD1\x81"});                  // cyrillic es
    add("d", {"cl"});
    add("e", {"3", "\xD0\xB5"});            // cyrillic ie
    add("f", {"\xC6\x92"});                  // latin f with hook
    add("g", {"9"});
    add("i", {"1", "\xD1\x96"});            // cyrillic dotted i
    add("l", {"1"});
    add("m", {"rn"});
    add("n", {"\xCE\xB7"});                  // greek eta
    add("o", {"0", "\xD0\xBE"});            // cyrillic o
    add("p", {"\xD1\x80"});                  // cyrillic er
    add("q", {"9"});
    add("r", {"\xD0\xB3"});                  // cyrillic ghe
    add("s", {"$", "5"});
    add("t", {"+"});
    add("u", {"v"});
    add("w", {"vv"});
    add("x", {"\xD1\x85"});                  // cyrillic ha
    add("y", {"\xD1\x83"});                  // cyrillic u
    add("0", {"o"});
    add("1", {"l"});
    add("5", {"s"});
    add("9", {"g"});
    add("\xE5\x8A\xA0", {"\xE5\x8A\x9B\xE5\x8F\xA3"});  // CJK add -> force+mouth
    for (const auto& [key, reps] : t.entries) {
      for (const auto& r : reps) validate_entry(key, r, "builtin confusable table");
    }
    return t;
  }();
  return table;
}

ConfusableTable load_confusable_table(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open confusable table '" + path + "'");
  ConfusableTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      throw ConfigError(path + ": line " + std::to_string(line_no) +
                        ": expected 'token<TAB>replacement'");
    }
    const std::string key = line.substr(0, tab);
    const std::string rep = line.substr(tab + 1);
    validate_entry(key, rep, path + ": line " + std::to_string(line_no));
    table.entries[key].push_back(rep);
  }
  if (table.entries.empty()) throw ConfigError(path + ": table has no entries");
  return table;
}

void save_confusable_table(const ConfusableTable& table, const std::string& path) {
  std::string out;
  for (const auto& [key, reps] : table.entries) {
    for (const auto& r : reps) {
      out += key;
      out += '\t';
      out += r;
      out += '\n';
    }
  }
  write_file_atomic(path, out);
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "random") return AttackKind::Random;
  if (name == "greedy") return AttackKind::Greedy;
  throw ConfigError("unknown attack kind '" + std::string(name) + "' (random|greedy)");
}

int edit_budget(const AttackConfig& cfg, int doc_len) {
  validate_config(cfg);
  return std::max(1, static_cast<int>(std::ceil(cfg.edit_budget_fraction *
                                                static_cast<double>(doc_len))));
}

AttackResult random_attack(const QueryFn& query, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg) {
  validate_config(cfg);
  AttackResult res;
  res.perturbed = tokens;
  const Eigen::VectorXd p0 = query(tokens);
  res.queries = 1;
  res.original_prediction = argmax(p0);
  res.final_prediction = res.original_prediction;
  if (res.original_prediction != true_label) return res;  // nothing to flip

  const int budget = edit_budget(cfg, static_cast<int>(tokens.size()));
  Rng rng(cfg.seed);
  auto cells = to_cells(tokens);
  std::vector<int> order(tokens.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (int pos : order) {
    if (res.edits >= budget) break;
    const auto it = table.entries.find(tokens[static_cast<std::size_t>(pos)]);
    if (it == table.entries.end()) continue;
    const auto& reps = it->second;
    cells[static_cast<std::size_t>(pos)] =
        tokenize(reps[static_cast<std::size_t>(rng.below(reps.size()))]);
    ++res.edits;
  }
  res.perturbed = flatten(cells);
  res.final_prediction = argmax(query(res.perturbed));
  res.queries = 2;
  res.success = res.final_prediction != res.original_prediction;
  return res;
}

std::vector<int> importance_rank(const QueryFn& query, const std::vector<std::string>& tokens,
                                 int true_label, int* queries) {
  const int len = static_cast<int>(tokens.size());
  int q = 0;
  const Eigen::VectorXd base = query(tokens);
  ++q;
  std::vector<double> delta(static_cast<std::size_t>(len));
  auto masked = tokens;
  for (int i = 0; i < len; ++i) {
    const std::string keep = masked[static_cast<std::size_t>(i)];
    masked[static_cast<std::size_t>(i)] = mask_token();
    delta[static_cast<std::size_t>(i)] = base(true_label) - query(masked)(true_label);
    ++q;
    masked[static_cast<std::size_t>(i)] = keep;
  }
  std::vector<int> order(static_cast<std::size_t>(len));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return delta[static_cast<std::size_t>(a)] > delta[static_cast<std::size_t>(b)];
  });
  if (queries) *queries = q;
  return order;
}

AttackResult greedy_attack(const QueryFn& query, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg) {
  validate_config(cfg);
  AttackResult res;
  res.perturbed = tokens;
  const Eigen::VectorXd p0 = query(tokens);
  res.queries = 1;
  res.original_prediction = argmax(p0);
  res.final_prediction = res.original_prediction;
  if (res.original_prediction != true_label) return res;

  const int len = static_cast<int>(tokens.size());
  const int budget = edit_budget(cfg, len);

  // Importance pass shares the query budget with the substitution pass.
  std::vector<double> delta(static_cast<std::size_t>(len), 0.0);
  {
    auto masked = tokens;
    for (int i = 0; i < len && res.queries < cfg.max_queries; ++i) {
      const std::string keep = masked[static_cast<std::size_t>(i)];
      masked[static_cast<std::size_t>(i)] = mask_token();
      delta[static_cast<std::size_t>(i)] = p0(true_label) - query(masked)(true_label);
      ++res.queries;
      masked[static_cast<std::size_t>(i)] = keep;
    }
  }
  std::vector<int> order(static_cast<std::size_t>(len));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return delta[static_cast<std::size_t>(a)] > delta[static_cast<std::size_t>(b)];
  });

  auto cells = to_cells(tokens);
  double best_p = p0(true_label);
  for (int pos : order) {
    if (res.edits >= budget || res.queries >= cfg.max_queries) break;
    if (res.final_prediction != true_label) break;
    const auto it = table.entries.find(tokens[static_cast<std::size_t>(pos)]);
    if (it == table.entries.end()) continue;

    int best_cand = -1;
    double best_cand_p = best_p;
    int best_cand_pred = res.final_prediction;
    for (std::size_t c = 0; c < it->second.size(); ++c) {
      if (res.queries >= cfg.max_queries) break;
      auto trial = cells;
      trial[static_cast<std::size_t>(pos)] = tokenize(it->second[c]);
      const Eigen::VectorXd p = query(flatten(trial));
      ++res.queries;
      if (p(true_label) < best_cand_p) {  // strict decrease only
        best_cand = static_cast<int>(c);
        best_cand_p = p(true_label);
        best_cand_pred = argmax(p);
      }
    }
    if (best_cand >= 0) {
      cells[static_cast<std::size_t>(pos)] =
          tokenize(it->second[static_cast<std::size_t>(best_cand)]);
      ++res.edits;
      best_p = best_cand_p;
      res.final_prediction = best_cand_pred;
    }
  }
  res.perturbed = flatten(cells);
  res.success = res.final_prediction != res.original_prediction;
  return res;
}

namespace {
QueryFn model_query(const Classifier& model) {
  return [&model](const std::vector<std::string>& tokens) {
    return model.predict_proba(tokens);
  };
}
}  // namespace

AttackResult random_attack(const Classifier& model, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg) {
  return random_attack(model_query(model), tokens, true_label, table, cfg);
}

AttackResult greedy_attack(const Classifier& model, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg) {
  return greedy_attack(model_query(model), tokens, true_label, table, cfg);
}

AttackMetrics evaluate_attack(const Classifier& model, const Dataset& data,
                              std::string_view split, AttackKind kind,
                              const ConfusableTable& table, const AttackConfig& cfg,
                              int threads, std::vector<AttackResult>* results) {
  validate_config(cfg);
  const auto idx = split_indices(data, split);
  if (idx.empty()) {
    throw DataError("evaluate_attack: empty split '" + std::string(split) + "'");
  }
  std::vector<AttackResult> res(idx.size());
  parallel_for(static_cast<int>(idx.size()), threads, [&](int i) {
    const auto& ex = data.examples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
    AttackConfig doc_cfg = cfg;
    doc_cfg.seed = derive_seed(cfg.seed, "attack-doc", static_cast<std::uint64_t>(i));
    res[static_cast<std::size_t>(i)] =
        kind == AttackKind::Random
            ? random_attack(model, ex.tokens, ex.label, table, doc_cfg)
            : greedy_attack(model, ex.tokens, ex.label, table, doc_cfg);
  });

  AttackMetrics m;
  m.n = static_cast<int>(idx.size());
  double edits = 0.0, queries = 0.0;
  int under_attack_correct = 0;
  for (std::size_t i = 0; i < res.size(); ++i) {
    const int gold = data.examples[static_cast<std::size_t>(idx[i])].label;
    if (res[i].original_prediction == gold) {
      ++m.n_correct;
      if (res[i].success) ++m.n_success;
      edits += res[i].edits;
      queries += res[i].queries;
    }
    if (res[i].final_prediction == gold) ++under_attack_correct;
  }
  m.clean_accuracy = static_cast<double>(m.n_correct) / m.n;
  m.accuracy_under_attack = static_cast<double>(under_attack_correct) / m.n;
  m.asr = m.n_correct > 0 ? static_cast<double>(m.n_success) / m.n_correct : 0.0;
  m.mean_edits = m.n_correct > 0 ? edits / m.n_correct : 0.0;
  m.mean_queries = m.n_correct > 0 ? queries / m.n_correct : 0.0;
  if (results) *results = std::move(res);
  return m;
}

void write_attack_report(const std::string& path, const Dataset& data, std::string_view split,
                         const std::vector<AttackResult>& results) {
  const auto idx = split_indices(data, split);
  if (idx.size() != results.size()) {
    throw DataError("write_attack_report: results do not align with split");
  }
  std::string out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& ex = data.examples[static_cast<std::size_t>(idx[i])];
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["success"] = results[i].success;
    j["edits"] = results[i].edits;
    j["queries"] = results[i].queries;
    j["original"] = ex.text;
    j["perturbed"] = join_tokens(results[i].perturbed);
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace dina
