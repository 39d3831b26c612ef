#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dina/classifier.hpp"
#include "dina/dataset.hpp"

namespace dina {

// Token -> visually confusable replacements. Every replacement is one or two
// scalar tokens and never equals its key.
struct ConfusableTable {
  std::map<std::string, std::vector<std::string>> entries;

  bool has(const std::string& token) const { return entries.count(token) > 0; }
};

// Homoglyph analogs (Cyrillic/Greek lookalikes, digit swaps) plus multi-token
// decompositions like m -> rn.
const ConfusableTable& builtin_confusable_table();

// TSV: token <TAB> replacement, one candidate per line, '#' comments.
ConfusableTable load_confusable_table(const std::string& path);
void save_confusable_table(const ConfusableTable& table, const std::string& path);

enum class AttackKind { Random, Greedy };

AttackKind parse_attack_kind(std::string_view name);  // "random" | "greedy"

struct AttackConfig {
  double edit_budget_fraction = 0.15;  // of token count, ceil-rounded, min 1
  int max_queries = 500;               // greedy: total model queries per doc
  std::uint64_t seed = 0;              // random attack position/candidate draws
};

int edit_budget(const AttackConfig& cfg, int doc_len);

struct AttackResult {
  std::vector<std::string> perturbed;
  int original_prediction = 0;
  int final_prediction = 0;
  bool success = false;  // prediction flipped on an originally correct doc
  int edits = 0;
  int queries = 0;
};

// Black-box interface: tokens in, class probabilities out.
using QueryFn = std::function<Eigen::VectorXd(const std::vector<std::string>&)>;

// Substitutes random covered positions (a shuffled walk, so at most doc-length
// draws) up to the budget, then queries once. Exactly 2 queries per attempted
// doc. Docs the model already misclassifies are returned untouched with
// queries = 1.
AttackResult random_attack(const QueryFn& query, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg);

// Positions sorted by the drop in true-class probability when the token is
// replaced by the mask; ties break toward the lower index. Costs doc length
// + 1 queries (reported through *queries when given).
std::vector<int> importance_rank(const QueryFn& query, const std::vector<std::string>& tokens,
                                 int true_label, int* queries = nullptr);

// Walks positions in importance order, tries every table candidate at each,
// keeps the one that strictly decreases the true-class probability the most,
// stops on flip, exhausted budget, or the query cap.
AttackResult greedy_attack(const QueryFn& query, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg);

AttackResult random_attack(const Classifier& model, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg);
AttackResult greedy_attack(const Classifier& model, const std::vector<std::string>& tokens,
                           int true_label, const ConfusableTable& table,
                           const AttackConfig& cfg);

struct AttackMetrics {
  int n = 0;          // docs evaluated
  int n_correct = 0;  // clean-correct docs, i.e. attacks attempted
  int n_success = 0;
  double clean_accuracy = 0.0;
  double accuracy_under_attack = 0.0;  // final predictions vs gold
  double asr = 0.0;                    // n_success / n_correct, 0 when no doc is correct
  double mean_edits = 0.0;             // over attempted docs
  double mean_queries = 0.0;           // over attempted docs
};

// Attacks every split doc the model classifies correctly; misclassified docs
// pass through untouched, which keeps accuracy-under-attack <= clean accuracy
// by construction. Per-doc seeds derive from cfg.seed and the doc position.
AttackMetrics evaluate_attack(const Classifier& model, const Dataset& data,
                              std::string_view split, AttackKind kind,
                              const ConfusableTable& table, const AttackConfig& cfg,
                              int threads = 1, std::vector<AttackResult>* results = nullptr);

// JSONL rows {"id","success","edits","queries","original","perturbed"},
// aligned with the split's doc order.
void write_attack_report(const std::string& path, const Dataset& data, std::string_view split,
                         const std::vector<AttackResult>& results);

}  // namespace dina
