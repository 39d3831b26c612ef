#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dina/attack.hpp"
#include "dina/classifier.hpp"
#include "dina/crowd.hpp"
#include "dina/dataset.hpp"
#include "dina/defense.hpp"
#include "dina/lnl.hpp"

namespace dina {

// Everything a run needs. Stage seeds are always derived from the master seed,
// so one integer pins the entire pipeline.
struct PipelineConfig {
  CorpusSpec corpus;
  bool use_corpus = true;       // false: load dataset_path instead of generating
  std::string dataset_path;
  NoiseSpec noise;              // applied to the train split
  FeatureSpace features;
  TrainConfig train;            // shared optimizer settings; stage bases copy it
  WeakEnsembleConfig stage1;
  int stage1_epochs = 0;        // 0 = inherit train.epochs for the weak learners
  double stage1_learning_rate = 0.0;  // 0 = inherit train.learning_rate
  LfcConfig stage2;
  double trust_threshold = 0.9;
  int stage2_refit_epochs = 0;  // 0 = inherit the EM refit epoch count for the
                                // trusted-subset model; kept small so the refit
                                // cannot re-memorize residual label noise
  DivideMixConfig stage3;
  double stage3_learning_rate = 0.0;  // 0 = inherit train.learning_rate; the
                                      // co-training nets need calibrated
                                      // probabilities, hot rates saturate them
  A2TConfig stage4;
  double stage4_learning_rate = 0.0;  // 0 = inherit train.learning_rate; the
                                      // adversarial stage fine-tunes, it must not retrain
  AttackConfig eval_attack;     // evaluation-time attacks
  std::string confusable_path;  // empty: builtin table
  std::string out_dir;
  std::uint64_t seed = 0;
  int threads = 1;
};

// Flat "key = value" lines, '#' comments. Unknown keys are errors.
PipelineConfig parse_config_file(const std::string& path);
void apply_config_entry(PipelineConfig& cfg, const std::string& key, const std::string& value);

// Sorted key=value dump of every effective setting; its FNV-1a hash stamps
// artifacts so resumed runs can refuse mismatched configs.
std::string canonical_config(const PipelineConfig& cfg);
std::string config_hash(const PipelineConfig& cfg);

const ConfusableTable& pipeline_table(const PipelineConfig& cfg, ConfusableTable& storage);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct ModelEval {
  double clean_accuracy = 0.0;
  std::vector<ClassMetrics> per_class;  // clean predictions
  AttackMetrics random_attack;
  AttackMetrics greedy_attack;
};

ModelEval evaluate_model(const Classifier& model, const Dataset& data, std::string_view split,
                         const ConfusableTable& table, const AttackConfig& attack, int threads);

// Pretty-printed JSON rendering of one evaluation (clean + both attacks).
std::string eval_report_json(const ModelEval& ev, const std::vector<std::string>& class_names);

// Stage I + II: weak ensemble, synthesized annotations, LFC EM, trust split.
struct CrowdStageOutput {
  std::vector<Classifier> ensemble;
  AnnotationMatrix annotations;
  LfcResult lfc;
  Dataset relabeled;                  // full dataset, train labels from the posterior
  std::vector<int> forced_unlabeled;  // train positions below the trust threshold
  int trusted_count = 0;
};

CrowdStageOutput run_crowd_stages(const Dataset& noisy, const PipelineConfig& cfg);

struct DinaRunResult {
  Classifier baseline;
  Classifier stage3_model;  // collapsed co-trained pair
  Classifier final_model;   // after adversarial training
  double baseline_dev = 0.0;
  double stage2_dev = 0.0;  // plain model on trusted subset
  double stage3_dev = 0.0;
  double final_dev = 0.0;
  int trusted_count = 0;
  ModelEval baseline_eval;  // test split
  ModelEval stage3_eval;
  ModelEval final_eval;
  std::string report_json;
  std::string report_text;
};

// Runs stages first..last (1..4), persisting artifacts under cfg.out_dir.
// With resume=true, stages whose artifacts already exist are loaded instead of
// recomputed; the stored config hash must match. The evaluation report is
// written when stage 4 completes.
DinaRunResult run_dina(const PipelineConfig& cfg, int first_stage = 1, int last_stage = 4,
                       bool resume = false);

struct NoiseSweepRow {
  std::string method;
  double rate = 0.0;
  std::uint64_t seed = 0;
  double dev_accuracy = 0.0;
};

// Methods: baseline, plc, seal, dividemix (raw noisy labels), stage2-lfc
// (plain training on the crowd-trusted subset), stage3-full (crowd stages then
// co-training). Each (rate, seed) cell shares one corpus across methods.
std::vector<NoiseSweepRow> sweep_noise(const PipelineConfig& base,
                                       const std::vector<std::string>& methods,
                                       const std::vector<double>& rates, int n_seeds,
                                       int threads);
void write_noise_sweep_csv(const std::string& path, const std::vector<NoiseSweepRow>& rows);
void write_noise_sweep_medians_csv(const std::string& path,
                                   const std::vector<NoiseSweepRow>& rows);

// Per seed: crowd stages + co-training build the starting checkpoint, then one
// adversarial-training run per grid value. Rows come back grouped by seed in
// grid order.
std::vector<std::pair<std::uint64_t, AdvSweepPoint>> sweep_adv(const PipelineConfig& base,
                                                               const std::vector<int>& grid,
                                                               int n_seeds, int threads);

}  // namespace dina
