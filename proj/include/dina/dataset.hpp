#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dina {

struct LabeledExample {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;  // unicode-scalar decomposition of text
  int label = 0;
  std::string split;                        // "train", "dev" or "test"
  std::map<std::string, int> annotations;   // annotator id -> class index
};

struct Dataset {
  int num_classes = 2;
  std::vector<std::string> class_names = {"benign", "spam"};
  std::vector<LabeledExample> examples;

  int size() const { return static_cast<int>(examples.size()); }
  int label_index(std::string_view name) const;  // DataError on unknown name
};

std::vector<int> split_indices(const Dataset& data, std::string_view split);
Dataset subset(const Dataset& data, const std::vector<int>& indices);

// Tunable shape of the synthetic corpus. Messages are short lowercase game-chat
// lines. Spam carries contact handles, channel names and sale offers. An
// optional hard_fraction of each class is a word mixture where the own-class
// vocabulary outnumbers the other class's by exactly one word; such documents
// are irreducibly ambiguous, which stresses any method that filters by loss, so
// the default corpus has none.
struct CorpusSpec {
  int n_train = 20000;
  int n_dev = 2000;
  int n_test = 1000;
  double spam_fraction = 0.5;
  double hard_fraction = 0.0;
  std::uint64_t seed = 0;
};

Dataset generate_synthetic_corpus(const CorpusSpec& spec);

enum class NoiseKind { SymmetricFlip, AsymmetricFlip, AnnotatorConfusion };

struct NoiseSpec {
  double rate = 0.0;
  NoiseKind kind = NoiseKind::SymmetricFlip;
  // AnnotatorConfusion only: one row-stochastic KxK matrix per simulated annotator.
  std::vector<Eigen::MatrixXd> confusion;
  std::uint64_t seed = 0;
};

struct NoiseInjection {
  Dataset dataset;
  std::vector<std::string> flipped_ids;  // provenance, never serialized with the data
};

// Symmetric flip corrupts exactly round(rate * n) distinct examples, each to a
// uniformly random different class. Asymmetric flips round(rate * spam_count)
// spam examples to benign. AnnotatorConfusion fills per-annotator votes from
// the confusion matrices and sets labels to the majority vote (ties keep the
// original label). The input dataset is never modified.
NoiseInjection inject_noise(const Dataset& data, const NoiseSpec& spec);

// Same corruption restricted to one split; count = round(rate * split size).
NoiseInjection inject_noise_split(const Dataset& data, std::string_view split,
                                  const NoiseSpec& spec);

// JSONL: header record {"format":"dina-dataset","version":1,...} then one
// record per example with string label names. UTF-8, LF line endings.
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

// k index subsets of {0..n-1}, each of size round(fraction * n), drawn without
// replacement within a subset; subsets may overlap each other. Sorted ascending.
std::vector<std::vector<int>> split_subsets(int n, int k, double fraction,
                                            std::uint64_t seed);

// Writes path + ".partial" then renames, so a crash never leaves a truncated
// file under the final name.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace dina
