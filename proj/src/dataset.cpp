#include "dina/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dina/errors.hpp"
#include "dina/rng.hpp"
#include "dina/text.hpp"

namespace dina {

int Dataset::label_index(std::string_view name) const {
  for (int i = 0; i < static_cast<int>(class_names.size()); ++i) {
    if (class_names[static_cast<std::size_t>(i)] == name) return i;
  }
  throw DataError("unknown label name '" + std::string(name) + "'");
}

std::vector<int> split_indices(const Dataset& data, std::string_view split) {
  std::vector<int> idx;
  for (int i = 0; i < data.size(); ++i) {
    if (data.examples[static_cast<std::size_t>(i)].split == split) idx.push_back(i);
  }
  return idx;
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.class_names = data.class_names;
  out.examples.reserve(indices.size());
  for (int i : indices) out.examples.push_back(data.examples[static_cast<std::size_t>(i)]);
  return out;
}

namespace {

const std::vector<std::string>& spam_verbs() {
  static const std::vector<std::string> v = {"add",  "contact", "msg",   "dm",
                                             "ping", "find",    "reach", "whisper"};
  return v;
}

const std::vector<std::string>& spam_channels() {
  static const std::vector<std::string> v = {"wechat", "weixin",  "telegram", "signal",
                                             "qq",     "discord", "skype",    "kik",
                                             "viber",  "zalo"};
  return v;
}

const std::vector<std::string>& spam_offers() {
  static const std::vector<std::string> v = {
      "cheap gold",     "free coins",  "top up bonus", "boost service",
      "rare skins",     "power leveling", "gift codes", "discount gems",
      "easy wins",      "account deals", "vip unlock",  "instant levels"};
  return v;
}

const std::vector<std::string>& spam_prices() {
  static const std::vector<std::string> v = {"only 5 usd", "9.99 per 100k",
                                             "half price today", "first order free",
                                             "2 for 1 deal"};
  return v;
}

const std::vector<std::string>& benign_greetings() {
  static const std::vector<std::string> v = {"hi",  "hello", "hey",       "yo",      "gg",
                                             "good game", "lol", "haha", "nice one"};
  return v;
}

const std::vector<std::string>& benign_phrases() {
  static const std::vector<std::string> v = {
      "anyone up for ranked",        "nice play",
      "that boss was brutal",        "who wants to queue",
      "im lagging so bad",           "lets push mid",
      "need a healer for raid",      "brb two minutes",
      "this map again",              "my ping is 200",
      "need 2 more for the dungeon", "cover the left flank",
      "save your ult for the tank",  "whos got the key",
      "watch the sniper",            "good round everyone",
      "that drop rate is cruel",     "i keep missing my combos",
      "the patch nerfed my build",   "queue times are awful tonight",
      "my controller died mid fight","we almost had that one",
      "rotate to the tower",         "ward the river please",
      "nice clutch",                 "im done for tonight",
      "same lobby again lol",        "the servers feel laggy",
      "grats on the level",          "unlucky run",
      "lets try the event mode",     "carry me please",
      "top frag again",              "my build is trolling",
      "report that afk",             "make space in the squad",
      "push before the respawn",     "hold the point",
      "wait for the cooldown",       "group up at the gate"};
  return v;
}

std::string random_handle(Rng& rng) {
  static const char letters[] = "abcdefghijklmnopqrstuvwxyz";
  static const char alnum[] = "abcdefghijklmnopqrstuvwxyz0123456789";
  const int len = 5 + static_cast<int>(rng.below(4));
  std::string h;
  h.push_back(letters[rng.below(26)]);
  for (int i = 1; i < len; ++i) h.push_back(alnum[rng.below(36)]);
  return h;
}

// Single words that occur only in spam templates / only in benign chatter; hard
// docs mix them so the class is decided by a one-word count margin.
const std::vector<std::string>& spam_mix_words() {
  static const std::vector<std::string> v = {"gold",  "coins", "skins",    "boost",
                                             "gems",  "codes", "vip",      "cheap",
                                             "bonus", "wins",  "discount", "deals"};
  return v;
}

const std::vector<std::string>& benign_mix_words() {
  static const std::vector<std::string> v = {"queue",  "healer", "raid",   "dungeon",
                                             "flank",  "sniper", "tank",   "clutch",
                                             "lobby",  "tower",  "river",  "combos"};
  return v;
}

// Word mixtures where the own-class vocabulary outnumbers the other class's by
// exactly one, so the decision is a count margin rather than any single giveaway
// token. Deliberately nothing else: no handles, no frame words, no punctuation.
// Every token here also occurs in easy documents, so a model that never trains
// on the mixtures still carries usable weights for them.
std::string hard_doc(Rng& rng, const std::vector<std::string>& own,
                     const std::vector<std::string>& other) {
  const int m = 2 + static_cast<int>(rng.below(2));
  std::vector<int> own_idx(own.size()), other_idx(other.size());
  std::iota(own_idx.begin(), own_idx.end(), 0);
  std::iota(other_idx.begin(), other_idx.end(), 0);
  rng.shuffle(own_idx);
  rng.shuffle(other_idx);
  std::vector<std::string> words;
  for (int i = 0; i <= m; ++i) words.push_back(own[static_cast<std::size_t>(own_idx[i])]);
  for (int i = 0; i < m; ++i) words.push_back(other[static_cast<std::size_t>(other_idx[i])]);
  rng.shuffle(words);
  std::string mix = words[0];
  for (std::size_t i = 1; i < words.size(); ++i) mix += " " + words[i];
  return mix;
}

// Bare word lists of one class's vocabulary: sell lists on the spam side, loot
// or role lists on the benign side. Both classes emit them at the same rate so
// the list shape itself (short standalone words, dense word boundaries) carries
// no class evidence; only which words appear does.
std::string word_list(Rng& rng, const std::vector<std::string>& words) {
  const int len = 4 + static_cast<int>(rng.below(4));
  std::vector<int> idx(words.size());
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  std::string out = words[static_cast<std::size_t>(idx[0])];
  for (int i = 1; i < len; ++i) out += " " + words[static_cast<std::size_t>(idx[i])];
  return out;
}

// Random handles appear in both classes at the same share so that an
// unfamiliar character string by itself carries no class evidence; only the
// surrounding vocabulary does.
std::string templated_spam(Rng& rng) {
  if (rng.bernoulli(0.18)) return word_list(rng, spam_mix_words());
  const std::string& verb = spam_verbs()[rng.below(spam_verbs().size())];
  const std::string& chan = spam_channels()[rng.below(spam_channels().size())];
  const std::string& offer = spam_offers()[rng.below(spam_offers().size())];
  switch (rng.below(5)) {
    case 0: return verb + " me on " + chan + " " + random_handle(rng) + " for " + offer;
    case 1: return offer + " " + spam_prices()[rng.below(spam_prices().size())] + " " + verb +
                   " " + chan;
    case 2: return "best " + offer + " on " + chan + " " + verb + " " + random_handle(rng) +
                   " now";
    case 3: return verb + " " + chan + " " + offer + " " +
                   spam_prices()[rng.below(spam_prices().size())];
    default: return "get " + offer + " " + verb + " me on " + chan;
  }
}

std::string casual_benign(Rng& rng) {
  if (rng.bernoulli(0.18)) return word_list(rng, benign_mix_words());
  // Benign traffic mentions other players by handle too: friend requests and
  // callouts. They share random tags with spam, so an unfamiliar string alone
  // cannot separate the classes.
  const double u = rng.uniform();
  if (u < 0.18) {
    const std::string id = random_handle(rng);
    switch (rng.below(4)) {
      case 0: return "add me in game my tag is " + id;
      case 1: return "friend request sent my tag is " + id;
      case 2: return "add my tag " + id + " for the guild";
      default: return "my gamertag is " + id + " add me";
    }
  }
  if (u < 0.40) {
    const std::string id = random_handle(rng);
    switch (rng.below(6)) {
      case 0: return "inv " + id + " to the party";
      case 1: return "kick " + id + " hes afk again";
      case 2: return id + " carried us that round";
      case 3: return "gg " + id + " nice game";
      case 4: return "anyone seen " + id + " online today";
      default: return id + " join voice when you can";
    }
  }
  std::string text;
  if (rng.bernoulli(0.5)) {
    text = benign_greetings()[rng.below(benign_greetings().size())];
    text += " ";
  }
  text += benign_phrases()[rng.below(benign_phrases().size())];
  if (rng.bernoulli(0.35)) {
    text += " ";
    text += benign_phrases()[rng.below(benign_phrases().size())];
  }
  return text;
}

void generate_split(Dataset& out, const CorpusSpec& spec, const std::string& split, int n,
                    std::uint64_t split_index) {
  Rng rng(derive_seed(spec.seed, "corpus-split", split_index));
  const int n_spam = static_cast<int>(std::llround(spec.spam_fraction * n));
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n_spam; ++i) labels[static_cast<std::size_t>(i)] = 1;
  rng.shuffle(labels);
  for (int i = 0; i < n; ++i) {
    LabeledExample ex;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%06d", split.c_str(), i);
    ex.id = buf;
    ex.split = split;
    ex.label = labels[static_cast<std::size_t>(i)];
    const bool hard = rng.bernoulli(spec.hard_fraction);
    if (ex.label == 1) {
      ex.text = hard ? hard_doc(rng, spam_mix_words(), benign_mix_words()) : templated_spam(rng);
    } else {
      ex.text = hard ? hard_doc(rng, benign_mix_words(), spam_mix_words()) : casual_benign(rng);
    }
    ex.tokens = tokenize(ex.text);
    out.examples.push_back(std::move(ex));
  }
}

}  // namespace

Dataset generate_synthetic_corpus(const CorpusSpec& spec) {
  if (spec.n_train < 1 || spec.n_dev < 1 || spec.n_test < 1) {
    throw ConfigError("generate_synthetic_corpus: split sizes must be positive");
  }
  if (!(spec.spam_fraction >= 0.0 && spec.spam_fraction <= 1.0)) {
    throw ConfigError("generate_synthetic_corpus: spam_fraction must be in [0, 1]");
  }
  if (!(spec.hard_fraction >= 0.0 && spec.hard_fraction <= 1.0)) {
    throw ConfigError("generate_synthetic_corpus: hard_fraction must be in [0, 1]");
  }

  Dataset out;
  out.num_classes = 2;
  out.class_names = {"benign", "spam"};
  out.examples.reserve(static_cast<std::size_t>(spec.n_train + spec.n_dev + spec.n_test));
  generate_split(out, spec, "train", spec.n_train, 0);
  generate_split(out, spec, "dev", spec.n_dev, 1);
  generate_split(out, spec, "test", spec.n_test, 2);
  return out;
}

namespace {

int categorical(Rng& rng, const Eigen::VectorXd& probs) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (int k = 0; k < probs.size(); ++k) {
    acc += probs(k);
    if (u < acc) return k;
  }
  return static_cast<int>(probs.size()) - 1;
}

NoiseInjection inject_noise_indices(const Dataset& data, const std::vector<int>& idx,
                                    const NoiseSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate <= 1.0)) {
    throw ConfigError("inject_noise: rate must be in [0, 1]");
  }
  NoiseInjection out;
  out.dataset = data;
  const int k = out.dataset.num_classes;

  if (spec.kind == NoiseKind::SymmetricFlip) {
    const int n_flip = static_cast<int>(std::llround(spec.rate * static_cast<double>(idx.size())));
    Rng rng(derive_seed(spec.seed, "noise-flip"));
    const auto chosen = rng.sample_indices(static_cast<int>(idx.size()), n_flip);
    for (int c : chosen) {
      auto& ex = out.dataset.examples[static_cast<std::size_t>(idx[static_cast<std::size_t>(c)])];
      int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
      if (other >= ex.label) ++other;
      ex.label = other;
      out.flipped_ids.push_back(ex.id);
    }
    return out;
  }

  if (spec.kind == NoiseKind::AsymmetricFlip) {
    if (k != 2) throw ConfigError("inject_noise: asymmetric flips need a binary dataset");
    std::vector<int> spam;
    for (int i : idx) {
      if (out.dataset.examples[static_cast<std::size_t>(i)].label == 1) spam.push_back(i);
    }
    const int n_flip = static_cast<int>(std::llround(spec.rate * static_cast<double>(spam.size())));
    Rng rng(derive_seed(spec.seed, "noise-flip"));
    for (int c : rng.sample_indices(static_cast<int>(spam.size()), n_flip)) {
      auto& ex = out.dataset.examples[static_cast<std::size_t>(spam[static_cast<std::size_t>(c)])];
      ex.label = 0;
      out.flipped_ids.push_back(ex.id);
    }
    return out;
  }

  // AnnotatorConfusion: votes drawn from each annotator's confusion row for the
  // true label; the observed label becomes the majority vote.
  if (spec.confusion.empty()) {
    throw ConfigError("inject_noise: annotator confusion needs at least one matrix");
  }
  for (const auto& m : spec.confusion) {
    if (m.rows() != k || m.cols() != k) {
      throw ConfigError("inject_noise: confusion matrices must be KxK");
    }
    for (int r = 0; r < k; ++r) {
      if (m.row(r).minCoeff() < 0.0 || std::abs(m.row(r).sum() - 1.0) > 1e-9) {
        throw ConfigError("inject_noise: confusion rows must be stochastic");
      }
    }
  }
  Rng rng(derive_seed(spec.seed, "noise-votes"));
  for (int i : idx) {
    auto& ex = out.dataset.examples[static_cast<std::size_t>(i)];
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t a = 0; a < spec.confusion.size(); ++a) {
      const int vote = categorical(rng, spec.confusion[a].row(ex.label).transpose());
      ex.annotations["sim-" + std::to_string(a)] = vote;
      ++counts[static_cast<std::size_t>(vote)];
    }
    int best = ex.label;  // ties keep the original label
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
    }
    if (best != ex.label) {
      ex.label = best;
      out.flipped_ids.push_back(ex.id);
    }
  }
  return out;
}

}  // namespace

NoiseInjection inject_noise(const Dataset& data, const NoiseSpec& spec) {
  std::vector<int> all(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) all[static_cast<std::size_t>(i)] = i;
  return inject_noise_indices(data, all, spec);
}

NoiseInjection inject_noise_split(const Dataset& data, std::string_view split,
                                  const NoiseSpec& spec) {
  return inject_noise_indices(data, split_indices(data, split), spec);
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".partial";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open '" + tmp + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    f.flush();
    if (!f.good()) throw DataError("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void save_dataset(const Dataset& data, const std::string& path) {
  std::string out;
  {
    nlohmann::ordered_json header;
    header["format"] = "dina-dataset";
    header["version"] = 1;
    header["num_classes"] = data.num_classes;
    header["class_names"] = data.class_names;
    out += header.dump();
    out += '\n';
  }
  for (const auto& ex : data.examples) {
    nlohmann::ordered_json j;
    j["id"] = ex.id;
    j["text"] = ex.text;
    j["label"] = data.class_names.at(static_cast<std::size_t>(ex.label));
    j["split"] = ex.split;
    if (!ex.annotations.empty()) {
      nlohmann::ordered_json votes;
      for (const auto& [annotator, label] : ex.annotations) {
        votes[annotator] = data.class_names.at(static_cast<std::size_t>(label));
      }
      j["annotations"] = votes;
    }
    out += j.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset '" + path + "'");
  std::string line;
  int line_no = 0;
  Dataset data;

  auto parse_line = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  };

  if (!std::getline(f, line)) throw DataError(path + ": missing header record");
  ++line_no;
  {
    const auto header = parse_line(line);
    if (!header.is_object() || header.value("format", "") != "dina-dataset") {
      throw DataError(path + ": line 1: expected dina-dataset header");
    }
    const int version = header.value("version", -1);
    if (version != 1) {
      throw DataError(path + ": unsupported dataset version " + std::to_string(version) +
                      " (expected 1)");
    }
    if (!header.contains("num_classes") || !header.contains("class_names")) {
      throw DataError(path + ": header needs num_classes and class_names");
    }
    data.num_classes = header["num_classes"].get<int>();
    data.class_names = header["class_names"].get<std::vector<std::string>>();
    if (data.num_classes < 2 ||
        static_cast<int>(data.class_names.size()) != data.num_classes) {
      throw DataError(path + ": header class_names must list num_classes >= 2 names");
    }
  }

  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = parse_line(line);
    auto context = [&] { return path + ": line " + std::to_string(line_no) + ": "; };
    if (!j.is_object()) throw DataError(context() + "expected an object");
    LabeledExample ex;
    try {
      ex.id = j.at("id").get<std::string>();
      ex.text = j.at("text").get<std::string>();
      ex.split = j.at("split").get<std::string>();
      const auto label_name = j.at("label").get<std::string>();
      ex.label = data.label_index(label_name);
      if (j.contains("annotations")) {
        for (const auto& [annotator, vote] : j.at("annotations").items()) {
          ex.annotations[annotator] = data.label_index(vote.get<std::string>());
        }
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError(context() + e.what());
    } catch (const DataError& e) {
      throw DataError(context() + e.what());
    }
    if (ex.id.empty()) throw DataError(context() + "empty id");
    ex.tokens = tokenize(ex.text);
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::vector<std::vector<int>> split_subsets(int n, int k, double fraction,
                                            std::uint64_t seed) {
  if (n < 0) throw ConfigError("split_subsets: n must be non-negative");
  if (k < 1) throw ConfigError("split_subsets: k must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ConfigError("split_subsets: fraction must be in (0, 1]");
  }
  const int size = static_cast<int>(std::llround(fraction * n));
  std::vector<std::vector<int>> subsets;
  subsets.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    Rng rng(derive_seed(seed, "subset", static_cast<std::uint64_t>(i)));
    subsets.push_back(rng.sample_indices(n, size));
  }
  return subsets;
}

}  // namespace dina
