#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dina/attack.hpp"
#include "dina/classifier.hpp"
#include "dina/dataset.hpp"
#include "dina/defense.hpp"
#include "dina/errors.hpp"
#include "dina/lnl.hpp"
#include "dina/pipeline.hpp"
#include "dina/rng.hpp"

namespace fs = std::filesystem;
using dina::ConfigError;
using dina::DataError;
using dina::StageError;

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t a = part.find_first_not_of(" \t");
    std::size_t b = part.find_last_not_of(" \t");
    out.push_back(a == std::string::npos ? "" : part.substr(a, b - a + 1));
  }
  return out;
}

std::vector<double> parse_rates(const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_csv(s)) {
    try {
      std::size_t pos = 0;
      double v = std::stod(part, &pos);
      if (pos != part.size()) throw std::invalid_argument(part);
      out.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("invalid rate '" + part + "'");
    }
  }
  return out;
}

std::vector<int> parse_grid(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : split_csv(s)) {
    try {
      std::size_t pos = 0;
      long v = std::stol(part, &pos);
      if (pos != part.size()) throw std::invalid_argument(part);
      out.push_back(static_cast<int>(v));
    } catch (const std::exception&) {
      throw ConfigError("invalid grid entry '" + part + "'");
    }
  }
  return out;
}

void parse_stage_range(const std::string& s, int& first, int& last) {
  std::size_t dash = s.find('-');
  try {
    if (dash == std::string::npos) {
      std::size_t pos = 0;
      first = last = std::stoi(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
    } else {
      std::size_t p1 = 0, p2 = 0;
      const std::string a = s.substr(0, dash), b = s.substr(dash + 1);
      first = std::stoi(a, &p1);
      last = std::stoi(b, &p2);
      if (p1 != a.size() || p2 != b.size()) throw std::invalid_argument(s);
    }
  } catch (const std::exception&) {
    throw ConfigError("invalid stage range '" + s + "' (expected N or A-B)");
  }
}

std::string attack_metrics_json(const dina::AttackMetrics& m) {
  nlohmann::json j;
  j["n"] = m.n;
  j["n_correct"] = m.n_correct;
  j["n_success"] = m.n_success;
  j["clean_accuracy"] = m.clean_accuracy;
  j["accuracy_under_attack"] = m.accuracy_under_attack;
  j["attack_success_rate"] = m.asr;
  j["mean_edits"] = m.mean_edits;
  j["mean_queries"] = m.mean_queries;
  return j.dump(2) + "\n";
}

void require_out(const dina::PipelineConfig& cfg, const char* what) {
  if (cfg.out_dir.empty()) {
    throw ConfigError(std::string(what) + " needs --out (or out_dir in the config)");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-defense spam classification laboratory"};
  app.require_subcommand(1);
  app.fallthrough();  // globals like --seed may follow the subcommand

  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--out", out_path, "output file or directory");
  app.add_option("--threads", threads, "worker threads");

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic chat corpus");

  auto* inj = app.add_subcommand("inject-noise", "flip labels in a dataset file");
  std::string inj_data, inj_kind, inj_split = "train";
  double inj_rate = -1.0;
  inj->add_option("--data", inj_data, "input dataset (jsonl)")->required();
  inj->add_option("--rate", inj_rate, "flip fraction (overrides the config)");
  inj->add_option("--kind", inj_kind, "symmetric | asymmetric");
  inj->add_option("--split", inj_split, "split to corrupt, or 'all'");

  auto* tr = app.add_subcommand("train", "train one model on a dataset file");
  std::string tr_method, tr_data;
  tr->add_option("--method", tr_method, "baseline | plc | seal | dividemix")->required();
  tr->add_option("--data", tr_data, "input dataset (jsonl)")->required();

  auto* run = app.add_subcommand("dina-run", "run the four defense stages");
  std::string run_stages = "1-4";
  std::string run_resume_dir;
  run->add_option("--stages", run_stages, "stage range, e.g. 1-4 or 3");
  run->add_option("--resume", run_resume_dir,
                  "continue from the artifacts in DIR (becomes the output directory)");

  auto* att = app.add_subcommand("attack", "perturb a dataset split against a model");
  std::string att_model, att_data, att_kind, att_split = "test";
  att->add_option("--model", att_model, "model checkpoint (json)")->required();
  att->add_option("--data", att_data, "dataset (jsonl)")->required();
  att->add_option("--kind", att_kind, "random | greedy")->required();
  att->add_option("--split", att_split, "split to attack");

  auto* ev = app.add_subcommand("eval", "clean and under-attack evaluation of a model");
  std::string ev_model, ev_data, ev_split = "test";
  ev->add_option("--model", ev_model, "model checkpoint (json)")->required();
  ev->add_option("--data", ev_data, "dataset (jsonl)")->required();
  ev->add_option("--split", ev_split, "split to evaluate");

  auto* sn = app.add_subcommand("sweep-noise", "method accuracy across noise rates");
  std::string sn_rates = "0.1,0.3,0.5,0.7,0.9";
  std::string sn_methods = "baseline,plc,seal,dividemix";
  int sn_seeds = 5;
  sn->add_option("--rates", sn_rates, "comma-separated noise rates");
  sn->add_option("--methods", sn_methods,
                 "subset of baseline,plc,seal,dividemix,stage2-lfc,stage3-full");
  sn->add_option("--seeds", sn_seeds, "seeds per cell (master, master+1, ...)");

  auto* sa = app.add_subcommand("sweep-adv", "robustness across adversarial-budget grid");
  std::string sa_grid = "0,500,2000,8000";
  int sa_seeds = 1;
  sa->add_option("--grid", sa_grid, "comma-separated adversarial example counts");
  sa->add_option("--seeds", sa_seeds, "seeds (master, master+1, ...)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  try {
    dina::PipelineConfig cfg;
    if (!config_path.empty()) cfg = dina::parse_config_file(config_path);
    if (app.count("--seed") > 0) cfg.seed = seed;
    if (app.count("--threads") > 0) cfg.threads = threads;
    if (app.count("--out") > 0) cfg.out_dir = out_path;

    dina::ConfusableTable table_storage;

    if (gen->parsed()) {
      require_out(cfg, "gen-data");
      dina::CorpusSpec spec = cfg.corpus;
      spec.seed = dina::derive_seed(cfg.seed, "corpus");
      const dina::Dataset data = dina::generate_synthetic_corpus(spec);
      dina::save_dataset(data, cfg.out_dir);
      std::printf("wrote %d examples to %s\n", data.size(), cfg.out_dir.c_str());
    } else if (inj->parsed()) {
      require_out(cfg, "inject-noise");
      const dina::Dataset data = dina::load_dataset(inj_data);
      dina::NoiseSpec ns = cfg.noise;
      if (inj_rate >= 0.0) ns.rate = inj_rate;
      if (!inj_kind.empty()) {
        if (inj_kind == "symmetric") {
          ns.kind = dina::NoiseKind::SymmetricFlip;
        } else if (inj_kind == "asymmetric") {
          ns.kind = dina::NoiseKind::AsymmetricFlip;
        } else {
          throw ConfigError("unknown noise kind '" + inj_kind + "'");
        }
      }
      ns.seed = dina::derive_seed(cfg.seed, "noise");
      const dina::NoiseInjection res = inj_split == "all"
                                           ? dina::inject_noise(data, ns)
                                           : dina::inject_noise_split(data, inj_split, ns);
      dina::save_dataset(res.dataset, cfg.out_dir);
      std::string prov;
      for (const auto& id : res.flipped_ids) prov += id + "\n";
      dina::write_file_atomic(cfg.out_dir + ".flipped.txt", prov);
      std::printf("flipped %zu labels; wrote %s\n", res.flipped_ids.size(), cfg.out_dir.c_str());
    } else if (tr->parsed()) {
      require_out(cfg, "train");
      const dina::Dataset data = dina::load_dataset(tr_data);
      fs::create_directories(cfg.out_dir);
      dina::validate(cfg.features);
      dina::LnlContext ctx;
      ctx.dev = &data;
      // inject-noise leaves a <data>.flipped.txt sidecar; when present the
      // metrics CSV gains ground-truth clean-set precision columns.
      std::set<std::string> flipped;
      {
        std::ifstream fin(tr_data + ".flipped.txt", std::ios::binary);
        std::string line;
        while (fin && std::getline(fin, line)) {
          if (!line.empty() && line.back() == '\r') line.pop_back();
          if (!line.empty()) flipped.insert(line);
        }
        if (!flipped.empty()) ctx.flipped_ids = &flipped;
      }

      dina::Classifier model;
      std::vector<dina::EpochMetrics> metrics;
      if (tr_method == "baseline") {
        const auto idx = dina::split_indices(data, "train");
        if (idx.empty()) throw DataError("train split is empty");
        const dina::Dataset pool = dina::subset(data, idx);
        const auto xs = dina::featurize_all(pool, cfg.features, cfg.threads);
        std::vector<int> ys;
        for (const auto& ex : pool.examples) ys.push_back(ex.label);
        dina::TrainConfig t = cfg.train;
        t.seed = dina::derive_seed(cfg.seed, "baseline");
        std::vector<double> losses;
        model = dina::train_featurized(xs, ys, data.num_classes, t, cfg.features, &losses);
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t e = 0; e < losses.size(); ++e) {
          metrics.push_back({static_cast<int>(e), losses[e], nan, pool.size(), nan});
        }
      } else if (tr_method == "plc") {
        dina::PlcConfig pc;
        pc.base = cfg.train;
        pc.seed = dina::derive_seed(cfg.seed, "plc");
        const dina::LnlResult r = dina::plc_train(data, pc, cfg.features, &ctx);
        model = r.networks.at(0);
        metrics = r.metrics;
      } else if (tr_method == "seal") {
        dina::SealConfig sc;
        sc.base = cfg.train;
        sc.seed = dina::derive_seed(cfg.seed, "seal");
        const dina::LnlResult r = dina::seal_train(data, sc, cfg.features, &ctx);
        model = r.networks.at(0);
        metrics = r.metrics;
      } else if (tr_method == "dividemix") {
        dina::DivideMixConfig dc = cfg.stage3;
        dc.base = cfg.train;
        if (cfg.stage3_learning_rate > 0.0) dc.base.learning_rate = cfg.stage3_learning_rate;
        dc.seed = dina::derive_seed(cfg.seed, "dividemix");
        const dina::LnlResult r =
            dina::dividemix_train(data, dc, cfg.features, nullptr, &ctx, cfg.threads);
        dina::save_model(r.networks.at(0), cfg.out_dir + "/net_0.json");
        dina::save_model(r.networks.at(1), cfg.out_dir + "/net_1.json");
        model = r.collapsed();
        metrics = r.metrics;
      } else {
        throw ConfigError("unknown training method '" + tr_method + "'");
      }
      dina::save_model(model, cfg.out_dir + "/model.json");
      dina::write_metrics_csv(cfg.out_dir + "/metrics.csv", metrics, tr_method, cfg.noise.rate,
                              cfg.seed);
      if (!dina::split_indices(data, "dev").empty()) {
        std::printf("dev accuracy %.6f\n", dina::accuracy(model, data, "dev"));
      }
      if (!dina::split_indices(data, "test").empty()) {
        std::printf("test accuracy %.6f\n", dina::accuracy(model, data, "test"));
      }
    } else if (run->parsed()) {
      const bool run_resume = !run_resume_dir.empty();
      if (run_resume) cfg.out_dir = run_resume_dir;
      require_out(cfg, "dina-run");
      int first = 1, last = 4;
      parse_stage_range(run_stages, first, last);
      const dina::DinaRunResult res = dina::run_dina(cfg, first, last, run_resume);
      if (last == 4) {
        std::fputs(res.report_text.c_str(), stdout);
      } else {
        std::printf("stages %d-%d complete under %s\n", first, last, cfg.out_dir.c_str());
      }
    } else if (att->parsed()) {
      const dina::Classifier model = dina::load_model(att_model);
      const dina::Dataset data = dina::load_dataset(att_data);
      const dina::AttackKind kind = dina::parse_attack_kind(att_kind);
      dina::AttackConfig ac = cfg.eval_attack;
      ac.seed = dina::derive_seed(cfg.seed, "eval-attack");
      const dina::ConfusableTable& table = dina::pipeline_table(cfg, table_storage);
      std::vector<dina::AttackResult> results;
      const dina::AttackMetrics m =
          dina::evaluate_attack(model, data, att_split, kind, table, ac, cfg.threads, &results);
      if (!cfg.out_dir.empty()) dina::write_attack_report(cfg.out_dir, data, att_split, results);
      std::fputs(attack_metrics_json(m).c_str(), stdout);
    } else if (ev->parsed()) {
      const dina::Classifier model = dina::load_model(ev_model);
      const dina::Dataset data = dina::load_dataset(ev_data);
      dina::AttackConfig ac = cfg.eval_attack;
      ac.seed = dina::derive_seed(cfg.seed, "eval-attack");
      const dina::ConfusableTable& table = dina::pipeline_table(cfg, table_storage);
      const dina::ModelEval res =
          dina::evaluate_model(model, data, ev_split, table, ac, cfg.threads);
      const std::string body = dina::eval_report_json(res, data.class_names);
      if (!cfg.out_dir.empty()) dina::write_file_atomic(cfg.out_dir, body);
      std::fputs(body.c_str(), stdout);
    } else if (sn->parsed()) {
      require_out(cfg, "sweep-noise");
      fs::create_directories(cfg.out_dir);
      const auto rows = dina::sweep_noise(cfg, split_csv(sn_methods), parse_rates(sn_rates),
                                          sn_seeds, cfg.threads);
      dina::write_noise_sweep_csv(cfg.out_dir + "/sweep.csv", rows);
      dina::write_noise_sweep_medians_csv(cfg.out_dir + "/medians.csv", rows);
      std::printf("wrote %zu rows to %s/sweep.csv\n", rows.size(), cfg.out_dir.c_str());
    } else if (sa->parsed()) {
      require_out(cfg, "sweep-adv");
      fs::create_directories(cfg.out_dir);
      const auto rows = dina::sweep_adv(cfg, parse_grid(sa_grid), sa_seeds, cfg.threads);
      dina::write_adv_sweep_csv(cfg.out_dir + "/adv_sweep.csv", rows);
      std::printf("wrote %zu rows to %s/adv_sweep.csv\n", rows.size(), cfg.out_dir.c_str());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const StageError& e) {
    std::fprintf(stderr, "stage error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
