#include "cadm/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "cadm/checkpoint.hpp"
#include "cadm/errors.hpp"
#include "cadm/log.hpp"

namespace cadm {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
  if (variants.empty()) throw ConfigError("experiment needs at least one variant");
  for (const auto& v : variants) {
    if (v != "no-adaptation" && v != "self-training" && v != "cadm") {
      throw ConfigError("unknown variant '" + v +
                        "' (expected no-adaptation, self-training, cadm)");
    }
  }
  if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
  if (!synthetic && (source_path.empty() || target_path.empty())) {
    throw ConfigError("experiment without synthetic data needs source/target paths");
  }
  if (positive_class != 0 && positive_class != 1) {
    throw ConfigError("positive_class must be 0 or 1");
  }
  model.validate();
  train.validate();
}

ExperimentConfig experiment_config_from(const ConfigFile& c) {
  ExperimentConfig e;
  e.synthetic = c.get_bool("data.synthetic", e.synthetic);
  if (e.synthetic) {
    e.synth = synth_config_from(c);
  } else {
    e.source_path = c.get_string("data.source", "");
    e.target_path = c.get_string("data.target", "");
    e.target_labels_path = c.get_string("data.target_labels", "");
  }
  e.variants = c.get_string_list("experiment.variants", e.variants);
  e.seeds = c.get_u64_list("experiment.seeds", e.seeds);
  e.model = encoder_config_from(c);
  e.train = adaptation_config_from(c);
  e.positive_class = c.get_int("eval.positive_class", e.positive_class);
  e.validate();
  return e;
}

// ---------------------------------------------------------------------------
// Serialization helpers.

namespace {

json loss_report_to_json(const LossReport& r) {
  json j;
  j["l_ce"] = r.l_ce;
  j["l_con"] = r.l_con;
  j["l_all"] = r.l_all;
  j["lambda"] = r.lambda;
  j["terms"] = r.term;
  j["pair_counts"] = r.pair_count;
  j["bandwidths"] = r.bandwidths;
  return j;
}

}  // namespace

void write_trace_jsonl(const std::string& path,
                       const std::vector<TrainTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write trace file '" + path + "'");
  for (const auto& trace : traces) {
    {
      json j;
      j["type"] = "phase";
      j["phase"] = trace.phase;
      j["seed"] = trace.seed;
      j["config"] = trace.config_snapshot;
      out << j.dump() << "\n";
    }
    for (const auto& s : trace.steps) {
      json j;
      j["type"] = "step";
      j["phase"] = trace.phase;
      j["step"] = s.step;
      j["epoch"] = s.epoch;
      j["loss"] = loss_report_to_json(s.loss);
      out << j.dump() << "\n";
    }
    for (const auto& e : trace.epochs) {
      json j;
      j["type"] = "epoch";
      j["phase"] = trace.phase;
      j["epoch"] = e.epoch;
      j["disc_accuracy_clean"] = e.disc_accuracy_clean;
      j["disc_accuracy_perturbed"] = e.disc_accuracy_perturbed;
      j["pseudo_survival_rate"] = e.pseudo_survival_rate;
      j["pseudo_survivors"] = e.pseudo_survivors;
      j["seconds"] = e.seconds;
      out << j.dump() << "\n";
    }
  }
}

void write_metrics_json(const std::string& path, const Metrics& m) {
  json j;
  j["ba"] = m.balanced_accuracy;
  j["acc"] = m.accuracy;
  j["f1"] = m.f1;
  j["tp"] = m.tp;
  j["fp"] = m.fp;
  j["tn"] = m.tn;
  j["fn"] = m.fn;
  j["n"] = m.n;
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write metrics file '" + path + "'");
  out << j.dump(2) << "\n";
}

Metrics read_metrics_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open metrics file '" + path + "'");
  json j;
  in >> j;
  Metrics m;
  m.balanced_accuracy = j.at("ba").get<double>();
  m.accuracy = j.at("acc").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.tp = j.at("tp").get<long>();
  m.fp = j.at("fp").get<long>();
  m.tn = j.at("tn").get<long>();
  m.fn = j.at("fn").get<long>();
  m.n = j.at("n").get<long>();
  return m;
}

void write_predictions_jsonl(const std::string& path, const DomainCorpus& corpus,
                             const std::vector<int>& predictions) {
  if (predictions.size() != corpus.size()) {
    throw ContractError("predictions do not match corpus size");
  }
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write predictions file '" + path + "'");
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& ex = corpus.examples()[i];
    json j;
    j["id"] = ex.id;
    j["pred"] = predictions[i];
    const auto it = corpus.eval_labels().find(ex.id);
    if (it != corpus.eval_labels().end()) {
      j["label"] = it->second;
    } else {
      j["label"] = nullptr;
    }
    out << j.dump() << "\n";
  }
}

// ---------------------------------------------------------------------------
// Report assembly.

std::vector<VariantAggregate> ExperimentReport::aggregates() const {
  std::vector<VariantAggregate> aggs;
  for (const auto& cell : cells) {
    if (std::find_if(aggs.begin(), aggs.end(), [&](const VariantAggregate& a) {
          return a.variant == cell.variant;
        }) == aggs.end()) {
      VariantAggregate a;
      a.variant = cell.variant;
      aggs.push_back(a);
    }
  }
  for (auto& agg : aggs) {
    std::vector<double> ba, acc, f1;
    for (const auto& cell : cells) {
      if (cell.variant != agg.variant || cell.failed) continue;
      ba.push_back(cell.target_metrics.balanced_accuracy);
      acc.push_back(cell.target_metrics.accuracy);
      f1.push_back(cell.target_metrics.f1);
    }
    agg.n = static_cast<int>(ba.size());
    const auto mean_std = [](const std::vector<double>& xs, double& mean,
                             double& stddev) {
      if (xs.empty()) {
        mean = stddev = 0.0;
        return;
      }
      mean = 0.0;
      for (const double x : xs) mean += x;
      mean /= static_cast<double>(xs.size());
      double var = 0.0;
      for (const double x : xs) var += (x - mean) * (x - mean);
      stddev = xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0;
    };
    mean_std(ba, agg.ba_mean, agg.ba_std);
    mean_std(acc, agg.acc_mean, agg.acc_std);
    mean_std(f1, agg.f1_mean, agg.f1_std);
  }
  return aggs;
}

bool ExperimentReport::any_failed() const {
  for (const auto& cell : cells) {
    if (cell.failed) return true;
  }
  return false;
}

std::string render_report_table(const ExperimentReport& report) {
  std::ostringstream os;
  os << "domain adaptation: " << report.source_name << " -> " << report.target_name
     << "\n\n";
  os << std::left << std::setw(16) << "method" << std::setw(20) << "BA"
     << std::setw(20) << "Acc" << std::setw(20) << "F1" << "seeds\n";
  for (const auto& agg : report.aggregates()) {
    const auto cell = [](double mean, double stddev) {
      std::ostringstream c;
      c << std::fixed << std::setprecision(4) << mean << " +/- "
        << std::setprecision(4) << stddev;
      return c.str();
    };
    os << std::left << std::setw(16) << agg.variant << std::setw(20)
       << cell(agg.ba_mean, agg.ba_std) << std::setw(20)
       << cell(agg.acc_mean, agg.acc_std) << std::setw(20)
       << cell(agg.f1_mean, agg.f1_std) << agg.n << "\n";
  }
  bool failures = false;
  for (const auto& cell : report.cells) {
    if (!cell.failed) continue;
    if (!failures) {
      os << "\nfailed cells:\n";
      failures = true;
    }
    os << "  " << cell.variant << " seed " << cell.seed << ": " << cell.error
       << " (" << cell.run_dir << ")\n";
  }
  return os.str();
}

void write_report_files(const ExperimentReport& report, const std::string& out_dir) {
  fs::create_directories(out_dir);
  json j;
  j["source"] = report.source_name;
  j["target"] = report.target_name;
  j["cells"] = json::array();
  for (const auto& cell : report.cells) {
    json c;
    c["variant"] = cell.variant;
    c["seed"] = cell.seed;
    c["failed"] = cell.failed;
    c["run_dir"] = cell.run_dir;
    if (cell.failed) {
      c["error"] = cell.error;
    } else {
      c["target"] = {{"ba", cell.target_metrics.balanced_accuracy},
                     {"acc", cell.target_metrics.accuracy},
                     {"f1", cell.target_metrics.f1},
                     {"n", cell.target_metrics.n}};
      if (cell.has_source_metrics) {
        c["source"] = {{"ba", cell.source_metrics.balanced_accuracy},
                       {"acc", cell.source_metrics.accuracy},
                       {"f1", cell.source_metrics.f1},
                       {"n", cell.source_metrics.n}};
      }
    }
    j["cells"].push_back(std::move(c));
  }
  j["aggregates"] = json::array();
  for (const auto& agg : report.aggregates()) {
    j["aggregates"].push_back({{"variant", agg.variant},
                               {"seeds", agg.n},
                               {"ba_mean", agg.ba_mean},
                               {"ba_std", agg.ba_std},
                               {"acc_mean", agg.acc_mean},
                               {"acc_std", agg.acc_std},
                               {"f1_mean", agg.f1_mean},
                               {"f1_std", agg.f1_std}});
  }

  std::ofstream out(out_dir + "/report.json");
  if (!out) throw ValidationError("cannot write report.json in '" + out_dir + "'");
  out << j.dump(2) << "\n";

  std::ofstream txt(out_dir + "/report.txt");
  if (!txt) throw ValidationError("cannot write report.txt in '" + out_dir + "'");
  txt << render_report_table(report);
}

// ---------------------------------------------------------------------------
// Running the grid.

namespace {

struct ExperimentData {
  DomainCorpus source;
  DomainCorpus target;
};

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
  if (cfg.synthetic) {
    SynthCorpora synth = generate_synthetic_shift(cfg.synth);
    return {std::move(synth.source), std::move(synth.target)};
  }
  DomainCorpus source = load_corpus(cfg.source_path, Domain::Source);
  DomainCorpus target = load_corpus(cfg.target_path, Domain::Target);
  if (!cfg.target_labels_path.empty()) {
    target = target.with_eval_labels(load_labels_file(cfg.target_labels_path));
  }
  return {std::move(source), std::move(target)};
}

Metrics recompute_from_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open predictions file '" + path + "'");
  std::vector<int> preds, labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("label") || j["label"].is_null()) continue;
    preds.push_back(j.at("pred").get<int>());
    labels.push_back(j.at("label").get<int>());
  }
  if (preds.empty()) {
    throw ValidationError("predictions file '" + path + "' has no labeled rows");
  }
  return compute_metrics(preds, labels);
}

bool metrics_close(const Metrics& a, const Metrics& b) {
  return a.tp == b.tp && a.fp == b.fp && a.tn == b.tn && a.fn == b.fn &&
         std::abs(a.balanced_accuracy - b.balanced_accuracy) < 1e-12 &&
         std::abs(a.accuracy - b.accuracy) < 1e-12 && std::abs(a.f1 - b.f1) < 1e-12;
}

CellResult run_cell(const ExperimentConfig& cfg, const ExperimentData& data,
                    const Tokenizer& tokenizer, const std::string& variant,
                    std::uint64_t seed, const std::string& run_dir) {
  CellResult cell;
  cell.variant = variant;
  cell.seed = seed;
  cell.run_dir = run_dir;
  fs::create_directories(run_dir);

  const std::string metrics_path = run_dir + "/metrics.json";
  const std::string predictions_path = run_dir + "/predictions.jsonl";
  if (fs::exists(metrics_path) && fs::exists(predictions_path)) {
    cell.target_metrics = read_metrics_json(metrics_path);
    const Metrics recomputed = recompute_from_predictions(predictions_path);
    if (!metrics_close(cell.target_metrics, recomputed)) {
      log_warn(run_dir + ": stored metrics disagree with stored predictions; using recomputed values");
      cell.target_metrics = recomputed;
    }
    return cell;  // resumed
  }

  EncoderConfig mcfg = cfg.model;
  mcfg.seed = seed;
  AdaptationConfig tcfg = cfg.train;
  tcfg.seed = seed;

  ModelState state = init_model(mcfg);
  std::vector<TrainTrace> traces;
  traces.push_back(pretrain_source(state, tokenizer, data.source, tcfg));
  save_checkpoint(run_dir + "/pretrained.json", state, tokenizer);

  if (variant == "self-training") {
    traces.push_back(self_train(state, tokenizer, data.source, data.target, tcfg));
  } else if (variant == "cadm") {
    const MergedSet merged = merge_domains(data.source, data.target);
    train_domain_discriminator(state, tokenizer, merged, tcfg);
    save_checkpoint(run_dir + "/discriminator.json", state, tokenizer);
    traces.push_back(adapt(state, tokenizer, data.source, data.target, tcfg));
  }

  save_checkpoint(run_dir + "/model.json", state, tokenizer);
  write_trace_jsonl(run_dir + "/trace.jsonl", traces);

  std::vector<int> predictions;
  cell.target_metrics =
      evaluate(state, tokenizer, data.target, cfg.positive_class, &predictions);
  write_predictions_jsonl(predictions_path, data.target, predictions);
  write_metrics_json(metrics_path, cell.target_metrics);

  cell.source_metrics = evaluate(state, tokenizer, data.source, cfg.positive_class);
  cell.has_source_metrics = true;
  return cell;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir) {
  cfg.validate();
  const ExperimentData data = load_experiment_data(cfg);
  const Tokenizer tokenizer =
      Tokenizer::fit({&data.source, &data.target}, cfg.model.vocab_size);

  ExperimentReport report;
  report.source_name = data.source.name();
  report.target_name = data.target.name();

  fs::create_directories(out_dir);
  {
    json manifest;
    manifest["source"] = report.source_name;
    manifest["target"] = report.target_name;
    std::ofstream mf(out_dir + "/experiment.json");
    mf << manifest.dump(2) << "\n";
  }

  for (const auto& variant : cfg.variants) {
    for (const std::uint64_t seed : cfg.seeds) {
      const std::string run_dir =
          out_dir + "/" + variant + "/seed" + std::to_string(seed);
      try {
        report.cells.push_back(
            run_cell(cfg, data, tokenizer, variant, seed, run_dir));
      } catch (const std::exception& e) {
        CellResult cell;
        cell.variant = variant;
        cell.seed = seed;
        cell.failed = true;
        cell.error = e.what();
        cell.run_dir = run_dir;
        std::ofstream err(run_dir + "/error.txt");
        err << e.what() << "\n";
        report.cells.push_back(std::move(cell));
        log_warn("experiment cell " + variant + "/seed" + std::to_string(seed) +
                 " failed: " + e.what());
      }
    }
  }

  write_report_files(report, out_dir);
  return report;
}

ExperimentReport assemble_report(const std::string& runs_dir) {
  ExperimentReport report;
  if (!fs::is_directory(runs_dir)) {
    throw ValidationError("'" + runs_dir + "' is not a directory");
  }

  if (fs::exists(runs_dir + "/experiment.json")) {
    std::ifstream mf(runs_dir + "/experiment.json");
    json manifest;
    try {
      mf >> manifest;
      report.source_name = manifest.value("source", "");
      report.target_name = manifest.value("target", "");
    } catch (const json::parse_error&) {
      log_warn(runs_dir + "/experiment.json is unreadable; names omitted");
    }
  }

  std::vector<fs::path> variant_dirs;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (entry.is_directory()) variant_dirs.push_back(entry.path());
  }
  // Baselines before the adapted method, anything else alphabetical.
  const auto rank = [](const fs::path& p) {
    const std::string name = p.filename().string();
    if (name == "no-adaptation") return 0;
    if (name == "self-training") return 1;
    if (name == "cadm") return 2;
    return 3;
  };
  std::sort(variant_dirs.begin(), variant_dirs.end(),
            [&](const fs::path& a, const fs::path& b) {
              return std::make_pair(rank(a), a.filename().string()) <
                     std::make_pair(rank(b), b.filename().string());
            });

  for (const auto& vdir : variant_dirs) {
    std::vector<fs::path> run_dirs;
    for (const auto& entry : fs::directory_iterator(vdir)) {
      if (entry.is_directory()) run_dirs.push_back(entry.path());
    }
    std::sort(run_dirs.begin(), run_dirs.end());
    for (const auto& rdir : run_dirs) {
      CellResult cell;
      cell.variant = vdir.filename().string();
      cell.run_dir = rdir.string();
      const std::string seed_name = rdir.filename().string();
      if (seed_name.rfind("seed", 0) == 0) {
        try {
          cell.seed = std::stoull(seed_name.substr(4));
        } catch (const std::exception&) {
          cell.seed = 0;
        }
      }
      try {
        const Metrics recomputed =
            recompute_from_predictions(rdir.string() + "/predictions.jsonl");
        const Metrics stored = read_metrics_json(rdir.string() + "/metrics.json");
        if (!metrics_close(stored, recomputed)) {
          log_warn(rdir.string() +
                   ": stored metrics disagree with stored predictions; report uses recomputed values");
        }
        cell.target_metrics = recomputed;
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      report.cells.push_back(std::move(cell));
    }
  }
  if (report.cells.empty()) {
    throw ValidationError("no run directories found under '" + runs_dir + "'");
  }
  return report;
}

}  // namespace cadm
