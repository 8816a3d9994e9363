#pragma once

#include <string>
#include <vector>

#include "cadm/config.hpp"
#include "cadm/corpus.hpp"
#include "cadm/metrics.hpp"
#include "cadm/trainer.hpp"

namespace cadm {

// Grid of (variant, seed) adaptation runs over one source/target pair, with
// per-run directories, machine-readable metrics and an aligned text table.
struct ExperimentConfig {
  bool synthetic = true;
  SynthShiftConfig synth;
  std::string source_path;
  std::string target_path;
  std::string target_labels_path;  // optional external labels for evaluation

  std::vector<std::string> variants{"no-adaptation", "self-training", "cadm"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  EncoderConfig model;
  AdaptationConfig train;
  int positive_class = 1;

  void validate() const;
};

ExperimentConfig experiment_config_from(const ConfigFile& c);

struct CellResult {
  std::string variant;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  Metrics target_metrics;
  Metrics source_metrics;
  bool has_source_metrics = false;
  std::string run_dir;
};

struct VariantAggregate {
  std::string variant;
  int n = 0;  // completed seeds
  double ba_mean = 0, ba_std = 0;
  double acc_mean = 0, acc_std = 0;
  double f1_mean = 0, f1_std = 0;
};

struct ExperimentReport {
  std::string source_name;
  std::string target_name;
  std::vector<CellResult> cells;

  std::vector<VariantAggregate> aggregates() const;
  bool any_failed() const;
};

// Runs every (variant, seed) cell, skipping cells whose run directory already
// holds results (coarse-grained resume). A failing cell is recorded and the
// grid continues.
ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::string& out_dir);

// Rebuilds a report from run directories on disk, recomputing every metric
// from the stored predictions and cross-checking against metrics.json.
ExperimentReport assemble_report(const std::string& runs_dir);

void write_report_files(const ExperimentReport& report, const std::string& out_dir);
std::string render_report_table(const ExperimentReport& report);

// Serialization helpers shared with the CLI.
void write_trace_jsonl(const std::string& path, const std::vector<TrainTrace>& traces);
void write_metrics_json(const std::string& path, const Metrics& m);
Metrics read_metrics_json(const std::string& path);
void write_predictions_jsonl(const std::string& path,
                             const DomainCorpus& corpus,
                             const std::vector<int>& predictions);

}  // namespace cadm
