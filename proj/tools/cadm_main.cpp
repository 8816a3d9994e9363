// cadm: contrastive adversarial domain mixup for binary text classifiers.
//
// Pipeline verbs operate on a checkpoint directory:
//   synth -> pretrain -> train-disc -> pseudo-label -> adapt -> evaluate
// experiment/report run the full grid across seeds and variants.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadm/checkpoint.hpp"
#include "cadm/config.hpp"
#include "cadm/corpus.hpp"
#include "cadm/errors.hpp"
#include "cadm/experiment.hpp"
#include "cadm/log.hpp"
#include "cadm/metrics.hpp"
#include "cadm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PipelineArgs {
  std::string config_path;
  std::string source_path;
  std::string target_path;
  std::string target_labels_path;
  std::string checkpoint_dir;
  std::optional<std::uint64_t> seed;
};

struct PipelineSetup {
  cadm::ConfigFile config;
  cadm::EncoderConfig model;
  cadm::AdaptationConfig train;

  PipelineSetup(const PipelineArgs& args)
      : config(args.config_path.empty()
                   ? cadm::ConfigFile::parse_string("", "<default>")
                   : cadm::ConfigFile::parse_file(args.config_path)),
        model(cadm::encoder_config_from(config)),
        train(cadm::adaptation_config_from(config)) {
    if (args.seed) {
      model.seed = *args.seed;
      train.seed = *args.seed;
    }
  }
};

std::string checkpoint_path(const std::string& dir, const char* name) {
  return dir + "/" + name;
}

cadm::LoadedCheckpoint load_stage(const std::string& dir,
                                  std::initializer_list<const char*> candidates) {
  for (const char* name : candidates) {
    const std::string path = checkpoint_path(dir, name);
    if (fs::exists(path)) {
      return cadm::load_checkpoint(path);
    }
  }
  std::string tried;
  for (const char* name : candidates) {
    if (!tried.empty()) tried += ", ";
    tried += name;
  }
  throw cadm::ValidationError("no checkpoint found in '" + dir + "' (looked for " +
                              tried + "); run the earlier pipeline stages first");
}

json metrics_to_json(const cadm::Metrics& m) {
  return json{{"ba", m.balanced_accuracy},
              {"acc", m.accuracy},
              {"f1", m.f1},
              {"tp", m.tp},
              {"fp", m.fp},
              {"tn", m.tn},
              {"fn", m.fn},
              {"n", m.n}};
}

int cmd_synth(const std::string& config_path, const std::string& out_dir) {
  const auto config = cadm::ConfigFile::parse_file(config_path);
  const cadm::SynthShiftConfig scfg = cadm::synth_config_from(config);
  const cadm::SynthCorpora corpora = cadm::generate_synthetic_shift(scfg);

  fs::create_directories(out_dir);
  cadm::write_corpus_jsonl(corpora.source, out_dir + "/source.jsonl", true);
  cadm::write_corpus_jsonl(corpora.target, out_dir + "/target.jsonl", false);
  cadm::write_labels_jsonl(corpora.target_labels, out_dir + "/target_labels.jsonl");
  std::cout << "wrote " << corpora.source.size() << " source and "
            << corpora.target.size() << " target examples to " << out_dir << "\n";
  return 0;
}

int cmd_init(const PipelineArgs& args) {
  PipelineSetup setup(args);
  const auto source = cadm::load_corpus(args.source_path, cadm::Domain::Source);
  const auto target = cadm::load_corpus(args.target_path, cadm::Domain::Target);
  // The vocabulary covers both domains; only text is read, never labels.
  const auto tokenizer =
      cadm::Tokenizer::fit({&source, &target}, setup.model.vocab_size);
  const cadm::ModelState state = cadm::init_model(setup.model);

  fs::create_directories(args.checkpoint_dir);
  const std::string path = checkpoint_path(args.checkpoint_dir, "init.json");
  cadm::save_checkpoint(path, state, tokenizer);
  setup.config.warn_unused();
  std::cout << "initialized model (" << cadm::encoder_arch_name(setup.model.architecture)
            << ", repr_dim " << setup.model.repr_dim << ") at " << path << "\n";
  return 0;
}

int cmd_pretrain(const PipelineArgs& args) {
  PipelineSetup setup(args);
  const auto source = cadm::load_corpus(args.source_path, cadm::Domain::Source);

  cadm::ModelState state;
  cadm::Tokenizer tokenizer;
  const std::string init_path = checkpoint_path(args.checkpoint_dir, "init.json");
  if (fs::exists(init_path)) {
    auto loaded = cadm::load_checkpoint(init_path);
    state = std::move(loaded.state);
    tokenizer = std::move(loaded.tokenizer);
  } else {
    if (args.target_path.empty()) {
      cadm::log_warn("no --target given; vocabulary is fitted on source text only");
      tokenizer = cadm::Tokenizer::fit({&source}, setup.model.vocab_size);
    } else {
      const auto target = cadm::load_corpus(args.target_path, cadm::Domain::Target);
      tokenizer = cadm::Tokenizer::fit({&source, &target}, setup.model.vocab_size);
    }
    state = cadm::init_model(setup.model);
  }

  const cadm::TrainTrace trace =
      cadm::pretrain_source(state, tokenizer, source, setup.train);

  fs::create_directories(args.checkpoint_dir);
  cadm::save_checkpoint(checkpoint_path(args.checkpoint_dir, "pretrained.json"),
                        state, tokenizer);
  cadm::write_trace_jsonl(args.checkpoint_dir + "/pretrain_trace.jsonl", {trace});
  setup.config.warn_unused();
  std::cout << "pretrained for " << trace.steps.size() << " steps; final l_ce = "
            << (trace.steps.empty() ? 0.0 : trace.steps.back().loss.l_ce) << "\n";
  return 0;
}

int cmd_train_disc(const PipelineArgs& args) {
  PipelineSetup setup(args);
  const auto source = cadm::load_corpus(args.source_path, cadm::Domain::Source);
  const auto target = cadm::load_corpus(args.target_path, cadm::Domain::Target);
  auto loaded = load_stage(args.checkpoint_dir, {"pretrained.json", "init.json"});

  const cadm::MergedSet merged = cadm::merge_domains(source, target);
  const cadm::DiscTrainReport report = cadm::train_domain_discriminator(
      loaded.state, loaded.tokenizer, merged, setup.train);

  cadm::save_checkpoint(checkpoint_path(args.checkpoint_dir, "discriminator.json"),
                        loaded.state, loaded.tokenizer);
  setup.config.warn_unused();
  std::cout << "domain discriminator held-out accuracy: " << report.holdout_accuracy
            << " (" << report.holdout_rows << " rows)\n";
  return 0;
}

int cmd_pseudo_label(const PipelineArgs& args) {
  PipelineSetup setup(args);
  const auto target = cadm::load_corpus(args.target_path, cadm::Domain::Target);
  auto loaded =
      load_stage(args.checkpoint_dir, {"discriminator.json", "pretrained.json"});

  const cadm::PseudoLabeledSet pls =
      cadm::pseudo_label(loaded.state, loaded.tokenizer, target, setup.train.tau);

  const std::string path = args.checkpoint_dir + "/pseudo_labels.jsonl";
  std::ofstream out(path);
  if (!out) throw cadm::ValidationError("cannot write '" + path + "'");
  for (std::size_t i = 0; i < pls.ids.size(); ++i) {
    out << json{{"id", pls.ids[i]},
                {"label", pls.labels[i]},
                {"confidence", pls.confidences[i]}}
               .dump()
        << "\n";
  }
  setup.config.warn_unused();
  std::cout << pls.ids.size() << " of " << pls.target_size
            << " target examples survived tau = " << setup.train.tau << " ("
            << pls.survival_rate() << ")\n";
  return 0;
}

int cmd_adapt(const PipelineArgs& args) {
  PipelineSetup setup(args);
  const auto source = cadm::load_corpus(args.source_path, cadm::Domain::Source);
  auto target = cadm::load_corpus(args.target_path, cadm::Domain::Target);
  if (!args.target_labels_path.empty()) {
    target = target.with_eval_labels(cadm::load_labels_file(args.target_labels_path));
  }
  auto loaded = load_stage(args.checkpoint_dir, {"discriminator.json"});

  const cadm::TrainTrace trace =
      cadm::adapt(loaded.state, loaded.tokenizer, source, target, setup.train);

  cadm::save_checkpoint(checkpoint_path(args.checkpoint_dir, "adapted.json"),
                        loaded.state, loaded.tokenizer);
  cadm::write_trace_jsonl(args.checkpoint_dir + "/trace.jsonl", {trace});

  if (target.has_eval_labels()) {
    std::vector<int> predictions;
    const cadm::Metrics metrics =
        cadm::evaluate(loaded.state, loaded.tokenizer, target, 1, &predictions);
    cadm::write_metrics_json(args.checkpoint_dir + "/metrics.json", metrics);
    cadm::write_predictions_jsonl(args.checkpoint_dir + "/predictions.jsonl", target,
                                  predictions);
    std::cout << "target metrics: " << metrics_to_json(metrics).dump() << "\n";
  } else {
    cadm::log_info("target corpus carries no labels; skipping metrics.json");
  }
  setup.config.warn_unused();
  std::cout << "adapted for " << trace.steps.size() << " steps over "
            << trace.epochs.size() << " epochs\n";
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data_path,
                 const std::string& labels_path, int positive_class,
                 const std::string& out_path) {
  auto loaded = cadm::load_checkpoint(checkpoint);
  auto corpus = cadm::load_corpus(data_path, cadm::Domain::Target);
  if (!labels_path.empty()) {
    corpus = corpus.with_eval_labels(cadm::load_labels_file(labels_path));
  }
  std::vector<int> predictions;
  const cadm::Metrics metrics =
      cadm::evaluate(loaded.state, loaded.tokenizer, corpus, positive_class,
                     &predictions);
  const json j = metrics_to_json(metrics);
  std::cout << j.dump(2) << "\n";
  if (!out_path.empty()) {
    cadm::write_metrics_json(out_path, metrics);
  }
  return 0;
}

int cmd_experiment(const std::string& config_path, const std::string& out_dir) {
  const auto config = cadm::ConfigFile::parse_file(config_path);
  const cadm::ExperimentConfig ecfg = cadm::experiment_config_from(config);
  config.warn_unused();
  const cadm::ExperimentReport report = cadm::run_experiment(ecfg, out_dir);
  std::cout << cadm::render_report_table(report);
  return report.any_failed() ? 2 : 0;
}

int cmd_report(const std::string& runs_dir) {
  const cadm::ExperimentReport report = cadm::assemble_report(runs_dir);
  cadm::write_report_files(report, runs_dir);
  std::cout << cadm::render_report_table(report);
  return report.any_failed() ? 2 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive adversarial domain mixup for misinformation classifiers"};
  app.require_subcommand(1);

  // synth
  std::string synth_config, synth_out;
  auto* synth = app.add_subcommand("synth", "generate a synthetic domain-shift dataset");
  synth->add_option("--config", synth_config, "config file")->required();
  synth->add_option("--out-dir", synth_out, "output directory")->required();

  // pipeline verbs
  PipelineArgs init_args, pretrain_args, disc_args, pseudo_args, adapt_args;
  const auto add_pipeline_options = [](CLI::App* cmd, PipelineArgs& args,
                                       bool need_source, bool need_target) {
    cmd->add_option("--config", args.config_path, "config file");
    auto* src = cmd->add_option("--source", args.source_path, "source corpus (jsonl)");
    auto* tgt = cmd->add_option("--target", args.target_path, "target corpus (jsonl)");
    if (need_source) src->required();
    if (need_target) tgt->required();
    cmd->add_option("--checkpoint-dir", args.checkpoint_dir, "checkpoint directory")
        ->required();
    cmd->add_option("--seed", args.seed, "override the config seed");
  };

  auto* init = app.add_subcommand("init", "initialize a model checkpoint");
  add_pipeline_options(init, init_args, true, true);
  auto* pretrain = app.add_subcommand("pretrain", "train on the labeled source corpus");
  add_pipeline_options(pretrain, pretrain_args, true, false);
  auto* disc = app.add_subcommand("train-disc", "train the domain discriminator");
  add_pipeline_options(disc, disc_args, true, true);
  auto* pseudo = app.add_subcommand("pseudo-label", "pseudo-label the target corpus");
  add_pipeline_options(pseudo, pseudo_args, false, true);
  auto* adapt = app.add_subcommand("adapt", "run contrastive adversarial domain mixup");
  add_pipeline_options(adapt, adapt_args, true, true);
  adapt->add_option("--target-labels", adapt_args.target_labels_path,
                    "held-out target labels for the final metrics (jsonl)");

  // inspect-checkpoint
  std::string inspect_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "print a checkpoint summary");
  inspect->add_option("--checkpoint", inspect_path, "checkpoint file")->required();

  // evaluate
  std::string eval_checkpoint, eval_data, eval_labels, eval_out;
  int eval_positive = 1;
  auto* evaluate = app.add_subcommand("evaluate", "compute metrics on a labeled corpus");
  evaluate->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  evaluate->add_option("--data", eval_data, "corpus to evaluate (jsonl)")->required();
  evaluate->add_option("--labels", eval_labels, "external labels file (jsonl)");
  evaluate->add_option("--positive-class", eval_positive, "positive class for F1 (default 1)");
  evaluate->add_option("--out", eval_out, "also write metrics.json here");

  // experiment / report
  std::string exp_config, exp_out, report_runs;
  auto* experiment = app.add_subcommand("experiment", "run the seeds x variants grid");
  experiment->add_option("--config", exp_config, "config file")->required();
  experiment->add_option("--out", exp_out, "output directory")->required();
  auto* report = app.add_subcommand("report", "re-render a report from run directories");
  report->add_option("--runs", report_runs, "experiment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(synth_config, synth_out);
    if (init->parsed()) return cmd_init(init_args);
    if (pretrain->parsed()) return cmd_pretrain(pretrain_args);
    if (disc->parsed()) return cmd_train_disc(disc_args);
    if (pseudo->parsed()) return cmd_pseudo_label(pseudo_args);
    if (adapt->parsed()) return cmd_adapt(adapt_args);
    if (inspect->parsed()) {
      std::cout << cadm::checkpoint_summary(inspect_path);
      return 0;
    }
    if (evaluate->parsed()) {
      return cmd_evaluate(eval_checkpoint, eval_data, eval_labels, eval_positive,
                          eval_out);
    }
    if (experiment->parsed()) return cmd_experiment(exp_config, exp_out);
    if (report->parsed()) return cmd_report(report_runs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
