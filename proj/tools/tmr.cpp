#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tmr/experiment.hpp"

namespace {

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<uint64_t> seed;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config, "JSON experiment config")->type_name("FILE");
  cmd->add_option("--set", args.sets, "override a config value, e.g. --set training.epochs=5")
      ->type_name("KEY=VALUE");
  cmd->add_option("--seed", args.seed, "seed for data generation, init and batching");
  cmd->add_option("-o,--out", args.out, "output directory")->type_name("DIR");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"trimodal text-to-shape retrieval"};
  app.require_subcommand(1);

  CommonArgs common;
  tmr::EvalArgs eval_args;
  tmr::RetrieveArgs retrieve_args;
  std::string retrieve_strategy = "I+V";
  std::string gt_path, ret_path;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic trimodal dataset");
  add_common(gen, common);

  CLI::App* train = app.add_subcommand("train", "train the selected towers");
  add_common(train, common);

  CLI::App* eval = app.add_subcommand("eval", "rank every caption of a split and report metrics");
  add_common(eval, common);
  eval->add_option("--checkpoint", eval_args.checkpoint, "trained checkpoint")->type_name("FILE");
  eval->add_option("--checkpoint-pattern", eval_args.checkpoint_pattern,
                   "per-seed checkpoint path with a {seed} placeholder")
      ->type_name("PATTERN");

  CLI::App* retrieve = app.add_subcommand("retrieve", "rank shapes for one caption");
  add_common(retrieve, common);
  retrieve->add_option("--checkpoint", retrieve_args.checkpoint, "trained checkpoint")
      ->type_name("FILE")
      ->required();
  retrieve->add_option("--caption", retrieve_args.caption, "query caption (whitespace-separated words)")
      ->required();
  retrieve->add_option("--strategy", retrieve_strategy, "candidate embedding: I, V or I+V");
  retrieve->add_option("--k", retrieve_args.k, "number of results");
  retrieve->add_flag("--json", retrieve_args.json, "print results as JSON");

  CLI::App* shape = app.add_subcommand("shape-metrics", "compare two meshes with sampled point clouds");
  add_common(shape, common);
  shape->add_option("--gt", gt_path, "ground-truth OBJ mesh")->type_name("FILE")->required();
  shape->add_option("--ret", ret_path, "retrieved OBJ mesh")->type_name("FILE")->required();

  CLI::App* report = app.add_subcommand("report", "train and score all modality modes side by side");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    tmr::ExperimentConfig cfg = tmr::load_experiment_config(common.config, common.sets, common.seed, common.out);
    if (gen->parsed()) return tmr::run_gen_data(cfg);
    if (train->parsed()) return tmr::run_train(cfg);
    if (eval->parsed()) return tmr::run_eval(cfg, eval_args);
    if (retrieve->parsed()) {
      retrieve_args.strategy = tmr::parse_strategy(retrieve_strategy);
      return tmr::run_retrieve(cfg, retrieve_args);
    }
    if (shape->parsed()) {
      tmr::run_shape_metrics(cfg, gt_path, ret_path);
      return 0;
    }
    if (report->parsed()) return tmr::run_report(cfg);
    std::fprintf(stderr, "error: no command\n");
    return 1;
  } catch (const tmr::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const tmr::DivergenceError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
