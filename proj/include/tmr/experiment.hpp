#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tmr/datagen.hpp"
#include "tmr/geometry.hpp"
#include "tmr/optim.hpp"

namespace tmr {

/// Invalid configuration or arguments; the CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class DatasetSource { Synthetic, Files };

struct DatasetConfig {
  DatasetSource source = DatasetSource::Synthetic;
  SyntheticSpec synthetic;
  DatasetFiles files;
};

struct ModelConfig {
  int embed_dim = 512;
  int hidden_dim = 128;
  int word_embed_dim = 256;
  PoolMode pooling = PoolMode::Mean;
  LossKind loss = LossKind::NtXent;
  double tau = 0.1;
  double alpha = 0.5;
  double margin = 0.025;
  ModalityMode modalities = ModalityMode::Trimodal;
  bool fuse_normalize = false;
};

struct TrainingConfig {
  int batch_size = 128;
  int epochs = 20;
  double base_lr = 0.00035;
  int base_batch = 128;
  uint64_t seed = 0;
  SelectionMetric selection_metric = SelectionMetric::MRR;
};

struct EvaluationConfig {
  Split split = Split::Val;
  std::vector<Strategy> strategies = {Strategy::Image, Strategy::Voxel, Strategy::ImagePlusVoxel};
  std::vector<int> ks = {1, 5};
  std::vector<double> geometry_taus = {0.1, 0.3, 0.5};
  int n_samples = 10000;
  std::vector<uint64_t> seeds;  // empty: single run
  bool random_weights = false;
};

struct ExperimentConfig {
  std::string output_dir = "out";
  DatasetConfig dataset;
  ModelConfig model;
  TrainingConfig training;
  EvaluationConfig evaluation;
};

/// Reads the JSON config file (optional), applies the TMR_OUTPUT_DIR
/// environment override, then dotted-path overrides ("training.epochs=5"),
/// then the seed/output convenience overrides, validating every key and
/// value; unknown keys are errors.
ExperimentConfig load_experiment_config(const std::string& path, const std::vector<std::string>& overrides,
                                        std::optional<uint64_t> seed_override,
                                        std::optional<std::string> output_override);

/// Builds the configured dataset: synthetic specs are generated from
/// training.seed, file sources are loaded from disk.
Dataset build_dataset(const ExperimentConfig& cfg);

int run_gen_data(const ExperimentConfig& cfg);
int run_train(const ExperimentConfig& cfg);

struct EvalArgs {
  std::string checkpoint;          // single checkpoint path
  std::string checkpoint_pattern;  // multi-seed, "{seed}" placeholder
};
int run_eval(const ExperimentConfig& cfg, const EvalArgs& args);

struct RetrieveArgs {
  std::string checkpoint;
  std::string caption;  // whitespace-separated words
  Strategy strategy = Strategy::ImagePlusVoxel;
  int k = 5;
  bool json = false;
};
int run_retrieve(const ExperimentConfig& cfg, const RetrieveArgs& args);

struct ShapeMetricsResult {
  std::vector<double> f1;  // one per configured tau
  double chamfer = 0.0;
  double normal_consistency = 0.0;
};
ShapeMetricsResult run_shape_metrics(const ExperimentConfig& cfg, const std::string& gt_path,
                                     const std::string& ret_path);

int run_report(const ExperimentConfig& cfg);

}  // namespace tmr
