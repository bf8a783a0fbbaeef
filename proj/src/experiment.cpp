#include "tmr/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "json.hpp"

#include "tmr/metrics.hpp"
#include "tmr/retrieval.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace tmr {

namespace {

constexpr long long kNoUpper = std::numeric_limits<long long>::max();

std::string fmt(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config " + path + ": top level must be a JSON object");
  return j;
}

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : path) {
    if (c == '.') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  for (const auto& p : parts)
    if (p.empty()) throw ConfigError("bad override path: " + path);
  return parts;
}

// "a.b.c=value"; the value is parsed as JSON when possible, else kept as a
// string, so numbers, booleans and arrays all work unquoted.
void apply_override(json& root, const std::string& spec) {
  auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like section.key=value: " + spec);
  auto parts = split_path(spec.substr(0, eq));
  std::string text = spec.substr(eq + 1);

  json* node = &root;
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i])) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
    if (!node->is_object())
      throw ConfigError("override " + spec + ": " + parts[i] + " is not a config section");
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  (*node)[parts.back()] = value;
}

// Typed view over one config object. Every getter records the key it
// consumed; done() rejects whatever was never asked for.
class Section {
 public:
  Section(const json* j, std::string path) : j_(j), path_(std::move(path)) {}

  bool has(const char* key) const { return j_ != nullptr && j_->contains(key); }

  std::string where(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  const json& raw(const char* key) {
    seen_.insert(key);
    return (*j_)[key];
  }

  long long get_int(const char* key, long long def, long long lo, long long hi = kNoUpper) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number_integer() && !v.is_number_unsigned())
      throw ConfigError(where(key) + " must be an integer");
    long long x = v.get<long long>();
    check_range(key, static_cast<double>(x), static_cast<double>(lo),
                hi == kNoUpper ? std::numeric_limits<double>::infinity() : static_cast<double>(hi), false);
    return x;
  }

  uint64_t get_seed(const char* key, uint64_t def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (v.is_number_unsigned()) return v.get<uint64_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) return static_cast<uint64_t>(v.get<long long>());
    throw ConfigError(where(key) + " must be a non-negative integer");
  }

  double get_double(const char* key, double def, double lo, double hi, bool lo_exclusive = false) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(where(key) + " must be a number");
    double x = v.get<double>();
    check_range(key, x, lo, hi, lo_exclusive);
    return x;
  }

  bool get_bool(const char* key, bool def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(where(key) + " must be true or false");
    return v.get<bool>();
  }

  std::string get_string(const char* key, const std::string& def) {
    if (!has(key)) return def;
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(where(key) + " must be a string");
    return v.get<std::string>();
  }

  // For enum-ish strings: runs the supplied parser and rebrands its error
  // with the config path.
  template <typename T, typename Parse>
  T get_parsed(const char* key, T def, Parse parse) {
    if (!has(key)) return def;
    std::string s = get_string(key, "");
    try {
      return parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Section sub(const char* key) {
    if (!has(key)) return Section(nullptr, where(key));
    const json& v = raw(key);
    if (!v.is_object()) throw ConfigError(where(key) + " must be an object");
    return Section(&v, where(key));
  }

  void done() const {
    if (j_ == nullptr) return;
    for (const auto& item : j_->items()) {
      if (!seen_.count(item.key())) {
        std::string full = path_.empty() ? item.key() : path_ + "." + item.key();
        throw ConfigError("unknown config key: " + full);
      }
    }
  }

 private:
  void check_range(const char* key, double x, double lo, double hi, bool lo_exclusive) const {
    bool low_ok = lo_exclusive ? x > lo : x >= lo;
    if (!low_ok || x > hi) {
      std::string bounds;
      if (hi == std::numeric_limits<double>::infinity())
        bounds = (lo_exclusive ? "> " : ">= ") + fmt_g(lo);
      else
        bounds = "in [" + fmt_g(lo) + ", " + fmt_g(hi) + "]";
      throw ConfigError(where(key) + " must be " + bounds + ", got " + fmt_g(x));
    }
  }

  const json* j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::vector<CategorySpec> parse_categories(Section& sec, const std::vector<CategorySpec>& def) {
  if (!sec.has("categories")) return def;
  const json& arr = sec.raw("categories");
  if (!arr.is_array() || arr.empty())
    throw ConfigError(sec.where("categories") + " must be a non-empty array");
  std::vector<CategorySpec> out;
  for (size_t i = 0; i < arr.size(); ++i) {
    std::string at = sec.where("categories") + "[" + std::to_string(i) + "]";
    const json& c = arr[i];
    if (!c.is_object()) throw ConfigError(at + " must be an object");
    CategorySpec spec;
    Section cs(&c, at);
    spec.name = cs.get_string("name", "");
    if (spec.name.empty()) throw ConfigError(at + ".name is required");
    if (cs.has("parts")) {
      const json& parts = cs.raw("parts");
      if (!parts.is_array()) throw ConfigError(at + ".parts must be an array of strings");
      for (const auto& p : parts) {
        if (!p.is_string() || p.get<std::string>().empty())
          throw ConfigError(at + ".parts must hold non-empty strings");
        spec.parts.push_back(p.get<std::string>());
      }
    }
    cs.done();
    out.push_back(std::move(spec));
  }
  return out;
}

std::array<double, 3> parse_fractions(Section& sec, const std::array<double, 3>& def) {
  if (!sec.has("split_fractions")) return def;
  const json& arr = sec.raw("split_fractions");
  if (!arr.is_array() || arr.size() != 3)
    throw ConfigError(sec.where("split_fractions") + " must be an array of 3 numbers (train, val, test)");
  std::array<double, 3> out{};
  double sum = 0.0;
  for (size_t i = 0; i < 3; ++i) {
    if (!arr[i].is_number() || arr[i].get<double>() < 0.0)
      throw ConfigError(sec.where("split_fractions") + " entries must be non-negative numbers");
    out[i] = arr[i].get<double>();
    sum += out[i];
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(sec.where("split_fractions") + " must sum to 1");
  return out;
}

std::vector<int> parse_int_list(Section& sec, const char* key, const std::vector<int>& def, long long lo) {
  if (!sec.has(key)) return def;
  const json& v = sec.raw(key);
  json arr = v.is_array() ? v : json::array({v});
  if (arr.empty()) throw ConfigError(sec.where(key) + " must not be empty");
  std::vector<int> out;
  for (const auto& e : arr) {
    if (!e.is_number_integer() && !e.is_number_unsigned())
      throw ConfigError(sec.where(key) + " entries must be integers");
    long long x = e.get<long long>();
    if (x < lo || x > std::numeric_limits<int>::max())
      throw ConfigError(sec.where(key) + " entries must be >= " + std::to_string(lo));
    out.push_back(static_cast<int>(x));
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<double> parse_double_list(Section& sec, const char* key, const std::vector<double>& def) {
  if (!sec.has(key)) return def;
  const json& v = sec.raw(key);
  if (!v.is_array() || v.empty()) throw ConfigError(sec.where(key) + " must be a non-empty array");
  std::vector<double> out;
  for (const auto& e : v) {
    if (!e.is_number() || e.get<double>() <= 0.0)
      throw ConfigError(sec.where(key) + " entries must be positive numbers");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<uint64_t> parse_seed_list(Section& sec, const char* key) {
  if (!sec.has(key)) return {};
  const json& v = sec.raw(key);
  if (!v.is_array()) throw ConfigError(sec.where(key) + " must be an array of seeds");
  std::vector<uint64_t> out;
  for (const auto& e : v) {
    if (e.is_number_unsigned())
      out.push_back(e.get<uint64_t>());
    else if (e.is_number_integer() && e.get<long long>() >= 0)
      out.push_back(static_cast<uint64_t>(e.get<long long>()));
    else
      throw ConfigError(sec.where(key) + " entries must be non-negative integers");
  }
  return out;
}

std::vector<Strategy> parse_strategies(Section& sec, const std::vector<Strategy>& def) {
  if (!sec.has("strategies")) return def;
  const json& v = sec.raw("strategies");
  if (!v.is_array() || v.empty())
    throw ConfigError(sec.where("strategies") + " must be a non-empty array");
  std::vector<Strategy> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ConfigError(sec.where("strategies") + " entries must be strings");
    try {
      out.push_back(parse_strategy(e.get<std::string>()));
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(sec.where("strategies") + ": " + ex.what());
    }
  }
  return out;
}

ExperimentConfig parse_config(const json& root) {
  ExperimentConfig cfg;
  Section top(&root, "");

  cfg.output_dir = top.get_string("output_dir", cfg.output_dir);
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");

  Section ds = top.sub("dataset");
  {
    std::string source = ds.get_string("source", "synthetic");
    if (source == "synthetic")
      cfg.dataset.source = DatasetSource::Synthetic;
    else if (source == "files")
      cfg.dataset.source = DatasetSource::Files;
    else
      throw ConfigError("dataset.source must be \"synthetic\" or \"files\", got \"" + source + "\"");

    Section syn = ds.sub("synthetic");
    SyntheticSpec& s = cfg.dataset.synthetic;
    s.n_objects = static_cast<int>(syn.get_int("n_objects", s.n_objects, 1, 10000000));
    s.categories = parse_categories(syn, s.categories);
    s.colors = static_cast<int>(syn.get_int("colors", s.colors, 1, 12));
    s.sizes = static_cast<int>(syn.get_int("sizes", s.sizes, 1, 5));
    s.views = static_cast<int>(syn.get_int("views", s.views, 1, 4096));
    s.voxel_resolution = static_cast<int>(syn.get_int("voxel_resolution", s.voxel_resolution, 1, 1024));
    s.image_resolution = static_cast<int>(syn.get_int("image_resolution", s.image_resolution, 1, 16384));
    s.noise_sigma = syn.get_double("noise_sigma", s.noise_sigma, 0.0, 1e6);
    s.captions_per_object = static_cast<int>(syn.get_int("captions_per_object", s.captions_per_object, 1, 10000));
    s.max_caption_len = static_cast<int>(syn.get_int("max_caption_len", s.max_caption_len, 1, 4096));
    s.split_fractions = parse_fractions(syn, s.split_fractions);
    syn.done();

    Section files = ds.sub("files");
    cfg.dataset.files.captions = files.get_string("captions", "");
    cfg.dataset.files.vocabulary = files.get_string("vocabulary", "");
    cfg.dataset.files.image_features = files.get_string("image_features", "");
    cfg.dataset.files.voxel_features = files.get_string("voxel_features", "");
    files.done();

    if (cfg.dataset.source == DatasetSource::Files) {
      const DatasetFiles& f = cfg.dataset.files;
      if (f.captions.empty() || f.vocabulary.empty() || f.image_features.empty() || f.voxel_features.empty())
        throw ConfigError(
            "dataset.files (captions, vocabulary, image_features, voxel_features) are all "
            "required when dataset.source is \"files\"");
    }
  }
  ds.done();

  Section model = top.sub("model");
  {
    ModelConfig& m = cfg.model;
    m.embed_dim = static_cast<int>(model.get_int("embed_dim", m.embed_dim, 1, 1000000));
    m.hidden_dim = static_cast<int>(model.get_int("hidden_dim", m.hidden_dim, 1, 1000000));
    m.word_embed_dim = static_cast<int>(model.get_int("word_embed_dim", m.word_embed_dim, 1, 1000000));
    m.pooling = model.get_parsed("pooling", m.pooling, parse_pool);
    m.loss = model.get_parsed("loss", m.loss, parse_loss_kind);
    m.tau = model.get_double("tau", m.tau, 0.0, 1e9, true);
    m.alpha = model.get_double("alpha", m.alpha, 0.0, 1.0);
    m.margin = model.get_double("margin", m.margin, 0.0, 2.0, true);
    m.modalities = model.get_parsed("modalities", m.modalities, parse_modality_mode);
    m.fuse_normalize = model.get_bool("fuse_normalize", m.fuse_normalize);
  }
  model.done();

  Section training = top.sub("training");
  {
    TrainingConfig& t = cfg.training;
    t.batch_size = static_cast<int>(training.get_int("batch_size", t.batch_size, 1, 1000000));
    t.epochs = static_cast<int>(training.get_int("epochs", t.epochs, 0, 1000000));
    t.base_lr = training.get_double("base_lr", t.base_lr, 0.0, std::numeric_limits<double>::infinity(), true);
    t.base_batch = static_cast<int>(training.get_int("base_batch", t.base_batch, 1, 1000000));
    t.seed = training.get_seed("seed", t.seed);
    t.selection_metric = training.get_parsed("selection_metric", t.selection_metric, parse_selection_metric);
  }
  training.done();

  Section eval = top.sub("evaluation");
  {
    EvaluationConfig& e = cfg.evaluation;
    e.split = eval.get_parsed("split", e.split, parse_split);
    e.strategies = parse_strategies(eval, e.strategies);
    e.ks = parse_int_list(eval, "k", e.ks, 1);
    e.geometry_taus = parse_double_list(eval, "geometry_taus", e.geometry_taus);
    e.n_samples = static_cast<int>(eval.get_int("n_samples", e.n_samples, 1, 100000000));
    e.seeds = parse_seed_list(eval, "seeds");
    e.random_weights = eval.get_bool("random_weights", e.random_weights);
  }
  eval.done();

  top.done();
  return cfg;
}

TrainConfig train_config_from(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = cfg.training.batch_size;
  tc.base_lr = cfg.training.base_lr;
  tc.base_batch = cfg.training.base_batch;
  tc.epochs = cfg.training.epochs;
  tc.seed = cfg.training.seed;
  tc.mode = cfg.model.modalities;
  tc.loss = cfg.model.loss;
  tc.contrastive.tau = cfg.model.tau;
  tc.contrastive.alpha = cfg.model.alpha;
  tc.triplet.margin = cfg.model.margin;
  tc.selection = cfg.training.selection_metric;
  tc.pooling = cfg.model.pooling;
  tc.word_dim = cfg.model.word_embed_dim;
  tc.hidden = cfg.model.hidden_dim;
  tc.embed_dim = cfg.model.embed_dim;
  tc.fuse_normalize = cfg.model.fuse_normalize;
  return tc;
}

std::string mask_label(uint32_t mask) {
  bool img = (mask & kTrainedImage) != 0;
  bool vox = (mask & kTrainedVoxel) != 0;
  if (img && vox) return "trimodal";
  if (img) return "bimodal-it";
  if (vox) return "bimodal-vt";
  return "text-only";
}

void check_checkpoint_fits(const Dataset& ds, const Checkpoint& ck, const std::string& path) {
  if (ck.params.text.word_emb.rows != ds.vocab.size())
    throw ConfigError("checkpoint " + path + ": vocabulary size " +
                      std::to_string(ck.params.text.word_emb.rows) + " does not match the dataset's " +
                      std::to_string(ds.vocab.size()));
  if ((ck.trained_mask & kTrainedImage) && ck.params.image.head.in_dim() != ds.view_dim())
    throw ConfigError("checkpoint " + path + ": image tower expects view dim " +
                      std::to_string(ck.params.image.head.in_dim()) + ", dataset has " +
                      std::to_string(ds.view_dim()));
  if ((ck.trained_mask & kTrainedVoxel) && ck.params.voxel.in_dim() != ds.voxel_dim())
    throw ConfigError("checkpoint " + path + ": voxel tower expects dim " +
                      std::to_string(ck.params.voxel.in_dim()) + ", dataset has " +
                      std::to_string(ds.voxel_dim()));
}

Checkpoint load_checkpoint_checked(const std::string& path, const Dataset& ds) {
  if (path.empty()) throw ConfigError("a checkpoint path is required");
  if (!fs::exists(path)) throw ConfigError("checkpoint not found: " + path);
  Checkpoint ck = read_checkpoint(path);
  check_checkpoint_fits(ds, ck, path);
  return ck;
}

ModelDims dims_for(const Dataset& ds, const ModelConfig& m) {
  ModelDims d;
  d.vocab = ds.vocab.size();
  d.word_dim = m.word_embed_dim;
  d.view_dim = ds.view_dim();
  d.voxel_dim = ds.voxel_dim();
  d.hidden = m.hidden_dim;
  d.embed_dim = m.embed_dim;
  return d;
}

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Standard error of the mean with the n-1 variance estimate.
double standard_error(const std::vector<double>& xs) {
  size_t n = xs.size();
  if (n < 2) return 0.0;
  double m = sample_mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

// One row of the metrics table. Cells without a value stay disengaged and
// render empty (CSV) or "-" (text table).
struct MetricsRow {
  std::string model;
  std::string strategy;
  std::array<std::optional<double>, 9> mean;  // RR@1 RR@5 NDCG@5 MRR F1^0.1 F1^0.3 F1^0.5 CD NC
  std::array<std::optional<double>, 9> se;
};

const std::array<const char*, 11> kMetricsHeader = {
    "model", "strategy", "RR@1", "RR@5", "NDCG@5", "MRR", "F1^0.1", "F1^0.3", "F1^0.5", "CD", "NC"};

std::string csv_cell(const MetricsRow& row, size_t i) {
  if (!row.mean[i]) return "";
  std::string s = fmt(*row.mean[i], 6);
  if (row.se[i]) s += "±" + fmt(*row.se[i], 6);
  return s;
}

std::string table_cell(const MetricsRow& row, size_t i) {
  if (!row.mean[i]) return "-";
  std::string s = fmt(*row.mean[i], 2);
  if (row.se[i]) s += " ± " + fmt(*row.se[i], 2);
  return s;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (size_t i = 0; i < kMetricsHeader.size(); ++i) out << (i ? "," : "") << kMetricsHeader[i];
  out << "\n";
  for (const auto& row : rows) {
    out << row.model << "," << row.strategy;
    for (size_t i = 0; i < row.mean.size(); ++i) out << "," << csv_cell(row, i);
    out << "\n";
  }
}

std::string render_metrics_table(const std::vector<MetricsRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  cells.emplace_back(kMetricsHeader.begin(), kMetricsHeader.end());
  for (const auto& row : rows) {
    std::vector<std::string> line = {row.model, row.strategy};
    for (size_t i = 0; i < row.mean.size(); ++i) line.push_back(table_cell(row, i));
    cells.push_back(std::move(line));
  }
  std::vector<size_t> width(kMetricsHeader.size(), 0);
  for (const auto& line : cells)
    for (size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream out;
  for (const auto& line : cells) {
    for (size_t i = 0; i < line.size(); ++i) {
      if (i) out << "  ";
      out << line[i];
      if (i + 1 < line.size()) out << std::string(width[i] - line[i].size(), ' ');
    }
    out << "\n";
  }
  return out.str();
}

void fill_ranking_cells(MetricsRow& row, const std::vector<RankingSummary>& per_seed) {
  std::array<std::vector<double>, 4> vals;
  for (const auto& s : per_seed) {
    vals[0].push_back(s.rr_at.at(1));
    vals[1].push_back(s.rr_at.at(5));
    vals[2].push_back(s.ndcg_at.at(5));
    vals[3].push_back(s.mrr);
  }
  for (size_t i = 0; i < 4; ++i) {
    row.mean[i] = sample_mean(vals[i]);
    if (per_seed.size() > 1) row.se[i] = standard_error(vals[i]);
  }
}

MetricsRow expected_random_row(int n_candidates) {
  RankingSummary s = expected_random(n_candidates, {1, 5});
  MetricsRow row;
  row.model = "random-expected";
  row.strategy = "-";
  row.mean[0] = s.rr_at.at(1);
  row.mean[1] = s.rr_at.at(5);
  row.mean[2] = s.ndcg_at.at(5);
  row.mean[3] = s.mrr;
  return row;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << content;
}

std::string seed_tag(uint64_t seed) { return "seed" + std::to_string(seed); }

std::string substitute_seed(const std::string& pattern, uint64_t seed) {
  const std::string key = "{seed}";
  auto pos = pattern.find(key);
  if (pos == std::string::npos)
    throw ConfigError("checkpoint pattern must contain {seed}: " + pattern);
  std::string out = pattern;
  do {
    out.replace(pos, key.size(), std::to_string(seed));
    pos = out.find(key);
  } while (pos != std::string::npos);
  return out;
}

ordered_json ranked_result_json(const RankedResult& r, Strategy strategy, const std::string& gt_id) {
  ordered_json j;
  j["query_id"] = r.query_id;
  if (!gt_id.empty()) {
    j["gt_id"] = gt_id;
    j["gt_rank"] = r.gt_rank;
  }
  j["strategy"] = strategy_name(strategy);
  ordered_json topk = ordered_json::array();
  for (const auto& s : r.topk) {
    ordered_json e;
    e["id"] = s.id;
    e["score"] = s.score;
    topk.push_back(e);
  }
  j["topk"] = topk;
  return j;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::string& path, const std::vector<std::string>& overrides,
                                        std::optional<uint64_t> seed_override,
                                        std::optional<std::string> output_override) {
  json root = path.empty() ? json::object() : read_json_file(path);
  if (const char* env = std::getenv("TMR_OUTPUT_DIR")) {
    if (*env != '\0') root["output_dir"] = std::string(env);
  }
  for (const auto& o : overrides) apply_override(root, o);
  if (output_override) root["output_dir"] = *output_override;
  if (seed_override) {
    if (root.contains("training") && !root["training"].is_object())
      throw ConfigError("training must be an object");
    root["training"]["seed"] = *seed_override;
  }
  return parse_config(root);
}

Dataset build_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset.source == DatasetSource::Synthetic)
    return generate_synthetic_dataset(cfg.dataset.synthetic, cfg.training.seed);
  const DatasetFiles& f = cfg.dataset.files;
  for (const std::string& p : {f.captions, f.vocabulary, f.image_features, f.voxel_features})
    if (!fs::exists(p)) throw ConfigError("dataset file not found: " + p);
  return load_dataset_from_files(f, cfg.dataset.synthetic.max_caption_len);
}

int run_gen_data(const ExperimentConfig& cfg) {
  if (cfg.dataset.source != DatasetSource::Synthetic)
    throw ConfigError("gen-data requires dataset.source \"synthetic\"");
  Dataset ds = generate_synthetic_dataset(cfg.dataset.synthetic, cfg.training.seed);

  fs::create_directories(cfg.output_dir);
  write_dataset_files(cfg.output_dir, ds);

  int n_train = static_cast<int>(ds.split(Split::Train).size());
  int n_val = static_cast<int>(ds.split(Split::Val).size());
  int n_test = static_cast<int>(ds.split(Split::Test).size());
  std::printf("wrote %s/{captions.jsonl, vocab.txt, text_features.tcf, image_features.tcf, voxel_features.tcf}\n",
              cfg.output_dir.c_str());
  std::printf("objects %d (train %d, val %d, test %d), captions per object %d\n",
              static_cast<int>(ds.records.size()), n_train, n_val, n_test,
              static_cast<int>(ds.records.empty() ? 0 : ds.records[0].caption_ids.size()));
  std::printf("vocab %d tokens, views %d, view dim %d, voxel dim %d\n", ds.vocab.size(), ds.views,
              ds.view_dim(), ds.voxel_dim());
  return 0;
}

int run_train(const ExperimentConfig& cfg) {
  Dataset ds = build_dataset(cfg);
  TrainConfig tc = train_config_from(cfg);
  TrainResult res = train(ds, tc);

  fs::create_directories(cfg.output_dir);
  std::string ckpt_path = cfg.output_dir + "/checkpoint.tckp";
  write_checkpoint(ckpt_path, res.params, res.trained_mask);

  std::ostringstream history;
  for (const auto& e : res.history) {
    ordered_json j;
    j["epoch"] = e.epoch;
    j["train_loss"] = e.train_loss;
    j["val_rr1"] = e.val_rr1;
    j["val_rr5"] = e.val_rr5;
    j["val_ndcg5"] = e.val_ndcg5;
    j["val_mrr"] = e.val_mrr;
    history << j.dump() << "\n";
  }
  write_text_file(cfg.output_dir + "/history.jsonl", history.str());

  for (const auto& e : res.history)
    std::printf("epoch %3d  loss %10.6f  val RR@1 %6.2f  RR@5 %6.2f  NDCG@5 %6.2f  MRR %6.2f\n", e.epoch,
                e.train_loss, e.val_rr1, e.val_rr5, e.val_ndcg5, e.val_mrr);
  if (res.best_epoch == 0)
    std::printf("best epoch 0 (initialization was never improved on)\n");
  else
    std::printf("best epoch %d by %s\n", res.best_epoch, selection_metric_name(tc.selection));
  std::printf("checkpoint %s (%s, %s)\n", ckpt_path.c_str(), modality_mode_name(tc.mode),
              loss_kind_name(tc.loss));
  return 0;
}

int run_eval(const ExperimentConfig& cfg, const EvalArgs& args) {
  Dataset ds = build_dataset(cfg);
  auto records = ds.split(cfg.evaluation.split);
  if (records.empty())
    throw ConfigError(std::string("split '") + split_name(cfg.evaluation.split) + "' has no records");
  auto queries = caption_queries(records);

  std::vector<int> ks = cfg.evaluation.ks;
  ks.push_back(1);
  ks.push_back(5);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  int topk = ks.back();

  struct Run {
    std::string tag;  // empty for a single run
    Checkpoint ck;
  };
  std::vector<Run> runs;
  if (cfg.evaluation.seeds.empty()) {
    if (cfg.evaluation.random_weights) {
      if (!args.checkpoint.empty())
        throw ConfigError("--checkpoint conflicts with evaluation.random_weights");
      Checkpoint ck{init_model(dims_for(ds, cfg.model), cfg.model.pooling, cfg.training.seed),
                    kTrainedText | kTrainedImage | kTrainedVoxel};
      runs.push_back({"", std::move(ck)});
    } else {
      if (!args.checkpoint_pattern.empty())
        throw ConfigError("--checkpoint-pattern needs evaluation.seeds");
      if (args.checkpoint.empty())
        throw ConfigError("eval needs --checkpoint, or evaluation.random_weights=true");
      runs.push_back({"", load_checkpoint_checked(args.checkpoint, ds)});
    }
  } else {
    for (uint64_t seed : cfg.evaluation.seeds) {
      if (cfg.evaluation.random_weights) {
        Checkpoint ck{init_model(dims_for(ds, cfg.model), cfg.model.pooling, seed),
                      kTrainedText | kTrainedImage | kTrainedVoxel};
        runs.push_back({seed_tag(seed), std::move(ck)});
      } else {
        if (args.checkpoint_pattern.empty())
          throw ConfigError("evaluation.seeds needs --checkpoint-pattern with a {seed} placeholder");
        runs.push_back(
            {seed_tag(seed), load_checkpoint_checked(substitute_seed(args.checkpoint_pattern, seed), ds)});
      }
    }
  }

  // Everything is computed before the first byte is written.
  struct DumpFile {
    std::string name;
    std::string content;
  };
  std::vector<DumpFile> dumps;
  std::vector<MetricsRow> rows;
  std::string model_label = cfg.evaluation.random_weights ? "random" : mask_label(runs[0].ck.trained_mask);

  std::vector<ShapeIndex> indexes;
  indexes.reserve(runs.size());
  for (const auto& run : runs)
    indexes.push_back(build_index(records, run.ck.params, run.ck.trained_mask, cfg.model.fuse_normalize));

  for (Strategy strategy : cfg.evaluation.strategies) {
    std::vector<RankingSummary> per_seed;
    for (size_t r = 0; r < runs.size(); ++r) {
      auto results = evaluate_split(indexes[r], runs[r].ck.params, queries, strategy, topk);
      per_seed.push_back(summarize_ranking(results, ks));

      std::ostringstream dump;
      for (size_t q = 0; q < results.size(); ++q)
        dump << ranked_result_json(results[q], strategy, queries[q].gt_id).dump() << "\n";
      std::string name = "retrieval_";
      if (!runs[r].tag.empty()) name += runs[r].tag + "_";
      name += std::string(strategy_name(strategy)) + ".jsonl";
      dumps.push_back({name, dump.str()});
    }
    MetricsRow row;
    row.model = model_label;
    row.strategy = strategy_name(strategy);
    fill_ranking_cells(row, per_seed);
    rows.push_back(row);
  }
  rows.push_back(expected_random_row(static_cast<int>(records.size())));

  std::ostringstream head;
  head << "split " << split_name(cfg.evaluation.split) << ", candidates " << records.size() << ", queries "
       << queries.size();
  if (runs.size() > 1) head << ", seeds " << runs.size() << " (mean ± standard error)";
  head << "\n";
  std::string table = head.str() + render_metrics_table(rows);

  fs::create_directories(cfg.output_dir);
  write_metrics_csv(cfg.output_dir + "/metrics.csv", rows);
  write_text_file(cfg.output_dir + "/metrics.txt", table);
  for (const auto& d : dumps) write_text_file(cfg.output_dir + "/" + d.name, d.content);

  std::fputs(table.c_str(), stdout);
  std::printf("wrote %s/metrics.csv, metrics.txt and %d retrieval dump(s)\n", cfg.output_dir.c_str(),
              static_cast<int>(dumps.size()));
  return 0;
}

int run_retrieve(const ExperimentConfig& cfg, const RetrieveArgs& args) {
  if (args.k < 1) throw ConfigError("--k must be >= 1");
  Dataset ds = build_dataset(cfg);
  auto records = ds.split(cfg.evaluation.split);
  if (records.empty())
    throw ConfigError(std::string("split '") + split_name(cfg.evaluation.split) + "' has no records");
  Checkpoint ck = load_checkpoint_checked(args.checkpoint, ds);

  std::istringstream words(args.caption);
  std::string word;
  std::vector<int> token_ids;
  std::vector<std::string> unknown;
  int n_words = 0;
  while (words >> word) {
    ++n_words;
    int id = ds.vocab.lookup(word);
    if (id < 0)
      unknown.push_back(word);
    else if (static_cast<int>(token_ids.size()) < ds.max_caption_len)
      token_ids.push_back(id);
  }
  if (n_words == 0) throw ConfigError("--caption is empty");
  if (token_ids.empty()) {
    std::string list;
    for (const auto& w : unknown) list += (list.empty() ? "" : ", ") + w;
    throw ConfigError("no caption word is in the vocabulary: " + list);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& w : unknown) list += (list.empty() ? "" : ", ") + w;
    std::fprintf(stderr, "ignoring unknown words: %s\n", list.c_str());
  }

  ShapeIndex index = build_index(records, ck.params, ck.trained_mask, cfg.model.fuse_normalize);
  Vec text = encode_text(ck.params.text, token_ids);
  RankedResult r = query(index, text, args.strategy, args.k);

  if (args.json) {
    ordered_json out = ordered_json::array();
    for (size_t i = 0; i < r.topk.size(); ++i) {
      ordered_json e;
      e["rank"] = i + 1;
      e["id"] = r.topk[i].id;
      e["score"] = r.topk[i].score;
      out.push_back(e);
    }
    std::printf("%s\n", out.dump(2).c_str());
  } else {
    for (size_t i = 0; i < r.topk.size(); ++i)
      std::printf("%2d  %s  %.6f\n", static_cast<int>(i + 1), r.topk[i].id.c_str(), r.topk[i].score);
  }
  return 0;
}

ShapeMetricsResult run_shape_metrics(const ExperimentConfig& cfg, const std::string& gt_path,
                                     const std::string& ret_path) {
  if (!fs::exists(gt_path)) throw ConfigError("mesh not found: " + gt_path);
  if (!fs::exists(ret_path)) throw ConfigError("mesh not found: " + ret_path);
  TriangleMesh gt_mesh = load_obj(gt_path);
  TriangleMesh ret_mesh = load_obj(ret_path);

  Rng gt_rng = Rng::stream(cfg.training.seed, "shape.gt");
  Rng ret_rng = Rng::stream(cfg.training.seed, "shape.ret");
  PointCloud gt = sample_mesh_points(gt_mesh, cfg.evaluation.n_samples, gt_rng);
  PointCloud ret = sample_mesh_points(ret_mesh, cfg.evaluation.n_samples, ret_rng);
  gt = rescale_to_units(gt, bounding_box(gt_mesh.vertices));
  ret = rescale_to_units(ret, bounding_box(ret_mesh.vertices));

  ShapeMetricsResult res;
  std::string line;
  for (double tau : cfg.evaluation.geometry_taus) {
    res.f1.push_back(f1_tau(gt, ret, tau));
    line += "F1^" + fmt_g(tau) + "=" + fmt(res.f1.back(), 6) + " ";
  }
  res.chamfer = chamfer_distance(gt, ret);
  res.normal_consistency = normal_consistency(gt, ret);
  line += "CD=" + fmt(res.chamfer, 6) + " NC=" + fmt(res.normal_consistency, 6);
  std::printf("%s\n", line.c_str());
  return res;
}

int run_report(const ExperimentConfig& cfg) {
  std::vector<uint64_t> seeds = cfg.evaluation.seeds;
  if (seeds.empty()) seeds.push_back(cfg.training.seed);
  const ModalityMode variants[] = {ModalityMode::BimodalIT, ModalityMode::BimodalVT, ModalityMode::Trimodal};

  std::vector<MetricsRow> rows;
  int n_candidates = 0;
  for (ModalityMode mode : variants) {
    Strategy strategy = default_strategy(mode);
    std::vector<RankingSummary> per_seed;
    for (uint64_t seed : seeds) {
      ExperimentConfig run_cfg = cfg;
      run_cfg.training.seed = seed;
      run_cfg.model.modalities = mode;
      Dataset ds = build_dataset(run_cfg);
      auto records = ds.split(cfg.evaluation.split);
      if (records.empty())
        throw ConfigError(std::string("split '") + split_name(cfg.evaluation.split) + "' has no records");
      n_candidates = static_cast<int>(records.size());

      TrainResult res = train(ds, train_config_from(run_cfg));
      per_seed.push_back(evaluate_records(res.params, res.trained_mask, records, strategy, {1, 5},
                                          cfg.model.fuse_normalize, 5));
      std::printf("%s seed %llu: best epoch %d, %s RR@1 %.2f MRR %.2f\n", modality_mode_name(mode),
                  static_cast<unsigned long long>(seed), res.best_epoch, strategy_name(strategy),
                  per_seed.back().rr_at.at(1), per_seed.back().mrr);
    }
    MetricsRow row;
    row.model = modality_mode_name(mode);
    row.strategy = strategy_name(strategy);
    fill_ranking_cells(row, per_seed);
    rows.push_back(row);
  }
  rows.push_back(expected_random_row(n_candidates));

  std::ostringstream head;
  head << "split " << split_name(cfg.evaluation.split) << ", candidates " << n_candidates << ", loss "
       << loss_kind_name(cfg.model.loss) << ", seeds " << seeds.size();
  if (seeds.size() > 1) head << " (mean ± standard error)";
  head << "\n";
  std::string table = head.str() + render_metrics_table(rows);

  fs::create_directories(cfg.output_dir);
  write_metrics_csv(cfg.output_dir + "/report.csv", rows);
  write_text_file(cfg.output_dir + "/report.txt", table);
  std::fputs(table.c_str(), stdout);
  std::printf("wrote %s/report.csv, report.txt\n", cfg.output_dir.c_str());
  return 0;
}

}  // namespace tmr
