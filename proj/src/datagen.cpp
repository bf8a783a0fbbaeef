#include "tmr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace tmr {

using ordered_json = nlohmann::ordered_json;

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split name: " + s);
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& toks) {
  if (toks.empty()) throw std::invalid_argument("Vocabulary: token list is empty");
  Vocabulary v;
  v.tokens = toks;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (toks[i].empty()) throw std::invalid_argument("Vocabulary: empty token at index " + std::to_string(i));
    auto [it, inserted] = v.index.emplace(toks[i], static_cast<int>(i));
    if (!inserted) throw std::invalid_argument("Vocabulary: duplicate token '" + toks[i] + "'");
  }
  return v;
}

int Vocabulary::lookup(const std::string& tok) const {
  auto it = index.find(tok);
  return it == index.end() ? -1 : it->second;
}

std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab, int max_len) {
  if (max_len < 1) throw std::invalid_argument("tokenize: max_len must be positive");
  std::vector<int> ids;
  for (const auto& w : words) {
    int id = vocab.lookup(w);
    if (id < 0) continue;  // unknown tokens are dropped
    if (static_cast<int>(ids.size()) < max_len) ids.push_back(id);
  }
  if (ids.empty()) throw std::invalid_argument("tokenize: caption has no in-vocabulary tokens");
  ids.resize(max_len, Vocabulary::pad_id);
  return ids;
}

namespace {

int hist_bin(double v, int bins, const char* where) {
  if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument(std::string(where) + ": channel value outside [0,1]");
  int b = static_cast<int>(v * bins);
  return std::min(b, bins - 1);
}

}  // namespace

Vec featurize_voxel(const VoxelGrid& grid, int bins) {
  if (bins < 1) throw std::invalid_argument("featurize_voxel: bins must be positive");
  int r = grid.resolution;
  if (r < 1 || grid.data.size() != static_cast<size_t>(r) * r * r * 4)
    throw std::invalid_argument("featurize_voxel: malformed grid");

  size_t occupied = 0;
  double cx = 0.0, cy = 0.0, cz = 0.0;
  std::vector<double> hist(3 * static_cast<size_t>(bins), 0.0);
  for (int x = 0; x < r; ++x)
    for (int y = 0; y < r; ++y)
      for (int z = 0; z < r; ++z) {
        double alpha = grid.at(x, y, z, 3);
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("featurize_voxel: alpha outside [0,1]");
        if (alpha <= 0.0) continue;
        ++occupied;
        cx += (x + 0.5) / r;
        cy += (y + 0.5) / r;
        cz += (z + 0.5) / r;
        for (int c = 0; c < 3; ++c)
          hist[static_cast<size_t>(c) * bins + hist_bin(grid.at(x, y, z, c), bins, "featurize_voxel")] += 1.0;
      }
  if (occupied == 0) throw std::invalid_argument("featurize_voxel: grid has no occupied cells");

  Vec out;
  out.reserve(4 + hist.size());
  double total = static_cast<double>(r) * r * r;
  out.push_back(static_cast<double>(occupied) / total);
  out.push_back(cx / static_cast<double>(occupied));
  out.push_back(cy / static_cast<double>(occupied));
  out.push_back(cz / static_cast<double>(occupied));
  for (double h : hist) out.push_back(h / static_cast<double>(occupied));
  return out;
}

Vec featurize_view(const Image& img, int bins) {
  if (bins < 1) throw std::invalid_argument("featurize_view: bins must be positive");
  if (img.height < 1 || img.width < 1 || img.data.size() != static_cast<size_t>(img.height) * img.width * 3)
    throw std::invalid_argument("featurize_view: malformed image");

  std::vector<double> hist(3 * static_cast<size_t>(bins), 0.0);
  double mean_intensity = 0.0;
  double quad_sum[4] = {0, 0, 0, 0};
  double quad_count[4] = {0, 0, 0, 0};
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      double intensity = 0.0;
      for (int c = 0; c < 3; ++c) {
        double v = img.at(y, x, c);
        hist[static_cast<size_t>(c) * bins + hist_bin(v, bins, "featurize_view")] += 1.0;
        intensity += v;
      }
      intensity /= 3.0;
      mean_intensity += intensity;
      int q = (y * 2 / img.height) * 2 + (x * 2 / img.width);
      quad_sum[q] += intensity;
      quad_count[q] += 1.0;
    }

  double pixels = static_cast<double>(img.height) * img.width;
  Vec out;
  out.reserve(hist.size() + 5);
  for (double h : hist) out.push_back(h / pixels);
  out.push_back(mean_intensity / pixels);
  for (int q = 0; q < 4; ++q) out.push_back(quad_count[q] > 0 ? quad_sum[q] / quad_count[q] : 0.0);
  return out;
}

std::vector<int> apportion_largest_remainder(int n, const std::vector<double>& fractions) {
  if (n < 0) throw std::invalid_argument("apportion: n must be nonnegative");
  if (fractions.empty()) throw std::invalid_argument("apportion: no fractions");
  double sum = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw std::invalid_argument("apportion: negative fraction");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw std::invalid_argument("apportion: fractions must sum to 1");

  std::vector<int> counts(fractions.size(), 0);
  std::vector<double> remainders(fractions.size(), 0.0);
  int assigned = 0;
  for (size_t i = 0; i < fractions.size(); ++i) {
    double quota = n * fractions[i];
    counts[i] = static_cast<int>(std::floor(quota));
    remainders[i] = quota - counts[i];
    assigned += counts[i];
  }
  std::vector<size_t> order(fractions.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return remainders[a] > remainders[b]; });
  for (int i = 0; i < n - assigned; ++i) counts[order[i % order.size()]] += 1;
  return counts;
}

namespace {

const std::vector<std::string>& color_names() {
  static const std::vector<std::string> names = {"red",  "green", "blue",   "yellow", "black", "white",
                                                 "brown", "gray",  "orange", "purple", "pink",  "cyan"};
  return names;
}

const std::vector<std::string>& size_names() {
  static const std::vector<std::string> names = {"tiny", "small", "medium", "large", "huge"};
  return names;
}

void validate_spec(const SyntheticSpec& spec) {
  if (spec.n_objects < 1) throw std::invalid_argument("synthetic: n_objects must be positive");
  if (spec.categories.empty()) throw std::invalid_argument("synthetic: need at least one category");
  for (const auto& c : spec.categories)
    if (c.name.empty()) throw std::invalid_argument("synthetic: empty category name");
  if (spec.colors < 1 || spec.colors > static_cast<int>(color_names().size()))
    throw std::invalid_argument("synthetic: colors must be in [1, 12]");
  if (spec.sizes < 1 || spec.sizes > static_cast<int>(size_names().size()))
    throw std::invalid_argument("synthetic: sizes must be in [1, 5]");
  if (spec.views < 1) throw std::invalid_argument("synthetic: views must be positive");
  if (spec.voxel_resolution < 1 || spec.image_resolution < 1)
    throw std::invalid_argument("synthetic: resolutions must be positive");
  if (spec.noise_sigma < 0.0) throw std::invalid_argument("synthetic: noise_sigma must be nonnegative");
  if (spec.captions_per_object < 1) throw std::invalid_argument("synthetic: captions_per_object must be positive");
  if (spec.max_caption_len < 1) throw std::invalid_argument("synthetic: max_caption_len must be positive");
  int positive_splits = 0;
  for (double f : spec.split_fractions)
    if (f > 0.0) ++positive_splits;
  if (spec.n_objects < positive_splits)
    throw std::invalid_argument("synthetic: n_objects smaller than the number of splits");
}

}  // namespace

std::vector<const DatasetRecord*> Dataset::split(Split s) const {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.split == s) out.push_back(&r);
  return out;
}

int Dataset::voxel_dim() const { return records.empty() ? 0 : static_cast<int>(records[0].voxel_features.size()); }

int Dataset::view_dim() const {
  if (records.empty() || records[0].view_features.empty()) return 0;
  return static_cast<int>(records[0].view_features[0].size());
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec, uint64_t seed) {
  validate_spec(spec);

  // Deduplicated part names, schema order.
  std::vector<std::string> all_parts;
  for (const auto& cat : spec.categories)
    for (const auto& p : cat.parts)
      if (std::find(all_parts.begin(), all_parts.end(), p) == all_parts.end()) all_parts.push_back(p);

  std::vector<std::string> vocab_tokens = {"<pad>", "a", "the", "with", "and"};
  for (int i = 0; i < spec.sizes; ++i) vocab_tokens.push_back(size_names()[i]);
  for (int i = 0; i < spec.colors; ++i) vocab_tokens.push_back(color_names()[i]);
  for (const auto& cat : spec.categories) vocab_tokens.push_back(cat.name);
  for (const auto& p : all_parts)
    if (std::find(vocab_tokens.begin(), vocab_tokens.end(), p) == vocab_tokens.end()) vocab_tokens.push_back(p);

  Dataset ds;
  ds.vocab = Vocabulary::from_tokens(vocab_tokens);
  ds.views = spec.views;
  ds.max_caption_len = spec.max_caption_len;

  int n_cat = static_cast<int>(spec.categories.size());
  int attr_dim = n_cat + spec.colors + spec.sizes + static_cast<int>(all_parts.size());

  Rng attrs = Rng::stream(seed, "synth.attrs");
  Rng noise = Rng::stream(seed, "synth.noise");

  std::vector<int> counts =
      apportion_largest_remainder(spec.n_objects, {spec.split_fractions[0], spec.split_fractions[1], spec.split_fractions[2]});

  int id_width = std::max(4, static_cast<int>(std::to_string(spec.n_objects - 1).size()));

  for (int i = 0; i < spec.n_objects; ++i) {
    DatasetRecord rec;
    std::string num = std::to_string(i);
    rec.object_id = "obj" + std::string(id_width - num.size(), '0') + num;
    rec.split = i < counts[0] ? Split::Train : (i < counts[0] + counts[1] ? Split::Val : Split::Test);

    int cat = static_cast<int>(attrs.next_below(n_cat));
    int color = static_cast<int>(attrs.next_below(spec.colors));
    int size = static_cast<int>(attrs.next_below(spec.sizes));
    const CategorySpec& cspec = spec.categories[cat];
    std::vector<std::string> parts;
    for (const auto& p : cspec.parts)
      if (attrs.next_double() < 0.5) parts.push_back(p);
    rec.category = cspec.name;

    Vec code(attr_dim, 0.0);
    code[cat] = 1.0;
    code[n_cat + color] = 1.0;
    code[n_cat + spec.colors + size] = 1.0;
    for (const auto& p : parts) {
      auto it = std::find(all_parts.begin(), all_parts.end(), p);
      code[n_cat + spec.colors + spec.sizes + (it - all_parts.begin())] = 1.0;
    }

    rec.voxel_features = code;
    for (double& v : rec.voxel_features) v += spec.noise_sigma * noise.next_gaussian();

    for (int m = 0; m < spec.views; ++m) {
      Vec view = code;
      for (double& v : view) v += spec.noise_sigma * noise.next_gaussian();
      double phase = 2.0 * 3.14159265358979323846 * m / spec.views;
      view.push_back(std::cos(phase));
      view.push_back(std::sin(phase));
      rec.view_features.push_back(std::move(view));
    }

    for (int c = 0; c < spec.captions_per_object; ++c) {
      std::vector<std::string> words;
      words.push_back(c % 2 == 0 ? "a" : "the");
      words.push_back(size_names()[size]);
      words.push_back(color_names()[color]);
      words.push_back(cspec.name);
      if (!parts.empty()) {
        words.push_back("with");
        for (size_t k = 0; k < parts.size(); ++k) {
          if (k > 0) words.push_back("and");
          words.push_back(parts[(k + c) % parts.size()]);
        }
      }
      rec.caption_ids.push_back(tokenize(words, ds.vocab, spec.max_caption_len));
      rec.caption_tokens.push_back(std::move(words));
    }

    ds.records.push_back(std::move(rec));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

std::vector<CaptionRecord> load_captions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open caption file: " + path);
  std::vector<CaptionRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("invalid JSON (") + e.what() + ")");
    }
    if (!j.is_object()) fail("expected a JSON object");
    if (!j.contains("id") || !j["id"].is_string()) fail("missing string field 'id'");
    if (!j.contains("split") || !j["split"].is_string()) fail("missing string field 'split'");
    if (!j.contains("captions") || !j["captions"].is_array()) fail("missing array field 'captions'");

    CaptionRecord rec;
    rec.object_id = j["id"].get<std::string>();
    try {
      rec.split = parse_split(j["split"].get<std::string>());
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
    for (const auto& cap : j["captions"]) {
      if (!cap.is_array()) fail("caption is not a token array");
      std::vector<std::string> words;
      for (const auto& tok : cap) {
        if (!tok.is_string()) fail("caption token is not a string");
        words.push_back(tok.get<std::string>());
      }
      rec.captions.push_back(std::move(words));
    }
    if (rec.captions.empty()) fail("object has no captions");
    out.push_back(std::move(rec));
  }
  return out;
}

void write_captions(const std::string& path, const std::vector<CaptionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write caption file: " + path);
  for (const auto& rec : records) {
    ordered_json j;
    j["id"] = rec.object_id;
    j["split"] = split_name(rec.split);
    j["captions"] = rec.captions;
    out << j.dump() << "\n";
  }
}

Vocabulary load_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary file: " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) tokens.push_back(line);
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  if (tokens.empty()) throw std::runtime_error("vocabulary file is empty: " + path);
  return Vocabulary::from_tokens(tokens);
}

void write_vocabulary(const std::string& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write vocabulary file: " + path);
  for (const auto& tok : vocab.tokens) out << tok << "\n";
}

namespace {

constexpr char kCacheMagic[4] = {'T', 'C', 'F', '1'};

void put_u16(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

uint16_t get_u16(std::istream& in, const std::string& path) {
  unsigned char b[2];
  if (!in.read(reinterpret_cast<char*>(b), 2)) throw std::runtime_error("truncated feature cache: " + path);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated feature cache: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_cache(const std::string& path, const FeatureCache& cache) {
  if (cache.modality > 2) throw std::invalid_argument("feature cache: modality code must be 0, 1 or 2");
  if (cache.rows_per_record == 0 || cache.dim == 0)
    throw std::invalid_argument("feature cache: rows and dim must be positive");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write feature cache: " + path);
  out.write(kCacheMagic, 4);
  put_u32(out, cache.modality);
  put_u32(out, static_cast<uint32_t>(cache.entries.size()));
  put_u32(out, cache.rows_per_record);
  put_u32(out, cache.dim);
  size_t expect = static_cast<size_t>(cache.rows_per_record) * cache.dim;
  for (const auto& e : cache.entries) {
    if (e.values.size() != expect)
      throw std::invalid_argument("feature cache: entry '" + e.id + "' has wrong value count");
    if (e.id.size() > 0xFFFF) throw std::invalid_argument("feature cache: id too long");
    put_u16(out, static_cast<uint16_t>(e.id.size()));
    out.write(e.id.data(), static_cast<std::streamsize>(e.id.size()));
    static_assert(sizeof(float) == 4);
    for (float v : e.values) {
      uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_u32(out, bits);
    }
  }
}

FeatureCache read_feature_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open feature cache: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCacheMagic, 4) != 0)
    throw std::runtime_error("bad feature cache magic: " + path);
  FeatureCache cache;
  cache.modality = get_u32(in, path);
  if (cache.modality > 2) throw std::runtime_error("bad modality code in feature cache: " + path);
  uint32_t count = get_u32(in, path);
  cache.rows_per_record = get_u32(in, path);
  cache.dim = get_u32(in, path);
  if (cache.rows_per_record == 0 || cache.dim == 0)
    throw std::runtime_error("bad geometry in feature cache header: " + path);
  size_t values = static_cast<size_t>(cache.rows_per_record) * cache.dim;
  for (uint32_t i = 0; i < count; ++i) {
    FeatureCache::Entry e;
    uint16_t id_len = get_u16(in, path);
    e.id.resize(id_len);
    if (id_len > 0 && !in.read(e.id.data(), id_len)) throw std::runtime_error("truncated feature cache: " + path);
    e.values.resize(values);
    for (size_t k = 0; k < values; ++k) {
      uint32_t bits = get_u32(in, path);
      std::memcpy(&e.values[k], &bits, 4);
    }
    cache.entries.push_back(std::move(e));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw std::runtime_error("trailing bytes after last record: " + path);
  return cache;
}

void write_dataset_files(const std::string& dir, const Dataset& ds) {
  if (ds.records.empty()) throw std::invalid_argument("write_dataset_files: dataset is empty");
  std::filesystem::create_directories(dir);
  auto path = [&](const char* name) { return (std::filesystem::path(dir) / name).string(); };

  std::vector<CaptionRecord> caps;
  for (const auto& r : ds.records) caps.push_back({r.object_id, r.split, r.caption_tokens});
  write_captions(path("captions.jsonl"), caps);
  write_vocabulary(path("vocab.txt"), ds.vocab);

  size_t captions_per = ds.records[0].caption_ids.size();
  FeatureCache text;
  text.modality = 0;
  text.rows_per_record = static_cast<uint32_t>(captions_per);
  text.dim = static_cast<uint32_t>(ds.max_caption_len);
  FeatureCache image;
  image.modality = 1;
  image.rows_per_record = static_cast<uint32_t>(ds.views);
  image.dim = static_cast<uint32_t>(ds.view_dim());
  FeatureCache voxel;
  voxel.modality = 2;
  voxel.rows_per_record = 1;
  voxel.dim = static_cast<uint32_t>(ds.voxel_dim());

  for (const auto& r : ds.records) {
    if (r.caption_ids.size() != captions_per)
      throw std::invalid_argument("write_dataset_files: caption count varies across records");
    FeatureCache::Entry te{r.object_id, {}};
    for (const auto& ids : r.caption_ids)
      for (int id : ids) te.values.push_back(static_cast<float>(id));
    text.entries.push_back(std::move(te));

    FeatureCache::Entry ie{r.object_id, {}};
    for (const auto& view : r.view_features)
      for (double v : view) ie.values.push_back(static_cast<float>(v));
    image.entries.push_back(std::move(ie));

    FeatureCache::Entry ve{r.object_id, {}};
    for (double v : r.voxel_features) ve.values.push_back(static_cast<float>(v));
    voxel.entries.push_back(std::move(ve));
  }

  write_feature_cache(path("text_features.tcf"), text);
  write_feature_cache(path("image_features.tcf"), image);
  write_feature_cache(path("voxel_features.tcf"), voxel);
}

Dataset load_dataset_from_files(const DatasetFiles& files, int max_caption_len) {
  Dataset ds;
  ds.vocab = load_vocabulary(files.vocabulary);
  ds.max_caption_len = max_caption_len;

  FeatureCache image = read_feature_cache(files.image_features);
  FeatureCache voxel = read_feature_cache(files.voxel_features);
  if (image.modality != 1) throw std::runtime_error("expected image modality in " + files.image_features);
  if (voxel.modality != 2) throw std::runtime_error("expected voxel modality in " + files.voxel_features);
  if (voxel.rows_per_record != 1) throw std::runtime_error("voxel cache must hold one row per record");
  ds.views = static_cast<int>(image.rows_per_record);

  std::map<std::string, const FeatureCache::Entry*> image_by_id, voxel_by_id;
  for (const auto& e : image.entries) image_by_id[e.id] = &e;
  for (const auto& e : voxel.entries) voxel_by_id[e.id] = &e;

  for (const auto& cap : load_captions(files.captions)) {
    DatasetRecord rec;
    rec.object_id = cap.object_id;
    rec.split = cap.split;
    for (const auto& words : cap.captions) {
      rec.caption_ids.push_back(tokenize(words, ds.vocab, max_caption_len));
      rec.caption_tokens.push_back(words);
    }
    auto img_it = image_by_id.find(rec.object_id);
    if (img_it == image_by_id.end())
      throw std::runtime_error("object '" + rec.object_id + "' missing from image feature cache");
    auto vox_it = voxel_by_id.find(rec.object_id);
    if (vox_it == voxel_by_id.end())
      throw std::runtime_error("object '" + rec.object_id + "' missing from voxel feature cache");

    for (uint32_t m = 0; m < image.rows_per_record; ++m) {
      Vec view(image.dim);
      for (uint32_t k = 0; k < image.dim; ++k)
        view[k] = static_cast<double>(img_it->second->values[static_cast<size_t>(m) * image.dim + k]);
      rec.view_features.push_back(std::move(view));
    }
    Vec vox(voxel.dim);
    for (uint32_t k = 0; k < voxel.dim; ++k) vox[k] = static_cast<double>(vox_it->second->values[k]);
    rec.voxel_features = std::move(vox);
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw std::runtime_error("caption file has no records: " + files.captions);
  return ds;
}

}  // namespace tmr
