#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tmr/core.hpp"

namespace tmr {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
Split parse_split(const std::string& s);

/// Token table. Index 0 is always the pad token.
struct Vocabulary {
  std::vector<std::string> tokens;
  std::map<std::string, int> index;

  static constexpr int pad_id = 0;

  static Vocabulary from_tokens(const std::vector<std::string>& toks);
  int lookup(const std::string& tok) const;  // -1 when unknown
  int size() const { return static_cast<int>(tokens.size()); }
};

/// Maps caption tokens to a fixed-length id sequence: unknown tokens are
/// dropped, the remainder is truncated to max_len and padded with pad_id.
/// A caption with no known tokens is an error.
std::vector<int> tokenize(const std::vector<std::string>& words, const Vocabulary& vocab, int max_len);

/// Dense r^3 voxel grid with RGBA channels in [0,1]; a cell is occupied when
/// its alpha is positive. Storage order is ((x*r)+y)*r+z, 4 channels per cell.
struct VoxelGrid {
  int resolution = 0;
  std::vector<double> data;

  VoxelGrid() = default;
  explicit VoxelGrid(int r) : resolution(r), data(static_cast<size_t>(r) * r * r * 4, 0.0) {}

  size_t cell(int x, int y, int z) const {
    return ((static_cast<size_t>(x) * resolution + y) * resolution + z) * 4;
  }
  double& at(int x, int y, int z, int c) { return data[cell(x, y, z) + c]; }
  double at(int x, int y, int z, int c) const { return data[cell(x, y, z) + c]; }
};

/// H x W x 3 image, RGB in [0,1], row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w * 3, 0.0) {}

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
};

/// [occupancy fraction, occupied-cell centroid (x,y,z), per-channel RGB
/// histograms over occupied cells]. Histograms are equal-width on [0,1],
/// normalized to fractions, final bin closed on the right. Cell centers are
/// ((i+0.5)/r). Empty grids are an error.
Vec featurize_voxel(const VoxelGrid& grid, int bins);

/// [per-channel histograms (3*bins), mean intensity, 2x2 spatial
/// mean-intensity grid (TL, TR, BL, BR)]. Intensity is the channel mean.
Vec featurize_view(const Image& img, int bins);

struct CategorySpec {
  std::string name;
  std::vector<std::string> parts;  // binary part flags, each drawn independently
};

/// Knobs for the synthetic trimodal dataset generator.
struct SyntheticSpec {
  int n_objects = 100;
  std::vector<CategorySpec> categories = {
      {"chair", {"arms", "wheels", "cushion"}},
      {"table", {"drawers", "wheels", "shelf"}},
  };
  int colors = 8;                 // palette size, <= 12
  int sizes = 3;                  // size levels, <= 5
  int views = 6;                  // M views per object
  int voxel_resolution = 64;      // nominal, recorded as metadata
  int image_resolution = 128;     // nominal, recorded as metadata
  double noise_sigma = 0.25;      // gaussian noise scale on feature blocks
  int captions_per_object = 5;
  int max_caption_len = 32;
  std::array<double, 3> split_fractions = {0.8, 0.1, 0.1};
};

/// One object: id, split, tokenized captions (fixed length each), a voxel
/// feature vector and M view feature vectors.
struct DatasetRecord {
  std::string object_id;
  std::string category;
  Split split = Split::Train;
  std::vector<std::vector<int>> caption_ids;          // each of length max_len
  std::vector<std::vector<std::string>> caption_tokens;
  Vec voxel_features;
  std::vector<Vec> view_features;
};

struct Dataset {
  Vocabulary vocab;
  std::vector<DatasetRecord> records;
  int views = 0;
  int max_caption_len = 0;

  std::vector<const DatasetRecord*> split(Split s) const;
  int voxel_dim() const;
  int view_dim() const;
};

/// Apportions n into parts proportional to fractions using largest
/// remainders (ties go to the earlier part).
std::vector<int> apportion_largest_remainder(int n, const std::vector<double>& fractions);

/// Builds the synthetic dataset: per object, attributes (category, color,
/// size, part flags) are drawn uniformly; the voxel feature vector is the
/// attribute one-hot code plus N(0, sigma^2) noise; each of the M view
/// feature vectors is an independently noised copy of the code with a
/// 2-dim phase tag (cos, sin of 2*pi*m/M) appended; captions are templated
/// token sequences naming every sampled attribute. Splits are assigned by
/// largest-remainder apportionment in generation order. Deterministic per
/// seed.
Dataset generate_synthetic_dataset(const SyntheticSpec& spec, uint64_t seed);

struct CaptionRecord {
  std::string object_id;
  Split split = Split::Train;
  std::vector<std::vector<std::string>> captions;
};

/// JSONL, one object per line: {"id", "split", "captions": [[tok, ...], ...]}.
/// Malformed lines are errors naming the line number.
std::vector<CaptionRecord> load_captions(const std::string& path);
void write_captions(const std::string& path, const std::vector<CaptionRecord>& records);

/// Plain text, one token per line, line 0 = pad token.
Vocabulary load_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path, const Vocabulary& vocab);

/// Binary feature cache. Layout: magic "TCF1"; u32 modality code (0 text,
/// 1 image, 2 voxel), u32 record count, u32 rows-per-record M, u32 feature
/// dim; then per record a u16 id length, the UTF-8 id bytes, and M*dim f32
/// values. All integers and floats little-endian.
struct FeatureCache {
  uint32_t modality = 0;
  uint32_t rows_per_record = 1;
  uint32_t dim = 0;
  struct Entry {
    std::string id;
    std::vector<float> values;  // rows_per_record * dim
  };
  std::vector<Entry> entries;
};

void write_feature_cache(const std::string& path, const FeatureCache& cache);
FeatureCache read_feature_cache(const std::string& path);

/// File-set paths for a dataset on disk.
struct DatasetFiles {
  std::string captions;
  std::string vocabulary;
  std::string image_features;
  std::string voxel_features;
};

/// Writes captions.jsonl, vocab.txt and the three feature caches (text cache
/// holds the padded token ids, image/voxel caches the feature vectors).
void write_dataset_files(const std::string& dir, const Dataset& ds);

/// Loads a dataset written by write_dataset_files (text features are re-read
/// from the caption file through the vocabulary).
Dataset load_dataset_from_files(const DatasetFiles& files, int max_caption_len);

}  // namespace tmr
