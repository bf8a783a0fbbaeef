#include "tmr/encoders.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace tmr {

MlpGrads MlpGrads::like(const MlpHead& h) {
  MlpGrads g;
  g.W1 = Mat(h.W1.rows, h.W1.cols);
  g.b1 = Vec(h.b1.size(), 0.0);
  g.W2 = Mat(h.W2.rows, h.W2.cols);
  g.b2 = Vec(h.b2.size(), 0.0);
  return g;
}

void MlpGrads::zero() {
  W1.fill(0.0);
  std::fill(b1.begin(), b1.end(), 0.0);
  W2.fill(0.0);
  std::fill(b2.begin(), b2.end(), 0.0);
}

void MlpGrads::add_scaled(const MlpGrads& o, double s) {
  for (size_t i = 0; i < W1.data.size(); ++i) W1.data[i] += s * o.W1.data[i];
  for (size_t i = 0; i < b1.size(); ++i) b1[i] += s * o.b1[i];
  for (size_t i = 0; i < W2.data.size(); ++i) W2.data[i] += s * o.W2.data[i];
  for (size_t i = 0; i < b2.size(); ++i) b2[i] += s * o.b2[i];
}

Vec mlp_forward(const MlpHead& head, std::span<const double> x, MlpCache* cache) {
  if (static_cast<int>(x.size()) != head.in_dim()) throw std::invalid_argument("mlp_forward: input size mismatch");
  int hidden = head.hidden_dim();
  int out = head.out_dim();

  Vec pre1(hidden);
  for (int h = 0; h < hidden; ++h) {
    double s = head.b1[h];
    auto row = head.W1.row(h);
    for (size_t i = 0; i < x.size(); ++i) s += row[i] * x[i];
    pre1[h] = s;
  }
  Vec act1(hidden);
  for (int h = 0; h < hidden; ++h) act1[h] = pre1[h] > 0.0 ? pre1[h] : 0.0;

  Vec y(out);
  for (int o = 0; o < out; ++o) {
    double s = head.b2[o];
    auto row = head.W2.row(o);
    for (int h = 0; h < hidden; ++h) s += row[h] * act1[h];
    y[o] = s;
  }

  if (cache) {
    cache->x.assign(x.begin(), x.end());
    cache->pre1 = pre1;
    cache->act1 = std::move(act1);
    cache->valid = true;
  }
  return y;
}

Vec mlp_backward(const MlpHead& head, const MlpCache& cache, std::span<const double> dy, MlpGrads& acc) {
  if (!cache.valid) throw std::invalid_argument("mlp_backward: cache not filled by a forward pass");
  if (static_cast<int>(cache.x.size()) != head.in_dim() || static_cast<int>(cache.pre1.size()) != head.hidden_dim())
    throw std::invalid_argument("mlp_backward: cache does not match head shape");
  if (static_cast<int>(dy.size()) != head.out_dim()) throw std::invalid_argument("mlp_backward: dy size mismatch");
  if (!acc.W1.same_shape(head.W1) || !acc.W2.same_shape(head.W2))
    throw std::invalid_argument("mlp_backward: gradient accumulator shape mismatch");

  int hidden = head.hidden_dim();
  int in = head.in_dim();
  int out = head.out_dim();

  Vec da1(hidden, 0.0);
  for (int o = 0; o < out; ++o) {
    auto w2row = head.W2.row(o);
    auto g2row = acc.W2.row(o);
    for (int h = 0; h < hidden; ++h) {
      g2row[h] += dy[o] * cache.act1[h];
      da1[h] += w2row[h] * dy[o];
    }
    acc.b2[o] += dy[o];
  }

  Vec dx(in, 0.0);
  for (int h = 0; h < hidden; ++h) {
    double dh = cache.pre1[h] > 0.0 ? da1[h] : 0.0;  // relu subgradient at 0 is 0
    if (dh == 0.0) continue;
    auto w1row = head.W1.row(h);
    auto g1row = acc.W1.row(h);
    for (int i = 0; i < in; ++i) {
      g1row[i] += dh * cache.x[i];
      dx[i] += w1row[i] * dh;
    }
    acc.b1[h] += dh;
  }
  return dx;
}

TextGrads TextGrads::like(const TextEncoder& e) {
  TextGrads g;
  g.word_emb = Mat(e.word_emb.rows, e.word_emb.cols);
  g.head = MlpGrads::like(e.head);
  return g;
}

void TextGrads::zero() {
  word_emb.fill(0.0);
  head.zero();
}

Vec encode_text(const TextEncoder& enc, const std::vector<int>& token_ids, TextCache* cache) {
  if (token_ids.empty()) throw std::invalid_argument("encode_text: empty token sequence");
  std::vector<int> active;
  for (int id : token_ids) {
    if (id < 0 || id >= enc.word_emb.rows)
      throw std::invalid_argument("encode_text: token id " + std::to_string(id) + " outside vocabulary");
    if (id != 0) active.push_back(id);  // pad id is always 0
  }
  if (active.empty()) throw std::invalid_argument("encode_text: all tokens are padding");

  Vec mean(enc.word_emb.cols, 0.0);
  for (int id : active) {
    auto row = enc.word_emb.row(id);
    for (int j = 0; j < enc.word_emb.cols; ++j) mean[j] += row[j];
  }
  for (double& v : mean) v /= static_cast<double>(active.size());

  MlpCache local;
  Vec y = mlp_forward(enc.head, mean, cache ? &cache->mlp : &local);
  if (cache) {
    cache->active_ids = std::move(active);
    cache->valid = true;
  }
  return y;
}

void text_backward(const TextEncoder& enc, const TextCache& cache, std::span<const double> dy, TextGrads& acc) {
  if (!cache.valid) throw std::invalid_argument("text_backward: cache not filled by a forward pass");
  if (!acc.word_emb.same_shape(enc.word_emb))
    throw std::invalid_argument("text_backward: gradient accumulator shape mismatch");
  Vec dmean = mlp_backward(enc.head, cache.mlp, dy, acc.head);
  double inv = 1.0 / static_cast<double>(cache.active_ids.size());
  for (int id : cache.active_ids) {
    auto row = acc.word_emb.row(id);
    for (size_t j = 0; j < dmean.size(); ++j) row[j] += dmean[j] * inv;
  }
}

const char* pool_name(PoolMode p) { return p == PoolMode::Mean ? "mean" : "max"; }

PoolMode parse_pool(const std::string& s) {
  if (s == "mean") return PoolMode::Mean;
  if (s == "max") return PoolMode::Max;
  throw std::invalid_argument("unknown pooling mode: " + s);
}

Vec encode_views(const ViewEncoder& enc, const std::vector<Vec>& views, ViewsCache* cache) {
  if (views.empty()) throw std::invalid_argument("encode_views: no views");
  int out = enc.head.out_dim();
  std::vector<MlpCache> local_caches;
  std::vector<MlpCache>& caches = cache ? cache->per_view : local_caches;
  caches.assign(views.size(), MlpCache{});

  std::vector<Vec> outputs;
  outputs.reserve(views.size());
  for (size_t m = 0; m < views.size(); ++m) outputs.push_back(mlp_forward(enc.head, views[m], &caches[m]));

  Vec pooled(out, 0.0);
  std::vector<int> argmax;
  if (enc.pooling == PoolMode::Mean) {
    for (const auto& o : outputs)
      for (int c = 0; c < out; ++c) pooled[c] += o[c];
    for (double& v : pooled) v /= static_cast<double>(views.size());
  } else {
    argmax.assign(out, 0);
    pooled = outputs[0];
    for (size_t m = 1; m < outputs.size(); ++m)
      for (int c = 0; c < out; ++c)
        if (outputs[m][c] > pooled[c]) {  // strict: ties keep the lowest view index
          pooled[c] = outputs[m][c];
          argmax[c] = static_cast<int>(m);
        }
  }

  if (cache) {
    cache->outputs = std::move(outputs);
    cache->argmax = std::move(argmax);
    cache->valid = true;
  }
  return pooled;
}

void views_backward(const ViewEncoder& enc, const ViewsCache& cache, std::span<const double> dy, MlpGrads& acc) {
  if (!cache.valid) throw std::invalid_argument("views_backward: cache not filled by a forward pass");
  if (static_cast<int>(dy.size()) != enc.head.out_dim())
    throw std::invalid_argument("views_backward: dy size mismatch");
  size_t m_count = cache.per_view.size();
  if (enc.pooling == PoolMode::Mean) {
    Vec scaled(dy.begin(), dy.end());
    for (double& v : scaled) v /= static_cast<double>(m_count);
    for (size_t m = 0; m < m_count; ++m) mlp_backward(enc.head, cache.per_view[m], scaled, acc);
  } else {
    if (cache.argmax.size() != dy.size()) throw std::invalid_argument("views_backward: stale max-pool cache");
    std::vector<Vec> per_view_dy(m_count, Vec(dy.size(), 0.0));
    for (size_t c = 0; c < dy.size(); ++c) per_view_dy[cache.argmax[c]][c] = dy[c];
    for (size_t m = 0; m < m_count; ++m) mlp_backward(enc.head, cache.per_view[m], per_view_dy[m], acc);
  }
}

ModelDims ModelParams::dims() const {
  ModelDims d;
  d.vocab = text.word_emb.rows;
  d.word_dim = text.word_emb.cols;
  d.view_dim = image.head.in_dim();
  d.voxel_dim = voxel.in_dim();
  d.hidden = text.head.hidden_dim();
  d.embed_dim = text.head.out_dim();
  return d;
}

GradientTape GradientTape::like(const ModelParams& p) {
  GradientTape t;
  t.text = TextGrads::like(p.text);
  t.image_head = MlpGrads::like(p.image.head);
  t.voxel_head = MlpGrads::like(p.voxel);
  return t;
}

void GradientTape::zero() {
  text.zero();
  image_head.zero();
  voxel_head.zero();
}

namespace {

MlpHead init_head(int in, int hidden, int out, Rng& rng) {
  MlpHead h;
  h.W1 = Mat(hidden, in);
  h.b1 = Vec(hidden, 0.0);
  h.W2 = Mat(out, hidden);
  h.b2 = Vec(out, 0.0);
  double s1 = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& w : h.W1.data) w = (2.0 * rng.next_double() - 1.0) * s1;
  double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (double& w : h.W2.data) w = (2.0 * rng.next_double() - 1.0) * s2;
  return h;
}

}  // namespace

ModelParams init_model(const ModelDims& dims, PoolMode pooling, uint64_t seed) {
  if (dims.vocab < 2) throw std::invalid_argument("init_model: vocabulary must hold pad plus real tokens");
  if (dims.word_dim < 1 || dims.view_dim < 1 || dims.voxel_dim < 1 || dims.hidden < 1 || dims.embed_dim < 1)
    throw std::invalid_argument("init_model: dimensions must be positive");

  ModelParams p;
  Rng emb_rng = Rng::stream(seed, "init.text.emb");
  p.text.word_emb = Mat(dims.vocab, dims.word_dim);
  for (double& w : p.text.word_emb.data) w = emb_rng.next_gaussian();

  Rng th = Rng::stream(seed, "init.text.head");
  p.text.head = init_head(dims.word_dim, dims.hidden, dims.embed_dim, th);
  Rng ih = Rng::stream(seed, "init.image.head");
  p.image.head = init_head(dims.view_dim, dims.hidden, dims.embed_dim, ih);
  p.image.pooling = pooling;
  Rng vh = Rng::stream(seed, "init.voxel.head");
  p.voxel = init_head(dims.voxel_dim, dims.hidden, dims.embed_dim, vh);
  return p;
}

namespace {

void head_tensors(const std::string& prefix, MlpHead& h, std::vector<TensorRef>& out) {
  out.push_back({prefix + ".W1", {h.W1.rows, h.W1.cols}, h.W1.data.data(), h.W1.data.size()});
  out.push_back({prefix + ".b1", {static_cast<int>(h.b1.size())}, h.b1.data(), h.b1.size()});
  out.push_back({prefix + ".W2", {h.W2.rows, h.W2.cols}, h.W2.data.data(), h.W2.data.size()});
  out.push_back({prefix + ".b2", {static_cast<int>(h.b2.size())}, h.b2.data(), h.b2.size()});
}

void grads_tensors(const std::string& prefix, MlpGrads& g, std::vector<TensorRef>& out) {
  out.push_back({prefix + ".W1", {g.W1.rows, g.W1.cols}, g.W1.data.data(), g.W1.data.size()});
  out.push_back({prefix + ".b1", {static_cast<int>(g.b1.size())}, g.b1.data(), g.b1.size()});
  out.push_back({prefix + ".W2", {g.W2.rows, g.W2.cols}, g.W2.data.data(), g.W2.data.size()});
  out.push_back({prefix + ".b2", {static_cast<int>(g.b2.size())}, g.b2.data(), g.b2.size()});
}

}  // namespace

std::vector<TensorRef> model_tensors(ModelParams& p) {
  std::vector<TensorRef> out;
  out.push_back({"text.emb",
                 {p.text.word_emb.rows, p.text.word_emb.cols},
                 p.text.word_emb.data.data(),
                 p.text.word_emb.data.size()});
  head_tensors("text.head", p.text.head, out);
  head_tensors("image.head", p.image.head, out);
  head_tensors("voxel.head", p.voxel, out);
  return out;
}

std::vector<TensorRef> tape_tensors(GradientTape& t) {
  std::vector<TensorRef> out;
  out.push_back({"text.emb",
                 {t.text.word_emb.rows, t.text.word_emb.cols},
                 t.text.word_emb.data.data(),
                 t.text.word_emb.data.size()});
  grads_tensors("text.head", t.text.head, out);
  grads_tensors("image.head", t.image_head, out);
  grads_tensors("voxel.head", t.voxel_head, out);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

namespace {

constexpr char kCkptMagic[4] = {'T', 'C', 'K', 'P'};
constexpr uint32_t kCkptVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b, 8);
}

uint32_t get_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated checkpoint: " + path);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in, const std::string& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated checkpoint: " + path);
  uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

void write_tensor(std::ostream& out, const std::string& name, const std::vector<int>& shape, const double* data,
                  size_t size) {
  put_u32(out, static_cast<uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<uint32_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<uint32_t>(d));
  for (size_t i = 0; i < size; ++i) put_f64(out, data[i]);
}

struct RawTensor {
  std::vector<int> shape;
  std::vector<double> values;
};

}  // namespace

void write_checkpoint(const std::string& path, const ModelParams& params, uint32_t trained_mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kCkptMagic, 4);
  put_u32(out, kCkptVersion);

  ModelParams& mutable_params = const_cast<ModelParams&>(params);
  for (const TensorRef& t : model_tensors(mutable_params)) write_tensor(out, t.name, t.shape, t.data, t.size);

  double pooling_code = params.image.pooling == PoolMode::Mean ? 0.0 : 1.0;
  write_tensor(out, "meta.pooling", {1}, &pooling_code, 1);
  double mask = static_cast<double>(trained_mask);
  write_tensor(out, "meta.trained", {1}, &mask, 1);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  uint32_t version = get_u32(in, path);
  if (version != kCkptVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) + ": " + path);

  std::map<std::string, RawTensor> tensors;
  while (in.peek() != std::char_traits<char>::eof()) {
    uint32_t name_len = get_u32(in, path);
    std::string name(name_len, '\0');
    if (name_len > 0 && !in.read(name.data(), name_len)) throw std::runtime_error("truncated checkpoint: " + path);
    uint32_t rank = get_u32(in, path);
    if (rank > 8) throw std::runtime_error("implausible tensor rank in checkpoint: " + path);
    RawTensor t;
    size_t size = 1;
    for (uint32_t r = 0; r < rank; ++r) {
      uint32_t d = get_u32(in, path);
      t.shape.push_back(static_cast<int>(d));
      size *= d;
    }
    t.values.resize(size);
    for (size_t i = 0; i < size; ++i) t.values[i] = get_f64(in, path);
    if (!tensors.emplace(name, std::move(t)).second)
      throw std::runtime_error("duplicate tensor '" + name + "' in checkpoint: " + path);
  }

  auto need = [&](const std::string& name) -> RawTensor& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint missing tensor '" + name + "': " + path);
    return it->second;
  };
  auto load_mat = [&](const std::string& name) {
    RawTensor& t = need(name);
    if (t.shape.size() != 2) throw std::runtime_error("tensor '" + name + "' is not a matrix: " + path);
    Mat m(t.shape[0], t.shape[1]);
    m.data = t.values;
    return m;
  };
  auto load_vec = [&](const std::string& name) {
    RawTensor& t = need(name);
    if (t.shape.size() != 1) throw std::runtime_error("tensor '" + name + "' is not a vector: " + path);
    return t.values;
  };
  auto load_head = [&](const std::string& prefix) {
    MlpHead h;
    h.W1 = load_mat(prefix + ".W1");
    h.b1 = load_vec(prefix + ".b1");
    h.W2 = load_mat(prefix + ".W2");
    h.b2 = load_vec(prefix + ".b2");
    if (static_cast<int>(h.b1.size()) != h.W1.rows || h.W2.cols != h.W1.rows ||
        static_cast<int>(h.b2.size()) != h.W2.rows)
      throw std::runtime_error("inconsistent head shapes under '" + prefix + "': " + path);
    return h;
  };

  Checkpoint ck;
  ck.params.text.word_emb = load_mat("text.emb");
  ck.params.text.head = load_head("text.head");
  ck.params.image.head = load_head("image.head");
  ck.params.voxel = load_head("voxel.head");
  if (ck.params.text.head.in_dim() != ck.params.text.word_emb.cols)
    throw std::runtime_error("text head does not match embedding width: " + path);

  double pooling_code = load_vec("meta.pooling").at(0);
  ck.params.image.pooling = pooling_code == 0.0 ? PoolMode::Mean : PoolMode::Max;
  ck.trained_mask = static_cast<uint32_t>(load_vec("meta.trained").at(0));
  return ck;
}

}  // namespace tmr
