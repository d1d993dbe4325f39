#include "avl/learn.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <span>

#include "avl/binio.hpp"
#include "avl/errors.hpp"
#include "avl/json_util.hpp"
#include "avl/rng.hpp"

namespace avl {

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::add(const std::string& name, ad::Mat value) {
  if (has(name)) throw UsageError("ParamStore: duplicate tensor " + name);
  index_[name] = values_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

ad::Mat& ParamStore::at(const std::string& name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw SchemaError("ParamStore: missing tensor " + name);
  return values_[it->second];
}

const ad::Mat& ParamStore::at(const std::string& name) const {
  return const_cast<ParamStore*>(this)->at(name);
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const ad::Mat& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

bool ParamStore::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](const ad::Mat& v) { return v.allFinite(); });
}

bool ParamStore::operator==(const ParamStore& o) const {
  if (names_ != o.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const ad::Mat& a = values_[i];
    const ad::Mat& b = o.values_[i];
    if (a.rows() != b.rows() || a.cols() != b.cols() || a != b) return false;
  }
  return true;
}

ParamStore ParamStore::zeros_like() const {
  ParamStore z;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    z.add(names_[i], ad::Mat::Zero(values_[i].rows(), values_[i].cols()));
  }
  return z;
}

namespace {
constexpr char kParamMagic[9] = "AVLPARM1";
constexpr std::uint32_t kParamVersion = 1;
constexpr char kParamSchema[] = "avl.params";
}  // namespace

void ParamStore::save(const std::string& stem) const {
  if (!all_finite()) throw TrainingError("ParamStore: refusing to save non-finite parameters");
  std::ofstream out(stem + ".bin", std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + stem + ".bin");
  binio::put_magic(out, kParamMagic);
  binio::put_u32(out, kParamVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(values_.size()));
  nlohmann::json dir = nlohmann::json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const ad::Mat& v = values_[i];
    binio::put_string(out, names_[i]);
    binio::put_u32(out, static_cast<std::uint32_t>(v.rows()));
    binio::put_u32(out, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index r = 0; r < v.rows(); ++r)
      for (Eigen::Index c = 0; c < v.cols(); ++c) binio::put_f64(out, v(r, c));
    dir.push_back({{"name", names_[i]}, {"shape", {v.rows(), v.cols()}}});
  }
  if (!out) throw IoError("write failed: " + stem + ".bin");
  nlohmann::json doc;
  doc["schema"] = kParamSchema;
  doc["version"] = kParamVersion;
  doc["byte_order"] = "little";
  doc["tensors"] = dir;
  doc["metadata"] = metadata;
  write_json_file(doc, stem + ".json");
}

ParamStore ParamStore::load(const std::string& stem) {
  const nlohmann::json doc = read_json_file(stem + ".json");
  check_schema(doc, kParamSchema, static_cast<int>(kParamVersion));
  std::ifstream in(stem + ".bin", std::ios::binary);
  if (!in) throw IoError("cannot read " + stem + ".bin");
  binio::expect_magic(in, kParamMagic);
  if (binio::get_u32(in) != kParamVersion) throw SchemaError("ParamStore: unsupported version");
  const std::uint32_t n = binio::get_u32(in);
  const auto& dir = doc.at("tensors");
  if (dir.size() != n) throw SchemaError("ParamStore: tensor directory mismatch");
  ParamStore p;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = binio::get_string(in);
    const std::uint32_t rows = binio::get_u32(in);
    const std::uint32_t cols = binio::get_u32(in);
    if (dir[i].at("name").get<std::string>() != name ||
        dir[i].at("shape").at(0).get<std::uint32_t>() != rows ||
        dir[i].at("shape").at(1).get<std::uint32_t>() != cols) {
      throw SchemaError("ParamStore: tensor directory mismatch at " + name);
    }
    ad::Mat v(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) v(r, c) = binio::get_f64(in);
    p.add(name, std::move(v));
  }
  if (!p.all_finite()) throw SchemaError("ParamStore: non-finite parameter in " + stem);
  p.metadata = doc.value("metadata", nlohmann::json::object());
  return p;
}

// ---------------------------------------------------------------------------
// Configs

std::string to_string(Arch a) { return a == Arch::kMlp ? "mlp" : "vpt"; }

Arch parse_arch(const std::string& s) {
  if (s == "mlp") return Arch::kMlp;
  if (s == "vpt") return Arch::kVpt;
  throw ConfigError("unknown architecture: " + s);
}

nlohmann::json to_json(const MlpConfig& c) {
  return {{"input_dim", c.input_dim}, {"hidden", c.hidden}, {"hidden_layers", c.hidden_layers}};
}

nlohmann::json to_json(const VptConfig& c) {
  return {{"d_in", c.d_in},     {"d_model", c.d_model}, {"heads", c.heads},
          {"layers", c.layers}, {"d_ff", c.d_ff},       {"n_max", c.n_max}};
}

MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.input_dim = j.value("input_dim", c.input_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.hidden_layers = j.value("hidden_layers", c.hidden_layers);
  if (c.input_dim < 1 || c.hidden < 1 || c.hidden_layers < 0) throw ConfigError("invalid MLP config");
  return c;
}

VptConfig vpt_config_from_json(const nlohmann::json& j) {
  VptConfig c;
  c.d_in = j.value("d_in", c.d_in);
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.n_max = j.value("n_max", c.n_max);
  if (c.d_in < 1 || c.d_model < 1 || c.heads < 1 || c.d_model % c.heads != 0 || c.layers < 0 ||
      c.d_ff < 1 || c.n_max < 1) {
    throw ConfigError("invalid VPT config");
  }
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
          {"beta1", c.beta1},   {"beta2", c.beta2},           {"epsilon", c.epsilon},
          {"seed", c.seed}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.seed = j.value("seed", c.seed);
  if (c.epochs < 1 || c.batch_size < 1 || !(c.learning_rate > 0.0)) {
    throw ConfigError("invalid training config");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Initialization

namespace {

ad::Mat xavier(Rng& rng, int fan_in, int fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  ad::Mat w(fan_in, fan_out);
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
  return w;
}

ad::Mat zeros(int r, int c) { return ad::Mat::Zero(r, c); }
ad::Mat ones(int r, int c) { return ad::Mat::Ones(r, c); }

std::string layer(int i, const char* suffix) { return "enc" + std::to_string(i) + "." + suffix; }

}  // namespace

ParamStore init_mlp(const MlpConfig& c, std::uint64_t seed, bool zero_head) {
  Rng rng(seed);
  ParamStore p;
  int in = c.input_dim;
  for (int i = 0; i < c.hidden_layers; ++i) {
    p.add("fc" + std::to_string(i) + ".w", xavier(rng, in, c.hidden));
    p.add("fc" + std::to_string(i) + ".b", zeros(1, c.hidden));
    in = c.hidden;
  }
  p.add("head.w", zero_head ? zeros(in, 2) : xavier(rng, in, 2));
  p.add("head.b", zeros(1, 2));
  return p;
}

ParamStore init_vpt(const VptConfig& c, std::uint64_t seed, bool zero_head) {
  Rng rng(seed);
  const int d = c.d_model;
  ParamStore p;
  p.add("embed.w", xavier(rng, c.d_in, d));
  p.add("embed.b", zeros(1, d));
  for (int i = 0; i < c.layers; ++i) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) p.add(layer(i, w), xavier(rng, d, d));
    for (const char* b : {"bq", "bk", "bv", "bo"}) p.add(layer(i, b), zeros(1, d));
    p.add(layer(i, "ln1.g"), ones(1, d));
    p.add(layer(i, "ln1.b"), zeros(1, d));
    p.add(layer(i, "ff1.w"), xavier(rng, d, c.d_ff));
    p.add(layer(i, "ff1.b"), zeros(1, c.d_ff));
    p.add(layer(i, "ff2.w"), xavier(rng, c.d_ff, d));
    p.add(layer(i, "ff2.b"), zeros(1, d));
    p.add(layer(i, "ln2.g"), ones(1, d));
    p.add(layer(i, "ln2.b"), zeros(1, d));
  }
  ad::Mat null_token(1, d);
  for (Eigen::Index k = 0; k < d; ++k) null_token(0, k) = 0.02 * rng.normal();
  p.add("null", null_token);
  p.add("head.w", zero_head ? zeros(d, 2) : xavier(rng, d, 2));
  p.add("head.b", zeros(1, 2));
  return p;
}

// ---------------------------------------------------------------------------
// Graphs

Binding::Binding(ad::Tape& tape, const ParamStore& params, ParamStore* grads) {
  for (const std::string& n : params.names()) {
    vars_[n] = tape.param(params.at(n), grads ? &grads->at(n) : nullptr);
  }
}

ad::Var Binding::operator[](const std::string& name) const {
  const auto it = vars_.find(name);
  if (it == vars_.end()) throw SchemaError("model parameter missing: " + name);
  return it->second;
}

TokenBatch make_token_batch(const ad::Mat& real_tokens, int n_max, int label) {
  if (real_tokens.rows() > n_max) throw UsageError("make_token_batch: more tokens than n_max");
  TokenBatch b;
  b.tokens = ad::Mat::Zero(n_max, real_tokens.cols());
  b.tokens.topRows(real_tokens.rows()) = real_tokens;
  b.mask.assign(static_cast<std::size_t>(n_max), 0);
  std::fill_n(b.mask.begin(), real_tokens.rows(), std::uint8_t{1});
  b.label = label;
  return b;
}

ad::Var mlp_logits(ad::Tape& tape, const Binding& p, const MlpConfig& c, const ad::Mat& x) {
  if (x.cols() != c.input_dim) {
    throw SchemaError("MLP input has " + std::to_string(x.cols()) + " features, model expects " +
                      std::to_string(c.input_dim));
  }
  ad::Var h = tape.constant(x);
  for (int i = 0; i < c.hidden_layers; ++i) {
    const std::string n = "fc" + std::to_string(i);
    h = tape.relu(tape.add_row(tape.matmul(h, p[n + ".w"]), p[n + ".b"]));
  }
  return tape.add_row(tape.matmul(h, p["head.w"]), p["head.b"]);
}

ad::Var vpt_logits(ad::Tape& tape, const Binding& p, const VptConfig& c, const ad::Mat& tokens,
                   const ad::Mask& mask) {
  if (mask.size() != static_cast<std::size_t>(tokens.rows())) {
    throw UsageError("vpt: mask length differs from token rows");
  }
  const bool any_real = std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
  ad::Var pooled;
  if (!any_real) {
    pooled = p["null"];
  } else {
    if (tokens.cols() != c.d_in) {
      throw SchemaError("VPT tokens have " + std::to_string(tokens.cols()) +
                        " fields, model expects " + std::to_string(c.d_in));
    }
    const int dh = c.d_model / c.heads;
    ad::Var h = tape.add_row(tape.matmul(tape.constant(tokens), p["embed.w"]), p["embed.b"]);
    for (int i = 0; i < c.layers; ++i) {
      const ad::Var q = tape.add_row(tape.matmul(h, p[layer(i, "wq")]), p[layer(i, "bq")]);
      const ad::Var k = tape.add_row(tape.matmul(h, p[layer(i, "wk")]), p[layer(i, "bk")]);
      const ad::Var v = tape.add_row(tape.matmul(h, p[layer(i, "wv")]), p[layer(i, "bv")]);
      std::vector<ad::Var> heads;
      for (int j = 0; j < c.heads; ++j) {
        heads.push_back(tape.attention(tape.slice_cols(q, j * dh, dh), tape.slice_cols(k, j * dh, dh),
                                       tape.slice_cols(v, j * dh, dh), mask));
      }
      const ad::Var att = tape.add_row(
          tape.matmul(c.heads == 1 ? heads[0] : tape.concat_cols(heads), p[layer(i, "wo")]),
          p[layer(i, "bo")]);
      const ad::Var h1 = tape.layernorm(tape.add(h, att), p[layer(i, "ln1.g")], p[layer(i, "ln1.b")]);
      const ad::Var ff = tape.add_row(
          tape.matmul(tape.relu(tape.add_row(tape.matmul(h1, p[layer(i, "ff1.w")]), p[layer(i, "ff1.b")])),
                      p[layer(i, "ff2.w")]),
          p[layer(i, "ff2.b")]);
      h = tape.layernorm(tape.add(h1, ff), p[layer(i, "ln2.g")], p[layer(i, "ln2.b")]);
    }
    pooled = tape.masked_mean_rows(h, mask);
  }
  return tape.add_row(tape.matmul(pooled, p["head.w"]), p["head.b"]);
}

Eigen::Vector2d softmax2(const Eigen::Vector2d& z) {
  const double m = z.maxCoeff();
  const Eigen::Vector2d e = (z.array() - m).exp();
  return e / e.sum();
}

Eigen::Vector2d mlp_forward(const ParamStore& params, const MlpConfig& c, const Eigen::VectorXd& x) {
  ad::Tape tape;
  const Binding b(tape, params);
  const ad::Var z = mlp_logits(tape, b, c, x.transpose());
  return softmax2(z.value().row(0).transpose());
}

Eigen::Vector2d vpt_forward(const ParamStore& params, const VptConfig& c, const TokenBatch& batch) {
  ad::Tape tape;
  const Binding b(tape, params);
  const ad::Var z = vpt_logits(tape, b, c, batch.tokens, batch.mask);
  return softmax2(z.value().row(0).transpose());
}

// ---------------------------------------------------------------------------
// Training

namespace {

class Adam {
 public:
  Adam(const ParamStore& p, const TrainConfig& c) : c_(c), m_(p.zeros_like()), v_(p.zeros_like()) {}

  void step(ParamStore& p, const ParamStore& g) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, t_);
    const double bc2 = 1.0 - std::pow(c_.beta2, t_);
    for (const std::string& n : p.names()) {
      ad::Mat& m = m_.at(n);
      ad::Mat& v = v_.at(n);
      const ad::Mat& gr = g.at(n);
      m = c_.beta1 * m + (1.0 - c_.beta1) * gr;
      v = c_.beta2 * v + (1.0 - c_.beta2) * gr.cwiseAbs2();
      p.at(n).array() -=
          c_.learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c_.epsilon);
    }
  }

 private:
  TrainConfig c_;
  ParamStore m_, v_;
  int t_ = 0;
};

void check_trainable(const TrainingSet& train) {
  if (train.inputs.size() != train.labels.size()) throw UsageError("training set: inputs/labels mismatch");
  if (train.size() == 0) throw TrainingError("training set is empty");
  const bool has0 = std::find(train.labels.begin(), train.labels.end(), 0) != train.labels.end();
  const bool has1 = std::find(train.labels.begin(), train.labels.end(), 1) != train.labels.end();
  if (!(has0 && has1)) throw TrainingError("training set has a single class");
}

// Shared epoch loop. `batch_loss` adds the gradient of the mean batch loss
// into grads and returns the summed per-sample loss.
template <class BatchLoss, class Accuracy>
TrainResult run_training(ParamStore params, const TrainingSet& train, const TrainingSet& val,
                         const TrainConfig& t, BatchLoss batch_loss, Accuracy accuracy) {
  check_trainable(train);
  TrainResult r;
  Adam adam(params, t);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  r.params = params;
  for (int epoch = 0; epoch < t.epochs; ++epoch) {
    Rng rng(derive_seed(t.seed, {static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(t.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(t.batch_size));
      ParamStore grads = params.zeros_like();
      loss_sum += batch_loss(params, grads, std::span<const std::size_t>(order.data() + start, end - start));
      adam.step(params, grads);
    }
    if (!params.all_finite()) throw TrainingError("training diverged: non-finite parameters");
    r.train_loss.push_back(loss_sum / static_cast<double>(order.size()));
    const double acc = val.size() > 0 ? accuracy(params, val) : 0.0;
    r.val_accuracy.push_back(acc);
    if (val.size() == 0 || r.best_epoch < 0 || acc > r.best_val_accuracy) {
      r.best_epoch = epoch;
      r.best_val_accuracy = acc;
      r.params = params;
    }
  }
  return r;
}

}  // namespace

TrainResult train_mlp(const TrainingSet& train, const TrainingSet& val, const MlpConfig& c,
                      const TrainConfig& t) {
  auto batch_loss = [&](const ParamStore& p, ParamStore& g, std::span<const std::size_t> idx) {
    ad::Mat x(static_cast<Eigen::Index>(idx.size()), c.input_dim);
    std::vector<int> y(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = train.inputs[idx[i]].row(0);
      y[i] = train.labels[idx[i]];
    }
    ad::Tape tape;
    const Binding b(tape, p, &g);
    const ad::Var loss = tape.cross_entropy(mlp_logits(tape, b, c, x), y);
    tape.backward(loss);
    return loss.value()(0, 0) * static_cast<double>(idx.size());
  };
  auto acc = [&](const ParamStore& p, const TrainingSet& s) { return accuracy_mlp(p, c, s); };
  return run_training(init_mlp(c, derive_seed(t.seed, {0xA11})), train, val, t, batch_loss, acc);
}

TrainResult train_vpt(const TrainingSet& train, const TrainingSet& val, const VptConfig& c,
                      const TrainConfig& t) {
  auto batch_loss = [&](const ParamStore& p, ParamStore& g, std::span<const std::size_t> idx) {
    double total = 0.0;
    const double w = 1.0 / static_cast<double>(idx.size());
    for (std::size_t i : idx) {
      const ad::Mat& tok = train.inputs[i];
      const ad::Mask mask(static_cast<std::size_t>(tok.rows()), 1);
      ad::Tape tape;
      const Binding b(tape, p, &g);
      const ad::Var loss = tape.cross_entropy(vpt_logits(tape, b, c, tok, mask), {train.labels[i]});
      total += loss.value()(0, 0);
      tape.backward(tape.scale(loss, w));
    }
    return total;
  };
  auto acc = [&](const ParamStore& p, const TrainingSet& s) { return accuracy_vpt(p, c, s); };
  return run_training(init_vpt(c, derive_seed(t.seed, {0xA11})), train, val, t, batch_loss, acc);
}

double accuracy_mlp(const ParamStore& params, const MlpConfig& c, const TrainingSet& set) {
  if (set.size() == 0) return 0.0;
  ad::Mat x(static_cast<Eigen::Index>(set.size()), c.input_dim);
  for (std::size_t i = 0; i < set.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = set.inputs[i].row(0);
  ad::Tape tape;
  const Binding b(tape, params);
  const ad::Mat z = mlp_logits(tape, b, c, x).value();
  int correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const int pred = z(static_cast<Eigen::Index>(i), 1) > z(static_cast<Eigen::Index>(i), 0) ? 1 : 0;
    correct += pred == set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

double accuracy_vpt(const ParamStore& params, const VptConfig& c, const TrainingSet& set) {
  if (set.size() == 0) return 0.0;
  int correct = 0;
  for (std::size_t i = 0; i < set.size(); ++i) {
    ad::Tape tape;
    const Binding b(tape, params);
    const ad::Mask mask(static_cast<std::size_t>(set.inputs[i].rows()), 1);
    const ad::Mat z = vpt_logits(tape, b, c, set.inputs[i], mask).value();
    correct += (z(0, 1) > z(0, 0) ? 1 : 0) == set.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

// ---------------------------------------------------------------------------
// LearnedModel

std::string schema_hash(const std::string& text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string LearnedModel::schema() const {
  const nlohmann::json arch_cfg = arch == Arch::kMlp ? to_json(mlp) : to_json(vpt);
  return feature_schema_string(aggregation, descriptor_dim, vpt.n_max) + ";arch=" + to_string(arch) +
         ";" + arch_cfg.dump();
}

double LearnedModel::probability(const FeatureSet& features) const {
  if (arch == Arch::kMlp) {
    const AggregatedFeature a = normalize(aggregate(features, ranges, aggregation), ranges);
    return mlp_forward(params, mlp, a.flatten())[1];
  }
  const ad::Mat t = tokens(features, ranges, vpt.n_max);
  if (t.rows() > 0 && t.cols() != vpt.d_in) {
    throw SchemaError("VPT tokens have " + std::to_string(t.cols()) + " fields, model expects " +
                      std::to_string(vpt.d_in));
  }
  const ad::Mask mask(static_cast<std::size_t>(t.rows()), 1);
  ad::Tape tape;
  const Binding b(tape, params);
  const ad::Var z = vpt_logits(tape, b, vpt, t.rows() > 0 ? t : ad::Mat(0, vpt.d_in), mask);
  return softmax2(z.value().row(0).transpose())[1];
}

void LearnedModel::save(const std::string& stem) const {
  ParamStore p = params;
  p.metadata["model"] = {{"arch", to_string(arch)},
                         {"mlp", to_json(mlp)},
                         {"vpt", to_json(vpt)},
                         {"aggregation",
                          {{"bins", aggregation.bins},
                           {"heat_h", aggregation.heat_h},
                           {"heat_w", aggregation.heat_w}}},
                         {"descriptor_dim", descriptor_dim},
                         {"norm_ranges", norm_ranges_to_json(ranges)},
                         {"feature_schema", schema()},
                         {"schema_hash", schema_hash(schema())}};
  p.save(stem);
}

LearnedModel LearnedModel::load(const std::string& stem) {
  LearnedModel m;
  m.params = ParamStore::load(stem);
  try {
    const nlohmann::json& j = m.params.metadata.at("model");
    m.arch = parse_arch(j.at("arch").get<std::string>());
    m.mlp = mlp_config_from_json(j.at("mlp"));
    m.vpt = vpt_config_from_json(j.at("vpt"));
    m.aggregation.bins = j.at("aggregation").at("bins").get<int>();
    m.aggregation.heat_h = j.at("aggregation").at("heat_h").get<int>();
    m.aggregation.heat_w = j.at("aggregation").at("heat_w").get<int>();
    m.descriptor_dim = j.at("descriptor_dim").get<int>();
    m.ranges = norm_ranges_from_json(j.at("norm_ranges"));
    if (j.at("schema_hash").get<std::string>() != schema_hash(m.schema())) {
      throw SchemaError("model " + stem + ": feature schema hash mismatch");
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("model " + stem + ": " + e.what());
  } catch (const ConfigError& e) {
    throw SchemaError("model " + stem + ": " + e.what());
  }
  return m;
}

}  // namespace avl
