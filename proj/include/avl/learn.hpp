#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "avl/autograd.hpp"
#include "avl/features.hpp"

namespace avl {

// Named real tensors in insertion order plus free-form JSON metadata.
class ParamStore {
 public:
  void add(const std::string& name, ad::Mat value);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  ad::Mat& at(const std::string& name);
  const ad::Mat& at(const std::string& name) const;
  const std::vector<std::string>& names() const { return names_; }
  std::size_t scalar_count() const;
  bool all_finite() const;
  bool operator==(const ParamStore& other) const;

  // Same names and shapes, all zeros.
  ParamStore zeros_like() const;

  nlohmann::json metadata;

  // Writes `<stem>.bin` (little-endian named tensors) and `<stem>.json`.
  void save(const std::string& stem) const;
  // Throws SchemaError on a malformed or non-finite file.
  static ParamStore load(const std::string& stem);

 private:
  std::vector<std::string> names_;
  std::vector<ad::Mat> values_;
  std::map<std::string, std::size_t> index_;
};

enum class Arch { kMlp, kVpt };
std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

struct MlpConfig {
  int input_dim = 161;
  int hidden = 128;
  int hidden_layers = 2;
};

struct VptConfig {
  int d_in = kScalarFieldCount + 8;
  int d_model = 32;
  int heads = 2;
  int layers = 2;
  int d_ff = 64;
  int n_max = 256;
};

nlohmann::json to_json(const MlpConfig& c);
nlohmann::json to_json(const VptConfig& c);
MlpConfig mlp_config_from_json(const nlohmann::json& j);
VptConfig vpt_config_from_json(const nlohmann::json& j);

// Xavier-uniform weights, zero biases, unit layer-norm gains. With
// `zero_head`, the output layer starts at zero.
ParamStore init_mlp(const MlpConfig& c, std::uint64_t seed, bool zero_head = false);
ParamStore init_vpt(const VptConfig& c, std::uint64_t seed, bool zero_head = false);

// Binds every tensor of a store to a tape, optionally accumulating
// gradients into `grads` (same layout).
class Binding {
 public:
  Binding(ad::Tape& tape, const ParamStore& params, ParamStore* grads = nullptr);
  ad::Var operator[](const std::string& name) const;

 private:
  std::map<std::string, ad::Var> vars_;
};

// Padded token rows for one viewpoint. Masked rows are zero.
struct TokenBatch {
  ad::Mat tokens;
  ad::Mask mask;
  int label = 0;
};

TokenBatch make_token_batch(const ad::Mat& real_tokens, int n_max, int label = 0);

// Logits (rows x 2) of a batch of aggregated feature rows.
ad::Var mlp_logits(ad::Tape& tape, const Binding& p, const MlpConfig& c, const ad::Mat& x);
// Logits (1 x 2) of one token set. An all-masked set pools to the learned
// null token.
ad::Var vpt_logits(ad::Tape& tape, const Binding& p, const VptConfig& c, const ad::Mat& tokens,
                   const ad::Mask& mask);

Eigen::Vector2d softmax2(const Eigen::Vector2d& logits);
// Two-class probabilities; throws SchemaError on an input dimension
// mismatch.
Eigen::Vector2d mlp_forward(const ParamStore& params, const MlpConfig& c, const Eigen::VectorXd& x);
Eigen::Vector2d vpt_forward(const ParamStore& params, const VptConfig& c, const TokenBatch& batch);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Inputs are already normalized. For MLP each sample is a 1 x input_dim
// row; for VPT it is the real token rows (mask all true).
struct TrainingSet {
  std::vector<ad::Mat> inputs;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct TrainResult {
  ParamStore params;
  std::vector<double> train_loss;  // mean per epoch
  std::vector<double> val_accuracy;
  int best_epoch = -1;
  double best_val_accuracy = 0.0;
};

// Adam on mean cross-entropy with minibatches reshuffled each epoch; keeps
// the weights of the epoch with the best validation accuracy (earliest on
// ties). Throws TrainingError for a single-class training set.
TrainResult train_mlp(const TrainingSet& train, const TrainingSet& val, const MlpConfig& c,
                      const TrainConfig& t);
TrainResult train_vpt(const TrainingSet& train, const TrainingSet& val, const VptConfig& c,
                      const TrainConfig& t);

double accuracy_mlp(const ParamStore& params, const MlpConfig& c, const TrainingSet& set);
double accuracy_vpt(const ParamStore& params, const VptConfig& c, const TrainingSet& set);

// FNV-1a 64-bit, as 16 hex digits.
std::string schema_hash(const std::string& text);

// A trained scorer with its frozen normalization and feature layout.
class LearnedModel {
 public:
  Arch arch = Arch::kVpt;
  ParamStore params;
  NormRanges ranges;
  AggregationConfig aggregation;
  MlpConfig mlp;
  VptConfig vpt;
  int descriptor_dim = 8;

  std::string schema() const;
  // Positive-class probability of a viewpoint given its (raw or
  // normalized) visible landmark features.
  double probability(const FeatureSet& features) const;

  // Stores architecture, ranges and schema hash in params.metadata.
  void save(const std::string& stem) const;
  // Throws SchemaError when the stored schema hash does not match the
  // layout described by the stored configuration.
  static LearnedModel load(const std::string& stem);
};

}  // namespace avl
