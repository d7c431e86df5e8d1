#pragma once

// Feature extractor E, activity classifier C and subject discriminator D.
//
// Tensors inside the networks are channel-major: the extractor works on
// (C, n, S, T) and its embedding is (256, n, W/8). Input windows arrive in the
// dataset layout (n, channels, W) with channels ordered by sensor group.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tasked/autograd.hpp"
#include "tasked/data.hpp"
#include "tasked/rng.hpp"
#include "tasked/tensor.hpp"

#include "json.hpp"

namespace tasked::model {

struct ModelConfig {
  std::vector<data::SensorGroup> sensors;
  std::size_t window = 64;
  std::size_t n_activities = 2;
  std::size_t n_subjects = 2;  // N; the discriminator predicts N + 1 classes
  std::size_t stem_channels = 32;
  std::size_t heads = 4;
  std::size_t temporal_kernel = 5;
  double attention_dropout = 0.1;
  double feature_dropout = 0.1;
  double drop_connect = 0.1;
  double discriminator_dropout = 0.2;
  double leaky_slope = 0.2;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  bool positional_encoding = true;

  void validate() const;
  std::size_t embedding_channels() const { return stem_channels * 8; }
  std::size_t embedding_length() const { return window / 8; }
  // Time length after the three stride-2 discriminator convolutions.
  std::size_t discriminator_length() const;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Stable FNV-1a hash of the serialised config.
std::uint64_t config_hash(const ModelConfig& c);

enum class Net { extractor, classifier, discriminator };
const char* to_string(Net n);

struct Param {
  std::string name;
  Net net;
  Tensor value;
};

class ModelParams {
 public:
  ModelParams() = default;
  // All parameters zero, BN gamma one; shapes follow from the config.
  explicit ModelParams(ModelConfig cfg);
  static ModelParams initialized(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }
  std::vector<std::size_t> select(Net net) const;

  std::size_t index(const std::string& name) const;
  Tensor& param(const std::string& name) { return params_[index(name)].value; }
  const Tensor& param(const std::string& name) const { return params_[index(name)].value; }

  // BN running statistics; not trainable and excluded from parameter hashes.
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  std::uint64_t hash(Net net) const;
  // Copies the parameters (and buffers) belonging to net from other.
  void copy_from(const ModelParams& other, Net net);

 private:
  void add(std::string name, Net net, Shape shape, double fill = 0.0);
  void add_buffer(const std::string& name, std::size_t channels, double fill);

  ModelConfig cfg_;
  std::vector<Param> params_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, Tensor> buffers_;
};

// Tape variables for every parameter; parameters of networks not listed in
// trainable are recorded as constants.
struct Binding {
  std::vector<ag::Var> vars;
};
Binding bind(ag::Tape& tape, const ModelParams& params, std::initializer_list<Net> trainable);

struct ForwardOptions {
  ag::Mode mode = ag::Mode::eval;
  Rng* rng = nullptr;  // required in train mode
  bool update_running_stats = true;
  std::vector<ag::AttentionTrace>* traces = nullptr;  // one entry per attention block
};

// Sinusoidal encoding, (channels, length); identical across calls.
Tensor positional_encoding(std::size_t channels, std::size_t length);

// x: (n, channels, W) -> (32, n, S, W)
ag::Var sensor_stems(ag::Tape& t, ModelParams& p, const Binding& b, const Tensor& x);
ag::Var add_positional_encoding(ag::Tape& t, ag::Var x, bool enabled);
// (C, n, S, T) -> (2C, n, S, T/2)
ag::Var spatial_attention_block(ag::Tape& t, ModelParams& p, const Binding& b, std::size_t block, ag::Var x,
                                const ForwardOptions& opt, ag::AttentionTrace* trace = nullptr);
// x: (n, channels, W) -> embedding (256, n, W/8)
ag::Var extract_features(ag::Tape& t, ModelParams& p, const Binding& b, const Tensor& x, const ForwardOptions& opt);
// embedding -> (n, n_a)
ag::Var classify_activity(ag::Tape& t, const ModelParams& p, const Binding& b, ag::Var embedding);
// embedding -> (n, N + 1)
ag::Var discriminate_subject(ag::Tape& t, ModelParams& p, const Binding& b, ag::Var embedding,
                             const ForwardOptions& opt);
// embedding (256, n, T) -> (n, 256 * T)
ag::Var flatten_embedding(ag::Tape& t, ag::Var embedding);

// Eval-mode convenience wrappers, batched internally.
Tensor embed(ModelParams& p, const Tensor& x, std::size_t batch = 64);          // (n, 256 * W/8)
Tensor activity_logits(ModelParams& p, const Tensor& x, std::size_t batch = 64);  // (n, n_a)
Tensor subject_logits(ModelParams& p, const Tensor& x, std::size_t batch = 64);   // (n, N + 1)

// Checkpoint archive: magic, JSON manifest, named shape-tagged arrays.
void save_checkpoint(const std::filesystem::path& path, const ModelParams& p, const nlohmann::json& extra = {});
ModelParams load_checkpoint(const std::filesystem::path& path, nlohmann::json* manifest = nullptr);

}  // namespace tasked::model
