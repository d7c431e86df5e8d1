#include "tasked/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace tasked::model {

using nlohmann::json;

namespace {

std::size_t halved(std::size_t len) { return (len + 1) / 2; }

std::string block_prefix(std::size_t b) { return "extractor.block." + std::to_string(b) + "."; }
std::string disc_prefix(std::size_t b) { return "discriminator.block." + std::to_string(b) + "."; }

constexpr std::size_t kDiscChannels[3] = {32, 64, 128};
constexpr std::size_t kDiscHidden = 10;

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ModelConfig::validate() const {
  if (sensors.empty()) throw Error("model.sensors: at least one sensor group required");
  std::size_t first = 0;
  for (const auto& s : sensors) {
    if (s.channel_count == 0) throw Error("model.sensors: group '" + s.name + "' has no channels");
    if (s.first_channel != first) throw Error("model.sensors: groups must be contiguous");
    first += s.channel_count;
  }
  if (window == 0 || window % 8 != 0)
    throw Error("model.window: " + std::to_string(window) + " is not divisible by 8");
  if (window / 8 < 8)
    throw Error("model.window: embedding length " + std::to_string(window / 8) +
                " too short for three stride-2 discriminator convolutions (need W >= 64)");
  if (n_activities == 0) throw Error("model.n_activities: must be positive");
  if (n_subjects == 0) throw Error("model.n_subjects: must be positive");
  if (stem_channels == 0) throw Error("model.stem_channels: must be positive");
  if (heads == 0 || stem_channels % heads != 0) throw Error("model.heads: must divide stem_channels");
  if (temporal_kernel == 0 || temporal_kernel % 2 == 0) throw Error("model.temporal_kernel: must be odd");
  for (auto [name, r] : {std::pair{"attention_dropout", attention_dropout}, {"feature_dropout", feature_dropout},
                         {"drop_connect", drop_connect}, {"discriminator_dropout", discriminator_dropout}})
    if (!(r >= 0.0 && r < 1.0)) throw Error(std::string("model.") + name + ": rate must lie in [0, 1)");
}

std::size_t ModelConfig::discriminator_length() const {
  return halved(halved(halved(embedding_length())));
}

json to_json(const ModelConfig& c) {
  json sensors = json::array();
  for (const auto& s : c.sensors) sensors.push_back({{"name", s.name}, {"channels", s.channel_count}});
  return {{"sensors", sensors},
          {"window", c.window},
          {"n_activities", c.n_activities},
          {"n_subjects", c.n_subjects},
          {"stem_channels", c.stem_channels},
          {"heads", c.heads},
          {"temporal_kernel", c.temporal_kernel},
          {"attention_dropout", c.attention_dropout},
          {"feature_dropout", c.feature_dropout},
          {"drop_connect", c.drop_connect},
          {"discriminator_dropout", c.discriminator_dropout},
          {"leaky_slope", c.leaky_slope},
          {"bn_momentum", c.bn_momentum},
          {"bn_eps", c.bn_eps},
          {"positional_encoding", c.positional_encoding}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  std::size_t first = 0;
  for (const auto& s : j.at("sensors")) {
    const std::size_t n = s.at("channels").get<std::size_t>();
    c.sensors.push_back({s.at("name").get<std::string>(), first, n});
    first += n;
  }
  c.window = j.at("window");
  c.n_activities = j.at("n_activities");
  c.n_subjects = j.at("n_subjects");
  c.stem_channels = j.at("stem_channels");
  c.heads = j.at("heads");
  c.temporal_kernel = j.at("temporal_kernel");
  c.attention_dropout = j.at("attention_dropout");
  c.feature_dropout = j.at("feature_dropout");
  c.drop_connect = j.at("drop_connect");
  c.discriminator_dropout = j.at("discriminator_dropout");
  c.leaky_slope = j.at("leaky_slope");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  c.positional_encoding = j.at("positional_encoding");
  c.validate();
  return c;
}

std::uint64_t config_hash(const ModelConfig& c) {
  const std::string s = to_json(c).dump();
  return fnv1a(s.data(), s.size());
}

const char* to_string(Net n) {
  switch (n) {
    case Net::extractor:
      return "extractor";
    case Net::classifier:
      return "classifier";
    case Net::discriminator:
      return "discriminator";
  }
  return "?";
}

// ---------------------------------------------------------------------------

void ModelParams::add(std::string name, Net net, Shape shape, double fill) {
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), net, Tensor(std::move(shape), fill)});
}

void ModelParams::add_buffer(const std::string& name, std::size_t channels, double fill) {
  buffers_.emplace(name, Tensor({channels}, fill));
}

ModelParams::ModelParams(ModelConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::size_t c0 = cfg_.stem_channels;
  for (std::size_t s = 0; s < cfg_.sensors.size(); ++s) {
    const std::string p = "extractor.stem." + std::to_string(s) + ".";
    add(p + "weight", Net::extractor, {c0, cfg_.sensors[s].channel_count, 3});
    add(p + "bias", Net::extractor, {c0});
  }
  std::size_t c = c0;
  for (std::size_t b = 0; b < 3; ++b, c *= 2) {
    const std::string p = block_prefix(b);
    add(p + "query.weight", Net::extractor, {c, c, 1});
    add(p + "query.bias", Net::extractor, {c});
    add(p + "key.weight", Net::extractor, {c, c, 1});
    add(p + "value.weight", Net::extractor, {c, c, 1});
    add(p + "out.weight", Net::extractor, {c, c, 1});
    add(p + "norm1.gamma", Net::extractor, {c}, 1.0);
    add(p + "norm1.beta", Net::extractor, {c});
    add(p + "temporal.weight", Net::extractor, {2 * c, c, cfg_.temporal_kernel});
    add(p + "norm2.gamma", Net::extractor, {2 * c}, 1.0);
    add(p + "norm2.beta", Net::extractor, {2 * c});
    add_buffer(p + "norm1.running_mean", c, 0.0);
    add_buffer(p + "norm1.running_var", c, 1.0);
    add_buffer(p + "norm2.running_mean", 2 * c, 0.0);
    add_buffer(p + "norm2.running_var", 2 * c, 1.0);
  }
  const std::size_t emb = cfg_.embedding_channels();
  add("classifier.fc.weight", Net::classifier, {cfg_.n_activities, emb});
  add("classifier.fc.bias", Net::classifier, {cfg_.n_activities});

  std::size_t cin = emb;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string p = disc_prefix(b);
    add(p + "conv.weight", Net::discriminator, {kDiscChannels[b], cin, 5});
    add(p + "conv.bias", Net::discriminator, {kDiscChannels[b]});
    add(p + "norm.gamma", Net::discriminator, {kDiscChannels[b]}, 1.0);
    add(p + "norm.beta", Net::discriminator, {kDiscChannels[b]});
    add_buffer(p + "norm.running_mean", kDiscChannels[b], 0.0);
    add_buffer(p + "norm.running_var", kDiscChannels[b], 1.0);
    cin = kDiscChannels[b];
  }
  add("discriminator.fc1.weight", Net::discriminator, {kDiscHidden, kDiscChannels[2] * cfg_.discriminator_length()});
  add("discriminator.fc1.bias", Net::discriminator, {kDiscHidden});
  add("discriminator.fc2.weight", Net::discriminator, {cfg_.n_subjects + 1, kDiscHidden});
  add("discriminator.fc2.bias", Net::discriminator, {cfg_.n_subjects + 1});
}

ModelParams ModelParams::initialized(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p(cfg);
  Rng rng(derive_seed(seed, "model.init"));
  // Uniform(+-1/sqrt(fan_in)) for weights and the biases that follow them.
  double bound = 1.0;
  for (Param& prm : p.params_) {
    const bool is_norm = prm.name.find(".norm") != std::string::npos;
    if (is_norm) continue;
    const bool is_weight = prm.name.size() > 7 && prm.name.compare(prm.name.size() - 7, 7, ".weight") == 0;
    if (is_weight) {
      const std::size_t fan_in = prm.value.numel() / prm.value.dim(0);
      bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    }
    for (double& v : prm.value.data) v = rng.uniform(-bound, bound);
  }
  return p;
}

std::vector<std::size_t> ModelParams::select(Net net) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].net == net) out.push_back(i);
  return out;
}

std::size_t ModelParams::index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("model: unknown parameter '" + name + "'");
  return it->second;
}

std::uint64_t ModelParams::hash(Net net) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param& p : params_)
    if (p.net == net) {
      h = fnv1a(p.name.data(), p.name.size(), h);
      h = fnv1a(p.value.ptr(), p.value.numel() * sizeof(double), h);
    }
  return h;
}

void ModelParams::copy_from(const ModelParams& other, Net net) {
  if (other.params_.size() != params_.size()) throw Error("model: copy between differently shaped models");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].net == net) {
      if (!params_[i].value.same_shape(other.params_[i].value)) throw Error("model: shape mismatch in copy");
      params_[i].value = other.params_[i].value;
    }
  const std::string prefix = to_string(net);
  for (auto& [name, t] : buffers_)
    if (name.rfind(prefix, 0) == 0) t = other.buffers_.at(name);
}

Binding bind(ag::Tape& tape, const ModelParams& params, std::initializer_list<Net> trainable) {
  Binding b;
  b.vars.reserve(params.params().size());
  for (const Param& p : params.params()) {
    const bool train = std::find(trainable.begin(), trainable.end(), p.net) != trainable.end();
    b.vars.push_back(train ? tape.variable(p.value) : tape.constant(p.value));
  }
  return b;
}

// ---------------------------------------------------------------------------

namespace {

ag::Var var(const ModelParams& p, const Binding& b, const std::string& name) { return b.vars.at(p.index(name)); }

ag::BatchNormState bn_state(ModelParams& p, const std::string& prefix, const ForwardOptions& opt) {
  ag::BatchNormState st;
  st.running_mean = &p.buffers().at(prefix + ".running_mean");
  st.running_var = &p.buffers().at(prefix + ".running_var");
  st.momentum = p.config().bn_momentum;
  st.eps = p.config().bn_eps;
  st.update_running = opt.update_running_stats;
  return st;
}

Rng& rng_for(const ForwardOptions& opt) {
  if (opt.rng) return *opt.rng;
  if (opt.mode == ag::Mode::train) throw Error("model: train-mode forward requires an rng");
  thread_local Rng unused(0);
  return unused;
}

}  // namespace

Tensor positional_encoding(std::size_t channels, std::size_t length) {
  Tensor pe({channels, length});
  for (std::size_t c = 0; c < channels; ++c) {
    const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / static_cast<double>(channels));
    for (std::size_t t = 0; t < length; ++t) {
      const double a = static_cast<double>(t) * freq;
      pe[c * length + t] = (c % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return pe;
}

ag::Var sensor_stems(ag::Tape& t, ModelParams& p, const Binding& b, const Tensor& x) {
  const ModelConfig& cfg = p.config();
  if (x.rank() != 3) throw Error("sensor_stems: input must be (n, channels, W)");
  const std::size_t n = x.dim(0), nc = x.dim(1), w = x.dim(2);
  const std::size_t expected = cfg.sensors.back().first_channel + cfg.sensors.back().channel_count;
  if (nc != expected)
    throw Error("sensor_stems: input has " + std::to_string(nc) + " channels, model expects " +
                std::to_string(expected));
  std::vector<ag::Var> parts;
  for (std::size_t s = 0; s < cfg.sensors.size(); ++s) {
    const auto& g = cfg.sensors[s];
    Tensor xs({g.channel_count, n, w});
    for (std::size_t c = 0; c < g.channel_count; ++c)
      for (std::size_t i = 0; i < n; ++i)
        std::copy_n(x.ptr() + (i * nc + g.first_channel + c) * w, w, xs.ptr() + (c * n + i) * w);
    const std::string prefix = "extractor.stem." + std::to_string(s) + ".";
    ag::Var h = ag::conv1d(t, t.constant(std::move(xs)), var(p, b, prefix + "weight"), var(p, b, prefix + "bias"), 1,
                           1);
    parts.push_back(ag::relu(t, h));
  }
  return ag::stack_sensors(t, parts);
}

ag::Var add_positional_encoding(ag::Tape& t, ag::Var x, bool enabled) {
  if (!enabled) return x;
  const Tensor& in = t.value(x);
  const std::size_t c = in.dim(0), len = in.shape.back();
  const std::size_t inner = in.numel() / (c * len);
  const Tensor pe = positional_encoding(c, len);
  Tensor out = in;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t j = 0; j < inner; ++j) {
      double* row = out.ptr() + (ci * inner + j) * len;
      for (std::size_t ti = 0; ti < len; ++ti) row[ti] += pe[ci * len + ti];
    }
  return t.record(std::move(out), {x}, [x](ag::Tape& tp, const Tensor& g) {
    if (Tensor* gx = tp.grad_slot(x))
      for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
  });
}

ag::Var spatial_attention_block(ag::Tape& t, ModelParams& p, const Binding& b, std::size_t block, ag::Var x,
                                const ForwardOptions& opt, ag::AttentionTrace* trace) {
  const ModelConfig& cfg = p.config();
  const Tensor& in = t.value(x);
  if (in.rank() != 4) throw Error("spatial_attention_block: expected (C, n, S, T)");
  const std::size_t len = in.dim(3);
  if (len % 2 != 0) throw Error("spatial_attention_block: time length " + std::to_string(len) + " is odd");
  const std::string pre = block_prefix(block);
  Rng& rng = rng_for(opt);
  const ag::Var none;

  ag::Var q = ag::conv1d(t, x, var(p, b, pre + "query.weight"), var(p, b, pre + "query.bias"), 1, 0);
  ag::Var k = ag::conv1d(t, x, var(p, b, pre + "key.weight"), none, 1, 0);
  ag::Var v = ag::conv1d(t, x, var(p, b, pre + "value.weight"), none, 1, 0);
  ag::Var a = ag::spatial_attention(t, q, k, v, cfg.heads, cfg.drop_connect, opt.mode, rng, trace);
  a = ag::conv1d(t, a, var(p, b, pre + "out.weight"), none, 1, 0);
  a = ag::batch_norm(t, a, var(p, b, pre + "norm1.gamma"), var(p, b, pre + "norm1.beta"),
                     bn_state(p, pre + "norm1", opt), opt.mode);
  a = ag::dropout(t, a, cfg.attention_dropout, opt.mode, rng);
  ag::Var h = ag::add(t, x, a);

  h = ag::conv1d(t, h, var(p, b, pre + "temporal.weight"), none, 2, cfg.temporal_kernel / 2);
  h = ag::batch_norm(t, h, var(p, b, pre + "norm2.gamma"), var(p, b, pre + "norm2.beta"),
                     bn_state(p, pre + "norm2", opt), opt.mode);
  h = ag::relu(t, h);
  return ag::dropout(t, h, cfg.feature_dropout, opt.mode, rng);
}

ag::Var extract_features(ag::Tape& t, ModelParams& p, const Binding& b, const Tensor& x, const ForwardOptions& opt) {
  const ModelConfig& cfg = p.config();
  if (x.rank() != 3 || x.dim(2) != cfg.window)
    throw Error("extract_features: expected windows of length " + std::to_string(cfg.window) + ", got " +
                shape_string(x.shape));
  ag::Var h = sensor_stems(t, p, b, x);
  h = add_positional_encoding(t, h, cfg.positional_encoding);
  if (opt.traces) opt.traces->assign(3, {});
  for (std::size_t blk = 0; blk < 3; ++blk)
    h = spatial_attention_block(t, p, b, blk, h, opt, opt.traces ? &(*opt.traces)[blk] : nullptr);
  return ag::mean_sensors(t, h);
}

ag::Var classify_activity(ag::Tape& t, const ModelParams& p, const Binding& b, ag::Var embedding) {
  ag::Var pooled = ag::mean_time(t, embedding);
  return ag::linear(t, pooled, var(p, b, "classifier.fc.weight"), var(p, b, "classifier.fc.bias"));
}

ag::Var discriminate_subject(ag::Tape& t, ModelParams& p, const Binding& b, ag::Var embedding,
                             const ForwardOptions& opt) {
  const ModelConfig& cfg = p.config();
  Rng& rng = rng_for(opt);
  ag::Var h = embedding;
  for (std::size_t blk = 0; blk < 3; ++blk) {
    const std::string pre = disc_prefix(blk);
    h = ag::conv1d(t, h, var(p, b, pre + "conv.weight"), var(p, b, pre + "conv.bias"), 2, 2);
    h = ag::leaky_relu(t, h, cfg.leaky_slope);
    h = ag::batch_norm(t, h, var(p, b, pre + "norm.gamma"), var(p, b, pre + "norm.beta"),
                       bn_state(p, pre + "norm", opt), opt.mode);
    h = ag::dropout(t, h, cfg.discriminator_dropout, opt.mode, rng);
  }
  h = ag::flatten_rows(t, h);
  h = ag::linear(t, h, var(p, b, "discriminator.fc1.weight"), var(p, b, "discriminator.fc1.bias"));
  h = ag::relu(t, h);
  return ag::linear(t, h, var(p, b, "discriminator.fc2.weight"), var(p, b, "discriminator.fc2.bias"));
}

ag::Var flatten_embedding(ag::Tape& t, ag::Var embedding) { return ag::flatten_rows(t, embedding); }

namespace {

template <typename F>
Tensor batched_eval(ModelParams& p, const Tensor& x, std::size_t batch, F&& head) {
  if (batch == 0) throw Error("batch size must be positive");
  const std::size_t n = x.dim(0), row = x.numel() / std::max<std::size_t>(n, 1);
  Tensor out;
  std::size_t width = 0;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t m = std::min(batch, n - start);
    Tensor xb({m, x.dim(1), x.dim(2)}, std::vector<double>(x.ptr() + start * row, x.ptr() + (start + m) * row));
    ag::Tape t;
    Binding b = bind(t, p, {});
    ForwardOptions opt;
    opt.mode = ag::Mode::eval;
    ag::Var e = extract_features(t, p, b, xb, opt);
    const Tensor& r = t.value(head(t, b, e, opt));
    if (start == 0) {
      width = r.dim(1);
      out = Tensor({n, width});
    }
    std::copy_n(r.ptr(), m * width, out.ptr() + start * width);
  }
  return out;
}

}  // namespace

Tensor embed(ModelParams& p, const Tensor& x, std::size_t batch) {
  return batched_eval(p, x, batch,
                      [](ag::Tape& t, const Binding&, ag::Var e, const ForwardOptions&) { return flatten_embedding(t, e); });
}

Tensor activity_logits(ModelParams& p, const Tensor& x, std::size_t batch) {
  return batched_eval(p, x, batch, [&p](ag::Tape& t, const Binding& b, ag::Var e, const ForwardOptions&) {
    return classify_activity(t, p, b, e);
  });
}

Tensor subject_logits(ModelParams& p, const Tensor& x, std::size_t batch) {
  return batched_eval(p, x, batch, [&p](ag::Tape& t, const Binding& b, ag::Var e, const ForwardOptions& opt) {
    return discriminate_subject(t, p, b, e, opt);
  });
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'S', 'K', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("checkpoint: truncated file");
  return v;
}

void put_array(std::ostream& os, const std::string& name, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ModelParams& p, const json& extra) {
  const ModelConfig& cfg = p.config();
  json grouping = json::array();
  for (const auto& s : cfg.sensors)
    grouping.push_back({{"name", s.name}, {"first_channel", s.first_channel}, {"channels", s.channel_count}});
  json manifest = {{"window", cfg.window},
                   {"sensors", cfg.sensors.size()},
                   {"grouping", grouping},
                   {"n_activities", cfg.n_activities},
                   {"n_subjects", cfg.n_subjects},
                   {"config_hash", config_hash(cfg)},
                   {"model_config", to_json(cfg)}};
  if (!extra.is_null()) manifest["extra"] = extra;
  const std::string m = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("checkpoint: cannot write " + path.string());
    os.write(kMagic, 4);
    put(os, kVersion);
    put<std::uint64_t>(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    put<std::uint64_t>(os, p.params().size() + p.buffers().size());
    for (const Param& prm : p.params()) put_array(os, prm.name, prm.value);
    for (const auto& [name, t] : p.buffers()) put_array(os, name, t);
    if (!os) throw Error("checkpoint: write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path, json* manifest_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw Error("checkpoint: bad magic in " + path.string());
  if (get<std::uint32_t>(is) != kVersion) throw Error("checkpoint: unsupported version");
  std::string m(get<std::uint64_t>(is), '\0');
  is.read(m.data(), static_cast<std::streamsize>(m.size()));
  const json manifest = json::parse(m);
  ModelParams p(model_config_from_json(manifest.at("model_config")));
  if (manifest.at("config_hash").get<std::uint64_t>() != config_hash(p.config()))
    throw Error("checkpoint: config hash mismatch");
  const auto count = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(get<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    Shape shape(get<std::uint32_t>(is));
    for (auto& d : shape) d = get<std::uint64_t>(is);
    auto it = p.buffers().find(name);
    Tensor& dst = it != p.buffers().end() ? it->second : p.param(name);
    if (dst.shape != shape)
      throw Error("checkpoint: '" + name + "' has shape " + shape_string(shape) + ", expected " +
                  shape_string(dst.shape));
    is.read(reinterpret_cast<char*>(dst.ptr()), static_cast<std::streamsize>(dst.numel() * sizeof(double)));
    if (!is) throw Error("checkpoint: truncated array '" + name + "'");
  }
  if (manifest_out) *manifest_out = manifest;
  return p;
}

}  // namespace tasked::model
