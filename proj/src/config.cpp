#include "tasked/config.hpp"

#include <fstream>
#include <regex>

#include "tasked/adapters.hpp"

namespace tasked::config {

using nlohmann::json;

Mode parse_mode(const std::string& s) {
  if (s == "prepare") return Mode::prepare;
  if (s == "train") return Mode::train;
  if (s == "loso") return Mode::loso;
  if (s == "cross_dataset") return Mode::cross_dataset;
  if (s == "report") return Mode::report;
  throw Error("mode: unknown value '" + s + "' (expected prepare, train, loso, cross_dataset or report)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::prepare:
      return "prepare";
    case Mode::train:
      return "train";
    case Mode::loso:
      return "loso";
    case Mode::cross_dataset:
      return "cross_dataset";
    case Mode::report:
      return "report";
  }
  return "?";
}

namespace {

json adapter_defaults() {
  return {{"name", ""},           {"files", json::array()}, {"window", 0},       {"step", 0},
          {"normalization", ""},  {"target_rate", nullptr}, {"bounds_csv", ""}};
}

// Item schemas for arrays of objects, keyed by path with indices removed.
const json* item_schema(const std::string& path) {
  static const json files = {{"subject", 0}, {"paths", json::array({""})}};
  static const json adapter = adapter_defaults();
  static const json method = {{"name", ""}, {"dir", ""}};
  if (path == "data.adapter.files" || path == "data.cross_dataset.datasets.files") return &files;
  if (path == "data.cross_dataset.datasets") return &adapter;
  if (path == "report.methods") return &method;
  return nullptr;
}

std::string strip_indices(const std::string& path) { return std::regex_replace(path, std::regex(R"(\[\d+\])"), ""); }

const char* type_name(const json& j) {
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned() || j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "array";
  if (j.is_object()) return "object";
  return "null";
}

json merge(const json& def, const json& user, const std::string& path) {
  auto mismatch = [&](const char* expected) {
    return Error("config key '" + path + "': expected " + expected + ", got " + type_name(user));
  };
  if (path == "data.cross_dataset.vocabulary") {
    if (user.is_string()) return user;
    if (user.is_array() && std::all_of(user.begin(), user.end(), [](const json& v) { return v.is_string(); }))
      return user;
    throw mismatch("a vocabulary name or an array of activity names");
  }
  if (def.is_object()) {
    if (!user.is_object()) throw mismatch("object");
    json out = def;
    for (auto it = user.begin(); it != user.end(); ++it) {
      const std::string key = path.empty() ? it.key() : path + "." + it.key();
      if (!def.contains(it.key())) throw Error("unknown config key '" + key + "'");
      out[it.key()] = merge(def[it.key()], it.value(), key);
    }
    return out;
  }
  if (def.is_array()) {
    if (!user.is_array()) throw mismatch("array");
    json out = json::array();
    const json* item = item_schema(strip_indices(path));
    for (std::size_t i = 0; i < user.size(); ++i) {
      const std::string key = path + "[" + std::to_string(i) + "]";
      if (item)
        out.push_back(merge(*item, user[i], key));
      else if (!def.empty())
        out.push_back(merge(def[0], user[i], key));
      else
        out.push_back(user[i]);
    }
    return out;
  }
  if (def.is_null()) {
    if (!user.is_null() && !user.is_number()) throw mismatch("number or null");
    return user;
  }
  if (def.is_boolean()) {
    if (!user.is_boolean()) throw mismatch("boolean");
    return user;
  }
  if (def.is_number_unsigned() || def.is_number_integer()) {
    if (!user.is_number_integer()) throw mismatch("integer");
    if (def.is_number_unsigned() && user.get<long long>() < 0) throw mismatch("non-negative integer");
    return user;
  }
  if (def.is_number()) {
    if (!user.is_number()) throw mismatch("number");
    return json(user.get<double>());
  }
  if (def.is_string()) {
    if (!user.is_string()) throw mismatch("string");
    return user;
  }
  return user;
}

AdapterSource adapter_from_json(const json& j) {
  AdapterSource a;
  a.name = j.at("name");
  for (const json& f : j.at("files"))
    a.files.push_back({f.at("subject").get<int>(), f.at("paths").get<std::vector<std::string>>()});
  a.window = j.at("window");
  a.step = j.at("step");
  a.normalization = j.at("normalization");
  if (!j.at("target_rate").is_null()) a.target_rate = j.at("target_rate").get<double>();
  a.bounds_csv = j.at("bounds_csv");
  return a;
}

json adapter_to_json(const AdapterSource& a) {
  json files = json::array();
  for (const auto& f : a.files) files.push_back({{"subject", f.subject}, {"paths", f.paths}});
  return {{"name", a.name},
          {"files", files},
          {"window", a.window},
          {"step", a.step},
          {"normalization", a.normalization},
          {"target_rate", a.target_rate ? json(*a.target_rate) : json(nullptr)},
          {"bounds_csv", a.bounds_csv}};
}

}  // namespace

json defaults() {
  const model::ModelConfig m;
  const training::TrainConfig t;
  const data::SyntheticConfig s;
  return {
      {"mode", "loso"},
      {"seed", 1u},
      {"workers", 1u},
      {"output_dir", ""},
      {"method_name", "TASKED"},
      {"save_checkpoints", true},
      {"data",
       {{"source", "synthetic"},
        {"synthetic",
         {{"n_subjects", s.n_subjects},
          {"n_activities", s.n_activities},
          {"sensors", s.sensors},
          {"window_size", s.window_size},
          {"windows_per_subject_per_activity", s.windows_per_subject_per_activity},
          {"subject_effect", s.subject_effect},
          {"noise_std", s.noise_std}}},
        {"container", ""},
        {"adapter", adapter_defaults()},
        {"cross_dataset",
         {{"vocabulary", "common4"}, {"rate_hz", 50.0}, {"window", 100u}, {"step", 16u}, {"datasets", json::array()}}}}},
      {"model",
       {{"stem_channels", m.stem_channels},
        {"heads", m.heads},
        {"temporal_kernel", m.temporal_kernel},
        {"attention_dropout", m.attention_dropout},
        {"feature_dropout", m.feature_dropout},
        {"drop_connect", m.drop_connect},
        {"discriminator_dropout", m.discriminator_dropout},
        {"leaky_slope", m.leaky_slope},
        {"bn_momentum", m.bn_momentum},
        {"bn_eps", m.bn_eps},
        {"positional_encoding", m.positional_encoding}}},
      {"train",
       {{"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"patience", t.patience},
        {"lr_extractor", t.lr_extractor},
        {"lr_classifier", t.lr_classifier},
        {"lr_discriminator", t.lr_discriminator},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"adam_eps", t.adam_eps},
        {"optimizer", "adam"},
        {"lambda_cls", t.hyper.lambda_cls},
        {"lambda_mmd", t.hyper.lambda_mmd},
        {"lambda_d", t.hyper.lambda_d},
        {"alpha", t.hyper.alpha},
        {"tau", t.hyper.tau},
        {"dice_eps", t.hyper.dice_eps},
        {"kernel_factors", t.kernel_factors},
        {"use_target_unlabeled", t.use_target_unlabeled},
        {"run_adversarial", t.run_adversarial},
        {"teacher_eval_mode", t.teacher_eval_mode},
        {"eval_batch", t.eval_batch}}},
      {"train_fold", {{"test_subject", 0u}, {"variant", 0u}}},
      {"report", {{"methods", json::array()}, {"plots", true}}}};
}

json merge_with_defaults(const json& user) {
  if (!user.is_object()) throw Error("config: top level must be an object");
  return merge(defaults(), user, "");
}

void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw Error("override '" + assignment + "': expected key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (node->is_object()) {
      if (!node->contains(part)) throw Error("unknown config key '" + key + "'");
      node = &(*node)[part];
    } else if (node->is_array() && !part.empty() && std::all_of(part.begin(), part.end(), ::isdigit)) {
      const std::size_t i = std::stoul(part);
      if (i >= node->size()) throw Error("config key '" + key + "': index out of range");
      node = &(*node)[i];
    } else {
      throw Error("unknown config key '" + key + "'");
    }
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

Experiment from_json(const json& j) {
  Experiment e;
  e.mode = parse_mode(j.at("mode"));
  e.seed = j.at("seed");
  e.workers = j.at("workers");
  if (e.workers == 0) throw Error("config key 'workers': must be positive");
  e.output_dir = j.at("output_dir");
  e.method_name = j.at("method_name");
  e.save_checkpoints = j.at("save_checkpoints");

  const json& d = j.at("data");
  e.data.source = d.at("source");
  if (e.data.source != "synthetic" && e.data.source != "container" && e.data.source != "adapter" &&
      e.data.source != "cross_dataset")
    throw Error("config key 'data.source': unknown value '" + e.data.source + "'");
  const json& s = d.at("synthetic");
  e.data.synthetic.n_subjects = s.at("n_subjects");
  e.data.synthetic.n_activities = s.at("n_activities");
  e.data.synthetic.sensors = s.at("sensors").get<std::vector<std::size_t>>();
  e.data.synthetic.window_size = s.at("window_size");
  e.data.synthetic.windows_per_subject_per_activity = s.at("windows_per_subject_per_activity");
  e.data.synthetic.subject_effect = s.at("subject_effect");
  e.data.synthetic.noise_std = s.at("noise_std");
  e.data.synthetic.seed = derive_seed(e.seed, "data");
  e.data.container = d.at("container");
  e.data.adapter = adapter_from_json(d.at("adapter"));
  const json& c = d.at("cross_dataset");
  const json& vocab = c.at("vocabulary");
  e.data.cross.vocabulary =
      vocab.is_string() ? data::vocabulary(vocab.get<std::string>()) : vocab.get<std::vector<std::string>>();
  e.data.cross.rate_hz = c.at("rate_hz");
  e.data.cross.window = c.at("window");
  e.data.cross.step = c.at("step");
  for (const json& a : c.at("datasets")) e.data.cross.datasets.push_back(adapter_from_json(a));

  const json& m = j.at("model");
  e.arch.stem_channels = m.at("stem_channels");
  e.arch.heads = m.at("heads");
  e.arch.temporal_kernel = m.at("temporal_kernel");
  e.arch.attention_dropout = m.at("attention_dropout");
  e.arch.feature_dropout = m.at("feature_dropout");
  e.arch.drop_connect = m.at("drop_connect");
  e.arch.discriminator_dropout = m.at("discriminator_dropout");
  e.arch.leaky_slope = m.at("leaky_slope");
  e.arch.bn_momentum = m.at("bn_momentum");
  e.arch.bn_eps = m.at("bn_eps");
  e.arch.positional_encoding = m.at("positional_encoding");

  const json& t = j.at("train");
  auto& tc = e.train;
  tc.batch_size = t.at("batch_size");
  tc.epochs = t.at("epochs");
  tc.patience = t.at("patience");
  tc.lr_extractor = t.at("lr_extractor");
  tc.lr_classifier = t.at("lr_classifier");
  tc.lr_discriminator = t.at("lr_discriminator");
  tc.beta1 = t.at("beta1");
  tc.beta2 = t.at("beta2");
  tc.adam_eps = t.at("adam_eps");
  const std::string opt = t.at("optimizer");
  if (opt != "adam" && opt != "sgd") throw Error("config key 'train.optimizer': expected adam or sgd");
  tc.optimizer = opt == "adam" ? training::OptimizerKind::adam : training::OptimizerKind::sgd;
  tc.hyper.lambda_cls = t.at("lambda_cls");
  tc.hyper.lambda_mmd = t.at("lambda_mmd");
  tc.hyper.lambda_d = t.at("lambda_d");
  tc.hyper.alpha = t.at("alpha");
  tc.hyper.tau = t.at("tau");
  tc.hyper.dice_eps = t.at("dice_eps");
  tc.kernel_factors = t.at("kernel_factors").get<std::vector<double>>();
  tc.use_target_unlabeled = t.at("use_target_unlabeled");
  tc.run_adversarial = t.at("run_adversarial");
  tc.teacher_eval_mode = t.at("teacher_eval_mode");
  tc.eval_batch = t.at("eval_batch");
  tc.seed = derive_seed(e.seed, "train");
  try {
    tc.validate();
  } catch (const Error& err) {
    throw Error(std::string("config: ") + err.what());
  }

  e.train_test_subject = j.at("train_fold").at("test_subject");
  e.train_variant = j.at("train_fold").at("variant");
  if (e.train_variant > 1) throw Error("config key 'train_fold.variant': must be 0 or 1");
  for (const json& r : j.at("report").at("methods")) e.report_methods.push_back({r.at("name"), r.at("dir")});
  e.report_plots = j.at("report").at("plots");
  return e;
}

json to_json(const Experiment& e) {
  json j = defaults();
  j["mode"] = to_string(e.mode);
  j["seed"] = e.seed;
  j["workers"] = e.workers;
  j["output_dir"] = e.output_dir;
  j["method_name"] = e.method_name;
  j["save_checkpoints"] = e.save_checkpoints;
  json& d = j["data"];
  d["source"] = e.data.source;
  const auto& s = e.data.synthetic;
  d["synthetic"] = {{"n_subjects", s.n_subjects},
                    {"n_activities", s.n_activities},
                    {"sensors", s.sensors},
                    {"window_size", s.window_size},
                    {"windows_per_subject_per_activity", s.windows_per_subject_per_activity},
                    {"subject_effect", s.subject_effect},
                    {"noise_std", s.noise_std}};
  d["container"] = e.data.container;
  d["adapter"] = adapter_to_json(e.data.adapter);
  json datasets = json::array();
  for (const auto& a : e.data.cross.datasets) datasets.push_back(adapter_to_json(a));
  d["cross_dataset"] = {{"vocabulary", e.data.cross.vocabulary},
                        {"rate_hz", e.data.cross.rate_hz},
                        {"window", e.data.cross.window},
                        {"step", e.data.cross.step},
                        {"datasets", datasets}};
  const auto& m = e.arch;
  j["model"] = {{"stem_channels", m.stem_channels},
                {"heads", m.heads},
                {"temporal_kernel", m.temporal_kernel},
                {"attention_dropout", m.attention_dropout},
                {"feature_dropout", m.feature_dropout},
                {"drop_connect", m.drop_connect},
                {"discriminator_dropout", m.discriminator_dropout},
                {"leaky_slope", m.leaky_slope},
                {"bn_momentum", m.bn_momentum},
                {"bn_eps", m.bn_eps},
                {"positional_encoding", m.positional_encoding}};
  json t = training::to_json(e.train);
  t.erase("seed");
  j["train"] = t;
  j["train_fold"] = {{"test_subject", e.train_test_subject}, {"variant", e.train_variant}};
  json methods = json::array();
  for (const auto& r : e.report_methods) methods.push_back({{"name", r.name}, {"dir", r.dir}});
  j["report"] = {{"methods", methods}, {"plots", e.report_plots}};
  return j;
}

Experiment load(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open config " + file.string());
  json user;
  try {
    user = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw Error("config " + file.string() + ": " + e.what());
  }
  json merged = merge_with_defaults(user);
  for (const std::string& o : overrides) apply_override(merged, o);
  return from_json(merge_with_defaults(merged));
}

}  // namespace tasked::config
