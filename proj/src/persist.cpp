#include "skd/persist.hpp"

#include "skd/error.hpp"

#include <bit>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace skd {

const NamedArray& Container::array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return a;
  }
  throw IntegrityError("container has no array '" + name + "'");
}

bool Container::has_array(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return true;
  }
  return false;
}

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_uint(std::string_view bytes, std::size_t offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= std::uint64_t(static_cast<unsigned char>(bytes[offset + std::size_t(i)])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_container(const Container& c) {
  Json header = Json::object();
  header["kind"] = c.kind;
  header["meta"] = c.meta;
  Json arrays = Json::array();
  std::uint64_t payload = 0;
  for (const auto& a : c.arrays) {
    if (shape_product(a.shape) != a.values.size()) {
      throw ShapeError("array '" + a.name + "' holds " + std::to_string(a.values.size()) +
                       " values but its shape declares " + std::to_string(shape_product(a.shape)));
    }
    arrays.push_back({{"name", a.name}, {"shape", a.shape}});
    payload += 8 * a.values.size();
  }
  header["arrays"] = arrays;
  header["payload_bytes"] = payload;
  const std::string text = header.dump();

  std::string out;
  out.reserve(kContainerPrefix + text.size() + payload);
  out.append(kContainerMagic);
  put_u32(out, kContainerVersion);
  put_u64(out, text.size());
  out.append(text);
  for (const auto& a : c.arrays) {
    for (double v : a.values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

Container decode_container(std::string_view bytes) {
  for (std::size_t i = 0; i < kContainerMagic.size(); ++i) {
    if (i >= bytes.size() || bytes[i] != kContainerMagic[i]) throw ParseError(i, "bad magic, not an SKD1 container");
  }
  if (bytes.size() < kContainerPrefix) throw IntegrityError("container truncated inside its prefix");
  const auto version = std::uint32_t(get_uint(bytes, 4, 4));
  if (version != kContainerVersion) {
    throw ParseError(4, "unsupported container version " + std::to_string(version) + " (expected " +
                            std::to_string(kContainerVersion) + ")");
  }
  const std::uint64_t header_len = get_uint(bytes, 8, 8);
  if (header_len > bytes.size() - kContainerPrefix) throw IntegrityError("container truncated inside its header");

  Json header;
  try {
    header = Json::parse(bytes.substr(kContainerPrefix, std::size_t(header_len)));
  } catch (const Json::parse_error& e) {
    const std::size_t at = e.byte > 0 ? e.byte - 1 : 0;
    throw ParseError(kContainerPrefix + at, std::string("malformed header: ") + e.what());
  }
  auto bad = [&](const std::string& what) { return ParseError(kContainerPrefix, "malformed header: " + what); };
  if (!header.is_object()) throw bad("not an object");
  if (!header.contains("kind") || !header["kind"].is_string()) throw bad("missing kind");
  if (!header.contains("arrays") || !header["arrays"].is_array()) throw bad("missing arrays");
  if (!header.contains("payload_bytes") || !header["payload_bytes"].is_number_unsigned()) {
    throw bad("missing payload_bytes");
  }

  Container c;
  c.kind = header["kind"].get<std::string>();
  c.meta = header.contains("meta") ? header["meta"] : Json::object();
  std::uint64_t declared = 0;
  for (const auto& a : header["arrays"]) {
    if (!a.is_object() || !a.contains("name") || !a["name"].is_string() || !a.contains("shape") ||
        !a["shape"].is_array()) {
      throw bad("array entry needs name and shape");
    }
    NamedArray arr;
    arr.name = a["name"].get<std::string>();
    for (const auto& d : a["shape"]) {
      if (!d.is_number_unsigned()) throw bad("array '" + arr.name + "' has a non-integer extent");
      arr.shape.push_back(d.get<std::size_t>());
    }
    declared += 8 * shape_product(arr.shape);
    c.arrays.push_back(std::move(arr));
  }
  const auto payload_bytes = header["payload_bytes"].get<std::uint64_t>();
  if (declared != payload_bytes) {
    throw IntegrityError("array shapes declare " + std::to_string(declared) + " payload bytes, header says " +
                         std::to_string(payload_bytes));
  }
  const std::size_t start = kContainerPrefix + std::size_t(header_len);
  const std::size_t available = bytes.size() - start;
  if (available < payload_bytes) {
    throw IntegrityError("payload truncated: " + std::to_string(available) + " of " +
                         std::to_string(payload_bytes) + " bytes present");
  }
  if (available > payload_bytes) throw IntegrityError("unexpected bytes after the payload");
  std::size_t pos = start;
  for (auto& arr : c.arrays) {
    arr.values.resize(shape_product(arr.shape));
    for (auto& v : arr.values) {
      v = std::bit_cast<double>(get_uint(bytes, pos, 8));
      pos += 8;
    }
  }
  return c;
}

void write_container(const std::filesystem::path& path, const Container& c) {
  const std::string bytes = encode_container(c);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_container(buf.str());
}

// ---------------------------------------------------------------------------
// Config JSON

namespace {

std::string judge_features_name(JudgeFeatures f) { return f == JudgeFeatures::flat ? "flat" : "time_mean"; }

JudgeFeatures parse_judge_features(const std::string& s, const std::string& key) {
  if (s == "flat") return JudgeFeatures::flat;
  if (s == "time_mean") return JudgeFeatures::time_mean;
  throw ConfigError(key, "unknown feature kind '" + s + "' (flat, time_mean)");
}

// Dispatch table for a JSON object section; rejects unknown keys.
class Fields {
 public:
  explicit Fields(std::string prefix) : prefix_(std::move(prefix)) {}

  Fields& count(const std::string& key, std::size_t& out) {
    handlers_[key] = [this, key, &out](const Json& v) {
      if (!v.is_number_unsigned()) throw ConfigError(prefix_ + key, "expected a non-negative integer");
      out = v.get<std::size_t>();
    };
    return *this;
  }
  Fields& seed(const std::string& key, std::uint64_t& out) {
    handlers_[key] = [this, key, &out](const Json& v) {
      if (!v.is_number_unsigned()) throw ConfigError(prefix_ + key, "expected a non-negative integer");
      out = v.get<std::uint64_t>();
    };
    return *this;
  }
  Fields& number(const std::string& key, double& out) {
    handlers_[key] = [this, key, &out](const Json& v) {
      if (!v.is_number()) throw ConfigError(prefix_ + key, "expected a number");
      out = v.get<double>();
    };
    return *this;
  }
  Fields& flag(const std::string& key, bool& out) {
    handlers_[key] = [this, key, &out](const Json& v) {
      if (!v.is_boolean()) throw ConfigError(prefix_ + key, "expected true or false");
      out = v.get<bool>();
    };
    return *this;
  }
  Fields& text(const std::string& key, std::function<void(const std::string&)> set) {
    handlers_[key] = [this, key, set](const Json& v) {
      if (!v.is_string()) throw ConfigError(prefix_ + key, "expected a string");
      try {
        set(v.get<std::string>());
      } catch (const ConfigError& e) {
        throw ConfigError(prefix_ + key, e.detail());
      }
    };
    return *this;
  }
  Fields& custom(const std::string& key, std::function<void(const Json&)> set) {
    handlers_[key] = std::move(set);
    return *this;
  }

  void apply(const Json& j) const {
    if (!j.is_object()) throw ConfigError(prefix_.empty() ? "" : prefix_.substr(0, prefix_.size() - 1),
                                          "expected a JSON object");
    for (const auto& [key, value] : j.items()) {
      auto it = handlers_.find(key);
      if (it == handlers_.end()) throw ConfigError(prefix_ + key, "unknown key");
      it->second(value);
    }
  }

  const std::string& prefix() const noexcept { return prefix_; }

 private:
  std::string prefix_;
  std::map<std::string, std::function<void(const Json&)>> handlers_;
};

// Re-throws a validation error with the section prefix on its key.
template <typename Fn>
void validated(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    if (e.key().rfind(prefix, 0) == 0) throw;
    throw ConfigError(prefix + e.key(), e.detail());
  }
}

}  // namespace

Json to_json(const GeneratorConfig& c) {
  return Json{{"dataset", c.dataset},
              {"t", c.t},
              {"noise", c.noise},
              {"train_count", c.train_count},
              {"test_count", c.test_count},
              {"seed", c.seed},
              {"grid", c.grid},
              {"colors", c.colors},
              {"sizes", c.sizes},
              {"motions", c.motions},
              {"holdout_combinations", c.holdout_combinations},
              {"speakers", c.speakers},
              {"contents", c.contents},
              {"static_dim", c.static_dim},
              {"obs_dim", c.obs_dim},
              {"jitter", c.jitter},
              {"base_frequency", c.base_frequency}};
}

GeneratorConfig parse_generator_config(const Json& j, GeneratorConfig c) {
  Fields f("dataset.");
  f.text("dataset", [&](const std::string& s) { c.dataset = s; })
      .count("t", c.t)
      .number("noise", c.noise)
      .count("train_count", c.train_count)
      .count("test_count", c.test_count)
      .seed("seed", c.seed)
      .count("grid", c.grid)
      .count("colors", c.colors)
      .count("sizes", c.sizes)
      .count("motions", c.motions)
      .flag("holdout_combinations", c.holdout_combinations)
      .count("speakers", c.speakers)
      .count("contents", c.contents)
      .count("static_dim", c.static_dim)
      .count("obs_dim", c.obs_dim)
      .number("jitter", c.jitter)
      .number("base_frequency", c.base_frequency);
  f.apply(j);
  validated(f.prefix(), [&] { c.validate(); });
  return c;
}

Json to_json(const ModelConfig& c) {
  return Json{{"m", c.m},
              {"k", c.k},
              {"hidden", c.hidden},
              {"nonlinearity", to_string(c.nonlinearity)},
              {"output_range", to_string(c.output_range)},
              {"k_s", c.spectral.k_s},
              {"epsilon", c.spectral.epsilon},
              {"dynamic_mode", to_string(c.spectral.mode)},
              {"delta", c.spectral.delta},
              {"static_selection", to_string(c.spectral.selection)},
              {"lambda_rec", c.lambda_rec},
              {"lambda_pred", c.lambda_pred},
              {"lambda_eig", c.lambda_eig},
              {"noise_scale", c.noise_scale},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed}};
}

ModelConfig parse_model_config(const Json& j, ModelConfig c) {
  Fields f("model.");
  f.count("m", c.m)
      .count("k", c.k)
      .custom("hidden",
              [&](const Json& v) {
                if (!v.is_array()) throw ConfigError("model.hidden", "expected an array of layer widths");
                c.hidden.clear();
                for (const auto& w : v) {
                  if (!w.is_number_unsigned()) throw ConfigError("model.hidden", "layer widths must be integers");
                  c.hidden.push_back(w.get<std::size_t>());
                }
              })
      .text("nonlinearity", [&](const std::string& s) { c.nonlinearity = parse_nonlinearity(s); })
      .text("output_range", [&](const std::string& s) { c.output_range = parse_value_range(s); })
      .count("k_s", c.spectral.k_s)
      .number("epsilon", c.spectral.epsilon)
      .text("dynamic_mode", [&](const std::string& s) { c.spectral.mode = parse_dynamic_mode(s); })
      .number("delta", c.spectral.delta)
      .text("static_selection", [&](const std::string& s) { c.spectral.selection = parse_static_selection(s); })
      .number("lambda_rec", c.lambda_rec)
      .number("lambda_pred", c.lambda_pred)
      .number("lambda_eig", c.lambda_eig)
      .number("noise_scale", c.noise_scale)
      .number("lr", c.lr)
      .count("epochs", c.epochs)
      .count("batch_size", c.batch_size)
      .seed("seed", c.seed);
  f.apply(j);
  validated(f.prefix(), [&] {
    ModelConfig probe = c;
    if (probe.m == 0) probe.m = 1;  // filled from the data later
    probe.validate();
  });
  return c;
}

Json to_json(const JudgeOptions& o) {
  return Json{{"static_features", judge_features_name(o.static_features)},
              {"dynamic_features", judge_features_name(o.dynamic_features)},
              {"iterations", o.iterations},
              {"static_l2", o.static_l2},
              {"dynamic_l2", o.dynamic_l2},
              {"lr", o.lr},
              {"standardize", o.standardize}};
}

Json to_json(const IdentifyOptions& o) {
  return Json{{"retention_floor", o.retention_floor},
              {"min_drop", o.min_drop},
              {"power_set", o.power_set},
              {"power_set_cap", o.power_set_cap},
              {"seed", o.seed}};
}

Json to_json(const EvalConfig& c) {
  return Json{{"protocol", to_string(c.protocol)},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"judge", to_json(c.judge)},
              {"identify", to_json(c.identify)},
              {"swap_factor", c.swap_factor},
              {"static_label", c.static_label}};
}

EvalConfig parse_eval_config(const Json& j, EvalConfig c) {
  Fields f("eval.");
  f.text("protocol", [&](const std::string& s) { c.protocol = parse_protocol(s); })
      .count("epochs", c.epochs)
      .seed("seed", c.seed)
      .text("swap_factor", [&](const std::string& s) { c.swap_factor = s; })
      .text("static_label", [&](const std::string& s) { c.static_label = s; })
      .custom("judge",
              [&](const Json& v) {
                Fields g("eval.judge.");
                g.text("static_features",
                       [&](const std::string& s) { c.judge.static_features = parse_judge_features(s, ""); })
                    .text("dynamic_features",
                          [&](const std::string& s) { c.judge.dynamic_features = parse_judge_features(s, ""); })
                    .count("iterations", c.judge.iterations)
                    .number("lr", c.judge.lr)
                    .number("static_l2", c.judge.static_l2)
                    .number("dynamic_l2", c.judge.dynamic_l2)
                    .flag("standardize", c.judge.standardize);
                g.apply(v);
              })
      .custom("identify", [&](const Json& v) {
        Fields g("eval.identify.");
        g.number("retention_floor", c.identify.retention_floor)
            .number("min_drop", c.identify.min_drop)
            .flag("power_set", c.identify.power_set)
            .count("power_set_cap", c.identify.power_set_cap)
            .seed("seed", c.identify.seed);
        g.apply(v);
      });
  f.apply(j);
  if (c.epochs < 1) throw ConfigError("eval.epochs", "need at least one sampling epoch");
  if (c.judge.iterations < 1) throw ConfigError("eval.judge.iterations", "must be at least 1");
  if (!(c.judge.lr > 0.0)) throw ConfigError("eval.judge.lr", "must be positive");
  if (!(c.judge.static_l2 >= 0.0)) throw ConfigError("eval.judge.static_l2", "must be non-negative");
  if (!(c.judge.dynamic_l2 >= 0.0)) throw ConfigError("eval.judge.dynamic_l2", "must be non-negative");
  if (!(c.identify.retention_floor >= 0.0 && c.identify.retention_floor <= 1.0)) {
    throw ConfigError("eval.identify.retention_floor", "must lie in [0, 1]");
  }
  if (!(c.identify.min_drop >= 0.0 && c.identify.min_drop <= 1.0)) {
    throw ConfigError("eval.identify.min_drop", "must lie in [0, 1]");
  }
  return c;
}

Json to_json(const RunConfig& c) {
  return Json{{"dataset", to_json(c.dataset)}, {"model", to_json(c.model)}, {"eval", to_json(c.eval)}};
}

RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ConfigError("", "run configuration must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key != "dataset" && key != "model" && key != "eval") throw ConfigError(key, "unknown key");
  }
  if (j.contains("dataset")) {
    c.dataset = parse_generator_config(j["dataset"]);
  } else {
    c.dataset.validate();
  }
  if (j.contains("model")) c.model = parse_model_config(j["model"]);
  if (j.contains("eval")) c.eval = parse_eval_config(j["eval"]);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config '" + path.string() + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", "config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Domain objects

namespace {

NamedArray tensor_array(const std::string& name, const Tensor& t) {
  return {name, t.shape(), std::vector<double>(t.values().begin(), t.values().end())};
}

NamedArray matrix_array(const std::string& name, const Matrix& m) {
  return {name, {std::size_t(m.rows()), std::size_t(m.cols())}, std::vector<double>(m.data(), m.data() + m.size())};
}

Matrix array_matrix(const NamedArray& a) {
  if (a.shape.size() != 2) throw IntegrityError("array '" + a.name + "' must be rank 2");
  Matrix m(Index(a.shape[0]), Index(a.shape[1]));
  std::copy(a.values.begin(), a.values.end(), m.data());
  return m;
}

NamedArray labels_array(const std::string& name, const SequenceBatch& b) {
  NamedArray a{name, {b.labels.size(), b.samples()}, {}};
  for (const auto& row : b.labels) {
    for (int v : row) a.values.push_back(double(v));
  }
  return a;
}

SequenceBatch batch_from(const Container& c, const std::string& prefix, const std::vector<Factor>& factors,
                         ValueRange range) {
  SequenceBatch b;
  const auto& frames = c.array(prefix + "_frames");
  if (frames.shape.size() != 3) throw IntegrityError(prefix + "_frames must be rank 3");
  try {
    b.frames = Tensor(frames.shape, frames.values);
  } catch (const NumericError& e) {
    throw IntegrityError(prefix + "_frames: " + e.what());
  }
  b.factors = factors;
  b.range = range;
  const auto& labels = c.array(prefix + "_labels");
  if (labels.shape.size() != 2 || labels.shape[0] != factors.size() || labels.shape[1] != b.samples()) {
    throw IntegrityError(prefix + "_labels shape does not match the factor table");
  }
  b.labels.assign(factors.size(), std::vector<int>(b.samples()));
  for (std::size_t f = 0; f < factors.size(); ++f) {
    for (std::size_t i = 0; i < b.samples(); ++i) b.labels[f][i] = int(labels.values[f * b.samples() + i]);
  }
  b.validate();
  return b;
}

}  // namespace

Json to_json(const SequenceBatch& batch) {
  Json factors = Json::array();
  for (const auto& f : batch.factors) {
    factors.push_back({{"name", f.name},
                       {"arity", f.arity},
                       {"kind", f.kind == FactorKind::static_factor ? "static" : "dynamic"}});
  }
  return factors;
}

Container dataset_container(const DatasetSplit& data, const GeneratorConfig& config) {
  Container c;
  c.kind = "dataset";
  c.meta = Json{{"generator", to_json(config)}, {"factors", to_json(data.train)},
                {"range", to_string(data.train.range)}};
  c.arrays = {tensor_array("train_frames", data.train.frames), labels_array("train_labels", data.train),
              tensor_array("test_frames", data.test.frames), labels_array("test_labels", data.test)};
  return c;
}

DatasetSplit dataset_from_container(const Container& c) {
  if (c.kind != "dataset") throw IntegrityError("expected a dataset container, found '" + c.kind + "'");
  std::vector<Factor> factors;
  try {
    for (const auto& f : c.meta.at("factors")) {
      factors.push_back({f.at("name").get<std::string>(), f.at("arity").get<std::size_t>(),
                         f.at("kind").get<std::string>() == "static" ? FactorKind::static_factor
                                                                     : FactorKind::dynamic_factor});
    }
    const ValueRange range = parse_value_range(c.meta.at("range").get<std::string>());
    return {batch_from(c, "train", factors, range), batch_from(c, "test", factors, range)};
  } catch (const Json::exception& e) {
    throw IntegrityError(std::string("dataset metadata: ") + e.what());
  }
}

GeneratorConfig generator_from_container(const Container& c) {
  if (!c.meta.contains("generator")) throw IntegrityError("dataset container lacks its generator config");
  return parse_generator_config(c.meta["generator"]);
}

Container checkpoint_container(const ModelCheckpoint& ckpt) {
  Container c;
  c.kind = "checkpoint";
  Json history = Json::array();
  for (const auto& r : ckpt.history) {
    history.push_back({{"epoch", r.epoch},
                       {"total", r.loss.total},
                       {"rec", r.loss.rec},
                       {"pred", r.loss.pred},
                       {"stat", r.loss.stat},
                       {"dyn", r.loss.dyn}});
  }
  Json spectrum = Json::array();
  for (const auto& v : ckpt.last_spectrum) spectrum.push_back({v.real(), v.imag()});
  c.meta = Json{{"model", to_json(ckpt.config)},
                {"epochs_completed", ckpt.epochs_completed},
                {"adam_step", ckpt.params.adam.step},
                {"history", history},
                {"last_spectrum", spectrum}};
  for (std::size_t i = 0; i < ckpt.params.encoder.size(); ++i) {
    c.arrays.push_back(matrix_array("encoder." + std::to_string(i) + ".weight", ckpt.params.encoder[i].weight));
    c.arrays.push_back(matrix_array("encoder." + std::to_string(i) + ".bias", ckpt.params.encoder[i].bias));
  }
  for (std::size_t i = 0; i < ckpt.params.decoder.size(); ++i) {
    c.arrays.push_back(matrix_array("decoder." + std::to_string(i) + ".weight", ckpt.params.decoder[i].weight));
    c.arrays.push_back(matrix_array("decoder." + std::to_string(i) + ".bias", ckpt.params.decoder[i].bias));
  }
  for (std::size_t j = 0; j < ckpt.params.adam.first.size(); ++j) {
    c.arrays.push_back(matrix_array("adam.first." + std::to_string(j), ckpt.params.adam.first[j]));
    c.arrays.push_back(matrix_array("adam.second." + std::to_string(j), ckpt.params.adam.second[j]));
  }
  return c;
}

ModelCheckpoint checkpoint_from_container(const Container& c) {
  if (c.kind != "checkpoint") throw IntegrityError("expected a checkpoint container, found '" + c.kind + "'");
  ModelCheckpoint ckpt;
  try {
    ckpt.config = parse_model_config(c.meta.at("model"));
    ckpt.epochs_completed = c.meta.at("epochs_completed").get<std::size_t>();
    ckpt.params.adam.step = c.meta.at("adam_step").get<std::uint64_t>();
    for (const auto& r : c.meta.at("history")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<std::size_t>();
      e.loss = {r.at("total").get<double>(), r.at("rec").get<double>(), r.at("pred").get<double>(),
                r.at("stat").get<double>(), r.at("dyn").get<double>()};
      ckpt.history.push_back(e);
    }
    for (const auto& v : c.meta.at("last_spectrum")) {
      ckpt.last_spectrum.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
    }
  } catch (const Json::exception& e) {
    throw IntegrityError(std::string("checkpoint metadata: ") + e.what());
  }
  const std::size_t layers = ckpt.config.hidden.size() + 1;
  for (std::size_t i = 0; i < layers; ++i) {
    ckpt.params.encoder.push_back({array_matrix(c.array("encoder." + std::to_string(i) + ".weight")),
                                   array_matrix(c.array("encoder." + std::to_string(i) + ".bias"))});
  }
  for (std::size_t i = 0; i < layers; ++i) {
    ckpt.params.decoder.push_back({array_matrix(c.array("decoder." + std::to_string(i) + ".weight")),
                                   array_matrix(c.array("decoder." + std::to_string(i) + ".bias"))});
  }
  for (std::size_t j = 0; c.has_array("adam.first." + std::to_string(j)); ++j) {
    ckpt.params.adam.first.push_back(array_matrix(c.array("adam.first." + std::to_string(j))));
    ckpt.params.adam.second.push_back(array_matrix(c.array("adam.second." + std::to_string(j))));
  }
  try {
    Model check(ckpt.config, ckpt.params);  // validates shapes
  } catch (const Error& e) {
    throw IntegrityError(std::string("checkpoint parameters: ") + e.what());
  }
  return ckpt;
}

Container sequences_container(const Tensor& frames, Json meta) {
  Container c;
  c.kind = "sequences";
  c.meta = std::move(meta);
  c.arrays = {tensor_array("frames", frames)};
  return c;
}

}  // namespace skd
