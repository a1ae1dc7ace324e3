#pragma once

#include "skd/metrics.hpp"
#include "skd/model.hpp"
#include "skd/synthdata.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace skd {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Container: "SKD1" | u32 version | u64 header length | JSON header | payload.
// All integers and floats little-endian; arrays stored row-major in header
// order.

inline constexpr std::string_view kContainerMagic = "SKD1";
inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kContainerPrefix = 16;  // magic + version + header length

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
};

struct Container {
  std::string kind;  // "dataset" | "checkpoint" | "sequences"
  Json meta = Json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  bool has_array(const std::string& name) const;
};

std::string encode_container(const Container& c);
// Throws ParseError (bad magic, version, header JSON; with byte offset) or
// IntegrityError (truncated or oversized payload, shape mismatches).
Container decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// JSON forms of configs. Parsers reject unknown keys and type mismatches
// with a ConfigError naming the key, then run the config's own validation.

Json to_json(const GeneratorConfig& c);
Json to_json(const ModelConfig& c);
Json to_json(const JudgeOptions& o);
Json to_json(const IdentifyOptions& o);
GeneratorConfig parse_generator_config(const Json& j, GeneratorConfig base = {});
// `m` may be absent; it is filled in from the data at train time.
ModelConfig parse_model_config(const Json& j, ModelConfig base = {});

struct EvalConfig {
  SamplingProtocol protocol = SamplingProtocol::fix_dynamic_sample_static;
  std::size_t epochs = 300;
  std::uint64_t seed = 0;
  JudgeOptions judge{};
  IdentifyOptions identify{};
  std::string swap_factor;   // factor identified for swaps; empty selects the first static factor
  std::string static_label;  // identity labels for EER; empty selects the first static factor
};

Json to_json(const EvalConfig& c);
EvalConfig parse_eval_config(const Json& j, EvalConfig base = {});

struct RunConfig {
  GeneratorConfig dataset;
  ModelConfig model;
  EvalConfig eval;
};

Json to_json(const RunConfig& c);
// Sections "dataset", "model", "eval"; each optional, unknown keys rejected.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Domain objects <-> containers.

Container dataset_container(const DatasetSplit& data, const GeneratorConfig& config);
DatasetSplit dataset_from_container(const Container& c);
GeneratorConfig generator_from_container(const Container& c);

Container checkpoint_container(const ModelCheckpoint& ckpt);
ModelCheckpoint checkpoint_from_container(const Container& c);

// Decoded sequences written by swap/sample.
Container sequences_container(const Tensor& frames, Json meta);

Json to_json(const SequenceBatch& batch);  // factor table only

}  // namespace skd
