#include "capslstm/config.hpp"

#include <fstream>
#include <iterator>
#include <set>

#include "json.hpp"

namespace capslstm {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& path, std::initializer_list<const char*> allowed) {
  const std::set<std::string> keys(allowed.begin(), allowed.end());
  for (const auto& [key, value] : obj.items()) {
    if (!keys.count(key)) throw ConfigError("unknown key '" + (path.empty() ? key : path + "." + key) + "'");
  }
}

const json& object_at(const json& parent, const char* key, const std::string& path) {
  const json& v = parent.at(key);
  if (!v.is_object()) throw ConfigError("'" + path + "' must be an object");
  return v;
}

std::size_t read_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 0) {
    throw ConfigError("'" + path + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double read_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError("'" + path + "' must be a number");
  return v.get<double>();
}

std::string read_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError("'" + path + "' must be a string");
  return v.get<std::string>();
}

ModelConfig read_architecture(const json& a, std::string& preset) {
  reject_unknown(a, "architecture",
                 {"preset", "frames", "height", "width", "channels", "convlstm_filters", "convlstm_kernel",
                  "conv_filters", "conv_kernel", "conv_stride", "primary_filters", "primary_kernel",
                  "primary_stride", "capsule_dim", "secondary_capsules", "secondary_dim", "routing_iterations",
                  "lstm_units", "dense_units"});
  preset = a.contains("preset") ? read_string(a["preset"], "architecture.preset") : "paper-default";
  if (preset != "custom") {
    for (const auto& [key, value] : a.items()) {
      if (key != "preset") {
        throw ConfigError("'architecture." + key + "' is only allowed with preset \"custom\"");
      }
    }
    return architecture_preset(preset);
  }
  ModelConfig m = ModelConfig::paper_default();
  const std::pair<const char*, std::size_t*> fields[] = {
      {"frames", &m.frames},
      {"height", &m.height},
      {"width", &m.width},
      {"channels", &m.channels},
      {"convlstm_filters", &m.convlstm_filters},
      {"convlstm_kernel", &m.convlstm_kernel},
      {"conv_filters", &m.conv_filters},
      {"conv_kernel", &m.conv_kernel},
      {"conv_stride", &m.conv_stride},
      {"primary_filters", &m.primary_filters},
      {"primary_kernel", &m.primary_kernel},
      {"primary_stride", &m.primary_stride},
      {"capsule_dim", &m.capsule_dim},
      {"secondary_capsules", &m.secondary_capsules},
      {"secondary_dim", &m.secondary_dim},
      {"routing_iterations", &m.routing_iterations},
      {"lstm_units", &m.lstm_units},
  };
  for (const auto& [key, target] : fields) {
    if (a.contains(key)) *target = read_count(a[key], std::string("architecture.") + key);
  }
  if (a.contains("dense_units")) {
    if (!a["dense_units"].is_array()) throw ConfigError("'architecture.dense_units' must be an array");
    m.dense_units.clear();
    for (std::size_t i = 0; i < a["dense_units"].size(); ++i) {
      m.dense_units.push_back(read_count(a["dense_units"][i], "architecture.dense_units[" + std::to_string(i) + "]"));
    }
  }
  return m;
}

}  // namespace

ModelConfig architecture_preset(std::string_view name) {
  if (name == "paper-default") return ModelConfig::paper_default();
  if (name == "scaled-down") return ModelConfig::scaled_down();
  throw ConfigError("'architecture.preset' must be \"paper-default\", \"scaled-down\" or \"custom\", got \"" +
                    std::string(name) + "\"");
}

RunConfig parse_run_config(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON (byte " + std::to_string(e.byte) + ")");
  }
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc, "",
                 {"dataset_root", "seed", "architecture", "batch_size", "epochs", "optimizer", "split",
                  "weights_path", "output_dir", "workers"});
  RunConfig rc;
  if (doc.contains("dataset_root")) rc.dataset_root = read_string(doc["dataset_root"], "dataset_root");
  if (doc.contains("seed")) {
    if (!doc["seed"].is_number_unsigned()) throw ConfigError("'seed' must be a non-negative integer");
    rc.seed = doc["seed"].get<std::uint64_t>();
  }
  if (doc.contains("architecture")) {
    rc.architecture = read_architecture(object_at(doc, "architecture", "architecture"), rc.preset);
  }
  if (doc.contains("batch_size")) rc.batch_size = read_count(doc["batch_size"], "batch_size");
  if (doc.contains("epochs")) {
    const json& e = doc["epochs"];
    if (e.is_string()) {
      const std::string name = e.get<std::string>();
      if (name == "full") {
        rc.epochs = kFullEpochs;
      } else if (name == "short") {
        rc.epochs = kShortEpochs;
      } else {
        throw ConfigError("'epochs' preset must be \"full\" or \"short\"");
      }
    } else {
      rc.epochs = read_count(e, "epochs");
    }
  }
  if (doc.contains("optimizer")) {
    const json& o = object_at(doc, "optimizer", "optimizer");
    reject_unknown(o, "optimizer", {"kind", "learning_rate", "beta1", "beta2", "epsilon"});
    if (o.contains("kind")) {
      const std::string kind = read_string(o["kind"], "optimizer.kind");
      if (kind == "adam") {
        rc.optimizer.kind = OptimizerKind::Adam;
      } else if (kind == "sgd") {
        rc.optimizer.kind = OptimizerKind::Sgd;
      } else {
        throw ConfigError("'optimizer.kind' must be \"adam\" or \"sgd\"");
      }
    }
    if (o.contains("learning_rate")) rc.optimizer.learning_rate = read_number(o["learning_rate"], "optimizer.learning_rate");
    if (o.contains("beta1")) rc.optimizer.beta1 = read_number(o["beta1"], "optimizer.beta1");
    if (o.contains("beta2")) rc.optimizer.beta2 = read_number(o["beta2"], "optimizer.beta2");
    if (o.contains("epsilon")) rc.optimizer.epsilon = read_number(o["epsilon"], "optimizer.epsilon");
    if (rc.optimizer.learning_rate < 0) throw ConfigError("'optimizer.learning_rate' must be non-negative");
  }
  if (doc.contains("split")) {
    const json& s = object_at(doc, "split", "split");
    reject_unknown(s, "split", {"test", "validation"});
    if (s.contains("test")) rc.split.test = read_number(s["test"], "split.test");
    if (s.contains("validation")) rc.split.validation = read_number(s["validation"], "split.validation");
    if (!(rc.split.test > 0 && rc.split.test < 1)) throw ConfigError("'split.test' must lie in (0,1)");
    if (!(rc.split.validation > 0 && rc.split.validation < 1)) throw ConfigError("'split.validation' must lie in (0,1)");
  }
  if (doc.contains("weights_path")) rc.weights_path = read_string(doc["weights_path"], "weights_path");
  if (doc.contains("output_dir")) rc.output_dir = read_string(doc["output_dir"], "output_dir");
  if (doc.contains("workers")) rc.workers = read_count(doc["workers"], "workers");
  if (rc.batch_size == 0) throw ConfigError("'batch_size' must be positive");
  if (rc.epochs == 0) throw ConfigError("'epochs' must be positive");
  if (rc.workers == 0) throw ConfigError("'workers' must be positive");
  rc.architecture.seed = rc.seed;
  try {
    rc.architecture.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("architecture invalid: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_run_config(text);
}

}  // namespace capslstm
