#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "capslstm/data.hpp"
#include "capslstm/model.hpp"
#include "capslstm/training.hpp"

namespace capslstm {

// One UTF-8 JSON document drives a run. Unknown keys are rejected with their
// key path. Defaults: batch 4, 30 epochs, 8:2 test split then 8:2 validation
// split, 5 x 128 x 128 x 3 clips.
//
// {
//   "dataset_root": "data/",
//   "seed": 42,
//   "architecture": {"preset": "paper-default" | "scaled-down" | "custom", ...dims for custom},
//   "batch_size": 4,
//   "epochs": 30 | "full" (30) | "short" (20),
//   "optimizer": {"kind": "adam" | "sgd", "learning_rate": 1e-4, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-7},
//   "split": {"test": 0.2, "validation": 0.2},
//   "weights_path": "out/weights.capw",
//   "output_dir": "out",
//   "workers": 1
// }
struct RunConfig {
  std::filesystem::path dataset_root;
  std::uint64_t seed = 42;
  std::string preset = "paper-default";
  ModelConfig architecture;
  std::size_t batch_size = 4;
  std::size_t epochs = 30;
  OptimizerConfig optimizer;
  SplitRatios split;
  std::filesystem::path weights_path;  // empty: <output_dir>/weights.capw
  std::filesystem::path output_dir = "out";
  std::size_t workers = 1;

  std::filesystem::path resolved_weights_path() const {
    return weights_path.empty() ? output_dir / "weights.capw" : weights_path;
  }
};

inline constexpr std::size_t kFullEpochs = 30;
inline constexpr std::size_t kShortEpochs = 20;

ModelConfig architecture_preset(std::string_view name);

RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace capslstm
