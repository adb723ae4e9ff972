#pragma once

// Stage-by-stage experiment pipeline driven by a key/value config. Every
// stage reads its inputs from and writes its outputs to the work directory.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xvf/config.hpp"
#include "xvf/embedder.hpp"

namespace xvf {

struct PipelineConfig {
  KeyValueConfig values;
  std::filesystem::path workdir = "work";
  /// "i-vector" or an embedder preset name.
  std::string system = "baseline";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  ModelScale scale = ModelScale::kDesk;

  /// Validates keys and the system name. Overrides take precedence over the file.
  static PipelineConfig from(const KeyValueConfig& values,
                             std::optional<std::filesystem::path> workdir = std::nullopt,
                             std::optional<std::uint64_t> seed = std::nullopt,
                             std::optional<std::size_t> threads = std::nullopt);

  bool uses_ubm() const;
  bool uses_ivectors() const;
  bool uses_embedder() const { return system != "i-vector"; }
  std::filesystem::path path(std::string_view file) const { return workdir / std::string(file); }
};

/// Stage names in pipeline order, excluding run-all.
const std::vector<std::string>& pipeline_stages();

/// Stages `run-all` executes for this config.
std::vector<std::string> planned_stages(const PipelineConfig& config);

/// Runs one stage (or run-all). Progress goes to `log`; `evaluate` also
/// prints the metrics report to `out`.
void run_stage(std::string_view stage, const PipelineConfig& config, std::ostream& out, std::ostream& log);

}  // namespace xvf
