// xvecforge: run speaker-embedding experiment stages from a config file.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "xvf/error.hpp"
#include "xvf/pipeline.hpp"

namespace {

std::optional<std::size_t> threads_from_env() {
  const char* text = std::getenv("XVECFORGE_THREADS");
  if (text == nullptr || *text == '\0') return std::nullopt;
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(text, &pos);
    if (pos == std::string(text).size() && n >= 1) return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
  }
  throw xvf::ConfigError(std::string("XVECFORGE_THREADS must be a positive integer, got '") + text + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Speaker embedding experiment pipeline"};
  app.name("xvecforge");

  std::vector<std::string> stages = xvf::pipeline_stages();
  stages.push_back("run-all");
  std::string stage;
  std::string config_path;
  std::optional<std::string> workdir;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
  app.add_option("stage", stage, "Stage to run")->required()->check(CLI::IsMember(stages));
  app.add_option("-c,--config", config_path, "Key/value config file")->required()->check(CLI::ExistingFile);
  app.add_option("-w,--workdir", workdir, "Work directory (overrides the config)");
  app.add_option("-s,--seed", seed, "Random seed (overrides the config)");
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");
  app.footer("Stages: gen-corpus features train-ubm bw-stats train-tv extract-ivec train-embedder\n"
             "        extract-xvec train-backend score evaluate run-all\n"
             "XVECFORGE_THREADS overrides the config's thread count.");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto values = xvf::KeyValueConfig::load(config_path);
    const auto config = xvf::PipelineConfig::from(
        values, workdir ? std::optional<std::filesystem::path>(*workdir) : std::nullopt, seed, threads_from_env());
    std::ostream null_stream(nullptr);
    if (quiet) xvf::set_warnings_enabled(false);
    xvf::run_stage(stage, config, std::cout, quiet ? null_stream : std::clog);
  } catch (const std::exception& e) {
    std::cerr << "xvecforge: error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
