// Copyright 2026 The gradleak Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// gradleak <stage> [--config PATH] [--seed U64] [--jobs N] [--out DIR]

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "gradleak/errors.hpp"
#include "gradleak/pipeline.hpp"

namespace {

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) {
    try {
      std::size_t used = 0;
      const long long v = std::stoll(item, &used);
      if (used != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw gradleak::ConfigError("bad sweep value '" + item + "'");
    }
  }
  if (out.empty()) throw gradleak::ConfigError("empty sweep list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradleak: federated head-tuning leakage lab"};
  app.require_subcommand(0, 1);

  std::string config_path, out_dir, checkpoint, dump_config;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::vector<std::string> sweep;

  app.add_option("--config", config_path, "experiment config (JSON)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  app.add_option("--jobs", jobs, "parallel reconstruction jobs")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--dump-config", dump_config, "write the resolved config to PATH");

  for (const auto& name : gradleak::stage_names()) {
    auto* sub = app.add_subcommand(name, "run the " + name + " stage");
    sub->fallthrough();
    if (name == "detect") {
      sub->add_option("--checkpoint", checkpoint, "checkpoint to scan");
    }
    if (name == "evaluate" || name == "demo") {
      sub->add_option("--sweep", sweep, "sweep: batch-size LIST")->expected(2);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? gradleak::kExitOk : gradleak::kExitConfig;
  }
  if (app.get_subcommands().empty() && dump_config.empty()) {
    std::cerr << app.help();
    return gradleak::kExitConfig;
  }
  const std::string stage =
      app.get_subcommands().empty() ? std::string() : app.get_subcommands().front()->get_name();

  try {
    gradleak::ExperimentConfig config =
        config_path.empty() ? gradleak::ExperimentConfig{} : gradleak::ExperimentConfig::load(config_path);
    if (*seed_opt) config.seed = seed;
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.validate();
    if (!dump_config.empty()) {
      std::ofstream out(dump_config);
      out << config.to_json();
      if (!out) throw gradleak::ConfigError("cannot write " + dump_config);
    }
    if (stage.empty()) return gradleak::kExitOk;

    gradleak::RunOptions options;
    options.jobs = jobs;
    if (!checkpoint.empty()) options.checkpoint = checkpoint;
    if (!sweep.empty()) {
      if (sweep[0] != "batch-size") {
        throw gradleak::ConfigError("only 'batch-size' sweeps are supported, got '" + sweep[0] + "'");
      }
      options.sweep_batch_sizes = parse_list(sweep[1]);
    }
    const gradleak::StageOutcome outcome = gradleak::run_stage(stage, config, options);
    if (stage == "detect") {
      std::cout << (outcome.anomalous ? "anomalous" : "clean") << '\n';
      return outcome.anomalous ? gradleak::kExitAnomalous : gradleak::kExitOk;
    }
    return gradleak::kExitOk;
  } catch (const std::exception& e) {
    std::cerr << gradleak::error_record(stage, e) << '\n';
    return gradleak::exit_code_for(e);
  }
}
