// Copyright 2026 The dpzv Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end:
//
//   dpzv run <config> [--seed N] [--out DIR] [--load CKPT]
//   dpzv budget [--epsilon E] [--delta D] [--mu M] [--T N --D N --C R]
//   dpzv sweep <config> --axis {epsilon,C,lambda,B} --values v1,v2,... [--seed N] [--out DIR]
//
// Exit status: 0 ok, 1 runtime failure, 2 usage or configuration error.
// Requires CLI11 and yaml-cpp.

#ifndef DPZV_CLI_HPP_
#define DPZV_CLI_HPP_

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpzv/checkpoint.hpp"
#include "dpzv/config.hpp"
#include "dpzv/privacy.hpp"
#include "dpzv/protocol.hpp"

namespace dpzv {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// What one run reports upward to sweeps.
struct RunSummary {
  double sigma_dp = 0.0;
  double final_acc = 0.0;
  std::optional<int64_t> rounds_to_target;
  uint64_t volume = 0;
};

namespace internal {

/// Writes via a temporary file and rename, so readers never see a partial file.
inline void WriteFileAtomic(const std::filesystem::path& path, const std::string& bytes) {
  const auto tmp = path.string() + ".tmp";
  WriteFileBytes(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

template <class Scalar>
RunSummary RunOne(const ExperimentConfig& exp, const LoadedData& data,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::string>& load_path) {
  std::filesystem::create_directories(out_dir);
  Simulation<Scalar> sim(exp.run, data.train, data.eval_ptr());
  if (load_path) sim.LoadModels(DecodeCheckpoint<Scalar>(ReadFileBytes(*load_path)));
  const MetricsTrace trace = sim.Run();

  std::ostringstream metrics;
  trace.WriteCsv(metrics);
  WriteFileAtomic(out_dir / "metrics.csv", metrics.str());
  std::ostringstream ledger;
  sim.server().ledger.WriteCsv(ledger);
  WriteFileAtomic(out_dir / "ledger.csv", ledger.str());
  WriteFileAtomic(out_dir / "checkpoint.bin", sim.EncodeModels());
  ExperimentConfig resolved = exp;
  resolved.seeds.clear();
  WriteFileAtomic(out_dir / "resolved_config.yaml", ResolvedConfigYaml(resolved));

  RunSummary s;
  s.sigma_dp = sim.injected_sigma();
  s.final_acc = trace.FinalAccuracy().value_or(0.0);
  s.rounds_to_target = trace.RoundsToTarget(exp.target_accuracy);
  s.volume = sim.server().ledger.Total();
  return s;
}

/// Runs every configured seed; multiple seeds go to seed_<s>/ subdirectories.
/// Returns the mean over seeds (rounds_to_target only if every seed reached it).
inline RunSummary RunSeeds(const ExperimentConfig& exp, const std::filesystem::path& out_dir,
                           const std::optional<std::string>& load_path) {
  const LoadedData data = LoadData(exp.data, exp.run.devices.size());
  const auto seeds = exp.RunSeeds();
  RunSummary mean;
  int64_t rounds_sum = 0;
  bool all_reached = true;
  double volume_sum = 0.0;
  for (uint64_t seed : seeds) {
    ExperimentConfig one = exp;
    one.run.seed = seed;
    const auto dir = seeds.size() == 1 ? out_dir : out_dir / ("seed_" + std::to_string(seed));
    const RunSummary s = exp.run.scalar_width == 8
                             ? RunOne<double>(one, data, dir, load_path)
                             : RunOne<float>(one, data, dir, load_path);
    mean.sigma_dp = s.sigma_dp;
    mean.final_acc += s.final_acc / static_cast<double>(seeds.size());
    volume_sum += static_cast<double>(s.volume);
    if (s.rounds_to_target) {
      rounds_sum += *s.rounds_to_target;
    } else {
      all_reached = false;
    }
  }
  if (all_reached) rounds_sum /= static_cast<int64_t>(seeds.size());
  if (all_reached) mean.rounds_to_target = rounds_sum;
  mean.volume = static_cast<uint64_t>(std::llround(volume_sum / static_cast<double>(seeds.size())));
  return mean;
}

inline double ParseReal(const std::string& s) {
  if (s == "inf" || s == "+inf" || s == "Infinity") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  DPZV_ENFORCE(used == s.size() && !s.empty(), ErrorCode::kConfiguration,
               "not a number: '" + s + "'");
  return v;
}

inline std::vector<std::string> SplitCommas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline void ApplyOverrides(ExperimentConfig& cfg, const std::optional<uint64_t>& seed,
                           const std::optional<std::string>& out) {
  if (seed) {
    cfg.run.seed = *seed;
    cfg.seeds.clear();
  }
  if (out) cfg.output_dir = *out;
}

inline std::string Sig6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string Sig10(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

inline int CmdBudget(std::optional<double> eps, std::optional<double> delta,
                     std::optional<double> mu, std::optional<int64_t> t,
                     std::optional<int64_t> d, std::optional<double> c, std::ostream& out,
                     std::ostream& err) {
  const int given = eps.has_value() + delta.has_value() + mu.has_value();
  if (given != 2) {
    err << "budget: give exactly two of --epsilon, --delta, --mu\n";
    return kExitUsage;
  }
  const int extras = t.has_value() + d.has_value() + c.has_value();
  if (extras != 0 && extras != 3) {
    err << "budget: --T, --D and --C must be given together\n";
    return kExitUsage;
  }
  try {
    if (!mu) {
      mu = SolveMu(*eps, *delta);
    } else if (!delta) {
      delta = GdpToDelta(*mu, *eps);
    } else {
      eps = SolveEpsilon(*mu, *delta);
    }
    out << "epsilon = " << Sig10(*eps) << "\n";
    out << "delta = " << Sig10(*delta) << "\n";
    out << "mu = " << Sig10(*mu) << "\n";
    if (extras == 3) out << "sigma_dp = " << Sig6(NoiseScale(*c, *t, *d, *mu)) << "\n";
  } catch (const Error& e) {
    err << "budget: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

inline int CmdSweep(ExperimentConfig base, const std::string& axis,
                    const std::string& values_arg, std::ostream& out, std::ostream& err) {
  const auto items = SplitCommas(values_arg);
  if (items.empty()) {
    err << "sweep: empty value list\n";
    return kExitUsage;
  }
  if (axis != "epsilon" && axis != "C" && axis != "lambda" && axis != "B") {
    err << "sweep: unknown axis '" << axis << "' (epsilon | C | lambda | B)\n";
    return kExitUsage;
  }
  std::vector<double> values;
  try {
    for (const auto& v : items) values.push_back(ParseReal(v));
  } catch (const Error& e) {
    err << "sweep: " << e.what() << "\n";
    return kExitUsage;
  }
  const std::filesystem::path root = base.output_dir;
  std::filesystem::create_directories(root);
  const auto summary_path = root / "summary.csv";
  std::string summary = "value,sigma_dp,final_acc,rounds_to_target,V_T\n";
  WriteFileAtomic(summary_path, summary);
  int status = kExitOk;
  for (std::size_t k = 0; k < values.size(); ++k) {
    ExperimentConfig cell = base;
    const double v = values[k];
    try {
      if (axis == "epsilon") {
        cell.run.sigma_dp.reset();
        cell.run.epsilon = v;
      } else if (axis == "C") {
        cell.run.clip_c = v;
      } else if (axis == "lambda") {
        for (auto& d : cell.run.devices) d.lambda = v;
      } else {
        DPZV_ENFORCE(v >= 1 && v == std::floor(v), ErrorCode::kConfiguration,
                     "batch size must be a positive integer");
        cell.run.batch_size = static_cast<std::size_t>(v);
      }
      cell.run.Validate();
      const auto dir = root / ("cell_" + std::to_string(k));
      const RunSummary s = RunSeeds(cell, dir, std::nullopt);
      summary += items[k] + "," + FormatReal(s.sigma_dp) + "," + FormatReal(s.final_acc) +
                 "," + std::to_string(s.rounds_to_target.value_or(-1)) + "," +
                 std::to_string(s.volume) + "\n";
      WriteFileAtomic(summary_path, summary);
      out << axis << "=" << items[k] << " final_acc=" << FormatReal(s.final_acc)
          << " V_T=" << s.volume << "\n";
    } catch (const Error& e) {
      err << "sweep cell " << axis << "=" << items[k] << ": " << e.what() << "\n";
      status = std::max(status, e.code() == ErrorCode::kConfiguration ? kExitUsage
                                                                      : kExitRuntime);
    } catch (const std::exception& e) {
      err << "sweep cell " << axis << "=" << items[k] << ": " << e.what() << "\n";
      status = std::max(status, kExitRuntime);
    }
  }
  return status;
}

}  // namespace internal

/// Runs the CLI on argv; returns the process exit status.
inline int RunCli(int argc, const char* const* argv, std::ostream& out = std::cout,
                  std::ostream& err = std::cerr) {
  CLI::App app{"Differentially private zeroth-order vertical federated learning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> load_path;
  auto* run = app.add_subcommand("run", "train from a config file");
  run->add_option("config", config_path, "YAML config")->required();
  run->add_option("--seed", seed, "master seed (overrides config)");
  run->add_option("--out", out_dir, "output directory (overrides config)");
  run->add_option("--load", load_path, "initial models from a checkpoint");

  std::optional<double> eps, delta, mu, c;
  std::optional<int64_t> t, d;
  auto* budget = app.add_subcommand("budget", "privacy accountant queries");
  budget->add_option("--epsilon", eps, "epsilon");
  budget->add_option("--delta", delta, "delta");
  budget->add_option("--mu", mu, "GDP mu");
  budget->add_option("--T", t, "total rounds");
  budget->add_option("--D", d, "dataset size");
  budget->add_option("--C", c, "clipping threshold");

  std::string sweep_config, axis, values;
  std::optional<uint64_t> sweep_seed;
  std::optional<std::string> sweep_out;
  auto* sweep = app.add_subcommand("sweep", "one run per value of an axis");
  sweep->add_option("config", sweep_config, "YAML config")->required();
  sweep->add_option("--axis", axis, "epsilon | C | lambda | B")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();
  sweep->add_option("--seed", sweep_seed, "master seed (overrides config)");
  sweep->add_option("--out", sweep_out, "output directory (overrides config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  if (*budget) return internal::CmdBudget(eps, delta, mu, t, d, c, out, err);

  ExperimentConfig cfg;
  try {
    cfg = LoadConfigFile(*run ? config_path : sweep_config);
    if (*run) {
      internal::ApplyOverrides(cfg, seed, out_dir);
    } else {
      internal::ApplyOverrides(cfg, sweep_seed, sweep_out);
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return kExitUsage;
  }

  if (*sweep) return internal::CmdSweep(cfg, axis, values, out, err);

  try {
    const RunSummary s = internal::RunSeeds(cfg, cfg.output_dir, load_path);
    out << "final_acc=" << FormatReal(s.final_acc) << " V_T=" << s.volume
        << " rounds_to_target=" << s.rounds_to_target.value_or(-1) << "\n";
  } catch (const Error& e) {
    err << e.what() << "\n";
    return e.code() == ErrorCode::kConfiguration ? kExitUsage : kExitRuntime;
  } catch (const std::exception& e) {
    err << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace dpzv

#endif  // DPZV_CLI_HPP_
