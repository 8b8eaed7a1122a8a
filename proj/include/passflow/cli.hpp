#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "passflow/feedback.hpp"
#include "passflow/kalman.hpp"

namespace passflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInputError = 2;
inline constexpr int kExitValidationError = 3;

struct RunConfig {
  std::filesystem::path topology;
  std::filesystem::path turnstile;
  std::filesystem::path events;
  std::filesystem::path reports;
  std::filesystem::path spec;
  std::filesystem::path out = "out";
  std::optional<std::uint64_t> seed;
  long dt = 60;
  // Only the values given on the command line or in the config file; the
  // rest fall back to the scenario spec (twin) or the library defaults.
  std::optional<double> q_boarding;
  std::optional<double> q_onboard;
  std::optional<double> q_alighting;
  std::optional<double> sigma0;
  std::optional<double> negative_tolerance;
  std::optional<double> variance_threshold;
  double capacity = 120.0;
  std::string host = "127.0.0.1";
  int port = 8080;
  double rate = 0.0;  // serve: auto-play rate, 0 starts paused

  filter::NoiseConfig noise(filter::NoiseConfig base = {}) const;
  feedback::Thresholds thresholds() const;
};

int cmd_simulate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_twin(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_validate(const RunConfig& config, std::ostream& out, std::ostream& err);
int cmd_serve(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Parses `passflow <simulate|twin|validate|serve> [flags]` and dispatches.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace passflow::cli
