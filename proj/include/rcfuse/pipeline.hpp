#pragma once

#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <vector>

#include "rcfuse/serialize.hpp"

namespace rcfuse {

/// Process exit statuses of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 2,
  kExitParse = 3,
  kExitValidation = 4,
  kExitInfeasible = 5,
  kExitIo = 6,
};

/// Maps an exception raised by any stage to an exit status and a short category name.
std::pair<int, std::string> classify_error(const std::exception& e);

/// "98304", "96K", "1.5M" (K = 1024, M = 1024 * 1024).
Bytes parse_bytes(const std::string& text);
/// "50K..300K:25K" (inclusive range) or a comma separated list.
std::vector<Bytes> parse_sizes(const std::string& text);

struct RunConfig {
  std::string model_path;
  std::optional<std::string> arch_path;
  std::optional<std::string> baseline_path;
  std::optional<std::string> gamma_path;
  // Overrides the model's input resolution.
  std::optional<TensorShape> input;
  Bytes weight_buffer = 96 * 1024;
  Bytes feature_half = 192 * 1024;
  double overshoot = kDefaultOvershoot;
  double fps = 30.0;
  double pj_per_bit = kDefaultPjPerBit;
  int precision_bits = 8;
  std::uint64_t seed = 1;
  BoundaryPolicy boundary = BoundaryPolicy::ZeroPad;
  int iterations = 2;
  int rescale_first_k = 1;
  // Convert dense convolutions before morphing; unset means "when any remain".
  std::optional<bool> convert;
  std::string output_dir;

  /// Throws std::invalid_argument when a numeric field is out of range.
  void check() const;
  ArchConfig arch() const;
  TrafficOptions traffic_options() const { return TrafficOptions::for_precision(precision_bits, fps); }
};

/// Structured result plus its human-readable rendering.
struct StageOutput {
  Json json;
  std::string text;
};

NetGraph load_model(const RunConfig& config);
NetGraph load_model(const std::string& path, const std::optional<TensorShape>& input);

/// Gamma scores from the configured file, or seeded synthetic ones.
GammaTable load_gammas(const RunConfig& config, const NetGraph& graph);

StageOutput run_convert(const RunConfig& config, NetGraph* converted = nullptr);
StageOutput run_plan(const RunConfig& config);
StageOutput run_prune(const RunConfig& config, NetGraph* pruned = nullptr);
StageOutput run_tile(const RunConfig& config);
StageOutput run_simulate(const RunConfig& config, bool functional);
StageOutput run_report(const RunConfig& config);
StageOutput run_sweep(const RunConfig& config, const std::vector<Bytes>& sizes);

/// Every stage on one model, merged into a single report.
StageOutput full_pipeline(const RunConfig& config);

/// "weight_buffer_bytes bandwidth_mb_per_s" rows.
std::string sweep_plot_data(const Json& sweep);

}  // namespace rcfuse
