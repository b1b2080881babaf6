#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"
#include "rcfuse/sim.hpp"
#include "rcfuse/tiling.hpp"

namespace rcfuse {

/// Bytes per megabyte in every traffic and bandwidth figure.
inline constexpr double kBytesPerMB = 1e6;
inline constexpr double kDefaultPjPerBit = 70.0;

struct TrafficOptions {
  double fps = 30.0;
  int bytes_per_weight = 1;
  int bytes_per_activation = 1;
  bool count_bias = false;

  /// Both operand widths from one precision in bits (rounded up to whole bytes).
  static TrafficOptions for_precision(int bits, double fps = 30.0);
};

struct LayerTraffic {
  int layer_id = 0;
  Bytes weight_bytes = 0;
  Bytes feature_in_bytes = 0;
  Bytes feature_out_bytes = 0;

  Bytes feature_bytes() const { return feature_in_bytes + feature_out_bytes; }
  Bytes total() const { return weight_bytes + feature_in_bytes + feature_out_bytes; }

  bool operator==(const LayerTraffic&) const = default;
};

enum class GroupMode {
  Fused,
  // weights exceed the buffer and reloading them per tile costs more than not fusing
  LayerByLayer,
};

struct GroupTraffic {
  std::size_t group = 0;
  Bytes weight_bytes = 0;
  Bytes feature_bytes = 0;
  GroupMode mode = GroupMode::Fused;
  // weights fetched once per tile instead of once per frame
  bool weights_per_tile = false;

  bool operator==(const GroupTraffic&) const = default;
};

struct TrafficReport {
  std::vector<LayerTraffic> layers;
  // Empty for layer-by-layer execution.
  std::vector<GroupTraffic> groups;
  Bytes weight_bytes = 0;
  Bytes feature_bytes = 0;
  Bytes total_bytes = 0;
  double fps = 30.0;

  double bandwidth() const { return static_cast<double>(total_bytes) * fps; }
  double feature_bandwidth() const { return static_cast<double>(feature_bytes) * fps; }
  double weight_bandwidth() const { return static_cast<double>(weight_bytes) * fps; }

  bool operator==(const TrafficReport&) const = default;
};

/// Every layer reads its weights and inputs from and writes its output to DRAM.
TrafficReport layer_by_layer_traffic(const NetGraph& graph, const TrafficOptions& options = {});

/// Groups load their input and store their output once per frame; intermediate maps
/// and in-group skip maps stay on chip. Skips that leave a group cost a store and a
/// reload unless the skip source is the group input. Groups without a feasible tile
/// plan run layer by layer.
TrafficReport fused_traffic(const NetGraph& graph, const FusionPlan& plan,
                            const std::vector<TilePlan>& tiles, const ArchConfig& arch = {},
                            const TrafficOptions& options = {});

/// mJ per second spent moving `bytes_per_second` through DRAM.
double dram_energy(double bytes_per_second, double pj_per_bit = kDefaultPjPerBit);

struct EnergyReport {
  double bytes_per_second = 0.0;
  double pj_per_bit = kDefaultPjPerBit;
  double mj_per_second = 0.0;
};

EnergyReport energy_report(const TrafficReport& report, double pj_per_bit = kDefaultPjPerBit);

/// 1 - fused / baseline; 0 when the baseline is 0.
double savings_fraction(double baseline, double fused);

struct LayerSavings {
  int layer_id = 0;
  Bytes baseline_bytes = 0;
  Bytes fused_bytes = 0;
  double fraction = 0.0;
};

struct SavingsReport {
  std::vector<LayerSavings> layers;
  double total = 0.0;
  double feature = 0.0;
  double weight = 0.0;
};

SavingsReport savings_report(const TrafficReport& baseline, const TrafficReport& fused);

struct SweepPoint {
  Bytes weight_buffer = 0;
  std::size_t groups = 0;
  // Bandwidth of the plan made for this size alone.
  double planned_bandwidth = 0.0;
  // Best over every plan that fits this size (monotone in the size).
  double bandwidth = 0.0;
  double feature_bandwidth = 0.0;
  double weight_bandwidth = 0.0;
  bool saturated = false;

  bool operator==(const SweepPoint&) const = default;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  // First size from which the curve stays at its final value.
  std::optional<std::size_t> saturation_index;
};

/// Re-partitions (no overshoot) at every weight-buffer size and reports bandwidth.
SweepResult buffer_sweep(const NetGraph& graph, const std::vector<Bytes>& sizes,
                         const ArchConfig& arch = {}, const TrafficOptions& options = {},
                         BoundaryPolicy boundary = BoundaryPolicy::ZeroPad);

}  // namespace rcfuse
