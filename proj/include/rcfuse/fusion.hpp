#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rcfuse/netir.hpp"

namespace rcfuse {

/// Most downsampling layers a fused group may hold (the stem's own is not counted).
inline constexpr int kMaxGroupDownsamples = 2;

/// Overshoot allowed while partitioning before pruning shrinks each group to the budget.
inline constexpr double kDefaultOvershoot = 0.5;

struct FusionGroup {
  std::vector<int> layer_ids;
  Bytes weight_bytes = 0;
  // Raw count of downsampling layers in the group.
  int downsample_count = 0;
  bool contains_first_layer = false;
  // A single atomic unit that alone exceeds the partition threshold.
  bool degenerate = false;

  /// Downsampling layers that count toward the per-group limit.
  int limited_downsamples(const NetGraph& graph) const;

  bool operator==(const FusionGroup&) const = default;
};

struct FusionPlan {
  std::vector<FusionGroup> groups;
  Bytes budget_bytes = 0;
  double overshoot = 0.0;
  std::vector<std::string> warnings;

  Bytes threshold() const;
  /// Group index holding each layer, in graph order.
  std::vector<std::size_t> group_of_layers(const NetGraph& graph) const;

  bool operator==(const FusionPlan&) const = default;
};

/// A residual (or concat) edge, as graph indices. The block spans (source, sink].
struct ResidualBlock {
  std::size_t source = 0;
  std::size_t sink = 0;
};

std::vector<ResidualBlock> residual_blocks(const NetGraph& graph);

/// Contiguous index ranges [first, last] the greedy scan never splits.
struct AtomicUnit {
  std::size_t first = 0;
  std::size_t last = 0;
};

std::vector<AtomicUnit> atomic_units(const NetGraph& graph);

/// Greedy input-to-output grouping. A group closes when the next atomic unit would
/// push it past (1 + overshoot) * budget or past the downsampling limit.
FusionPlan partition(const NetGraph& graph, Bytes budget, double overshoot = kDefaultOvershoot,
                     int bytes_per_weight = 1);

Bytes group_weight_size(const FusionGroup& group, const NetGraph& graph,
                        int bytes_per_weight = 1);

struct GuidelineViolation {
  // 1: stem fused with others; 2: at most two downsampling layers; 3: residual block whole.
  int guideline = 0;
  std::size_t group = 0;
  std::vector<int> layer_ids;
  std::string message;
};

std::vector<GuidelineViolation> check_guidelines(const FusionPlan& plan, const NetGraph& graph);

/// Recomputes sizes and flags after the graph changed underneath a plan.
FusionPlan refresh_plan(const FusionPlan& plan, const NetGraph& graph, int bytes_per_weight = 1);

}  // namespace rcfuse
