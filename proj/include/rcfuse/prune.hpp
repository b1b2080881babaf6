#pragma once

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"

namespace rcfuse {

class MissingGamma : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Infeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ChannelKey {
  int layer_id = 0;
  int channel = 0;

  auto operator<=>(const ChannelKey&) const = default;
};

/// Per-channel BN scale magnitudes used as importance scores.
class GammaTable {
 public:
  void set(ChannelKey key, double gamma);
  bool contains(ChannelKey key) const { return scores_.count(key) != 0; }
  double at(ChannelKey key) const;
  std::size_t size() const { return scores_.size(); }
  const std::map<ChannelKey, double>& scores() const { return scores_; }

  bool operator==(const GammaTable&) const = default;

 private:
  std::map<ChannelKey, double> scores_;
};

/// Tab/space separated "layer_id channel gamma" lines; '#' starts a comment.
GammaTable parse_gamma_text(const std::string& text);
GammaTable read_gamma_file(const std::string& path);
void write_gamma_text(std::ostream& os, const GammaTable& table);

/// Channels of BN-bearing layers that have no score in the table.
std::vector<ChannelKey> missing_gammas(const NetGraph& graph, const GammaTable& table);

/// Uniform (0, 1] scores from a seeded 64-bit Mersenne Twister, one per BN channel
/// in (layer, channel) order. Reproducible across platforms.
GammaTable synthetic_gammas(const NetGraph& graph, std::uint64_t seed);

/// Size-weighted L1 penalty on BN scales. Channels in `zeroed` have indicator 0.
double regularization_term(const NetGraph& graph, const GammaTable& gammas,
                           const std::set<ChannelKey>& zeroed = {});

struct PruneDecision {
  // In removal order; coupled consumer channels are implied, not listed.
  std::vector<ChannelKey> removed;
  std::vector<Bytes> group_bytes_before;
  std::vector<Bytes> group_bytes_after;
  std::vector<std::size_t> infeasible_groups;
  // Surviving original channel indices of every channel-owning layer.
  std::map<int, std::vector<int>> kept_channels;
};

struct PruneResult {
  NetGraph graph;
  PruneDecision decision;
};

/// Removes the lowest-gamma channels of each group, in group order, until the group
/// fits the budget. Stops at the first state that fits.
PruneResult prune_to_budget(const NetGraph& graph, const FusionPlan& plan,
                            const GammaTable& gammas, Bytes budget, int bytes_per_weight = 1);

/// The graph left after removing `removed` output channels (and their coupled
/// consumers) from the original, in any order.
NetGraph apply_channel_removals(const NetGraph& graph, const std::vector<ChannelKey>& removed);

enum class ResidualMode {
  Equal,
  // skip input wider than the conv path: the extra skip channels are dropped
  DiscardSkipExtra,
  // conv path wider than the skip input: the extra conv channels pass through
  PassConvExtra,
};

struct ResidualFix {
  int add_id = -1;
  std::int64_t conv_channels = 0;
  std::int64_t skip_channels = 0;
  std::int64_t summed = 0;
  std::int64_t discarded = 0;
  std::int64_t passed_through = 0;
  ResidualMode mode = ResidualMode::Equal;
};

ResidualFix plan_residual_fix(std::int64_t conv_channels, std::int64_t skip_channels);

/// Re-derives the add's channel count (always the conv-path count) and reports how
/// the mismatched channels are handled.
NetGraph fix_residual_mismatch(const NetGraph& graph, int add_id, ResidualFix* fix = nullptr);
NetGraph fix_all_residuals(const NetGraph& graph, std::vector<ResidualFix>* fixes = nullptr);

struct RescaleResult {
  NetGraph graph;
  double factor = 1.0;
  std::int64_t params = 0;
};

/// Scales every free channel count by one factor (round half up, at least 1) chosen
/// so the parameter count is the largest value not above the target.
RescaleResult uniform_rescale(const NetGraph& graph, std::int64_t target_params);

/// Channel counts after scaling by `factor`, without the search.
NetGraph scale_channels(const NetGraph& graph, double factor);

struct RcnetOptions {
  Bytes budget = 96 * 1024;
  double overshoot = kDefaultOvershoot;
  int iterations = 2;
  int rescale_first_k = 1;
  int bytes_per_weight = 1;
};

struct IterationReport {
  int iteration = 0;
  FusionPlan plan;
  std::vector<Bytes> group_bytes_before;
  std::vector<Bytes> group_bytes_after;
  std::size_t channels_removed = 0;
  std::int64_t params_before = 0;
  std::int64_t params_after_prune = 0;
  std::int64_t params_after = 0;
  bool rescaled = false;
  double rescale_factor = 1.0;
};

struct RcnetResult {
  NetGraph graph;
  GammaTable gammas;
  std::vector<IterationReport> iterations;
};

/// Repeated partition-then-prune; early iterations end with a uniform rescale. Scores of
/// surviving channels carry over between iterations; rescaled layers stretch them.
RcnetResult rcnet_iterate(const NetGraph& graph, const GammaTable& gammas,
                          const RcnetOptions& options = {});

}  // namespace rcfuse
