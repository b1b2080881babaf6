#include "rcfuse/fusion.hpp"

#include <algorithm>
#include <sstream>

namespace rcfuse {

int FusionGroup::limited_downsamples(const NetGraph& graph) const {
  int count = 0;
  for (int id : layer_ids) {
    const auto idx = graph.index_of(id);
    if (!idx || *idx == 0) continue;  // the stem's downsampling is ignored
    if (graph.layers[*idx].is_downsampling()) ++count;
  }
  return count;
}

Bytes FusionPlan::threshold() const {
  return static_cast<Bytes>((1.0 + overshoot) * static_cast<double>(budget_bytes));
}

std::vector<std::size_t> FusionPlan::group_of_layers(const NetGraph& graph) const {
  std::vector<std::size_t> owner(graph.layers.size(), groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (int id : groups[g].layer_ids) {
      if (auto idx = graph.index_of(id)) owner[*idx] = g;
    }
  }
  return owner;
}

std::vector<ResidualBlock> residual_blocks(const NetGraph& graph) {
  std::vector<ResidualBlock> blocks;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& layer = graph.layers[i];
    if (!layer.residual_from) continue;
    if (auto src = graph.index_of(*layer.residual_from); src && *src < i) {
      blocks.push_back({*src, i});
    }
  }
  return blocks;
}

std::vector<AtomicUnit> atomic_units(const NetGraph& graph) {
  const std::size_t n = graph.layers.size();
  // reach[i] = furthest index that must share a group with index i
  std::vector<std::size_t> reach(n);
  for (std::size_t i = 0; i < n; ++i) reach[i] = i;
  for (const auto& block : residual_blocks(graph)) {
    const std::size_t first = block.source + 1;
    reach[first] = std::max(reach[first], block.sink);
  }
  std::vector<AtomicUnit> units;
  std::size_t i = 0;
  while (i < n) {
    std::size_t last = reach[i];
    for (std::size_t j = i; j <= last; ++j) last = std::max(last, reach[j]);
    units.push_back({i, last});
    i = last + 1;
  }
  return units;
}

Bytes group_weight_size(const FusionGroup& group, const NetGraph& graph, int bytes_per_weight) {
  Bytes total = 0;
  for (int id : group.layer_ids) total += layer_weight_bytes(graph.layer(id), bytes_per_weight);
  return total;
}

FusionPlan partition(const NetGraph& graph, Bytes budget, double overshoot,
                     int bytes_per_weight) {
  if (budget <= 0) throw std::invalid_argument("weight budget must be positive");
  if (overshoot < 0) throw std::invalid_argument("overshoot must be >= 0");

  FusionPlan plan;
  plan.budget_bytes = budget;
  plan.overshoot = overshoot;
  const double limit = (1.0 + overshoot) * static_cast<double>(budget);

  FusionGroup current;
  int current_limited = 0;
  auto close = [&] {
    if (current.layer_ids.empty()) return;
    plan.groups.push_back(current);
    current = FusionGroup{};
    current_limited = 0;
  };

  for (const auto& unit : atomic_units(graph)) {
    Bytes unit_bytes = 0;
    int unit_downsamples = 0;
    int unit_limited = 0;
    for (std::size_t i = unit.first; i <= unit.last; ++i) {
      const auto& layer = graph.layers[i];
      unit_bytes += layer_weight_bytes(layer, bytes_per_weight);
      if (layer.is_downsampling()) {
        ++unit_downsamples;
        if (i != 0) ++unit_limited;
      }
    }
    const bool over_budget = static_cast<double>(current.weight_bytes + unit_bytes) > limit;
    const bool over_downsampling = current_limited + unit_limited > kMaxGroupDownsamples;
    if (!current.layer_ids.empty() && (over_budget || over_downsampling)) close();

    for (std::size_t i = unit.first; i <= unit.last; ++i) {
      current.layer_ids.push_back(graph.layers[i].id);
      if (i == 0) current.contains_first_layer = true;
    }
    current.weight_bytes += unit_bytes;
    current.downsample_count += unit_downsamples;
    current_limited += unit_limited;

    if (static_cast<double>(current.weight_bytes) > limit) current.degenerate = true;
    if (unit_limited > kMaxGroupDownsamples) {
      std::ostringstream os;
      os << "residual block starting at layer " << graph.layers[unit.first].id << " holds "
         << unit_limited << " downsampling layers; kept whole";
      plan.warnings.push_back(os.str());
    }
  }
  close();
  return plan;
}

FusionPlan refresh_plan(const FusionPlan& plan, const NetGraph& graph, int bytes_per_weight) {
  FusionPlan out = plan;
  const double limit = (1.0 + plan.overshoot) * static_cast<double>(plan.budget_bytes);
  for (auto& group : out.groups) {
    group.weight_bytes = group_weight_size(group, graph, bytes_per_weight);
    group.downsample_count = 0;
    group.contains_first_layer = false;
    for (int id : group.layer_ids) {
      const auto idx = graph.index_of(id);
      if (!idx) continue;
      if (graph.layers[*idx].is_downsampling()) ++group.downsample_count;
      if (*idx == 0) group.contains_first_layer = true;
    }
    group.degenerate = static_cast<double>(group.weight_bytes) > limit;
  }
  return out;
}

std::vector<GuidelineViolation> check_guidelines(const FusionPlan& plan, const NetGraph& graph) {
  std::vector<GuidelineViolation> out;
  if (graph.layers.empty()) return out;
  const auto owner = plan.group_of_layers(graph);

  const auto& stem = graph.layers.front();
  if (stem.is_downsampling() && graph.layers.size() > 1 && owner[0] < plan.groups.size() &&
      plan.groups[owner[0]].layer_ids.size() == 1) {
    out.push_back({1, owner[0], {stem.id},
                   "downsampling first layer is not fused with any other layer"});
  }

  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    const int limited = group.limited_downsamples(graph);
    if (limited > kMaxGroupDownsamples) {
      std::vector<int> ids;
      for (int id : group.layer_ids) {
        const auto idx = graph.index_of(id);
        if (idx && *idx != 0 && graph.layers[*idx].is_downsampling()) ids.push_back(id);
      }
      std::ostringstream os;
      os << "group " << g << " holds " << limited << " downsampling layers (limit "
         << kMaxGroupDownsamples << ")";
      out.push_back({2, g, ids, os.str()});
    }
  }

  for (const auto& block : residual_blocks(graph)) {
    const std::size_t home = owner[block.source + 1];
    std::vector<int> ids;
    bool split = false;
    for (std::size_t i = block.source + 1; i <= block.sink; ++i) {
      ids.push_back(graph.layers[i].id);
      if (owner[i] != home) split = true;
    }
    if (split) {
      std::ostringstream os;
      os << "residual block ending at layer " << graph.layers[block.sink].id
         << " spans several groups";
      out.push_back({3, home, ids, os.str()});
    }
  }
  return out;
}

}  // namespace rcfuse
