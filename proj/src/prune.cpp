#include "rcfuse/prune.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

namespace rcfuse {

// ---------------------------------------------------------------------------
// gamma tables

void GammaTable::set(ChannelKey key, double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("gamma scores must be >= 0");
  scores_[key] = gamma;
}

double GammaTable::at(ChannelKey key) const {
  auto it = scores_.find(key);
  if (it == scores_.end()) {
    throw MissingGamma("no gamma for layer " + std::to_string(key.layer_id) + " channel " +
                       std::to_string(key.channel));
  }
  return it->second;
}

GammaTable parse_gamma_text(const std::string& text) {
  GammaTable table;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string first;
    if (!(fields >> first)) continue;
    if (first == "layer_id") continue;  // optional header row
    ChannelKey key;
    double gamma = 0;
    std::istringstream head(first);
    if (!(head >> key.layer_id) || !(fields >> key.channel >> gamma)) {
      throw std::invalid_argument("gamma file line " + std::to_string(line_no) +
                                  ": expected 'layer_id channel gamma'");
    }
    table.set(key, std::fabs(gamma));
  }
  return table;
}

GammaTable read_gamma_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gamma file " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_gamma_text(buffer.str());
}

void write_gamma_text(std::ostream& os, const GammaTable& table) {
  os << "# layer_id\tchannel\tgamma\n";
  char value[64];
  for (const auto& [key, gamma] : table.scores()) {
    std::snprintf(value, sizeof value, "%.17g", gamma);
    os << key.layer_id << '\t' << key.channel << '\t' << value << '\n';
  }
}

namespace {

bool has_gamma(const LayerNode& layer) {
  return layer.has_bn_relu && layer.is_weighted() && layer.kind != LayerKind::OutputHead;
}

}  // namespace

std::vector<ChannelKey> missing_gammas(const NetGraph& graph, const GammaTable& table) {
  const NetGraph shaped = infer_shapes(graph);
  std::vector<ChannelKey> missing;
  for (const auto& layer : shaped.layers) {
    if (!has_gamma(layer)) continue;
    for (int c = 0; c < layer.out_channels; ++c) {
      if (!table.contains({layer.id, c})) missing.push_back({layer.id, c});
    }
  }
  return missing;
}

GammaTable synthetic_gammas(const NetGraph& graph, std::uint64_t seed) {
  const NetGraph shaped = infer_shapes(graph);
  std::mt19937_64 rng(seed);
  GammaTable table;
  for (const auto& layer : shaped.layers) {
    if (!has_gamma(layer)) continue;
    for (int c = 0; c < layer.out_channels; ++c) {
      // 53 random mantissa bits mapped onto (0, 1]
      const double u = static_cast<double>((rng() >> 11) + 1) * 0x1.0p-53;
      table.set({layer.id, c}, u);
    }
  }
  return table;
}

// ---------------------------------------------------------------------------
// regularization

namespace {

// Nearest upstream layer whose output channels feed `index` one-to-one.
std::optional<std::size_t> channel_producer(const NetGraph& graph, std::size_t index) {
  auto prev = main_producer(graph, index);
  while (prev) {
    const auto& layer = graph.layers[*prev];
    if (layer.is_weighted()) return prev;
    if (layer.kind == LayerKind::Concat) return std::nullopt;
    prev = main_producer(graph, *prev);
  }
  return std::nullopt;
}

double gamma_or_zero(const GammaTable& gammas, const LayerNode& layer, int channel) {
  if (!has_gamma(layer)) return 0.0;
  return gammas.at({layer.id, channel});
}

}  // namespace

double regularization_term(const NetGraph& input_graph, const GammaTable& gammas,
                           const std::set<ChannelKey>& zeroed) {
  const NetGraph graph = infer_shapes(input_graph);
  double total = 0.0;
  for (std::size_t index = 0; index < graph.layers.size(); ++index) {
    const auto& layer = graph.layers[index];
    if (!layer.is_weighted()) continue;
    const double per_connection = static_cast<double>(layer.kernel) * layer.kernel;
    const auto producer = channel_producer(graph, index);

    auto input_gamma = [&](int i) {
      return producer ? std::fabs(gamma_or_zero(gammas, graph.layers[*producer], i)) : 0.0;
    };
    auto input_alive = [&](int i) {
      return producer ? (zeroed.count({graph.layers[*producer].id, i}) ? 0.0 : 1.0) : 1.0;
    };
    auto output_gamma = [&](int j) { return std::fabs(gamma_or_zero(gammas, layer, j)); };
    auto output_alive = [&](int j) { return zeroed.count({layer.id, j}) ? 0.0 : 1.0; };

    const int cin = static_cast<int>(layer.in_channels);
    const int cout = static_cast<int>(layer.out_channels);
    if (layer.kind == LayerKind::DepthwiseConv) {
      for (int c = 0; c < cin; ++c) {
        total += per_connection *
                 (input_gamma(c) * output_alive(c) + input_alive(c) * output_gamma(c));
      }
      continue;
    }
    double sum_in_gamma = 0, sum_in_alive = 0, sum_out_gamma = 0, sum_out_alive = 0;
    for (int i = 0; i < cin; ++i) {
      sum_in_gamma += input_gamma(i);
      sum_in_alive += input_alive(i);
    }
    for (int j = 0; j < cout; ++j) {
      sum_out_gamma += output_gamma(j);
      sum_out_alive += output_alive(j);
    }
    total += per_connection * sum_in_gamma * sum_out_alive +
             per_connection * sum_in_alive * sum_out_gamma;
  }
  return total;
}

// ---------------------------------------------------------------------------
// pruning

namespace {

constexpr int kFrameOwner = -1;

// Tracks which channels of every channel-owning layer are still alive and derives
// per-layer channel counts from that.
class ChannelState {
 public:
  explicit ChannelState(const NetGraph& graph) : graph_(graph) {
    const std::size_t n = graph.layers.size();
    origins_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& layer = graph.layers[i];
      const auto& input = i == 0 ? frame_origin_ : origins_[i - 1];
      switch (layer.kind) {
        case LayerKind::Conv:
        case LayerKind::PointwiseConv:
        case LayerKind::OutputHead:
          origins_[i] = {static_cast<int>(i)};
          alive_[static_cast<int>(i)].assign(static_cast<std::size_t>(layer.out_channels), true);
          break;
        case LayerKind::Concat: {
          origins_[i] = input;
          const auto src = *graph.index_of(*layer.residual_from);
          const auto& extra = origins_[src];
          origins_[i].insert(origins_[i].end(), extra.begin(), extra.end());
          break;
        }
        default:
          origins_[i] = input;
          break;
      }
    }
    alive_[kFrameOwner].assign(static_cast<std::size_t>(graph.input.channels), true);
    for (const auto& [owner, flags] : alive_) counts_[owner] = static_cast<std::int64_t>(flags.size());
  }

  std::int64_t out_count(std::size_t index) const { return count_of(origins_[index]); }
  std::int64_t in_count(std::size_t index) const {
    return index == 0 ? count_of(frame_origin_) : out_count(index - 1);
  }

  Bytes weight_bytes(std::size_t index, int bytes_per_weight) const {
    const auto& layer = graph_.layers[index];
    const std::int64_t kk = static_cast<std::int64_t>(layer.kernel) * layer.kernel;
    switch (layer.kind) {
      case LayerKind::Conv:
      case LayerKind::OutputHead:
        return kk * in_count(index) * out_count(index) * bytes_per_weight;
      case LayerKind::PointwiseConv:
        return in_count(index) * out_count(index) * bytes_per_weight;
      case LayerKind::DepthwiseConv:
        return kk * in_count(index) * bytes_per_weight;
      default:
        return 0;
    }
  }

  bool alive(int owner_index, int channel) const {
    return alive_.at(owner_index)[static_cast<std::size_t>(channel)];
  }
  std::int64_t owner_count(int owner_index) const { return counts_.at(owner_index); }

  void remove(int owner_index, int channel) {
    auto& flags = alive_.at(owner_index);
    if (!flags[static_cast<std::size_t>(channel)]) return;
    flags[static_cast<std::size_t>(channel)] = false;
    --counts_[owner_index];
  }

  /// Surviving positions of a layer's output channel list, in order.
  std::vector<int> kept_positions(std::size_t index) const {
    std::vector<int> kept;
    int position = 0;
    for (int owner : origins_[index]) {
      for (bool flag : alive_.at(owner)) {
        if (flag) kept.push_back(position);
        ++position;
      }
    }
    return kept;
  }

 private:
  std::int64_t count_of(const std::vector<int>& owners) const {
    std::int64_t total = 0;
    for (int owner : owners) total += counts_.at(owner);
    return total;
  }

  const NetGraph& graph_;
  const std::vector<int> frame_origin_{kFrameOwner};
  std::vector<std::vector<int>> origins_;
  std::map<int, std::vector<bool>> alive_;
  std::map<int, std::int64_t> counts_;
};

NetGraph materialize(const NetGraph& graph, const ChannelState& state,
                     std::map<int, std::vector<int>>* kept) {
  NetGraph pruned = graph;
  for (std::size_t i = 0; i < pruned.layers.size(); ++i) {
    auto& layer = pruned.layers[i];
    if (kept) (*kept)[layer.id] = state.kept_positions(i);
    switch (layer.kind) {
      case LayerKind::Conv:
      case LayerKind::PointwiseConv:
      case LayerKind::OutputHead:
        layer.out_channels = state.out_count(i);
        break;
      default:
        layer.out_channels = 0;  // re-derived below
        break;
    }
  }
  return infer_shapes(std::move(pruned));
}

struct Candidate {
  double gamma;
  int layer_id;
  int channel;
  int owner_index;
};

}  // namespace

PruneResult prune_to_budget(const NetGraph& input_graph, const FusionPlan& plan,
                            const GammaTable& gammas, Bytes budget, int bytes_per_weight) {
  const NetGraph graph = infer_shapes(input_graph);
  if (auto missing = missing_gammas(graph, gammas); !missing.empty()) {
    throw MissingGamma("gamma table lacks layer " + std::to_string(missing.front().layer_id) +
                       " channel " + std::to_string(missing.front().channel) + " (" +
                       std::to_string(missing.size()) + " missing)");
  }

  ChannelState state(graph);
  PruneResult result;
  auto& decision = result.decision;

  std::vector<std::vector<std::size_t>> members(plan.groups.size());
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    for (int id : plan.groups[g].layer_ids) {
      auto idx = graph.index_of(id);
      if (!idx) throw std::invalid_argument("plan names unknown layer " + std::to_string(id));
      members[g].push_back(*idx);
    }
  }
  auto group_bytes = [&](std::size_t g) {
    Bytes total = 0;
    for (auto idx : members[g]) total += state.weight_bytes(idx, bytes_per_weight);
    return total;
  };

  for (std::size_t g = 0; g < plan.groups.size(); ++g) decision.group_bytes_before.push_back(group_bytes(g));

  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    Bytes current = group_bytes(g);
    if (current <= budget) continue;

    std::vector<Candidate> candidates;
    for (auto idx : members[g]) {
      const auto& layer = graph.layers[idx];
      if (!layer.owns_prunable_channels()) continue;
      for (int c = 0; c < layer.out_channels; ++c) {
        if (!state.alive(static_cast<int>(idx), c)) continue;
        candidates.push_back({gammas.at({layer.id, c}), layer.id, c, static_cast<int>(idx)});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.gamma != b.gamma) return a.gamma < b.gamma;
      if (a.layer_id != b.layer_id) return a.layer_id < b.layer_id;
      return a.channel < b.channel;
    });

    for (const auto& cand : candidates) {
      if (current <= budget) break;
      if (state.owner_count(cand.owner_index) <= 1) continue;  // keep one channel per layer
      state.remove(cand.owner_index, cand.channel);
      decision.removed.push_back({cand.layer_id, cand.channel});
      current = group_bytes(g);
    }
    if (current > budget) decision.infeasible_groups.push_back(g);
  }

  result.graph = materialize(graph, state, &decision.kept_channels);
  for (std::size_t g = 0; g < plan.groups.size(); ++g) decision.group_bytes_after.push_back(group_bytes(g));
  return result;
}

NetGraph apply_channel_removals(const NetGraph& input_graph, const std::vector<ChannelKey>& removed) {
  const NetGraph graph = infer_shapes(input_graph);
  ChannelState state(graph);
  for (const auto& key : removed) {
    const auto idx = graph.index_of(key.layer_id);
    if (!idx || !graph.layers[*idx].owns_prunable_channels() || key.channel < 0 ||
        key.channel >= graph.layers[*idx].out_channels) {
      throw std::invalid_argument("no prunable channel " + std::to_string(key.channel) + " in layer " +
                                  std::to_string(key.layer_id));
    }
    state.remove(static_cast<int>(*idx), key.channel);
  }
  return materialize(graph, state, nullptr);
}

// ---------------------------------------------------------------------------
// residual mismatch

ResidualFix plan_residual_fix(std::int64_t conv_channels, std::int64_t skip_channels) {
  ResidualFix fix;
  fix.conv_channels = conv_channels;
  fix.skip_channels = skip_channels;
  fix.summed = std::min(conv_channels, skip_channels);
  if (skip_channels > conv_channels) {
    fix.mode = ResidualMode::DiscardSkipExtra;
    fix.discarded = skip_channels - conv_channels;
  } else if (conv_channels > skip_channels) {
    fix.mode = ResidualMode::PassConvExtra;
    fix.passed_through = conv_channels - skip_channels;
  }
  return fix;
}

NetGraph fix_residual_mismatch(const NetGraph& graph, int add_id, ResidualFix* fix) {
  NetGraph out = infer_shapes(graph);
  auto& add = out.layer(add_id);
  if (add.kind != LayerKind::ResidualAdd) {
    throw std::invalid_argument("layer " + std::to_string(add_id) + " is not a residual add");
  }
  add.out_channels = add.in_channels;
  if (fix) {
    *fix = plan_residual_fix(add.in_channels, add.source_shape->channels);
    fix->add_id = add_id;
  }
  return infer_shapes(std::move(out));
}

NetGraph fix_all_residuals(const NetGraph& graph, std::vector<ResidualFix>* fixes) {
  NetGraph out = infer_shapes(graph);
  for (const auto& layer : graph.layers) {
    if (layer.kind != LayerKind::ResidualAdd) continue;
    ResidualFix fix;
    out = fix_residual_mismatch(out, layer.id, &fix);
    if (fixes) fixes->push_back(fix);
  }
  return out;
}

// ---------------------------------------------------------------------------
// uniform rescale

namespace {

bool is_free_width(const LayerNode& layer) {
  return layer.kind == LayerKind::Conv || layer.kind == LayerKind::PointwiseConv;
}

}  // namespace

NetGraph scale_channels(const NetGraph& graph, double factor) {
  NetGraph out = infer_shapes(graph);
  for (auto& layer : out.layers) {
    if (is_free_width(layer)) {
      const double scaled = std::floor(static_cast<double>(layer.out_channels) * factor + 0.5);
      layer.out_channels = std::max<std::int64_t>(1, static_cast<std::int64_t>(scaled));
    } else if (layer.kind != LayerKind::OutputHead) {
      layer.out_channels = 0;
    }
  }
  return infer_shapes(std::move(out));
}

RescaleResult uniform_rescale(const NetGraph& graph, std::int64_t target_params) {
  const NetGraph shaped = infer_shapes(graph);
  const std::int64_t current = model_params(shaped);
  if (target_params < current) {
    throw std::invalid_argument("rescale target " + std::to_string(target_params) +
                                " is below the current " + std::to_string(current) + " parameters");
  }
  const bool scalable = std::any_of(shaped.layers.begin(), shaped.layers.end(), is_free_width);
  if (!scalable) return {shaped, 1.0, current};

  auto params_at = [&](double f) { return model_params(scale_channels(shaped, f)); };
  double lo = 1.0;
  double hi = 2.0;
  while (params_at(hi) <= target_params && hi < 1e6) {
    lo = hi;
    hi *= 2.0;
  }
  // invariant: params_at(lo) <= target < params_at(hi)
  for (int iter = 0; iter < 200 && hi - lo > 1e-12 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (params_at(mid) <= target_params) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  NetGraph scaled = scale_channels(shaped, lo);
  const auto params = model_params(scaled);
  return {std::move(scaled), lo, params};
}

// ---------------------------------------------------------------------------
// iteration

namespace {

GammaTable carry_gammas(const NetGraph& pruned, const GammaTable& gammas,
                        const std::map<int, std::vector<int>>& kept) {
  GammaTable out;
  for (const auto& layer : pruned.layers) {
    if (!has_gamma(layer)) continue;
    const auto& positions = kept.at(layer.id);
    for (std::size_t n = 0; n < positions.size(); ++n) {
      out.set({layer.id, static_cast<int>(n)}, gammas.at({layer.id, positions[n]}));
    }
  }
  return out;
}

GammaTable stretch_gammas(const NetGraph& before, const NetGraph& after, const GammaTable& gammas) {
  GammaTable out;
  for (std::size_t i = 0; i < after.layers.size(); ++i) {
    const auto& layer = after.layers[i];
    if (!has_gamma(layer)) continue;
    const std::int64_t old_count = before.layers[i].out_channels;
    for (std::int64_t j = 0; j < layer.out_channels; ++j) {
      const auto src = std::min<std::int64_t>(old_count - 1, j * old_count / layer.out_channels);
      out.set({layer.id, static_cast<int>(j)}, gammas.at({layer.id, static_cast<int>(src)}));
    }
  }
  return out;
}

}  // namespace

RcnetResult rcnet_iterate(const NetGraph& graph, const GammaTable& gammas,
                          const RcnetOptions& options) {
  if (options.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  RcnetResult result;
  result.graph = infer_shapes(graph);
  result.gammas = gammas;
  const std::int64_t original_params = model_params(result.graph);

  for (int it = 1; it <= options.iterations; ++it) {
    IterationReport report;
    report.iteration = it;
    report.params_before = model_params(result.graph);
    report.plan = partition(result.graph, options.budget, options.overshoot, options.bytes_per_weight);

    auto pruned = prune_to_budget(result.graph, report.plan, result.gammas, options.budget,
                                  options.bytes_per_weight);
    if (!pruned.decision.infeasible_groups.empty()) {
      std::ostringstream os;
      os << "iteration " << it << ": group " << pruned.decision.infeasible_groups.front()
         << " cannot fit " << options.budget << " bytes even at one channel per layer";
      throw Infeasible(os.str());
    }
    report.group_bytes_before = pruned.decision.group_bytes_before;
    report.group_bytes_after = pruned.decision.group_bytes_after;
    report.channels_removed = pruned.decision.removed.size();

    NetGraph next = fix_all_residuals(pruned.graph);
    GammaTable next_gammas = carry_gammas(next, result.gammas, pruned.decision.kept_channels);
    report.params_after_prune = model_params(next);

    if (it <= options.rescale_first_k) {
      auto rescaled = uniform_rescale(next, original_params);
      next_gammas = stretch_gammas(next, rescaled.graph, next_gammas);
      report.rescaled = true;
      report.rescale_factor = rescaled.factor;
      next = std::move(rescaled.graph);
    }
    report.params_after = model_params(next);
    result.graph = std::move(next);
    result.gammas = std::move(next_gammas);
    result.iterations.push_back(std::move(report));
  }
  return result;
}

}  // namespace rcfuse
