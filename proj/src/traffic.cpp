#include "rcfuse/traffic.hpp"

#include <algorithm>
#include <set>

namespace rcfuse {

namespace {

Bytes map_bytes(const std::optional<TensorShape>& shape, int bpa) {
  if (!shape) throw ShapeError("traffic accounting needs inferred shapes");
  return shape->elements() * bpa;
}

WeightOptions weight_options(const TrafficOptions& o) { return {o.bytes_per_weight, o.count_bias}; }

LayerTraffic plain_layer(const LayerNode& layer, const TrafficOptions& o) {
  const auto f = layer_feature_bytes(layer, o.bytes_per_activation);
  return {layer.id, layer_weight_bytes(layer, weight_options(o)), f.in_bytes, f.out_bytes};
}

void total_up(TrafficReport& r) {
  r.weight_bytes = 0;
  r.feature_bytes = 0;
  for (const auto& l : r.layers) {
    r.weight_bytes += l.weight_bytes;
    r.feature_bytes += l.feature_bytes();
  }
  r.total_bytes = r.weight_bytes + r.feature_bytes;
}

}  // namespace

TrafficOptions TrafficOptions::for_precision(int bits, double fps) {
  if (bits < 1) throw std::invalid_argument("precision must be at least one bit");
  TrafficOptions o;
  o.fps = fps;
  o.bytes_per_weight = (bits + 7) / 8;
  o.bytes_per_activation = (bits + 7) / 8;
  return o;
}

TrafficReport layer_by_layer_traffic(const NetGraph& graph, const TrafficOptions& options) {
  TrafficReport r;
  r.fps = options.fps;
  for (const auto& layer : graph.layers) r.layers.push_back(plain_layer(layer, options));
  total_up(r);
  return r;
}

TrafficReport fused_traffic(const NetGraph& graph, const FusionPlan& plan,
                            const std::vector<TilePlan>& tiles, const ArchConfig& arch,
                            const TrafficOptions& options) {
  if (tiles.size() != plan.groups.size()) {
    throw std::invalid_argument("one tile plan per fusion group is required");
  }
  const auto owner = plan.group_of_layers(graph);
  for (std::size_t i = 0; i < owner.size(); ++i) {
    if (owner[i] >= plan.groups.size()) throw std::invalid_argument("plan does not cover every layer");
  }
  const int bpa = options.bytes_per_activation;

  // Skip sources whose map must reach DRAM because a later group reads it.
  std::set<std::size_t> stored_sources;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const auto& layer = graph.layers[i];
    if (!layer.residual_from) continue;
    const std::size_t src = *graph.index_of(*layer.residual_from);
    if (owner[src] != owner[i]) stored_sources.insert(src);
  }

  TrafficReport r;
  r.fps = options.fps;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    const std::size_t start = *graph.index_of(group.layer_ids.front());
    const std::size_t last = start + group.layer_ids.size() - 1;
    const Bytes weights = group_weight_size(group, graph, options.bytes_per_weight) +
                          (options.count_bias ? [&] {
                            Bytes b = 0;
                            for (std::size_t i = start; i <= last; ++i)
                              if (graph.layers[i].is_weighted()) b += graph.layers[i].out_channels;
                            return b;
                          }() : 0);
    const bool per_tile = weights > arch.weight_buffer_bytes;
    const std::int64_t loads = per_tile ? tiles[g].tile_count : 1;

    std::vector<LayerTraffic> fused;
    std::vector<LayerTraffic> plain;
    Bytes fused_sum = 0;
    Bytes plain_sum = 0;
    for (std::size_t i = start; i <= last; ++i) {
      const auto& layer = graph.layers[i];
      plain.push_back(plain_layer(layer, options));
      plain_sum += plain.back().total();

      LayerTraffic t{layer.id, layer_weight_bytes(layer, weight_options(options)) * loads, 0, 0};
      if (i == start) t.feature_in_bytes += map_bytes(layer.input_shape, bpa);
      if (layer.residual_from) {
        const std::size_t src = *graph.index_of(*layer.residual_from);
        const bool is_group_input = start > 0 && src == start - 1;
        if (owner[src] != g && !is_group_input) t.feature_in_bytes += map_bytes(layer.source_shape, bpa);
      }
      const bool is_last = i == last;
      if (is_last || stored_sources.count(i)) t.feature_out_bytes += map_bytes(layer.output_shape, bpa);
      fused.push_back(t);
      fused_sum += t.total();
    }

    GroupTraffic gt;
    gt.group = g;
    const bool fallback = !tiles[g].feasible || plain_sum < fused_sum;
    gt.mode = fallback ? GroupMode::LayerByLayer : GroupMode::Fused;
    gt.weights_per_tile = !fallback && per_tile && loads > 1;
    for (const auto& t : fallback ? plain : fused) {
      r.layers.push_back(t);
      gt.weight_bytes += t.weight_bytes;
      gt.feature_bytes += t.feature_bytes();
    }
    r.groups.push_back(gt);
  }
  total_up(r);
  return r;
}

double dram_energy(double bytes_per_second, double pj_per_bit) {
  if (bytes_per_second < 0 || pj_per_bit < 0) {
    throw std::invalid_argument("bandwidth and energy per bit must be non-negative");
  }
  return bytes_per_second * 8.0 * pj_per_bit * 1e-9;
}

EnergyReport energy_report(const TrafficReport& report, double pj_per_bit) {
  EnergyReport e;
  e.bytes_per_second = report.bandwidth();
  e.pj_per_bit = pj_per_bit;
  e.mj_per_second = dram_energy(e.bytes_per_second, pj_per_bit);
  return e;
}

double savings_fraction(double baseline, double fused) {
  return baseline > 0 ? 1.0 - fused / baseline : 0.0;
}

SavingsReport savings_report(const TrafficReport& baseline, const TrafficReport& fused) {
  if (baseline.layers.size() != fused.layers.size()) {
    throw std::invalid_argument("traffic reports cover different graphs");
  }
  SavingsReport s;
  for (std::size_t i = 0; i < baseline.layers.size(); ++i) {
    const auto& b = baseline.layers[i];
    const auto& f = fused.layers[i];
    if (b.layer_id != f.layer_id) throw std::invalid_argument("traffic reports cover different graphs");
    s.layers.push_back({b.layer_id, b.total(), f.total(),
                        savings_fraction(static_cast<double>(b.total()), static_cast<double>(f.total()))});
  }
  s.total = savings_fraction(static_cast<double>(baseline.total_bytes), static_cast<double>(fused.total_bytes));
  s.feature = savings_fraction(static_cast<double>(baseline.feature_bytes),
                               static_cast<double>(fused.feature_bytes));
  s.weight = savings_fraction(static_cast<double>(baseline.weight_bytes),
                              static_cast<double>(fused.weight_bytes));
  return s;
}

SweepResult buffer_sweep(const NetGraph& graph, const std::vector<Bytes>& sizes,
                         const ArchConfig& arch, const TrafficOptions& options,
                         BoundaryPolicy boundary) {
  if (!std::is_sorted(sizes.begin(), sizes.end())) {
    throw std::invalid_argument("buffer sizes must be ascending");
  }
  SweepResult out;
  std::optional<FusionPlan> best_plan;
  for (Bytes size : sizes) {
    ArchConfig a = arch;
    a.weight_buffer_bytes = size;
    auto evaluate = [&](const FusionPlan& plan) {
      const auto tiles = plan_tiles(plan, graph, a.feature_half_bytes, boundary, options.bytes_per_activation);
      return fused_traffic(graph, plan, tiles, a, options);
    };
    const FusionPlan plan = partition(graph, size, 0.0, options.bytes_per_weight);
    const TrafficReport own = evaluate(plan);

    SweepPoint p;
    p.weight_buffer = size;
    p.planned_bandwidth = own.bandwidth();
    const TrafficReport* chosen = &own;
    const FusionPlan* chosen_plan = &plan;
    std::optional<TrafficReport> previous;
    if (best_plan) {
      // a plan that fit a smaller buffer still fits this one
      previous = evaluate(*best_plan);
      if (previous->bandwidth() < own.bandwidth()) {
        chosen = &*previous;
        chosen_plan = &*best_plan;
      }
    }
    p.bandwidth = chosen->bandwidth();
    p.feature_bandwidth = chosen->feature_bandwidth();
    p.weight_bandwidth = chosen->weight_bandwidth();
    p.groups = chosen_plan->groups.size();
    best_plan = *chosen_plan;
    out.points.push_back(p);
  }
  if (!out.points.empty()) {
    const double final_bw = out.points.back().bandwidth;
    for (std::size_t i = 0; i < out.points.size(); ++i) {
      if (out.points[i].bandwidth == final_bw) {
        out.saturation_index = i;
        for (std::size_t j = i; j < out.points.size(); ++j) out.points[j].saturated = true;
        break;
      }
    }
  }
  return out;
}

}  // namespace rcfuse
