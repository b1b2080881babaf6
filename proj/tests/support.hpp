#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"
#include "rcfuse/tiling.hpp"

#ifndef RCFUSE_MODELS_DIR
#define RCFUSE_MODELS_DIR "models"
#endif

namespace testsupport {

using namespace rcfuse;

inline std::string model_path(const std::string& name) {
  return std::string(RCFUSE_MODELS_DIR) + "/" + name;
}

struct GraphOptions {
  std::int64_t min_side = 8;
  std::int64_t max_side = 48;
  std::int64_t min_channels = 2;
  std::int64_t max_channels = 48;
  int min_units = 2;
  int max_units = 10;
  bool allow_concat = true;
  bool allow_head = true;
};

inline int uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Random valid chain of mixed layer kinds. Map sides
/// never drop below one pixel.
inline NetGraph random_graph(std::mt19937_64& rng, const GraphOptions& o = {}) {
  NetGraph g;
  g.name = "random";
  g.input.width = uniform(rng, static_cast<int>(o.min_side), static_cast<int>(o.max_side));
  g.input.height = uniform(rng, static_cast<int>(o.min_side), static_cast<int>(o.max_side));
  g.input.channels = uniform(rng, 1, 8);

  std::int64_t h = g.input.height, w = g.input.width, c = g.input.channels;
  int next_id = 0;
  auto width = [&] { return static_cast<std::int64_t>(uniform(rng, static_cast<int>(o.min_channels),
                                                              static_cast<int>(o.max_channels))); };
  auto can_down = [&](int factor) { return std::min(h, w) / factor >= 2; };
  auto add = [&](LayerNode n) {
    n.id = next_id++;
    g.layers.push_back(n);
    return n.id;
  };
  auto shrink = [&](int factor) {
    h /= factor;
    w /= factor;
  };

  // stem
  {
    LayerNode n;
    n.kind = LayerKind::Conv;
    n.kernel = uniform(rng, 0, 3) == 0 ? 1 : 3;
    n.stride = (can_down(2) && uniform(rng, 0, 2) == 0) ? 2 : 1;
    if (n.stride == 2) shrink(2);
    n.pool = (can_down(2) && uniform(rng, 0, 2) == 0) ? 2 : 1;
    if (n.pool == 2) shrink(2);
    n.out_channels = c = width();
    add(n);
  }

  const int units = uniform(rng, o.min_units, o.max_units);
  for (int u = 0; u < units; ++u) {
    const int pick = uniform(rng, 0, 9);
    if (pick <= 1) {
      LayerNode n;
      n.kind = LayerKind::PointwiseConv;
      n.out_channels = c = width();
      add(n);
    } else if (pick == 2) {
      LayerNode n;
      n.kind = LayerKind::DepthwiseConv;
      n.kernel = 3;
      n.stride = (can_down(2) && uniform(rng, 0, 1) == 0) ? 2 : 1;
      if (n.stride == 2) shrink(2);
      add(n);
    } else if (pick <= 5) {
      const int source = next_id - 1;
      LayerNode dw;
      dw.kind = LayerKind::DepthwiseConv;
      dw.kernel = 3;
      add(dw);
      LayerNode pw;
      pw.kind = LayerKind::PointwiseConv;
      pw.out_channels = c;
      add(pw);
      LayerNode sum;
      sum.kind = LayerKind::ResidualAdd;
      sum.residual_from = source;
      add(sum);
    } else if (pick == 6 && can_down(2)) {
      LayerNode n;
      n.kind = LayerKind::MaxPool;
      n.kernel = 2;
      n.stride = 2;
      shrink(2);
      add(n);
    } else if (pick == 7 && o.allow_concat) {
      const int source = next_id - 1;
      const std::int64_t before = c;
      LayerNode pw;
      pw.kind = LayerKind::PointwiseConv;
      pw.out_channels = width();
      add(pw);
      LayerNode cat;
      cat.kind = LayerKind::Concat;
      cat.residual_from = source;
      add(cat);
      c = pw.out_channels + before;
    } else {
      LayerNode n;
      n.kind = LayerKind::Conv;
      n.kernel = uniform(rng, 0, 2) == 0 ? 1 : 3;
      n.stride = (can_down(2) && uniform(rng, 0, 3) == 0) ? 2 : 1;
      if (n.stride == 2) shrink(2);
      n.pool = (can_down(2) && uniform(rng, 0, 3) == 0) ? 2 : 1;
      if (n.pool == 2) shrink(2);
      n.out_channels = c = width();
      add(n);
    }
  }
  if (o.allow_head && uniform(rng, 0, 1) == 0) {
    LayerNode head;
    head.kind = LayerKind::OutputHead;
    head.kernel = 1;
    head.out_channels = width();
    head.has_bn_relu = false;
    add(head);
  }
  return infer_shapes(std::move(g));
}

/// Sliding-window stage parameters along the row axis.
struct RowStage {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
};

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

/// Which output rows of the last layer are free of any seam padding: a row is clean
/// when every row it reads, at every stage, lies inside the tile that computes it
/// (or outside the frame, where padding matches the whole-frame run) and is itself
/// clean. Written from the receptive-field definition, independent of the simulator.
class SeamOracle {
 public:
  SeamOracle(const NetGraph& graph, const FusionPlan& plan, const std::vector<TilePlan>& tiles)
      : g_(graph), plan_(plan), tiles_(tiles), owner_(plan.group_of_layers(graph)) {
    for (std::size_t i = 0; i < g_.layers.size(); ++i) {
      if (i == 0 || owner_[i] != owner_[i - 1]) start_[owner_[i]] = i;
    }
  }

  bool clean(std::size_t index, std::int64_t row) {
    const auto key = std::make_pair(index, row);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    const bool value = compute(index, row);
    memo_[key] = value;
    return value;
  }

  std::vector<bool> clean_rows() {
    std::vector<bool> out;
    const auto& last = g_.layers.back();
    for (std::int64_t r = 0; r < last.output_shape->height; ++r) out.push_back(clean(g_.layers.size() - 1, r));
    return out;
  }

 private:
  using Range = std::pair<std::int64_t, std::int64_t>;

  std::vector<RowStage> stages(const LayerNode& l) const {
    std::vector<RowStage> s;
    switch (l.kind) {
      case LayerKind::MaxPool:
        s.push_back({l.kernel, l.stride, 0});
        break;
      case LayerKind::ResidualAdd:
      case LayerKind::Concat:
        s.push_back({1, 1, 0});
        break;
      default:
        s.push_back({l.kernel, l.stride, (l.kernel - 1) / 2});
        if (l.pool > 1) s.push_back({l.pool, l.pool, 0});
        break;
    }
    return s;
  }

  std::vector<std::int64_t> stage_heights(const LayerNode& l) const {
    std::vector<std::int64_t> hs{l.input_shape->height};
    for (const auto& s : stages(l)) hs.push_back(hs.back() / s.stride);
    return hs;
  }

  // Rows of tile t at the input of layer `index`.
  Range tile_input_rows(std::size_t index, std::int64_t t) const {
    const auto g = owner_[index];
    Range r = tiles_[g].tile_rows(t);
    for (std::size_t i = start_.at(g); i < index; ++i) {
      const auto& l = g_.layers[i];
      const auto hs = stage_heights(l);
      const auto st = stages(l);
      for (std::size_t k = 0; k < st.size(); ++k) r = {r.first / st[k].stride, std::min(ceil_div(r.second, st[k].stride), hs[k + 1])};
    }
    return r;
  }

  // Does row `row` of stage `k` output of layer `index`, computed by tile t, read only
  // clean rows held by tile t?
  bool stage_clean(std::size_t index, std::size_t k, std::int64_t row, std::int64_t t) {
    const auto& l = g_.layers[index];
    const auto st = stages(l);
    const auto hs = stage_heights(l);
    Range in = tile_input_rows(index, t);
    for (std::size_t j = 0; j < k; ++j) in = {in.first / st[j].stride, std::min(ceil_div(in.second, st[j].stride), hs[j + 1])};
    const auto& s = st[k];
    for (int d = 0; d < s.kernel; ++d) {
      const std::int64_t src = row * s.stride - s.pad + d;
      if (src < 0 || src >= hs[k]) continue;  // frame padding
      if (src < in.first || src >= in.second) return false;
      if (k == 0) {
        if (!input_clean(index, src)) return false;
      } else if (!stage_clean(index, k - 1, src, t)) {
        return false;
      }
    }
    return true;
  }

  bool input_clean(std::size_t index, std::int64_t row) {
    const auto& l = g_.layers[index];
    if (l.residual_from && !clean(*g_.index_of(*l.residual_from), row)) return false;
    if (index == 0) return true;
    return clean(index - 1, row);
  }

  bool compute(std::size_t index, std::int64_t row) {
    const auto& tp = tiles_[owner_[index]];
    const auto st = stages(g_.layers[index]);
    // the tile whose output range holds `row`
    for (std::int64_t t = 0; t < tp.tile_count; ++t) {
      Range r = tile_input_rows(index, t);
      const auto hs = stage_heights(g_.layers[index]);
      for (std::size_t k = 0; k < st.size(); ++k) r = {r.first / st[k].stride, std::min(ceil_div(r.second, st[k].stride), hs[k + 1])};
      if (row >= r.first && row < r.second) return stage_clean(index, st.size() - 1, row, t);
    }
    return false;
  }

  const NetGraph& g_;
  const FusionPlan& plan_;
  const std::vector<TilePlan>& tiles_;
  std::vector<std::size_t> owner_;
  std::map<std::size_t, std::size_t> start_;
  std::map<std::pair<std::size_t, std::int64_t>, bool> memo_;
};

}  // namespace testsupport
