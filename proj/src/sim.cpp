#include "rcfuse/sim.hpp"

#include <algorithm>
#include <bit>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace rcfuse {

namespace {

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

bool is_conv_like(const LayerNode& layer) {
  switch (layer.kind) {
    case LayerKind::Conv:
    case LayerKind::DepthwiseConv:
    case LayerKind::PointwiseConv:
    case LayerKind::OutputHead:
      return true;
    default:
      return false;
  }
}

std::string who(const LayerNode& layer) {
  return "layer " + std::to_string(layer.id) + " (" + std::string(to_string(layer.kind)) + ")";
}

void check_weights(const LayerNode& layer, const Tensor<std::int8_t>& input,
                   const LayerWeights& w) {
  if (!is_conv_like(layer)) throw ShapeMismatch(who(layer) + " is not a convolution");
  const bool dw = layer.kind == LayerKind::DepthwiseConv;
  const std::int64_t expect_in = dw ? 1 : input.channels();
  const std::int64_t expect_out = dw ? input.channels() : layer.out_channels;
  if (w.kernel != layer.kernel || w.in_channels != expect_in || w.out_channels != expect_out) {
    std::ostringstream os;
    os << who(layer) << ": weights are " << w.out_channels << "x" << w.in_channels << "x"
       << w.kernel << "x" << w.kernel << ", expected " << expect_out << "x" << expect_in << "x"
       << layer.kernel << "x" << layer.kernel;
    throw ShapeMismatch(os.str());
  }
  if (static_cast<std::int64_t>(w.kernel_data.size()) !=
          w.out_channels * w.in_channels * w.kernel * w.kernel ||
      static_cast<std::int64_t>(w.requant.size()) != w.out_channels) {
    throw ShapeMismatch(who(layer) + ": weight arrays have the wrong length");
  }
}

struct ConvGeometry {
  std::int64_t out_channels;
  std::int64_t out_rows;
  std::int64_t out_cols;
  std::int64_t pad_top;
  std::int64_t pad_left;
};

ConvGeometry geometry(const LayerNode& layer, const Tensor<std::int8_t>& input,
                      std::optional<ConvWindow> window) {
  const ConvWindow win = window ? *window : frame_window(layer, input.height());
  if (win.out_rows < 0) throw ShapeMismatch(who(layer) + ": negative output rows");
  const bool dw = layer.kind == LayerKind::DepthwiseConv;
  return {dw ? input.channels() : layer.out_channels, win.out_rows, input.width() / layer.stride,
          win.pad_top, (layer.kernel - 1) / 2};
}

}  // namespace

void ArchConfig::check() const {
  if (pe_blocks < 1 || block_rows < 1 || block_cols < 1 || clock_hz <= 0 ||
      weight_buffer_bytes < 1 || feature_half_bytes < 1 || banks < 1 || act_bits < 1 ||
      weight_bits < 1 || accum_bits < 2 || accum_bits > 32) {
    throw std::invalid_argument("architecture fields must be positive (accumulator 2..32 bits)");
  }
}

LayerWeights blank_weights(const LayerNode& layer) {
  if (!layer.input_shape) throw ShapeError("weights need inferred shapes");
  LayerWeights w;
  w.kernel = layer.kernel;
  if (layer.kind == LayerKind::DepthwiseConv) {
    w.out_channels = layer.input_shape->channels;
    w.in_channels = 1;
  } else {
    w.out_channels = layer.out_channels;
    w.in_channels = layer.input_shape->channels;
  }
  w.kernel_data.assign(static_cast<std::size_t>(w.out_channels * w.in_channels * w.kernel * w.kernel), 0);
  w.requant.assign(static_cast<std::size_t>(w.out_channels), Requant{});
  return w;
}

NetworkWeights random_weights(const NetGraph& graph, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  };
  NetworkWeights out;
  for (const auto& layer : graph.layers) {
    if (!is_conv_like(layer)) continue;
    LayerWeights w = blank_weights(layer);
    for (auto& v : w.kernel_data) v = static_cast<std::int8_t>(uniform(-16, 16));
    const std::int64_t fan_in = w.in_channels * w.kernel * w.kernel;
    const int shift = 6 + static_cast<int>(std::bit_width(static_cast<std::uint64_t>(fan_in))) / 2;
    for (auto& rq : w.requant) {
      rq.multiplier = uniform(1, 31);
      rq.shift = shift;
      rq.bias = uniform(-64, 64) << (shift - 2);
    }
    out.emplace(layer.id, std::move(w));
  }
  return out;
}

std::int32_t saturating_add(std::int32_t acc, std::int32_t value, int accum_bits) {
  const std::int64_t hi = (std::int64_t{1} << (accum_bits - 1)) - 1;
  const std::int64_t lo = -(std::int64_t{1} << (accum_bits - 1));
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(std::int64_t{acc} + value, lo, hi));
}

std::int8_t requantize(std::int32_t acc, const Requant& rq, bool relu6) {
  std::int64_t v = std::int64_t{acc} * rq.multiplier + rq.bias;
  if (rq.shift > 0) {
    const std::int64_t half = std::int64_t{1} << (rq.shift - 1);
    v = v >= 0 ? (v + half) >> rq.shift : -((-v + half) >> rq.shift);
  }
  const std::int64_t lo = relu6 ? 0 : -128;
  const std::int64_t hi = relu6 ? kRelu6Max : 127;
  return static_cast<std::int8_t>(std::clamp(v, lo, hi));
}

ConvWindow frame_window(const LayerNode& layer, std::int64_t input_height) {
  return {(layer.kernel - 1) / 2, input_height / layer.stride};
}

Tensor<std::int8_t> reference_conv(const LayerNode& layer, const Tensor<std::int8_t>& input,
                                   const LayerWeights& weights, std::optional<ConvWindow> window,
                                   int accum_bits) {
  check_weights(layer, input, weights);
  const auto g = geometry(layer, input, window);
  const bool dw = layer.kind == LayerKind::DepthwiseConv;
  const bool relu6 = layer.has_bn_relu && layer.kind != LayerKind::OutputHead;
  const int k = layer.kernel;
  const int s = layer.stride;

  Tensor<std::int8_t> out(g.out_channels, g.out_rows, g.out_cols);
  for (std::int64_t co = 0; co < g.out_channels; ++co) {
    for (std::int64_t y = 0; y < g.out_rows; ++y) {
      for (std::int64_t x = 0; x < g.out_cols; ++x) {
        std::int32_t acc = 0;
        const std::int64_t ci_begin = dw ? co : 0;
        const std::int64_t ci_end = dw ? co + 1 : input.channels();
        for (std::int64_t ci = ci_begin; ci < ci_end; ++ci) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const std::int32_t a = input.at_or(ci, y * s - g.pad_top + ky, x * s - g.pad_left + kx);
              const std::int32_t w = weights.at(co, dw ? 0 : ci, ky, kx);
              acc = saturating_add(acc, a * w, accum_bits);
            }
          }
        }
        out(co, y, x) = requantize(acc, weights.requant[static_cast<std::size_t>(co)], relu6);
      }
    }
  }
  return out;
}

Tensor<std::int8_t> dataflow_conv(const LayerNode& layer, const Tensor<std::int8_t>& input,
                                  const LayerWeights& weights, const ArchConfig& arch,
                                  std::optional<ConvWindow> window) {
  arch.check();
  check_weights(layer, input, weights);
  const auto g = geometry(layer, input, window);
  const bool dw = layer.kind == LayerKind::DepthwiseConv;
  const bool relu6 = layer.has_bn_relu && layer.kind != LayerKind::OutputHead;
  const int k = layer.kernel;
  const int s = layer.stride;
  const std::int64_t lanes = arch.block_rows;
  const std::int64_t blocks = arch.pe_blocks;
  const std::int64_t cols = arch.block_cols;

  // A pass feeds `cols` taps to every lane at once. 1x1 kernels spread the columns
  // over input channels, larger kernels over kernel columns of one (ci, ky).
  struct Tap {
    std::int64_t ci;
    int ky;
    int kx;
  };
  std::vector<std::vector<Tap>> passes;
  const std::int64_t in_count = dw ? 1 : input.channels();
  if (k == 1) {
    for (std::int64_t c0 = 0; c0 < in_count; c0 += cols) {
      std::vector<Tap> pass;
      for (std::int64_t ci = c0; ci < std::min(in_count, c0 + cols); ++ci) pass.push_back({ci, 0, 0});
      passes.push_back(std::move(pass));
    }
  } else {
    for (std::int64_t ci = 0; ci < in_count; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int k0 = 0; k0 < k; k0 += static_cast<int>(cols)) {
          std::vector<Tap> pass;
          for (int kx = k0; kx < std::min<int>(k, k0 + static_cast<int>(cols)); ++kx)
            pass.push_back({ci, ky, kx});
          passes.push_back(std::move(pass));
        }
  }

  Tensor<std::int8_t> out(g.out_channels, g.out_rows, g.out_cols);
  std::vector<std::int32_t> accum(static_cast<std::size_t>(blocks * lanes));
  for (std::int64_t co0 = 0; co0 < g.out_channels; co0 += blocks) {
    for (std::int64_t y = 0; y < g.out_rows; ++y) {
      for (std::int64_t x0 = 0; x0 < g.out_cols; x0 += lanes) {
        std::fill(accum.begin(), accum.end(), 0);
        for (const auto& pass : passes) {
          for (std::int64_t b = 0; b < blocks; ++b) {
            const std::int64_t co = co0 + b;
            if (co >= g.out_channels) break;  // idle block
            for (std::int64_t lane = 0; lane < lanes; ++lane) {
              const std::int64_t x = x0 + lane;
              if (x >= g.out_cols) break;  // padded lane
              std::int32_t& acc = accum[static_cast<std::size_t>(b * lanes + lane)];
              // partial sum travels down the diagonal, one tap per column
              for (const auto& tap : pass) {
                const std::int64_t ci = dw ? co : tap.ci;
                const std::int32_t a =
                    input.at_or(ci, y * s - g.pad_top + tap.ky, x * s - g.pad_left + tap.kx);
                const std::int32_t w = weights.at(co, dw ? 0 : tap.ci, tap.ky, tap.kx);
                acc = saturating_add(acc, a * w, arch.accum_bits);
              }
            }
          }
        }
        for (std::int64_t b = 0; b < blocks && co0 + b < g.out_channels; ++b) {
          const std::int64_t co = co0 + b;
          for (std::int64_t lane = 0; lane < lanes && x0 + lane < g.out_cols; ++lane) {
            out(co, y, x0 + lane) = requantize(accum[static_cast<std::size_t>(b * lanes + lane)],
                                               weights.requant[static_cast<std::size_t>(co)], relu6);
          }
        }
      }
    }
  }
  return out;
}

Tensor<std::int8_t> max_pool(const Tensor<std::int8_t>& input, int kernel, int stride,
                             std::optional<std::int64_t> out_rows) {
  if (kernel < 1 || stride < 1) throw std::invalid_argument("pool kernel and stride must be >= 1");
  const std::int64_t rows = out_rows ? *out_rows : input.height() / stride;
  Tensor<std::int8_t> out(input.channels(), rows, input.width() / stride);
  for (std::int64_t c = 0; c < out.channels(); ++c)
    for (std::int64_t y = 0; y < out.height(); ++y)
      for (std::int64_t x = 0; x < out.width(); ++x) {
        std::int8_t best = -128;
        for (int dy = 0; dy < kernel; ++dy)
          for (int dx = 0; dx < kernel; ++dx) {
            const std::int64_t iy = y * stride + dy;
            const std::int64_t ix = x * stride + dx;
            if (iy < input.height() && ix < input.width()) best = std::max(best, input(c, iy, ix));
          }
        out(c, y, x) = best;
      }
  return out;
}

Tensor<std::int8_t> residual_add(const Tensor<std::int8_t>& conv_path,
                                 const Tensor<std::int8_t>& skip) {
  if (conv_path.height() != skip.height() || conv_path.width() != skip.width()) {
    throw ShapeMismatch("residual inputs differ in spatial size");
  }
  Tensor<std::int8_t> out = conv_path;
  const std::int64_t shared = std::min(conv_path.channels(), skip.channels());
  for (std::int64_t c = 0; c < shared; ++c)
    for (std::int64_t y = 0; y < out.height(); ++y)
      for (std::int64_t x = 0; x < out.width(); ++x) {
        const int sum = int{conv_path(c, y, x)} + int{skip(c, y, x)};
        out(c, y, x) = static_cast<std::int8_t>(std::clamp(sum, -128, 127));
      }
  return out;
}

Tensor<std::int8_t> concat_channels(const Tensor<std::int8_t>& main,
                                    const Tensor<std::int8_t>& source) {
  if (main.height() != source.height() || main.width() != source.width()) {
    throw ShapeMismatch("concat inputs differ in spatial size");
  }
  Tensor<std::int8_t> out(main.channels() + source.channels(), main.height(), main.width());
  auto& d = out.data();
  std::copy(main.data().begin(), main.data().end(), d.begin());
  std::copy(source.data().begin(), source.data().end(),
            d.begin() + static_cast<std::ptrdiff_t>(main.data().size()));
  return out;
}

// ---------------------------------------------------------------------------
// cycle model

std::int64_t passes_per_row(const LayerNode& layer, const ArchConfig& arch) {
  if (!is_conv_like(layer)) return 0;
  const std::int64_t k = layer.kernel;
  const std::int64_t col_chunks = ceil_div(k, arch.block_cols);
  if (layer.kind == LayerKind::DepthwiseConv) {
    return k == 1 ? 1 : k * col_chunks;
  }
  const std::int64_t cin = layer.input_shape ? layer.input_shape->channels : layer.in_channels;
  return k == 1 ? ceil_div(cin, arch.block_cols) : cin * k * col_chunks;
}

std::int64_t layer_cycles(const LayerNode& layer, const ArchConfig& arch,
                          std::optional<std::int64_t> conv_rows) {
  if (!is_conv_like(layer)) return 0;
  if (!layer.conv_shape) throw ShapeError("cycle estimate needs inferred shapes");
  const auto& c = *layer.conv_shape;
  const std::int64_t rows = conv_rows ? *conv_rows : c.height;
  return ceil_div(c.width, arch.block_rows) * rows * ceil_div(c.channels, arch.pe_blocks) *
         passes_per_row(layer, arch);
}

namespace {

void finish_report(PerfReport& r, const NetGraph& graph, const ArchConfig& arch) {
  r.total_cycles = 0;
  r.total_macs = 0;
  r.low_utilization.clear();
  for (auto& lp : r.layers) {
    const auto& layer = graph.layer(lp.layer_id);
    lp.macs = layer_macs(layer);
    lp.utilization = lp.cycles > 0 ? static_cast<double>(lp.macs) /
                                         (static_cast<double>(lp.cycles) * arch.total_macs())
                                   : 0.0;
    if (lp.cycles > 0 && lp.utilization < 0.5) r.low_utilization.push_back(lp.layer_id);
    r.total_cycles += lp.cycles;
    r.total_macs += lp.macs;
  }
  r.peak_gops = arch.peak_gops();
  if (r.total_cycles > 0) {
    const double seconds = static_cast<double>(r.total_cycles) / arch.clock_hz;
    r.utilization = static_cast<double>(r.total_macs) /
                    (static_cast<double>(r.total_cycles) * arch.total_macs());
    r.achieved_gops = 2.0 * static_cast<double>(r.total_macs) / seconds * 1e-9;
    r.fps = 1.0 / seconds;
  } else {
    r.utilization = 0.0;
    r.achieved_gops = 0.0;
    r.fps = 0.0;
  }
}

}  // namespace

PerfReport estimate_cycles(const NetGraph& graph, const ArchConfig& arch) {
  arch.check();
  PerfReport r;
  for (const auto& layer : graph.layers) r.layers.push_back({layer.id, layer_cycles(layer, arch), 0, 0.0});
  finish_report(r, graph, arch);
  return r;
}

PerfReport estimate_cycles(const NetGraph& graph, const FusionPlan& plan,
                           const std::vector<TilePlan>& tiles, const ArchConfig& arch) {
  arch.check();
  if (tiles.size() != plan.groups.size()) {
    throw std::invalid_argument("one tile plan per fusion group is required");
  }
  PerfReport r;
  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    const std::size_t start = *graph.index_of(group.layer_ids.front());
    for (std::size_t i = start; i < start + group.layer_ids.size(); ++i) {
      const auto& layer = graph.layers[i];
      std::int64_t cycles = 0;
      for (std::int64_t t = 0; t < tiles[g].tile_count; ++t) {
        const auto in_rows = rows_at_layer_input(group, graph, i, tiles[g].tile_rows(t));
        const std::int64_t conv_h = layer.conv_shape->height;
        const std::int64_t s = layer.stride;
        const std::int64_t b = std::min(in_rows.first / s, conv_h);
        const std::int64_t e = std::min(ceil_div(in_rows.second, s), conv_h);
        cycles += layer_cycles(layer, arch, e - b);
      }
      r.layers.push_back({layer.id, cycles, 0, 0.0});
    }
  }
  finish_report(r, graph, arch);
  return r;
}

// ---------------------------------------------------------------------------
// functional network execution

namespace {

using RowMask = std::vector<bool>;

struct TileInput {
  Tensor<std::int8_t> main;
  RowMask main_mask;
  const Tensor<std::int8_t>* source = nullptr;
  RowMask source_mask;
  // global input rows [begin, end)
  std::int64_t begin = 0;
  std::int64_t end = 0;
  bool top_edge = true;
  bool bottom_edge = true;
};

struct TileOutput {
  Tensor<std::int8_t> data;
  RowMask mask;
};

RowMask pool_mask(const RowMask& in, int kernel, int stride, std::int64_t rows, bool bottom_edge) {
  RowMask out(static_cast<std::size_t>(rows), false);
  for (std::int64_t r = 0; r < rows; ++r) {
    bool bad = false;
    for (int d = 0; d < kernel; ++d) {
      const std::int64_t src = r * stride + d;
      if (src >= static_cast<std::int64_t>(in.size())) {
        bad = bad || !bottom_edge;
      } else {
        bad = bad || in[static_cast<std::size_t>(src)];
      }
    }
    out[static_cast<std::size_t>(r)] = bad;
  }
  return out;
}

std::int64_t shrink_count(std::int64_t begin, std::int64_t end, std::int64_t factor,
                          std::int64_t limit) {
  const std::int64_t b = std::min(begin / factor, limit);
  const std::int64_t e = std::min(ceil_div(end, factor), limit);
  return e - b;
}

// `whole_frame` selects the reference path (plain same padding); tiles go through
// boundary extension and the dataflow convolution.
TileOutput run_layer(const LayerNode& layer, const TileInput& in, const NetworkWeights& weights,
                     BoundaryPolicy policy, const ArchConfig& arch, bool whole_frame) {
  const std::int64_t rows = in.end - in.begin;
  const std::int64_t conv_rows = shrink_count(in.begin, in.end, layer.stride, layer.conv_shape->height);
  const std::int64_t out_rows =
      shrink_count(in.begin / layer.stride, in.begin / layer.stride + conv_rows, layer.pool,
                   layer.output_shape->height);

  TileOutput stage;
  if (is_conv_like(layer)) {
    const auto it = weights.find(layer.id);
    if (it == weights.end()) throw ShapeMismatch(who(layer) + ": no weights supplied");
    if (whole_frame) {
      stage.data = reference_conv(layer, in.main, it->second, frame_window(layer, rows), arch.accum_bits);
    } else {
      const auto ext = extend_boundary(in.main, policy, layer.kernel, in.top_edge, in.bottom_edge);
      stage.data = dataflow_conv(layer, ext, it->second, arch, ConvWindow{0, conv_rows});
    }
    const std::int64_t halo = (layer.kernel - 1) / 2;
    stage.mask.assign(static_cast<std::size_t>(conv_rows), false);
    for (std::int64_t j = 0; j < conv_rows; ++j) {
      bool bad = false;
      for (int ky = 0; ky < layer.kernel; ++ky) {
        const std::int64_t src = j * layer.stride - halo + ky;
        if (src < 0) {
          bad = bad || !in.top_edge;
        } else if (src >= rows) {
          bad = bad || !in.bottom_edge;
        } else {
          bad = bad || in.main_mask[static_cast<std::size_t>(src)];
        }
      }
      stage.mask[static_cast<std::size_t>(j)] = bad;
    }
  } else if (layer.kind == LayerKind::MaxPool) {
    stage.data = max_pool(in.main, layer.kernel, layer.stride, conv_rows);
    stage.mask = pool_mask(in.main_mask, layer.kernel, layer.stride, conv_rows, in.bottom_edge);
  } else {
    if (!in.source) throw ShapeMismatch(who(layer) + ": missing source map");
    if (layer.stride != 1) throw ShapeMismatch(who(layer) + ": merge layers cannot be strided");
    stage.data = layer.kind == LayerKind::ResidualAdd ? residual_add(in.main, *in.source)
                                                      : concat_channels(in.main, *in.source);
    stage.mask = in.main_mask;
    for (std::size_t r = 0; r < stage.mask.size(); ++r) {
      stage.mask[r] = stage.mask[r] || in.source_mask[r];
    }
  }

  if (layer.pool > 1) {
    const bool conv_bottom = in.bottom_edge;
    stage.mask = pool_mask(stage.mask, layer.pool, layer.pool, out_rows, conv_bottom);
    stage.data = max_pool(stage.data, layer.pool, layer.pool, out_rows);
  }
  return stage;
}

RowMask slice_mask(const RowMask& mask, std::int64_t begin, std::int64_t end) {
  return RowMask(mask.begin() + begin, mask.begin() + end);
}

}  // namespace

std::map<int, Tensor<std::int8_t>> run_reference(const NetGraph& graph,
                                                 const NetworkWeights& weights,
                                                 const Tensor<std::int8_t>& input) {
  const ArchConfig arch;
  std::map<int, Tensor<std::int8_t>> outputs;
  const Tensor<std::int8_t>* current = &input;
  for (const auto& layer : graph.layers) {
    if (!layer.output_shape) throw ShapeError("reference run needs inferred shapes");
    TileInput in;
    in.main = *current;
    in.main_mask.assign(static_cast<std::size_t>(current->height()), false);
    in.end = current->height();
    if (layer.residual_from) {
      in.source = &outputs.at(*layer.residual_from);
      in.source_mask.assign(static_cast<std::size_t>(in.source->height()), false);
    }
    auto out = run_layer(layer, in, weights, BoundaryPolicy::ZeroPad, arch, true);
    current = &outputs.insert_or_assign(layer.id, std::move(out.data)).first->second;
  }
  return outputs;
}

SimResult simulate_network(const NetGraph& graph, const FusionPlan& plan,
                           const std::vector<TilePlan>& tiles, const ArchConfig& arch,
                           const NetworkWeights* weights, const Tensor<std::int8_t>* input) {
  SimResult result;
  result.perf = estimate_cycles(graph, plan, tiles, arch);
  if (!weights || !input) return result;
  if (input->channels() != graph.input.channels || input->height() != graph.input.height ||
      input->width() != graph.input.width) {
    throw ShapeMismatch("input frame does not match the model input shape");
  }

  auto& outputs = result.layer_outputs;
  auto& masks = result.layer_seam_rows;
  for (const auto& layer : graph.layers) {
    const auto& s = *layer.output_shape;
    outputs[layer.id] = Tensor<std::int8_t>(s.channels, s.height, s.width);
    masks[layer.id] = RowMask(static_cast<std::size_t>(s.height), false);
  }
  const RowMask frame_mask(static_cast<std::size_t>(input->height()), false);

  for (std::size_t g = 0; g < plan.groups.size(); ++g) {
    const auto& group = plan.groups[g];
    const auto& tile_plan = tiles[g];
    const std::size_t start = *graph.index_of(group.layer_ids.front());
    for (std::int64_t t = 0; t < tile_plan.tile_count; ++t) {
      for (std::size_t i = start; i < start + group.layer_ids.size(); ++i) {
        const auto& layer = graph.layers[i];
        const auto rows = rows_at_layer_input(group, graph, i, tile_plan.tile_rows(t));
        if (rows.second <= rows.first) continue;
        const Tensor<std::int8_t>& producer = i == 0 ? *input : outputs.at(graph.layers[i - 1].id);
        const RowMask& producer_mask = i == 0 ? frame_mask : masks.at(graph.layers[i - 1].id);

        TileInput in;
        in.main = producer.rows(rows.first, rows.second);
        in.main_mask = slice_mask(producer_mask, rows.first, rows.second);
        in.begin = rows.first;
        in.end = rows.second;
        in.top_edge = rows.first == 0;
        in.bottom_edge = rows.second == producer.height();
        Tensor<std::int8_t> source_tile;
        if (layer.residual_from) {
          source_tile = outputs.at(*layer.residual_from).rows(rows.first, rows.second);
          in.source = &source_tile;
          in.source_mask = slice_mask(masks.at(*layer.residual_from), rows.first, rows.second);
        }
        auto out = run_layer(layer, in, *weights, tile_plan.boundary, arch, false);
        const std::int64_t out_begin =
            std::min(rows.first / layer.stride / layer.pool, layer.output_shape->height);
        outputs.at(layer.id).set_rows(out_begin, out.data);
        auto& mask = masks.at(layer.id);
        for (std::size_t r = 0; r < out.mask.size(); ++r) {
          mask[static_cast<std::size_t>(out_begin) + r] = out.mask[r];
        }
      }
    }
  }
  if (!graph.layers.empty()) {
    result.output = outputs.at(graph.layers.back().id);
    result.seam_rows = masks.at(graph.layers.back().id);
  }
  return result;
}

// ---------------------------------------------------------------------------
// raw tensor files

void write_raw(std::ostream& os, const Tensor<std::int8_t>& t) {
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.data().size()));
}

void write_raw(std::ostream& os, const Tensor<std::int32_t>& t) {
  for (std::int32_t v : t.data()) {
    const auto u = static_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                           static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
    os.write(bytes, 4);
  }
}

Tensor<std::int8_t> read_raw_int8(std::istream& is, std::int64_t channels, std::int64_t height,
                                  std::int64_t width) {
  Tensor<std::int8_t> t(channels, height, width);
  is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.data().size()));
  if (is.gcount() != static_cast<std::streamsize>(t.data().size())) {
    throw std::runtime_error("raw int8 tensor file is truncated");
  }
  return t;
}

Tensor<std::int32_t> read_raw_int32(std::istream& is, std::int64_t channels, std::int64_t height,
                                    std::int64_t width) {
  Tensor<std::int32_t> t(channels, height, width);
  for (auto& v : t.data()) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw std::runtime_error("raw int32 tensor file is truncated");
    v = static_cast<std::int32_t>(std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
                                  (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24));
  }
  return t;
}

Tensor<std::int8_t> random_tensor(std::int64_t channels, std::int64_t height, std::int64_t width,
                                  std::uint64_t seed, int low, int high) {
  std::mt19937_64 rng(seed);
  Tensor<std::int8_t> t(channels, height, width);
  const auto span = static_cast<std::uint64_t>(high - low + 1);
  for (auto& v : t.data()) v = static_cast<std::int8_t>(low + static_cast<int>(rng() % span));
  return t;
}

}  // namespace rcfuse
