#include "rcfuse/netir.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <sstream>
#include <utility>

namespace rcfuse {

namespace {

struct KindName {
  LayerKind kind;
  std::string_view short_name;
  std::string_view long_name;
};

constexpr std::array<KindName, 7> kKindNames{{
    {LayerKind::Conv, "conv", "Conv"},
    {LayerKind::DepthwiseConv, "dwconv", "DepthwiseConv"},
    {LayerKind::PointwiseConv, "pwconv", "PointwiseConv"},
    {LayerKind::MaxPool, "maxpool", "MaxPool"},
    {LayerKind::ResidualAdd, "add", "Residual-Add"},
    {LayerKind::Concat, "concat", "Concat"},
    {LayerKind::OutputHead, "head", "Output-Head"},
}};

std::string describe(const LayerNode& layer) {
  std::ostringstream os;
  os << "layer " << layer.id << " (" << to_string(layer.kind) << ")";
  return os.str();
}

bool is_conv_kind(LayerKind kind) {
  return kind == LayerKind::Conv || kind == LayerKind::DepthwiseConv ||
         kind == LayerKind::PointwiseConv || kind == LayerKind::OutputHead;
}

bool takes_source(LayerKind kind) {
  return kind == LayerKind::ResidualAdd || kind == LayerKind::Concat;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  for (const auto& entry : kKindNames) {
    if (entry.kind == kind) return entry.short_name;
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view text) {
  for (const auto& entry : kKindNames) {
    if (text == entry.short_name || text == entry.long_name) return entry.kind;
  }
  throw std::invalid_argument("unknown layer kind '" + std::string(text) + "'");
}

bool LayerNode::is_weighted() const {
  return is_conv_kind(kind);
}

bool LayerNode::is_downsampling() const {
  return stride > 1 || pool > 1 || kind == LayerKind::MaxPool;
}

bool LayerNode::owns_prunable_channels() const {
  return has_bn_relu && (kind == LayerKind::Conv || kind == LayerKind::PointwiseConv);
}

std::optional<std::size_t> NetGraph::index_of(int id) const {
  // ids are strictly increasing in a valid graph
  auto it = std::lower_bound(layers.begin(), layers.end(), id,
                             [](const LayerNode& l, int v) { return l.id < v; });
  if (it != layers.end() && it->id == id) {
    return static_cast<std::size_t>(it - layers.begin());
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].id == id) return i;
  }
  return std::nullopt;
}

const LayerNode& NetGraph::layer(int id) const {
  auto idx = index_of(id);
  if (!idx) throw std::out_of_range("no layer with id " + std::to_string(id));
  return layers[*idx];
}

LayerNode& NetGraph::layer(int id) {
  auto idx = index_of(id);
  if (!idx) throw std::out_of_range("no layer with id " + std::to_string(id));
  return layers[*idx];
}

std::optional<std::size_t> main_producer(const NetGraph& graph, std::size_t index) {
  (void)graph;
  if (index == 0) return std::nullopt;
  return index - 1;
}

NetGraph infer_shapes(NetGraph graph) {
  if (!graph.input.valid()) throw ShapeError("input shape must be at least 1x1x1");
  TensorShape current = graph.input;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    LayerNode& layer = graph.layers[i];
    layer.in_channels = current.channels;
    layer.input_shape = current;
    layer.source_shape.reset();

    if (layer.kernel < 1) throw ShapeError(describe(layer) + ": kernel must be >= 1");
    if (layer.stride < 1) throw ShapeError(describe(layer) + ": stride must be >= 1");
    if (layer.pool < 1) throw ShapeError(describe(layer) + ": pool must be >= 1");

    TensorShape conv = current;
    switch (layer.kind) {
      case LayerKind::Conv:
      case LayerKind::PointwiseConv:
      case LayerKind::OutputHead:
        if (layer.out_channels < 1) {
          throw ShapeError(describe(layer) + ": out_channels must be >= 1");
        }
        conv = {current.width / layer.stride, current.height / layer.stride, layer.out_channels};
        break;
      case LayerKind::DepthwiseConv:
        if (layer.out_channels == 0) layer.out_channels = current.channels;
        conv = {current.width / layer.stride, current.height / layer.stride, current.channels};
        break;
      case LayerKind::MaxPool:
        layer.out_channels = current.channels;
        conv = {current.width / layer.stride, current.height / layer.stride, current.channels};
        break;
      case LayerKind::ResidualAdd:
      case LayerKind::Concat: {
        if (!layer.residual_from) {
          throw DanglingResidual(describe(layer) + ": missing residual_from");
        }
        auto src = graph.index_of(*layer.residual_from);
        if (!src || *src >= i) {
          throw DanglingResidual(describe(layer) + ": residual_from must name an earlier layer");
        }
        const TensorShape source = *graph.layers[*src].output_shape;
        if (source.width != current.width || source.height != current.height) {
          throw DanglingResidual(describe(layer) + ": source map " + std::to_string(source.width) +
                                 "x" + std::to_string(source.height) + " does not match " +
                                 std::to_string(current.width) + "x" +
                                 std::to_string(current.height));
        }
        layer.source_shape = source;
        // Residual output keeps the conv-path channel count; extra skip channels are
        // discarded and extra conv channels pass through.
        const auto channels = layer.kind == LayerKind::Concat
                                  ? current.channels + source.channels
                                  : current.channels;
        layer.out_channels = channels;
        conv = {current.width / layer.stride, current.height / layer.stride, channels};
        break;
      }
    }
    layer.conv_shape = conv;
    TensorShape out = conv;
    out.width /= layer.pool;
    out.height /= layer.pool;
    if (!out.valid()) {
      throw ShapeError(describe(layer) + ": output map collapses to " + std::to_string(out.width) +
                       "x" + std::to_string(out.height) + "x" + std::to_string(out.channels));
    }
    layer.output_shape = out;
    current = out;
  }
  return graph;
}

NetGraph with_input(NetGraph graph, TensorShape input) {
  graph.input = input;
  return infer_shapes(std::move(graph));
}

std::int64_t layer_params(const LayerNode& layer) {
  const std::int64_t kk = static_cast<std::int64_t>(layer.kernel) * layer.kernel;
  switch (layer.kind) {
    case LayerKind::Conv:
    case LayerKind::OutputHead:
      return kk * layer.in_channels * layer.out_channels;
    case LayerKind::DepthwiseConv:
      return kk * layer.in_channels;
    case LayerKind::PointwiseConv:
      return layer.in_channels * layer.out_channels;
    default:
      return 0;
  }
}

Bytes layer_weight_bytes(const LayerNode& layer, int bytes_per_weight) {
  return layer_params(layer) * bytes_per_weight;
}

Bytes layer_weight_bytes(const LayerNode& layer, const WeightOptions& options) {
  Bytes bytes = layer_params(layer) * options.bytes_per_weight;
  if (options.count_bias && layer.is_weighted()) bytes += layer.out_channels;
  return bytes;
}

std::int64_t model_params(const NetGraph& graph) {
  std::int64_t total = 0;
  for (const auto& layer : graph.layers) total += layer_params(layer);
  return total;
}

Bytes model_weight_bytes(const NetGraph& graph, const WeightOptions& options) {
  Bytes total = 0;
  for (const auto& layer : graph.layers) total += layer_weight_bytes(layer, options);
  return total;
}

std::int64_t layer_macs(const LayerNode& layer) {
  if (!layer.is_weighted() || !layer.conv_shape) return 0;
  return layer_params(layer) * layer.conv_shape->pixels();
}

std::int64_t model_macs(const NetGraph& graph) {
  std::int64_t total = 0;
  for (const auto& layer : graph.layers) total += layer_macs(layer);
  return total;
}

FeatureBytes layer_feature_bytes(const LayerNode& layer, int bytes_per_activation) {
  FeatureBytes fb;
  if (layer.input_shape) fb.in_bytes = layer.input_shape->elements() * bytes_per_activation;
  if (layer.source_shape) fb.in_bytes += layer.source_shape->elements() * bytes_per_activation;
  if (layer.output_shape) fb.out_bytes = layer.output_shape->elements() * bytes_per_activation;
  return fb;
}

std::vector<std::string> validate(const NetGraph& graph) {
  std::vector<std::string> out;
  std::set<int> seen;
  int previous_id = 0;
  for (std::size_t i = 0; i < graph.layers.size(); ++i) {
    const LayerNode& layer = graph.layers[i];
    const std::string who = describe(layer);
    if (!seen.insert(layer.id).second) out.push_back(who + ": duplicate id");
    if (i > 0 && layer.id <= previous_id) out.push_back(who + ": ids must be strictly increasing");
    previous_id = layer.id;

    if (layer.kernel < 1) out.push_back(who + ": kernel must be >= 1");
    if (layer.stride < 1) out.push_back(who + ": stride must be >= 1");
    if (layer.pool != 1 && layer.pool != 2) out.push_back(who + ": pool must be 1 or 2");
    if (is_conv_kind(layer.kind) && layer.kernel % 2 == 0) {
      out.push_back(who + ": convolution kernel must be odd");
    }
    if (layer.kind == LayerKind::PointwiseConv && layer.kernel != 1) {
      out.push_back(who + ": pointwise convolution must use a 1x1 kernel");
    }
    if ((layer.kind == LayerKind::Conv || layer.kind == LayerKind::PointwiseConv ||
         layer.kind == LayerKind::OutputHead) &&
        layer.out_channels < 1) {
      out.push_back(who + ": out_channels must be >= 1");
    }
    if (takes_source(layer.kind)) {
      if (!layer.residual_from) {
        out.push_back(who + ": residual_from is required");
      } else if (*layer.residual_from >= layer.id || !graph.index_of(*layer.residual_from)) {
        out.push_back(who + ": residual_from must reference an earlier layer");
      }
    } else if (layer.residual_from) {
      out.push_back(who + ": residual_from is only allowed on add/concat layers");
    }
  }
  if (!graph.input.valid()) out.push_back("input shape must be at least 1x1x1");
  if (!out.empty()) return out;

  // Structural checks passed; channel and map checks need inferred shapes.
  try {
    NetGraph shaped = infer_shapes(graph);
    for (const auto& layer : shaped.layers) {
      if (layer.kind == LayerKind::DepthwiseConv && layer.out_channels != layer.in_channels) {
        out.push_back(describe(layer) + ": depthwise in_channels " +
                      std::to_string(layer.in_channels) + " != out_channels " +
                      std::to_string(layer.out_channels));
      }
    }
  } catch (const std::exception& e) {
    out.emplace_back(e.what());
  }
  return out;
}

}  // namespace rcfuse
