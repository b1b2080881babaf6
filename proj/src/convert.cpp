#include "rcfuse/convert.hpp"

#include <map>

namespace rcfuse {

namespace {

std::string join_violations(const std::vector<std::string>& violations) {
  std::string text;
  for (const auto& v : violations) {
    if (!text.empty()) text += "; ";
    text += v;
  }
  return text;
}

}  // namespace

NetGraph to_lightweight(const NetGraph& graph, const ConversionOptions& options) {
  if (auto violations = validate(graph); !violations.empty()) {
    throw ConversionError("cannot convert invalid graph: " + join_violations(violations));
  }
  const NetGraph shaped = infer_shapes(graph);

  NetGraph out;
  out.name = graph.name;
  out.input = graph.input;

  // old id -> new id of the layer producing the equivalent output map
  std::map<int, int> remap;
  int next_id = 0;
  auto emit = [&](LayerNode node) {
    node.id = next_id++;
    node.input_shape.reset();
    node.output_shape.reset();
    node.conv_shape.reset();
    node.source_shape.reset();
    out.layers.push_back(node);
    return node.id;
  };

  for (std::size_t i = 0; i < shaped.layers.size(); ++i) {
    const LayerNode& layer = shaped.layers[i];
    // -1 when the block would read the frame input directly
    const int block_input = out.layers.empty() ? -1 : out.layers.back().id;

    const bool pinned = i == 0 && options.pin_first_layer;
    if (layer.kind != LayerKind::Conv || pinned) {
      LayerNode copy = layer;
      if (copy.residual_from) copy.residual_from = remap.at(*copy.residual_from);
      if (copy.kind == LayerKind::DepthwiseConv || copy.kind == LayerKind::MaxPool ||
          copy.kind == LayerKind::ResidualAdd || copy.kind == LayerKind::Concat) {
        copy.out_channels = 0;
      }
      remap[layer.id] = emit(copy);
      continue;
    }

    if (layer.kernel == 1) {
      LayerNode pw = layer;
      pw.kind = LayerKind::PointwiseConv;
      remap[layer.id] = emit(pw);
      continue;
    }

    LayerNode dw;
    dw.kind = LayerKind::DepthwiseConv;
    dw.kernel = 3;
    dw.stride = layer.stride;
    dw.has_bn_relu = true;
    emit(dw);

    LayerNode pw;
    pw.kind = LayerKind::PointwiseConv;
    pw.kernel = 1;
    pw.out_channels = layer.out_channels;
    pw.has_bn_relu = layer.has_bn_relu;

    const bool residual =
        block_input >= 0 && layer.in_channels == layer.out_channels && layer.stride == 1;
    if (!residual) {
      pw.pool = layer.pool;
      remap[layer.id] = emit(pw);
      continue;
    }
    emit(pw);
    LayerNode add;
    add.kind = LayerKind::ResidualAdd;
    add.has_bn_relu = false;
    add.residual_from = block_input;
    int last = emit(add);
    if (layer.pool > 1) {
      LayerNode pool;
      pool.kind = LayerKind::MaxPool;
      pool.kernel = layer.pool;
      pool.stride = layer.pool;
      pool.has_bn_relu = false;
      last = emit(pool);
    }
    remap[layer.id] = last;
  }
  return infer_shapes(std::move(out));
}

ModelStats model_stats(const NetGraph& graph, int bytes_per_activation) {
  const NetGraph shaped = infer_shapes(graph);
  ModelStats stats;
  for (const auto& layer : shaped.layers) {
    stats.params += layer_params(layer);
    stats.macs += layer_macs(layer);
    const auto fb = layer_feature_bytes(layer, bytes_per_activation);
    stats.feature_io_bytes += fb.in_bytes + fb.out_bytes;
  }
  return stats;
}

ConversionReport conversion_report(const NetGraph& before, const NetGraph& after) {
  return {model_stats(before), model_stats(after)};
}

}  // namespace rcfuse
