#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rcfuse {

using Bytes = std::int64_t;

/// Raised when shape inference produces an empty map or a layer is malformed.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a residual/concat source cannot be combined with the main path.
class DanglingResidual : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class LayerKind {
  Conv,
  DepthwiseConv,
  PointwiseConv,
  MaxPool,
  ResidualAdd,
  Concat,
  OutputHead,
};

std::string_view to_string(LayerKind kind);
/// Accepts the short file names ("conv", "dwconv", ...) and the long enum names.
LayerKind parse_layer_kind(std::string_view text);

struct TensorShape {
  std::int64_t width = 1;
  std::int64_t height = 1;
  std::int64_t channels = 1;

  std::int64_t pixels() const { return width * height; }
  std::int64_t elements() const { return width * height * channels; }
  bool valid() const { return width >= 1 && height >= 1 && channels >= 1; }

  auto operator<=>(const TensorShape&) const = default;
};

struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::Conv;
  int kernel = 1;
  int stride = 1;
  // 2 means a fused 2x2/2 max pool after the layer; 1 means none.
  int pool = 1;
  // Filled by infer_shapes from the producing layer.
  std::int64_t in_channels = 0;
  // Required for Conv/PointwiseConv/OutputHead; derived for the other kinds.
  std::int64_t out_channels = 0;
  bool has_bn_relu = true;
  std::optional<int> residual_from;

  std::optional<TensorShape> input_shape;
  std::optional<TensorShape> output_shape;
  // Main-path map after the conv but before the fused pool (== output when pool == 1).
  std::optional<TensorShape> conv_shape;
  // Shape of the residual/concat source map, when residual_from is set.
  std::optional<TensorShape> source_shape;

  bool is_weighted() const;
  bool is_downsampling() const;
  /// Conv/pointwise layers that own their output channels and carry a BN scale.
  bool owns_prunable_channels() const;

  bool operator==(const LayerNode&) const = default;
};

struct NetGraph {
  std::string name;
  TensorShape input;
  std::vector<LayerNode> layers;

  std::optional<std::size_t> index_of(int id) const;
  const LayerNode& layer(int id) const;
  LayerNode& layer(int id);

  bool operator==(const NetGraph&) const = default;
};

/// Annotates every layer with input/output shapes. Idempotent.
NetGraph infer_shapes(NetGraph graph);

/// Returns a copy with a new frame size and shapes re-inferred.
NetGraph with_input(NetGraph graph, TensorShape input);

struct WeightOptions {
  int bytes_per_weight = 1;
  // Folded BN shift stored as one value per output channel.
  bool count_bias = false;
};

/// Parameter count of the layer (bytes at one byte per weight).
std::int64_t layer_params(const LayerNode& layer);
Bytes layer_weight_bytes(const LayerNode& layer, int bytes_per_weight = 1);
Bytes layer_weight_bytes(const LayerNode& layer, const WeightOptions& options);

std::int64_t model_params(const NetGraph& graph);
Bytes model_weight_bytes(const NetGraph& graph, const WeightOptions& options = {});

/// Multiply-accumulates per frame; 0 for weightless kinds.
std::int64_t layer_macs(const LayerNode& layer);
std::int64_t model_macs(const NetGraph& graph);

struct FeatureBytes {
  Bytes in_bytes = 0;
  Bytes out_bytes = 0;
};

/// Input map bytes (plus the residual/concat source map) and output map bytes.
FeatureBytes layer_feature_bytes(const LayerNode& layer, int bytes_per_activation = 1);

/// Human-readable invariant violations; empty iff the graph is well formed.
std::vector<std::string> validate(const NetGraph& graph);

/// Index of the layer that feeds `index` on the main path; nullopt for the frame input.
std::optional<std::size_t> main_producer(const NetGraph& graph, std::size_t index);

}  // namespace rcfuse
