#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"
#include "rcfuse/tensor.hpp"
#include "rcfuse/tiling.hpp"

namespace rcfuse {

class ShapeMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArchConfig {
  int pe_blocks = 8;
  int block_rows = 32;
  int block_cols = 3;
  double clock_hz = 3.0e8;
  Bytes weight_buffer_bytes = 96 * 1024;
  // One of the two ping-pong halves of the unified feature buffer.
  Bytes feature_half_bytes = 192 * 1024;
  int banks = 8;
  int act_bits = 8;
  int weight_bits = 8;
  int accum_bits = 24;

  int total_macs() const { return pe_blocks * block_rows * block_cols; }
  /// Two ops per MAC per cycle.
  double peak_gops() const { return 2.0 * total_macs() * clock_hz * 1e-9; }
  /// Throws std::invalid_argument on a non-positive field.
  void check() const;

  bool operator==(const ArchConfig&) const = default;
};

/// Folded BN scale and shift for one output channel: out = (acc * multiplier + bias) >> shift.
struct Requant {
  std::int32_t multiplier = 1;
  int shift = 0;
  std::int32_t bias = 0;

  bool operator==(const Requant&) const = default;
};

/// Kernel laid out [out][in][ky][kx]; depthwise layers use in == 1.
struct LayerWeights {
  std::int64_t out_channels = 0;
  std::int64_t in_channels = 0;
  int kernel = 1;
  std::vector<std::int8_t> kernel_data;
  std::vector<Requant> requant;

  std::int8_t at(std::int64_t co, std::int64_t ci, int ky, int kx) const {
    return kernel_data[static_cast<std::size_t>(((co * in_channels + ci) * kernel + ky) * kernel + kx)];
  }
  std::int8_t& at(std::int64_t co, std::int64_t ci, int ky, int kx) {
    return kernel_data[static_cast<std::size_t>(((co * in_channels + ci) * kernel + ky) * kernel + kx)];
  }
};

using NetworkWeights = std::map<int, LayerWeights>;

/// Zero-filled weights with identity requant sized for `layer`.
LayerWeights blank_weights(const LayerNode& layer);

/// Seeded random kernels and requant parameters for every weighted layer.
NetworkWeights random_weights(const NetGraph& graph, std::uint64_t seed);

/// ReLU6 upper bound: activations are Q4 fixed point, so 6.0 is 96.
inline constexpr std::int32_t kRelu6Max = 96;

std::int32_t saturating_add(std::int32_t acc, std::int32_t value, int accum_bits);
/// Round half away from zero, then clamp to int8 (or [0, 96] when relu6).
std::int8_t requantize(std::int32_t acc, const Requant& rq, bool relu6);

/// Vertical extent of a convolution: output row r reads input rows r*stride - pad_top + ky.
/// Horizontal padding is always (k - 1) / 2 on both sides.
struct ConvWindow {
  std::int64_t pad_top = 0;
  std::int64_t out_rows = 0;
};

/// Same padding over the whole map.
ConvWindow frame_window(const LayerNode& layer, std::int64_t input_height);

/// Direct convolution (Conv, DepthwiseConv, PointwiseConv, OutputHead) with 24-bit
/// saturating accumulation in (input channel, ky, kx) order and requantization.
/// The fused pool attribute is not applied here.
Tensor<std::int8_t> reference_conv(const LayerNode& layer, const Tensor<std::int8_t>& input,
                                   const LayerWeights& weights,
                                   std::optional<ConvWindow> window = std::nullopt,
                                   int accum_bits = 24);

/// Same result, computed the way the PE array does. Each PE block owns one output
/// channel with consecutive output columns down its rows. Its three columns take
/// three kernel taps per pass, or three input channels for 1x1 kernels.
Tensor<std::int8_t> dataflow_conv(const LayerNode& layer, const Tensor<std::int8_t>& input,
                                  const LayerWeights& weights, const ArchConfig& arch = {},
                                  std::optional<ConvWindow> window = std::nullopt);

/// Window max over rows [r*stride, r*stride + k) clipped to the map.
Tensor<std::int8_t> max_pool(const Tensor<std::int8_t>& input, int kernel, int stride,
                             std::optional<std::int64_t> out_rows = std::nullopt);

/// Output keeps the conv-path channel count. Shared channels are summed with int8
/// saturation; any other conv channel passes through unchanged.
Tensor<std::int8_t> residual_add(const Tensor<std::int8_t>& conv_path,
                                 const Tensor<std::int8_t>& skip);

Tensor<std::int8_t> concat_channels(const Tensor<std::int8_t>& main,
                                    const Tensor<std::int8_t>& source);

struct LayerPerf {
  int layer_id = 0;
  std::int64_t cycles = 0;
  std::int64_t macs = 0;
  double utilization = 0.0;

  bool operator==(const LayerPerf&) const = default;
};

struct PerfReport {
  std::vector<LayerPerf> layers;
  std::int64_t total_cycles = 0;
  std::int64_t total_macs = 0;
  double utilization = 0.0;
  double achieved_gops = 0.0;
  double peak_gops = 0.0;
  double fps = 0.0;
  // Weighted layers below half utilization.
  std::vector<int> low_utilization;

  bool operator==(const PerfReport&) const = default;
};

/// PE-array passes each output row needs.
std::int64_t passes_per_row(const LayerNode& layer, const ArchConfig& arch);

/// Cycles to produce `conv_rows` rows of the layer's pre-pool output; 0 for
/// weightless kinds.
std::int64_t layer_cycles(const LayerNode& layer, const ArchConfig& arch,
                          std::optional<std::int64_t> conv_rows = std::nullopt);

/// Whole-frame cycle estimate.
PerfReport estimate_cycles(const NetGraph& graph, const ArchConfig& arch = {});

/// Cycle estimate following the tile schedule of every group.
PerfReport estimate_cycles(const NetGraph& graph, const FusionPlan& plan,
                           const std::vector<TilePlan>& tiles, const ArchConfig& arch = {});

struct SimResult {
  PerfReport perf;
  // Present when weights and an input frame were supplied.
  std::optional<Tensor<std::int8_t>> output;
  // Per output row of the final layer: true when its value depends on seam padding.
  std::vector<bool> seam_rows;
  // Same, for every layer's output map.
  std::map<int, std::vector<bool>> layer_seam_rows;
  std::map<int, Tensor<std::int8_t>> layer_outputs;
};

/// Whole-frame functional execution with the reference convolution.
std::map<int, Tensor<std::int8_t>> run_reference(const NetGraph& graph,
                                                 const NetworkWeights& weights,
                                                 const Tensor<std::int8_t>& input);

/// Replays every group tile by tile with the dataflow convolution. Without weights
/// or input only the performance report is produced.
SimResult simulate_network(const NetGraph& graph, const FusionPlan& plan,
                           const std::vector<TilePlan>& tiles, const ArchConfig& arch = {},
                           const NetworkWeights* weights = nullptr,
                           const Tensor<std::int8_t>* input = nullptr);

/// Raw files hold channel-major planes, each row-major, little-endian for multi-byte
/// elements. No header.
void write_raw(std::ostream& os, const Tensor<std::int8_t>& t);
void write_raw(std::ostream& os, const Tensor<std::int32_t>& t);
Tensor<std::int8_t> read_raw_int8(std::istream& is, std::int64_t channels, std::int64_t height,
                                  std::int64_t width);
Tensor<std::int32_t> read_raw_int32(std::istream& is, std::int64_t channels, std::int64_t height,
                                    std::int64_t width);

Tensor<std::int8_t> random_tensor(std::int64_t channels, std::int64_t height, std::int64_t width,
                                  std::uint64_t seed, int low = -128, int high = 127);

}  // namespace rcfuse
