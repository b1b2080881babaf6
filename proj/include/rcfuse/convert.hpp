#pragma once

#include <cstdint>
#include <stdexcept>

#include "rcfuse/netir.hpp"

namespace rcfuse {

class ConversionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConversionOptions {
  // Keep the stem convolution dense; a depthwise stem on 3 input channels is useless.
  bool pin_first_layer = true;
};

/// Replaces every dense convolution with a 3x3 depthwise + pointwise block and wraps
/// the block in a residual add when the channel count and resolution are preserved.
/// 1x1 dense convolutions become plain pointwise layers. Layers are renumbered from 0.
NetGraph to_lightweight(const NetGraph& graph, const ConversionOptions& options = {});

struct ModelStats {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  Bytes feature_io_bytes = 0;

  std::int64_t ops() const { return 2 * macs; }
};

ModelStats model_stats(const NetGraph& graph, int bytes_per_activation = 1);

struct ConversionReport {
  ModelStats before;
  ModelStats after;

  std::int64_t param_delta() const { return after.params - before.params; }
  std::int64_t mac_delta() const { return after.macs - before.macs; }
  Bytes feature_io_delta() const { return after.feature_io_bytes - before.feature_io_bytes; }
};

ConversionReport conversion_report(const NetGraph& before, const NetGraph& after);

}  // namespace rcfuse
