#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "rcfuse/fusion.hpp"
#include "rcfuse/netir.hpp"
#include "rcfuse/tensor.hpp"

namespace rcfuse {

enum class BoundaryPolicy { ZeroPad, Replicate };

std::string_view to_string(BoundaryPolicy policy);
BoundaryPolicy parse_boundary_policy(std::string_view text);

/// Area downsampling factor of a map relative to its group input, as a ratio of
/// powers of the layer strides (independent of floor rounding of map sizes).
struct PoolingFactor {
  std::int64_t horizontal = 1;
  std::int64_t vertical = 1;

  std::int64_t area() const { return horizontal * vertical; }
};

struct LayerOccupancy {
  int layer_id = 0;
  Bytes input_bytes = 0;
  Bytes output_bytes = 0;

  bool operator==(const LayerOccupancy&) const = default;
};

struct TilePlan {
  std::size_t group_index = 0;
  // Tiles span the whole width of the group input map.
  std::int64_t tile_width = 0;
  std::int64_t tile_height = 0;
  // Largest height the occupancy bound allows, before row alignment.
  std::int64_t max_tile_height = 0;
  // Tile heights are multiples of this so downsampled tiles stay disjoint.
  std::int64_t row_alignment = 1;
  std::int64_t tile_count = 0;
  std::int64_t frame_height = 0;
  std::vector<LayerOccupancy> occupancy;
  BoundaryPolicy boundary = BoundaryPolicy::ZeroPad;
  bool feasible = true;

  /// Rows [begin, end) of tile t at the group input.
  std::pair<std::int64_t, std::int64_t> tile_rows(std::int64_t tile) const;

  bool operator==(const TilePlan&) const = default;
};

class TileInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Downsampling factor of layer `index`'s input and output maps within the group.
std::pair<PoolingFactor, PoolingFactor> pooling_factors(const FusionGroup& group,
                                                        const NetGraph& graph, std::size_t index);

/// Bytes one map of a tile occupies: (tile_elems / PF) * channels * bytes_per_activation,
/// rounded up.
Bytes tile_map_bytes(std::int64_t tile_elems, PoolingFactor pf, std::int64_t channels,
                     int bytes_per_activation);

/// Largest full-width tile whose every layer input and output map fits one buffer half.
/// Throws TileInfeasible when not even a single aligned row fits.
TilePlan solve_tile(const FusionGroup& group, const NetGraph& graph, Bytes feature_half_bytes,
                    BoundaryPolicy boundary = BoundaryPolicy::ZeroPad,
                    int bytes_per_activation = 1);

/// One plan per group; infeasible groups are flagged instead of throwing and are
/// executed as a single whole-map tile.
std::vector<TilePlan> plan_tiles(const FusionPlan& plan, const NetGraph& graph,
                                 Bytes feature_half_bytes,
                                 BoundaryPolicy boundary = BoundaryPolicy::ZeroPad,
                                 int bytes_per_activation = 1);

enum class BufferHalf { Left, Right };

std::string_view to_string(BufferHalf half);

struct ScheduleStep {
  std::int64_t tile = 0;
  int layer_id = 0;
  BufferHalf input_half = BufferHalf::Left;
  BufferHalf output_half = BufferHalf::Right;

  bool operator==(const ScheduleStep&) const = default;
};

struct PingPongSchedule {
  std::size_t group_index = 0;
  std::vector<ScheduleStep> steps;
  std::int64_t external_loads = 0;
  std::int64_t external_stores = 0;

  bool operator==(const PingPongSchedule&) const = default;
};

/// Tiles run in order with their layers in order; the halves swap after every layer.
PingPongSchedule make_schedule(const FusionGroup& group, const TilePlan& plan);

struct OccupancyPeak {
  Bytes left = 0;
  Bytes right = 0;
};

/// Replays the schedule with the real (floor-rounded) tile maps and reports the
/// largest map held in each half.
OccupancyPeak replay_occupancy(const PingPongSchedule& schedule, const FusionGroup& group,
                               const TilePlan& plan, const NetGraph& graph,
                               int bytes_per_activation = 1);

/// Rows of a tile at the input of graph layer `index`, given its group-input rows.
std::pair<std::int64_t, std::int64_t> rows_at_layer_input(const FusionGroup& group,
                                                          const NetGraph& graph,
                                                          std::size_t index,
                                                          std::pair<std::int64_t, std::int64_t> rows);

/// Adds (k - 1) / 2 rows above and below a C x H x W tile. Seams use `policy`;
/// frame edges are always zero so they match whole-frame same padding.
template <class T>
Tensor<T> extend_boundary(const Tensor<T>& tile, BoundaryPolicy policy, int kernel,
                          bool top_is_frame_edge = false, bool bottom_is_frame_edge = false) {
  const std::int64_t halo = (kernel - 1) / 2;
  if (halo == 0) return tile;
  Tensor<T> out(tile.channels(), tile.height() + 2 * halo, tile.width());
  for (std::int64_t c = 0; c < tile.channels(); ++c) {
    for (std::int64_t y = 0; y < out.height(); ++y) {
      const std::int64_t src = y - halo;
      const bool above = src < 0;
      const bool below = src >= tile.height();
      if (!above && !below) {
        for (std::int64_t x = 0; x < tile.width(); ++x) out(c, y, x) = tile(c, src, x);
        continue;
      }
      const bool frame_edge = above ? top_is_frame_edge : bottom_is_frame_edge;
      if (policy == BoundaryPolicy::ZeroPad || frame_edge || tile.height() == 0) continue;
      const std::int64_t edge = above ? 0 : tile.height() - 1;
      for (std::int64_t x = 0; x < tile.width(); ++x) out(c, y, x) = tile(c, edge, x);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// write-mask transposed addressing

inline constexpr int kBanks = 8;
inline constexpr int kLanes = 8;

struct BankAddress {
  int bank = 0;
  std::int64_t word = 0;
  int byte_lane = 0;

  auto operator<=>(const BankAddress&) const = default;
};

/// Channel c of spatial position s lands in bank c mod 8, byte lane s mod 8, word
/// (c div 8) * ceil(S / 8) + (s div 8), where S is the map's spatial size.
BankAddress writemask_map(std::int64_t spatial, std::int64_t channel, std::int64_t spatial_count);

/// Eight byte-writable SRAM banks.
template <class T>
class BankedBuffer {
 public:
  BankedBuffer(std::int64_t words_per_bank)
      : words_(words_per_bank),
        data_(static_cast<std::size_t>(kBanks * words_per_bank * kLanes)),
        written_(data_.size(), false) {}

  /// Byte-masked write: only `lane` of the addressed word changes.
  void write(const BankAddress& addr, const T& value) {
    const auto i = offset(addr);
    data_[i] = value;
    written_[i] = true;
  }

  std::array<T, kLanes> read_word(int bank, std::int64_t word) const {
    std::array<T, kLanes> out{};
    for (int lane = 0; lane < kLanes; ++lane) out[lane] = data_[offset({bank, word, lane})];
    return out;
  }

  bool written(const BankAddress& addr) const { return written_[offset(addr)]; }
  std::int64_t words_per_bank() const { return words_; }

 private:
  std::size_t offset(const BankAddress& a) const {
    if (a.bank < 0 || a.bank >= kBanks || a.byte_lane < 0 || a.byte_lane >= kLanes ||
        a.word < 0 || a.word >= words_) {
      throw std::out_of_range("bank address outside buffer");
    }
    return static_cast<std::size_t>((a.bank * words_ + a.word) * kLanes + a.byte_lane);
  }

  std::int64_t words_;
  std::vector<T> data_;
  std::vector<bool> written_;
};

template <class T>
struct RoundtripResult {
  // values in the order the next layer reads them: channel by channel, positions ascending
  std::vector<T> spatial_major;
  // write cycles where two of the eight channel outputs hit the same bank
  std::int64_t bank_conflicts = 0;
};

/// Writes a position-by-position stream (all channels of position 0, then position
/// 1, ...) through the write-mask map and reads it back word by word per channel.
template <class T>
RoundtripResult<T> roundtrip_check(std::span<const T> channel_major, std::int64_t spatial_count,
                                   std::int64_t channels) {
  if (static_cast<std::int64_t>(channel_major.size()) != spatial_count * channels) {
    throw std::invalid_argument("stream size does not match spatial_count * channels");
  }
  const std::int64_t words_per_group = (spatial_count + kLanes - 1) / kLanes;
  const std::int64_t groups = (channels + kBanks - 1) / kBanks;
  BankedBuffer<T> buffer(std::max<std::int64_t>(1, words_per_group * groups));
  RoundtripResult<T> result;

  for (std::int64_t s = 0; s < spatial_count; ++s) {
    // one write cycle per eight channels of a position
    for (std::int64_t c0 = 0; c0 < channels; c0 += kBanks) {
      std::array<bool, kBanks> used{};
      for (std::int64_t c = c0; c < std::min(channels, c0 + kBanks); ++c) {
        const auto addr = writemask_map(s, c, spatial_count);
        if (used[static_cast<std::size_t>(addr.bank)]) ++result.bank_conflicts;
        used[static_cast<std::size_t>(addr.bank)] = true;
        buffer.write(addr, channel_major[static_cast<std::size_t>(s * channels + c)]);
      }
    }
  }

  result.spatial_major.reserve(channel_major.size());
  for (std::int64_t c = 0; c < channels; ++c) {
    const int bank = static_cast<int>(c % kBanks);
    const std::int64_t base = (c / kBanks) * words_per_group;
    for (std::int64_t w = 0; w < words_per_group; ++w) {
      const auto word = buffer.read_word(bank, base + w);
      for (int lane = 0; lane < kLanes; ++lane) {
        if (w * kLanes + lane < spatial_count) result.spatial_major.push_back(word[lane]);
      }
    }
  }
  return result;
}

/// One line per write: spatial channel bank word lane.
void write_address_trace(std::ostream& os, std::int64_t spatial_count, std::int64_t channels);

}  // namespace rcfuse
