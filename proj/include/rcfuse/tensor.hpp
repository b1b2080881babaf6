#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace rcfuse {

/// Dense C x H x W map stored as channel-major planes (row-major inside a plane).
template <class T>
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::int64_t channels, std::int64_t height, std::int64_t width, T fill = T{})
      : c_(channels), h_(height), w_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw std::invalid_argument("tensor dimensions must be non-negative");
    }
    data_.assign(static_cast<std::size_t>(channels * height * width), fill);
  }

  std::int64_t channels() const { return c_; }
  std::int64_t height() const { return h_; }
  std::int64_t width() const { return w_; }
  std::int64_t size() const { return c_ * h_ * w_; }

  T& operator()(std::int64_t c, std::int64_t y, std::int64_t x) {
    return data_[static_cast<std::size_t>((c * h_ + y) * w_ + x)];
  }
  const T& operator()(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return data_[static_cast<std::size_t>((c * h_ + y) * w_ + x)];
  }

  /// Bounds-checked read returning `outside` beyond the map.
  T at_or(std::int64_t c, std::int64_t y, std::int64_t x, T outside = T{}) const {
    if (c < 0 || c >= c_ || y < 0 || y >= h_ || x < 0 || x >= w_) return outside;
    return (*this)(c, y, x);
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  /// Rows [begin, end) of every channel.
  Tensor rows(std::int64_t begin, std::int64_t end) const {
    if (begin < 0 || end > h_ || begin > end) throw std::out_of_range("row slice outside tensor");
    Tensor out(c_, end - begin, w_);
    for (std::int64_t c = 0; c < c_; ++c)
      for (std::int64_t y = begin; y < end; ++y)
        for (std::int64_t x = 0; x < w_; ++x) out(c, y - begin, x) = (*this)(c, y, x);
    return out;
  }

  /// Copies `src` into rows starting at `begin`.
  void set_rows(std::int64_t begin, const Tensor& src) {
    if (src.c_ != c_ || src.w_ != w_ || begin < 0 || begin + src.h_ > h_) {
      throw std::out_of_range("row block does not fit tensor");
    }
    for (std::int64_t c = 0; c < c_; ++c)
      for (std::int64_t y = 0; y < src.h_; ++y)
        for (std::int64_t x = 0; x < w_; ++x) (*this)(c, begin + y, x) = src(c, y, x);
  }

  bool operator==(const Tensor&) const = default;

 private:
  std::int64_t c_ = 0;
  std::int64_t h_ = 0;
  std::int64_t w_ = 0;
  std::vector<T> data_;
};

}  // namespace rcfuse
