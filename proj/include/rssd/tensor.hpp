#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <new>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rssd/error.hpp"

namespace rssd {

// Dense (n, c, h, w) extent.
struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool operator==(const Shape4&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Rank-4 tensor stored row-major in (n, c, h, w) order.
//
// A default-constructed tensor is the empty placeholder; every tensor built
// from a shape has all dimensions >= 1.
// Storage with a fixed 64-byte base alignment. Eigen's vectorized
// matrix-vector kernels peel differently depending on pointer alignment,
// which otherwise makes results differ in the last bits between runs.
inline constexpr std::size_t kTensorAlignment = 64;

template <typename T>
struct AlignedAllocator {
  using value_type = T;
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t{kTensorAlignment}));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, std::align_val_t{kTensorAlignment}); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;

  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    check_shape(shape);
    data_.assign(shape.size(), fill);
  }

  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}

  Tensor4(Shape4 shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    check_shape(shape);
    if (data_.size() != shape.size()) {
      throw DimensionError("data", "length " + std::to_string(data_.size()) +
                                       " does not match shape " + shape.str());
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }

  T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T> values() const { return {data_.begin(), data_.end()}; }

  // One (h, w) plane of image `n`, channel `c`.
  std::span<T> plane(std::size_t n, std::size_t c) {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }

  // All channels of image `n`.
  std::span<T> image(std::size_t n) {
    return {data_.data() + index(n, 0, 0, 0), shape_.c * shape_.plane()};
  }
  std::span<const T> image(std::size_t n) const {
    return {data_.data() + index(n, 0, 0, 0), shape_.c * shape_.plane()};
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor4& operator+=(const Tensor4& other) {
    if (other.shape_ != shape_) {
      throw DimensionError("shape", shape_.str() + " += " + other.shape_.str());
    }
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor4<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor4&) const = default;

 private:
  static void check_shape(const Shape4& s) {
    const std::array<std::pair<const char*, std::size_t>, 4> axes{
        {{"n", s.n}, {"c", s.c}, {"h", s.h}, {"w", s.w}}};
    for (const auto& [name, v] : axes) {
      if (v == 0) throw DimensionError(name, "dimension must be >= 1 in " + s.str());
    }
  }

  Shape4 shape_{};
  AlignedVector<T> data_;
};

template <typename T>
T dot(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("shape", "dot of " + a.shape().str() + " and " + b.shape().str());
  }
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

// ---------------------------------------------------------------------------
// Binary tensor record: magic "RT4\0", four little-endian u32 extents, then
// little-endian IEEE-754 binary64 values in (n, c, h, w) order.

inline constexpr std::array<char, 4> kTensorMagic{'R', 'T', '4', '\0'};

namespace detail {

template <typename U>
void write_le(std::ostream& os, U value) {
  static_assert(std::is_trivially_copyable_v<U>);
  std::array<char, sizeof(U)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& is) {
  std::array<char, sizeof(U)> bytes;
  if (!is.read(bytes.data(), bytes.size())) throw DataError("truncated tensor record");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  U value;
  std::memcpy(&value, bytes.data(), sizeof(U));
  return value;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
  os.write(kTensorMagic.data(), kTensorMagic.size());
  for (std::size_t d : {t.n(), t.c(), t.h(), t.w()}) {
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  }
  for (T v : t.data()) detail::write_le<double>(os, static_cast<double>(v));
  if (!os) throw DataError("failed writing tensor record");
}

template <typename T>
Tensor4<T> read_tensor(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size())) throw DataError("truncated tensor record");
  if (magic != kTensorMagic) throw DataError("bad tensor magic");
  Shape4 s;
  s.n = detail::read_le<std::uint32_t>(is);
  s.c = detail::read_le<std::uint32_t>(is);
  s.h = detail::read_le<std::uint32_t>(is);
  s.w = detail::read_le<std::uint32_t>(is);
  if (s.size() == 0) throw DataError("tensor record with zero extent " + s.str());
  std::vector<T> data(s.size());
  for (auto& v : data) v = static_cast<T>(detail::read_le<double>(is));
  return Tensor4<T>(s, std::move(data));
}

}  // namespace rssd
