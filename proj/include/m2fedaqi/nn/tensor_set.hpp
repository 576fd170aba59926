#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m2fedaqi/bytes.hpp"
#include "m2fedaqi/error.hpp"
#include "m2fedaqi/nn/tensor.hpp"

namespace m2fedaqi::nn {

struct EntryLayout {
  std::string name;
  std::vector<std::int64_t> shape;
  std::size_t offset = 0;

  std::size_t numel() const;
  bool operator==(const EntryLayout&) const = default;
};

/// Ordered manifest of named tensors packed back to back in one flat vector.
class Layout {
 public:
  void append(std::string name, std::vector<std::int64_t> shape);

  const std::vector<EntryLayout>& entries() const { return entries_; }
  std::size_t total_size() const { return total_; }
  bool empty() const { return entries_.empty(); }

  std::optional<std::size_t> find(std::string_view name) const;
  bool contains(std::string_view name) const { return find(name).has_value(); }
  const EntryLayout& at(std::string_view name) const;

  /// Stable hash over names, shapes and order.
  std::uint64_t hash() const;

  /// Manifest form: u32 entry count, then per entry u32 name length, UTF-8
  /// name, u32 rank, u64 dims.
  void encode(ByteWriter& out) const;
  static Layout decode(ByteReader& in);

  bool operator==(const Layout&) const = default;

 private:
  std::vector<EntryLayout> entries_;
  std::size_t total_ = 0;
};

struct ParameterTag {};
struct GradientTag {};

/// A layout plus one contiguous value buffer. Instantiated as ParameterSet
/// (trainable weights) and GradientSet (dL/dtheta with the identical layout).
template <typename Scalar, typename Tag>
class TensorSet {
 public:
  TensorSet() = default;
  explicit TensorSet(Layout layout)
      : layout_(std::move(layout)), values_(Vector<Scalar>::Zero(static_cast<Index>(layout_.total_size()))) {}

  static TensorSet restore(Layout layout, std::span<const Scalar> flat) {
    if (flat.size() != layout.total_size()) {
      throw CodecError("restore_params: expected " + std::to_string(layout.total_size()) +
                       " values, got " + std::to_string(flat.size()));
    }
    TensorSet out(std::move(layout));
    std::copy(flat.begin(), flat.end(), out.values_.data());
    return out;
  }

  std::vector<Scalar> flatten() const {
    return std::vector<Scalar>(values_.data(), values_.data() + values_.size());
  }

  const Layout& layout() const { return layout_; }
  Vector<Scalar>& values() { return values_; }
  const Vector<Scalar>& values() const { return values_; }
  std::span<const Scalar> span() const { return {values_.data(), static_cast<std::size_t>(values_.size())}; }

  bool contains(std::string_view name) const { return layout_.contains(name); }

  /// Rank-2 entry viewed as a row-major matrix.
  MatrixMap<Scalar> matrix(std::string_view name) {
    const auto& e = entry(name, 2);
    return MatrixMap<Scalar>(values_.data() + e.offset, e.shape[0], e.shape[1]);
  }
  ConstMatrixMap<Scalar> matrix(std::string_view name) const {
    const auto& e = entry(name, 2);
    return ConstMatrixMap<Scalar>(values_.data() + e.offset, e.shape[0], e.shape[1]);
  }
  VectorMap<Scalar> vector(std::string_view name) {
    const auto& e = entry(name, 1);
    return VectorMap<Scalar>(values_.data() + e.offset, e.shape[0]);
  }
  ConstVectorMap<Scalar> vector(std::string_view name) const {
    const auto& e = entry(name, 1);
    return ConstVectorMap<Scalar>(values_.data() + e.offset, e.shape[0]);
  }

  template <typename Other>
  TensorSet<Other, Tag> cast() const {
    TensorSet<Other, Tag> out(layout_);
    out.values() = values_.template cast<Other>();
    return out;
  }

  bool operator==(const TensorSet& other) const {
    return layout_ == other.layout_ && values_.size() == other.values_.size() &&
           std::equal(values_.data(), values_.data() + values_.size(), other.values_.data());
  }

 private:
  const EntryLayout& entry(std::string_view name, std::size_t rank) const {
    const auto& e = layout_.at(name);
    if (e.shape.size() != rank) {
      throw LayoutError("entry '" + e.name + "' has rank " + std::to_string(e.shape.size()) +
                        ", requested rank " + std::to_string(rank));
    }
    return e;
  }

  Layout layout_;
  Vector<Scalar> values_;
};

template <typename Scalar>
using ParameterSet = TensorSet<Scalar, ParameterTag>;
template <typename Scalar>
using GradientSet = TensorSet<Scalar, GradientTag>;

template <typename Scalar>
GradientSet<Scalar> zero_gradients(const ParameterSet<Scalar>& params) {
  return GradientSet<Scalar>(params.layout());
}

/// theta <- theta - lr * g for every entry. Plain SGD, no momentum.
template <typename Scalar>
void sgd_step(ParameterSet<Scalar>& params, const GradientSet<Scalar>& grads, Scalar lr) {
  if (!(params.layout() == grads.layout())) {
    throw LayoutError("sgd_step: gradient layout (hash " + std::to_string(grads.layout().hash()) +
                      ") differs from parameter layout (hash " +
                      std::to_string(params.layout().hash()) + ")");
  }
  params.values() -= lr * grads.values();
}

/// ParameterSet file/wire form: layout manifest followed by little-endian f32 values.
void encode_parameters(const ParameterSet<float>& params, ByteWriter& out);
ParameterSet<float> decode_parameters(ByteReader& in);

}  // namespace m2fedaqi::nn
