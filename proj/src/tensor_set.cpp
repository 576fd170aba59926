#include "m2fedaqi/nn/tensor_set.hpp"

#include <functional>
#include <numeric>

namespace m2fedaqi::nn {

std::size_t EntryLayout::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, std::int64_t d) { return acc * static_cast<std::size_t>(d); });
}

void Layout::append(std::string name, std::vector<std::int64_t> shape) {
  if (contains(name)) throw LayoutError("duplicate entry '" + name + "'");
  for (auto d : shape) {
    if (d <= 0) throw LayoutError("entry '" + name + "' has non-positive dimension");
  }
  EntryLayout e{std::move(name), std::move(shape), total_};
  total_ += e.numel();
  entries_.push_back(std::move(e));
}

std::optional<std::size_t> Layout::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  return std::nullopt;
}

const EntryLayout& Layout::at(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw LayoutError("no entry named '" + std::string(name) + "'");
  return entries_[*idx];
}

std::uint64_t Layout::hash() const {
  ByteWriter w;
  encode(w);
  return fnv1a(w.bytes());
}

void Layout::encode(ByteWriter& out) const {
  out.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    out.str(e.name);
    out.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) out.u64(static_cast<std::uint64_t>(d));
  }
}

Layout Layout::decode(ByteReader& in) {
  Layout layout;
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.str();
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw CodecError("entry '" + name + "' has implausible rank " + std::to_string(rank));
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) {
      const std::uint64_t v = in.u64();
      if (v == 0 || v > (1ULL << 40)) throw CodecError("entry '" + name + "' has invalid dimension");
      d = static_cast<std::int64_t>(v);
    }
    try {
      layout.append(std::move(name), std::move(shape));
    } catch (const LayoutError& e) {
      throw CodecError(e.what());
    }
  }
  return layout;
}

void encode_parameters(const ParameterSet<float>& params, ByteWriter& out) {
  params.layout().encode(out);
  out.f32_array(params.span());
}

ParameterSet<float> decode_parameters(ByteReader& in) {
  Layout layout = Layout::decode(in);
  if (in.remaining() < 4 * layout.total_size()) {
    throw CodecError("parameter payload: expected " + std::to_string(4 * layout.total_size()) +
                     " bytes, got " + std::to_string(in.remaining()));
  }
  std::vector<float> flat(layout.total_size());
  in.f32_array(flat);
  return ParameterSet<float>::restore(std::move(layout), flat);
}

}  // namespace m2fedaqi::nn
