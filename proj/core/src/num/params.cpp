#include "m4c/num/params.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "m4c/errors.hpp"

namespace m4c::num {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

Tensor& ParameterSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw ValidationError("duplicate parameter name: " + name);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(value));
  return entries_.back().second;
}

bool ParameterSet::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

Tensor& ParameterSet::get(std::string_view name) {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ValidationError("unknown parameter: " + std::string(name));
  return entries_[it->second].second;
}

const Tensor& ParameterSet::get(std::string_view name) const {
  return const_cast<ParameterSet*>(this)->get(name);
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [_, t] : entries_) out.push_back(t);
  return out;
}

ParameterSet ParameterSet::clone() const {
  ParameterSet copy;
  for (const auto& [name, t] : entries_) copy.add(name, t.clone());
  return copy;
}

void ParameterSet::assign_values(const ParameterSet& other) {
  if (other.size() != size()) throw ValidationError("parameter sets differ in size");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [name, t] = entries_[i];
    const auto& [oname, ot] = other.entries_[i];
    if (name != oname || t.shape() != ot.shape()) {
      throw ValidationError("parameter mismatch: " + name + shape_str(t.shape()) + " vs " +
                            oname + shape_str(ot.shape()));
    }
    std::memcpy(t.mutable_data().data(), ot.data().data(), t.numel() * sizeof(double));
  }
}

void ParameterSet::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

namespace {

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw ParseError("checkpoint truncated", 0);
  }
  return v;
}

}  // namespace

void write_checkpoint(const ParameterSet& params, std::ostream& out) {
  out.write("M4C1", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint");
}

ParameterSet read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "M4C1", 4) != 0) {
    throw ParseError("not an M4C1 checkpoint", 0);
  }
  const auto version = take<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 0);
  }
  const auto count = take<std::uint32_t>(in);
  ParameterSet params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = take<std::uint32_t>(in);
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw ParseError("checkpoint truncated", 0);
    const auto rank = take<std::uint32_t>(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(take<std::uint64_t>(in));
    std::vector<double> data(shape_numel(shape));
    if (!in.read(reinterpret_cast<char*>(data.data()),
                 static_cast<std::streamsize>(data.size() * sizeof(double)))) {
      throw ParseError("checkpoint truncated in " + name, 0);
    }
    params.add(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
  }
  return params;
}

void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open " + path.string() + " for writing");
  write_checkpoint(params, out);
}

ParameterSet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace m4c::num
