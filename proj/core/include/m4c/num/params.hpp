#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "m4c/num/tensor.hpp"

namespace m4c::num {

/// Ordered, uniquely named collection of learnable tensors.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);

  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  // Handles sharing storage with this set, in insertion order.
  std::vector<Tensor> tensors() const;

  // Deep copy with fresh storage.
  ParameterSet clone() const;
  // Overwrites values in place; names and shapes must match.
  void assign_values(const ParameterSet& other);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binary checkpoint: "M4C1", u32 version, u32 count, then per parameter
// u32 name length, name bytes, u32 rank, u64 dims, raw little-endian f64.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const ParameterSet& params, std::ostream& out);
ParameterSet read_checkpoint(std::istream& in);
void save_checkpoint(const ParameterSet& params, const std::filesystem::path& path);
ParameterSet load_checkpoint(const std::filesystem::path& path);

}  // namespace m4c::num
