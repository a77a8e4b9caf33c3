#pragma once

#include <map>
#include <string>
#include <vector>

#include "lavit/tensor.hpp"

namespace lavit {

/// Binary tensor container.
///
/// Layout (all integers little-endian):
///   magic "LVT1"
///   entries until EOF:
///     u32  name length, name bytes
///     u8   dtype code (1 = f32, 2 = f64)
///     u8   rank
///     u64  extent per dimension
///     payload, row-major (4 or 8 bytes per element)
///
/// Round-trips are bit-identical; duplicate names and truncated files are
/// rejected with the failing byte offset.
class TensorContainer {
 public:
  /// dtype: 1 stores f32 (teacher payloads), 2 stores f64 (checkpoints).
  void put(const std::string& name, const Tensor& t, int dtype = 2);
  bool contains(const std::string& name) const { return entries_.count(name) > 0; }
  /// Values promoted to f64 on read regardless of stored dtype.
  const Tensor& get(const std::string& name) const;
  std::vector<std::string> names() const;
  size_t size() const { return entries_.size(); }

  void write(const std::string& path) const;
  static TensorContainer read(const std::string& path);

 private:
  struct Entry {
    Tensor tensor;
    int dtype;
  };
  std::map<std::string, Entry> entries_;
};

}  // namespace lavit
