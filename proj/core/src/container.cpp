#include "lavit/container.hpp"

#include <cstring>
#include <fstream>

namespace lavit {

namespace {

constexpr char kMagic[4] = {'L', 'V', 'T', '1'};

void write_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

struct Reader {
  std::ifstream f;
  uint64_t offset = 0;
  std::string path;

  void read_bytes(void* p, size_t n, const char* what) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(f.gcount()) != n)
      throw IoError(path + ": truncated " + what + " at byte offset " + std::to_string(offset));
    offset += n;
  }
  bool at_eof() {
    f.peek();
    return f.eof();
  }
};

}  // namespace

void TensorContainer::put(const std::string& name, const Tensor& t, int dtype) {
  if (dtype != 1 && dtype != 2) throw ValueError("TensorContainer: dtype code must be 1 or 2");
  if (entries_.count(name)) throw ValueError("TensorContainer: duplicate name '" + name + "'");
  Entry e{t.clone(), dtype};
  if (dtype == 1) {
    // Store-and-promote through f32 now so get() reflects file precision.
    for (auto& v : *e.tensor.data) v = static_cast<double>(static_cast<float>(v));
  }
  entries_.emplace(name, std::move(e));
}

const Tensor& TensorContainer::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw IoError("TensorContainer: missing entry '" + name + "'");
  return it->second.tensor;
}

std::vector<std::string> TensorContainer::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

void TensorContainer::write(const std::string& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("TensorContainer: cannot open '" + path + "' for writing");
  write_bytes(f, kMagic, 4);
  for (const auto& [name, e] : entries_) {
    const uint32_t name_len = static_cast<uint32_t>(name.size());
    write_bytes(f, &name_len, 4);
    write_bytes(f, name.data(), name.size());
    const uint8_t dtype = static_cast<uint8_t>(e.dtype);
    const uint8_t rank = static_cast<uint8_t>(e.tensor.rank());
    write_bytes(f, &dtype, 1);
    write_bytes(f, &rank, 1);
    for (int64_t ext : e.tensor.shape) {
      const uint64_t v = static_cast<uint64_t>(ext);
      write_bytes(f, &v, 8);
    }
    if (e.dtype == 1) {
      std::vector<float> buf(e.tensor.data->begin(), e.tensor.data->end());
      write_bytes(f, buf.data(), buf.size() * 4);
    } else {
      write_bytes(f, e.tensor.data->data(), e.tensor.data->size() * 8);
    }
  }
  if (!f) throw IoError("TensorContainer: write to '" + path + "' failed");
}

TensorContainer TensorContainer::read(const std::string& path) {
  Reader r;
  r.path = path;
  r.f.open(path, std::ios::binary);
  if (!r.f) throw IoError("TensorContainer: cannot open '" + path + "'");
  char magic[4];
  r.read_bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw IoError(path + ": bad magic bytes (not an LVT1 container)");

  TensorContainer out;
  while (!r.at_eof()) {
    uint32_t name_len = 0;
    r.read_bytes(&name_len, 4, "name length");
    std::string name(name_len, '\0');
    r.read_bytes(name.data(), name_len, "name");
    uint8_t dtype = 0, rank = 0;
    r.read_bytes(&dtype, 1, "dtype");
    r.read_bytes(&rank, 1, "rank");
    if (dtype != 1 && dtype != 2)
      throw IoError(path + ": bad dtype code " + std::to_string(dtype) + " at byte offset " +
                    std::to_string(r.offset - 1));
    std::vector<int64_t> shape(rank);
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      uint64_t ext = 0;
      r.read_bytes(&ext, 8, "extent");
      shape[static_cast<size_t>(i)] = static_cast<int64_t>(ext);
      numel *= shape[static_cast<size_t>(i)];
    }
    Tensor t = Tensor::zeros(shape);
    if (dtype == 1) {
      std::vector<float> buf(static_cast<size_t>(numel));
      r.read_bytes(buf.data(), buf.size() * 4, "payload");
      for (int64_t i = 0; i < numel; ++i) t.at(i) = static_cast<double>(buf[static_cast<size_t>(i)]);
    } else {
      r.read_bytes(t.data->data(), static_cast<size_t>(numel) * 8, "payload");
    }
    if (out.entries_.count(name))
      throw IoError(path + ": duplicate entry name '" + name + "'");
    out.entries_.emplace(name, Entry{std::move(t), dtype});
  }
  return out;
}

}  // namespace lavit
