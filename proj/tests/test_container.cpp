#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lavit/container.hpp"
#include "lavit/rng.hpp"

using namespace lavit;
namespace fs = std::filesystem;

namespace {
std::string tmp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("round-trip is bit-identical") {
  Rng rng(1);
  TensorContainer c;
  c.put("a", Tensor({2, 2}, {1.0, -2.5, 3.25, 1e-300}));
  c.put("b/nested", rng.randn({3, 5, 2}));
  c.put("scalar", Tensor::scalar(0.1));
  const std::string path = tmp_path("lvt_roundtrip.lvt");
  c.write(path);
  TensorContainer r = TensorContainer::read(path);
  CHECK(r.size() == 3);
  for (const auto& name : c.names()) {
    const Tensor& x = c.get(name);
    const Tensor& y = r.get(name);
    REQUIRE(x.same_shape(y));
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(x.at(i) == y.at(i));
  }
}

TEST_CASE("f32 entries quantize on put and round-trip bit-identically") {
  TensorContainer c;
  c.put("payload", Tensor({3}, {0.1, 0.2, 0.3}), 1);
  CHECK(c.get("payload").at(0) == static_cast<double>(static_cast<float>(0.1)));
  const std::string path = tmp_path("lvt_f32.lvt");
  c.write(path);
  TensorContainer r = TensorContainer::read(path);
  for (int64_t i = 0; i < 3; ++i) CHECK(r.get("payload").at(i) == c.get("payload").at(i));
}

TEST_CASE("empty container is valid") {
  TensorContainer c;
  const std::string path = tmp_path("lvt_empty.lvt");
  c.write(path);
  TensorContainer r = TensorContainer::read(path);
  CHECK(r.size() == 0);
}

TEST_CASE("duplicate names rejected") {
  TensorContainer c;
  c.put("x", Tensor::scalar(1));
  CHECK_THROWS_AS(c.put("x", Tensor::scalar(2)), ValueError);
}

TEST_CASE("bad magic rejected") {
  const std::string path = tmp_path("lvt_badmagic.lvt");
  std::ofstream(path, std::ios::binary) << "NOPE extra bytes";
  CHECK_THROWS_AS(TensorContainer::read(path), IoError);
}

TEST_CASE("truncated payload errors with a byte offset") {
  TensorContainer c;
  c.put("t", Tensor({4}, {1, 2, 3, 4}));
  const std::string path = tmp_path("lvt_trunc.lvt");
  c.write(path);
  const auto full = fs::file_size(path);
  fs::resize_file(path, full - 9);
  try {
    TensorContainer::read(path);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
}

TEST_CASE("missing entry lookup names the entry") {
  TensorContainer c;
  try {
    c.get("ghost");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}
