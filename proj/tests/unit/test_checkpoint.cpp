#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "avatar/checkpoint.hpp"
#include "avatar/errors.hpp"
#include "support.hpp"

using namespace avatar;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("avatar_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Checkpoint sample() {
  Checkpoint ck;
  ck.meta = {{"iteration", 42}, {"note", "x"}};
  ck.tensors["basis"] = testsupport::random_tensor({3, 5}, 1);
  ck.tensors["adam.m/basis"] = testsupport::random_tensor({3, 5}, 2);
  ck.tensors["scalar"] = Tensor({1}, 3.25);
  return ck;
}

}  // namespace

TEST_CASE("checkpoint: round trip is exact") {
  const fs::path dir = scratch("ckpt");
  const Checkpoint ck = sample();
  write_checkpoint(dir / "a.bin", ck);
  const Checkpoint back = read_checkpoint(dir / "a.bin");
  CHECK(back.meta == ck.meta);
  REQUIRE(back.tensors.size() == 3);
  for (const auto& [name, t] : ck.tensors) CHECK(back.tensor(name) == t);
  CHECK_THROWS_AS(back.tensor("missing"), IoError);
  // Only the final file remains after the atomic rename.
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  CHECK(files == 1);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: header layout") {
  const fs::path dir = scratch("ckpt_layout");
  write_checkpoint(dir / "a.bin", sample());
  std::ifstream in(dir / "a.bin", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(bytes.substr(0, 8) == std::string("AVCKPT\0\0", 8));
  uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 8, 4);
  CHECK(version == kCheckpointVersion);
  uint64_t meta_len = 0;
  std::memcpy(&meta_len, bytes.data() + 12, 8);
  CHECK(nlohmann::json::parse(bytes.substr(20, meta_len)) == sample().meta);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint: corrupt files are rejected") {
  const fs::path dir = scratch("ckpt_bad");
  CHECK_THROWS_AS(read_checkpoint(dir / "absent.bin"), IoError);
  {
    std::ofstream out(dir / "junk.bin", std::ios::binary);
    out << "not a checkpoint at all";
  }
  CHECK_THROWS_AS(read_checkpoint(dir / "junk.bin"), IoError);

  write_checkpoint(dir / "a.bin", sample());
  const auto size = fs::file_size(dir / "a.bin");
  fs::resize_file(dir / "a.bin", size - 9);
  CHECK_THROWS_AS(read_checkpoint(dir / "a.bin"), IoError);
  fs::remove_all(dir);
}
