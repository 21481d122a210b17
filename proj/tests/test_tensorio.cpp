#include <doctest.h>

#include <fstream>
#include <random>

#include "sidgan/checkpoint.hpp"
#include "sidgan/error.hpp"
#include "sidgan/tensorio.hpp"
#include "test_util.hpp"

using namespace sidgan;
using sidgan::test::bitwise_equal;
using sidgan::test::TempDir;

TEST_SUITE("tensorio") {
  TEST_CASE("2x2 f32 file has the documented size and round-trips") {
    TempDir dir("tio");
    const auto t = torch::tensor({1.f, 2.f, 3.f, 4.f}).reshape({2, 2});
    io::write_tensor(dir / "a.sgt", t);
    CHECK(std::filesystem::file_size(dir / "a.sgt") == 4 + 1 + 1 + 2 * 8 + 16);
    CHECK(bitwise_equal(io::read_tensor(dir / "a.sgt"), t));
  }

  TEST_CASE("scalar tensor has ndim 0 and a 4-byte payload") {
    const auto bytes = io::encode_tensor(torch::zeros({}, torch::kFloat32));
    REQUIRE(bytes.size() == 6 + 4);
    CHECK(bytes[4] == static_cast<std::uint8_t>(io::DType::F32));
    CHECK(bytes[5] == 0);
    const auto back = io::decode_tensor(bytes);
    CHECK(back.dim() == 0);
    CHECK(back.item<float>() == 0.0f);
  }

  TEST_CASE("header bytes are little-endian u64 dims") {
    const auto bytes = io::encode_tensor(torch::zeros({258, 1}, torch::kUInt8));
    CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SGT1");
    CHECK(bytes[4] == 0);
    CHECK(bytes[5] == 2);
    CHECK(bytes[6] == 2);  // 258 = 0x0102
    CHECK(bytes[7] == 1);
    for (int i = 8; i < 14; ++i) CHECK(bytes[i] == 0);
    CHECK(bytes[14] == 1);
  }

  TEST_CASE("random 16x16x3 u16 tensor reads back bitwise equal") {
    TempDir dir("tio");
    auto gen = at::detail::createCPUGenerator(7);
    const auto t = torch::randint(0, 65536, {16, 16, 3}, gen, torch::kInt32).to(torch::kUInt16);
    io::write_tensor(dir / "raw.sgt", t);
    const auto back = io::read_tensor(dir / "raw.sgt");
    CHECK(bitwise_equal(back, t));
    // byte-level oracle: re-encoding the decoded tensor reproduces the file exactly
    std::ifstream f(dir / "raw.sgt", std::ios::binary);
    std::vector<std::uint8_t> disk((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(io::encode_tensor(back) == disk);
  }

  TEST_CASE("property: encode/decode are byte-level inverses for random shapes and dtypes") {
    std::mt19937 rng(99);
    std::uniform_int_distribution<int> ndim_dist(0, 4), dim_dist(0, 5), dtype_dist(0, 2), byte(0, 255);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<std::int64_t> shape(ndim_dist(rng));
      for (auto& d : shape) d = dim_dist(rng);
      const auto dtype = static_cast<io::DType>(dtype_dist(rng));
      const auto st = dtype == io::DType::U8 ? torch::kUInt8 : dtype == io::DType::U16 ? torch::kUInt16 : torch::kFloat32;
      auto t = torch::empty(shape, st);
      auto* p = static_cast<std::uint8_t*>(t.data_ptr());
      for (std::int64_t i = 0; i < t.numel() * t.element_size(); ++i) p[i] = static_cast<std::uint8_t>(byte(rng));
      const auto bytes = io::encode_tensor(t);
      const auto back = io::decode_tensor(bytes);
      REQUIRE(bitwise_equal(back, t));
      REQUIRE(io::encode_tensor(back) == bytes);
    }
  }

  TEST_CASE("bad magic is rejected") {
    auto bytes = io::encode_tensor(torch::ones({2}));
    std::copy_n("XXXX", 4, bytes.begin());
    CHECK_THROWS_AS(io::decode_tensor(bytes), FormatError);
  }

  TEST_CASE("truncated payload is rejected") {
    TempDir dir("tio");
    io::write_tensor(dir / "t.sgt", torch::ones({3, 3}));
    std::filesystem::resize_file(dir / "t.sgt", std::filesystem::file_size(dir / "t.sgt") - 1);
    CHECK_THROWS_AS(io::read_tensor(dir / "t.sgt"), FormatError);
  }

  TEST_CASE("payload longer than declared shape is rejected") {
    auto bytes = io::encode_tensor(torch::ones({2}));
    bytes.push_back(0);
    CHECK_THROWS_AS(io::decode_tensor(bytes), FormatError);
  }

  TEST_CASE("unsupported dtype and missing file") {
    CHECK_THROWS_AS(io::encode_tensor(torch::ones({2}, torch::kFloat64)), FormatError);
    CHECK_THROWS_AS(io::read_tensor("/nonexistent/file.sgt"), IoError);
    auto bytes = io::encode_tensor(torch::ones({1}));
    bytes[4] = 9;
    CHECK_THROWS_AS(io::decode_tensor(bytes), FormatError);
  }

  TEST_CASE("checkpoint save/load restores parameters and optimizer state exactly") {
    TempDir dir("ckpt");
    torch::manual_seed(3);
    torch::nn::Sequential net(torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 4, 3).padding(1)), torch::nn::ReLU(),
                              torch::nn::Conv2d(4, 2, 1));
    torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(1e-2));
    const auto x = torch::randn({1, 3, 8, 8});
    net->forward(x).abs().mean().backward();
    opt.step();

    io::CheckpointRecord rec;
    rec.epoch = 4;
    rec.model_id = "g_test";
    rec.parameters = io::snapshot_parameters(*net);
    rec.optimizer_state = io::snapshot_optimizer(opt);
    rec.metrics = {{"kid", 0.25}};
    io::save_checkpoint(dir.path(), rec);
    CHECK(std::filesystem::exists(dir.path() / "epoch_4" / "g_test.sgt"));
    CHECK(std::filesystem::exists(dir.path() / "epoch_4" / "metrics.json"));

    torch::nn::Sequential fresh(torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 4, 3).padding(1)), torch::nn::ReLU(),
                                torch::nn::Conv2d(4, 2, 1));
    const auto loaded = io::load_checkpoint(dir.path(), 4, "g_test");
    io::restore_parameters(*fresh, loaded.parameters);
    CHECK(bitwise_equal(fresh->forward(x), net->forward(x)));
    CHECK(loaded.metrics.at("kid") == 0.25);

    torch::optim::Adam opt2(fresh->parameters(), torch::optim::AdamOptions(1e-2));
    io::restore_optimizer(opt2, loaded.optimizer_state);
    for (auto* m : {&*net, &*fresh}) {
      m->zero_grad();
      m->forward(x).abs().mean().backward();
    }
    opt.step();
    opt2.step();
    CHECK(bitwise_equal(fresh->forward(x), net->forward(x)));

    torch::nn::Sequential wrong(torch::nn::Conv2d(3, 4, 1));
    CHECK_THROWS_AS(io::restore_parameters(*wrong, loaded.parameters), ShapeError);
  }
}
