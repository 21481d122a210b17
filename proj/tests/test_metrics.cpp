#include <doctest.h>

#include <cmath>
#include <random>

#include "sidgan/error.hpp"
#include "sidgan/metrics.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace sidgan;
using namespace sidgan::metrics;
using namespace sidgan::test;

TEST_SUITE("metrics") {
  TEST_CASE("psnr basics") {
    const auto x = torch::full({8, 8, 3}, 0.3, torch::kFloat64);
    CHECK(psnr(x, x + 0.1) == doctest::Approx(20.0).epsilon(1e-9));
    CHECK(psnr(x, x) == kPsnrCap);
    CHECK_THROWS_AS(psnr(x, torch::zeros({8, 8})), ShapeError);
  }

  TEST_CASE("psnr matches scalar MSE oracle and is symmetric") {
    auto gen = at::detail::createCPUGenerator(1);
    for (int trial = 0; trial < 10; ++trial) {
      const auto x = torch::rand({16, 12, 3}, gen), y = torch::rand({16, 12, 3}, gen);
      const double expect = 10 * std::log10(1.0 / mse_oracle(x, y));
      CHECK(std::abs(psnr(x, y) - expect) < 1e-6);
      CHECK(psnr(x, y) == psnr(y, x));
      CHECK(std::abs(psnr(x * 2 - 1, y * 2 - 1, 2.0) - expect) < 1e-6);
    }
  }

  TEST_CASE("ssim of identical images is 1") {
    auto gen = at::detail::createCPUGenerator(2);
    const auto x = torch::rand({20, 20, 3}, gen);
    CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("ssim on constant images equals the closed form") {
    const double c = 0.4, delta = 0.15;
    const double c1 = 1e-4, c2 = 9e-4;
    const double expect = ((2 * c * (c + delta) + c1) * c2) / ((c * c + (c + delta) * (c + delta) + c1) * c2);
    CHECK(ssim(torch::full({16, 16}, c, torch::kFloat64), torch::full({16, 16}, c + delta, torch::kFloat64)) == doctest::Approx(expect).epsilon(1e-9));
  }

  TEST_CASE("ssim matches direct sliding-window oracle, per channel averaged") {
    auto gen = at::detail::createCPUGenerator(3);
    for (int trial = 0; trial < 3; ++trial) {
      const auto x = torch::rand({17, 14, 3}, gen), y = (x + 0.2 * torch::rand({17, 14, 3}, gen)).clamp(0, 1);
      double expect = 0;
      for (int ch = 0; ch < 3; ++ch) expect += ssim_plane_oracle(x.select(2, ch), y.select(2, ch), 1.0) / 3;
      CHECK(std::abs(ssim(x, y) - expect) < 1e-6);
      CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-12);
    }
    CHECK_THROWS_AS(ssim(torch::zeros({10, 30}), torch::zeros({10, 30})), ShapeError);
  }

  TEST_CASE("temporal metrics") {
    const auto constant = torch::full({4, 16, 16, 3}, 0.5);
    const auto s = temporal_metrics(constant);
    CHECK(s.tpsnr == kPsnrCap);
    CHECK(s.tssim == doctest::Approx(1.0));

    auto gen = at::detail::createCPUGenerator(4);
    const auto two = torch::rand({2, 16, 16, 3}, gen);
    const auto s2 = temporal_metrics(two);
    CHECK(s2.tpsnr == psnr(two[1], two[0]));
    CHECK(s2.tssim == ssim(two[1], two[0]));

    const auto five = torch::rand({5, 16, 16, 3}, gen);
    double ep = 0, es = 0;
    for (int t = 1; t < 5; ++t) {
      ep += 10 * std::log10(1.0 / mse_oracle(five[t], five[t - 1])) / 4;
      double sc = 0;
      for (int ch = 0; ch < 3; ++ch) sc += ssim_plane_oracle(five[t].select(2, ch), five[t - 1].select(2, ch), 1.0) / 3;
      es += sc / 4;
    }
    const auto s5 = temporal_metrics(five);
    CHECK(std::abs(s5.tpsnr - ep) < 1e-6);
    CHECK(std::abs(s5.tssim - es) < 1e-6);
    CHECK_THROWS_AS(temporal_metrics(torch::zeros({1, 16, 16, 3})), ProtocolError);
  }

  TEST_CASE("fid of a set with itself is zero") {
    auto gen = at::detail::createCPUGenerator(5);
    const auto x = torch::randn({40, 6}, gen, torch::kFloat64);
    CHECK(std::abs(fid(x, x)) < 1e-8);
  }

  TEST_CASE("fid closed form with commuting covariances I and 4I") {
    const double a = std::sqrt(1.5);  // four points (+-a, 0), (0, +-a): unbiased covariance = I
    const auto x = torch::tensor({a, 0.0, -a, 0.0, 0.0, a, 0.0, -a}, torch::kFloat64).reshape({4, 2});
    const auto y = x * 2.0;
    CHECK(std::abs(fid(x, y) - 2.0) < 1e-5);
  }

  TEST_CASE("fid matches the eigendecomposition-of-product oracle") {
    auto gen = at::detail::createCPUGenerator(6);
    for (int trial = 0; trial < 10; ++trial) {
      const auto x = torch::randn({30, 4}, gen, torch::kFloat64);
      const auto y = torch::randn({25, 4}, gen, torch::kFloat64) * 1.7 + 0.3;
      CHECK(std::abs(fid(x, y) - fid_eigen_oracle(x, y)) < 1e-6);
    }
    CHECK_THROWS_AS(fid(torch::zeros({0, 3}), torch::zeros({4, 3})), ShapeError);
    CHECK_THROWS_AS(fid(torch::full({4, 3}, NAN), torch::zeros({4, 3})), ShapeError);
  }

  TEST_CASE("fid is invariant under a shared orthogonal rotation") {
    auto gen = at::detail::createCPUGenerator(7);
    const auto x = torch::randn({50, 5}, gen, torch::kFloat64);
    const auto y = torch::randn({50, 5}, gen, torch::kFloat64) * 0.5 + 1.0;
    const auto q = std::get<0>(torch::linalg_qr(torch::randn({5, 5}, gen, torch::kFloat64)));
    CHECK(std::abs(fid(x, y) - fid(x.matmul(q), y.matmul(q))) < 1e-6);
  }

  TEST_CASE("kid equals the three-loop reference on 100 random sets") {
    std::mt19937 rng(8);
    auto gen = at::detail::createCPUGenerator(8);
    for (int trial = 0; trial < 100; ++trial) {
      const int m = 2 + static_cast<int>(rng() % 7), n = 2 + static_cast<int>(rng() % 7), d = 1 + static_cast<int>(rng() % 4);
      const auto x = torch::randn({m, d}, gen, torch::kFloat64), y = torch::randn({n, d}, gen, torch::kFloat64) + 0.5;
      CHECK(std::abs(kid(x, y) - kid_three_loop(x, y)) < 1e-9);
    }
  }

  TEST_CASE("kid 1-D worked example from kernel sums") {
    // k(a, b) = (ab + 1)^3; off-diagonal XX: 2 * k(0,1) = 2; YY: 2 * k(2,3) = 686;
    // XY: k(0,2) + k(0,3) + k(1,2) + k(1,3) = 1 + 1 + 27 + 64 = 93.
    const double expect = 2.0 / 2 + 686.0 / 2 - 2 * 93.0 / 4;
    const auto x = torch::tensor({0.0, 1.0}, torch::kFloat64).reshape({2, 1});
    const auto y = torch::tensor({2.0, 3.0}, torch::kFloat64).reshape({2, 1});
    CHECK(kid(x, y) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(expect == 297.5);
    CHECK_THROWS_AS(kid(x.narrow(0, 0, 1), y), ShapeError);
  }

  TEST_CASE("kid is unbiased: disjoint halves of one sample average to zero") {
    auto gen = at::detail::createCPUGenerator(9);
    const int reps = 400;
    std::vector<double> vals;
    for (int r = 0; r < reps; ++r) {
      const auto s = torch::randn({20, 3}, gen, torch::kFloat64);
      vals.push_back(kid(s.narrow(0, 0, 10), s.narrow(0, 10, 10)));
    }
    double mean = 0, var = 0;
    for (double v : vals) mean += v / reps;
    for (double v : vals) var += (v - mean) * (v - mean) / (reps - 1);
    CHECK(std::abs(mean) < 3 * std::sqrt(var / reps));
  }

  TEST_CASE("kid orders a model-selection sequence like the x100 report scale") {
    MetricReport r;
    std::vector<double> seq{5.06, 4.78, 4.68, 3.99};
    for (std::size_t i = 1; i < seq.size(); ++i) {
      r.kid = seq[i] / 100.0;
      CHECK(*r.kid_x100() == doctest::Approx(seq[i]));
      CHECK(seq[i] < seq[i - 1]);
    }
  }

  TEST_CASE("warp error: static clip with zero flow") {
    const auto clip = torch::full({3, 8, 8, 3}, 0.2);
    CHECK(warp_error(clip, zero_flow()) == 0.0);
  }

  TEST_CASE("warp error: integer translation with the exact flow is zero") {
    auto gen = at::detail::createCPUGenerator(10);
    const auto prev = torch::rand({10, 12, 3}, gen, torch::kFloat64);
    auto next = torch::zeros_like(prev);
    next.narrow(1, 2, 10).copy_(prev.narrow(1, 0, 10));  // content moved right by 2 px
    next.narrow(0, 0, 9).copy_(next.narrow(0, 1, 9).clone());  // and up by 1 px
    const auto clip = torch::stack({prev, next});
    // pixel (y, x) of `next` came from (y + 1, x - 2) of `prev`
    CHECK(warp_error(clip, constant_flow(-2.0, 1.0)) < 1e-12);
    CHECK(warp_error(clip, zero_flow()) > 1e-3);
  }

  TEST_CASE("warp error with zero flow equals consecutive-frame MSE") {
    auto gen = at::detail::createCPUGenerator(11);
    const auto clip = torch::rand({4, 9, 7, 3}, gen);
    double expect = 0;
    for (int t = 1; t < 4; ++t) expect += mse_oracle(clip[t], clip[t - 1]) / 3;
    CHECK(std::abs(warp_error(clip, zero_flow()) - expect) < 1e-9);
  }

  TEST_CASE("warp error rejects mismatched flow and short clips") {
    FlowProvider bad = [](const torch::Tensor&, const torch::Tensor&) {
      return FlowField{torch::zeros({3, 3, 2}, torch::kFloat64), torch::ones({3, 3}, torch::kFloat64)};
    };
    CHECK_THROWS_AS(warp_error(torch::zeros({2, 8, 8, 3}), bad), ShapeError);
    CHECK_THROWS_AS(warp_error(torch::zeros({1, 8, 8, 3}), zero_flow()), ProtocolError);
  }

  TEST_CASE("random embedding is deterministic with fixed dimension") {
    RandomConvEmbedding a(5), b(5), c(6);
    auto gen = at::detail::createCPUGenerator(12);
    const auto imgs = torch::rand({3, 3, 16, 16}, gen) * 2 - 1;
    const auto fa = a.extract(imgs);
    CHECK(fa.sizes().vec() == std::vector<std::int64_t>{3, a.dim()});
    CHECK(test::bitwise_equal(fa, b.extract(imgs)));
    CHECK(!test::bitwise_equal(fa, c.extract(imgs)));
  }

  TEST_CASE("metric report CSV round trip") {
    test::TempDir dir("report");
    MetricReport r;
    r.checkpoint_id = "run/epoch_5";
    r.split = "test";
    r.psnr = 28.94;
    r.ssim = 0.83;
    r.kid = 0.0399;
    r.e_warp = 28.2e-5;
    r.sample_count = 22;
    MetricReport empty;
    empty.checkpoint_id = "x";
    empty.split = "val";
    write_reports(dir / "r.csv", {r, empty});
    const auto back = read_reports(dir / "r.csv");
    REQUIRE(back.size() == 2);
    CHECK(to_csv_row(back[0]) == to_csv_row(r));
    CHECK(*back[0].kid_x100() == doctest::Approx(3.99));
    CHECK(*back[0].e_warp_x1e5() == doctest::Approx(28.2));
    CHECK(!back[1].psnr);
    CHECK(to_csv_row(back[1]) == "x,val,,,,,,,,,0");
  }
}
