// SPDX-License-Identifier: Apache-2.0
#include "ddnt/data.hpp"
#include "ddnt/image_io.hpp"
#include "ddnt/metrics.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace ddnt;
using ddnt::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

double mean_of(const Tensor<float> &t) {
  double s = 0;
  for (auto v : t.vec())
    s += v;
  return s / static_cast<double>(t.numel());
}

double kernel_sum(const Tensor<float> &k) {
  double s = 0;
  for (auto v : k.vec())
    s += v;
  return s;
}

// Builds the padded plane explicitly: each row is mirror(row) + row +
// mirror(row), then the same vertically, and slides the kernel over it.
Tensor<float> blur_oracle(const Tensor<float> &img, const Tensor<float> &k) {
  const long H = static_cast<long>(img.dim(0)), W = static_cast<long>(img.dim(1));
  const long C = static_cast<long>(img.dim(2)), K = static_cast<long>(k.dim(0));
  const long r = K / 2;
  REQUIRE(r <= std::min(H, W));
  std::vector<long> ys, xs;
  for (long i = r - 1; i >= 0; --i)
    ys.push_back(i);
  for (long i = 0; i < H; ++i)
    ys.push_back(i);
  for (long i = H - 1; i >= H - r; --i)
    ys.push_back(i);
  for (long i = r - 1; i >= 0; --i)
    xs.push_back(i);
  for (long i = 0; i < W; ++i)
    xs.push_back(i);
  for (long i = W - 1; i >= W - r; --i)
    xs.push_back(i);
  Tensor<float> out(img.shape());
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (long c = 0; c < C; ++c) {
        double s = 0;
        for (long i = 0; i < K; ++i)
          for (long j = 0; j < K; ++j)
            s += static_cast<double>(k[static_cast<std::size_t>(i * K + j)]) *
                 img[static_cast<std::size_t>((ys[static_cast<std::size_t>(y + i)] * W +
                                               xs[static_cast<std::size_t>(x + j)]) * C + c)];
        out[static_cast<std::size_t>((y * W + x) * C + c)] = static_cast<float>(s);
      }
  return out;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string &name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_pair(const fs::path &root, const std::string &name, std::uint64_t seed,
                std::size_t size = 12) {
  const auto s = synth_pair(seed, size, BlurSpec::gaussian(1.0));
  fs::create_directories(root / "blur");
  fs::create_directories(root / "sharp");
  encode_image(s.blurred, root / "blur" / name);
  encode_image(s.sharp, root / "sharp" / name);
}

} // namespace

TEST_CASE("gaussian kernels are odd, normalized and symmetric") {
  for (double sigma : {0.5, 1.0, 2.0, 3.0}) {
    const auto k = blur_kernel(BlurSpec::gaussian(sigma));
    const auto n = k.dim(0);
    REQUIRE(n % 2 == 1);
    CHECK(n == 2 * static_cast<std::size_t>(std::ceil(3 * sigma)) + 1);
    CHECK(kernel_sum(k) == doctest::Approx(1.0).epsilon(1e-6));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(k[i * n + j] == k[j * n + i]);
        CHECK(k[i * n + j] == k[(n - 1 - i) * n + j]);
      }
  }
  const auto d = blur_kernel(BlurSpec::gaussian(0.0));
  CHECK(d.shape() == Shape{1, 1});
  CHECK(d[0] == 1.0f);
}

TEST_CASE("motion kernels follow their angle") {
  const auto h = blur_kernel(BlurSpec::motion(7, 0));
  const auto n = h.dim(0);
  CHECK(kernel_sum(h) == doctest::Approx(1.0).epsilon(1e-6));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != n / 2)
        CHECK(h[i * n + j] == 0.0f);
  const auto v = blur_kernel(BlurSpec::motion(7, 90));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (j != n / 2)
        CHECK(std::abs(v[i * n + j]) <= 1e-6f);
  const auto diag = blur_kernel(BlurSpec::motion(9, 45));
  CHECK(kernel_sum(diag) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS(blur_kernel(BlurSpec::motion(0.5, 0)));
  CHECK_THROWS(blur_kernel(BlurSpec::gaussian(-1)));
}

TEST_CASE("blur matches an explicitly padded correlation") {
  std::mt19937_64 rng(11);
  const auto img = random_tensor<float>({9, 7, 3}, rng, 0, 1);
  // Asymmetric kernel exposes orientation mistakes.
  const auto k = random_tensor<float>({5, 5}, rng, 0, 1);
  CHECK(max_abs_diff(convolve_reflect(img, k), blur_oracle(img, k)) <= 1e-6f);
  const auto m = blur_kernel(BlurSpec::motion(5, 30));
  CHECK(max_abs_diff(convolve_reflect(img, m), blur_oracle(img, m)) <= 1e-6f);
}

TEST_CASE("zero-sigma blur leaves the sharp image unchanged") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto p = synth_pair(seed, 24, BlurSpec::gaussian(0.0));
    CHECK(p.blurred == p.sharp);
  }
}

TEST_CASE("gaussian blur preserves the mean intensity") {
  std::mt19937_64 rng(12);
  for (double sigma : {1.0, 2.0, 3.0}) {
    const auto img = random_tensor<float>({32, 32, 3}, rng, 0, 1);
    const auto b = convolve_reflect(img, blur_kernel(BlurSpec::gaussian(sigma)));
    CHECK(std::abs(mean_of(b) - mean_of(img)) <= 1e-6);
    const auto p = synth_pair(rng(), 32, BlurSpec::gaussian(sigma));
    CHECK(std::abs(mean_of(p.blurred) - mean_of(p.sharp)) <= 1e-6);
  }
}

TEST_CASE("blur of a constant image is that constant") {
  Tensor<float> img({10, 10, 3}, 0.25f);
  const auto b = convolve_reflect(img, blur_kernel(BlurSpec::motion(9, 30)));
  for (auto v : b.vec())
    CHECK(v == doctest::Approx(0.25f).epsilon(1e-6));
}

TEST_CASE("synthetic pairs are seeded, in range and measurably blurred") {
  const auto a = synth_pair(5, 32, BlurSpec::gaussian(2.0));
  const auto b = synth_pair(5, 32, BlurSpec::gaussian(2.0));
  CHECK(a.sharp == b.sharp);
  CHECK(a.blurred == b.blurred);
  CHECK_FALSE(synth_pair(6, 32, BlurSpec::gaussian(2.0)).sharp == a.sharp);
  CHECK(a.sharp.shape() == Shape{32, 32, 3});
  for (const auto *t : {&a.sharp, &a.blurred})
    for (auto v : t->vec()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }

  std::vector<double> ps;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto p = synth_pair(1000 + s, 32, BlurSpec::gaussian(2.0));
    ps.push_back(psnr(p.blurred, p.sharp));
    CHECK(ps.back() < psnr(p.sharp, p.sharp));
  }
  std::sort(ps.begin(), ps.end());
  MESSAGE("PSNR(blurred, sharp) at sigma 2 over 100 seeds: min " << ps.front()
          << " median " << ps[50] << " p90 " << ps[90] << " max " << ps.back());
  CHECK(ps[50] < 35.0);
  CHECK(ps[90] < 35.0);
}

TEST_CASE("pairs load in sorted order") {
  TempDir d("ddnt_test_pairs");
  write_pair(d.path, "c.ppm", 3);
  write_pair(d.path, "a.ppm", 1);
  write_pair(d.path, "b.ppm", 2);
  std::ofstream(d.path / "blur" / "notes.txt") << "ignored";
  const auto ds = load_pairs(d.path);
  REQUIRE(ds.size() == 3);
  CHECK(ds.pairs[0].id == "a.ppm");
  CHECK(ds.pairs[1].id == "b.ppm");
  CHECK(ds.pairs[2].id == "c.ppm");
  const auto ref = synth_pair(2, 12, BlurSpec::gaussian(1.0));
  CHECK(max_abs_diff(ds.pairs[1].sharp, ref.sharp) <= 1.0f / 510 + 1e-7f);
}

TEST_CASE("an empty dataset directory loads as empty") {
  TempDir d("ddnt_test_empty");
  CHECK(load_pairs(d.path).empty());
  fs::create_directories(d.path / "blur");
  fs::create_directories(d.path / "sharp");
  CHECK(load_pairs(d.path).empty());
  CHECK_THROWS_AS(load_pairs(d.path / "nope"), DatasetError);
}

TEST_CASE("unpaired files are all listed") {
  TempDir d("ddnt_test_orphans");
  write_pair(d.path, "a.ppm", 1);
  write_pair(d.path, "b.ppm", 2);
  fs::remove(d.path / "sharp" / "a.ppm");
  fs::remove(d.path / "blur" / "b.ppm");
  try {
    load_pairs(d.path);
    FAIL("expected DatasetError");
  } catch (const DatasetError &e) {
    const std::string msg = e.what();
    CHECK(msg.find("blur/a.ppm") != std::string::npos);
    CHECK(msg.find("sharp/b.ppm") != std::string::npos);
  }
}

TEST_CASE("pairs with different sizes are rejected") {
  TempDir d("ddnt_test_sizes");
  write_pair(d.path, "a.ppm", 1);
  encode_image(Tensor<float>({5, 5, 3}, 0.5f), d.path / "sharp" / "a.ppm");
  CHECK_THROWS_AS(load_pairs(d.path), DatasetError);
}

TEST_CASE("random crops are seeded and aligned between blur and sharp") {
  PairSample s;
  s.id = "coded";
  s.sharp = Tensor<float>({10, 12, 3});
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 12; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        s.sharp[(y * 12 + x) * 3 + c] = static_cast<float>(y * 100 + x * 10 + c);
  s.blurred = s.sharp;
  for (auto &v : s.blurred.vec())
    v += 0.5f;

  std::mt19937_64 r1(42), r2(42);
  bool saw_flip = false, saw_plain = false;
  for (int t = 0; t < 40; ++t) {
    const auto [b1, s1] = random_crop_pair(s, 4, r1);
    const auto [b2, s2] = random_crop_pair(s, 4, r2);
    CHECK(b1 == b2);
    CHECK(s1 == s2);
    for (std::size_t i = 0; i < s1.numel(); ++i)
      CHECK(b1[i] == s1[i] + 0.5f);
    // Rows stay consecutive; columns step by +1 or -1 (flipped).
    const float y0 = std::floor(s1[0] / 100), dx = s1[3] - s1[0];
    CHECK(s1[4 * 3] == doctest::Approx((y0 + 1) * 100 + (s1[0] - y0 * 100)));
    CHECK(std::abs(dx) == 10.0f);
    (dx < 0 ? saw_flip : saw_plain) = true;
  }
  CHECK(saw_flip);
  CHECK(saw_plain);

  std::mt19937_64 r3(1);
  for (int t = 0; t < 10; ++t) {
    const auto [b, sh] = random_crop_pair(s, 4, r3, false);
    CHECK(sh[3] - sh[0] == 10.0f);
  }
  CHECK_THROWS_AS(random_crop_pair(s, 11, r3), DatasetError);
}

TEST_CASE("stack and unstack round trip") {
  std::mt19937_64 rng(3);
  const auto a = random_tensor<float>({4, 5, 3}, rng);
  const auto b = random_tensor<float>({4, 5, 3}, rng);
  const auto s = stack_images({a, b});
  CHECK(s.shape() == Shape{2, 4, 5, 3});
  CHECK(unstack_image(s, 0) == a);
  CHECK(unstack_image(s, 1) == b);
  CHECK_THROWS_AS(stack_images({a, random_tensor<float>({4, 4, 3}, rng)}), ShapeError);
  CHECK_THROWS_AS(unstack_image(s, 2), ShapeError);
}
