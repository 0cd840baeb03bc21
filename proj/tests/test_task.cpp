#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dcd/rng.hpp"
#include "dcd/task.hpp"

using namespace dcd;
namespace fs = std::filesystem;

namespace {

// Same draw as the generator, orthonormalised by classical Gram-Schmidt on a
// copy so the test does not share the library's loop.
Tensor rotation(std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor a = rng.normal_tensor({c, c});
  Tensor q({c, c});
  for (std::size_t j = 0; j < c; ++j) {
    std::vector<double> v(c);
    for (std::size_t i = 0; i < c; ++i) v[i] = a(i, j);
    for (std::size_t k = 0; k < j; ++k) {
      double d = 0;
      for (std::size_t i = 0; i < c; ++i) d += v[i] * q(i, k);
      for (std::size_t i = 0; i < c; ++i) v[i] -= d * q(i, k);
    }
    double n = 0;
    for (double x : v) n += x * x;
    for (std::size_t i = 0; i < c; ++i) q(i, j) = v[i] / std::sqrt(n);
  }
  return q;
}

// Mean over pixels of the projection onto column `col`, and of its square.
std::pair<double, double> projection_moments(const Dataset& d, std::size_t s, const Tensor& q, std::size_t col) {
  const std::size_t c = d.x.dim(1), hw = d.x.dim(2) * d.x.dim(3);
  double m = 0, m2 = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    double v = 0;
    for (std::size_t a = 0; a < c; ++a) v += q(a, col) * d.x[(s * c + a) * hw + p];
    m += v;
    m2 += v * v;
  }
  return {m / static_cast<double>(hw), m2 / static_cast<double>(hw)};
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

}  // namespace

TEST_CASE("context-gated task shape and determinism") {
  TaskConfig cfg;
  const Dataset a = make_context_gated(64, 5, cfg), b = make_context_gated(64, 5, cfg), c = make_context_gated(64, 6, cfg);
  CHECK(a.x.shape() == Shape{64, 8, 16, 16});
  CHECK(a.classes == 2);
  CHECK(a.x == b.x);
  CHECK(a.y == b.y);
  CHECK_FALSE(a.x == c.x);
  for (std::size_t y : a.y) CHECK(y < 2);
  cfg.contexts = 5;
  CHECK_THROWS_AS(make_context_gated(4, 0, cfg), ConfigError);
}

TEST_CASE("context-gated labels need the context") {
  TaskConfig cfg;
  const std::size_t m = cfg.contexts;
  const Dataset d = make_context_gated(400, 11, cfg);
  const Tensor q = rotation(cfg.channels, 1234);
  const double threshold = 0.5 * (cfg.low_scale * cfg.low_scale + cfg.high_scale * cfg.high_scale);
  std::size_t gated_right = 0, fixed_right = 0, ones = 0;
  std::vector<std::size_t> context_count(m);
  for (std::size_t s = 0; s < d.size(); ++s) {
    // The context is the offset direction with the largest mean projection.
    std::size_t ctx = 0;
    double best = -1e9;
    for (std::size_t k = 0; k < m; ++k) {
      const double mean = projection_moments(d, s, q, m + k).first;
      if (mean > best) best = mean, ctx = k;
    }
    ++context_count[ctx];
    gated_right += (projection_moments(d, s, q, ctx).second > threshold) == (d.y[s] == 1);
    fixed_right += (projection_moments(d, s, q, 0).second > threshold) == (d.y[s] == 1);
    ones += d.y[s];
  }
  const double n = static_cast<double>(d.size());
  CHECK(gated_right / n > 0.99);
  // Right only when the context happens to be 0: about 1/M + (1 - 1/M) / 2.
  CHECK(fixed_right / n < 0.75);
  CHECK(ones / n == doctest::Approx(0.5).epsilon(0.15));
  for (std::size_t k : context_count) CHECK(k > 60);
}

TEST_CASE("separable control task") {
  TaskConfig cfg;
  const Dataset d = make_separable(300, 2, cfg);
  const std::size_t c = cfg.channels, hw = 256;
  // Class-mean difference of the channel means separates the classes.
  std::vector<double> mean0(c), mean1(c);
  std::vector<std::vector<double>> feat(d.size(), std::vector<double>(c));
  std::size_t n1 = 0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    for (std::size_t a = 0; a < c; ++a) {
      double m = 0;
      for (std::size_t p = 0; p < hw; ++p) m += d.x[(s * c + a) * hw + p];
      feat[s][a] = m / hw;
      (d.y[s] ? mean1 : mean0)[a] += feat[s][a];
    }
    n1 += d.y[s];
  }
  std::size_t right = 0;
  for (std::size_t s = 0; s < d.size(); ++s) {
    double score = 0;
    for (std::size_t a = 0; a < c; ++a)
      score += (mean1[a] / n1 - mean0[a] / (d.size() - n1)) * (feat[s][a] - 0.5 * (mean1[a] / n1 + mean0[a] / (d.size() - n1)));
    right += (score > 0) == (d.y[s] == 1);
  }
  CHECK(right == d.size());
}

TEST_CASE("PNM reader") {
  const fs::path dir = fs::temp_directory_path() / "dcd_test_pnm";
  fs::create_directories(dir);
  write_text(dir / "a.pgm", "P2\n# comment\n3 2\n10\n0 5 10\n10 5 0\n");
  const Tensor g = read_pnm((dir / "a.pgm").string());
  CHECK(g.shape() == Shape{1, 2, 3});
  CHECK(g[1] == 0.5);
  CHECK(g[2] == 1.0);
  write_text(dir / "b.ppm", "P3 1 2 255\n255 0 0  0 0 255\n");
  const Tensor c = read_pnm((dir / "b.ppm").string());
  CHECK(c.shape() == Shape{3, 2, 1});
  CHECK(c[0] == 1.0);  // red, row 0
  CHECK(c[1] == 0.0);  // red, row 1
  CHECK(c[5] == 1.0);  // blue, row 1
  write_text(dir / "c.pgm", std::string("P5\n2 1\n255\n") + char(0) + char(255));
  const Tensor b = read_pnm((dir / "c.pgm").string());
  CHECK(b[0] == 0.0);
  CHECK(b[1] == 1.0);
  write_text(dir / "d.ppm", std::string("P6\n1 1\n255\n") + char(255) + char(0));
  CHECK_THROWS_AS(read_pnm((dir / "d.ppm").string()), Error);
  write_text(dir / "e.pgm", "P2\nx 2\n10\n");
  CHECK_THROWS_AS(read_pnm((dir / "e.pgm").string()), Error);
  write_text(dir / "f.png", "not an image");
  CHECK_THROWS_AS(read_pnm((dir / "f.png").string()), Error);
  fs::remove_all(dir);
}

TEST_CASE("image directory split") {
  const fs::path dir = fs::temp_directory_path() / "dcd_test_images";
  fs::remove_all(dir);
  for (const char* cls : {"zebra", "ant"}) {
    fs::create_directories(dir / cls);
    for (int i = 0; i < 5; ++i)
      write_text(dir / cls / ("img" + std::to_string(i) + ".pgm"), "P2 2 2 4\n0 1 2 " + std::to_string(i % 5) + "\n");
  }
  const ImageSplit s = load_image_dir(dir.string(), 4);
  CHECK(s.class_names == std::vector<std::string>{"ant", "zebra"});
  CHECK(s.train.size() == 8);
  CHECK(s.test.size() == 2);
  CHECK(s.train.x.shape() == Shape{8, 3, 4, 4});
  CHECK(s.test.y == std::vector<std::size_t>{0, 1});
  // Nearest-neighbour upsampling of a grey image fills all three channels.
  CHECK(s.train.x[0] == 0.0);
  CHECK(s.train.x[16 * 1 + 15] == s.train.x[16 * 2 + 15]);
  CHECK(s.train.x[15] == 0.0);  // img0's bottom-right pixel is 0
  TaskConfig cfg;
  cfg.kind = "images";
  CHECK_THROWS_AS(make_task(cfg, 0), ConfigError);
  cfg.image_dir = (dir / "missing").string();
  CHECK_THROWS_AS(make_task(cfg, 0), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("task dispatch") {
  TaskConfig cfg;
  cfg.train_size = 10;
  cfg.test_size = 4;
  auto [tr, te] = make_task(cfg, 3);
  CHECK(tr.size() == 10);
  CHECK(te.size() == 4);
  CHECK(tr.x == make_context_gated(10, 31, cfg).x);
  cfg.kind = "spiral";
  CHECK_THROWS_AS(make_task(cfg, 0), ConfigError);
}
