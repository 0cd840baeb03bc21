#include "dcd/task.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcd/rng.hpp"

namespace dcd {

Tensor Dataset::gather(std::span<const std::size_t> indices) const {
  Shape s = x.shape();
  const std::size_t per = x.size() / s[0];
  s[0] = indices.size();
  Tensor out(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= size()) throw ShapeError("dataset index out of range");
    std::copy_n(x.data() + indices[i] * per, per, out.data() + i * per);
  }
  return out;
}

std::vector<std::size_t> Dataset::labels(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(y.at(i));
  return out;
}

namespace {

// Orthonormal columns of a Gaussian matrix (modified Gram-Schmidt).
Tensor random_rotation(std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Tensor q = rng.normal_tensor({c, c});
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t k = 0; k < j; ++k) {
      double dot = 0.0;
      for (std::size_t i = 0; i < c; ++i) dot += q(i, j) * q(i, k);
      for (std::size_t i = 0; i < c; ++i) q(i, j) -= dot * q(i, k);
    }
    double norm = 0.0;
    for (std::size_t i = 0; i < c; ++i) norm += q(i, j) * q(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random_rotation: degenerate draw");
    for (std::size_t i = 0; i < c; ++i) q(i, j) /= norm;
  }
  return q;
}

void check_task(const TaskConfig& cfg) {
  if (cfg.channels == 0 || cfg.resolution == 0) throw ConfigError("task: channels and resolution must be >= 1");
}

}  // namespace

Dataset make_context_gated(std::size_t n, std::uint64_t seed, const TaskConfig& cfg) {
  check_task(cfg);
  const std::size_t c = cfg.channels, m = cfg.contexts, hw = cfg.resolution * cfg.resolution;
  if (m == 0 || 2 * m > c) throw ConfigError("context-gated task needs 1 <= contexts <= channels / 2");
  const Tensor q = random_rotation(c, 1234);

  Rng rng(seed);
  Dataset d;
  d.classes = 2;
  d.x = Tensor({n, c, cfg.resolution, cfg.resolution});
  d.y.resize(n);
  std::vector<double> sigma(c), z(c * hw);
  std::vector<std::size_t> bits(m);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t ctx = rng.index(m);
    for (auto& b : bits) b = rng.index(2);
    for (std::size_t i = 0; i < c; ++i)
      sigma[i] = i < m ? (bits[i] ? cfg.high_scale : cfg.low_scale) : 1.0;
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t p = 0; p < hw; ++p) z[i * hw + p] = rng.normal() * sigma[i];
    double* xs = d.x.data() + s * c * hw;
    for (std::size_t a = 0; a < c; ++a) {
      const double offset = cfg.context_amplitude * q(a, m + ctx);
      for (std::size_t p = 0; p < hw; ++p) {
        double v = 0.0;
        for (std::size_t i = 0; i < c; ++i) v += q(a, i) * z[i * hw + p];
        xs[a * hw + p] = v + offset;
      }
    }
    d.y[s] = bits[ctx];
  }
  return d;
}

Dataset make_separable(std::size_t n, std::uint64_t seed, const TaskConfig& cfg) {
  check_task(cfg);
  const std::size_t c = cfg.channels, hw = cfg.resolution * cfg.resolution;
  const Tensor q = random_rotation(c, 4321);
  Rng rng(seed);
  Dataset d;
  d.classes = 2;
  d.x = Tensor({n, c, cfg.resolution, cfg.resolution});
  d.y.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t y = rng.index(2);
    const double sign = y ? 1.0 : -1.0;
    double* xs = d.x.data() + s * c * hw;
    for (std::size_t a = 0; a < c; ++a)
      for (std::size_t p = 0; p < hw; ++p) xs[a * hw + p] = rng.normal() + sign * q(a, 0);
    d.y[s] = y;
  }
  return d;
}

// ---- images ---------------------------------------------------------------

namespace {

std::string next_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string rest;
      std::getline(in, rest);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok += ch;
  }
  return tok;
}

std::size_t parse_size(const std::string& tok, const std::string& path) {
  std::size_t used = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(tok, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != tok.size()) throw Error(path + ": malformed PNM header");
  return v;
}

}  // namespace

Tensor read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open image '" + path + "'");
  const std::string magic = next_token(in);
  std::size_t channels = 0;
  bool binary = false;
  if (magic == "P2" || magic == "P5") channels = 1;
  if (magic == "P3" || magic == "P6") channels = 3;
  binary = magic == "P5" || magic == "P6";
  if (channels == 0) throw Error(path + ": not a PGM/PPM file");
  const std::size_t w = parse_size(next_token(in), path);
  const std::size_t h = parse_size(next_token(in), path);
  const std::size_t maxval = parse_size(next_token(in), path);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw Error(path + ": invalid PNM dimensions");

  Tensor out({channels, h, w});
  const std::size_t count = channels * h * w;
  std::vector<double> raw(count);
  if (binary) {
    const std::size_t bytes = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(count * bytes);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error(path + ": truncated image data");
    for (std::size_t i = 0; i < count; ++i)
      raw[i] = bytes == 1 ? buf[i] : static_cast<double>(buf[2 * i] << 8 | buf[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < count; ++i) raw[i] = static_cast<double>(parse_size(next_token(in), path));
  }
  // Interleaved samples -> planar channels.
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t ch = 0; ch < channels; ++ch)
      out[ch * h * w + p] = raw[p * channels + ch] / static_cast<double>(maxval);
  return out;
}

ImageSplit load_image_dir(const std::string& dir, std::size_t resolution) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw ConfigError("image directory '" + dir + "' does not exist");
  if (resolution == 0) throw ConfigError("image resolution must be >= 1");
  ImageSplit split;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) split.class_names.push_back(e.path().filename().string());
  std::sort(split.class_names.begin(), split.class_names.end());
  if (split.class_names.size() < 2) throw ConfigError("image directory needs at least two class subdirectories");

  std::vector<Tensor> train_x, test_x;
  const std::size_t r = resolution;
  for (std::size_t label = 0; label < split.class_names.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / split.class_names[label])) {
      const std::string ext = e.path().extension().string();
      if (e.is_regular_file() && (ext == ".pgm" || ext == ".ppm" || ext == ".pnm")) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (std::size_t i = 0; i < files.size(); ++i) {
      const Tensor img = read_pnm(files[i].string());
      const std::size_t c = img.dim(0), h = img.dim(1), w = img.dim(2);
      Tensor out({3, r, r});
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t y = 0; y < r; ++y)
          for (std::size_t x = 0; x < r; ++x)
            out[(ch * r + y) * r + x] = img[((c == 1 ? 0 : ch) * h + y * h / r) * w + x * w / r];
      const bool test = i % 5 == 4;
      (test ? test_x : train_x).push_back(std::move(out));
      (test ? split.test.y : split.train.y).push_back(label);
    }
  }
  auto stack = [&](std::vector<Tensor>& items, Dataset& d) {
    d.classes = split.class_names.size();
    d.x = Tensor({items.size(), 3, r, r});
    for (std::size_t i = 0; i < items.size(); ++i)
      std::copy(items[i].data(), items[i].data() + items[i].size(), d.x.data() + i * items[i].size());
  };
  stack(train_x, split.train);
  stack(test_x, split.test);
  if (split.train.size() == 0) throw ConfigError("image directory '" + dir + "' has no training images");
  return split;
}

std::pair<Dataset, Dataset> make_task(const TaskConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "context-gated") {
    return {make_context_gated(cfg.train_size, seed * 10 + 1, cfg), make_context_gated(cfg.test_size, seed * 10 + 2, cfg)};
  }
  if (cfg.kind == "separable") {
    return {make_separable(cfg.train_size, seed * 10 + 1, cfg), make_separable(cfg.test_size, seed * 10 + 2, cfg)};
  }
  if (cfg.kind == "images") {
    if (cfg.image_dir.empty()) throw ConfigError("task.image_dir is required for the images task");
    ImageSplit s = load_image_dir(cfg.image_dir, cfg.resolution);
    return {std::move(s.train), std::move(s.test)};
  }
  throw ConfigError("unknown task kind '" + cfg.kind + "' (expected context-gated, separable, images)");
}

}  // namespace dcd
