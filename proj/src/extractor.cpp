#include "tricov/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "tricov/errors.hpp"
#include "tricov/parallel.hpp"

namespace tricov {

GridGeometry GridGeometry::for_image(int width, int height) {
  GridGeometry g;
  g.rows = Network<float>::output_extent(static_cast<std::size_t>(std::max(height, 0)));
  g.cols = Network<float>::output_extent(static_cast<std::size_t>(std::max(width, 0)));
  return g;
}

std::vector<Vec2> DenseRegression::positions() const {
  std::vector<Vec2> out(translations.size());
  for (std::size_t r = 0; r < grid.rows; ++r) {
    for (std::size_t c = 0; c < grid.cols; ++c) {
      const std::size_t i = r * grid.cols + c;
      out[i] = grid.center(r, c) + translations[i];
    }
  }
  return out;
}

Image standardize_image(const Image& image) {
  Image out = image;
  const double n = static_cast<double>(image.pixels.size());
  if (n == 0) return out;
  double mean = 0.0;
  for (float v : image.pixels) mean += v;
  mean /= n;
  double var = 0.0;
  for (float v : image.pixels) var += (v - mean) * (v - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(std::max(var, 1e-8));
  for (float& v : out.pixels) v = static_cast<float>((v - mean) * inv);
  return out;
}

DenseRegression dense_regress(const Image& image, const Network<float>& network,
                              std::size_t threads, std::size_t tile_cells) {
  DenseRegression result;
  result.grid = GridGeometry::for_image(image.width, image.height);
  if (result.grid.size() == 0) {
    throw InputError("image of " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + " is smaller than one 32x32 patch");
  }
  const auto& grid = result.grid;
  result.translations.assign(grid.size(), Vec2::Zero());
  tile_cells = std::max<std::size_t>(1, tile_cells);
  const std::size_t tile_rows = (grid.rows + tile_cells - 1) / tile_cells;
  const std::size_t tile_cols = (grid.cols + tile_cells - 1) / tile_cells;

  parallel_for(tile_rows * tile_cols, threads, [&](std::size_t t) {
    const std::size_t r0 = (t / tile_cols) * tile_cells;
    const std::size_t c0 = (t % tile_cols) * tile_cells;
    const std::size_t nr = std::min(tile_cells, grid.rows - r0);
    const std::size_t nc = std::min(tile_cells, grid.cols - c0);
    const std::size_t h = kOutputStride * (nr - 1) + kPatchSize;
    const std::size_t w = kOutputStride * (nc - 1) + kPatchSize;
    Tensor<float> input({h, w});
    for (std::size_t y = 0; y < h; ++y) {
      const float* src = &image.pixels[(kOutputStride * r0 + y) * image.width + kOutputStride * c0];
      std::copy(src, src + w, input.data.begin() + y * w);
    }
    const Tensor<float> out = network.forward(input);
    const std::size_t plane = nr * nc;
    for (std::size_t r = 0; r < nr; ++r) {
      for (std::size_t c = 0; c < nc; ++c) {
        result.translations[(r0 + r) * grid.cols + c0 + c] =
            Vec2(out.data[r * nc + c], out.data[plane + r * nc + c]);
      }
    }
  });
  return result;
}

double VoteMap::mass() const {
  double m = 0.0;
  for (double v : values) m += v;
  return m;
}

namespace {

void splat_range(std::span<const Vec2> positions, VoteMap& map) {
  const double max_x = map.width - 1;
  const double max_y = map.height - 1;
  for (const Vec2& p : positions) {
    if (!(p.x() >= 0.0 && p.y() >= 0.0 && p.x() <= max_x && p.y() <= max_y)) {
      ++map.dropped;
      continue;
    }
    ++map.in_bounds;
    const int x0 = static_cast<int>(std::floor(p.x()));
    const int y0 = static_cast<int>(std::floor(p.y()));
    const double fx = p.x() - x0;
    const double fy = p.y() - y0;
    const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
    const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int i = 0; i < 4; ++i) {
      if (w[i] == 0.0) continue;
      // only reachable with zero weight at the last row/column
      if (xs[i] >= map.width || ys[i] >= map.height) continue;
      map.at(xs[i], ys[i]) += w[i];
    }
  }
}

constexpr std::size_t kSplatChunk = 4096;

}  // namespace

VoteMap splat_votes(std::span<const Vec2> positions, int width, int height,
                    std::size_t threads) {
  if (width <= 0 || height <= 0) {
    VoteMap empty;
    empty.dropped = positions.size();
    return empty;
  }
  const std::size_t chunks = (positions.size() + kSplatChunk - 1) / kSplatChunk;
  if (chunks <= 1) {
    VoteMap map(width, height);
    splat_range(positions, map);
    return map;
  }
  std::vector<VoteMap> partial(chunks);
  parallel_for(chunks, threads, [&](std::size_t c) {
    partial[c] = VoteMap(width, height);
    const std::size_t first = c * kSplatChunk;
    splat_range(positions.subspan(first, std::min(kSplatChunk, positions.size() - first)),
                partial[c]);
  });
  VoteMap map(width, height);
  for (const auto& p : partial) {
    for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] += p.values[i];
    map.in_bounds += p.in_bounds;
    map.dropped += p.dropped;
  }
  return map;
}

VoteMap box_blur3(const VoteMap& map) {
  VoteMap out(map.width, map.height);
  out.in_bounds = map.in_bounds;
  out.dropped = map.dropped;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      double sum = 0.0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = std::clamp(x + dx, 0, map.width - 1);
          const int yy = std::clamp(y + dy, 0, map.height - 1);
          sum += map.at(xx, yy);
        }
      }
      out.at(x, y) = sum / 9.0;
    }
  }
  return out;
}

namespace {

// Running max over a (2r+1) window along rows, then columns.
std::vector<double> window_max(const VoteMap& map, int r) {
  const int w = map.width;
  const int h = map.height;
  std::vector<double> rows(map.values.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = -INFINITY;
      for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx) {
        m = std::max(m, map.at(xx, y));
      }
      rows[static_cast<std::size_t>(y) * w + x] = m;
    }
  }
  std::vector<double> out(map.values.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double m = -INFINITY;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy) {
        m = std::max(m, rows[static_cast<std::size_t>(yy) * w + x]);
      }
      out[static_cast<std::size_t>(y) * w + x] = m;
    }
  }
  return out;
}

double parabolic_offset(double left, double center, double right) {
  const double denom = left - 2.0 * center + right;
  if (!(denom < 0.0)) return 0.0;
  return std::clamp(0.5 * (left - right) / denom, -0.5, 0.5);
}

}  // namespace

std::vector<Keypoint> nms_select(const VoteMap& map, std::size_t k, int radius, bool refine,
                                 double support_radius) {
  if (k == 0) throw InputError("k must be at least 1");
  if (radius < 0) throw InputError("NMS radius must be non-negative");
  std::vector<Keypoint> found;
  if (map.values.empty()) return found;
  const auto wmax = window_max(map, radius);
  const int w = map.width;
  const int h = map.height;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = map.at(x, y);
      if (!(v > 0.0) || v < wmax[static_cast<std::size_t>(y) * w + x]) continue;
      // Equal values earlier in scan order take precedence.
      bool beaten = false;
      for (int yy = std::max(0, y - radius); yy <= y && !beaten; ++yy) {
        const int x_end = yy < y ? std::min(w - 1, x + radius) : x - 1;
        for (int xx = std::max(0, x - radius); xx <= x_end; ++xx) {
          if (map.at(xx, yy) == v) {
            beaten = true;
            break;
          }
        }
      }
      if (beaten) continue;
      Keypoint kp;
      kp.position = Vec2(x, y);
      kp.score = v;
      kp.radius = support_radius;
      if (refine) {
        if (x > 0 && x < w - 1) {
          kp.position.x() += parabolic_offset(map.at(x - 1, y), v, map.at(x + 1, y));
        }
        if (y > 0 && y < h - 1) {
          kp.position.y() += parabolic_offset(map.at(x, y - 1), v, map.at(x, y + 1));
        }
      }
      found.push_back(kp);
    }
  }
  // Scan order already sorts ties by (y, x); stable sort keeps it.
  std::stable_sort(found.begin(), found.end(),
                   [](const Keypoint& a, const Keypoint& b) { return a.score > b.score; });
  if (found.size() > k) found.resize(k);
  return found;
}

Extraction extract(const Image& image, const Network<float>& network,
                   const ExtractConfig& config) {
  if (image.width < static_cast<int>(kPatchSize) || image.height < static_cast<int>(kPatchSize)) {
    throw InputError("image of " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + " is smaller than one 32x32 patch");
  }
  Extraction ex;
  ex.regression = dense_regress(config.standardize ? standardize_image(image) : image,
                                network, config.threads);
  const auto positions = ex.regression.positions();
  ex.votes = splat_votes(positions, image.width, image.height, config.threads);
  const VoteMap& map = config.blur ? box_blur3(ex.votes) : ex.votes;
  ex.keypoints = nms_select(map, config.k, config.nms_radius, true, config.support_radius);
  return ex;
}

void write_keypoints(const std::filesystem::path& path, const KeypointFile& file) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write keypoint file " + path.string());
  out << "# image " << file.image_id << '\n';
  out << "# checkpoint " << file.checkpoint_hash << '\n';
  out << "# k " << file.k << '\n';
  out << "# nms_radius " << file.nms_radius << '\n';
  if (!file.config_hash.empty()) out << "# config " << file.config_hash << '\n';
  out << std::setprecision(17);
  for (const auto& kp : file.keypoints) {
    out << kp.position.x() << ' ' << kp.position.y() << ' ' << kp.score << ' ' << kp.radius
        << '\n';
  }
  if (!out) throw IoError("failed writing keypoint file " + path.string());
}

KeypointFile read_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keypoint file " + path.string());
  KeypointFile file;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream fields(line);
    if (line[0] == '#') {
      std::string hash, key, value;
      fields >> hash >> key;
      std::getline(fields >> std::ws, value);
      if (key == "image") file.image_id = value;
      else if (key == "checkpoint") file.checkpoint_hash = value;
      else if (key == "config") file.config_hash = value;
      else if (key == "k") file.k = std::stoul(value);
      else if (key == "nms_radius") file.nms_radius = std::stoi(value);
      continue;
    }
    Keypoint kp;
    double x, y;
    if (!(fields >> x >> y >> kp.score >> kp.radius)) {
      throw InputError(path.string() + ":" + std::to_string(number) +
                       ": expected 'x y score radius'");
    }
    kp.position = Vec2(x, y);
    file.keypoints.push_back(kp);
  }
  return file;
}

}  // namespace tricov
