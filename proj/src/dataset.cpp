#include "tricov/dataset.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <thread>

#include "tricov/errors.hpp"
#include "tricov/image_io.hpp"

namespace tricov {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kArchiveMagic[8] = {'T', 'R', 'I', 'C', 'O', 'V', 'T', 'A'};
constexpr double kDegToRad = M_PI / 180.0;

// Upper bound on the spectral norm of (R * Shear * Scale)^-1 over the
// configured ranges.
double inverse_norm_bound(const AugmentationConfig& c) {
  const double smin = std::min(std::abs(c.scale_min), std::abs(c.scale_max));
  const double shear = std::max(std::abs(c.shear_min), std::abs(c.shear_max));
  if (smin <= 0.0 || shear >= 1.0) {
    throw InputError("augmentation ranges produce singular warps");
  }
  return 1.0 / (smin * (1.0 - shear));
}

template <typename T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  return value;
}

constexpr std::size_t kHeaderBytes = 8 + 4 + 4 + 8 + 8 + 8 * 8;
constexpr std::size_t kRecordBytes = 5 * kPatchValues * sizeof(float) + 12 * sizeof(double);

std::size_t count_offset() { return 8 + 4 + 4; }

double uniform_range(Rng& rng, double lo, double hi) {
  return lo == hi ? lo : rng.uniform(lo, hi);
}

}  // namespace

AugmentationConfig AugmentationConfig::none() {
  AugmentationConfig c;
  c.scale_min = c.scale_max = 1.0;
  c.shear_min = c.shear_max = 0.0;
  c.rotation_min_deg = c.rotation_max_deg = 0.0;
  c.jitter = 0.0;
  c.translation = 0.0;
  return c;
}

int AugmentationConfig::required_margin() const {
  const double lip = inverse_norm_bound(*this);
  const double corner = std::sqrt(2.0) * kPatchCenter;
  const double jit = std::sqrt(2.0) * std::abs(jitter);
  const double shift = std::sqrt(2.0) * std::abs(translation);
  // x and x_i: Aff^-1(o - j - t); xA: Aff^-1(A^-1 o - j).
  const double reach = std::max(lip * (corner + jit + shift), lip * (lip * corner + jit));
  return static_cast<int>(std::ceil(reach + 1e-9)) + 1;
}

Mat2 sample_affinity(const AugmentationConfig& config, Rng& rng) {
  const double theta =
      uniform_range(rng, config.rotation_min_deg, config.rotation_max_deg) * kDegToRad;
  const double sx = uniform_range(rng, config.shear_min, config.shear_max);
  const double sy = uniform_range(rng, config.shear_min, config.shear_max);
  const double kx = uniform_range(rng, config.scale_min, config.scale_max);
  const double ky = uniform_range(rng, config.scale_min, config.scale_max);
  return rotation_shear_scale(theta, sx, sy, kx, ky);
}

std::vector<float> normalize_patch(std::span<const float> raw, int channels) {
  std::vector<float> gray;
  if (channels == 3) {
    gray = to_grayscale(raw);
  } else if (channels == 1) {
    gray.assign(raw.begin(), raw.end());
  } else {
    throw InputError("normalize_patch: expected 1 or 3 channels");
  }
  if (gray.empty()) return gray;
  double mean = 0.0;
  for (float v : gray) mean += v;
  mean /= static_cast<double>(gray.size());
  double var = 0.0;
  for (float v : gray) var += (v - mean) * (v - mean);
  var /= static_cast<double>(gray.size());
  const double inv_std = 1.0 / std::sqrt(std::max(var, 1e-8));
  for (float& v : gray) v = static_cast<float>((v - mean) * inv_std);
  return gray;
}

Patch normalize_patch(Patch raw) {
  raw.pixels = normalize_patch(raw.pixels, 1);
  return raw;
}

PatchTuple sample_tuple(const Image& source, const AugmentationConfig& config, Rng& rng,
                        int source_id) {
  const int margin = config.required_margin();
  if (source.width < 2 * margin + 1 || source.height < 2 * margin + 1) {
    std::ostringstream msg;
    msg << "source image " << source_id << " is " << source.width << "x" << source.height
        << "; tuple generation needs at least " << 2 * margin + 1 << "x" << 2 * margin + 1;
    throw InputError(msg.str());
  }
  const Vec2 center(rng.uniform(margin, source.width - 1 - margin),
                    rng.uniform(margin, source.height - 1 - margin));

  const Mat2 reference_affinity = sample_affinity(config, rng);
  const Vec2 jitter(uniform_range(rng, -config.jitter, config.jitter),
                    uniform_range(rng, -config.jitter, config.jitter));
  const AffineTransform reference =
      compose(AffineTransform::translate(jitter), AffineTransform::from_linear(reference_affinity));

  PatchTuple tuple;
  for (auto& t : tuple.translations) {
    t = Vec2(uniform_range(rng, -config.translation, config.translation),
             uniform_range(rng, -config.translation, config.translation));
  }
  tuple.affine = AffineTransform::from_linear(sample_affinity(config, rng));

  std::array<AffineTransform, 5> transforms;
  transforms[kReference] = reference;
  for (std::size_t i = 0; i < 3; ++i) {
    transforms[kShift1 + i] =
        compose(AffineTransform::translate(tuple.translations[i]), reference);
  }
  transforms[kAffine] = compose(tuple.affine, reference);

  for (std::size_t i = 0; i < 5; ++i) {
    Patch patch = warp_patch(source, center, transforms[i], Border::kReject);
    patch.source_id = source_id;
    tuple.patches[i] = normalize_patch(std::move(patch));
  }
  return tuple;
}

PatchTuple generate_tuple(std::span<const Image> images, const AugmentationConfig& config,
                          std::uint64_t index) {
  if (images.empty()) throw InputError("tuple generation needs at least one source image");
  Rng rng(config.seed, index);
  const auto id = static_cast<std::size_t>(rng.below(images.size()));
  return sample_tuple(images[id], config, rng, static_cast<int>(id));
}

std::vector<PatchTuple> build_tuples(std::span<const Image> images,
                                     const AugmentationConfig& config, std::size_t threads) {
  if (images.empty()) throw InputError("tuple generation needs at least one source image");
  // Fail early, with the size message, before spawning workers.
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].width < config.minimum_image_extent() ||
        images[i].height < config.minimum_image_extent()) {
      Rng probe(0);
      (void)sample_tuple(images[i], config, probe, static_cast<int>(i));
    }
  }
  const auto count = static_cast<std::size_t>(config.tuple_count);
  std::vector<PatchTuple> tuples(count);
  threads = std::max<std::size_t>(1, std::min(threads, count));
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < count; i += threads) {
      tuples[i] = generate_tuple(images, config, i);
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  return tuples;
}

void build_training_set(std::span<const Image> images, const AugmentationConfig& config,
                        const std::filesystem::path& path, std::size_t threads) {
  TupleArchiveWriter writer(path, config);
  constexpr std::size_t kChunk = 1024;
  AugmentationConfig chunk_config = config;
  for (std::uint64_t start = 0; start < config.tuple_count; start += kChunk) {
    const std::uint64_t n = std::min<std::uint64_t>(kChunk, config.tuple_count - start);
    std::vector<PatchTuple> chunk(static_cast<std::size_t>(n));
    const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(threads, n));
    auto work = [&](std::size_t worker) {
      for (std::size_t i = worker; i < n; i += workers) {
        chunk[i] = generate_tuple(images, chunk_config, start + i);
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
      for (auto& t : pool) t.join();
    }
    for (const auto& tuple : chunk) writer.write(tuple);
  }
  writer.close();
}

TupleArchiveWriter::TupleArchiveWriter(const std::filesystem::path& path,
                                       const AugmentationConfig& config)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot create tuple archive " + path.string());
  out_.write(kArchiveMagic, sizeof(kArchiveMagic));
  put<std::uint32_t>(out_, kArchiveVersion);
  put<std::uint32_t>(out_, static_cast<std::uint32_t>(kPatchExtent));
  put<std::uint64_t>(out_, 0);
  put<std::uint64_t>(out_, config.seed);
  for (double v : {config.scale_min, config.scale_max, config.shear_min, config.shear_max,
                   config.rotation_min_deg, config.rotation_max_deg, config.jitter,
                   config.translation}) {
    put<double>(out_, v);
  }
}

void TupleArchiveWriter::write(const PatchTuple& tuple) {
  for (const auto& patch : tuple.patches) {
    if (patch.pixels.size() != kPatchValues) {
      throw InputError("tuple patch does not hold 32x32 values");
    }
    out_.write(reinterpret_cast<const char*>(patch.pixels.data()),
               static_cast<std::streamsize>(kPatchValues * sizeof(float)));
  }
  for (const auto& t : tuple.translations) {
    put<double>(out_, t.x());
    put<double>(out_, t.y());
  }
  const auto& a = tuple.affine;
  for (double v : {a.linear(0, 0), a.linear(0, 1), a.linear(1, 0), a.linear(1, 1),
                   a.translation.x(), a.translation.y()}) {
    put<double>(out_, v);
  }
  if (!out_) throw IoError("failed writing tuple archive " + path_.string());
  ++written_;
}

void TupleArchiveWriter::close() {
  if (!out_.is_open()) return;
  out_.seekp(static_cast<std::streamoff>(count_offset()));
  put<std::uint64_t>(out_, written_);
  out_.flush();
  if (!out_) throw IoError("failed finalizing tuple archive " + path_.string());
  out_.close();
}

TupleArchive::TupleArchive(const std::filesystem::path& path)
    : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open tuple archive " + path.string());
  char magic[8];
  in_.read(magic, sizeof(magic));
  if (!in_ || std::memcmp(magic, kArchiveMagic, sizeof(magic)) != 0) {
    throw InputError(path.string() + " is not a tuple archive");
  }
  const auto version = ::tricov::get<std::uint32_t>(in_);
  if (version != kArchiveVersion) {
    throw InputError(path.string() + ": unsupported archive version " +
                     std::to_string(version));
  }
  const auto extent = ::tricov::get<std::uint32_t>(in_);
  if (extent != static_cast<std::uint32_t>(kPatchExtent)) {
    throw InputError(path.string() + ": unexpected patch extent " + std::to_string(extent));
  }
  count_ = ::tricov::get<std::uint64_t>(in_);
  config_.seed = ::tricov::get<std::uint64_t>(in_);
  config_.tuple_count = count_;
  for (double* v : {&config_.scale_min, &config_.scale_max, &config_.shear_min,
                    &config_.shear_max, &config_.rotation_min_deg, &config_.rotation_max_deg,
                    &config_.jitter, &config_.translation}) {
    *v = ::tricov::get<double>(in_);
  }
  if (!in_) throw IoError("truncated tuple archive header in " + path.string());
  in_.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(in_.tellg());
  if (bytes < kHeaderBytes + count_ * kRecordBytes) {
    throw IoError(path.string() + ": archive holds fewer records than its header claims");
  }
}

PatchTuple TupleArchive::get(std::size_t index) const {
  if (index >= count_) {
    throw std::out_of_range("tuple index " + std::to_string(index) + " beyond archive size");
  }
  std::lock_guard lock(mutex_);
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(kHeaderBytes + index * kRecordBytes));
  PatchTuple tuple;
  for (auto& patch : tuple.patches) {
    patch.pixels.resize(kPatchValues);
    in_.read(reinterpret_cast<char*>(patch.pixels.data()),
             static_cast<std::streamsize>(kPatchValues * sizeof(float)));
  }
  for (auto& t : tuple.translations) {
    const double x = ::tricov::get<double>(in_);
    const double y = ::tricov::get<double>(in_);
    t = Vec2(x, y);
  }
  double a[6];
  for (double& v : a) v = ::tricov::get<double>(in_);
  tuple.affine.linear << a[0], a[1], a[2], a[3];
  tuple.affine.translation = Vec2(a[4], a[5]);
  if (!in_) throw IoError("failed reading record " + std::to_string(index) + " of " +
                          path_.string());
  return tuple;
}

Homography parse_homography(const std::string& text, const std::string& name) {
  Homography h;
  const char* begin = text.data();
  const char* end = text.data() + text.size();
  const char* p = begin;
  auto skip = [&] {
    while (p < end && std::isspace(static_cast<unsigned char>(*p))) ++p;
  };
  for (int i = 0; i < 9; ++i) {
    skip();
    if (p == end) {
      throw ParseError(name + ": expected 9 numbers, found " + std::to_string(i),
                       static_cast<std::size_t>(p - begin));
    }
    double value = 0.0;
    const char* start = p;
    if (*p == '+') ++p;
    const auto [ptr, ec] = std::from_chars(p, end, value);
    if (ec != std::errc()) {
      throw ParseError(name + ": malformed number", static_cast<std::size_t>(start - begin));
    }
    p = ptr;
    h.matrix(i / 3, i % 3) = value;
  }
  skip();
  if (p != end) {
    throw ParseError(name + ": trailing data after 9 numbers",
                     static_cast<std::size_t>(p - begin));
  }
  return h;
}

Homography read_homography(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open homography " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  Homography h = parse_homography(buffer.str(), path.string());
  if (!h.matrix.allFinite() || std::abs(h.matrix.determinant()) < 1e-12) {
    throw InputError("homography " + path.string() + " is singular");
  }
  h.normalize();
  return h;
}

void write_homography(const std::filesystem::path& path, const Homography& h) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write homography " + path.string());
  out << std::setprecision(17);
  for (int r = 0; r < 3; ++r) {
    out << h.matrix(r, 0) << ' ' << h.matrix(r, 1) << ' ' << h.matrix(r, 2) << '\n';
  }
}

SequenceDataset load_sequence(const std::filesystem::path& directory) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) {
    throw IoError("sequence directory " + directory.string() + " does not exist");
  }
  SequenceDataset seq;
  seq.name = directory.filename().string();
  if (seq.name.empty()) seq.name = directory.parent_path().filename().string();
  for (int k = 1;; ++k) {
    fs::path found;
    for (const char* ext : {".ppm", ".pgm", ".pnm"}) {
      const fs::path candidate = directory / ("img" + std::to_string(k) + ext);
      if (fs::exists(candidate)) {
        found = candidate;
        break;
      }
    }
    if (found.empty()) break;
    seq.images.push_back(read_image(found));
  }
  if (seq.images.empty()) {
    throw InputError("no img1.ppm/img1.pgm reference image in " + directory.string());
  }

  bool any = false;
  for (std::size_t k = 2; k <= seq.images.size(); ++k) {
    any = any || fs::exists(directory / ("H1to" + std::to_string(k) + "p"));
  }
  seq.illumination_only = !any && seq.images.size() > 1;
  for (std::size_t k = 2; k <= seq.images.size(); ++k) {
    const fs::path file = directory / ("H1to" + std::to_string(k) + "p");
    if (seq.illumination_only) {
      seq.homographies.push_back(Homography::identity());
    } else if (!fs::exists(file)) {
      throw InputError("missing homography " + file.string());
    } else {
      seq.homographies.push_back(read_homography(file));
    }
  }
  return seq;
}

void save_sequence(const std::filesystem::path& directory, const SequenceDataset& sequence) {
  std::filesystem::create_directories(directory);
  for (std::size_t k = 0; k < sequence.images.size(); ++k) {
    write_pgm(directory / ("img" + std::to_string(k + 1) + ".pgm"), sequence.images[k]);
  }
  if (sequence.illumination_only) return;
  for (std::size_t k = 0; k < sequence.homographies.size(); ++k) {
    write_homography(directory / ("H1to" + std::to_string(k + 2) + "p"),
                     sequence.homographies[k]);
  }
}

namespace {

struct Canvas {
  Image image;

  // Blends `value` with per-pixel coverage estimated on a 4x4 subsample grid.
  template <typename Inside>
  void fill(double min_x, double min_y, double max_x, double max_y, float value,
            Inside inside) {
    const int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
    const int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
    const int x1 = std::min(image.width - 1, static_cast<int>(std::ceil(max_x)));
    const int y1 = std::min(image.height - 1, static_cast<int>(std::ceil(max_y)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        int hits = 0;
        for (int sy = 0; sy < 4; ++sy) {
          for (int sx = 0; sx < 4; ++sx) {
            hits += inside(x - 0.375 + 0.25 * sx, y - 0.375 + 0.25 * sy) ? 1 : 0;
          }
        }
        if (hits) {
          const float cover = hits / 16.0f;
          image.at(x, y) = (1.0f - cover) * image.at(x, y) + cover * value;
        }
      }
    }
  }

  void polygon(const std::vector<Vec2>& pts, float value) {
    double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
    for (const auto& p : pts) {
      min_x = std::min(min_x, p.x());
      min_y = std::min(min_y, p.y());
      max_x = std::max(max_x, p.x());
      max_y = std::max(max_y, p.y());
    }
    double area = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec2& a = pts[i];
      const Vec2& b = pts[(i + 1) % pts.size()];
      area += a.x() * b.y() - b.x() * a.y();
    }
    const double orientation = area >= 0 ? 1.0 : -1.0;
    fill(min_x, min_y, max_x, max_y, value, [&](double x, double y) {
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const Vec2& a = pts[i];
        const Vec2& b = pts[(i + 1) % pts.size()];
        const double cross = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
        if (cross * orientation < 0) return false;
      }
      return true;
    });
  }

  void ellipse(const Vec2& c, double rx, double ry, double angle, float value) {
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double r = std::max(rx, ry);
    fill(c.x() - r, c.y() - r, c.x() + r, c.y() + r, value, [&](double x, double y) {
      const double dx = x - c.x(), dy = y - c.y();
      const double u = (ca * dx + sa * dy) / rx;
      const double v = (-sa * dx + ca * dy) / ry;
      return u * u + v * v <= 1.0;
    });
  }
};

}  // namespace

Image synthetic_corner_image(int width, int height, std::uint64_t seed) {
  Rng rng(seed, 0x5e9);
  Canvas canvas{Image(width, height)};
  const double base = rng.uniform(0.25, 0.75);
  const double gx = rng.uniform(-0.2, 0.2) / width;
  const double gy = rng.uniform(-0.2, 0.2) / height;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      canvas.image.at(x, y) = static_cast<float>(base + gx * (x - width / 2.0) +
                                                 gy * (y - height / 2.0));
    }
  }

  const int shapes = std::max(4, width * height / 700);
  for (int s = 0; s < shapes; ++s) {
    const Vec2 c(rng.uniform(-10, width + 10), rng.uniform(-10, height + 10));
    const auto value = static_cast<float>(rng.uniform(0.0, 1.0));
    const std::uint64_t kind = rng.below(4);
    if (kind == 0) {  // rotated rectangle
      const double w = rng.uniform(5, 36), h = rng.uniform(5, 36);
      const Mat2 r = rotation(rng.uniform(0, 2 * M_PI));
      std::vector<Vec2> pts;
      for (auto [sx, sy] : {std::pair{-1, -1}, {1, -1}, {1, 1}, {-1, 1}}) {
        pts.push_back(c + r * Vec2(sx * w / 2, sy * h / 2));
      }
      canvas.polygon(pts, value);
    } else if (kind == 1) {  // triangle
      std::vector<Vec2> pts;
      const double radius = rng.uniform(6, 26);
      const double start = rng.uniform(0, 2 * M_PI);
      for (int i = 0; i < 3; ++i) {
        const double a = start + i * 2 * M_PI / 3 + rng.uniform(-0.6, 0.6);
        const double r = radius * rng.uniform(0.6, 1.0);
        pts.emplace_back(c.x() + r * std::cos(a), c.y() + r * std::sin(a));
      }
      canvas.polygon(pts, value);
    } else if (kind == 2) {  // convex quadrilateral
      std::vector<Vec2> pts;
      const double radius = rng.uniform(6, 24);
      const double start = rng.uniform(0, 2 * M_PI);
      for (int i = 0; i < 4; ++i) {
        const double a = start + i * M_PI / 2 + rng.uniform(-0.5, 0.5);
        const double r = radius * rng.uniform(0.6, 1.0);
        pts.emplace_back(c.x() + r * std::cos(a), c.y() + r * std::sin(a));
      }
      canvas.polygon(pts, value);
    } else {  // blob
      canvas.ellipse(c, rng.uniform(2.5, 10), rng.uniform(2.5, 10), rng.uniform(0, M_PI),
                     value);
    }
  }
  for (auto& v : canvas.image.pixels) {
    v = std::clamp(v + static_cast<float>(0.01 * rng.normal()), 0.0f, 1.0f);
  }
  return canvas.image;
}

SyntheticPair synthetic_pair(int width, int height, const AugmentationConfig& config,
                             std::uint64_t seed) {
  Rng rng(seed, 0xa1f);
  const double lip = inverse_norm_bound(config);
  const double half_diag = 0.5 * std::hypot(width, height);
  const int canvas_size = static_cast<int>(std::ceil(2.0 * (lip * half_diag + 4.0)));
  const int cw = std::max(canvas_size, width + 8);
  const int ch = std::max(canvas_size, height + 8);
  const Image canvas = synthetic_corner_image(cw, ch, rng.next());

  const Vec2 offset((cw - width) / 2, (ch - height) / 2);
  const Vec2 canvas_center((cw - 1) / 2.0, (ch - 1) / 2.0);
  const Mat2 m = sample_affinity(config, rng);
  // Warp about the canvas center: P -> c + M (P - c).
  const AffineTransform warp{m, canvas_center - m * canvas_center};
  const AffineTransform warp_inv = warp.inverse();

  SyntheticPair pair;
  pair.first = Image(width, height);
  pair.second = Image(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      pair.first.at(x, y) = canvas.at(x + static_cast<int>(offset.x()),
                                      y + static_cast<int>(offset.y()));
      const Vec2 src = warp_inv(Vec2(x, y) + offset);
      pair.second.at(x, y) =
          static_cast<float>(sample_bilinear(canvas, src.x(), src.y(), Border::kClamp));
    }
  }
  // p in first -> warp(p + o) - o in second.
  const AffineTransform first_to_second{m, warp(offset) - offset};
  pair.homography = Homography::from_affine(first_to_second);
  return pair;
}

}  // namespace tricov
