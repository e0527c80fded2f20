#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "tricov/dataset.hpp"
#include "tricov/errors.hpp"
#include "tricov/random.hpp"

using namespace tricov;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tricov_dataset_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double max_abs_diff(const std::vector<float>& a, const std::vector<float>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a[i]) - b[i]));
  return m;
}

std::vector<Image> sources(int n, int size = 160) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(synthetic_corner_image(size, size, 40 + i));
  return out;
}

}  // namespace

TEST_CASE("augmentation defaults") {
  AugmentationConfig c;
  CHECK(c.scale_min == 0.85);
  CHECK(c.scale_max == 1.15);
  CHECK(c.shear_min == -0.15);
  CHECK(c.shear_max == 0.15);
  CHECK(c.rotation_min_deg == 0.0);
  CHECK(c.rotation_max_deg == 360.0);
  CHECK(c.jitter == 5.0);
  CHECK(c.translation == 6.0);
  CHECK(c.tuple_count == 256000);
  CHECK(c.minimum_image_extent() > 32);
}

TEST_CASE("zero ranges give identical members") {
  const auto imgs = sources(1);
  AugmentationConfig c = AugmentationConfig::none();
  Rng rng(5);
  for (int n = 0; n < 20; ++n) {
    const PatchTuple t = sample_tuple(imgs[0], c, rng);
    for (const auto& tr : t.translations) CHECK(tr == Vec2::Zero());
    CHECK(t.affine.linear == Mat2::Identity());
    CHECK(t.affine.translation == Vec2::Zero());
    for (std::size_t i = 1; i < 5; ++i) CHECK(t.patches[i].pixels == t.patches[0].pixels);
  }
}

TEST_CASE("tuple generation is seeded") {
  const auto imgs = sources(3);
  AugmentationConfig c;
  c.tuple_count = 12;
  c.seed = 77;
  const auto a = build_tuples(imgs, c);
  const auto b = build_tuples(imgs, c, 3);
  REQUIRE(a.size() == 12);
  REQUIRE(b.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t r = 0; r < 5; ++r) CHECK(a[i].patches[r].pixels == b[i].patches[r].pixels);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a[i].translations[k] == b[i].translations[k]);
    CHECK(a[i].affine.linear == b[i].affine.linear);
  }
  c.seed = 78;
  const auto d = build_tuples(imgs, c);
  CHECK(d[0].patches[0].pixels != a[0].patches[0].pixels);
}

TEST_CASE("translation samples cover the range uniformly") {
  const auto imgs = sources(1);
  AugmentationConfig c;
  Rng rng(2024);
  constexpr int kBins = 12;
  std::array<int, kBins> hist{};
  double lo = 1e9, hi = -1e9;
  int n = 0;
  while (n < 10000) {
    const PatchTuple t = sample_tuple(imgs[0], c, rng);
    for (const auto& tr : t.translations) {
      for (double v : {tr.x(), tr.y()}) {
        if (n == 10000) break;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        ++hist[std::min(kBins - 1, static_cast<int>((v + 6.0) / 12.0 * kBins))];
        ++n;
      }
    }
  }
  CHECK(lo >= -6.0);
  CHECK(hi <= 6.0);
  CHECK(lo < -5.9);
  CHECK(hi > 5.9);
  const double expected = n / double(kBins);
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  // 11 dof, p = 0.001
  CHECK(chi2 < 31.26);
}

TEST_CASE("members are warped straight from the source") {
  const auto imgs = sources(2);
  AugmentationConfig c;
  c.tuple_count = 50;
  c.seed = 9;
  for (std::uint64_t i = 0; i < c.tuple_count; ++i) {
    const PatchTuple t = generate_tuple(imgs, c, i);
    const Patch& x = t.reference();
    REQUIRE(x.source_id >= 0);
    const Image& src = imgs[static_cast<std::size_t>(x.source_id)];
    for (std::size_t k = 0; k < 3; ++k) {
      const auto expect = compose(AffineTransform::translate(t.translations[k]), x.transform);
      const Patch& xi = t.patches[kShift1 + k];
      CHECK((xi.transform.linear - expect.linear).norm() < 1e-12);
      CHECK((xi.transform.translation - expect.translation).norm() < 1e-12);
      const Patch rewarp = normalize_patch(warp_patch(src, x.center, expect));
      CHECK(max_abs_diff(rewarp.pixels, xi.pixels) < 1e-6);
    }
    const auto expect_a = compose(t.affine, x.transform);
    const Patch rewarp = normalize_patch(warp_patch(src, x.center, expect_a));
    CHECK(max_abs_diff(rewarp.pixels, t.patches[kAffine].pixels) < 1e-6);
    CHECK(t.affine.translation == Vec2::Zero());
  }
}

TEST_CASE("integer shifts move content") {
  // Pixel offsets o of x_i sample the source at the offsets o - t of x.
  Image img(200, 200);
  for (int y = 0; y < 200; ++y)
    for (int x = 0; x < 200; ++x) img.at(x, y) = static_cast<float>(std::sin(0.3 * x) + std::cos(0.2 * y));
  const Vec2 c(100, 100);
  const Patch x = warp_patch(img, c, AffineTransform::identity());
  const Patch xi = warp_patch(img, c, AffineTransform::translate(Vec2(3, -2)));
  for (int r = 2; r < 30; ++r)
    for (int q = 3; q < 32; ++q)
      CHECK(xi.pixels[r * 32 + q] == doctest::Approx(x.pixels[(r + 2) * 32 + q - 3]).epsilon(1e-6));
}

TEST_CASE("footprints stay inside the source") {
  const auto imgs = sources(4, 112);
  AugmentationConfig c;
  c.seed = 31;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    const PatchTuple t = generate_tuple(imgs, c, i);
    const Image& src = imgs[static_cast<std::size_t>(t.reference().source_id)];
    for (const auto& p : t.patches) {
      const auto box = warp_footprint(p.center, p.transform);
      REQUIRE(box[0] >= 0.0);
      REQUIRE(box[1] >= 0.0);
      REQUIRE(box[2] <= src.width - 1);
      REQUIRE(box[3] <= src.height - 1);
    }
  }
}

TEST_CASE("small source is rejected with the needed size") {
  AugmentationConfig c;
  const int need = c.minimum_image_extent();
  Image small(need - 1, need + 10, 0.5f);
  Rng rng(1);
  try {
    (void)sample_tuple(small, c, rng, 3);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(std::to_string(need)) != std::string::npos);
  }
  Image exact(need, need, 0.5f);
  CHECK_NOTHROW((void)sample_tuple(exact, c, rng));
  std::vector<Image> none;
  CHECK_THROWS_AS((void)build_tuples(none, c), InputError);
}

TEST_CASE("archive round trip") {
  const auto dir = scratch_dir("archive");
  const auto imgs = sources(2);
  AugmentationConfig c;
  c.tuple_count = 8;
  c.seed = 4;
  build_training_set(imgs, c, dir / "a.bin");
  build_training_set(imgs, c, dir / "b.bin", 3);
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));

  TupleArchive archive(dir / "a.bin");
  REQUIRE(archive.size() == 8);
  CHECK(archive.config().seed == 4);
  CHECK(archive.config().translation == 6.0);
  const auto ref = build_tuples(imgs, c);
  for (std::size_t i = 0; i < 8; ++i) {
    const PatchTuple t = archive.get(i);
    for (std::size_t r = 0; r < 5; ++r) CHECK(t.patches[r].pixels == ref[i].patches[r].pixels);
    for (std::size_t k = 0; k < 3; ++k) CHECK(t.translations[k] == ref[i].translations[k]);
    CHECK(t.affine.linear == ref[i].affine.linear);
  }
  CHECK_THROWS_AS((void)archive.get(8), std::out_of_range);

  const std::string bytes = slurp(dir / "a.bin");
  {
    std::ofstream cut(dir / "cut.bin", std::ios::binary);
    cut.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 100));
  }
  CHECK_THROWS_AS(TupleArchive(dir / "cut.bin"), IoError);
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "NOTANARCHIVE" << std::string(200, '\0');
  }
  CHECK_THROWS_AS(TupleArchive(dir / "bad.bin"), InputError);
  CHECK_THROWS_AS(TupleArchive(dir / "missing.bin"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("sequence loading") {
  const auto dir = scratch_dir("seq");
  SequenceDataset seq;
  Rng rng(8);
  for (int k = 0; k < 6; ++k) seq.images.push_back(synthetic_corner_image(64, 48, 300 + k));
  for (int k = 0; k < 5; ++k) {
    Homography h;
    h.matrix << 1.0 + 0.01 * k, 0.02, rng.uniform(-5, 5), -0.01, 0.98, rng.uniform(-5, 5), 1e-5,
        -2e-5, 1.0;
    seq.homographies.push_back(h);
  }
  save_sequence(dir / "six", seq);
  const SequenceDataset loaded = load_sequence(dir / "six");
  CHECK(loaded.name == "six");
  REQUIRE(loaded.images.size() == 6);
  REQUIRE(loaded.homographies.size() == 5);
  CHECK_FALSE(loaded.illumination_only);
  for (int k = 0; k < 5; ++k) CHECK((loaded.homographies[k].matrix - seq.homographies[k].matrix).norm() < 1e-12);
  CHECK(loaded.images[0].width == 64);
  CHECK(loaded.images[0].height == 48);

  SequenceDataset ident;
  ident.images = {seq.images[0], seq.images[1], seq.images[2]};
  ident.homographies = {Homography::identity(), Homography::identity()};
  save_sequence(dir / "ident", ident);
  const auto li = load_sequence(dir / "ident");
  CHECK_FALSE(li.illumination_only);
  for (const auto& h : li.homographies) CHECK(h.matrix == Mat3::Identity());

  ident.illumination_only = true;
  save_sequence(dir / "webcam", ident);
  const auto lw = load_sequence(dir / "webcam");
  CHECK(lw.illumination_only);
  REQUIRE(lw.homographies.size() == 2);
  CHECK(lw.homographies[1].matrix == Mat3::Identity());

  fs::remove(dir / "six" / "H1to4p");
  try {
    (void)load_sequence(dir / "six");
    FAIL("expected missing file error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("H1to4p") != std::string::npos);
  }
  {
    std::ofstream out(dir / "six" / "H1to4p");
    out << "1 0 0\n0 1 0\n0 0\n";
  }
  try {
    (void)load_sequence(dir / "six");
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 16);
    CHECK(std::string(e.what()).find("H1to4p") != std::string::npos);
  }
  {
    std::ofstream out(dir / "six" / "H1to4p");
    out << "1 2 0\n2 4 0\n0 0 1\n";
  }
  try {
    (void)load_sequence(dir / "six");
    FAIL("expected singular error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("singular") != std::string::npos);
  }
  CHECK_THROWS_AS((void)load_sequence(dir / "nowhere"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("homography parse errors carry offsets") {
  CHECK_THROWS_AS((void)parse_homography("1 0 0 0 1 0 0 1", "h"), ParseError);
  try {
    (void)parse_homography("1 0 0 0 x 0 0 0 1", "h");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 8);
  }
  try {
    (void)parse_homography("1 0 0 0 1 0 0 0 1 7", "h");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 18);
  }
  const Homography h = parse_homography("  2 0 1\n0 2 -1.5e0\n0 0 1\n", "h");
  CHECK(h.matrix(0, 0) == 2.0);
  CHECK(h.matrix(1, 2) == -1.5);
}

TEST_CASE("patch normalization") {
  std::vector<float> flat(1024, 0.7f);
  for (float v : normalize_patch(flat)) CHECK(v == 0.0f);

  std::vector<float> half(1024);
  for (std::size_t i = 0; i < half.size(); ++i) half[i] = static_cast<float>(i % 2);
  const auto h = normalize_patch(half);
  double mean = 0.0, var = 0.0;
  for (float v : h) mean += v;
  mean /= 1024;
  for (float v : h) var += (v - mean) * (v - mean);
  var /= 1024;
  CHECK(std::abs(mean) < 1e-7);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-6));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> raw(1024);
    const double offset = rng.uniform(-50, 50), scale = rng.uniform(0.01, 30);
    for (float& v : raw) v = static_cast<float>(offset + scale * rng.normal());
    const auto n = normalize_patch(raw);
    double m = 0.0, s = 0.0;
    for (float v : n) m += v;
    m /= 1024;
    for (float v : n) s += (v - m) * (v - m);
    s /= 1024;
    CHECK(std::abs(m) < 1e-6);
    CHECK(std::abs(s - 1.0) < 1e-5);
  }

  // luma path: an RGB patch equals its gray version
  std::vector<float> rgb(3 * 1024), gray(1024);
  for (std::size_t i = 0; i < 1024; ++i) {
    const float r = float(rng.canonical()), g = float(rng.canonical()), b = float(rng.canonical());
    rgb[3 * i] = r;
    rgb[3 * i + 1] = g;
    rgb[3 * i + 2] = b;
    gray[i] = 0.299f * r + 0.587f * g + 0.114f * b;
  }
  CHECK(max_abs_diff(normalize_patch(rgb, 3), normalize_patch(gray)) < 1e-5);
  CHECK_THROWS_AS((void)normalize_patch(gray, 2), InputError);
}

TEST_CASE("synthetic pairs are related by their homography") {
  AugmentationConfig c;
  const SyntheticPair p = synthetic_pair(160, 120, c, 12);
  CHECK(p.first.width == 160);
  CHECK(p.second.height == 120);
  // interior points of the first view map onto matching intensities
  Rng rng(6);
  int compared = 0;
  double err = 0.0;
  for (int n = 0; n < 400; ++n) {
    const Vec2 a(rng.uniform(20, 140), rng.uniform(20, 100));
    const Vec2 b = p.homography(a);
    if (b.x() < 1 || b.y() < 1 || b.x() > 158 || b.y() > 118) continue;
    err += std::abs(sample_bilinear(p.first, a.x(), a.y(), Border::kClamp) - sample_bilinear(p.second, b.x(), b.y(), Border::kClamp));
    ++compared;
  }
  REQUIRE(compared > 100);
  CHECK(err / compared < 0.05);
  const SyntheticPair q = synthetic_pair(160, 120, c, 12);
  CHECK(q.second.pixels == p.second.pixels);
}
