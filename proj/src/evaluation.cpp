#include "tricov/evaluation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <tuple>

#include "tricov/random.hpp"

namespace tricov {

const char* const kDescriptorBanner =
    "note: matching scores use a 128-d gradient histogram descriptor, not SIFT; "
    "compare them only across detectors within this report";

double circle_iou(const Vec2& c1, double r1, const Vec2& c2, double r2) {
  if (!(r1 > 0.0) || !(r2 > 0.0)) return 0.0;
  const double d = (c1 - c2).norm();
  const double a1 = M_PI * r1 * r1;
  const double a2 = M_PI * r2 * r2;
  if (d >= r1 + r2) return 0.0;
  double inter;
  if (d <= std::abs(r1 - r2)) {
    inter = std::min(a1, a2);
  } else {
    const double x1 = std::clamp((d * d + r1 * r1 - r2 * r2) / (2 * d * r1), -1.0, 1.0);
    const double x2 = std::clamp((d * d + r2 * r2 - r1 * r1) / (2 * d * r2), -1.0, 1.0);
    const double k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
    inter = r1 * r1 * std::acos(x1) + r2 * r2 * std::acos(x2) - 0.5 * std::sqrt(std::max(k, 0.0));
  }
  return inter / (a1 + a2 - inter);
}

std::vector<Vec2> ellipse_polygon(const Ellipse& ellipse, int vertices) {
  std::vector<Vec2> poly(static_cast<std::size_t>(vertices));
  for (int i = 0; i < vertices; ++i) {
    const double t = 2.0 * M_PI * i / vertices;
    poly[i] = ellipse.center + ellipse.shape * Vec2(std::cos(t), std::sin(t));
  }
  if (ellipse.shape.determinant() < 0.0) std::reverse(poly.begin(), poly.end());
  return poly;
}

double polygon_area(std::span<const Vec2> polygon) {
  double twice = 0.0;
  for (std::size_t i = 0; i < polygon.size(); ++i) {
    const Vec2& p = polygon[i];
    const Vec2& q = polygon[(i + 1) % polygon.size()];
    twice += p.x() * q.y() - q.x() * p.y();
  }
  return 0.5 * twice;
}

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace

std::vector<Vec2> clip_convex(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> out(subject.begin(), subject.end());
  const double sign = polygon_area(clip) >= 0.0 ? 1.0 : -1.0;
  for (std::size_t e = 0; e < clip.size() && !out.empty(); ++e) {
    const Vec2& c1 = clip[e];
    const Vec2& c2 = clip[(e + 1) % clip.size()];
    std::vector<Vec2> in = std::move(out);
    out.clear();
    for (std::size_t i = 0; i < in.size(); ++i) {
      const Vec2& p = in[i];
      const Vec2& q = in[(i + 1) % in.size()];
      const double sp = sign * cross(c1, c2, p);
      const double sq = sign * cross(c1, c2, q);
      if (sp >= 0.0) out.push_back(p);
      if ((sp >= 0.0) != (sq >= 0.0)) {
        const double t = sp / (sp - sq);
        out.push_back(p + t * (q - p));
      }
    }
  }
  return out;
}

namespace {

// b's circle carried into a's image.
struct Projected {
  ProjectedRegion region;
  bool circle = false;
  double circle_radius = 0.0;
  double reach = 0.0;  // bound on the distance from center to boundary
};

Projected project_keypoint(const Keypoint& b, const Homography& b_to_a) {
  Projected p;
  p.region = project_region(b_to_a, b.position, b.radius);
  if (!p.region.comparable) return p;
  const Mat2& s = p.region.ellipse.shape;
  const double scale = s.norm();
  const double tol = 1e-12 * scale;
  const bool rotation = std::abs(s(0, 0) - s(1, 1)) + std::abs(s(0, 1) + s(1, 0)) <= tol;
  const bool reflection = std::abs(s(0, 0) + s(1, 1)) + std::abs(s(0, 1) - s(1, 0)) <= tol;
  p.circle = rotation || reflection;
  p.circle_radius = std::sqrt(std::abs(s.determinant()));
  p.reach = Eigen::JacobiSVD<Mat2>(s).singularValues()(0);
  return p;
}

double overlap_projected(const Keypoint& a, const Projected& pb) {
  if (!pb.region.comparable) return 0.0;
  const Vec2& cb = pb.region.ellipse.center;
  if ((a.position - cb).norm() >= a.radius + pb.reach) return 0.0;
  if (pb.circle) return circle_iou(a.position, a.radius, cb, pb.circle_radius);
  Ellipse ea{a.position, a.radius * Mat2::Identity()};
  const auto poly_a = ellipse_polygon(ea);
  const auto poly_b = ellipse_polygon(pb.region.ellipse);
  const double area_a = std::abs(polygon_area(poly_a));
  const double area_b = std::abs(polygon_area(poly_b));
  const double inter = std::abs(polygon_area(clip_convex(poly_b, poly_a)));
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

bool try_inverse(const Homography& h, Homography& inv) {
  try {
    inv = h.inverse();
    return inv.matrix.allFinite();
  } catch (const std::domain_error&) {
    return false;
  }
}

}  // namespace

OverlapResult region_overlap(const Keypoint& a, const Keypoint& b, const Homography& a_to_b) {
  Homography b_to_a;
  if (!try_inverse(a_to_b, b_to_a)) return {0.0, false};
  const Projected pb = project_keypoint(b, b_to_a);
  if (!pb.region.comparable) return {0.0, false};
  return {overlap_projected(a, pb), true};
}

namespace {

struct SharedView {
  std::vector<bool> a, b;
  std::size_t count_a = 0, count_b = 0;
};

SharedView shared_view(std::span<const Keypoint> a, std::span<const Keypoint> b,
                       const Homography& a_to_b, const Homography& b_to_a, ImageSize size_a,
                       ImageSize size_b) {
  SharedView v;
  v.a.resize(a.size());
  v.b.resize(b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec2 p = a_to_b(a[i].position);
    v.a[i] = p.allFinite() && size_b.contains(p);
    v.count_a += v.a[i];
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    const Vec2 p = b_to_a(b[j].position);
    v.b[j] = p.allFinite() && size_a.contains(p);
    v.count_b += v.b[j];
  }
  return v;
}

}  // namespace

std::vector<OverlapPair> overlap_candidates(std::span<const Keypoint> a,
                                            std::span<const Keypoint> b,
                                            const Homography& a_to_b, ImageSize size_a,
                                            ImageSize size_b, double threshold) {
  std::vector<OverlapPair> pairs;
  Homography b_to_a;
  if (!try_inverse(a_to_b, b_to_a)) return pairs;
  const SharedView view = shared_view(a, b, a_to_b, b_to_a, size_a, size_b);
  std::vector<Projected> projected(b.size());
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (view.b[j]) projected[j] = project_keypoint(b[j], b_to_a);
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!view.a[i]) continue;
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (!view.b[j]) continue;
      const double r = overlap_projected(a[i], projected[j]);
      if (r > threshold) pairs.push_back({i, j, r});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const OverlapPair& x, const OverlapPair& y) {
    if (x.ratio != y.ratio) return x.ratio > y.ratio;
    return std::tie(x.index_a, x.index_b) < std::tie(y.index_a, y.index_b);
  });
  return pairs;
}

RepeatabilityResult repeatability(std::span<const Keypoint> a, std::span<const Keypoint> b,
                                  const Homography& a_to_b, ImageSize size_a,
                                  ImageSize size_b, double threshold) {
  RepeatabilityResult res;
  res.k = std::max(a.size(), b.size());
  Homography b_to_a;
  if (!try_inverse(a_to_b, b_to_a)) return res;
  const SharedView view = shared_view(a, b, a_to_b, b_to_a, size_a, size_b);
  res.shared_a = view.count_a;
  res.shared_b = view.count_b;
  const auto pairs = overlap_candidates(a, b, a_to_b, size_a, size_b, threshold);
  std::vector<bool> used_a(a.size()), used_b(b.size());
  for (const auto& p : pairs) {
    if (used_a[p.index_a] || used_b[p.index_b]) continue;
    used_a[p.index_a] = used_b[p.index_b] = true;
    res.matches.push_back(p);
  }
  res.correspondences = res.matches.size();
  const std::size_t denom = std::min(res.shared_a, res.shared_b);
  if (denom > 0) res.repeatability = static_cast<double>(res.correspondences) / denom;
  return res;
}

Descriptor simple_descriptor(const Image& image, const Keypoint& kp) {
  constexpr int kSamples = 16;
  Descriptor d;
  const double r = kp.radius;
  const double step = 2.0 * r / kSamples;
  std::array<double, kDescriptorSize> hist{};
  auto sample = [&](double x, double y) { return sample_bilinear(image, x, y, Border::kClamp); };
  for (int sy = 0; sy < kSamples; ++sy) {
    for (int sx = 0; sx < kSamples; ++sx) {
      const double ox = -r + (sx + 0.5) * step;
      const double oy = -r + (sy + 0.5) * step;
      const double x = kp.position.x() + ox;
      const double y = kp.position.y() + oy;
      const double gx = sample(x + 0.5 * step, y) - sample(x - 0.5 * step, y);
      const double gy = sample(x, y + 0.5 * step) - sample(x, y - 0.5 * step);
      const double mag = std::hypot(gx, gy);
      if (mag <= 0.0) continue;
      const double weight = mag * std::exp(-(ox * ox + oy * oy) / (2.0 * r * r));
      double angle = std::atan2(gy, gx);
      if (angle < 0.0) angle += 2.0 * M_PI;
      const double bin = angle / (2.0 * M_PI) * 8.0;
      const int b0 = static_cast<int>(std::floor(bin)) % 8;
      const int b1 = (b0 + 1) % 8;
      const double f = bin - std::floor(bin);
      const int cell = (sy / 4) * 4 + sx / 4;
      hist[cell * 8 + b0] += weight * (1.0 - f);
      hist[cell * 8 + b1] += weight * f;
    }
  }
  auto normalize = [&] {
    double n = 0.0;
    for (double v : hist) n += v * v;
    n = std::sqrt(n);
    if (n > 1e-12) {
      for (double& v : hist) v /= n;
    }
    return n;
  };
  if (normalize() <= 1e-12) {
    d.low_texture = true;
    return d;
  }
  for (double& v : hist) v = std::min(v, 0.2);
  normalize();
  for (std::size_t i = 0; i < kDescriptorSize; ++i) d.values[i] = static_cast<float>(hist[i]);
  return d;
}

MatchingResult matching_score(std::span<const Descriptor> desc_a,
                              std::span<const Descriptor> desc_b,
                              std::span<const Keypoint> a, std::span<const Keypoint> b,
                              const Homography& a_to_b, ImageSize size_a, ImageSize size_b,
                              double threshold) {
  MatchingResult res;
  res.k = std::max(a.size(), b.size());
  Homography b_to_a;
  if (!try_inverse(a_to_b, b_to_a)) return res;
  const SharedView view = shared_view(a, b, a_to_b, b_to_a, size_a, size_b);
  if (std::min(view.count_a, view.count_b) == 0 || res.k == 0) return res;

  std::vector<std::size_t> ia, ib;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!desc_a[i].low_texture) ia.push_back(i);
  for (std::size_t j = 0; j < b.size(); ++j)
    if (!desc_b[j].low_texture) ib.push_back(j);

  if (!ia.empty() && !ib.empty()) {
    Eigen::MatrixXd ma(ia.size(), kDescriptorSize), mb(ib.size(), kDescriptorSize);
    for (std::size_t r = 0; r < ia.size(); ++r)
      for (std::size_t c = 0; c < kDescriptorSize; ++c) ma(r, c) = desc_a[ia[r]].values[c];
    for (std::size_t r = 0; r < ib.size(); ++r)
      for (std::size_t c = 0; c < kDescriptorSize; ++c) mb(r, c) = desc_b[ib[r]].values[c];
    const Eigen::VectorXd na = ma.rowwise().squaredNorm();
    const Eigen::VectorXd nb = mb.rowwise().squaredNorm();
    Eigen::MatrixXd dist = -2.0 * ma * mb.transpose();
    dist.colwise() += na;
    dist.rowwise() += nb.transpose();

    std::vector<Eigen::Index> best_b(ia.size()), best_a(ib.size());
    for (Eigen::Index r = 0; r < dist.rows(); ++r) dist.row(r).minCoeff(&best_b[r]);
    for (Eigen::Index c = 0; c < dist.cols(); ++c) dist.col(c).minCoeff(&best_a[c]);
    for (std::size_t r = 0; r < ia.size(); ++r) {
      const auto c = static_cast<std::size_t>(best_b[r]);
      if (static_cast<std::size_t>(best_a[c]) != r) continue;
      ++res.matches;
      if (region_overlap(a[ia[r]], b[ib[c]], a_to_b).ratio > threshold) ++res.correct;
    }
  }
  res.matching_score = static_cast<double>(res.correct) / static_cast<double>(res.k);
  return res;
}

MatchingResult matching_score(const Image& image_a, const Image& image_b,
                              std::span<const Keypoint> a, std::span<const Keypoint> b,
                              const Homography& a_to_b, double threshold) {
  std::vector<Descriptor> da, db;
  da.reserve(a.size());
  db.reserve(b.size());
  for (const auto& kp : a) da.push_back(simple_descriptor(image_a, kp));
  for (const auto& kp : b) db.push_back(simple_descriptor(image_b, kp));
  return matching_score(da, db, a, b, a_to_b, {image_a.width, image_a.height},
                        {image_b.width, image_b.height}, threshold);
}

std::vector<Keypoint> random_keypoints(ImageSize size, std::size_t k, std::uint64_t seed,
                                       double radius) {
  Rng rng(seed, 0x7a11d0ULL);
  std::vector<Keypoint> out(k);
  for (auto& kp : out) {
    const double x = rng.uniform(0.0, size.width - 1);
    const double y = rng.uniform(0.0, size.height - 1);
    kp.position = Vec2(x, y);
    kp.score = 1.0;
    kp.radius = radius;
  }
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd m;
  m.count = values.size();
  if (values.empty()) return m;
  m.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - m.mean) * (v - m.mean);
  m.stddev = std::sqrt(var / values.size());
  return m;
}

std::vector<AggregateRow> aggregate_report(std::span<const EvalRecord> records) {
  using Key = std::tuple<std::string, std::string, std::size_t>;
  std::vector<Key> order;
  // per key, per run: sums and counts
  struct Acc {
    std::map<std::size_t, std::pair<double, std::size_t>> rep, ms;
    std::size_t pairs = 0;
  };
  std::map<Key, Acc> acc;
  for (const auto& r : records) {
    Key key{r.detector, r.dataset, r.k};
    if (!acc.count(key)) order.push_back(key);
    auto& a = acc[key];
    if (r.repeatability) {
      auto& s = a.rep[r.run];
      s.first += *r.repeatability;
      ++s.second;
      ++a.pairs;
    }
    if (r.matching_score) {
      auto& s = a.ms[r.run];
      s.first += *r.matching_score;
      ++s.second;
    }
  }
  std::vector<AggregateRow> rows;
  for (const auto& key : order) {
    const auto& a = acc[key];
    AggregateRow row;
    std::tie(row.detector, row.dataset, row.k) = key;
    std::vector<double> rep, ms;
    for (const auto& [run, s] : a.rep) rep.push_back(s.first / s.second);
    for (const auto& [run, s] : a.ms) ms.push_back(s.first / s.second);
    row.repeatability = mean_std(rep);
    row.matching_score = mean_std(ms);
    row.pairs = a.pairs;
    rows.push_back(row);
  }
  return rows;
}

namespace {

std::string cell(const MeanStd& m) {
  if (m.count == 0) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << 100.0 * m.mean << " +/- " << 100.0 * m.stddev;
  return s.str();
}

std::string table(std::span<const AggregateRow> rows, bool matching) {
  std::vector<std::pair<std::string, std::size_t>> columns;
  std::vector<std::string> detectors;
  for (const auto& r : rows) {
    const std::pair<std::string, std::size_t> c{r.dataset, r.k};
    if (std::find(columns.begin(), columns.end(), c) == columns.end()) columns.push_back(c);
    if (std::find(detectors.begin(), detectors.end(), r.detector) == detectors.end())
      detectors.push_back(r.detector);
  }
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{"detector"};
  for (const auto& [ds, k] : columns) header.push_back(ds + " k=" + std::to_string(k));
  grid.push_back(header);
  for (const auto& det : detectors) {
    std::vector<std::string> line{det};
    for (const auto& [ds, k] : columns) {
      std::string v = "-";
      for (const auto& r : rows) {
        if (r.detector == det && r.dataset == ds && r.k == k) {
          v = cell(matching ? r.matching_score : r.repeatability);
        }
      }
      line.push_back(v);
    }
    grid.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : grid)
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::ostringstream out;
  for (const auto& line : grid) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(width[c]) + 2) << line[c];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string format_report(std::span<const AggregateRow> rows, const std::string& title) {
  std::ostringstream out;
  if (!title.empty()) out << title << "\n\n";
  out << "Repeatability (%), mean +/- std over runs\n" << table(rows, false) << '\n';
  out << "Matching score (%), mean +/- std over runs\n" << table(rows, true) << '\n';
  out << kDescriptorBanner << '\n';
  return out.str();
}

std::string format_report_tsv(std::span<const AggregateRow> rows) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "detector\tdataset\tk\truns\tpairs\trepeatability_mean\trepeatability_std\t"
         "matching_mean\tmatching_std\n";
  for (const auto& r : rows) {
    out << r.detector << '\t' << r.dataset << '\t' << r.k << '\t' << r.repeatability.count
        << '\t' << r.pairs << '\t' << r.repeatability.mean << '\t' << r.repeatability.stddev
        << '\t' << r.matching_score.mean << '\t' << r.matching_score.stddev << '\n';
  }
  return out.str();
}

std::string format_records_tsv(std::span<const EvalRecord> records) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "detector\tdataset\tpair\trun\tk\trepeatability\tmatching_score\n";
  for (const auto& r : records) {
    out << r.detector << '\t' << r.dataset << '\t' << r.pair << '\t' << r.run << '\t' << r.k
        << '\t';
    if (r.repeatability) out << *r.repeatability; else out << "NA";
    out << '\t';
    if (r.matching_score) out << *r.matching_score; else out << "NA";
    out << '\n';
  }
  return out.str();
}

}  // namespace tricov
