#include "slotflow/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <thread>
#include <tuple>

#include "slotflow/error.hpp"
#include "slotflow/geo_metrics.hpp"
#include "slotflow/nn.hpp"

namespace slotflow {

Points assemble(const std::vector<PartPointCloud>& parts) {
  Index total = 0;
  for (const auto& p : parts) total += p.points.rows();
  Points out(total, 3);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.points.rows()) = p.points.cast<double>();
    at += p.points.rows();
  }
  return out;
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kFit = 0.45;

// A primitive placed in the pre-normalisation object frame. Cylinders and cones
// are aligned with +y; `half` holds (radius, half-height, radius) for them.
struct Placed {
  Primitive type;
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  bool apex_up = true;
};

class Sampler {
 public:
  explicit Sampler(std::mt19937_64& rng) : rng_(rng) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
  double gauss() { return std::normal_distribution<double>(0.0, 1.0)(rng_); }

  Points surface(const Placed& p, int n) {
    Points pts(n, 3);
    for (int i = 0; i < n; ++i) pts.row(i) = (p.center + local_point(p)).transpose();
    return pts;
  }

 private:
  Eigen::Vector3d local_point(const Placed& p) {
    switch (p.type) {
      case Primitive::Box: return box_point(p.half);
      case Primitive::Sphere: return sphere_point(p.half.x());
      case Primitive::Cylinder: return cylinder_point(p.half.x(), p.half.y());
      case Primitive::Cone: return cone_point(p.half.x(), p.half.y(), p.apex_up);
    }
    return Eigen::Vector3d::Zero();
  }

  Eigen::Vector3d box_point(const Eigen::Vector3d& h) {
    const double ax = h.y() * h.z(), ay = h.x() * h.z(), az = h.x() * h.y();
    const double r = uniform(0.0, ax + ay + az);
    const double sign = uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    const double u = uniform(-1.0, 1.0), v = uniform(-1.0, 1.0);
    if (r < ax) return {sign * h.x(), u * h.y(), v * h.z()};
    if (r < ax + ay) return {u * h.x(), sign * h.y(), v * h.z()};
    return {u * h.x(), v * h.y(), sign * h.z()};
  }

  Eigen::Vector3d sphere_point(double radius) {
    Eigen::Vector3d d(gauss(), gauss(), gauss());
    while (d.norm() < 1e-9) d = Eigen::Vector3d(gauss(), gauss(), gauss());
    return radius * d.normalized();
  }

  Eigen::Vector3d disc_point(double radius, double y) {
    const double rr = radius * std::sqrt(uniform(0.0, 1.0));
    const double th = uniform(0.0, 2.0 * kPi);
    return {rr * std::cos(th), y, rr * std::sin(th)};
  }

  Eigen::Vector3d cylinder_point(double radius, double half_h) {
    const double side = 2.0 * kPi * radius * 2.0 * half_h;
    const double cap = kPi * radius * radius;
    const double r = uniform(0.0, side + 2.0 * cap);
    if (r < side) {
      const double th = uniform(0.0, 2.0 * kPi);
      return {radius * std::cos(th), uniform(-half_h, half_h), radius * std::sin(th)};
    }
    return disc_point(radius, r < side + cap ? -half_h : half_h);
  }

  Eigen::Vector3d cone_point(double radius, double half_h, bool apex_up) {
    const double slant = std::sqrt(radius * radius + 4.0 * half_h * half_h);
    const double side = kPi * radius * slant;
    const double base = kPi * radius * radius;
    const double dir = apex_up ? 1.0 : -1.0;
    if (uniform(0.0, side + base) < side) {
      const double s = std::sqrt(uniform(0.0, 1.0));  // distance fraction from the apex
      const double th = uniform(0.0, 2.0 * kPi);
      return {radius * s * std::cos(th), dir * (half_h - 2.0 * half_h * s), radius * s * std::sin(th)};
    }
    return disc_point(radius, -dir * half_h);
  }

  std::mt19937_64& rng_;
};

Primitive random_type(Sampler& s) { return static_cast<Primitive>(s.integer(0, kPrimitiveTypes - 1)); }

// Half-extents for a primitive of a given type fitting a (radius, half-height) budget.
Eigen::Vector3d shape_half(Primitive t, double radius, double half_h) {
  switch (t) {
    case Primitive::Box: return {radius, half_h, radius};
    case Primitive::Sphere: return {radius, radius, radius};
    default: return {radius, half_h, radius};
  }
}

double vertical_half(const Placed& p) { return p.type == Primitive::Sphere ? p.half.x() : p.half.y(); }

// Legs spread evenly in x under a slab, alternating in depth.
void add_legs(std::vector<Placed>& out, Sampler& s, int count, double span_x, double depth,
              double length) {
  const bool boxy = s.uniform(0.0, 1.0) < 0.3;
  const double r = s.uniform(0.025, 0.04);
  for (int i = 0; i < count; ++i) {
    const double x = count == 1 ? 0.0 : -span_x / 2 + span_x * i / (count - 1);
    const double z = count == 1 ? 0.0 : ((i % 2 == 0) ? depth / 4 : -depth / 4);
    Placed leg;
    leg.type = boxy ? Primitive::Box : Primitive::Cylinder;
    leg.center = {x, length / 2, z};
    leg.half = {r, length / 2, r};
    out.push_back(leg);
  }
}

std::vector<Placed> table(Sampler& s, int n) {
  std::vector<Placed> out;
  const double w = s.uniform(0.7, 1.0), d = s.uniform(0.35, 0.6), th = s.uniform(0.05, 0.09);
  const double leg = s.uniform(0.35, 0.6), gap = 0.02;
  out.push_back({Primitive::Box, {0.0, leg + gap + th / 2, 0.0}, {w / 2, th / 2, d / 2}});
  add_legs(out, s, n - 1, 0.8 * w, d, leg);
  return out;
}

std::vector<Placed> chair(Sampler& s, int n) {
  std::vector<Placed> out;
  const double w = s.uniform(0.45, 0.65), d = s.uniform(0.4, 0.55), th = s.uniform(0.05, 0.08);
  const double leg = s.uniform(0.3, 0.45), gap = 0.02;
  const double seat_y = leg + gap + th / 2;
  out.push_back({Primitive::Box, {0.0, seat_y, 0.0}, {w / 2, th / 2, d / 2}});
  const double bh = s.uniform(0.3, 0.5), bt = s.uniform(0.04, 0.06);
  const double back_y = seat_y + th / 2 + gap + bh / 2;
  out.push_back({Primitive::Box, {0.0, back_y, -d / 2 + bt / 2}, {w / 2, bh / 2, bt / 2}});
  add_legs(out, s, n - 2, 0.8 * w, d, leg);
  return out;
}

std::vector<Placed> lamp(Sampler& s, int n) {
  std::vector<Placed> out;
  double y = 0.0;
  const double gap = 0.03;
  if (n >= 3) {
    const bool boxy = s.uniform(0.0, 1.0) < 0.5;
    const double r = s.uniform(0.15, 0.25), h = s.uniform(0.03, 0.06);
    out.push_back({boxy ? Primitive::Box : Primitive::Cylinder, {0.0, h, 0.0}, {r, h, r}});
    y = 2 * h + gap;
  }
  const double pole_r = s.uniform(0.02, 0.035), pole_h = s.uniform(0.4, 0.7);
  out.push_back({Primitive::Cylinder, {0.0, y + pole_h / 2, 0.0}, {pole_r, pole_h / 2, pole_r}});
  y += pole_h + gap;
  const double shade_r = s.uniform(0.2, 0.32), shade_h = s.uniform(0.18, 0.3);
  out.push_back({Primitive::Cone, {0.0, y + shade_h / 2, 0.0}, {shade_r, shade_h / 2, shade_r}, true});
  y += shade_h + gap;
  if (n >= 4) {
    const double r = s.uniform(0.05, 0.08);
    out.push_back({Primitive::Sphere, {0.0, y + r, 0.0}, {r, r, r}});
  }
  return out;
}

std::vector<Placed> totem(Sampler& s, int n) {
  std::vector<Placed> out;
  double y = 0.0;
  const double gap = 0.1;
  for (int i = 0; i < n; ++i) {
    Placed p;
    p.type = random_type(s);
    p.half = shape_half(p.type, s.uniform(0.1, 0.18), s.uniform(0.06, 0.12));
    p.apex_up = true;
    const double vh = vertical_half(p);
    p.center = {0.0, y + vh, 0.0};
    y += 2 * vh + gap;
    out.push_back(p);
  }
  return out;
}

std::vector<Placed> single(Sampler& s) {
  Placed p;
  p.type = random_type(s);
  p.half = shape_half(p.type, s.uniform(0.15, 0.3), s.uniform(0.15, 0.3));
  if (p.type == Primitive::Box) p.half.z() = s.uniform(0.15, 0.3);
  p.center = Eigen::Vector3d::Zero();
  return {p};
}

struct Family {
  const char* tag;
  int min_parts;
  int max_parts;
};

constexpr Family kFamilies[] = {
    {"table", 2, 6}, {"chair", 3, 6}, {"lamp", 2, 4}, {"totem", 2, 6}, {"single", 1, 1},
};
static_assert(std::size(kFamilies) == kTemplateFamilies);

void check_spec(const GeneratorSpec& spec) {
  if (spec.min_parts < 1 || spec.max_parts < spec.min_parts || spec.max_parts > spec.p_max ||
      spec.points_per_part < 1) {
    throw config_error("generator: invalid part range [" + std::to_string(spec.min_parts) + ", " +
                       std::to_string(spec.max_parts) + "] for p_max " + std::to_string(spec.p_max));
  }
}

}  // namespace

CompositeObject gen_object(const GeneratorSpec& spec, std::uint64_t seed) {
  check_spec(spec);
  std::mt19937_64 rng = make_rng(seed, 0x67656eULL);
  Sampler s(rng);
  const int n = s.integer(spec.min_parts, spec.max_parts);

  std::vector<const Family*> fits;
  for (const auto& f : kFamilies) {
    if (n >= f.min_parts && n <= f.max_parts) fits.push_back(&f);
  }
  // n in [1, 6] always has a family; larger counts fall back to totems.
  const Family* fam = fits.empty() ? &kFamilies[3]
                                   : fits[static_cast<std::size_t>(s.integer(0, static_cast<int>(fits.size()) - 1))];
  const std::string tag = fam->tag;

  std::vector<Placed> placed;
  if (tag == "table") placed = table(s, n);
  else if (tag == "chair") placed = chair(s, n);
  else if (tag == "lamp") placed = lamp(s, n);
  else if (tag == "single") placed = single(s);
  else placed = totem(s, n);

  std::stable_sort(placed.begin(), placed.end(), [](const Placed& a, const Placed& b) {
    return std::make_tuple(static_cast<int>(a.type), a.center.z(), a.center.y(), a.center.x()) <
           std::make_tuple(static_cast<int>(b.type), b.center.z(), b.center.y(), b.center.x());
  });

  std::vector<Points> clouds;
  clouds.reserve(placed.size());
  for (const auto& p : placed) clouds.push_back(s.surface(p, spec.points_per_part));

  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& c : clouds) {
    lo = lo.cwiseMin(c.colwise().minCoeff().transpose());
    hi = hi.cwiseMax(c.colwise().maxCoeff().transpose());
  }
  const Eigen::Vector3d mid = (lo + hi) / 2;
  const double half = std::max((hi - lo).maxCoeff() / 2, 1e-9);
  const double k = kFit / half;

  CompositeObject obj;
  obj.object_id = "obj-" + std::to_string(seed);
  obj.category_tag = tag;
  for (std::size_t i = 0; i < placed.size(); ++i) {
    PartPointCloud part;
    Points c = clouds[i];
    c.rowwise() -= mid.transpose();
    c *= k;
    // float rounding must not push a point past the fit cube
    part.points = c.cast<float>().cwiseMax(-static_cast<float>(kFit)).cwiseMin(static_cast<float>(kFit));
    part.type_id = static_cast<int>(placed[i].type);
    part.part_index = static_cast<int>(i);
    obj.parts.push_back(std::move(part));
  }
  obj.n_obj = static_cast<int>(obj.parts.size());
  return obj;
}

bool filter_object(const CompositeObject& obj, double iou_cap) {
  if (obj.n_obj >= 16) return false;
  return max_pairwise_iou(obj.parts, 64, Box3::canonical()) < iou_cap;
}

ConditionImage render_silhouette(const CompositeObject& obj, int size) {
  if (size < 1) throw config_error("render: size must be positive");
  ConditionImage img;
  img.size = size;
  img.pixels.assign(static_cast<std::size_t>(size * size), 0.0f);
  for (const auto& part : obj.parts) {
    for (Index i = 0; i < part.points.rows(); ++i) {
      const double x = part.points(i, 0), y = part.points(i, 1);
      const int col = std::clamp(static_cast<int>(std::floor((x + 0.5) * size)), 0, size - 1);
      const int row = std::clamp(static_cast<int>(std::floor((0.5 - y) * size)), 0, size - 1);
      img.at(row, col) = 1.0f;
    }
  }
  return img;
}

Dataset build_dataset(const GeneratorSpec& spec, int count, std::uint64_t base_seed, int render_size,
                      double iou_cap, int jobs) {
  if (count < 0) throw config_error("dataset: negative object count");
  check_spec(spec);
  if (render_size < 1) throw config_error("render: size must be positive");
  Dataset ds;
  ds.points_per_part = spec.points_per_part;
  ds.render_size = render_size;
  ds.entries.resize(static_cast<std::size_t>(count));

  auto make = [&](int i) {
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t seed = base_seed * 1000003ULL + static_cast<std::uint64_t>(i) * 131ULL + attempt;
      CompositeObject obj = gen_object(spec, seed);
      if (!filter_object(obj, iou_cap)) continue;
      auto& e = ds.entries[static_cast<std::size_t>(i)];
      e.image = render_silhouette(obj, render_size);
      e.object = std::move(obj);
      return;
    }
  };

  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) make(i);
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) {
      pool.emplace_back([&, j] {
        for (int i = j; i < count; i += jobs) make(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  return ds;
}

}  // namespace slotflow
