#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "dhd/error.hpp"
#include "dhd/random.hpp"
#include "json.hpp"

namespace dhd {

// Feature-space transform family. A feature vector is treated as a 1-D signal
// so that crop, flip, and blur have positional meaning.

/// Keeps a random contiguous (circular) window covering a fraction in
/// [min_keep, max_keep] of the coordinates; everything else is zeroed.
struct MaskCrop {
  double min_keep = 0.5;
  double max_keep = 1.0;
};
/// Reverses coordinate order.
struct CoordinateFlip {};
/// Adds per-coordinate noise drawn from U(-amplitude, amplitude).
struct AdditiveJitter {
  double amplitude = 0.5;
};
/// Zeroes a random subset holding `fraction` of the coordinates.
struct ChannelDrop {
  double fraction = 0.5;
};
/// Moving average with a radius drawn from [1, max_radius].
struct SmoothBlur {
  std::size_t max_radius = 2;
};
struct GaussianNoise {
  double stddev = 0.5;
};
/// Multiplies the whole vector by a factor drawn from [min_factor, max_factor].
struct ZoomScale {
  double min_factor = 0.5;
  double max_factor = 1.5;
};
/// Rotates `pairs` random coordinate pairs by angles in [-max_angle, max_angle].
struct RotationMix {
  std::size_t pairs = 8;
  double max_angle = 0.7853981633974483;
};
/// Shears `pairs` random coordinate pairs: (a, b) -> (a + s b, b), |s| <= max_shear.
struct ShearMix {
  std::size_t pairs = 8;
  double max_shear = 0.5;
};
/// Zeroes each coordinate independently with probability `rate`.
struct Dropout {
  double rate = 0.2;
};
/// Zeroes one contiguous (circular) window of `fraction` of the coordinates.
struct Cutout {
  double fraction = 0.25;
};

using TransformParams = std::variant<MaskCrop, CoordinateFlip, AdditiveJitter, ChannelDrop, SmoothBlur, GaussianNoise,
                                     ZoomScale, RotationMix, ShearMix, Dropout, Cutout>;

inline std::string_view transform_name(const TransformParams& p) {
  static constexpr std::string_view names[] = {"mask-crop",     "coordinate-flip", "additive-jitter", "channel-drop",
                                               "smooth-blur",   "gaussian-noise",  "zoom-scale",      "rotation-mix",
                                               "shear-mix",     "dropout",         "cutout"};
  return names[p.index()];
}

struct TransformSpec {
  TransformParams params;
  double base_probability = 1.0;

  std::string_view name() const { return transform_name(params); }

  void validate() const {
    auto unit = [&](double v, const char* field) {
      if (!(v >= 0.0 && v <= 1.0))
        throw InvalidConfig(std::string(name()) + "." + field + " must be in [0, 1]");
    };
    auto non_negative = [&](double v, const char* field) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidConfig(std::string(name()) + "." + field + " must be >= 0");
    };
    unit(base_probability, "probability");
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, MaskCrop>) {
            unit(p.min_keep, "min_keep");
            unit(p.max_keep, "max_keep");
            if (p.min_keep > p.max_keep) throw InvalidConfig("mask-crop.min_keep must be <= max_keep");
          } else if constexpr (std::is_same_v<T, AdditiveJitter>) {
            non_negative(p.amplitude, "amplitude");
          } else if constexpr (std::is_same_v<T, ChannelDrop>) {
            unit(p.fraction, "fraction");
          } else if constexpr (std::is_same_v<T, SmoothBlur>) {
            if (p.max_radius < 1) throw InvalidConfig("smooth-blur.max_radius must be >= 1");
          } else if constexpr (std::is_same_v<T, GaussianNoise>) {
            non_negative(p.stddev, "stddev");
          } else if constexpr (std::is_same_v<T, ZoomScale>) {
            non_negative(p.min_factor, "min_factor");
            non_negative(p.max_factor, "max_factor");
            if (p.min_factor > p.max_factor) throw InvalidConfig("zoom-scale.min_factor must be <= max_factor");
          } else if constexpr (std::is_same_v<T, RotationMix>) {
            non_negative(p.max_angle, "max_angle");
          } else if constexpr (std::is_same_v<T, ShearMix>) {
            non_negative(p.max_shear, "max_shear");
          } else if constexpr (std::is_same_v<T, Dropout>) {
            unit(p.rate, "rate");
          } else if constexpr (std::is_same_v<T, Cutout>) {
            unit(p.fraction, "fraction");
          }
        },
        params);
  }
};

/// Ordered transforms sharing one occurrence scale s_T: transform i fires
/// with probability scale * base_probability_i.
struct TransformGroup {
  std::vector<TransformSpec> transforms;
  double scale = 1.0;

  void validate() const {
    if (!(scale >= 0.0 && scale <= 1.0)) throw InvalidConfig("transform group scale must be in [0, 1]");
    for (const auto& t : transforms) t.validate();
  }

  TransformGroup scaled(double s) const {
    TransformGroup g = *this;
    g.scale = s;
    return g;
  }
};

// Drawn operations. Everything random is fixed at sampling time.

struct MaskOp {
  std::vector<std::uint8_t> keep;
};
struct AddOp {
  std::vector<double> noise;
};
struct ReverseOp {};
struct BlurOp {
  std::size_t radius = 1;
};
struct ScaleOp {
  double factor = 1.0;
};
struct PlanarMix {
  std::size_t i = 0;
  std::size_t j = 0;
  double a = 1.0, b = 0.0, c = 0.0, d = 1.0;  // [x_i, x_j] <- [[a, b], [c, d]] [x_i, x_j]
};
struct PlanarOp {
  std::vector<PlanarMix> mixes;
};

using TransformOp = std::variant<MaskOp, AddOp, ReverseOp, BlurOp, ScaleOp, PlanarOp>;

struct AppliedTransform {
  std::string name;
  TransformOp op;
};

/// A sampled transform t; applying it involves no further randomness.
class ComposedTransform {
 public:
  ComposedTransform() = default;
  explicit ComposedTransform(std::vector<AppliedTransform> steps) : steps_(std::move(steps)) {}

  bool is_identity() const { return steps_.empty(); }
  std::size_t size() const { return steps_.size(); }
  const std::vector<AppliedTransform>& steps() const { return steps_; }

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> v(x.begin(), x.end());
    std::vector<double> scratch;
    for (const auto& step : steps_) {
      std::visit(
          [&](const auto& op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, MaskOp>) {
              check(op.keep.size() == v.size());
              for (std::size_t i = 0; i < v.size(); ++i)
                if (!op.keep[i]) v[i] = 0.0;
            } else if constexpr (std::is_same_v<T, AddOp>) {
              check(op.noise.size() == v.size());
              for (std::size_t i = 0; i < v.size(); ++i) v[i] += op.noise[i];
            } else if constexpr (std::is_same_v<T, ReverseOp>) {
              std::reverse(v.begin(), v.end());
            } else if constexpr (std::is_same_v<T, BlurOp>) {
              scratch.assign(v.size(), 0.0);
              const std::size_t n = v.size();
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t lo = i >= op.radius ? i - op.radius : 0;
                const std::size_t hi = std::min(n - 1, i + op.radius);
                double s = 0.0;
                for (std::size_t k = lo; k <= hi; ++k) s += v[k];
                scratch[i] = s / static_cast<double>(hi - lo + 1);
              }
              v.swap(scratch);
            } else if constexpr (std::is_same_v<T, ScaleOp>) {
              for (double& e : v) e *= op.factor;
            } else if constexpr (std::is_same_v<T, PlanarOp>) {
              for (const auto& m : op.mixes) {
                check(m.i < v.size() && m.j < v.size());
                const double xi = v[m.i];
                const double xj = v[m.j];
                v[m.i] = m.a * xi + m.b * xj;
                v[m.j] = m.c * xi + m.d * xj;
              }
            }
          },
          step.op);
    }
    return v;
  }

  /// Structured record of the drawn transform, for reproducibility logs.
  nlohmann::json to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& step : steps_) {
      nlohmann::json j;
      j["transform"] = step.name;
      std::visit(
          [&](const auto& op) {
            using T = std::decay_t<decltype(op)>;
            if constexpr (std::is_same_v<T, MaskOp>) {
              std::vector<int> keep(op.keep.begin(), op.keep.end());
              j["keep"] = keep;
            } else if constexpr (std::is_same_v<T, AddOp>) {
              j["noise"] = op.noise;
            } else if constexpr (std::is_same_v<T, ReverseOp>) {
              j["reverse"] = true;
            } else if constexpr (std::is_same_v<T, BlurOp>) {
              j["radius"] = op.radius;
            } else if constexpr (std::is_same_v<T, ScaleOp>) {
              j["factor"] = op.factor;
            } else if constexpr (std::is_same_v<T, PlanarOp>) {
              for (const auto& m : op.mixes) j["mixes"].push_back({m.i, m.j, m.a, m.b, m.c, m.d});
            }
          },
          step.op);
      out.push_back(std::move(j));
    }
    return out;
  }

 private:
  static void check(bool ok) {
    if (!ok) throw ShapeError("transform was sampled for a different feature dimension");
  }

  std::vector<AppliedTransform> steps_;
};

namespace detail {

inline std::vector<std::uint8_t> window_mask(std::size_t dim, std::size_t start, std::size_t length, bool keep_window) {
  std::vector<std::uint8_t> keep(dim, keep_window ? 0 : 1);
  for (std::size_t j = 0; j < length; ++j) keep[(start + j) % dim] = keep_window ? 1 : 0;
  return keep;
}

inline std::size_t fraction_count(double fraction, std::size_t dim) {
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(dim)));
}

inline PlanarOp planar_mixes(std::size_t pairs, std::size_t dim, Rng& rng, bool rotation, double limit) {
  PlanarOp op;
  if (dim < 2) return op;
  for (std::size_t p = 0; p < pairs; ++p) {
    PlanarMix m;
    m.i = rng.below(dim);
    m.j = rng.below(dim - 1);
    if (m.j >= m.i) ++m.j;
    const double t = rng.uniform(-limit, limit);
    if (rotation) {
      m.a = std::cos(t);
      m.b = -std::sin(t);
      m.c = std::sin(t);
      m.d = std::cos(t);
    } else {
      m.a = 1.0;
      m.b = t;
      m.c = 0.0;
      m.d = 1.0;
    }
    op.mixes.push_back(m);
  }
  return op;
}

inline TransformOp draw(const TransformParams& params, std::size_t dim, Rng& rng) {
  return std::visit(
      [&](const auto& p) -> TransformOp {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MaskCrop>) {
          const double f = rng.uniform(p.min_keep, p.max_keep);
          const std::size_t len = std::clamp<std::size_t>(fraction_count(f, dim), 1, dim);
          return MaskOp{window_mask(dim, rng.below(dim), len, true)};
        } else if constexpr (std::is_same_v<T, CoordinateFlip>) {
          return ReverseOp{};
        } else if constexpr (std::is_same_v<T, AdditiveJitter>) {
          AddOp op{std::vector<double>(dim)};
          for (double& n : op.noise) n = rng.uniform(-p.amplitude, p.amplitude);
          return op;
        } else if constexpr (std::is_same_v<T, ChannelDrop>) {
          std::vector<std::size_t> idx(dim);
          std::iota(idx.begin(), idx.end(), std::size_t{0});
          rng.shuffle(std::span<std::size_t>(idx));
          MaskOp op{std::vector<std::uint8_t>(dim, 1)};
          const std::size_t drop = std::min(dim, fraction_count(p.fraction, dim));
          for (std::size_t k = 0; k < drop; ++k) op.keep[idx[k]] = 0;
          return op;
        } else if constexpr (std::is_same_v<T, SmoothBlur>) {
          return BlurOp{1 + rng.below(p.max_radius)};
        } else if constexpr (std::is_same_v<T, GaussianNoise>) {
          AddOp op{std::vector<double>(dim)};
          for (double& n : op.noise) n = rng.normal(0.0, p.stddev);
          return op;
        } else if constexpr (std::is_same_v<T, ZoomScale>) {
          return ScaleOp{rng.uniform(p.min_factor, p.max_factor)};
        } else if constexpr (std::is_same_v<T, RotationMix>) {
          return planar_mixes(p.pairs, dim, rng, true, p.max_angle);
        } else if constexpr (std::is_same_v<T, ShearMix>) {
          return planar_mixes(p.pairs, dim, rng, false, p.max_shear);
        } else if constexpr (std::is_same_v<T, Dropout>) {
          MaskOp op{std::vector<std::uint8_t>(dim, 1)};
          for (auto& k : op.keep) k = rng.bernoulli(p.rate) ? 0 : 1;
          return op;
        } else {
          static_assert(std::is_same_v<T, Cutout>);
          const std::size_t len = std::min(dim, fraction_count(p.fraction, dim));
          return MaskOp{window_mask(dim, rng.below(dim), len, false)};
        }
      },
      params);
}

}  // namespace detail

/// Draws t ~ group: each transform is included independently with
/// probability scale * base_probability and, if included, its strength is
/// drawn immediately. Included transforms apply in list order.
inline ComposedTransform sample_transform(const TransformGroup& group, std::size_t dim, Rng& rng) {
  std::vector<AppliedTransform> steps;
  for (const auto& spec : group.transforms) {
    if (!rng.bernoulli(group.scale * spec.base_probability)) continue;
    steps.push_back({std::string(spec.name()), detail::draw(spec.params, dim, rng)});
  }
  return ComposedTransform(std::move(steps));
}

/// The five-transform training family with default base probabilities
/// {crop 0.8, flip 0.5, jitter 0.8, drop 0.2, blur 0.5}.
inline TransformGroup default_transform_family() {
  TransformGroup g;
  g.transforms = {
      {MaskCrop{}, 0.8}, {CoordinateFlip{}, 0.5}, {AdditiveJitter{}, 0.8}, {ChannelDrop{}, 0.2}, {SmoothBlur{}, 0.5},
  };
  g.scale = 1.0;
  return g;
}

struct NamedGroup {
  std::string name;
  TransformGroup group;
};

/// Deformations held out from training, each applied with probability 1.
inline std::vector<NamedGroup> unseen_deformations() {
  auto single = [](TransformParams p) {
    TransformGroup g;
    g.transforms = {{p, 1.0}};
    return g;
  };
  return {
      {"none", TransformGroup{}},
      {"cutout", single(Cutout{0.25})},
      {"dropout", single(Dropout{0.2})},
      {"zoom-in", single(ZoomScale{1.5, 2.0})},
      {"zoom-out", single(ZoomScale{0.5, 0.75})},
      {"rotation", single(RotationMix{16, 0.7853981633974483})},
      {"shear", single(ShearMix{16, 0.5})},
      {"gaussian-noise", single(GaussianNoise{0.5})},
  };
}

// JSON encoding of transform specs and groups (experiment config files).

inline nlohmann::json to_json(const TransformSpec& spec) {
  nlohmann::json j;
  j["kind"] = std::string(spec.name());
  j["probability"] = spec.base_probability;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MaskCrop>) {
          j["min_keep"] = p.min_keep;
          j["max_keep"] = p.max_keep;
        } else if constexpr (std::is_same_v<T, AdditiveJitter>) {
          j["amplitude"] = p.amplitude;
        } else if constexpr (std::is_same_v<T, ChannelDrop>) {
          j["fraction"] = p.fraction;
        } else if constexpr (std::is_same_v<T, SmoothBlur>) {
          j["max_radius"] = p.max_radius;
        } else if constexpr (std::is_same_v<T, GaussianNoise>) {
          j["stddev"] = p.stddev;
        } else if constexpr (std::is_same_v<T, ZoomScale>) {
          j["min_factor"] = p.min_factor;
          j["max_factor"] = p.max_factor;
        } else if constexpr (std::is_same_v<T, RotationMix>) {
          j["pairs"] = p.pairs;
          j["max_angle"] = p.max_angle;
        } else if constexpr (std::is_same_v<T, ShearMix>) {
          j["pairs"] = p.pairs;
          j["max_shear"] = p.max_shear;
        } else if constexpr (std::is_same_v<T, Dropout>) {
          j["rate"] = p.rate;
        } else if constexpr (std::is_same_v<T, Cutout>) {
          j["fraction"] = p.fraction;
        }
      },
      spec.params);
  return j;
}

inline TransformSpec transform_spec_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  TransformSpec spec;
  spec.base_probability = j.value("probability", 1.0);
  if (kind == "mask-crop") {
    MaskCrop p;
    p.min_keep = j.value("min_keep", p.min_keep);
    p.max_keep = j.value("max_keep", p.max_keep);
    spec.params = p;
  } else if (kind == "coordinate-flip") {
    spec.params = CoordinateFlip{};
  } else if (kind == "additive-jitter") {
    spec.params = AdditiveJitter{j.value("amplitude", AdditiveJitter{}.amplitude)};
  } else if (kind == "channel-drop") {
    spec.params = ChannelDrop{j.value("fraction", ChannelDrop{}.fraction)};
  } else if (kind == "smooth-blur") {
    spec.params = SmoothBlur{j.value("max_radius", SmoothBlur{}.max_radius)};
  } else if (kind == "gaussian-noise") {
    spec.params = GaussianNoise{j.value("stddev", GaussianNoise{}.stddev)};
  } else if (kind == "zoom-scale") {
    ZoomScale p;
    p.min_factor = j.value("min_factor", p.min_factor);
    p.max_factor = j.value("max_factor", p.max_factor);
    spec.params = p;
  } else if (kind == "rotation-mix") {
    RotationMix p;
    p.pairs = j.value("pairs", p.pairs);
    p.max_angle = j.value("max_angle", p.max_angle);
    spec.params = p;
  } else if (kind == "shear-mix") {
    ShearMix p;
    p.pairs = j.value("pairs", p.pairs);
    p.max_shear = j.value("max_shear", p.max_shear);
    spec.params = p;
  } else if (kind == "dropout") {
    spec.params = Dropout{j.value("rate", Dropout{}.rate)};
  } else if (kind == "cutout") {
    spec.params = Cutout{j.value("fraction", Cutout{}.fraction)};
  } else {
    throw InvalidConfig("unknown transform kind '" + kind + "'");
  }
  spec.validate();
  return spec;
}

inline nlohmann::json to_json(const TransformGroup& g) {
  nlohmann::json j;
  j["scale"] = g.scale;
  j["transforms"] = nlohmann::json::array();
  for (const auto& t : g.transforms) j["transforms"].push_back(to_json(t));
  return j;
}

inline TransformGroup transform_group_from_json(const nlohmann::json& j) {
  TransformGroup g;
  try {
    g.scale = j.value("scale", 1.0);
    for (const auto& t : j.at("transforms")) g.transforms.push_back(transform_spec_from_json(t));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig(std::string("transforms: ") + e.what());
  }
  g.validate();
  return g;
}

}  // namespace dhd
