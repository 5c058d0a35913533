#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/types.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace simgraph {

/// Deterministic, portable random stream (splitmix64 core, Box-Muller
/// gaussians). Keeps generated datasets bit-identical across standard
/// libraries, which std::normal_distribution does not guarantee.
class SynthRng {
 public:
  explicit SynthRng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double next_unit() {  // [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = next_unit();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    const double two_pi = 6.283185307179586476925286766559;
    spare_ = mag * std::sin(two_pi * u2);
    have_spare_ = true;
    return mag * std::cos(two_pi * u2);
  }

 private:
  std::uint64_t state_;
  double spare_ = 0;
  bool have_spare_ = false;
};

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t h = seed ^ 0x51afd7ed558ccd6dULL;
  for (std::uint64_t v : {tag, a, b, c}) {
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
  }
  return h;
}

struct LevelShape {
  Index c = 0;
  Index h = 0;
  Index w = 0;
};

/// Generator configuration. Classes plant a tree of spatially localized
/// concept blobs, coarse at the top and nested refinements below, so CAM
/// correlations across adjacent levels carry real structure. `noise` adds
/// per-level gaussian pixel noise. `concept_dropout[l]` is the per-sample
/// probability that one concept corrupts at level l+1: its blobs are
/// replaced by a spatially flat field with a random channel signature, the
/// synthetic analogue of an occluded or saturated region. The flat field
/// shifts that level's pooled embedding while flattening the corresponding
/// activation maps, so the damage is visible to map-spread statistics but
/// not to plain averaging.
struct SynthSpec {
  std::vector<LevelShape> shapes;  // bottom to top
  int classes = 0;
  int samples_per_class = 0;
  std::vector<double> noise;            // per level; empty = all zero
  std::vector<double> concept_dropout;  // per level; empty = all zero
  int concepts = 4;                     // blobs per class at the top level
  int children_per_blob = 2;
  double decoy_amplitude = 1.0;         // strength of the flat replacement field
};

inline void validate(const SynthSpec& spec) {
  if (spec.shapes.empty()) throw ConfigError("synthetic spec declares no levels");
  for (const auto& s : spec.shapes) {
    if (s.c < 1 || s.h < 1 || s.w < 1) throw ConfigError("synthetic spec has a zero dimension");
  }
  if (spec.classes < 1) throw ConfigError("synthetic spec declares no classes");
  if (spec.samples_per_class < 1) throw ConfigError("synthetic spec declares no samples");
  if (!spec.noise.empty() && spec.noise.size() != spec.shapes.size()) {
    throw ConfigError("per-level noise list length differs from level count");
  }
  if (!spec.concept_dropout.empty() && spec.concept_dropout.size() != spec.shapes.size()) {
    throw ConfigError("per-level dropout list length differs from level count");
  }
  if (spec.concepts < 1 || spec.children_per_blob < 1) {
    throw ConfigError("synthetic spec needs at least one concept and one child per blob");
  }
}

namespace detail {

struct Blob {
  double cy = 0, cx = 0, rho = 0.2;
  int concept_id = 0;
  Vec signature;  // one weight per channel of its level
};

/// Blobs per level (outer index 0 = bottom). Level L holds `concepts` blobs;
/// each spawns children_per_blob nested refinements one level below.
inline std::vector<std::vector<Blob>> class_blueprint(const SynthSpec& spec, int class_id,
                                                      std::uint64_t seed) {
  const std::size_t depth = spec.shapes.size();
  std::vector<std::vector<Blob>> levels(depth);
  SynthRng rng(mix_seed(seed, /*tag=*/1, static_cast<std::uint64_t>(class_id)));

  auto draw_signature = [&](Index channels) {
    Vec s(channels);
    for (Index i = 0; i < channels; ++i) s[i] = rng.next_gaussian();
    return s;
  };

  auto& top = levels[depth - 1];
  for (int k = 0; k < spec.concepts; ++k) {
    Blob b;
    b.cy = 0.2 + 0.6 * rng.next_unit();
    b.cx = 0.2 + 0.6 * rng.next_unit();
    b.rho = 0.18 + 0.12 * rng.next_unit();
    b.concept_id = k;
    b.signature = draw_signature(spec.shapes[depth - 1].c);
    top.push_back(std::move(b));
  }
  for (std::size_t l = depth - 1; l >= 1; --l) {
    for (const Blob& parent : levels[l]) {
      for (int child = 0; child < spec.children_per_blob; ++child) {
        Blob b;
        b.cy = parent.cy + (rng.next_unit() - 0.5) * parent.rho;
        b.cx = parent.cx + (rng.next_unit() - 0.5) * parent.rho;
        b.rho = parent.rho * 0.6;
        b.concept_id = parent.concept_id;
        b.signature = draw_signature(spec.shapes[l - 1].c);
        levels[l - 1].push_back(std::move(b));
      }
    }
  }
  return levels;
}

inline void add_blob(Matrix<double>& data, Index h, Index w, const Blob& blob) {
  for (Index y = 0; y < h; ++y) {
    const double py = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
    for (Index x = 0; x < w; ++x) {
      const double px = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double d2 = (py - blob.cy) * (py - blob.cy) + (px - blob.cx) * (px - blob.cx);
      const double intensity = std::exp(-d2 / (2.0 * blob.rho * blob.rho));
      if (intensity < 1e-6) continue;
      data.col(y * w + x) += blob.signature * intensity;
    }
  }
}

}  // namespace detail

/// One sample. Same (spec, class, index, seed) always produces bit-identical
/// output; values are quantized to f32 so the AVSF round trip is exact.
inline FeaturePyramid<double> synthesize_pyramid(const SynthSpec& spec, int class_id,
                                                 int sample_index, std::uint64_t seed) {
  validate(spec);
  if (class_id < 0 || class_id >= spec.classes) {
    throw ConfigError("class id " + std::to_string(class_id) + " outside [0, " +
                      std::to_string(spec.classes) + ")");
  }
  const std::size_t depth = spec.shapes.size();
  const auto blueprint = detail::class_blueprint(spec, class_id, seed);

  FeaturePyramid<double> pyr;
  pyr.label = class_id;
  pyr.sample_id = "c" + std::to_string(class_id) + "_s" + std::to_string(sample_index);
  pyr.levels.resize(depth);

  SynthRng noise_rng(mix_seed(seed, /*tag=*/2, static_cast<std::uint64_t>(class_id),
                              static_cast<std::uint64_t>(sample_index)));
  // Dropout decisions come from their own stream so toggling noise does not
  // reshuffle which concepts survive.
  SynthRng drop_rng(mix_seed(seed, /*tag=*/3, static_cast<std::uint64_t>(class_id),
                             static_cast<std::uint64_t>(sample_index)));

  for (std::size_t l = 0; l < depth; ++l) {
    const LevelShape& shape = spec.shapes[l];
    auto& level = pyr.levels[l];
    level.h = shape.h;
    level.w = shape.w;
    level.level = static_cast<int>(l + 1);
    level.data = Matrix<double>::Zero(shape.c, shape.h * shape.w);

    const double drop_p = spec.concept_dropout.empty() ? 0.0 : spec.concept_dropout[l];
    std::vector<char> dropped(static_cast<std::size_t>(spec.concepts), 0);
    for (int k = 0; k < spec.concepts; ++k) {
      dropped[static_cast<std::size_t>(k)] = drop_rng.next_unit() < drop_p ? 1 : 0;
    }
    for (const auto& blob : blueprint[l]) {
      if (dropped[static_cast<std::size_t>(blob.concept_id)]) continue;
      detail::add_blob(level.data, shape.h, shape.w, blob);
    }
    for (int k = 0; k < spec.concepts; ++k) {
      if (!dropped[static_cast<std::size_t>(k)]) continue;
      // Flat replacement field for the corrupted concept.
      Vec decoy(shape.c);
      for (Index ch = 0; ch < shape.c; ++ch) {
        decoy[ch] = spec.decoy_amplitude * drop_rng.next_gaussian();
      }
      level.data.colwise() += decoy;
    }
    const double sigma = spec.noise.empty() ? 0.0 : spec.noise[l];
    if (sigma > 0.0) {
      for (Index ch = 0; ch < shape.c; ++ch) {
        for (Index s = 0; s < level.pixels(); ++s) {
          level.data(ch, s) += sigma * noise_rng.next_gaussian();
        }
      }
    }
    // Quantize to f32 so serialization is lossless.
    for (Index ch = 0; ch < shape.c; ++ch) {
      for (Index s = 0; s < level.pixels(); ++s) {
        level.data(ch, s) = static_cast<double>(static_cast<float>(level.data(ch, s)));
      }
    }
  }
  return pyr;
}

inline std::vector<FeaturePyramid<double>> synthesize_dataset(const SynthSpec& spec,
                                                              std::uint64_t seed) {
  validate(spec);
  std::vector<FeaturePyramid<double>> samples;
  samples.reserve(static_cast<std::size_t>(spec.classes) *
                  static_cast<std::size_t>(spec.samples_per_class));
  for (int c = 0; c < spec.classes; ++c) {
    for (int s = 0; s < spec.samples_per_class; ++s) {
      samples.push_back(synthesize_pyramid(spec, c, s, seed));
    }
  }
  return samples;
}

}  // namespace simgraph
