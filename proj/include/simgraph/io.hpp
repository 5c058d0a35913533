#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/graph.hpp>
#include <simgraph/inference.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/types.hpp>
#include <simgraph/util.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace simgraph {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are not supported");

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::istream& in) : in_(in) {}

  std::uint64_t offset() const { return offset_; }

  void raw(void* dst, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw ParseError(std::string("truncated ") + what, offset_);
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::uint32_t v;
    raw(&v, sizeof(v), what);
    return v;
  }

  std::uint64_t u64(const char* what) {
    std::uint64_t v;
    raw(&v, sizeof(v), what);
    return v;
  }

  float f32(const char* what) {
    float v;
    raw(&v, sizeof(v), what);
    return v;
  }

  double f64(const char* what) {
    double v;
    raw(&v, sizeof(v), what);
    return v;
  }

 private:
  std::istream& in_;
  std::uint64_t offset_ = 0;
};

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void raw(const void* src, std::size_t n) {
    out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
  }

  void u32(std::uint32_t v) { raw(&v, sizeof(v)); }
  void u64(std::uint64_t v) { raw(&v, sizeof(v)); }
  void f32(float v) { raw(&v, sizeof(v)); }
  void f64(double v) { raw(&v, sizeof(v)); }

 private:
  std::ostream& out_;
};

inline void expect_magic(ByteReader& r, const char expected[4], const char* format) {
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, expected, 4) != 0) {
    throw ParseError(std::string("bad magic for ") + format + " file", 0);
  }
}

}  // namespace detail

inline constexpr std::uint32_t kFeatureFileVersion = 1;
inline constexpr std::uint32_t kEdgeFileVersion = 1;
inline constexpr std::uint32_t kParamsFileVersion = 1;

// Guards against absurd headers before any allocation.
inline constexpr std::uint64_t kMaxLevelElements = std::uint64_t(1) << 28;
inline constexpr std::uint32_t kMaxLevels = 64;

// ---------------------------------------------------------------------------
// AVSF: per-sample feature pyramid.
//   "AVSF", u32 version, u32 L, L x (u32 c, u32 h, u32 w),
//   L row-major f32 payloads, u32 label.
// ---------------------------------------------------------------------------

template <typename Scalar>
void write_pyramid(std::ostream& out, const FeaturePyramid<Scalar>& pyr) {
  detail::ByteWriter w(out);
  w.raw("AVSF", 4);
  w.u32(kFeatureFileVersion);
  w.u32(static_cast<std::uint32_t>(pyr.depth()));
  for (const auto& level : pyr.levels) {
    w.u32(static_cast<std::uint32_t>(level.channels()));
    w.u32(static_cast<std::uint32_t>(level.h));
    w.u32(static_cast<std::uint32_t>(level.w));
  }
  for (const auto& level : pyr.levels) {
    for (Index c = 0; c < level.channels(); ++c) {
      for (Index s = 0; s < level.pixels(); ++s) {
        w.f32(static_cast<float>(level.data(c, s)));
      }
    }
  }
  w.u32(static_cast<std::uint32_t>(pyr.label));
}

template <typename Scalar = double>
FeaturePyramid<Scalar> read_pyramid(std::istream& in) {
  detail::ByteReader r(in);
  detail::expect_magic(r, "AVSF", "feature");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kFeatureFileVersion) {
    throw ParseError("unsupported feature file version " + std::to_string(version), version_at);
  }
  const std::uint64_t levels_at = r.offset();
  const std::uint32_t levels = r.u32("level count");
  if (levels == 0 || levels > kMaxLevels) {
    throw ParseError("level count " + std::to_string(levels) + " out of range", levels_at);
  }
  FeaturePyramid<Scalar> pyr;
  pyr.levels.resize(levels);
  for (std::uint32_t l = 0; l < levels; ++l) {
    const std::uint64_t dims_at = r.offset();
    const std::uint32_t c = r.u32("channel dim");
    const std::uint32_t h = r.u32("height dim");
    const std::uint32_t w_ = r.u32("width dim");
    if (c == 0 || h == 0 || w_ == 0) {
      throw ParseError("zero dimension in level " + std::to_string(l + 1), dims_at);
    }
    const std::uint64_t elems = std::uint64_t(c) * std::uint64_t(h) * std::uint64_t(w_);
    if (elems > kMaxLevelElements) {
      throw ParseError("dimension overflow in level " + std::to_string(l + 1), dims_at);
    }
    pyr.levels[l].data.resize(c, static_cast<Index>(std::uint64_t(h) * w_));
    pyr.levels[l].h = h;
    pyr.levels[l].w = w_;
    pyr.levels[l].level = static_cast<int>(l + 1);
  }
  for (auto& level : pyr.levels) {
    for (Index c = 0; c < level.channels(); ++c) {
      for (Index s = 0; s < level.pixels(); ++s) {
        level.data(c, s) = static_cast<Scalar>(r.f32("payload"));
      }
    }
  }
  pyr.label = static_cast<int>(r.u32("label"));
  return pyr;
}

template <typename Scalar>
void write_pyramid_file(const std::string& path, const FeaturePyramid<Scalar>& pyr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_pyramid(out, pyr);
  if (!out) throw IoError("write failed: " + path);
}

template <typename Scalar = double>
FeaturePyramid<Scalar> read_pyramid_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  auto pyr = read_pyramid<Scalar>(in);
  pyr.sample_id = path;
  return pyr;
}

// ---------------------------------------------------------------------------
// AVSE: momentum edge store.
//   "AVSE", u32 version, u32 L, u32 r, f64 gamma, u64 update_count,
//   (L-1) row-major f64 r x r matrices, level pairs bottom-up.
// ---------------------------------------------------------------------------

template <typename Scalar>
void write_edges(std::ostream& out, const EdgeStore<Scalar>& store) {
  detail::ByteWriter w(out);
  w.raw("AVSE", 4);
  w.u32(kEdgeFileVersion);
  w.u32(static_cast<std::uint32_t>(store.depth()));
  w.u32(static_cast<std::uint32_t>(store.dim()));
  w.f64(static_cast<double>(store.gamma));
  w.u64(store.update_count);
  for (const auto& omega : store.omega) {
    for (Index i = 0; i < omega.rows(); ++i) {
      for (Index j = 0; j < omega.cols(); ++j) {
        w.f64(static_cast<double>(omega(i, j)));
      }
    }
  }
}

template <typename Scalar = double>
EdgeStore<Scalar> read_edges(std::istream& in) {
  detail::ByteReader r(in);
  detail::expect_magic(r, "AVSE", "edge");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kEdgeFileVersion) {
    throw ParseError("unsupported edge file version " + std::to_string(version), version_at);
  }
  const std::uint64_t dims_at = r.offset();
  const std::uint32_t levels = r.u32("level count");
  const std::uint32_t dim = r.u32("node count");
  if (levels == 0 || levels > kMaxLevels || dim == 0 ||
      std::uint64_t(dim) * dim > kMaxLevelElements) {
    throw ParseError("edge store dimensions out of range", dims_at);
  }
  const std::uint64_t gamma_at = r.offset();
  const double gamma = r.f64("gamma");
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw ParseError("momentum factor outside [0, 1]", gamma_at);
  }
  EdgeStore<Scalar> store;
  store.r = static_cast<Index>(dim);
  store.gamma = static_cast<Scalar>(gamma);
  store.update_count = r.u64("update count");
  store.omega.resize(levels - 1);
  for (auto& omega : store.omega) {
    omega.resize(dim, dim);
    for (Index i = 0; i < omega.rows(); ++i) {
      for (Index j = 0; j < omega.cols(); ++j) {
        omega(i, j) = static_cast<Scalar>(r.f64("edge matrix"));
      }
    }
  }
  return store;
}

template <typename Scalar>
void write_edges_file(const std::string& path, const EdgeStore<Scalar>& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  write_edges(out, store);
  if (!out) throw IoError("write failed: " + path);
}

template <typename Scalar = double>
EdgeStore<Scalar> read_edges_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  return read_edges<Scalar>(in);
}

// ---------------------------------------------------------------------------
// AVSP: inference parameters.
//   "AVSP", u32 version, u32 L, u32 r, u32 k,
//   per level 2..L: r f64 alpha then r f64 beta.
// ---------------------------------------------------------------------------

template <typename Scalar>
void write_params(std::ostream& out, const InferenceParams<Scalar>& params) {
  detail::ByteWriter w(out);
  w.raw("AVSP", 4);
  w.u32(kParamsFileVersion);
  w.u32(static_cast<std::uint32_t>(params.depth()));
  w.u32(static_cast<std::uint32_t>(params.dim()));
  w.u32(static_cast<std::uint32_t>(params.k));
  for (std::size_t l = 0; l < params.alpha.size(); ++l) {
    for (Index i = 0; i < params.alpha[l].size(); ++i) w.f64(static_cast<double>(params.alpha[l][i]));
    for (Index i = 0; i < params.beta[l].size(); ++i) w.f64(static_cast<double>(params.beta[l][i]));
  }
}

template <typename Scalar = double>
InferenceParams<Scalar> read_params(std::istream& in) {
  detail::ByteReader r(in);
  detail::expect_magic(r, "AVSP", "params");
  const std::uint64_t version_at = r.offset();
  const std::uint32_t version = r.u32("version");
  if (version != kParamsFileVersion) {
    throw ParseError("unsupported params file version " + std::to_string(version), version_at);
  }
  const std::uint64_t dims_at = r.offset();
  const std::uint32_t levels = r.u32("level count");
  const std::uint32_t dim = r.u32("node count");
  const std::uint32_t k = r.u32("top-k");
  if (levels == 0 || levels > kMaxLevels || dim == 0 || dim > kMaxLevelElements || k == 0 || k > dim) {
    throw ParseError("params dimensions out of range", dims_at);
  }
  InferenceParams<Scalar> params;
  params.r = static_cast<Index>(dim);
  params.k = static_cast<Index>(k);
  params.alpha.resize(levels - 1);
  params.beta.resize(levels - 1);
  for (std::size_t l = 0; l + 1 < levels; ++l) {
    params.alpha[l].resize(dim);
    params.beta[l].resize(dim);
    for (Index i = 0; i < params.alpha[l].size(); ++i) {
      params.alpha[l][i] = static_cast<Scalar>(r.f64("alpha"));
    }
    for (Index i = 0; i < params.beta[l].size(); ++i) {
      params.beta[l][i] = static_cast<Scalar>(r.f64("beta"));
    }
  }
  return params;
}

// ---------------------------------------------------------------------------
// Manifest: one "sample_id,path,label" line per sample. Paths are relative
// to the manifest's directory.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string sample_id;
  std::string path;
  int label = 0;
};

inline std::vector<ManifestEntry> read_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto c1 = t.find(',');
    const auto c2 = t.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ParseError("manifest line " + std::to_string(lineno) + " is not id,path,label", 0);
    }
    ManifestEntry e;
    e.sample_id = trim(t.substr(0, c1));
    e.path = trim(t.substr(c1 + 1, c2 - c1 - 1));
    try {
      e.label = std::stoi(trim(t.substr(c2 + 1)));
    } catch (const std::exception&) {
      throw ParseError("manifest line " + std::to_string(lineno) + " has a non-integer label", 0);
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

inline std::vector<ManifestEntry> read_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  return read_manifest(in);
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& entries) {
  for (const auto& e : entries) {
    out << e.sample_id << "," << e.path << "," << e.label << "\n";
  }
}

}  // namespace simgraph
