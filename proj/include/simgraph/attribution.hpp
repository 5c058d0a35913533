#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/graph.hpp>
#include <simgraph/inference.hpp>
#include <simgraph/types.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace simgraph {

/// Sensitivities lambda^l of every node: the exact linear coefficients of the
/// raw nodes in the overall similarity,
///   d_hat = sum_l sum_i lambda^l_i delta^l_i.
/// Computed by pushing the all-ones row vector down the recursion:
///   lambda^L = p^L,  carry v <- W~^T ((1 - p) . v),  lambda^1 = v.
/// Each lambda is non-negative and the grand total is exactly r, so values
/// are comparable across pairs.
template <typename Scalar>
std::vector<Vector<Scalar>> node_sensitivities(const std::vector<Vector<Scalar>>& reliabilities,
                                               const std::vector<Matrix<Scalar>>& w_tilde) {
  if (reliabilities.size() != w_tilde.size()) {
    throw ShapeError("node_sensitivities: reliability/edge level counts differ");
  }
  const std::size_t depth = reliabilities.size() + 1;
  const Index r = depth > 1 ? reliabilities.front().size() : Index(0);
  std::vector<Vector<Scalar>> lambdas(depth);
  if (depth == 1) {
    // Single level: d_hat = sum delta^1 directly.
    return lambdas;  // caller fills level 1 with ones when r is known
  }
  Vector<Scalar> carry = Vector<Scalar>::Ones(r);
  for (std::size_t l = depth - 1; l >= 1; --l) {
    const Vector<Scalar>& p = reliabilities[l - 1];
    if (p.size() != r || w_tilde[l - 1].rows() != r || w_tilde[l - 1].cols() != r) {
      throw ShapeError("node_sensitivities: shape mismatch at level " + std::to_string(l + 1));
    }
    lambdas[l] = carry.cwiseProduct(p);
    carry = w_tilde[l - 1].transpose() * (Vector<Scalar>::Ones(r) - p).cwiseProduct(carry);
  }
  lambdas[0] = carry;
  return lambdas;
}

/// Sensitivities with the single-level base case resolved to ones.
template <typename Scalar>
std::vector<Vector<Scalar>> node_sensitivities(Index r, const std::vector<Vector<Scalar>>& reliabilities,
                                               const std::vector<Matrix<Scalar>>& w_tilde) {
  auto lambdas = node_sensitivities(reliabilities, w_tilde);
  if (lambdas.size() == 1) lambdas[0] = Vector<Scalar>::Ones(r);
  return lambdas;
}

enum class RankKey { kReliability, kNodeValue, kContribution };

inline const char* rank_key_name(RankKey key) {
  switch (key) {
    case RankKey::kReliability: return "reliability";
    case RankKey::kNodeValue: return "node_value";
    case RankKey::kContribution: return "contribution";
  }
  return "?";
}

inline RankKey parse_rank_key(const std::string& name) {
  if (name == "reliability") return RankKey::kReliability;
  if (name == "node_value") return RankKey::kNodeValue;
  if (name == "contribution") return RankKey::kContribution;
  throw ConfigError("unknown ranking key: " + name);
}

/// One node of the attribution report.
struct NodeRecord {
  int level = 0;
  Index index = 0;
  double delta = 0;
  double p = 1;
  double lambda = 0;
  double contribution = 0;  // lambda * delta
  std::string cam_files[2];
};

/// Per-pair attribution: ranked node records plus the extremes of the node
/// distribution (most similar / most dissimilar among the reported nodes).
struct AttributionReport {
  std::string id_a, id_b;
  double overall = 0;
  RankKey key = RankKey::kReliability;
  std::vector<NodeRecord> nodes;
  Index most_similar = -1;     // positions into `nodes`
  Index most_dissimilar = -1;
};

namespace detail {
inline double rank_value(const NodeRecord& n, RankKey key) {
  switch (key) {
    case RankKey::kReliability: return n.p;
    case RankKey::kNodeValue: return n.delta;
    case RankKey::kContribution: return n.contribution;
  }
  return 0;
}
}  // namespace detail

/// Rank nodes of one pair. The default key first keeps the `top_n` most
/// reliable nodes and then orders them by node value, most similar first;
/// the other keys sort descending on their value. Ties fall back to the
/// lowest (level, index).
template <typename Scalar>
AttributionReport rank_nodes(const std::vector<Vector<Scalar>>& nodes,
                             const std::vector<Vector<Scalar>>& reliabilities,
                             const std::vector<Vector<Scalar>>& lambdas, Scalar overall, RankKey key,
                             std::size_t top_n) {
  const std::size_t depth = nodes.size();
  const Index r = nodes.empty() ? 0 : nodes.front().size();
  const std::size_t total = depth * static_cast<std::size_t>(r);
  if (top_n > total) {
    throw ConfigError("rank_nodes: top_n exceeds node count " + std::to_string(total));
  }

  std::vector<NodeRecord> all;
  all.reserve(total);
  for (std::size_t l = 0; l < depth; ++l) {
    for (Index i = 0; i < r; ++i) {
      NodeRecord rec;
      rec.level = static_cast<int>(l + 1);
      rec.index = i;
      rec.delta = static_cast<double>(nodes[l][i]);
      rec.p = l == 0 ? 1.0 : static_cast<double>(reliabilities[l - 1][i]);
      rec.lambda = static_cast<double>(lambdas[l][i]);
      rec.contribution = rec.lambda * rec.delta;
      all.push_back(rec);
    }
  }

  auto tie_before = [](const NodeRecord& a, const NodeRecord& b) {
    if (a.level != b.level) return a.level < b.level;
    return a.index < b.index;
  };
  if (key == RankKey::kReliability) {
    // Two-stage: select by reliability, then order the selection by node
    // value (most similar node first).
    std::stable_sort(all.begin(), all.end(), [&](const NodeRecord& a, const NodeRecord& b) {
      if (a.p != b.p) return a.p > b.p;
      return tie_before(a, b);
    });
    all.resize(top_n);
    std::stable_sort(all.begin(), all.end(), [&](const NodeRecord& a, const NodeRecord& b) {
      if (a.delta != b.delta) return a.delta < b.delta;
      return tie_before(a, b);
    });
  } else {
    std::stable_sort(all.begin(), all.end(), [&](const NodeRecord& a, const NodeRecord& b) {
      const double va = detail::rank_value(a, key);
      const double vb = detail::rank_value(b, key);
      if (va != vb) return va > vb;
      return tie_before(a, b);
    });
    all.resize(top_n);
  }

  AttributionReport report;
  report.key = key;
  report.overall = static_cast<double>(overall);
  report.nodes = std::move(all);
  for (std::size_t i = 0; i < report.nodes.size(); ++i) {
    if (report.most_similar < 0 ||
        report.nodes[i].delta < report.nodes[static_cast<std::size_t>(report.most_similar)].delta) {
      report.most_similar = static_cast<Index>(i);
    }
    if (report.most_dissimilar < 0 ||
        report.nodes[i].delta > report.nodes[static_cast<std::size_t>(report.most_dissimilar)].delta) {
      report.most_dissimilar = static_cast<Index>(i);
    }
  }
  return report;
}

inline nlohmann::ordered_json report_to_json(const AttributionReport& report) {
  nlohmann::ordered_json j;
  j["pair"] = {report.id_a, report.id_b};
  j["overall_similarity"] = report.overall;
  j["rank_key"] = rank_key_name(report.key);
  j["most_similar"] = report.most_similar;
  j["most_dissimilar"] = report.most_dissimilar;
  j["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : report.nodes) {
    nlohmann::ordered_json jn;
    jn["level"] = n.level;
    jn["index"] = n.index;
    jn["delta"] = n.delta;
    jn["p"] = n.p;
    jn["lambda"] = n.lambda;
    jn["contribution"] = n.contribution;
    jn["cam_files"] = {n.cam_files[0], n.cam_files[1]};
    j["nodes"].push_back(std::move(jn));
  }
  return j;
}

inline void write_report(const AttributionReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open report file: " + path);
  out << report_to_json(report).dump(2) << "\n";
}

/// Binary P5 graymap after min-max scaling to 0..255. A constant map writes
/// mid-gray 128; exact values live in the .f32 sidecar.
template <typename Derived>
void write_pgm(const Eigen::MatrixBase<Derived>& row_major_map, Index h, Index w,
               const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open saliency file: " + path);
  const double lo = static_cast<double>(row_major_map.minCoeff());
  const double hi = static_cast<double>(row_major_map.maxCoeff());
  out << "P5\n" << w << " " << h << "\n255\n";
  for (Index s = 0; s < h * w; ++s) {
    unsigned char byte = 128;
    if (hi > lo) {
      const double v = (static_cast<double>(row_major_map[s]) - lo) / (hi - lo);
      byte = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.put(static_cast<char>(byte));
  }
  if (!out) throw IoError("failed writing saliency file: " + path);
}

/// Raw sidecar: one "h w" text header line, then row-major little-endian f32.
template <typename Derived>
void write_f32_sidecar(const Eigen::MatrixBase<Derived>& row_major_map, Index h, Index w,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open sidecar file: " + path);
  out << h << " " << w << "\n";
  for (Index s = 0; s < h * w; ++s) {
    const float v = static_cast<float>(row_major_map[s]);
    out.write(reinterpret_cast<const char*>(&v), sizeof(float));
  }
  if (!out) throw IoError("failed writing sidecar file: " + path);
}

inline std::vector<float> read_f32_sidecar(const std::string& path, Index& h, Index& w) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sidecar file: " + path);
  in >> h >> w;
  in.get();  // newline
  std::vector<float> data(static_cast<std::size_t>(h * w));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (!in) throw IoError("truncated sidecar file: " + path);
  return data;
}

/// Write both samples' CAMs for the listed nodes into `dir`, returning the
/// per-node file names (PGM; each has a matching .f32 sidecar). Files are
/// named <pair_tag>_L<level>_n<index>_<a|b>.pgm.
template <typename Scalar>
void export_saliency(const std::vector<CAMStack<Scalar>>& cams_a,
                     const std::vector<CAMStack<Scalar>>& cams_b, std::vector<NodeRecord>& nodes,
                     const std::string& dir, const std::string& pair_tag) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (auto& n : nodes) {
    const std::size_t l = static_cast<std::size_t>(n.level - 1);
    if (l >= cams_a.size() || n.index >= cams_a[l].maps.rows()) {
      throw ShapeError("export_saliency: node level " + std::to_string(n.level) + " index " +
                       std::to_string(n.index) + " out of range");
    }
    const CAMStack<Scalar>* stacks[2] = {&cams_a[l], &cams_b[l]};
    const char suffix[2] = {'a', 'b'};
    for (int s = 0; s < 2; ++s) {
      const std::string stem = pair_tag + "_L" + std::to_string(n.level) + "_n" +
                               std::to_string(n.index) + "_" + suffix[s];
      const std::string pgm = (fs::path(dir) / (stem + ".pgm")).string();
      const Vector<Scalar> map = stacks[s]->maps.row(n.index);
      write_pgm(map, stacks[s]->h, stacks[s]->w, pgm);
      write_f32_sidecar(map, stacks[s]->h, stacks[s]->w,
                        (fs::path(dir) / (stem + ".f32")).string());
      n.cam_files[s] = stem + ".pgm";
    }
  }
}

}  // namespace simgraph
