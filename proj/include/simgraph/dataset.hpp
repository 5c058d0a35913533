#pragma once

#include <simgraph/errors.hpp>
#include <simgraph/io.hpp>
#include <simgraph/pipeline.hpp>
#include <simgraph/synthetic.hpp>
#include <simgraph/types.hpp>

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace simgraph {

using Dataset = std::vector<FeaturePyramid<double>>;

inline std::vector<int> dataset_labels(const Dataset& data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  for (const auto& s : data) labels.push_back(s.label);
  return labels;
}

inline int count_classes(const std::vector<int>& labels) {
  std::vector<int> sorted = labels;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return static_cast<int>(sorted.size());
}

/// Load every sample listed in a manifest; paths resolve relative to the
/// manifest's directory. The label stored inside each feature file is
/// authoritative and must agree with the manifest.
inline Dataset load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest_file(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset data;
  data.reserve(entries.size());
  for (const auto& e : entries) {
    fs::path p(e.path);
    if (p.is_relative()) p = base / p;
    auto pyr = read_pyramid_file<double>(p.string());
    if (pyr.label != e.label) {
      throw ConfigError("manifest label " + std::to_string(e.label) + " disagrees with file label " +
                        std::to_string(pyr.label) + " for " + e.sample_id);
    }
    pyr.sample_id = e.sample_id;
    data.push_back(std::move(pyr));
  }
  return data;
}

/// Write one .avsf per sample plus manifest.txt into `dir`. Returns the
/// manifest path.
inline std::string write_dataset(const std::string& dir, const Dataset& data) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  entries.reserve(data.size());
  for (const auto& s : data) {
    const std::string filename = s.sample_id + ".avsf";
    write_pyramid_file((fs::path(dir) / filename).string(), s);
    entries.push_back({s.sample_id, filename, s.label});
  }
  const std::string manifest = (fs::path(dir) / "manifest.txt").string();
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot open manifest for writing: " + manifest);
  write_manifest(out, entries);
  return manifest;
}

/// Deterministic class-balanced batches: every batch draws classes_per_batch
/// classes off a reshuffled class cycle and batch_size / classes_per_batch
/// samples off each class's reshuffled queue, so samples within a class
/// rotate before any repeats.
class BatchSampler {
 public:
  BatchSampler(const std::vector<int>& labels, int batch_size, int classes_per_batch,
               std::uint64_t seed)
      : batch_size_(batch_size), classes_per_batch_(classes_per_batch), rng_(mix_seed(seed, 7)) {
    if (batch_size < 1 || classes_per_batch < 1) {
      throw ConfigError("batch sampler needs positive batch_size and classes_per_batch");
    }
    if (batch_size % classes_per_batch != 0) {
      throw ConfigError("batch_size " + std::to_string(batch_size) +
                        " is not divisible by classes_per_batch " + std::to_string(classes_per_batch));
    }
    std::map<int, std::vector<Index>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      by_class[labels[i]].push_back(static_cast<Index>(i));
    }
    if (static_cast<int>(by_class.size()) < classes_per_batch) {
      throw ConfigError("dataset has " + std::to_string(by_class.size()) +
                        " classes, batches need " + std::to_string(classes_per_batch));
    }
    for (auto& [label, members] : by_class) {
      classes_.push_back({members, {}, 0});
    }
    n_samples_ = static_cast<Index>(labels.size());
    class_cycle_.resize(classes_.size());
    for (std::size_t i = 0; i < classes_.size(); ++i) class_cycle_[i] = static_cast<Index>(i);
    shuffle(class_cycle_);
  }

  Index samples() const { return n_samples_; }

  Index batches_per_epoch() const {
    return std::max<Index>(1, n_samples_ / batch_size_);
  }

  std::vector<Index> next_batch() {
    std::vector<Index> batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    const int per_class = batch_size_ / classes_per_batch_;
    for (int c = 0; c < classes_per_batch_; ++c) {
      auto& cls = classes_[static_cast<std::size_t>(next_class())];
      for (int s = 0; s < per_class; ++s) batch.push_back(draw(cls));
    }
    return batch;
  }

 private:
  struct ClassQueue {
    std::vector<Index> members;
    std::vector<Index> order;
    std::size_t cursor = 0;
  };

  void shuffle(std::vector<Index>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng_.next_u64() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Index next_class() {
    if (cycle_cursor_ >= class_cycle_.size()) {
      shuffle(class_cycle_);
      cycle_cursor_ = 0;
    }
    return class_cycle_[cycle_cursor_++];
  }

  Index draw(ClassQueue& cls) {
    if (cls.cursor >= cls.order.size()) {
      cls.order = cls.members;
      shuffle(cls.order);
      cls.cursor = 0;
    }
    return cls.order[cls.cursor++];
  }

  int batch_size_;
  int classes_per_batch_;
  Index n_samples_ = 0;
  std::vector<ClassQueue> classes_;
  std::vector<Index> class_cycle_;
  std::size_t cycle_cursor_ = 0;
  SynthRng rng_;
};

}  // namespace simgraph
