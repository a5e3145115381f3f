#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edukd/partition.hpp"
#include "edukd/rng.hpp"
#include "edukd/tensor.hpp"

namespace edukd {

enum class Split { Train, Test };

inline std::string to_string(Split s) {
  return s == Split::Train ? "train" : "test";
}

// In-memory labeled image classification dataset, NCHW float storage.
struct Dataset {
  int channels = 1;
  int height = 0;
  int width = 0;
  int num_classes = 0;
  std::vector<float> train_images;
  std::vector<int> train_labels;
  std::vector<float> test_images;
  std::vector<int> test_labels;

  std::size_t image_size() const {
    return std::size_t(channels) * height * width;
  }
  int train_count() const { return static_cast<int>(train_labels.size()); }
  int test_count() const { return static_cast<int>(test_labels.size()); }

  const float* image(Split split, int index) const {
    const auto& store = split == Split::Train ? train_images : test_images;
    return store.data() + std::size_t(index) * image_size();
  }

  int label(Split split, int index) const {
    return split == Split::Train ? train_labels[index] : test_labels[index];
  }

  int count(Split split) const {
    return split == Split::Train ? train_count() : test_count();
  }

  // Identity of the content, used to pin logit caches to the data they
  // were computed from.
  std::uint64_t content_hash() const {
    std::uint64_t h = fnv1a(&num_classes, sizeof(num_classes));
    h = fnv1a(&channels, sizeof(channels), h);
    h = fnv1a(&height, sizeof(height), h);
    h = fnv1a(&width, sizeof(width), h);
    h = fnv1a(train_images.data(), train_images.size() * sizeof(float), h);
    h = fnv1a(train_labels.data(), train_labels.size() * sizeof(int), h);
    h = fnv1a(test_images.data(), test_images.size() * sizeof(float), h);
    h = fnv1a(test_labels.data(), test_labels.size() * sizeof(int), h);
    return h;
  }
};

struct SyntheticConfig {
  int classes = 9;
  int channels = 1;
  int size = 12;  // square images
  int train_per_class = 200;
  int test_per_class = 50;
  double noise = 0.8;
  std::uint64_t seed = 11;
};

// Gaussian-blob classes: each class is a fixed smooth template (a few
// Gaussian bumps at class-specific positions) and samples are the template
// plus iid pixel noise.
inline Dataset make_synthetic_dataset(const SyntheticConfig& cfg) {
  if (cfg.classes < 2) fail_config("synthetic dataset needs >= 2 classes");
  if (cfg.size < 4) fail_config("synthetic image size must be >= 4");
  if (cfg.train_per_class < 1 || cfg.test_per_class < 1)
    fail_config("synthetic dataset needs samples in both splits");

  Dataset ds;
  ds.channels = cfg.channels;
  ds.height = cfg.size;
  ds.width = cfg.size;
  ds.num_classes = cfg.classes;

  const std::size_t img = ds.image_size();
  std::vector<std::vector<float>> templates(cfg.classes,
                                            std::vector<float>(img, 0.f));
  RngStream trng(derive_seed(cfg.seed, "synthetic-templates"));
  const int bumps = 3;
  for (int c = 0; c < cfg.classes; ++c) {
    for (int ch = 0; ch < cfg.channels; ++ch)
      for (int b = 0; b < bumps; ++b) {
        const double cy = trng.uniform(1.0, cfg.size - 2.0);
        const double cx = trng.uniform(1.0, cfg.size - 2.0);
        const double amp = trng.uniform(1.0, 2.5) * (b % 2 == 0 ? 1.0 : -1.0);
        const double sigma = trng.uniform(1.0, 2.2);
        for (int y = 0; y < cfg.size; ++y)
          for (int x = 0; x < cfg.size; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            templates[c][std::size_t(ch) * cfg.size * cfg.size +
                         std::size_t(y) * cfg.size + x] +=
                static_cast<float>(amp * std::exp(-d2 / (2 * sigma * sigma)));
          }
      }
  }

  auto emit = [&](Split split, int per_class, RngStream& rng) {
    auto& images = split == Split::Train ? ds.train_images : ds.test_images;
    auto& labels = split == Split::Train ? ds.train_labels : ds.test_labels;
    // class-major generation keeps draws attributable and reproducible
    for (int c = 0; c < cfg.classes; ++c)
      for (int i = 0; i < per_class; ++i) {
        labels.push_back(c);
        for (std::size_t j = 0; j < img; ++j)
          images.push_back(templates[c][j] +
                           rng.normal(0.f, static_cast<float>(cfg.noise)));
      }
  };
  RngStream train_rng(derive_seed(cfg.seed, "synthetic-train"));
  RngStream test_rng(derive_seed(cfg.seed, "synthetic-test"));
  emit(Split::Train, cfg.train_per_class, train_rng);
  emit(Split::Test, cfg.test_per_class, test_rng);
  return ds;
}

// One drawable sample: dataset index within its split, global-space label,
// and the sub-dataset that owns it (1-based; used for teacher routing).
struct SampleRef {
  int index = 0;
  int label = 0;
  int subset_id = 0;
};

// In sample-disjoint mode the partition is defined over train indices; the
// test split is apportioned with the same ratios and seed so per-subset
// evaluation stays meaningful.
inline int subset_of_sample(const SubDatasetPartition& part, const Dataset& ds,
                            Split split, int index) {
  if (part.mode == PartitionMode::ClassDisjoint)
    return part.subset_of(ds.label(split, index));
  if (split == Split::Train) return part.subset_of(index);
  const std::vector<int> sizes =
      largest_remainder_sizes(ds.test_count(), part.ratios);
  int t = 0, acc = 0;
  while (t < part.T && index >= acc + sizes[t]) acc += sizes[t++];
  return t + 1;
}

// Exactly the samples of sub-dataset t, in dataset order; labels stay in
// the global class space.
inline std::vector<SampleRef> subset_view(const Dataset& ds,
                                          const SubDatasetPartition& part,
                                          int t, Split split) {
  if (t < 1 || t > part.T)
    fail_config("subset index ", t, " out of range 1..", part.T);
  std::vector<SampleRef> out;
  const int n = ds.count(split);
  for (int i = 0; i < n; ++i)
    if (subset_of_sample(part, ds, split, i) == t)
      out.push_back({i, ds.label(split, i), t});
  return out;
}

// h_1 u ... u h_t in deterministic (subset-major) order; the trainer
// shuffles per epoch for uniform sampling over the union.
inline std::vector<SampleRef> active_union(const Dataset& ds,
                                           const SubDatasetPartition& part,
                                           int t, Split split) {
  if (t < 1 || t > part.T)
    fail_config("stage index ", t, " out of range 1..", part.T);
  std::vector<SampleRef> out;
  for (int s = 1; s <= t; ++s) {
    auto view = subset_view(ds, part, s, split);
    out.insert(out.end(), view.begin(), view.end());
  }
  return out;
}

// Gathers a batch into an NCHW tensor plus aligned label/subset/index rows.
struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::vector<int> subset_ids;
  std::vector<int> sample_indices;

  int size() const { return static_cast<int>(labels.size()); }
};

inline Batch gather_batch(const Dataset& ds, Split split,
                          const std::vector<SampleRef>& samples,
                          std::size_t begin, std::size_t end) {
  if (begin >= end || end > samples.size())
    fail_run("bad batch range [", begin, ", ", end, ")");
  const int n = static_cast<int>(end - begin);
  Batch b;
  b.images = Tensor({n, ds.channels, ds.height, ds.width});
  const std::size_t img = ds.image_size();
  for (int i = 0; i < n; ++i) {
    const SampleRef& s = samples[begin + i];
    const float* src = ds.image(split, s.index);
    std::copy(src, src + img, b.images.data.begin() + std::size_t(i) * img);
    b.labels.push_back(s.label);
    b.subset_ids.push_back(s.subset_id);
    b.sample_indices.push_back(s.index);
  }
  return b;
}

}  // namespace edukd
