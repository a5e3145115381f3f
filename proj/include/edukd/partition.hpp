#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "edukd/common.hpp"
#include "edukd/rng.hpp"

namespace edukd {

enum class PartitionMode { ClassDisjoint, SampleDisjoint };

inline std::string to_string(PartitionMode m) {
  return m == PartitionMode::ClassDisjoint ? "class-disjoint"
                                           : "sample-disjoint";
}

inline PartitionMode partition_mode_from_string(const std::string& s) {
  if (s == "class-disjoint") return PartitionMode::ClassDisjoint;
  if (s == "sample-disjoint") return PartitionMode::SampleDisjoint;
  fail_config("partition.mode must be 'class-disjoint' or 'sample-disjoint', "
              "got '", s, "'");
}

// Largest-remainder apportionment of `total` into weighted parts; ties on
// the fractional remainder go to the lower group index.
inline std::vector<int> largest_remainder_sizes(
    int total, const std::vector<double>& ratios) {
  if (ratios.empty()) fail_config("ratios may not be empty");
  double wsum = 0;
  for (double r : ratios) {
    if (r <= 0) fail_config("ratios must be positive");
    wsum += r;
  }
  const int t = static_cast<int>(ratios.size());
  std::vector<int> sizes(t);
  std::vector<double> remainder(t);
  int assigned = 0;
  for (int i = 0; i < t; ++i) {
    const double quota = double(total) * ratios[i] / wsum;
    sizes[i] = static_cast<int>(quota);
    remainder[i] = quota - sizes[i];
    assigned += sizes[i];
  }
  std::vector<int> order(t);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return remainder[a] > remainder[b];
  });
  for (int k = 0; k < total - assigned; ++k) sizes[order[k % t]] += 1;
  return sizes;
}

// Disjoint assignment of classes (or sample indices) to sub-datasets
// h_1..h_T; the union always covers the whole set.
struct SubDatasetPartition {
  PartitionMode mode = PartitionMode::ClassDisjoint;
  int T = 0;
  std::vector<double> ratios;
  std::uint64_t seed = 0;
  int domain_size = 0;  // class count or train-sample count
  std::vector<std::vector<int>> groups;

  // 1-based subset id owning a class (or sample index); 0 if absent.
  int subset_of(int key) const {
    auto it = lookup_.find(key);
    return it == lookup_.end() ? 0 : it->second;
  }

  void build_lookup() {
    lookup_.clear();
    for (int t = 0; t < T; ++t)
      for (int key : groups[t]) {
        if (!lookup_.emplace(key, t + 1).second)
          fail_run("partition groups overlap on key ", key);
      }
  }

  void check_invariants() const {
    if (static_cast<int>(groups.size()) != T)
      fail_run("partition has ", groups.size(), " groups, expected ", T);
    std::vector<char> seen(domain_size, 0);
    int covered = 0;
    for (const auto& g : groups)
      for (int key : g) {
        if (key < 0 || key >= domain_size)
          fail_run("partition key ", key, " outside domain of size ",
                   domain_size);
        if (seen[key]) fail_run("partition key ", key, " appears twice");
        seen[key] = 1;
        ++covered;
      }
    if (covered != domain_size)
      fail_run("partition covers ", covered, " of ", domain_size, " keys");
  }

private:
  std::map<int, int> lookup_;
};

// Splits label space (class-disjoint) or index space (sample-disjoint) into
// T groups sized by largest-remainder rounding; group membership order is
// a seed-determined shuffle.
inline SubDatasetPartition partition(const std::vector<int>& labels, int T,
                                     const std::vector<double>& ratios,
                                     PartitionMode mode, std::uint64_t seed) {
  if (T < 2) fail_config("partition requires T >= 2, got T=", T);
  if (static_cast<int>(ratios.size()) != T)
    fail_config("partition got ", ratios.size(), " ratios for T=", T);
  for (double r : ratios)
    if (r <= 0) fail_config("partition ratios must be positive");
  if (labels.empty()) fail_config("partition needs a non-empty label set");

  SubDatasetPartition part;
  part.mode = mode;
  part.T = T;
  part.ratios = ratios;
  part.seed = seed;

  std::vector<int> keys;
  if (mode == PartitionMode::ClassDisjoint) {
    const int num_classes = 1 + *std::max_element(labels.begin(), labels.end());
    if (T > num_classes)
      fail_config("partition.T=", T, " exceeds class count ", num_classes,
                  " in class-disjoint mode");
    keys.resize(num_classes);
    std::iota(keys.begin(), keys.end(), 0);
    part.domain_size = num_classes;
  } else {
    const int n = static_cast<int>(labels.size());
    if (T > n) fail_config("partition.T=", T, " exceeds sample count ", n);
    keys.resize(n);
    std::iota(keys.begin(), keys.end(), 0);
    part.domain_size = n;
  }

  RngStream rng(derive_seed(seed, "partition"));
  rng.shuffle(keys);
  const std::vector<int> sizes =
      largest_remainder_sizes(static_cast<int>(keys.size()), ratios);
  std::size_t pos = 0;
  for (int t = 0; t < T; ++t) {
    if (sizes[t] == 0)
      fail_config("partition group ", t + 1,
                  " would be empty; not enough classes/samples");
    part.groups.emplace_back(keys.begin() + pos, keys.begin() + pos + sizes[t]);
    pos += sizes[t];
  }
  part.check_invariants();
  part.build_lookup();
  return part;
}

// Degenerate single-group partition (vanilla KD baseline).
inline SubDatasetPartition single_group_partition(const std::vector<int>& labels,
                                                  PartitionMode mode) {
  SubDatasetPartition part;
  part.mode = mode;
  part.T = 1;
  part.ratios = {1.0};
  part.seed = 0;
  if (mode == PartitionMode::ClassDisjoint) {
    part.domain_size = 1 + *std::max_element(labels.begin(), labels.end());
  } else {
    part.domain_size = static_cast<int>(labels.size());
  }
  part.groups.resize(1);
  part.groups[0].resize(part.domain_size);
  std::iota(part.groups[0].begin(), part.groups[0].end(), 0);
  part.check_invariants();
  part.build_lookup();
  return part;
}

inline std::string serialize_partition(const SubDatasetPartition& p) {
  std::ostringstream os;
  os << "edukd-partition v1\n";
  os << "mode " << to_string(p.mode) << "\n";
  os << "seed " << p.seed << "\n";
  os << "domain_size " << p.domain_size << "\n";
  os << "T " << p.T << "\n";
  os << "ratios";
  for (double r : p.ratios) os << " " << r;
  os << "\n";
  for (int t = 0; t < p.T; ++t) {
    os << "group " << (t + 1) << " size " << p.groups[t].size() << " :";
    for (int key : p.groups[t]) os << " " << key;
    os << "\n";
  }
  return os.str();
}

inline SubDatasetPartition parse_partition(std::istream& in) {
  SubDatasetPartition p;
  std::string header;
  std::getline(in, header);
  if (header != "edukd-partition v1")
    fail_run("unrecognized partition file header '", header, "'");
  std::string word;
  std::string mode_str;
  in >> word >> mode_str;
  if (word != "mode") fail_run("partition file: expected 'mode'");
  p.mode = partition_mode_from_string(mode_str);
  in >> word >> p.seed;
  if (word != "seed") fail_run("partition file: expected 'seed'");
  in >> word >> p.domain_size;
  if (word != "domain_size") fail_run("partition file: expected 'domain_size'");
  in >> word >> p.T;
  if (word != "T") fail_run("partition file: expected 'T'");
  in >> word;
  if (word != "ratios") fail_run("partition file: expected 'ratios'");
  p.ratios.resize(p.T);
  for (int t = 0; t < p.T; ++t) in >> p.ratios[t];
  p.groups.resize(p.T);
  for (int t = 0; t < p.T; ++t) {
    int idx = 0;
    std::size_t size = 0;
    in >> word >> idx;
    if (word != "group" || idx != t + 1)
      fail_run("partition file: malformed group ", t + 1);
    in >> word >> size >> word;
    p.groups[t].resize(size);
    for (std::size_t i = 0; i < size; ++i) in >> p.groups[t][i];
  }
  if (!in) fail_run("partition file truncated");
  p.check_invariants();
  p.build_lookup();
  return p;
}

inline void save_partition_file(const SubDatasetPartition& p,
                                const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_run("cannot write partition file '", path, "'");
  out << serialize_partition(p);
}

inline SubDatasetPartition load_partition_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_run("cannot open partition file '", path, "'");
  return parse_partition(in);
}

}  // namespace edukd
