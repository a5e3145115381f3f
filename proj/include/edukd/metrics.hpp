#pragma once

#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "edukd/dataset.hpp"
#include "edukd/nn.hpp"

namespace edukd {

// One observation in the append-only run log. subset_id 0 encodes "all".
struct MetricsRecord {
  std::string run_id;
  int epoch = 0;
  int stage = 0;
  std::string split;  // train|test
  int subset_id = 0;
  std::string metric;
  double value = 0;
  double wall_time = 0;
};

inline std::string metrics_header() {
  return "run_id\tepoch\tstage\tsplit\tsubset_id\tmetric\tvalue\twall_time";
}

inline std::string format_record(const MetricsRecord& r) {
  char value_buf[64], wall_buf[64];
  std::snprintf(value_buf, sizeof(value_buf), "%.6f", r.value);
  std::snprintf(wall_buf, sizeof(wall_buf), "%.3f", r.wall_time);
  return concat(r.run_id, '\t', r.epoch, '\t', r.stage, '\t', r.split, '\t',
                r.subset_id == 0 ? std::string("all")
                                 : std::to_string(r.subset_id),
                '\t', r.metric, '\t', value_buf, '\t', wall_buf);
}

inline MetricsRecord parse_record(const std::string& line) {
  MetricsRecord r;
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  if (fields.size() != 8) fail_run("malformed metrics row: '", line, "'");
  r.run_id = fields[0];
  r.epoch = std::stoi(fields[1]);
  r.stage = std::stoi(fields[2]);
  r.split = fields[3];
  r.subset_id = fields[4] == "all" ? 0 : std::stoi(fields[4]);
  r.metric = fields[5];
  r.value = std::stod(fields[6]);
  r.wall_time = std::stod(fields[7]);
  return r;
}

// Single-writer append-only log with a header line.
class MetricsLog {
public:
  MetricsLog() = default;

  void open_fresh(const std::string& path) {
    path_ = path;
    records_.clear();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_run("cannot create metrics log '", path, "'");
    out << metrics_header() << "\n";
  }

  // Reopens an existing log, dropping every record after `keep_epoch`
  // (used on resume so replayed epochs are appended exactly once).
  void open_resume(const std::string& path, int keep_epoch) {
    auto all = read_metrics_file(path);
    records_.clear();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_run("cannot rewrite metrics log '", path, "'");
    out << metrics_header() << "\n";
    path_ = path;
    for (const auto& r : all)
      if (r.epoch <= keep_epoch) {
        out << format_record(r) << "\n";
        records_.push_back(r);
      }
  }

  void append(const MetricsRecord& r) {
    records_.push_back(r);
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) fail_run("cannot append to metrics log '", path_, "'");
    out << format_record(r) << "\n";
  }

  const std::vector<MetricsRecord>& records() const { return records_; }

  static std::vector<MetricsRecord> read_metrics_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_run("cannot open metrics log '", path, "'");
    std::string line;
    if (!std::getline(in, line) || line != metrics_header())
      fail_run("metrics log '", path, "' has an unexpected header");
    std::vector<MetricsRecord> out;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      out.push_back(parse_record(line));
    }
    return out;
  }

  // (run_id, epoch, split, subset_id, metric) must be unique per log.
  static void check_uniqueness(const std::vector<MetricsRecord>& records) {
    std::set<std::tuple<std::string, int, std::string, int, std::string>> seen;
    for (const auto& r : records)
      if (!seen.insert({r.run_id, r.epoch, r.split, r.subset_id, r.metric})
               .second)
        fail_run("duplicate metrics key at epoch ", r.epoch, " metric '",
                 r.metric, "' subset ", r.subset_id);
  }

private:
  std::string path_;
  std::vector<MetricsRecord> records_;
};

// Fraction of samples whose argmax logit hits the label, in percent.
inline double top1_accuracy(Layer<float>& net, const Dataset& ds, Split split,
                            const std::vector<SampleRef>& samples,
                            int batch_size) {
  if (samples.empty()) fail_run("top1_accuracy on empty sample set");
  if (batch_size <= 0) fail_run("top1_accuracy needs positive batch size");
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < samples.size();
       begin += std::size_t(batch_size)) {
    const std::size_t end =
        std::min(samples.size(), begin + std::size_t(batch_size));
    Batch b = gather_batch(ds, split, samples, begin, end);
    Tensor logits = net.forward(b.images, false);
    const int c = logits.dim(1);
    for (int i = 0; i < b.size(); ++i) {
      const float* row = logits.data.data() + std::size_t(i) * c;
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
      if (best == b.labels[i]) ++hits;
    }
  }
  return 100.0 * double(hits) / double(samples.size());
}

// Stage-end accuracy per sub-dataset; entry (s, t) is present iff t <= s.
struct ForgettingMatrix {
  int T = 0;
  std::vector<int> stage_end_epochs;                     // size T
  std::vector<std::vector<std::optional<double>>> rows;  // T x T

  void check_occupancy() const {
    for (int s = 1; s <= T; ++s)
      for (int t = 1; t <= T; ++t) {
        const bool present = rows[s - 1][t - 1].has_value();
        if (present && t > s)
          fail_run("forgetting matrix entry (", s, ",", t,
                   ") above the diagonal");
        if (!present && t <= s)
          fail_run("forgetting matrix entry (", s, ",", t, ") missing");
      }
  }
};

// Builds the matrix from a run's metrics records: for each stage, the last
// evaluated epoch of that stage supplies the per-subset test accuracies.
inline ForgettingMatrix forgetting_matrix(
    const std::vector<MetricsRecord>& records) {
  int T = 0;
  for (const auto& r : records) T = std::max(T, r.stage);
  if (T == 0) fail_run("metrics log carries no stage information");

  ForgettingMatrix m;
  m.T = T;
  m.stage_end_epochs.assign(T, -1);
  m.rows.assign(T, std::vector<std::optional<double>>(T));
  for (const auto& r : records)
    if (r.split == "test" && r.metric == "top1" && r.subset_id > 0)
      m.stage_end_epochs[r.stage - 1] =
          std::max(m.stage_end_epochs[r.stage - 1], r.epoch);
  for (int s = 1; s <= T; ++s)
    if (m.stage_end_epochs[s - 1] < 0)
      fail_run("no stage-end evaluation rows for stage ", s);
  for (const auto& r : records) {
    if (r.split != "test" || r.metric != "top1" || r.subset_id == 0) continue;
    if (r.epoch == m.stage_end_epochs[r.stage - 1] && r.subset_id <= r.stage)
      m.rows[r.stage - 1][r.subset_id - 1] = r.value;
  }
  m.check_occupancy();
  return m;
}

}  // namespace edukd
