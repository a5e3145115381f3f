#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "edukd/model.hpp"
#include "edukd/tensor.hpp"

namespace edukd {

// Binary checkpoint container: named float32 tensors (parameters, buffers,
// optimizer momentum), the frozen set, RNG state and free-form metadata.
// Little-endian, fixed field order.
struct CheckpointData {
  std::string kind;  // "stage" | "final" | "teacher" | "diagnostic"
  std::string run_id;
  int stage = -1;
  int epoch = -1;
  std::string rng_state;
  std::map<std::string, std::string> extra;
  std::map<std::string, Tensor> params;
  std::map<std::string, Tensor> buffers;
  std::map<std::string, Tensor> momentum;
  std::set<std::string> frozen;
};

namespace ckpt_detail {

constexpr std::uint32_t kMagic = 0x454B4431;  // "EKD1"
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail_run("checkpoint truncated");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint64_t>(in);
  if (n > (1ull << 32)) fail_run("checkpoint string length implausible");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) fail_run("checkpoint truncated");
  return s;
}

inline void write_tensor_map(std::ostream& out,
                             const std::map<std::string, Tensor>& m) {
  write_pod<std::uint64_t>(out, m.size());
  for (const auto& [name, t] : m) {
    write_string(out, name);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int d : t.shape) write_pod<std::int32_t>(out, d);
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
}

inline std::map<std::string, Tensor> read_tensor_map(std::istream& in) {
  std::map<std::string, Tensor> m;
  const auto count = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = read_string(in);
    const auto ndim = read_pod<std::uint32_t>(in);
    std::vector<int> dims;
    for (std::uint32_t d = 0; d < ndim; ++d)
      dims.push_back(read_pod<std::int32_t>(in));
    Tensor t(dims);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!in) fail_run("checkpoint truncated in tensor '", name, "'");
    m.emplace(name, std::move(t));
  }
  return m;
}

}  // namespace ckpt_detail

inline void save_checkpoint(const CheckpointData& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_run("cannot write checkpoint '", path, "'");
  using namespace ckpt_detail;
  write_pod(out, kMagic);
  write_pod(out, kVersion);
  write_string(out, ck.kind);
  write_string(out, ck.run_id);
  write_pod<std::int32_t>(out, ck.stage);
  write_pod<std::int32_t>(out, ck.epoch);
  write_string(out, ck.rng_state);
  write_pod<std::uint64_t>(out, ck.extra.size());
  for (const auto& [k, v] : ck.extra) {
    write_string(out, k);
    write_string(out, v);
  }
  write_tensor_map(out, ck.params);
  write_tensor_map(out, ck.buffers);
  write_tensor_map(out, ck.momentum);
  write_pod<std::uint64_t>(out, ck.frozen.size());
  for (const auto& name : ck.frozen) write_string(out, name);
  if (!out) fail_run("write failure on checkpoint '", path, "'");
}

inline CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail_run("cannot open checkpoint '", path, "'");
  using namespace ckpt_detail;
  if (read_pod<std::uint32_t>(in) != kMagic)
    fail_run("'", path, "' is not an edukd checkpoint");
  if (read_pod<std::uint32_t>(in) != kVersion)
    fail_run("unsupported checkpoint version in '", path, "'");
  CheckpointData ck;
  ck.kind = read_string(in);
  ck.run_id = read_string(in);
  ck.stage = read_pod<std::int32_t>(in);
  ck.epoch = read_pod<std::int32_t>(in);
  ck.rng_state = read_string(in);
  const auto n_extra = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_extra; ++i) {
    std::string k = read_string(in);
    ck.extra[k] = read_string(in);
  }
  ck.params = read_tensor_map(in);
  ck.buffers = read_tensor_map(in);
  ck.momentum = read_tensor_map(in);
  const auto n_frozen = read_pod<std::uint64_t>(in);
  for (std::uint64_t i = 0; i < n_frozen; ++i)
    ck.frozen.insert(read_string(in));
  return ck;
}

// Snapshot of a model's learnable state.
template <typename S>
void capture_model_state(StageModelT<S>& model, CheckpointData& ck) {
  for (auto& p : model.params())
    ck.params[p.name] = p.value->template cast<float>();
  for (auto& b : model.buffers())
    ck.buffers[b.name] = b.value->template cast<float>();
  ck.frozen = model.frozen_param_ids;
  ck.stage = model.stage;
}

// Loads tensors into an already assembled model. Strict: the checkpoint
// and the model must carry exactly the same names.
template <typename S>
void restore_model_state(const CheckpointData& ck, StageModelT<S>& model) {
  std::set<std::string> used;
  for (auto& p : model.params()) {
    auto it = ck.params.find(p.name);
    if (it == ck.params.end())
      fail_run("checkpoint is missing parameter '", p.name, "'");
    if (it->second.shape != p.value->shape)
      fail_run("checkpoint parameter '", p.name, "' has shape ",
               it->second.shape_str(), ", model expects ",
               p.value->shape_str());
    *p.value = it->second.template cast<S>();
    used.insert(p.name);
  }
  for (const auto& [name, t] : ck.params)
    if (!used.count(name))
      fail_run("checkpoint carries unexpected parameter '", name, "'");
  for (auto& b : model.buffers()) {
    auto it = ck.buffers.find(b.name);
    if (it == ck.buffers.end())
      fail_run("checkpoint is missing buffer '", b.name, "'");
    *b.value = it->second.template cast<S>();
  }
}

}  // namespace edukd
