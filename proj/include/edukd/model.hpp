#pragma once

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "edukd/nn.hpp"
#include "edukd/rng.hpp"
#include "edukd/schedule.hpp"

namespace edukd {

enum class BlockKind { Conv, Residual, Vgg, Mobile };

inline std::string to_string(BlockKind k) {
  switch (k) {
    case BlockKind::Conv: return "conv";
    case BlockKind::Residual: return "residual";
    case BlockKind::Vgg: return "vgg";
    case BlockKind::Mobile: return "mobile";
  }
  return "?";
}

inline BlockKind block_kind_from_string(const std::string& s) {
  if (s == "conv") return BlockKind::Conv;
  if (s == "residual") return BlockKind::Residual;
  if (s == "vgg") return BlockKind::Vgg;
  if (s == "mobile") return BlockKind::Mobile;
  fail_config("unknown block kind '", s,
              "' (expected conv|residual|vgg|mobile)");
}

struct BlockSpec {
  std::string id;
  BlockKind kind = BlockKind::Conv;
  int out_channels = 0;
  int reduction = 1;  // output spatial-reduction factor
};

struct StemSpec {
  int out_channels = 8;
};

struct DecoderSpec {
  int in_channels = 0;  // must equal the last block's output channels
};

// Ordered block-graph description of the full student network.
struct StudentSpec {
  int in_channels = 1;
  StemSpec stem;
  std::vector<BlockSpec> blocks;
  DecoderSpec decoder;
  int num_classes = 0;

  std::vector<std::string> block_ids() const {
    std::vector<std::string> out;
    for (const auto& b : blocks) out.push_back(b.id);
    return out;
  }

  const BlockSpec& block(const std::string& id) const {
    for (const auto& b : blocks)
      if (b.id == id) return b;
    fail_config("no block with id '", id, "'");
  }

  // Channels entering a given block.
  int block_in_channels(const std::string& id) const {
    int c = stem.out_channels;
    for (const auto& b : blocks) {
      if (b.id == id) return c;
      c = b.out_channels;
    }
    fail_config("no block with id '", id, "'");
  }

  void validate() const {
    if (in_channels <= 0) fail_config("student.in_channels must be positive");
    if (stem.out_channels <= 0)
      fail_config("student.stem_channels must be positive");
    if (num_classes <= 0) fail_config("student.num_classes must be positive");
    if (blocks.empty()) fail_config("student needs at least one block");
    std::set<std::string> ids;
    for (const auto& b : blocks) {
      if (b.id.empty()) fail_config("block id may not be empty");
      if (b.id == "stem" || b.id == "pool" || b.id == "flatten" ||
          b.id == "fc" || b.id.rfind("tr", 0) == 0)
        fail_config("block id '", b.id, "' collides with a reserved name");
      if (!ids.insert(b.id).second)
        fail_config("duplicate block id '", b.id, "'");
      if (b.out_channels <= 0)
        fail_config("block '", b.id, "' needs positive channel count");
      if (b.reduction < 1)
        fail_config("block '", b.id, "' reduction must be >= 1");
    }
    if (decoder.in_channels != blocks.back().out_channels)
      fail_config("decoder expects ", decoder.in_channels,
                  " input channels but last block emits ",
                  blocks.back().out_channels);
  }
};

// Temporary decoder attached at intermediate stages: 1x1 conv adapter onto
// the shared classifier width, adaptive average pool to 1x1, classifier.
struct TRBlockSpec {
  std::string block_id;         // newest block it wraps
  int adapter_in_channels = 0;  // channels emitted by that block
  int pool_output = 1;          // fixed 1x1, input-size independent
  int classifier_width = 0;     // shared classifier input width

  void validate() const {
    if (adapter_in_channels <= 0 || classifier_width <= 0)
      fail_config("TR block channel counts must be positive");
    if (pool_output != 1) fail_config("TR pool output is fixed at 1x1");
  }
};

namespace detail {

template <typename S>
std::unique_ptr<Sequential<S>> make_stem(const StudentSpec& spec) {
  auto stem = std::make_unique<Sequential<S>>();
  stem->add("conv", std::make_unique<Conv2d<S>>(spec.in_channels,
                                                spec.stem.out_channels, 3, 1,
                                                1, false));
  stem->add("bn", std::make_unique<BatchNorm2d<S>>(spec.stem.out_channels));
  stem->add("relu", std::make_unique<ReLU<S>>());
  return stem;
}

template <typename S>
std::unique_ptr<Layer<S>> make_block(const BlockSpec& b, int in_c) {
  const int out_c = b.out_channels;
  const int red = b.reduction;
  switch (b.kind) {
    case BlockKind::Conv: {
      auto seq = std::make_unique<Sequential<S>>();
      seq->add("conv", std::make_unique<Conv2d<S>>(in_c, out_c, 3, red, 1,
                                                   false));
      seq->add("bn", std::make_unique<BatchNorm2d<S>>(out_c));
      seq->add("relu", std::make_unique<ReLU<S>>());
      return seq;
    }
    case BlockKind::Vgg: {
      auto seq = std::make_unique<Sequential<S>>();
      seq->add("conv1",
               std::make_unique<Conv2d<S>>(in_c, out_c, 3, 1, 1, false));
      seq->add("bn1", std::make_unique<BatchNorm2d<S>>(out_c));
      seq->add("relu1", std::make_unique<ReLU<S>>());
      seq->add("conv2",
               std::make_unique<Conv2d<S>>(out_c, out_c, 3, 1, 1, false));
      seq->add("bn2", std::make_unique<BatchNorm2d<S>>(out_c));
      seq->add("relu2", std::make_unique<ReLU<S>>());
      if (red > 1)
        seq->add("pool", std::make_unique<MaxPool2d<S>>(red, red));
      return seq;
    }
    case BlockKind::Residual: {
      auto main = std::make_unique<Sequential<S>>();
      main->add("conv1",
                std::make_unique<Conv2d<S>>(in_c, out_c, 3, red, 1, false));
      main->add("bn1", std::make_unique<BatchNorm2d<S>>(out_c));
      main->add("relu1", std::make_unique<ReLU<S>>());
      main->add("conv2",
                std::make_unique<Conv2d<S>>(out_c, out_c, 3, 1, 1, false));
      main->add("bn2", std::make_unique<BatchNorm2d<S>>(out_c));
      std::unique_ptr<Sequential<S>> proj;
      if (red != 1 || in_c != out_c) {
        proj = std::make_unique<Sequential<S>>();
        proj->add("proj_conv",
                  std::make_unique<Conv2d<S>>(in_c, out_c, 1, red, 0, false));
        proj->add("proj_bn", std::make_unique<BatchNorm2d<S>>(out_c));
      }
      return std::make_unique<SkipBlock<S>>(std::move(main), std::move(proj),
                                            true);
    }
    case BlockKind::Mobile: {
      const int mid = 2 * in_c;
      auto main = std::make_unique<Sequential<S>>();
      main->add("expand",
                std::make_unique<Conv2d<S>>(in_c, mid, 1, 1, 0, false));
      main->add("bn1", std::make_unique<BatchNorm2d<S>>(mid));
      main->add("relu1", std::make_unique<ReLU<S>>());
      main->add("dw", std::make_unique<DepthwiseConv2d<S>>(mid, 3, red, 1));
      main->add("bn2", std::make_unique<BatchNorm2d<S>>(mid));
      main->add("relu2", std::make_unique<ReLU<S>>());
      main->add("project",
                std::make_unique<Conv2d<S>>(mid, out_c, 1, 1, 0, false));
      main->add("bn3", std::make_unique<BatchNorm2d<S>>(out_c));
      if (red == 1 && in_c == out_c)
        return std::make_unique<SkipBlock<S>>(std::move(main), nullptr,
                                              false);
      return main;
    }
  }
  fail_config("unhandled block kind");
}

}  // namespace detail

// Fully assembled model for one incremental stage.
template <typename S>
struct StageModelT {
  int stage = 1;
  int T = 1;
  std::vector<std::string> active_block_ids;
  std::set<std::string> frozen_param_ids;
  TRBlockSpec tr_head;  // meaningful only while stage < T
  std::unique_ptr<Sequential<S>> net;

  TensorT<S> forward(const TensorT<S>& x, bool training) {
    return net->forward(x, training);
  }

  std::vector<ParamRef<S>> params() { return named_params(*net); }
  std::vector<BufferRef<S>> buffers() { return named_buffers(*net); }

  std::vector<ParamRef<S>> trainable_params() {
    std::vector<ParamRef<S>> out;
    for (auto& p : params())
      if (!frozen_param_ids.count(p.name)) out.push_back(p);
    return out;
  }
};

using StageModel = StageModelT<float>;

// The student built directly from its spec, with every component in place.
template <typename S>
std::unique_ptr<Sequential<S>> build_reference_student(const StudentSpec& spec,
                                                       std::uint64_t seed) {
  spec.validate();
  auto net = std::make_unique<Sequential<S>>();
  RngStream rng(derive_seed(seed, "reference-init"));
  auto stem = detail::make_stem<S>(spec);
  stem->init_params(rng);
  net->add("stem", std::move(stem));
  int c = spec.stem.out_channels;
  for (const auto& b : spec.blocks) {
    auto layer = detail::make_block<S>(b, c);
    layer->init_params(rng);
    net->add(b.id, std::move(layer));
    c = b.out_channels;
  }
  net->add("pool", std::make_unique<GlobalAvgPool<S>>());
  net->add("flatten", std::make_unique<Flatten<S>>());
  auto fc = std::make_unique<Linear<S>>(spec.decoder.in_channels,
                                        spec.num_classes, true);
  fc->init_params(rng);
  net->add("fc", std::move(fc));
  return net;
}

// Builds the stage-t model: stem + block groups 1..t, then either the TR
// head (adapter -> pool -> shared classifier) or, at the final stage, the
// original decoder. Each stage's new components are initialized from their
// own stream derived from (seed, stage), so rebuilding any stage is
// reproducible.
template <typename S>
StageModelT<S> assemble_stage_model(const StudentSpec& spec,
                                    const StageSchedule& schedule, int t,
                                    std::uint64_t seed) {
  spec.validate();
  schedule.validate(spec.block_ids());
  if (t < 1 || t > schedule.T)
    fail_config("stage index ", t, " out of range 1..", schedule.T);

  StageModelT<S> model;
  model.stage = t;
  model.T = schedule.T;
  model.active_block_ids = schedule.active_blocks(t);
  model.net = std::make_unique<Sequential<S>>();

  std::unique_ptr<Linear<S>> fc;
  int channels = spec.stem.out_channels;
  for (int s = 1; s <= t; ++s) {
    RngStream rng(derive_seed(seed, "stage-init", std::uint64_t(s)));
    if (s == 1) {
      auto stem = detail::make_stem<S>(spec);
      stem->init_params(rng);
      model.net->add("stem", std::move(stem));
    }
    for (const auto& id : schedule.block_allocation[s - 1]) {
      const BlockSpec& b = spec.block(id);
      auto layer = detail::make_block<S>(b, spec.block_in_channels(id));
      layer->init_params(rng);
      model.net->add(id, std::move(layer));
      channels = b.out_channels;
    }
    if (s == 1) {
      // shared classifier g, carried through every stage
      fc = std::make_unique<Linear<S>>(spec.decoder.in_channels,
                                       spec.num_classes, true);
      fc->init_params(rng);
    }
    if (s == t && t < schedule.T) {
      model.tr_head = TRBlockSpec{model.active_block_ids.back(), channels, 1,
                                  spec.decoder.in_channels};
      model.tr_head.validate();
      auto adapter = std::make_unique<Conv2d<S>>(
          channels, spec.decoder.in_channels, 1, 1, 0, true);
      adapter->init_params(rng);
      model.net->add(concat("tr", t, "_adapter"), std::move(adapter));
    }
  }
  model.net->add("pool", std::make_unique<GlobalAvgPool<S>>());
  model.net->add("flatten", std::make_unique<Flatten<S>>());
  model.net->add("fc", std::move(fc));

  // everything introduced before stage t is frozen, running in eval mode
  for (int s = 1; s < t; ++s) {
    if (s == 1) model.net->set_frozen("stem", true);
    for (const auto& id : schedule.block_allocation[s - 1])
      model.net->set_frozen(id, true);
  }
  for (auto& p : model.params()) {
    const std::string root = p.name.substr(0, p.name.find('.'));
    if (root == "stem" && t > 1) {
      model.frozen_param_ids.insert(p.name);
    } else {
      for (int s = 1; s < t; ++s)
        for (const auto& id : schedule.block_allocation[s - 1])
          if (root == id) model.frozen_param_ids.insert(p.name);
    }
  }
  return model;
}

// Copies every parameter and buffer whose name exists on both sides.
// Returns the copied names.
template <typename S>
std::set<std::string> copy_matching_state(StageModelT<S>& src,
                                          StageModelT<S>& dst) {
  std::set<std::string> copied;
  std::map<std::string, TensorT<S>*> src_tensors;
  for (auto& p : src.params()) src_tensors[p.name] = p.value;
  for (auto& b : src.buffers()) src_tensors["buf:" + b.name] = b.value;
  for (auto& p : dst.params()) {
    auto it = src_tensors.find(p.name);
    if (it == src_tensors.end()) continue;
    if (!p.value->same_shape(*it->second))
      fail_run("state copy shape mismatch on '", p.name, "'");
    p.value->data = it->second->data;
    copied.insert(p.name);
  }
  for (auto& b : dst.buffers()) {
    auto it = src_tensors.find("buf:" + b.name);
    if (it == src_tensors.end()) continue;
    b.value->data = it->second->data;
    copied.insert(b.name);
  }
  return copied;
}

// Stage advance: drops the old adapter+pool, freezes everything trained so
// far, appends the next block group with fresh parameters and attaches the
// next head. Trained weights (including the shared classifier) move over
// by name; the old adapter has no counterpart and disappears.
template <typename S>
StageModelT<S> advance_stage(StageModelT<S>& model, const StudentSpec& spec,
                             const StageSchedule& schedule,
                             std::uint64_t seed) {
  if (model.stage >= schedule.T)
    fail_run("advance_stage called at final stage ", model.stage);
  // contract: everything before the current stage is already frozen
  StageModelT<S> probe =
      assemble_stage_model<S>(spec, schedule, model.stage, seed);
  if (model.frozen_param_ids != probe.frozen_param_ids)
    fail_run("advance_stage: stage-", model.stage,
             " model has inconsistent frozen set");
  StageModelT<S> next =
      assemble_stage_model<S>(spec, schedule, model.stage + 1, seed);
  copy_matching_state(model, next);
  return next;
}

// Final-stage restoration: the TR head gives way to the original decoder
// and the composed graph must match the directly built student exactly.
template <typename S>
StageModelT<S> restore_final_architecture(StageModelT<S>& model,
                                          const StudentSpec& spec,
                                          const StageSchedule& schedule,
                                          std::uint64_t seed) {
  if (model.stage != schedule.T - 1)
    fail_run("restore_final_architecture expects a stage T-1 model, got ",
             model.stage);
  return advance_stage(model, spec, schedule, seed);
}

template <typename S>
std::vector<std::string> model_fingerprint(const StageModelT<S>& model) {
  return fingerprint_lines(*model.net);
}

inline std::string fingerprint_text(const std::vector<std::string>& lines) {
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

}  // namespace edukd
