#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "edukd/common.hpp"

namespace edukd {

enum class AdvanceMode { FixedEpoch, Plateau };

inline std::string to_string(AdvanceMode m) {
  return m == AdvanceMode::FixedEpoch ? "fixed-epoch" : "plateau";
}

inline AdvanceMode advance_mode_from_string(const std::string& s) {
  if (s == "fixed-epoch") return AdvanceMode::FixedEpoch;
  if (s == "plateau") return AdvanceMode::Plateau;
  fail_config("schedule.advance_mode must be 'fixed-epoch' or 'plateau', got '",
              s, "'");
}

// Plateau detection parameters; the fixed advance epochs remain a hard
// ceiling so a run can never stall in one stage.
struct PlateauConfig {
  double delta = 0.1;  // accuracy points
  int patience = 10;   // epochs
};

struct StageSchedule {
  int T = 3;
  std::vector<std::vector<std::string>> block_allocation;  // size T
  std::vector<int> advance_epochs;                         // size T-1
  int total_epochs = 240;
  AdvanceMode advance_mode = AdvanceMode::FixedEpoch;
  PlateauConfig plateau;

  void validate(const std::vector<std::string>& all_block_ids) const {
    if (T < 1) fail_config("schedule.T must be >= 1, got ", T);
    if (static_cast<int>(block_allocation.size()) != T)
      fail_config("schedule.block_allocation has ", block_allocation.size(),
                  " groups, expected T=", T);
    if (static_cast<int>(advance_epochs.size()) != T - 1)
      fail_config("schedule.advance_epochs has ", advance_epochs.size(),
                  " entries, expected T-1=", T - 1);
    for (std::size_t i = 0; i + 1 < advance_epochs.size(); ++i)
      if (advance_epochs[i] >= advance_epochs[i + 1])
        fail_config("schedule.advance_epochs must be strictly increasing");
    for (int e : advance_epochs) {
      if (e <= 0 || e >= total_epochs)
        fail_config("schedule.advance_epochs entry ", e,
                    " must lie in (0, total_epochs=", total_epochs, ")");
    }
    std::set<std::string> seen;
    for (const auto& group : block_allocation) {
      if (group.empty())
        fail_config("schedule.block_allocation group may not be empty");
      for (const auto& id : group) {
        if (!seen.insert(id).second)
          fail_config("block '", id, "' assigned to more than one stage");
        if (std::find(all_block_ids.begin(), all_block_ids.end(), id) ==
            all_block_ids.end())
          fail_config("block '", id, "' in allocation is not a student block");
      }
    }
    for (const auto& id : all_block_ids)
      if (!seen.count(id))
        fail_config("student block '", id, "' left unassigned by allocation");
    // allocation must follow the spec's block order, stage by stage
    std::size_t pos = 0;
    for (const auto& group : block_allocation)
      for (const auto& id : group) {
        if (all_block_ids[pos] != id)
          fail_config("block_allocation must list blocks in network order; "
                      "expected '", all_block_ids[pos], "', got '", id, "'");
        ++pos;
      }
  }

  // Stage active at a given epoch in fixed-epoch mode; plateau mode may
  // advance earlier but never later than this.
  int stage_of_epoch(int epoch) const {
    int s = 1;
    for (int e : advance_epochs)
      if (epoch >= e) ++s;
    return s;
  }

  // Last epoch a stage trains in fixed-epoch mode.
  int stage_end_epoch(int stage) const {
    if (stage < 1 || stage > T) fail_config("stage ", stage, " out of range");
    return stage < T ? advance_epochs[stage - 1] - 1 : total_epochs - 1;
  }

  // Blocks active at a stage: groups 1..t flattened in network order.
  std::vector<std::string> active_blocks(int stage) const {
    std::vector<std::string> out;
    for (int s = 1; s <= stage; ++s)
      for (const auto& id : block_allocation[s - 1]) out.push_back(id);
    return out;
  }

  // Stage that introduces a block.
  int stage_of_block(const std::string& id) const {
    for (int s = 1; s <= T; ++s)
      for (const auto& b : block_allocation[s - 1])
        if (b == id) return s;
    fail_config("block '", id, "' not in allocation");
  }
};

// Contiguous near-even split of the block list into T groups, used when a
// config does not pin the allocation. Earlier groups take the remainder.
inline std::vector<std::vector<std::string>> even_block_allocation(
    const std::vector<std::string>& block_ids, int T) {
  const int b = static_cast<int>(block_ids.size());
  if (T < 1 || b < T)
    fail_config("cannot split ", b, " blocks into ", T, " non-empty stages");
  std::vector<std::vector<std::string>> groups(T);
  int base = b / T, rem = b % T, pos = 0;
  for (int s = 0; s < T; ++s) {
    int take = base + (s < rem ? 1 : 0);
    for (int i = 0; i < take; ++i) groups[s].push_back(block_ids[pos++]);
  }
  return groups;
}

}  // namespace edukd
