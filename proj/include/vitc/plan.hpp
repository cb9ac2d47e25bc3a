#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace vitc {

// Hard, integerized compression decisions for one transformer block.
// dropped_dims is indexed by original head id; entries for dropped heads are
// empty (the whole head goes away, including its Q/K columns).
struct BlockPlan {
  bool skip = false;
  std::vector<int64_t> dropped_heads;
  std::vector<std::vector<int64_t>> dropped_dims;
  std::vector<int64_t> dropped_hidden;
};

struct CompressionPlan {
  std::vector<BlockPlan> blocks;
  double achieved_flops = 0.0;
  double budget_flops = 0.0;

  bool empty() const {
    for (const auto& b : blocks) {
      if (b.skip || !b.dropped_heads.empty() || !b.dropped_hidden.empty()) return false;
      for (const auto& d : b.dropped_dims)
        if (!d.empty()) return false;
    }
    return true;
  }
};

inline nlohmann::json plan_to_json(const CompressionPlan& p) {
  nlohmann::json j;
  j["achieved_flops"] = p.achieved_flops;
  j["budget_flops"] = p.budget_flops;
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : p.blocks) {
    nlohmann::json jb;
    jb["skip"] = b.skip;
    jb["dropped_heads"] = b.dropped_heads;
    jb["dropped_dims"] = b.dropped_dims;
    jb["dropped_hidden"] = b.dropped_hidden;
    j["blocks"].push_back(jb);
  }
  return j;
}

inline CompressionPlan plan_from_json(const nlohmann::json& j) {
  CompressionPlan p;
  p.achieved_flops = j.at("achieved_flops").get<double>();
  p.budget_flops = j.at("budget_flops").get<double>();
  for (const auto& jb : j.at("blocks")) {
    BlockPlan b;
    b.skip = jb.at("skip").get<bool>();
    b.dropped_heads = jb.at("dropped_heads").get<std::vector<int64_t>>();
    b.dropped_dims = jb.at("dropped_dims").get<std::vector<std::vector<int64_t>>>();
    b.dropped_hidden = jb.at("dropped_hidden").get<std::vector<int64_t>>();
    p.blocks.push_back(std::move(b));
  }
  return p;
}

// human-readable per-block records
inline std::string plan_to_text(const CompressionPlan& p) {
  std::string out;
  out += "compression plan\n";
  out += "budget_flops " + std::to_string(p.budget_flops) + "\n";
  out += "achieved_flops " + std::to_string(p.achieved_flops) + "\n";
  for (size_t l = 0; l < p.blocks.size(); ++l) {
    const auto& b = p.blocks[l];
    out += "block " + std::to_string(l) + (b.skip ? " skip\n" : " keep\n");
    if (b.skip) continue;
    out += "  dropped_heads [";
    for (size_t i = 0; i < b.dropped_heads.size(); ++i)
      out += (i ? "," : "") + std::to_string(b.dropped_heads[i]);
    out += "]\n";
    for (size_t h = 0; h < b.dropped_dims.size(); ++h) {
      if (b.dropped_dims[h].empty()) continue;
      out += "  head " + std::to_string(h) + " dropped_dims [";
      for (size_t i = 0; i < b.dropped_dims[h].size(); ++i)
        out += (i ? "," : "") + std::to_string(b.dropped_dims[h][i]);
      out += "]\n";
    }
    out += "  dropped_hidden_count " + std::to_string(b.dropped_hidden.size()) + "\n";
  }
  return out;
}

}  // namespace vitc
