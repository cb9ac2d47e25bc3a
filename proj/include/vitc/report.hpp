#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <iomanip>
#include <sstream>
#include <string>

#include "vitc/flops.hpp"
#include "vitc/gating.hpp"
#include "vitc/plan.hpp"
#include "vitc/sparsity.hpp"

// Report emitters: per-block FLOPs breakdown, kept-head counts with kept-dim
// histograms, and the skip mask, as CSV plus a structured-text summary.

namespace vitc {

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("report: cannot write " + path.string());
  f << content;
}

}  // namespace detail

struct ReportInputs {
  ViTConfig cfg;
  PrimalVars primal;                // soft amounts (zeros for a hard plan report)
  std::vector<double> keep_probs;   // per-block keep probability (0/1 for a plan)
  std::vector<uint8_t> skip;        // hard skip mask
  FlopsBreakdown flops;
  // integerized keep counts
  std::vector<int64_t> kept_heads;
  std::vector<std::vector<int64_t>> kept_dims;  // per block, per kept head slot
  std::vector<int64_t> kept_hidden;
};

inline ReportInputs report_from_state(const ViTConfig& cfg, const PrimalVars& primal,
                                      const std::vector<std::array<double, 2>>& gate_logits) {
  ReportInputs r;
  r.cfg = cfg;
  r.primal = primal;
  for (const auto& lg : gate_logits) {
    r.keep_probs.push_back(keep_prob(lg));
    r.skip.push_back(hard_skip(lg) ? 1 : 0);
  }
  r.flops = flops_soft(cfg, primal, r.keep_probs);
  for (int64_t l = 0; l < cfg.num_blocks; ++l) {
    size_t sl = static_cast<size_t>(l);
    r.kept_heads.push_back(cfg.num_heads -
                           static_cast<int64_t>(std::ceil(std::max(0.0, primal.s1[sl]))));
    std::vector<int64_t> dims;
    for (double rr : primal.r[sl])
      dims.push_back(cfg.head_dim() - static_cast<int64_t>(std::ceil(std::max(0.0, rr))));
    r.kept_dims.push_back(std::move(dims));
    r.kept_hidden.push_back(cfg.hidden_dim() -
                            static_cast<int64_t>(std::ceil(std::max(0.0, primal.s3[sl]))));
  }
  return r;
}

inline ReportInputs report_from_plan(const ViTConfig& cfg, const CompressionPlan& plan) {
  ReportInputs r;
  r.cfg = cfg;
  r.primal = PrimalVars::zeros(cfg);
  r.flops = flops_of_plan(cfg, plan);
  for (const auto& bp : plan.blocks) {
    r.skip.push_back(bp.skip ? 1 : 0);
    r.keep_probs.push_back(bp.skip ? 0.0 : 1.0);
    if (bp.skip) {
      r.kept_heads.push_back(0);
      r.kept_dims.push_back({});
      r.kept_hidden.push_back(0);
      continue;
    }
    std::vector<int64_t> dims;
    int64_t kept = 0;
    for (int64_t i = 0; i < cfg.num_heads; ++i) {
      bool dropped = std::find(bp.dropped_heads.begin(), bp.dropped_heads.end(), i) != bp.dropped_heads.end();
      if (dropped) continue;
      ++kept;
      dims.push_back(cfg.head_dim() - static_cast<int64_t>(bp.dropped_dims[static_cast<size_t>(i)].size()));
    }
    r.kept_heads.push_back(kept);
    r.kept_dims.push_back(std::move(dims));
    r.kept_hidden.push_back(cfg.hidden_dim() - static_cast<int64_t>(bp.dropped_hidden.size()));
  }
  return r;
}

// flops.csv, heads.csv, skip.csv and summary.txt under dir
inline void write_reports(const ReportInputs& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::string flops_csv = "block,qkv,attn,proj,mlp1,mlp2,gate_prob,expected_total\n";
  for (size_t l = 0; l < r.flops.blocks.size(); ++l) {
    const auto& b = r.flops.blocks[l];
    flops_csv += std::to_string(l) + "," + detail::fmt(b.qkv) + "," + detail::fmt(b.attn) + "," +
                 detail::fmt(b.proj) + "," + detail::fmt(b.mlp1) + "," + detail::fmt(b.mlp2) + "," +
                 detail::fmt(b.gate_keep) + "," + detail::fmt(b.expected()) + "\n";
  }
  detail::write_file(fs::path(dir) / "flops.csv", flops_csv);

  std::string heads_csv = "block,kept_heads,kept_dims_per_head,kept_hidden,keep_prob\n";
  for (size_t l = 0; l < r.kept_heads.size(); ++l) {
    std::string dims;
    for (size_t i = 0; i < r.kept_dims[l].size(); ++i)
      dims += (i ? ";" : "") + std::to_string(r.kept_dims[l][i]);
    heads_csv += std::to_string(l) + "," + std::to_string(r.kept_heads[l]) + "," + dims + "," +
                 std::to_string(r.kept_hidden[l]) + "," + detail::fmt(r.keep_probs[l]) + "\n";
  }
  detail::write_file(fs::path(dir) / "heads.csv", heads_csv);

  std::string skip_csv = "block,skip\n";
  for (size_t l = 0; l < r.skip.size(); ++l)
    skip_csv += std::to_string(l) + "," + std::to_string(static_cast<int>(r.skip[l])) + "\n";
  detail::write_file(fs::path(dir) / "skip.csv", skip_csv);

  double dense = flops_dense(r.cfg);
  std::ostringstream sum;
  sum << std::setprecision(17);
  sum << "model dims: embed " << r.cfg.embed_dim << ", blocks " << r.cfg.num_blocks << ", heads "
      << r.cfg.num_heads << ", hidden " << r.cfg.hidden_dim() << ", tokens " << r.cfg.num_tokens() << "\n";
  sum << "stem_flops " << r.flops.stem << "\n";
  sum << "head_flops " << r.flops.head << "\n";
  sum << "expected_total_flops " << r.flops.total() << "\n";
  sum << "dense_flops " << dense << "\n";
  sum << "flops_fraction " << r.flops.total() / dense << "\n";
  for (size_t l = 0; l < r.flops.blocks.size(); ++l) {
    sum << "block " << l << ": " << (r.skip[l] ? "skip" : "keep") << ", kept_heads " << r.kept_heads[l]
        << ", kept_hidden " << r.kept_hidden[l] << ", keep_prob " << r.keep_probs[l] << ", kept-dim histogram [";
    // histogram of kept dims across this block's heads
    std::map<int64_t, int64_t> hist;
    for (int64_t d : r.kept_dims[l]) hist[d]++;
    bool first = true;
    for (auto& [d, n] : hist) {
      sum << (first ? "" : ", ") << n << "x" << d;
      first = false;
    }
    sum << "]\n";
  }
  detail::write_file(fs::path(dir) / "summary.txt", sum.str());
}

}  // namespace vitc
