#pragma once

#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace vitc {

// One line-delimited record per optimizer iteration; epoch-level records
// (validation metrics) carry kind = "epoch".
struct TraceRecord {
  std::string kind = "iter";
  int64_t iteration = 0;
  int64_t epoch = 0;
  double task = 0, distill = 0, sparsity = 0, resource = 0, objective = 0;
  double expected_flops = 0, expected_flops_fraction = 0;
  double z = 0, mean_y = 0, mean_p = 0, tau = 0;
  std::vector<double> gate_keep;
  double val_accuracy = 0, val_loss = 0;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["kind"] = kind;
    j["iteration"] = iteration;
    j["epoch"] = epoch;
    if (kind == "iter") {
      j["task"] = task;
      j["distill"] = distill;
      j["sparsity"] = sparsity;
      j["resource"] = resource;
      j["objective"] = objective;
      j["expected_flops"] = expected_flops;
      j["expected_flops_fraction"] = expected_flops_fraction;
      j["z"] = z;
      j["mean_y"] = mean_y;
      j["mean_p"] = mean_p;
      j["tau"] = tau;
      j["gate_keep"] = gate_keep;
    } else {
      j["val_accuracy"] = val_accuracy;
      j["val_loss"] = val_loss;
      j["expected_flops"] = expected_flops;
      j["expected_flops_fraction"] = expected_flops_fraction;
    }
    return j;
  }
};

class TraceWriter {
 public:
  TraceWriter() = default;
  explicit TraceWriter(std::ostream* os) : os_(os) {}

  void write(const TraceRecord& rec) {
    records_.push_back(rec);
    if (os_) *os_ << rec.to_json().dump() << "\n";
  }

  const std::vector<TraceRecord>& records() const { return records_; }
  const TraceRecord* last_iter() const {
    for (auto it = records_.rbegin(); it != records_.rend(); ++it)
      if (it->kind == "iter") return &*it;
    return nullptr;
  }

  std::string dump_all() const {
    std::string out;
    for (const auto& r : records_) out += r.to_json().dump() + "\n";
    return out;
  }

 private:
  std::ostream* os_ = nullptr;
  std::vector<TraceRecord> records_;
};

}  // namespace vitc
