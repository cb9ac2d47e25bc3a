#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "vitc/checkpoint.hpp"
#include "vitc/config.hpp"
#include "vitc/report.hpp"

// Pipeline driver. Exit codes: 0 success, 2 validation/configuration error,
// 3 numerical divergence.

namespace fs = std::filesystem;

namespace {

struct Cli {
  std::string config_path;
  std::string model_in, state_in, teacher_in;
  std::string split = "val";
  // overrides; negative/empty means "not set"
  double budget = -1;
  int64_t seed = -1;
  std::string out_dir;
  int precision = 0;
};

vitc::RunConfig load_config(const Cli& cli) {
  vitc::RunConfig rc = vitc::RunConfig::defaults();
  if (!cli.config_path.empty()) {
    std::ifstream f(cli.config_path);
    if (!f) throw std::invalid_argument("cannot open config file: " + cli.config_path);
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config parse error: " + std::string(e.what()));
    }
    rc = vitc::RunConfig::from_json(j);
  }
  if (cli.budget > 0) rc.budget_fraction = cli.budget;
  if (cli.seed >= 0) rc.seed = static_cast<uint64_t>(cli.seed);
  if (!cli.out_dir.empty()) rc.out_dir = cli.out_dir;
  if (cli.precision != 0) rc.precision = cli.precision;
  rc.validate();
  return rc;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot open for writing: " + p.string());
  return f;
}

template <typename Real>
int cmd_train_dense(const vitc::RunConfig& rc) {
  vitc::Dataset data = vitc::load_dataset(rc);
  fs::create_directories(rc.out_dir);
  auto trace_file = open_out(fs::path(rc.out_dir) / "dense_trace.jsonl");
  vitc::TraceWriter trace(&trace_file);
  vitc::TrainOptions opt = rc.dense;
  opt.seed = rc.seed;
  auto w = vitc::train_dense<Real>(rc.model, data, opt, &trace);
  auto ev = vitc::evaluate(w, data, data.val_idx);
  vitc::model_checkpoint(w, rc.precision).save((fs::path(rc.out_dir) / "dense.ckpt").string());
  std::cout << "dense val_accuracy " << ev.accuracy << " val_loss " << ev.mean_loss << "\n";
  std::cout << "wrote " << (fs::path(rc.out_dir) / "dense.ckpt").string() << "\n";
  return 0;
}

template <typename Real>
int cmd_compress(const vitc::RunConfig& rc, const std::string& model_in) {
  vitc::Dataset data = vitc::load_dataset(rc);
  std::string in = model_in.empty() ? (fs::path(rc.out_dir) / "dense.ckpt").string() : model_in;
  auto dense = vitc::model_from_checkpoint<Real>(vitc::Checkpoint::load(in));
  if (!(dense.config == rc.model))
    throw std::invalid_argument("compress: checkpoint model configuration does not match the config file");

  fs::create_directories(rc.out_dir);
  auto trace_file = open_out(fs::path(rc.out_dir) / "compress_trace.jsonl");
  vitc::TraceWriter trace(&trace_file);

  auto state = vitc::OptimState<Real>::start(dense);
  vitc::HyperParams hp = rc.compress;
  hp.budget_flops = rc.resolved_budget();
  hp.seed = rc.seed;
  vitc::run_compression(state, data, hp, trace);

  vitc::state_checkpoint(state, rc.precision).save((fs::path(rc.out_dir) / "state.ckpt").string());
  const vitc::TraceRecord* last = trace.last_iter();
  std::cout << "compress expected_flops_fraction " << (last ? last->expected_flops_fraction : 1.0) << " z "
            << state.dual.z << "\n";
  std::cout << "wrote " << (fs::path(rc.out_dir) / "state.ckpt").string() << "\n";
  return 0;
}

template <typename Real>
int cmd_extract(const vitc::RunConfig& rc, const std::string& state_in) {
  std::string in = state_in.empty() ? (fs::path(rc.out_dir) / "state.ckpt").string() : state_in;
  auto ck = vitc::Checkpoint::load(in);
  auto weights = vitc::model_from_checkpoint<Real>(ck);
  auto state = vitc::state_from_checkpoint<Real>(ck, weights);  // teacher unused here
  auto plan = vitc::build_plan(state, rc.resolved_budget(), &std::cerr);
  auto small = vitc::extract(state.weights, plan);

  fs::create_directories(rc.out_dir);
  auto out_ck = vitc::model_checkpoint(small, rc.precision);
  out_ck.meta["plan"] = vitc::plan_to_json(plan);
  out_ck.save((fs::path(rc.out_dir) / "compressed.ckpt").string());
  open_out(fs::path(rc.out_dir) / "plan.txt") << vitc::plan_to_text(plan);
  std::cout << "plan achieved_flops " << plan.achieved_flops << " budget " << plan.budget_flops
            << " fraction_of_dense " << plan.achieved_flops / vitc::flops_dense(rc.model) << "\n";
  std::cout << "wrote " << (fs::path(rc.out_dir) / "compressed.ckpt").string() << "\n";
  return 0;
}

template <typename Real>
int cmd_finetune(const vitc::RunConfig& rc, const std::string& model_in, const std::string& teacher_in) {
  vitc::Dataset data = vitc::load_dataset(rc);
  std::string in = model_in.empty() ? (fs::path(rc.out_dir) / "compressed.ckpt").string() : model_in;
  std::string tin = teacher_in.empty() ? (fs::path(rc.out_dir) / "dense.ckpt").string() : teacher_in;
  auto model = vitc::model_from_checkpoint<Real>(vitc::Checkpoint::load(in));
  vitc::ViTWeights<Real> teacher;
  const vitc::ViTWeights<Real>* teacher_ptr = nullptr;
  vitc::FinetuneOptions opt = rc.finetune;
  opt.seed = rc.seed;
  if (opt.lambda > 0) {
    teacher = vitc::model_from_checkpoint<Real>(vitc::Checkpoint::load(tin));
    teacher_ptr = &teacher;
  }

  fs::create_directories(rc.out_dir);
  auto trace_file = open_out(fs::path(rc.out_dir) / "finetune_trace.jsonl");
  vitc::TraceWriter trace(&trace_file);
  auto ev = vitc::finetune(model, data, opt, teacher_ptr, &trace);
  vitc::model_checkpoint(model, rc.precision).save((fs::path(rc.out_dir) / "final.ckpt").string());
  std::cout << "finetune val_accuracy " << ev.accuracy << " val_loss " << ev.mean_loss << "\n";
  std::cout << "wrote " << (fs::path(rc.out_dir) / "final.ckpt").string() << "\n";
  return 0;
}

template <typename Real>
int cmd_eval(const vitc::RunConfig& rc, const std::string& model_in, const std::string& split) {
  vitc::Dataset data = vitc::load_dataset(rc);
  if (model_in.empty()) throw std::invalid_argument("eval: --model-in is required");
  auto ck = vitc::Checkpoint::load(model_in);
  auto kind = ck.meta.at("kind").get<std::string>();
  const auto& idx = split == "train" ? data.train_idx : data.val_idx;
  vitc::EvalResult ev;
  if (kind == "state") {
    auto weights = vitc::model_from_checkpoint<Real>(ck);
    auto state = vitc::state_from_checkpoint<Real>(ck, weights);
    auto skips = state.hard_skips();
    ev = vitc::evaluate(state.weights, data, idx, &skips);
  } else {
    auto model = vitc::model_from_checkpoint<Real>(ck);
    ev = vitc::evaluate(model, data, idx);
  }
  std::cout << "accuracy " << std::setprecision(17) << ev.accuracy << "\n";
  std::cout << "mean_loss " << std::setprecision(17) << ev.mean_loss << "\n";
  return 0;
}

template <typename Real>
int cmd_report(const vitc::RunConfig& rc, const std::string& state_in, const std::string& model_in) {
  vitc::ReportInputs inputs;
  if (!model_in.empty()) {
    auto ck = vitc::Checkpoint::load(model_in);
    if (!ck.meta.contains("plan"))
      throw std::invalid_argument("report: model checkpoint carries no plan; pass a state checkpoint instead");
    auto cfg = vitc::detail::config_from_json(ck.meta.at("model"));
    inputs = vitc::report_from_plan(cfg, vitc::plan_from_json(ck.meta.at("plan")));
  } else {
    std::string in = state_in.empty() ? (fs::path(rc.out_dir) / "state.ckpt").string() : state_in;
    auto ck = vitc::Checkpoint::load(in);
    auto weights = vitc::model_from_checkpoint<Real>(ck);
    auto state = vitc::state_from_checkpoint<Real>(ck, weights);
    inputs = vitc::report_from_state(weights.config, state.primal, state.gates.logits);
  }
  vitc::write_reports(inputs, rc.out_dir);
  std::cout << "wrote reports under " << rc.out_dir << "\n";
  return 0;
}

template <typename F32, typename F64>
int dispatch(int precision, F32&& f32, F64&& f64) {
  return precision == 64 ? f64() : f32();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budget-constrained vision transformer compression"};
  app.require_subcommand(1);

  Cli cli;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "JSON run configuration");
    sub->add_option("--seed", cli.seed, "override the run seed");
    sub->add_option("--budget", cli.budget, "override the budget fraction of dense FLOPs")
        ->check(CLI::Range(1e-9, 1.0));
    sub->add_option("--out", cli.out_dir, "override the output directory");
    sub->add_option("--precision", cli.precision, "override float precision (32 or 64)")
        ->check(CLI::IsMember({32, 64}));
  };

  auto* sc_defaults = app.add_subcommand("print-defaults", "dump the default configuration as JSON");
  auto* sc_dense = app.add_subcommand("train-dense", "train the dense baseline / teacher");
  add_common(sc_dense);
  auto* sc_compress = app.add_subcommand("compress", "run the budget-constrained compression phase");
  add_common(sc_compress);
  sc_compress->add_option("--model-in", cli.model_in, "dense checkpoint (default <out>/dense.ckpt)");
  auto* sc_extract = app.add_subcommand("extract", "integerize the soft state into a smaller model");
  add_common(sc_extract);
  sc_extract->add_option("--state-in", cli.state_in, "state checkpoint (default <out>/state.ckpt)");
  auto* sc_finetune = app.add_subcommand("finetune", "post-training of the extracted model");
  add_common(sc_finetune);
  sc_finetune->add_option("--model-in", cli.model_in, "compressed checkpoint (default <out>/compressed.ckpt)");
  sc_finetune->add_option("--teacher", cli.teacher_in, "teacher checkpoint (default <out>/dense.ckpt)");
  auto* sc_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(sc_eval);
  sc_eval->add_option("--model-in", cli.model_in, "checkpoint to evaluate")->required();
  sc_eval->add_option("--split", cli.split, "val or train")->check(CLI::IsMember({"val", "train"}));
  auto* sc_report = app.add_subcommand("report", "emit FLOPs/pruning/skip reports");
  add_common(sc_report);
  sc_report->add_option("--state-in", cli.state_in, "state checkpoint (default <out>/state.ckpt)");
  sc_report->add_option("--model-in", cli.model_in, "compressed checkpoint with an embedded plan");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sc_defaults->parsed()) {
      std::cout << vitc::RunConfig::defaults().to_json().dump(2) << "\n";
      return 0;
    }
    vitc::RunConfig rc = load_config(cli);
    int p = rc.precision;
    if (sc_dense->parsed())
      return dispatch(p, [&] { return cmd_train_dense<float>(rc); }, [&] { return cmd_train_dense<double>(rc); });
    if (sc_compress->parsed())
      return dispatch(p, [&] { return cmd_compress<float>(rc, cli.model_in); },
                      [&] { return cmd_compress<double>(rc, cli.model_in); });
    if (sc_extract->parsed())
      return dispatch(p, [&] { return cmd_extract<float>(rc, cli.state_in); },
                      [&] { return cmd_extract<double>(rc, cli.state_in); });
    if (sc_finetune->parsed())
      return dispatch(p, [&] { return cmd_finetune<float>(rc, cli.model_in, cli.teacher_in); },
                      [&] { return cmd_finetune<double>(rc, cli.model_in, cli.teacher_in); });
    if (sc_eval->parsed())
      return dispatch(p, [&] { return cmd_eval<float>(rc, cli.model_in, cli.split); },
                      [&] { return cmd_eval<double>(rc, cli.model_in, cli.split); });
    if (sc_report->parsed())
      return dispatch(p, [&] { return cmd_report<float>(rc, cli.state_in, cli.model_in); },
                      [&] { return cmd_report<double>(rc, cli.state_in, cli.model_in); });
  } catch (const vitc::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
