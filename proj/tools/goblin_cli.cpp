// goblin: kHopSign generation, training, zero-shot inference, range
// reports and the benchmark suite.
#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "goblin/experiment.hpp"
#include "goblin/task_io.hpp"

namespace fs = std::filesystem;
using namespace goblin;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumerical = 3;

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

void write_run_config(const CLI::App& app, const fs::path& dir) {
  auto out = open_out(dir / "run_config.txt");
  out << app.config_to_str(true, false);
}

void add_khopsign_flags(CLI::App* cmd, KHopSignSpec& spec) {
  cmd->add_option("--k", spec.k, "Target hop distance")->capture_default_str();
  cmd->add_option("--n", spec.n, "Number of nodes of the random geometric graph")->capture_default_str();
  cmd->add_option("--radius", spec.radius, "Connection radius of the random geometric graph")->capture_default_str();
  cmd->add_option("--sigma-noise", spec.sigma_noise, "Gaussian softening of the hop shell (0 = hard case)")
      ->capture_default_str();
  cmd->add_option("--seed", spec.seed, "Root seed")->capture_default_str();
}

void add_search_flags(CLI::App* cmd, SearchConfig& s) {
  cmd->add_option("--budget", s.budget, "UCB evaluations after the anchors")->capture_default_str();
  cmd->add_option("--beta", s.beta, "UCB exploration weight")->capture_default_str();
  cmd->add_option("--basis-size", s.basis_size, "Operators kept by the greedy selector")->capture_default_str();
  cmd->add_option("--diversity", s.diversity_penalty, "Greedy selector cosine penalty")->capture_default_str();
  cmd->add_option("--mu-scale", s.mu_scale, "mu range as a multiple of the mean hop distance")->capture_default_str();
  cmd->add_option("--sqrt-tau-scale", s.sqrt_tau_scale, "sqrt(tau) range as a multiple of the mean hop distance")
      ->capture_default_str();
  cmd->add_option("--gauss-sigma", s.sigma, "LinGauss width")->capture_default_str();
}

void add_moe_flags(CLI::App* cmd, MoeConfig& m, std::string& selection, std::string& mode) {
  cmd->add_option("--selection", selection, "standard, pre_filter_half, pre_filter_all, mask_by_deepset_half, "
                                            "mask_by_deepset_all")
      ->capture_default_str();
  cmd->add_option("--mode", mode, "pool or stochastic")->capture_default_str();
  cmd->add_option("--batches", m.batches, "Training batches")->capture_default_str();
  cmd->add_option("--lr", m.learning_rate, "Adam learning rate")->capture_default_str();
  cmd->add_option("--temperature", m.temperature, "Softmax temperature")->capture_default_str();
  cmd->add_option("--hidden", m.hidden, "DeepSet hidden width")->capture_default_str();
  cmd->add_option("--dropout", m.dropout, "Dropout after each phi layer")->capture_default_str();
  cmd->add_option("--pool-per-family", m.pool_per_family, "Pool grid points per family")->capture_default_str();
  cmd->add_option("--draw-size", m.draw_size, "Experts per pool draw")->capture_default_str();
  cmd->add_option("--score-feature", m.score_feature, "Append the expert score to the features")
      ->capture_default_str();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph operator basis search and mixture-of-experts inference"};
  app.set_config("--config", "", "key=value config file (subcommand keys as <command>.<flag>)");
  app.require_subcommand(1);

  // gen-task
  KHopSignSpec gen_spec;
  fs::path gen_out;
  bool gen_khopsign = true;
  auto* gen = app.add_subcommand("gen-task", "Generate a kHopSign task as edge list and CSV files");
  gen->add_flag("--khopsign", gen_khopsign, "kHopSign task (the only generator)");
  add_khopsign_flags(gen, gen_spec);
  gen->add_option("--out", gen_out, "Output directory")->required();

  // train
  std::string train_method = "goblin";
  std::string train_basis = "standard5";
  fs::path train_task_dir;
  fs::path train_out;
  KHopSignSpec train_spec;
  MoeConfig train_moe;
  std::string train_selection{selection_name(train_moe.selection)};
  std::string train_mode{train_mode_name(train_moe.mode)};
  SearchConfig train_search;
  GraphAnyConfig train_ga;
  auto* train = app.add_subcommand("train", "Train the DeepSet mixture or a GraphAny baseline");
  train->add_option("--method", train_method, "goblin or graphany")->capture_default_str();
  train->add_option("--basis", train_basis, "GraphAny basis tag")->capture_default_str();
  train->add_option("--task", train_task_dir, "Task directory (default: generate kHopSign)");
  add_khopsign_flags(train, train_spec);
  add_moe_flags(train, train_moe, train_selection, train_mode);
  add_search_flags(train, train_search);
  train->add_option("--steps", train_ga.steps, "GraphAny training steps")->capture_default_str();
  train->add_option("--ga-lr", train_ga.learning_rate, "GraphAny learning rate")->capture_default_str();
  train->add_option("--ga-temperature", train_ga.temperature, "GraphAny softmax temperature")->capture_default_str();
  train->add_option("--out", train_out, "Output directory (model.ckpt, loss.csv)")->required();

  // infer
  fs::path infer_ckpt;
  fs::path infer_task_dir;
  fs::path infer_out;
  SearchConfig infer_search;
  auto* infer = app.add_subcommand("infer", "Zero-shot inference on a task directory");
  infer->add_option("--checkpoint", infer_ckpt, "Model checkpoint")->required()->check(CLI::ExistingFile);
  infer->add_option("--task", infer_task_dir, "Task directory")->required()->check(CLI::ExistingDirectory);
  add_search_flags(infer, infer_search);
  infer->add_option("--out", infer_out, "Output directory")->required();

  // range
  fs::path range_task_dir;
  fs::path range_out;
  std::string range_basis;
  fs::path range_ckpt;
  std::string range_operator;
  bool range_blackbox = false;
  std::uint64_t range_seed = 0;
  SearchConfig range_search;
  auto* range = app.add_subcommand("range", "Operator and model range report");
  range->add_option("--task", range_task_dir, "Task directory")->required()->check(CLI::ExistingDirectory);
  auto* o_basis = range->add_option("--basis", range_basis, "Fixed basis tag (uniform weights)");
  auto* o_ckpt = range->add_option("--checkpoint", range_ckpt, "Model checkpoint")->check(CLI::ExistingFile);
  auto* o_op = range->add_option("--operator", range_operator, "Single operator, e.g. lingauss:mu=3,sigma=0.5");
  o_basis->excludes(o_ckpt)->excludes(o_op);
  o_ckpt->excludes(o_op);
  range->add_flag("--blackbox", range_blackbox, "Add the black-box range of the best operator (N <= 512)");
  range->add_option("--seed", range_seed, "Seed for black-box node sampling")->capture_default_str();
  add_search_flags(range, range_search);
  range->add_option("--out", range_out, "Output directory")->required();

  // suite
  SuiteConfig suite_cfg;
  std::string suite_ks = "1,2,3,4,5,6,7,8";
  std::string suite_seeds = "0,1,2";
  std::string suite_methods = "goblin,graphany-standard5,graphany-precisehop4";
  std::string suite_selection{selection_name(suite_cfg.moe.selection)};
  std::string suite_mode{train_mode_name(suite_cfg.moe.mode)};
  bool suite_no_range = false;
  fs::path suite_out;
  auto* suite = app.add_subcommand("suite", "kHopSign accuracy and range grid over k, methods and seeds");
  suite->add_option("--n", suite_cfg.n, "Nodes per graph")->capture_default_str();
  suite->add_option("--radius", suite_cfg.radius, "RGG radius")->capture_default_str();
  suite->add_option("--ks", suite_ks, "Comma-separated k values")->capture_default_str();
  suite->add_option("--seeds", suite_seeds, "Comma-separated root seeds")->capture_default_str();
  suite->add_option("--methods", suite_methods, "goblin and/or graphany-<basis>")->capture_default_str();
  suite->add_option("--train-k", suite_cfg.train_k, "k of the training task")->capture_default_str();
  suite->add_option("--sigma-noise", suite_cfg.sigma_noise, "kHopSign softening")->capture_default_str();
  suite->add_option("--threads", suite_cfg.threads, "Worker threads over (method, seed) cells")->capture_default_str();
  suite->add_flag("--no-range", suite_no_range, "Skip range metrics");
  add_moe_flags(suite, suite_cfg.moe, suite_selection, suite_mode);
  add_search_flags(suite, suite_cfg.search);
  suite->add_option("--out", suite_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }

  try {
    const auto cache = cache_dir_from_env();
    if (gen->parsed()) {
      const auto task = make_khopsign(gen_spec, cache);
      write_task(gen_out, task.instance());
      auto meta = open_out(gen_out / "task_meta.txt");
      meta << "k=" << task.k << "\nsigma_noise=" << task.sigma_noise << "\nseed=" << task.seed
           << "\nempty_shell_nodes=" << task.empty_shell_count << "\ntask_range=" << task_range_estimate(task)
           << '\n';
      write_run_config(app, gen_out);
    } else if (train->parsed()) {
      train_moe.selection = parse_selection(train_selection);
      train_moe.mode = parse_train_mode(train_mode);
      train_moe.basis_size = train_search.basis_size;
      train_moe.diversity_penalty = train_search.diversity_penalty;
      train_moe.seed = train_spec.seed;
      train_ga.seed = train_spec.seed;
      std::optional<TaskInstance> task;
      std::optional<KHopSignTask> synth;
      if (train_task_dir.empty()) {
        synth = make_khopsign(train_spec, cache);
        task = synth->instance();
      } else {
        task = read_task(train_task_dir, train_spec.seed);
      }
      const auto distances =
          synth ? *synth->distances : search_distances(task->graph(), train_search, cache);
      TrainResult r = train_method == "goblin" ? train_goblin(*task, distances, train_moe, train_search)
                      : train_method == "graphany"
                          ? train_baseline(*task, distances, parse_basis_tag(train_basis), train_ga)
                          : throw DataError("unknown method '" + train_method + "'");
      save_model(train_out / "model.ckpt", r.model);
      auto loss = open_out(train_out / "loss.csv");
      write_loss_csv(loss, r.loss_trace);
      write_run_config(app, train_out);
    } else if (infer->parsed()) {
      const auto start = std::chrono::steady_clock::now();
      const Model model = load_model(infer_ckpt);
      const auto task = read_task(infer_task_dir);
      const auto distances = search_distances(task.graph(), infer_search, cache);
      const auto pred = run_inference(model, task, distances, infer_search);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      auto p = open_out(infer_out / "predictions.csv");
      write_predictions_csv(p, pred);
      auto m = open_out(infer_out / "metrics.csv");
      const auto metrics = prediction_metrics(task, pred);
      write_metrics_csv(m, metrics);
      auto t = open_out(infer_out / "timing.csv");
      t << "wall_clock_seconds\n" << secs << '\n';
      if (pred.search) {
        auto tr = open_out(infer_out / "search_trace.csv");
        write_trace_csv(tr, *pred.search);
      }
      write_run_config(app, infer_out);
      for (const auto& x : metrics) std::cout << x.name << ' ' << x.value << '\n';
    } else if (range->parsed()) {
      const auto task = read_task(range_task_dir);
      const auto& g = task.graph();
      const auto distances = search_distances(g, range_search, cache);
      std::vector<LinearExpert> experts;
      Mat alpha;
      if (!range_ckpt.empty()) {
        auto pred = run_inference(load_model(range_ckpt), task, distances, range_search);
        experts = std::move(pred.experts);
        alpha = std::move(pred.alpha);
      } else {
        std::vector<OperatorSpec> specs;
        if (!range_operator.empty()) {
          specs.push_back(OperatorSpec::parse(range_operator));
        } else {
          specs = fixed_basis_specs(parse_basis_tag(range_basis.empty() ? "standard5" : range_basis), distances);
        }
        for (const auto& s : specs) {
          Mat sx = apply_operator(g, distances, s, task.features());
          auto e = solve_expert(task, s, std::move(sx), FitSet::Fit);
          e.score = trimmed_score(e.logits, task.labels(), task.eval_nodes(), range_search.trim_frac,
                                  task.num_classes())
                        .score;
          experts.push_back(refit(e, task, FitSet::Labeled));
        }
        alpha = Mat::Constant(static_cast<Eigen::Index>(task.num_nodes()), static_cast<Eigen::Index>(experts.size()),
                              1.0 / static_cast<double>(experts.size()));
      }
      auto report = model_range(g, distances, experts, alpha);
      if (range_blackbox) {
        if (task.num_nodes() > 512) throw DataError("black-box range needs N <= 512, task has " +
                                                    std::to_string(task.num_nodes()));
        const auto& best = experts[report.best.value_or(0)];
        const auto op = build_operator(g, distances, best.spec);
        const auto nodes = range_sample_nodes(task.num_nodes(), 500, range_seed);
        report.blackbox = blackbox_range(task, op, distances, nodes);
      }
      auto out = open_out(range_out / "range.csv");
      write_range_csv(out, report);
      write_run_config(app, range_out);
    } else if (suite->parsed()) {
      suite_cfg.ks.clear();
      for (const auto& s : split_list(suite_ks)) suite_cfg.ks.push_back(static_cast<unsigned>(std::stoul(s)));
      suite_cfg.seeds.clear();
      for (const auto& s : split_list(suite_seeds)) suite_cfg.seeds.push_back(std::stoull(s));
      suite_cfg.methods = split_list(suite_methods);
      suite_cfg.moe.selection = parse_selection(suite_selection);
      suite_cfg.moe.mode = parse_train_mode(suite_mode);
      suite_cfg.moe.basis_size = suite_cfg.search.basis_size;
      suite_cfg.moe.diversity_penalty = suite_cfg.search.diversity_penalty;
      suite_cfg.with_range = !suite_no_range;
      const auto result = run_suite(suite_cfg, cache);
      auto m = open_out(suite_out / "metrics.csv");
      write_suite_csv(m, result);
      auto s = open_out(suite_out / "summary.csv");
      write_suite_summary_csv(s, result);
      auto t = open_out(suite_out / "timing.csv");
      write_suite_timing_csv(t, result);
      write_run_config(app, suite_out);
    }
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
