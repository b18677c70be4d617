#include "goblin/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "goblin/nn.hpp"
#include "goblin/rng.hpp"

namespace goblin {

namespace {

constexpr std::size_t kFullTableLimit = 5000;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::filesystem::path cache_dir_from_env() {
  const char* dir = std::getenv("GOBLIN_CACHE_DIR");
  return dir ? std::filesystem::path(dir) : std::filesystem::path{};
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view name) {
  Rng rng = make_stream(root, name);
  return rng();
}

KHopSignTask make_khopsign(const KHopSignSpec& spec, const std::filesystem::path& cache_dir) {
  auto graph = std::make_shared<const Graph>(
      random_geometric_graph(spec.n, spec.radius, derive_seed(spec.seed, "graph")));
  auto distances = std::make_shared<const DistanceTable>(apsd_cached(*graph, std::nullopt, cache_dir));
  return generate_khopsign(std::move(graph), std::move(distances), spec.k, spec.sigma_noise, spec.seed);
}

DistanceTable search_distances(const Graph& g, const SearchConfig& search, const std::filesystem::path& cache_dir) {
  if (g.num_nodes() <= kFullTableLimit) return apsd_cached(g, std::nullopt, cache_dir);
  const double mean = sampled_mean_distance(g, 64);
  const auto bounds = search_bounds(mean, search.mu_scale, search.sqrt_tau_scale);
  const auto radius = static_cast<unsigned>(std::ceil(bounds.mu_max + 3.0 * search.sigma));
  return apsd_cached(g, std::max(1u, radius), cache_dir);
}

// ---------------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const Model& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::visit([&](const auto& m) { m.save(out); }, model);
  if (!out) throw DataError("failed writing " + path.string());
}

Model load_model(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::istringstream probe(text);
  std::string tag, version, key, kind;
  probe >> tag >> version >> key >> kind;
  std::istringstream in(text);
  if (key != "kind") throw DataError(path.string() + " is not a checkpoint");
  if (kind == "moe") return MoeModel::load(in);
  if (kind == "graphany") return GraphAnyModel::load(in);
  throw DataError("unknown checkpoint kind '" + kind + "'");
}

TrainResult train_goblin(const TaskInstance& task, const DistanceTable& distances, const MoeConfig& moe,
                         const SearchConfig& search) {
  std::vector<LinearExpert> pool;
  if (moe.mode == TrainMode::Pool) {
    pool = build_training_pool(task, distances, search, moe.pool_per_family);
  } else {
    pool = std::move(run_search(task, distances, search).state.experts);
  }
  TrainResult r{MoeModel{}, {}};
  r.model = train_moe(task, pool, moe, &r.loss_trace);
  return r;
}

TrainResult train_baseline(const TaskInstance& task, const DistanceTable& distances, BasisTag tag,
                           const GraphAnyConfig& config) {
  TrainResult r{GraphAnyModel{}, {}};
  r.model = train_graphany(task, distances, tag, config, &r.loss_trace);
  return r;
}

void write_loss_csv(std::ostream& out, const std::vector<double>& losses) {
  out << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << nn::format_exact(losses[i]) << '\n';
}

// ---------------------------------------------------------------------------

Prediction run_inference(const Model& model, const TaskInstance& task, const DistanceTable& distances,
                         const SearchConfig& search) {
  Prediction p;
  if (const auto* moe = std::get_if<MoeModel>(&model)) {
    auto r = goblin_infer(*moe, task, distances, search);
    p.logits = std::move(r.logits);
    p.alpha = std::move(r.alpha);
    p.experts = std::move(r.featured);
    p.solves = r.state.solves + p.experts.size();
    p.search = std::move(r.state);
  } else {
    const auto& ga = std::get<GraphAnyModel>(model);
    auto r = infer_graphany(ga, task, distances, ga.tag());
    p.logits = std::move(r.logits);
    p.alpha = std::move(r.alpha);
    p.experts = std::move(r.experts);
    p.solves = p.experts.size();
  }
  return p;
}

std::vector<Metric> prediction_metrics(const TaskInstance& task, const Prediction& p) {
  std::vector<NodeId> nodes(task.test_nodes().begin(), task.test_nodes().end());
  if (nodes.empty()) {
    for (NodeId u : task.unlabeled_nodes()) {
      if (task.labels()[u] >= 0) nodes.push_back(u);
    }
  }
  const auto pred = predict_classes(p.logits);
  std::vector<Metric> out;
  out.push_back({"accuracy", nodes.empty() ? std::nan("") : accuracy(pred, task.labels(), nodes)});
  for (int c = 0; c < task.num_classes(); ++c) {
    std::vector<NodeId> cls;
    for (NodeId u : nodes) {
      if (task.labels()[u] == c) cls.push_back(u);
    }
    out.push_back({"accuracy_class_" + std::to_string(c), cls.empty() ? std::nan("") : accuracy(pred, task.labels(), cls)});
  }
  out.push_back({"solves", static_cast<double>(p.solves)});
  return out;
}

void write_predictions_csv(std::ostream& out, const Prediction& p) {
  out << "node_id,prediction";
  for (Eigen::Index c = 0; c < p.logits.cols(); ++c) out << ",logit_" << c;
  out << '\n';
  const auto pred = predict_classes(p.logits);
  for (Eigen::Index u = 0; u < p.logits.rows(); ++u) {
    out << u << ',' << pred[static_cast<std::size_t>(u)];
    for (Eigen::Index c = 0; c < p.logits.cols(); ++c) out << ',' << nn::format_exact(p.logits(u, c));
    out << '\n';
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<Metric>& metrics) {
  out << "metric,value\n";
  for (const auto& m : metrics) out << m.name << ',' << nn::format_exact(m.value) << '\n';
}

// ---------------------------------------------------------------------------

namespace {

struct Cell {
  std::string method;
  std::uint64_t seed;
};

std::vector<SuiteRow> run_cell(const SuiteConfig& config, const Cell& cell, const std::filesystem::path& cache_dir) {
  std::vector<SuiteRow> rows;
  const KHopSignSpec train_spec{config.n, config.radius, config.train_k, config.sigma_noise,
                                derive_seed(cell.seed, "suite/train-task")};
  const auto train_task = make_khopsign(train_spec, cache_dir);
  const auto train_instance = train_task.instance();

  Model model = MoeModel{};
  if (cell.method == "goblin") {
    MoeConfig moe = config.moe;
    moe.seed = derive_seed(cell.seed, "suite/moe");
    model = train_goblin(train_instance, *train_task.distances, moe, config.search).model;
  } else if (cell.method.rfind("graphany-", 0) == 0) {
    GraphAnyConfig ga = config.graphany;
    ga.seed = derive_seed(cell.seed, "suite/graphany");
    model = train_baseline(train_instance, *train_task.distances, parse_basis_tag(cell.method.substr(9)), ga).model;
  } else {
    throw DataError("unknown suite method '" + cell.method + "'");
  }

  for (unsigned k : config.ks) {
    const KHopSignSpec spec{config.n, config.radius, k, config.sigma_noise,
                            derive_seed(cell.seed, "suite/target-k" + std::to_string(k))};
    const auto target = make_khopsign(spec, cache_dir);
    const auto instance = target.instance();
    const auto pred = run_inference(model, instance, *target.distances, config.search);
    auto add = [&](std::string metric, double value) { rows.push_back({cell.method, k, cell.seed, std::move(metric), value}); };
    for (const auto& m : prediction_metrics(instance, pred)) add(m.name, m.value);
    add("task_range", task_range_estimate(target));
    if (config.with_range) {
      const auto report = model_range(*target.graph, *target.distances, pred.experts, pred.alpha);
      add("aggregate_range", report.aggregate);
      if (report.best) add("best_operator_range", report.operators[*report.best].graph_range);
    }
  }
  return rows;
}

}  // namespace

SuiteResult run_suite(const SuiteConfig& config, const std::filesystem::path& cache_dir) {
  std::vector<Cell> cells;
  for (const auto& m : config.methods) {
    for (auto s : config.seeds) cells.push_back({m, s});
  }
  std::vector<std::vector<SuiteRow>> out(cells.size());
  std::vector<double> seconds(cells.size(), 0.0);
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      const auto start = std::chrono::steady_clock::now();
      try {
        out[i] = run_cell(config, cells[i], cache_dir);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(cells.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  SuiteResult result;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    result.rows.insert(result.rows.end(), out[i].begin(), out[i].end());
    result.timings.push_back({cells[i].method, cells[i].seed, seconds[i]});
  }
  std::stable_sort(result.rows.begin(), result.rows.end(), [](const SuiteRow& a, const SuiteRow& b) {
    return std::tie(a.method, a.k, a.seed, a.metric) < std::tie(b.method, b.k, b.seed, b.metric);
  });
  return result;
}

void write_suite_csv(std::ostream& out, const SuiteResult& result) {
  out << "method,k,seed,metric,value\n";
  for (const auto& r : result.rows) {
    out << r.method << ',' << r.k << ',' << r.seed << ',' << r.metric << ',' << nn::format_exact(r.value) << '\n';
  }
}

void write_suite_summary_csv(std::ostream& out, const SuiteResult& result) {
  std::map<std::tuple<std::string, unsigned, std::string>, std::vector<double>> groups;
  for (const auto& r : result.rows) groups[{r.method, r.k, r.metric}].push_back(r.value);
  out << "method,k,metric,mean,std,count\n";
  for (const auto& [key, values] : groups) {
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    out << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ',' << nn::format_exact(mean)
        << ',' << nn::format_exact(std::sqrt(var)) << ',' << values.size() << '\n';
  }
}

void write_suite_timing_csv(std::ostream& out, const SuiteResult& result) {
  out << "method,seed,wall_clock_seconds\n";
  for (const auto& t : result.timings) out << t.method << ',' << t.seed << ',' << t.seconds << '\n';
}

double suite_value(const SuiteResult& result, std::string_view method, unsigned k, std::uint64_t seed,
                   std::string_view metric) {
  for (const auto& r : result.rows) {
    if (r.method == method && r.k == k && r.seed == seed && r.metric == metric) return r.value;
  }
  return std::nan("");
}

}  // namespace goblin
