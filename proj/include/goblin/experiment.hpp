#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "goblin/graphany.hpp"
#include "goblin/khopsign.hpp"
#include "goblin/moe.hpp"
#include "goblin/range.hpp"
#include "goblin/search.hpp"

namespace goblin {

// Directory named by GOBLIN_CACHE_DIR, or empty (no caching).
std::filesystem::path cache_dir_from_env();

// Seed for a named sub-stream of a root seed (graph, features, training...).
std::uint64_t derive_seed(std::uint64_t root, std::string_view name);

struct KHopSignSpec {
  std::size_t n = 1000;
  double radius = 0.1;
  unsigned k = 1;
  double sigma_noise = 0.0;
  std::uint64_t seed = 0;
};

// RGG(n, radius) from the "graph" stream of `seed`, a full distance table
// and the task built from the same seed.
KHopSignTask make_khopsign(const KHopSignSpec& spec, const std::filesystem::path& cache_dir = {});

// Distance table for running the search on `g`: full below 5000 nodes,
// otherwise truncated to cover every LinGauss window of the search range.
DistanceTable search_distances(const Graph& g, const SearchConfig& search, const std::filesystem::path& cache_dir = {});

// --- trained models -------------------------------------------------------

using Model = std::variant<MoeModel, GraphAnyModel>;

void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

struct TrainResult {
  Model model;
  std::vector<double> loss_trace;
};

TrainResult train_goblin(const TaskInstance& task, const DistanceTable& distances, const MoeConfig& moe,
                         const SearchConfig& search);
TrainResult train_baseline(const TaskInstance& task, const DistanceTable& distances, BasisTag tag,
                           const GraphAnyConfig& config);

void write_loss_csv(std::ostream& out, const std::vector<double>& losses);

// --- inference ------------------------------------------------------------

struct Prediction {
  Mat logits;
  Mat alpha;
  std::vector<LinearExpert> experts;  // refit on all labels, one per alpha column
  std::size_t solves = 0;
  std::optional<SearchState> search;
};

Prediction run_inference(const Model& model, const TaskInstance& task, const DistanceTable& distances,
                         const SearchConfig& search);

struct Metric {
  std::string name;
  double value = 0.0;
};

// accuracy and accuracy_class_<c> over the test nodes (all unlabeled nodes
// with a known class when the task has no test nodes), plus solve count.
std::vector<Metric> prediction_metrics(const TaskInstance& task, const Prediction& p);

void write_predictions_csv(std::ostream& out, const Prediction& p);
void write_metrics_csv(std::ostream& out, const std::vector<Metric>& metrics);

// --- suite ----------------------------------------------------------------

struct SuiteConfig {
  std::size_t n = 1000;
  double radius = 0.1;
  std::vector<unsigned> ks{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> methods{"goblin", "graphany-standard5", "graphany-precisehop4"};
  unsigned train_k = 1;
  double sigma_noise = 0.0;
  bool with_range = true;
  int threads = 1;
  MoeConfig moe;
  SearchConfig search;
  GraphAnyConfig graphany;
};

struct SuiteRow {
  std::string method;
  unsigned k = 0;
  std::uint64_t seed = 0;
  std::string metric;
  double value = 0.0;
};

struct SuiteTiming {
  std::string method;
  std::uint64_t seed = 0;
  double seconds = 0.0;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;  // sorted by (method, k, seed, metric)
  std::vector<SuiteTiming> timings;
};

// Methods: "goblin" or "graphany-<basis tag>". Per (method, seed) one model
// is trained on kHopSign(train_k) and applied zero-shot to a fresh
// kHopSign(k) instance for each k.
SuiteResult run_suite(const SuiteConfig& config, const std::filesystem::path& cache_dir = {});

// method,k,seed,metric,value
void write_suite_csv(std::ostream& out, const SuiteResult& result);
// method,k,metric,mean,std,count (population std over seeds)
void write_suite_summary_csv(std::ostream& out, const SuiteResult& result);
void write_suite_timing_csv(std::ostream& out, const SuiteResult& result);

double suite_value(const SuiteResult& result, std::string_view method, unsigned k, std::uint64_t seed,
                   std::string_view metric);

}  // namespace goblin
