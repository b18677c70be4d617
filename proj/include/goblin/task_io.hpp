#pragma once

#include <filesystem>
#include <iosfwd>

#include "goblin/expert.hpp"
#include "goblin/khopsign.hpp"

namespace goblin {

// A task directory holds:
//   edges.txt     "u v" per line ("# nodes N" header)
//   features.csv  node_id,f0,f1,...
//   labels.csv    node_id,class   (nodes without a label are omitted)
//   splits.csv    node_id,role    (fit, eval, unlabeled, test; "train" = labeled, split 50/50)
struct TaskFiles {
  std::filesystem::path edges, features, labels, splits;
  static TaskFiles in(const std::filesystem::path& dir);
};

void write_task(const std::filesystem::path& dir, const TaskInstance& task);

// Missing splits.csv: every labeled node is split 50/50 into Fit/Eval with
// `split_seed`, unlabeled nodes become Unlabeled.
TaskInstance read_task(const std::filesystem::path& dir, std::uint64_t split_seed = 0);

Mat read_features_csv(std::istream& in, std::size_t num_nodes);
std::vector<int> read_labels_csv(std::istream& in, std::size_t num_nodes);
std::vector<Role> read_splits_csv(std::istream& in, std::size_t num_nodes, const std::vector<int>& labels,
                                  std::uint64_t split_seed);

void write_features_csv(std::ostream& out, const Mat& features);
void write_labels_csv(std::ostream& out, const std::vector<int>& labels);
void write_splits_csv(std::ostream& out, const std::vector<Role>& roles);

}  // namespace goblin
