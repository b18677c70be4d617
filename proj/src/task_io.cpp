#include "goblin/task_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string>

#include "goblin/nn.hpp"

namespace goblin {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  return out;
}

bool skip_line(const std::string& line, bool& header_seen) {
  if (line.empty() || line[0] == '#' || line.find_first_not_of(" \t\r") == std::string::npos) return true;
  if (!header_seen) {
    header_seen = true;
    if (line.rfind("node_id", 0) == 0) return true;
  }
  return false;
}

NodeId parse_node(const std::string& s, std::size_t num_nodes, const char* file) {
  unsigned long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw DataError(std::string(file) + ": bad node id '" + s + "'");
  }
  if (v >= num_nodes) throw DataError(std::string(file) + ": node id " + s + " out of range");
  return static_cast<NodeId>(v);
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw DataError("cannot write " + p.string());
  return out;
}

}  // namespace

TaskFiles TaskFiles::in(const std::filesystem::path& dir) {
  return {dir / "edges.txt", dir / "features.csv", dir / "labels.csv", dir / "splits.csv"};
}

Mat read_features_csv(std::istream& in, std::size_t num_nodes) {
  std::string line;
  bool header = false;
  Mat f;
  std::vector<bool> seen(num_nodes, false);
  while (std::getline(in, line)) {
    if (skip_line(line, header)) continue;
    const auto cells = split_csv(line);
    if (cells.size() < 2) throw DataError("features.csv: row needs node_id and at least one value");
    if (f.size() == 0) f = Mat::Zero(static_cast<Eigen::Index>(num_nodes), static_cast<Eigen::Index>(cells.size() - 1));
    if (static_cast<Eigen::Index>(cells.size() - 1) != f.cols()) throw DataError("features.csv: ragged rows");
    const NodeId u = parse_node(cells[0], num_nodes, "features.csv");
    if (seen[u]) throw DataError("features.csv: duplicate node " + cells[0]);
    seen[u] = true;
    for (std::size_t c = 1; c < cells.size(); ++c) f(u, static_cast<Eigen::Index>(c - 1)) = nn::parse_exact(cells[c]);
  }
  if (f.size() == 0) throw DataError("features.csv: no rows");
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw DataError("features.csv: missing node rows");
  return f;
}

std::vector<int> read_labels_csv(std::istream& in, std::size_t num_nodes) {
  std::vector<int> labels(num_nodes, -1);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (skip_line(line, header)) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2) throw DataError("labels.csv: expected node_id,class");
    const NodeId u = parse_node(cells[0], num_nodes, "labels.csv");
    int c = 0;
    auto res = std::from_chars(cells[1].data(), cells[1].data() + cells[1].size(), c);
    if (res.ec != std::errc{} || c < 0) throw DataError("labels.csv: bad class '" + cells[1] + "'");
    labels[u] = c;
  }
  return labels;
}

std::vector<Role> read_splits_csv(std::istream& in, std::size_t num_nodes, const std::vector<int>& labels,
                                  std::uint64_t split_seed) {
  std::vector<Role> roles(num_nodes, Role::Unlabeled);
  std::vector<NodeId> train;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (skip_line(line, header)) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 2) throw DataError("splits.csv: expected node_id,role");
    const NodeId u = parse_node(cells[0], num_nodes, "splits.csv");
    if (cells[1] == "train") {
      train.push_back(u);
      roles[u] = Role::Fit;
    } else {
      roles[u] = parse_role(cells[1]);
    }
  }
  for (std::size_t u = 0; u < num_nodes; ++u) {
    if ((roles[u] == Role::Fit || roles[u] == Role::Eval) && labels[u] < 0) {
      throw DataError("splits.csv: node " + std::to_string(u) + " is labeled in the split but has no class");
    }
  }
  if (!train.empty()) assign_fit_eval(roles, train, split_seed);
  return roles;
}

void write_features_csv(std::ostream& out, const Mat& features) {
  out << "node_id";
  for (Eigen::Index c = 0; c < features.cols(); ++c) out << ",f" << c;
  out << '\n';
  for (Eigen::Index u = 0; u < features.rows(); ++u) {
    out << u;
    for (Eigen::Index c = 0; c < features.cols(); ++c) out << ',' << nn::format_exact(features(u, c));
    out << '\n';
  }
}

void write_labels_csv(std::ostream& out, const std::vector<int>& labels) {
  out << "node_id,class\n";
  for (std::size_t u = 0; u < labels.size(); ++u) {
    if (labels[u] >= 0) out << u << ',' << labels[u] << '\n';
  }
}

void write_splits_csv(std::ostream& out, const std::vector<Role>& roles) {
  out << "node_id,role\n";
  for (std::size_t u = 0; u < roles.size(); ++u) out << u << ',' << role_name(roles[u]) << '\n';
}

void write_task(const std::filesystem::path& dir, const TaskInstance& task) {
  std::filesystem::create_directories(dir);
  const auto files = TaskFiles::in(dir);
  {
    auto out = open_out(files.edges);
    write_edge_list(out, task.graph());
  }
  {
    auto out = open_out(files.features);
    write_features_csv(out, task.features());
  }
  {
    auto out = open_out(files.labels);
    write_labels_csv(out, task.labels());
  }
  {
    auto out = open_out(files.splits);
    write_splits_csv(out, task.roles());
  }
}

TaskInstance read_task(const std::filesystem::path& dir, std::uint64_t split_seed) {
  const auto files = TaskFiles::in(dir);
  auto graph = std::make_shared<const Graph>(read_edge_list(files.edges));
  const std::size_t n = graph->num_nodes();
  Mat features;
  {
    auto in = open_in(files.features);
    features = read_features_csv(in, n);
  }
  std::vector<int> labels;
  {
    auto in = open_in(files.labels);
    labels = read_labels_csv(in, n);
  }
  std::vector<Role> roles;
  if (std::filesystem::exists(files.splits)) {
    auto in = open_in(files.splits);
    roles = read_splits_csv(in, n, labels, split_seed);
  } else {
    roles.assign(n, Role::Unlabeled);
    std::vector<NodeId> labeled;
    for (std::size_t u = 0; u < n; ++u) {
      if (labels[u] >= 0) labeled.push_back(static_cast<NodeId>(u));
    }
    assign_fit_eval(roles, labeled, split_seed);
  }
  const int classes = labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  return TaskInstance(std::move(graph), std::move(features), std::move(labels), std::max(classes, 2), std::move(roles));
}

}  // namespace goblin
