#include "a2kt/datamodel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <string_view>

#include "a2kt/error.hpp"

namespace a2kt {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

[[noreturn]] void parse_fail(std::size_t line_no, const std::string& what) {
  throw ParseError("line " + std::to_string(line_no) + ": " + what);
}

template <typename T>
T parse_number(std::string_view tok, std::size_t line_no, const char* what) {
  T value{};
  const auto* first = tok.data();
  const auto* last = tok.data() + tok.size();
  if (!tok.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    parse_fail(line_no, std::string("invalid ") + what + " '" + std::string(tok) + "'");
  }
  return value;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

LabeledSet parse_feature_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;

  // Header, skipping blank lines.
  std::vector<std::string_view> toks;
  while (std::getline(in, line)) {
    ++line_no;
    toks = split_ws(line);
    if (!toks.empty()) break;
  }
  if (toks.size() != 3) parse_fail(line_no, "header must be 'n d C'");
  const auto n = parse_number<long long>(toks[0], line_no, "sample count");
  const auto d = parse_number<long long>(toks[1], line_no, "dimension");
  const auto c = parse_number<long long>(toks[2], line_no, "class count");
  if (n < 0 || d < 1 || c < 1) parse_fail(line_no, "header values out of range");

  LabeledSet set;
  set.class_count = static_cast<int>(c);
  set.features = Matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(d));
  std::vector<int> labels(static_cast<std::size_t>(n));
  std::size_t unlabeled = 0;

  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    if (!std::getline(in, line)) {
      parse_fail(line_no + 1, "expected " + std::to_string(n) + " rows, file ends after " +
                                  std::to_string(i));
    }
    ++line_no;
    std::string_view sv(line);
    auto row = split_ws(sv);
    if (row.size() != static_cast<std::size_t>(d) + 1) {
      parse_fail(line_no, "expected " + std::to_string(d) + " values and a label, found " +
                              std::to_string(row.size()) + " fields");
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(d); ++j) {
      const double v = parse_number<double>(row[j], line_no, "value");
      if (!std::isfinite(v)) parse_fail(line_no, "non-finite value");
      set.features(i, j) = v;
    }
    const int label = parse_number<int>(row.back(), line_no, "label");
    if (label < -1 || label >= set.class_count) {
      parse_fail(line_no, "label " + std::to_string(label) + " outside [-1, " + std::to_string(c) + ")");
    }
    if (label == -1) ++unlabeled;
    labels[i] = label;
  }
  while (std::getline(in, line)) {
    ++line_no;
    if (!split_ws(line).empty()) parse_fail(line_no, "unexpected data after declared rows");
  }

  if (unlabeled == labels.size()) return set;
  if (unlabeled != 0) {
    throw ParseError("mixed labeled and unlabeled rows are not supported");
  }
  set.labels = std::move(labels);
  return set;
}

LabeledSet load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open feature file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_feature_text(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_feature_text(const LabeledSet& set) {
  if (set.labels && set.labels->size() != set.size()) {
    throw ShapeError("label count does not match sample count");
  }
  std::string out;
  out.reserve(set.features.size() * 20 + 64);
  out += std::to_string(set.size()) + " " + std::to_string(set.dim()) + " " +
         std::to_string(set.class_count) + "\n";
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (double v : set.features.row(i)) {
      out += format_double(v);
      out += ' ';
    }
    out += std::to_string(set.labels ? (*set.labels)[i] : -1);
    out += '\n';
  }
  return out;
}

void write_feature_file(const std::filesystem::path& path, const LabeledSet& set) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write feature file " + path.string());
  out << format_feature_text(set);
  if (!out) throw Error("write failed for " + path.string());
}

PdaTask make_task(LabeledSet source, LabeledSet target) {
  if (!source.labels) throw ContractError("source set must be labeled");
  PdaTask task;
  task.training.source_features = std::move(source.features);
  task.training.source_labels = std::move(*source.labels);
  task.training.target_features = std::move(target.features);
  task.training.class_count = source.class_count;
  task.label_space.class_count = source.class_count;
  if (target.labels) task.evaluation.target_labels = std::move(target.labels);
  return task;
}

std::vector<std::string> validate_task(const PdaTask& task) {
  std::vector<std::string> issues;
  const TrainingData& tr = task.training;
  const int c = tr.class_count;
  if (c < 2) issues.push_back("class count " + std::to_string(c) + " is below 2");
  if (tr.source_features.cols() != tr.target_features.cols()) {
    issues.push_back("feature dimension mismatch: source " + std::to_string(tr.source_features.cols()) +
                     " vs target " + std::to_string(tr.target_features.cols()));
  }
  if (tr.source_labels.size() != tr.source_features.rows()) {
    issues.push_back("source label count " + std::to_string(tr.source_labels.size()) +
                     " differs from sample count " + std::to_string(tr.source_features.rows()));
  }
  if (tr.target_features.rows() == 0) issues.push_back("target set is empty");
  if (!all_finite(tr.source_features) || !all_finite(tr.target_features)) {
    issues.push_back("non-finite feature value");
  }
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(c, 0)), 0);
  for (int y : tr.source_labels) {
    if (y < 0 || y >= c) {
      issues.push_back("source label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
    } else {
      ++counts[static_cast<std::size_t>(y)];
    }
  }
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] == 0) issues.push_back("empty source class " + std::to_string(k));
  }
  if (const auto& tl = task.evaluation.target_labels) {
    if (tl->size() != tr.target_features.rows()) {
      issues.push_back("target evaluation label count differs from target sample count");
    }
    for (int y : *tl) {
      if (y < 0 || y >= c) {
        issues.push_back("target evaluation label " + std::to_string(y) + " outside [0, " +
                         std::to_string(c) + ")");
        break;
      }
    }
  }
  if (const auto& shared = task.evaluation.true_shared_classes) {
    for (int k : *shared) {
      if (k < 0 || k >= c) issues.push_back("shared class " + std::to_string(k) + " out of range");
    }
  }
  return issues;
}

}  // namespace a2kt
