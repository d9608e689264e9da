// SPDX-License-Identifier: Apache-2.0
/**
 * @file   metrics.hpp
 * @brief  Top-1 accuracy overall and per Many/Medium/Few group, intra-class
 *         distance (ICD), and the serialised metrics report.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltr/lt_data.hpp"
#include "ltr/tensor.hpp"

namespace ltr {

inline std::vector<int> argmax_rows(const Matrix &logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best))
        best = j;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

inline double top1_accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty())
    throw std::invalid_argument("accuracy of an empty prediction set");
  if (predictions.size() != labels.size())
    throw std::invalid_argument("predictions and labels differ in length");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    hits += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

/// Empty groups stay unset; they are never reported as zero.
struct GroupAccuracy {
  std::optional<double> many, medium, few;
};

inline GroupAccuracy grouped_accuracy(std::span<const int> predictions,
                                      std::span<const int> labels, const ShotGroups &groups) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("predictions and labels differ in length");
  auto acc = [&](const std::vector<int> &members) -> std::optional<double> {
    std::size_t hits = 0, total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (std::find(members.begin(), members.end(), labels[i]) == members.end())
        continue;
      ++total;
      hits += predictions[i] == labels[i] ? 1 : 0;
    }
    if (total == 0)
      return std::nullopt;
    return static_cast<double>(hits) / static_cast<double>(total);
  };
  return {acc(groups.many), acc(groups.medium), acc(groups.few)};
}

struct IcdResult {
  std::vector<std::optional<double>> per_class;
  double average = 0.0;
};

/// Mean Euclidean distance of each class's features to the class mean; average over present classes.
inline IcdResult intra_class_distance(const Matrix &features, std::span<const int> labels,
                                      int num_classes) {
  if (features.rows() == 0)
    throw std::invalid_argument("intra-class distance of an empty feature set");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw std::invalid_argument("features and labels differ in length");
  const auto k = static_cast<std::size_t>(num_classes);
  Matrix centers = Matrix::Zero(num_classes, features.cols());
  std::vector<int> counts(k, 0);
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("label out of range in intra-class distance");
    centers.row(y) += features.row(i);
    ++counts[static_cast<std::size_t>(y)];
  }
  std::vector<double> sums(k, 0.0);
  for (std::size_t y = 0; y < k; ++y)
    if (counts[y] > 0)
      centers.row(static_cast<Eigen::Index>(y)) /= counts[y];
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    sums[static_cast<std::size_t>(y)] += (features.row(i) - centers.row(y)).norm();
  }
  IcdResult out;
  out.per_class.resize(k);
  int present = 0;
  for (std::size_t y = 0; y < k; ++y) {
    if (counts[y] == 0)
      continue;
    out.per_class[y] = sums[y] / counts[y];
    out.average += *out.per_class[y];
    ++present;
  }
  out.average /= present;
  return out;
}

struct MetricsReport {
  int epoch = 0;
  double overall_top1 = 0.0;
  GroupAccuracy group_top1;
  std::vector<std::optional<double>> per_class_top1;
  std::vector<std::optional<double>> per_class_icd;
  double avg_icd = 0.0;
  std::vector<int> train_counts;
  std::vector<int> eval_counts;
};

/// Builds the report from logits and post-pooling features of one evaluated split.
inline MetricsReport make_report(const Matrix &logits, const Matrix &features,
                                 std::span<const int> labels, const std::vector<int> &train_counts,
                                 int epoch) {
  const int classes = static_cast<int>(logits.cols());
  const std::vector<int> pred = argmax_rows(logits);
  MetricsReport r;
  r.epoch = epoch;
  r.overall_top1 = top1_accuracy(pred, labels);
  r.group_top1 = grouped_accuracy(pred, labels, group_classes(train_counts));
  r.train_counts = train_counts;
  r.eval_counts.assign(static_cast<std::size_t>(classes), 0);
  std::vector<int> hits(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++r.eval_counts[static_cast<std::size_t>(labels[i])];
    hits[static_cast<std::size_t>(labels[i])] += pred[i] == labels[i] ? 1 : 0;
  }
  for (int y = 0; y < classes; ++y) {
    const auto u = static_cast<std::size_t>(y);
    r.per_class_top1.push_back(r.eval_counts[u] > 0
                                   ? std::optional<double>(static_cast<double>(hits[u]) / r.eval_counts[u])
                                   : std::nullopt);
  }
  const IcdResult icd = intra_class_distance(features, labels, classes);
  r.per_class_icd = icd.per_class;
  r.avg_icd = icd.average;
  return r;
}

namespace detail {
inline nlohmann::json optional_list(const std::vector<std::optional<double>> &v) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto &x : v)
    j.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return j;
}
inline std::vector<std::optional<double>> optional_list(const nlohmann::json &j) {
  std::vector<std::optional<double>> v;
  for (const auto &x : j)
    v.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
  return v;
}
} // namespace detail

inline nlohmann::json to_json(const MetricsReport &r) {
  nlohmann::json groups = nlohmann::json::object();
  if (r.group_top1.many)
    groups["many"] = *r.group_top1.many;
  if (r.group_top1.medium)
    groups["medium"] = *r.group_top1.medium;
  if (r.group_top1.few)
    groups["few"] = *r.group_top1.few;
  return {{"epoch", r.epoch},
          {"overall_top1", r.overall_top1},
          {"group_top1", groups},
          {"per_class_top1", detail::optional_list(r.per_class_top1)},
          {"per_class_icd", detail::optional_list(r.per_class_icd)},
          {"avg_icd", r.avg_icd},
          {"train_counts", r.train_counts},
          {"eval_counts", r.eval_counts}};
}

inline MetricsReport report_from_json(const nlohmann::json &j) {
  MetricsReport r;
  r.epoch = j.at("epoch").get<int>();
  r.overall_top1 = j.at("overall_top1").get<double>();
  const auto &g = j.at("group_top1");
  if (g.contains("many"))
    r.group_top1.many = g.at("many").get<double>();
  if (g.contains("medium"))
    r.group_top1.medium = g.at("medium").get<double>();
  if (g.contains("few"))
    r.group_top1.few = g.at("few").get<double>();
  r.per_class_top1 = detail::optional_list(j.at("per_class_top1"));
  r.per_class_icd = detail::optional_list(j.at("per_class_icd"));
  r.avg_icd = j.at("avg_icd").get<double>();
  r.train_counts = j.at("train_counts").get<std::vector<int>>();
  r.eval_counts = j.at("eval_counts").get<std::vector<int>>();
  return r;
}

/**
 * Structural check of a serialised report. Returns an empty string when valid,
 * otherwise the first problem found.
 */
inline std::string validate_report_json(const nlohmann::json &j) {
  auto in_unit = [](const nlohmann::json &v) {
    return v.is_number() && v.get<double>() >= 0.0 && v.get<double>() <= 1.0;
  };
  for (const char *key : {"epoch", "overall_top1", "group_top1", "per_class_top1",
                          "per_class_icd", "avg_icd", "train_counts", "eval_counts"})
    if (!j.contains(key))
      return std::string("missing key ") + key;
  if (!j.at("epoch").is_number_integer())
    return "epoch must be an integer";
  if (!in_unit(j.at("overall_top1")))
    return "overall_top1 must lie in [0, 1]";
  if (!j.at("group_top1").is_object())
    return "group_top1 must be an object";
  for (const auto &[k, v] : j.at("group_top1").items()) {
    if (k != "many" && k != "medium" && k != "few")
      return "unknown group " + k;
    if (!in_unit(v))
      return "group accuracy " + k + " must lie in [0, 1]";
  }
  const std::size_t classes = j.at("train_counts").size();
  for (const char *key : {"per_class_top1", "per_class_icd", "eval_counts"})
    if (!j.at(key).is_array() || j.at(key).size() != classes)
      return std::string(key) + " must have one entry per class";
  for (const auto &v : j.at("per_class_top1"))
    if (!v.is_null() && !in_unit(v))
      return "per-class accuracy must lie in [0, 1]";
  for (const auto &v : j.at("per_class_icd"))
    if (!v.is_null() && !(v.is_number() && v.get<double>() >= 0.0))
      return "per-class ICD must be non-negative";
  if (!j.at("avg_icd").is_number() || j.at("avg_icd").get<double>() < 0.0)
    return "avg_icd must be non-negative";
  return {};
}

/// Markdown table laid out as Label / Sample Size / ICD rows with a trailing AVG. column.
inline std::string icd_table(const MetricsReport &r, const std::string &row_name = "ICD") {
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::string label = "| Label |", sep = "|---|", size = "| Sample Size |", icd = "| " + row_name + " |";
  for (std::size_t y = 0; y < r.per_class_icd.size(); ++y) {
    label += " " + std::to_string(y) + " |";
    sep += "---|";
    size += " " + (y < r.train_counts.size() ? std::to_string(r.train_counts[y]) : std::string()) + " |";
    icd += " " + (r.per_class_icd[y] ? fmt(*r.per_class_icd[y]) : std::string("-")) + " |";
  }
  label += " AVG. |";
  sep += "---|";
  size += "  |";
  icd += " " + fmt(r.avg_icd) + " |";
  return label + "\n" + sep + "\n" + size + "\n" + icd + "\n";
}

} // namespace ltr
