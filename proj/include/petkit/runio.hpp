// petkit/runio.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_RUNIO_HPP
#define PETKIT_RUNIO_HPP

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "petkit/train.hpp"

namespace petkit {

namespace fs = std::filesystem;

// New timestamped subdirectory under `root`; never reuses an existing one, so
// reruns cannot clobber earlier outputs.
inline fs::path make_run_dir(const fs::path& root, const std::string& label) {
  fs::create_directories(root);
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%d-%H%M%S");
  for (int seq = 0;; ++seq) {
    std::ostringstream name;
    name << label << "-" << stamp.str();
    if (seq > 0) name << "-" << seq;
    const fs::path dir = root / name.str();
    if (!fs::exists(dir)) {
      fs::create_directories(dir);
      return dir;
    }
  }
}

inline void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write file '" + path.string() + "'");
  out << content;
}

// Run records serialize without wall time so identical configs produce
// byte-identical metric files; timing goes to a separate file.
inline nlohmann::json record_to_json(const RunRecord& record) {
  nlohmann::json j;
  j["strategy"] = record.strategy;
  j["lr"] = record.lr;
  j["seed"] = record.seed;
  j["subset_fraction"] = record.subset_fraction;
  j["trainable_total"] = record.trainable_total;
  j["best_epoch"] = record.best_epoch;
  j["val_accuracy"] = record.val_accuracy;
  j["train_accuracy"] = record.train_accuracy;
  j["test_accuracy"] = record.test_accuracy;
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : record.epochs)
    epochs.push_back({{"train_loss", e.train_loss}, {"val_accuracy", e.val_accuracy}});
  j["epochs"] = std::move(epochs);
  return j;
}

inline RunRecord record_from_json(const nlohmann::json& j) {
  RunRecord record;
  record.strategy = j.at("strategy").get<std::string>();
  record.lr = j.at("lr").get<double>();
  record.seed = j.at("seed").get<std::uint64_t>();
  record.subset_fraction = j.at("subset_fraction").get<double>();
  record.trainable_total = j.at("trainable_total").get<long long>();
  record.best_epoch = j.at("best_epoch").get<int>();
  record.val_accuracy = j.at("val_accuracy").get<double>();
  record.train_accuracy = j.at("train_accuracy").get<double>();
  record.test_accuracy = j.at("test_accuracy").get<double>();
  for (const auto& e : j.at("epochs")) {
    EpochStats stats;
    stats.train_loss = e.at("train_loss").get<double>();
    stats.val_accuracy = e.at("val_accuracy").get<double>();
    record.epochs.push_back(stats);
  }
  return record;
}

inline std::string records_to_jsonl(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) os << record_to_json(r).dump() << "\n";
  return os.str();
}

inline std::vector<RunRecord> read_records_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open records file '" + path.string() + "'");
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(record_from_json(nlohmann::json::parse(line)));
  }
  return out;
}

inline std::string records_to_csv(const std::vector<RunRecord>& records) {
  std::ostringstream os;
  os << "strategy,lr,seed,subset_fraction,trainable_params,best_epoch,val_accuracy,"
        "train_accuracy,test_accuracy\n";
  for (const auto& r : records)
    os << r.strategy << "," << r.lr << "," << r.seed << "," << r.subset_fraction << ","
       << r.trainable_total << "," << r.best_epoch << "," << r.val_accuracy << ","
       << r.train_accuracy << "," << r.test_accuracy << "\n";
  return os.str();
}

// Plot-ready table for the accuracy-vs-training-set-size figure.
inline std::string sweep_summary_to_csv(const std::vector<SweepSummaryRow>& rows) {
  std::ostringstream os;
  os << "strategy,fraction,n,mean_test_accuracy,sd_test_accuracy,mean_train_test_gap,"
        "sd_train_test_gap\n";
  for (const auto& r : rows)
    os << r.strategy << "," << r.fraction << "," << r.n << "," << r.mean_test_accuracy << ","
       << r.sd_test_accuracy << "," << r.mean_gap << "," << r.sd_gap << "\n";
  return os.str();
}

inline std::string sweep_cells_to_jsonl(const std::vector<SweepCell>& cells) {
  std::ostringstream os;
  for (const auto& c : cells) {
    nlohmann::json j;
    j["strategy"] = c.strategy;
    j["fraction"] = c.fraction;
    j["cell_seed"] = c.seed;
    j["record"] = record_to_json(c.best);
    os << j.dump() << "\n";
  }
  return os.str();
}

// One row per strategy: trainable params and the best accuracy seen, rows
// sorted ascending by params (the accuracy-vs-params trade-off table).
inline std::string accuracy_vs_params_csv(const std::vector<RunRecord>& records) {
  struct Row {
    long long params;
    double accuracy;
    std::string strategy;
  };
  std::map<std::string, Row> best;
  for (const auto& r : records) {
    auto it = best.find(r.strategy);
    if (it == best.end() || r.test_accuracy > it->second.accuracy)
      best[r.strategy] = {r.trainable_total, r.test_accuracy, r.strategy};
  }
  std::vector<Row> rows;
  for (auto& [_, row] : best) rows.push_back(row);
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return a.params < b.params || (a.params == b.params && a.strategy < b.strategy);
  });
  std::ostringstream os;
  os << "strategy,trainable_params,best_test_accuracy\n";
  for (const auto& row : rows)
    os << row.strategy << "," << row.params << "," << row.accuracy << "\n";
  return os.str();
}

}  // namespace petkit

#endif  // PETKIT_RUNIO_HPP
