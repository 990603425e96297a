#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "teachrec/evaluation.hpp"
#include "teachrec/gbdt.hpp"
#include "teachrec/ranking.hpp"

namespace teachrec {

/// Everything the CLI and the server need. Loaded from a JSON file; relative
/// paths are resolved against the file's directory.
struct AppConfig {
  std::filesystem::path courses_path = "courses.csv";
  std::filesystem::path outcomes_path = "outcomes.csv";
  std::filesystem::path students_path = "students.csv";
  std::filesystem::path teachers_path = "teachers.csv";
  std::filesystem::path model_path = "model.bin";
  std::filesystem::path schema_path;  // empty: model_path + ".schema.json"
  std::filesystem::path event_log_path = "events.jsonl";
  std::filesystem::path report_dir = "reports";

  double alpha = 0.04;
  double beta = 1.0;
  std::size_t delta = 100;
  std::size_t k = 200;
  std::string bind = "127.0.0.1:8080";
  std::string log_level = "info";

  /// Seeds the split, the tree subsampling and the factor initialisation.
  std::uint64_t seed = 0;
  double threshold = 0.5;
  std::size_t holdout_pairs = 821;

  gbdt::TrainParams gbdt;

  bool baselines = true;
  std::size_t itemcf_neighbours = 50;
  std::size_t latent_rank = 16;
  std::size_t svd_iterations = 30;
  std::size_t nmf_iterations = 200;

  bool cold_start = true;
  std::size_t metrics_window = 1000;

  /// Throws InvalidArgument for K == 0, non-positive boost parameters or
  /// invalid tree parameters.
  void validate() const;

  BoostParams boost() const { return BoostParams(alpha, beta, delta); }
  std::filesystem::path resolved_schema_path() const;
  evaluation::OfflineConfig offline() const;

  /// Unknown keys are rejected so typos do not silently fall back to defaults.
  static AppConfig from_json(std::string_view text, const std::filesystem::path& base_dir = {});
  static AppConfig load(const std::filesystem::path& path);
  std::string to_json() const;
};

/// "host:port" split; throws InvalidArgument when the port is missing or not a number.
std::pair<std::string, int> parse_bind_address(std::string_view bind);

}  // namespace teachrec
