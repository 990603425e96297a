#include "teachrec/config.hpp"

#include <charconv>
#include <set>

#include "json.hpp"
#include "teachrec/error.hpp"
#include "teachrec/io.hpp"

namespace teachrec {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::string_view where, std::set<std::string> allowed) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) {
      throw InvalidArgument("config: unknown key '" + std::string(where) + key + "'");
    }
  }
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

void read_path(const json& j, const char* key, std::filesystem::path& out,
               const std::filesystem::path& base) {
  if (!j.contains(key)) return;
  std::string text;
  read(j, key, text);
  out = text.empty() ? std::filesystem::path{} : base / std::filesystem::path(text);
}

}  // namespace

void AppConfig::validate() const {
  if (k == 0) throw InvalidArgument("config: k must be >= 1");
  (void)boost();
  gbdt.validate();
  if (metrics_window < 2) throw InvalidArgument("config: metrics_window must be >= 2");
  if (latent_rank == 0) throw InvalidArgument("config: latent_rank must be >= 1");
}

std::filesystem::path AppConfig::resolved_schema_path() const {
  if (!schema_path.empty()) return schema_path;
  auto p = model_path;
  p += ".schema.json";
  return p;
}

evaluation::OfflineConfig AppConfig::offline() const {
  evaluation::OfflineConfig c;
  c.threshold = threshold;
  c.holdout_pairs = holdout_pairs;
  c.split_seed = seed;
  c.k = k;
  c.boost = boost();
  c.gbdt = gbdt;
  c.gbdt.rng_seed = seed;
  c.baselines = baselines;
  c.itemcf_neighbours = itemcf_neighbours;
  c.latent_rank = latent_rank;
  c.svd_iterations = svd_iterations;
  c.nmf_iterations = nmf_iterations;
  c.factor_seed = seed;
  return c;
}

AppConfig AppConfig::from_json(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw InvalidArgument("config: top level must be an object");
  reject_unknown(j, "",
                 {"data", "model_path", "schema_path", "event_log", "report_dir", "boost", "k",
                  "bind", "log_level", "seed", "split", "gbdt", "baselines", "serve"});
  AppConfig c;
  for (auto* p : {&c.courses_path, &c.outcomes_path, &c.students_path, &c.teachers_path,
                  &c.model_path, &c.event_log_path, &c.report_dir}) {
    *p = base_dir / *p;
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    reject_unknown(d, "data.", {"courses", "outcomes", "students", "teachers"});
    read_path(d, "courses", c.courses_path, base_dir);
    read_path(d, "outcomes", c.outcomes_path, base_dir);
    read_path(d, "students", c.students_path, base_dir);
    read_path(d, "teachers", c.teachers_path, base_dir);
  }
  read_path(j, "model_path", c.model_path, base_dir);
  read_path(j, "schema_path", c.schema_path, base_dir);
  read_path(j, "event_log", c.event_log_path, base_dir);
  read_path(j, "report_dir", c.report_dir, base_dir);
  if (j.contains("boost")) {
    const auto& b = j["boost"];
    reject_unknown(b, "boost.", {"alpha", "beta", "delta"});
    read(b, "alpha", c.alpha);
    read(b, "beta", c.beta);
    read(b, "delta", c.delta);
  }
  read(j, "k", c.k);
  read(j, "bind", c.bind);
  read(j, "log_level", c.log_level);
  read(j, "seed", c.seed);
  if (j.contains("split")) {
    const auto& s = j["split"];
    reject_unknown(s, "split.", {"threshold", "holdout_pairs"});
    read(s, "threshold", c.threshold);
    read(s, "holdout_pairs", c.holdout_pairs);
  }
  if (j.contains("gbdt")) {
    const auto& g = j["gbdt"];
    reject_unknown(g, "gbdt.",
                   {"n_trees", "max_depth", "min_samples_leaf", "learning_rate", "subsample"});
    read(g, "n_trees", c.gbdt.n_trees);
    read(g, "max_depth", c.gbdt.max_depth);
    read(g, "min_samples_leaf", c.gbdt.min_samples_leaf);
    read(g, "learning_rate", c.gbdt.learning_rate);
    read(g, "subsample", c.gbdt.subsample);
  }
  if (j.contains("baselines")) {
    const auto& b = j["baselines"];
    reject_unknown(b, "baselines.",
                   {"enabled", "itemcf_neighbours", "latent_rank", "svd_iterations",
                    "nmf_iterations"});
    read(b, "enabled", c.baselines);
    read(b, "itemcf_neighbours", c.itemcf_neighbours);
    read(b, "latent_rank", c.latent_rank);
    read(b, "svd_iterations", c.svd_iterations);
    read(b, "nmf_iterations", c.nmf_iterations);
  }
  if (j.contains("serve")) {
    const auto& s = j["serve"];
    reject_unknown(s, "serve.", {"cold_start", "metrics_window"});
    read(s, "cold_start", c.cold_start);
    read(s, "metrics_window", c.metrics_window);
  }
  c.gbdt.rng_seed = c.seed;
  c.validate();
  return c;
}

AppConfig AppConfig::load(const std::filesystem::path& path) {
  return from_json(read_file(path), path.parent_path());
}

std::string AppConfig::to_json() const {
  const json j{
      {"data",
       {{"courses", courses_path.string()},
        {"outcomes", outcomes_path.string()},
        {"students", students_path.string()},
        {"teachers", teachers_path.string()}}},
      {"model_path", model_path.string()},
      {"schema_path", resolved_schema_path().string()},
      {"event_log", event_log_path.string()},
      {"report_dir", report_dir.string()},
      {"boost", {{"alpha", alpha}, {"beta", beta}, {"delta", delta}}},
      {"k", k},
      {"bind", bind},
      {"log_level", log_level},
      {"seed", seed},
      {"split", {{"threshold", threshold}, {"holdout_pairs", holdout_pairs}}},
      {"gbdt",
       {{"n_trees", gbdt.n_trees},
        {"max_depth", gbdt.max_depth},
        {"min_samples_leaf", gbdt.min_samples_leaf},
        {"learning_rate", gbdt.learning_rate},
        {"subsample", gbdt.subsample}}},
      {"baselines",
       {{"enabled", baselines},
        {"itemcf_neighbours", itemcf_neighbours},
        {"latent_rank", latent_rank},
        {"svd_iterations", svd_iterations},
        {"nmf_iterations", nmf_iterations}}},
      {"serve", {{"cold_start", cold_start}, {"metrics_window", metrics_window}}},
  };
  return j.dump(2);
}

std::pair<std::string, int> parse_bind_address(std::string_view bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string_view::npos) {
    throw InvalidArgument("bind address '" + std::string(bind) + "' lacks a port");
  }
  int port = 0;
  const auto digits = bind.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port < 0 || port > 65535) {
    throw InvalidArgument("bind address '" + std::string(bind) + "' has a bad port");
  }
  return {std::string(bind.substr(0, colon)), port};
}

}  // namespace teachrec
