// Command-line front end: generate, train, evaluate, recommend, simulate, serve.

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "teachrec/config.hpp"
#include "teachrec/error.hpp"
#include "teachrec/evaluation.hpp"
#include "teachrec/events.hpp"
#include "teachrec/io.hpp"
#include "teachrec/pseudo_labels.hpp"
#include "teachrec/ranking.hpp"
#include "teachrec/service.hpp"
#include "teachrec/simulator.hpp"

namespace fs = std::filesystem;
using namespace teachrec;

namespace {

struct Overrides {
  std::string config_path;
  std::string courses, outcomes, students, teachers, model, schema, event_log, report_dir;
  std::optional<double> alpha, beta;
  std::optional<std::size_t> delta, k, holdout;
  std::optional<std::uint64_t> seed;
  std::string log_level;
};

AppConfig resolve_config(const Overrides& o) {
  AppConfig c;
  if (!o.config_path.empty()) {
    c = AppConfig::load(o.config_path);
  } else if (fs::exists("teachrec.json")) {
    c = AppConfig::load("teachrec.json");
  }
  if (const char* env = std::getenv("TEACHREC_LOG_LEVEL"); env && *env) c.log_level = env;
  auto set_path = [](fs::path& dst, const std::string& v) {
    if (!v.empty()) dst = v;
  };
  set_path(c.courses_path, o.courses);
  set_path(c.outcomes_path, o.outcomes);
  set_path(c.students_path, o.students);
  set_path(c.teachers_path, o.teachers);
  set_path(c.model_path, o.model);
  set_path(c.schema_path, o.schema);
  set_path(c.event_log_path, o.event_log);
  set_path(c.report_dir, o.report_dir);
  if (o.alpha) c.alpha = *o.alpha;
  if (o.beta) c.beta = *o.beta;
  if (o.delta) c.delta = *o.delta;
  if (o.k) c.k = *o.k;
  if (o.holdout) c.holdout_pairs = *o.holdout;
  if (o.seed) {
    c.seed = *o.seed;
    c.gbdt.rng_seed = *o.seed;
  }
  if (!o.log_level.empty()) c.log_level = o.log_level;
  c.validate();
  spdlog::set_level(spdlog::level::from_str(c.log_level));
  return c;
}

struct Dataset {
  std::vector<CourseRecord> courses;
  std::vector<OutcomeRecord> outcomes;
  EntityTable students;
  EntityTable teachers;
};

Dataset load_dataset(const AppConfig& c) {
  for (const auto& p : {c.courses_path, c.outcomes_path, c.students_path, c.teachers_path}) {
    if (!fs::exists(p)) throw Error("missing input file " + p.string());
  }
  Dataset d;
  d.courses = read_courses_csv(c.courses_path);
  d.outcomes = read_outcomes_csv(c.outcomes_path);
  d.students = read_entity_csv(c.students_path);
  d.teachers = read_entity_csv(c.teachers_path);
  spdlog::info("read {} courses, {} outcomes, {} students, {} teachers", d.courses.size(),
               d.outcomes.size(), d.students.rows.size(), d.teachers.rows.size());
  return d;
}

template <class Writer>
void write_csv_file(const fs::path& path, Writer writer) {
  std::ostringstream out;
  writer(out);
  write_file_atomic(path, out.str());
}

void add_world_flags(CLI::App* cmd, sim::WorldConfig& w) {
  cmd->add_option("--n-students", w.n_students, "Number of students")->capture_default_str();
  cmd->add_option("--n-teachers", w.n_teachers, "Number of teachers")->capture_default_str();
  cmd->add_option("--latent-dim", w.latent_dim, "Free latent factors")->capture_default_str();
  cmd->add_option("--dropout-steepness", w.dropout_steepness)->capture_default_str();
  cmd->add_option("--teacher-capacity", w.teacher_capacity)->capture_default_str();
  cmd->add_option("--fraction-new-teachers", w.fraction_new_teachers)->capture_default_str();
  cmd->add_option("--world-seed", w.rng_seed, "World RNG seed")->capture_default_str();
  cmd->add_option("--affinity-scale", w.affinity_scale)->capture_default_str();
  cmd->add_option("--grade-weight", w.grade_weight)->capture_default_str();
  cmd->add_option("--gender-weight", w.gender_weight)->capture_default_str();
  cmd->add_option("--school-weight", w.school_weight)->capture_default_str();
  cmd->add_option("--quality-spread", w.quality_spread)->capture_default_str();
  cmd->add_option("--latent-weight", w.latent_weight)->capture_default_str();
  cmd->add_option("--bias", w.bias)->capture_default_str();
  cmd->add_option("--n-grades", w.n_grades)->capture_default_str();
  cmd->add_option("--n-schools", w.n_schools)->capture_default_str();
}

void add_episode_flags(CLI::App* cmd, sim::EpisodeOptions& e) {
  cmd->add_option("--horizon", e.horizon, "Maximum matching attempts per student")
      ->capture_default_str();
  cmd->add_option("--blocks-to-complete", e.blocks_to_complete)->capture_default_str();
  cmd->add_option("--courses-per-block", e.courses_per_block)->capture_default_str();
  cmd->add_option("--episode-seed", e.seed)->capture_default_str();
}

int cmd_generate(const fs::path& out_dir, const sim::WorldConfig& world,
                 const sim::EpisodeOptions& episode) {
  fs::create_directories(out_dir);
  const auto logs = sim::generate_logs(world, episode);
  write_csv_file(out_dir / "courses.csv", [&](std::ostream& o) { write_courses_csv(o, logs.courses); });
  write_csv_file(out_dir / "outcomes.csv",
                 [&](std::ostream& o) { write_outcomes_csv(o, logs.outcomes); });
  write_csv_file(out_dir / "students.csv",
                 [&](std::ostream& o) { write_entity_csv(o, logs.world.student_table); });
  write_csv_file(out_dir / "teachers.csv",
                 [&](std::ostream& o) { write_entity_csv(o, logs.world.teacher_table); });
  std::cout << "wrote " << logs.courses.size() << " courses and " << logs.outcomes.size()
            << " outcomes for " << logs.world.student_count() << " students and "
            << logs.world.teacher_count() << " teachers to " << out_dir.string() << "\n";
  return 0;
}

int cmd_labels(const AppConfig& c, const std::string& out) {
  const auto d = load_dataset(c);
  const auto store = InteractionStore::ingest(d.courses, d.outcomes);
  const auto labels = build_labels(store);
  if (out.empty() || out == "-") {
    write_labels_csv(std::cout, labels);
  } else {
    write_csv_file(out, [&](std::ostream& o) { write_labels_csv(o, labels); });
  }
  return 0;
}

int cmd_train(const AppConfig& c) {
  const auto d = load_dataset(c);
  const auto store = InteractionStore::ingest(d.courses, d.outcomes);
  TrainedRanker ranker;
  std::size_t held_out = 0;
  if (c.holdout_pairs > 0) {
    const auto data = evaluation::prepare(store, c.offline());
    held_out = data.split.held_out.size();
    ranker = train_ranker(data.train_store, d.students, d.teachers, data.split.training, c.gbdt);
  } else {
    ranker = train_ranker(store, d.students, d.teachers, build_labels(store), c.gbdt);
  }
  save_model_files(ranker, c.model_path, c.resolved_schema_path());
  std::cout << "positive labels:    " << ranker.positive_labels << "\n"
            << "negative labels:    " << ranker.negative_labels << "\n"
            << "held-out pairs:     " << held_out << "\n"
            << "trees:              " << ranker.model.trees().size() << "\n"
            << "final training MSE: " << format_double(ranker.final_training_mse, 8) << "\n"
            << "feature columns:    " << ranker.schema.width() << "\n"
            << "model version:      " << model_version(ranker.model) << "\n"
            << "model:              " << c.model_path.string() << "\n"
            << "schema:             " << c.resolved_schema_path().string() << "\n";
  return 0;
}

int cmd_evaluate(const AppConfig& c, const std::vector<std::string>& external_specs) {
  const auto d = load_dataset(c);
  const auto store = InteractionStore::ingest(d.courses, d.outcomes);
  const auto loaded = load_model_files(c.model_path, c.resolved_schema_path());
  const auto data = evaluation::prepare(store, c.offline());
  std::vector<std::unique_ptr<evaluation::Recommender>> external;
  std::vector<const evaluation::Recommender*> external_ptrs;
  for (const auto& spec : external_specs) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw InvalidArgument("--external expects NAME=PATH");
    external.push_back(
        std::make_unique<evaluation::ExternalScores>(spec.substr(0, eq), spec.substr(eq + 1)));
    external_ptrs.push_back(external.back().get());
  }
  const auto report = evaluation::evaluate_offline(data, d.students, d.teachers, loaded.schema,
                                                   loaded.model, c.offline(), external_ptrs);
  fs::create_directories(c.report_dir);
  write_file_atomic(c.report_dir / "report.txt", report.to_text());
  write_file_atomic(c.report_dir / "report.csv", report.to_csv());
  std::cout << "K=" << report.k << ", " << report.held_out_pairs << " held-out pairs over "
            << report.test_students << " students\n"
            << report.to_text();
  return 0;
}

int cmd_recommend(const AppConfig& c, const std::string& student, std::optional<std::size_t> k) {
  auto d = load_dataset(c);
  RecommendationService service(c, std::move(d.students), std::move(d.teachers),
                                std::move(d.courses), std::move(d.outcomes));
  service.start();
  service.load_model();
  nlohmann::json request{{"student_id", student}};
  if (k) request["k"] = *k;
  const auto r = service.recommend(request);
  std::cout << r.body.dump(2) << "\n";
  return r.status == 200 ? 0 : 1;
}

int cmd_simulate(const sim::WorldConfig& world, sim::ExperimentOptions options,
                 const std::string& csv_path, const std::string& trace_path) {
  const auto result = sim::run_marketplace_experiment(world, options);
  std::cout << "history students: " << result.history_students
            << ", cohort students: " << result.cohort_students
            << ", training labels: " << result.training_labels << "\n"
            << result.table.to_text();
  if (!csv_path.empty()) write_file_atomic(csv_path, result.table.to_csv());
  if (!trace_path.empty()) {
    std::ostringstream out;
    sim::write_event_trace(out, result.history);
    write_file_atomic(trace_path, out.str());
  }
  return 0;
}

int cmd_serve(const AppConfig& c) {
  auto d = load_dataset(c);
  RecommendationService service(c, std::move(d.students), std::move(d.teachers),
                                std::move(d.courses), std::move(d.outcomes));
  service.start();
  if (fs::exists(c.model_path)) {
    service.load_model();
  } else {
    spdlog::warn("no model at {}; recommendations return 503 until one is trained",
                 c.model_path.string());
  }
  const auto [host, port] = parse_bind_address(c.bind);
  HttpServer server(service);
  const int bound = server.bind(host, port);
  spdlog::info("listening on {}:{}", host, bound);
  server.listen();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher recommendation engine"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("-c,--config", o.config_path, "JSON config file (default ./teachrec.json)");
  app.add_option("--courses", o.courses, "courses.csv");
  app.add_option("--outcomes", o.outcomes, "outcomes.csv");
  app.add_option("--students", o.students, "students.csv");
  app.add_option("--teachers", o.teachers, "teachers.csv");
  app.add_option("--model", o.model, "Model file");
  app.add_option("--schema", o.schema, "Feature schema file");
  app.add_option("--event-log", o.event_log, "Event log (JSON lines)");
  app.add_option("--report-dir", o.report_dir, "Directory for evaluation reports");
  app.add_option("--alpha", o.alpha, "Novelty boost alpha");
  app.add_option("--beta", o.beta, "Novelty boost beta");
  app.add_option("--delta", o.delta, "New-teacher course threshold");
  app.add_option("--k", o.k, "Slate size");
  app.add_option("--seed", o.seed, "Seed for split, training and factorisation");
  app.add_option("--log-level", o.log_level, "trace|debug|info|warn|error|off");

  auto* generate = app.add_subcommand("generate", "Write a synthetic dataset as CSV files");
  std::string out_dir = "data";
  sim::WorldConfig gen_world;
  sim::EpisodeOptions gen_episode;
  generate->add_option("--out-dir", out_dir)->capture_default_str();
  add_world_flags(generate, gen_world);
  add_episode_flags(generate, gen_episode);

  auto* labels = app.add_subcommand("labels", "Write pseudo labels as CSV");
  std::string labels_out;
  labels->add_option("--out", labels_out, "Output file (default stdout)");

  auto* train = app.add_subcommand("train", "Train the ranker and write the model files");
  train->add_option("--holdout", o.holdout, "Held-out positive pairs (0 trains on all labels)");

  auto* evaluate = app.add_subcommand("evaluate", "Offline evaluation against the baselines");
  std::vector<std::string> external;
  evaluate->add_option("--external", external, "Extra scorer as NAME=scores.csv");
  evaluate->add_option("--holdout", o.holdout, "Held-out positive pairs");

  auto* recommend = app.add_subcommand("recommend", "Print one student's slate");
  std::string student;
  std::optional<std::size_t> rec_k;
  recommend->add_option("--student", student)->required();
  recommend->add_option("--k", rec_k, "Slate size (default from config)");

  auto* simulate = app.add_subcommand("simulate", "Marketplace simulation of matching policies");
  sim::WorldConfig sim_world;
  sim::ExperimentOptions sim_options;
  std::string sim_csv, sim_trace;
  bool no_oracle = false;
  add_world_flags(simulate, sim_world);
  add_episode_flags(simulate, sim_options.episode);
  simulate->add_option("--episodes", sim_options.episodes)->capture_default_str();
  simulate->add_option("--history-fraction", sim_options.history_fraction)->capture_default_str();
  simulate->add_flag("--no-oracle", no_oracle, "Skip the oracle policy");
  simulate->add_option("--csv", sim_csv, "Write the comparison table as CSV");
  simulate->add_option("--trace", sim_trace, "Write the historical episode as JSON lines");

  auto* serve = app.add_subcommand("serve", "Run the HTTP API");
  std::string bind;
  serve->add_option("--bind", bind, "host:port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) return cmd_generate(out_dir, gen_world, gen_episode);
    if (simulate->parsed()) {
      if (const char* env = std::getenv("TEACHREC_LOG_LEVEL"); env && *env) {
        spdlog::set_level(spdlog::level::from_str(env));
      }
      sim_options.include_oracle = !no_oracle;
      return cmd_simulate(sim_world, sim_options, sim_csv, sim_trace);
    }
    auto config = resolve_config(o);
    if (labels->parsed()) return cmd_labels(config, labels_out);
    if (train->parsed()) return cmd_train(config);
    if (evaluate->parsed()) return cmd_evaluate(config, external);
    if (recommend->parsed()) return cmd_recommend(config, student, rec_k);
    if (serve->parsed()) {
      if (!bind.empty()) config.bind = bind;
      return cmd_serve(config);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
