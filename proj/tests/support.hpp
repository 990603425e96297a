#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "teachrec/core.hpp"
#include "teachrec/io.hpp"

namespace testing {

using namespace teachrec;

inline Timestamp day(int d, int hour = 0) {
  return Timestamp{std::chrono::milliseconds{1704067200000LL}} + std::chrono::days{d} +
         std::chrono::hours{hour};
}

inline CourseRecord course(const std::string& s, const std::string& t, Timestamp when,
                           std::map<std::string, double> stats = {}, double minutes = 45.0) {
  CourseRecord c;
  c.student = StudentId(s);
  c.teacher = TeacherId(t);
  c.timestamp = when;
  c.duration_minutes = minutes;
  c.stats = std::move(stats);
  return c;
}

inline OutcomeRecord outcome(const std::string& s, Outcome o, Timestamp when) {
  OutcomeRecord r;
  r.student = StudentId(s);
  r.outcome = o;
  r.decided_at = when;
  return r;
}

/// `n` courses of one pair on consecutive days starting at `first_day`.
inline void add_courses(std::vector<CourseRecord>& out, const std::string& s,
                        const std::string& t, int n, int first_day) {
  for (int i = 0; i < n; ++i) out.push_back(course(s, t, day(first_day + i)));
}

inline EntityTable table(std::vector<std::string> columns,
                         std::map<std::string, std::vector<std::string>> rows) {
  EntityTable t;
  t.columns = std::move(columns);
  t.rows = std::move(rows);
  return t;
}

/// Directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("teachrec-test-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testing
