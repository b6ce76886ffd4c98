#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "../split_fixtures.hpp"
#include "dreid/errors.hpp"
#include "dreid/splitter.hpp"

using namespace dreid;
using namespace dreid::splitter;
using namespace dreid::testing;

namespace {

std::size_t count_group(const SplitAssignment& a, IdentityGroup g) {
  return static_cast<std::size_t>(std::count_if(
      a.groups.begin(), a.groups.end(), [g](const auto& kv) { return kv.second == g; }));
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dreid_split_" + name);
}

}  // namespace

TEST_CASE("split of 100 identities x 10 images with defaults") {
  const auto m = uniform_manifest(100, 10);
  const auto a = split_dataset(m, {.seed = 3});
  CHECK(count_group(a, IdentityGroup::UnseenIds) >= 16);
  CHECK(count_group(a, IdentityGroup::UnseenIds) <= 18);
  const auto report = validate_split(a, m);
  CHECK(report.ok());
  CHECK(report.training.images + report.database_only.images +
            report.query.images == 1000);
  CHECK(a.roles.size() == 1000);
}

TEST_CASE("ATRW-shaped fixture lands near the published split") {
  const auto m = atrw_manifest();
  REQUIRE(m.size() == 5415);
  const auto a = split_dataset(m, {.seed = 11});
  const auto r = validate_split(a, m);
  CHECK(r.ok());
  CHECK(std::abs(static_cast<long>(r.seen_ids) - 152) <= 1);
  CHECK(std::abs(static_cast<long>(r.unseen_ids) - 30) <= 1);
  // Published query count is 1,073; per-dataset fractions are unpublished.
  CHECK(std::abs(static_cast<double>(r.query.images) - 1073.0) <= 0.1 * 1073.0);
}

TEST_CASE("split is deterministic and order independent") {
  auto m = uniform_manifest(40, 6);
  const auto a = split_dataset(m, {.seed = 5});
  const auto b = split_dataset(m, {.seed = 5});
  CHECK(a.roles == b.roles);
  CHECK(a.groups == b.groups);
  std::reverse(m.begin(), m.end());
  const auto c = split_dataset(m, {.seed = 5});
  CHECK(a.roles == c.roles);
}

TEST_CASE("image seed changes roles but not identity groups") {
  const auto m = uniform_manifest(60, 8);
  SplitConfig c1{.seed = 1, .image_seed = 100};
  SplitConfig c2{.seed = 1, .image_seed = 200};
  const auto a = split_dataset(m, c1);
  const auto b = split_dataset(m, c2);
  CHECK(a.groups == b.groups);
  CHECK(a.roles != b.roles);
}

TEST_CASE("singleton identities go database-only with a warning") {
  auto m = uniform_manifest(10, 5);
  ManifestRecord lone{.image_id = "lone_0", .identity_id = "lone", .path = "",
                      .timestamp = 5, .clarity = 2, .dataset = ""};
  m.push_back(lone);
  const auto a = split_dataset(m, {.seed = 2});
  CHECK(a.roles.at("lone_0") == Role::DatabaseOnly);
  CHECK(a.groups.at("lone") == IdentityGroup::UnseenIds);
  CHECK(a.warnings.size() == 1);
  CHECK(validate_split(a, m).ok());
}

TEST_CASE("fractions outside (0,1) are rejected") {
  const auto m = uniform_manifest(5, 3);
  CHECK_THROWS_AS(split_dataset(m, {.unseen_id_fraction = 0.0}), ParameterError);
  CHECK_THROWS_AS(split_dataset(m, {.query_fraction_seen = 1.0}), ParameterError);
}

TEST_CASE("time-aware split takes the earliest images as database") {
  Manifest m;
  for (int t = 1; t <= 5; ++t) {
    m.push_back({.image_id = "x" + std::to_string(t), .identity_id = "a",
                 .path = "", .timestamp = t, .clarity = std::nullopt, .dataset = ""});
  }
  for (int t = 1; t <= 4; ++t) {
    m.push_back({.image_id = "y" + std::to_string(t), .identity_id = "b",
                 .path = "", .timestamp = 10 * t, .clarity = std::nullopt, .dataset = ""});
  }
  SplitConfig cfg{.seed = 0, .query_fraction_unseen = 0.4, .time_aware = true};
  const auto a = time_aware_split(m, cfg);
  for (int t = 1; t <= 3; ++t) CHECK(in_database(a.roles.at("x" + std::to_string(t))));
  CHECK(a.roles.at("x4") == Role::Query);
  CHECK(a.roles.at("x5") == Role::Query);
  CHECK(validate_split(a, m).ok());
}

TEST_CASE("time-aware split requires timestamps") {
  auto m = uniform_manifest(3, 3);
  m[1].timestamp.reset();
  m[4].timestamp.reset();
  try {
    time_aware_split(m, {.time_aware = true});
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    CHECK(what.find(m[1].image_id) != std::string::npos);
    CHECK(what.find(m[4].image_id) != std::string::npos);
  }
}

TEST_CASE("time-aware split falls back to random for a single timestamp") {
  auto m = uniform_manifest(4, 6);
  for (auto& r : m) {
    if (r.identity_id == m.front().identity_id) r.timestamp = 7;
  }
  const auto a = time_aware_split(m, {.seed = 1, .time_aware = true});
  CHECK(a.warnings.size() == 1);
  CHECK(validate_split(a, m).ok());
}

TEST_CASE("time-aware monotonicity holds on random fixtures") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto m = manifest_from_counts(varied_counts(30, 500, seed));
    SeededRng rng(seed);
    for (auto& r : m) r.timestamp = rng.uniform_int(0, 50);  // ties included
    const auto a = time_aware_split(m, {.seed = seed, .time_aware = true});
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> bounds;
    for (const auto& r : m) {
      auto& [max_db, min_q] = bounds.try_emplace(r.identity_id, INT64_MIN, INT64_MAX)
                                  .first->second;
      if (in_database(a.roles.at(r.image_id))) {
        max_db = std::max(max_db, *r.timestamp);
      } else {
        min_q = std::min(min_q, *r.timestamp);
      }
    }
    for (const auto& [id, b] : bounds) {
      // Identities that fell back to a random split have one timestamp.
      CHECK(b.first <= b.second);
    }
    CHECK(validate_split(a, m).ok());
  }
}

TEST_CASE("70/30 time-aware split over thirteen datasets") {
  for (int d = 0; d < 13; ++d) {
    std::vector<int> counts = varied_counts(20 + d, 400 + 30 * d, 50 + d);
    for (int& c : counts) c = std::max(10, (c / 10) * 10);
    const auto m = manifest_from_counts(counts, "ds" + std::to_string(d));
    const auto a = time_aware_split(
        m, {.seed = 9, .query_fraction_unseen = 0.3, .time_aware = true});
    std::size_t db = 0, q = 0;
    for (const auto& [id, role] : a.roles) (in_database(role) ? db : q)++;
    const double total = static_cast<double>(m.size());
    CHECK(std::abs(static_cast<double>(db) - 0.7 * total) <= 1.0);
    CHECK(std::abs(static_cast<double>(q) - 0.3 * total) <= 1.0);
  }
}

TEST_CASE("validate_split flags a constructed unseen leak") {
  const auto m = uniform_manifest(30, 5);
  auto a = split_dataset(m, {.seed = 4});
  CHECK(validate_split(a, m).violations.empty());
  const auto unseen = std::find_if(a.groups.begin(), a.groups.end(), [](auto& kv) {
    return kv.second == IdentityGroup::UnseenIds;
  });
  REQUIRE(unseen != a.groups.end());
  const auto victim = std::find_if(m.begin(), m.end(), [&](const auto& r) {
    return r.identity_id == unseen->first;
  });
  a.roles[victim->image_id] = Role::TrainAndDatabase;
  const auto r = validate_split(a, m);
  CHECK(r.violations.size() == 1);
  CHECK(r.count("unseen-leak") == 1);
}

TEST_CASE("validate_split flags open-set queries and missing roles") {
  const auto m = uniform_manifest(4, 3);
  auto a = split_dataset(m, {.seed = 4});
  const std::string identity = m.front().identity_id;
  for (const auto& r : m) {
    if (r.identity_id == identity) a.roles[r.image_id] = Role::Query;
  }
  a.roles.erase(m.back().image_id);
  const auto r = validate_split(a, m);
  CHECK(r.count("open-set") == 1);
  CHECK(r.count("missing-role") == 1);
}

TEST_CASE("report counts match the input totals") {
  const auto m = atrw_manifest();
  const auto a = split_dataset(m, {.seed = 2});
  const auto r = validate_split(a, m);
  CHECK(r.training.images + r.database_only.images + r.query.images == m.size());
  CHECK(r.seen_ids + r.unseen_ids == 182);
  CHECK(r.training.ids == r.seen_ids);
  CHECK(r.to_text().find("Database Only") != std::string::npos);
}

TEST_CASE("assignment and manifest files round-trip") {
  const auto m = atrw_manifest();
  const auto a = split_dataset(m, {.seed = 8});
  const auto apath = temp_path("assign.jsonl");
  const auto mpath = temp_path("manifest.csv");
  write_assignment(apath, a, m);
  write_manifest_csv(mpath, m);
  const auto m2 = read_manifest(mpath);
  REQUIRE(m2.size() == m.size());
  CHECK(m2[17].image_id == m[17].image_id);
  CHECK(m2[17].timestamp == m[17].timestamp);
  CHECK(m2[17].clarity == m[17].clarity);
  CHECK(m2[17].dataset == m[17].dataset);
  const auto a2 = read_assignment(apath, m2);
  CHECK(a2.roles == a.roles);
  CHECK(a2.groups == a.groups);

  // Duplicated line surfaces as a violation.
  {
    std::ofstream out(apath, std::ios::app);
    out << R"({"image_id":")" << m[0].image_id
        << R"(","role":"Query","identity_group":"SeenIds"})" << '\n';
  }
  const auto dup = read_assignment(apath, m2);
  CHECK(validate_split(dup, m2).count("duplicate-role") == 1);
  std::filesystem::remove(apath);
  std::filesystem::remove(mpath);
}

TEST_CASE("manifest readers accept JSON lines and reject bad input") {
  const auto path = temp_path("manifest.jsonl");
  {
    std::ofstream out(path);
    out << R"({"image_id":"a","identity_id":"x","path":"a.png","timestamp":5,"clarity":4})" << '\n';
    out << R"({"image_id":"b","identity_id":"x","path":"b.png","timestamp":null})" << '\n';
  }
  const auto m = read_manifest(path);
  REQUIRE(m.size() == 2);
  CHECK(*m[0].clarity == 4);
  CHECK_FALSE(m[1].timestamp.has_value());

  {
    std::ofstream out(path);
    out << R"({"image_id":"a","identity_id":"x","clarity":7})" << '\n';
  }
  CHECK_THROWS_AS(read_manifest(path), ValidationError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_manifest(temp_path("missing.csv")), IoError);
}
