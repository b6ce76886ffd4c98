#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dreid/manifest.hpp"

namespace dreid::splitter {

enum class Role { TrainAndDatabase, DatabaseOnly, Query };
enum class IdentityGroup { SeenIds, UnseenIds };

std::string_view to_string(Role role);
std::string_view to_string(IdentityGroup group);
Role parse_role(std::string_view name);
IdentityGroup parse_group(std::string_view name);

inline bool in_database(Role role) { return role != Role::Query; }

struct SplitConfig {
  std::uint64_t seed = 0;
  /// Seeds the image-level draw; defaults to a value derived from `seed`.
  /// The seen/unseen identity draw depends on `seed` only.
  std::optional<std::uint64_t> image_seed;
  double unseen_id_fraction = 0.17;
  double query_fraction_seen = 0.20;
  double query_fraction_unseen = 0.24;
  bool time_aware = false;

  void validate() const;
};

struct SplitAssignment {
  std::map<std::string, Role> roles;              // image_id -> role
  std::map<std::string, IdentityGroup> groups;    // identity_id -> group
  std::vector<std::string> warnings;
  /// Image ids listed more than once when read from a file.
  std::vector<std::string> duplicate_images;
  bool time_aware = false;
};

/// Seen/unseen identities, then image roles within each group.
SplitAssignment split_dataset(const Manifest& manifest,
                              const SplitConfig& config);

/// Per identity, the earliest ceil((1-q) n) images form the database and
/// the rest are queries, q = query_fraction_unseen.
SplitAssignment time_aware_split(const Manifest& manifest,
                                 const SplitConfig& config);

/// Dispatches on config.time_aware.
SplitAssignment split(const Manifest& manifest, const SplitConfig& config);

struct Violation {
  std::string kind;  // unseen-leak, open-set, duplicate-role, ...
  std::string detail;
};

struct SubsetCounts {
  std::size_t images = 0;
  std::size_t ids = 0;
};

struct ValidationReport {
  std::vector<Violation> violations;
  SubsetCounts training;       // TrainAndDatabase
  SubsetCounts database_only;  // DatabaseOnly
  SubsetCounts query;
  std::size_t seen_ids = 0;
  std::size_t unseen_ids = 0;
  std::size_t total_images = 0;

  bool ok() const { return violations.empty(); }
  std::size_t count(std::string_view kind) const;
  /// Table layout: "Training | Database Only | Query" as images|ids.
  std::string to_text() const;
};

ValidationReport validate_split(const SplitAssignment& assignment,
                                const Manifest& manifest);

/// JSON lines of {"image_id", "role", "identity_group"}.
void write_assignment(const std::filesystem::path& path,
                      const SplitAssignment& assignment,
                      const Manifest& manifest);
SplitAssignment read_assignment(const std::filesystem::path& path,
                                const Manifest& manifest);

}  // namespace dreid::splitter
