#include "dreid/splitter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dreid/errors.hpp"
#include "dreid/rng.hpp"

namespace dreid::splitter {
namespace {

struct IdentityImages {
  std::string identity;
  std::vector<const ManifestRecord*> images;  // sorted by image_id
};

// Identities in id order, each with its images in id order, so the split
// does not depend on manifest row order.
std::vector<IdentityImages> group_by_identity(const Manifest& manifest) {
  std::map<std::string, std::vector<const ManifestRecord*>> by_id;
  for (const auto& r : manifest) by_id[r.identity_id].push_back(&r);
  std::vector<IdentityImages> out;
  out.reserve(by_id.size());
  for (auto& [id, images] : by_id) {
    std::sort(images.begin(), images.end(),
              [](auto* a, auto* b) { return a->image_id < b->image_id; });
    out.push_back({id, std::move(images)});
  }
  return out;
}

std::uint64_t image_level_seed(const SplitConfig& config) {
  return config.image_seed.value_or(derive_seed(config.seed, "images"));
}

// Singletons go to the unseen, database-only side; the remaining
// identities are drawn into the unseen group by fraction.
void assign_groups(const std::vector<IdentityImages>& identities,
                   const SplitConfig& config, SplitAssignment& out) {
  std::vector<std::string> eligible;
  for (const auto& id : identities) {
    if (id.images.size() >= 2) {
      eligible.push_back(id.identity);
    } else {
      out.groups[id.identity] = IdentityGroup::UnseenIds;
      for (auto* r : id.images) out.roles[r->image_id] = Role::DatabaseOnly;
      out.warnings.push_back("identity '" + id.identity +
                             "' has a single image; assigned database-only");
    }
  }
  SeededRng rng(derive_seed(config.seed, "identities"));
  rng.shuffle(std::span<std::string>(eligible));
  const auto n_unseen = static_cast<std::size_t>(
      std::llround(config.unseen_id_fraction * static_cast<double>(eligible.size())));
  for (std::size_t i = 0; i < eligible.size(); ++i) {
    out.groups[eligible[i]] =
        i < n_unseen ? IdentityGroup::UnseenIds : IdentityGroup::SeenIds;
  }
}

Role database_role(IdentityGroup group) {
  return group == IdentityGroup::SeenIds ? Role::TrainAndDatabase
                                         : Role::DatabaseOnly;
}

}  // namespace

std::string_view to_string(Role role) {
  switch (role) {
    case Role::TrainAndDatabase:
      return "TrainAndDatabase";
    case Role::DatabaseOnly:
      return "DatabaseOnly";
    case Role::Query:
      return "Query";
  }
  return "unknown";
}

std::string_view to_string(IdentityGroup group) {
  return group == IdentityGroup::SeenIds ? "SeenIds" : "UnseenIds";
}

Role parse_role(std::string_view name) {
  for (auto r : {Role::TrainAndDatabase, Role::DatabaseOnly, Role::Query}) {
    if (to_string(r) == name) return r;
  }
  throw ValidationError("unknown role '" + std::string(name) + "'");
}

IdentityGroup parse_group(std::string_view name) {
  for (auto g : {IdentityGroup::SeenIds, IdentityGroup::UnseenIds}) {
    if (to_string(g) == name) return g;
  }
  throw ValidationError("unknown identity group '" + std::string(name) + "'");
}

void SplitConfig::validate() const {
  for (double f : {unseen_id_fraction, query_fraction_seen, query_fraction_unseen}) {
    if (!(f > 0.0 && f < 1.0)) {
      throw ParameterError("split fractions must lie in (0,1), got " +
                           std::to_string(f));
    }
  }
}

SplitAssignment split_dataset(const Manifest& manifest,
                              const SplitConfig& config) {
  config.validate();
  validate_manifest(manifest);
  const auto identities = group_by_identity(manifest);
  SplitAssignment out;
  assign_groups(identities, config, out);

  SeededRng rng(image_level_seed(config));
  for (IdentityGroup group : {IdentityGroup::SeenIds, IdentityGroup::UnseenIds}) {
    const double q = group == IdentityGroup::SeenIds
                         ? config.query_fraction_seen
                         : config.query_fraction_unseen;
    std::vector<const ManifestRecord*> pool;
    for (const auto& id : identities) {
      if (id.images.size() >= 2 && out.groups[id.identity] == group) {
        pool.insert(pool.end(), id.images.begin(), id.images.end());
      }
    }
    rng.shuffle(std::span<const ManifestRecord*>(pool));
    const auto n_query = static_cast<std::size_t>(
        std::llround(q * static_cast<double>(pool.size())));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      out.roles[pool[i]->image_id] =
          i < n_query ? Role::Query : database_role(group);
    }
  }

  // Closed set: an identity with only query images gets its first image back.
  for (const auto& id : identities) {
    const bool any_db = std::any_of(id.images.begin(), id.images.end(), [&](auto* r) {
      return in_database(out.roles[r->image_id]);
    });
    if (!any_db) {
      out.roles[id.images.front()->image_id] = database_role(out.groups[id.identity]);
    }
  }
  return out;
}

SplitAssignment time_aware_split(const Manifest& manifest,
                                 const SplitConfig& config) {
  config.validate();
  validate_manifest(manifest);
  std::vector<std::string> missing;
  for (const auto& r : manifest) {
    if (!r.timestamp) missing.push_back(r.image_id);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) {
      list += (i ? ", " : "") + missing[i];
    }
    throw ValidationError("time-aware split needs timestamps; missing for: " + list);
  }

  const auto identities = group_by_identity(manifest);
  SplitAssignment out;
  out.time_aware = true;
  assign_groups(identities, config, out);

  SeededRng rng(image_level_seed(config));
  const double q = config.query_fraction_unseen;
  for (const auto& id : identities) {
    if (id.images.size() < 2) continue;
    auto images = id.images;
    // Ties keep image_id order.
    std::stable_sort(images.begin(), images.end(), [](auto* a, auto* b) {
      return *a->timestamp < *b->timestamp;
    });
    if (*images.front()->timestamp == *images.back()->timestamp) {
      rng.shuffle(std::span<const ManifestRecord*>(images));
      out.warnings.push_back("identity '" + id.identity +
                             "' has a single timestamp; split at random");
    }
    const double n = static_cast<double>(images.size());
    const auto n_db = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil((1.0 - q) * n - 1e-9)), 1,
        images.size());
    const Role db = database_role(out.groups[id.identity]);
    for (std::size_t i = 0; i < images.size(); ++i) {
      out.roles[images[i]->image_id] = i < n_db ? db : Role::Query;
    }
  }
  return out;
}

SplitAssignment split(const Manifest& manifest, const SplitConfig& config) {
  return config.time_aware ? time_aware_split(manifest, config)
                           : split_dataset(manifest, config);
}

std::size_t ValidationReport::count(std::string_view kind) const {
  return static_cast<std::size_t>(std::count_if(
      violations.begin(), violations.end(),
      [kind](const Violation& v) { return v.kind == kind; }));
}

std::string ValidationReport::to_text() const {
  std::ostringstream os;
  os << "subset          images   ids\n";
  auto row = [&os](const char* name, const SubsetCounts& c) {
    os << name;
    for (std::size_t pad = std::string(name).size(); pad < 16; ++pad) os << ' ';
    os << c.images << " | " << c.ids << '\n';
  };
  row("Training", training);
  row("Database Only", database_only);
  row("Query", query);
  os << "seen ids: " << seen_ids << "\nunseen ids: " << unseen_ids
     << "\ntotal images: " << total_images << '\n';
  os << "violations: " << violations.size() << '\n';
  for (const auto& v : violations) os << "  " << v.kind << ": " << v.detail << '\n';
  return os.str();
}

ValidationReport validate_split(const SplitAssignment& assignment,
                                const Manifest& manifest) {
  ValidationReport report;
  report.total_images = manifest.size();
  for (const auto& id : assignment.duplicate_images) {
    report.violations.push_back({"duplicate-role", id});
  }

  std::set<std::string> manifest_ids;
  std::map<std::string, std::set<std::string>> role_ids[3];
  std::map<std::string, std::vector<const ManifestRecord*>> per_identity;
  for (const auto& r : manifest) {
    manifest_ids.insert(r.image_id);
    per_identity[r.identity_id].push_back(&r);
    auto role_it = assignment.roles.find(r.image_id);
    if (role_it == assignment.roles.end()) {
      report.violations.push_back({"missing-role", r.image_id});
      continue;
    }
    auto group_it = assignment.groups.find(r.identity_id);
    if (group_it == assignment.groups.end()) {
      report.violations.push_back({"missing-group", r.identity_id});
      continue;
    }
    const Role role = role_it->second;
    if (role == Role::TrainAndDatabase &&
        group_it->second == IdentityGroup::UnseenIds) {
      report.violations.push_back(
          {"unseen-leak", r.image_id + " of unseen identity " + r.identity_id});
    }
    role_ids[static_cast<int>(role)][r.identity_id].insert(r.image_id);
  }
  for (const auto& [image_id, role] : assignment.roles) {
    if (!manifest_ids.contains(image_id)) {
      report.violations.push_back({"unknown-image", image_id});
    }
  }

  for (const auto& [identity, images] : per_identity) {
    std::size_t db = 0, q = 0;
    std::optional<std::int64_t> max_db, min_q;
    for (auto* r : images) {
      auto it = assignment.roles.find(r->image_id);
      if (it == assignment.roles.end()) continue;
      if (in_database(it->second)) {
        ++db;
        if (r->timestamp) max_db = std::max(max_db.value_or(*r->timestamp), *r->timestamp);
      } else {
        ++q;
        if (r->timestamp) min_q = std::min(min_q.value_or(*r->timestamp), *r->timestamp);
      }
    }
    if (q > 0 && db == 0) report.violations.push_back({"open-set", identity});
    if (assignment.time_aware && max_db && min_q && *max_db > *min_q) {
      report.violations.push_back({"time-order", identity});
    }
  }

  auto fill = [&](Role role, SubsetCounts& c) {
    for (const auto& [identity, ids] : role_ids[static_cast<int>(role)]) {
      c.images += ids.size();
      ++c.ids;
    }
  };
  fill(Role::TrainAndDatabase, report.training);
  fill(Role::DatabaseOnly, report.database_only);
  fill(Role::Query, report.query);
  for (const auto& [identity, group] : assignment.groups) {
    (group == IdentityGroup::SeenIds ? report.seen_ids : report.unseen_ids)++;
  }
  return report;
}

void write_assignment(const std::filesystem::path& path,
                      const SplitAssignment& assignment,
                      const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : manifest) {
    auto role = assignment.roles.find(r.image_id);
    auto group = assignment.groups.find(r.identity_id);
    if (role == assignment.roles.end() || group == assignment.groups.end()) {
      throw ValidationError("assignment does not cover image " + r.image_id);
    }
    nlohmann::json j;
    j["image_id"] = r.image_id;
    j["role"] = std::string(to_string(role->second));
    j["identity_group"] = std::string(to_string(group->second));
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

SplitAssignment read_assignment(const std::filesystem::path& path,
                                const Manifest& manifest) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open assignment " + path.string());
  std::map<std::string, std::string> identity_of;
  for (const auto& r : manifest) identity_of[r.image_id] = r.identity_id;

  SplitAssignment out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto image_id = j.at("image_id").get<std::string>();
      const Role role = parse_role(j.at("role").get<std::string>());
      const IdentityGroup group =
          parse_group(j.at("identity_group").get<std::string>());
      if (!out.roles.emplace(image_id, role).second) {
        out.duplicate_images.push_back(image_id);
      }
      if (auto it = identity_of.find(image_id); it != identity_of.end()) {
        out.groups.emplace(it->second, group);
      }
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": " + e.what());
    }
  }
  return out;
}

}  // namespace dreid::splitter
