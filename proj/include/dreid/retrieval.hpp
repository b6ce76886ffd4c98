#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dreid/manifest.hpp"
#include "dreid/splitter.hpp"

namespace dreid::retrieval {

/// n x d row-major feature vectors keyed by image id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                  std::vector<double> values);

  std::size_t size() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<double>& values() const { return values_; }
  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }

  /// Copy with every row scaled to unit L2 norm. Zero rows are rejected.
  EmbeddingMatrix normalized() const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

/// EMB1 layout: magic, u32 n, u32 d, n*d f32, then n u32-length-prefixed
/// UTF-8 ids. All integers and floats little-endian. Values are stored as
/// f32, so write->read is exact only for f32-representable inputs.
std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m);
EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes);
void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::filesystem::path& path);

struct Match {
  std::string image_id;
  double score = 0.0;
};

struct RankedResult {
  std::string query_id;
  std::vector<Match> matches;  // descending score, ties by ascending id
};

/// Exhaustive cosine ranking. top_k = 0 keeps the full ranking. A
/// database entry sharing the query's image id is skipped.
std::vector<RankedResult> search(const EmbeddingMatrix& queries,
                                 const EmbeddingMatrix& database,
                                 std::size_t top_k = 0, int workers = 1);

/// Image -> identity lookup plus what the metrics need to know about the
/// database: its size and the number of images per identity.
class IdentityIndex {
 public:
  IdentityIndex(std::unordered_map<std::string, std::string> identity_of,
                const std::vector<std::string>& database_ids);
  IdentityIndex(const Manifest& manifest, const std::vector<std::string>& database_ids);

  const std::string& identity(const std::string& image_id) const;
  /// Database images of the query's identity, excluding the query itself.
  std::size_t relevant_count(const std::string& query_id) const;
  /// Length of a full ranking for this query.
  std::size_t ranking_length(const std::string& query_id) const;

 private:
  std::unordered_map<std::string, std::string> identity_of_;
  std::unordered_map<std::string, std::size_t> per_identity_;
  std::set<std::string> database_;
};

/// 1-based rank of the first correct match, 0 if none in the list.
/// Throws ValidationError when the query identity is absent from the
/// database.
std::size_t first_correct_rank(const RankedResult& result, const IdentityIndex& index);

double rank_k_accuracy(const std::vector<RankedResult>& results,
                       const IdentityIndex& index, std::size_t k);
/// Rank-k for k = 1..max_k.
std::vector<double> cmc_curve(const std::vector<RankedResult>& results,
                              const IdentityIndex& index, std::size_t max_k);
/// Needs full rankings (search with top_k = 0).
double average_precision(const RankedResult& result, const IdentityIndex& index);
double mean_average_precision(const std::vector<RankedResult>& results,
                              const IdentityIndex& index);

inline const std::vector<std::size_t> kDefaultRanks = {1, 5, 10, 20};

struct Metrics {
  std::size_t queries = 0;
  std::map<std::size_t, double> rank_k;
  std::vector<double> cmc;
  double map = 0.0;

  bool operator==(const Metrics&) const = default;
};

struct MetricsReport {
  Metrics overall;
  /// stratum key ("clarity", "group", "dataset") -> value -> metrics.
  std::map<std::string, std::map<std::string, Metrics>> strata;

  bool operator==(const MetricsReport&) const = default;
};

Metrics evaluate(const std::vector<RankedResult>& results, const IdentityIndex& index,
                 const std::vector<std::size_t>& ranks = kDefaultRanks,
                 std::size_t max_k = 20);

/// Queries lacking a stratum field are reported under "unknown". The
/// "group" key needs an assignment.
MetricsReport stratified_report(const std::vector<RankedResult>& results,
                                const IdentityIndex& index, const Manifest& manifest,
                                const splitter::SplitAssignment* assignment,
                                const std::vector<std::string>& strata,
                                const std::vector<std::size_t>& ranks = kDefaultRanks,
                                std::size_t max_k = 20);

nlohmann::json to_json(const Metrics& m);
nlohmann::json to_json(const MetricsReport& r);
Metrics metrics_from_json(const nlohmann::json& j);
MetricsReport report_from_json(const nlohmann::json& j);

}  // namespace dreid::retrieval
