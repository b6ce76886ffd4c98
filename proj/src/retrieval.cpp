#include "dreid/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dreid/errors.hpp"
#include "dreid/parallel.hpp"

namespace dreid::retrieval {

using nlohmann::json;

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<double> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw ParameterError("embedding dimension must be >= 1");
  if (values_.size() != ids_.size() * dim_) {
    throw ParameterError("embedding values do not match n*d");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw ValidationError("non-finite embedding value");
  }
}

EmbeddingMatrix EmbeddingMatrix::normalized() const {
  std::vector<double> out(values_.size());
  for (std::size_t i = 0; i < size(); ++i) {
    double ss = 0.0;
    for (double v : row(i)) ss += v * v;
    if (ss == 0.0) throw ValidationError("zero embedding for " + ids_[i]);
    const double inv = 1.0 / std::sqrt(ss);
    for (std::size_t j = 0; j < dim_; ++j) {
      out[i * dim_ + j] = values_[i * dim_ + j] * inv;
    }
  }
  return EmbeddingMatrix(ids_, dim_, std::move(out));
}

// ---- EMB1 ----

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{bytes_[pos_ + b]} << (8 * b);
    pos_ += 4;
    return v;
  }

  void bytes(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ValidationError("EMB1 at byte offset " + std::to_string(pos_) + ": " + msg);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      fail(std::string("truncated ") + what + " (need " + std::to_string(n) +
           " bytes, have " + std::to_string(remaining()) + ")");
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_embeddings(const EmbeddingMatrix& m) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, static_cast<std::uint32_t>(m.size()));
  put_u32(out, static_cast<std::uint32_t>(m.dim()));
  for (double v : m.values()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  for (const auto& id : m.ids()) {
    put_u32(out, static_cast<std::uint32_t>(id.size()));
    out.insert(out.end(), id.begin(), id.end());
  }
  return out;
}

EmbeddingMatrix decode_embeddings(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ValidationError("EMB1 at byte offset 0: bad magic");
  }
  const std::uint32_t n = r.u32("row count");
  const std::uint32_t d = r.u32("dimension");
  if (d == 0) r.fail("dimension is zero");
  const std::uint64_t floats = std::uint64_t{n} * d;
  if (floats * 4 > r.remaining()) {
    r.fail("truncated vectors (need " + std::to_string(floats * 4) + " bytes, have " +
           std::to_string(r.remaining()) + ")");
  }
  std::vector<double> values(floats);
  for (auto& v : values) {
    const std::size_t at = r.pos();
    const float f = std::bit_cast<float>(r.u32("vector"));
    if (!std::isfinite(f)) {
      throw ValidationError("EMB1 at byte offset " + std::to_string(at) +
                            ": non-finite value");
    }
    v = f;
  }
  std::vector<std::string> ids(n);
  for (auto& id : ids) {
    const std::uint32_t len = r.u32("id length");
    id.resize(len);
    r.bytes(id.data(), len, "id");
  }
  if (r.remaining() != 0) r.fail("trailing bytes");
  return EmbeddingMatrix(std::move(ids), d, std::move(values));
}

void write_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& m) {
  const auto bytes = encode_embeddings(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

EmbeddingMatrix read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_embeddings(bytes);
}

// ---- search ----

std::vector<RankedResult> search(const EmbeddingMatrix& queries,
                                 const EmbeddingMatrix& database, std::size_t top_k,
                                 int workers) {
  if (queries.size() > 0 && database.size() > 0 && queries.dim() != database.dim()) {
    throw ParameterError("dimension mismatch: query d=" + std::to_string(queries.dim()) +
                         ", database d=" + std::to_string(database.dim()));
  }
  if (top_k > database.size()) {
    throw ParameterError("top_k exceeds database size");
  }
  const EmbeddingMatrix q = queries.normalized();
  const EmbeddingMatrix db = database.normalized();
  std::vector<RankedResult> results(q.size());
  parallel_for(q.size(), workers, [&](std::size_t i) {
    RankedResult& res = results[i];
    res.query_id = q.ids()[i];
    res.matches.reserve(db.size());
    const auto qi = q.row(i);
    for (std::size_t j = 0; j < db.size(); ++j) {
      if (db.ids()[j] == res.query_id) continue;
      const auto dj = db.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < qi.size(); ++c) dot += qi[c] * dj[c];
      res.matches.push_back({db.ids()[j], dot});
    }
    const auto before = [](const Match& a, const Match& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.image_id < b.image_id;
    };
    const std::size_t keep = top_k == 0 ? res.matches.size()
                                        : std::min(top_k, res.matches.size());
    std::partial_sort(res.matches.begin(), res.matches.begin() + keep,
                      res.matches.end(), before);
    res.matches.resize(keep);
  });
  return results;
}

// ---- metrics ----

IdentityIndex::IdentityIndex(std::unordered_map<std::string, std::string> identity_of,
                             const std::vector<std::string>& database_ids)
    : identity_of_(std::move(identity_of)) {
  for (const auto& id : database_ids) {
    if (!database_.insert(id).second) {
      throw ValidationError("duplicate database image " + id);
    }
    ++per_identity_[identity(id)];
  }
}

namespace {

std::unordered_map<std::string, std::string> identity_map(const Manifest& manifest) {
  std::unordered_map<std::string, std::string> out;
  for (const auto& r : manifest) out[r.image_id] = r.identity_id;
  return out;
}

}  // namespace

IdentityIndex::IdentityIndex(const Manifest& manifest,
                             const std::vector<std::string>& database_ids)
    : IdentityIndex(identity_map(manifest), database_ids) {}

const std::string& IdentityIndex::identity(const std::string& image_id) const {
  const auto it = identity_of_.find(image_id);
  if (it == identity_of_.end()) throw ValidationError("unknown image " + image_id);
  return it->second;
}

std::size_t IdentityIndex::relevant_count(const std::string& query_id) const {
  const auto it = per_identity_.find(identity(query_id));
  std::size_t n = it == per_identity_.end() ? 0 : it->second;
  if (database_.contains(query_id)) --n;
  return n;
}

std::size_t IdentityIndex::ranking_length(const std::string& query_id) const {
  return database_.size() - (database_.contains(query_id) ? 1 : 0);
}

std::size_t first_correct_rank(const RankedResult& result, const IdentityIndex& index) {
  if (index.relevant_count(result.query_id) == 0) {
    throw ValidationError("open-set query " + result.query_id + ": identity " +
                          index.identity(result.query_id) + " not in database");
  }
  const std::string& want = index.identity(result.query_id);
  for (std::size_t p = 0; p < result.matches.size(); ++p) {
    if (index.identity(result.matches[p].image_id) == want) return p + 1;
  }
  return 0;
}

namespace {

std::vector<std::size_t> first_ranks(const std::vector<RankedResult>& results,
                                     const IdentityIndex& index) {
  if (results.empty()) throw ValidationError("no queries to evaluate");
  std::vector<std::size_t> ranks;
  ranks.reserve(results.size());
  for (const auto& r : results) ranks.push_back(first_correct_rank(r, index));
  return ranks;
}

double fraction_within(const std::vector<std::size_t>& ranks, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += (r != 0 && r <= k);
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

}  // namespace

double rank_k_accuracy(const std::vector<RankedResult>& results,
                       const IdentityIndex& index, std::size_t k) {
  if (k == 0) throw ParameterError("k must be >= 1");
  return fraction_within(first_ranks(results, index), k);
}

std::vector<double> cmc_curve(const std::vector<RankedResult>& results,
                              const IdentityIndex& index, std::size_t max_k) {
  const auto ranks = first_ranks(results, index);
  std::vector<double> curve(max_k);
  for (std::size_t k = 1; k <= max_k; ++k) curve[k - 1] = fraction_within(ranks, k);
  return curve;
}

double average_precision(const RankedResult& result, const IdentityIndex& index) {
  const std::size_t relevant = index.relevant_count(result.query_id);
  if (relevant == 0) {
    throw ValidationError("open-set query " + result.query_id);
  }
  if (result.matches.size() != index.ranking_length(result.query_id)) {
    throw ParameterError("average precision needs the full ranking for " +
                         result.query_id);
  }
  const std::string& want = index.identity(result.query_id);
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t p = 0; p < result.matches.size(); ++p) {
    if (index.identity(result.matches[p].image_id) == want) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(p + 1);
    }
  }
  return sum / static_cast<double>(relevant);
}

double mean_average_precision(const std::vector<RankedResult>& results,
                              const IdentityIndex& index) {
  if (results.empty()) throw ValidationError("no queries to evaluate");
  double sum = 0.0;
  for (const auto& r : results) sum += average_precision(r, index);
  return sum / static_cast<double>(results.size());
}

Metrics evaluate(const std::vector<RankedResult>& results, const IdentityIndex& index,
                 const std::vector<std::size_t>& ranks, std::size_t max_k) {
  Metrics m;
  m.queries = results.size();
  const auto first = first_ranks(results, index);
  for (std::size_t k : ranks) {
    if (k == 0) throw ParameterError("k must be >= 1");
    m.rank_k[k] = fraction_within(first, k);
  }
  m.cmc.resize(max_k);
  for (std::size_t k = 1; k <= max_k; ++k) m.cmc[k - 1] = fraction_within(first, k);
  m.map = mean_average_precision(results, index);
  return m;
}

MetricsReport stratified_report(const std::vector<RankedResult>& results,
                                const IdentityIndex& index, const Manifest& manifest,
                                const splitter::SplitAssignment* assignment,
                                const std::vector<std::string>& strata,
                                const std::vector<std::size_t>& ranks,
                                std::size_t max_k) {
  std::unordered_map<std::string, const ManifestRecord*> by_id;
  for (const auto& r : manifest) by_id[r.image_id] = &r;

  MetricsReport report;
  report.overall = evaluate(results, index, ranks, max_k);
  for (const auto& key : strata) {
    if (key != "clarity" && key != "group" && key != "dataset") {
      throw ParameterError("unknown stratum key '" + key +
                           "' (expected clarity, group or dataset)");
    }
    if (key == "group" && assignment == nullptr) {
      throw ParameterError("stratum 'group' needs a split assignment");
    }
    std::map<std::string, std::vector<RankedResult>> buckets;
    for (const auto& res : results) {
      const auto it = by_id.find(res.query_id);
      if (it == by_id.end()) throw ValidationError("query not in manifest: " + res.query_id);
      const ManifestRecord& rec = *it->second;
      std::string value = "unknown";
      if (key == "clarity") {
        if (rec.clarity) value = std::to_string(*rec.clarity);
      } else if (key == "dataset") {
        if (!rec.dataset.empty()) value = rec.dataset;
      } else {
        const auto g = assignment->groups.find(rec.identity_id);
        if (g != assignment->groups.end()) value = std::string(splitter::to_string(g->second));
      }
      buckets[value].push_back(res);
    }
    auto& out = report.strata[key];
    for (const auto& [value, bucket] : buckets) {
      out[value] = evaluate(bucket, index, ranks, max_k);
    }
  }
  return report;
}

json to_json(const Metrics& m) {
  json rank_k = json::object();
  for (const auto& [k, v] : m.rank_k) rank_k[std::to_string(k)] = v;
  return {{"queries", m.queries}, {"rank_k", rank_k}, {"cmc", m.cmc}, {"map", m.map}};
}

json to_json(const MetricsReport& r) {
  json strata = json::object();
  for (const auto& [key, values] : r.strata) {
    json j = json::object();
    for (const auto& [value, m] : values) j[value] = to_json(m);
    strata[key] = j;
  }
  return {{"overall", to_json(r.overall)}, {"strata", strata}};
}

Metrics metrics_from_json(const json& j) {
  try {
    Metrics m;
    m.queries = j.at("queries").get<std::size_t>();
    for (const auto& [k, v] : j.at("rank_k").items()) {
      m.rank_k[std::stoul(k)] = v.get<double>();
    }
    m.cmc = j.at("cmc").get<std::vector<double>>();
    m.map = j.at("map").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed metrics: ") + e.what());
  }
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  if (!j.contains("overall")) throw ValidationError("metrics report lacks 'overall'");
  r.overall = metrics_from_json(j.at("overall"));
  if (j.contains("strata")) {
    for (const auto& [key, values] : j.at("strata").items()) {
      for (const auto& [value, m] : values.items()) {
        r.strata[key][value] = metrics_from_json(m);
      }
    }
  }
  return r;
}

}  // namespace dreid::retrieval
