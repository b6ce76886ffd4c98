#pragma once

// Brute-force evaluation straight from the metric definitions. Shares no
// code with the library apart from the data types.

#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dreid/retrieval.hpp"
#include "dreid/rng.hpp"

namespace dreid::testing {

using Ranking = std::vector<std::pair<std::string, double>>;

/// Selection-sort ranking on raw cosine = a.b / (|a||b|).
inline Ranking oracle_rank(const retrieval::EmbeddingMatrix& q, std::size_t qi,
                           const retrieval::EmbeddingMatrix& db) {
  std::vector<std::pair<std::string, double>> pool;
  const auto a = q.row(qi);
  double na = 0.0;
  for (double v : a) na += v * v;
  for (std::size_t j = 0; j < db.size(); ++j) {
    if (db.ids()[j] == q.ids()[qi]) continue;
    const auto b = db.row(j);
    double dot = 0.0, nb = 0.0;
    for (std::size_t c = 0; c < a.size(); ++c) {
      dot += a[c] * b[c];
      nb += b[c] * b[c];
    }
    pool.emplace_back(db.ids()[j], dot / (std::sqrt(na) * std::sqrt(nb)));
  }
  Ranking out;
  while (!pool.empty()) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < pool.size(); ++j) {
      if (pool[j].second > pool[best].second ||
          (pool[j].second == pool[best].second && pool[j].first < pool[best].first)) {
        best = j;
      }
    }
    out.push_back(pool[best]);
    pool.erase(pool.begin() + static_cast<long>(best));
  }
  return out;
}

using IdentityOf = std::unordered_map<std::string, std::string>;

/// Fraction of queries with any correct identity among the first k.
inline double oracle_rank_k(const std::vector<std::string>& query_ids,
                            const std::vector<Ranking>& rankings,
                            const IdentityOf& identity_of, std::size_t k) {
  double hits = 0.0;
  for (std::size_t i = 0; i < rankings.size(); ++i) {
    bool found = false;
    for (std::size_t p = 0; p < k && p < rankings[i].size(); ++p) {
      found = found || identity_of.at(rankings[i][p].first) ==
                           identity_of.at(query_ids[i]);
    }
    hits += found ? 1.0 : 0.0;
  }
  return hits / static_cast<double>(rankings.size());
}

/// AP = mean over relevant positions p of precision@p.
inline double oracle_ap(const std::string& query_id, const Ranking& ranking,
                        const IdentityOf& identity_of) {
  const std::string& want = identity_of.at(query_id);
  double sum = 0.0;
  int relevant = 0;
  for (std::size_t p = 0; p < ranking.size(); ++p) {
    if (identity_of.at(ranking[p].first) != want) continue;
    ++relevant;
    int within = 0;
    for (std::size_t r = 0; r <= p; ++r) {
      within += identity_of.at(ranking[r].first) == want ? 1 : 0;
    }
    sum += static_cast<double>(within) / static_cast<double>(p + 1);
  }
  return sum / relevant;
}

struct RetrievalInstance {
  retrieval::EmbeddingMatrix queries;
  retrieval::EmbeddingMatrix database;
  IdentityOf identity_of;
};

/// Closed-set random instance: every query identity has a database image.
/// Vectors are drawn from a few clusters so rankings are non-trivial.
inline RetrievalInstance random_instance(std::uint64_t seed, std::size_t n_query,
                                         std::size_t n_db, std::size_t dim,
                                         std::size_t n_ids) {
  SeededRng rng(seed);
  std::vector<std::vector<double>> centers(n_ids, std::vector<double>(dim));
  for (auto& c : centers) {
    for (double& v : c) v = rng.normal();
  }
  RetrievalInstance inst;
  auto draw = [&](const std::string& prefix, std::size_t n, bool db) {
    std::vector<std::string> ids;
    std::vector<double> values;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t identity = db && i < n_ids
                                 ? i
                                 : static_cast<std::size_t>(rng.uniform_int(
                                       0, static_cast<std::int64_t>(std::min(n_ids, n_db)) - 1));
      const std::string id = prefix + std::to_string(1000 + i);
      ids.push_back(id);
      inst.identity_of[id] = "ind" + std::to_string(identity);
      for (std::size_t c = 0; c < dim; ++c) {
        values.push_back(centers[identity][c] + 0.8 * rng.normal());
      }
    }
    return retrieval::EmbeddingMatrix(std::move(ids), dim, std::move(values));
  };
  inst.database = draw("d", n_db, true);
  inst.queries = draw("q", n_query, false);
  return inst;
}

}  // namespace dreid::testing
