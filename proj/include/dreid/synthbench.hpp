#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "dreid/curricular.hpp"
#include "dreid/degrade.hpp"
#include "dreid/image.hpp"
#include "dreid/manifest.hpp"
#include "dreid/retrieval.hpp"
#include "dreid/splitter.hpp"

namespace dreid::synthbench {

// ---- procedural identities ----

struct Blob {
  double x = 0.0, y = 0.0;  // pattern coordinates in [-1, 1]
  double sigma = 0.1;
  double amplitude = 0.0;
};

struct Stripes {
  double angle = 0.0;
  double period = 0.1;
  double phase = 0.0;
  double amplitude = 0.0;
};

/// Spot/stripe texture fully determined by `seed`.
struct SyntheticIdentity {
  std::uint64_t seed = 0;
  double background = 0.5;
  std::vector<Blob> blobs;  // coarse and fine spots
  Stripes stripes;
};

SyntheticIdentity make_identity(std::uint64_t seed);

/// Upper bounds of the per-encounter jitter.
struct JitterBounds {
  double translation = 0.10;  // fraction of the side
  double rotation_deg = 15.0;
  double scale_low = 0.9;
  double scale_high = 1.1;
  double photometric = 0.10;  // brightness and contrast

  void validate() const;
};

struct EncounterSpec {
  std::size_t identity = 0;
  std::uint64_t instance_seed = 0;
  double dx = 0.0, dy = 0.0;  // fraction of the side
  double rotation = 0.0;      // radians
  double scale = 1.0;
  double brightness = 0.0;
  double contrast = 1.0;
};

EncounterSpec sample_encounter(std::size_t identity, std::uint64_t instance_seed,
                               const JitterBounds& bounds);

/// Grayscale side x side rendering of one encounter.
Image render(const SyntheticIdentity& identity, const EncounterSpec& encounter,
             int side = kPipelineSide);

/// Area-pooled grayscale grid x grid, row-major. Side must divide evenly.
std::vector<double> pool_features(const Image& img, int grid = 32);

Image center_crop(const Image& img, int side);

/// Embedder input: the central crop_side square, area-pooled to 32x32.
std::vector<double> embedder_features(const Image& img, int crop_side);

/// Normalized cross-correlation of two equally sized vectors.
double ncc(const std::vector<double>& a, const std::vector<double>& b);

// ---- configuration ----

/// std::nullopt stands for "none" (clean).
using PipelineChoice = std::optional<degrade::PipelineKind>;
std::string choice_name(const PipelineChoice& choice);
PipelineChoice parse_choice(std::string_view name);

struct BenchConfig {
  std::uint64_t seed = 0;
  int n_identities = 100;
  int images_per_identity = 20;
  double unseen_fraction = 0.2;
  double query_fraction_seen = 0.2;
  double query_fraction_unseen = 0.24;
  std::vector<PipelineChoice> train_pipelines = {
      std::nullopt, degrade::PipelineKind::Simple, degrade::PipelineKind::Diverse,
      degrade::PipelineKind::DiversePlus};
  std::vector<PipelineChoice> query_conditions = {
      std::nullopt, degrade::PipelineKind::Diverse, degrade::PipelineKind::DiversePlus};
  // Encounter jitter well inside the maxima: a clean-trained model then
  // keys on precise fine detail, which is what degradation removes.
  JitterBounds jitter = {0.005, 1.0, 0.99, 1.01, 0.10};

  // Embedder and optimizer.
  int hidden = 90;
  int embedding_dim = 64;
  int epochs = 80;
  int batch_size = 32;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  curricular::LossParams loss;
  double ema_momentum = 0.99;

  // Online degradation: each training sample is swapped for one of
  // `bank_variants` pre-degraded versions with this probability.
  double degrade_probability = 0.5;
  int bank_variants = 8;

  /// Side of the central square the embedder pools to 32x32.
  int crop_side = 160;

  int workers = 1;

  void validate() const;
};

/// `key = value` lines, '#' comments. Lists are comma separated.
BenchConfig load_bench_config(const std::filesystem::path& path);
BenchConfig parse_bench_config(const std::string& text);
nlohmann::json to_json(const BenchConfig& config);

// ---- dataset ----

struct SyntheticDataset {
  std::vector<SyntheticIdentity> identities;
  std::vector<EncounterSpec> encounters;  // parallel to manifest
  Manifest manifest;

  Image render_image(std::size_t i) const;
};

/// Identities are regenerated until every pair has NCC < 0.9 on the
/// canonical 32x32 rendering.
SyntheticDataset generate_dataset(const BenchConfig& config);

// ---- embedder ----

/// 32x32 standardized input -> ReLU hidden layer -> linear -> unit norm.
class TinyEmbedder {
 public:
  static constexpr int kInput = 32 * 32;

  TinyEmbedder(int hidden, int dim, std::uint64_t seed);

  int hidden() const { return hidden_; }
  int dim() const { return dim_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<double>& parameters() const { return params_; }
  std::vector<double>& parameters() { return params_; }

  /// Unit-norm embedding of pooled features.
  std::vector<double> embed(const std::vector<double>& features) const;

  struct Cache {
    std::vector<double> input, hidden, output, embedding;
    double norm = 0.0;
  };
  std::vector<double> forward(const std::vector<double>& features, Cache& cache) const;
  /// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(embedding).
  void backward(const Cache& cache, const std::vector<double>& d_embedding,
                std::vector<double>& grad) const;

 private:
  int hidden_;
  int dim_;
  std::vector<double> params_;  // W1, b1, W2, b2
};

/// Precomputed pooled features for the training subset.
struct TrainingData {
  std::vector<std::size_t> images;             // manifest indices
  std::vector<std::size_t> labels;             // class per image
  std::size_t classes = 0;
  std::vector<std::vector<double>> clean;      // per image
  /// variants[i][v]: v-th degraded version of image i; empty for "none".
  std::vector<std::vector<std::vector<double>>> variants;
};

/// Enforces that only TrainAndDatabase images of seen identities reach
/// the optimizer; throws ValidationError otherwise.
class TrainingLoader {
 public:
  TrainingLoader(const Manifest& manifest, const splitter::SplitAssignment& assignment);

  const std::vector<std::size_t>& eligible() const { return eligible_; }
  void admit(std::size_t manifest_index);
  const std::set<std::string>& touched() const { return touched_; }

 private:
  const Manifest* manifest_;
  const splitter::SplitAssignment* assignment_;
  std::vector<std::size_t> eligible_;
  std::set<std::string> touched_;
};

TrainingData prepare_training_data(const SyntheticDataset& dataset,
                                   TrainingLoader& loader, const PipelineChoice& pipeline,
                                   const BenchConfig& config);

struct TrainingLog {
  std::vector<double> epoch_loss;
  std::set<std::string> touched;  // manifest ids seen by the optimizer
};

TinyEmbedder train_embedder(const TrainingData& data, const PipelineChoice& pipeline,
                            const BenchConfig& config, TrainingLoader& loader,
                            TrainingLog* log = nullptr);

// ---- experiment grid ----

struct GridRecord {
  std::string train_pipeline;
  std::string query_condition;
  std::string stratum;  // all, SeenIds, UnseenIds
  retrieval::Metrics metrics;
};

struct GridReport {
  nlohmann::json config;
  std::vector<GridRecord> records;

  const GridRecord& find(std::string_view train, std::string_view query,
                         std::string_view stratum) const;
  double rank1(std::string_view train, std::string_view query,
               std::string_view stratum = "all") const;
};

GridReport run_experiment_grid(const BenchConfig& config);

nlohmann::json to_json(const GridReport& report);
GridReport grid_from_json(const nlohmann::json& j);

}  // namespace dreid::synthbench
