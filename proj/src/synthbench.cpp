#include "dreid/synthbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "dreid/errors.hpp"
#include "dreid/parallel.hpp"
#include "dreid/rng.hpp"

namespace dreid::synthbench {

using nlohmann::json;
using degrade::PipelineKind;

// ---- procedural identities ----

SyntheticIdentity make_identity(std::uint64_t seed) {
  // Faint coarse blobs survive heavy degradation; dense fine spots carry
  // most of the contrast and do not.
  SeededRng rng(seed);
  SyntheticIdentity id;
  id.seed = seed;
  id.background = rng.uniform(0.35, 0.65);
  auto sign = [&rng] { return rng.uniform01() < 0.5 ? -1.0 : 1.0; };
  const auto coarse = rng.uniform_int(8, 12);
  for (std::int64_t i = 0; i < coarse; ++i) {
    id.blobs.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                        rng.uniform(0.07, 0.14), sign() * rng.uniform(0.01, 0.02)});
  }
  const auto fine = rng.uniform_int(500, 600);
  for (std::int64_t i = 0; i < fine; ++i) {
    id.blobs.push_back({rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                        rng.uniform(0.012, 0.024), sign() * rng.uniform(0.2, 0.4)});
  }
  id.stripes = {rng.uniform(0.0, std::numbers::pi), rng.uniform(0.03, 0.06),
                rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.03, 0.08)};
  return id;
}

void JitterBounds::validate() const {
  if (!(translation >= 0.0 && translation <= 0.10)) {
    throw ParameterError("jitter translation must lie in [0, 0.10]");
  }
  if (!(rotation_deg >= 0.0 && rotation_deg <= 15.0)) {
    throw ParameterError("jitter rotation must lie in [0, 15] degrees");
  }
  if (!(scale_low >= 0.9 && scale_low <= scale_high && scale_high <= 1.1)) {
    throw ParameterError("jitter scale must satisfy 0.9 <= low <= high <= 1.1");
  }
  if (!(photometric >= 0.0 && photometric <= 0.10)) {
    throw ParameterError("photometric jitter must lie in [0, 0.10]");
  }
}

EncounterSpec sample_encounter(std::size_t identity, std::uint64_t instance_seed,
                               const JitterBounds& b) {
  SeededRng rng(instance_seed);
  EncounterSpec e;
  e.identity = identity;
  e.instance_seed = instance_seed;
  e.dx = rng.uniform(-b.translation, b.translation);
  e.dy = rng.uniform(-b.translation, b.translation);
  e.rotation = rng.uniform(-b.rotation_deg, b.rotation_deg) * std::numbers::pi / 180.0;
  e.scale = b.scale_low == b.scale_high ? b.scale_low : rng.uniform(b.scale_low, b.scale_high);
  e.brightness = rng.uniform(-b.photometric, b.photometric);
  e.contrast = 1.0 + rng.uniform(-b.photometric, b.photometric);
  return e;
}

Image render(const SyntheticIdentity& identity, const EncounterSpec& e, int side) {
  // Pattern point u lands at p = scale * R u + t in [-1, 1]^2 image units.
  const double c = std::cos(e.rotation), s = std::sin(e.rotation);
  const double tx = 2.0 * e.dx, ty = 2.0 * e.dy;
  const double px_per_unit = side / 2.0;
  auto to_unit = [&](int px) { return (px + 0.5) / px_per_unit - 1.0; };

  // Stripe phase is linear in p: (p - t) . (R d) / scale.
  const Stripes& st = identity.stripes;
  const double dxs = std::cos(st.angle), dys = std::sin(st.angle);
  const double rdx = (c * dxs - s * dys) / e.scale, rdy = (s * dxs + c * dys) / e.scale;
  const double k = 2.0 * std::numbers::pi / st.period;

  Image img(side, side, 1);
  for (int y = 0; y < side; ++y) {
    const double py = to_unit(y) - ty;
    for (int x = 0; x < side; ++x) {
      const double px = to_unit(x) - tx;
      img.at(y, x) = identity.background +
                     st.amplitude * std::sin(k * (px * rdx + py * rdy) + st.phase);
    }
  }
  for (const Blob& b : identity.blobs) {
    const double cx = e.scale * (c * b.x - s * b.y) + tx;
    const double cy = e.scale * (s * b.x + c * b.y) + ty;
    const double sigma = e.scale * b.sigma;
    const double reach = 4.0 * sigma;
    const int x0 = std::max(0, static_cast<int>(std::floor((cx - reach + 1.0) * px_per_unit)));
    const int x1 = std::min(side - 1, static_cast<int>(std::ceil((cx + reach + 1.0) * px_per_unit)));
    const int y0 = std::max(0, static_cast<int>(std::floor((cy - reach + 1.0) * px_per_unit)));
    const int y1 = std::min(side - 1, static_cast<int>(std::ceil((cy + reach + 1.0) * px_per_unit)));
    const double inv = -0.5 / (sigma * sigma);
    for (int y = y0; y <= y1; ++y) {
      const double ddy = to_unit(y) - cy;
      for (int x = x0; x <= x1; ++x) {
        const double ddx = to_unit(x) - cx;
        img.at(y, x) += b.amplitude * std::exp(inv * (ddx * ddx + ddy * ddy));
      }
    }
  }
  for (double& v : img.samples()) v = e.contrast * (v - 0.5) + 0.5 + e.brightness;
  img.clamp01();
  return img;
}

std::vector<double> pool_features(const Image& img, int grid) {
  if (img.height() % grid != 0 || img.width() % grid != 0) {
    throw ParameterError("image side not divisible by the pooling grid");
  }
  const int bh = img.height() / grid, bw = img.width() / grid;
  std::vector<double> out(static_cast<std::size_t>(grid) * grid, 0.0);
  const double norm = 1.0 / (bh * bw * img.channels());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      double v = 0.0;
      for (int ch = 0; ch < img.channels(); ++ch) v += img.at(y, x, ch);
      out[static_cast<std::size_t>(y / bh) * grid + x / bw] += v;
    }
  }
  for (double& v : out) v *= norm;
  return out;
}

Image center_crop(const Image& img, int side) {
  if (side < 1 || side > img.height() || side > img.width()) {
    throw ParameterError("crop side out of range");
  }
  const int y0 = (img.height() - side) / 2, x0 = (img.width() - side) / 2;
  Image out(side, side, img.channels());
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      for (int c = 0; c < img.channels(); ++c) out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    }
  }
  return out;
}

std::vector<double> embedder_features(const Image& img, int crop_side) {
  return pool_features(crop_side == img.height() ? img : center_crop(img, crop_side), 32);
}

double ncc(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty()) throw ParameterError("ncc size mismatch");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(b.size());
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  return aa == 0.0 || bb == 0.0 ? 0.0 : ab / std::sqrt(aa * bb);
}

// ---- configuration ----

std::string choice_name(const PipelineChoice& choice) {
  return choice ? std::string(degrade::to_string(*choice)) : "none";
}

PipelineChoice parse_choice(std::string_view name) {
  if (name == "none") return std::nullopt;
  return degrade::parse_pipeline_kind(name);
}

void BenchConfig::validate() const {
  if (n_identities < 2) throw ParameterError("n_identities must be >= 2");
  if (images_per_identity < 2) throw ParameterError("images_per_identity must be >= 2");
  for (double f : {unseen_fraction, query_fraction_seen, query_fraction_unseen}) {
    if (!(f > 0.0 && f < 1.0)) throw ParameterError("split fractions must lie in (0, 1)");
  }
  auto distinct = [](const std::vector<PipelineChoice>& v, const char* what) {
    if (v.empty()) throw ParameterError(std::string(what) + " must not be empty");
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = i + 1; j < v.size(); ++j) {
        if (v[i] == v[j]) throw ParameterError(std::string("duplicate entry in ") + what);
      }
    }
  };
  distinct(train_pipelines, "train_pipelines");
  distinct(query_conditions, "query_conditions");
  for (const auto& q : query_conditions) {
    if (q == PipelineKind::Simple) {
      throw ParameterError("query_conditions are none, diverse and diverse-plus");
    }
  }
  jitter.validate();
  if (hidden < 1 || embedding_dim < 1) throw ParameterError("layer sizes must be >= 1");
  if (epochs < 1 || batch_size < 1) throw ParameterError("epochs and batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be >= 0");
  loss.validate();
  if (!(ema_momentum > 0.0 && ema_momentum <= 1.0)) {
    throw ParameterError("ema_momentum must lie in (0, 1]");
  }
  if (!(degrade_probability >= 0.0 && degrade_probability <= 1.0)) {
    throw ParameterError("degrade_probability must lie in [0, 1]");
  }
  if (bank_variants < 1) throw ParameterError("bank_variants must be >= 1");
  if (crop_side < 32 || crop_side > kPipelineSide || crop_side % 32 != 0) {
    throw ParameterError("crop_side must be a multiple of 32 in [32, 384]");
  }
  if (workers < 0) throw ParameterError("workers must be >= 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') {
    out = out.substr(1, out.size() - 2);
  }
  return out;
}

std::vector<PipelineChoice> parse_choices(const std::string& value) {
  std::vector<PipelineChoice> out;
  std::string v = value;
  if (!v.empty() && v.front() == '[' && v.back() == ']') v = v.substr(1, v.size() - 2);
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_choice(trim(item)));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::exception&) {
  }
  throw ParameterError("bad number for " + key + ": '" + v + "'");
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ParameterError("expected an integer for " + key);
  return static_cast<int>(d);
}

}  // namespace

BenchConfig parse_bench_config(const std::string& text) {
  BenchConfig c;
  std::stringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParameterError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string v = trim(std::string_view(line).substr(eq + 1));
    if (key == "seed") {
      c.seed = std::stoull(v);
    } else if (key == "n_identities") {
      c.n_identities = to_int(key, v);
    } else if (key == "images_per_identity") {
      c.images_per_identity = to_int(key, v);
    } else if (key == "unseen_fraction") {
      c.unseen_fraction = to_double(key, v);
    } else if (key == "query_fraction_seen") {
      c.query_fraction_seen = to_double(key, v);
    } else if (key == "query_fraction_unseen") {
      c.query_fraction_unseen = to_double(key, v);
    } else if (key == "train_pipelines") {
      c.train_pipelines = parse_choices(v);
    } else if (key == "query_conditions") {
      c.query_conditions = parse_choices(v);
    } else if (key == "jitter_translation") {
      c.jitter.translation = to_double(key, v);
    } else if (key == "jitter_rotation_deg") {
      c.jitter.rotation_deg = to_double(key, v);
    } else if (key == "jitter_scale_low") {
      c.jitter.scale_low = to_double(key, v);
    } else if (key == "jitter_scale_high") {
      c.jitter.scale_high = to_double(key, v);
    } else if (key == "jitter_photometric") {
      c.jitter.photometric = to_double(key, v);
    } else if (key == "hidden") {
      c.hidden = to_int(key, v);
    } else if (key == "embedding_dim") {
      c.embedding_dim = to_int(key, v);
    } else if (key == "epochs") {
      c.epochs = to_int(key, v);
    } else if (key == "batch_size") {
      c.batch_size = to_int(key, v);
    } else if (key == "learning_rate") {
      c.learning_rate = to_double(key, v);
    } else if (key == "momentum") {
      c.momentum = to_double(key, v);
    } else if (key == "weight_decay") {
      c.weight_decay = to_double(key, v);
    } else if (key == "margin") {
      c.loss.margin = to_double(key, v);
    } else if (key == "scale") {
      c.loss.scale = to_double(key, v);
    } else if (key == "ema_momentum") {
      c.ema_momentum = to_double(key, v);
    } else if (key == "degrade_probability") {
      c.degrade_probability = to_double(key, v);
    } else if (key == "bank_variants") {
      c.bank_variants = to_int(key, v);
    } else if (key == "crop_side") {
      c.crop_side = to_int(key, v);
    } else if (key == "workers") {
      c.workers = to_int(key, v);
    } else {
      throw ParameterError("unknown config key '" + key + "' on line " +
                           std::to_string(lineno));
    }
  }
  c.validate();
  return c;
}

BenchConfig load_bench_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_bench_config(ss.str());
}

json to_json(const BenchConfig& c) {
  auto names = [](const std::vector<PipelineChoice>& v) {
    json out = json::array();
    for (const auto& p : v) out.push_back(choice_name(p));
    return out;
  };
  return {{"seed", c.seed},
          {"n_identities", c.n_identities},
          {"images_per_identity", c.images_per_identity},
          {"unseen_fraction", c.unseen_fraction},
          {"query_fraction_seen", c.query_fraction_seen},
          {"query_fraction_unseen", c.query_fraction_unseen},
          {"train_pipelines", names(c.train_pipelines)},
          {"query_conditions", names(c.query_conditions)},
          {"jitter_translation", c.jitter.translation},
          {"jitter_rotation_deg", c.jitter.rotation_deg},
          {"jitter_scale_low", c.jitter.scale_low},
          {"jitter_scale_high", c.jitter.scale_high},
          {"jitter_photometric", c.jitter.photometric},
          {"hidden", c.hidden},
          {"embedding_dim", c.embedding_dim},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"margin", c.loss.margin},
          {"scale", c.loss.scale},
          {"ema_momentum", c.ema_momentum},
          {"degrade_probability", c.degrade_probability},
          {"bank_variants", c.bank_variants},
          {"crop_side", c.crop_side}};
}

// ---- dataset ----

Image SyntheticDataset::render_image(std::size_t i) const {
  const EncounterSpec& e = encounters.at(i);
  return render(identities.at(e.identity), e);
}

namespace {

constexpr int kIdentityRetries = 64;
constexpr double kMaxIdentityNcc = 0.9;

std::string identity_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ind%03d", i);
  return buf;
}

}  // namespace

SyntheticDataset generate_dataset(const BenchConfig& config) {
  config.validate();
  SyntheticDataset ds;
  const std::uint64_t identity_base = derive_seed(config.seed, "identity");
  std::vector<std::vector<double>> canonical;
  for (int i = 0; i < config.n_identities; ++i) {
    bool accepted = false;
    for (int attempt = 0; attempt < kIdentityRetries && !accepted; ++attempt) {
      const auto seed = derive_seed(derive_seed(identity_base, static_cast<std::uint64_t>(i)),
                                    static_cast<std::uint64_t>(attempt));
      SyntheticIdentity id = make_identity(seed);
      auto feat = embedder_features(render(id, EncounterSpec{}), config.crop_side);
      accepted = std::none_of(canonical.begin(), canonical.end(), [&](const auto& other) {
        return ncc(feat, other) >= kMaxIdentityNcc;
      });
      if (accepted) {
        ds.identities.push_back(std::move(id));
        canonical.push_back(std::move(feat));
      }
    }
    if (!accepted) {
      throw GenerationError("no distinct pattern for identity " + std::to_string(i) +
                            " after " + std::to_string(kIdentityRetries) + " attempts");
    }
  }
  const std::uint64_t encounter_base = derive_seed(config.seed, "encounter");
  for (int i = 0; i < config.n_identities; ++i) {
    const std::string identity = identity_name(i);
    for (int k = 0; k < config.images_per_identity; ++k) {
      const auto index = static_cast<std::uint64_t>(i) * config.images_per_identity + k;
      ds.encounters.push_back(sample_encounter(static_cast<std::size_t>(i),
                                               derive_seed(encounter_base, index),
                                               config.jitter));
      char image_id[48];
      std::snprintf(image_id, sizeof image_id, "%s_%03d", identity.c_str(), k);
      ManifestRecord r;
      r.image_id = image_id;
      r.identity_id = identity;
      r.path = r.image_id + ".png";
      r.timestamp = 1'600'000'000 + static_cast<std::int64_t>(k) * 86'400 + i;
      r.dataset = "synthetic";
      ds.manifest.push_back(std::move(r));
    }
  }
  return ds;
}

// ---- embedder ----

TinyEmbedder::TinyEmbedder(int hidden, int dim, std::uint64_t seed)
    : hidden_(hidden), dim_(dim) {
  if (hidden < 1 || dim < 1) throw ParameterError("layer sizes must be >= 1");
  const std::size_t w1 = static_cast<std::size_t>(hidden) * kInput;
  const std::size_t w2 = static_cast<std::size_t>(dim) * hidden;
  params_.assign(w1 + hidden + w2 + dim, 0.0);
  SeededRng rng(seed);
  const double s1 = std::sqrt(2.0 / kInput), s2 = std::sqrt(1.0 / hidden);
  for (std::size_t i = 0; i < w1; ++i) params_[i] = s1 * rng.normal();
  for (std::size_t i = 0; i < w2; ++i) params_[w1 + hidden + i] = s2 * rng.normal();
}

std::vector<double> TinyEmbedder::forward(const std::vector<double>& features,
                                          Cache& cache) const {
  if (features.size() != kInput) throw ParameterError("embedder expects 32x32 features");
  // Per-image standardization absorbs brightness and contrast.
  double mean = 0.0;
  for (double v : features) mean += v;
  mean /= kInput;
  double var = 0.0;
  for (double v : features) var += (v - mean) * (v - mean);
  const double inv_std = 1.0 / (std::sqrt(var / kInput) + 1e-8);
  cache.input.resize(kInput);
  for (int i = 0; i < kInput; ++i) cache.input[i] = (features[i] - mean) * inv_std;

  const double* w1 = params_.data();
  const double* b1 = w1 + static_cast<std::size_t>(hidden_) * kInput;
  const double* w2 = b1 + hidden_;
  const double* b2 = w2 + static_cast<std::size_t>(dim_) * hidden_;
  cache.hidden.assign(hidden_, 0.0);
  for (int h = 0; h < hidden_; ++h) {
    const double* row = w1 + static_cast<std::size_t>(h) * kInput;
    double acc = b1[h];
    for (int i = 0; i < kInput; ++i) acc += row[i] * cache.input[i];
    cache.hidden[h] = acc > 0.0 ? acc : 0.0;
  }
  cache.output.assign(dim_, 0.0);
  double ss = 0.0;
  for (int d = 0; d < dim_; ++d) {
    const double* row = w2 + static_cast<std::size_t>(d) * hidden_;
    double acc = b2[d];
    for (int h = 0; h < hidden_; ++h) acc += row[h] * cache.hidden[h];
    cache.output[d] = acc;
    ss += acc * acc;
  }
  cache.norm = std::max(std::sqrt(ss), 1e-12);
  cache.embedding.resize(dim_);
  for (int d = 0; d < dim_; ++d) cache.embedding[d] = cache.output[d] / cache.norm;
  return cache.embedding;
}

std::vector<double> TinyEmbedder::embed(const std::vector<double>& features) const {
  Cache cache;
  return forward(features, cache);
}

void TinyEmbedder::backward(const Cache& cache, const std::vector<double>& d_embedding,
                            std::vector<double>& grad) const {
  const std::size_t w1n = static_cast<std::size_t>(hidden_) * kInput;
  const std::size_t w2n = static_cast<std::size_t>(dim_) * hidden_;
  double* gw1 = grad.data();
  double* gb1 = gw1 + w1n;
  double* gw2 = gb1 + hidden_;
  double* gb2 = gw2 + w2n;
  const double* w2 = params_.data() + w1n + hidden_;

  // Through the normalization: (I - e e^T) / |o|.
  double dot = 0.0;
  for (int d = 0; d < dim_; ++d) dot += cache.embedding[d] * d_embedding[d];
  std::vector<double> d_out(dim_);
  for (int d = 0; d < dim_; ++d) {
    d_out[d] = (d_embedding[d] - cache.embedding[d] * dot) / cache.norm;
  }
  std::vector<double> d_hidden(hidden_, 0.0);
  for (int d = 0; d < dim_; ++d) {
    gb2[d] += d_out[d];
    double* grow = gw2 + static_cast<std::size_t>(d) * hidden_;
    const double* wrow = w2 + static_cast<std::size_t>(d) * hidden_;
    for (int h = 0; h < hidden_; ++h) {
      grow[h] += d_out[d] * cache.hidden[h];
      d_hidden[h] += d_out[d] * wrow[h];
    }
  }
  for (int h = 0; h < hidden_; ++h) {
    if (cache.hidden[h] <= 0.0) continue;
    gb1[h] += d_hidden[h];
    double* grow = gw1 + static_cast<std::size_t>(h) * kInput;
    for (int i = 0; i < kInput; ++i) grow[i] += d_hidden[h] * cache.input[i];
  }
}

// ---- training ----

TrainingLoader::TrainingLoader(const Manifest& manifest,
                               const splitter::SplitAssignment& assignment)
    : manifest_(&manifest), assignment_(&assignment) {
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto role = assignment.roles.find(manifest[i].image_id);
    const auto group = assignment.groups.find(manifest[i].identity_id);
    if (role != assignment.roles.end() && group != assignment.groups.end() &&
        role->second == splitter::Role::TrainAndDatabase &&
        group->second == splitter::IdentityGroup::SeenIds) {
      eligible_.push_back(i);
    }
  }
}

void TrainingLoader::admit(std::size_t index) {
  const ManifestRecord& r = manifest_->at(index);
  const auto group = assignment_->groups.find(r.identity_id);
  const auto role = assignment_->roles.find(r.image_id);
  if (group == assignment_->groups.end() ||
      group->second != splitter::IdentityGroup::SeenIds) {
    throw ValidationError("training leak: " + r.image_id + " belongs to an unseen identity");
  }
  if (role == assignment_->roles.end() || role->second != splitter::Role::TrainAndDatabase) {
    throw ValidationError("training leak: " + r.image_id + " is not a training image");
  }
  touched_.insert(r.image_id);
}

namespace {

std::vector<double> clean_features(const SyntheticDataset& ds, std::size_t i,
                                   const BenchConfig& config) {
  return embedder_features(ds.render_image(i), config.crop_side);
}

std::vector<double> degraded_features(const SyntheticDataset& ds, std::size_t i,
                                      PipelineKind kind, std::uint64_t seed,
                                      const BenchConfig& config) {
  SeededRng rng(seed);
  return embedder_features(degrade::apply_pipeline(ds.render_image(i), kind, rng).first,
                           config.crop_side);
}

}  // namespace

TrainingData prepare_training_data(const SyntheticDataset& ds, TrainingLoader& loader,
                                   const PipelineChoice& pipeline,
                                   const BenchConfig& config) {
  TrainingData data;
  data.images = loader.eligible();
  std::map<std::string, std::size_t> classes;
  for (std::size_t i : data.images) classes.emplace(ds.manifest[i].identity_id, 0);
  for (auto& [id, cls] : classes) cls = data.classes++;
  for (std::size_t i : data.images) data.labels.push_back(classes.at(ds.manifest[i].identity_id));

  const int workers = resolve_workers(config.workers);
  const std::size_t n = data.images.size();
  data.clean.resize(n);
  parallel_for(n, workers, [&](std::size_t k) {
    data.clean[k] = clean_features(ds, data.images[k], config);
  });
  data.variants.assign(n, {});
  if (pipeline) {
    const std::size_t m = static_cast<std::size_t>(config.bank_variants);
    const auto base = derive_seed(config.seed, "bank/" + choice_name(pipeline));
    for (auto& v : data.variants) v.resize(m);
    parallel_for(n * m, workers, [&](std::size_t job) {
      const std::size_t k = job / m, v = job % m;
      const auto& id = ds.manifest[data.images[k]].image_id;
      data.variants[k][v] = degraded_features(
          ds, data.images[k], *pipeline, derive_seed(derive_seed(base, id), v), config);
    });
  }
  return data;
}

TinyEmbedder train_embedder(const TrainingData& data, const PipelineChoice& pipeline,
                            const BenchConfig& config, TrainingLoader& loader,
                            TrainingLog* log) {
  config.validate();
  const std::string name = choice_name(pipeline);
  TinyEmbedder model(config.hidden, config.embedding_dim,
                     derive_seed(config.seed, "init/" + name));
  const std::size_t dim = static_cast<std::size_t>(config.embedding_dim);
  const std::size_t classes = data.classes;
  if (classes == 0) throw ValidationError("no training images");

  SeededRng rng(derive_seed(config.seed, "train/" + name));
  std::vector<double> head(classes * dim);
  for (double& w : head) w = rng.normal();

  std::vector<double>& params = model.parameters();
  std::vector<double> velocity(params.size(), 0.0), grad(params.size());
  std::vector<double> head_velocity(head.size(), 0.0), head_grad(head.size());
  std::vector<double> head_unit(head.size()), head_norm(classes);

  const std::size_t n = data.images.size();
  const std::size_t batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const double total_steps = static_cast<double>(steps_per_epoch * config.epochs);
  const bool degrade = pipeline.has_value() && config.degrade_probability > 0.0;

  curricular::CurricularState state{0.0, config.ema_momentum};
  std::vector<std::size_t> order(n);
  std::vector<TinyEmbedder::Cache> caches(batch);
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(std::span(order));
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += batch, ++step) {
      const std::size_t b = std::min(batch, n - start);
      for (std::size_t c = 0; c < classes; ++c) {
        double ss = 0.0;
        for (std::size_t d = 0; d < dim; ++d) ss += head[c * dim + d] * head[c * dim + d];
        head_norm[c] = std::max(std::sqrt(ss), 1e-12);
        for (std::size_t d = 0; d < dim; ++d) head_unit[c * dim + d] = head[c * dim + d] / head_norm[c];
      }
      curricular::CosineBatch cb{b, classes, std::vector<double>(b * classes),
                                 std::vector<std::size_t>(b)};
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t idx = order[start + k];
        loader.admit(data.images[idx]);
        const std::vector<double>* feat = &data.clean[idx];
        if (degrade && rng.uniform01() < config.degrade_probability) {
          const auto v = static_cast<std::size_t>(
              rng.uniform_int(0, static_cast<std::int64_t>(data.variants[idx].size()) - 1));
          feat = &data.variants[idx][v];
        }
        const auto& e = model.forward(*feat, caches[k]);
        for (std::size_t c = 0; c < classes; ++c) {
          double dot = 0.0;
          for (std::size_t d = 0; d < dim; ++d) dot += e[d] * head_unit[c * dim + d];
          if (!std::isfinite(dot)) {
            throw TrainingError("embedding is not finite at step " + std::to_string(step), step);
          }
          cb.cosines[k * classes + c] = std::clamp(dot, -1.0, 1.0);
        }
        cb.labels[k] = data.labels[idx];
      }
      const double loss = curricular::curricular_loss(cb, config.loss, state);
      if (!std::isfinite(loss)) {
        throw TrainingError("loss is not finite at step " + std::to_string(step), step);
      }
      epoch_loss += loss * static_cast<double>(b);
      const auto g = curricular::curricular_grad(cb, config.loss, state);
      std::vector<double> positives(b);
      for (std::size_t k = 0; k < b; ++k) positives[k] = cb.at(k, cb.labels[k]);
      state = curricular::update_t(state, positives);

      std::fill(grad.begin(), grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      std::vector<double> d_e(dim);
      for (std::size_t k = 0; k < b; ++k) {
        std::fill(d_e.begin(), d_e.end(), 0.0);
        for (std::size_t c = 0; c < classes; ++c) {
          const double gc = g[k * classes + c];
          if (gc == 0.0) continue;
          for (std::size_t d = 0; d < dim; ++d) {
            d_e[d] += gc * head_unit[c * dim + d];
            head_grad[c * dim + d] += gc * caches[k].embedding[d];
          }
        }
        model.backward(caches[k], d_e, grad);
      }
      // Head rows are normalized on use: project out the radial part.
      for (std::size_t c = 0; c < classes; ++c) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) dot += head_grad[c * dim + d] * head_unit[c * dim + d];
        for (std::size_t d = 0; d < dim; ++d) {
          head_grad[c * dim + d] =
              (head_grad[c * dim + d] - dot * head_unit[c * dim + d]) / head_norm[c];
        }
      }
      const double lr = 0.5 * config.learning_rate *
                        (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
      for (std::size_t p = 0; p < params.size(); ++p) {
        velocity[p] = config.momentum * velocity[p] + grad[p] + config.weight_decay * params[p];
        params[p] -= lr * velocity[p];
      }
      for (std::size_t p = 0; p < head.size(); ++p) {
        head_velocity[p] = config.momentum * head_velocity[p] + head_grad[p];
        head[p] -= lr * head_velocity[p];
      }
      for (double v : params) {
        if (!std::isfinite(v)) {
          throw TrainingError("parameters diverged at step " + std::to_string(step), step);
        }
      }
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  if (log) log->touched = loader.touched();
  return model;
}

// ---- experiment grid ----

const GridRecord& GridReport::find(std::string_view train, std::string_view query,
                                   std::string_view stratum) const {
  for (const auto& r : records) {
    if (r.train_pipeline == train && r.query_condition == query && r.stratum == stratum) {
      return r;
    }
  }
  throw ParameterError("no grid record for " + std::string(train) + "/" +
                       std::string(query) + "/" + std::string(stratum));
}

double GridReport::rank1(std::string_view train, std::string_view query,
                         std::string_view stratum) const {
  return find(train, query, stratum).metrics.rank_k.at(1);
}

namespace {

retrieval::EmbeddingMatrix embed_all(const TinyEmbedder& model,
                                     const std::vector<std::string>& ids,
                                     const std::vector<std::vector<double>>& features,
                                     int workers) {
  const std::size_t dim = static_cast<std::size_t>(model.dim());
  std::vector<double> values(ids.size() * dim);
  parallel_for(ids.size(), workers, [&](std::size_t i) {
    const auto e = model.embed(features[i]);
    std::copy(e.begin(), e.end(), values.begin() + static_cast<long>(i * dim));
  });
  return retrieval::EmbeddingMatrix(ids, dim, std::move(values));
}

}  // namespace

GridReport run_experiment_grid(const BenchConfig& config) {
  config.validate();
  const int workers = resolve_workers(config.workers);
  const SyntheticDataset ds = generate_dataset(config);
  splitter::SplitConfig split_cfg;
  split_cfg.seed = derive_seed(config.seed, "split");
  split_cfg.unseen_id_fraction = config.unseen_fraction;
  split_cfg.query_fraction_seen = config.query_fraction_seen;
  split_cfg.query_fraction_unseen = config.query_fraction_unseen;
  const auto assignment = splitter::split_dataset(ds.manifest, split_cfg);

  std::vector<std::size_t> db_index, query_index;
  std::vector<std::string> db_ids, query_ids;
  for (std::size_t i = 0; i < ds.manifest.size(); ++i) {
    const auto& id = ds.manifest[i].image_id;
    if (splitter::in_database(assignment.roles.at(id))) {
      db_index.push_back(i);
      db_ids.push_back(id);
    } else {
      query_index.push_back(i);
      query_ids.push_back(id);
    }
  }
  // The database is always clean.
  std::vector<std::vector<double>> db_features(db_index.size());
  parallel_for(db_index.size(), workers, [&](std::size_t k) {
    db_features[k] = clean_features(ds, db_index[k], config);
  });
  std::vector<std::vector<std::vector<double>>> query_features(config.query_conditions.size());
  for (std::size_t q = 0; q < config.query_conditions.size(); ++q) {
    const auto& cond = config.query_conditions[q];
    const auto base = derive_seed(config.seed, "query/" + choice_name(cond));
    auto& out = query_features[q];
    out.resize(query_index.size());
    parallel_for(query_index.size(), workers, [&](std::size_t k) {
      const std::size_t i = query_index[k];
      out[k] = cond ? degraded_features(ds, i, *cond,
                                        derive_seed(base, ds.manifest[i].image_id), config)
                    : clean_features(ds, i, config);
    });
  }

  const retrieval::IdentityIndex index(ds.manifest, db_ids);
  GridReport report;
  report.config = to_json(config);
  for (const auto& pipeline : config.train_pipelines) {
    TrainingLoader loader(ds.manifest, assignment);
    const TrainingData data = prepare_training_data(ds, loader, pipeline, config);
    const TinyEmbedder model = train_embedder(data, pipeline, config, loader);
    const auto db = embed_all(model, db_ids, db_features, workers);
    for (std::size_t q = 0; q < config.query_conditions.size(); ++q) {
      const auto queries = embed_all(model, query_ids, query_features[q], workers);
      const auto results = retrieval::search(queries, db, 0, workers);
      const auto rep = retrieval::stratified_report(results, index, ds.manifest,
                                                    &assignment, {"group"});
      const std::string train = choice_name(pipeline);
      const std::string cond = choice_name(config.query_conditions[q]);
      report.records.push_back({train, cond, "all", rep.overall});
      for (const auto& [group, metrics] : rep.strata.at("group")) {
        report.records.push_back({train, cond, group, metrics});
      }
    }
  }
  return report;
}

json to_json(const GridReport& report) {
  json records = json::array();
  for (const auto& r : report.records) {
    json j = retrieval::to_json(r.metrics);
    j["train_pipeline"] = r.train_pipeline;
    j["query_condition"] = r.query_condition;
    j["stratum"] = r.stratum;
    records.push_back(std::move(j));
  }
  return {{"config", report.config}, {"records", records}};
}

GridReport grid_from_json(const json& j) {
  GridReport report;
  try {
    report.config = j.value("config", json::object());
    for (const auto& r : j.at("records")) {
      report.records.push_back({r.at("train_pipeline").get<std::string>(),
                                r.at("query_condition").get<std::string>(),
                                r.at("stratum").get<std::string>(),
                                retrieval::metrics_from_json(r)});
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed grid report: ") + e.what());
  }
  return report;
}

}  // namespace dreid::synthbench
