// Desk-scale contrastive training on synthetic worlds.
//
// A dataset item is a latent identity: its class plus one clean input drawn
// from p(.|c), which is what the probe later embeds. A view of an item is a
// fresh draw from the same class conditional, so positives follow p+_x
// exactly in both the sphere and the discrete world.
#pragma once

#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include "dcl/autograd.hpp"
#include "dcl/encoder.hpp"
#include "dcl/error.hpp"
#include "dcl/losses.hpp"
#include "dcl/rng.hpp"
#include "dcl/text.hpp"
#include "dcl/worldmodel.hpp"

namespace dcl {

using World = std::variant<SphereMixture, DiscreteClassMixture>;

inline std::size_t world_classes(const World& w) {
  return std::visit([](const auto& x) { return x.num_classes(); }, w);
}

inline Eigen::Index world_feature_dim(const World& w) {
  return std::visit([](const auto& x) { return x.feature_dim(); }, w);
}

struct Dataset {
  Matrix identities;                 // m x n clean inputs
  std::vector<std::size_t> labels;   // class per item
  std::vector<std::size_t> points;   // discrete worlds: point index per item
  double view_noise = 0.0;           // > 0: views jitter the item instead of redrawing its class

  std::size_t size() const noexcept { return labels.size(); }
};

/// K classes, each a union of `subclusters` tight clusters around orthonormal
/// directions (wrapping when K * subclusters > dim). Uniform prior and
/// conditionals over `points_per_class` points per class.
inline DiscreteClassMixture subcluster_world(std::size_t classes, std::size_t subclusters, Eigen::Index dim,
                                             std::size_t points_per_class, double spread, Rng& rng) {
  require(classes >= 2 && subclusters >= 1 && points_per_class >= 1 && dim >= 2, Errc::InvalidArgument,
          "sub-cluster world needs K >= 2, at least one sub-cluster and dim >= 2");
  Matrix g(dim, dim);
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = 0; i < dim; ++i) g(i, j) = rng.normal();
  const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ();

  const auto K = static_cast<Eigen::Index>(classes);
  const auto S = static_cast<Eigen::Index>(classes * points_per_class);
  MixtureSpec spec;
  spec.id = "subclusters";
  spec.points.resize(dim, S);
  spec.labels.resize(static_cast<std::size_t>(S));
  spec.conditionals = Matrix::Zero(K, S);
  for (Eigen::Index j = 0; j < S; ++j) {
    const std::size_t c = static_cast<std::size_t>(j) / points_per_class;
    const std::size_t sub = (static_cast<std::size_t>(j) % points_per_class) % subclusters;
    Vector v = q.col(static_cast<Eigen::Index>((c * subclusters + sub) % static_cast<std::size_t>(dim)));
    for (Eigen::Index i = 0; i < dim; ++i) v(i) += spread * rng.normal();
    spec.points.col(j) = v;
    spec.labels[static_cast<std::size_t>(j)] = c;
    spec.conditionals(static_cast<Eigen::Index>(c), j) = 1.0 / static_cast<double>(points_per_class);
  }
  spec.prior = Vector::Constant(K, 1.0 / static_cast<double>(K));
  return build_discrete(std::move(spec));
}

/// n items drawn from the world's marginal.
inline Dataset make_dataset(const World& world, std::size_t n, Rng& rng) {
  require(n >= 1, Errc::InvalidArgument, "dataset must not be empty");
  Dataset ds;
  ds.identities.resize(world_feature_dim(world), static_cast<Eigen::Index>(n));
  ds.labels.resize(n);
  if (const auto* sphere = std::get_if<SphereMixture>(&world)) {
    for (std::size_t i = 0; i < n; ++i) {
      ds.labels[i] = sphere->draw_class(rng);
      ds.identities.col(static_cast<Eigen::Index>(i)) = sphere->sample(ds.labels[i], rng);
    }
  } else {
    const auto& mix = std::get<DiscreteClassMixture>(world);
    ds.points.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      ds.points[i] = mix.sample_marginal(rng);
      ds.labels[i] = mix.label(ds.points[i]);
      ds.identities.col(static_cast<Eigen::Index>(i)) = mix.points().col(static_cast<Eigen::Index>(ds.points[i]));
    }
  }
  return ds;
}

inline Vector draw_view(const World& world, const Dataset& ds, std::size_t item, Rng& rng) {
  if (ds.view_noise > 0.0) {
    Vector v = ds.identities.col(static_cast<Eigen::Index>(item));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += ds.view_noise * rng.normal();
    return v;
  }
  if (const auto* sphere = std::get_if<SphereMixture>(&world)) return sphere->sample(ds.labels.at(item), rng);
  const auto& mix = std::get<DiscreteClassMixture>(world);
  return mix.points().col(static_cast<Eigen::Index>(mix.sample_positive(ds.points.at(item), rng)));
}

/// One epoch: a seeded permutation cut into floor(n/B) batches of B anchors.
/// Every anchor carries two views plus M-1 extra positive views.
inline std::vector<InputBatch> make_batches(const World& world, const Dataset& ds, std::size_t batch_size,
                                            std::size_t positives, Rng& rng) {
  require(batch_size >= 2, Errc::BatchTooSmall, "batch size must be >= 2");
  require(ds.size() >= batch_size, Errc::BatchTooSmall, "dataset is smaller than one batch");
  require(positives >= 1, Errc::InvalidArgument, "M must be >= 1");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  const Eigen::Index m = ds.identities.rows();
  const auto B = static_cast<Eigen::Index>(batch_size);
  const auto extra = static_cast<Eigen::Index>(positives - 1);
  std::vector<InputBatch> out;
  for (std::size_t start = 0; start + batch_size <= order.size(); start += batch_size) {
    InputBatch b;
    b.view_a.resize(m, B);
    b.view_b.resize(m, B);
    b.extras.resize(m, B * extra);
    b.labels.resize(batch_size);
    for (Eigen::Index i = 0; i < B; ++i) {
      const std::size_t item = order[start + static_cast<std::size_t>(i)];
      b.labels[static_cast<std::size_t>(i)] = ds.labels[item];
      b.view_a.col(i) = draw_view(world, ds, item, rng);
      b.view_b.col(i) = draw_view(world, ds, item, rng);
      for (Eigen::Index j = 0; j < extra; ++j) b.extras.col(i * extra + j) = draw_view(world, ds, item, rng);
    }
    out.push_back(std::move(b));
  }
  return out;
}

// ---------------------------------------------------------------------------

enum class OptimizerKind { Sgd, Momentum, Adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, Eigen::Index size)
      : cfg_(cfg), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {
    require(cfg.learning_rate >= 0.0, Errc::InvalidArgument, "learning rate must be >= 0");
  }

  void step(Vector& theta, const Vector& grad) {
    ++steps_;
    switch (cfg_.kind) {
      case OptimizerKind::Sgd: theta -= cfg_.learning_rate * grad; break;
      case OptimizerKind::Momentum:
        m_ = cfg_.momentum * m_ + grad;
        theta -= cfg_.learning_rate * m_;
        break;
      case OptimizerKind::Adam: {
        m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
        v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
        theta.array() -= cfg_.learning_rate * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.epsilon);
        break;
      }
    }
  }

 private:
  OptimizerConfig cfg_;
  Vector m_, v_;
  std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------

struct TrainConfig {
  BatchLossSpec loss;
  std::size_t batch_size = 64;
  std::size_t epochs = 200;
  OptimizerConfig optimizer;
  std::uint64_t seed = 1;
  Eigen::Index output_dim = 16;
  Eigen::Index hidden_dim = 0;
  bool record_timing = false;  // wall_ms stays 0 unless set, keeping logs reproducible
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct TrainResult {
  EncoderParams params;
  EncoderParams initial;
  std::vector<EpochRecord> log;
};

/// Seeded training run. Streams: {seed, 1} for init, {seed, 2, epoch} for batches.
inline TrainResult train(const TrainConfig& cfg, const World& world, const Dataset& ds) {
  require(cfg.batch_size >= 2, Errc::BatchTooSmall, "batch size must be >= 2");
  require(cfg.epochs >= 1, Errc::InvalidArgument, "epochs must be >= 1");
  require(cfg.optimizer.learning_rate >= 0.0, Errc::InvalidArgument, "learning rate must be >= 0");
  Rng init_rng = Rng::substream(cfg.seed, {1});
  TrainResult res;
  res.params = EncoderParams::random(cfg.output_dim, ds.identities.rows(), cfg.hidden_dim, init_rng);
  res.initial = res.params;
  Optimizer opt(cfg.optimizer, res.params.size());
  Vector theta = res.params.flatten();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng batch_rng = Rng::substream(cfg.seed, {2, epoch});
    const auto batches = make_batches(world, ds, cfg.batch_size, cfg.loss.positives, batch_rng);
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      const auto lg = loss_and_grad(res.params, batch, cfg.loss);
      require(std::isfinite(lg.loss.value), Errc::DivergenceDetected,
              "loss became non-finite in epoch " + std::to_string(epoch));
      epoch_loss += lg.loss.value;
      opt.step(theta, lg.grad.flatten());
      require(theta.allFinite(), Errc::DivergenceDetected, "parameters became non-finite");
      res.params.assign(theta);
    }
    EpochRecord rec{epoch, epoch_loss / static_cast<double>(batches.size()), 0.0};
    if (cfg.record_timing)
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(rec);
  }
  return res;
}

inline void write_training_log(std::ostream& os, const std::vector<EpochRecord>& log) {
  os << "epoch,loss,wall_ms\n";
  for (const auto& r : log)
    os << r.epoch << ',' << text::format_double(r.loss) << ',' << text::format_double(r.wall_ms) << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoint: versioned text dump of EncoderParams plus provenance.
//   dcl-checkpoint 1
//   config_hash <hex>
//   meta <key> <value>          (zero or more)
//   matrix <name> <rows> <cols>
//   <values, column-major, one line>

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  EncoderParams params;
  std::string config_hash;
  std::vector<std::pair<std::string, std::string>> meta;

  std::string meta_value(const std::string& key) const {
    for (const auto& [k, v] : meta)
      if (k == key) return v;
    throw Error(Errc::ConfigError, "checkpoint has no '" + key + "' entry");
  }
};

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  os << "dcl-checkpoint " << kCheckpointVersion << "\n";
  os << "config_hash " << ck.config_hash << "\n";
  for (const auto& [k, v] : ck.meta) os << "meta " << k << ' ' << v << "\n";
  auto dump = [&os](const std::string& name, const Matrix& m) {
    os << "matrix " << name << ' ' << m.rows() << ' ' << m.cols() << "\n";
    for (Eigen::Index i = 0; i < m.size(); ++i) os << (i ? " " : "") << text::format_double(m.data()[i]);
    os << "\n";
  };
  dump("w", ck.params.output_weight());
  if (const auto& h = ck.params.hidden()) {
    dump("w1", h->weight);
    dump("b1", h->bias);
  }
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::string magic;
  int version = 0;
  is >> magic >> version;
  require(magic == "dcl-checkpoint" && version == kCheckpointVersion, Errc::ConfigError,
          "not a version-1 checkpoint");
  Checkpoint ck;
  std::vector<std::pair<std::string, Matrix>> mats;
  std::string tag;
  while (is >> tag) {
    if (tag == "config_hash") {
      is >> ck.config_hash;
    } else if (tag == "meta") {
      std::string k, v;
      is >> k >> v;
      ck.meta.emplace_back(k, v);
    } else if (tag == "matrix") {
      std::string name;
      Eigen::Index rows = 0, cols = 0;
      is >> name >> rows >> cols;
      Matrix m(rows, cols);
      for (Eigen::Index i = 0; i < m.size(); ++i) {
        std::string tok;
        is >> tok;
        m.data()[i] = text::parse_double(tok, name);
      }
      mats.emplace_back(name, std::move(m));
    } else {
      throw Error(Errc::ConfigError, "unexpected checkpoint token '" + tag + "'");
    }
  }
  require(!mats.empty() && mats[0].first == "w", Errc::ConfigError, "checkpoint has no output matrix");
  if (mats.size() == 1) {
    ck.params = EncoderParams(mats[0].second);
  } else {
    require(mats.size() == 3, Errc::ConfigError, "malformed hidden-layer checkpoint");
    ck.params = EncoderParams(mats[0].second, HiddenLayer{mats[1].second, Vector(mats[2].second.col(0))});
  }
  return ck;
}

}  // namespace dcl
