// Synthetic latent-class worlds.
//
// DiscreteClassMixture is a finite point set with a deterministic labeling
// h(x), class-conditional tables p(x|c) supported on h^{-1}(c) and a class
// prior rho. Every expectation over it is an exact finite sum. SphereMixture
// is the continuous stand-in used for training runs.
#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/geometry.hpp"
#include "dcl/rng.hpp"
#include "dcl/text.hpp"

namespace dcl {

inline constexpr double kTableTolerance = 1e-12;

/// Raw description of a discrete world, validated by build_discrete().
struct MixtureSpec {
  std::string id = "custom";
  Matrix points;                     // m x S, one input-feature column per point
  std::vector<std::size_t> labels;   // h(x_j) in [0, K)
  Matrix conditionals;               // K x S, row c is p(.|c)
  Vector prior;                      // rho, length K
  std::optional<double> tau_plus;    // defaults: 1/K for uniform rho, sum rho^2 otherwise
};

class DiscreteClassMixture {
 public:
  const std::string& id() const noexcept { return spec_.id; }
  std::size_t num_points() const noexcept { return spec_.labels.size(); }
  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(spec_.prior.size()); }
  Eigen::Index feature_dim() const noexcept { return spec_.points.rows(); }

  const Matrix& points() const noexcept { return spec_.points; }
  const std::vector<std::size_t>& labels() const noexcept { return spec_.labels; }
  std::size_t label(std::size_t point) const { return spec_.labels.at(point); }
  const Matrix& conditionals() const noexcept { return spec_.conditionals; }
  const Vector& prior() const noexcept { return spec_.prior; }
  double tau_plus() const noexcept { return tau_plus_; }
  double tau_minus() const noexcept { return 1.0 - tau_plus_; }
  bool uniform_prior() const noexcept { return uniform_; }
  const MixtureSpec& spec() const noexcept { return spec_; }

  /// Probability rho(h(x)) that an independent draw from p shares the
  /// anchor's class. Equals tau_plus() when rho is uniform.
  double class_tau_plus(std::size_t anchor) const { return spec_.prior(static_cast<Eigen::Index>(label(anchor))); }

  /// p(x') = sum_c rho(c) p(x'|c).
  const Vector& marginal() const noexcept { return marginal_; }

  /// p+_x(x') = p(x' | h(x') = h(x)).
  Vector positive_dist(std::size_t anchor) const {
    check_anchor(anchor);
    return spec_.conditionals.row(static_cast<Eigen::Index>(label(anchor))).transpose();
  }

  /// p-_x(x') = p(x' | h(x') != h(x)).
  Vector negative_dist(std::size_t anchor) const {
    check_anchor(anchor);
    const auto c = static_cast<Eigen::Index>(label(anchor));
    const double rest = 1.0 - spec_.prior(c);
    require(num_classes() >= 2 && rest > 0.0, Errc::DegenerateClass,
            "no class other than the anchor's carries mass");
    Vector out = Vector::Zero(static_cast<Eigen::Index>(num_points()));
    for (Eigen::Index k = 0; k < spec_.prior.size(); ++k)
      if (k != c) out += spec_.prior(k) * spec_.conditionals.row(k).transpose();
    return out / rest;
  }

  // Samplers. Each takes its own stream; the mixture is never mutated.
  std::size_t sample_marginal(Rng& rng) const { return marginal_sampler_(rng); }
  std::size_t sample_class(std::size_t c, Rng& rng) const { return class_samplers_.at(c)(rng); }
  std::size_t sample_positive(std::size_t anchor, Rng& rng) const { return class_samplers_[label(anchor)](rng); }
  std::size_t sample_negative(std::size_t anchor, Rng& rng) const {
    require(num_classes() >= 2, Errc::DegenerateClass, "true negatives need at least two classes");
    return complement_samplers_[label(anchor)](rng);
  }

 private:
  friend DiscreteClassMixture build_discrete(MixtureSpec spec);

  void check_anchor(std::size_t anchor) const {
    require(anchor < num_points(), Errc::InvalidArgument, "anchor index out of range");
  }

  MixtureSpec spec_;
  double tau_plus_ = 0.0;
  bool uniform_ = true;
  Vector marginal_;
  AliasTable marginal_sampler_;
  std::vector<AliasTable> class_samplers_;
  std::vector<AliasTable> complement_samplers_;
};

/// Validates every table invariant and precomputes samplers.
inline DiscreteClassMixture build_discrete(MixtureSpec spec) {
  const auto S = static_cast<Eigen::Index>(spec.labels.size());
  const Eigen::Index K = spec.prior.size();
  require(K >= 1, Errc::PriorMismatch, "prior must have at least one class");
  require(S >= K, Errc::InvalidArgument, "need at least as many points as classes");
  require(spec.points.cols() == S, Errc::InvalidArgument, "points and labels disagree on S");
  require(spec.conditionals.rows() == K && spec.conditionals.cols() == S, Errc::InvalidTable,
          "conditional table must be K x S");

  double prior_sum = 0.0;
  for (Eigen::Index c = 0; c < K; ++c) {
    require(spec.prior(c) > 0.0 && std::isfinite(spec.prior(c)), Errc::PriorMismatch,
            "class prior entries must be positive");
    prior_sum += spec.prior(c);
  }
  require(std::abs(prior_sum - 1.0) <= kTableTolerance, Errc::PriorMismatch, "class prior does not sum to 1");

  for (Eigen::Index j = 0; j < S; ++j)
    require(spec.labels[static_cast<std::size_t>(j)] < static_cast<std::size_t>(K), Errc::LabelMismatch,
            "label out of range");

  for (Eigen::Index c = 0; c < K; ++c) {
    double row = 0.0;
    for (Eigen::Index j = 0; j < S; ++j) {
      const double p = spec.conditionals(c, j);
      require(p >= 0.0 && std::isfinite(p), Errc::InvalidTable, "conditional probabilities must be >= 0");
      if (p > 0.0)
        require(spec.labels[static_cast<std::size_t>(j)] == static_cast<std::size_t>(c), Errc::LabelMismatch,
                "p(x|c) puts mass on a point labelled with another class");
      row += p;
    }
    require(std::abs(row - 1.0) <= kTableTolerance, Errc::InvalidTable,
            "row " + std::to_string(c) + " of the conditional table does not sum to 1");
  }

  DiscreteClassMixture mix;
  const double uniform_value = 1.0 / static_cast<double>(K);
  mix.uniform_ = (spec.prior.array() - uniform_value).abs().maxCoeff() <= kTableTolerance;
  if (spec.tau_plus) {
    const double tp = *spec.tau_plus;
    require(tp > 0.0 && tp <= 1.0, Errc::PriorMismatch, "tau_plus must lie in (0, 1]");
    if (mix.uniform_)
      require(std::abs(tp - uniform_value) <= kTableTolerance, Errc::PriorMismatch,
              "tau_plus must equal 1/K under a uniform prior");
    mix.tau_plus_ = tp;
  } else {
    mix.tau_plus_ = mix.uniform_ ? uniform_value : spec.prior.squaredNorm();
  }

  mix.marginal_ = spec.conditionals.transpose() * spec.prior;
  std::vector<double> buf(mix.marginal_.data(), mix.marginal_.data() + S);
  mix.marginal_sampler_ = AliasTable(buf);
  for (Eigen::Index c = 0; c < K; ++c) {
    Vector row = spec.conditionals.row(c).transpose();
    mix.class_samplers_.emplace_back(std::vector<double>(row.data(), row.data() + S));
    if (K >= 2) {
      Vector rest = Vector::Zero(S);
      for (Eigen::Index k = 0; k < K; ++k)
        if (k != c) rest += spec.prior(k) * spec.conditionals.row(k).transpose();
      mix.complement_samplers_.emplace_back(std::vector<double>(rest.data(), rest.data() + S));
    }
  }
  mix.spec_ = std::move(spec);
  return mix;
}

struct RandomMixtureOptions {
  std::size_t classes = 3;
  std::size_t points_per_class = 2;
  Eigen::Index feature_dim = 4;
  bool uniform_prior = true;
};

/// Random world: Gaussian feature points, conditionals with weights in
/// [0.25, 1.25) normalized per class, optionally a random non-uniform prior.
inline DiscreteClassMixture random_mixture(const RandomMixtureOptions& opt, Rng& rng, std::string id = "random") {
  require(opt.classes >= 1 && opt.points_per_class >= 1, Errc::InvalidArgument, "empty random mixture");
  const auto K = static_cast<Eigen::Index>(opt.classes);
  const auto S = static_cast<Eigen::Index>(opt.classes * opt.points_per_class);
  MixtureSpec spec;
  spec.id = std::move(id);
  spec.points.resize(opt.feature_dim, S);
  for (Eigen::Index j = 0; j < S; ++j)
    for (Eigen::Index i = 0; i < opt.feature_dim; ++i) spec.points(i, j) = rng.normal();
  spec.labels.resize(static_cast<std::size_t>(S));
  spec.conditionals = Matrix::Zero(K, S);
  for (Eigen::Index j = 0; j < S; ++j) {
    const auto c = static_cast<Eigen::Index>(static_cast<std::size_t>(j) / opt.points_per_class);
    spec.labels[static_cast<std::size_t>(j)] = static_cast<std::size_t>(c);
    spec.conditionals(c, j) = rng.uniform(0.25, 1.25);
  }
  for (Eigen::Index c = 0; c < K; ++c) spec.conditionals.row(c) /= spec.conditionals.row(c).sum();
  spec.prior = Vector::Constant(K, 1.0 / static_cast<double>(K));
  if (!opt.uniform_prior) {
    for (Eigen::Index c = 0; c < K; ++c) spec.prior(c) = rng.uniform(0.5, 1.5);
    spec.prior /= spec.prior.sum();
  }
  return build_discrete(std::move(spec));
}

/// Named presets addressable from the CLI.
inline DiscreteClassMixture preset_mixture(std::string_view name) {
  if (name == "two-point") {
    MixtureSpec spec;
    spec.id = "two-point";
    spec.points = Matrix::Identity(2, 2);
    spec.labels = {0, 1};
    spec.conditionals = Matrix::Identity(2, 2);
    spec.prior = Vector::Constant(2, 0.5);
    return build_discrete(std::move(spec));
  }
  if (name == "single-class") {
    MixtureSpec spec;
    spec.id = "single-class";
    spec.points = Matrix::Identity(2, 2);
    spec.labels = {0, 0};
    spec.conditionals = Matrix::Constant(1, 2, 0.5);
    spec.prior = Vector::Ones(1);
    return build_discrete(std::move(spec));
  }
  if (name == "small-uniform") {
    Rng rng = Rng::substream(0x5EED'0003ULL, {3, 2});
    return random_mixture({.classes = 3, .points_per_class = 2, .feature_dim = 4}, rng, "small-uniform");
  }
  if (name == "paper-uniform") {
    Rng rng = Rng::substream(0x5EED'000AULL, {10, 3});
    return random_mixture({.classes = 10, .points_per_class = 3, .feature_dim = 16}, rng, "paper-uniform");
  }
  if (name == "skewed-prior") {
    Rng rng = Rng::substream(0x5EED'0004ULL, {4, 2});
    return random_mixture({.classes = 4, .points_per_class = 2, .feature_dim = 4, .uniform_prior = false}, rng,
                          "skewed-prior");
  }
  throw Error(Errc::ConfigError, "unknown mixture preset '" + std::string(name) + "'");
}

inline const std::vector<std::string>& mixture_preset_names() {
  static const std::vector<std::string> names = {"two-point", "single-class", "small-uniform", "paper-uniform",
                                                 "skewed-prior"};
  return names;
}

// ---------------------------------------------------------------------------
// Mixture definition file: flat "key = value" lines, '#' comments.
//   points       = S rows of m numbers, rows separated by ';'
//   labels       = S integers
//   conditionals = K rows of S numbers, rows separated by ';'
//   prior        = K numbers
// Optional: format_version (must be 1), id, tau_plus.

inline constexpr int kMixtureFormatVersion = 1;

namespace detail {

inline std::string matrix_rows(const Matrix& rows_major) {
  std::string out;
  for (Eigen::Index r = 0; r < rows_major.rows(); ++r) {
    if (r) out += " ; ";
    for (Eigen::Index c = 0; c < rows_major.cols(); ++c) {
      if (c) out += ' ';
      out += text::format_double(rows_major(r, c));
    }
  }
  return out;
}

inline Matrix parse_rows(std::string_view value, std::string_view key) {
  std::vector<std::vector<double>> rows;
  for (auto row : text::split(value, ';')) {
    std::vector<double> vals;
    for (auto tok : text::tokens(row)) vals.push_back(text::parse_double(tok, key));
    require(!vals.empty(), Errc::ConfigError, "empty row in '" + std::string(key) + "'");
    rows.push_back(std::move(vals));
  }
  const std::size_t cols = rows.front().size();
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == cols, Errc::ConfigError, "ragged rows in '" + std::string(key) + "'");
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

}  // namespace detail

inline void write_mixture(std::ostream& os, const DiscreteClassMixture& mix) {
  os << "# discrete class mixture\n";
  os << "format_version = " << kMixtureFormatVersion << "\n";
  os << "id = " << mix.id() << "\n";
  os << "points = " << detail::matrix_rows(mix.points().transpose()) << "\n";
  os << "labels =";
  for (auto l : mix.labels()) os << ' ' << l;
  os << "\n";
  os << "conditionals = " << detail::matrix_rows(mix.conditionals()) << "\n";
  os << "prior = " << detail::matrix_rows(mix.prior().transpose()) << "\n";
  os << "tau_plus = " << text::format_double(mix.tau_plus()) << "\n";
}

inline DiscreteClassMixture read_mixture(std::istream& is) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    auto body = text::trim(std::string_view(line).substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    require(eq != std::string_view::npos, Errc::ConfigError, "mixture line without '=': " + line);
    kv[std::string(text::trim(body.substr(0, eq)))] = std::string(text::trim(body.substr(eq + 1)));
  }
  for (const auto& [key, _] : kv)
    require(key == "format_version" || key == "id" || key == "points" || key == "labels" || key == "conditionals" ||
                key == "prior" || key == "tau_plus",
            Errc::ConfigError, "unknown mixture key '" + key + "'");
  for (const char* key : {"points", "labels", "conditionals", "prior"})
    require(kv.count(key) == 1, Errc::ConfigError, std::string("mixture file is missing '") + key + "'");
  if (kv.count("format_version"))
    require(text::parse_u64(kv["format_version"], "format_version") == kMixtureFormatVersion, Errc::ConfigError,
            "unsupported mixture format_version");

  MixtureSpec spec;
  spec.id = kv.count("id") ? kv["id"] : "file";
  spec.points = detail::parse_rows(kv["points"], "points").transpose();
  for (auto tok : text::tokens(kv["labels"])) spec.labels.push_back(text::parse_u64(tok, "labels"));
  spec.conditionals = detail::parse_rows(kv["conditionals"], "conditionals");
  spec.prior = detail::parse_rows(kv["prior"], "prior").transpose();
  require(spec.prior.cols() == 1, Errc::ConfigError, "prior must be a single row");
  if (kv.count("tau_plus")) spec.tau_plus = text::parse_double(kv["tau_plus"], "tau_plus");
  return build_discrete(std::move(spec));
}

// ---------------------------------------------------------------------------

/// Continuous world: class c draws normalize(mean_c + noise_scale * z).
class SphereMixture {
 public:
  SphereMixture(Matrix class_means, double noise_scale, Vector prior)
      : means_(std::move(class_means)), noise_(noise_scale), prior_(std::move(prior)) {
    require(means_.cols() >= 1 && means_.rows() >= 2, Errc::InvalidArgument, "sphere mixture needs K >= 1, m >= 2");
    require(noise_ > 0.0 && std::isfinite(noise_), Errc::InvalidArgument, "noise_scale must be positive");
    require(prior_.size() == means_.cols(), Errc::PriorMismatch, "prior length must equal K");
    for (Eigen::Index c = 0; c < means_.cols(); ++c)
      require(std::abs(means_.col(c).norm() - 1.0) <= kUnitTolerance, Errc::InvalidArgument,
              "class means must be unit-norm");
    require(std::abs(prior_.sum() - 1.0) <= kTableTolerance && prior_.minCoeff() > 0.0, Errc::PriorMismatch,
            "prior must be positive and sum to 1");
    std::vector<double> p(prior_.data(), prior_.data() + prior_.size());
    class_sampler_ = AliasTable(p);
  }

  /// K random unit means in dimension m, uniform prior.
  static SphereMixture random(std::size_t classes, Eigen::Index feature_dim, double noise_scale, Rng& rng) {
    Matrix means(feature_dim, static_cast<Eigen::Index>(classes));
    for (Eigen::Index c = 0; c < means.cols(); ++c) {
      for (Eigen::Index i = 0; i < feature_dim; ++i) means(i, c) = rng.normal();
      means.col(c).normalize();
    }
    return SphereMixture(std::move(means), noise_scale,
                         Vector::Constant(static_cast<Eigen::Index>(classes), 1.0 / static_cast<double>(classes)));
  }

  std::size_t num_classes() const noexcept { return static_cast<std::size_t>(means_.cols()); }
  Eigen::Index feature_dim() const noexcept { return means_.rows(); }
  const Matrix& class_means() const noexcept { return means_; }
  double noise_scale() const noexcept { return noise_; }
  const Vector& prior() const noexcept { return prior_; }

  std::size_t draw_class(Rng& rng) const { return class_sampler_(rng); }

  /// Class drawn from rho restricted to classes other than `excluded`.
  std::size_t draw_other_class(std::size_t excluded, Rng& rng) const {
    require(num_classes() >= 2, Errc::DegenerateClass, "true negatives need at least two classes");
    while (true) {
      const std::size_t c = class_sampler_(rng);
      if (c != excluded) return c;
    }
  }

  Vector sample(std::size_t c, Rng& rng) const {
    Vector v = means_.col(static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) += noise_ * rng.normal();
    return normalize(v).coords();
  }

 private:
  Matrix means_;
  double noise_;
  Vector prior_;
  AliasTable class_sampler_;
};

// ---------------------------------------------------------------------------

enum class NegativeMode { BiasedNegatives, TrueNegatives };

struct SampleOptions {
  std::size_t negatives = 1;        // N
  std::size_t positives = 1;        // M
  NegativeMode mode = NegativeMode::BiasedNegatives;
  bool reuse_positive = false;      // v_1 = x+
  std::optional<std::size_t> anchor;  // discrete worlds only: fix x instead of drawing it
};

/// (x, x+, {u_i}_N, {v_i}_M). Point is an index for discrete worlds and a
/// feature vector for sphere worlds.
template <class Point>
struct TripleSample {
  Point anchor;
  Point positive;
  std::vector<Point> negatives;
  std::vector<Point> extra_positives;
  std::size_t anchor_class = 0;
};

inline TripleSample<std::size_t> sample_triple(const DiscreteClassMixture& mix, const SampleOptions& opt, Rng& rng) {
  require(opt.negatives >= 1 && opt.positives >= 1, Errc::InvalidArgument, "N and M must be >= 1");
  if (opt.mode == NegativeMode::TrueNegatives)
    require(mix.num_classes() >= 2, Errc::DegenerateClass, "true negatives need at least two classes");
  TripleSample<std::size_t> out;
  out.anchor = opt.anchor ? *opt.anchor : mix.sample_marginal(rng);
  require(out.anchor < mix.num_points(), Errc::InvalidArgument, "anchor index out of range");
  out.anchor_class = mix.label(out.anchor);
  out.positive = mix.sample_positive(out.anchor, rng);
  out.negatives.resize(opt.negatives);
  for (auto& u : out.negatives)
    u = opt.mode == NegativeMode::TrueNegatives ? mix.sample_negative(out.anchor, rng) : mix.sample_marginal(rng);
  out.extra_positives.resize(opt.positives);
  for (std::size_t i = 0; i < opt.positives; ++i)
    out.extra_positives[i] = (i == 0 && opt.reuse_positive) ? out.positive : mix.sample_positive(out.anchor, rng);
  return out;
}

inline TripleSample<Vector> sample_triple(const SphereMixture& world, const SampleOptions& opt, Rng& rng) {
  require(opt.negatives >= 1 && opt.positives >= 1, Errc::InvalidArgument, "N and M must be >= 1");
  if (opt.mode == NegativeMode::TrueNegatives)
    require(world.num_classes() >= 2, Errc::DegenerateClass, "true negatives need at least two classes");
  TripleSample<Vector> out;
  out.anchor_class = world.draw_class(rng);
  out.anchor = world.sample(out.anchor_class, rng);
  out.positive = world.sample(out.anchor_class, rng);
  out.negatives.reserve(opt.negatives);
  for (std::size_t i = 0; i < opt.negatives; ++i) {
    const std::size_t c = opt.mode == NegativeMode::TrueNegatives ? world.draw_other_class(out.anchor_class, rng)
                                                                  : world.draw_class(rng);
    out.negatives.push_back(world.sample(c, rng));
  }
  out.extra_positives.reserve(opt.positives);
  for (std::size_t i = 0; i < opt.positives; ++i)
    out.extra_positives.push_back((i == 0 && opt.reuse_positive) ? out.positive
                                                                 : world.sample(out.anchor_class, rng));
  return out;
}

}  // namespace dcl
