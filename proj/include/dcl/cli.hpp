// Experiment plumbing for dcl_lab: flat key = value configs, the subcommands,
// and artifact emission. Artifacts are named relative to the output
// directory so reruns into different directories stay byte-identical.
#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dcl/autograd.hpp"
#include "dcl/certificate.hpp"
#include "dcl/error.hpp"
#include "dcl/evaluation.hpp"
#include "dcl/text.hpp"
#include "dcl/training.hpp"
#include "dcl/verification.hpp"
#include "dcl/worldmodel.hpp"

namespace dcl::cli {

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kPass = 0, kFail = 1, kConfigError = 2 };

inline constexpr std::string_view kTrainLogHeader = "epoch,loss,wall_ms";
inline constexpr std::string_view kProbeHeader = "seed,loss_kind,tau_plus,accuracy";
inline constexpr std::string_view kRateHeader = "size,mean_gap,stderr";
inline constexpr std::string_view kGradcheckHeader =
    "case,loss_kind,output_dim,input_dim,hidden_dim,batch_size,positives,tau_plus,t,max_rel_err,excluded,passed";

// ---------------------------------------------------------------------------
// Config

/// Key and default; no default means the key is required.
using KeyTable = std::vector<std::pair<std::string, std::optional<std::string>>>;

inline const KeyTable& world_keys() {
  static const KeyTable keys = {
      {"dataset", std::nullopt},   {"classes", "10"},      {"feature_dim", "32"},   {"noise_scale", "0.3"},
      {"subclusters", "3"},        {"points_per_class", "12"}, {"world_seed", "0"}, {"dataset_size", "640"},
      {"eval_size", "2000"},       {"view_noise", "0.2"},
  };
  return keys;
}

inline const KeyTable& verify_common_keys() {
  static const KeyTable keys = {
      {"embedding", "random"}, {"embed_dim", "8"},      {"instances", "1"},        {"classes", "3"},
      {"points_per_class", "2"}, {"feature_dim", "4"}, {"uniform_prior", "true"}, {"t", "1"},
      {"trials", "100000"},    {"threads", "1"},        {"test_rhs_scale", "1"},   {"record_timing", "false"},
  };
  return keys;
}

inline KeyTable command_keys(std::string_view command) {
  KeyTable keys;
  auto add = [&keys](const KeyTable& more) { keys.insert(keys.end(), more.begin(), more.end()); };
  if (command == "train") {
    add(world_keys());
    add({{"loss", "biased,debiased,unbiased"}, {"tau_plus", "0.1"}, {"seeds", ""}, {"t", "0.5"},
         {"positives", "1"}, {"floor", "exp"}, {"batch_size", "64"}, {"epochs", "200"}, {"optimizer", "adam"},
         {"learning_rate", "0.001"}, {"momentum", "0.9"}, {"output_dim", "16"}, {"hidden_dim", "0"},
         {"record_timing", "false"}, {"checkpoint", "true"}});
  } else if (command == "probe") {
    add(world_keys());
    add({{"checkpoint", std::nullopt}, {"record_timing", "false"}});
  } else if (command == "verify lemma1") {
    add(verify_common_keys());
    add({{"mixture", "paper-uniform"}, {"N", "1,4,16"}});
  } else if (command == "verify thm3") {
    add(verify_common_keys());
    add({{"mixture", "matched"}, {"N", "4,16,64,256"}, {"M", "4,16,64,256"}, {"tau_plus", "0.05,0.1,0.2"}});
  } else if (command == "verify rate") {
    add(verify_common_keys());
    add({{"mixture", "paper-uniform"}, {"sweep", "N"}, {"grid", "16,64,256,1024,4096"}, {"fixed", "40960"},
         {"tau_plus", "mixture"}, {"slope_min", "-0.65"}, {"slope_max", "-0.35"}, {"r2_min", "0.9"},
         {"expect_status", "fitted"}});
    for (auto& [k, v] : keys)
      if (k == "trials") v = "10000";
  } else if (command == "verify lemma4") {
    add(verify_common_keys());
    add({{"mixture", "paper-uniform,small-uniform,skewed-prior"}, {"N", "auto"}, {"run_probe", "false"},
         {"subtasks", "3"}});
  } else if (command == "verify oracle") {
    add(verify_common_keys());
    add({{"mixture", "random"}, {"max_n", "6"}, {"max_points", "10"}, {"tolerance", "1e-9"}});
    for (auto& [k, v] : keys)
      if (k == "instances") v = "50";
  } else if (command == "gradcheck") {
    add({{"cases", "200"}, {"tolerance", "1e-5"}, {"step", "1e-6"}, {"losses", "biased,debiased,unbiased"},
         {"tau_plus", "0.1"}, {"t", "0.5"}, {"max_dim", "6"}, {"max_batch", "5"}, {"max_positives", "3"},
         {"clamp_case", "true"}, {"record_timing", "false"}});
  } else if (command == "gen-data") {
    add({{"mixture", "paper-uniform"}, {"classes", "3"}, {"points_per_class", "2"}, {"feature_dim", "4"},
         {"uniform_prior", "true"}});
  } else {
    throw Error(Errc::ConfigError, "unknown command '" + std::string(command) + "'");
  }
  return keys;
}

inline std::pair<std::string, std::string> parse_assignment(std::string_view line, const std::string& where) {
  const auto eq = line.find('=');
  require(eq != std::string_view::npos, Errc::ConfigError, where + ": expected key = value");
  std::string key(text::trim(line.substr(0, eq)));
  require(!key.empty(), Errc::ConfigError, where + ": empty key");
  return {key, std::string(text::trim(line.substr(eq + 1)))};
}

/// Parses "key = value" lines; '#' starts a comment. Later lines win.
inline std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view body) {
  std::vector<std::pair<std::string, std::string>> out;
  std::size_t lineno = 0;
  for (auto line : text::split(body, '\n')) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = text::trim(line);
    if (line.empty()) continue;
    out.push_back(parse_assignment(line, "line " + std::to_string(lineno)));
  }
  return out;
}

struct ExperimentConfig {
  std::string command;
  std::map<std::string, std::string> values;
  std::uint64_t seed = 1;
  std::filesystem::path out_dir = ".";
  int format_version = kSchemaVersion;

  const std::string& str(const std::string& key) const {
    const auto it = values.find(key);
    require(it != values.end(), Errc::ConfigError, "missing key '" + key + "'");
    return it->second;
  }
  double num(const std::string& key) const { return text::parse_double(str(key), key); }
  std::size_t count(const std::string& key) const { return static_cast<std::size_t>(text::parse_u64(str(key), key)); }
  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error(Errc::ConfigError, "key '" + key + "' expects true or false, got '" + v + "'");
  }
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    if (str(key).empty()) return out;
    for (auto part : text::split(str(key), ',')) {
      require(!part.empty(), Errc::ConfigError, "empty element in list '" + key + "'");
      out.emplace_back(part);
    }
    return out;
  }
  std::vector<double> nums(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : list(key)) out.push_back(text::parse_double(s, key));
    return out;
  }
  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& s : list(key)) out.push_back(static_cast<std::size_t>(text::parse_u64(s, key)));
    return out;
  }

  /// Sorted, defaults filled in, output directory excluded.
  std::string canonical() const {
    std::string out = "command=" + command + "\nformat_version=" + std::to_string(format_version) +
                      "\nseed=" + std::to_string(seed) + "\n";
    for (const auto& [k, v] : values) out += k + "=" + v + "\n";
    return out;
  }
  std::string hash() const { return text::hex64(text::fnv1a(canonical())); }
};

/// Layers defaults, file entries and overrides (later wins), then validates.
inline ExperimentConfig resolve_config(const std::string& command,
                                       const std::vector<std::pair<std::string, std::string>>& entries,
                                       std::optional<std::uint64_t> seed_override = {}) {
  ExperimentConfig cfg;
  cfg.command = command;
  const KeyTable keys = command_keys(command);
  for (const auto& [k, v] : keys)
    if (v) cfg.values[k] = *v;
  for (const auto& [k, v] : entries) {
    if (k == "seed") {
      cfg.seed = text::parse_u64(v, "seed");
    } else if (k == "format_version") {
      const auto version = text::parse_u64(v, "format_version");
      require(version == kSchemaVersion, Errc::ConfigError,
              "format_version " + v + " does not match schema version " + std::to_string(kSchemaVersion));
    } else {
      const bool known = std::any_of(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == k; });
      require(known, Errc::ConfigError, "unknown key '" + k + "' for " + command);
      cfg.values[k] = v;
    }
  }
  if (seed_override) cfg.seed = *seed_override;
  for (const auto& [k, v] : keys)
    require(v.has_value() || cfg.values.count(k), Errc::ConfigError, "missing required key '" + k + "'");
  return cfg;
}

// ---------------------------------------------------------------------------
// Reports

struct RunReport {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::vector<BoundCertificate> certificates;
  std::vector<std::string> artifacts;
  Json summary = Json::object();
  bool passed = true;
  std::optional<std::string> started, finished;  // only with record_timing
};

inline std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    require(!ec, Errc::IoError, "cannot create output directory " + dir_.string());
  }

  void write(RunReport& report, const std::string& name, const std::string& body) {
    std::ofstream os(dir_ / name, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(os), Errc::IoError, "cannot open " + (dir_ / name).string());
    os << body;
    os.close();
    require(!os.fail(), Errc::IoError, "write failed for " + (dir_ / name).string());
    report.artifacts.push_back(name);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
};

inline Json report_json(const ExperimentConfig& cfg, const RunReport& report) {
  Json j;
  j["format_version"] = kSchemaVersion;
  j["command"] = report.command;
  j["seed"] = report.seed;
  j["config_hash"] = report.config_hash;
  Json config = Json::object();
  for (const auto& [k, v] : cfg.values) config[k] = v;
  j["config"] = config;
  j["rng"] = kRngName;
  j["started"] = report.started ? Json(*report.started) : Json(nullptr);
  j["finished"] = report.finished ? Json(*report.finished) : Json(nullptr);
  std::size_t failed = 0;
  for (const auto& c : report.certificates) failed += c.passed ? 0 : 1;
  j["certificates"] = {{"total", report.certificates.size()}, {"failed", failed}};
  j["passed"] = report.passed;
  j["summary"] = report.summary;
  j["artifacts"] = report.artifacts;
  return j;
}

/// Writes certificates.jsonl when there are any, then report.json.
inline void finish_report(const ExperimentConfig& cfg, RunReport& report, ArtifactWriter& out) {
  for (const auto& c : report.certificates) report.passed = report.passed && c.passed;
  if (!report.certificates.empty()) {
    std::string lines;
    for (const auto& c : report.certificates) lines += c.to_json().dump() + "\n";
    out.write(report, "certificates.jsonl", lines);
  }
  if (report.started) report.finished = utc_now();
  const Json j = report_json(cfg, report);
  std::ofstream os(out.dir() / "report.json", std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(os), Errc::IoError, "cannot write report.json");
  os << j.dump(2) << "\n";
}

inline RunReport start_report(const ExperimentConfig& cfg) {
  RunReport r;
  r.command = cfg.command;
  r.config_hash = cfg.hash();
  r.seed = cfg.seed;
  if (cfg.values.count("record_timing") && cfg.flag("record_timing")) r.started = utc_now();
  return r;
}

// ---------------------------------------------------------------------------
// Worlds and instances

inline DiscreteClassMixture load_mixture_file(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), Errc::IoError, "cannot open mixture file " + path);
  return read_mixture(is);
}

/// dataset = sphere | subclusters | mixture:<preset> | file:<path>
inline World make_training_world(const ExperimentConfig& cfg, Rng& rng) {
  const std::string& name = cfg.str("dataset");
  if (name == "sphere")
    return SphereMixture::random(cfg.count("classes"), static_cast<Eigen::Index>(cfg.count("feature_dim")),
                                 cfg.num("noise_scale"), rng);
  if (name == "subclusters")
    return subcluster_world(cfg.count("classes"), cfg.count("subclusters"),
                            static_cast<Eigen::Index>(cfg.count("feature_dim")), cfg.count("points_per_class"),
                            cfg.num("noise_scale"), rng);
  if (name.rfind("mixture:", 0) == 0) return preset_mixture(name.substr(8));
  if (name.rfind("file:", 0) == 0) return load_mixture_file(name.substr(5));
  throw Error(Errc::ConfigError, "unknown dataset '" + name + "'");
}

struct TrainingData {
  World world;
  Dataset train;
  Dataset eval;
};

/// World and both datasets come from one stream keyed by the world seed.
inline TrainingData make_training_data(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  const std::uint64_t ws = cfg.count("world_seed") == 0 ? run_seed : cfg.count("world_seed");
  Rng rng = Rng::substream(ws, {9});
  World world = make_training_world(cfg, rng);
  Dataset train = make_dataset(world, cfg.count("dataset_size"), rng);
  train.view_noise = cfg.num("view_noise");
  Dataset eval = make_dataset(world, cfg.count("eval_size"), rng);
  return {std::move(world), std::move(train), std::move(eval)};
}

/// mixture spec: a preset name, random, matched (uniform K = 1/tau+) or file:<path>.
inline DiscreteClassMixture make_verify_mixture(const ExperimentConfig& cfg, const std::string& spec, Rng& rng,
                                                std::optional<double> tau_plus = {}) {
  RandomMixtureOptions opt{cfg.count("classes"), cfg.count("points_per_class"),
                           static_cast<Eigen::Index>(cfg.count("feature_dim")), cfg.flag("uniform_prior")};
  if (spec == "random") return random_mixture(opt, rng);
  if (spec == "matched") {
    require(tau_plus.has_value(), Errc::ConfigError, "mixture 'matched' needs a numeric tau_plus");
    const double k = std::round(1.0 / *tau_plus);
    require(k >= 2.0 && std::abs(1.0 / k - *tau_plus) < 1e-12, Errc::ConfigError,
            "mixture 'matched' needs tau_plus = 1/K for an integer K >= 2");
    opt.classes = static_cast<std::size_t>(k);
    opt.uniform_prior = true;
    return random_mixture(opt, rng, "matched-K" + std::to_string(opt.classes));
  }
  if (spec.rfind("file:", 0) == 0) return load_mixture_file(spec.substr(5));
  return preset_mixture(spec);
}

/// embedding: random (Gaussian, embed_dim), points (the normalized inputs) or constant.
inline EmbeddingTable make_verify_embedding(const ExperimentConfig& cfg, const DiscreteClassMixture& mix, Rng& rng) {
  const std::string& kind = cfg.str("embedding");
  const auto S = static_cast<Eigen::Index>(mix.num_points());
  const auto d = static_cast<Eigen::Index>(cfg.count("embed_dim"));
  if (kind == "constant") return EmbeddingTable::constant(d, S);
  if (kind == "points") return EmbeddingTable(mix.points());
  require(kind == "random", Errc::ConfigError, "unknown embedding '" + kind + "'");
  require(d >= 2, Errc::DimensionTooSmall, "embed_dim must be >= 2");
  Matrix raw(d, S);
  for (Eigen::Index j = 0; j < S; ++j)
    for (Eigen::Index i = 0; i < d; ++i) raw(i, j) = rng.normal();
  return EmbeddingTable(raw);
}

inline McOptions mc_options(const ExperimentConfig& cfg, Rng& rng) {
  McOptions opt;
  opt.trials = cfg.count("trials");
  opt.seed = rng.next_u64();
  opt.t = cfg.num("t");
  opt.threads = static_cast<unsigned>(cfg.count("threads"));
  opt.rhs_scale = cfg.num("test_rhs_scale");
  return opt;
}

inline Rng instance_rng(const ExperimentConfig& cfg, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  return Rng::substream(cfg.seed, {0x1257, a, b, c});
}

// ---------------------------------------------------------------------------
// Commands

inline BatchLossKind parse_loss_kind(const std::string& s) {
  if (s == "biased") return BatchLossKind::Biased;
  if (s == "debiased") return BatchLossKind::Debiased;
  if (s == "unbiased") return BatchLossKind::Unbiased;
  throw Error(Errc::ConfigError, "unknown loss '" + s + "'");
}

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "momentum") return OptimizerKind::Momentum;
  if (s == "adam") return OptimizerKind::Adam;
  throw Error(Errc::ConfigError, "unknown optimizer '" + s + "'");
}

inline FloorMode parse_floor(const std::string& s) {
  if (s == "exp") return FloorMode::ExpFloor;
  if (s == "zero") return FloorMode::ZeroFloor;
  throw Error(Errc::ConfigError, "unknown floor '" + s + "'");
}

inline std::string run_tag(const std::string& loss, double tau, std::uint64_t seed) {
  return loss + "_tau" + text::format_double(tau) + "_seed" + std::to_string(seed);
}

inline double probe_accuracy(const EncoderParams& params, const TrainingData& data) {
  return linear_probe(params.embed(data.train.identities), data.train.labels, params.embed(data.eval.identities),
                      data.eval.labels)
      .accuracy;
}

/// One run per (seed, loss, tau+); tau+ only varies for the debiased loss and
/// is written as 0 for the others.
inline RunReport cmd_train(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  ArtifactWriter out(cfg.out_dir);
  std::vector<std::uint64_t> seeds;
  for (auto s : cfg.counts("seeds")) seeds.push_back(s);
  if (seeds.empty()) seeds.push_back(cfg.seed);
  const auto losses = cfg.list("loss");
  require(!losses.empty(), Errc::ConfigError, "loss list is empty");
  const auto taus = cfg.nums("tau_plus");

  TrainConfig base;
  base.batch_size = cfg.count("batch_size");
  base.epochs = cfg.count("epochs");
  base.optimizer.kind = parse_optimizer(cfg.str("optimizer"));
  base.optimizer.learning_rate = cfg.num("learning_rate");
  base.optimizer.momentum = cfg.num("momentum");
  base.output_dim = static_cast<Eigen::Index>(cfg.count("output_dim"));
  base.hidden_dim = static_cast<Eigen::Index>(cfg.count("hidden_dim"));
  base.record_timing = cfg.flag("record_timing");
  base.loss.t = cfg.num("t");
  base.loss.floor = parse_floor(cfg.str("floor"));
  const std::size_t positives = cfg.count("positives");

  std::string probe_csv = std::string(kProbeHeader) + "\n";
  Json runs = Json::array();
  for (std::uint64_t seed : seeds) {
    const TrainingData data = make_training_data(cfg, seed);
    for (const auto& loss : losses) {
      const BatchLossKind kind = parse_loss_kind(loss);
      std::vector<double> run_taus = {0.0};
      if (kind == BatchLossKind::Debiased) {
        require(!taus.empty(), Errc::ConfigError, "debiased training needs tau_plus");
        run_taus = taus;
      }
      for (double tau : run_taus) {
        TrainConfig tc = base;
        tc.seed = seed;
        tc.loss.kind = kind;
        tc.loss.tau_plus = tau;
        tc.loss.positives = kind == BatchLossKind::Debiased ? positives : 1;
        const TrainResult res = train(tc, data.world, data.train);
        const double acc = probe_accuracy(res.params, data);
        const std::string tag = run_tag(loss, tau, seed);

        std::ostringstream log;
        write_training_log(log, res.log);
        out.write(report, "train_log_" + tag + ".csv", log.str());
        if (cfg.flag("checkpoint")) {
          Checkpoint ck{res.params, report.config_hash,
                        {{"seed", std::to_string(seed)}, {"loss_kind", loss}, {"tau_plus", text::format_double(tau)},
                         {"dataset", cfg.str("dataset")}}};
          std::ostringstream os;
          write_checkpoint(os, ck);
          out.write(report, "checkpoint_" + tag + ".txt", os.str());
        }
        probe_csv += std::to_string(seed) + "," + loss + "," + text::format_double(tau) + "," +
                     text::format_double(acc) + "\n";
        runs.push_back({{"seed", seed}, {"loss_kind", loss}, {"tau_plus", tau}, {"accuracy", acc},
                        {"final_loss", res.log.back().loss}});
      }
    }
  }
  out.write(report, "probe.csv", probe_csv);
  report.summary["runs"] = runs;
  finish_report(cfg, report, out);
  return report;
}

/// Re-probes a saved encoder on the configured world.
inline RunReport cmd_probe(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  ArtifactWriter out(cfg.out_dir);
  std::ifstream is(cfg.str("checkpoint"));
  require(static_cast<bool>(is), Errc::IoError, "cannot open checkpoint " + cfg.str("checkpoint"));
  const Checkpoint ck = read_checkpoint(is);
  const std::uint64_t seed = text::parse_u64(ck.meta_value("seed"), "checkpoint seed");
  const TrainingData data = make_training_data(cfg, seed);
  const double acc = probe_accuracy(ck.params, data);
  out.write(report, "probe.csv",
            std::string(kProbeHeader) + "\n" + std::to_string(seed) + "," + ck.meta_value("loss_kind") + "," +
                ck.meta_value("tau_plus") + "," + text::format_double(acc) + "\n");
  report.summary["accuracy"] = acc;
  report.summary["checkpoint_config_hash"] = ck.config_hash;
  finish_report(cfg, report, out);
  return report;
}

inline std::optional<double> tau_or_mixture(const std::string& s) {
  if (s == "mixture") return std::nullopt;
  return text::parse_double(s, "tau_plus");
}

inline RunReport verify_lemma1(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  for (const auto& spec : cfg.list("mixture"))
    for (std::size_t i = 0; i < cfg.count("instances"); ++i) {
      Rng rng = instance_rng(cfg, 1, i, text::fnv1a(spec));
      const auto mix = make_verify_mixture(cfg, spec, rng);
      const auto f = make_verify_embedding(cfg, mix, rng);
      for (std::size_t n : cfg.counts("N")) {
        auto cert = lemma1_certificate(f, mix, n, mc_options(cfg, rng));
        cert.meta["instance"] = i;
        report.certificates.push_back(std::move(cert));
      }
    }
  return report;
}

/// Without `grid`, N and M are zipped (a single value broadcasts).
inline std::vector<std::pair<std::size_t, std::size_t>> thm3_cells(const ExperimentConfig& cfg, bool grid) {
  const auto ns = cfg.counts("N"), ms = cfg.counts("M");
  require(!ns.empty() && !ms.empty(), Errc::ConfigError, "N and M must be non-empty");
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  if (grid) {
    for (auto n : ns)
      for (auto m : ms) cells.emplace_back(n, m);
    return cells;
  }
  require(ns.size() == ms.size() || ns.size() == 1 || ms.size() == 1, Errc::ConfigError,
          "N and M lists must have equal length unless --grid is given");
  const std::size_t len = std::max(ns.size(), ms.size());
  for (std::size_t k = 0; k < len; ++k) cells.emplace_back(ns[ns.size() == 1 ? 0 : k], ms[ms.size() == 1 ? 0 : k]);
  return cells;
}

inline RunReport verify_thm3(const ExperimentConfig& cfg, bool grid) {
  RunReport report = start_report(cfg);
  const auto cells = thm3_cells(cfg, grid);
  std::vector<std::optional<double>> taus;
  for (const auto& s : cfg.list("tau_plus")) taus.push_back(tau_or_mixture(s));
  std::size_t skipped = 0;
  for (const auto& spec : cfg.list("mixture"))
    for (std::size_t ti = 0; ti < taus.size(); ++ti)
      for (std::size_t i = 0; i < cfg.count("instances"); ++i) {
        Rng rng = instance_rng(cfg, 3, i, text::fnv1a(spec) + ti);
        const auto mix = make_verify_mixture(cfg, spec, rng, taus[ti]);
        const auto f = make_verify_embedding(cfg, mix, rng);
        const double tau = taus[ti].value_or(mix.tau_plus());
        for (const auto& [n, m] : cells) {
          const McOptions opt = mc_options(cfg, rng);
          try {
            auto cert = theorem3_certificate(f, mix, n, m, tau, opt);
            cert.meta["instance"] = i;
            report.certificates.push_back(std::move(cert));
          } catch (const Error& e) {
            if (e.code() != Errc::NegativeDenominator) throw;
            ++skipped;
          }
        }
      }
  report.summary["cells"] = cells.size();
  report.summary["skipped_negative_denominator"] = skipped;
  return report;
}

inline RunReport verify_rate(const ExperimentConfig& cfg, ArtifactWriter& out) {
  RunReport report = start_report(cfg);
  const auto specs = cfg.list("mixture");
  require(specs.size() == 1, Errc::ConfigError, "rate fit takes exactly one mixture");
  Rng rng = instance_rng(cfg, 5, 0, text::fnv1a(specs[0]));
  const auto tau = tau_or_mixture(cfg.str("tau_plus"));
  const auto mix = make_verify_mixture(cfg, specs[0], rng, tau);
  const auto f = make_verify_embedding(cfg, mix, rng);
  RateSweep sweep;
  const std::string& var = cfg.str("sweep");
  require(var == "N" || var == "M", Errc::ConfigError, "sweep must be N or M");
  sweep.variable = var == "N" ? SweepVariable::N : SweepVariable::M;
  sweep.grid = cfg.counts("grid");
  sweep.fixed = cfg.count("fixed");
  sweep.tau_plus = tau.value_or(mix.tau_plus());
  const RateFit fit = rate_fit(f, mix, sweep, mc_options(cfg, rng));

  std::string csv = std::string(kRateHeader) + "\n";
  for (const auto& p : fit.grid)
    csv += std::to_string(p.size) + "," + text::format_double(p.mean_gap) + "," + text::format_double(p.mc_stderr) + "\n";
  out.write(report, "rate_fit.csv", csv);

  const std::string status = rate_status_name(fit.status);
  bool ok = status == cfg.str("expect_status");
  if (ok && fit.status == RateStatus::Fitted)
    ok = fit.slope >= cfg.num("slope_min") && fit.slope <= cfg.num("slope_max") && fit.r2 >= cfg.num("r2_min");
  report.passed = ok;
  report.summary = {{"sweep", var},          {"status", status}, {"slope", fit.slope},
                    {"intercept", fit.intercept}, {"r2", fit.r2},    {"tau_plus", sweep.tau_plus},
                    {"fixed", sweep.fixed}};
  return report;
}

inline RunReport verify_lemma4(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  for (const auto& spec : cfg.list("mixture"))
    for (std::size_t i = 0; i < cfg.count("instances"); ++i) {
      Rng rng = instance_rng(cfg, 4, i, text::fnv1a(spec));
      const auto mix = make_verify_mixture(cfg, spec, rng);
      const auto f = make_verify_embedding(cfg, mix, rng);
      const std::size_t K = mix.num_classes();
      std::vector<std::size_t> ns;
      if (cfg.str("N") == "auto") {
        for (std::size_t n = K - 1; n <= 4 * K; ++n) ns.push_back(n);
      } else {
        ns = cfg.counts("N");
      }
      Lemma4Options opt;
      opt.t = cfg.num("t");
      opt.run_probe = cfg.flag("run_probe");
      opt.subtasks = cfg.count("subtasks");
      opt.seed = rng.next_u64();
      for (std::size_t n : ns) {
        if (n == 0) continue;
        auto cert = lemma4_chain_check(f, mix, n, opt);
        cert.rhs *= cfg.num("test_rhs_scale");
        cert.decide();
        cert.meta["instance"] = i;
        cert.meta["embedding"] = cfg.str("embedding");
        report.certificates.push_back(std::move(cert));
      }
    }
  return report;
}

/// Inclusion-exclusion oracle against direct enumeration; lhs is the
/// relative error, rhs the tolerance.
inline RunReport verify_oracle(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  const std::size_t max_points = cfg.count("max_points");
  const std::size_t max_n = cfg.count("max_n");
  require(max_points >= 2, Errc::ConfigError, "max_points must be >= 2");
  require(max_n <= kOracleMaxNegatives, Errc::OracleRangeExceeded,
          "max_n exceeds the oracle's stable range of " + std::to_string(kOracleMaxNegatives));
  double worst = 0.0, worst_cond = 0.0;
  for (const auto& spec : cfg.list("mixture"))
    for (std::size_t i = 0; i < cfg.count("instances"); ++i) {
      Rng rng = instance_rng(cfg, 2, i, text::fnv1a(spec));
      DiscreteClassMixture mix = [&] {
        if (spec != "random") return make_verify_mixture(cfg, spec, rng);
        RandomMixtureOptions opt;
        opt.classes = 2 + rng.index(std::min<std::size_t>(4, max_points / 2));
        opt.points_per_class = 1 + rng.index(max_points / opt.classes);
        opt.feature_dim = 4;
        opt.uniform_prior = i % 2 == 0;
        return random_mixture(opt, rng, "oracle-random");
      }();
      require(mix.num_points() <= max_points, Errc::ConfigError, "mixture exceeds max_points");
      const auto f = make_verify_embedding(cfg, mix, rng);
      const double t = cfg.num("t");
      for (std::size_t n = 1; n <= max_n; ++n) {
        const auto oracle = binomial_oracle(f, mix, n, t);
        const double exact = unbiased_loss_exact(f, mix, n, {}, t).value;
        BoundCertificate cert;
        cert.check = "oracle";
        cert.lhs = std::abs(oracle.loss.value - exact) / std::abs(exact);
        cert.rhs = cfg.num("tolerance") * cfg.num("test_rhs_scale");
        cert.decide();
        cert.meta = {{"N", n},           {"K", mix.num_classes()}, {"S", mix.num_points()},
                     {"instance", i},    {"mixture", mix.id()},    {"uniform_prior", mix.uniform_prior()},
                     {"oracle", oracle.loss.value}, {"enumeration", exact},
                     {"condition_number", oracle.condition_number}, {"terms", oracle.terms}};
        worst = std::max(worst, cert.lhs);
        worst_cond = std::max(worst_cond, oracle.condition_number);
        report.certificates.push_back(std::move(cert));
      }
    }
  report.summary = {{"max_rel_err", worst}, {"max_condition_number", worst_cond}};
  return report;
}

inline RunReport cmd_verify(const ExperimentConfig& cfg, const std::string& check, bool grid) {
  ArtifactWriter out(cfg.out_dir);
  RunReport report;
  if (check == "lemma1") report = verify_lemma1(cfg);
  else if (check == "thm3") report = verify_thm3(cfg, grid);
  else if (check == "rate") report = verify_rate(cfg, out);
  else if (check == "lemma4") report = verify_lemma4(cfg);
  else if (check == "oracle") report = verify_oracle(cfg);
  else throw Error(Errc::ConfigError, "unknown check '" + check + "'");
  finish_report(cfg, report, out);
  return report;
}

// ---------------------------------------------------------------------------
// gradcheck

struct GradCase {
  EncoderParams params;
  InputBatch batch;
  BatchLossSpec spec;
};

inline GradCase random_grad_case(std::size_t index, const ExperimentConfig& cfg, BatchLossKind kind) {
  Rng rng = Rng::substream(cfg.seed, {0x6C, index});
  const std::size_t max_dim = std::max<std::size_t>(2, cfg.count("max_dim"));
  const std::size_t max_batch = std::max<std::size_t>(2, cfg.count("max_batch"));
  // case 0 is the smallest legal shape
  const bool minimal = index == 0;
  const auto d = static_cast<Eigen::Index>(minimal ? 2 : 2 + rng.index(max_dim - 1));
  const auto m = static_cast<Eigen::Index>(minimal ? 2 : 2 + rng.index(max_dim - 1));
  const auto h = static_cast<Eigen::Index>(minimal ? 0 : (rng.index(2) ? 2 + rng.index(max_dim - 1) : 0));
  const std::size_t B = minimal ? 2 : 2 + rng.index(max_batch - 1);
  const std::size_t M = minimal ? 1 : 1 + rng.index(std::max<std::size_t>(1, cfg.count("max_positives")));

  GradCase gc;
  gc.params = EncoderParams::random(d, m, h, rng);
  auto fill = [&rng, m](Eigen::Index cols) {
    Matrix x(m, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < m; ++i) x(i, j) = rng.normal();
    return x;
  };
  gc.batch.view_a = fill(static_cast<Eigen::Index>(B));
  gc.batch.view_b = fill(static_cast<Eigen::Index>(B));
  gc.batch.extras = fill(static_cast<Eigen::Index>(B * (M - 1)));
  for (std::size_t i = 0; i < B; ++i) gc.batch.labels.push_back(rng.index(2));
  gc.spec.kind = kind;
  gc.spec.tau_plus = cfg.num("tau_plus");
  gc.spec.t = cfg.num("t");
  gc.spec.positives = kind == BatchLossKind::Debiased ? M : 1;
  if (kind != BatchLossKind::Debiased) gc.batch.extras.resize(m, 0);
  return gc;
}

/// Tunes tau+ so one role's estimator sits exactly on the clamp boundary;
/// any parameter nudge then flips that role.
inline std::optional<GradCase> clamp_case(const ExperimentConfig& cfg) {
  for (std::size_t attempt = 0; attempt < 64; ++attempt) {
    GradCase gc = random_grad_case(1000 + attempt, cfg, BatchLossKind::Debiased);
    const Matrix pre = gc.params.forward(gc.batch.stacked());
    const auto B2 = static_cast<Eigen::Index>(2 * gc.batch.anchors());
    ViewBatch vb{normalize_columns(pre.leftCols(B2)), normalize_columns(pre.rightCols(pre.cols() - B2)),
                 gc.batch.labels};
    const Matrix view_sims = vb.views.transpose() * vb.views / gc.spec.t;
    const Matrix extra_sims = vb.views.transpose() * vb.extras / gc.spec.t;
    const double fl = floor_value(gc.spec.floor, gc.spec.t);
    for (std::size_t role = 0; role < 2 * vb.anchors(); ++role) {
      const RoleSims r = gather_role(vb, gc.spec, view_sims, extra_sims, role);
      double mu = 0.0, mv = 0.0;
      for (double s : r.s_neg) mu += std::exp(s);
      for (double s : r.s_v) mv += std::exp(s);
      mu /= static_cast<double>(r.s_neg.size());
      mv /= static_cast<double>(r.s_v.size());
      if (mv <= mu + 1e-3 || mu <= fl) continue;
      const double tau = (mu - fl) / (mv - fl);
      if (tau <= 0.0 || tau >= 0.99) continue;
      gc.spec.tau_plus = tau;
      return gc;
    }
  }
  return std::nullopt;
}

inline RunReport cmd_gradcheck(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  ArtifactWriter out(cfg.out_dir);
  const double tol = cfg.num("tolerance");
  const double step = cfg.num("step");
  std::string csv = std::string(kGradcheckHeader) + "\n";
  double worst = 0.0;
  std::size_t excluded = 0, failures = 0, rows = 0;
  auto record = [&](const std::string& name, const std::string& loss, const GradCase& gc) {
    const auto rep = finite_diff_check(gc.params, gc.batch, gc.spec, step);
    const bool ok = rep.max_rel_err <= tol;
    worst = std::max(worst, rep.max_rel_err);
    excluded += rep.excluded;
    failures += ok ? 0 : 1;
    ++rows;
    const auto& p = gc.params;
    csv += name + "," + loss + "," + std::to_string(p.output_dim()) + "," + std::to_string(p.input_dim()) + "," +
           std::to_string(p.hidden() ? p.hidden()->weight.rows() : 0) + "," + std::to_string(gc.batch.anchors()) +
           "," + std::to_string(gc.spec.positives) + "," + text::format_double(gc.spec.tau_plus) + "," +
           text::format_double(gc.spec.t) + "," + text::format_double(rep.max_rel_err) + "," +
           std::to_string(rep.excluded) + "," + (ok ? "true" : "false") + "\n";
  };
  for (std::size_t c = 0; c < cfg.count("cases"); ++c)
    for (const auto& loss : cfg.list("losses")) record(std::to_string(c), loss, random_grad_case(c, cfg, parse_loss_kind(loss)));
  if (cfg.flag("clamp_case")) {
    const auto gc = clamp_case(cfg);
    require(gc.has_value(), Errc::InvalidArgument, "could not construct a clamp-boundary case");
    record("clamp", "debiased", *gc);
  }
  out.write(report, "gradcheck.csv", csv);
  report.passed = failures == 0;
  report.summary = {{"rows", rows}, {"failed", failures}, {"max_rel_err", worst}, {"excluded_coordinates", excluded},
                    {"tolerance", tol}};
  finish_report(cfg, report, out);
  return report;
}

inline RunReport cmd_gen_data(const ExperimentConfig& cfg) {
  RunReport report = start_report(cfg);
  ArtifactWriter out(cfg.out_dir);
  Rng rng = Rng::substream(cfg.seed, {0x6D});
  const auto& spec = cfg.str("mixture");
  require(spec != "matched", Errc::ConfigError, "gen-data does not support the matched mixture");
  const auto mix = make_verify_mixture(cfg, spec, rng);
  std::ostringstream os;
  write_mixture(os, mix);
  out.write(report, "mixture.txt", os.str());
  report.summary = {{"mixture", mix.id()}, {"K", mix.num_classes()}, {"S", mix.num_points()},
                    {"tau_plus", mix.tau_plus()}};
  finish_report(cfg, report, out);
  return report;
}

}  // namespace dcl::cli
