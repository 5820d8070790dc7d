// dcl_lab: command-line laboratory for the debiased contrastive loss.
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dcl/cli.hpp"

namespace {

using namespace dcl;
using namespace dcl::cli;

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(static_cast<bool>(is), Errc::ConfigError, "cannot read config file " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Debiased contrastive loss laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  std::vector<std::string> sets;
  bool grid = false;
  auto* seed_opt = app.add_option("--seed", seed, "master seed (overrides the config)");
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", sets, "key=value override, repeatable")->allow_extra_args(false);
  app.add_flag("--grid", grid, "verify thm3: take every (N, M) pair");

  auto* train = app.add_subcommand("train", "train encoders and probe them");
  auto* probe = app.add_subcommand("probe", "linear probe of a saved checkpoint");
  auto* verify = app.add_subcommand("verify", "certify a bound");
  verify->require_subcommand(1);
  std::string check;
  for (const char* name : {"lemma1", "thm3", "rate", "lemma4", "oracle"})
    verify->add_subcommand(name, std::string("run the ") + name + " check")->fallthrough()->callback([&check, name] {
      check = name;
    });
  auto* gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  auto* gen_data = app.add_subcommand("gen-data", "write a mixture definition file");
  for (auto* sub : {train, probe, verify, gradcheck, gen_data}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  std::string command;
  if (train->parsed()) command = "train";
  else if (probe->parsed()) command = "probe";
  else if (verify->parsed()) command = "verify " + check;
  else if (gradcheck->parsed()) command = "gradcheck";
  else command = "gen-data";

  try {
    std::vector<std::pair<std::string, std::string>> entries;
    if (!config_path.empty()) entries = parse_config_text(slurp(config_path));
    for (const auto& s : sets) entries.push_back(parse_assignment(s, "--set " + s));
    std::optional<std::uint64_t> seed_override;
    if (seed_opt->count() > 0) seed_override = seed;
    ExperimentConfig cfg = resolve_config(command, entries, seed_override);
    cfg.out_dir = out_dir;

    RunReport report;
    if (command == "train") report = cmd_train(cfg);
    else if (command == "probe") report = cmd_probe(cfg);
    else if (command == "gradcheck") report = cmd_gradcheck(cfg);
    else if (command == "gen-data") report = cmd_gen_data(cfg);
    else report = cmd_verify(cfg, check, grid);

    std::size_t failed = 0;
    for (const auto& c : report.certificates) failed += c.passed ? 0 : 1;
    std::cout << command << ": " << (report.passed ? "pass" : "FAIL");
    if (!report.certificates.empty())
      std::cout << " (" << report.certificates.size() - failed << "/" << report.certificates.size()
                << " certificates)";
    std::cout << ", config " << report.config_hash << ", seed " << report.seed << "\n";
    return report.passed ? kPass : kFail;
  } catch (const Error& e) {
    std::cerr << "dcl_lab: " << e.what() << "\n";
    return e.code() == Errc::DivergenceDetected ? kFail : kConfigError;
  }
}
