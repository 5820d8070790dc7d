#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcl/cli.hpp"

namespace fs = std::filesystem;
using dcl::Json;

namespace {

fs::path work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("dcl_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int lab(const std::string& args, const fs::path& out) {
  const std::string cmd = std::string("\"") + DCL_LAB_PATH + "\" " + args + " --out \"" + out.string() + "\" > \"" +
                          (work_dir() / "stdout.txt").string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::istringstream is(read(p));
  std::vector<std::string> out;
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

Json report(const fs::path& dir) { return Json::parse(read(dir / "report.json")); }

const std::string kTinyTrain =
    "train --set dataset=subclusters --set epochs=2 --set dataset_size=64 --set eval_size=100 --set batch_size=16";

}  // namespace

TEST(Cli, ExitCodeTwoOnBadConfig) {
  const auto out = work_dir() / "bad";
  EXPECT_EQ(lab("train --set epochs=1", out), 2);  // dataset is required
  EXPECT_EQ(lab("verify lemma1 --set colour=red", out), 2);
  EXPECT_EQ(lab("verify lemma1 --set format_version=2", out), 2);
  EXPECT_EQ(lab("verify lemma1 --set N", out), 2);
  EXPECT_EQ(lab("frobnicate", out), 2);
  EXPECT_EQ(lab("verify thm3 --set N=4,16,64 --set M=4,16", out), 2);
  EXPECT_EQ(lab("verify oracle --set max_n=9", out), 2);
}

TEST(Cli, ExitCodeOneWhenABoundIsBroken) {
  const auto ok = work_dir() / "lemma4_ok", broken = work_dir() / "lemma4_broken";
  EXPECT_EQ(lab("verify lemma4 --set instances=2", ok), 0);
  EXPECT_EQ(lab("verify lemma4 --set instances=2 --set test_rhs_scale=0", broken), 1);
  const auto r = report(broken);
  EXPECT_FALSE(r["passed"].get<bool>());
  EXPECT_GT(r["certificates"]["failed"].get<std::size_t>(), 0u);
}

TEST(Cli, OracleDefaultsPass) {
  const auto out = work_dir() / "oracle";
  EXPECT_EQ(lab("verify oracle", out), 0);
  const auto certs = lines(out / "certificates.jsonl");
  EXPECT_EQ(certs.size(), 300u);  // 50 instances x N = 1..6
  for (const auto& l : certs) EXPECT_TRUE(Json::parse(l)["meta"].contains("condition_number"));
}

TEST(Cli, Thm3GridIsTheProduct) {
  const auto zipped = work_dir() / "thm3_zip", grid = work_dir() / "thm3_grid";
  const std::string common = " --set N=4,16 --set M=4,16 --set trials=1000 --set instances=1 --set tau_plus=0.1";
  EXPECT_EQ(lab("verify thm3" + common, zipped), 0);
  EXPECT_EQ(lab("verify thm3 --grid" + common, grid), 0);
  EXPECT_EQ(lines(zipped / "certificates.jsonl").size(), 2u);
  EXPECT_EQ(lines(grid / "certificates.jsonl").size(), 4u);
}

TEST(Cli, TrainSweepsTauPlusForDebiasedOnly) {
  const auto out = work_dir() / "sweep";
  EXPECT_EQ(lab(kTinyTrain + " --set loss=biased,debiased --set tau_plus=0,0.05,0.1 --set seeds=1,2", out), 0);
  const auto probe = lines(out / "probe.csv");
  ASSERT_EQ(probe.size(), 1u + 2 * (1 + 3));
  EXPECT_EQ(probe[0], "seed,loss_kind,tau_plus,accuracy");
  EXPECT_EQ(lines(out / "train_log_debiased_tau0.05_seed2.csv").size(), 3u);
  EXPECT_TRUE(fs::exists(out / "checkpoint_biased_tau0_seed1.txt"));
}

TEST(Cli, GoldenHeaders) {
  const auto train = work_dir() / "headers_train", rate = work_dir() / "headers_rate",
             grad = work_dir() / "headers_grad";
  ASSERT_EQ(lab(kTinyTrain + " --set loss=unbiased", train), 0);
  EXPECT_EQ(lines(train / "train_log_unbiased_tau0_seed1.csv")[0], "epoch,loss,wall_ms");
  EXPECT_EQ(lab("verify rate --set grid=1,4,16,100 --set fixed=1000 --set trials=1000 --set expect_status=fitted "
                "--set slope_min=-2 --set slope_max=0 --set r2_min=0",
                rate),
            0);
  EXPECT_EQ(lines(rate / "rate_fit.csv")[0], "size,mean_gap,stderr");
  EXPECT_EQ(lines(rate / "rate_fit.csv").size(), 5u);
  ASSERT_EQ(lab("gradcheck --set cases=2", grad), 0);
  EXPECT_EQ(lines(grad / "gradcheck.csv")[0],
            "case,loss_kind,output_dim,input_dim,hidden_dim,batch_size,positives,tau_plus,t,max_rel_err,excluded,"
            "passed");
}

TEST(Cli, GradcheckCoversMinimalShapeAndClampBoundary) {
  const auto out = work_dir() / "grad";
  ASSERT_EQ(lab("gradcheck --set cases=10", out), 0);
  const auto rows = lines(out / "gradcheck.csv");
  ASSERT_EQ(rows.size(), 1u + 30 + 1);
  EXPECT_EQ(rows[1].substr(0, 25), "0,biased,2,2,0,2,1,0.1,0.");
  const std::string& clamp = rows.back();
  EXPECT_EQ(clamp.substr(0, 15), "clamp,debiased,");
  EXPECT_EQ(clamp.substr(clamp.size() - 5), ",true");
  const auto r = report(out);
  EXPECT_GT(r["summary"]["excluded_coordinates"].get<std::size_t>(), 0u);
  EXPECT_LE(r["summary"]["max_rel_err"].get<double>(), 1e-6);
}

TEST(Cli, RerunsAreByteIdentical) {
  for (const std::string args : {kTinyTrain + " --set loss=debiased --set positives=2",
                                 std::string("verify lemma1 --set trials=2000 --set instances=2")}) {
    const auto a = work_dir() / "rerun_a", b = work_dir() / "rerun_b";
    fs::remove_all(a);
    fs::remove_all(b);
    ASSERT_EQ(lab(args + " --seed 5", a), 0);
    ASSERT_EQ(lab(args + " --seed 5", b), 0);
    std::size_t compared = 0;
    for (const auto& e : fs::directory_iterator(a)) {
      EXPECT_EQ(read(e.path()), read(b / e.path().filename())) << e.path().filename();
      ++compared;
    }
    EXPECT_GE(compared, 2u);
  }
}

TEST(Cli, ConfigFileAndOverrides) {
  const auto cfg = work_dir() / "run.conf";
  std::ofstream(cfg) << "# lemma 1 smoke run\nformat_version = 1\ntrials = 3000\ninstances = 1\nseed = 9\n";
  const auto out = work_dir() / "conf";
  ASSERT_EQ(lab("verify lemma1 --config \"" + cfg.string() + "\" --set trials=4000", out), 0);
  const auto r = report(out);
  EXPECT_EQ(r["config"]["trials"], "4000");
  EXPECT_EQ(r["seed"].get<std::uint64_t>(), 9u);
  EXPECT_EQ(r["command"], "verify lemma1");
  EXPECT_EQ(r["started"], nullptr);
  EXPECT_EQ(r["config_hash"].get<std::string>().size(), 16u);
  ASSERT_EQ(lab("verify lemma1 --config \"" + cfg.string() + "\" --seed 10", out), 0);
  EXPECT_EQ(report(out)["seed"].get<std::uint64_t>(), 10u);
}

TEST(Cli, GenDataRoundTripsAndProbeReadsCheckpoints) {
  const auto gen = work_dir() / "gen", train = work_dir() / "ckpt", probe = work_dir() / "probe";
  ASSERT_EQ(lab("gen-data --set mixture=skewed-prior", gen), 0);
  std::ifstream is(gen / "mixture.txt");
  const auto mix = dcl::read_mixture(is);
  EXPECT_EQ(mix.num_classes(), dcl::preset_mixture("skewed-prior").num_classes());

  ASSERT_EQ(lab(kTinyTrain + " --set loss=biased --set dataset=file:" + (gen / "mixture.txt").string(), train), 0);
  const auto trained = lines(train / "probe.csv");
  ASSERT_EQ(trained.size(), 2u);
  ASSERT_EQ(lab("probe --set dataset=file:" + (gen / "mixture.txt").string() +
                    " --set dataset_size=64 --set eval_size=100 --set checkpoint=" +
                    (train / "checkpoint_biased_tau0_seed1.txt").string(),
                probe),
            0);
  // Same world, same seed from the checkpoint: the probe reproduces the accuracy.
  const double acc = report(probe)["summary"]["accuracy"].get<double>();
  EXPECT_EQ(dcl::text::format_double(acc), trained[1].substr(trained[1].rfind(',') + 1));
}
