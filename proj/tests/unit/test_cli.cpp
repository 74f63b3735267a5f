#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "finder/finder.hpp"
#include "support/synthetic.hpp"

using namespace finder;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "finder_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const std::string& args) {
  const auto out = workdir() / "stdout.txt", err = workdir() / "stderr.txt";
  const std::string cmd = std::string(FINDER_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

// Small electronegativity dataset shared by the tests below.
fs::path dataset() {
  static const fs::path p = [] {
    auto path = workdir() / "train.csv";
    std::ofstream os(path);
    os << "composition,target\n";
    for (const auto& c : finder::testing::random_compositions(60, 9))
      os << c << ',' << finder::testing::mean_electronegativity(parse_formula(c)) << '\n';
    return path;
  }();
  return p;
}

const std::string kSmall = " --node-dim 8 --epochs 2 --batch-size 16 --seed 3";

// Trained once, reused by prediction and export tests.
fs::path trained_run() {
  static const fs::path dir = [] {
    auto d = workdir() / "run";
    auto r = cli("train --dataset " + dataset().string() + " --out " + d.string() + kSmall);
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }();
  return dir;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(cli("--help").code, 0);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("train --bogus").code, 1);
  EXPECT_EQ(cli("train --out " + (workdir() / "nodata").string()).code, 1);
  EXPECT_EQ(cli("train --dataset x.csv --precision half").code, 1);
  EXPECT_EQ(cli("train --dataset x.csv --ablation not_a_flag").code, 1);
}

TEST(Cli, TrainWritesRunDirectory) {
  const auto dir = trained_run();
  for (const char* f : {"config.json", "checkpoint.fdr", "history.csv", "metrics.json", "train.log"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const auto history = slurp(dir / "history.csv");
  EXPECT_EQ(history.substr(0, history.find('\n')), "epoch,train_loss,val_MAE,lr");
  EXPECT_EQ(count_lines(history), 3u);
  auto metrics = Json::parse(slurp(dir / "metrics.json"));
  EXPECT_EQ(metrics["n"], 9);  // 15% of 60
  EXPECT_TRUE(std::isfinite(metrics["mae"].get<double>()));
  auto config = Json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(config["node_dim"], 8);
  EXPECT_EQ(config["max_epochs"], 2);
}

TEST(Cli, ConfigRerunWithOverride) {
  const auto dir = workdir() / "rerun";
  auto r = cli("train --config " + (trained_run() / "config.json").string() + " --out " + dir.string() +
               " --epochs 1 --format csv");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(slurp(dir / "history.csv")), 2u);
  EXPECT_TRUE(fs::exists(dir / "metrics.csv"));
  const auto preds = slurp(dir / "test_predictions.csv");
  EXPECT_EQ(preds.substr(0, preds.find('\n')), "composition,target,prediction,abs_error,uncertainty");
  EXPECT_EQ(count_lines(preds), 10u);
  auto config = Json::parse(slurp(dir / "config.json"));
  EXPECT_EQ(config["node_dim"], 8);
  EXPECT_EQ(config["max_epochs"], 1);
}

TEST(Cli, TrainingDataErrorsExitTwo) {
  const auto bad = workdir() / "bad.csv";
  std::ofstream(bad) << "composition,target\nNaCl,1\nXq2O,2\n";
  auto r = cli("train --dataset " + bad.string() + " --out " + (workdir() / "bad_run").string() + kSmall);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("bad.csv:3"), std::string::npos) << r.err;
  const std::string out = " --out " + (workdir() / "missing_run").string();
  EXPECT_EQ(cli("train --dataset " + (workdir() / "none.csv").string() + out + kSmall).code, 2);
  EXPECT_EQ(cli("train --dataset " + dataset().string() + " --embedding " + (workdir() / "none.txt").string() + out + kSmall).code, 2);
}

TEST(Cli, PredictKeepsGoingPastBadRows) {
  const auto input = workdir() / "predict.csv";
  std::ofstream(input) << "composition\nNaCl\nXq2\nCu2Ag2O3\n";
  auto r = cli("predict --model " + (trained_run() / "checkpoint.fdr").string() + " --dataset " + input.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 4u);
  EXPECT_NE(r.out.find("Xq2,,,"), std::string::npos);
  EXPECT_NE(r.err.find("Xq2"), std::string::npos);
  auto j = cli("predict --format json --model " + (trained_run() / "checkpoint.fdr").string() + " --dataset " + input.string());
  auto parsed = Json::parse(j.out);
  ASSERT_EQ(parsed.size(), 3u);
  EXPECT_TRUE(parsed[1].contains("error"));
  EXPECT_GT(parsed[2]["uncertainty"].get<double>(), 0.0);
  EXPECT_EQ(cli("predict --model " + (workdir() / "nope.fdr").string() + " --dataset " + input.string()).code, 2);
}

TEST(Cli, CrystalModelNeedsStructures) {
  const auto ds = workdir() / "crystal.csv";
  std::ofstream(ds) << "composition,target,structure_file\n"
                    << "Cu2Ag2O3,1.0," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,1.2," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,0.8," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,1.1," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,0.9," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,1.3," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n"
                    << "Cu2Ag2O3,0.7," << FINDER_TEST_DATA << "/Cu2Ag2O3.struct\n";
  const auto dir = workdir() / "crystal_run";
  auto r = cli("train --domain crystal --dataset " + ds.string() + " --out " + dir.string() +
               " --node-dim 8 --epochs 1 --batch-size 4 --split matbench");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto input = workdir() / "crystal_predict.csv";
  std::ofstream(input) << "composition\nCu2Ag2O3\n";
  EXPECT_EQ(cli("predict --model " + (dir / "checkpoint.fdr").string() + " --dataset " + input.string()).code, 2);
  EXPECT_EQ(cli("export-eam --model " + (dir / "checkpoint.fdr").string() + " --composition Cu2Ag2O3").code, 1);
}

TEST(Cli, ExportEam) {
  const auto out = workdir() / "eam.csv";
  auto r = cli("export-eam --model " + (trained_run() / "checkpoint.fdr").string() + " --composition Cu2Ag2O3 --out " +
               out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto text = slurp(out);
  EXPECT_EQ(count_lines(text), 8u);
  EXPECT_EQ(text.substr(0, text.find('\n')), "node,Ag0,Ag1,Cu2,Cu3,O4,O5,O6");
  EXPECT_EQ(cli("export-eam --model " + (trained_run() / "checkpoint.fdr").string() + " --composition 'Cu2('").code, 2);
  EXPECT_EQ(cli("export-eam --model " + (trained_run() / "checkpoint.fdr").string() + " --composition NaCl --layer 9").code, 1);
}

TEST(Cli, ScreenWithRawSpectra) {
  const auto spectra = workdir() / "spectra.csv";
  {
    std::ofstream os(spectra);
    os << "composition,part,energy_eV,value\n";
    for (const char* comp : {"Cu2Ag2O3", "NaCl"})
      for (int k = 1; k <= 600; ++k) {
        const double e = 0.05 * k;
        const double wp = std::string(comp) == "NaCl" ? 3.0 : 2.0;
        os << comp << ",eps_re," << e << ',' << 1 - (wp / e) * (wp / e) << '\n';
        os << comp << ",eps_im," << e << ',' << (std::string(comp) == "NaCl" ? 2.5 : 0.3) << '\n';
      }
  }
  const auto cands = workdir() / "cands.csv";
  std::ofstream(cands) << "composition,e_hull_meV\nCu2Ag2O3,4\nNaCl,0\nKBr,1\nAgO,\n";
  const auto net = workdir() / "net.csv";
  auto r = cli("screen-enz --candidates " + cands.string() + " --spectra " + spectra.string() + " --network " + net.string() +
               " --min-count 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(r.out), 2u);
  EXPECT_NE(r.out.find("Cu2Ag2O3,2"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("KBr"), std::string::npos);
  EXPECT_NE(slurp(net).find("Ag,Cu,1"), std::string::npos);

  const auto empty = workdir() / "empty.csv";
  std::ofstream(empty) << "";
  auto e = cli("screen-enz --candidates " + empty.string() + " --spectra " + spectra.string());
  EXPECT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.out, "composition,omega_co_eV,eps_im_at_co,e_hull_meV,later_crossings_eV\n");
  EXPECT_EQ(cli("screen-enz --candidates " + cands.string()).code, 1);
  EXPECT_EQ(cli("screen-enz --candidates " + cands.string() + " --re-model " + (trained_run() / "checkpoint.fdr").string() +
                " --im-model " + (trained_run() / "checkpoint.fdr").string())
                .code,
            1);
}

TEST(Cli, CompareSummariesAndRuns) {
  const auto a = workdir() / "a.csv", b = workdir() / "b.csv";
  std::ofstream(a) << "mean,std,n\n0.0858,0.0004,3\n";
  std::ofstream(b) << "mean,std,n\n0.0913,0.0008,3\n";
  auto r = cli("compare --format json " + a.string() + " " + b.string());
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = Json::parse(r.out);
  EXPECT_NEAR(j["p"].get<double>(), 0.00044, 1e-5);
  EXPECT_EQ(j["df"], 4.0);

  const auto runs = workdir() / "runs.csv";
  std::ofstream(runs) << "mae\n0.10\n0.12\n0.11\n";
  auto c = cli("compare " + runs.string() + " " + a.string());
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(c.out.substr(0, c.out.find('\n')), "t,p,df,standard_error");
  const auto one = workdir() / "one.csv";
  std::ofstream(one) << "mae\n0.1\n";
  EXPECT_EQ(cli("compare " + one.string() + " " + a.string()).code, 2);
}
