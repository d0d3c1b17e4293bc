// End-to-end tests of the command-line binary (path in $DP_CLI_BIN):
// exit-code contract, config-file/override precedence, deterministic
// artifacts, and the full gen-data -> pretrain -> train -> predict ->
// eval -> report pipeline on a tiny configuration.

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "denseprior/metrics.hpp"
#include "denseprior/pngio.hpp"
#include "denseprior/raster.hpp"
#include "denseprior/report.hpp"
#include "denseprior/scenegen.hpp"

using namespace dp;
using Catch::Matchers::WithinAbs;

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

size_t count_lines(const std::string& text) {
  size_t n = 0;
  for (const char c : text) n += c == '\n';
  return n;
}

struct Workspace {
  std::string base;
  std::string bin;
  int counter = 0;

  Workspace() {
    const char* env = std::getenv("DP_CLI_BIN");
    REQUIRE(env != nullptr);
    bin = env;
    base = "/tmp/dp_cli_" + std::to_string(getpid());
    fs::remove_all(base);
    fs::create_directories(base);
  }

  std::string path(const std::string& rel) const { return base + "/" + rel; }

  RunResult run(const std::string& args) {
    const std::string out_file = path("stdout_" + std::to_string(counter));
    const std::string err_file = path("stderr_" + std::to_string(counter));
    ++counter;
    const int status = std::system(
        (bin + " " + args + " > " + out_file + " 2> " + err_file).c_str());
    RunResult r;
    REQUIRE(WIFEXITED(status));
    r.code = WEXITSTATUS(status);
    r.out = slurp(out_file);
    r.err = slurp(err_file);
    return r;
  }
};

// Shared tiny pipeline, built once: dataset, teacher, and one student per
// task. The network keys live in a config file that every stage reuses.
Workspace& ws() {
  static Workspace* w = [] {
    Workspace* ws = new Workspace();
    std::ofstream conf(ws->path("pipeline.conf"));
    conf << "# tiny end-to-end configuration\n"
         << "net.size=32\n"
         << "net.base_channels=2\n"
         << "net.depth_levels=2\n"
         << "net.taps=0,1\n"
         << "net.timestep_embed_dim=4\n"
         << "train.schedule_T=10\n"
         << "train.batch_size=2\n";
    conf.close();

    RunResult r = ws->run("gen-data --out " + ws->path("ds") +
                          " --n 6 --size 32 --supersample 2 --seed 7");
    REQUIRE(r.code == 0);
    r = ws->run("pretrain --config " + ws->path("pipeline.conf") + " --out " +
                ws->path("teacher") + " --data " + ws->path("ds") +
                " --steps 4 --seed 3");
    REQUIRE(r.code == 0);
    const std::string common = "train --config " + ws->path("pipeline.conf") +
                               " --teacher " + ws->path("teacher") +
                               "/teacher.ckpt --data " + ws->path("ds") +
                               " --seed 5 ";
    r = ws->run(common + "--task depth --steps 4 --out " + ws->path("depth"));
    REQUIRE(r.code == 0);
    r = ws->run(common + "--task normal --steps 2 --out " + ws->path("normal"));
    REQUIRE(r.code == 0);
    r = ws->run(common + "--task matting --steps 2 --out " +
                ws->path("matting"));
    REQUIRE(r.code == 0);
    return ws;
  }();
  return *w;
}

// Byte-compares two directories: same entry names, same contents.
void require_identical_dirs(const std::string& a, const std::string& b) {
  std::vector<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a))
    names_a.push_back(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    names_b.push_back(e.path().filename().string());
  std::sort(names_a.begin(), names_a.end());
  std::sort(names_b.begin(), names_b.end());
  REQUIRE(names_a == names_b);
  for (const std::string& n : names_a)
    REQUIRE(slurp(a + "/" + n) == slurp(b + "/" + n));
}

}  // namespace

TEST_CASE("gen-data is deterministic and validates its config") {
  Workspace& w = ws();

  SECTION("same seed twice gives byte-identical directories") {
    REQUIRE(w.run("gen-data --out " + w.path("ga") +
                  " --n 3 --size 32 --seed 9").code == 0);
    REQUIRE(w.run("gen-data --out " + w.path("gb") +
                  " --n 3 --size 32 --seed 9").code == 0);
    require_identical_dirs(w.path("ga"), w.path("gb"));
    // Different seed must change the samples.
    REQUIRE(w.run("gen-data --out " + w.path("gc") +
                  " --n 3 --size 32 --seed 10").code == 0);
    REQUIRE(slurp(w.path("ga") + "/sample_00000.dpr1") !=
            slurp(w.path("gc") + "/sample_00000.dpr1"));
  }
  SECTION("manifest has one line per sample plus a header") {
    REQUIRE(count_lines(slurp(w.path("ds") + "/manifest.tsv")) == 7);
  }
  SECTION("invalid configs exit 2") {
    REQUIRE(w.run("gen-data --out " + w.path("z0") + " --n 0").code == 2);
    REQUIRE(w.run("gen-data --out " + w.path("z1")).code == 2);  // n unset
    REQUIRE(w.run("gen-data --out " + w.path("z2") +
                  " --n 2 --set data.nn=5").code == 2);  // unknown key
    REQUIRE(w.run("gen-data --frobnicate").code == 2);   // unknown flag
  }
  SECTION("config file drives the run and flags win over it") {
    std::ofstream conf(w.path("gen.conf"));
    conf << "data.n=4\ndata.size=32\nseed=7\n";
    conf.close();
    REQUIRE(w.run("gen-data --config " + w.path("gen.conf") + " --out " +
                  w.path("gf")).code == 0);
    REQUIRE(count_lines(slurp(w.path("gf") + "/manifest.tsv")) == 5);
    REQUIRE(w.run("gen-data --config " + w.path("gen.conf") + " --out " +
                  w.path("gg") + " --n 5").code == 0);
    REQUIRE(count_lines(slurp(w.path("gg") + "/manifest.tsv")) == 6);
    // The echo records the merged, post-override configuration.
    const std::string echo = slurp(w.path("gg") + "/effective-config.txt");
    REQUIRE(echo.find("data.n=5\n") != std::string::npos);
    REQUIRE(echo.find("seed=7\n") != std::string::npos);
  }
  SECTION("a malformed config file exits 3") {
    std::ofstream conf(w.path("bad.conf"));
    conf << "data.n\n";
    conf.close();
    const RunResult r = w.run("gen-data --config " + w.path("bad.conf") +
                              " --out " + w.path("zb"));
    REQUIRE(r.code == 3);
    REQUIRE(r.err.find("key=value") != std::string::npos);
  }
}

TEST_CASE("training stages leave checkpoints and step-per-line logs") {
  Workspace& w = ws();

  SECTION("pretrain artifacts") {
    REQUIRE(fs::exists(w.path("teacher") + "/teacher.ckpt"));
    REQUIRE(count_lines(slurp(w.path("teacher") + "/train-log.txt")) == 4);
    const std::string echo =
        slurp(w.path("teacher") + "/effective-config.txt");
    REQUIRE(echo.find("net.size=32\n") != std::string::npos);
    REQUIRE(echo.find("train.steps=4\n") != std::string::npos);
  }
  SECTION("train artifacts") {
    REQUIRE(fs::exists(w.path("depth") + "/student.ckpt"));
    REQUIRE(count_lines(slurp(w.path("depth") + "/train-log.txt")) == 4);
  }
  SECTION("a non-positive joint weight exits 2") {
    const RunResult r = w.run(
        "train --config " + w.path("pipeline.conf") + " --teacher " +
        w.path("teacher") + "/teacher.ckpt --data " + w.path("ds") +
        " --steps 4 --out " + w.path("l0") + " --set lambda=0");
    REQUIRE(r.code == 2);
    REQUIRE(r.err.find("lambda") != std::string::npos);
  }
  SECTION("architecture keys that contradict the teacher exit 2") {
    const RunResult r = w.run(
        "train --config " + w.path("pipeline.conf") + " --teacher " +
        w.path("teacher") + "/teacher.ckpt --data " + w.path("ds") +
        " --steps 4 --out " + w.path("m0") + " --set net.base_channels=3");
    REQUIRE(r.code == 2);
    REQUIRE(r.err.find("teacher") != std::string::npos);
  }
  SECTION("a missing teacher checkpoint exits 3") {
    REQUIRE(w.run("train --config " + w.path("pipeline.conf") +
                  " --teacher " + w.path("nope.ckpt") + " --data " +
                  w.path("ds") + " --steps 4 --out " + w.path("m1"))
                .code == 3);
  }
}

TEST_CASE("predict performs one deterministic forward pass") {
  Workspace& w = ws();
  const std::string ckpt = w.path("depth") + "/student.ckpt";
  const std::string input = w.path("ds") + "/sample_00000.dpr1";

  SECTION("bit-identical outputs on repeated runs") {
    REQUIRE(w.run("predict --out " + w.path("p1") + " --checkpoint " + ckpt +
                  " --input " + input).code == 0);
    REQUIRE(w.run("predict --out " + w.path("p2") + " --checkpoint " + ckpt +
                  " --input " + input).code == 0);
    REQUIRE(slurp(w.path("p1") + "/prediction.dpr1") ==
            slurp(w.path("p2") + "/prediction.dpr1"));
    REQUIRE(slurp(w.path("p1") + "/prediction.png") ==
            slurp(w.path("p2") + "/prediction.png"));

    RasterMeta meta;
    const TensorF d = read_raster(w.path("p1") + "/prediction.dpr1", &meta);
    REQUIRE(meta.semantic == RasterSemantic::depth);
    REQUIRE(d.shape == std::vector<int>{32, 32, 1});
    for (const float v : d.v) {
      REQUIRE(v >= float(kDepthDecodeMin));
      REQUIRE(v <= float(kDepthDecodeMax));
    }
  }
  SECTION("PNG input works") {
    // Round-trip the sample's RGB through a PNG file.
    const DenseSample s = read_sample(input);
    write_png_rgb(w.path("input.png"), s.rgb);
    REQUIRE(w.run("predict --out " + w.path("p3") + " --checkpoint " + ckpt +
                  " --input " + w.path("input.png")).code == 0);
    REQUIRE(fs::exists(w.path("p3") + "/prediction.dpr1"));
  }
  SECTION("normal and matting predictions carry their semantics") {
    REQUIRE(w.run("predict --out " + w.path("pn") + " --checkpoint " +
                  w.path("normal") + "/student.ckpt --task normal --input " +
                  input).code == 0);
    RasterMeta meta;
    const TensorF n = read_raster(w.path("pn") + "/prediction.dpr1", &meta);
    REQUIRE(meta.semantic == RasterSemantic::normal);
    REQUIRE(n.shape == std::vector<int>{32, 32, 3});
    // Unit norm per pixel.
    for (int y = 0; y < 32; y += 7)
      for (int x = 0; x < 32; x += 7) {
        const double nn = double(n.at(y, x, 0)) * n.at(y, x, 0) +
                          double(n.at(y, x, 1)) * n.at(y, x, 1) +
                          double(n.at(y, x, 2)) * n.at(y, x, 2);
        REQUIRE_THAT(nn, WithinAbs(1.0, 1e-5));
      }

    REQUIRE(w.run("predict --out " + w.path("pm") + " --checkpoint " +
                  w.path("matting") + "/student.ckpt --task matting "
                  "--input " + input).code == 0);
    const TensorF m = read_raster(w.path("pm") + "/prediction.dpr1", &meta);
    REQUIRE(meta.semantic == RasterSemantic::matte);
    for (const float v : m.v) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
  SECTION("failure modes map to the exit-code contract") {
    // Task not matching the checkpoint head: config error.
    REQUIRE(w.run("predict --out " + w.path("pe") + " --checkpoint " + ckpt +
                  " --task normal --input " + input).code == 2);
    // Missing input file: I/O error.
    REQUIRE(w.run("predict --out " + w.path("pf") + " --checkpoint " + ckpt +
                  " --input " + w.path("missing.png")).code == 3);
    // Wrong input size: runtime shape failure.
    REQUIRE(w.run("gen-data --out " + w.path("big") +
                  " --n 1 --size 64 --seed 1").code == 0);
    REQUIRE(w.run("predict --out " + w.path("pg") + " --checkpoint " + ckpt +
                  " --input " + w.path("big") + "/sample_00000.dpr1")
                .code == 4);
  }
}

TEST_CASE("eval writes metric records and honors the protocol flags") {
  Workspace& w = ws();

  SECTION("ground truth as the prediction is ideal") {
    const RunResult r = w.run("eval --out " + w.path("e_gt") + " --data " +
                              w.path("ds") + " --oracle gt --task depth");
    REQUIRE(r.code == 0);
    const MetricsReport rep =
        parse_report_records(slurp(w.path("e_gt") + "/metrics.txt"));
    REQUIRE(rep.task == "depth");
    REQUIRE(rep.sample_count == 6);
    REQUIRE(rep.nfe == "1 × 0");
    REQUIRE_THAT(rep.value("absrel"), WithinAbs(0.0, 1e-9));
    REQUIRE(rep.value("delta1") == 1.0);
    // stdout carries the same records.
    REQUIRE(r.out == slurp(w.path("e_gt") + "/metrics.txt"));
  }
  SECTION("checkpoint evaluation records one forward per sample") {
    const RunResult r =
        w.run("eval --out " + w.path("e_ck") + " --data " + w.path("ds") +
              " --checkpoint " + w.path("depth") + "/student.ckpt");
    REQUIRE(r.code == 0);
    const MetricsReport rep =
        parse_report_records(slurp(w.path("e_ck") + "/metrics.txt"));
    REQUIRE(rep.nfe == "1 × 1");
    REQUIRE(rep.align);
    REQUIRE(std::isfinite(rep.value("absrel")));
  }
  SECTION("--align off is applied and echoed") {
    const RunResult r = w.run("eval --out " + w.path("e_na") + " --data " +
                              w.path("ds") +
                              " --oracle gt --task depth --align off");
    REQUIRE(r.code == 0);
    const MetricsReport rep =
        parse_report_records(slurp(w.path("e_na") + "/metrics.txt"));
    REQUIRE_FALSE(rep.align);
  }
  SECTION("invalid protocol values exit 2") {
    REQUIRE(w.run("eval --out " + w.path("e_b1") + " --data " + w.path("ds") +
                  " --oracle gt --align sideways").code == 2);
    REQUIRE(w.run("eval --out " + w.path("e_b2") + " --data " + w.path("ds") +
                  " --oracle tea").code == 2);
    REQUIRE(w.run("eval --out " + w.path("e_b3") + " --data " + w.path("ds") +
                  " --checkpoint " + w.path("depth") +
                  "/student.ckpt --task normal").code == 2);
  }
  SECTION("a missing dataset exits 3") {
    REQUIRE(w.run("eval --out " + w.path("e_b4") + " --data " +
                  w.path("no_such_dir") + " --oracle gt").code == 3);
  }
}

TEST_CASE("report renders a ranked table from stored records") {
  Workspace& w = ws();
  REQUIRE(w.run("eval --out " + w.path("r_gt") + " --data " + w.path("ds") +
                " --oracle gt --task depth").code == 0);
  REQUIRE(w.run("eval --out " + w.path("r_ck") + " --data " + w.path("ds") +
                " --checkpoint " + w.path("depth") + "/student.ckpt")
              .code == 0);

  SECTION("table lists both methods with the oracle ranked first") {
    std::ofstream list(w.path("list.tsv"));
    list << "Ours\t" << w.path("r_ck") << "/metrics.txt\n"
         << "Oracle\t" << w.path("r_gt") << "/metrics.txt\n";
    list.close();
    const RunResult r =
        w.run("report --out " + w.path("tab") + " --list " + w.path("list.tsv"));
    REQUIRE(r.code == 0);
    const std::string table = slurp(w.path("tab") + "/table.txt");
    REQUIRE(r.out == table);
    REQUIRE(table.find("Method") != std::string::npos);
    REQUIRE(table.find("AvgRank") != std::string::npos);
    REQUIRE(table.find("Ours") != std::string::npos);
    REQUIRE(table.find("Oracle") != std::string::npos);
    // The oracle dominates both depth metrics.
    const size_t at = table.find("Oracle");
    const size_t eol = table.find('\n', at);
    REQUIRE(table.substr(at, eol - at).find("1.00") != std::string::npos);
  }
  SECTION("malformed list lines and missing files exit 3") {
    std::ofstream list(w.path("bad_list.tsv"));
    list << "no-tab-here\n";
    list.close();
    REQUIRE(w.run("report --out " + w.path("tb") + " --list " +
                  w.path("bad_list.tsv")).code == 3);
    std::ofstream list2(w.path("bad_list2.tsv"));
    list2 << "X\t" << w.path("missing_metrics.txt") << "\n";
    list2.close();
    REQUIRE(w.run("report --out " + w.path("tc") + " --list " +
                  w.path("bad_list2.tsv")).code == 3);
  }
}

TEST_CASE("help is available everywhere and bad invocations exit 2") {
  Workspace& w = ws();

  const RunResult top = w.run("--help");
  REQUIRE(top.code == 0);
  for (const std::string cmd :
       {"gen-data", "pretrain", "train", "predict", "eval", "report"})
    REQUIRE(top.out.find(cmd) != std::string::npos);

  const RunResult pd = w.run("predict --help");
  REQUIRE(pd.code == 0);
  for (const std::string flag :
       {"--input", "--checkpoint", "--task", "--config", "--out", "--seed",
        "--set"})
    REQUIRE(pd.out.find(flag) != std::string::npos);

  const RunResult ev = w.run("eval --help");
  REQUIRE(ev.code == 0);
  REQUIRE(ev.out.find("--align") != std::string::npos);
  REQUIRE(ev.out.find("--oracle") != std::string::npos);

  REQUIRE(w.run("").code == 2);           // no subcommand
  REQUIRE(w.run("frobnicate").code == 2);  // unknown subcommand
}
