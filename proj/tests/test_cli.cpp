// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "spfuse/harness.hpp"

using namespace spfuse;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("spfuse_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

struct RunResult {
  int rc = -1;
  std::string out;  // stdout + stderr
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

RunResult run_cli(const std::string& args, const fs::path& scratch) {
  const fs::path log = scratch / "cli_out.txt";
  const std::string cmd =
      std::string(SPFUSE_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

// key=value pairs from the first RESULT line.
std::map<std::string, std::string> result_line(const std::string& out) {
  std::map<std::string, std::string> kv;
  std::istringstream is(out);
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("RESULT ", 0) != 0) continue;
    std::istringstream ls(line.substr(7));
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    break;
  }
  return kv;
}

// Shared tiny-model override flags that keep CLI runs fast.
const char* kTinyFlags =
    " --d_hidden 12 --n_blocks_3d 1 --n_heads 2 --d_decomp 6 --d_attn 4"
    " --d_fused 12 --seg_hidden 8 --image_h 16 --image_w 16 --batch_size 2";

std::string gen_args(const fs::path& dir, int scenes, int seed) {
  std::ostringstream os;
  os << "gen-data --out " << dir.string() << " --scenes " << scenes << " --seed "
     << seed << " --points 96 --image-h 16 --image-w 16";
  return os.str();
}

}  // namespace

TEST_CASE("help lists every subcommand") {
  TempDir tmp;
  const RunResult r = run_cli("--help", tmp.path);
  CHECK(r.rc == 0);
  for (const char* sub : {"gen-data", "train", "eval", "ablate", "domain-shift",
                          "gradcheck"})
    CHECK(r.out.find(sub) != std::string::npos);
}

TEST_CASE("train help enumerates every config key") {
  TempDir tmp;
  const RunResult r = run_cli("train --help", tmp.path);
  CHECK(r.rc == 0);
  const TrainConfig defaults;
  for (const auto& [key, value] : train_config_items(defaults))
    CHECK_MESSAGE(r.out.find("--" + key) != std::string::npos, "missing ", key);
}

TEST_CASE("gen-data is byte-identical across reruns and loadable") {
  TempDir tmp;
  const fs::path a = tmp.path / "a", b = tmp.path / "b";
  CHECK(run_cli(gen_args(a, 3, 11), tmp.path).rc == 0);
  CHECK(run_cli(gen_args(b, 3, 11), tmp.path).rc == 0);
  int files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = b / entry.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(slurp(entry.path()) == slurp(other));
    ++files;
  }
  CHECK(files >= 4);  // manifest + 3 scenes
  const Dataset ds = load_dataset(a);
  CHECK(ds.scenes.size() == 3);
  CHECK(ds.n_classes == 6);
}

TEST_CASE("gen-data rejects a non-positive scene count with exit 2") {
  TempDir tmp;
  const RunResult r = run_cli("gen-data --out " + (tmp.path / "x").string() +
                                  " --scenes 0",
                              tmp.path);
  CHECK(r.rc == 2);
  CHECK(r.out.find("scenes") != std::string::npos);
}

TEST_CASE("train writes artifacts and flags win over the config file") {
  TempDir tmp;
  const fs::path data = tmp.path / "data";
  REQUIRE(run_cli(gen_args(data, 3, 21), tmp.path).rc == 0);

  const fs::path cfg = tmp.path / "run.cfg";
  std::ofstream(cfg) << "epochs=1\nlr=0.003\nseed=5\n# comment line\n\n";

  const fs::path out1 = tmp.path / "run1";
  const RunResult r1 = run_cli("train --config " + cfg.string() + " --data " +
                                   data.string() + " --out " + out1.string() +
                                   kTinyFlags,
                               tmp.path);
  CHECK(r1.rc == 0);
  auto kv1 = result_line(r1.out);
  CHECK(kv1.at("epochs_completed") == "1");
  CHECK(kv1.at("diverged") == "0");
  CHECK(fs::exists(out1 / "checkpoint.bin"));
  CHECK(fs::exists(out1 / "report.json"));
  CHECK(fs::exists(out1 / "curves.csv"));

  const fs::path out2 = tmp.path / "run2";
  const RunResult r2 = run_cli("train --config " + cfg.string() + " --data " +
                                   data.string() + " --out " + out2.string() +
                                   kTinyFlags + " --epochs 2",
                               tmp.path);
  CHECK(r2.rc == 0);
  CHECK(result_line(r2.out).at("epochs_completed") == "2");
}

TEST_CASE("unknown config key fails with exit 2") {
  TempDir tmp;
  const fs::path data = tmp.path / "data";
  REQUIRE(run_cli(gen_args(data, 3, 31), tmp.path).rc == 0);
  const fs::path cfg = tmp.path / "bad.cfg";
  std::ofstream(cfg) << "epoch=2\n";  // typo for epochs
  const RunResult r = run_cli("train --config " + cfg.string() + " --data " +
                                  data.string() + " --out " +
                                  (tmp.path / "o").string(),
                              tmp.path);
  CHECK(r.rc == 2);
  CHECK(r.out.find("unknown config key: epoch") != std::string::npos);
}

TEST_CASE("eval matches the training RESULT and reruns identically") {
  TempDir tmp;
  const fs::path data = tmp.path / "data";
  REQUIRE(run_cli(gen_args(data, 3, 41), tmp.path).rc == 0);
  const fs::path out = tmp.path / "run";
  const RunResult tr = run_cli("train --data " + data.string() + " --out " +
                                   out.string() + kTinyFlags +
                                   " --epochs 1 --lr 0.003",
                               tmp.path);
  REQUIRE(tr.rc == 0);
  const std::string trained_miou = result_line(tr.out).at("miou");

  const std::string eval_args = "eval --ckpt " +
                                (out / "checkpoint.bin").string() + " --data " +
                                data.string();
  const RunResult e1 = run_cli(eval_args, tmp.path);
  CHECK(e1.rc == 0);
  CHECK(result_line(e1.out).at("miou") == trained_miou);
  CHECK(fs::exists(out / "metrics.csv"));
  CHECK(fs::exists(out / "metrics.json"));
  const std::string csv1 = slurp(out / "metrics.csv");

  const RunResult e2 = run_cli(eval_args, tmp.path);
  CHECK(e2.rc == 0);
  CHECK(slurp(out / "metrics.csv") == csv1);
}

TEST_CASE("missing inputs exit with the I/O code") {
  TempDir tmp;
  CHECK(run_cli("eval --ckpt " + (tmp.path / "no.bin").string() + " --data " +
                    (tmp.path / "nodata").string(),
                tmp.path)
            .rc == 3);
  CHECK(run_cli("train --data " + (tmp.path / "nodata").string() + " --out " +
                    (tmp.path / "o").string(),
                tmp.path)
            .rc == 3);
}

TEST_CASE("gradcheck reports pass on the micro problem") {
  TempDir tmp;
  const RunResult r = run_cli(std::string("gradcheck") + kTinyFlags, tmp.path);
  CHECK(r.rc == 0);
  auto kv = result_line(r.out);
  CHECK(kv.at("pass") == "1");
  CHECK(std::stod(kv.at("max_rel_err")) <= 1e-4);
}

TEST_CASE("ablate default grid emits the comparison CSV") {
  TempDir tmp;
  const fs::path data = tmp.path / "data";
  REQUIRE(run_cli(gen_args(data, 4, 51), tmp.path).rc == 0);
  const fs::path out = tmp.path / "grid";
  const RunResult r = run_cli("ablate --data " + data.string() + " --out " +
                                  out.string() + kTinyFlags +
                                  " --epochs 1 --lr 0.003 --seeds 2",
                              tmp.path);
  CHECK(r.rc == 0);
  auto kv = result_line(r.out);
  CHECK(kv.at("rows") == "2");
  CHECK(kv.at("seeds") == "2");
  const std::string csv = slurp(out / "ablation.csv");
  CHECK(csv.find("shared_private") != std::string::npos);
  CHECK(csv.find("kl_only") != std::string::npos);
  CHECK(fs::exists(out / "shared_private" / "seed1" / "checkpoint.bin"));
}

TEST_CASE("domain-shift prints both mIoUs and the drop") {
  TempDir tmp;
  const fs::path src = tmp.path / "src", tgt = tmp.path / "tgt";
  REQUIRE(run_cli(gen_args(src, 3, 61), tmp.path).rc == 0);
  REQUIRE(run_cli(gen_args(tgt, 2, 71) + " --style target", tmp.path).rc == 0);
  const fs::path out = tmp.path / "run";
  REQUIRE(run_cli("train --data " + src.string() + " --out " + out.string() +
                      kTinyFlags + " --epochs 1 --lr 0.003",
                  tmp.path)
              .rc == 0);
  const RunResult r = run_cli("domain-shift --ckpt " +
                                  (out / "checkpoint.bin").string() +
                                  " --source-data " + src.string() +
                                  " --target-data " + tgt.string() + " --out " +
                                  (tmp.path / "shift").string(),
                              tmp.path);
  CHECK(r.rc == 0);
  auto kv = result_line(r.out);
  const double s = std::stod(kv.at("miou_source"));
  const double t = std::stod(kv.at("miou_target"));
  const double d = std::stod(kv.at("drop"));
  CHECK(d == doctest::Approx(s - t).epsilon(1e-9));
  CHECK(fs::exists(tmp.path / "shift" / "source" / "metrics.csv"));
  CHECK(fs::exists(tmp.path / "shift" / "target" / "metrics.csv"));
}
