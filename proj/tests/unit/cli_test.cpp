#include <doctest.h>

#include <regex>
#include <set>
#include <sstream>

#include "gaze/cli.hpp"
#include "support.hpp"

using namespace gaze;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "cgaze");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Small-model config file with every path inside `dir`.
std::string write_config(const test::TempDir& dir) {
  RunConfig c = test::small_run_config();
  c.train.pretrain_epochs = 1;
  c.train.finetune_epochs = 2;
  c.data_path = dir / "train.cgzd";
  c.test_path = dir / "test.cgzd";
  c.pretrained_path = dir / "runs/pre.cgzk";
  c.finetuned_path = dir / "runs/fine.cgzk";
  c.results_path = dir / "runs/ablation.csv";
  std::ofstream(dir / "run.cfg") << c.to_text();
  return (dir / "run.cfg").string();
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("argument errors exit with 1, help with 0") {
    CHECK(run({}).code == 1);
    CHECK(run({"train"}).code == 1);
    CHECK(run({"eval", "--bogus"}).code == 1);
    CHECK(run({"gen-data"}).code == 1);
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"ablate", "--axis", "depth"}).code == 1);
  }

  TEST_CASE("validation errors exit with 1 before touching files") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    CHECK(run({"gen-data", "--config", cfg, "--count", "0"}).code == 1);
    CHECK(run({"pretrain", "--config", cfg, "--tau=-1"}).code == 1);
    CHECK(run({"pretrain", "--config", cfg, "--batch_size", "lots"}).code == 1);
    {
      std::ofstream(dir / "bad.cfg") << "unknown_key = 3\n";
    }
    CHECK(run({"eval", "--config", (dir / "bad.cfg").string()}).code == 1);
    CHECK(!std::filesystem::exists(dir / "runs"));
  }

  TEST_CASE("I/O errors exit with 2") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    CHECK(run({"pretrain", "--config", cfg}).code == 2);
    CHECK(run({"eval", "--config", cfg}).code == 2);
    CHECK(run({"eval", "--config", (dir / "missing.cfg").string()}).code == 2);
    std::filesystem::create_directories(dir / "runs");
    std::ofstream(dir / "runs/fine.cgzk") << "garbage";
    CHECK(run({"gen-data", "--config", cfg, "--count", "4", "--out", (dir / "test.cgzd").string()}).code == 0);
    const auto r = run({"eval", "--config", cfg});
    CHECK(r.code == 2);
    CHECK(r.err.find("I/O error") != std::string::npos);
  }

  TEST_CASE("a diverging run exits with 3") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "40"}).code == 0);
    const auto r = run({"pretrain", "--config", cfg, "--lr_pretrain=1e30", "--pretrain_epochs=3"});
    CHECK(r.code == 3);
    CHECK(r.err.find("numerical error") != std::string::npos);
  }

  TEST_CASE("gradcheck passes on a fresh build") {
    const auto r = run({"gradcheck", "--instances", "3"});
    CHECK(r.code == 0);
    const auto l = lines(r.out);
    REQUIRE(!l.empty());
    CHECK(l.back().starts_with("PASS: "));
  }

  TEST_CASE("end-to-end commands are reproducible and eval prints one MAE line") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "40", "--seed", "1"}).code == 0);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "10", "--seed", "2", "--out", (dir / "test.cgzd").string()})
                .code == 0);
    std::string first_pre, first_fine, first_out;
    for (int pass = 0; pass < 2; ++pass) {
      REQUIRE(run({"pretrain", "--config", cfg, "--seed", "3"}).code == 0);
      REQUIRE(run({"finetune", "--config", cfg, "--seed", "3"}).code == 0);
      const auto e = run({"eval", "--config", cfg});
      REQUIRE(e.code == 0);
      CHECK(std::regex_match(e.out, std::regex(R"(MAE: [0-9]+\.[0-9]{6} deg\n)")));
      const auto pre = test::read_bytes(dir / "runs/pre.cgzk");
      const auto fine = test::read_bytes(dir / "runs/fine.cgzk");
      if (pass == 0) {
        first_pre = pre;
        first_fine = fine;
        first_out = e.out;
      } else {
        CHECK(pre == first_pre);
        CHECK(fine == first_fine);
        CHECK(e.out == first_out);
      }
    }
    const auto scratch = run({"finetune", "--config", cfg, "--init", "scratch", "--unfreeze"});
    CHECK(scratch.code == 0);
  }

  TEST_CASE("ablate writes one CSV row per arm and seed") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "40", "--seed", "1"}).code == 0);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "10", "--seed", "2", "--out", (dir / "test.cgzd").string()})
                .code == 0);

    const auto g = run({"ablate", "--config", cfg, "--axis", "gamma"});
    REQUIRE(g.code == 0);
    auto csv = lines(test::read_bytes(dir / "runs/ablation.csv"));
    REQUIRE(csv.size() == 1 + 3 * 2);
    CHECK(csv[0] == "variant,seed,mae_deg");
    const std::regex row(R"((gamma=0\.005|gamma=0\.01|gamma=0\.1),([01]),[0-9]+\.[0-9]{6})");
    for (std::size_t seed = 0; seed < 2; ++seed) {
      std::set<std::string> arms;
      for (std::size_t i = 1; i < csv.size(); ++i) {
        std::smatch m;
        REQUIRE(std::regex_match(csv[i], m, row));
        if (m[2] == std::to_string(seed)) arms.insert(m[1]);
      }
      CHECK(arms.size() == 3);
    }
    CHECK(g.out.find("gamma trend") != std::string::npos);

    const auto v = run({"ablate", "--config", cfg, "--axis", "loss_variant"});
    REQUIRE(v.code == 0);
    csv = lines(test::read_bytes(dir / "runs/ablation.csv"));
    REQUIRE(csv.size() == 1 + 3 * 2);
    for (const char* arm : {"ntxent_only,", "redundancy_only,", "combined,"}) {
      std::size_t n = 0;
      for (const auto& l : csv) n += l.starts_with(arm);
      CHECK(n == 2);
    }
  }

  TEST_CASE("export-previews writes images and labels") {
    test::TempDir dir("cli");
    const auto cfg = write_config(dir);
    REQUIRE(run({"gen-data", "--config", cfg, "--count", "5"}).code == 0);
    REQUIRE(run({"export-previews", "--config", cfg, "--dir", (dir / "prev").string(), "--limit", "3"}).code == 0);
    CHECK(std::filesystem::exists(dir / "prev/labels.csv"));
    std::size_t pngs = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir / "prev")) pngs += e.path().extension() == ".png";
    CHECK(pngs == 3);
  }
}
