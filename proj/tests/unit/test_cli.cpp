#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>

#include "commands.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "vlfuse/fusion.hpp"
#include "vlfuse/knn.hpp"

using namespace vlfuse;
using namespace vlfuse::testing;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "vlfuse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write_config(const fs::path& p, const json& doc) { std::ofstream(p) << doc.dump(2); }

/// Blobs written as train.emb / val.emb under a fresh directory.
fs::path blob_workspace(const std::string& name) {
  const auto dir = temp_dir(name);
  const auto data = make_blobs(8, 25, 10, 16, 1.3, 2024);
  save_store(data.train, dir / "train.emb");
  save_store(data.val, dir / "val.emb");
  return dir;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("eval knn k=7 reproduces the golden report") {
    const auto dir = blob_workspace("cli-golden");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}, {"output", "out"}});
    const auto r = invoke({"eval", "--config", (dir / "run.json").string(), "--variant", "knn", "--k", "7", "--threads", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto produced = slurp(dir / "out" / "eval.json");

    const fs::path golden = fs::path(VLFUSE_GOLDEN_DIR) / "eval_knn_k7.json";
    if (std::getenv("VLFUSE_UPDATE_GOLDEN") != nullptr) std::ofstream(golden, std::ios::binary) << produced;
    CHECK(produced == slurp(golden));

    const auto train = load_store(dir / "train.emb");
    const auto val = load_store(dir / "val.emb");
    const auto want = naive_knn(val.store, train.store, train.labels.primary_labels(), 7);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < want.size(); ++i) hits += want[i] == val.labels.primary(i);
    CHECK(read_json(dir / "out" / "eval.json")["accuracy"]["top1"].get<double>() ==
          static_cast<double>(hits) / static_cast<double>(want.size()));

    const auto preds = load_predictions(dir / "out" / "eval_predictions.csv");
    CHECK(preds.classes == want);
    CHECK(fs::exists(dir / "out" / "eval.md"));
    CHECK(fs::exists(dir / "out" / "eval_per_class.csv"));
  }

  TEST_CASE("outputs do not depend on the thread count") {
    const auto dir = blob_workspace("cli-threads");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}, {"k_grid", {1, 3, 9}}});
    const auto cfg = (dir / "run.json").string();
    for (const char* cmd : {"sweep", "fewshot"}) {
      std::vector<std::string> docs;
      for (const char* threads : {"1", "4"}) {
        const auto out = dir / (std::string(cmd) + threads);
        auto r = invoke({cmd, "-c", cfg, "-j", threads, "-o", out.string(), "--set", "m_grid=[1,2]", "--set",
                         "trials=[3,2]"});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        docs.push_back(slurp(out / (std::string(cmd) + ".json")));
      }
      CHECK(docs[0] == docs[1]);
    }
  }

  TEST_CASE("few-shot with every image and one trial equals plain k-NN") {
    const auto dir = blob_workspace("cli-fewshot");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}, {"m_grid", {0}}, {"k_grid", {7}}, {"trials", {1}}});
    REQUIRE(invoke({"fewshot", "-c", (dir / "run.json").string(), "-o", (dir / "fs").string()}).code == 0);
    REQUIRE(invoke({"eval", "-c", (dir / "run.json").string(), "-o", (dir / "ev").string(), "--variant", "knn", "--k", "7"}).code == 0);
    const auto fs_doc = read_json(dir / "fs" / "fewshot.json");
    const auto cell = fs_doc["result"]["cells"][0];
    CHECK(cell["ci"]["mean"].get<double>() == read_json(dir / "ev" / "eval.json")["accuracy"]["top1"].get<double>());
    CHECK(cell["ci"]["half_width"].get<double>() == 0.0);
  }

  TEST_CASE("sweep agrees with eval at each k") {
    const auto dir = blob_workspace("cli-sweep");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}, {"k_grid", {1, 5, 9}}});
    REQUIRE(invoke({"sweep", "-c", (dir / "run.json").string(), "-o", (dir / "sw").string()}).code == 0);
    const auto sweep = read_json(dir / "sw" / "sweep.json");
    for (std::size_t i = 0; i < 3; ++i) {
      const auto k = sweep["k_grid"][i].get<std::size_t>();
      const auto out = dir / ("k" + std::to_string(k));
      REQUIRE(invoke({"eval", "-c", (dir / "run.json").string(), "-o", out.string(), "--variant", "knn", "--k",
                      std::to_string(k)})
                  .code == 0);
      CHECK(sweep["accuracy"][i].get<double>() == read_json(out / "eval.json")["accuracy"]["top1"].get<double>());
    }
    CHECK(slurp(dir / "sw" / "sweep.csv").rfind("k,accuracy\n", 0) == 0);
  }

  TEST_CASE("fuse on complementary data") {
    const auto dir = temp_dir("cli-fuse");
    const auto fx = make_complementary(5);
    save_store(fx.data.train, dir / "train.emb");
    save_store(fx.data.val, dir / "val.emb");
    save_prompt_bank(fx.bank, dir / "bank.emb");
    write_config(dir / "run.json",
                 {{"train", "train.emb"}, {"eval", "val.emb"}, {"bank", "bank.emb"}, {"k_grid", {1, 5, 9}}, {"folds", 5}});
    const auto r = invoke({"fuse", "-c", (dir / "run.json").string(), "-o", (dir / "out").string(), "--set",
                           "expect_min_accuracy=0.99"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto doc = read_json(dir / "out" / "fuse.json");
    CHECK(doc["accuracy"]["fused"]["top1"].get<double>() == 1.0);
    CHECK(doc["accuracy"]["language"]["top1"].get<double>() <= 0.75);
    CHECK(doc["accuracy"]["vision"]["top1"].get<double>() <= 0.75);
    const auto model = load_fusion_model(dir / "out" / "fusion_model.json");
    CHECK(model.chosen_k == doc["chosen_k"].get<std::size_t>());
    CHECK(fs::exists(dir / "out" / "fuse_precision.csv"));
  }

  TEST_CASE("oracle over vision and language families") {
    const auto dir = temp_dir("cli-oracle");
    const auto fx = make_complementary(8, 10, 6);
    save_store(fx.data.train, dir / "train.emb");
    save_store(fx.data.val, dir / "val.emb");
    save_prompt_bank(fx.bank, dir / "bank.emb");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}, {"bank", "bank.emb"}, {"k_grid", {1, 3}}});
    const auto r = invoke({"oracle", "-c", (dir / "run.json").string(), "-o", (dir / "out").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto doc = read_json(dir / "out" / "oracle.json");
    REQUIRE(doc["families"].size() == 2);
    for (const auto& f : doc["families"]) {
      CHECK(f["image_level"].get<double>() >= f["class_level"].get<double>());
      CHECK(f["class_level"].get<double>() >= f["best_member_accuracy"].get<double>());
      CHECK(doc["double"]["class_level"].get<double>() >= f["class_level"].get<double>());
      CHECK(doc["double"]["image_level"].get<double>() >= f["image_level"].get<double>());
    }
    CHECK(doc["families"][1]["members"].size() == 8);
    CHECK(fs::exists(dir / "out" / "oracle_vision_vs_language.csv"));

    const auto rep = invoke({"report", (dir / "out" / "oracle.json").string()});
    CHECK(rep.code == 0);
    CHECK(rep.out.find("|") != std::string::npos);
  }

  TEST_CASE("zeroshot and import variants") {
    const auto dir = temp_dir("cli-zeroshot");
    const auto fx = make_complementary(3, 4, 4);
    save_store(fx.data.val, dir / "val.emb");
    save_prompt_bank(fx.bank, dir / "bank.emb");
    write_config(dir / "run.json", {{"eval", "val.emb"}, {"bank", "bank.emb"}});
    auto r = invoke({"eval", "-c", (dir / "run.json").string(), "-o", (dir / "zs").string(), "--variant", "zeroshot",
                     "--templates", "Avg'"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto zs = read_json(dir / "zs" / "eval.json");

    r = invoke({"eval", "-c", (dir / "run.json").string(), "-o", (dir / "im").string(), "--variant", "import", "--set",
                "predictions=" + (dir / "zs" / "eval_predictions.csv").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(read_json(dir / "im" / "eval.json")["accuracy"]["top1"] == zs["accuracy"]["top1"]);

    r = invoke({"eval", "-c", (dir / "run.json").string(), "-o", (dir / "pk").string(), "--variant", "prompt-knn",
                "--k", "1", "--templates", "t2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    r = invoke({"eval", "-c", (dir / "run.json").string(), "-o", (dir / "t2").string(), "--variant", "zeroshot",
                "--templates", "t2"});
    REQUIRE(r.code == 0);
    CHECK(slurp(dir / "pk" / "eval_predictions.csv") == slurp(dir / "t2" / "eval_predictions.csv"));
  }

  TEST_CASE("exit codes") {
    const auto dir = blob_workspace("cli-exit");
    write_config(dir / "run.json", {{"train", "train.emb"}, {"eval", "val.emb"}});
    const auto cfg = (dir / "run.json").string();

    CHECK(invoke({"validate", (dir / "train.emb").string(), (dir / "val.emb").string()}).code == cli::kExitOk);
    CHECK(invoke({"validate", "-c", cfg}).code == cli::kExitOk);

    auto bytes = slurp(dir / "val.emb");
    bytes[40] = static_cast<char>(bytes[40] ^ 1);
    std::ofstream(dir / "broken.emb", std::ios::binary) << bytes;
    fs::copy_file(manifest_path(dir / "val.emb"), manifest_path(dir / "broken.emb"));
    const auto v = invoke({"validate", (dir / "broken.emb").string()});
    CHECK(v.code == cli::kExitFailure);
    CHECK(v.out.find("checksum") != std::string::npos);
    CHECK(invoke({"eval", "-c", cfg, "--variant", "knn", "--k", "3", "--set", "eval=broken.emb", "-o",
                  (dir / "x").string()})
              .code == cli::kExitFailure);

    CHECK(invoke({"validate", (dir / "nope.emb").string()}).code == cli::kExitConfig);
    CHECK(invoke({"eval", "-c", cfg, "--variant", "knn", "-o", (dir / "x").string()}).code == cli::kExitConfig);
    CHECK(invoke({"eval", "-c", cfg, "--variant", "magic", "--k", "3", "-o", (dir / "x").string()}).code ==
          cli::kExitConfig);
    CHECK(invoke({"eval", "-c", cfg, "--variant", "knn", "--k", "100000", "-o", (dir / "x").string()}).code ==
          cli::kExitConfig);
    CHECK(invoke({"eval", "--bogus"}).code == cli::kExitConfig);
    CHECK(invoke({}).code == cli::kExitConfig);
    CHECK(invoke({"eval", "-c", (dir / "missing.json").string()}).code == cli::kExitConfig);
    CHECK(invoke({"eval", "-c", cfg, "--variant", "knn", "--k", "3", "-o", (dir / "x").string(), "--set",
                  "expect_min_accuracy=1.01"})
              .code == cli::kExitFailure);
    CHECK(invoke({"eval", "--help"}).code == cli::kExitOk);
  }

  TEST_CASE("config keys, overrides and path resolution") {
    const auto dir = temp_dir("cli-config");
    std::ofstream(dir / "c.json") << R"({"train": "data/t.emb", "oracle": {"top_n": 4}, "seed": 9})";
    auto cfg = cli::RunConfig::from_file(dir / "c.json");
    CHECK(cfg.path("train") == dir / "data" / "t.emb");
    CHECK(cfg.get<std::size_t>("oracle.top_n", 10) == 4);
    CHECK(cfg.get<std::size_t>("oracle.missing", 10) == 10);
    cfg.assign("oracle.top_n=6");
    cfg.assign("name=hello world");
    cfg.assign("grid=[1,2]");
    CHECK(cfg.require<std::size_t>("oracle.top_n") == 6);
    CHECK(cfg.require<std::string>("name") == "hello world");
    CHECK(cfg.require<std::vector<int>>("grid") == std::vector<int>{1, 2});
    CHECK(cfg.resolve("/abs/x") == fs::path("/abs/x"));
    CHECK_THROWS_AS(cfg.require<std::string>("absent"), cli::ConfigError);
    CHECK_THROWS_AS(cfg.require<std::string>("seed"), cli::ConfigError);
    CHECK_THROWS_AS(cfg.assign("novalue"), cli::ConfigError);
    std::ofstream(dir / "bad.json") << "{ nope";
    CHECK_THROWS_AS(cli::RunConfig::from_file(dir / "bad.json"), cli::ConfigError);
  }
}
