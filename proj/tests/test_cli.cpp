#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "nobias/cli.hpp"
#include "nobias/concept.hpp"
#include "nobias/dataset.hpp"
#include "nobias/manifest.hpp"
#include "nobias/network.hpp"
#include "nobias/render.hpp"
#include "nobias/tensor_io.hpp"
#include "test_support.hpp"

using namespace nobias;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

struct Workspace {
  fs::path root = fs::temp_directory_path() / "nobias_cli_test";
  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~Workspace() { fs::remove_all(root); }
  std::string operator/(const std::string& name) const { return (root / name).string(); }
};

int run(std::vector<std::string> args) { return cli::run(args); }

// Every listed output exists and matches its recorded digest.
void check_manifest(const fs::path& path, const std::string& command) {
  REQUIRE(fs::exists(path));
  const auto m = read_json(path);
  CHECK(m["command"] == command);
  CHECK(m["tool_version"] == std::string(kToolVersion));
  CHECK(m["duration_seconds"].get<double>() >= 0.0);
  CHECK_FALSE(m["outputs"].empty());
  for (const auto& o : m["outputs"]) {
    CHECK(sha256_file(o["path"].get<std::string>()) == o["sha256"]);
  }
}

}  // namespace

TEST_CASE("command-line workflow") {
  Workspace ws;
  const std::vector<std::string> gen{"gen-data", "--n",    "40",   "--image-size",
                                     "12",       "--box-size", "4", "--seed", "3"};
  auto with_out = [](std::vector<std::string> args, const std::string& out) {
    args.push_back("--out");
    args.push_back(out);
    return args;
  };

  REQUIRE(run(with_out(gen, ws / "data")) == cli::kOk);
  check_manifest(ws / "data/manifest.json", "gen-data");
  const LabeledDataset data = load_dataset(ws / "data");
  CHECK(data.size() == 40);
  std::size_t boxed = 0;
  for (const auto& r : data.regions) boxed += r.has_value();
  CHECK(boxed == 20);

  SUBCASE("gen-data is reproducible and validates its flags") {
    REQUIRE(run(with_out(gen, ws / "again")) == cli::kOk);
    for (const char* f : {"images.nbt", "labels.csv", "boxes.csv"}) {
      CHECK(sha256_file(ws / ("data/" + std::string(f))) ==
            sha256_file(ws / ("again/" + std::string(f))));
    }
    CHECK(run({"gen-data", "--box-size", "40", "--image-size", "32", "--out", ws / "x"}) ==
          cli::kUsage);
    CHECK(run({"gen-data", "--box-fraction", "1.5", "--out", ws / "x"}) == cli::kUsage);
    CHECK(run({"gen-data", "--n"}) == cli::kUsage);
    REQUIRE(run({"gen-data", "--kind", "grey", "--n", "10", "--image-size", "12", "--box-size",
                 "4", "--out", ws / "grey"}) == cli::kOk);
    CHECK(load_dataset(ws / "grey").images.front().shape() == Shape{3, 12, 12});
  }

  SUBCASE("usage errors") {
    CHECK(run({}) == cli::kUsage);
    CHECK(run({"nonsense"}) == cli::kUsage);
    CHECK(run({"--help"}) == cli::kOk);
    CHECK(run({"train", "--help"}) == cli::kOk);
    CHECK(run({"train", "--data", ws / "data"}) == cli::kUsage);  // --out missing
    CHECK(run({"train", "--data", ws / "missing", "--out", ws / "m"}) == cli::kIoFormat);
  }

  const std::vector<std::string> train{"train",   "--data",   ws / "data", "--n-train", "30",
                                       "--widths", "4", "6", "8",   "--epochs",  "1",
                                       "--batch-size", "8"};
  REQUIRE(run(with_out(train, ws / "model")) == cli::kOk);
  check_manifest(ws / "model/manifest.json", "train");
  const fs::path ckpt = ws / "model/model.nbc";
  const SequentialNet net = load_checkpoint(ckpt);
  CHECK(read_json(ws / "model/train_report.json")["epoch_loss"].size() == 1);

  SUBCASE("train") {
    auto zero = train;
    zero.insert(zero.end(), {"--lr", "0", "--net-seed", "5"});
    REQUIRE(run(with_out(zero, ws / "zero")) == cli::kOk);
    const SequentialNet initial =
        build_classifier({1, 12, 12}, std::vector<std::size_t>{4, 6, 8}, 2, 5);
    CHECK(read_file(ws / "zero/model.nbc") == encode_checkpoint(initial));

    REQUIRE(run(with_out(train, ws / "model2")) == cli::kOk);
    CHECK(read_file(ws / "model2/model.nbc") == read_file(ckpt));

    {
      std::ofstream os(ws / "corrupt.nbc", std::ios::binary);
      os << "NBC1\n{not json";
    }
    auto resume = train;
    resume.insert(resume.end(), {"--resume", ws / "corrupt.nbc"});
    CHECK(run(with_out(resume, ws / "r")) == cli::kIoFormat);

    auto bad = train;
    bad.insert(bad.end(), {"--lr", "-1"});
    CHECK(run(with_out(bad, ws / "r")) == cli::kUsage);
    auto diverge = train;
    diverge.insert(diverge.end(), {"--lr", "1e300"});
    CHECK(run(with_out(diverge, ws / "r")) == cli::kFailure);
  }

  std::size_t boxed_index = 0;
  while (!data.regions[boxed_index]) ++boxed_index;
  const std::string idx = std::to_string(boxed_index);
  auto attribute = [&](const std::string& method, const std::string& out,
                       std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"attribute", "--model", ckpt.string(), "--data", ws / "data",
                                  "--index",   idx,       "--method",    method,   "--q",
                                  "0.5",       "--out",   ws / out};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };

  SUBCASE("attribute") {
    REQUIRE(attribute("rectgrad", "rect") == cli::kOk);
    REQUIRE(attribute("nobias", "nob") == cli::kOk);
    check_manifest(ws / "rect/manifest.json", "attribute");
    const Tensor rect = load_tensor(ws / "rect/scores.nbt");
    const Tensor nob = load_tensor(ws / "nob/scores.nbt");
    const Tensor& x = data.images[boxed_index];
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(rect[i] == x[i] * nob[i]);
    const BoxRegion& box = *data.regions[boxed_index];
    for (std::size_t y = box.row; y < box.row + box.height; ++y)
      for (std::size_t c = box.col; c < box.col + box.width; ++c) CHECK(rect.at(0, y, c) == 0.0);

    const auto sidecar = read_json(ws / "rect/scores.json");
    CHECK(sidecar["method"] == "rectgrad");
    CHECK(sidecar["descriptor"]["layer_thresholds"].size() == 3);
    CHECK(sidecar["target"]["index"] == 1);

    CHECK(attribute("bogus", "b") == cli::kUsage);
    CHECK(attribute("nobias", "b", {"--q", "1.5"}) == cli::kUsage);
    CHECK(attribute("nobias", "b", {"--target", "7"}) == cli::kUsage);
    CHECK(attribute("nobias", "b", {"--tau-policy", "sometimes"}) == cli::kUsage);
    REQUIRE(attribute("guided", "abs0", {"--tau-policy", "absolute", "--tau", "0"}) == cli::kOk);

    // absolute tau = 0 gives guided backpropagation
    REQUIRE(run({"attribute", "--model", ckpt.string(), "--data", ws / "data", "--index", idx,
                 "--method", "nobias", "--tau-policy", "absolute", "--tau", "0", "--out",
                 ws / "tau0"}) == cli::kOk);
    CHECK(read_file(ws / "tau0/scores.nbt") == read_file(ws / "abs0/scores.nbt"));

    // a tensor file as input
    save_tensor(ws / "img.nbt", x);
    REQUIRE(run({"attribute", "--model", ckpt.string(), "--image", ws / "img.nbt", "--method",
                 "rectgrad", "--q", "0.5", "--out", ws / "fromfile"}) == cli::kOk);
    CHECK(read_file(ws / "fromfile/scores.nbt") == read_file(ws / "rect/scores.nbt"));
    save_tensor(ws / "small.nbt", Tensor({1, 4, 4}));
    CHECK(run({"attribute", "--model", ckpt.string(), "--image", ws / "small.nbt", "--out",
               ws / "b"}) == cli::kUsage);
  }

  SUBCASE("vanilla matches the finite-difference tool") {
    REQUIRE(attribute("vanilla", "van") == cli::kOk);
    REQUIRE(run({"fd-gradient", "--model", ckpt.string(), "--data", ws / "data", "--index", idx,
                 "--out", ws / "fd"}) == cli::kOk);
    check_manifest(ws / "fd/manifest.json", "fd-gradient");
    const Tensor van = load_tensor(ws / "van/scores.nbt");
    const Tensor fd = load_tensor(ws / "fd/gradient.nbt");
    const Tensor& x = data.images[boxed_index];
    std::size_t compared = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!test::away_from_kinks(net, x, i, 1e-5)) continue;
      ++compared;
      CHECK(test::relative_error(van[i], fd[i]) <= 1e-6);
    }
    CHECK(compared > x.size() / 2);
  }

  SUBCASE("render") {
    REQUIRE(attribute("nobias", "nob", {"--reduce", "mean"}) == cli::kOk);
    CHECK(run({"render", "--scores", ws / "nob/scores.nbt", "--out", ws / "h.ppm"}) ==
          cli::kUsage);
    REQUIRE(run({"render", "--scores", ws / "nob/reduced.nbt", "--out", ws / "h.ppm"}) ==
            cli::kOk);
    REQUIRE(run({"render", "--scores", ws / "nob/scores.nbt", "--reduce", "mean", "--out",
                 ws / "h2.ppm"}) == cli::kOk);
    check_manifest(ws / "h.ppm.manifest.json", "render");
    CHECK(read_file(ws / "h.ppm") == read_file(ws / "h2.ppm"));
    const Image img = load_pnm(ws / "h.ppm");
    CHECK(img.width == 12);
    CHECK(img.channels == 3);
    CHECK(run({"render", "--scores", ws / "nob/reduced.nbt", "--colormap", "viridis", "--out",
               ws / "h3.ppm"}) == cli::kUsage);
    CHECK(run({"render", "--scores", ws / "nope.nbt", "--out", ws / "h3.ppm"}) ==
          cli::kIoFormat);
  }

  SUBCASE("audit") {
    const std::vector<std::string> audit{"audit", "--model", ckpt.string(), "--data",
                                         ws / "data", "--samples", "4", "--accuracy-floor",
                                         "0"};
    REQUIRE(run(with_out(audit, ws / "audit")) == cli::kOk);
    REQUIRE(run(with_out(audit, ws / "audit2")) == cli::kOk);
    check_manifest(ws / "audit/manifest.json", "audit");
    CHECK(read_file(ws / "audit/report.json") == read_file(ws / "audit2/report.json"));
    const auto report = read_json(ws / "audit/report.json");
    CHECK(report["methods"][0]["method"] == "rectgrad");
    CHECK(report["methods"][0]["inside_zero_fraction"] == 1.0);
    CHECK(fs::exists(ws / "audit/scatter_vanilla.csv"));
    CHECK(fs::exists(ws / "audit/histogram_nobias.csv"));

    auto empty = audit;
    empty.insert(empty.end(), {"--methods", ""});
    CHECK(run(with_out(empty, ws / "e")) == cli::kUsage);
    auto unknown = audit;
    unknown.insert(unknown.end(), {"--methods", "rectgrad,magic"});
    CHECK(run(with_out(unknown, ws / "e")) == cli::kUsage);
    CHECK(run({"audit", "--out", ws / "e"}) == cli::kUsage);

    auto strict = audit;
    strict.back() = "1.01";
    CHECK(run(with_out(strict, ws / "strict")) == cli::kInvalidRun);
    CHECK(read_json(ws / "strict/report.json")["valid"] == false);
  }

  SUBCASE("concept commands") {
    auto enc_train = std::vector<std::string>{"train", "--data", ws / "data", "--arch", "encoder",
                                              "--n-train", "30", "--widths", "3", "4",
                                              "--latent-dim", "3", "--decoder-hidden", "8",
                                              "--epochs", "1", "--lr", "0.1", "--out",
                                              ws / "enc"};
    REQUIRE(run(enc_train) == cli::kOk);
    check_manifest(ws / "enc/manifest.json", "train");
    const fs::path enc = ws / "enc/encoder.nbc";
    REQUIRE(run({"concept-build", "--encoder", enc.string(), "--data", ws / "data", "--first",
                 "30", "--out", ws / "concept"}) == cli::kOk);
    check_manifest(ws / "concept/manifest.json", "concept-build");
    std::string digest;
    const ConceptVector c = load_concept(ws / "concept/concept", &digest);
    CHECK(c.n_pos + c.n_neg == 30);
    CHECK(digest == sha256_file(enc));

    REQUIRE(run({"concept-attribute", "--encoder", enc.string(), "--concept",
                 ws / "concept/concept.nbt", "--data", ws / "data", "--index", idx, "--method",
                 "rectgrad", "--out", ws / "ca"}) == cli::kOk);
    check_manifest(ws / "ca/manifest.json", "concept-attribute");
    const Tensor scores = load_tensor(ws / "ca/scores.nbt");
    const BoxRegion& box = *data.regions[boxed_index];
    for (std::size_t y = box.row; y < box.row + box.height; ++y)
      for (std::size_t x = box.col; x < box.col + box.width; ++x) CHECK(scores.at(0, y, x) == 0.0);
    CHECK(read_json(ws / "ca/scores.json")["target"]["kind"] == "concept");

    // the class path accepts a concept stem as target too
    REQUIRE(run({"attribute", "--model", enc.string(), "--target", ws / "concept/concept",
                 "--data", ws / "data", "--index", idx, "--method", "rectgrad", "--out",
                 ws / "ca2"}) == cli::kOk);
    CHECK(read_file(ws / "ca2/scores.nbt") == read_file(ws / "ca/scores.nbt"));
    CHECK(run({"concept-attribute", "--encoder", enc.string(), "--concept", ws / "missing",
               "--data", ws / "data", "--out", ws / "ca3"}) == cli::kIoFormat);
  }
}
