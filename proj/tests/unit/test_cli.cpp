#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include <json.hpp>

#include "dreid/cli.hpp"
#include "dreid/codec.hpp"
#include "../test_images.hpp"

namespace fs = std::filesystem;
using dreid::cli::dispatch;
using nlohmann::json;

namespace {

const fs::path kData = DREID_TEST_DATA;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dreid_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

// Walks both documents; numbers compared with an absolute tolerance.
void check_close(const json& got, const json& want, const std::string& at) {
  if (want.is_number()) {
    REQUIRE_MESSAGE(got.is_number(), at);
    CHECK_MESSAGE(std::abs(got.get<double>() - want.get<double>()) <= 1e-12, at);
  } else if (want.is_object()) {
    REQUIRE_MESSAGE(got.is_object(), at);
    CHECK_MESSAGE(got.size() == want.size(), at);
    for (auto it = want.begin(); it != want.end(); ++it) {
      REQUIRE_MESSAGE(got.contains(it.key()), (at + "/" + it.key()));
      check_close(got[it.key()], it.value(), (at + "/" + it.key()));
    }
  } else if (want.is_array()) {
    REQUIRE_MESSAGE(got.is_array(), at);
    REQUIRE_MESSAGE(got.size() == want.size(), at);
    for (std::size_t i = 0; i < want.size(); ++i) {
      check_close(got[i], want[i], (at + "/" + std::to_string(i)));
    }
  } else {
    CHECK_MESSAGE(got == want, at);
  }
}

fs::path input_images() {
  const fs::path dir = scratch("inputs");
  for (int i = 0; i < 5; ++i) {
    dreid::codec::write_png(dir / ("img" + std::to_string(i) + ".png"),
                            dreid::testing::natural_image(384, 384, 3, 100 + i));
  }
  return dir;
}

}  // namespace

TEST_CASE("eval reproduces the golden report") {
  const fs::path out = scratch("eval") / "report.json";
  const auto r = run({"eval", "--query", (kData / "eval10/query.emb").string(), "--db",
                      (kData / "eval10/db.emb").string(), "--manifest",
                      (kData / "eval10/manifest.csv").string(), "--assignment",
                      (kData / "eval10/assignment.jsonl").string(), "--k", "1,5,10,20",
                      "--strata", "clarity,group", "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::ifstream got(out), want(kData / "eval10/golden_report.json");
  check_close(json::parse(got), json::parse(want), "");
}

TEST_CASE("degrade output trees are byte-identical across runs and worker counts") {
  const fs::path in = input_images();
  std::vector<std::map<std::string, std::string>> trees;
  for (const char* workers : {"1", "1", "4"}) {
    const fs::path out = scratch(std::string("degrade_") + std::to_string(trees.size()));
    const auto r = run({"degrade", "--pipeline", "diverse-plus", "--seed", "7", "--input",
                        in.string(), "--output", (out / "images").string(), "--trace",
                        (out / "trace.jsonl").string(), "--workers", workers});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    trees.push_back(tree(out));
  }
  CHECK(trees[0].size() == 6);
  CHECK(trees[0] == trees[1]);
  CHECK(trees[0] == trees[2]);

  // One trace line per image, sorted by id.
  std::istringstream lines(trees[0].at("trace.jsonl"));
  std::string line, last;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto id = json::parse(line).at("image_id").get<std::string>();
    CHECK(id > last);
    last = id;
    ++n;
  }
  CHECK(n == 5);
}

TEST_CASE("degrade rejects odd sizes unless asked to resize") {
  const fs::path in = scratch("odd");
  dreid::codec::write_png(in / "small.png", dreid::testing::natural_image(100, 120, 1, 3));
  const fs::path out = scratch("odd_out");
  auto r = run({"degrade", "--pipeline", "simple", "--seed", "1", "--input", in.string(),
                "--output", out.string()});
  CHECK(r.code == 1);
  r = run({"degrade", "--pipeline", "simple", "--seed", "1", "--input", in.string(), "--output",
           out.string(), "--resize"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto img = dreid::codec::read_image(out / "small.png");
  CHECK(img.height() == 384);
  CHECK(img.width() == 384);
}

TEST_CASE("exit codes") {
  const fs::path out = scratch("codes");
  CHECK(run({"degrade", "--pipeline", "simple", "--input", "x", "--output", "y"}).code == 1);
  CHECK(run({"bench", "--out", (out / "g.json").string()}).code == 1);
  CHECK(run({"kernel-dump", "--family", "motion"}).code == 1);
  CHECK(run({"kernel-dump", "--family", "sharpen", "--seed", "1"}).code == 1);
  CHECK(run({"no-such-command"}).code == 1);
  CHECK(run({"eval", "--query", (out / "missing.emb").string(), "--db", "x", "--manifest", "y",
             "--out", (out / "r.json").string()})
            .code == 2);
  CHECK(run({"split", "--manifest", (kData / "eval10/manifest.csv").string(), "--seed", "1",
             "--unseen-frac", "1.5", "--out", (out / "a.jsonl").string()})
            .code == 1);
}

TEST_CASE("version names the jpeg encoder") {
  const auto r = run({"--version"});
  CHECK(r.code == 0);
  CHECK(r.out.find(dreid::codec::jpeg_encoder_identity()) != std::string::npos);
}

TEST_CASE("kernel-dump prints a normalized grid") {
  const auto r = run({"kernel-dump", "--family", "gaussian", "--seed", "3", "--spec",
                      "side=7,sigma_x=1.5,sigma_y=1.5,theta=0"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream in(r.out);
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("# ", 0) == 0);
  double sum = 0.0, v = 0.0;
  int count = 0;
  while (in >> v) {
    sum += v;
    ++count;
  }
  CHECK(count == 49);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  // Same seed, same bytes.
  CHECK(run({"kernel-dump", "--family", "gaussian", "--seed", "3", "--spec",
             "side=7,sigma_x=1.5,sigma_y=1.5,theta=0"})
            .out == r.out);
  CHECK(run({"kernel-dump", "--family", "gaussian", "--seed", "3", "--spec", "radius=2"}).code ==
        1);
}

TEST_CASE("split then plot") {
  const fs::path out = scratch("split");
  auto r = run({"split", "--manifest", (kData / "eval10/manifest.csv").string(), "--seed", "5",
                "--unseen-frac", "0.25", "--out", (out / "assignment.jsonl").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(fs::exists(out / "assignment.jsonl"));
  CHECK(!r.out.empty());

  r = run({"plot", "--report", (kData / "eval10/golden_report.json").string(), "--out",
           (out / "cmc.csv").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto csv = slurp(out / "cmc.csv");
  CHECK(csv.rfind("rank,accuracy\n1,0.25\n", 0) == 0);
  r = run({"plot", "--report", (kData / "eval10/golden_report.json").string(), "--stratum",
           "clarity=4", "--out", (out / "c4.csv").string()});
  CHECK(r.code == 0);
}
