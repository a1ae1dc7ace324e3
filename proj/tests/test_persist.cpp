#include "skd/error.hpp"
#include "skd/persist.hpp"

#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

using namespace skd;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("skd_persist_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

int run_cli(const std::string& args, const std::string& tag) {
  const fs::path err = scratch_dir() / (tag + ".stderr");
  const std::string cmd = std::string(SKD_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Container sample_container() {
  Container c;
  c.kind = "dataset";
  c.meta = {{"note", "unit"}, {"n", 3}};
  c.arrays.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6.5}});
  c.arrays.push_back({"b", {1}, {-0.0}});
  c.arrays.push_back({"c", {0, 4}, {}});
  return c;
}

const char* kTinyConfig = R"({
  "dataset": {"dataset": "toy-sprites", "train_count": 64, "test_count": 32, "seed": 3, "holdout_combinations": false},
  "model": {"k": 8, "hidden": [16], "k_s": 2, "epochs": 2, "batch_size": 16, "seed": 3},
  "eval": {"epochs": 3, "seed": 1, "swap_factor": "color", "static_label": "color"}
})";

}  // namespace

TEST_CASE("container round trip is bit-exact") {
  const Container c = sample_container();
  const std::string bytes = encode_container(c);
  CHECK(bytes.substr(0, 4) == "SKD1");
  const Container back = decode_container(bytes);
  CHECK(back.kind == "dataset");
  CHECK(back.meta == c.meta);
  CHECK(back.array("a").values == c.arrays[0].values);
  CHECK(std::signbit(back.array("b").values[0]));
  CHECK(back.array("c").shape == std::vector<std::size_t>{0, 4});
  CHECK(encode_container(back) == bytes);
  const fs::path p = scratch_dir() / "rt.skd";
  write_container(p, c);
  write_container(scratch_dir() / "rt2.skd", read_container(p));
  CHECK(slurp(p) == slurp(scratch_dir() / "rt2.skd"));
  CHECK_THROWS_AS(back.array("zzz"), IntegrityError);
}

TEST_CASE("container corruption is detected") {
  const std::string bytes = encode_container(sample_container());
  SUBCASE("flipped magic byte") {
    std::string b = bytes;
    b[1] ^= 0x20;
    try {
      decode_container(b);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() == 1);
    }
  }
  SUBCASE("version mismatch") {
    std::string b = bytes;
    b[4] = 2;
    try {
      decode_container(b);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() == 4);
    }
  }
  SUBCASE("corrupt header JSON") {
    std::string b = bytes;
    b[16] = '[';
    b[17] = '}';
    try {
      decode_container(b);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.byte_offset() >= 16);
    }
  }
  SUBCASE("truncated payload") {
    CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 3)), IntegrityError);
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(decode_container(bytes + "x"), IntegrityError); }
  SUBCASE("truncated prefix") { CHECK_THROWS_AS(decode_container(bytes.substr(0, 10)), Error); }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_container(scratch_dir() / "absent.skd"), Error); }
}

TEST_CASE("dataset container round trip") {
  GeneratorConfig g;
  g.train_count = 20;
  g.test_count = 10;
  g.seed = 2;
  const auto data = generate(g);
  const Container c = dataset_container(data, g);
  const auto back = dataset_from_container(decode_container(encode_container(c)));
  CHECK(back.train.frames == data.train.frames);
  CHECK(back.test.labels == data.test.labels);
  CHECK(back.train.range == ValueRange::unit);
  CHECK(back.test.factors[2].name == "motion");
  const auto g2 = generator_from_container(c);
  CHECK(g2.seed == 2);
  CHECK(g2.train_count == 20);
}

TEST_CASE("checkpoint reload reproduces evaluation exactly") {
  GeneratorConfig g;
  g.train_count = 64;
  g.test_count = 32;
  g.seed = 4;
  g.holdout_combinations = false;
  const auto data = generate(g);
  ModelConfig c;
  c.m = data.train.dim();
  c.k = 8;
  c.hidden = {16};
  c.spectral.k_s = 2;
  c.epochs = 2;
  c.batch_size = 16;
  const auto ckpt = train(c, data.train.frames);
  const auto back = checkpoint_from_container(decode_container(encode_container(checkpoint_container(ckpt))));
  CHECK(back.epochs_completed == 2);
  CHECK(back.history.size() == 2);
  CHECK(back.history[1].loss.total == ckpt.history[1].loss.total);
  CHECK(back.last_spectrum == ckpt.last_spectrum);
  CHECK(back.params.adam.step == ckpt.params.adam.step);

  const Judge judge = train_judge(data.train);
  const auto a = eval_generation_metrics(ckpt.model(), data.test, judge, SamplingProtocol::fix_dynamic_sample_static, {3, 0});
  const auto b = eval_generation_metrics(back.model(), data.test, judge, SamplingProtocol::fix_dynamic_sample_static, {3, 0});
  CHECK(a.mean.acc == b.mean.acc);
  CHECK(a.mean.is == b.mean.is);
  CHECK(a.std.h_y == b.std.h_y);

  // Resuming from the reloaded checkpoint matches resuming in memory.
  const auto r1 = resume(ckpt, data.train.frames, 1);
  const auto r2 = resume(back, data.train.frames, 1);
  CHECK(*r1.params.tensors()[0] == *r2.params.tensors()[0]);
}

TEST_CASE("run config schema") {
  const auto cfg = parse_run_config(Json::parse(kTinyConfig));
  CHECK(cfg.dataset.train_count == 64);
  CHECK(cfg.model.k == 8);
  CHECK(cfg.eval.epochs == 3);
  // Serialising and re-parsing is the identity.
  CHECK(to_json(parse_run_config(to_json(cfg))) == to_json(cfg));

  auto expect_key = [](const char* text, const std::string& key) {
    try {
      parse_run_config(Json::parse(text));
      FAIL("expected ConfigError for " << key);
    } catch (const ConfigError& e) {
      CHECK(e.key() == key);
    }
  };
  expect_key(R"({"model": {"k": 8, "colour": 3}})", "model.colour");
  expect_key(R"({"dataste": {}})", "dataste");
  expect_key(R"({"model": {"k": 8, "k_s": 8}})", "model.k_s");
  expect_key(R"({"model": {"lr": "fast"}})", "model.lr");
  expect_key(R"({"model": {"epochs": -1}})", "model.epochs");
  expect_key(R"({"dataset": {"grid": 4}})", "dataset.grid");
  expect_key(R"({"eval": {"protocol": "sideways"}})", "eval.protocol");
  expect_key(R"({"model": {"dynamic_mode": "wobble"}})", "model.dynamic_mode");
}

TEST_CASE("CLI: gen is deterministic and spectrum honours its contract") {
  const fs::path d = scratch_dir();
  spit(d / "tiny.json", kTinyConfig);
  const std::string cfg = (d / "tiny.json").string();
  REQUIRE(run_cli("gen --config " + cfg + " --out " + (d / "g1.skd").string(), "gen1") == 0);
  REQUIRE(run_cli("gen --config " + cfg + " --out " + (d / "g2.skd").string(), "gen2") == 0);
  CHECK(slurp(d / "g1.skd") == slurp(d / "g2.skd"));
  REQUIRE(run_cli("gen --config " + cfg + " --seed 9 --out " + (d / "g3.skd").string(), "gen3") == 0);
  CHECK(slurp(d / "g1.skd") != slurp(d / "g3.skd"));

  const std::string data = (d / "g1.skd").string();
  REQUIRE(run_cli("train --config " + cfg + " --data " + data + " --epochs 0 --out " + (d / "init.skd").string(), "init") == 0);
  REQUIRE(run_cli("spectrum --ckpt " + (d / "init.skd").string() + " --data " + data + " --csv " + (d / "spec.csv").string(), "spec") == 0);
  std::ifstream in(d / "spec.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "index,re,im,modulus,dist_to_one,partition");
  std::vector<std::pair<double, double>> rows;
  int stat = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string field[6];
    for (auto& f : field) std::getline(ls, f, ',');
    rows.emplace_back(std::stod(field[1]), std::stod(field[2]));
    CHECK(std::stod(field[3]) == doctest::Approx(std::hypot(rows.back().first, rows.back().second)));
    stat += field[5] == "static" ? 1 : 0;
    CHECK((field[5] == "static" || field[5] == "dynamic"));
  }
  CHECK(rows.size() == 8);
  CHECK((stat == 2 || stat == 3));
  for (const auto& [re, im] : rows) {
    bool partner = im == 0.0;
    for (const auto& [re2, im2] : rows) partner = partner || (re2 == re && im2 == -im);
    CHECK(partner);
  }
}

TEST_CASE("CLI: train, eval, swap, sample, identify") {
  const fs::path d = scratch_dir();
  spit(d / "tiny.json", kTinyConfig);
  const std::string cfg = (d / "tiny.json").string();
  const std::string data = (d / "p.skd").string(), ck = (d / "p_ck.skd").string();
  REQUIRE(run_cli("gen --config " + cfg + " --out " + data, "pgen") == 0);
  REQUIRE(run_cli("train --config " + cfg + " --data " + data + " --out " + ck + " --log " + (d / "loss.csv").string(), "ptrain") == 0);
  std::ifstream log(d / "loss.csv");
  std::string header, line;
  std::getline(log, header);
  CHECK(header == "epoch,L,L_rec,L_pred,L_stat,L_dyn");
  int epochs = 0;
  while (std::getline(log, line)) ++epochs;
  CHECK(epochs == 2);

  REQUIRE(run_cli("eval --config " + cfg + " --ckpt " + ck + " --data " + data + " --json " + (d / "m.json").string(), "peval") == 0);
  const Json m = Json::parse(slurp(d / "m.json"));
  for (const char* key : {"acc", "is", "h_y_given_x", "h_y", "eer_static", "eer_dynamic", "mean", "std"})
    CHECK(m.contains(key));
  CHECK(m["epochs"] == 3);

  REQUIRE(run_cli("swap --config " + cfg + " --ckpt " + ck + " --data " + data + " --src 0 --tgt 1 --factors static --out " +
                      (d / "sw.skd").string(), "pswap") == 0);
  const Container sw = read_container(d / "sw.skd");
  CHECK(sw.kind == "sequences");
  CHECK(sw.array("frames").shape == std::vector<std::size_t>{2, 8, 432});

  REQUIRE(run_cli("sample --config " + cfg + " --ckpt " + ck + " --data " + data + " --subspace dynamic --seed 4 --out " +
                      (d / "sm.skd").string(), "psample") == 0);
  CHECK(read_container(d / "sm.skd").array("frames").shape[0] == 32);

  REQUIRE(run_cli("identify --config " + cfg + " --ckpt " + ck + " --data " + data + " --factor size --json " +
                      (d / "id.json").string(), "pident") == 0);
  const Json id = Json::parse(slurp(d / "id.json"));
  CHECK(id.contains("identified"));
  CHECK(id["factor"] == "size");
}

TEST_CASE("CLI: exit codes") {
  const fs::path d = scratch_dir();
  spit(d / "bad.json", R"({"model": {"k": 8, "k_s": 2, "learning_rate": 0.1}})");
  CHECK(run_cli("gen --config " + (d / "bad.json").string() + " --out " + (d / "x.skd").string(), "bad") == 2);
  CHECK(slurp(d / "bad.stderr").find("learning_rate") != std::string::npos);
  CHECK(!fs::exists(d / "x.skd"));
  CHECK(run_cli("frobnicate", "unknown") == 2);
  CHECK(run_cli("gen --dataset toy-sprites", "noout") == 2);
  spit(d / "junk.skd", "SKD2 not a container");
  CHECK(run_cli("spectrum --ckpt " + (d / "junk.skd").string() + " --data " + (d / "junk.skd").string() + " --csv " +
                    (d / "j.csv").string(), "junk") == 1);
}
