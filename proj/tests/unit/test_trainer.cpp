#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "gwnet/toy_glyphs.hpp"
#include "gwnet/trainer.hpp"
#include "test_util.hpp"

#include <unistd.h>

using namespace gwnet;
using gwnet::testing::bit_equal;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("gwnet_tr_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

const GlyphPack& pack() {
  static GlyphPack p = make_toy_pack(5, 3, 6, ToyOptions{3, 1, 32});
  return p;
}

TrainConfig small_config() {
  TrainConfig c;
  c.net = WNetConfig::defaults(32).reduced(32);
  c.net.I = 3;
  c.N = 2;
  c.batch = 2;
  c.n_critic = 2;
  c.steps = 3;
  c.seed = 11;
  c.log_every = 1;
  c.checkpoint_every = 2;
  return c;
}

Classifier& phi() {
  static Classifier net = [] {
    ClassifierConfig cc;
    cc.size = 32;
    cc.J = 6;
    cc.I = 3;
    cc.widths = {2, 2, 3, 3, 3};
    return Classifier(cc, 3);
  }();
  return net;
}

Perceptors perceptors() { return {&phi(), &phi(), &phi()}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool same_store(const ParamStore& a, const ParamStore& b) {
  for (const std::string& n : a.param_names())
    if (!bit_equal(a.get(n), b.get(n))) return false;
  for (const std::string& n : a.buffer_names())
    if (!bit_equal(a.get(n), b.get(n))) return false;
  return true;
}

}  // namespace

TEST_SUITE("train step") {
  TEST_CASE("zero learning rate leaves parameters unchanged") {
    TrainConfig c = small_config();
    c.adam_g.lr = c.adam_d.lr = 0;
    Trainer tr(c, pack(), perceptors());
    ParamStore g0 = tr.generator().params(), d0 = tr.critic().params();
    std::vector<Tensor> g_before, d_before;
    for (const Tensor& t : tr.generator().params().params()) g_before.push_back(t.clone());
    for (const Tensor& t : tr.critic().params().params()) d_before.push_back(t.clone());
    LossReport r = tr.train_step();
    CHECK(std::isfinite(r.total_g));
    CHECK(std::isfinite(r.total_d));
    CHECK(r.pixel > 0);
    auto g_after = tr.generator().params().params();
    auto d_after = tr.critic().params().params();
    for (std::size_t k = 0; k < g_before.size(); ++k) CHECK(bit_equal(g_before[k], g_after[k]));
    for (std::size_t k = 0; k < d_before.size(); ++k) CHECK(bit_equal(d_before[k], d_after[k]));
  }

  TEST_CASE("same seed replays a bit-identical report stream") {
    auto run = [] {
      Trainer tr(small_config(), pack(), perceptors());
      std::string rows;
      for (int k = 0; k < 3; ++k) rows += tr.train_step().csv_row() + "\n";
      return rows;
    };
    std::string a = run();
    CHECK(a == run());
    TrainConfig other = small_config();
    other.seed = 12;
    Trainer tr(other, pack(), perceptors());
    CHECK(a.substr(0, a.find('\n')) != tr.train_step().csv_row());
  }

  TEST_CASE("repeated steps on a tiny dataset reduce the generator loss") {
    TrainConfig c = small_config();
    c.net.I = 2;
    c.batch = 1;
    c.n_critic = 1;
    c.adam_g.lr = c.adam_d.lr = 1e-3;
    GlyphPack tiny = make_toy_pack(5, 2, 3, ToyOptions{3, 0, 32});
    Trainer tr(c, tiny, Perceptors{});
    double first = 0, last = 0;
    for (int k = 0; k < 50; ++k) {
      LossReport r = tr.train_step();
      if (k < 10) first += r.total_g;
      if (k >= 40) last += r.total_g;
    }
    CHECK(last < first);
  }

  TEST_CASE("a non-finite term aborts with its name") {
    Trainer tr(small_config(), pack(), perceptors());
    tr.generator().params().get("enc_p.1.w").mutable_data()[0] = std::nan("");
    try {
      tr.train_step();
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("non-finite loss term 'adv_d'") != std::string::npos);
    }
  }

  TEST_CASE("pack and config must agree") {
    TrainConfig c = small_config();
    c.net.M = c.M = 2;
    CHECK_THROWS_AS(Trainer(c, pack(), perceptors()), DataError);
    c = small_config();
    c.net = WNetConfig::defaults(64).reduced(32);
    c.net.I = 3;
    CHECK_THROWS_AS(Trainer(c, pack(), perceptors()), DataError);
  }
}

TEST_SUITE("fit") {
  TEST_CASE("zero steps writes the initial checkpoint only") {
    TempDir tmp("zero");
    TrainConfig c = small_config();
    c.steps = 0;
    fit(c, pack(), perceptors(), FitOptions{tmp.path});
    std::vector<std::string> files;
    for (auto& e : std::filesystem::directory_iterator(tmp.path / "checkpoints")) files.push_back(e.path().filename());
    CHECK(files == std::vector<std::string>{"step_0000000.ckpt"});
    CHECK(slurp(tmp.path / "log.csv") == LossReport::csv_header() + "\n");
  }

  TEST_CASE("resume reproduces the uninterrupted run") {
    TempDir a("full"), b("resumed");
    TrainConfig c = small_config();
    c.steps = 4;
    auto full = fit(c, pack(), perceptors(), FitOptions{a.path});

    TrainConfig first = c;
    first.steps = 2;
    fit(first, pack(), perceptors(), FitOptions{b.path});
    // A stale row past the checkpoint, as after a crash, must be dropped.
    std::ofstream(b.path / "log.csv", std::ios::app) << "3,garbage\n";
    auto resumed = fit(c, pack(), perceptors(), FitOptions{b.path, true});

    CHECK(resumed->step() == 4);
    CHECK(slurp(a.path / "log.csv") == slurp(b.path / "log.csv"));
    CHECK(same_store(full->generator().params(), resumed->generator().params()));
    CHECK(same_store(full->critic().params(), resumed->critic().params()));
  }

  TEST_CASE("resume refuses a different experiment") {
    TempDir tmp("mismatch");
    TrainConfig c = small_config();
    c.steps = 1;
    fit(c, pack(), perceptors(), FitOptions{tmp.path});
    c.steps = 2;
    c.log_every = 7;
    CHECK_NOTHROW(fit(c, pack(), perceptors(), FitOptions{tmp.path, true}));
    c.steps = 3;
    c.weights.lambda_pixel = 1;
    CHECK_THROWS_AS(fit(c, pack(), perceptors(), FitOptions{tmp.path, true}), DataError);
  }

  TEST_CASE("checkpoints round-trip the generator bit-exactly") {
    TempDir tmp("load");
    TrainConfig c = small_config();
    c.steps = 2;
    c.sheet_every = 2;
    auto tr = fit(c, pack(), perceptors(), FitOptions{tmp.path});
    LoadedGenerator lg = load_generator(tmp.path / "latest.ckpt");
    CHECK(same_store(tr->generator().params(), lg.G->params()));
    CHECK(lg.config.N == 2);
    CHECK(lg.meta.at("step") == "2");
    CHECK(std::filesystem::exists(tmp.path / "sheets" / "step_0000002.png"));
    CHECK(std::filesystem::exists(tmp.path / "checkpoints" / "step_0000002.ckpt"));
  }
}

TEST_SUITE("train config") {
  TEST_CASE("key-value round trip") {
    TrainConfig c = small_config();
    c.weights.lambda_pixel = 12.5;
    c.penalty_mode = InputGradMode::finite_difference;
    std::map<std::string, std::string> kv;
    for (auto& [k, v] : c.to_kv()) kv[k] = v;
    TrainConfig r = TrainConfig::from_kv(kv);
    CHECK(r.to_kv() == c.to_kv());
  }

  TEST_CASE("width divisor and validation") {
    TrainConfig r = TrainConfig::from_kv({{"size", "64"}, {"width_divisor", "8"}});
    CHECK(r.net.enc_widths == std::vector<int>{8, 16, 32, 64, 64, 64});
    CHECK_THROWS_AS(TrainConfig::from_kv({{"batch", "0"}}), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_kv({{"precision", "float"}}), std::invalid_argument);
    CHECK_THROWS_AS(TrainConfig::from_kv({{"steps", "ten"}}), std::invalid_argument);
  }
}
