// gwnet: data prep, classifier training, GAN training, synthesis, evaluation
// and gradient checking in one binary.

#include <filesystem>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gwnet/config.hpp"
#include "gwnet/evaluation.hpp"
#include "gwnet/gradsuite.hpp"
#include "gwnet/percepnets.hpp"
#include "gwnet/toy_glyphs.hpp"
#include "gwnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace gwnet;

namespace {

enum Exit { kOk = 0, kUsage = 2, kData = 3, kNumeric = 4 };

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

std::vector<int> parse_ids(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string part;
  auto to_int = [&](const std::string& s) {
    try {
      std::size_t used = 0;
      int v = std::stoi(s, &used);
      if (used != s.size() || v < 1) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw UsageError("--contents: bad id '" + s + "'");
    }
  };
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    const auto dash = part.find('-');
    if (dash == std::string::npos) {
      ids.push_back(to_int(part));
    } else {
      int a = to_int(part.substr(0, dash)), b = to_int(part.substr(dash + 1));
      if (b < a) throw UsageError("--contents: empty range '" + part + "'");
      for (int v = a; v <= b; ++v) ids.push_back(v);
    }
  }
  if (ids.empty()) throw UsageError("--contents: no ids given");
  return ids;
}

// Flag values go through the same key table as the config file.
void put(KeyValues& kv, const std::string& key, const std::string& value) {
  if (!value.empty()) kv[key] = value;
}

KeyValues with_file(const std::string& config_path, const KeyValues& flags) {
  KeyValues base = config_path.empty() ? KeyValues{} : read_kv_file(config_path);
  return merge_kv(std::move(base), flags);
}

void reject_unknown(const KeyValues& kv, const std::set<std::string>& known, const std::string& cmd) {
  for (const auto& [k, v] : kv)
    if (!known.count(k)) throw UsageError(cmd + ": unknown config key '" + k + "'");
}

std::string take(KeyValues& kv, const std::string& key, const std::string& fallback = "") {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  std::string v = it->second;
  kv.erase(it);
  return v;
}

std::set<std::string> train_keys() {
  std::set<std::string> keys{"width_divisor", "lr", "pack", "phi", "out", "resume"};
  for (const auto& [k, v] : TrainConfig().to_kv()) keys.insert(k);
  return keys;
}

const char* kPhiFiles[3] = {"phi_real.ckpt", "phi_content.ckpt", "phi_style.ckpt"};

Classifier load_phi(const fs::path& path) {
  return Classifier::from_checkpoint(load_checkpoint(path, kClassifierMagic));
}

// ------------------------------------------------------------- prepare

struct PrepareArgs {
  std::string input, manifest, out;
  std::vector<long> toy;
  int size = 64, M = 3, holdout = 1;
};

int cmd_prepare(const PrepareArgs& a) {
  if (a.out.empty()) throw UsageError("prepare: --out is required");
  GlyphPack pack;
  if (!a.toy.empty()) {
    if (!a.input.empty() || !a.manifest.empty()) throw UsageError("prepare: --toy excludes --input/--manifest");
    if (a.toy[1] < 1 || a.toy[2] < 2) throw UsageError("prepare: --toy needs I >= 1 and J >= 2");
    pack = make_toy_pack(static_cast<std::uint64_t>(a.toy[0]), static_cast<int>(a.toy[1]),
                         static_cast<int>(a.toy[2]), ToyOptions{a.M, a.holdout, a.size});
  } else {
    if (a.input.empty() || a.manifest.empty()) throw UsageError("prepare: need --input and --manifest, or --toy");
    pack = import_directory(a.input, a.manifest);
  }
  export_pack(pack, a.out);
  const PackManifest& m = pack.manifest();
  std::cout << "pack " << a.out << ": " << pack.image_count() << " glyphs, I=" << m.I << " J=" << m.J
            << " M=" << pack.M() << " size=" << m.size << " holdout=" << m.holdout_styles.size() << "\n";
  return kOk;
}

// --------------------------------------------------------- classifiers

struct ClassifierArgs {
  std::string pack, out, config, only;
  KeyValues flags;
};

int cmd_classifiers(ClassifierArgs a) {
  KeyValues kv = with_file(a.config, a.flags);
  reject_unknown(kv, {"pack", "out", "epochs", "batch", "lr", "seed", "width_divisor", "early_stop"}, "classifiers");
  std::string pack_dir = take(kv, "pack"), out = take(kv, "out");
  if (pack_dir.empty() || out.empty()) throw UsageError("classifiers: --pack and --out are required");
  ClassifierTrainOptions opt;
  auto num = [&](const char* key, auto& field) {
    std::string v = take(kv, key);
    if (v.empty()) return;
    try {
      field = static_cast<std::decay_t<decltype(field)>>(std::stod(v));
    } catch (const std::exception&) {
      throw UsageError(std::string("classifiers: bad value for ") + key);
    }
  };
  num("epochs", opt.epochs);
  num("batch", opt.batch);
  num("lr", opt.lr);
  num("seed", opt.seed);
  num("width_divisor", opt.width_divisor);
  std::string es = take(kv, "early_stop");
  if (!es.empty()) opt.early_stop = es == "1" || es == "true";
  if (opt.epochs < 0 || opt.batch < 1 || opt.width_divisor < 1 || !(opt.lr > 0))
    throw UsageError("classifiers: invalid training options");

  GlyphPack pack = load_pack(pack_dir);
  fs::create_directories(out);
  const ClassifierTarget targets[3] = {ClassifierTarget::both, ClassifierTarget::content, ClassifierTarget::style};
  for (int k = 0; k < 3; ++k) {
    if (!a.only.empty() && a.only != to_string(targets[k]) && !(a.only == "real" && k == 0)) continue;
    ClassifierReport rep;
    Classifier net = train_classifier(pack, targets[k], opt, &rep);
    save_checkpoint(fs::path(out) / kPhiFiles[k], net.to_checkpoint());
    std::cout << kPhiFiles[k] << ": epochs " << rep.epochs << " images " << rep.images;
    if (rep.content_accuracy >= 0) std::cout << " content_acc " << rep.content_accuracy;
    if (rep.style_accuracy >= 0) std::cout << " style_acc " << rep.style_accuracy;
    std::cout << " loss " << rep.final_loss << "\n";
  }
  return kOk;
}

// --------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  KeyValues flags;
  bool resume = false;
};

int cmd_train(TrainArgs a) {
  for (const std::string& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + s + "'");
    a.flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  if (a.resume) a.flags["resume"] = "1";
  KeyValues kv = with_file(a.config, a.flags);
  reject_unknown(kv, train_keys(), "train");
  const std::string pack_dir = take(kv, "pack"), phi_dir = take(kv, "phi"), out = take(kv, "out");
  const std::string resume = take(kv, "resume");
  if (pack_dir.empty() || out.empty()) throw UsageError("train: --pack and --out are required");
  if (phi_dir.empty()) throw UsageError("train: --phi is required (run 'gwnet classifiers' first)");
  for (const char* f : kPhiFiles) {
    if (!fs::exists(fs::path(phi_dir) / f)) {
      throw UsageError("train: missing " + (fs::path(phi_dir) / f).string() +
                       "; run 'gwnet classifiers --pack " + pack_dir + " --out " + phi_dir + "' first");
    }
  }
  GlyphPack pack = load_pack(pack_dir);
  // Network geometry follows the pack unless set explicitly.
  if (!kv.count("size")) kv["size"] = std::to_string(pack.size());
  if (!kv.count("M")) kv["M"] = std::to_string(pack.M());
  if (!kv.count("I")) kv["I"] = std::to_string(pack.manifest().I);
  TrainConfig cfg = TrainConfig::from_kv(kv);

  Classifier real = load_phi(fs::path(phi_dir) / kPhiFiles[0]);
  Classifier content = load_phi(fs::path(phi_dir) / kPhiFiles[1]);
  Classifier style = load_phi(fs::path(phi_dir) / kPhiFiles[2]);
  FitOptions fo;
  fo.out_dir = out;
  fo.resume = resume == "1" || resume == "true";
  fo.meta["pack"] = fs::absolute(pack_dir).string();
  auto tr = fit(cfg, pack, Perceptors{&real, &content, &style}, fo);
  std::cout << "trained " << tr->step() << " steps; checkpoint " << (fs::path(out) / "latest.ckpt").string() << "\n";
  return kOk;
}

// --------------------------------------------------------------- synth

struct SynthArgs {
  std::string ckpt, contents, out, pack;
  std::vector<std::string> refs;
};

int cmd_synth(const SynthArgs& a) {
  if (a.ckpt.empty() || a.out.empty() || a.contents.empty() || a.refs.empty())
    throw UsageError("synth: --ckpt, --refs, --contents and --out are required");
  std::vector<int> ids = parse_ids(a.contents);
  LoadedGenerator lg = load_generator(a.ckpt);
  std::string pack_dir = a.pack;
  if (pack_dir.empty()) {
    auto it = lg.meta.find("pack");
    if (it == lg.meta.end()) throw UsageError("synth: checkpoint names no pack; pass --pack");
    pack_dir = it->second;
  }
  GlyphPack pack = load_pack(pack_dir);
  if (pack.M() != lg.config.M || pack.size() != lg.config.net.size)
    throw DataError("synth: pack " + pack_dir + " does not match the checkpoint geometry");
  std::vector<GlyphImage> refs;
  for (const std::string& r : a.refs) refs.push_back(load_glyph(r, 0, 0, pack.size()));
  std::vector<const GlyphImage*> ref_ptrs;
  for (const GlyphImage& g : refs) ref_ptrs.push_back(&g);
  std::vector<int> skipped;
  std::vector<Tensor> glyphs = synthesize(*lg.G, pack, ids, ref_ptrs, &skipped);
  if (glyphs.empty()) throw DataError("synth: no requested content is covered by the prototype fonts");
  write_synth_sheet(a.out, glyphs);
  std::cout << "wrote " << glyphs.size() << " glyphs to " << a.out;
  if (!skipped.empty()) std::cout << " (" << skipped.size() << " contents skipped)";
  std::cout << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string ckpt, pack, phi, holdout;
  EvalOptions opt;
};

int cmd_eval(const EvalArgs& a) {
  if (a.pack.empty() || a.phi.empty()) throw UsageError("eval: --pack and --phi are required");
  if (a.ckpt.empty() && !a.opt.ground_truth) throw UsageError("eval: --ckpt is required unless --ground-truth");
  GlyphPack loaded = load_pack(a.pack);
  GlyphPack pack = loaded;
  if (!a.holdout.empty()) {
    PackManifest m = loaded.manifest();
    m.holdout_styles = parse_ids(a.holdout);
    pack = GlyphPack(m);
    for (const auto& [key, g] : loaded.images()) pack.add(g);
    pack.validate();
  }
  Classifier content = load_phi(fs::path(a.phi) / kPhiFiles[1]);
  Classifier style = load_phi(fs::path(a.phi) / kPhiFiles[2]);
  EvalReport rep;
  if (a.opt.ground_truth) {
    WNetConfig net = WNetConfig::defaults(pack.size()).reduced(64);
    net.M = pack.M();
    net.I = std::max(2, pack.manifest().I);
    Generator unused(net, 1);
    rep = evaluate(unused, pack, content, &style, a.opt);
  } else {
    LoadedGenerator lg = load_generator(a.ckpt);
    rep = evaluate(*lg.G, pack, content, &style, a.opt);
  }
  std::cout << rep.to_text();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generalized W-Net glyph synthesis"};
  app.require_subcommand(1);

  PrepareArgs pa;
  auto* prepare = app.add_subcommand("prepare", "Import a glyph directory or emit the toy corpus");
  prepare->add_option("--input", pa.input, "Directory with <style>/<content>.png");
  prepare->add_option("--manifest", pa.manifest, "Manifest JSON");
  prepare->add_option("--out", pa.out, "Output pack directory");
  prepare->add_option("--toy", pa.toy, "Synthetic corpus: seed I J")->expected(3);
  prepare->add_option("--size", pa.size, "Toy glyph size")->check(CLI::IsMember({32, 64}));
  prepare->add_option("--prototypes", pa.M, "Toy prototype fonts")->check(CLI::PositiveNumber);
  prepare->add_option("--holdout", pa.holdout, "Toy held-out styles")->check(CLI::NonNegativeNumber);

  ClassifierArgs ca;
  std::string c_epochs, c_batch, c_lr, c_seed, c_div;
  auto* classifiers = app.add_subcommand("classifiers", "Train the frozen perceptual classifiers");
  classifiers->add_option("--pack", ca.flags["pack"]);
  classifiers->add_option("--out", ca.flags["out"], "Directory for phi_*.ckpt");
  classifiers->add_option("--config", ca.config, "key = value file");
  classifiers->add_option("--epochs", c_epochs);
  classifiers->add_option("--batch", c_batch);
  classifiers->add_option("--lr", c_lr);
  classifiers->add_option("--seed", c_seed);
  classifiers->add_option("--width-divisor", c_div);
  classifiers->add_option("--only", ca.only, "real|content|style");

  TrainArgs ta;
  std::string t_pack, t_phi, t_out, t_variant, t_block, t_steps, t_seed, t_div, t_n, t_batch;
  auto* train = app.add_subcommand("train", "Train the generator and critic");
  train->add_option("--pack", t_pack);
  train->add_option("--phi", t_phi, "Directory holding phi_*.ckpt");
  train->add_option("--out", t_out, "Run directory");
  train->add_option("--config", ta.config, "key = value file");
  train->add_option("--variant", t_variant, "bn|adain");
  train->add_option("--block", t_block, "residual|dense");
  train->add_option("--steps", t_steps, "Generator updates");
  train->add_option("--seed", t_seed);
  train->add_option("--width-divisor", t_div);
  train->add_option("--N", t_n, "Style references per sample");
  train->add_option("--batch", t_batch);
  train->add_option("--set", ta.sets, "Any config entry as key=value");
  train->add_flag("--resume", ta.resume, "Continue from <out>/latest.ckpt");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render contents in the style of reference glyphs");
  synth->add_option("--ckpt", sa.ckpt);
  synth->add_option("--refs", sa.refs, "Reference glyph PNGs")->expected(1, -1);
  synth->add_option("--contents", sa.contents, "Content ids, e.g. 1,4,7-10");
  synth->add_option("--out", sa.out, "Output sheet PNG");
  synth->add_option("--pack", sa.pack, "Pack with the prototype fonts");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Content/style metrics of a trained generator");
  eval->add_option("--ckpt", ea.ckpt);
  eval->add_option("--pack", ea.pack);
  eval->add_option("--phi", ea.phi);
  eval->add_option("--holdout", ea.holdout, "Held-out style ids (default: the manifest's)");
  eval->add_option("--refs", ea.opt.heldout_refs, "References per held-out style")->check(CLI::PositiveNumber);
  eval->add_option("--seed", ea.opt.seed);
  eval->add_flag("--ground-truth", ea.opt.ground_truth, "Score the pack's own glyphs");

  GradSuiteOptions go;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every op and loss");
  gradcheck->add_option("--filter", go.filter, "Run cases whose name contains this");
  gradcheck->add_flag("--broken-fixture", go.broken_fixture, "Include the deliberately broken case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*prepare) return cmd_prepare(pa);
    if (*classifiers) {
      put(ca.flags, "epochs", c_epochs);
      put(ca.flags, "batch", c_batch);
      put(ca.flags, "lr", c_lr);
      put(ca.flags, "seed", c_seed);
      put(ca.flags, "width_divisor", c_div);
      for (auto it = ca.flags.begin(); it != ca.flags.end();) it = it->second.empty() ? ca.flags.erase(it) : ++it;
      return cmd_classifiers(ca);
    }
    if (*train) {
      put(ta.flags, "pack", t_pack);
      put(ta.flags, "phi", t_phi);
      put(ta.flags, "out", t_out);
      put(ta.flags, "variant", t_variant);
      put(ta.flags, "block", t_block);
      put(ta.flags, "steps", t_steps);
      put(ta.flags, "seed", t_seed);
      put(ta.flags, "width_divisor", t_div);
      put(ta.flags, "N", t_n);
      put(ta.flags, "batch", t_batch);
      return cmd_train(ta);
    }
    if (*synth) return cmd_synth(sa);
    if (*eval) return cmd_eval(ea);
    if (*gradcheck) {
      auto results = run_grad_suite(go, &std::cout);
      int failed = 0;
      for (const auto& r : results) failed += !r.passed;
      std::cout << results.size() - failed << "/" << results.size() << " passed\n";
      return failed ? kNumeric : kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "gwnet: " << e.what() << "\n";
    return kUsage;
  } catch (const ShapeError& e) {
    std::cerr << "gwnet: data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "gwnet: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "gwnet: numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "gwnet: data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "gwnet: " << e.what() << "\n";
    return 1;
  }
  return kUsage;
}
