#include "gwnet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "gwnet/ops.hpp"

namespace gwnet {

namespace {

long get_long(const std::map<std::string, std::string>& kv, const std::string& key, long fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    long v = std::stol(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("'" + key + "': expected an integer, got '" + it->second + "'");
  }
}

double get_double(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    double v = std::stod(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument(key);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("'" + key + "': expected a number, got '" + it->second + "'");
  }
}

std::string num(double v) {
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

void check_term(double v, const char* name, long step) {
  if (!std::isfinite(v)) {
    throw NumericError("non-finite loss term '" + std::string(name) + "' at step " + std::to_string(step));
  }
}

void put_store(Checkpoint& c, const std::string& prefix, const ParamStore& ps) {
  for (const std::string& n : ps.param_names()) c.blobs.push_back({prefix + n, ps.get(n).clone()});
  for (const std::string& n : ps.buffer_names()) c.blobs.push_back({prefix + n, ps.get(n).clone()});
}

void get_store(const Checkpoint& c, const std::string& prefix, ParamStore& ps) {
  auto load = [&](const std::string& n) {
    const std::string key = prefix + n;
    if (!c.has_blob(key)) throw DataError("checkpoint: missing tensor '" + key + "'");
    const Tensor& src = c.blob(key);
    Tensor& dst = ps.get(n);
    if (!(src.shape() == dst.shape())) {
      throw DataError("checkpoint: tensor '" + key + "' has shape " + src.shape().str() + ", model expects " +
                      dst.shape().str());
    }
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  };
  for (const std::string& n : ps.param_names()) load(n);
  for (const std::string& n : ps.buffer_names()) load(n);
}

std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix,
                                                        std::vector<std::pair<std::string, Tensor>> v) {
  for (auto& [n, t] : v) n = prefix + n;
  return v;
}

std::vector<std::pair<std::string, Tensor>> strip_prefix(const Checkpoint& c, const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& [n, t] : c.blobs)
    if (n.rfind(prefix, 0) == 0) out.push_back({n.substr(prefix.size()), t});
  return out;
}

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

}  // namespace

// ------------------------------------------------------------ config

void TrainConfig::validate() const {
  auto positive = [](long v, const char* name) {
    if (v <= 0) throw std::invalid_argument(std::string("'") + name + "' must be positive");
  };
  positive(M, "M");
  positive(N, "N");
  positive(batch, "batch");
  positive(n_critic, "n_critic");
  if (steps < 0) throw std::invalid_argument("'steps' must be >= 0");
  positive(log_every, "log_every");
  positive(checkpoint_every, "checkpoint_every");
  if (sheet_every < 0) throw std::invalid_argument("'sheet_every' must be >= 0");
  for (const AdamConfig* a : {&adam_g, &adam_d}) {
    if (!(a->lr >= 0) || !(a->beta1 >= 0 && a->beta1 < 1) || !(a->beta2 >= 0 && a->beta2 < 1) || !(a->eps > 0)) {
      throw std::invalid_argument("optimizer settings out of range (lr >= 0, betas in [0,1), eps > 0)");
    }
  }
  if (precision != "double") throw std::invalid_argument("'precision': only 'double' is supported");
  if (net.M != M) throw std::invalid_argument("network M does not match the run's M");
  weights.validate();
  net.validate();
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_kv() const {
  std::vector<std::pair<std::string, std::string>> kv{
      {"N", std::to_string(N)},
      {"batch", std::to_string(batch)},
      {"n_critic", std::to_string(n_critic)},
      {"steps", std::to_string(steps)},
      {"lr_g", num(adam_g.lr)},
      {"beta1_g", num(adam_g.beta1)},
      {"beta2_g", num(adam_g.beta2)},
      {"lr_d", num(adam_d.lr)},
      {"beta1_d", num(adam_d.beta1)},
      {"beta2_d", num(adam_d.beta2)},
      {"adam_eps", num(adam_g.eps)},
      {"seed", std::to_string(seed)},
      {"penalty_mode", penalty_mode == InputGradMode::exact ? "exact" : "finite_difference"},
      {"precision", precision},
      {"log_every", std::to_string(log_every)},
      {"checkpoint_every", std::to_string(checkpoint_every)},
      {"sheet_every", std::to_string(sheet_every)},
  };
  for (auto& p : net.to_kv()) kv.push_back(p);
  for (auto& p : weights.to_kv()) kv.push_back(p);
  return kv;
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  c.net = WNetConfig::from_kv(kv);
  const long divisor = get_long(kv, "width_divisor", 1);
  if (divisor < 1) throw std::invalid_argument("'width_divisor' must be >= 1");
  if (divisor > 1) {
    if (kv.count("enc_widths") || kv.count("critic_widths")) {
      throw std::invalid_argument("'width_divisor' cannot be combined with explicit widths");
    }
    c.net = c.net.reduced(static_cast<int>(divisor));
  }
  c.M = c.net.M;
  c.N = static_cast<int>(get_long(kv, "N", c.N));
  c.batch = static_cast<int>(get_long(kv, "batch", c.batch));
  c.n_critic = static_cast<int>(get_long(kv, "n_critic", c.n_critic));
  c.steps = get_long(kv, "steps", c.steps);
  c.adam_g.lr = get_double(kv, "lr_g", get_double(kv, "lr", c.adam_g.lr));
  c.adam_d.lr = get_double(kv, "lr_d", get_double(kv, "lr", c.adam_d.lr));
  c.adam_g.beta1 = get_double(kv, "beta1_g", c.adam_g.beta1);
  c.adam_g.beta2 = get_double(kv, "beta2_g", c.adam_g.beta2);
  c.adam_d.beta1 = get_double(kv, "beta1_d", c.adam_d.beta1);
  c.adam_d.beta2 = get_double(kv, "beta2_d", c.adam_d.beta2);
  c.adam_g.eps = c.adam_d.eps = get_double(kv, "adam_eps", c.adam_g.eps);
  c.seed = static_cast<std::uint64_t>(get_long(kv, "seed", static_cast<long>(c.seed)));
  if (kv.count("penalty_mode")) {
    const std::string& m = kv.at("penalty_mode");
    if (m == "exact") c.penalty_mode = InputGradMode::exact;
    else if (m == "finite_difference") c.penalty_mode = InputGradMode::finite_difference;
    else throw std::invalid_argument("'penalty_mode': expected exact or finite_difference, got '" + m + "'");
  }
  if (kv.count("precision")) c.precision = kv.at("precision");
  c.log_every = get_long(kv, "log_every", c.log_every);
  c.checkpoint_every = get_long(kv, "checkpoint_every", c.checkpoint_every);
  c.sheet_every = get_long(kv, "sheet_every", c.sheet_every);
  c.weights = LossWeights::from_kv(kv);
  c.validate();
  return c;
}

// ------------------------------------------------------------ batches

Batch make_batch(const std::vector<TrainSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<Tensor> protos, refs, targets, ppick, rpick;
  Batch b;
  for (const TrainSample& s : samples) {
    Tensor p = stack_glyphs(s.prototypes);  // (M,1,S,S)
    const Shape& ps = p.shape();
    protos.push_back(reshape(p, Shape{1, ps.n, ps.h, ps.w}));
    refs.push_back(stack_glyphs(s.references));
    targets.push_back(s.target->tensor());
    ppick.push_back(s.prototypes.at(s.m_pick)->tensor());
    rpick.push_back(s.references.at(s.n_pick)->tensor());
    b.styles.push_back(s.target->style_id);
    b.contents.push_back(s.target->content_id);
  }
  b.prototypes = concat(std::span<const Tensor>(protos), 0);
  b.references = concat(std::span<const Tensor>(refs), 0);
  b.targets = concat(std::span<const Tensor>(targets), 0);
  b.proto_pick = concat(std::span<const Tensor>(ppick), 0);
  b.ref_pick = concat(std::span<const Tensor>(rpick), 0);
  return b;
}

// ------------------------------------------------------------ trainer

Trainer::Trainer(const TrainConfig& cfg, const GlyphPack& pack, Perceptors phi)
    : cfg_(cfg), pack_(&pack), phi_(phi), sampler_(pack, cfg.N, cfg.seed), rng_(cfg.seed ^ 0x9e3779b97f4a7c15ULL) {
  cfg_.validate();
  if (pack.M() != cfg_.M) {
    throw DataError("pack has " + std::to_string(pack.M()) + " prototype fonts, config expects M=" +
                    std::to_string(cfg_.M));
  }
  if (pack.size() != cfg_.net.size) {
    throw DataError("pack glyphs are " + std::to_string(pack.size()) + "px, network expects " +
                    std::to_string(cfg_.net.size));
  }
  if (pack.manifest().I != cfg_.net.I) {
    throw DataError("pack has I=" + std::to_string(pack.manifest().I) + " styles, network expects " +
                    std::to_string(cfg_.net.I));
  }
  G_ = std::make_unique<Generator>(cfg_.net, cfg_.seed);
  D_ = std::make_unique<Critic>(cfg_.net, cfg_.seed + 1);
  opt_g_ = std::make_unique<Adam>(G_->params(), cfg_.adam_g);
  opt_d_ = std::make_unique<Adam>(D_->params(), cfg_.adam_d);
}

Batch Trainer::next_batch() { return make_batch(sampler_.next(cfg_.batch)); }

LossReport Trainer::train_step() {
  GradModeGuard recording(true);
  const LossWeights& w = cfg_.weights;
  LossReport rep;
  rep.step = step_ + 1;

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int k = 0; k < cfg_.n_critic; ++k) {
    Batch b = next_batch();
    Tensor fake;
    {
      NoGradGuard frozen;
      fake = G_->generate(b.prototypes, b.references, cfg_.N, true);
    }
    Triple real{b.proto_pick, b.targets, b.ref_pick};
    Triple fk{b.proto_pick, fake, b.ref_pick};
    CriticOutput out_real = D_->discriminate(real.prototype, real.candidate, real.reference);
    CriticOutput out_fake = D_->discriminate(fk.prototype, fk.candidate, fk.reference);
    Tensor adv_d = sub(mean(out_fake.critic, kAll), mean(out_real.critic, kAll));
    std::vector<double> u(b.styles.size());
    for (double& v : u) v = uni(rng_);
    PenaltyResult gp = gradient_penalty(*D_, real, fk, Tensor(Shape{int(u.size()), 1, 1, 1}, u), cfg_.penalty_mode);
    Tensor ac = ac_loss(out_real.logits, out_fake.logits, b.styles);
    Tensor total = total_D(CriticTerms{adv_d, gp.penalty, ac}, w);

    rep.adv_d = adv_d.item();
    rep.gp = gp.penalty.item();
    rep.grad_norm = gp.mean_norm;
    rep.ac_d = ac.item();
    rep.total_d = total.item();
    check_term(rep.adv_d, "adv_d", rep.step);
    check_term(rep.gp, "gp", rep.step);
    check_term(rep.ac_d, "ac_d", rep.step);
    check_term(rep.total_d, "total_d", rep.step);
    opt_d_->step(grad(total, D_->params().params()));
  }

  Batch b = next_batch();
  GeneratorPass pass = G_->forward(b.prototypes, b.references, cfg_.N, true);
  Tensor fake = pass.image;
  CriticOutput out_fake = D_->discriminate(b.proto_pick, fake, b.ref_pick);
  Tensor logits_real;
  {
    NoGradGuard frozen;
    logits_real = D_->discriminate(b.proto_pick, b.targets, b.ref_pick).logits;
  }
  GeneratorTerms t;
  t.adv_g = mean(out_fake.critic, kAll);
  t.ac = ac_loss(logits_real, out_fake.logits, b.styles);
  t.pixel = pixel_l1(fake, b.targets);
  PerceptualTerms phi = perceptual_total(phi_, fake, b.targets, b.proto_pick, b.ref_pick, w);
  t.phi_total = phi.total;
  ConstLosses cl = const_losses(*G_, pass, fake, true);
  t.const_p = cl.content;
  t.const_r = cl.style;
  Tensor total = total_G(t, w);

  rep.adv_g = t.adv_g.item();
  rep.ac_g = t.ac.item();
  rep.pixel = t.pixel.item();
  rep.phi_real = phi.real.item();
  rep.phi_content = phi.content.item();
  rep.phi_style = phi.style.item();
  rep.phi_total = phi.total.item();
  rep.const_p = t.const_p.item();
  rep.const_r = t.const_r.item();
  rep.total_g = total.item();
  const std::pair<double, const char*> g_terms[] = {
      {rep.adv_g, "adv_g"},         {rep.ac_g, "ac_g"},         {rep.pixel, "pixel"},
      {rep.phi_real, "phi_real"},   {rep.phi_content, "phi_content"}, {rep.phi_style, "phi_style"},
      {rep.const_p, "const_p"},     {rep.const_r, "const_r"},   {rep.total_g, "total_g"}};
  for (const auto& [v, name] : g_terms) check_term(v, name, rep.step);
  opt_g_->step(grad(total, G_->params().params()));
  ++step_;
  return rep;
}

Checkpoint Trainer::to_checkpoint() const {
  Checkpoint c;
  c.magic = kGeneratorMagic;
  c.config = cfg_.to_kv();
  c.set("step", std::to_string(step_));
  c.set("adam_g_steps", std::to_string(opt_g_->steps()));
  c.set("adam_d_steps", std::to_string(opt_d_->steps()));
  c.set("sampler_rng", sampler_.rng_state());
  c.set("penalty_rng", rng_text(rng_));
  put_store(c, "G/", G_->params());
  put_store(c, "D/", D_->params());
  for (auto& b : with_prefix("optG/", opt_g_->state())) c.blobs.push_back(b);
  for (auto& b : with_prefix("optD/", opt_d_->state())) c.blobs.push_back(b);
  return c;
}

void Trainer::restore(const Checkpoint& ckpt) {
  get_store(ckpt, "G/", G_->params());
  get_store(ckpt, "D/", D_->params());
  auto steps = [&](const char* key) {
    try {
      return std::stol(ckpt.get(key));
    } catch (const std::invalid_argument&) {
      throw DataError(std::string("checkpoint: bad '") + key + "'");
    }
  };
  opt_g_->load_state(strip_prefix(ckpt, "optG/"), steps("adam_g_steps"));
  opt_d_->load_state(strip_prefix(ckpt, "optD/"), steps("adam_d_steps"));
  sampler_.set_rng_state(ckpt.get("sampler_rng"));
  std::istringstream ss(ckpt.get("penalty_rng"));
  ss >> rng_;
  if (!ss) throw DataError("checkpoint: corrupt penalty RNG state");
  step_ = steps("step");
}

// ------------------------------------------------------------ fit

namespace {

std::string step_name(long step) {
  std::ostringstream ss;
  ss << "step_" << std::setw(7) << std::setfill('0') << step;
  return ss.str();
}

void save_pair(const Trainer& tr, const std::filesystem::path& out, const FitOptions& opt) {
  Checkpoint c = tr.to_checkpoint();
  for (const auto& [k, v] : opt.meta) c.set(k, v);
  std::filesystem::create_directories(out / "checkpoints");
  save_checkpoint(out / "checkpoints" / (step_name(tr.step()) + ".ckpt"), c);
  save_checkpoint(out / "latest.ckpt", c);
}

// Run length and reporting cadence may change between sessions; anything
// else would silently continue a different experiment.
void check_resume_config(const Checkpoint& ckpt, const TrainConfig& cfg) {
  static const std::set<std::string> free_keys{"steps", "log_every", "checkpoint_every", "sheet_every"};
  for (const auto& [k, v] : cfg.to_kv()) {
    if (free_keys.count(k)) continue;
    if (!ckpt.has(k) || ckpt.get(k) != v) {
      throw DataError("cannot resume: checkpoint has " + k + " = " + (ckpt.has(k) ? ckpt.get(k) : "<unset>") +
                      ", config has " + v);
    }
  }
}

// Keeps the header and rows up to `step`, so a resumed run continues a log
// that matches its checkpoint.
void trim_log(const std::filesystem::path& log, long step) {
  std::ifstream in(log);
  if (!in) return;
  std::vector<std::string> keep;
  std::string line;
  while (std::getline(in, line)) {
    if (keep.empty()) {
      keep.push_back(line);
      continue;
    }
    if (std::stol(line.substr(0, line.find(','))) <= step) keep.push_back(line);
  }
  in.close();
  std::ofstream out(log, std::ios::trunc);
  for (const auto& l : keep) out << l << "\n";
}

void write_samples(Generator& G, const Batch& b, int N, const std::filesystem::path& png) {
  NoGradGuard ng;
  Tensor fake = G.generate(b.prototypes, b.references, N, false);
  std::vector<std::vector<Tensor>> rows;
  for (int n = 0; n < fake.shape().n; ++n) {
    std::vector<Tensor> row{narrow(b.targets, 0, n, 1), narrow(fake, 0, n, 1)};
    for (int r = 0; r < N; ++r) row.push_back(narrow(b.references, 0, n * N + r, 1));
    rows.push_back(std::move(row));
  }
  write_sheet(png, rows);
}

}  // namespace

std::unique_ptr<Trainer> fit(const TrainConfig& cfg, const GlyphPack& pack, Perceptors phi, const FitOptions& opt) {
  auto tr = std::make_unique<Trainer>(cfg, pack, phi);
  const auto& out = opt.out_dir;
  std::filesystem::create_directories(out);
  const auto log_path = out / "log.csv";
  if (opt.resume && std::filesystem::exists(out / "latest.ckpt")) {
    Checkpoint ckpt = load_checkpoint(out / "latest.ckpt", kGeneratorMagic);
    check_resume_config(ckpt, cfg);
    tr->restore(ckpt);
    trim_log(log_path, tr->step());
    std::cerr << "resuming at step " << tr->step() << "\n";
  } else {
    std::ofstream(log_path, std::ios::trunc) << LossReport::csv_header() << "\n";
    save_pair(*tr, out, opt);
  }
  std::ofstream log(log_path, std::ios::app);

  // Fixed batch for sample sheets, drawn outside the training stream.
  Batch sheet_batch;
  if (cfg.sheet_every > 0) sheet_batch = make_batch(sample_batch(pack, std::min(cfg.batch, 8), cfg.N, cfg.seed + 7));

  auto t0 = std::chrono::steady_clock::now();
  const long start = tr->step();
  while (tr->step() < cfg.steps) {
    LossReport r = tr->train_step();
    log << r.csv_row() << "\n";
    if (opt.on_step) opt.on_step(r);
    const long s = tr->step();
    if (s % cfg.log_every == 0 || s == cfg.steps) {
      log.flush();
      double per = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / double(s - start);
      std::cerr << "step " << s << "/" << cfg.steps << std::fixed << std::setprecision(4) << "  G " << r.total_g
                << "  D " << r.total_d << "  pixel " << r.pixel << "  |grad| " << r.grad_norm << "  "
                << std::setprecision(2) << per << " s/step" << std::defaultfloat << "\n";
    }
    if (s % cfg.checkpoint_every == 0 || s == cfg.steps) save_pair(*tr, out, opt);
    if (cfg.sheet_every > 0 && (s % cfg.sheet_every == 0 || s == cfg.steps)) {
      std::filesystem::create_directories(out / "sheets");
      write_samples(tr->generator(), sheet_batch, cfg.N, out / "sheets" / (step_name(s) + ".png"));
    }
  }
  return tr;
}

LoadedGenerator load_generator(const std::filesystem::path& path) {
  Checkpoint c = load_checkpoint(path, kGeneratorMagic);
  LoadedGenerator lg;
  for (const auto& [k, v] : c.config) lg.meta[k] = v;
  try {
    lg.config = TrainConfig::from_kv(lg.meta);
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": bad config (" + e.what() + ")");
  }
  lg.G = std::make_unique<Generator>(lg.config.net, lg.config.seed);
  get_store(c, "G/", lg.G->params());
  return lg;
}

}  // namespace gwnet
