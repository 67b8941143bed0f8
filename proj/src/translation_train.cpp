#include "evident/translation_train.hpp"

#include <cmath>
#include <limits>

#include "evident/error.hpp"
#include "evident/rng.hpp"

namespace evident::translation {

void TranslationTrainConfig::validate() const {
  net.validate();
  mask.validate();
  weights.validate();
  if (steps <= 0) throw ConfigError("translation_steps must be positive");
  if (batch_size <= 0) throw ConfigError("translation batch_size must be positive");
  if (!(learning_rate > 0.0) || weight_decay < 0.0) throw ConfigError("invalid translation optimizer settings");
  if (eval_every <= 0) throw ConfigError("eval_every must be positive");
  if (patience < 0) throw ConfigError("patience must be non-negative");
}

nlohmann::json TranslationTrainConfig::to_json() const {
  return {{"net", net.to_json()},
          {"translation_steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"weight_decay", weight_decay},
          {"gan_form", to_string(form)},
          {"delta", mask.delta},
          {"delta_min", mask.delta_min},
          {"delta_max", mask.delta_max},
          {"epsilon", mask.epsilon},
          {"lambda_acl", weights.lambda_acl},
          {"lambda_idt", weights.lambda_idt},
          {"lambda_mask", weights.lambda_mask},
          {"eval_every", eval_every},
          {"patience", patience},
          {"seed", seed}};
}

namespace {

torch::Tensor composite(const torch::Tensor& src, const models::GenOut& o) { return apply_mask(src, {o.image, o.mask}); }

torch::Tensor pair(const torch::Tensor& a, const torch::Tensor& b) { return torch::cat({a, b}, 1); }

std::vector<torch::Tensor> snapshot(const torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  for (const auto& b : m.buffers()) out.push_back(b.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& snap) {
  torch::NoGradGuard ng;
  std::size_t i = 0;
  for (auto& p : m.parameters()) p.copy_(snap[i++]);
  for (auto& b : m.buffers()) b.copy_(snap[i++]);
}

bool all_finite(const torch::nn::Module& m) {
  for (const auto& p : m.parameters()) {
    if (!torch::isfinite(p).all().item<bool>()) return false;
  }
  return true;
}

}  // namespace

GeneratorTerms generator_terms(models::TranslationBundle& b, const torch::Tensor& xs, const torch::Tensor& xt,
                               const torch::Tensor& z1, const torch::Tensor& z2, const torch::Tensor& z3,
                               const TranslationTrainConfig& cfg) {
  GeneratorTerms g;
  const auto o1 = b->gen_s_to_t->forward(xs, z1);
  g.xbar_t = composite(xs, o1);
  const auto o2 = b->gen_t_to_s->forward(g.xbar_t, z2);
  g.xhat_s = composite(g.xbar_t, o2);
  const auto o3 = b->gen_t_to_s->forward(xs, z3);
  g.xtilde_s = composite(xs, o3);
  const auto is = b->gen_t_to_s->forward(xs, b->enc_z_s->forward(xs));
  const auto it = b->gen_s_to_t->forward(xt, b->enc_z_t->forward(xt));

  g.adv = adv_target_gen(b->disc_t->forward(g.xbar_t), cfg.form) +
          adv_source_gen(b->disc_s->forward(g.xhat_s), b->disc_s->forward(g.xtilde_s), cfg.form);
  g.acl = acl_gen(b->disc_pair->forward(pair(xs, g.xhat_s)), b->disc_pair->forward(pair(xs, g.xtilde_s)), cfg.form);
  g.idt = identity_loss(xs, composite(xs, is), xt, composite(xt, it));
  g.mask = (mask_loss(o1.mask, cfg.mask) + mask_loss(o2.mask, cfg.mask) + mask_loss(o3.mask, cfg.mask) +
            mask_loss(is.mask, cfg.mask) + mask_loss(it.mask, cfg.mask)) /
           5.0;
  g.total = total_translation_loss({g.adv, g.acl, g.idt, g.mask}, cfg.weights);
  return g;
}

torch::Tensor discriminator_loss(models::TranslationBundle& b, const torch::Tensor& xs, const torch::Tensor& xt,
                                 const GeneratorTerms& g, const TranslationTrainConfig& cfg) {
  const auto bar = g.xbar_t.detach();
  const auto hat = g.xhat_s.detach();
  const auto tilde = g.xtilde_s.detach();
  const auto adv = adv_target_disc(b->disc_t->forward(xt), b->disc_t->forward(bar), cfg.form) +
                   adv_source_disc(b->disc_s->forward(xs), b->disc_s->forward(hat), b->disc_s->forward(tilde), cfg.form);
  const auto acl = acl_disc(b->disc_pair->forward(pair(xs, hat)), b->disc_pair->forward(pair(xs, tilde)), cfg.form);
  return adv + cfg.weights.lambda_acl * acl;
}

torch::Tensor slices_to_tensor(const std::vector<Slice2>& slices) {
  if (slices.empty()) throw DomainError("no slices");
  const auto h = static_cast<int64_t>(slices.front().rows);
  const auto w = static_cast<int64_t>(slices.front().cols);
  auto t = torch::empty({static_cast<int64_t>(slices.size()), 1, h, w}, torch::kFloat);
  auto* dst = t.data_ptr<float>();
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto& s = slices[i];
    if (static_cast<int64_t>(s.rows) != h || static_cast<int64_t>(s.cols) != w || s.pixels.size() != s.rows * s.cols) {
      throw DomainError("slices differ in shape");
    }
    std::copy(s.pixels.begin(), s.pixels.end(), dst + i * static_cast<std::size_t>(h * w));
  }
  return t;
}

torch::Tensor sample_noise(std::int64_t batch, std::int64_t dim, std::uint64_t seed) {
  Rng rng(seed);
  auto z = torch::empty({batch, dim}, torch::kFloat);
  auto* p = z.data_ptr<float>();
  for (int64_t i = 0; i < batch * dim; ++i) p[i] = static_cast<float>(rng.normal());
  return z;
}

double validation_loss(models::TranslationBundle& b, const torch::Tensor& val_s, const torch::Tensor& val_t,
                       const TranslationTrainConfig& cfg) {
  torch::NoGradGuard ng;
  const auto n = std::min(val_s.size(0), val_t.size(0));
  if (n == 0) throw DomainError("empty validation split");
  const auto zd = cfg.net.z_dim;
  double total = 0.0;
  std::int64_t batches = 0;
  for (int64_t s = 0; s < n; s += cfg.batch_size) {
    const auto len = std::min(cfg.batch_size, n - s);
    const auto base = derive_seed(cfg.seed ^ 0x5a17ULL, static_cast<std::uint64_t>(s));
    const auto g = generator_terms(b, val_s.narrow(0, s, len), val_t.narrow(0, s, len), sample_noise(len, zd, base),
                                   sample_noise(len, zd, base + 1), sample_noise(len, zd, base + 2), cfg);
    total += g.total.item<double>();
    ++batches;
  }
  return total / static_cast<double>(batches);
}

TranslationTrainResult train_translation(const std::vector<Slice2>& train_s, const std::vector<Slice2>& train_t,
                                         const std::vector<Slice2>& val_s, const std::vector<Slice2>& val_t,
                                         const TranslationTrainConfig& cfg) {
  cfg.validate();
  const auto ts = slices_to_tensor(train_s);
  const auto tt = slices_to_tensor(train_t);
  const auto vs = slices_to_tensor(val_s);
  const auto vt = slices_to_tensor(val_t);
  if (ts.size(2) != cfg.net.image_size || ts.size(3) != cfg.net.image_size || tt.size(2) != cfg.net.image_size) {
    throw ContractError("slices are not " + std::to_string(cfg.net.image_size) + " pixels square");
  }

  torch::manual_seed(cfg.seed);
  TranslationTrainResult res;
  res.bundle = models::build_translation_bundle(cfg.net);
  auto& b = res.bundle;
  const auto opts = torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay);
  torch::optim::Adam opt_g(b->generator_parameters(), opts);
  torch::optim::Adam opt_d(b->discriminator_parameters(), opts);

  Rng rng(derive_seed(cfg.seed, 7));
  auto last_finite = snapshot(*b);
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;
  const auto zd = cfg.net.z_dim;
  for (std::int64_t step = 0; step < cfg.steps; ++step) {
    std::vector<int64_t> is(static_cast<std::size_t>(cfg.batch_size)), it(is.size());
    for (auto& i : is) i = static_cast<int64_t>(rng.index(static_cast<std::uint64_t>(ts.size(0))));
    for (auto& i : it) i = static_cast<int64_t>(rng.index(static_cast<std::uint64_t>(tt.size(0))));
    const auto xs = ts.index_select(0, torch::tensor(is, torch::kLong));
    const auto xt = tt.index_select(0, torch::tensor(it, torch::kLong));
    const auto zs = rng.next();

    opt_g.zero_grad();
    const auto g = generator_terms(b, xs, xt, sample_noise(cfg.batch_size, zd, zs),
                                   sample_noise(cfg.batch_size, zd, zs + 1), sample_noise(cfg.batch_size, zd, zs + 2),
                                   cfg);
    g.total.backward();
    opt_g.step();

    opt_d.zero_grad();
    const auto d = discriminator_loss(b, xs, xt, g, cfg);
    d.backward();
    opt_d.step();

    TranslationStepLog log{step,
                           g.total.item<double>(),
                           d.item<double>(),
                           g.adv.item<double>(),
                           g.acl.item<double>(),
                           g.idt.item<double>(),
                           g.mask.item<double>()};
    res.steps.push_back(log);
    res.steps_run = step + 1;
    if (!std::isfinite(log.gen_total) || !std::isfinite(log.disc_total) || !all_finite(*b)) {
      restore(*b, last_finite);
      res.diverged = true;
      break;
    }
    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      const double v = validation_loss(b, vs, vt, cfg);
      res.validation.push_back({step + 1, v});
      last_finite = snapshot(*b);
      if (v < best - 1e-12) {
        best = v;
        since_best = 0;
      } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
        res.early_stopped = true;
        break;
      }
    }
  }
  res.final_val_loss = validation_loss(b, vs, vt, cfg);
  return res;
}

std::vector<Slice2> translate_slices(models::Generator& g, const std::vector<Slice2>& slices, std::uint64_t seed) {
  torch::NoGradGuard ng;
  std::vector<Slice2> out;
  out.reserve(slices.size());
  for (std::size_t i = 0; i < slices.size(); ++i) {
    const auto x = slices_to_tensor({slices[i]});
    const auto o = g->forward(x, sample_noise(1, g->z_dim(), derive_seed(seed, i)));
    const auto y = composite(x, o).contiguous();
    Slice2 s{slices[i].rows, slices[i].cols, {}};
    s.pixels.assign(y.data_ptr<float>(), y.data_ptr<float>() + y.numel());
    out.push_back(std::move(s));
  }
  return out;
}

data::VolumeRecord convert_volume(models::Generator& g, const data::VolumeRecord& v, std::uint64_t seed) {
  const auto header = data::header_of(v);
  auto out = data::slices_to_volume(translate_slices(g, data::volume_to_slices(v), seed), header);
  out.meta.domain = data::Domain::kTarget1p5T;
  return out;
}

}  // namespace evident::translation
