#include "evident/coteaching.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "evident/error.hpp"
#include "evident/rng.hpp"

namespace evident::coteaching {

Inference parse_inference(std::string_view s) {
  if (s == "net_a") return Inference::kNetA;
  if (s == "average") return Inference::kAverage;
  throw ConfigError("unknown co-teaching inference mode '" + std::string(s) + "'");
}

std::string_view to_string(Inference i) { return i == Inference::kNetA ? "net_a" : "average"; }

void CoTeachingConfig::validate() const {
  if (!(forget_rate >= 0.0 && forget_rate < 1.0)) throw ConfigError("forget_rate must lie in [0, 1)");
  if (ramp_epochs <= 0) throw ConfigError("ramp_epochs must be positive");
  if (epochs <= 0 || batch_size <= 0) throw ConfigError("epochs and batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  evidential::FocusingParameter{focal_gamma}.validate();
  evidential::ClassWeights check(class_weights);
  (void)check;
}

double remember_rate(const CoTeachingConfig& cfg, int epoch) {
  const double t = std::min(static_cast<double>(epoch) / cfg.ramp_epochs, 1.0);
  return 1.0 - cfg.forget_rate * t;
}

std::vector<std::size_t> select_small_loss(std::span<const double> peer_losses, double remember) {
  if (peer_losses.empty()) throw DomainError("empty batch");
  if (!(remember > 0.0 && remember <= 1.0)) throw DomainError("remember rate must lie in (0, 1]");
  const auto b = peer_losses.size();
  const auto keep = std::min<std::size_t>(
      b, static_cast<std::size_t>(std::ceil(remember * static_cast<double>(b) - 1e-9)));
  std::vector<std::size_t> idx(b);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t i, std::size_t j) { return peer_losses[i] < peer_losses[j]; });
  idx.resize(std::max<std::size_t>(keep, 1));
  std::sort(idx.begin(), idx.end());
  return idx;
}

bool same_parameters(const models::Classifier& a, const models::Classifier& b) {
  const auto pa = a->parameters();
  const auto pb = b->parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!pa[i].sizes().equals(pb[i].sizes()) || !torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

namespace {

std::vector<double> to_vector(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kDouble).contiguous();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::vector<std::int64_t> complement(const std::vector<std::size_t>& kept, std::size_t b, const training::PatchSet& d,
                                     const std::vector<int64_t>& rows) {
  std::vector<std::int64_t> out;
  std::size_t k = 0;
  for (std::size_t i = 0; i < b; ++i) {
    if (k < kept.size() && kept[k] == i) {
      ++k;
      continue;
    }
    out.push_back(d.patch_ids[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

}  // namespace

EpochStats coteach_epoch(Peers& nets, torch::optim::Optimizer& opt_a, torch::optim::Optimizer& opt_b,
                         const training::PatchSet& data, const CoTeachingConfig& cfg, int epoch,
                         std::vector<training::StepLog>* steps) {
  EpochStats st;
  st.epoch = epoch;
  st.remember = remember_rate(cfg, epoch);
  const evidential::ClassWeights beta(cfg.class_weights);
  const auto n = data.size();
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  nets.a->train();
  nets.b->train();
  double la = 0.0, lb = 0.0;
  const auto step0 = steps != nullptr ? static_cast<std::int64_t>(steps->size()) : 0;
  std::int64_t step = step0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
    const auto end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
    const std::vector<int64_t> rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
    const auto idx = torch::tensor(rows, torch::kLong);
    const auto xb = data.x.index_select(0, idx);
    const auto yb = data.y.index_select(0, idx);

    const auto loss_a = training::focal_loss_per_sample(nets.a->raw(xb), yb, beta, cfg.focal_gamma);
    const auto loss_b = training::focal_loss_per_sample(nets.b->raw(xb), yb, beta, cfg.focal_gamma);
    const auto va = to_vector(loss_a);
    const auto vb = to_vector(loss_b);
    // Each network learns from the samples its peer finds easy.
    const auto keep_for_b = select_small_loss(va, st.remember);
    const auto keep_for_a = select_small_loss(vb, st.remember);
    const auto b = rows.size();
    auto ia = torch::tensor(std::vector<int64_t>(keep_for_a.begin(), keep_for_a.end()), torch::kLong);
    auto ib = torch::tensor(std::vector<int64_t>(keep_for_b.begin(), keep_for_b.end()), torch::kLong);
    const auto upd_a = loss_a.index_select(0, ia).mean();
    const auto upd_b = loss_b.index_select(0, ib).mean();
    if (!std::isfinite(upd_a.item<double>()) || !std::isfinite(upd_b.item<double>())) {
      throw NumericError("non-finite co-teaching loss at epoch " + std::to_string(epoch));
    }
    opt_a.zero_grad();
    opt_b.zero_grad();
    (upd_a + upd_b).backward();
    opt_a.step();
    opt_b.step();

    auto da = complement(keep_for_a, b, data, rows);
    auto db = complement(keep_for_b, b, data, rows);
    st.discarded_by_a.insert(st.discarded_by_a.end(), da.begin(), da.end());
    st.discarded_by_b.insert(st.discarded_by_b.end(), db.begin(), db.end());
    st.seen += b;
    la += upd_a.item<double>() * static_cast<double>(b);
    lb += upd_b.item<double>() * static_cast<double>(b);
    if (steps != nullptr) {
      double lr = 0.0;
      for (auto& g : opt_a.param_groups()) lr = static_cast<torch::optim::AdamOptions&>(g.options()).lr();
      steps->push_back({step, epoch, upd_a.item<double>(), upd_a.item<double>(), 0.0, 0.0, lr});
    }
    ++step;
  }
  st.loss_a = la / static_cast<double>(n);
  st.loss_b = lb / static_cast<double>(n);
  std::sort(st.discarded_by_a.begin(), st.discarded_by_a.end());
  std::sort(st.discarded_by_b.begin(), st.discarded_by_b.end());
  return st;
}

CoTeachResult train_coteaching(const models::ClassifierSpec& spec, const CoTeachingConfig& cfg,
                               const training::PatchSet& data) {
  cfg.validate();
  if (data.size() == 0) throw DomainError("empty training set");
  if (spec.head != models::Head::kSoftmax) throw ContractError("co-teaching ranks focal losses of softmax heads");
  CoTeachResult res;
  torch::manual_seed(derive_seed(cfg.seed, 1));
  res.nets.a = models::build_classifier(spec);
  torch::manual_seed(derive_seed(cfg.seed, 2));
  res.nets.b = models::build_classifier(spec);
  if (same_parameters(res.nets.a, res.nets.b)) {
    res.warnings.push_back("co-teaching peers start from identical parameters");
  }
  const auto opts = torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay);
  torch::optim::Adam opt_a(res.nets.a->parameters(), opts);
  torch::optim::Adam opt_b(res.nets.b->parameters(), opts);
  for (int e = 0; e < cfg.epochs; ++e) {
    res.epochs.push_back(coteach_epoch(res.nets, opt_a, opt_b, data, cfg, e, &res.steps));
  }
  res.nets.a->eval();
  res.nets.b->eval();
  return res;
}

std::vector<double> positive_probs(Peers& nets, const training::PatchSet& set, Inference mode) {
  auto pa = training::positive_probs(nets.a, set);
  if (mode == Inference::kNetA) return pa;
  const auto pb = training::positive_probs(nets.b, set);
  for (std::size_t i = 0; i < pa.size(); ++i) pa[i] = 0.5 * (pa[i] + pb[i]);
  return pa;
}

}  // namespace evident::coteaching
