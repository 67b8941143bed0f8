#include "evident/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "evident/error.hpp"
#include "evident/io.hpp"
#include "evident/rng.hpp"

namespace evident::training {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::variable_list;

struct EvidentialFunction : public torch::autograd::Function<EvidentialFunction> {
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& evidence, const torch::Tensor& labels,
                               const evidential::ClassWeights* beta, evidential::AnnealingSchedule schedule,
                               int64_t target, evidential::EvidentialLossTerms* terms) {
    const auto e = evidence.detach().to(torch::kDouble).contiguous();
    const auto b = e.size(0);
    const auto k = e.size(1);
    const auto lab64 = labels.to(torch::kLong).contiguous();
    std::vector<int> lab(static_cast<std::size_t>(b));
    const auto* lp = lab64.data_ptr<int64_t>();
    for (int64_t i = 0; i < b; ++i) lab[static_cast<std::size_t>(i)] = static_cast<int>(lp[i]);
    auto grad = torch::zeros_like(e);
    const std::span<const double> ev(e.data_ptr<double>(), static_cast<std::size_t>(e.numel()));
    const std::span<double> g(grad.data_ptr<double>(), static_cast<std::size_t>(grad.numel()));
    const auto t = evidential::total_evidential_loss(ev, static_cast<std::size_t>(k), lab, *beta, schedule,
                                                     static_cast<evidential::KlTarget>(target), g);
    if (terms != nullptr) *terms = t;
    ctx->save_for_backward({(grad / static_cast<double>(b)).to(evidence.scalar_type())});
    return torch::tensor(t.total / static_cast<double>(b), evidence.options());
  }

  static variable_list backward(AutogradContext* ctx, variable_list grad_out) {
    const auto saved = ctx->get_saved_variables();
    return {saved[0] * grad_out[0], torch::Tensor(), torch::Tensor(), torch::Tensor(), torch::Tensor(),
            torch::Tensor()};
  }
};

}  // namespace

torch::Tensor evidential_loss(const torch::Tensor& evidence, const torch::Tensor& labels,
                              const evidential::ClassWeights& beta, const evidential::AnnealingSchedule& schedule,
                              evidential::KlTarget target, evidential::EvidentialLossTerms* terms) {
  if (evidence.dim() != 2 || evidence.size(0) == 0) throw DomainError("evidence must be a non-empty (B, K) batch");
  if (labels.dim() != 1 || labels.size(0) != evidence.size(0)) throw DomainError("one label per evidence row");
  if (static_cast<std::size_t>(evidence.size(1)) != beta.size()) throw DomainError("class weight count mismatch");
  return EvidentialFunction::apply(evidence, labels, &beta, schedule, static_cast<int64_t>(target), terms);
}

torch::Tensor focal_loss_per_sample(const torch::Tensor& logits, const torch::Tensor& labels,
                                    const evidential::ClassWeights& beta, double gamma) {
  if (logits.dim() != 2 || logits.size(0) == 0) throw DomainError("logits must be a non-empty (B, K) batch");
  if (static_cast<std::size_t>(logits.size(1)) != beta.size()) throw DomainError("class weight count mismatch");
  const auto idx = labels.to(torch::kLong).unsqueeze(1);
  const auto logp = torch::log_softmax(logits, 1).gather(1, idx).squeeze(1);
  const auto w = torch::tensor(std::vector<double>(beta.values().begin(), beta.values().end()), logits.options())
                     .index_select(0, idx.squeeze(1));
  return -w * torch::pow(1.0 - logp.exp(), gamma) * logp;
}

// ---------------------------------------------------------------------------

PatchSet PatchSet::subset(const std::vector<std::size_t>& rows) const {
  PatchSet out;
  std::vector<int64_t> idx(rows.begin(), rows.end());
  const auto it = torch::tensor(idx, torch::kLong);
  out.x = x.index_select(0, it);
  out.y = y.index_select(0, it);
  for (auto r : rows) {
    out.patch_ids.push_back(patch_ids[r]);
    out.patient_ids.push_back(patient_ids[r]);
  }
  return out;
}

PatchSet PatchSet::with_patches(const std::vector<std::int64_t>& ids) const {
  const std::set<std::int64_t> keep(ids.begin(), ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep.count(patch_ids[i])) rows.push_back(i);
  }
  return subset(rows);
}

PatchSet PatchSet::with_patients(const std::vector<std::string>& ids) const {
  const std::set<std::string> keep(ids.begin(), ids.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep.count(patient_ids[i])) rows.push_back(i);
  }
  return subset(rows);
}

PatchSet to_patch_set(const std::vector<data::PatchRecord>& patches, std::int64_t first_id) {
  if (patches.empty()) throw DomainError("empty patch list");
  const auto& g0 = patches.front().pixels;
  const auto c = static_cast<int64_t>(g0.depth());
  const auto h = static_cast<int64_t>(g0.rows());
  const auto w = static_cast<int64_t>(g0.cols());
  PatchSet s;
  s.x = torch::empty({static_cast<int64_t>(patches.size()), c, h, w}, torch::kFloat);
  s.y = torch::empty({static_cast<int64_t>(patches.size())}, torch::kLong);
  auto* dst = s.x.data_ptr<float>();
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto& p = patches[i];
    if (!p.pixels.same_shape(g0)) throw DomainError("patches differ in shape");
    std::copy(p.pixels.data().begin(), p.pixels.data().end(), dst + i * p.pixels.size());
    s.y[static_cast<int64_t>(i)] = p.label;
    s.patch_ids.push_back(first_id + static_cast<std::int64_t>(i));
    s.patient_ids.push_back(p.patient_id);
  }
  return s;
}

// ---------------------------------------------------------------------------

void ClassifierTrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0)) throw ConfigError("lr_decay_factor must lie in (0, 1]");
  if (lr_decay_period < 0) throw ConfigError("lr_decay_period must be non-negative");
  if (kl_ramp_epochs <= 0) throw ConfigError("kl_ramp_epochs must be positive");
  evidential::FocusingParameter{focal_gamma}.validate();
  for (double b : class_weights) {
    if (!(b > 0.0) || !std::isfinite(b)) throw ConfigError("class_weights must be positive");
  }
  if (class_weights.empty()) throw ConfigError("class_weights are empty");
}

double decayed_lr(const ClassifierTrainConfig& cfg, int epoch) {
  if (cfg.lr_decay_period <= 0) return cfg.learning_rate;
  return cfg.learning_rate * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_period);
}

TrainResult train_classifier(const models::ClassifierSpec& spec, const ClassifierTrainConfig& cfg,
                             const PatchSet& train, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw DomainError("empty training set");
  if (static_cast<std::int64_t>(cfg.class_weights.size()) != spec.num_classes) {
    throw ConfigError("class_weights need one entry per class");
  }
  torch::manual_seed(cfg.seed);
  TrainResult res;
  res.model = models::build_classifier(spec);
  auto& model = res.model;
  torch::optim::Adam opt(model->parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate).weight_decay(cfg.weight_decay));
  const evidential::ClassWeights beta(cfg.class_weights);
  const bool evidential_head = spec.head == models::Head::kEvidence;
  const auto n = train.size();
  std::vector<int64_t> order(n);

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = decayed_lr(cfg, epoch);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    model->train();
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    const evidential::AnnealingSchedule sched{epoch, cfg.kl_ramp_epochs};

    double loss_sum = 0.0, kl_part = 0.0, total_part = 0.0;
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      const auto idx = torch::tensor(std::vector<int64_t>(order.begin() + static_cast<long>(start),
                                                          order.begin() + static_cast<long>(end)),
                                     torch::kLong);
      const auto xb = train.x.index_select(0, idx);
      const auto yb = train.y.index_select(0, idx);
      opt.zero_grad();
      StepLog log{step, epoch, 0, 0, 0, 0, lr};
      torch::Tensor loss, scores;
      if (evidential_head) {
        evidential::EvidentialLossTerms terms;
        scores = model->evidence(xb);
        loss = evidential_loss(scores, yb, beta, sched, cfg.kl_target, &terms);
        const double b = static_cast<double>(end - start);
        log.classification = terms.classification / b;
        log.kl = terms.kl / b;
        log.kl_weight = terms.kl_weight;
        kl_part += terms.kl_weight * terms.kl;
        total_part += terms.total;
      } else {
        scores = model->raw(xb);
        loss = focal_loss_per_sample(scores, yb, beta, cfg.focal_gamma).mean();
        log.classification = loss.item<double>();
      }
      log.loss = loss.item<double>();
      if (!std::isfinite(log.loss)) {
        throw NumericError("non-finite classifier loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step));
      }
      loss.backward();
      opt.step();
      correct += scores.argmax(1).eq(yb).sum().item<int64_t>();
      loss_sum += log.loss * static_cast<double>(end - start);
      res.steps.push_back(log);
      ++step;
    }
    EpochLog e{epoch, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n),
               total_part > 0.0 ? kl_part / total_part : 0.0, lr};
    res.epochs.push_back(e);
    if (on_epoch) on_epoch(e);
  }
  model->eval();
  return res;
}

torch::Tensor predict(models::Classifier& model, const PatchSet& set, std::int64_t batch_size) {
  torch::NoGradGuard ng;
  model->eval();
  std::vector<torch::Tensor> parts;
  const auto n = static_cast<int64_t>(set.size());
  for (int64_t s = 0; s < n; s += batch_size) {
    parts.push_back(model->forward(set.x.narrow(0, s, std::min(batch_size, n - s))));
  }
  return torch::cat(parts, 0);
}

std::vector<double> positive_probs(models::Classifier& model, const PatchSet& set) {
  const auto out = predict(model, set).to(torch::kDouble);
  std::vector<double> p(set.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto row = out[static_cast<int64_t>(i)];
    if (model->spec().head == models::Head::kSoftmax) {
      p[i] = row[1].item<double>();
    } else {
      const double a0 = row[0].item<double>() + 1.0;
      const double a1 = row[1].item<double>() + 1.0;
      p[i] = a1 / (a0 + a1);
    }
  }
  return p;
}

filtering::UncertaintyTable uncertainty_table(models::Classifier& model, const PatchSet& set) {
  if (model->spec().head != models::Head::kEvidence) {
    throw ContractError("uncertainty requires an evidence-head classifier");
  }
  const auto ev = predict(model, set).to(torch::kDouble).contiguous();
  const std::span<const double> e(ev.data_ptr<double>(), static_cast<std::size_t>(ev.numel()));
  std::vector<int> labels(set.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(set.y[static_cast<int64_t>(i)].item<int64_t>());
  return filtering::compute_uncertainties(e, static_cast<std::size_t>(ev.size(1)), set.patch_ids, set.patient_ids,
                                          labels);
}

filtering::UncertaintyTable prediction_table(models::Classifier& model, const PatchSet& set) {
  if (model->spec().head == models::Head::kEvidence) return uncertainty_table(model, set);
  const auto p = positive_probs(model, set);
  std::vector<filtering::UncertaintyRow> rows;
  for (std::size_t i = 0; i < set.size(); ++i) {
    rows.push_back({set.patch_ids[i], set.patient_ids[i], 1.0, p[i],
                    static_cast<int>(set.y[static_cast<int64_t>(i)].item<int64_t>())});
  }
  return filtering::UncertaintyTable(std::move(rows));
}

double accuracy(models::Classifier& model, const PatchSet& set) {
  const auto p = positive_probs(model, set);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const int pred = p[i] > 0.5 ? 1 : 0;
    if (pred == set.y[static_cast<int64_t>(i)].item<int64_t>()) ++ok;
  }
  return p.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(p.size());
}

std::string steps_csv(const std::vector<StepLog>& steps) {
  std::ostringstream out;
  out << "step,epoch,loss,classification,kl,kl_weight,lr\n";
  for (const auto& s : steps) {
    out << s.step << ',' << s.epoch << ',' << io::format_double(s.loss) << ',' << io::format_double(s.classification)
        << ',' << io::format_double(s.kl) << ',' << io::format_double(s.kl_weight) << ','
        << io::format_double(s.learning_rate) << '\n';
  }
  return out.str();
}

}  // namespace evident::training
