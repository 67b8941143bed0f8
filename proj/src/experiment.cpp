#include "evident/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "evident/checkpoint.hpp"
#include "evident/error.hpp"
#include "evident/filtering.hpp"
#include "evident/io.hpp"
#include "evident/rng.hpp"

namespace evident::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
  }
}

template <typename T>
T get(const json& j, const char* key, const T& def, const std::string& where) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

json section(const json& j, const char* key) { return j.contains(key) ? j.at(key) : json::object(); }

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* d = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = d[v & 0xf];
  return s;
}

std::string_view to_string(SourceData s) {
  switch (s) {
    case SourceData::kNone: return "none";
    case SourceData::kRaw: return "raw";
    case SourceData::kTranslated: return "translated";
  }
  return "?";
}

SourceData parse_source(const std::string& s) {
  if (s == "none") return SourceData::kNone;
  if (s == "raw") return SourceData::kRaw;
  if (s == "translated") return SourceData::kTranslated;
  throw ConfigError("classifier.source_data must be none, raw or translated");
}

evidential::KlTarget parse_kl_target(const std::string& s) {
  if (s == "adjusted") return evidential::KlTarget::kAdjustedAlpha;
  if (s == "full") return evidential::KlTarget::kFullAlpha;
  throw ConfigError("classifier.kl_target must be adjusted or full");
}

json mask_json(const translation::MaskConfig& m) { return {{"delta_min", m.delta_min}, {"delta_max", m.delta_max}}; }

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"schema_version", "seed", "paths", "synth", "translation", "classifier", "coteaching", "filtering",
                 "evaluation"},
             "");
  if (!j.contains("schema_version")) throw ConfigError("config has no schema_version");
  const int version = get<int>(j, "schema_version", 0, "");
  if (version != kConfigSchemaVersion) {
    throw ConfigError("unsupported config schema_version " + std::to_string(version));
  }
  ExperimentConfig c;
  c.seed = get<std::uint64_t>(j, "seed", c.seed, "");

  const auto p = section(j, "paths");
  check_keys(p, {"data", "translated", "runs"}, "paths");
  c.paths.data = get(p, "data", c.paths.data, "paths");
  c.paths.translated = get(p, "translated", c.paths.translated, "paths");
  c.paths.runs = get(p, "runs", c.paths.runs, "paths");

  const auto s = section(j, "synth");
  check_keys(s, {"patients", "rows", "cols", "depth", "domain_shift", "lesion_margin", "noise"}, "synth");
  c.synth.patients = get(s, "patients", c.synth.patients, "synth");
  auto& so = c.synth.options;
  so.rows = get(s, "rows", so.rows, "synth");
  so.cols = get(s, "cols", so.cols, "synth");
  so.depth = get(s, "depth", so.depth, "synth");
  so.domain_shift = get(s, "domain_shift", so.domain_shift, "synth");
  so.lesion_margin = get(s, "lesion_margin", so.lesion_margin, "synth");
  so.noise = get(s, "noise", so.noise, "synth");

  const auto t = section(j, "translation");
  check_keys(t, {"modalities", "translation_steps", "batch_size", "learning_rate", "weight_decay", "gan_form",
                 "lambda_acl", "lambda_idt", "lambda_mask", "delta", "epsilon", "masks", "image_size", "gen_base",
                 "disc_base", "z_dim", "res_blocks", "eval_every", "patience", "quality_embedding_dim"},
             "translation");
  auto& tr = c.translation.train;
  if (t.contains("modalities")) {
    c.translation.modalities.clear();
    for (const auto& m : get<std::vector<std::string>>(t, "modalities", {}, "translation")) {
      try {
        c.translation.modalities.push_back(data::parse_modality(m));
      } catch (const DomainError& e) {
        throw ConfigError(e.what());
      }
    }
  }
  tr.steps = get(t, "translation_steps", tr.steps, "translation");
  tr.batch_size = get(t, "batch_size", tr.batch_size, "translation");
  tr.learning_rate = get(t, "learning_rate", tr.learning_rate, "translation");
  tr.weight_decay = get(t, "weight_decay", tr.weight_decay, "translation");
  tr.form = translation::parse_gan_form(get<std::string>(t, "gan_form", "ls", "translation"));
  tr.weights.lambda_acl = get(t, "lambda_acl", tr.weights.lambda_acl, "translation");
  tr.weights.lambda_idt = get(t, "lambda_idt", tr.weights.lambda_idt, "translation");
  tr.weights.lambda_mask = get(t, "lambda_mask", tr.weights.lambda_mask, "translation");
  const double delta = get(t, "delta", 1.0, "translation");
  const double eps = get(t, "epsilon", 1e-6, "translation");
  const auto masks = section(t, "masks");
  check_keys(masks, {"t2", "adc"}, "translation.masks");
  for (auto [name, m] : {std::pair<const char*, translation::MaskConfig*>{"t2", &c.translation.t2_mask},
                         {"adc", &c.translation.adc_mask}}) {
    const auto mj = section(masks, name);
    check_keys(mj, {"delta_min", "delta_max"}, std::string("translation.masks.") + name);
    m->delta = delta;
    m->epsilon = eps;
    m->delta_min = get(mj, "delta_min", m->delta_min, name);
    m->delta_max = get(mj, "delta_max", m->delta_max, name);
  }
  tr.mask = c.translation.t2_mask;
  tr.net.image_size = get(t, "image_size", tr.net.image_size, "translation");
  tr.net.gen_base = get(t, "gen_base", tr.net.gen_base, "translation");
  tr.net.disc_base = get(t, "disc_base", tr.net.disc_base, "translation");
  tr.net.z_dim = get(t, "z_dim", tr.net.z_dim, "translation");
  tr.net.res_blocks = get(t, "res_blocks", tr.net.res_blocks, "translation");
  tr.eval_every = get(t, "eval_every", tr.eval_every, "translation");
  tr.patience = get(t, "patience", tr.patience, "translation");
  c.translation.quality_embedding_dim =
      get(t, "quality_embedding_dim", c.translation.quality_embedding_dim, "translation");

  const auto k = section(j, "classifier");
  check_keys(k, {"variant", "head", "evidence_activation", "widths", "epochs", "batch_size", "learning_rate",
                 "weight_decay", "lr_decay_factor", "lr_decay_period", "class_weights", "kl_target", "kl_ramp_epochs",
                 "focal_gamma", "source_data"},
             "classifier");
  try {
    const auto variant = data::parse_variant(get<std::string>(k, "variant", "mpmri", "classifier"));
    const auto head = models::parse_head(get<std::string>(
        k, "head", variant == data::ClassifierVariant::kMpMriCoTeaching ? "softmax_prob" : "evidence", "classifier"));
    c.classifier.spec = models::ClassifierSpec::for_variant(variant, head);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  c.classifier.spec.activation =
      models::parse_activation(get<std::string>(k, "evidence_activation", "softplus", "classifier"));
  c.classifier.spec.widths = get(k, "widths", c.classifier.spec.widths, "classifier");
  auto& ct = c.classifier.train;
  ct.epochs = get(k, "epochs", ct.epochs, "classifier");
  ct.batch_size = get(k, "batch_size", ct.batch_size, "classifier");
  ct.learning_rate = get(k, "learning_rate", ct.learning_rate, "classifier");
  ct.weight_decay = get(k, "weight_decay", ct.weight_decay, "classifier");
  ct.lr_decay_factor = get(k, "lr_decay_factor", ct.lr_decay_factor, "classifier");
  ct.lr_decay_period = get(k, "lr_decay_period", ct.lr_decay_period, "classifier");
  ct.class_weights = get(k, "class_weights", ct.class_weights, "classifier");
  ct.kl_target = parse_kl_target(get<std::string>(k, "kl_target", "adjusted", "classifier"));
  ct.kl_ramp_epochs = get(k, "kl_ramp_epochs", ct.kl_ramp_epochs, "classifier");
  ct.focal_gamma = get(k, "focal_gamma", ct.focal_gamma, "classifier");
  c.classifier.source_data = parse_source(get<std::string>(k, "source_data", "translated", "classifier"));

  const auto co = section(j, "coteaching");
  check_keys(co, {"forget_rate", "noise_rate", "ramp_epochs", "epochs", "batch_size", "learning_rate", "weight_decay",
                  "inference"},
             "coteaching");
  auto& cc = c.coteaching;
  cc.forget_rate = get(co, "forget_rate", cc.forget_rate, "coteaching");
  cc.noise_rate = get(co, "noise_rate", cc.noise_rate, "coteaching");
  cc.ramp_epochs = get(co, "ramp_epochs", cc.ramp_epochs, "coteaching");
  cc.epochs = get(co, "epochs", cc.epochs, "coteaching");
  cc.batch_size = get(co, "batch_size", cc.batch_size, "coteaching");
  cc.learning_rate = get(co, "learning_rate", cc.learning_rate, "coteaching");
  cc.weight_decay = get(co, "weight_decay", cc.weight_decay, "coteaching");
  cc.inference = coteaching::parse_inference(get<std::string>(co, "inference", "net_a", "coteaching"));

  const auto f = section(j, "filtering");
  check_keys(f, {"policy", "rate"}, "filtering");
  c.filtering.policy = get(f, "policy", c.filtering.policy, "filtering");
  c.filtering.rate = get(f, "rate", c.filtering.rate, "filtering");

  const auto e = section(j, "evaluation");
  check_keys(e, {"checkpoint", "ladder", "bootstrap", "ece_bins"}, "evaluation");
  c.evaluation.checkpoint = get(e, "checkpoint", c.evaluation.checkpoint, "evaluation");
  c.evaluation.ladder = get(e, "ladder", c.evaluation.ladder, "evaluation");
  c.evaluation.bootstrap = get(e, "bootstrap", c.evaluation.bootstrap, "evaluation");
  c.evaluation.ece_bins = get(e, "ece_bins", c.evaluation.ece_bins, "evaluation");

  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  std::vector<std::string> mods;
  for (auto m : translation.modalities) mods.emplace_back(data::to_string(m));
  const auto& tr = translation.train;
  const auto& ct = classifier.train;
  return {
      {"schema_version", kConfigSchemaVersion},
      {"seed", seed},
      {"paths", {{"data", paths.data}, {"translated", paths.translated}, {"runs", paths.runs}}},
      {"synth",
       {{"patients", synth.patients},
        {"rows", synth.options.rows},
        {"cols", synth.options.cols},
        {"depth", synth.options.depth},
        {"domain_shift", synth.options.domain_shift},
        {"lesion_margin", synth.options.lesion_margin},
        {"noise", synth.options.noise}}},
      {"translation",
       {{"modalities", mods},
        {"translation_steps", tr.steps},
        {"batch_size", tr.batch_size},
        {"learning_rate", tr.learning_rate},
        {"weight_decay", tr.weight_decay},
        {"gan_form", translation::to_string(tr.form)},
        {"lambda_acl", tr.weights.lambda_acl},
        {"lambda_idt", tr.weights.lambda_idt},
        {"lambda_mask", tr.weights.lambda_mask},
        {"delta", translation.t2_mask.delta},
        {"epsilon", translation.t2_mask.epsilon},
        {"masks", {{"t2", mask_json(translation.t2_mask)}, {"adc", mask_json(translation.adc_mask)}}},
        {"image_size", tr.net.image_size},
        {"gen_base", tr.net.gen_base},
        {"disc_base", tr.net.disc_base},
        {"z_dim", tr.net.z_dim},
        {"res_blocks", tr.net.res_blocks},
        {"eval_every", tr.eval_every},
        {"patience", tr.patience},
        {"quality_embedding_dim", translation.quality_embedding_dim}}},
      {"classifier",
       {{"variant", data::to_string(classifier.spec.variant)},
        {"head", models::to_string(classifier.spec.head)},
        {"evidence_activation", models::to_string(classifier.spec.activation)},
        {"widths", classifier.spec.widths},
        {"epochs", ct.epochs},
        {"batch_size", ct.batch_size},
        {"learning_rate", ct.learning_rate},
        {"weight_decay", ct.weight_decay},
        {"lr_decay_factor", ct.lr_decay_factor},
        {"lr_decay_period", ct.lr_decay_period},
        {"class_weights", ct.class_weights},
        {"kl_target", ct.kl_target == evidential::KlTarget::kAdjustedAlpha ? "adjusted" : "full"},
        {"kl_ramp_epochs", ct.kl_ramp_epochs},
        {"focal_gamma", ct.focal_gamma},
        {"source_data", to_string(classifier.source_data)}}},
      {"coteaching",
       {{"forget_rate", coteaching.forget_rate},
        {"noise_rate", coteaching.noise_rate},
        {"ramp_epochs", coteaching.ramp_epochs},
        {"epochs", coteaching.epochs},
        {"batch_size", coteaching.batch_size},
        {"learning_rate", coteaching.learning_rate},
        {"weight_decay", coteaching.weight_decay},
        {"inference", coteaching::to_string(coteaching.inference)}}},
      {"filtering", {{"policy", filtering.policy}, {"rate", filtering.rate}}},
      {"evaluation",
       {{"checkpoint", evaluation.checkpoint},
        {"ladder", evaluation.ladder},
        {"bootstrap", evaluation.bootstrap},
        {"ece_bins", evaluation.ece_bins}}},
  };
}

void ExperimentConfig::validate() const {
  if (synth.patients < 4) throw ConfigError("synth.patients must be at least 4");
  auto tr = translation.train;
  for (const auto* m : {&translation.t2_mask, &translation.adc_mask}) {
    tr.mask = *m;
    tr.validate();
  }
  if (translation.quality_embedding_dim == 0) throw ConfigError("quality_embedding_dim must be positive");
  try {
    classifier.spec.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  classifier.train.validate();
  if (classifier.spec.variant == data::ClassifierVariant::kMpMriCoTeaching) {
    if (classifier.spec.head != models::Head::kSoftmax) {
      throw ConfigError("mpmri_coteaching trains softmax heads (head = softmax_prob)");
    }
    coteaching.validate();
  }
  if (filtering.policy != "patch" && filtering.policy != "patient") {
    throw ConfigError("filtering.policy must be patch or patient");
  }
  if (!(filtering.rate >= 0.0 && filtering.rate < 100.0)) throw ConfigError("filtering.rate must lie in [0, 100)");
  if (evaluation.ladder.empty()) throw ConfigError("evaluation.ladder must not be empty");
  for (std::size_t i = 0; i < evaluation.ladder.size(); ++i) {
    const double t = evaluation.ladder[i];
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("ladder thresholds must lie in (0, 1]");
    if (i > 0 && t > evaluation.ladder[i - 1]) throw ConfigError("ladder must be non-increasing");
  }
  if (evaluation.bootstrap < 0) throw ConfigError("evaluation.bootstrap must be non-negative");
  if (evaluation.ece_bins <= 0) throw ConfigError("evaluation.ece_bins must be positive");
}

std::uint64_t ExperimentConfig::stage_seed(const std::string& stage) const { return derive_seed(seed, fnv1a(stage)); }

std::string config_hash(const ExperimentConfig& cfg) { return hex64(fnv1a(cfg.to_json().dump())); }

std::string fingerprint_file(const fs::path& path) {
  const std::string bytes = io::read_text(path);
  const std::string head = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw IoError("cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, head.data(), head.size()) == 1 &&
                  EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw IoError("digest failed for " + path.string());
  static const char* d = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(d[md[i] >> 4]);
    out.push_back(d[md[i] & 0xf]);
  }
  return out;
}

fs::path resolve_root(const std::string& explicit_root) {
  if (!explicit_root.empty()) return fs::absolute(explicit_root);
  if (const char* env = std::getenv(kWorkdirEnv); env != nullptr && *env != '\0') return fs::absolute(env);
  return fs::current_path();
}

// ---------------------------------------------------------------------------
// Patch preparation and planted-noise fixtures

std::vector<data::PatchRecord> patient_patches(const data::SynthPatient& p, data::ClassifierVariant variant) {
  const auto t2 = data::augment_rotations(data::normalize_intensity(p.t2));
  const auto adc = data::augment_rotations(data::normalize_intensity(p.adc));
  std::vector<data::PatchRecord> out;
  out.reserve(t2.size());
  for (std::size_t r = 0; r < t2.size(); ++r) {
    out.push_back(data::stack_modalities(data::extract_patch(t2[r]), data::extract_patch(adc[r]), variant));
  }
  return out;
}

std::vector<bool> plant_cluster_noise(std::vector<data::PatchRecord>& patches, const PlantedNoise& opts,
                                      std::uint64_t seed) {
  if (opts.cluster_every == 0) throw DomainError("cluster_every must be positive");
  // Cluster membership by patient, in order of first appearance.
  std::map<std::string, std::size_t> order;
  for (const auto& p : patches) order.emplace(p.patient_id, order.size());
  std::vector<bool> flipped(patches.size(), false);
  Rng rng(seed);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    auto& p = patches[i];
    std::size_t rank = 0;
    for (const auto& [id, idx] : order) {
      if (id == p.patient_id) rank = idx;
    }
    if (rank % opts.cluster_every != 0) continue;
    auto& g = p.pixels;
    const auto m = std::min({opts.marker_size, g.rows(), g.cols()});
    for (std::size_t c = 0; c < g.depth(); ++c) {
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t q = 0; q < m; ++q) g.at(r, q, c) = opts.marker_value;
      }
    }
    if (rng.uniform() < opts.flip_fraction_in_cluster) {
      p.label = 1 - p.label;
      flipped[i] = true;
    }
  }
  return flipped;
}

std::vector<bool> plant_uniform_noise(std::vector<data::PatchRecord>& patches, double rate, std::uint64_t seed) {
  if (!(rate >= 0.0 && rate < 1.0)) throw DomainError("noise rate must lie in [0, 1)");
  std::vector<std::size_t> idx(patches.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);
  const auto n = static_cast<std::size_t>(std::llround(rate * static_cast<double>(patches.size())));
  std::vector<bool> flipped(patches.size(), false);
  for (std::size_t k = 0; k < n; ++k) {
    patches[idx[k]].label = 1 - patches[idx[k]].label;
    flipped[idx[k]] = true;
  }
  return flipped;
}

// ---------------------------------------------------------------------------
// Classifier runs

ClassifierRun run_classifier(const ExperimentConfig& cfg, const training::PatchSet& train, std::uint64_t seed) {
  ClassifierRun out;
  const auto& spec = cfg.classifier.spec;
  if (spec.variant == data::ClassifierVariant::kMpMriCoTeaching) {
    auto cc = cfg.coteaching;
    cc.seed = seed;
    cc.class_weights = cfg.classifier.train.class_weights;
    cc.focal_gamma = cfg.classifier.train.focal_gamma;
    auto res = coteaching::train_coteaching(spec, cc, train);
    out.model = res.nets.a;
    out.peers = res.nets;
    out.steps = std::move(res.steps);
    out.warnings = std::move(res.warnings);
    out.coteach = std::move(res.epochs);
    return out;
  }
  auto tc = cfg.classifier.train;
  tc.seed = seed;
  auto res = training::train_classifier(spec, tc, train);
  out.model = res.model;
  out.steps = std::move(res.steps);
  out.epochs = std::move(res.epochs);
  return out;
}

// ---------------------------------------------------------------------------
// Plots

namespace {

std::string svg_header(const std::string& title) {
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"360\" height=\"380\" viewBox=\"0 0 360 380\">\n"
    << "<rect width=\"360\" height=\"380\" fill=\"white\"/>\n"
    << "<text x=\"180\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">" << title
    << "</text>\n"
    << "<rect x=\"40\" y=\"30\" width=\"300\" height=\"300\" fill=\"none\" stroke=\"black\"/>\n"
    << "<line x1=\"40\" y1=\"330\" x2=\"340\" y2=\"30\" stroke=\"#999\" stroke-dasharray=\"4 4\"/>\n";
  return s.str();
}

std::string fmt(double v) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(2);
  s << v;
  return s.str();
}

double px(double v) { return 40.0 + 300.0 * v; }
double py(double v) { return 330.0 - 300.0 * v; }

}  // namespace

std::string reliability_svg(std::span<const int> y_true, std::span<const double> prob, int bins) {
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0), acc_sum(conf_sum.size(), 0.0);
  std::vector<std::size_t> count(conf_sum.size(), 0);
  for (std::size_t i = 0; i < prob.size(); ++i) {
    const int pred = prob[i] > 0.5 ? 1 : 0;
    const double c = std::max(prob[i], 1.0 - prob[i]);
    const auto b = std::min<std::size_t>(static_cast<std::size_t>(c * bins), conf_sum.size() - 1);
    conf_sum[b] += c;
    acc_sum[b] += pred == y_true[i] ? 1.0 : 0.0;
    ++count[b];
  }
  std::ostringstream s;
  s << svg_header("Reliability");
  const double w = 300.0 / bins;
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (count[b] == 0) continue;
    const double acc = acc_sum[b] / static_cast<double>(count[b]);
    s << "<rect x=\"" << fmt(40.0 + w * static_cast<double>(b)) << "\" y=\"" << fmt(py(acc)) << "\" width=\""
      << fmt(w - 2) << "\" height=\"" << fmt(300.0 * acc) << "\" fill=\"#4a7bb7\"/>\n";
    const double conf = conf_sum[b] / static_cast<double>(count[b]);
    s << "<circle cx=\"" << fmt(40.0 + w * (static_cast<double>(b) + 0.5)) << "\" cy=\"" << fmt(py(conf))
      << "\" r=\"3\" fill=\"#c0392b\"/>\n";
  }
  s << "<text x=\"190\" y=\"360\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">confidence"
    << "</text>\n</svg>\n";
  return s.str();
}

std::string roc_svg(std::span<const int> y_true, std::span<const double> score) {
  std::vector<std::size_t> idx(score.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  double pos = 0, neg = 0;
  for (int y : y_true) (y == 1 ? pos : neg) += 1;
  std::ostringstream s;
  s << svg_header("ROC");
  if (pos > 0 && neg > 0) {
    s << "<polyline fill=\"none\" stroke=\"#4a7bb7\" stroke-width=\"2\" points=\"" << fmt(px(0)) << ',' << fmt(py(0));
    double tp = 0, fp = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      (y_true[idx[k]] == 1 ? tp : fp) += 1;
      if (k + 1 < idx.size() && score[idx[k + 1]] == score[idx[k]]) continue;
      s << ' ' << fmt(px(fp / neg)) << ',' << fmt(py(tp / pos));
    }
    s << "\"/>\n";
  }
  s << "<text x=\"190\" y=\"360\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">"
    << "false positive rate</text>\n</svg>\n";
  return s.str();
}

// ---------------------------------------------------------------------------
// Experiment

namespace {

std::vector<data::VolumeRecord> modality_volumes(const std::vector<data::SynthPatient>& pts, data::Modality m) {
  std::vector<data::VolumeRecord> out;
  for (const auto& p : pts) out.push_back(data::normalize_intensity(m == data::Modality::kT2 ? p.t2 : p.adc));
  return out;
}

std::vector<Slice2> slices_of(const std::vector<data::VolumeRecord>& vols, const std::set<std::string>& ids,
                              data::Domain domain) {
  std::vector<Slice2> out;
  for (const auto& v : vols) {
    if (v.meta.domain != domain || !ids.count(v.meta.patient_id)) continue;
    for (auto& s : data::volume_to_slices(v)) out.push_back(std::move(s));
  }
  return out;
}

std::string translation_trace_csv(const std::vector<translation::TranslationStepLog>& steps) {
  std::ostringstream out;
  out << "step,gen_total,disc_total,adv,acl,idt,mask\n";
  for (const auto& s : steps) {
    out << s.step << ',' << io::format_double(s.gen_total) << ',' << io::format_double(s.disc_total) << ','
        << io::format_double(s.adv) << ',' << io::format_double(s.acl) << ',' << io::format_double(s.idt) << ','
        << io::format_double(s.mask) << '\n';
  }
  return out.str();
}

std::string epochs_csv(const std::vector<training::EpochLog>& epochs) {
  std::ostringstream out;
  out << "epoch,mean_loss,train_accuracy,kl_share,lr\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << io::format_double(e.mean_loss) << ',' << io::format_double(e.train_accuracy) << ','
        << io::format_double(e.kl_share) << ',' << io::format_double(e.learning_rate) << '\n';
  }
  return out.str();
}

std::string coteach_csv(const std::vector<coteaching::EpochStats>& epochs) {
  std::ostringstream out;
  out << "epoch,remember,seen,discarded_a,discarded_b,loss_a,loss_b\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << io::format_double(e.remember) << ',' << e.seen << ',' << e.discarded_by_a.size() << ','
        << e.discarded_by_b.size() << ',' << io::format_double(e.loss_a) << ',' << io::format_double(e.loss_b)
        << '\n';
  }
  return out.str();
}

void write_json(const fs::path& p, const json& j) { io::write_text(p, j.dump(2) + "\n"); }

void require_exists(const fs::path& p, const std::string& what) {
  if (!fs::exists(p)) throw IoError(what + " not found: " + p.string());
}

// Patients feeding the classifier, with the domain that decides test eligibility.
struct ClassificationData {
  std::vector<data::SynthPatient> patients;  // sorted by id
  std::vector<data::PatientEntry> entries;
};

ClassificationData classification_data(const ExperimentConfig& cfg, const fs::path& root) {
  const auto raw_dir = root / cfg.paths.data;
  require_exists(raw_dir / io::kCasesFile, "dataset");
  ClassificationData d;
  for (auto& p : io::read_dataset(raw_dir)) {
    const bool source = p.t2.meta.domain == data::Domain::kSource3T;
    if (!source || cfg.classifier.source_data == SourceData::kRaw) d.patients.push_back(std::move(p));
  }
  if (cfg.classifier.source_data == SourceData::kTranslated) {
    const auto tdir = root / cfg.paths.translated;
    require_exists(tdir / io::kCasesFile, "translated dataset (run convert first)");
    for (auto& p : io::read_dataset(tdir)) {
      // Test patients come from local data only; translated cases keep their origin.
      p.t2.meta.domain = data::Domain::kSource3T;
      p.adc.meta.domain = data::Domain::kSource3T;
      d.patients.push_back(std::move(p));
    }
  }
  std::sort(d.patients.begin(), d.patients.end(),
            [](const auto& a, const auto& b) { return a.t2.meta.patient_id < b.t2.meta.patient_id; });
  for (const auto& p : d.patients) d.entries.push_back({p.t2.meta.patient_id, p.t2.meta.domain});
  return d;
}

json split_json(const data::SplitManifest& m, const std::vector<std::string>& order) {
  return {{"seed", m.seed}, {"train", m.train}, {"val", m.val}, {"test", m.test}, {"patient_order", order}};
}

// Patch set for `ids`; patch id = position in `order` * 20 + rotation index.
training::PatchSet patches_for(const ClassificationData& d, const std::vector<std::string>& order,
                               const std::vector<std::string>& ids, data::ClassifierVariant variant) {
  const std::set<std::string> want(ids.begin(), ids.end());
  std::vector<data::PatchRecord> records;
  std::vector<std::int64_t> patch_ids;
  for (const auto& p : d.patients) {
    const auto& pid = p.t2.meta.patient_id;
    if (!want.count(pid)) continue;
    const auto pos = std::find(order.begin(), order.end(), pid) - order.begin();
    auto patches = patient_patches(p, variant);
    for (std::size_t r = 0; r < patches.size(); ++r) {
      patch_ids.push_back(static_cast<std::int64_t>(pos) * static_cast<std::int64_t>(data::kRotationCount) +
                          static_cast<std::int64_t>(r));
      records.push_back(std::move(patches[r]));
    }
  }
  if (records.empty()) throw DomainError("no patches for the requested patients");
  auto set = training::to_patch_set(records);
  set.patch_ids = std::move(patch_ids);
  return set;
}

void audit_no_test(const std::vector<std::string>& test, const std::vector<std::string>& used, const std::string& stage) {
  const std::set<std::string> t(test.begin(), test.end());
  for (const auto& id : used) {
    if (t.count(id)) throw ContractError("leakage: test patient " + id + " reached " + stage);
  }
}

std::vector<std::string> unique_ids(const std::vector<std::string>& ids) {
  std::set<std::string> s(ids.begin(), ids.end());
  return {s.begin(), s.end()};
}

fs::path evaluation_dir(const ExperimentConfig& cfg, const fs::path& root) {
  return root / cfg.paths.runs / "evaluation" / fs::path(cfg.evaluation.checkpoint).parent_path().filename();
}

}  // namespace

Experiment::Experiment(ExperimentConfig cfg, fs::path root, Logger log)
    : cfg_(std::move(cfg)), root_(std::move(root)), log_(std::move(log)) {
  cfg_.validate();
  torch::set_num_threads(1);
}

void Experiment::log(const std::string& msg) const {
  if (log_) log_(msg);
}

void Experiment::write_manifest(const fs::path& dir, const std::string& command, const std::vector<fs::path>& inputs,
                                const std::vector<fs::path>& outputs, const json& extra,
                                const std::string& name) const {
  auto prints = [&](const std::vector<fs::path>& paths) {
    json out = json::object();
    for (const auto& p : paths) {
      if (fs::is_directory(p)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::recursive_directory_iterator(p)) {
          if (e.is_regular_file()) files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) out[fs::relative(f, root_).generic_string()] = fingerprint_file(f);
      } else if (fs::exists(p)) {
        out[fs::relative(p, root_).generic_string()] = fingerprint_file(p);
      }
    }
    return out;
  };
  json seeds = json::object();
  for (const char* s : {"synth", "translation_split", "translation_t2", "translation_adc", "convert",
                        "classification_split", "classifier", "bootstrap"}) {
    seeds[s] = cfg_.stage_seed(s);
  }
  json m{{"command", command},     {"config_hash", config_hash(cfg_)}, {"seed", cfg_.seed},
         {"seeds", seeds},         {"config", cfg_.to_json()},         {"inputs", prints(inputs)},
         {"outputs", prints(outputs)}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json(dir / name, m);
}

json Experiment::synth_data() {
  const auto dir = path(cfg_.paths.data);
  log("writing " + std::to_string(cfg_.synth.patients) + " synthetic patients to " + dir.string());
  const auto pts = data::synth_two_domain_dataset(cfg_.synth.patients, cfg_.stage_seed("synth"), cfg_.synth.options);
  fs::remove_all(dir);
  io::write_dataset(dir, pts);
  const auto run = runs_dir() / "synth";
  fs::create_directories(run);
  write_manifest(run, "synth-data", {}, {dir}, json::object());
  std::size_t source = 0;
  for (const auto& p : pts) source += p.t2.meta.domain == data::Domain::kSource3T ? 1 : 0;
  return {{"command", "synth-data"}, {"patients", pts.size()}, {"source", source},
          {"target", pts.size() - source}, {"dir", cfg_.paths.data}};
}

json Experiment::translate_train() {
  const auto data_dir = path(cfg_.paths.data);
  require_exists(data_dir / io::kCasesFile, "dataset");
  const auto pts = io::read_dataset(data_dir);
  std::vector<data::PatientEntry> entries;
  for (const auto& p : pts) entries.push_back({p.t2.meta.patient_id, p.t2.meta.domain});
  const auto split = data::make_splits(entries, data::SplitStage::kTranslation, cfg_.stage_seed("translation_split"));
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  const std::set<std::string> val_ids(split.val.begin(), split.val.end());

  json summary{{"command", "translate-train"}, {"modalities", json::object()}};
  bool diverged = false;
  for (auto m : cfg_.translation.modalities) {
    const std::string name(data::to_string(m));
    const std::string lname = name == "T2" ? "t2" : "adc";
    auto tc = cfg_.translation.train;
    tc.mask = m == data::Modality::kT2 ? cfg_.translation.t2_mask : cfg_.translation.adc_mask;
    tc.seed = cfg_.stage_seed("translation_" + lname);
    const auto vols = modality_volumes(pts, m);
    log("training " + name + " translation for " + std::to_string(tc.steps) + " steps");
    auto res = translation::train_translation(slices_of(vols, train_ids, data::Domain::kSource3T),
                                              slices_of(vols, train_ids, data::Domain::kTarget1p5T),
                                              slices_of(vols, val_ids, data::Domain::kSource3T),
                                              slices_of(vols, val_ids, data::Domain::kTarget1p5T), tc);
    const auto dir = runs_dir() / "translation" / lname;
    fs::create_directories(dir);
    const json ck{{"kind", "translation"}, {"modality", name}, {"net", tc.net.to_json()}, {"train", tc.to_json()}};
    checkpoint::save(dir / "bundle.ckpt", *res.bundle, ck);
    io::write_text(dir / "loss_trace.csv", translation_trace_csv(res.steps));
    std::ostringstream val;
    val << "step,val_loss\n";
    for (const auto& v : res.validation) val << v.step << ',' << io::format_double(v.loss) << '\n';
    io::write_text(dir / "validation.csv", val.str());
    const json info{{"steps_run", res.steps_run},
                    {"early_stopped", res.early_stopped},
                    {"diverged", res.diverged},
                    {"final_val_loss", res.final_val_loss}};
    write_json(dir / "summary.json", info);
    write_manifest(dir, "translate-train", {data_dir},
                   {dir / "bundle.ckpt", dir / "loss_trace.csv", dir / "validation.csv", dir / "summary.json"},
                   {{"split", {{"train", split.train}, {"val", split.val}}}});
    summary["modalities"][lname] = info;
    diverged = diverged || res.diverged;
  }
  if (diverged) throw NumericError("translation training diverged; last finite checkpoint kept");
  return summary;
}

json Experiment::convert() {
  const auto data_dir = path(cfg_.paths.data);
  require_exists(data_dir / io::kCasesFile, "dataset");
  const auto pts = io::read_dataset(data_dir);

  std::map<data::Modality, models::TranslationBundle> bundles;
  std::vector<fs::path> inputs{data_dir};
  for (auto m : cfg_.translation.modalities) {
    const auto ck = runs_dir() / "translation" / (m == data::Modality::kT2 ? "t2" : "adc") / "bundle.ckpt";
    require_exists(ck, "translation checkpoint");
    const auto meta = checkpoint::read_config(ck);
    if (meta.value("modality", std::string()) != data::to_string(m)) {
      throw ContractError("checkpoint " + ck.string() + " was trained for another modality");
    }
    auto b = models::build_translation_bundle(models::TranslationNetSpec::from_json(meta.at("net")));
    checkpoint::load_into(ck, *b);
    b->eval();
    bundles.emplace(m, b);
    inputs.push_back(ck);
  }

  const auto seed = cfg_.stage_seed("convert");
  std::vector<data::SynthPatient> out;
  std::vector<std::vector<Slice2>> src_slices, conv_slices, tgt_slices;
  std::vector<std::string> untranslated;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& p = pts[i];
    if (p.t2.meta.domain != data::Domain::kSource3T) {
      tgt_slices.push_back(data::volume_to_slices(data::normalize_intensity(p.t2)));
      continue;
    }
    data::SynthPatient q;
    for (auto m : {data::Modality::kT2, data::Modality::kAdc}) {
      const auto v = data::normalize_intensity(m == data::Modality::kT2 ? p.t2 : p.adc);
      data::VolumeRecord r;
      if (auto it = bundles.find(m); it != bundles.end()) {
        const auto size = it->second->spec.image_size;
        if (static_cast<std::int64_t>(v.voxels.rows()) != size || static_cast<std::int64_t>(v.voxels.cols()) != size) {
          throw ContractError("volume slices do not match the generator's " + std::to_string(size) + " px input");
        }
        r = translation::convert_volume(it->second->gen_s_to_t, v, derive_seed(seed, 2 * i + (m == data::Modality::kAdc)));
      } else {
        r = v;
        r.meta.domain = data::Domain::kTarget1p5T;
      }
      (m == data::Modality::kT2 ? q.t2 : q.adc) = std::move(r);
    }
    src_slices.push_back(data::volume_to_slices(data::normalize_intensity(p.t2)));
    conv_slices.push_back(data::volume_to_slices(q.t2));
    out.push_back(std::move(q));
  }
  for (auto m : {data::Modality::kT2, data::Modality::kAdc}) {
    if (!bundles.count(m)) untranslated.emplace_back(data::to_string(m));
  }
  if (out.empty()) throw DomainError("dataset has no source-domain patients to convert");
  const auto tdir = path(cfg_.paths.translated);
  fs::remove_all(tdir);
  io::write_dataset(tdir, out);
  log("converted " + std::to_string(out.size()) + " source patients");

  // Translation quality on T2 slices against the local domain.
  auto flat = [](const std::vector<std::vector<Slice2>>& v) {
    std::vector<Slice2> o;
    for (const auto& s : v) o.insert(o.end(), s.begin(), s.end());
    return o;
  };
  const metrics::Embedding hist = [](const Slice2& s) { return metrics::intensity_histogram(s); };
  const auto fs_src = flat(src_slices), fs_conv = flat(conv_slices), fs_tgt = flat(tgt_slices);
  const auto h_tgt = metrics::embed(fs_tgt, hist);
  const double mmd_before = metrics::mmd(metrics::embed(fs_src, hist), h_tgt);
  const double mmd_after = metrics::mmd(metrics::embed(fs_conv, hist), h_tgt);
  const metrics::RandomProjectionEmbedding proj(cfg_.translation.quality_embedding_dim, derive_seed(seed, 99));
  const metrics::Embedding pe = [&proj](const Slice2& s) { return proj(s); };
  const double fid_before = metrics::fid_volumes(src_slices, tgt_slices, pe);
  const double fid_after = metrics::fid_volumes(conv_slices, tgt_slices, pe);
  const json quality{{"modality", "T2"},
                     {"mmd_feature", "intensity_histogram"},
                     {"mmd_source_target", mmd_before},
                     {"mmd_translated_target", mmd_after},
                     {"mmd_reduction", mmd_before > 0.0 ? 1.0 - mmd_after / mmd_before : 0.0},
                     {"fid_mode", "per_index_avg"},
                     {"fid_source_target", fid_before},
                     {"fid_translated_target", fid_after}};
  const auto run = runs_dir() / "translation";
  fs::create_directories(run);
  write_json(run / "quality.json", quality);
  write_manifest(run, "convert", inputs, {tdir, run / "quality.json"}, {{"untranslated_modalities", untranslated}});
  return {{"command", "convert"}, {"converted", out.size()}, {"quality", quality},
          {"untranslated_modalities", untranslated}};
}

json Experiment::classify_train() {
  const auto d = classification_data(cfg_, root_);
  const auto split = data::make_splits(d.entries, data::SplitStage::kClassification,
                                       cfg_.stage_seed("classification_split"));
  std::vector<std::string> order;
  for (const auto& e : d.entries) order.push_back(e.patient_id);
  audit_no_test(split.test, split.train, "classifier training");
  audit_no_test(split.test, split.val, "classifier validation");
  const auto& variant = cfg_.classifier.spec.variant;
  const auto train = patches_for(d, order, split.train, variant);
  log("training " + std::string(data::to_string(variant)) + " on " + std::to_string(train.size()) + " patches");
  auto run = run_classifier(cfg_, train, cfg_.stage_seed("classifier"));

  const auto dir = runs_dir() / "classifier";
  fs::create_directories(dir);
  write_json(dir / "split.json", split_json(split, order));
  const json ck{{"kind", "classifier"},
                {"classifier", cfg_.classifier.spec.to_json()},
                {"filter", {{"method", "none"}, {"rate", 0.0}}}};
  checkpoint::save(dir / "model.ckpt", *run.model, ck);
  std::vector<fs::path> outputs{dir / "split.json", dir / "model.ckpt", dir / "loss_trace.csv"};
  io::write_text(dir / "loss_trace.csv", training::steps_csv(run.steps));
  if (!run.epochs.empty()) {
    io::write_text(dir / "epochs.csv", epochs_csv(run.epochs));
    outputs.push_back(dir / "epochs.csv");
  }
  if (!run.coteach.empty()) {
    checkpoint::save(dir / "net_b.ckpt", *run.peers.b, ck);
    io::write_text(dir / "coteaching.csv", coteach_csv(run.coteach));
    outputs.push_back(dir / "net_b.ckpt");
    outputs.push_back(dir / "coteaching.csv");
  }
  json summary{{"command", "classify-train"},
               {"variant", data::to_string(variant)},
               {"train_patients", split.train.size()},
               {"val_patients", split.val.size()},
               {"test_patients", split.test.size()},
               {"train_patches", train.size()},
               {"train_accuracy", training::accuracy(run.model, train)},
               {"warnings", run.warnings}};
  if (cfg_.classifier.spec.head == models::Head::kEvidence) {
    const auto table = training::uncertainty_table(run.model, train);
    io::write_text(dir / "uncertainty_train.csv", table.to_csv());
    outputs.push_back(dir / "uncertainty_train.csv");
    double mu = 0.0;
    for (const auto& r : table.rows()) mu += r.uncertainty;
    summary["mean_train_uncertainty"] = mu / static_cast<double>(table.size());
  }
  std::vector<fs::path> inputs{path(cfg_.paths.data)};
  if (cfg_.classifier.source_data == SourceData::kTranslated) inputs.push_back(path(cfg_.paths.translated));
  write_manifest(dir, "classify-train", inputs, outputs,
                 {{"audit", {{"test_patients_in_training", 0}, {"test_patients", split.test}}},
                  {"warnings", run.warnings}});
  for (const auto& w : run.warnings) log("warning: " + w);
  return summary;
}

json Experiment::filter_retrain() {
  const auto cdir = runs_dir() / "classifier";
  require_exists(cdir / "uncertainty_train.csv", "training uncertainty table (classify-train with an evidence head)");
  require_exists(cdir / "split.json", "classification split");
  const auto table = filtering::UncertaintyTable::from_csv(io::read_text(cdir / "uncertainty_train.csv"));
  const auto split = json::parse(io::read_text(cdir / "split.json"));
  const auto test = split.at("test").get<std::vector<std::string>>();
  const auto order = split.at("patient_order").get<std::vector<std::string>>();
  audit_no_test(test, table.patient_ids(), "filtering");

  const auto& policy = cfg_.filtering.policy;
  const double rate = cfg_.filtering.rate;
  filtering::FilterDecision decision;
  std::vector<std::int64_t> kept_ids;
  if (policy == "patch") {
    decision = filtering::describe_patch_filter(table, rate);
    kept_ids = filtering::filter_patches(table, rate);
  } else {
    decision = filtering::describe_patient_filter(table, rate);
    const auto kept = table.with_patients(filtering::filter_patients(table, rate));
    for (const auto& r : kept.rows()) kept_ids.push_back(r.patch_id);
  }
  if (kept_ids.empty()) throw DomainError("filtering removed every training sample");

  const auto d = classification_data(cfg_, root_);
  const auto all = patches_for(d, order, table.patient_ids(), cfg_.classifier.spec.variant);
  const auto retained = all.with_patches(kept_ids);
  if (retained.size() != kept_ids.size()) {
    throw ContractError("uncertainty table does not match the rebuilt training patches");
  }
  audit_no_test(test, unique_ids(retained.patient_ids), "retraining");
  log("retraining on " + std::to_string(retained.size()) + " of " + std::to_string(all.size()) + " patches");
  auto run = run_classifier(cfg_, retained, cfg_.stage_seed("classifier"));

  const auto dir = runs_dir() / "filtered";
  fs::create_directories(dir);
  const json ck{{"kind", "classifier"},
                {"classifier", cfg_.classifier.spec.to_json()},
                {"filter", {{"method", policy}, {"rate", rate}}}};
  checkpoint::save(dir / "model.ckpt", *run.model, ck);
  write_json(dir / "removed.json", decision.to_json());
  io::write_text(dir / "loss_trace.csv", training::steps_csv(run.steps));
  std::vector<fs::path> outputs{dir / "model.ckpt", dir / "removed.json", dir / "loss_trace.csv"};
  if (!run.epochs.empty()) {
    io::write_text(dir / "epochs.csv", epochs_csv(run.epochs));
    outputs.push_back(dir / "epochs.csv");
  }
  write_manifest(dir, "filter-retrain", {cdir / "uncertainty_train.csv", cdir / "split.json"}, outputs,
                 {{"audit", {{"test_patients_in_training", 0}}}});
  return {{"command", "filter-retrain"},
          {"policy", policy},
          {"rate", rate},
          {"considered", decision.considered},
          {"removed", decision.removed_ids.size()},
          {"retained_patches", retained.size()},
          {"train_accuracy", training::accuracy(run.model, retained)}};
}

json Experiment::evaluate() {
  const auto ck = path(cfg_.evaluation.checkpoint);
  require_exists(ck, "checkpoint");
  const auto cdir = runs_dir() / "classifier";
  require_exists(cdir / "split.json", "classification split");
  const auto meta = checkpoint::read_config(ck);
  if (meta.value("kind", std::string()) != "classifier") throw ContractError(ck.string() + " is not a classifier");
  const auto spec = models::ClassifierSpec::from_json(meta.at("classifier"));
  auto model = models::build_classifier(spec);
  checkpoint::load_into(ck, *model);
  model->eval();

  const auto split = json::parse(io::read_text(cdir / "split.json"));
  const auto test = split.at("test").get<std::vector<std::string>>();
  const auto order = split.at("patient_order").get<std::vector<std::string>>();
  const auto d = classification_data(cfg_, root_);
  const auto set = patches_for(d, order, test, spec.variant);

  auto table = training::prediction_table(model, set);
  if (spec.variant == data::ClassifierVariant::kMpMriCoTeaching &&
      cfg_.coteaching.inference == coteaching::Inference::kAverage) {
    const auto bpath = ck.parent_path() / "net_b.ckpt";
    require_exists(bpath, "second co-teaching network");
    auto net_b = models::build_classifier(spec);
    checkpoint::load_into(bpath, *net_b);
    coteaching::Peers peers{model, net_b};
    const auto p = coteaching::positive_probs(peers, set, coteaching::Inference::kAverage);
    auto rows = table.rows();
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].predicted_prob = p[i];
    table = filtering::UncertaintyTable(std::move(rows));
  }

  const metrics::BootstrapOptions boot{cfg_.evaluation.bootstrap, cfg_.stage_seed("bootstrap"), 0.95};
  std::vector<int> y, yp;
  std::vector<double> prob;
  for (const auto& r : table.rows()) {
    y.push_back(r.label);
    prob.push_back(r.predicted_prob);
    yp.push_back(r.predicted_prob > 0.5 ? 1 : 0);
  }
  const auto patch_report = metrics::classification_metrics(y, yp, prob, boot, cfg_.evaluation.ece_bins);
  metrics::MetricsReport patient_report;
  std::size_t n_patients = 0;
  try {
    const auto pats = metrics::aggregate_patient(table);
    std::vector<int> py_, pp;
    std::vector<double> ps;
    for (const auto& p : pats) {
      py_.push_back(p.label_true);
      pp.push_back(p.label_pred);
      ps.push_back(p.median_prob);
    }
    n_patients = pats.size();
    patient_report = metrics::classification_metrics(py_, pp, ps, boot, cfg_.evaluation.ece_bins);
  } catch (const DomainError& e) {
    patient_report.note = e.what();
  }

  const auto filter = meta.value("filter", json{{"method", "none"}, {"rate", 0.0}});
  const json report{{"schema_version", 1},
                    {"checkpoint", cfg_.evaluation.checkpoint},
                    {"variant", data::to_string(spec.variant)},
                    {"head", models::to_string(spec.head)},
                    {"filter_method", filter.at("method")},
                    {"filter_rate", filter.at("rate")},
                    {"n_test_patients", n_patients},
                    {"n_test_patches", table.size()},
                    {"patch", patch_report.to_json()},
                    {"patient", patient_report.to_json()}};
  const auto dir = evaluation_dir(cfg_, root_);
  fs::create_directories(dir);
  write_json(dir / "report.json", report);
  io::write_text(dir / "predictions.csv", table.to_csv());
  io::write_text(dir / "reliability.svg", reliability_svg(y, prob, cfg_.evaluation.ece_bins));
  io::write_text(dir / "roc.svg", roc_svg(y, prob));
  write_manifest(dir, "evaluate", {ck, cdir / "split.json"},
                 {dir / "report.json", dir / "predictions.csv", dir / "reliability.svg", dir / "roc.svg"},
                 {{"audit", {{"evaluated_patients", test}}}});
  return {{"command", "evaluate"}, {"report", report}, {"dir", fs::relative(dir, root_).generic_string()}};
}

json Experiment::sweep_threshold() {
  const auto ck = path(cfg_.evaluation.checkpoint);
  require_exists(ck, "checkpoint");
  const auto spec = models::ClassifierSpec::from_json(checkpoint::read_config(ck).at("classifier"));
  if (spec.head != models::Head::kEvidence) {
    throw ContractError("threshold sweep needs uncertainties from an evidence-head classifier");
  }
  const auto dir = evaluation_dir(cfg_, root_);
  require_exists(dir / "predictions.csv", "predictions (run evaluate first)");
  const auto table = filtering::UncertaintyTable::from_csv(io::read_text(dir / "predictions.csv"));
  const metrics::BootstrapOptions boot{cfg_.evaluation.bootstrap, cfg_.stage_seed("bootstrap"), 0.95};
  const auto rows = metrics::threshold_sweep(table, cfg_.evaluation.ladder, boot);
  io::write_text(dir / "sweep.csv", metrics::sweep_csv(rows));
  json arr = json::array();
  for (const auto& r : rows) arr.push_back({{"tau", r.tau}, {"n_retained", r.n_retained}, {"report", r.report.to_json()}});
  write_json(dir / "sweep.json", arr);
  write_manifest(dir, "sweep-threshold", {dir / "predictions.csv"}, {dir / "sweep.csv", dir / "sweep.json"},
                 json::object(), "manifest_sweep.json");
  return {{"command", "sweep-threshold"}, {"rows", arr}};
}

json Experiment::run(const std::string& command) {
  if (command == "synth-data") return synth_data();
  if (command == "translate-train") return translate_train();
  if (command == "convert") return convert();
  if (command == "classify-train") return classify_train();
  if (command == "filter-retrain") return filter_retrain();
  if (command == "evaluate") return evaluate();
  if (command == "sweep-threshold") return sweep_threshold();
  throw ConfigError("unknown command '" + command + "'");
}

}  // namespace evident::experiment
