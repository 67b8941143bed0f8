#include "evident/models.hpp"

#include <string>

#include "evident/error.hpp"

namespace evident::models {

namespace nn = torch::nn;

Head parse_head(std::string_view s) {
  if (s == "softmax_prob" || s == "softmax") return Head::kSoftmax;
  if (s == "evidence") return Head::kEvidence;
  throw ConfigError("unknown classifier head '" + std::string(s) + "'");
}

std::string_view to_string(Head h) { return h == Head::kSoftmax ? "softmax_prob" : "evidence"; }

EvidenceActivation parse_activation(std::string_view s) {
  if (s == "softplus") return EvidenceActivation::kSoftplus;
  if (s == "relu") return EvidenceActivation::kRelu;
  if (s == "exp") return EvidenceActivation::kExp;
  throw ConfigError("unknown evidence activation '" + std::string(s) + "'");
}

std::string_view to_string(EvidenceActivation a) {
  switch (a) {
    case EvidenceActivation::kSoftplus: return "softplus";
    case EvidenceActivation::kRelu: return "relu";
    case EvidenceActivation::kExp: return "exp";
  }
  return "?";
}

ClassifierSpec ClassifierSpec::for_variant(data::ClassifierVariant v, Head head) {
  ClassifierSpec s;
  s.variant = v;
  s.channels = static_cast<std::int64_t>(data::stacked_depth(v));
  s.head = head;
  return s;
}

void ClassifierSpec::validate() const {
  if (height != 64 || width != 64) throw ContractError("classifier patches must be 64 x 64");
  if (channels != static_cast<std::int64_t>(data::stacked_depth(variant))) {
    throw ContractError("variant " + std::string(data::to_string(variant)) + " expects " +
                        std::to_string(data::stacked_depth(variant)) + " channels, got " +
                        std::to_string(channels));
  }
  if (num_classes != 2) throw ContractError("only binary classification is supported");
  if (widths.size() != 5) throw ContractError("classifier widths must list five layer widths");
  for (auto w : widths) {
    if (w <= 0) throw ContractError("classifier widths must be positive");
  }
}

std::int64_t ClassifierSpec::stream_depth() const { return channels / streams(); }

nlohmann::json ClassifierSpec::to_json() const {
  return {{"variant", data::to_string(variant)},
          {"input_shape", {height, width, channels}},
          {"num_classes", num_classes},
          {"head", to_string(head)},
          {"evidence_activation", to_string(activation)},
          {"widths", widths}};
}

ClassifierSpec ClassifierSpec::from_json(const nlohmann::json& j) {
  ClassifierSpec s;
  s.variant = data::parse_variant(j.at("variant").get<std::string>());
  const auto shape = j.at("input_shape").get<std::vector<std::int64_t>>();
  if (shape.size() != 3) throw ConfigError("input_shape must be (H, W, C)");
  s.height = shape[0];
  s.width = shape[1];
  s.channels = shape[2];
  s.num_classes = j.value("num_classes", 2);
  s.head = parse_head(j.at("head").get<std::string>());
  s.activation = parse_activation(j.value("evidence_activation", std::string("softplus")));
  s.widths = j.at("widths").get<std::vector<std::int64_t>>();
  return s;
}

namespace {

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1) {
  // Stride-2 convs use k = 4, pad 1 to halve exactly; others keep size.
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(stride == 2 ? 1 : k / 2));
}

}  // namespace

FeatureExtractorImpl::FeatureExtractorImpl(std::int64_t depth, const std::vector<std::int64_t>& w) {
  conv3d_ = register_module("conv3d", nn::Conv3d(nn::Conv3dOptions(1, w[0], {depth, 3, 3}).padding({0, 1, 1})));
  bn0_ = register_module("bn0", nn::BatchNorm2d(w[0]));
  nn::Sequential body;
  body->push_back(conv(w[0], w[1], 3));
  body->push_back(nn::BatchNorm2d(w[1]));
  body->push_back(nn::ReLU());
  body->push_back(conv(w[1], w[2], 3));
  body->push_back(nn::BatchNorm2d(w[2]));
  body->push_back(nn::ReLU());
  body->push_back(nn::MaxPool2d(2));
  body->push_back(conv(w[2], w[3], 3));
  body->push_back(nn::BatchNorm2d(w[3]));
  body->push_back(nn::ReLU());
  body->push_back(conv(w[3], w[3], 3));
  body->push_back(nn::BatchNorm2d(w[3]));
  body->push_back(nn::ReLU());
  body->push_back(nn::MaxPool2d(2));
  body_ = register_module("body", body);
}

torch::Tensor FeatureExtractorImpl::forward(const torch::Tensor& x) {
  auto h = conv3d_->forward(x.unsqueeze(1)).squeeze(2);
  h = torch::relu(bn0_->forward(h));
  return body_->forward(h);
}

ClassifierImpl::ClassifierImpl(ClassifierSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto& w = spec_.widths;
  extractor_ = register_module("extractor", FeatureExtractor(spec_.stream_depth(), w));
  nn::Sequential fuse;
  fuse->push_back(conv(w[3] * spec_.streams(), w[4], 3));
  fuse->push_back(nn::BatchNorm2d(w[4]));
  fuse->push_back(nn::ReLU());
  fuse->push_back(nn::AdaptiveAvgPool2d(1));
  fuse->push_back(nn::Flatten());
  fuse_ = register_module("fuse", fuse);
  fc_ = register_module("fc", nn::Linear(w[4], spec_.num_classes));
}

torch::Tensor ClassifierImpl::raw(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.channels || x.size(2) != spec_.height || x.size(3) != spec_.width) {
    throw DomainError("classifier input must be (B, " + std::to_string(spec_.channels) + ", 64, 64)");
  }
  torch::Tensor feats;
  if (spec_.streams() == 2) {
    const auto d = spec_.stream_depth();
    feats = torch::cat({extractor_->forward(x.narrow(1, 0, d)), extractor_->forward(x.narrow(1, d, d))}, 1);
  } else {
    feats = extractor_->forward(x);
  }
  return fc_->forward(fuse_->forward(feats));
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) {
  return spec_.head == Head::kSoftmax ? torch::softmax(raw(x), 1) : evidence(x);
}

torch::Tensor ClassifierImpl::evidence(const torch::Tensor& x) {
  if (spec_.head != Head::kEvidence) throw ContractError("softmax-head classifier has no evidence output");
  const auto r = raw(x);
  switch (spec_.activation) {
    case EvidenceActivation::kSoftplus: return torch::softplus(r);
    case EvidenceActivation::kRelu: return torch::relu(r);
    case EvidenceActivation::kExp: return torch::exp(torch::clamp_max(r, 10.0));
  }
  return r;
}

torch::Tensor ClassifierImpl::positive_prob(const torch::Tensor& x) {
  if (spec_.head == Head::kSoftmax) return torch::softmax(raw(x), 1).select(1, 1);
  const auto alpha = evidence(x) + 1.0;
  return alpha.select(1, 1) / alpha.sum(1);
}

Classifier build_classifier(const ClassifierSpec& spec) { return Classifier(spec); }

std::int64_t parameter_count(const torch::nn::Module& m) {
  std::int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

// ---------------------------------------------------------------------------

void TranslationNetSpec::validate() const {
  if (image_size < 8 || (image_size & (image_size - 1)) != 0) {
    throw ContractError("translation image size must be a power of two");
  }
  if (gen_base <= 0 || disc_base <= 0 || res_blocks < 0) throw ContractError("network widths must be positive");
  if (z_dim <= 0) throw ContractError("noise dimension must be positive");
}

nlohmann::json TranslationNetSpec::to_json() const {
  return {{"image_size", image_size}, {"gen_base", gen_base}, {"disc_base", disc_base},
          {"z_dim", z_dim},           {"res_blocks", res_blocks}};
}

TranslationNetSpec TranslationNetSpec::from_json(const nlohmann::json& j) {
  TranslationNetSpec s;
  s.image_size = j.value("image_size", s.image_size);
  s.gen_base = j.value("gen_base", s.gen_base);
  s.disc_base = j.value("disc_base", s.disc_base);
  s.z_dim = j.value("z_dim", s.z_dim);
  s.res_blocks = j.value("res_blocks", s.res_blocks);
  return s;
}

FilmResBlockImpl::FilmResBlockImpl(std::int64_t ch, std::int64_t z_dim) {
  c1_ = register_module("c1", conv(ch, ch, 3));
  c2_ = register_module("c2", conv(ch, ch, 3));
  n1_ = register_module("n1", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(ch)));
  n2_ = register_module("n2", nn::InstanceNorm2d(nn::InstanceNorm2dOptions(ch)));
  film_ = register_module("film", nn::Linear(z_dim, 4 * ch));
}

torch::Tensor FilmResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  const auto ch = x.size(1);
  const auto mod = film_->forward(z).view({x.size(0), 4, ch, 1, 1});
  auto h = n1_->forward(c1_->forward(x)) * (1.0 + mod.select(1, 0)) + mod.select(1, 1);
  h = torch::relu(h);
  h = n2_->forward(c2_->forward(h)) * (1.0 + mod.select(1, 2)) + mod.select(1, 3);
  return x + h;
}

GeneratorImpl::GeneratorImpl(const TranslationNetSpec& spec) : z_dim_(spec.z_dim) {
  spec.validate();
  const auto b = spec.gen_base;
  nn::Sequential down;
  down->push_back(conv(1, b, 7));
  down->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(b).affine(true)));
  down->push_back(nn::ReLU());
  down->push_back(conv(b, 2 * b, 4, 2));
  down->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * b).affine(true)));
  down->push_back(nn::ReLU());
  down->push_back(conv(2 * b, 4 * b, 4, 2));
  down->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(4 * b).affine(true)));
  down->push_back(nn::ReLU());
  down_ = register_module("down", down);

  nn::ModuleList res;
  for (std::int64_t i = 0; i < spec.res_blocks; ++i) res->push_back(FilmResBlock(4 * b, spec.z_dim));
  res_ = register_module("res", res);

  const auto up_opts = nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest);
  nn::Sequential up;
  up->push_back(nn::Upsample(up_opts));
  up->push_back(conv(4 * b, 2 * b, 3));
  up->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * b).affine(true)));
  up->push_back(nn::ReLU());
  up->push_back(nn::Upsample(up_opts));
  up->push_back(conv(2 * b, b, 3));
  up->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(b).affine(true)));
  up->push_back(nn::ReLU());
  up_ = register_module("up", up);

  out_ = register_module("out", conv(b, 2, 7));
  // Start with a mostly-closed mask so early translations keep the source.
  torch::NoGradGuard ng;
  out_->weight.narrow(0, 0, 1).mul_(0.1);
  out_->bias[0].fill_(0.0);
  out_->bias[1].fill_(-2.0);
}

namespace {
constexpr double kResidualScale = 0.98;
}  // namespace

GenOut GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  if (x.dim() != 4 || x.size(1) != 1) throw DomainError("generator input must be (B, 1, H, W)");
  if (z.dim() != 2 || z.size(0) != x.size(0) || z.size(1) != z_dim_) {
    throw DomainError("noise batch must be (B, " + std::to_string(z_dim_) + ")");
  }
  auto h = down_->forward(x);
  for (const auto& m : *res_) h = m->as<FilmResBlock>()->forward(h, z);
  const auto o = out_->forward(up_->forward(h));
  // Image channel is a residual in pre-tanh space, so an untrained
  // generator is close to the identity.
  const auto base = torch::atanh(kResidualScale * x.clamp(-1.0, 1.0));
  return {torch::tanh(base + o.narrow(1, 0, 1)), torch::sigmoid(o.narrow(1, 1, 1))};
}

DiscriminatorImpl::DiscriminatorImpl(std::int64_t in, std::int64_t b) {
  nn::Sequential net;
  net->push_back(conv(in, b, 4, 2));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(conv(b, 2 * b, 4, 2));
  net->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(2 * b).affine(true)));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(conv(2 * b, 4 * b, 4, 2));
  net->push_back(nn::InstanceNorm2d(nn::InstanceNorm2dOptions(4 * b).affine(true)));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(conv(4 * b, 1, 3));
  net_ = register_module("net", net);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

NoiseEncoderImpl::NoiseEncoderImpl(std::int64_t b, std::int64_t z_dim) {
  nn::Sequential net;
  net->push_back(conv(1, b, 4, 2));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(conv(b, 2 * b, 4, 2));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(conv(2 * b, 4 * b, 4, 2));
  net->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  net->push_back(nn::AdaptiveAvgPool2d(1));
  net->push_back(nn::Flatten());
  net_ = register_module("net", net);
  fc_ = register_module("fc", nn::Linear(4 * b, z_dim));
}

torch::Tensor NoiseEncoderImpl::forward(const torch::Tensor& x) { return fc_->forward(net_->forward(x)); }

TranslationBundleImpl::TranslationBundleImpl(const TranslationNetSpec& s) : spec(s) {
  spec.validate();
  gen_s_to_t = register_module("gen_s_to_t", Generator(spec));
  gen_t_to_s = register_module("gen_t_to_s", Generator(spec));
  disc_s = register_module("disc_s", Discriminator(1, spec.disc_base));
  disc_t = register_module("disc_t", Discriminator(1, spec.disc_base));
  disc_pair = register_module("disc_pair", Discriminator(2, spec.disc_base));
  enc_z_s = register_module("enc_z_s", NoiseEncoder(spec.gen_base, spec.z_dim));
  enc_z_t = register_module("enc_z_t", NoiseEncoder(spec.gen_base, spec.z_dim));
}

std::vector<torch::Tensor> TranslationBundleImpl::generator_parameters() {
  std::vector<torch::Tensor> out;
  for (auto* m : std::initializer_list<torch::nn::Module*>{gen_s_to_t.get(), gen_t_to_s.get(), enc_z_s.get(),
                                                            enc_z_t.get()}) {
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

std::vector<torch::Tensor> TranslationBundleImpl::discriminator_parameters() {
  std::vector<torch::Tensor> out;
  for (auto* m : std::initializer_list<torch::nn::Module*>{disc_s.get(), disc_t.get(), disc_pair.get()}) {
    for (auto& p : m->parameters()) out.push_back(p);
  }
  return out;
}

TranslationBundle build_translation_bundle(const TranslationNetSpec& spec) { return TranslationBundle(spec); }

}  // namespace evident::models
