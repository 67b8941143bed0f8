#pragma once

// Classifier architectures and the seven translation networks.

#include <cstdint>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "evident/data.hpp"
#include "json.hpp"

namespace evident::models {

enum class Head { kSoftmax, kEvidence };
enum class EvidenceActivation { kSoftplus, kRelu, kExp };

Head parse_head(std::string_view s);  // "softmax_prob" | "evidence"
std::string_view to_string(Head h);
EvidenceActivation parse_activation(std::string_view s);  // "softplus" | "relu" | "exp"
std::string_view to_string(EvidenceActivation a);

struct ClassifierSpec {
  data::ClassifierVariant variant = data::ClassifierVariant::kMpMri;
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::int64_t channels = 2;  // stacked depth; ms_mpmri carries both streams (6)
  std::int64_t num_classes = 2;
  Head head = Head::kEvidence;
  EvidenceActivation activation = EvidenceActivation::kSoftplus;
  // 3-D conv, four 2-D convs, post-concat conv.
  std::vector<std::int64_t> widths{16, 32, 32, 64, 64};

  static ClassifierSpec for_variant(data::ClassifierVariant v, Head head = Head::kEvidence);
  void validate() const;
  std::int64_t stream_depth() const;  // channels seen by one extractor
  std::int64_t streams() const { return variant == data::ClassifierVariant::kMsMpMri ? 2 : 1; }

  nlohmann::json to_json() const;
  static ClassifierSpec from_json(const nlohmann::json& j);
};

/// 3-D conv collapsing the channel depth, then four 2-D convs with two 2x2
/// max-pools. Input (B, D, H, W); output (B, widths[3], H/4, W/4).
class FeatureExtractorImpl : public torch::nn::Module {
 public:
  FeatureExtractorImpl(std::int64_t depth, const std::vector<std::int64_t>& widths);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv3d conv3d_{nullptr};
  torch::nn::BatchNorm2d bn0_{nullptr};
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(FeatureExtractor);

class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(ClassifierSpec spec);

  /// Pre-activation outputs (B, K): logits for the softmax head.
  torch::Tensor raw(const torch::Tensor& x);
  /// Probabilities (softmax head) or non-negative evidence (evidence head).
  torch::Tensor forward(const torch::Tensor& x);
  /// (B, K) evidence; throws ContractError for the softmax head.
  torch::Tensor evidence(const torch::Tensor& x);
  /// Expected probability of class 1 under either head.
  torch::Tensor positive_prob(const torch::Tensor& x);

  const ClassifierSpec& spec() const { return spec_; }
  FeatureExtractor& extractor() { return extractor_; }

 private:
  ClassifierSpec spec_;
  FeatureExtractor extractor_{nullptr};
  torch::nn::Sequential fuse_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Classifier);

Classifier build_classifier(const ClassifierSpec& spec);

std::int64_t parameter_count(const torch::nn::Module& m);

// ---------------------------------------------------------------------------
// Translation networks

struct TranslationNetSpec {
  std::int64_t image_size = 64;
  std::int64_t gen_base = 32;
  std::int64_t disc_base = 32;
  std::int64_t z_dim = 16;
  std::int64_t res_blocks = 2;

  void validate() const;
  nlohmann::json to_json() const;
  static TranslationNetSpec from_json(const nlohmann::json& j);
};

/// Residual block whose normalized activations are modulated by the noise
/// code (scale and shift from a linear map of z).
class FilmResBlockImpl : public torch::nn::Module {
 public:
  FilmResBlockImpl(std::int64_t channels, std::int64_t z_dim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);

 private:
  torch::nn::Conv2d c1_{nullptr}, c2_{nullptr};
  torch::nn::InstanceNorm2d n1_{nullptr}, n2_{nullptr};
  torch::nn::Linear film_{nullptr};
};
TORCH_MODULE(FilmResBlock);

struct GenOut {
  torch::Tensor image;  // tanh, (B, 1, H, W)
  torch::Tensor mask;   // sigmoid, (B, 1, H, W)
};

class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(const TranslationNetSpec& spec);
  GenOut forward(const torch::Tensor& x, const torch::Tensor& z);
  std::int64_t z_dim() const { return z_dim_; }

 private:
  std::int64_t z_dim_;
  torch::nn::Sequential down_{nullptr};
  torch::nn::ModuleList res_{nullptr};
  torch::nn::Sequential up_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(Generator);

/// Patch discriminator; in_channels 2 for the pair discriminator.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(std::int64_t in_channels, std::int64_t base);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Discriminator);

class NoiseEncoderImpl : public torch::nn::Module {
 public:
  NoiseEncoderImpl(std::int64_t base, std::int64_t z_dim);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(NoiseEncoder);

/// Registers all seven networks under stable names for checkpointing.
class TranslationBundleImpl : public torch::nn::Module {
 public:
  explicit TranslationBundleImpl(const TranslationNetSpec& spec);

  TranslationNetSpec spec;
  Generator gen_s_to_t{nullptr}, gen_t_to_s{nullptr};
  Discriminator disc_s{nullptr}, disc_t{nullptr}, disc_pair{nullptr};
  NoiseEncoder enc_z_s{nullptr}, enc_z_t{nullptr};

  std::vector<torch::Tensor> generator_parameters();
  std::vector<torch::Tensor> discriminator_parameters();
};
TORCH_MODULE(TranslationBundle);

TranslationBundle build_translation_bundle(const TranslationNetSpec& spec);

}  // namespace evident::models
