#include <filesystem>

#include "torch_doctest.h"
#include "evident/checkpoint.hpp"
#include "evident/error.hpp"
#include "evident/io.hpp"
#include "evident/models.hpp"

using namespace evident;
using namespace evident::models;
using data::ClassifierVariant;

namespace {

ClassifierSpec small(ClassifierVariant v, Head h) {
  auto s = ClassifierSpec::for_variant(v, h);
  s.widths = {4, 8, 8, 8, 8};
  return s;
}

}  // namespace

TEST_CASE("softmax head rows sum to one") {
  torch::manual_seed(0);
  auto net = build_classifier(small(ClassifierVariant::kMpMri, Head::kSoftmax));
  net->eval();
  const auto out = net->forward(torch::randn({10, 2, 64, 64}));
  CHECK(out.sizes() == torch::IntArrayRef({10, 2}));
  CHECK(torch::allclose(out.sum(1), torch::ones({10}), 1e-6, 1e-6));
  CHECK_THROWS_AS(net->evidence(torch::randn({1, 2, 64, 64})), ContractError);
}

TEST_CASE("evidence head is finite and non-negative") {
  torch::manual_seed(1);
  for (auto act : {EvidenceActivation::kSoftplus, EvidenceActivation::kRelu, EvidenceActivation::kExp}) {
    auto spec = small(ClassifierVariant::kVolMpMri, Head::kEvidence);
    spec.activation = act;
    auto net = build_classifier(spec);
    net->eval();
    torch::NoGradGuard ng;
    for (int trial = 0; trial < 10; ++trial) {
      // 10 batches of 100 inputs: 1000 random trials per activation.
      const auto e = net->forward(torch::randn({100, 6, 64, 64}) * (1.0 + trial));
      CHECK(torch::isfinite(e).all().item<bool>());
      CHECK(e.min().item<double>() >= 0.0);
    }
  }
}

TEST_CASE("variant shapes are enforced") {
  CHECK(ClassifierSpec::for_variant(ClassifierVariant::kT2Only).channels == 3);
  CHECK(ClassifierSpec::for_variant(ClassifierVariant::kMpMri).channels == 2);
  CHECK(ClassifierSpec::for_variant(ClassifierVariant::kVolMpMri).channels == 6);
  CHECK(ClassifierSpec::for_variant(ClassifierVariant::kMsMpMri).stream_depth() == 3);
  auto bad = ClassifierSpec::for_variant(ClassifierVariant::kMpMri);
  bad.channels = 6;
  CHECK_THROWS_AS(build_classifier(bad), ContractError);
  bad = ClassifierSpec::for_variant(ClassifierVariant::kMpMri);
  bad.height = 32;
  CHECK_THROWS_AS(build_classifier(bad), ContractError);
  auto net = build_classifier(small(ClassifierVariant::kMpMri, Head::kEvidence));
  CHECK_THROWS_AS(net->forward(torch::randn({2, 3, 64, 64})), DomainError);
}

TEST_CASE("multi-stream extractor is shared") {
  torch::manual_seed(2);
  auto ms = build_classifier(small(ClassifierVariant::kMsMpMri, Head::kEvidence));
  auto single = build_classifier(small(ClassifierVariant::kT2Only, Head::kEvidence));
  CHECK(parameter_count(*ms->extractor()) == parameter_count(*single->extractor()));
  ms->eval();
  torch::NoGradGuard ng;
  const auto t2 = torch::randn({4, 3, 64, 64});
  const auto x = torch::cat({t2, t2}, 1);
  const auto fa = ms->extractor()->forward(x.narrow(1, 0, 3));
  const auto fb = ms->extractor()->forward(x.narrow(1, 3, 3));
  CHECK(torch::equal(fa, fb));
  CHECK(ms->forward(x).sizes() == torch::IntArrayRef({4, 2}));
}

TEST_CASE("spec json round trip") {
  auto s = small(ClassifierVariant::kMsMpMri, Head::kSoftmax);
  s.activation = EvidenceActivation::kExp;
  const auto back = ClassifierSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
  CHECK(s.to_json()["input_shape"] == nlohmann::json::array({64, 64, 6}));
}

TEST_CASE("generator output ranges and wiring") {
  torch::manual_seed(3);
  TranslationNetSpec spec{64, 8, 8, 16, 2};
  auto b = build_translation_bundle(spec);
  const auto x = torch::rand({2, 1, 64, 64}) * 2 - 1;
  const auto z = torch::randn({2, 16});
  const auto o = b->gen_s_to_t->forward(x, z);
  CHECK(o.image.sizes() == torch::IntArrayRef({2, 1, 64, 64}));
  CHECK(o.mask.sizes() == torch::IntArrayRef({2, 1, 64, 64}));
  CHECK(o.image.min().item<double>() >= -1.0);
  CHECK(o.image.max().item<double>() <= 1.0);
  CHECK(o.mask.min().item<double>() >= 0.0);
  CHECK(o.mask.max().item<double>() <= 1.0);

  const auto zs = b->enc_z_s->forward(x);
  CHECK(zs.sizes() == torch::IntArrayRef({2, 16}));
  const auto idt = b->gen_t_to_s->forward(x, zs);
  CHECK(idt.image.sizes() == x.sizes());

  const auto score = b->disc_pair->forward(torch::cat({x, x}, 1));
  CHECK(score.dim() == 4);
  CHECK(score.size(1) == 1);
  CHECK(torch::isfinite(score).all().item<bool>());
  CHECK(b->disc_s->forward(x).sizes() == score.sizes());

  CHECK_THROWS_AS(b->gen_s_to_t->forward(x, torch::randn({2, 8})), DomainError);
  CHECK_THROWS_AS(build_translation_bundle({64, 8, 8, 0, 2}), ContractError);
  CHECK_THROWS_AS(build_translation_bundle({60, 8, 8, 16, 2}), ContractError);
}

TEST_CASE("forward passes are deterministic") {
  torch::manual_seed(4);
  auto b = build_translation_bundle({64, 8, 8, 16, 1});
  const auto x = torch::rand({1, 1, 64, 64});
  const auto z = torch::randn({1, 16});
  CHECK(torch::equal(b->gen_s_to_t->forward(x, z).image, b->gen_s_to_t->forward(x, z).image));
  auto net = build_classifier(small(ClassifierVariant::kMpMri, Head::kEvidence));
  net->eval();
  const auto p = torch::randn({3, 2, 64, 64});
  CHECK(torch::equal(net->forward(p), net->forward(p)));
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "evident_test_models";
  std::filesystem::remove_all(dir);
  torch::manual_seed(5);
  const auto spec = small(ClassifierVariant::kMpMri, Head::kEvidence);
  auto a = build_classifier(spec);
  // Move the batch-norm statistics away from their defaults.
  a->train();
  a->forward(torch::randn({8, 2, 64, 64}));
  a->eval();
  checkpoint::save(dir / "c.ckpt", *a, {{"classifier", spec.to_json()}});
  CHECK(checkpoint::read_config(dir / "c.ckpt")["classifier"] == spec.to_json());

  torch::manual_seed(99);
  auto b = build_classifier(ClassifierSpec::from_json(checkpoint::read_config(dir / "c.ckpt")["classifier"]));
  checkpoint::load_into(dir / "c.ckpt", *b);
  b->eval();
  const auto x = torch::randn({3, 2, 64, 64});
  CHECK(torch::equal(a->forward(x), b->forward(x)));

  auto other = build_classifier(small(ClassifierVariant::kVolMpMri, Head::kEvidence));
  CHECK_THROWS_AS(checkpoint::load_into(dir / "c.ckpt", *other), ContractError);
  io::write_text(dir / "junk.ckpt", "nope");
  CHECK_THROWS_AS(checkpoint::read_config(dir / "junk.ckpt"), IoError);
  CHECK_THROWS_AS(checkpoint::read_config(dir / "missing.ckpt"), IoError);

  auto bundle = build_translation_bundle({64, 8, 8, 16, 1});
  checkpoint::save(dir / "t.ckpt", *bundle, {{"net", bundle->spec.to_json()}});
  auto bundle2 = build_translation_bundle(TranslationNetSpec::from_json(checkpoint::read_config(dir / "t.ckpt")["net"]));
  checkpoint::load_into(dir / "t.ckpt", *bundle2);
  const auto s = torch::rand({1, 1, 64, 64});
  const auto z = torch::randn({1, 16});
  CHECK(torch::equal(bundle->gen_s_to_t->forward(s, z).mask, bundle2->gen_s_to_t->forward(s, z).mask));
}
