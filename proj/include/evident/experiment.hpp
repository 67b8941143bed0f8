#pragma once

// End-to-end experiment driver behind the CLI subcommands. Every path in the
// config is relative to the working-directory root.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "evident/coteaching.hpp"
#include "evident/data.hpp"
#include "evident/metrics.hpp"
#include "evident/models.hpp"
#include "evident/training.hpp"
#include "evident/translation_train.hpp"
#include "json.hpp"

namespace evident::experiment {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kWorkdirEnv = "EVIDENT_WORKDIR";

enum class SourceData { kNone, kRaw, kTranslated };

struct ExperimentConfig {
  std::uint64_t seed = 0;

  struct Paths {
    std::string data = "data/synth";
    std::string translated = "data/translated";
    std::string runs = "runs";
  } paths;

  struct Synth {
    std::size_t patients = 40;
    data::SynthOptions options;
  } synth;

  struct Translation {
    std::vector<data::Modality> modalities{data::Modality::kT2, data::Modality::kAdc};
    translation::TranslationTrainConfig train;  // mask bounds replaced per modality
    translation::MaskConfig t2_mask = translation::MaskConfig::t2();
    translation::MaskConfig adc_mask = translation::MaskConfig::adc();
    std::size_t quality_embedding_dim = 32;
  } translation;

  struct Classifier {
    models::ClassifierSpec spec;
    training::ClassifierTrainConfig train;
    SourceData source_data = SourceData::kTranslated;
  } classifier;

  coteaching::CoTeachingConfig coteaching;

  struct Filtering {
    std::string policy = "patch";  // patch | patient
    double rate = 20.0;            // percent
  } filtering;

  struct Evaluation {
    std::string checkpoint = "runs/classifier/model.ckpt";
    std::vector<double> ladder = metrics::kDeploymentLadder;
    int bootstrap = 3000;
    int ece_bins = 10;
  } evaluation;

  /// Missing keys take defaults; unknown keys and a missing or unsupported
  /// schema_version are ConfigErrors.
  static ExperimentConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  /// Seed of a named stochastic stage, derived from the master seed.
  std::uint64_t stage_seed(const std::string& stage) const;
};

/// Canonical-JSON FNV-1a hash, hex.
std::string config_hash(const ExperimentConfig& cfg);

/// git blob id (SHA-1 of "blob <size>\0" + bytes) of a file.
std::string fingerprint_file(const std::filesystem::path& path);

/// Root from the explicit argument, else $EVIDENT_WORKDIR, else the cwd.
std::filesystem::path resolve_root(const std::string& explicit_root = "");

/// Biopsy-centred patches of every rotation, stacked for `variant`.
std::vector<data::PatchRecord> patient_patches(const data::SynthPatient& p, data::ClassifierVariant variant);

/// Planted-noise fixture: a bright marker is stamped on the patches of every
/// `cluster_every`-th patient, and within that cluster a fraction of patch
/// labels is flipped. Returns the flipped flags (patch order).
struct PlantedNoise {
  std::size_t cluster_every = 5;
  double flip_fraction_in_cluster = 0.5;
  float marker_value = 1.0f;
  std::size_t marker_size = 12;
};
std::vector<bool> plant_cluster_noise(std::vector<data::PatchRecord>& patches, const PlantedNoise& opts,
                                      std::uint64_t seed);

/// Uniform label flips at `rate`; returns the flipped flags.
std::vector<bool> plant_uniform_noise(std::vector<data::PatchRecord>& patches, double rate, std::uint64_t seed);

using Logger = std::function<void(const std::string&)>;

class Experiment {
 public:
  Experiment(ExperimentConfig cfg, std::filesystem::path root, Logger log = {});

  const ExperimentConfig& config() const { return cfg_; }
  const std::filesystem::path& root() const { return root_; }

  nlohmann::json synth_data();
  nlohmann::json translate_train();
  nlohmann::json convert();
  nlohmann::json classify_train();
  nlohmann::json filter_retrain();
  nlohmann::json evaluate();
  nlohmann::json sweep_threshold();

  /// Dispatch by subcommand name.
  nlohmann::json run(const std::string& command);

  std::filesystem::path path(const std::string& rel) const { return root_ / rel; }
  std::filesystem::path runs_dir() const { return root_ / cfg_.paths.runs; }

 private:
  void log(const std::string& msg) const;
  void write_manifest(const std::filesystem::path& dir, const std::string& command,
                      const std::vector<std::filesystem::path>& inputs,
                      const std::vector<std::filesystem::path>& outputs, const nlohmann::json& extra,
                      const std::string& name = "manifest.json") const;

  ExperimentConfig cfg_;
  std::filesystem::path root_;
  Logger log_;
};

/// Outcome of a classifier run on a patch set: model plus logs, shared by
/// classify-train and filter-retrain.
struct ClassifierRun {
  models::Classifier model{nullptr};
  std::vector<training::StepLog> steps;
  std::vector<training::EpochLog> epochs;
  std::vector<std::string> warnings;
  std::vector<coteaching::EpochStats> coteach;
  coteaching::Peers peers;
};

ClassifierRun run_classifier(const ExperimentConfig& cfg, const training::PatchSet& train, std::uint64_t seed);

/// Reliability diagram and ROC curve as standalone SVG documents.
std::string reliability_svg(std::span<const int> y_true, std::span<const double> prob_positive, int bins);
std::string roc_svg(std::span<const int> y_true, std::span<const double> score);

}  // namespace evident::experiment
