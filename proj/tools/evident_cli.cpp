// Command-line front end. Talks to the pipeline only through the C API.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "evident/evident.h"

namespace {

const std::vector<std::pair<std::string, std::string>> kCommands{
    {"synth-data", "write the synthetic two-domain study"},
    {"translate-train", "train the per-modality translation networks"},
    {"convert", "translate source-domain volumes into the target domain"},
    {"classify-train", "train the patch classifier"},
    {"filter-retrain", "drop the most uncertain training data and retrain"},
    {"evaluate", "score a classifier checkpoint on the test patients"},
    {"sweep-threshold", "deployment abstention over the uncertainty ladder"}};

void print_log(const char* msg, void*) { std::fprintf(stderr, "[evident] %s\n", msg); }

int fail(evd_status st) {
  std::fprintf(stderr, "error (%s): %s\n", evd_status_name(st), evd_last_error());
  return 10 + static_cast<int>(st);
}

struct Options {
  std::string config;
  std::string workdir;
  uint64_t seed = 0;
  std::vector<std::string> overrides;
  std::string checkpoint;
  bool quiet = false;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Evidential focal loss and MRI domain-translation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", evd_version());

  Options opt;
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : kCommands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", opt.config, "JSON config file (defaults if omitted)");
    sub->add_option("-w,--workdir", opt.workdir, "working-directory root (else $EVIDENT_WORKDIR, else cwd)");
    sub->add_option("--seed", opt.seed, "master seed; overrides the config");
    sub->add_option("--set", opt.overrides, "override a config value: dotted.key=value")->take_all();
    sub->add_flag("-q,--quiet", opt.quiet, "suppress progress messages");
    if (name == "evaluate" || name == "sweep-threshold") {
      sub->add_option("--checkpoint", opt.checkpoint, "classifier checkpoint, relative to the root");
    }
    subs.push_back(sub);
  }
  auto* print_cfg = app.add_subcommand("print-config", "print the default config");

  CLI11_PARSE(app, argc, argv);

  if (print_cfg->parsed()) {
    std::printf("%s\n", evd_default_config());
    return 0;
  }
  CLI::App* sub = nullptr;
  for (auto* s : subs) {
    if (s->parsed()) sub = s;
  }

  evd_experiment* ex = nullptr;
  const char* workdir = opt.workdir.empty() ? nullptr : opt.workdir.c_str();
  const auto st = opt.config.empty() ? evd_experiment_open_json("{\"schema_version\": 1}", workdir, &ex)
                                     : evd_experiment_open(opt.config.c_str(), workdir, &ex);
  if (st != EVD_OK) return fail(st);

  auto check = [&](evd_status s) {
    if (s != EVD_OK) {
      const int code = fail(s);
      evd_experiment_close(ex);
      std::exit(code);
    }
  };
  if (sub->count("--seed") > 0) check(evd_experiment_set_seed(ex, opt.seed));
  for (const auto& kv : opt.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "--set expects key=value, got '%s'\n", kv.c_str());
      evd_experiment_close(ex);
      return 2;
    }
    check(evd_experiment_set_option(ex, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  if (!opt.checkpoint.empty()) {
    const std::string quoted = "\"" + opt.checkpoint + "\"";
    check(evd_experiment_set_option(ex, "evaluation.checkpoint", quoted.c_str()));
  }
  if (!opt.quiet) check(evd_experiment_set_logger(ex, print_log, nullptr));

  check(evd_experiment_run(ex, sub->get_name().c_str()));
  std::printf("%s\n", evd_experiment_summary(ex));
  evd_experiment_close(ex);
  return 0;
}
