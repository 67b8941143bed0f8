#include "evident/evident.h"

#include <memory>
#include <string>

#include "evident/error.hpp"
#include "evident/evidential.hpp"
#include "evident/experiment.hpp"
#include "evident/io.hpp"

using evident::experiment::Experiment;
using evident::experiment::ExperimentConfig;
using nlohmann::json;

struct evd_experiment {
  json config;
  std::filesystem::path root;
  evd_log_fn log = nullptr;
  void* log_user = nullptr;
  std::string summary = "{}";
  std::string config_text;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_scratch;

template <typename F>
evd_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return EVD_OK;
  } catch (const evident::DomainError& e) {
    g_last_error = e.what();
    return EVD_ERR_DOMAIN;
  } catch (const evident::ContractError& e) {
    g_last_error = e.what();
    return EVD_ERR_CONTRACT;
  } catch (const evident::IoError& e) {
    g_last_error = e.what();
    return EVD_ERR_IO;
  } catch (const evident::ConfigError& e) {
    g_last_error = e.what();
    return EVD_ERR_CONFIG;
  } catch (const json::exception& e) {
    g_last_error = std::string("invalid JSON: ") + e.what();
    return EVD_ERR_CONFIG;
  } catch (const evident::NumericError& e) {
    g_last_error = e.what();
    return EVD_ERR_NUMERIC;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return EVD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return EVD_ERR_INTERNAL;
  }
}

evd_status null_argument(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return EVD_ERR_ARGUMENT;
}

evd_status open_impl(json config, const char* workdir, evd_experiment** out) {
  if (out == nullptr) return null_argument("out");
  *out = nullptr;
  return guarded([&] {
    ExperimentConfig::from_json(config);  // validate early
    auto h = std::make_unique<evd_experiment>();
    h->config = std::move(config);
    h->root = evident::experiment::resolve_root(workdir != nullptr ? workdir : "");
    *out = h.release();
  });
}

}  // namespace

extern "C" {

const char* evd_version(void) { return "1.0.0"; }

const char* evd_status_name(evd_status s) {
  switch (s) {
    case EVD_OK: return "ok";
    case EVD_ERR_DOMAIN: return "domain_error";
    case EVD_ERR_CONTRACT: return "contract_error";
    case EVD_ERR_IO: return "io_error";
    case EVD_ERR_CONFIG: return "config_error";
    case EVD_ERR_NUMERIC: return "numeric_error";
    case EVD_ERR_INTERNAL: return "internal_error";
    case EVD_ERR_ARGUMENT: return "argument_error";
  }
  return "unknown";
}

const char* evd_last_error(void) { return g_last_error.c_str(); }

const char* evd_default_config(void) {
  g_scratch = ExperimentConfig{}.to_json().dump(2);
  return g_scratch.c_str();
}

evd_status evd_experiment_open(const char* config_path, const char* workdir, evd_experiment** out) {
  if (config_path == nullptr) return null_argument("config_path");
  json config;
  const auto st = guarded([&] { config = json::parse(evident::io::read_text(config_path)); });
  if (st != EVD_OK) return st;
  return open_impl(std::move(config), workdir, out);
}

evd_status evd_experiment_open_json(const char* config_json, const char* workdir, evd_experiment** out) {
  if (config_json == nullptr) return null_argument("config_json");
  json config;
  const auto st = guarded([&] { config = json::parse(config_json); });
  if (st != EVD_OK) return st;
  return open_impl(std::move(config), workdir, out);
}

void evd_experiment_close(evd_experiment* e) { delete e; }

evd_status evd_experiment_set_seed(evd_experiment* e, uint64_t seed) {
  if (e == nullptr) return null_argument("experiment");
  e->config["seed"] = seed;
  return EVD_OK;
}

evd_status evd_experiment_set_option(evd_experiment* e, const char* key, const char* value) {
  if (e == nullptr) return null_argument("experiment");
  if (key == nullptr || value == nullptr) return null_argument("key/value");
  return guarded([&] {
    json v = json::parse(value, nullptr, false);
    if (v.is_discarded()) v = std::string(value);
    json next = e->config;
    const std::string k(key);
    if (k.empty()) throw evident::ConfigError("empty option key");
    json::json_pointer ptr("/" + [&] {
      std::string s = k;
      for (auto& c : s) c = c == '.' ? '/' : c;
      return s;
    }());
    next[ptr] = v;
    ExperimentConfig::from_json(next);
    e->config = std::move(next);
  });
}

evd_status evd_experiment_set_logger(evd_experiment* e, evd_log_fn fn, void* user) {
  if (e == nullptr) return null_argument("experiment");
  e->log = fn;
  e->log_user = user;
  return EVD_OK;
}

evd_status evd_experiment_run(evd_experiment* e, const char* command) {
  if (e == nullptr) return null_argument("experiment");
  if (command == nullptr) return null_argument("command");
  return guarded([&] {
    evident::experiment::Logger log;
    if (e->log != nullptr) {
      log = [fn = e->log, user = e->log_user](const std::string& m) { fn(m.c_str(), user); };
    }
    Experiment ex(ExperimentConfig::from_json(e->config), e->root, log);
    e->summary = ex.run(command).dump(2);
  });
}

const char* evd_experiment_summary(const evd_experiment* e) { return e == nullptr ? "" : e->summary.c_str(); }

const char* evd_experiment_config(evd_experiment* e) {
  if (e == nullptr) return "";
  if (guarded([&] { e->config_text = ExperimentConfig::from_json(e->config).to_json().dump(2); }) != EVD_OK) {
    return "";
  }
  return e->config_text.c_str();
}

evd_status evd_opinion(const double* evidence, size_t k, double* belief, double* uncertainty) {
  if (evidence == nullptr || belief == nullptr || uncertainty == nullptr) return null_argument("evidence/out");
  return guarded([&] {
    const auto op = evident::evidential::evidence_to_opinion({evidence, k});
    for (size_t i = 0; i < k; ++i) belief[i] = op.belief[i];
    *uncertainty = op.uncertainty;
  });
}

}  // extern "C"
