#pragma once

// Run configuration: a flat `section.key = value` text document. Every key
// has a default; unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bayesmg/bpmf.hpp"
#include "bayesmg/errors.hpp"
#include "bayesmg/gibbs.hpp"
#include "bayesmg/io.hpp"
#include "bayesmg/map_init.hpp"

namespace bayesmg {

struct ConfigKey {
  const char* key;
  const char* default_value;
  const char* doc;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "0", "base seed; chain c uses seed + c"},
      {"run.out_dir", ".", "output directory"},
      {"gibbs.iters", "10000", "total iterations per chain"},
      {"gibbs.burn_in", "-1", "discarded iterations; -1 means 20% of iters"},
      {"gibbs.thin", "1", "keep every thin-th post burn-in draw"},
      {"gibbs.chains", "1", "independent chains"},
      {"gibbs.eta2", "sampled", "noise variance: sampled or fixed:<value>"},
      {"model.rank", "0", "rank R; 0 estimates it from the data"},
      {"model.alpha_sigma2", "0.01", "IG shape for sigma2"},
      {"model.beta_sigma2", "0.01", "IG rate for sigma2"},
      {"model.alpha_eta2", "0.01", "IG shape for eta2"},
      {"model.beta_eta2", "0.01", "IG rate for eta2"},
      {"sampler.t_dof", "4", "degrees of freedom of the D proposal"},
      {"sampler.inner_steps", "5", "MH steps per D update"},
      {"sampler.vmf_max_proposals", "1000000", "rejection cap for matrix vMF draws"},
      {"solver.lambda", "0", "soft-threshold level; 0 selects it by cross-validation"},
      {"solver.tol", "1e-6", "relative change stopping tolerance"},
      {"solver.max_iter", "500", "soft-impute iteration cap"},
      {"solver.cv_folds", "5", "cross-validation folds"},
      {"solver.rank_tol", "0.01", "relative singular-value cutoff for rank estimation"},
      {"bpmf.beta0", "2", "mean prior scale"},
      {"bpmf.nu", "0", "IW degrees of freedom; 0 means R + 2"},
      {"report.level", "0.95", "HPD interval level"},
  };
  return keys;
}

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.default_value;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_keys()) {
      if (key == k.key) return true;
    }
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw DomainError("config: unknown key '" + key + "'");
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw DomainError("config: unknown key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key) const { return detail::parse_double(get(key), "config " + key); }

  long long get_int(const std::string& key) const { return detail::parse_index(get(key), "config " + key); }

  /// `key = value` lines; `#` starts a comment. Later lines win.
  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) {
        throw DomainError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key(detail::trim(body.substr(0, eq)));
      const std::string value(detail::trim(body.substr(eq + 1)));
      if (!known(key)) throw DomainError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      values_[key] = value;
    }
  }

  void merge_file(const std::string& path) {
    auto in = detail::open_in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path);
  }

  /// Every key in documented order.
  std::string to_text() const {
    std::ostringstream out;
    for (const auto& k : config_keys()) out << k.key << " = " << values_.at(k.key) << '\n';
    return out.str();
  }

  std::uint64_t seed() const { return static_cast<std::uint64_t>(get_int("run.seed")); }

  GibbsConfig gibbs() const {
    GibbsConfig cfg;
    cfg.total_iters = static_cast<int>(get_int("gibbs.iters"));
    const long long burn = get_int("gibbs.burn_in");
    cfg.burn_in = burn < 0 ? cfg.total_iters / 5 : static_cast<int>(burn);
    cfg.thin = static_cast<int>(get_int("gibbs.thin"));
    cfg.n_chains = static_cast<int>(get_int("gibbs.chains"));
    cfg.seed = seed();
    cfg.eta2 = parse_eta2_mode(get("gibbs.eta2"));
    cfg.d_sampler.t_dof = get_double("sampler.t_dof");
    cfg.d_sampler.inner_steps = static_cast<int>(get_int("sampler.inner_steps"));
    cfg.vmf.max_proposals = static_cast<std::size_t>(get_int("sampler.vmf_max_proposals"));
    validate(cfg);
    return cfg;
  }

  SolverConfig solver() const {
    SolverConfig s;
    const double lambda = get_double("solver.lambda");
    if (lambda > 0.0) s.lambda_grid = {lambda};
    s.lambda = lambda;
    s.tol = get_double("solver.tol");
    s.max_iter = static_cast<int>(get_int("solver.max_iter"));
    s.cv_folds = static_cast<int>(get_int("solver.cv_folds"));
    s.rank_tol = get_double("solver.rank_tol");
    validate(s);
    return s;
  }

  /// Rank 0 in the document means "estimate"; the caller fills it in.
  Hyperparams hyper(Index rank) const {
    Hyperparams h;
    h.rank = rank;
    h.alpha_sigma2 = get_double("model.alpha_sigma2");
    h.beta_sigma2 = get_double("model.beta_sigma2");
    h.alpha_eta2 = get_double("model.alpha_eta2");
    h.beta_eta2 = get_double("model.beta_eta2");
    validate(h);
    return h;
  }

  BpmfHyper bpmf(Index rank) const {
    BpmfHyper h;
    h.rank = rank;
    h.beta0 = get_double("bpmf.beta0");
    h.nu = get_double("bpmf.nu");
    h.eta2 = parse_eta2_mode(get("gibbs.eta2"));
    h.alpha_eta2 = get_double("model.alpha_eta2");
    h.beta_eta2 = get_double("model.beta_eta2");
    validate(h);
    return h;
  }

  /// `sampled` or `fixed:<value>`.
  static Eta2Mode parse_eta2_mode(const std::string& text) {
    if (text == "sampled") return Eta2Mode::sample();
    if (text.rfind("fixed:", 0) == 0) {
      const double v = detail::parse_double(text.substr(6), "eta2 mode");
      detail::require_domain(v >= 0.0 && std::isfinite(v), "eta2 mode: fixed value must be non-negative");
      return Eta2Mode::fixed(v);
    }
    throw DomainError("eta2 mode: expected 'sampled' or 'fixed:<value>', got '" + text + "'");
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace bayesmg
