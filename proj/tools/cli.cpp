/*
 * Copyright 2026 The robcal Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "cli.hpp"

#include "robcal/emulator.hpp"
#include "robcal/io.hpp"
#include "robcal/multisource.hpp"
#include "robcal/predict.hpp"
#include "robcal/testbeds.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <future>
#include <sstream>

namespace robcal::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string join(const std::string& where, const std::string& key) { return where.empty() ? key : where + "." + key; }

[[noreturn]] void config_error(const std::string& field, const std::string& message) {
  throw InvalidArgument("config field '" + field + "': " + message);
}

const json& need(const json& node, const std::string& key, const std::string& where) {
  if (!node.is_object() || !node.contains(key)) config_error(join(where, key), "missing required field");
  return node.at(key);
}

template <class T>
T as(const json& node, const std::string& field) {
  try {
    return node.get<T>();
  } catch (const json::exception&) {
    config_error(field, "unexpected value " + node.dump());
  }
}

template <class T>
T opt(const json& node, const std::string& key, const std::string& where, T fallback) {
  if (!node.is_object() || !node.contains(key) || node.at(key).is_null()) return fallback;
  return as<T>(node.at(key), join(where, key));
}

Vector to_vector(const json& node, const std::string& field) {
  const auto values = node.is_number() ? std::vector<double>{node.get<double>()} : as<std::vector<double>>(node, field);
  return Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.begin(), v.end()}; }

/// [[lo, hi], ...] or a single [lo, hi].
Matrix theta_range_from(const json& node, const std::string& field) {
  if (!node.is_array() || node.empty()) config_error(field, "expected [lo, hi] or a list of [lo, hi] pairs");
  std::vector<std::vector<double>> rows;
  if (node.front().is_number()) rows.push_back(as<std::vector<double>>(node, field));
  else rows = as<std::vector<std::vector<double>>>(node, field);
  Matrix range(static_cast<Eigen::Index>(rows.size()), 2);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != 2) config_error(field, "each range needs exactly two values");
    if (!(rows[i][0] < rows[i][1])) config_error(field, "lower bound must be below the upper bound");
    range(static_cast<Eigen::Index>(i), 0) = rows[i][0];
    range(static_cast<Eigen::Index>(i), 1) = rows[i][1];
  }
  return range;
}

struct Context {
  json config;
  fs::path base;
  fs::path output;
  std::ostream* err = nullptr;

  void warn(const std::string& message) const { *err << ojson{{"warning", message}}.dump() << '\n'; }

  fs::path path(const json& node, const std::string& field) const {
    const fs::path p(as<std::string>(node, field));
    return p.is_absolute() ? p : base / p;
  }

  Matrix matrix(const json& node, const std::string& field) const { return read_csv(path(node, field)).values; }

  fs::path out(const std::string& name) const { return output / name; }
};

Context load_context(const std::string& config_path, const std::vector<std::string>& overrides,
                     const std::string& output_override, std::ostream& err) {
  Context ctx;
  ctx.err = &err;
  const std::string text = read_text(config_path);
  try {
    ctx.config = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(config_path + ": " + e.what());
  }
  if (!ctx.config.is_object()) throw InvalidArgument(config_path + ": top level must be a JSON object");
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw InvalidArgument("--set expects key=value, got '" + item + "'");
    std::string pointer = "/" + item.substr(0, eq);
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const std::string raw = item.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    try {
      ctx.config[json::json_pointer(pointer)] = value;
    } catch (const json::exception& e) {
      throw InvalidArgument("--set " + item + ": " + e.what());
    }
  }
  ctx.base = fs::absolute(fs::path(config_path)).parent_path();
  const std::string output = output_override.empty() ? opt<std::string>(ctx.config, "output_dir", "", "out")
                                                     : output_override;
  ctx.output = fs::path(output).is_absolute() ? fs::path(output) : ctx.base / output;
  return ctx;
}

// ---------------------------------------------------------------------------------------------
// Problem assembly

KernelSpec kernel_from(const json& node, const std::string& where, int p_x) {
  if (!node.is_object() || !node.contains("kernel")) return KernelSpec::uniform(KernelFamily::Matern52, p_x);
  const json& k = node.at("kernel");
  const std::string field = join(where, "kernel");
  if (k.is_string()) return KernelSpec::uniform(parse_kernel_family(k.get<std::string>()), p_x);
  const json& family = need(k, "family", field);
  KernelSpec spec;
  if (family.is_string()) {
    spec = KernelSpec::uniform(parse_kernel_family(family.get<std::string>()), p_x);
  } else {
    for (const auto& name : as<std::vector<std::string>>(family, join(field, "family")))
      spec.families.push_back(parse_kernel_family(name));
    spec.alpha.assign(spec.families.size(), 1.9);
  }
  if (k.contains("alpha")) {
    const Vector alpha = to_vector(k.at("alpha"), join(field, "alpha"));
    if (alpha.size() == 1) spec.alpha.assign(spec.families.size(), alpha[0]);
    else spec.alpha = to_std(alpha);
  }
  if (spec.dim() != p_x) config_error(field, "needs one family per input dimension (" + std::to_string(p_x) + ")");
  spec.validate();
  return spec;
}

EmulatorDesign emulator_design(const Context& ctx, const json& node, const std::string& where) {
  EmulatorDesign d;
  d.inputs = ctx.matrix(need(node, "inputs", where), join(where, "inputs"));
  d.outputs = ctx.matrix(need(node, "outputs", where), join(where, "outputs"));
  d.nugget = opt<bool>(node, "nugget", where, false);
  d.loc_index = opt<std::vector<int>>(node, "loc_index", where, {});
  if (node.contains("coordinate_inputs"))
    d.coordinate_inputs = ctx.matrix(node.at("coordinate_inputs"), join(where, "coordinate_inputs"));
  d.validate();
  return d;
}

FittedEmulator fit_emulator(const EmulatorDesign& design, const std::string& kind, const EmulatorFitOptions& options,
                            const std::string& field) {
  if (kind == "scalar" || (kind == "auto" && design.coordinates() == 1)) {
    if (design.coordinates() != 1) config_error(field, "the scalar emulator needs a single output column");
    return fit_scalar(design, options);
  }
  if (kind != "auto" && kind != "vector") config_error(field, "kind must be auto, scalar or vector");
  return fit_ppgasp(design, options);
}

/// Simulator bound from a builtin id, a saved emulator, or a table of runs fitted on load.
Simulator bind_simulator(const Context& ctx, const json& binding, const std::string& where, const Matrix& design,
                         int p_theta) {
  const auto through = [&](const FittedEmulator& emulator) {
    CalibrationProblem shell;
    shell.design = design;
    shell.theta_range = Matrix::Zero(p_theta, 2);
    return bind_emulator(std::move(shell), emulator).simulator;
  };
  if (binding.is_string()) return bind_simulator(ctx, json{{"builtin", binding}}, where, design, p_theta);
  if (binding.contains("builtin")) {
    const std::string id = as<std::string>(binding.at("builtin"), join(where, "builtin"));
    if (id == "bayarri07") return bayarri07_simulator();
    if (id == "box") return box_simulator(opt<double>(binding, "step", where, 0.5));
    if (id == "sine") return sine_simulator();
    if (id == "lorenz96") {
      const Matrix x0 = ctx.matrix(need(binding, "x0", where), join(where, "x0"));
      return lorenz96_simulator(x0.reshaped(), opt<int>(binding, "steps", where, 40), opt<double>(binding, "h", where, 0.05));
    }
    config_error(join(where, "builtin"), "unknown simulator '" + id + "' (bayarri07, box, sine, lorenz96)");
  }
  if (binding.contains("emulator")) return through(load_emulator(ctx.path(binding.at("emulator"), join(where, "emulator")).string()));
  if (binding.contains("table")) {
    const std::string field = join(where, "table");
    const json& table = binding.at("table");
    EmulatorFitOptions options;
    options.seed = opt<std::uint64_t>(table, "seed", field, 1);
    return through(fit_emulator(emulator_design(ctx, table, field), opt<std::string>(table, "kind", field, "auto"),
                                options, field));
  }
  config_error(where, "expected one of builtin, emulator, table");
}

std::optional<Matrix> trend_from(const Context& ctx, const json& node, const std::string& where, int n) {
  if (!node.contains("trend") || node.at("trend").is_null()) return std::nullopt;
  const json& t = node.at("trend");
  if (t.is_string() && t.get<std::string>() == "constant") return Matrix::Ones(n, 1);
  Matrix H = ctx.matrix(t, join(where, "trend"));
  if (H.rows() != n) config_error(join(where, "trend"), "needs one row per field input");
  return H;
}

Vector weights_from(const Context& ctx, const json& node, const std::string& where) {
  if (!node.contains("output_weights")) return {};
  const json& w = node.at("output_weights");
  if (w.is_array()) return to_vector(w, join(where, "output_weights"));
  return ctx.matrix(w, join(where, "output_weights")).reshaped();
}

CalibrationProblem build_problem(const Context& ctx) {
  const json& c = ctx.config;
  CalibrationProblem p;
  p.theta_range = theta_range_from(need(c, "theta_range", ""), "theta_range");
  p.design = ctx.matrix(need(c, "design", ""), "design");
  p.observations = read_observations(ctx.path(need(c, "observations", ""), "observations"), p.n());
  p.trend = trend_from(ctx, c, "", p.n());
  p.output_weights = weights_from(ctx, c, "");
  p.discrepancy = parse_discrepancy(opt<std::string>(c, "discrepancy", "", "S-GaSP"));
  p.kernel = kernel_from(c, "", p.p_x());
  if (c.contains("lambda_z") && !c.at("lambda_z").is_null()) p.lambda_z = as<double>(c.at("lambda_z"), "lambda_z");
  p.simulator = bind_simulator(ctx, need(c, "simulator", ""), "simulator", p.design, p.p_theta());
  p.validate();
  return p;
}

McmcConfig mcmc_from(const json& c) {
  const json node = c.value("mcmc", json::object());
  McmcConfig m;
  m.samples = opt<int>(node, "S", "mcmc", m.samples);
  m.burn_in = opt<int>(node, "S_0", "mcmc", m.burn_in);
  m.thinning = opt<int>(node, "thinning", "mcmc", m.thinning);
  m.seed = opt<std::uint64_t>(node, "seed", "mcmc", m.seed);
  if (node.contains("sd_proposal")) m.sd_proposal = to_vector(node.at("sd_proposal"), "mcmc.sd_proposal");
  if (node.contains("initial_theta")) m.initial_theta = to_vector(node.at("initial_theta"), "mcmc.initial_theta");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------------------------
// Summaries

ojson column_stats(const Vector& values) {
  std::vector<double> v(values.begin(), values.end());
  return ojson{{"mean", values.mean()},
               {"median", quantile_type7(v, 0.5)},
               {"lower_95", quantile_type7(v, 0.025)},
               {"upper_95", quantile_type7(v, 0.975)}};
}

ojson table_stats(const Matrix& draws, const std::vector<std::string>& columns) {
  ojson out = ojson::object();
  for (std::size_t j = 0; j < columns.size(); ++j) out[columns[j]] = column_stats(draws.col(static_cast<Eigen::Index>(j)));
  return out;
}

double rate(std::size_t accepted, int iterations) { return iterations ? static_cast<double>(accepted) / iterations : 0.0; }

std::string suffix(int chain, int chains) { return chains > 1 ? "_" + std::to_string(chain) : ""; }

void write_json(const fs::path& path, const ojson& value) { write_text(path, value.dump(2) + "\n"); }

// ---------------------------------------------------------------------------------------------
// calibrate

void calibrate_mcmc(const Context& ctx, const CalibrationProblem& problem, int chains) {
  const McmcConfig base = mcmc_from(ctx.config);
  std::vector<std::future<PosteriorSamples>> jobs;
  for (int i = 0; i < chains; ++i) {
    McmcConfig config = base;
    config.seed = base.seed + static_cast<std::uint64_t>(i);
    jobs.push_back(std::async(std::launch::async, [&problem, config] { return run_mcmc(problem, config); }));
  }
  for (int i = 0; i < chains; ++i) {
    const PosteriorSamples post = jobs[static_cast<std::size_t>(i)].get();
    Matrix table = post.draws;
    std::vector<std::string> columns = post.columns;
    if (post.lambda_z.size()) {
      table.conservativeResize(Eigen::NoChange, table.cols() + 1);
      table.col(table.cols() - 1) = post.lambda_z;
      columns.emplace_back("lambda_z");
    }
    const std::string chain_name = "chain" + suffix(i + 1, chains) + ".csv";
    write_csv(ctx.out(chain_name), table, columns);
    ojson summary{{"command", "calibrate"},
                  {"method", "post_sample"},
                  {"discrepancy", to_string(problem.discrepancy)},
                  {"seed", base.seed + static_cast<std::uint64_t>(i)},
                  {"S", base.samples},
                  {"S_0", base.burn_in},
                  {"thinning", base.thinning},
                  {"rows", post.rows()},
                  {"chain_file", chain_name},
                  {"parameters", table_stats(post.draws, post.columns)},
                  {"acceptance", {{"theta", post.theta_acceptance_rate()}}},
                  {"jitter", post.max_jitter}};
    if (post.has_kernel()) summary["acceptance"]["kernel"] = post.kernel_acceptance_rate();
    if (post.lambda_z.size()) {
      summary["lambda_z"] = column_stats(post.lambda_z);
      summary["lambda_z"]["min"] = post.lambda_z.minCoeff();
      summary["lambda_z"]["max"] = post.lambda_z.maxCoeff();
    } else {
      summary["lambda_z"] = nullptr;
    }
    write_json(ctx.out("summary" + suffix(i + 1, chains) + ".json"), summary);
  }
}

void calibrate_mle(const Context& ctx, const CalibrationProblem& problem) {
  const json node = ctx.config.value("mle", json::object());
  MleConfig config;
  config.restarts = opt<int>(node, "restarts", "mle", config.restarts);
  config.seed = opt<std::uint64_t>(node, "seed", "mle", config.seed);
  const MleResult fit = run_mle(problem, config);
  int converged = 0;
  for (const OptimizerTrace& t : fit.traces) converged += t.converged ? 1 : 0;
  ojson summary{{"command", "calibrate"},
                {"method", "mle"},
                {"discrepancy", to_string(fit.discrepancy)},
                {"theta", to_std(fit.theta)},
                {"theta_m", to_std(fit.theta_m)},
                {"sigma2_0", fit.sigma2_0},
                {"loglik", fit.loglik},
                {"starts", fit.traces.size()},
                {"converged_starts", converged}};
  if (fit.discrepancy != Discrepancy::None) {
    summary["gamma"] = to_std(fit.range.gamma);
    summary["eta"] = fit.eta;
  }
  if (fit.discrepancy == Discrepancy::SGaSP) summary["lambda_z"] = fit.lambda_z;
  write_json(ctx.out("summary.json"), summary);
}

MleResult mle_from_summary(const fs::path& path) {
  json s;
  try {
    s = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  if (s.value("method", "") != "mle") throw InvalidArgument(path.string() + ": not an MLE summary");
  const std::string where = path.filename().string();
  MleResult fit;
  fit.discrepancy = parse_discrepancy(as<std::string>(need(s, "discrepancy", where), "discrepancy"));
  fit.theta = to_vector(need(s, "theta", where), "theta");
  fit.theta_m = to_vector(need(s, "theta_m", where), "theta_m");
  fit.sigma2_0 = as<double>(need(s, "sigma2_0", where), "sigma2_0");
  if (fit.discrepancy != Discrepancy::None) {
    fit.range = RangeParams::from_gamma(to_vector(need(s, "gamma", where), "gamma"));
    fit.eta = as<double>(need(s, "eta", where), "eta");
  }
  if (fit.discrepancy == Discrepancy::SGaSP) fit.lambda_z = as<double>(need(s, "lambda_z", where), "lambda_z");
  return fit;
}

PosteriorSamples chain_from_csv(const fs::path& path, const CalibrationProblem& problem) {
  const Table t = read_csv(path);
  PosteriorSamples post;
  post.discrepancy = problem.discrepancy;
  post.p_theta = problem.p_theta();
  post.p_x = problem.p_x();
  post.q = problem.q();
  post.columns = posterior_columns(post.discrepancy, post.p_theta, post.p_x, post.q);
  std::vector<std::string> expected = post.columns;
  if (post.discrepancy == Discrepancy::SGaSP) expected.emplace_back("lambda_z");
  if (t.header != expected)
    throw InvalidArgument(path.string() + ": chain columns do not match the configured problem");
  const auto width = static_cast<Eigen::Index>(post.columns.size());
  post.draws = t.values.leftCols(width);
  if (post.discrepancy == Discrepancy::SGaSP) post.lambda_z = t.values.col(width);
  post.iterations = post.rows();
  return post;
}

// ---------------------------------------------------------------------------------------------
// multi-source

MultiSourceProblem build_multisource(const Context& ctx) {
  const json& c = ctx.config;
  MultiSourceProblem p;
  p.theta_range = theta_range_from(need(c, "theta_range", ""), "theta_range");
  const json& sources = need(c, "sources", "");
  if (!sources.is_array() || sources.empty()) config_error("sources", "expected a non-empty list");
  for (std::size_t l = 0; l < sources.size(); ++l) {
    const std::string where = "sources." + std::to_string(l);
    const json& s = sources[l];
    SourceSpec spec;
    spec.design = ctx.matrix(need(s, "design", where), join(where, "design"));
    const int n = static_cast<int>(spec.design.rows());
    spec.observations = read_observations(ctx.path(need(s, "observations", where), join(where, "observations")), n);
    spec.index_theta = opt<std::vector<int>>(s, "index_theta", where, {});
    spec.trend = trend_from(ctx, s, where, n);
    spec.output_weights = weights_from(ctx, s, where);
    spec.discrepancy = parse_discrepancy(opt<std::string>(s, "discrepancy", where, "GaSP"));
    spec.kernel = kernel_from(s, where, static_cast<int>(spec.design.cols()));
    if (s.contains("lambda_z")) spec.lambda_z = as<double>(s.at("lambda_z"), join(where, "lambda_z"));
    const int p_theta = spec.index_theta.empty() ? p.p_theta() : static_cast<int>(spec.index_theta.size());
    spec.simulator = bind_simulator(ctx, need(s, "simulator", where), join(where, "simulator"), spec.design, p_theta);
    p.sources.push_back(std::move(spec));
  }
  p.measurement_bias = opt<bool>(c, "measurement_bias", "", false);
  if (p.measurement_bias) {
    p.shared_design = c.contains("shared_design") ? ctx.matrix(c.at("shared_design"), "shared_design")
                                                  : p.sources.front().design;
    p.discrepancy = parse_discrepancy(opt<std::string>(c, "discrepancy", "", "S-GaSP"));
    p.kernel = kernel_from(c, "", static_cast<int>(p.shared_design->cols()));
    if (c.contains("lambda_z")) p.lambda_z = as<double>(c.at("lambda_z"), "lambda_z");
  }
  p.validate();
  return p;
}

MsMcmcConfig ms_mcmc_from(const json& c, int p_theta) {
  const json node = c.value("mcmc", json::object());
  MsMcmcConfig m;
  m.samples = opt<int>(node, "S", "mcmc", m.samples);
  m.burn_in = opt<int>(node, "S_0", "mcmc", m.burn_in);
  m.thinning = opt<int>(node, "thinning", "mcmc", m.thinning);
  m.seed = opt<std::uint64_t>(node, "seed", "mcmc", m.seed);
  m.sd_kernel = opt<double>(node, "sd_kernel", "mcmc", m.sd_kernel);
  if (node.contains("sd_theta")) m.sd_theta = to_vector(node.at("sd_theta"), "mcmc.sd_theta");
  if (node.contains("initial_theta")) m.initial_theta = to_vector(node.at("initial_theta"), "mcmc.initial_theta");
  m.validate(p_theta);
  return m;
}

PredictionRequest request_from(const Context& ctx, int n_trend_cols);

void calibrate_multisource(const Context& ctx, int chains) {
  const MultiSourceProblem problem = build_multisource(ctx);
  const MsMcmcConfig base = ms_mcmc_from(ctx.config, problem.p_theta());
  std::vector<std::future<MsPosterior>> jobs;
  for (int i = 0; i < chains; ++i) {
    MsMcmcConfig config = base;
    config.seed = base.seed + static_cast<std::uint64_t>(i);
    jobs.push_back(std::async(std::launch::async, [&problem, config] { return ms_mcmc(problem, config); }));
  }
  for (int i = 0; i < chains; ++i) {
    const MsPosterior post = jobs[static_cast<std::size_t>(i)].get();
    std::vector<Matrix> blocks{post.theta};
    std::vector<std::string> columns;
    for (int j = 0; j < problem.p_theta(); ++j) columns.push_back("theta_" + std::to_string(j + 1));
    if (post.measurement_bias) {
      blocks.push_back(post.shared_log_beta);
      for (Eigen::Index j = 0; j < post.shared_log_beta.cols(); ++j)
        columns.push_back("shared_log_beta_" + std::to_string(j + 1));
      blocks.emplace_back(post.shared_sigma2);
      columns.emplace_back("shared_sigma2");
      if (post.shared_lambda_z.size()) {
        blocks.emplace_back(post.shared_lambda_z);
        columns.emplace_back("shared_lambda_z");
      }
    }
    for (int l = 0; l < problem.k(); ++l) {
      const MsSourceChain& s = post.sources[static_cast<std::size_t>(l)];
      const std::string tag = "source_" + std::to_string(l + 1) + "_";
      if (s.log_params.cols()) {
        blocks.push_back(s.log_params);
        for (Eigen::Index j = 0; j + 1 < s.log_params.cols(); ++j) columns.push_back(tag + "log_beta_" + std::to_string(j + 1));
        columns.push_back(tag + "log_eta");
      }
      blocks.emplace_back(s.sigma2_0);
      columns.push_back(tag + "sigma2_0");
      if (s.theta_m.cols()) {
        blocks.push_back(s.theta_m);
        for (Eigen::Index j = 0; j < s.theta_m.cols(); ++j) columns.push_back(tag + "theta_m_" + std::to_string(j + 1));
      }
    }
    Matrix table(post.rows(), static_cast<Eigen::Index>(columns.size()));
    Eigen::Index c = 0;
    for (const Matrix& b : blocks) {
      table.middleCols(c, b.cols()) = b;
      c += b.cols();
    }
    const std::string chain_name = "chain" + suffix(i + 1, chains) + ".csv";
    write_csv(ctx.out(chain_name), table, columns);
    ojson summary{{"command", "calibrate"},
                  {"method", "post_sample"},
                  {"sources", problem.k()},
                  {"measurement_bias", post.measurement_bias},
                  {"seed", base.seed + static_cast<std::uint64_t>(i)},
                  {"S", base.samples},
                  {"S_0", base.burn_in},
                  {"thinning", base.thinning},
                  {"rows", post.rows()},
                  {"chain_file", chain_name},
                  {"parameters", table_stats(table, columns)},
                  {"acceptance", {{"theta", post.theta_acceptance_rate()}}}};
    if (post.measurement_bias) {
      summary["discrepancy"] = to_string(post.discrepancy);
      summary["acceptance"]["shared"] = rate(post.accept_shared.size(), post.iterations);
      summary["shared_eta"] = post.shared_eta;
    }
    write_json(ctx.out("summary" + suffix(i + 1, chains) + ".json"), summary);

    if (ctx.config.contains("predict")) {
      const PredictionRequest req = request_from(ctx, 0);
      std::vector<Matrix> X_testing;
      const json& pred = ctx.config.at("predict");
      if (pred.contains("X_testing")) {
        for (const json& entry : as<json::array_t>(pred.at("X_testing"), "predict.X_testing"))
          X_testing.push_back(ctx.matrix(entry, "predict.X_testing"));
      }
      const MsPrediction mp = ms_predict(problem, post, req.testing_input, X_testing, req.max_draws);
      for (int l = 0; l < problem.k(); ++l) {
        const auto ul = static_cast<std::size_t>(l);
        std::vector<std::string> names{"model", "reality"};
        Matrix out(req.testing_input.rows(), post.measurement_bias ? 4 : 2);
        out.col(0) = mp.model[ul];
        out.col(1) = mp.reality[ul];
        if (post.measurement_bias) {
          out.col(2) = mp.discrepancy;
          out.col(3) = mp.bias[ul];
          names.insert(names.end(), {"discrepancy", "bias"});
        }
        write_csv(ctx.out("prediction" + suffix(i + 1, chains) + "_source_" + std::to_string(l + 1) + ".csv"), out,
                  names);
      }
    }
  }
}

// ---------------------------------------------------------------------------------------------
// predict

PredictionRequest request_from(const Context& ctx, int n_trend_cols) {
  const json& node = need(ctx.config, "predict", "");
  PredictionRequest req;
  req.testing_input = ctx.matrix(need(node, "testing_input", "predict"), "predict.testing_input");
  if (node.contains("X_testing") && n_trend_cols > 0) {
    const json& x = node.at("X_testing");
    if (x.is_string() && x.get<std::string>() == "constant") {
      if (n_trend_cols != 1) config_error("predict.X_testing", "'constant' needs a one-column trend");
      req.X_testing = Matrix::Ones(req.testing_input.rows(), 1);
    } else {
      req.X_testing = ctx.matrix(x, "predict.X_testing");
    }
  }
  if (node.contains("testing_weights")) {
    const json& w = node.at("testing_weights");
    req.testing_weights = w.is_array() ? to_vector(w, "predict.testing_weights")
                                       : Vector(ctx.matrix(w, "predict.testing_weights").reshaped());
  }
  req.interval_probs = opt<std::vector<double>>(node, "interval_est", "predict", {0.025, 0.975});
  req.interval_data = opt<bool>(node, "interval_data", "predict", false);
  req.seed = opt<std::uint64_t>(node, "seed", "predict", 1);
  req.max_draws = opt<int>(node, "max_draws", "predict", 0);
  return req;
}

void predict(const Context& ctx) {
  if (ctx.config.contains("sources"))
    config_error("predict", "multi-source predictions are written by calibrate when a predict block is present");
  const CalibrationProblem problem = build_problem(ctx);
  const json& node = need(ctx.config, "predict", "");
  if (node.contains("X_testing") && problem.q() == 0)
    ctx.warn("X_testing is ignored because the fitted model has no trend");
  const PredictionRequest req = request_from(ctx, problem.q());
  const std::string method = opt<std::string>(ctx.config, "method", "", "post_sample");
  PredictionResult result;
  if (method == "mle") {
    const fs::path fit = node.contains("fit") ? ctx.path(node.at("fit"), "predict.fit") : ctx.out("summary.json");
    result = predict_plugin(problem, mle_from_summary(fit), req);
  } else if (method == "post_sample") {
    const fs::path chain = node.contains("chain") ? ctx.path(node.at("chain"), "predict.chain") : ctx.out("chain.csv");
    result = predict_posterior(problem, chain_from_csv(chain, problem), req);
  } else {
    config_error("method", "expected post_sample or mle");
  }
  const auto m = req.testing_input.rows();
  Matrix out(m, 3 + result.bounds.cols());
  out.col(0) = result.math_model_mean_no_trend;
  out.col(1) = result.math_model_mean;
  out.col(2) = result.mean;
  std::vector<std::string> names{"math_model_mean_no_trend", "math_model_mean", "mean"};
  for (Eigen::Index j = 0; j < result.bounds.cols(); ++j) {
    out.col(3 + j) = result.bounds.col(j);
    std::ostringstream name;
    name << "bound_" << result.interval_probs[static_cast<std::size_t>(j)];
    names.push_back(name.str());
  }
  const std::string file = opt<std::string>(node, "output", "predict", "prediction.csv");
  write_csv(ctx.out(file), out, names);
  if (result.skipped_draws > 0)
    ctx.warn(std::to_string(result.skipped_draws) + " posterior draws were skipped after simulator failures");
}

// ---------------------------------------------------------------------------------------------
// emulate

void emulate(const Context& ctx) {
  const json& node = need(ctx.config, "emulate", "");
  const EmulatorDesign design = emulator_design(ctx, node, "emulate");
  EmulatorFitOptions options;
  options.restarts = opt<int>(node, "restarts", "emulate", options.restarts);
  options.seed = opt<std::uint64_t>(node, "seed", "emulate", options.seed);
  const FittedEmulator emulator =
      fit_emulator(design, opt<std::string>(node, "kind", "emulate", "auto"), options, "emulate.kind");
  const std::string file = opt<std::string>(node, "output", "emulate", "emulator.json");
  save_emulator(emulator, ctx.out(file).string());

  // leave-one-out at the fitted hyperparameters
  const int D = design.runs();
  const int k = design.coordinates();
  Matrix errors(D, k);
  Matrix standardized(D, k);
  if (D >= 3) {
    for (int i = 0; i < D; ++i) {
      EmulatorDesign sub = design;
      sub.inputs.resize(D - 1, design.dim());
      sub.outputs.resize(D - 1, k);
      for (int r = 0, s = 0; r < D; ++r) {
        if (r == i) continue;
        sub.inputs.row(s) = design.inputs.row(r);
        sub.outputs.row(s) = design.outputs.row(r);
        ++s;
      }
      const FittedEmulator held = FittedEmulator::condition(sub, emulator.kind(), emulator.range(), emulator.eta());
      const Vector x = design.inputs.row(i).transpose();
      errors.row(i) = (held.predict(x) - design.outputs.row(i).transpose()).transpose();
      const Vector sd = held.predict_variance(x).cwiseMax(1e-300).cwiseSqrt();
      standardized.row(i) = errors.row(i).cwiseQuotient(sd.transpose());
    }
  }
  ojson report{{"kind", emulator.kind() == EmulatorKind::Scalar ? "scalar" : "vector"},
               {"runs", D},
               {"input_dim", design.dim()},
               {"coordinates", k},
               {"nugget", design.nugget},
               {"gamma", to_std(emulator.range().gamma)},
               {"eta", emulator.eta()},
               {"jitter", emulator.jitter()},
               {"log_marginal_posterior", emulator.log_marginal_posterior()},
               {"emulator_file", file}};
  if (k <= 20) {
    report["mean"] = to_std(emulator.mean());
    report["variance"] = to_std(emulator.variance());
  }
  if (D >= 3) {
    const double range = (design.outputs.maxCoeff() - design.outputs.minCoeff());
    const double rmse = std::sqrt(errors.squaredNorm() / static_cast<double>(errors.size()));
    report["loo"] = ojson{{"rmse", rmse},
                          {"rmse_over_range", range > 0 ? rmse / range : 0.0},
                          {"max_abs_error", errors.cwiseAbs().maxCoeff()},
                          {"standardized_rms", std::sqrt(standardized.squaredNorm() / static_cast<double>(errors.size()))}};
  } else {
    report["loo"] = nullptr;
  }
  write_json(ctx.out(opt<std::string>(node, "report", "emulate", "emulator_report.json")), report);
}

// ---------------------------------------------------------------------------------------------
// simulate

Matrix column(const Vector& v) { return v; }

void simulate(const Context& ctx) {
  const json& node = need(ctx.config, "simulate", "");
  const std::string testbed = as<std::string>(need(node, "testbed", "simulate"), "simulate.testbed");
  Rng rng(opt<std::uint64_t>(node, "seed", "simulate", 1));
  if (testbed == "bayarri07" || testbed == "box") {
    const FieldData data = testbed == "box" ? box_data() : bayarri07_data();
    write_csv(ctx.out("design.csv"), data.design, {testbed == "box" ? "t" : "x"});
    write_observations_wide(ctx.out("observations.csv"), data.observations);
    if (testbed == "bayarri07") {
      const int m = opt<int>(node, "testing_points", "simulate", 200);
      const Vector xs = Vector::LinSpaced(m, 0.0, 5.0);
      Matrix truth(m, 2);
      truth.col(0) = xs;
      for (int i = 0; i < m; ++i) truth(i, 1) = bayarri07_reality(xs[i]);
      write_csv(ctx.out("testing_input.csv"), column(xs), {"x"});
      write_csv(ctx.out("truth.csv"), truth, {"x", "reality"});
    }
  } else if (testbed == "lorenz96") {
    const int scenario = opt<int>(node, "scenario", "simulate", 1);
    if (scenario != 1 && scenario != 2) config_error("simulate.scenario", "expected 1 or 2");
    const int k = opt<int>(node, "states", "simulate", 40);
    const int steps = opt<int>(node, "steps", "simulate", 40);
    const double fraction = opt<double>(node, "observed_fraction", "simulate", 0.05);
    if (!(fraction > 0.0 && fraction <= 1.0)) config_error("simulate.observed_fraction", "must lie in (0, 1]");
    const int per_time = std::max(1, static_cast<int>(std::lround(fraction * k)));
    const Lorenz96Data data = lorenz96_scenario(scenario, rng, opt<double>(node, "forcing", "simulate", 8.0), k, steps,
                                                opt<double>(node, "h", "simulate", 0.05), per_time);
    write_csv(ctx.out("design.csv"), data.design, {"j", "t"});
    write_csv(ctx.out("observations.csv"), column(data.observations), {"y"});
    write_csv(ctx.out("x0.csv"), column(data.x0), {"x0"});
    std::vector<std::string> names;
    for (int j = 0; j < k; ++j) names.push_back("x" + std::to_string(j + 1));
    write_csv(ctx.out("truth.csv"), data.reality, names);
  } else if (testbed == "multisource") {
    const int n = opt<int>(node, "n", "simulate", 100);
    const int k = opt<int>(node, "k", "simulate", 5);
    const MultiSourceData data = multisource_simulate(rng, n, k, opt<double>(node, "sigma", "simulate", 0.2),
                                                      opt<double>(node, "noise_sd", "simulate", 0.05));
    write_csv(ctx.out("design.csv"), column(data.x), {"x"});
    Matrix truth(n, 3 + k);
    truth.col(0) = data.x;
    truth.col(1) = data.reality;
    truth.col(2) = data.delta;
    std::vector<std::string> names{"x", "reality", "delta"};
    for (int l = 0; l < k; ++l) {
      const auto ul = static_cast<std::size_t>(l);
      write_csv(ctx.out("observations_" + std::to_string(l + 1) + ".csv"), column(data.observations[ul]), {"y"});
      truth.col(3 + l) = data.bias[ul];
      names.push_back("bias_" + std::to_string(l + 1));
    }
    write_csv(ctx.out("truth.csv"), truth, names);
  } else {
    config_error("simulate.testbed", "unknown testbed '" + testbed + "' (bayarri07, box, lorenz96, multisource)");
  }
}

int report_error(std::ostream& err, int code, const std::string& kind, const std::string& message) {
  err << ojson{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}}.dump() << '\n';
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Robust calibration of computer models"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string output;
  int chains = 1;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "JSON run configuration")->required();
    sub->add_option("--set", overrides, "override a config value, key=value (dotted keys for nesting)");
    sub->add_option("--output", output, "output directory (overrides output_dir)");
  };
  CLI::App* calibrate = app.add_subcommand("calibrate", "posterior sampling or maximum likelihood");
  common(calibrate);
  calibrate->add_option("--chains", chains, "independent chains with consecutive seeds")->check(CLI::PositiveNumber);
  for (const char* name : {"predict", "emulate", "simulate"}) common(app.add_subcommand(name));
  app.get_subcommand("predict")->description("predict from a chain or MLE summary");
  app.get_subcommand("emulate")->description("fit and save an emulator with a diagnostic report");
  app.get_subcommand("simulate")->description("write a builtin test problem to CSV");

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, kExitConfig, "config", e.what());
  }

  try {
    const Context ctx = load_context(config_path, overrides, output, err);
    fs::create_directories(ctx.output);
    if (calibrate->parsed()) {
      if (ctx.config.contains("sources")) {
        calibrate_multisource(ctx, chains);
      } else {
        const CalibrationProblem problem = build_problem(ctx);
        const std::string method = opt<std::string>(ctx.config, "method", "", "post_sample");
        if (method == "mle") calibrate_mle(ctx, problem);
        else if (method == "post_sample") calibrate_mcmc(ctx, problem, chains);
        else config_error("method", "expected post_sample or mle");
      }
    } else if (app.get_subcommand("predict")->parsed()) {
      predict(ctx);
    } else if (app.get_subcommand("emulate")->parsed()) {
      emulate(ctx);
    } else {
      simulate(ctx);
    }
  } catch (const Error& e) {
    switch (e.kind()) {
      case ErrorKind::Config: return report_error(err, kExitConfig, "config", e.what());
      case ErrorKind::Numeric: return report_error(err, kExitNumeric, "numeric", e.what());
      case ErrorKind::Io: return report_error(err, kExitIo, "io", e.what());
    }
  } catch (const fs::filesystem_error& e) {
    return report_error(err, kExitIo, "io", e.what());
  } catch (const std::exception& e) {
    return report_error(err, kExitNumeric, "numeric", e.what());
  }
  return kExitOk;
}

}  // namespace robcal::cli
