#pragma once

// Subcommands of the `spreadout` tool. Each command is an ordinary function
// returning an exit code so it can be driven in-process as well as from
// tools/spreadout.cpp.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or numeric failure.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "spreadout/config.hpp"
#include "spreadout/csv.hpp"
#include "spreadout/data.hpp"
#include "spreadout/encoder.hpp"
#include "spreadout/error.hpp"
#include "spreadout/eval.hpp"
#include "spreadout/pipeline.hpp"
#include "spreadout/random.hpp"
#include "spreadout/sphere_math.hpp"
#include "spreadout/trainer.hpp"

namespace spreadout::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2 };

namespace detail {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const DomainError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
}

inline std::vector<std::size_t> parse_size_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  for (const std::string& tok : RunConfig::split_list(s)) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = tok[0] == '-' ? 0 : std::stoull(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError(std::string(what) + ": '" + tok + "' is not a non-negative integer");
    out.push_back(v);
  }
  return out;
}

inline std::vector<double> parse_real_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const std::string& tok : RunConfig::split_list(s)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size()) throw ConfigError(std::string(what) + ": '" + tok + "' is not a number");
    out.push_back(v);
  }
  return out;
}

inline std::string fixed(double v, int digits = 6) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------- generate

inline int cmd_generate(const GeneratorConfig& gen, const std::string& out_path, std::ostream& out,
                        std::ostream& err) {
  return detail::guarded(err, [&] {
    const PatchDataset ds = generate_synthetic(gen);
    save_dataset(ds, out_path);
    out << "wrote " << out_path << ": " << ds.size() << " samples, " << ds.n_classes << " classes, input_dim "
        << ds.input_dim() << '\n';
    return int{kOk};
  });
}

// ------------------------------------------------------------------- train

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    rc.require_complete();
    const TrainConfig cfg = rc.train_config();
    const PatchDataset ds = load_dataset(rc.get("dataset"));
    const EncoderSpec spec = rc.encoder_spec(ds.input_dim());
    const TrainResult res = train(ds, spec, cfg, [&](const EpochStats& e) {
      out << "epoch " << e.epoch << " lr " << format_real(e.lr) << " loss " << format_real(e.mean_loss) << " gor "
          << format_real(e.mean_gor) << '\n';
    });
    save_checkpoint(res.params, rc.get("checkpoint"));
    write_epoch_csv(res.report, rc.get("csv"));
    if (res.report.epochs.empty())
      out << "no epochs run; wrote initial parameters\n";
    else
      out << "final epoch loss " << format_real(res.report.epochs.back().mean_loss) << '\n';
    return int{kOk};
  });
}

// -------------------------------------------------------------------- eval

struct EvalCommand {
  std::string checkpoint;
  std::string dataset;
  std::string out_dir = ".";
  EvalOptions options;
};

inline int cmd_eval(const EvalCommand& cmd, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    if (cmd.options.n_pairs < 2) throw ConfigError("--pairs must be >= 2");
    const EncoderParams params = load_checkpoint(cmd.checkpoint);
    const PatchDataset ds = load_dataset(cmd.dataset);
    const EvalReport report = evaluate_encoder(params, ds, cmd.options);
    std::filesystem::create_directories(cmd.out_dir);
    write_eval_csvs(report, cmd.out_dir);
    out << "fpr95 " << format_real(report.fpr95) << '\n';
    out << "nonmatch_second_moment " << format_real(report.nonmatch_second_moment) << " (1/d = "
        << format_real(1.0 / static_cast<double>(params.spec.output_dim)) << ")\n";
    out << "overlap " << format_real(report.hist.overlap) << '\n';
    for (const auto& [k, v] : report.recall_at_k) out << "recall@" << k << ' ' << format_real(v) << '\n';
    return int{kOk};
  });
}

// ----------------------------------------------------------- validate-math

struct MathCheck {
  int d = 0;
  std::string name;
  double value = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Monte Carlo against analytic checks for each dimension. Tolerances are
/// the fixed targets (KS 0.01, |mean| 0.001, 2% relative second moment)
/// widened to a 5-sigma sampling bound when n is too small to meet them.
inline std::vector<MathCheck> validate_math(const std::vector<int>& dims, std::uint64_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("--samples must be >= 1");
  std::vector<MathCheck> checks;
  const double nd = static_cast<double>(n);
  for (int d : dims) {
    if (d < 2) throw ConfigError("dimension must be >= 2, got " + std::to_string(d));
    const double dd = d;
    std::vector<double> ips = sample_inner_products(d, n, derive_seed(seed, static_cast<std::uint64_t>(d)));
    double sum = 0.0, sum_sq = 0.0;
    for (double s : ips) {
      sum += s;
      sum_sq += s * s;
    }
    const double mean = sum / nd;
    const double m2 = sum_sq / nd;
    const double ks = ks_distance(std::move(ips), d);

    const double ks_tol = std::max(0.01, 1.95 / std::sqrt(nd));
    const double mean_tol = std::max(0.001, 5.0 * std::sqrt(1.0 / dd / nd));
    const double m2_sd = std::sqrt((2.0 * dd - 2.0) / (dd * dd * (dd + 2.0)));
    const double m2_tol = std::max(0.02, 5.0 * m2_sd / std::sqrt(nd) * dd);
    const double m2_rel = std::abs(m2 - 1.0 / dd) * dd;

    checks.push_back({d, "ks_distance", ks, ks_tol, ks <= ks_tol});
    checks.push_back({d, "abs_mean", std::abs(mean), mean_tol, std::abs(mean) <= mean_tol});
    checks.push_back({d, "second_moment_rel_err", m2_rel, m2_tol, m2_rel <= m2_tol});
  }
  return checks;
}

inline int cmd_validate_math(const std::vector<int>& dims, std::uint64_t n, std::uint64_t seed, std::ostream& out,
                             std::ostream& err) {
  return detail::guarded(err, [&] {
    const auto checks = validate_math(dims, n, seed);
    bool all = true;
    out << "d,check,value,tolerance,result\n";
    for (const auto& c : checks) {
      out << c.d << ',' << c.name << ',' << detail::fixed(c.value, 8) << ',' << detail::fixed(c.tolerance, 8) << ','
          << (c.pass ? "PASS" : "FAIL") << '\n';
      all = all && c.pass;
    }
    out << (all ? "all checks passed\n" : "some checks FAILED\n");
    return all ? int{kOk} : int{kRuntime};
  });
}

// ------------------------------------------------------------------- sweep

struct SweepCommand {
  std::string grid = "alpha";  // alpha | dim
  std::vector<double> values;  // empty: default grid
  std::string test_dataset;
  std::string out = "sweep.csv";
  EvalOptions eval;
};

inline std::vector<double> default_sweep_values(const std::string& grid) {
  if (grid == "alpha") return {0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0};
  if (grid == "dim") return {32, 64, 128, 256, 512, 1024};
  throw ConfigError("--grid must be 'alpha' or 'dim'");
}

inline int cmd_sweep(const RunConfig& base, const SweepCommand& cmd, std::ostream& out, std::ostream& err) {
  return detail::guarded(err, [&] {
    const std::vector<double> values = cmd.values.empty() ? default_sweep_values(cmd.grid) : cmd.values;
    if (cmd.grid != "alpha" && cmd.grid != "dim") throw ConfigError("--grid must be 'alpha' or 'dim'");
    base.require_complete();
    const PatchDataset train_ds = load_dataset(base.get("dataset"));
    const PatchDataset test_ds = load_dataset(cmd.test_dataset.empty() ? base.get("dataset") : cmd.test_dataset);

    std::ofstream csv(cmd.out, std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot open '" + cmd.out + "' for writing");
    csv << "grid,value,fpr95,overlap,second_moment,final_loss\n";
    for (double v : values) {
      RunConfig rc = base;
      if (cmd.grid == "alpha") {
        rc.set("alpha", format_real(v));
      } else {
        if (v < 2 || v != std::floor(v)) throw ConfigError("dimension grid values must be integers >= 2");
        rc.set("output_dim", std::to_string(static_cast<std::uint64_t>(v)));
      }
      const TrainConfig cfg = rc.train_config();
      const EncoderSpec spec = rc.encoder_spec(train_ds.input_dim());
      const TrainResult res = train(train_ds, spec, cfg);
      EvalOptions eo = cmd.eval;
      eo.ks.clear();
      const EvalReport rep = evaluate_encoder(res.params, test_ds, eo);
      const double final_loss = res.report.epochs.empty() ? 0.0 : res.report.epochs.back().mean_loss;
      csv << cmd.grid << ',' << format_real(v) << ',' << format_real(rep.fpr95) << ',' << format_real(rep.hist.overlap)
          << ',' << format_real(rep.nonmatch_second_moment) << ',' << format_real(final_loss) << '\n';
      out << cmd.grid << '=' << format_real(v) << " fpr95 " << format_real(rep.fpr95) << " second_moment "
          << format_real(rep.nonmatch_second_moment) << '\n';
    }
    if (!csv) throw std::runtime_error("write failed for '" + cmd.out + "'");
    return int{kOk};
  });
}

// ----------------------------------------------------------------- parsing

namespace detail {

/// Registers one `--key` flag per config key. Returns the option handles so
/// explicitly given flags can be layered over the config file.
inline std::map<std::string, std::pair<CLI::Option*, std::string*>> add_config_flags(
    CLI::App* app, std::map<std::string, std::string>& storage) {
  std::map<std::string, std::pair<CLI::Option*, std::string*>> flags;
  for (const auto& k : config_keys()) {
    std::string& slot = storage[k.name];
    CLI::Option* opt = app->add_option(std::string("--") + k.name, slot, k.help);
    opt->default_str(k.default_value ? k.default_value : "(required)");
    flags[k.name] = {opt, &slot};
  }
  return flags;
}

inline RunConfig build_run_config(const std::string& config_path,
                                  const std::map<std::string, std::pair<CLI::Option*, std::string*>>& flags) {
  RunConfig rc;
  if (!config_path.empty()) rc.merge_file(config_path);
  for (const auto& [key, handle] : flags)
    if (handle.first->count() > 0) rc.set(key, *handle.second);
  return rc;
}

}  // namespace detail

/// Parses argv and dispatches to a subcommand.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Spread-out descriptor learning toolkit", "spreadout"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // generate
  GeneratorConfig gen;
  std::string gen_out;
  auto* g = app.add_subcommand("generate", "Write a synthetic patch dataset");
  g->add_option("--n_classes", gen.n_classes, "number of classes");
  g->add_option("--per_class", gen.per_class, "samples per class");
  g->add_option("--input_dim", gen.input_dim, "flattened patch length");
  g->add_option("--noise", gen.noise_sigma, "per-coordinate noise sigma");
  g->add_option("--jitter", gen.scale_jitter, "scale jitter half-width");
  g->add_option("--intrinsic_dim", gen.intrinsic_dim, "coordinates in which prototypes vary (0 = all)");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--out", gen_out, "output dataset file")->required();

  // train
  std::string train_config_path;
  std::map<std::string, std::string> train_storage;
  auto* t = app.add_subcommand("train", "Train an encoder");
  t->add_option("--config", train_config_path, "key=value config file (flags override it)");
  const auto train_flags = detail::add_config_flags(t, train_storage);

  // eval
  EvalCommand ev;
  std::string ks_text = "1,5,10";
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint, "encoder checkpoint")->required();
  e->add_option("--dataset", ev.dataset, "evaluation dataset")->required();
  e->add_option("--pairs", ev.options.n_pairs, "number of evaluation pairs (half matching)");
  e->add_option("--seed", ev.options.seed, "pair sampling seed");
  e->add_option("--bins", ev.options.n_bins, "histogram bins");
  e->add_option("--ks", ks_text, "comma-separated K values for Recall@K (empty to skip)");
  e->add_option("--out_dir", ev.out_dir, "directory for roc.csv, hist.csv, summary.csv");

  // validate-math
  std::string dims_text = "3,32,128";
  std::uint64_t vm_samples = 100000;
  std::uint64_t vm_seed = 1;
  auto* v = app.add_subcommand("validate-math", "Check sphere inner-product statistics by Monte Carlo");
  v->add_option("--dims", dims_text, "comma-separated dimensions");
  v->add_option("--samples", vm_samples, "pairs per dimension");
  v->add_option("--seed", vm_seed, "sampling seed");

  // sweep
  SweepCommand sw;
  std::string sweep_config_path;
  std::string sweep_values;
  std::map<std::string, std::string> sweep_storage;
  auto* s = app.add_subcommand("sweep", "Train and evaluate over an alpha or dimension grid");
  s->add_option("--grid", sw.grid, "alpha | dim");
  s->add_option("--values", sweep_values, "comma-separated grid values (default grid if empty)");
  s->add_option("--test_dataset", sw.test_dataset, "held-out dataset (defaults to the training dataset)");
  s->add_option("--pairs", sw.eval.n_pairs, "evaluation pairs");
  s->add_option("--eval_seed", sw.eval.seed, "evaluation pair seed");
  s->add_option("--out", sw.out, "summary CSV");
  s->add_option("--config", sweep_config_path, "key=value config file (flags override it)");
  const auto sweep_flags = detail::add_config_flags(s, sweep_storage);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex, out, err);
    return kUsage;
  }

  if (g->parsed()) return cmd_generate(gen, gen_out, out, err);
  if (t->parsed()) {
    return detail::guarded(err, [&] {
      return cmd_train(detail::build_run_config(train_config_path, train_flags), out, err);
    });
  }
  if (e->parsed()) {
    return detail::guarded(err, [&] {
      ev.options.ks = detail::parse_size_list(ks_text, "--ks");
      return cmd_eval(ev, out, err);
    });
  }
  if (v->parsed()) {
    return detail::guarded(err, [&] {
      std::vector<int> dims;
      for (std::size_t d : detail::parse_size_list(dims_text, "--dims")) dims.push_back(static_cast<int>(d));
      return cmd_validate_math(dims, vm_samples, vm_seed, out, err);
    });
  }
  if (s->parsed()) {
    return detail::guarded(err, [&] {
      sw.values = detail::parse_real_list(sweep_values, "--values");
      return cmd_sweep(detail::build_run_config(sweep_config_path, sweep_flags), sw, out, err);
    });
  }
  return kUsage;
}

}  // namespace spreadout::cli
