#include "cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/gradcheck.hpp"
#include "ctmr/metrics.hpp"
#include "ctmr/pipeline.hpp"

namespace ctmr::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binds command-line flags to flat config keys. The effective value of a
// key is its default, overridden by the --config file, overridden by any
// --set assignment, overridden by a flag given on the command line.
class Settings {
 public:
  Settings(CLI::App* app, json defaults) : app_(app), defaults_(std::move(defaults)) {
    app_->add_option("--config", config_path_, "JSON object of flat dotted keys; flags take precedence")
        ->check(CLI::ExistingFile);
    app_->add_option("--set", assignments_, "Override any config key, KEY=VALUE (VALUE parsed as JSON if valid)")
        ->type_name("KEY=VALUE");
  }

  template <typename T>
  CLI::Option* option(const std::string& flags, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app_->add_option(flags, *holder, help + " [" + key + "]");
    opt->default_str(defaults_.at(key).dump());
    bindings_.push_back({opt, {key}, [holder] { return json(*holder); }});
    return opt;
  }

  // A flag that sets one or more keys to fixed values.
  CLI::Option* toggle(const std::string& flags, const std::vector<std::pair<std::string, json>>& values,
                      const std::string& help) {
    CLI::Option* opt = app_->add_flag(flags, help);
    for (const auto& [key, value] : values) {
      defaults_.at(key);
      bindings_.push_back({opt, {key}, [v = value] { return v; }});
    }
    return opt;
  }

  json resolve() const {
    json eff = defaults_;
    if (!config_path_.empty()) {
      std::ifstream in(config_path_);
      if (!in) throw UsageError("cannot read config file '" + config_path_ + "'");
      const json file = json::parse(in, nullptr, false);
      if (file.is_discarded() || !file.is_object()) {
        throw UsageError("config file '" + config_path_ + "' is not a JSON object");
      }
      for (const auto& [key, value] : file.items()) assign(eff, key, value, "config file");
    }
    for (const auto& a : assignments_) {
      const auto eq = a.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects KEY=VALUE, got '" + a + "'");
      const std::string text = a.substr(eq + 1);
      json value = json::parse(text, nullptr, false);
      if (value.is_discarded()) value = text;
      assign(eff, a.substr(0, eq), value, "--set");
    }
    for (const auto& b : bindings_) {
      if (b.option->count() > 0) eff[b.key] = b.value();
    }
    return eff;
  }

 private:
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::function<json()> value;
  };

  void assign(json& eff, const std::string& key, const json& value, const char* source) const {
    if (!defaults_.contains(key)) {
      std::string known;
      for (const auto& [k, v] : defaults_.items()) known += (known.empty() ? "" : ", ") + k;
      throw UsageError(std::string("unknown key '") + key + "' in " + source + " (known keys: " + known + ")");
    }
    eff[key] = value;
  }

  CLI::App* app_;
  json defaults_;
  std::string config_path_;
  std::vector<std::string> assignments_;
  std::vector<Binding> bindings_;
};

template <typename T>
T get(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(std::string("config key '") + key + "' has the wrong type: " + j.at(key).dump());
  }
}

// A subcommand resolves its settings into a runnable action; resolution
// failures are usage errors, failures of the action are runtime failures.
struct Command {
  CLI::App* app = nullptr;
  std::unique_ptr<Settings> settings;
  std::function<std::function<void()>(const json&)> prepare;
};

// ---------------------------------------------------------------------------
// phantom

json phantom_defaults() {
  const data::PhantomOptions o;
  return {{"out", ""},
          {"subjects", o.n_subjects},
          {"scans_per_subject", o.scans_per_subject},
          {"jitter_scans", o.jitter_scans},
          {"image_size", o.image_size},
          {"min_slices", o.min_slices},
          {"max_slices", o.max_slices},
          {"seed", o.seed}};
}

void add_phantom(CLI::App& root, std::vector<Command>& commands, std::ostream& out) {
  Command c;
  c.app = root.add_subcommand("phantom", "Write a synthetic stroke-phantom corpus and its manifest");
  c.settings = std::make_unique<Settings>(c.app, phantom_defaults());
  auto& s = *c.settings;
  s.option<std::string>("--out", "out", "Output directory")->required();
  s.option<int>("--subjects", "subjects", "Number of subjects");
  s.option<int>("--scans", "scans_per_subject", "Scans per subject (maximum when jittered)");
  s.toggle("--jitter", {{"jitter_scans", true}}, "Draw 1..scans scans per subject");
  s.option<int>("--size", "image_size", "Slice side in pixels (multiple of 4)");
  s.option<int>("--min-slices", "min_slices", "Fewest slices per scan");
  s.option<int>("--max-slices", "max_slices", "Most slices per scan");
  s.option<std::uint64_t>("--seed", "seed", "Master seed");
  c.prepare = [&out](const json& cfg) {
    data::PhantomOptions o;
    o.n_subjects = get<int>(cfg, "subjects");
    o.scans_per_subject = get<int>(cfg, "scans_per_subject");
    o.jitter_scans = get<bool>(cfg, "jitter_scans");
    o.image_size = get<int>(cfg, "image_size");
    o.min_slices = get<int>(cfg, "min_slices");
    o.max_slices = get<int>(cfg, "max_slices");
    o.seed = get<std::uint64_t>(cfg, "seed");
    const fs::path dir = get<std::string>(cfg, "out");
    if (dir.empty()) throw UsageError("--out is required");
    o.validate();
    return std::function<void()>([o, dir, &out] {
      const auto m = data::make_phantom_corpus(o, dir);
      out << "wrote " << m.scan_count() << " scans of " << m.subjects.size() << " subjects to "
          << (dir / "manifest.json").string() << "\n";
    });
  };
  commands.push_back(std::move(c));
}

// ---------------------------------------------------------------------------
// split

void add_split(CLI::App& root, std::vector<Command>& commands, std::ostream& out) {
  Command c;
  c.app = root.add_subcommand("split", "Assign subjects to K test folds");
  c.settings = std::make_unique<Settings>(c.app, json{{"manifest", ""}, {"folds", 5}, {"seed", 1}, {"out", ""}});
  auto& s = *c.settings;
  s.option<std::string>("--manifest", "manifest", "Corpus manifest")->required();
  s.option<int>("--folds", "folds", "Number of folds K");
  s.option<std::uint64_t>("--seed", "seed", "Shuffle seed");
  s.option<std::string>("--out", "out", "Split file to write")->required();
  c.prepare = [&out](const json& cfg) {
    const fs::path manifest = get<std::string>(cfg, "manifest");
    const fs::path path = get<std::string>(cfg, "out");
    const int folds = get<int>(cfg, "folds");
    const auto seed = get<std::uint64_t>(cfg, "seed");
    if (!fs::exists(manifest)) throw UsageError("manifest '" + manifest.string() + "' not found");
    if (path.empty()) throw UsageError("--out is required");
    if (folds < 2) throw UsageError("--folds must be >= 2");
    return std::function<void()>([=, &out] {
      const auto m = data::Manifest::load(manifest);
      const auto split = data::kfold_by_subject(m.subject_ids(), folds, seed);
      split.save(path);
      for (int k = 0; k < split.fold_count(); ++k) {
        out << "fold " << k << ": " << split.test_subjects(k).size() << " test subjects\n";
      }
    });
  };
  commands.push_back(std::move(c));
}

// ---------------------------------------------------------------------------
// Experiment subcommands

struct FoldSelection {
  std::vector<int> folds;  // empty: all
};

// Thread-safe progress printer.
pipeline::ProgressFn printer(std::ostream& out) {
  auto mutex = std::make_shared<std::mutex>();
  return [&out, mutex](const std::string& line) {
    std::lock_guard<std::mutex> lock(*mutex);
    out << line << "\n" << std::flush;
  };
}

using ExperimentAction = std::function<void(const pipeline::Experiment&, const std::vector<int>&)>;

void add_experiment(CLI::App& root, std::vector<Command>& commands, const std::string& name,
                    const std::string& description, bool per_fold, ExperimentAction action,
                    const std::function<void(CLI::App*)>& extra = {}) {
  Command c;
  c.app = root.add_subcommand(name, description);
  c.settings = std::make_unique<Settings>(c.app, pipeline::ExperimentConfig{}.to_json());
  auto& s = *c.settings;
  s.option<std::string>("--manifest", "manifest", "Corpus manifest");
  s.option<std::string>("--split", "split", "Split file");
  s.option<std::string>("--out", "out_root", "Experiment output root");
  s.option<std::uint64_t>("--seed", "seed", "Master seed; every other seed is derived from it");
  s.option<int>("--jobs", "jobs", "Folds processed concurrently");
  s.option<int>("--image-size", "image_size", "Slice side; 0 takes it from the manifest");
  s.option<float>("--lambda", "cgan.lambda", "Weight of the L1 term in the generator loss");
  s.option<int>("--cgan-epochs", "cgan.epochs", "CGAN training epochs per fold");
  s.option<int>("--fcn-epochs", "fcn.epochs", "FCN training epochs per fold and model");
  s.option<float>("--lr", "adam.lr", "Adam learning rate");
  s.option<int>("--base-width", "generator.base_width", "Generator width after the first convolution");
  s.option<int>("--resnet-blocks", "generator.resnet_blocks", "Generator residual blocks");
  s.toggle("--no-genmr-dropout", {{"genmr.dropout", false}}, "Disable dropout when generating derived MR");
  s.toggle("--no-augment",
           {{"augment.rotation_deg", 0.0}, {"augment.translation_frac", 0.0}, {"augment.scale_lo", 1.0},
            {"augment.scale_hi", 1.0}},
           "Train the FCN without affine augmentation");
  s.toggle("--unit-spacing", {{"metrics.unit_spacing", true}}, "Report distances in voxel units");
  auto selection = std::make_shared<FoldSelection>();
  if (per_fold) c.app->add_option("--fold", selection->folds, "Fold index (repeatable); default all folds");
  if (extra) extra(c.app);
  c.prepare = [action, selection](const json& cfg) {
    pipeline::ExperimentConfig config;
    config.apply_json(cfg);
    config.validate();
    return std::function<void()>([config, action, selection] {
      const auto exp = pipeline::open_experiment(config);
      for (int k : selection->folds) {
        if (k < 0 || k >= exp.split.fold_count()) {
          throw ArgumentError("fold " + std::to_string(k) + " out of range (split has " +
                              std::to_string(exp.split.fold_count()) + " folds)");
        }
      }
      action(exp, selection->folds);
    });
  };
  commands.push_back(std::move(c));
}

int report_audit(const pipeline::Experiment& exp, std::ostream& out) {
  const auto issues = pipeline::audit_provenance(exp);
  for (const auto& i : issues) out << "provenance violation: " << i << "\n";
  if (issues.empty()) out << "provenance audit: ok\n";
  return static_cast<int>(issues.size());
}

void print_comparison(const pipeline::Comparison& c, std::ostream& out) {
  out << metrics::format_table({c.fcn, c.fcn_cgan});
}

// ---------------------------------------------------------------------------
// gradcheck

void add_gradcheck(CLI::App& root, std::vector<Command>& commands, std::ostream& out, int& status) {
  Command c;
  c.app = root.add_subcommand("gradcheck", "Finite-difference check of every differentiable tensor operation");
  const GradCheckOptions defaults;
  c.settings = std::make_unique<Settings>(
      c.app, json{{"seed", 1}, {"step", defaults.step}, {"tolerance", defaults.tolerance}});
  auto& s = *c.settings;
  s.option<std::uint64_t>("--seed", "seed", "Seed for inputs and projections");
  s.option<double>("--step", "step", "Central-difference step");
  s.option<double>("--tolerance", "tolerance", "Largest accepted relative error");
  c.prepare = [&out, &status](const json& cfg) {
    GradCheckOptions o;
    o.step = get<double>(cfg, "step");
    o.tolerance = get<double>(cfg, "tolerance");
    const auto seed = get<std::uint64_t>(cfg, "seed");
    if (!(o.step > 0.0) || !(o.tolerance > 0.0)) throw UsageError("step and tolerance must be positive");
    return std::function<void()>([o, seed, &out, &status] {
      const auto entries = run_op_gradcheck_suite(seed, o);
      int failed = 0;
      for (const auto& e : entries) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-4s %-28s checked %4zu  max rel err %.3e", e.result.passed ? "ok" : "FAIL",
                      e.name.c_str(), e.result.checked, e.result.max_rel_error);
        out << buf;
        if (!e.result.passed) out << "  worst " << e.result.worst;
        out << "\n";
        failed += e.result.passed ? 0 : 1;
      }
      out << entries.size() - static_cast<std::size_t>(failed) << "/" << entries.size() << " operations passed\n";
      if (failed > 0) status = kExitFailure;
    });
  };
  commands.push_back(std::move(c));
}

// Synopsis of the innermost selected subcommand.
const CLI::App* selected(const CLI::App& app) {
  for (const auto* sub : app.get_subcommands()) return selected(*sub);
  return &app;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CT-perfusion to MR translation and lesion segmentation", "ctmr"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ctmr 0.1.0");
  std::vector<Command> commands;
  int status = kExitOk;

  add_phantom(app, commands, out);
  add_split(app, commands, out);
  const auto progress = printer(out);
  add_experiment(app, commands, "train-cgan", "Train the CT-to-MR CGAN of each fold", true,
                 [progress](const pipeline::Experiment& exp, const std::vector<int>& folds) {
                   pipeline::for_folds(exp, folds, [&](const pipeline::Experiment& e, int k) {
                     pipeline::train_cgan_fold(e, k, progress);
                   });
                 });
  add_experiment(app, commands, "generate-mr", "Write derived MR for each fold's held-out scans", true,
                 [progress](const pipeline::Experiment& exp, const std::vector<int>& folds) {
                   pipeline::for_folds(exp, folds, [&](const pipeline::Experiment& e, int k) {
                     pipeline::generate_mr_fold(e, k, progress);
                   });
                 });
  add_experiment(app, commands, "train-fcn", "Train the FCN and FCN-CGAN segmentation networks of each fold", true,
                 [progress](const pipeline::Experiment& exp, const std::vector<int>& folds) {
                   pipeline::for_folds(exp, folds, [&](const pipeline::Experiment& e, int k) {
                     pipeline::train_fcn_fold(e, k, progress);
                   });
                 });
  add_experiment(app, commands, "segment", "Predict lesion masks for each fold's held-out scans", true,
                 [progress](const pipeline::Experiment& exp, const std::vector<int>& folds) {
                   pipeline::for_folds(exp, folds, [&](const pipeline::Experiment& e, int k) {
                     pipeline::segment_fold(e, k, progress);
                   });
                 });
  add_experiment(app, commands, "evaluate", "Score stored predictions and write report.json / report.txt", false,
                 [&out, &status](const pipeline::Experiment& exp, const std::vector<int>&) {
                   print_comparison(pipeline::write_reports(exp), out);
                   if (report_audit(exp, out) > 0) status = kExitFailure;
                 });
  add_experiment(app, commands, "compare", "Train, apply and score both segmentation networks on every fold", false,
                 [&out, &status, progress](const pipeline::Experiment& exp, const std::vector<int>&) {
                   print_comparison(pipeline::run_segmentation_comparison(exp, progress), out);
                   if (report_audit(exp, out) > 0) status = kExitFailure;
                 });
  auto grid = std::make_shared<std::pair<std::string, std::string>>();
  auto grid_count = std::make_shared<int>(5);
  add_experiment(
      app, commands, "export-grid", "Write the FCN-CGAN/FCN comparison grid and the real/derived MR grid", false,
      [&out, grid, grid_count](const pipeline::Experiment& exp, const std::vector<int>&) {
        const fs::path ppm = grid->first.empty() ? exp.config.out_root / "comparison_grid.ppm" : fs::path(grid->first);
        const fs::path pgm = grid->second.empty() ? exp.config.out_root / "mr_grid.pgm" : fs::path(grid->second);
        pipeline::export_figures(exp, ppm, pgm, *grid_count);
        out << "wrote " << ppm.string() << " and " << pgm.string() << "\n";
      },
      [grid, grid_count](CLI::App* sub) {
        sub->add_option("--grid", grid->first, "Comparison grid path (.ppm); default <out>/comparison_grid.ppm");
        sub->add_option("--mr-grid", grid->second, "MR grid path (.pgm); default <out>/mr_grid.pgm");
        sub->add_option("--count", *grid_count, "Scans shown, in manifest order")->capture_default_str();
      });
  add_experiment(app, commands, "run", "Every stage of the protocol, reports and figures", false,
                 [&out, &status, progress](const pipeline::Experiment& exp, const std::vector<int>&) {
                   print_comparison(pipeline::run_all(exp, progress), out);
                   const auto cg = pipeline::summarize_cgan(exp);
                   out << "held-out derived-MR L1 " << cg.mean_heldout_l1 << " (untrained generator "
                       << cg.mean_untrained_l1 << ")\n";
                   if (report_audit(exp, out) > 0) status = kExitFailure;
                 });
  add_gradcheck(app, commands, out, status);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << selected(app)->help();
    return kExitUsage;
  }

  for (auto& c : commands) {
    if (!c.app->parsed()) continue;
    std::function<void()> action;
    try {
      const json effective = c.settings->resolve();
      action = c.prepare(effective);
      out << "effective config:\n" << effective.dump(2) << "\n";
    } catch (const UsageError& e) {
      err << "error: " << e.what() << "\n\n" << c.app->help();
      return kExitUsage;
    } catch (const ArgumentError& e) {
      err << "error: " << e.what() << "\n\n" << c.app->help();
      return kExitUsage;
    }
    try {
      action();
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitFailure;
    }
    return status;
  }
  return kExitUsage;
}

}  // namespace ctmr::cli
