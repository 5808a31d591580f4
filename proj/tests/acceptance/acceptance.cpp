// Acceptance suite: one PASS/FAIL line per criterion.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ctmr/autograd.hpp"
#include "ctmr/cgan.hpp"
#include "ctmr/data.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/fcn.hpp"
#include "ctmr/gradcheck.hpp"
#include "ctmr/metrics.hpp"
#include "ctmr/nn.hpp"
#include "ctmr/pipeline.hpp"
#include "ctmr/rng.hpp"
#include "support/metric_oracle.hpp"
#include "support/netcheck.hpp"

using namespace ctmr;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> details;

  void expect(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// ---------------------------------------------------------------------------

void discriminator_shape(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const cgan::DiscriminatorConfig cfg;
  const auto d = cgan::make_discriminator_params(cfg, 1);
  NoGradGuard no_grad;
  const auto out = cgan::discriminator_forward(random_uniform({1, 5, 256, 256}, -1, 1, 2),
                                               random_uniform({1, 1, 256, 256}, -1, 1, 3), d, cfg);
  const double t = seconds_since(t0);
  o.expect(out.map.shape() == Shape{1, 1, 30, 30}, "6x256x256 input gives map " + to_string(out.map.shape()));
  o.expect(cgan::map_side(cfg, 256) == 30, "analytic map side " + std::to_string(cgan::map_side(cfg, 256)));
  o.expect(cgan::receptive_field(cfg) == 70, "receptive field " + std::to_string(cgan::receptive_field(cfg)));
  o.expect(t < 1.0, fmt("runtime %.3f s < 1 s", t));
}

void generator_contract(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const cgan::GeneratorConfig cfg;
  const auto g = cgan::make_generator_params(cfg, 1);
  NoGradGuard no_grad;
  const Tensor y = cgan::generator_forward(random_uniform({1, 5, 256, 256}, -1, 1, 4), g, cfg, true, 5);
  const double t = seconds_since(t0);
  const auto v = y.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  o.expect(y.shape() == Shape{1, 1, 256, 256}, "5x256x256 input gives " + to_string(y.shape()));
  o.expect(*lo >= -1.0f && *hi <= 1.0f, fmt("outputs in [%.4f, %.4f]", *lo, *hi));
  o.expect(t < 10.0, fmt("runtime %.2f s < 10 s", t));
}

void gradient_suite(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& e : run_op_gradcheck_suite(1)) {
    o.expect(e.result.passed && e.result.max_rel_error < 1e-2,
             e.name + fmt(": max rel err %.2e over %.0f elements", e.result.max_rel_error,
                          static_cast<double>(e.result.checked)));
  }
  for (const auto& n : ref::check_networks(1, 20, 1e-2)) {
    o.expect(n.passed && n.max_rel_error < 1e-2,
             n.name + fmt(": max rel err %.2e over %.0f parameters", n.max_rel_error, static_cast<double>(n.checked)) +
                 (n.rechecked ? " (" + std::to_string(n.rechecked) + " rechecked at a shifted value)" : ""));
  }
  const double t = seconds_since(t0);
  o.expect(t < 300.0, fmt("runtime %.1f s < 300 s", t));
}

void loss_identities(Outcome& o) {
  const Tensor zeros = Tensor::zeros({1, 1, 30, 30});
  const double ln2 = std::log(2.0);
  const double d = cgan::d_loss(zeros, zeros).item();
  const double g = cgan::g_adv_loss(zeros).item();
  o.expect(std::abs(d - 2 * ln2) < 1e-6, fmt("d_loss(0, 0) = %.8f, 2 ln 2 = %.8f", d, 2 * ln2));
  o.expect(std::abs(g - ln2) < 1e-6, fmt("g_adv(0) = %.8f, ln 2 = %.8f", g, ln2));

  const Tensor fake = random_uniform({1, 1, 6, 6}, -2, 2, 7);
  const Tensor gen = random_uniform({1, 1, 16, 16}, -1, 1, 8);
  const Tensor target = random_uniform({1, 1, 16, 16}, -1, 1, 9);
  double adv = 0.0;
  for (float z : fake.data()) adv += std::log1p(std::exp(-static_cast<double>(z)));
  adv /= static_cast<double>(fake.numel());
  double l1 = 0.0;
  for (std::size_t i = 0; i < gen.data().size(); ++i)
    l1 += std::abs(static_cast<double>(gen.data()[i]) - target.data()[i]);
  l1 /= static_cast<double>(gen.numel());
  const double total = cgan::g_total_loss(fake, gen, target, 100.0f).item();
  const double expect = adv + 100.0 * l1;
  o.expect(std::abs(total - expect) < 1e-6 * std::max(1.0, expect),
           fmt("g_total(lambda=100) = %.7f, adv + 100 L1 = %.7f", total, expect));

  const Tensor logits = random_uniform({1, 1, 16, 16}, -4, 4, 10);
  Tensor mask = random_uniform({1, 1, 16, 16}, 0, 1, 11);
  for (float& v : mask.data()) v = v > 0.7f ? 1.0f : 0.0f;
  double bce = 0.0;
  for (std::size_t i = 0; i < logits.data().size(); ++i) {
    const double z = logits.data()[i];
    const double p = 1.0 / (1.0 + std::exp(-z));
    bce -= mask.data()[i] > 0.5f ? std::log(p) : std::log(1.0 - p);
  }
  bce /= static_cast<double>(logits.numel());
  const double focal = fcn::focal_loss(logits, mask, 0.0f, 0.5f).item();
  o.expect(std::abs(focal - 0.5 * bce) < 1e-6, fmt("focal(gamma=0, alpha=0.5) = %.8f, BCE/2 = %.8f", focal, 0.5 * bce));
}

Tensor to_tensor(const oracle::Volume& v) {
  Tensor t({1, v.d, v.h, v.w});
  for (std::size_t i = 0; i < v.v.size(); ++i) t.data()[i] = v.v[i];
  return t;
}

void metric_oracle(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> density(0.0, 0.6);
  const Spacing spacings[] = {Spacing{}, Spacing::unit(), Spacing{0.7, 1.3, 4.0}};
  int distance_mismatch = 0, ratio_mismatch = 0;
  double worst_ratio = 0.0;
  const int pairs = 500;  // 1,000 masks
  for (int i = 0; i < pairs; ++i) {
    const auto p = oracle::random_volume(4, 8, 8, density(rng), rng());
    const auto g = oracle::random_volume(4, 8, 8, density(rng), rng());
    const Spacing& s = spacings[i % 3];
    const auto expect = oracle::brute_force(p, g, s);
    const auto row = metrics::evaluate_scan("x", to_tensor(p), to_tensor(g), s);
    distance_mismatch += row.hausdorff_mm != expect.hausdorff;
    distance_mismatch += std::abs(row.avg_dist_mm - expect.avg_dist) > 1e-12 * std::max(1.0, expect.avg_dist);
    for (const auto& [a, b] : {std::pair{row.dice, expect.dice}, std::pair{row.precision, expect.precision},
                               std::pair{row.recall, expect.recall}, std::pair{row.avd_ml, expect.avd_ml}}) {
      worst_ratio = std::max(worst_ratio, std::abs(a - b));
      ratio_mismatch += std::abs(a - b) > 1e-9;
    }
  }
  const double t = seconds_since(t0);
  o.expect(distance_mismatch == 0, "hausdorff / avg distance exact on 1000 masks in 8x8x4 (" +
                                       std::to_string(distance_mismatch) + " mismatches)");
  o.expect(ratio_mismatch == 0, fmt("dice / precision / recall / AVD within 1e-9 (worst %.1e)", worst_ratio));
  o.expect(t < 120.0, fmt("runtime %.2f s < 120 s", t));
}

pipeline::ExperimentConfig small_experiment(const fs::path& dir, int subjects, int folds, std::uint64_t seed) {
  data::PhantomOptions po;
  po.n_subjects = subjects;
  po.image_size = 32;
  po.min_slices = 2;
  po.max_slices = 2;
  po.seed = seed;
  const auto m = data::make_phantom_corpus(po, dir / "corpus");
  data::kfold_by_subject(m.subject_ids(), folds, seed).save(dir / "split.json");
  pipeline::ExperimentConfig cfg;
  cfg.manifest = dir / "corpus" / "manifest.json";
  cfg.split = dir / "split.json";
  cfg.out_root = dir / "out";
  cfg.seed = seed;
  cfg.epochs_cgan = 1;
  cfg.epochs_fcn = 1;
  cfg.generator.base_width = 4;
  cfg.generator.n_resnet_blocks = 1;
  cfg.discriminator.widths = {4, 8, 8, 8};
  cfg.fcn.stem_widths = {4, 8};
  cfg.fcn.trunk_width = 8;
  cfg.fcn.branch_width = 4;
  cfg.fcn.head_width = 8;
  return cfg;
}

void split_protocol(Outcome& o, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> roster;
  for (int i = 0; i < 63; ++i) roster.push_back(data::phantom_subject_id(i));
  const auto split = data::kfold_by_subject(roster, 5, 7);
  std::multiset<std::string> seen;
  std::vector<std::size_t> sizes;
  for (int k = 0; k < split.fold_count(); ++k) {
    const auto& test = split.test_subjects(k);
    seen.insert(test.begin(), test.end());
    sizes.push_back(test.size());
  }
  std::sort(sizes.rbegin(), sizes.rend());
  bool disjoint = true;
  for (const auto& s : roster) disjoint = disjoint && seen.count(s) == 1;
  const double t = seconds_since(t0);
  o.expect(split.fold_count() == 5, "5 folds");
  o.expect(disjoint && seen.size() == 63, "folds are subject-disjoint and cover all 63 subjects");
  o.expect(sizes == std::vector<std::size_t>{13, 13, 13, 12, 12}, "test sizes {13,13,13,12,12}");
  o.expect(t < 1.0, fmt("split runtime %.4f s < 1 s", t));

  // Leakage audit over a complete run on a small corpus.
  const fs::path dir = work / "split_protocol";
  fs::remove_all(dir);
  const auto cfg = small_experiment(dir, 10, 5, 7);
  const auto exp = pipeline::open_experiment(cfg);
  pipeline::run_cgan_folds(exp);
  const auto issues = pipeline::audit_provenance(exp);
  o.expect(issues.empty(), "leakage audit on a 10-subject run: " + std::to_string(issues.size()) + " violations");
  fs::copy_file(exp.genmr_path(0, exp.test_scans(0)[0]->id), exp.genmr_path(1, exp.test_scans(0)[0]->id));
  o.expect(!pipeline::audit_provenance(exp).empty(), "audit flags derived MR planted in the wrong fold");
}

void cgan_overfit(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  data::PhantomOptions po;
  po.n_subjects = 4;
  po.image_size = 64;
  po.seed = 21;
  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (int i = 0; i < 4; ++i) {
    const auto rec = data::make_phantom_scan(po, i, 0);
    const int z = rec.slices() / 2;
    pairs.emplace_back(data::slice_of(rec.ctp, z), data::slice_of(rec.dwi, z));
  }
  const auto g_cfg = cgan::GeneratorConfig::desk();
  auto model = cgan::CganModel::create(g_cfg, cgan::DiscriminatorConfig{}, 5, nn::AdamOptions{2e-4f, 0.5f, 0.999f});
  double first = 0.0;
  for (int step = 0; step < 500; ++step) {
    const auto r = cgan::train_step(model, pairs[step % 4].first, pairs[step % 4].second, 100.0f,
                                    derive_seed(5, static_cast<std::uint64_t>(step)));
    if (step < 4) first += r.l1 / 4;
  }
  NoGradGuard no_grad;
  double l1_dropout = 0.0, l1_plain = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& [x, y] = pairs[i];
    const Tensor a = cgan::generator_forward(x, model.g, g_cfg, true, derive_seed(99, i));
    const Tensor b = cgan::generator_forward(x, model.g, g_cfg, false, 0);
    for (std::size_t k = 0; k < a.data().size(); ++k) {
      l1_dropout += std::abs(a.data()[k] - y.data()[k]);
      l1_plain += std::abs(b.data()[k] - y.data()[k]);
    }
  }
  const double n = 4.0 * 64 * 64;
  l1_dropout /= n;
  l1_plain /= n;
  const double t = seconds_since(t0);
  o.details.push_back(fmt("     mean L1 over the first 4 steps %.4f", first));
  o.expect(l1_dropout < 0.10, fmt("mean L1 after 500 steps %.4f < 0.10 (dropout active, as for derived MR)", l1_dropout));
  o.details.push_back(fmt("     mean L1 with dropout off %.4f", l1_plain));
  o.expect(t < 600.0, fmt("runtime %.1f s < 600 s", t));
}

pipeline::ExperimentConfig desk_experiment(const fs::path& dir, const fs::path& out) {
  data::PhantomOptions po;
  po.n_subjects = 10;
  po.image_size = 64;
  po.min_slices = 2;
  po.max_slices = 4;
  po.seed = 11;
  if (!fs::exists(dir / "corpus" / "manifest.json")) {
    const auto m = data::make_phantom_corpus(po, dir / "corpus");
    data::kfold_by_subject(m.subject_ids(), 5, 11).save(dir / "split.json");
  }
  pipeline::ExperimentConfig cfg;
  cfg.manifest = dir / "corpus" / "manifest.json";
  cfg.split = dir / "split.json";
  cfg.out_root = out;
  cfg.seed = 11;
  cfg.epochs_cgan = 30;
  cfg.epochs_fcn = 30;
  return cfg;
}

void desk_run(Outcome& o, const fs::path& work, bool verbose) {
  const fs::path dir = work / "desk";
  fs::remove_all(dir);
  const auto cfg = desk_experiment(dir, dir / "run1");
  const auto t0 = std::chrono::steady_clock::now();
  const auto exp = pipeline::open_experiment(cfg);
  const auto c = pipeline::run_all(exp, [&](const std::string& line) {
    if (verbose) std::cerr << line << "\n";
  });
  const double t = seconds_since(t0);
  const auto cg = pipeline::summarize_cgan(exp);
  o.expect(true, "pipeline completed on " + std::to_string(exp.manifest.scan_count()) + " scans of 10 subjects");
  o.expect(cg.mean_heldout_l1 < cg.mean_untrained_l1,
           fmt("held-out derived-MR L1 %.4f < untrained generator L1 %.4f", cg.mean_heldout_l1, cg.mean_untrained_l1));
  const double fcn_dice = c.fcn.summary[0].mean;
  const double cgan_dice = c.fcn_cgan.summary[0].mean;
  o.expect(fcn_dice > 0.7, fmt("FCN held-out dice %.3f > 0.7", fcn_dice));
  o.details.push_back(fmt("     FCN-CGAN held-out dice %.3f (difference to FCN %+.3f)", cgan_dice, cgan_dice - fcn_dice));
  const std::string table = read_text(cfg.out_root / "report.txt");
  bool layout = fs::exists(cfg.out_root / "report.json") && table.find("FCN-CGAN") != std::string::npos;
  for (const char* title : metrics::kMetricTitles) layout = layout && table.find(title) != std::string::npos;
  layout = layout && table.find("±") != std::string::npos;
  o.expect(layout, "report.json and report.txt with six metrics, mean ± std, FCN and FCN-CGAN rows");
  o.expect(pipeline::audit_provenance(exp).empty(), "leakage audit clean");
  o.expect(t < 3600.0, fmt("runtime %.1f min < 60 min", t / 60.0));
  std::istringstream lines(table);
  for (std::string line; std::getline(lines, line);) o.details.push_back("     | " + line);
}

void determinism(Outcome& o, const fs::path& work, bool verbose) {
  const fs::path dir = work / "desk";
  if (!fs::exists(dir / "run1" / "report.json")) {
    Outcome first;
    desk_run(first, work, verbose);
  }
  const auto cfg = desk_experiment(dir, dir / "run2");
  fs::remove_all(cfg.out_root);
  const auto t0 = std::chrono::steady_clock::now();
  pipeline::run_all(pipeline::open_experiment(cfg), [&](const std::string& line) {
    if (verbose) std::cerr << line << "\n";
  });
  const double t = seconds_since(t0);
  const std::string a = read_text(dir / "run1" / "report.json");
  const std::string b = read_text(dir / "run2" / "report.json");
  o.expect(!a.empty() && a == b, "repeat run reproduces report.json byte-for-byte (" + std::to_string(b.size()) +
                                     " bytes)");
  o.details.push_back(fmt("     repeat runtime %.1f min", t / 60.0));
}

void format_round_trips(Outcome& o, const fs::path& work) {
  const fs::path dir = work / "formats";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const Tensor stack = random_uniform({5, 3, 64, 64}, -1, 1, 31);
  data::write_stack(stack, dir / "ctp.ctmr");
  o.expect(bitwise_equal(data::read_stack(dir / "ctp.ctmr"), stack), "float32 stack round-trip bitwise");
  Tensor mask = random_uniform({1, 3, 64, 64}, 0, 1, 32);
  for (float& v : mask.data()) v = v > 0.8f ? 1.0f : 0.0f;
  data::write_stack(mask, dir / "mask.ctmr", data::Dtype::uint8);
  o.expect(bitwise_equal(data::read_stack(dir / "mask.ctmr"), mask), "uint8 mask stack round-trip bitwise");

  auto model = cgan::CganModel::create(cgan::GeneratorConfig::desk(), cgan::DiscriminatorConfig{}, 33);
  nn::save_checkpoint(dir / "g.ckpt", model.g, &model.g_adam);
  const auto ck = nn::load_checkpoint(dir / "g.ckpt");
  o.expect(nn::bitwise_equal(ck.params, model.g) && ck.adam.has_value(), "generator checkpoint round-trip bitwise");
  nn::save_checkpoint(dir / "g2.ckpt", ck.params, &*ck.adam);
  o.expect(read_text(dir / "g.ckpt") == read_text(dir / "g2.ckpt"), "re-saved checkpoint is byte-identical");

  auto typed = [&](const char* what, const std::function<void()>& load, const std::function<bool(const Error&)>& is) {
    try {
      load();
      o.expect(false, std::string(what) + ": loaded without error");
    } catch (const Error& e) {
      o.expect(is(e), std::string(what) + ": " + e.what());
    }
  };
  const auto good = data::encode_stack(random_uniform({2, 3, 4}, -1, 1, 34), data::Dtype::float32);
  auto bytes = good;
  bytes[0] = 'X';
  typed("stack magic", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const BadMagicError*>(&e) != nullptr; });
  bytes = good;
  bytes[4] = 9;
  typed("stack version", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const VersionError*>(&e) != nullptr; });
  bytes = good;
  bytes[5] = 7;
  typed("stack dtype", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const DtypeError*>(&e) != nullptr; });
  bytes = good;
  for (int i = 7; i < 19; ++i) bytes[static_cast<std::size_t>(i)] = 0xff;
  typed("stack dimensions", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const DimensionOverflowError*>(&e) != nullptr; });
  bytes.assign(good.begin(), good.end() - 3);
  typed("stack truncated", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const TruncatedError*>(&e) != nullptr; });
  bytes = good;
  bytes.push_back(0);
  typed("stack trailing bytes", [&] { data::decode_stack(bytes); },
        [](const Error& e) { return dynamic_cast<const TrailingDataError*>(&e) != nullptr; });

  const auto ckpt = nn::encode_checkpoint(model.g, &model.g_adam);
  bytes = ckpt;
  bytes[1] = 'X';
  typed("checkpoint magic", [&] { nn::decode_checkpoint(bytes); },
        [](const Error& e) { return dynamic_cast<const BadMagicError*>(&e) != nullptr; });
  bytes = ckpt;
  bytes[4] = 9;
  typed("checkpoint version", [&] { nn::decode_checkpoint(bytes); },
        [](const Error& e) { return dynamic_cast<const VersionError*>(&e) != nullptr; });
  bytes.assign(ckpt.begin(), ckpt.begin() + static_cast<std::ptrdiff_t>(ckpt.size() / 2));
  typed("checkpoint truncated", [&] { nn::decode_checkpoint(bytes); },
        [](const Error& e) { return dynamic_cast<const TruncatedError*>(&e) != nullptr; });
  bytes = ckpt;
  bytes.push_back(0);
  typed("checkpoint trailing bytes", [&] { nn::decode_checkpoint(bytes); },
        [](const Error& e) { return dynamic_cast<const TrailingDataError*>(&e) != nullptr; });

  // A failed load leaves the destination untouched.
  {
    std::ofstream(dir / "bad.ckpt", std::ios::binary)
        .write(reinterpret_cast<const char*>(ckpt.data()), static_cast<std::streamsize>(ckpt.size() - 1));
  }
  nn::ParamSet target = model.g.clone();
  bool untouched = false;
  try {
    nn::assign_parameters(target, nn::load_checkpoint(dir / "bad.ckpt").params);
  } catch (const FormatError&) {
    untouched = nn::bitwise_equal(target, model.g);
  }
  o.expect(untouched, "truncated checkpoint file raises before any parameter is assigned");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria, one PASS/FAIL line each", "ctmr_acceptance"};
  std::vector<int> selected;
  std::string work = (fs::temp_directory_path() / "ctmr_acceptance").string();
  bool verbose = false;
  app.add_option("--criteria", selected, "Criteria to run (default: all)")->delimiter(',')->check(CLI::Range(1, 10));
  app.add_option("--work", work, "Scratch directory for corpora and runs")->capture_default_str();
  app.add_flag("--verbose", verbose, "Stream pipeline progress to stderr");
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) {
    selected.resize(10);
    std::iota(selected.begin(), selected.end(), 1);
  }
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<void(Outcome&)>>> criteria = {
      {"discriminator shape law", discriminator_shape},
      {"generator contract", generator_contract},
      {"gradient suite", gradient_suite},
      {"loss identities", loss_identities},
      {"metric oracle equivalence", metric_oracle},
      {"split protocol", [&](Outcome& o) { split_protocol(o, work); }},
      {"CGAN overfit smoke", cgan_overfit},
      {"end-to-end desk run", [&](Outcome& o) { desk_run(o, work, verbose); }},
      {"determinism", [&](Outcome& o) { determinism(o, work, verbose); }},
      {"format round-trips", [&](Outcome& o) { format_round_trips(o, work); }},
  };

  int failures = 0;
  for (int id : selected) {
    const auto& [name, fn] = criteria[static_cast<std::size_t>(id - 1)];
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.expect(false, std::string("threw: ") + e.what());
    }
    const double t = seconds_since(t0);
    std::printf("criterion %2d %-26s %s  (%.1f s)\n", id, name, o.pass ? "PASS" : "FAIL", t);
    for (const auto& d : o.details) std::printf("    %s\n", d.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
