#include "ctmr/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdlib>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"
#include "ctmr/autograd.hpp"
#include "ctmr/errors.hpp"
#include "ctmr/figures.hpp"
#include "ctmr/ops.hpp"
#include "ctmr/rng.hpp"

namespace ctmr::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

struct Key {
  const char* name;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename T>
T as(const json& v, const char* key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ArgumentError(std::string("config key '") + key + "' has the wrong type: " + v.dump());
  }
}

// Floats are written with their shortest decimal form (2e-4, not
// 0.00019999999494757503).
template <typename T>
json value_of(const T& v) {
  return json(v);
}

template <>
json value_of(const float& v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return json(std::strtod(std::string(buf, r.ptr).c_str(), nullptr));
}

#define CTMR_KEY(NAME, TYPE, FIELD)                                         \
  Key {                                                                     \
    NAME, [](const ExperimentConfig& c) { return value_of(c.FIELD); },     \
        [](ExperimentConfig& c, const json& v) { c.FIELD = as<TYPE>(v, NAME); } \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = {
      {"manifest", [](const ExperimentConfig& c) { return json(c.manifest.string()); },
       [](ExperimentConfig& c, const json& v) { c.manifest = as<std::string>(v, "manifest"); }},
      {"split", [](const ExperimentConfig& c) { return json(c.split.string()); },
       [](ExperimentConfig& c, const json& v) { c.split = as<std::string>(v, "split"); }},
      {"out_root", [](const ExperimentConfig& c) { return json(c.out_root.string()); },
       [](ExperimentConfig& c, const json& v) { c.out_root = as<std::string>(v, "out_root"); }},
      CTMR_KEY("image_size", int, image_size),
      CTMR_KEY("seed", std::uint64_t, seed),
      CTMR_KEY("jobs", int, jobs),
      CTMR_KEY("cgan.epochs", int, epochs_cgan),
      CTMR_KEY("cgan.lambda", float, lambda),
      CTMR_KEY("adam.lr", float, adam.lr),
      CTMR_KEY("adam.beta1", float, adam.beta1),
      CTMR_KEY("adam.beta2", float, adam.beta2),
      CTMR_KEY("adam.eps", float, adam.eps),
      CTMR_KEY("generator.base_width", int, generator.base_width),
      CTMR_KEY("generator.resnet_blocks", int, generator.n_resnet_blocks),
      CTMR_KEY("generator.dropout_rate", float, generator.dropout_rate),
      CTMR_KEY("discriminator.widths", std::vector<int>, discriminator.widths),
      CTMR_KEY("genmr.dropout", bool, genmr_dropout),
      CTMR_KEY("fcn.epochs", int, epochs_fcn),
      CTMR_KEY("fcn.gamma", float, fcn.gamma),
      CTMR_KEY("fcn.alpha", float, fcn.alpha),
      CTMR_KEY("fcn.stem_widths", std::vector<int>, fcn.stem_widths),
      CTMR_KEY("fcn.trunk_width", int, fcn.trunk_width),
      CTMR_KEY("fcn.dilations", std::vector<int>, fcn.dilations),
      CTMR_KEY("fcn.bins", std::vector<int>, fcn.bins),
      CTMR_KEY("augment.rotation_deg", double, augment.rotation_deg),
      CTMR_KEY("augment.translation_frac", double, augment.translation_frac),
      CTMR_KEY("augment.scale_lo", double, augment.scale_lo),
      CTMR_KEY("augment.scale_hi", double, augment.scale_hi),
      CTMR_KEY("metrics.unit_spacing", bool, unit_spacing),
  };
  return table;
}

#undef CTMR_KEY

}  // namespace

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& k : key_table()) out.push_back(k.name);
  return out;
}

json ExperimentConfig::to_json() const {
  json j = json::object();
  for (const auto& k : key_table()) j[k.name] = k.get(*this);
  return j;
}

void ExperimentConfig::apply_json(const json& j) {
  if (!j.is_object()) throw ArgumentError("config must be a JSON object with dotted keys");
  for (const auto& [name, value] : j.items()) {
    const auto& table = key_table();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Key& k) { return name == k.name; });
    if (it == table.end()) throw ArgumentError("unknown config key '" + name + "'");
    it->set(*this, value);
  }
}

void ExperimentConfig::validate() const {
  if (manifest.empty() || !fs::exists(manifest)) throw ArgumentError("manifest '" + manifest.string() + "' not found");
  if (split.empty() || !fs::exists(split)) throw ArgumentError("split file '" + split.string() + "' not found");
  if (out_root.empty()) throw ArgumentError("an output root is required");
  if (epochs_cgan < 1 || epochs_fcn < 1) throw ArgumentError("epoch counts must be >= 1");
  if (!(lambda >= 0.0f)) throw ArgumentError("lambda must be non-negative");
  if (!(adam.lr > 0.0f) || !(adam.beta1 >= 0.0f && adam.beta1 < 1.0f) || !(adam.beta2 >= 0.0f && adam.beta2 < 1.0f)) {
    throw ArgumentError("invalid Adam hyperparameters");
  }
  if (jobs < 1) throw ArgumentError("jobs must be >= 1");
  augment.validate();
}

// ---------------------------------------------------------------------------
// Experiment

std::vector<const data::ScanEntry*> Experiment::test_scans(int fold) const {
  const auto& test = split.test_subjects(fold);
  std::vector<const data::ScanEntry*> out;
  for (const auto& s : manifest.subjects) {
    if (std::find(test.begin(), test.end(), s.id) == test.end()) continue;
    for (const auto& scan : s.scans) out.push_back(&scan);
  }
  return out;
}

std::vector<const data::ScanEntry*> Experiment::train_scans(int fold) const {
  const auto& test = split.test_subjects(fold);
  std::vector<const data::ScanEntry*> out;
  for (const auto& s : manifest.subjects) {
    if (std::find(test.begin(), test.end(), s.id) != test.end()) continue;
    for (const auto& scan : s.scans) out.push_back(&scan);
  }
  return out;
}

const data::SubjectEntry& Experiment::subject_of_scan(const data::ScanEntry& scan) const {
  for (const auto& s : manifest.subjects) {
    for (const auto& sc : s.scans) {
      if (&sc == &scan || sc.id == scan.id) return s;
    }
  }
  throw ArgumentError("scan '" + scan.id + "' is not in the manifest");
}

data::ScanRecord Experiment::load(const data::ScanEntry& scan) const {
  return data::load_scan(manifest, subject_of_scan(scan), scan);
}

int Experiment::fold_of_scan(const data::ScanEntry& scan) const {
  const auto fold = split.fold_of(subject_of_scan(scan).id);
  if (!fold) throw ArgumentError("scan '" + scan.id + "' has no fold assignment");
  return *fold;
}

fs::path Experiment::fold_dir(int fold) const { return config.out_root / ("fold_" + std::to_string(fold)); }

fs::path Experiment::genmr_path(int fold, const std::string& scan_id) const {
  return fold_dir(fold) / "genmr" / (scan_id + "_genmr.ctmr");
}

fs::path Experiment::pred_path(int fold, const std::string& scan_id, fcn::InputMode mode) const {
  return fold_dir(fold) / "preds" / (scan_id + (mode == fcn::InputMode::ctp ? "_fcn.ctmr" : "_fcn_cgan.ctmr"));
}

Experiment open_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment exp;
  exp.config = cfg;
  exp.manifest = data::Manifest::load(cfg.manifest);
  exp.split = data::FoldSplit::load(cfg.split);
  const auto subjects = exp.manifest.subject_ids();
  for (const auto& id : subjects) {
    if (!exp.split.fold_of(id)) throw ArgumentError("subject '" + id + "' has no fold assignment in the split");
  }
  exp.split.validate(subjects);
  exp.image_size = cfg.image_size > 0 ? cfg.image_size : exp.manifest.image_size;
  if (exp.image_size <= 0) throw ArgumentError("image size unknown: set image_size or record it in the manifest");
  if (exp.manifest.image_size > 0 && exp.manifest.image_size != exp.image_size) {
    throw ArgumentError("configured image size " + std::to_string(exp.image_size) + " differs from the manifest's " +
                        std::to_string(exp.manifest.image_size));
  }
  exp.config.generator.image_size = exp.image_size;
  exp.config.fcn.image_size = exp.image_size;
  exp.config.generator.validate();
  exp.config.discriminator.validate();
  exp.config.fcn.validate();
  return exp;
}

// ---------------------------------------------------------------------------
// Fold state and logs

namespace {

std::uint64_t fold_seed(const Experiment& exp, int fold) {
  return derive_seed(derive_seed(exp.config.seed, "fold"), static_cast<std::uint64_t>(fold));
}

void write_text(const fs::path& path, const std::string& text) {
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json_file(const fs::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

json load_state(const Experiment& exp, int fold) {
  const fs::path path = exp.fold_dir(fold) / "fold.json";
  if (!fs::exists(path)) return json::object();
  try {
    return read_json_file(path);
  } catch (const FormatError&) {
    return json::object();
  }
}

void save_state(const Experiment& exp, int fold, json state) {
  state["fold"] = fold;
  state["test_subjects"] = exp.split.test_subjects(fold);
  state["train_subjects"] = exp.split.train_subjects(fold);
  write_text(exp.fold_dir(fold) / "fold.json", state.dump(2) + "\n");
}

// Replaces the log lines of `stage` with `lines`, keeping other stages.
void write_stage_log(const Experiment& exp, int fold, const std::string& stage, const std::vector<json>& lines) {
  const fs::path path = exp.fold_dir(fold) / "log.jsonl";
  std::string out;
  if (fs::exists(path)) {
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || j.value("stage", "") == stage) continue;
      out += line + "\n";
    }
  }
  for (const auto& l : lines) out += l.dump() + "\n";
  write_text(path, out);
}

json subjects_event(const Experiment& exp, int fold, const std::string& stage) {
  return {{"stage", stage},
          {"event", "subjects"},
          {"fold", fold},
          {"train_subjects", exp.split.train_subjects(fold)},
          {"test_subjects", exp.split.test_subjects(fold)}};
}

json cgan_fingerprint(const Experiment& exp) {
  const auto& c = exp.config;
  return {{"seed", c.seed},
          {"epochs", c.epochs_cgan},
          {"lambda", c.lambda},
          {"adam", {c.adam.lr, c.adam.beta1, c.adam.beta2, c.adam.eps}},
          {"generator",
           {c.generator.in_channels, c.generator.out_channels, c.generator.base_width, c.generator.n_resnet_blocks,
            c.generator.image_size, c.generator.dropout_rate}},
          {"discriminator", {c.discriminator.widths, c.discriminator.kernel, c.discriminator.padding,
                             c.discriminator.leaky_slope}}};
}

json genmr_fingerprint(const Experiment& exp) {
  return {{"cgan", cgan_fingerprint(exp)}, {"dropout", exp.config.genmr_dropout}};
}

json fcn_fingerprint(const Experiment& exp) {
  const auto& c = exp.config;
  const auto& f = c.fcn;
  return {{"genmr", genmr_fingerprint(exp)},
          {"epochs", c.epochs_fcn},
          {"adam", {c.adam.lr, c.adam.beta1, c.adam.beta2, c.adam.eps}},
          {"fcn", {f.stem_widths, f.trunk_width, f.dilations, f.bins, f.branch_width, f.head_width, f.gamma, f.alpha}},
          {"augment", {c.augment.rotation_deg, c.augment.translation_frac, c.augment.scale_lo, c.augment.scale_hi}}};
}

bool stage_recorded(const json& state, const std::string& stage, const json& fingerprint) {
  return state.contains("stages") && state["stages"].contains(stage) &&
         state["stages"][stage].value("fingerprint", json()) == fingerprint;
}

void record_stage(const Experiment& exp, int fold, const std::string& stage, json entry) {
  json state = load_state(exp, fold);
  state["stages"][stage] = std::move(entry);
  save_state(exp, fold, std::move(state));
}

// Drops the records of stages that depend on a stage being redone.
void invalidate_after(const Experiment& exp, int fold, const std::vector<std::string>& stages) {
  json state = load_state(exp, fold);
  if (!state.contains("stages")) return;
  for (const auto& s : stages) state["stages"].erase(s);
  save_state(exp, fold, std::move(state));
}

void say(const ProgressFn& progress, const std::string& msg) {
  if (progress) progress(msg);
}

std::pair<nn::ParamSet, nn::ParamSet> split_cgan_params(const nn::ParamSet& all) {
  nn::ParamSet g, d;
  for (const auto& e : all) {
    if (e.name.rfind("g.", 0) == 0) {
      g.add(e.name, e.tensor);
    } else if (e.name.rfind("d.", 0) == 0) {
      d.add(e.name, e.tensor);
    } else {
      throw SchemaError("cgan checkpoint: unexpected parameter '" + e.name + "'");
    }
  }
  return {std::move(g), std::move(d)};
}

nn::ParamSet load_generator(const Experiment& exp, int fold) {
  const auto ckpt = nn::load_checkpoint(exp.fold_dir(fold) / "cgan.ckpt");
  auto [g, d] = split_cgan_params(ckpt.params);
  nn::ParamSet gen = cgan::make_generator_params(exp.config.generator, 0);
  nn::assign_parameters(gen, g);
  nn::ParamSet disc = cgan::make_discriminator_params(exp.config.discriminator, 0);
  nn::assign_parameters(disc, d);
  return gen;
}

nn::ParamSet load_fcn(const Experiment& exp, int fold, fcn::InputMode mode) {
  fcn::FcnConfig cfg = exp.config.fcn;
  cfg.mode = mode;
  const auto ckpt = nn::load_checkpoint(exp.fold_dir(fold) / (mode == fcn::InputMode::ctp ? "fcn.ckpt" : "fcn_cgan.ckpt"));
  fcn::check_params(ckpt.params, cfg);
  return ckpt.params;
}

template <typename F>
bool verifies(F&& f) {
  try {
    f();
    return true;
  } catch (const Error&) {
    return false;
  }
}

bool stack_ok(const fs::path& path, const Shape& shape) {
  return verifies([&] {
    if (data::read_stack(path).shape() != shape) throw ShapeError("shape");
  });
}

Tensor derived_mr_for(const Experiment& exp, const data::ScanEntry& scan, const data::ScanRecord& rec) {
  const fs::path path = exp.genmr_path(exp.fold_of_scan(scan), scan.id);
  if (!fs::exists(path)) {
    throw IoError("derived MR for scan '" + scan.id + "' is missing (" + path.string() + "); run generate-mr first");
  }
  Tensor mr = data::read_stack(path);
  if (mr.shape() != rec.dwi.shape()) {
    throw ShapeError("derived MR for '" + scan.id + "' has shape " + to_string(mr.shape()) + ", expected " +
                     to_string(rec.dwi.shape()));
  }
  return mr;
}

// Mean absolute error of the generator over every slice of the scans.
double generator_l1(const Experiment& exp, const nn::ParamSet& g, const std::vector<data::ScanRecord>& scans,
                    std::uint64_t seed, std::vector<Tensor>* outputs) {
  NoGradGuard no_grad;
  double total = 0.0;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const auto& rec = scans[i];
    const std::uint64_t scan_seed = derive_seed(seed, rec.scan_id);
    std::vector<Tensor> slices;
    for (int z = 0; z < rec.slices(); ++z) {
      Tensor out = cgan::generator_forward(data::slice_of(rec.ctp, z), g, exp.config.generator,
                                           exp.config.genmr_dropout, derive_seed(scan_seed, static_cast<std::uint64_t>(z)));
      const Tensor target = data::slice_of(rec.dwi, z);
      for (std::size_t k = 0; k < out.data().size(); ++k) total += std::fabs(out.data()[k] - target.data()[k]);
      count += out.numel();
      slices.push_back(out);
    }
    if (outputs) outputs->push_back(data::stack_slices(slices));
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stages

void train_cgan_fold(const Experiment& exp, int fold, const ProgressFn& progress) {
  const json fp = cgan_fingerprint(exp);
  const json state = load_state(exp, fold);
  if (stage_recorded(state, "cgan", fp) && verifies([&] { load_generator(exp, fold); })) {
    say(progress, "fold " + std::to_string(fold) + ": CGAN checkpoint up to date, skipping");
    return;
  }
  invalidate_after(exp, fold, {"cgan", "genmr"});
  fs::create_directories(exp.fold_dir(fold));

  std::vector<std::pair<Tensor, Tensor>> pairs;
  for (const auto* scan : exp.train_scans(fold)) {
    const auto rec = exp.load(*scan);
    for (int z = 0; z < rec.slices(); ++z) pairs.emplace_back(data::slice_of(rec.ctp, z), data::slice_of(rec.dwi, z));
  }
  if (pairs.empty()) throw ArgumentError("fold " + std::to_string(fold) + " has no training slices");

  const std::uint64_t seed = derive_seed(fold_seed(exp, fold), "cgan");
  auto model = cgan::CganModel::create(exp.config.generator, exp.config.discriminator, seed, exp.config.adam);
  std::vector<json> log = {subjects_event(exp, fold, "cgan")};
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < exp.config.epochs_cgan; ++epoch) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(derive_seed(seed, "order"), static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng.engine());
    double d_sum = 0.0, g_sum = 0.0, l1_sum = 0.0;
    for (std::size_t i : order) {
      const auto r = cgan::train_step(model, pairs[i].first, pairs[i].second, exp.config.lambda,
                                      derive_seed(derive_seed(seed, "step"), step));
      log.push_back({{"stage", "cgan"},
                     {"event", "step"},
                     {"epoch", epoch},
                     {"step", step},
                     {"d_loss", r.d_loss},
                     {"g_loss", r.g_loss},
                     {"l1", r.l1}});
      d_sum += r.d_loss;
      g_sum += r.g_loss;
      l1_sum += r.l1;
      ++step;
    }
    const double n = static_cast<double>(order.size());
    log.push_back({{"stage", "cgan"},
                   {"event", "epoch"},
                   {"epoch", epoch},
                   {"d_loss", d_sum / n},
                   {"g_loss", g_sum / n},
                   {"l1", l1_sum / n}});
    char buf[160];
    std::snprintf(buf, sizeof buf, "fold %d: CGAN epoch %d/%d  d_loss %.4f  g_loss %.4f  l1 %.4f", fold, epoch + 1,
                  exp.config.epochs_cgan, d_sum / n, g_sum / n, l1_sum / n);
    say(progress, buf);
  }

  nn::ParamSet all;
  for (const auto& e : model.g) all.add(e.name, e.tensor);
  for (const auto& e : model.d) all.add(e.name, e.tensor);
  nn::save_checkpoint(exp.fold_dir(fold) / "cgan.ckpt", all);
  write_stage_log(exp, fold, "cgan", log);
  record_stage(exp, fold, "cgan", {{"fingerprint", fp}, {"checkpoint", "cgan.ckpt"}, {"steps", step}});
}

void generate_mr_fold(const Experiment& exp, int fold, const ProgressFn& progress) {
  const json fp = genmr_fingerprint(exp);
  const json state = load_state(exp, fold);
  if (!stage_recorded(state, "cgan", cgan_fingerprint(exp))) {
    throw ArgumentError("fold " + std::to_string(fold) + " has no current CGAN checkpoint; run train-cgan first");
  }
  const auto test = exp.test_scans(fold);
  if (stage_recorded(state, "genmr", fp)) {
    bool ok = true;
    for (const auto* scan : test) {
      ok = ok && stack_ok(exp.genmr_path(fold, scan->id),
                          {1, scan->slices, exp.image_size, exp.image_size});
    }
    if (ok) {
      say(progress, "fold " + std::to_string(fold) + ": derived MR up to date, skipping");
      return;
    }
  }

  const nn::ParamSet g = load_generator(exp, fold);
  std::vector<data::ScanRecord> scans;
  for (const auto* scan : test) scans.push_back(exp.load(*scan));
  const std::uint64_t seed = derive_seed(fold_seed(exp, fold), "genmr");
  std::vector<Tensor> outputs;
  const double trained = generator_l1(exp, g, scans, seed, &outputs);
  const nn::ParamSet init =
      cgan::make_generator_params(exp.config.generator, derive_seed(derive_seed(fold_seed(exp, fold), "cgan"),
                                                                     "generator"));
  const double untrained = generator_l1(exp, init, scans, seed, nullptr);

  fs::create_directories(exp.fold_dir(fold) / "genmr");
  json produced = json::object();
  std::vector<json> log = {subjects_event(exp, fold, "genmr")};
  for (std::size_t i = 0; i < scans.size(); ++i) {
    const fs::path path = exp.genmr_path(fold, scans[i].scan_id);
    data::write_stack(outputs[i], path);
    produced[scans[i].scan_id] = {{"path", fs::relative(path, exp.fold_dir(fold)).generic_string()},
                                  {"subject", scans[i].subject_id},
                                  {"checkpoint", "cgan.ckpt"}};
    log.push_back({{"stage", "genmr"}, {"event", "generated"}, {"scan", scans[i].scan_id},
                   {"subject", scans[i].subject_id}});
  }
  log.push_back({{"stage", "genmr"}, {"event", "heldout_l1"}, {"trained", trained}, {"untrained", untrained}});
  write_stage_log(exp, fold, "genmr", log);
  record_stage(exp, fold, "genmr",
               {{"fingerprint", fp}, {"scans", produced}, {"heldout_l1", trained}, {"untrained_l1", untrained}});
  char buf[160];
  std::snprintf(buf, sizeof buf, "fold %d: derived MR for %zu scans, held-out L1 %.4f (untrained %.4f)", fold,
                scans.size(), trained, untrained);
  say(progress, buf);
}

void train_fcn_fold(const Experiment& exp, int fold, const ProgressFn& progress) {
  const json fp = fcn_fingerprint(exp);
  const json state = load_state(exp, fold);
  if (stage_recorded(state, "fcn", fp) && verifies([&] {
        load_fcn(exp, fold, fcn::InputMode::ctp);
        load_fcn(exp, fold, fcn::InputMode::ctp_mr);
      })) {
    say(progress, "fold " + std::to_string(fold) + ": FCN checkpoints up to date, skipping");
    return;
  }
  invalidate_after(exp, fold, {"fcn", "segment"});
  fs::create_directories(exp.fold_dir(fold));

  std::vector<fcn::Sample> plain, with_mr;
  for (const auto* scan : exp.train_scans(fold)) {
    const auto rec = exp.load(*scan);
    const Tensor mr = derived_mr_for(exp, *scan, rec);
    for (auto& s : fcn::scan_samples(rec)) plain.push_back(std::move(s));
    for (auto& s : fcn::scan_samples(rec, mr)) with_mr.push_back(std::move(s));
  }
  if (plain.empty()) throw ArgumentError("fold " + std::to_string(fold) + " has no training slices");

  const std::uint64_t seed = derive_seed(fold_seed(exp, fold), "fcn");
  std::vector<json> log = {subjects_event(exp, fold, "fcn")};
  for (const auto mode : {fcn::InputMode::ctp, fcn::InputMode::ctp_mr}) {
    fcn::FcnConfig cfg = exp.config.fcn;
    cfg.mode = mode;
    nn::ParamSet params = fcn::make_fcn_params(cfg, derive_seed(seed, "init"));
    nn::AdamState adam = nn::make_adam(params, exp.config.adam);
    const auto& dataset = mode == fcn::InputMode::ctp ? plain : with_mr;
    for (int epoch = 0; epoch < exp.config.epochs_fcn; ++epoch) {
      const double loss = fcn::train_epoch(dataset, params, adam, cfg, exp.config.augment,
                                           derive_seed(seed, static_cast<std::uint64_t>(epoch)));
      log.push_back({{"stage", "fcn"}, {"event", "epoch"}, {"model", fcn::label_of(mode)}, {"epoch", epoch},
                     {"loss", loss}});
      char buf[160];
      std::snprintf(buf, sizeof buf, "fold %d: %s epoch %d/%d  focal %.5f", fold, fcn::label_of(mode), epoch + 1,
                    exp.config.epochs_fcn, loss);
      say(progress, buf);
    }
    nn::save_checkpoint(exp.fold_dir(fold) / (mode == fcn::InputMode::ctp ? "fcn.ckpt" : "fcn_cgan.ckpt"), params);
  }
  write_stage_log(exp, fold, "fcn", log);
  record_stage(exp, fold, "fcn", {{"fingerprint", fp}, {"checkpoints", {"fcn.ckpt", "fcn_cgan.ckpt"}}});
}

void segment_fold(const Experiment& exp, int fold, const ProgressFn& progress) {
  const json fp = fcn_fingerprint(exp);
  const json state = load_state(exp, fold);
  if (!stage_recorded(state, "fcn", fp)) {
    throw ArgumentError("fold " + std::to_string(fold) + " has no current FCN checkpoints; run train-fcn first");
  }
  const auto test = exp.test_scans(fold);
  if (stage_recorded(state, "segment", fp)) {
    bool ok = true;
    for (const auto* scan : test) {
      for (const auto mode : {fcn::InputMode::ctp, fcn::InputMode::ctp_mr}) {
        ok = ok && stack_ok(exp.pred_path(fold, scan->id, mode), {1, scan->slices, exp.image_size, exp.image_size});
      }
    }
    if (ok) {
      say(progress, "fold " + std::to_string(fold) + ": predictions up to date, skipping");
      return;
    }
  }
  fs::create_directories(exp.fold_dir(fold) / "preds");
  std::vector<json> log;
  for (const auto mode : {fcn::InputMode::ctp, fcn::InputMode::ctp_mr}) {
    fcn::FcnConfig cfg = exp.config.fcn;
    cfg.mode = mode;
    const nn::ParamSet params = load_fcn(exp, fold, mode);
    for (const auto* scan : test) {
      const auto rec = exp.load(*scan);
      const Tensor mr = mode == fcn::InputMode::ctp ? Tensor() : derived_mr_for(exp, *scan, rec);
      const Tensor pred = fcn::segment_scan(rec, mr, params, cfg);
      data::write_stack(pred, exp.pred_path(fold, scan->id, mode), data::Dtype::uint8);
      log.push_back({{"stage", "segment"}, {"event", "predicted"}, {"model", fcn::label_of(mode)},
                     {"scan", scan->id}});
    }
  }
  write_stage_log(exp, fold, "segment", log);
  record_stage(exp, fold, "segment", {{"fingerprint", fp}});
  say(progress, "fold " + std::to_string(fold) + ": predicted " + std::to_string(test.size()) + " scans");
}

void for_folds(const Experiment& exp, const std::vector<int>& folds,
               const std::function<void(const Experiment&, int)>& stage) {
  std::vector<int> todo = folds;
  if (todo.empty()) {
    todo.resize(exp.split.fold_count());
    std::iota(todo.begin(), todo.end(), 0);
  }
  for (int k : todo) exp.split.test_subjects(k);
  const int jobs = std::min<int>(exp.config.jobs, static_cast<int>(todo.size()));
  if (jobs <= 1) {
    for (int k : todo) stage(exp, k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(todo.size());
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < todo.size(); i = next++) {
        try {
          stage(exp, todo[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void run_cgan_folds(const Experiment& exp, const ProgressFn& progress) {
  // Every scan must map to a fold before any training starts.
  for (const auto& s : exp.manifest.subjects) {
    for (const auto& scan : s.scans) exp.fold_of_scan(scan);
  }
  for_folds(exp, {}, [&](const Experiment& e, int k) {
    train_cgan_fold(e, k, progress);
    generate_mr_fold(e, k, progress);
  });
}

CganSummary summarize_cgan(const Experiment& exp) {
  CganSummary s;
  for (int k = 0; k < exp.split.fold_count(); ++k) {
    const json state = load_state(exp, k);
    if (!stage_recorded(state, "genmr", genmr_fingerprint(exp))) {
      throw ArgumentError("fold " + std::to_string(k) + " has no derived MR; run generate-mr first");
    }
    s.heldout_l1.push_back(state["stages"]["genmr"]["heldout_l1"].get<double>());
    s.untrained_l1.push_back(state["stages"]["genmr"]["untrained_l1"].get<double>());
  }
  const double n = static_cast<double>(s.heldout_l1.size());
  s.mean_heldout_l1 = std::accumulate(s.heldout_l1.begin(), s.heldout_l1.end(), 0.0) / n;
  s.mean_untrained_l1 = std::accumulate(s.untrained_l1.begin(), s.untrained_l1.end(), 0.0) / n;
  return s;
}

metrics::MetricsReport evaluate_predictions(const Experiment& exp, fcn::InputMode mode) {
  const Spacing spacing = exp.config.unit_spacing ? Spacing::unit() : exp.manifest.spacing;
  std::vector<metrics::MetricRow> rows;
  for (const auto& s : exp.manifest.subjects) {
    for (const auto& scan : s.scans) {
      const fs::path path = exp.pred_path(exp.fold_of_scan(scan), scan.id, mode);
      if (!fs::exists(path)) throw IoError("prediction '" + path.string() + "' is missing; run segment first");
      const Tensor pred = data::read_stack(path);
      const Tensor gt = data::read_stack(exp.manifest.root / scan.mask);
      rows.push_back(metrics::evaluate_scan(scan.id, pred, gt, spacing));
    }
  }
  return metrics::aggregate(fcn::label_of(mode), std::move(rows));
}

Comparison write_reports(const Experiment& exp) {
  Comparison c{evaluate_predictions(exp, fcn::InputMode::ctp), evaluate_predictions(exp, fcn::InputMode::ctp_mr)};
  const CganSummary cg = summarize_cgan(exp);
  json report = {{"folds", exp.split.fold_count()},
                 {"seed", exp.config.seed},
                 {"spacing_mm", exp.config.unit_spacing ? json({1.0, 1.0, 1.0}) : json(exp.manifest.spacing.as_array())},
                 {"cgan",
                  {{"heldout_l1", cg.heldout_l1},
                   {"untrained_l1", cg.untrained_l1},
                   {"mean_heldout_l1", cg.mean_heldout_l1},
                   {"mean_untrained_l1", cg.mean_untrained_l1}}},
                 {"reports", {metrics::to_json(c.fcn), metrics::to_json(c.fcn_cgan)}}};
  fs::create_directories(exp.config.out_root);
  write_text(exp.config.out_root / "report.json", report.dump(2) + "\n");
  write_text(exp.config.out_root / "report.txt", metrics::format_table({c.fcn, c.fcn_cgan}));
  return c;
}

Comparison run_segmentation_comparison(const Experiment& exp, const ProgressFn& progress) {
  for_folds(exp, {}, [&](const Experiment& e, int k) {
    train_fcn_fold(e, k, progress);
    segment_fold(e, k, progress);
  });
  return write_reports(exp);
}

std::vector<std::string> audit_provenance(const Experiment& exp) {
  std::vector<std::string> issues;
  std::map<std::string, std::vector<int>> produced_by;
  for (int k = 0; k < exp.split.fold_count(); ++k) {
    const fs::path dir = exp.fold_dir(k) / "genmr";
    if (!fs::exists(dir)) continue;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const std::string name = f.filename().string();
      const std::string suffix = "_genmr.ctmr";
      if (name.size() <= suffix.size() || name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0) {
        continue;
      }
      produced_by[name.substr(0, name.size() - suffix.size())].push_back(k);
    }
  }
  for (const auto& s : exp.manifest.subjects) {
    const int home = *exp.split.fold_of(s.id);
    const auto train = exp.split.train_subjects(home);
    for (const auto& scan : s.scans) {
      const auto it = produced_by.find(scan.id);
      if (it == produced_by.end()) {
        issues.push_back("scan " + scan.id + " has no derived MR");
        continue;
      }
      if (it->second.size() != 1) issues.push_back("scan " + scan.id + " has derived MR from several folds");
      for (int k : it->second) {
        if (k != home) {
          issues.push_back("scan " + scan.id + " (subject " + s.id + ") got derived MR from fold " + std::to_string(k) +
                           ", whose generator trained on that subject");
        }
      }
      if (std::find(train.begin(), train.end(), s.id) != train.end()) {
        issues.push_back("subject " + s.id + " is in the training set of its own test fold");
      }
    }
  }
  for (const auto& [scan_id, folds] : produced_by) {
    bool known = false;
    for (const auto& s : exp.manifest.subjects) {
      for (const auto& scan : s.scans) known = known || scan.id == scan_id;
    }
    if (!known) issues.push_back("derived MR for unknown scan " + scan_id);
  }
  // Every training log must list only subjects outside its fold's test set.
  for (int k = 0; k < exp.split.fold_count(); ++k) {
    const fs::path log = exp.fold_dir(k) / "log.jsonl";
    if (!fs::exists(log)) continue;
    const auto& test = exp.split.test_subjects(k);
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) {
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || j.value("event", "") != "subjects") continue;
      for (const auto& id : j.value("train_subjects", std::vector<std::string>{})) {
        if (std::find(test.begin(), test.end(), id) != test.end()) {
          issues.push_back("fold " + std::to_string(k) + " " + j.value("stage", "?") + " log trains on test subject " +
                           id);
        }
      }
    }
  }
  return issues;
}

void export_figures(const Experiment& exp, const fs::path& comparison_ppm, const fs::path& mr_pgm, int count) {
  if (count < 1) throw ArgumentError("figure needs at least one scan");
  std::vector<const data::ScanEntry*> chosen;
  for (const auto& s : exp.manifest.subjects) {
    for (const auto& scan : s.scans) {
      if (static_cast<int>(chosen.size()) < count) chosen.push_back(&scan);
    }
  }
  const int size = exp.image_size;
  auto plane = [size](const Tensor& stack, int c, int z) {
    Tensor sl = data::slice_of(stack, z);
    Tensor out({size, size});
    const auto n = static_cast<std::size_t>(size) * size;
    std::copy_n(sl.data().begin() + static_cast<std::ptrdiff_t>(c * n), n, out.data().begin());
    return out;
  };
  std::vector<figures::ComparisonPanel> panels;
  std::vector<Tensor> real, generated;
  for (const auto* scan : chosen) {
    const auto rec = exp.load(*scan);
    const int fold = exp.fold_of_scan(*scan);
    const Tensor pa = data::read_stack(exp.pred_path(fold, scan->id, fcn::InputMode::ctp_mr));
    const Tensor pb = data::read_stack(exp.pred_path(fold, scan->id, fcn::InputMode::ctp));
    const Tensor mr = derived_mr_for(exp, *scan, rec);
    const int z = figures::largest_lesion_slice(rec.mask);
    panels.push_back({plane(rec.ctp, 0, z), plane(pa, 0, z), plane(pb, 0, z), plane(rec.mask, 0, z),
                      metrics::dice(pa, rec.mask), metrics::dice(pb, rec.mask)});
    real.push_back(plane(rec.dwi, 0, z));
    generated.push_back(plane(mr, 0, z));
  }
  figures::write_pnm(figures::comparison_grid(panels), comparison_ppm);
  figures::write_pnm(figures::mr_grid(real, generated), mr_pgm);
}

Comparison run_all(const Experiment& exp, const ProgressFn& progress) {
  run_cgan_folds(exp, progress);
  Comparison c = run_segmentation_comparison(exp, progress);
  export_figures(exp, exp.config.out_root / "comparison_grid.ppm", exp.config.out_root / "mr_grid.pgm");
  return c;
}

}  // namespace ctmr::pipeline
