// femur: command-line front end for the fracture CAD pipeline.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "femur/checksum.hpp"
#include "femur/classification.hpp"
#include "femur/dataset.hpp"
#include "femur/evaluation.hpp"
#include "femur/experiment.hpp"
#include "femur/image.hpp"
#include "femur/localization.hpp"
#include "femur/plot.hpp"
#include "femur/retrieval.hpp"
#include "femur/run_record.hpp"
#include "femur/service.hpp"
#include "femur/synth.hpp"
#include "femur/tsne.hpp"
#include "femur/verification.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace femur::cli {
namespace {

constexpr int kExitPrecondition = 1;
constexpr int kExitUsage = 2;

// A missing input, inconsistent artifact or invalid option value.
class PreconditionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& message) {
  if (!ok) throw PreconditionError(message);
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v != nullptr && *v != '\0' ? std::string(v) : fallback;
}

json read_json(const fs::path& path) {
  require(fs::is_regular_file(path), "no such file: " + path.string());
  try {
    return json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw PreconditionError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

// Opens a run directory and its RunRecord; outputs are registered as they
// are written and the record is saved by finish().
class Run {
 public:
  Run(std::string command, fs::path dir, json config, const fs::path& input_manifest = {})
      : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    record_.command = std::move(command);
    record_.config = std::move(config);
    if (!input_manifest.empty()) record_.input_manifest_checksum = sha256_file(input_manifest);
    record_.run_id =
        make_run_id(record_.command, record_.config, record_.input_manifest_checksum);
    record_.started_at = utc_timestamp();
  }

  const fs::path& dir() const { return dir_; }

  fs::path output(const std::string& name, const fs::path& relative) {
    pending_.emplace_back(name, relative);
    return dir_ / relative;
  }

  void finish() {
    for (const auto& [name, rel] : pending_) add_output(record_, dir_, name, dir_ / rel);
    record_.finished_at = utc_timestamp();
    write_run_record(dir_, record_);
    std::cout << "run " << record_.run_id << " -> " << dir_.string() << "\n";
  }

 private:
  fs::path dir_;
  RunRecord record_;
  std::vector<std::pair<std::string, fs::path>> pending_;
};

// Registers every file of a saved model directory.
void add_model_outputs(Run& run, const fs::path& model_rel) {
  for (const auto& e : fs::directory_iterator(run.dir() / model_rel)) {
    if (e.is_regular_file()) {
      run.output(model_rel.generic_string() + "/" + e.path().filename().string(),
                 model_rel / e.path().filename());
    }
  }
}

Manifest load_checked_manifest(const fs::path& path) {
  require(fs::is_regular_file(path), "manifest not found: " + path.string());
  return load_manifest(path);
}

Split parse_split_option(const std::string& text) {
  const auto s = parse_split(text);
  require(s.has_value(), "unknown split '" + text + "' (train, val, test)");
  return *s;
}

std::vector<StudyRecord> records_in(const Manifest& m, Split split) {
  for (const auto& r : m.records) {
    require(r.split.has_value(), "manifest has no split assignment; run `femur split` first");
  }
  auto out = select_split(m.records, split);
  require(!out.empty(), "split '" + std::string(to_string(split)) + "' is empty");
  return out;
}

template <typename T>
std::vector<T> parse_list(const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      if constexpr (std::is_same_v<T, int>) {
        out.push_back(std::stoi(item));
      } else {
        out.push_back(std::stod(item));
      }
    } catch (const std::exception&) {
      throw PreconditionError("bad number '" + item + "' in list '" + text + "'");
    }
  }
  return out;
}

ROIParams parse_roi_option(const std::string& text) {
  const auto v = parse_list<double>(text);
  require(v.size() == 3, "--roi takes t_r,t_c,s");
  const ROIParams p{v[0], v[1], v[2]};
  require(roi_in_range(p), "--roi out of range");
  return p;
}

// The box a classifier sees for one record under the chosen ROI policy.
enum class RoiPolicy { kManual, kAuto, kNone };

RoiPolicy parse_roi_policy(const std::string& text) {
  if (text == "manual") return RoiPolicy::kManual;
  if (text == "auto") return RoiPolicy::kAuto;
  if (text == "none") return RoiPolicy::kNone;
  throw PreconditionError("--roi must be manual, auto or none");
}

struct Inputs {
  std::vector<StudyRecord> records;
  std::vector<Image> images;
  std::vector<std::optional<ROIParams>> rois;  // per policy
  std::vector<RoiOrigin> origins;
};

Inputs gather_inputs(const Manifest& m, Split split, RoiPolicy policy,
                     const ClassifierModel& model, const LocalizerModel* localizer) {
  require(policy != RoiPolicy::kAuto || localizer != nullptr, "--roi auto needs --localizer");
  require(policy == RoiPolicy::kNone || uses_roi(model.config().input_source),
          "the model was trained on full images; use --roi none");
  Inputs in;
  in.records = records_in(m, split);
  for (const auto& r : in.records) {
    in.images.push_back(m.load_image(r));
    switch (policy) {
      case RoiPolicy::kManual:
        require(r.roi.has_value(), "record " + r.image_ref + " has no roi");
        in.rois.push_back(r.roi);
        in.origins.push_back(RoiOrigin::kManual);
        break;
      case RoiPolicy::kAuto:
        in.rois.push_back(localizer->predict_roi(in.images.back()));
        in.origins.push_back(RoiOrigin::kAuto);
        break;
      case RoiPolicy::kNone:
        in.rois.push_back(std::nullopt);
        in.origins.push_back(RoiOrigin::kNone);
        break;
    }
  }
  return in;
}

RoiPolicy default_policy(const ClassifierModel& model) {
  return uses_roi(model.config().input_source) ? RoiPolicy::kManual : RoiPolicy::kNone;
}

ClassifierModel load_classifier(const fs::path& dir) {
  require(fs::is_directory(dir), "model directory not found: " + dir.string());
  return ClassifierModel::load(dir);
}

std::optional<LocalizerModel> load_localizer(const std::string& dir) {
  if (dir.empty()) return std::nullopt;
  require(fs::is_directory(dir), "localizer directory not found: " + dir);
  return LocalizerModel::load(dir);
}

std::vector<const Image*> pointers(const std::vector<Image>& v) {
  std::vector<const Image*> p;
  for (const auto& img : v) p.push_back(&img);
  return p;
}

// --- synth -------------------------------------------------------------

struct SynthOptions {
  int patients = 60;
  std::uint64_t seed = 0;
  int image_size = 256;
  double subtle = 0.0;
  bool pelvis = false;
  std::string mix;
  std::string out = "runs/synth";
};

int cmd_synth(const SynthOptions& o) {
  synth::SynthConfig cfg;
  cfg.n_patients = o.patients;
  cfg.seed = o.seed;
  cfg.image_size = o.image_size;
  cfg.subtle_fraction = o.subtle;
  cfg.pelvis = o.pelvis;
  if (!o.mix.empty()) {
    const auto m = parse_list<double>(o.mix);
    require(m.size() == 3, "--mix takes three fractions");
    cfg.class_mix = {m[0], m[1], m[2]};
  }
  require(cfg.n_patients > 0, "--patients must be positive");
  require(cfg.subtle_fraction >= 0.0 && cfg.subtle_fraction <= 1.0, "--subtle must be in [0, 1]");
  const json config = {{"patients", cfg.n_patients}, {"seed", cfg.seed},
                       {"image_size", cfg.image_size}, {"subtle_fraction", cfg.subtle_fraction},
                       {"pelvis", cfg.pelvis}, {"class_mix", cfg.class_mix}};
  Run run("synth", o.out, config);
  const fs::path manifest = synth::synth_generate(cfg, run.dir());
  run.output("manifest", "manifest.jsonl");
  for (const auto& r : load_manifest(manifest, {.verify_images = false}).records) {
    run.output(r.image_ref, r.image_ref);
  }
  run.finish();
  return 0;
}

// --- split -------------------------------------------------------------

int cmd_split(const std::string& manifest_path, const std::string& ratios_text,
              std::uint64_t seed, const std::string& out) {
  const Manifest m = load_checked_manifest(manifest_path);
  const auto r = parse_list<double>(ratios_text);
  require(r.size() == 3, "--ratios takes three fractions");
  Run run("split", out, {{"ratios", r}, {"seed", seed}}, manifest_path);
  const auto assignment = split_patientwise(m.records, {r[0], r[1], r[2]}, seed);
  auto records = apply_split(m.records, assignment);
  // Image references are rewritten relative to the new manifest.
  const fs::path base = fs::weakly_canonical(run.dir());
  for (auto& rec : records) {
    rec.image_ref = fs::relative(fs::weakly_canonical(m.image_path(rec)), base).generic_string();
  }
  write_manifest(run.output("manifest", "manifest.jsonl"), records);
  json patients = json::object();
  for (const auto& [pid, s] : assignment.assignment) patients[pid] = std::string(to_string(s));
  const auto counts = assignment.patient_counts();
  write_json(run.output("assignment", "split.json"),
             {{"ratios", r}, {"seed", seed}, {"patient_counts", counts}, {"patients", patients}});
  run.finish();
  std::cout << "patients train/val/test: " << counts[0] << "/" << counts[1] << "/" << counts[2]
            << "\n";
  return 0;
}

// --- training ----------------------------------------------------------

struct TrainOptions {
  std::string manifest;
  std::string out;
  std::string profile = "tiny";
  std::string config;
  int epochs = -1;
  double lr = -1.0;
  int batch = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string execution = "reference";
  // classifier only
  std::string mode = "three_class";
  std::string source = "manual_roi";
  std::string pretrained;
  bool class_weighting = false;
  bool no_augment = false;
};

int cmd_train_loc(const TrainOptions& o) {
  require(o.profile == "tiny" || o.profile == "paper", "--profile must be tiny or paper");
  LocalizerConfig cfg = o.profile == "tiny" ? LocalizerConfig::tiny() : LocalizerConfig{};
  if (!o.config.empty()) {
    json j = to_json(cfg);
    j.merge_patch(read_json(o.config));
    cfg = localizer_config_from_json(j);
  }
  if (o.epochs > 0) cfg.epochs = o.epochs;
  if (o.lr > 0) cfg.learning_rate = o.lr;
  if (o.batch > 0) cfg.batch_size = o.batch;
  if (o.seed_set) cfg.seed = o.seed;
  cfg.execution = parse_execution_mode(o.execution);

  const Manifest m = load_checked_manifest(o.manifest);
  const auto train = records_in(m, Split::kTrain);
  const auto val = select_split(m.records, Split::kVal);
  std::vector<Image> train_img, val_img;
  for (const auto& r : train) train_img.push_back(m.load_image(r));
  for (const auto& r : val) val_img.push_back(m.load_image(r));
  std::vector<LocalizationSample> ts, vs;
  for (std::size_t i = 0; i < train.size(); ++i) ts.push_back({&train_img[i], train[i].roi});
  for (std::size_t i = 0; i < val.size(); ++i) vs.push_back({&val_img[i], val[i].roi});

  Run run("train-loc", o.out, to_json(cfg), o.manifest);
  const auto trained = train_localizer(ts, vs, cfg);
  trained.model.save(run.dir() / "model", trained.log);
  add_model_outputs(run, "model");
  run.finish();
  if (!trained.log.empty()) std::cout << "final val loss " << trained.log.back().val_loss << "\n";
  return 0;
}

int cmd_train_cls(const TrainOptions& o) {
  require(o.profile == "tiny" || o.profile == "paper", "--profile must be tiny or paper");
  ClassifierConfig cfg = o.profile == "tiny" ? ClassifierConfig::tiny() : ClassifierConfig{};
  if (!o.config.empty()) {
    json j = to_json(cfg);
    j.merge_patch(read_json(o.config));
    cfg = classifier_config_from_json(j);
  }
  cfg.mode = parse_class_mode(o.mode);
  cfg.input_source = parse_input_source(o.source);
  require(cfg.input_source != InputSource::kAutoRoi,
          "classifiers train on manual_roi or full inputs; auto boxes are used at inference");
  if (o.epochs > 0) cfg.epochs = o.epochs;
  if (o.lr > 0) cfg.learning_rate = o.lr;
  if (o.batch > 0) cfg.batch_size = o.batch;
  if (o.seed_set) {
    cfg.seed = o.seed;
    cfg.augmentation.seed = o.seed;
  }
  if (o.class_weighting) cfg.class_weighting = true;
  if (o.no_augment) cfg.augment = false;
  if (!o.pretrained.empty()) {
    require(fs::is_directory(o.pretrained), "pretrained artifact not found: " + o.pretrained);
    cfg.pretrained = true;
    cfg.pretrained_weights = o.pretrained;
  }
  cfg.execution = parse_execution_mode(o.execution);

  const Manifest m = load_checked_manifest(o.manifest);
  const auto train = records_in(m, Split::kTrain);
  const auto val = select_split(m.records, Split::kVal);
  std::vector<Image> train_img, val_img;
  for (const auto& r : train) train_img.push_back(m.load_image(r));
  for (const auto& r : val) val_img.push_back(m.load_image(r));
  std::vector<ClassificationSample> ts, vs;
  for (std::size_t i = 0; i < train.size(); ++i) {
    ts.push_back({&train_img[i], train[i].label, train[i].roi});
  }
  for (std::size_t i = 0; i < val.size(); ++i) vs.push_back({&val_img[i], val[i].label, val[i].roi});

  Run run("train-cls", o.out, to_json(cfg), o.manifest);
  const auto trained = train_classifier(ts, vs, cfg);
  trained.model.save(run.dir() / "model", trained.log);
  add_model_outputs(run, "model");
  run.finish();
  if (!trained.log.empty()) {
    std::cout << "final val macro-F1 " << trained.log.back().val_metric << "\n";
  }
  return 0;
}

// --- eval --------------------------------------------------------------

struct EvalOptions {
  std::string model;
  std::string manifest;
  std::string split = "test";
  std::string roi;
  std::string localizer;
  std::string experts;
  std::string out = "runs/eval";
};

int cmd_eval(const EvalOptions& o) {
  const auto model = load_classifier(o.model);
  const auto localizer = load_localizer(o.localizer);
  const Manifest m = load_checked_manifest(o.manifest);
  const RoiPolicy policy = o.roi.empty() ? default_policy(model) : parse_roi_policy(o.roi);
  const Split split = parse_split_option(o.split);
  const auto in = gather_inputs(m, split, policy, model, localizer ? &*localizer : nullptr);

  const ClassMode mode = model.config().mode;
  const int k = model.num_classes();
  std::vector<int> truth, labels;
  std::vector<std::vector<double>> probs;
  std::ostringstream csv;
  csv.precision(17);
  csv << "image_ref,patient_id,truth,label";
  for (const auto& n : model.label_names()) csv << ",p_" << n;
  csv << ",t_r,t_c,s\n";
  for (std::size_t i = 0; i < in.records.size(); ++i) {
    const auto pred = model.predict(model.prepare(in.images[i], in.rois[i]));
    truth.push_back(class_index(in.records[i].label, mode));
    labels.push_back(pred.label);
    probs.push_back(pred.probs);
    csv << in.records[i].image_ref << "," << in.records[i].patient_id << "," << truth.back()
        << "," << pred.label;
    for (double p : pred.probs) csv << "," << p;
    if (in.rois[i]) {
      csv << "," << in.rois[i]->t_r << "," << in.rois[i]->t_c << "," << in.rois[i]->s << "\n";
    } else {
      csv << ",,,\n";
    }
  }
  const auto cm = eval::confusion(labels, truth, k, model.label_names());
  auto report = eval::metrics_from_confusion(cm);
  // One-vs-rest curves need every class in the ground truth.
  std::vector<bool> present(k, false);
  for (int t : truth) present[t] = true;
  json roc = json::array();
  if (std::count(present.begin(), present.end(), true) == k) {
    const auto auc = eval::roc_auc_ovr(probs, truth, k);
    eval::attach_auc(report, auc);
    for (const auto& r : auc.per_class) roc.push_back(to_json(r));
  } else {
    std::cerr << "warning: a class is absent from the split; AUC not reported\n";
  }
  json doc = {{"model_id", model.model_id()},
              {"mode", std::string(to_string(mode))},
              {"split", std::string(to_string(split))},
              {"roi", o.roi.empty() ? (policy == RoiPolicy::kNone ? "none" : "manual") : o.roi},
              {"label_names", model.label_names()},
              {"confusion", to_json(cm)},
              {"metrics", to_json(report)},
              {"roc", roc},
              {"roc_positive_class", k == 2 ? 1 : 0}};
  json config = {{"model", o.model}, {"model_id", model.model_id()}, {"split", o.split},
                 {"roi", doc["roi"]}, {"localizer", o.localizer}, {"experts", o.experts}};
  if (!o.experts.empty()) {
    const auto readings = eval::expert_readings_from_json(read_json(o.experts));
    for (const auto& r : readings) {
      require(r.labels.size() == truth.size(),
              "expert reading " + r.reader_id + " does not cover the evaluated split");
    }
    doc["experts"] = to_json(eval::expert_points(readings, truth, k));
  }
  Run run("eval", o.out, config, o.manifest);
  write_json(run.output("metrics", "metrics.json"), doc);
  write_text_file(run.output("predictions", "predictions.csv"), csv.str());
  run.finish();
  std::cout << "accuracy " << report.overall_accuracy << " macro-F1 " << report.average.f1
            << " AUC " << *report.auc << "\n";
  return 0;
}

// --- verify-scales -----------------------------------------------------

struct VerifyOptions {
  std::string model;
  std::string manifest;
  std::string split = "test";
  std::string roi = "manual";
  std::string localizer;
  std::string scales;
  double threshold = 1.0;
  std::string out = "runs/verify";
};

int cmd_verify(const VerifyOptions& o) {
  const auto model = load_classifier(o.model);
  require(uses_roi(model.config().input_source), "scale verification needs an ROI classifier");
  const auto localizer = load_localizer(o.localizer);
  const Manifest m = load_checked_manifest(o.manifest);
  const RoiPolicy policy = parse_roi_policy(o.roi);
  require(policy != RoiPolicy::kNone, "--roi must be manual or auto");
  require(o.threshold > 0.0 && o.threshold <= 1.0, "--threshold must be in (0, 1]");
  const auto scales = o.scales.empty() ? default_scales() : parse_list<double>(o.scales);
  for (double f : scales) require(f > 0.0, "scale factors must be positive");
  const auto in = gather_inputs(m, parse_split_option(o.split), policy, model,
                                localizer ? &*localizer : nullptr);

  std::vector<ScaleAgreementReport> reports;
  std::string lines;
  for (std::size_t i = 0; i < in.records.size(); ++i) {
    reports.push_back(scale_agreement(model, in.images[i], *in.rois[i], scales,
                                      class_index(in.records[i].label, model.config().mode)));
    json row = to_json(reports.back());
    row["image_ref"] = in.records[i].image_ref;
    row["flagged"] = flag_uncertain(reports.back(), o.threshold);
    lines += row.dump() + "\n";
  }
  const auto table = support_table(reports);
  const auto fo = flag_outcome(reports, o.threshold);
  json table_json = json::array();
  for (const auto& s : table) table_json.push_back(to_json(s));
  json config = {{"model", o.model}, {"model_id", model.model_id()}, {"split", o.split},
                 {"roi", o.roi}, {"scales", scales}, {"threshold", o.threshold}};
  Run run("verify-scales", o.out, config, o.manifest);
  write_text_file(run.output("reports", "scale_reports.jsonl"), lines);
  write_text_file(run.output("support_table_csv", "support_table.csv"), support_table_csv(table));
  write_json(run.output("support_table", "support_table.json"),
             {{"scales", scales},
              {"threshold", o.threshold},
              {"support_table", table_json},
              {"flagged", fo.flagged},
              {"flagged_errors", fo.flagged_errors},
              {"unflagged", fo.unflagged},
              {"unflagged_errors", fo.unflagged_errors},
              {"flagged_error_rate", fo.flagged_error_rate()},
              {"unflagged_error_rate", fo.unflagged_error_rate()}});
  run.finish();
  std::cout << "flagged " << fo.flagged << " (errors " << fo.flagged_errors << "), unflagged "
            << fo.unflagged << " (errors " << fo.unflagged_errors << ")\n";
  return 0;
}

// --- build-index / retrieve / tsne ---------------------------------------

struct EmbedOptions {
  std::string model;
  std::string manifest;
  std::string split;
  std::string roi = "manual";
  std::string localizer;
  std::string out;
};

struct Embedded {
  Inputs inputs;
  std::vector<Image> crops;
  std::vector<EmbeddingVector> vectors;
  std::vector<int> labels;
  std::vector<std::string> refs;
};

Embedded embed_split(const ClassifierModel& model, const Manifest& m, Split split,
                     RoiPolicy policy, const LocalizerModel* localizer) {
  Embedded e;
  e.inputs = gather_inputs(m, split, policy, model, localizer);
  for (std::size_t i = 0; i < e.inputs.records.size(); ++i) {
    e.crops.push_back(model.prepare(e.inputs.images[i], e.inputs.rois[i]));
    e.labels.push_back(class_index(e.inputs.records[i].label, model.config().mode));
    e.refs.push_back(e.inputs.records[i].image_ref);
  }
  e.vectors = model.embed_batch(pointers(e.crops));
  return e;
}

int cmd_build_index(const EmbedOptions& o) {
  const auto model = load_classifier(o.model);
  const auto localizer = load_localizer(o.localizer);
  const Manifest m = load_checked_manifest(o.manifest);
  const auto policy = o.roi.empty() ? default_policy(model) : parse_roi_policy(o.roi);
  const auto e = embed_split(model, m, parse_split_option(o.split.empty() ? "train" : o.split),
                             policy, localizer ? &*localizer : nullptr);
  const auto index = build_index(e.vectors, e.labels, e.refs, model.label_names());
  json config = {{"model", o.model}, {"model_id", model.model_id()},
                 {"split", o.split.empty() ? "train" : o.split}, {"roi", o.roi}};
  Run run("build-index", o.out, config, o.manifest);
  index.save(run.output("index", "index.bin"));
  write_json(run.output("index_info", "index_info.json"),
             {{"size", index.size()}, {"dim", index.dim()}, {"model_id", index.model_id()},
              {"label_names", index.label_names()}, {"checksum", index.checksum()}});
  run.finish();
  std::cout << "indexed " << index.size() << " items, dim " << index.dim() << "\n";
  return 0;
}

struct RetrieveOptions {
  EmbedOptions embed;
  std::string index;
  std::string image;
  std::string query_roi;
  int k = 8;
  bool baseline = false;
  std::string k_values;
};

int cmd_retrieve(const RetrieveOptions& o) {
  const auto model = load_classifier(o.embed.model);
  require(fs::is_regular_file(o.index), "index not found: " + o.index);
  const auto index = EmbeddingIndex::load(o.index);
  require(index.model_id() == model.model_id(),
          "index was built with model " + index.model_id() + ", not " + model.model_id());
  require(o.k >= 1 && o.k <= index.size(),
          "--k must be in [1, " + std::to_string(index.size()) + "]");
  json config = {{"model", o.embed.model}, {"model_id", model.model_id()},
                 {"index", o.index},       {"index_checksum", index.checksum()},
                 {"k", o.k},               {"baseline", o.baseline}};

  if (!o.image.empty()) {
    // Single query image.
    require(fs::is_regular_file(o.image), "image not found: " + o.image);
    const Image img = read_png(o.image);
    std::optional<ROIParams> roi;
    if (!o.query_roi.empty()) roi = parse_roi_option(o.query_roi);
    if (!roi && uses_roi(model.config().input_source)) {
      const auto localizer = load_localizer(o.embed.localizer);
      require(localizer.has_value(), "an ROI model needs --query-roi or --localizer");
      roi = localizer->predict_roi(img);
    }
    const auto q = model.embed(model.prepare(img, roi));
    const auto result = query(index, q, o.k, o.image);
    config["image"] = o.image;
    config["query_roi"] = o.query_roi;
    Run run("retrieve", o.embed.out, config);
    write_json(run.output("results", "results.json"), to_json(result));
    run.finish();
    for (const auto& item : result.items) {
      std::cout << item.distance << "\t" << index.label_names().at(item.label) << "\t"
                << item.item_ref << "\n";
    }
    return 0;
  }

  // Evaluate a whole split of queries against the pool.
  const auto localizer = load_localizer(o.embed.localizer);
  const Manifest m = load_checked_manifest(o.embed.manifest);
  const auto policy = o.embed.roi.empty() ? default_policy(model) : parse_roi_policy(o.embed.roi);
  const std::string split_name = o.embed.split.empty() ? "test" : o.embed.split;
  const auto e = embed_split(model, m, parse_split_option(split_name), policy,
                             localizer ? &*localizer : nullptr);
  const auto k_values = o.k_values.empty() ? default_k_values() : parse_list<int>(o.k_values);
  const auto totals = index.class_totals();
  for (int label : e.labels) {
    require(totals.count(label) > 0, "a query class has no items in the index");
  }
  std::vector<float> flat;
  for (const auto& v : e.vectors) flat.insert(flat.end(), v.values.begin(), v.values.end());
  const auto results = query_batch(index, flat, index.size(), e.refs);
  const auto curve = eleven_point_pr(results, e.labels, totals, k_values);
  const auto pk = precision_recall_at_k(results, e.labels, o.k, totals);
  config["split"] = split_name;
  config["roi"] = o.embed.roi;
  config["k_values"] = k_values;
  Run run("retrieve", o.embed.out, config, o.embed.manifest);
  json summary = {{"queries", results.size()}, {"pool_size", index.size()},
                  {"k", o.k}, {"precision_at_k", pk.precision}, {"recall_at_k", pk.recall},
                  {"map", curve.map}};
  write_json(run.output("pr_curve", "pr_curve.json"), to_json(curve));
  write_text_file(run.output("pr_curve_csv", "pr_curve.csv"), pr_curve_csv(curve));
  std::string lines;
  for (const auto& r : results) {
    RetrievalResult top{r.query_ref, {r.items.begin(), r.items.begin() + o.k}};
    lines += to_json(top).dump() + "\n";
  }
  write_text_file(run.output("results", "results.jsonl"), lines);
  if (o.baseline) {
    // Raw-pixel retrieval over the same pool records and crops.
    const Manifest pool_manifest = m;
    std::vector<Image> pool_crops;
    std::vector<int> pool_labels;
    for (const auto& ref : index.item_refs()) {
      const auto it = std::find_if(pool_manifest.records.begin(), pool_manifest.records.end(),
                                   [&](const StudyRecord& r) { return r.image_ref == ref; });
      require(it != pool_manifest.records.end(), "index item " + ref + " is not in the manifest");
      const Image img = pool_manifest.load_image(*it);
      pool_crops.push_back(model.prepare(img, policy == RoiPolicy::kNone ? std::nullopt : it->roi));
      pool_labels.push_back(class_index(it->label, model.config().mode));
    }
    const auto raw = build_raw_pixel_index(pointers(pool_crops), pool_labels, index.item_refs());
    std::vector<RetrievalResult> raw_results;
    for (std::size_t q = 0; q < e.crops.size(); ++q) {
      raw_results.push_back(raw_pixel_baseline(e.crops[q], raw, raw.size(), e.refs[q]));
    }
    const auto raw_curve = eleven_point_pr(raw_results, e.labels, totals, k_values);
    write_json(run.output("raw_pr_curve", "raw_pr_curve.json"), to_json(raw_curve));
    write_text_file(run.output("raw_pr_curve_csv", "raw_pr_curve.csv"), pr_curve_csv(raw_curve));
    summary["raw_pixel_map"] = raw_curve.map;
  }
  write_json(run.output("summary", "summary.json"), summary);
  run.finish();
  std::cout << "mAP " << curve.map << ", precision@" << o.k << " " << pk.precision << "\n";
  return 0;
}

struct TsneOptions {
  EmbedOptions embed;
  double perplexity = 30.0;
  double learning_rate = 0.0;
  int iterations = 1000;
  std::uint64_t seed = 0;
  std::string execution = "reference";
};

int cmd_tsne(const TsneOptions& o) {
  const auto model = load_classifier(o.embed.model);
  const auto localizer = load_localizer(o.embed.localizer);
  const Manifest m = load_checked_manifest(o.embed.manifest);
  const auto policy = o.embed.roi.empty() ? default_policy(model) : parse_roi_policy(o.embed.roi);
  const std::string split_name = o.embed.split.empty() ? "test" : o.embed.split;
  const auto e = embed_split(model, m, parse_split_option(split_name), policy,
                             localizer ? &*localizer : nullptr);
  require(e.vectors.size() >= 4, "t-SNE needs at least 4 images");
  TsneConfig cfg;
  cfg.perplexity = o.perplexity;
  cfg.learning_rate = o.learning_rate;
  cfg.iterations = o.iterations;
  cfg.seed = o.seed;
  cfg.execution = parse_execution_mode(o.execution);
  std::vector<std::vector<float>> rows;
  for (const auto& v : e.vectors) rows.push_back(v.values);
  const auto xy = tsne_project(rows, cfg);
  std::vector<TsnePoint> points;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    points.push_back({xy[i][0], xy[i][1], e.labels[i],
                      std::string(to_string(e.inputs.records[i].side)), e.refs[i]});
  }
  json config = {{"model", o.embed.model}, {"model_id", model.model_id()}, {"split", split_name},
                 {"perplexity", o.perplexity},
                 {"learning_rate", effective_learning_rate(static_cast<int>(rows.size()), cfg)},
                 {"iterations", o.iterations}, {"seed", o.seed}};
  Run run("tsne", o.embed.out, config, o.embed.manifest);
  write_json(run.output("tsne", "tsne.json"), tsne_table_json(points, model.label_names()));
  write_text_file(run.output("tsne_csv", "tsne.csv"), tsne_table_csv(points));
  run.finish();
  return 0;
}

// --- plot --------------------------------------------------------------

int cmd_plot(const std::string& input, const std::string& experts_path, const std::string& out) {
  const json doc = read_json(input);
  std::string svg;
  std::string kind;
  if (doc.contains("roc")) {
    kind = "roc";
    if (doc["roc"].empty()) throw std::runtime_error("no ROC curves in " + input);
    const auto names = doc.at("label_names").get<std::vector<std::string>>();
    const int positive = doc.value("roc_positive_class", 0);
    std::vector<std::pair<std::string, eval::RocResult>> curves;
    if (names.size() == 2) {
      curves.emplace_back(names[positive], eval::roc_from_json(doc["roc"].at(positive)));
    } else {
      for (std::size_t c = 0; c < names.size(); ++c) {
        curves.emplace_back(names[c], eval::roc_from_json(doc["roc"].at(c)));
      }
    }
    std::optional<eval::ExpertPoints> experts;
    if (!experts_path.empty()) {
      experts = eval::expert_points_from_json(read_json(experts_path));
    } else if (doc.contains("experts")) {
      experts = eval::expert_points_from_json(doc["experts"]);
    }
    svg = plot::roc_chart(curves, experts ? &*experts : nullptr, positive);
  } else if (doc.contains("recall_levels")) {
    kind = "pr";
    const auto curve = eleven_point_from_json(doc);
    svg = plot::pr_chart(curve, doc.value("label_names", std::vector<std::string>{}));
  } else if (doc.contains("points")) {
    kind = "tsne";
    svg = plot::tsne_chart(tsne_points_from_json(doc),
                           doc.value("label_names", std::vector<std::string>{}));
  } else if (doc.contains("support_table")) {
    kind = "support";
    std::vector<SupportSummary> table;
    for (const auto& row : doc["support_table"]) table.push_back(support_summary_from_json(row));
    svg = plot::support_box_chart(table);
  } else {
    throw PreconditionError(input + " is not a metrics, PR, t-SNE or support table");
  }
  Run run("plot", out, {{"input", input}, {"input_sha256", sha256_file(input)}, {"kind", kind}});
  write_text_file(run.output(kind, kind + ".svg"), svg);
  run.finish();
  return 0;
}

// --- serve -------------------------------------------------------------

std::atomic<HttpServer*> g_server{nullptr};

void on_signal(int) {
  if (HttpServer* s = g_server.load()) s->stop();
}

struct ServeOptions {
  std::string model_dir;
  std::string index;
  std::string tsne;
  std::string manifest;
  std::string host = "127.0.0.1";
  int port = -1;
};

int cmd_serve(const ServeOptions& o) {
  ServiceConfig cfg = ServiceConfig::from_env();
  if (!o.model_dir.empty()) cfg.model_dir = o.model_dir;
  if (!o.index.empty()) cfg.index_path = o.index;
  if (!o.tsne.empty()) cfg.tsne_path = o.tsne;
  if (!o.manifest.empty()) cfg.manifest_path = o.manifest;
  int port = o.port;
  if (port < 0) {
    try {
      port = std::stoi(env_or("FEMUR_PORT", "8080"));
    } catch (const std::exception&) {
      throw PreconditionError("FEMUR_PORT is not a number");
    }
  }
  require(port >= 0 && port <= 65535, "port out of range");
  require(cfg.model_dir.empty() || fs::is_directory(cfg.model_dir),
          "model directory not found: " + cfg.model_dir.string());
  FractureService service(cfg);
  for (const auto& w : service.load_warnings()) std::cerr << "warning: " << w << "\n";
  HttpServer server(service);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  const int rc = server.serve_blocking(o.host, port, [&](int bound) {
    std::cout << "listening on http://" << o.host << ":" << bound << std::endl;
    std::cout << "port " << bound << std::endl;
  });
  g_server = nullptr;
  return rc;
}

// --- benchmark ---------------------------------------------------------

int cmd_benchmark(const std::string& config_path, const std::string& out, bool print_config) {
  BenchmarkConfig cfg = BenchmarkConfig::standard();
  if (!config_path.empty()) {
    json j = to_json(cfg);
    j.merge_patch(read_json(config_path));
    cfg = benchmark_config_from_json(j);
  }
  if (print_config) {
    std::cout << to_json(cfg).dump(2) << "\n";
    return 0;
  }
  Run run("benchmark", out, to_json(cfg));
  const auto result = run_benchmark(cfg, run.dir(), &std::cout);
  for (const auto& [rel, sum] : result.checksums) run.output(rel, rel);
  run.output("timing", "reports/timing.json");
  run.finish();
  std::cout << "total " << result.timing["total"].get<double>() << " s\n";
  return 0;
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"femur: proximal femur fracture classification, localization and retrieval"};
  app.require_subcommand(1);
  app.fallthrough(false);

  SynthOptions synth;
  auto* c_synth = app.add_subcommand("synth", "generate a synthetic radiograph dataset");
  c_synth->add_option("--patients", synth.patients, "number of patients");
  c_synth->add_option("--seed", synth.seed, "random seed");
  c_synth->add_option("--image-size", synth.image_size, "image side in pixels");
  c_synth->add_option("--subtle", synth.subtle, "share of fractures drawn with a faint line");
  c_synth->add_flag("--pelvis", synth.pelvis, "draw pelvis views and part them per femur");
  c_synth->add_option("--mix", synth.mix, "class mix not_fractured,A,B");
  c_synth->add_option("--out", synth.out, "run directory");

  std::string split_manifest, split_ratios = "0.7,0.1,0.2", split_out = "runs/split";
  std::uint64_t split_seed = 0;
  auto* c_split = app.add_subcommand("split", "patient-wise train/val/test split");
  c_split->add_option("--manifest", split_manifest, "input manifest")->required();
  c_split->add_option("--ratios", split_ratios, "train,val,test fractions");
  c_split->add_option("--seed", split_seed, "random seed");
  c_split->add_option("--out", split_out, "run directory");

  TrainOptions loc;
  loc.out = "runs/train-loc";
  auto* c_loc = app.add_subcommand("train-loc", "train the ROI localizer");
  TrainOptions cls;
  cls.out = "runs/train-cls";
  auto* c_cls = app.add_subcommand("train-cls", "train a fracture classifier");
  for (auto [cmd, o] : {std::pair{c_loc, &loc}, std::pair{c_cls, &cls}}) {
    cmd->add_option("--manifest", o->manifest, "split manifest")->required();
    cmd->add_option("--out", o->out, "run directory");
    cmd->add_option("--profile", o->profile, "tiny (CPU) or paper");
    cmd->add_option("--config", o->config, "JSON overrides for the training config");
    cmd->add_option("--epochs", o->epochs, "epochs");
    cmd->add_option("--lr", o->lr, "learning rate");
    cmd->add_option("--batch", o->batch, "batch size");
    cmd->add_option("--seed", o->seed, "random seed")->each([o](const std::string&) {
      o->seed_set = true;
    });
    cmd->add_option("--execution", o->execution, "reference or parallel");
  }
  c_cls->add_option("--mode", cls.mode, "three_class or two_class");
  c_cls->add_option("--source", cls.source, "manual_roi or full");
  c_cls->add_option("--pretrained", cls.pretrained, "initialize from a classifier artifact");
  c_cls->add_flag("--class-weighting", cls.class_weighting, "weight classes by inverse frequency");
  c_cls->add_flag("--no-augment", cls.no_augment, "disable augmentation");

  EvalOptions ev;
  auto* c_eval = app.add_subcommand("eval", "classification metrics on a split");
  c_eval->add_option("--model", ev.model, "classifier directory")->required();
  c_eval->add_option("--manifest", ev.manifest, "split manifest (default $FEMUR_MANIFEST)");
  c_eval->add_option("--split", ev.split, "train, val or test");
  c_eval->add_option("--roi", ev.roi, "manual, auto or none");
  c_eval->add_option("--localizer", ev.localizer, "localizer directory for --roi auto");
  c_eval->add_option("--experts", ev.experts, "expert readings JSON");
  c_eval->add_option("--out", ev.out, "run directory");

  VerifyOptions vf;
  auto* c_verify = app.add_subcommand("verify-scales", "multi-scale agreement check");
  c_verify->add_option("--model", vf.model, "classifier directory")->required();
  c_verify->add_option("--manifest", vf.manifest, "split manifest (default $FEMUR_MANIFEST)");
  c_verify->add_option("--split", vf.split, "train, val or test");
  c_verify->add_option("--roi", vf.roi, "manual or auto");
  c_verify->add_option("--localizer", vf.localizer, "localizer directory for --roi auto");
  c_verify->add_option("--scales", vf.scales, "comma-separated scale factors");
  c_verify->add_option("--threshold", vf.threshold, "flag when support is below this");
  c_verify->add_option("--out", vf.out, "run directory");

  EmbedOptions bi;
  bi.out = "runs/build-index";
  auto* c_index = app.add_subcommand("build-index", "embed a split into a retrieval index");
  c_index->add_option("--model", bi.model, "classifier directory")->required();
  c_index->add_option("--manifest", bi.manifest, "split manifest (default $FEMUR_MANIFEST)");
  c_index->add_option("--split", bi.split, "pool split (default train)");
  c_index->add_option("--roi", bi.roi, "manual, auto or none");
  c_index->add_option("--localizer", bi.localizer, "localizer directory for --roi auto");
  c_index->add_option("--out", bi.out, "run directory");

  RetrieveOptions rt;
  rt.embed.out = "runs/retrieve";
  auto* c_ret = app.add_subcommand("retrieve", "query the index with an image or a split");
  c_ret->add_option("--model", rt.embed.model, "classifier directory")->required();
  c_ret->add_option("--index", rt.index, "index file")->required();
  c_ret->add_option("--manifest", rt.embed.manifest, "split manifest (split queries)");
  c_ret->add_option("--split", rt.embed.split, "query split (default test)");
  c_ret->add_option("--roi", rt.embed.roi, "manual, auto or none");
  c_ret->add_option("--localizer", rt.embed.localizer, "localizer directory");
  c_ret->add_option("--image", rt.image, "single query PNG");
  c_ret->add_option("--query-roi", rt.query_roi, "t_r,t_c,s for --image");
  c_ret->add_option("--k", rt.k, "neighbors to return");
  c_ret->add_option("--k-values", rt.k_values, "cutoffs for the 11-point curve");
  c_ret->add_flag("--baseline", rt.baseline, "also evaluate raw-pixel retrieval");
  c_ret->add_option("--out", rt.embed.out, "run directory");

  TsneOptions ts;
  ts.embed.out = "runs/tsne";
  auto* c_tsne = app.add_subcommand("tsne", "2-D t-SNE map of embeddings");
  c_tsne->add_option("--model", ts.embed.model, "classifier directory")->required();
  c_tsne->add_option("--manifest", ts.embed.manifest, "split manifest (default $FEMUR_MANIFEST)");
  c_tsne->add_option("--split", ts.embed.split, "split (default test)");
  c_tsne->add_option("--roi", ts.embed.roi, "manual, auto or none");
  c_tsne->add_option("--localizer", ts.embed.localizer, "localizer directory");
  c_tsne->add_option("--perplexity", ts.perplexity, "perplexity");
  c_tsne->add_option("--learning-rate", ts.learning_rate, "step size (default n / 12)");
  c_tsne->add_option("--iterations", ts.iterations, "gradient steps");
  c_tsne->add_option("--seed", ts.seed, "random seed");
  c_tsne->add_option("--execution", ts.execution, "reference or parallel");
  c_tsne->add_option("--out", ts.embed.out, "run directory");

  std::string plot_input, plot_experts, plot_out = "runs/plot";
  auto* c_plot = app.add_subcommand("plot", "render an SVG from a metrics, PR, t-SNE or support file");
  c_plot->add_option("--input", plot_input, "JSON produced by eval, retrieve, tsne or verify-scales")
      ->required();
  c_plot->add_option("--experts", plot_experts, "expert operating points JSON");
  c_plot->add_option("--out", plot_out, "run directory");

  ServeOptions sv;
  auto* c_serve = app.add_subcommand("serve", "HTTP API for the reader UI");
  c_serve->add_option("--model-dir", sv.model_dir, "model directory (default $FEMUR_MODEL_DIR)");
  c_serve->add_option("--index", sv.index, "index file (default $FEMUR_INDEX)");
  c_serve->add_option("--tsne", sv.tsne, "t-SNE table (default $FEMUR_TSNE)");
  c_serve->add_option("--manifest", sv.manifest, "manifest for thumbnails (default $FEMUR_MANIFEST)");
  c_serve->add_option("--host", sv.host, "bind address");
  c_serve->add_option("--port", sv.port, "port, 0 for ephemeral (default $FEMUR_PORT or 8080)");

  std::string bench_config, bench_out = "runs/benchmark";
  bool bench_print = false;
  auto* c_bench = app.add_subcommand("benchmark", "run the synthetic end-to-end benchmark");
  c_bench->add_option("--config", bench_config, "JSON overrides for the benchmark config");
  c_bench->add_option("--out", bench_out, "run directory");
  c_bench->add_flag("--print-config", bench_print, "print the effective config and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  const std::string manifest_env = env_or("FEMUR_MANIFEST", "");
  auto manifest_or_env = [&](std::string& m) {
    if (m.empty()) m = manifest_env;
    require(!m.empty(), "--manifest is required (or set FEMUR_MANIFEST)");
  };
  try {
    if (*c_synth) return cmd_synth(synth);
    if (*c_split) return cmd_split(split_manifest, split_ratios, split_seed, split_out);
    if (*c_loc) return cmd_train_loc(loc);
    if (*c_cls) return cmd_train_cls(cls);
    if (*c_eval) {
      manifest_or_env(ev.manifest);
      return cmd_eval(ev);
    }
    if (*c_verify) {
      manifest_or_env(vf.manifest);
      return cmd_verify(vf);
    }
    if (*c_index) {
      manifest_or_env(bi.manifest);
      return cmd_build_index(bi);
    }
    if (*c_ret) {
      if (rt.image.empty()) manifest_or_env(rt.embed.manifest);
      return cmd_retrieve(rt);
    }
    if (*c_tsne) {
      manifest_or_env(ts.embed.manifest);
      return cmd_tsne(ts);
    }
    if (*c_plot) return cmd_plot(plot_input, plot_experts, plot_out);
    if (*c_serve) return cmd_serve(sv);
    if (*c_bench) return cmd_benchmark(bench_config, bench_out, bench_print);
  } catch (const ManifestError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& issue : e.issues()) {
      std::cerr << "  line " << issue.line << ": " << issue.message << "\n";
    }
    return kExitPrecondition;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitPrecondition;
  }
  std::cerr << app.help();
  return kExitUsage;
}

}  // namespace femur::cli

int main(int argc, char** argv) { return femur::cli::run(argc, argv); }
