#include "femur/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "femur/checksum.hpp"
#include "femur/dataset.hpp"
#include "femur/evaluation.hpp"
#include "femur/image.hpp"
#include "femur/plot.hpp"
#include "femur/run_record.hpp"
#include "femur/verification.hpp"

namespace femur {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kCommittedSeed = 2024;

json synth_to_json(const synth::SynthConfig& c) {
  return {{"n_patients", c.n_patients},
          {"class_mix", c.class_mix},
          {"seed", c.seed},
          {"image_size", c.image_size},
          {"pelvis", c.pelvis},
          {"subtle_fraction", c.subtle_fraction},
          {"subtle_visibility", {c.subtle_visibility.first, c.subtle_visibility.second}}};
}

synth::SynthConfig synth_from_json(const json& j) {
  synth::SynthConfig c;
  c.n_patients = j.value("n_patients", c.n_patients);
  if (j.contains("class_mix")) c.class_mix = j["class_mix"].get<std::array<double, 3>>();
  c.seed = j.value("seed", c.seed);
  c.image_size = j.value("image_size", c.image_size);
  c.pelvis = j.value("pelvis", c.pelvis);
  c.subtle_fraction = j.value("subtle_fraction", c.subtle_fraction);
  if (j.contains("subtle_visibility")) {
    c.subtle_visibility = {j["subtle_visibility"].at(0).get<double>(),
                           j["subtle_visibility"].at(1).get<double>()};
  }
  return c;
}

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()), lap_(start_) {}
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - lap_).count();
    lap_ = now;
    return s;
  }
  double total() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point lap_;
};

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json roc_json(const eval::MulticlassAuc& auc) {
  json per = json::array();
  for (const auto& r : auc.per_class) per.push_back(to_json(r));
  return {{"per_class", per}, {"macro", auc.macro}};
}

struct ModeEvaluation {
  json report;
  std::vector<ScaleAgreementReport> scale_reports;  // manual then auto
  std::string roc_svg;
  std::string cases_csv;
};

ModeEvaluation evaluate_mode(const ClassifierModel& model, const LocalizerModel& localizer,
                             const std::vector<const Image*>& images,
                             const std::vector<StudyRecord>& records,
                             const std::vector<ROIParams>& auto_rois, const BenchmarkConfig& cfg) {
  const ClassMode mode = model.config().mode;
  const int k = model.num_classes();
  std::vector<int> truth, manual_labels, auto_labels;
  std::vector<std::vector<double>> manual_probs, auto_probs;
  std::vector<ScaleAgreementReport> manual_scale, auto_scale;
  for (std::size_t i = 0; i < images.size(); ++i) {
    truth.push_back(class_index(records[i].label, mode));
    const auto man = predict_pipeline(*images[i], model, &localizer, records[i].roi);
    const auto aut = predict_pipeline(*images[i], model, &localizer, std::nullopt);
    manual_labels.push_back(man.prediction.label);
    manual_probs.push_back(man.prediction.probs);
    auto_labels.push_back(aut.prediction.label);
    auto_probs.push_back(aut.prediction.probs);
    manual_scale.push_back(scale_agreement(model, *images[i], *records[i].roi, cfg.scales,
                                           truth.back()));
    auto_scale.push_back(scale_agreement(model, *images[i], auto_rois[i], cfg.scales,
                                         truth.back()));
  }
  const auto names = class_names(mode);
  auto metrics = [&](const std::vector<int>& labels, const std::vector<std::vector<double>>& probs,
                     eval::MulticlassAuc* auc_out) {
    const auto cm = eval::confusion(labels, truth, k, names);
    auto report = eval::metrics_from_confusion(cm);
    *auc_out = eval::roc_auc_ovr(probs, truth, k);
    eval::attach_auc(report, *auc_out);
    return json{{"confusion", to_json(cm)}, {"metrics", to_json(report)},
                {"accuracy", report.overall_accuracy}, {"f1", report.average.f1},
                {"auc", *report.auc}};
  };
  eval::MulticlassAuc manual_auc, auto_auc;
  ModeEvaluation out;
  out.report["manual_roi"] = metrics(manual_labels, manual_probs, &manual_auc);
  out.report["auto_roi"] = metrics(auto_labels, auto_probs, &auto_auc);
  out.report["manual_roi"]["roc"] = roc_json(manual_auc);
  out.report["auto_roi"]["roc"] = roc_json(auto_auc);
  out.report["f1_gap_points"] =
      100.0 * (out.report["manual_roi"]["f1"].get<double>() -
               out.report["auto_roi"]["f1"].get<double>());
  out.report["model_id"] = model.model_id();
  out.report["label_names"] = names;

  json manual_scale_json;
  manual_scale_json["support_table"] = json::array();
  for (const auto& s : support_table(manual_scale)) {
    manual_scale_json["support_table"].push_back(to_json(s));
  }
  const auto fo = flag_outcome(manual_scale, cfg.flag_threshold);
  manual_scale_json["flagged"] = fo.flagged;
  manual_scale_json["flagged_errors"] = fo.flagged_errors;
  manual_scale_json["unflagged"] = fo.unflagged;
  manual_scale_json["unflagged_errors"] = fo.unflagged_errors;
  out.report["scale_verification_manual"] = manual_scale_json;

  // The positive class of a two-class ROC is "abnormal"; three-class charts
  // show each class against the rest.
  std::vector<std::pair<std::string, eval::RocResult>> curves;
  if (k == 2) {
    curves.emplace_back("manual ROI", manual_auc.per_class[1]);
    curves.emplace_back("auto ROI", auto_auc.per_class[1]);
  } else {
    for (int c = 0; c < k; ++c) {
      curves.emplace_back(names[c] + " (manual ROI)", manual_auc.per_class[c]);
    }
  }
  out.roc_svg = plot::roc_chart(curves, nullptr, k == 2 ? 1 : 0);

  std::ostringstream csv;
  csv.precision(17);
  csv << "image_ref,patient_id,truth,manual_label,auto_label,manual_support,"
         "manual_correct_support,auto_support,auto_correct_support,flagged";
  for (const auto& n : names) csv << ",p_manual_" << n;
  csv << "\n";
  for (std::size_t i = 0; i < images.size(); ++i) {
    csv << records[i].image_ref << "," << records[i].patient_id << "," << truth[i] << ","
        << manual_labels[i] << "," << auto_labels[i] << "," << manual_scale[i].support << ","
        << *manual_scale[i].correct_support << "," << auto_scale[i].support << ","
        << *auto_scale[i].correct_support << ","
        << (flag_uncertain(manual_scale[i], cfg.flag_threshold) ? 1 : 0);
    for (double p : manual_probs[i]) csv << "," << p;
    csv << "\n";
  }
  out.cases_csv = csv.str();
  out.scale_reports = std::move(manual_scale);
  out.scale_reports.insert(out.scale_reports.end(), auto_scale.begin(), auto_scale.end());
  return out;
}

bool recall_monotone(const std::vector<RetrievalResult>& results, const std::vector<int>& truth,
                     const std::map<int, int>& totals) {
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto curve = recall_curve(results[q], truth[q], totals.at(truth[q]));
    for (std::size_t i = 1; i < curve.size(); ++i) {
      if (curve[i] < curve[i - 1]) return false;
    }
  }
  return true;
}

}  // namespace

BenchmarkConfig BenchmarkConfig::standard() {
  BenchmarkConfig c;
  c.synth.n_patients = 170;
  c.synth.seed = kCommittedSeed;
  c.synth.subtle_fraction = 0.11;
  c.split_seed = kCommittedSeed;

  c.localizer = LocalizerConfig::tiny();
  c.localizer.epochs = 80;
  c.localizer.batch_size = 16;
  c.localizer.learning_rate = 1e-3;
  c.localizer.seed = kCommittedSeed;

  c.classifier_three = ClassifierConfig::tiny();
  c.classifier_three.mode = ClassMode::kThreeClass;
  c.classifier_three.epochs = 80;
  c.classifier_three.batch_size = 8;
  c.classifier_three.learning_rate = 3e-3;
  c.classifier_three.augmentation.scale_range = {0.5, 1.35};
  c.classifier_three.seed = kCommittedSeed;
  c.classifier_three.augmentation.seed = kCommittedSeed;

  c.classifier_two = c.classifier_three;
  c.classifier_two.mode = ClassMode::kTwoClass;
  c.classifier_two.pretrained = true;
  c.classifier_two.pretrained_weights = "classifier_three";

  c.tsne.seed = kCommittedSeed;
  return c;
}

json to_json(const BenchmarkConfig& c) {
  return {{"synth", synth_to_json(c.synth)},
          {"split_ratios", c.split_ratios},
          {"split_seed", c.split_seed},
          {"localizer", to_json(c.localizer)},
          {"classifier_three", to_json(c.classifier_three)},
          {"classifier_two", to_json(c.classifier_two)},
          {"two_class_from_three", c.two_class_from_three},
          {"scales", c.scales},
          {"flag_threshold", c.flag_threshold},
          {"k_values", c.k_values},
          {"precision_k", c.precision_k},
          {"raw_pixel_size", c.raw_pixel_size},
          {"tsne",
           {{"perplexity", c.tsne.perplexity},
            {"iterations", c.tsne.iterations},
            {"learning_rate", c.tsne.learning_rate},
            {"early_exaggeration", c.tsne.early_exaggeration},
            {"exaggeration_iterations", c.tsne.exaggeration_iterations},
            {"seed", c.tsne.seed},
            {"execution", std::string(to_string(c.tsne.execution))}}}};
}

BenchmarkConfig benchmark_config_from_json(const json& j) {
  BenchmarkConfig c = BenchmarkConfig::standard();
  if (j.contains("synth")) c.synth = synth_from_json(j["synth"]);
  if (j.contains("split_ratios")) c.split_ratios = j["split_ratios"].get<std::array<double, 3>>();
  c.split_seed = j.value("split_seed", c.split_seed);
  if (j.contains("localizer")) c.localizer = localizer_config_from_json(j["localizer"]);
  if (j.contains("classifier_three")) {
    c.classifier_three = classifier_config_from_json(j["classifier_three"]);
  }
  if (j.contains("classifier_two")) {
    c.classifier_two = classifier_config_from_json(j["classifier_two"]);
  }
  c.two_class_from_three = j.value("two_class_from_three", c.two_class_from_three);
  if (j.contains("scales")) c.scales = j["scales"].get<std::vector<double>>();
  c.flag_threshold = j.value("flag_threshold", c.flag_threshold);
  if (j.contains("k_values")) c.k_values = j["k_values"].get<std::vector<int>>();
  c.precision_k = j.value("precision_k", c.precision_k);
  c.raw_pixel_size = j.value("raw_pixel_size", c.raw_pixel_size);
  if (j.contains("tsne")) {
    const json& t = j["tsne"];
    c.tsne.perplexity = t.value("perplexity", c.tsne.perplexity);
    c.tsne.iterations = t.value("iterations", c.tsne.iterations);
    c.tsne.learning_rate = t.value("learning_rate", c.tsne.learning_rate);
    c.tsne.early_exaggeration = t.value("early_exaggeration", c.tsne.early_exaggeration);
    c.tsne.exaggeration_iterations =
        t.value("exaggeration_iterations", c.tsne.exaggeration_iterations);
    c.tsne.seed = t.value("seed", c.tsne.seed);
    if (t.contains("execution")) {
      c.tsne.execution = parse_execution_mode(t["execution"].get<std::string>());
    }
  }
  return c;
}

bool is_volatile_artifact(const fs::path& relative) {
  const std::string name = relative.filename().string();
  return name == "training_log.jsonl" || name == RunRecord::kFileName ||
         name == "timing.json" || name == "checksums.json";
}

std::map<std::string, std::string> artifact_checksums(const fs::path& out_dir) {
  std::map<std::string, std::string> sums;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), out_dir);
    if (is_volatile_artifact(rel)) continue;
    sums[rel.generic_string()] = sha256_file(entry.path());
  }
  return sums;
}

BenchmarkResult run_benchmark(const BenchmarkConfig& cfg, const fs::path& out_dir,
                              std::ostream* progress) {
  auto say = [&](const std::string& msg) {
    if (progress != nullptr) *progress << msg << std::endl;
  };
  const fs::path data_dir = out_dir / "data";
  const fs::path models_dir = out_dir / "models";
  const fs::path reports_dir = out_dir / "reports";
  fs::create_directories(models_dir);
  fs::create_directories(reports_dir);
  Stopwatch clock;
  json timing;
  json report;
  report["config"] = to_json(cfg);

  // Data.
  const fs::path manifest_path = synth::synth_generate(cfg.synth, data_dir);
  const Manifest manifest = load_manifest(manifest_path);
  const auto split = split_patientwise(manifest.records, cfg.split_ratios, cfg.split_seed);
  const auto records = apply_split(manifest.records, split);
  write_manifest(data_dir / "split_manifest.jsonl", records);
  std::vector<Image> images;
  images.reserve(records.size());
  for (const auto& r : records) images.push_back(manifest.load_image(r));

  std::vector<int> train_idx, val_idx, test_idx;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].view != View::kAP) continue;
    switch (*records[i].split) {
      case Split::kTrain: train_idx.push_back(static_cast<int>(i)); break;
      case Split::kVal: val_idx.push_back(static_cast<int>(i)); break;
      case Split::kTest: test_idx.push_back(static_cast<int>(i)); break;
    }
  }
  const auto counts = split.patient_counts();
  report["data"] = {{"images", records.size()},
                    {"patients", {counts[0], counts[1], counts[2]}},
                    {"train_images", train_idx.size()},
                    {"val_images", val_idx.size()},
                    {"test_images", test_idx.size()},
                    {"manifest_sha256", sha256_file(manifest_path)}};
  timing["data"] = clock.lap();
  say("data: " + std::to_string(train_idx.size()) + "/" + std::to_string(val_idx.size()) + "/" +
      std::to_string(test_idx.size()) + " train/val/test images");

  std::vector<const Image*> test_images;
  std::vector<StudyRecord> test_records;
  for (int i : test_idx) {
    test_images.push_back(&images[i]);
    test_records.push_back(records[i]);
  }

  // Localization.
  std::vector<LocalizationSample> loc_train, loc_val;
  for (int i : train_idx) loc_train.push_back({&images[i], records[i].roi});
  for (int i : val_idx) loc_val.push_back({&images[i], records[i].roi});
  const auto loc = train_localizer(loc_train, loc_val, cfg.localizer);
  loc.model.save(models_dir / "localizer", loc.log);
  std::vector<ROIParams> auto_rois, gt_rois;
  double err_r = 0.0, err_c = 0.0, err_s = 0.0;
  for (std::size_t j = 0; j < test_images.size(); ++j) {
    auto_rois.push_back(loc.model.predict_roi(*test_images[j]));
    gt_rois.push_back(*test_records[j].roi);
    err_r += std::abs(auto_rois[j].t_r - gt_rois[j].t_r);
    err_c += std::abs(auto_rois[j].t_c - gt_rois[j].t_c);
    err_s += std::abs(auto_rois[j].s / gt_rois[j].s - 1.0);
  }
  const double n_test = static_cast<double>(test_images.size());
  report["localization"] = {{"containment_rate", containment_rate(auto_rois, gt_rois)},
                            {"mean_abs_error_t_r", err_r / n_test},
                            {"mean_abs_error_t_c", err_c / n_test},
                            {"mean_rel_error_s", err_s / n_test},
                            {"final_val_loss", loc.log.empty() ? 0.0 : loc.log.back().val_loss},
                            {"model_id", loc.model.model_id()}};
  timing["localizer"] = clock.lap();
  say("localizer: containment " +
      std::to_string(report["localization"]["containment_rate"].get<double>()));

  // Classification, one model per mode.
  std::vector<ClassificationSample> cls_train, cls_val;
  for (int i : train_idx) cls_train.push_back({&images[i], records[i].label, records[i].roi});
  for (int i : val_idx) cls_val.push_back({&images[i], records[i].label, records[i].roi});

  const auto three = train_classifier(cls_train, cls_val, cfg.classifier_three);
  three.model.save(models_dir / "classifier_three", three.log);
  timing["classifier_three"] = clock.lap();
  const auto two = train_classifier(cls_train, cls_val, cfg.classifier_two,
                                    cfg.two_class_from_three ? &three.model : nullptr);
  two.model.save(models_dir / "classifier_two", two.log);
  timing["classifier_two"] = clock.lap();

  std::vector<ScaleAgreementReport> pooled;
  for (const auto* trained : {&three, &two}) {
    const auto& model = trained->model;
    const std::string mode(to_string(model.config().mode));
    auto ev = evaluate_mode(model, loc.model, test_images, test_records, auto_rois, cfg);
    report["classification"][mode] = ev.report;
    write_text_file(reports_dir / ("roc_" + mode + ".svg"), ev.roc_svg);
    write_text_file(reports_dir / ("cases_" + mode + ".csv"), ev.cases_csv);
    pooled.insert(pooled.end(), ev.scale_reports.begin(), ev.scale_reports.end());
    say(mode + ": manual acc " +
        std::to_string(ev.report["manual_roi"]["accuracy"].get<double>()) + ", auto acc " +
        std::to_string(ev.report["auto_roi"]["accuracy"].get<double>()));
  }
  timing["classification_eval"] = clock.lap();

  // Scale verification over both modes and both ROI sources.
  const auto table = support_table(pooled);
  const auto fo = flag_outcome(pooled, cfg.flag_threshold);
  json table_json = json::array();
  for (const auto& s : table) table_json.push_back(to_json(s));
  report["scale_verification"] = {{"scales", cfg.scales},
                                  {"threshold", cfg.flag_threshold},
                                  {"cases", pooled.size()},
                                  {"support_table", table_json},
                                  {"mean_correct_support", table.at(0).mean},
                                  {"flagged", fo.flagged},
                                  {"flagged_errors", fo.flagged_errors},
                                  {"unflagged", fo.unflagged},
                                  {"unflagged_errors", fo.unflagged_errors},
                                  {"flagged_error_rate", fo.flagged_error_rate()},
                                  {"unflagged_error_rate", fo.unflagged_error_rate()}};
  write_text_file(reports_dir / "support_table.csv", support_table_csv(table));
  write_text_file(reports_dir / "support_box.svg", plot::support_box_chart(table));
  timing["scale_verification"] = clock.lap();

  // Retrieval: training pool, test queries, three-class manual-ROI features.
  const ClassMode retrieval_mode = three.model.config().mode;
  std::vector<Image> pool_crops, query_crops;
  std::vector<int> pool_labels, query_labels;
  std::vector<std::string> pool_refs, query_refs;
  for (int i : train_idx) {
    pool_crops.push_back(three.model.prepare(images[i], records[i].roi));
    pool_labels.push_back(class_index(records[i].label, retrieval_mode));
    pool_refs.push_back(records[i].image_ref);
  }
  for (int i : test_idx) {
    query_crops.push_back(three.model.prepare(images[i], records[i].roi));
    query_labels.push_back(class_index(records[i].label, retrieval_mode));
    query_refs.push_back(records[i].image_ref);
  }
  auto pointers = [](const std::vector<Image>& v) {
    std::vector<const Image*> p;
    for (const auto& img : v) p.push_back(&img);
    return p;
  };
  const auto pool_emb = three.model.embed_batch(pointers(pool_crops));
  const auto query_emb = three.model.embed_batch(pointers(query_crops));
  const auto index = build_index(pool_emb, pool_labels, pool_refs, three.model.label_names());
  index.save(models_dir / "index.bin");

  const int dim = index.dim();
  std::vector<float> query_flat;
  for (const auto& e : query_emb) query_flat.insert(query_flat.end(), e.values.begin(), e.values.end());
  const auto totals = index.class_totals();
  const auto emb_results = query_batch(index, query_flat, index.size(), query_refs);
  const auto emb_curve = eleven_point_pr(emb_results, query_labels, totals, cfg.k_values);

  const auto raw_index = build_raw_pixel_index(pointers(pool_crops), pool_labels, pool_refs,
                                               cfg.raw_pixel_size);
  std::vector<RetrievalResult> raw_results;
  for (std::size_t q = 0; q < query_crops.size(); ++q) {
    raw_results.push_back(
        raw_pixel_baseline(query_crops[q], raw_index, raw_index.size(), query_refs[q]));
  }
  const auto raw_curve = eleven_point_pr(raw_results, query_labels, totals, cfg.k_values);
  const auto p_at_k = precision_recall_at_k(emb_results, query_labels, cfg.precision_k, totals);
  const auto raw_p_at_k = precision_recall_at_k(raw_results, query_labels, cfg.precision_k, totals);
  report["retrieval"] = {
      {"pool_size", index.size()},
      {"queries", emb_results.size()},
      {"embedding_dim", dim},
      {"model_id", index.model_id()},
      {"index_sha256", index.checksum()},
      {"embedding", to_json(emb_curve)},
      {"raw_pixels", to_json(raw_curve)},
      {"embedding_map", emb_curve.map},
      {"raw_pixel_map", raw_curve.map},
      {"precision_k", cfg.precision_k},
      {"precision_at_k", p_at_k.precision},
      {"raw_pixel_precision_at_k", raw_p_at_k.precision},
      {"recall_monotone", recall_monotone(emb_results, query_labels, totals) &&
                              recall_monotone(raw_results, query_labels, totals)}};
  write_text_file(reports_dir / "pr_embedding.csv", pr_curve_csv(emb_curve));
  write_text_file(reports_dir / "pr_raw_pixels.csv", pr_curve_csv(raw_curve));
  write_text_file(reports_dir / "pr_embedding.svg", plot::pr_chart(emb_curve, index.label_names()));
  write_text_file(reports_dir / "pr_raw_pixels.svg",
                  plot::pr_chart(raw_curve, index.label_names()));
  timing["retrieval"] = clock.lap();
  say("retrieval: mAP " + std::to_string(emb_curve.map) + " vs raw " +
      std::to_string(raw_curve.map));

  // t-SNE of the test embeddings.
  const auto xy = tsne_project(query_flat, static_cast<int>(query_emb.size()), dim, cfg.tsne);
  std::vector<TsnePoint> points;
  for (std::size_t q = 0; q < xy.size(); ++q) {
    points.push_back({xy[q][0], xy[q][1], query_labels[q],
                      std::string(to_string(test_records[q].side)), query_refs[q]});
  }
  const json tsne_table = tsne_table_json(points, index.label_names());
  write_json(models_dir / "tsne.json", tsne_table);
  write_text_file(reports_dir / "tsne.csv", tsne_table_csv(points));
  write_text_file(reports_dir / "tsne.svg", plot::tsne_chart(points, index.label_names()));
  report["tsne"] = {{"points", points.size()},
                    {"perplexity", effective_perplexity(static_cast<int>(points.size()),
                                                        cfg.tsne.perplexity)},
                    {"learning_rate",
                     effective_learning_rate(static_cast<int>(points.size()), cfg.tsne)}};
  timing["tsne"] = clock.lap();

  timing["total"] = clock.total();
  write_json(reports_dir / "benchmark.json", report);
  write_json(reports_dir / "timing.json", timing);

  BenchmarkResult result;
  result.report = std::move(report);
  result.timing = std::move(timing);
  result.checksums = artifact_checksums(out_dir);
  write_json(reports_dir / "checksums.json", json(result.checksums));
  return result;
}

}  // namespace femur
