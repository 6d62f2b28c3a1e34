#include <cmath>
#include <numeric>

#include "doctest.h"
#include "femur/checksum.hpp"
#include "femur/service.hpp"
#include "femur/tsne.hpp"
#include "fixtures.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace femur;
using nlohmann::json;
using femur::testing::TempDir;

namespace {

// A model directory with every artifact the service reads, built once.
class ModelDir {
 public:
  ModelDir() : data_(femur::testing::tiny_dataset(2, 12)) {
    const auto dir = tmp_.path();
    std::vector<StudyRecord> records;
    for (std::size_t i = 0; i < data_.drawings.size(); ++i) {
      StudyRecord r;
      r.patient_id = "P" + std::to_string(i);
      r.image_ref = "img" + std::to_string(i) + ".png";
      r.label = data_.samples[i].label;
      r.roi = data_.drawings[i].roi;
      write_png(data_.drawings[i].image, dir / r.image_ref);
      records.push_back(r);
    }
    write_manifest(dir / "manifest.jsonl", records);

    auto cfg = femur::testing::tiny_classifier_config(1);
    const auto three = train_classifier(data_.samples, data_.samples, cfg);
    three.model.save(dir / "classifier_three");
    cfg.mode = ClassMode::kTwoClass;
    train_classifier(data_.samples, data_.samples, cfg).model.save(dir / "classifier_two");
    auto lcfg = LocalizerConfig::tiny();
    lcfg.epochs = 1;
    lcfg.batch_size = 2;
    std::vector<LocalizationSample> ls;
    for (auto& d : data_.drawings) ls.push_back({&d.image, d.roi});
    train_localizer(ls, ls, lcfg).model.save(dir / "localizer");

    std::vector<EmbeddingVector> emb;
    std::vector<int> labels;
    std::vector<std::string> refs;
    for (std::size_t i = 0; i < records.size(); ++i) {
      emb.push_back(three.model.embed(three.model.prepare(data_.drawings[i].image, records[i].roi)));
      labels.push_back(static_cast<int>(records[i].label));
      refs.push_back(records[i].image_ref);
    }
    build_index(emb, labels, refs, three.model.label_names()).save(dir / "index.bin");
    std::vector<TsnePoint> pts;
    for (std::size_t i = 0; i < refs.size(); ++i) pts.push_back({double(i), -double(i), labels[i], "left", refs[i]});
    write_json_file(dir / "tsne.json", tsne_table_json(pts, three.model.label_names()));
  }

  const std::filesystem::path& path() const { return tmp_.path(); }
  const Image& image(int i) const { return data_.drawings[i].image; }

 private:
  TempDir tmp_;
  femur::testing::TinyDataset data_;
};

const ModelDir& model_dir() {
  static const ModelDir dir;
  return dir;
}

json predict_request(const Image& img) {
  return {{"image_png_base64", base64_encode(encode_png(img))}};
}

// The image the service sees after the PNG round trip.
Image stored(const Image& img) { return decode_png(encode_png(img)); }

FractureService& service() {
  static FractureService s({.model_dir = model_dir().path()});
  return s;
}

}  // namespace

TEST_CASE("health and version report every artifact") {
  auto& s = service();
  CHECK(s.load_warnings().empty());
  const auto h = s.health();
  CHECK(h.status == 200);
  CHECK(h.body["status"] == "ok");
  for (const char* k : {"localizer", "classifier_three", "classifier_two", "index", "tsne", "manifest"}) {
    CHECK(h.body["loaded"][k] == true);
  }
  const auto v = s.version();
  CHECK(v.body["service_version"] == kServiceVersion);
  CHECK(v.body["model_ids"]["classifier_three"] == s.classifier(ClassMode::kThreeClass)->model_id());
  CHECK(v.body["model_ids"]["index"] == s.index()->model_id());
}

TEST_CASE("predict uses the localizer when no box is given") {
  auto& s = service();
  const Image& img = model_dir().image(0);
  const auto r = s.predict(predict_request(img));
  REQUIRE(r.status == 200);
  const json& b = r.body;
  CHECK(b["roi_origin"] == "auto");
  CHECK(b["mode"] == "three_class");
  const auto probs = b["probs"].get<std::vector<double>>();
  REQUIRE(probs.size() == 3);
  CHECK(std::accumulate(probs.begin(), probs.end(), 0.0) == doctest::Approx(1.0));
  const ROIParams want = s.localizer()->predict_roi(stored(img));
  CHECK(b["roi"][0].get<double>() == want.t_r);
  CHECK(b["roi"][2].get<double>() == want.s);
  const auto expect = predict_pipeline(stored(img), *s.classifier(ClassMode::kThreeClass), s.localizer());
  CHECK(probs == expect.prediction.probs);
  CHECK(b["label_name"] == s.classifier(ClassMode::kThreeClass)->label_names()[b["label"].get<int>()]);
  CHECK(b["flag_uncertain"] == (b["scale_agreement"]["support"].get<double>() < 1.0));
  CHECK(decode_png(*base64_decode(b["crop_png_base64"].get<std::string>())).height() == 32);
}

TEST_CASE("two-click box, session update and retrieval") {
  auto& s = service();
  const Image& img = model_dir().image(1);
  json req = predict_request(img);
  req["mode"] = "two_class";
  req["clicks"] = {{0.2, 0.3}, {0.6, 0.5}};
  const auto r = s.predict(req);
  REQUIRE(r.status == 200);
  CHECK(r.body["roi_origin"] == "manual");
  CHECK(r.body["probs"].size() == 2);
  const auto box = two_click_roi({0.2, 0.3}, {0.6, 0.5}, img.height(), img.width());
  CHECK(r.body["roi"] == json::array({box.t_r, box.t_c, box.s}));
  const std::string id = r.body["session_id"];

  const auto moved = s.roi({{"session_id", id}, {"roi", {0.5, 0.5, 0.4}}});
  REQUIRE(moved.status == 200);
  CHECK(moved.body["session_id"] == id);
  CHECK(moved.body["mode"] == "two_class");
  CHECK(moved.body["roi"] == json::array({0.5, 0.5, 0.4}));

  const auto ret = s.retrieve({{"session_id", id}, {"k", 4}});
  REQUIRE(ret.status == 200);
  const json& items = ret.body["items"];
  REQUIRE(items.size() == 4);
  for (std::size_t i = 0; i < items.size(); ++i) {
    CHECK(items[i]["rank"] == i + 1);
    CHECK(items[i]["thumbnail_png_base64"].is_string());
    if (i > 0) CHECK(items[i]["distance"].get<double>() >= items[i - 1]["distance"].get<double>());
  }
  const auto no_thumbs = s.retrieve({{"session_id", id}, {"k", 2}, {"thumbnails", false}});
  CHECK(no_thumbs.body["items"][0]["thumbnail_png_base64"].is_null());
}

TEST_CASE("request errors carry codes") {
  auto& s = service();
  auto code = [](const ApiResponse& r) { return r.body["error"]["code"].get<std::string>(); };
  CHECK(code(s.predict(json::object())) == "missing_image");
  CHECK(s.predict(json::object()).status == 400);
  CHECK(code(s.predict({{"image_png_base64", "@@@"}})) == "undecodable_image");
  CHECK(code(s.predict(predict_request(Image(32, 32, 0.5f)))) == "undecodable_image");
  json bad_roi = predict_request(model_dir().image(0));
  bad_roi["roi"] = {0.5, 0.5, 3.0};
  CHECK(code(s.predict(bad_roi)) == "bad_roi");
  json bad_mode = predict_request(model_dir().image(0));
  bad_mode["mode"] = "four_class";
  CHECK(code(s.predict(bad_mode)) == "bad_mode");
  json schema = predict_request(model_dir().image(0));
  schema["schema_version"] = 2;
  CHECK(code(s.predict(schema)) == "unsupported_schema");
  const auto unknown = s.roi({{"session_id", "nope"}, {"roi", {0.5, 0.5, 0.4}}});
  CHECK(unknown.status == 404);
  CHECK(code(unknown) == "unknown_session");
  CHECK(code(s.retrieve({{"k", 0}, {"embedding", {1.0}}})) == "bad_k");
  CHECK(code(s.retrieve({{"k", 2}, {"embedding", {1.0}}})) == "bad_embedding");
  CHECK(code(s.retrieve({{"embedding", {1.0}}})) == "bad_k");  // default k exceeds the pool
  CHECK(code(s.retrieve({{"k", 2}})) == "bad_request");
}

TEST_CASE("tsne table is served") {
  const auto r = service().tsne();
  REQUIRE(r.status == 200);
  CHECK(r.body["points"].size() == 6);
  CHECK(r.body["label_names"].size() == 3);
}

TEST_CASE("missing artifacts degrade instead of failing") {
  TempDir empty;
  FractureService s({.model_dir = empty.path()});
  CHECK(s.health().body["status"] == "degraded");
  CHECK(s.load_warnings().size() == 6);
  CHECK(s.predict(predict_request(model_dir().image(0))).status == 503);
  CHECK(s.retrieve({{"k", 1}, {"embedding", {1.0}}}).status == 503);
  CHECK(s.tsne().status == 503);
}

TEST_CASE("http routes") {
  HttpServer server(service());
  const int port = server.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  auto health = cli.Get("/api/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["status"] == "ok");
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");
  CHECK(cli.Get("/api/version")->status == 200);
  CHECK(cli.Get("/api/tsne")->status == 200);

  auto pred = cli.Post("/api/predict", predict_request(model_dir().image(2)).dump(), "application/json");
  REQUIRE(pred);
  CHECK(pred->status == 200);
  const json body = json::parse(pred->body);
  auto roi = cli.Post("/api/roi",
                      json({{"session_id", body["session_id"]}, {"clicks", {{0.1, 0.1}, {0.5, 0.5}}}}).dump(),
                      "application/json");
  CHECK(roi->status == 200);
  auto ret = cli.Post("/api/retrieve", json({{"session_id", body["session_id"]}, {"k", 3}}).dump(),
                      "application/json");
  CHECK(ret->status == 200);
  CHECK(json::parse(ret->body)["items"].size() == 3);

  auto malformed = cli.Post("/api/predict", "{not json", "application/json");
  CHECK(malformed->status == 400);
  CHECK(json::parse(malformed->body)["error"]["code"] == "bad_request");
  const auto missing = cli.Get("/api/nothing");
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body)["error"]["code"] == "not_found");
  server.stop();
}
