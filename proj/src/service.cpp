#include "femur/service.hpp"

#include <cstdlib>
#include <random>
#include <sstream>

#include "femur/checksum.hpp"
#include "femur/model.hpp"
#include "httplib.h"

namespace femur {

using nlohmann::json;

namespace {

class RequestError : public std::runtime_error {
 public:
  RequestError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status(status), code(std::move(code)) {}
  int status;
  std::string code;
};

std::filesystem::path env_path(const char* name) {
  const char* v = std::getenv(name);
  return v == nullptr ? std::filesystem::path() : std::filesystem::path(v);
}

void check_schema(const json& request) {
  if (!request.is_object()) throw RequestError(400, "bad_request", "request body must be an object");
  if (request.contains("schema_version") &&
      request["schema_version"] != json(kApiSchemaVersion)) {
    throw RequestError(400, "unsupported_schema",
                       "schema_version must be " + std::to_string(kApiSchemaVersion));
  }
}

Image decode_image_field(const json& request) {
  if (!request.contains("image_png_base64") || !request["image_png_base64"].is_string()) {
    throw RequestError(400, "missing_image", "image_png_base64 is required");
  }
  const auto bytes = base64_decode(request["image_png_base64"].get<std::string>());
  if (!bytes) throw RequestError(400, "undecodable_image", "image is not valid base64");
  try {
    Image img = decode_png(*bytes);
    if (img.height() < kMinImageSide || img.width() < kMinImageSide) {
      throw RequestError(400, "undecodable_image",
                         "image must be at least " + std::to_string(kMinImageSide) + " px");
    }
    return img;
  } catch (const ImageError& e) {
    throw RequestError(400, "undecodable_image", e.what());
  }
}

std::optional<ROIParams> parse_roi_field(const json& request, const Image& image) {
  if (request.contains("roi") && !request["roi"].is_null()) {
    const json& r = request["roi"];
    ROIParams p;
    try {
      if (r.is_array() && r.size() == 3) {
        p = {r[0].get<double>(), r[1].get<double>(), r[2].get<double>()};
      } else if (r.is_object()) {
        p = {r.at("t_r").get<double>(), r.at("t_c").get<double>(), r.at("s").get<double>()};
      } else {
        throw RequestError(400, "bad_roi", "roi must be [t_r, t_c, s]");
      }
    } catch (const json::exception&) {
      throw RequestError(400, "bad_roi", "roi must hold three numbers");
    }
    if (!roi_in_range(p)) throw RequestError(400, "bad_roi", "roi out of range");
    return p;
  }
  if (request.contains("clicks") && !request["clicks"].is_null()) {
    const json& c = request["clicks"];
    try {
      if (!c.is_array() || c.size() != 2) throw RequestError(400, "bad_roi", "clicks needs two points");
      return two_click_roi({c[0].at(0).get<double>(), c[0].at(1).get<double>()},
                           {c[1].at(0).get<double>(), c[1].at(1).get<double>()}, image.height(),
                           image.width());
    } catch (const json::exception&) {
      throw RequestError(400, "bad_roi", "clicks must be [[row, col], [row, col]]");
    } catch (const std::invalid_argument& e) {
      throw RequestError(400, "bad_roi", e.what());
    }
  }
  return std::nullopt;
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 gen{std::random_device{}()};
  std::lock_guard lock(mu);
  std::ostringstream out;
  out << std::hex << gen() << gen();
  return out.str();
}

std::string png_base64(const Image& image) { return base64_encode(encode_png(image)); }

}  // namespace

json error_body(const std::string& code, const std::string& message) {
  return {{"schema_version", kApiSchemaVersion},
          {"error", {{"code", code}, {"message", message}}}};
}

ServiceConfig ServiceConfig::from_env() {
  ServiceConfig cfg;
  cfg.model_dir = env_path("FEMUR_MODEL_DIR");
  cfg.index_path = env_path("FEMUR_INDEX");
  cfg.tsne_path = env_path("FEMUR_TSNE");
  cfg.manifest_path = env_path("FEMUR_MANIFEST");
  return cfg;
}

FractureService::FractureService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  auto resolve = [&](const std::filesystem::path& explicit_path, const char* name) {
    if (!explicit_path.empty()) return explicit_path;
    return cfg_.model_dir.empty() ? std::filesystem::path() : cfg_.model_dir / name;
  };
  auto attempt = [&](const std::string& what, const std::filesystem::path& path, auto&& load) {
    if (path.empty() || !std::filesystem::exists(path)) {
      load_errors_[what] = path.empty() ? "not configured" : "missing: " + path.string();
      return;
    }
    try {
      load(path);
    } catch (const std::exception& e) {
      load_errors_[what] = e.what();
    }
  };
  attempt("localizer", resolve({}, "localizer"), [&](const auto& p) {
    localizer_ = std::make_unique<LocalizerModel>(LocalizerModel::load(p));
  });
  attempt("classifier_three", resolve({}, "classifier_three"), [&](const auto& p) {
    three_ = std::make_unique<ClassifierModel>(ClassifierModel::load(p));
    if (three_->config().mode != ClassMode::kThreeClass) {
      three_.reset();
      throw ModelError("classifier_three is not a three-class model");
    }
  });
  attempt("classifier_two", resolve({}, "classifier_two"), [&](const auto& p) {
    two_ = std::make_unique<ClassifierModel>(ClassifierModel::load(p));
    if (two_->config().mode != ClassMode::kTwoClass) {
      two_.reset();
      throw ModelError("classifier_two is not a two-class model");
    }
  });
  attempt("index", resolve(cfg_.index_path, "index.bin"), [&](const auto& p) {
    index_ = std::make_unique<EmbeddingIndex>(EmbeddingIndex::load(p));
  });
  attempt("tsne", resolve(cfg_.tsne_path, "tsne.json"),
          [&](const auto& p) { tsne_ = read_json_file(p); });
  attempt("manifest", resolve(cfg_.manifest_path, "manifest.jsonl"), [&](const auto& p) {
    manifest_ = load_manifest(p, {.verify_images = false});
  });
}

const ClassifierModel* FractureService::classifier(ClassMode mode) const {
  return mode == ClassMode::kThreeClass ? three_.get() : two_.get();
}

const ClassifierModel* FractureService::index_model() const {
  if (!index_) return nullptr;
  for (const ClassifierModel* m : {three_.get(), two_.get()}) {
    if (m != nullptr && m->model_id() == index_->model_id()) return m;
  }
  return nullptr;
}

std::size_t FractureService::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

void FractureService::evict_expired() {
  const auto now = std::chrono::steady_clock::now();
  std::lock_guard lock(sessions_mu_);
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    std::unique_lock slot(it->second->mu, std::try_to_lock);
    if (slot.owns_lock() && now - it->second->data.last_access > cfg_.session_ttl) {
      slot.unlock();
      it = sessions_.erase(it);
    } else {
      ++it;
    }
  }
}

std::shared_ptr<FractureService::SessionSlot> FractureService::find_session(const std::string& id) {
  evict_expired();
  std::lock_guard lock(sessions_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw RequestError(404, "unknown_session", "unknown session: " + id);
  return it->second;
}

ApiResponse FractureService::run_case(const std::string& session_id, Image image,
                                      const std::optional<ROIParams>& manual_roi,
                                      ClassMode mode) {
  const ClassifierModel* cls = classifier(mode);
  if (cls == nullptr) {
    throw RequestError(503, "model_not_loaded",
                       std::string(to_string(mode)) + " classifier is not loaded");
  }
  PipelineResult result;
  try {
    result = predict_pipeline(image, *cls, localizer_.get(), manual_roi);
  } catch (const std::invalid_argument& e) {
    throw RequestError(400, "incompatible_request", e.what());
  }
  std::optional<ScaleAgreementReport> report;
  if (result.roi) report = scale_agreement(*cls, image, *result.roi);
  std::optional<EmbeddingVector> embedding;
  if (const ClassifierModel* em = index_model()) {
    embedding = em->embed(em->prepare(image, result.roi));
  }

  json body = to_json(result.prediction, result.roi);
  body["schema_version"] = kApiSchemaVersion;
  body["mode"] = std::string(to_string(mode));
  body["label_names"] = cls->label_names();
  body["label_name"] = cls->label_names()[result.prediction.label];
  body["roi_origin"] = std::string(to_string(result.roi_origin));
  body["scale_agreement"] = report ? to_json(*report) : json(nullptr);
  body["flag_uncertain"] = report ? json(flag_uncertain(*report)) : json(nullptr);
  body["crop_png_base64"] = png_base64(result.classifier_input);

  std::shared_ptr<SessionSlot> slot;
  if (session_id.empty()) {
    slot = std::make_shared<SessionSlot>();
    slot->data.session_id = new_session_id();
    std::lock_guard lock(sessions_mu_);
    sessions_[slot->data.session_id] = slot;
  } else {
    slot = find_session(session_id);
  }
  std::lock_guard lock(slot->mu);
  CaseSession& s = slot->data;
  body["session_id"] = s.session_id;
  s.image = std::move(image);
  s.roi = result.roi;
  s.roi_origin = result.roi_origin;
  s.mode = mode;
  s.prediction = body;
  s.scale_report = report;
  s.embedding = std::move(embedding);
  s.retrieval = nullptr;
  s.last_access = std::chrono::steady_clock::now();
  return {200, body};
}

namespace {

ClassMode parse_mode_field(const json& request, bool three_loaded) {
  if (!request.contains("mode") || request["mode"].is_null()) {
    return three_loaded ? ClassMode::kThreeClass : ClassMode::kTwoClass;
  }
  try {
    return parse_class_mode(request["mode"].get<std::string>());
  } catch (const std::exception&) {
    throw RequestError(400, "bad_mode", "mode must be three_class or two_class");
  }
}

template <typename F>
ApiResponse guarded(F&& f) {
  try {
    return f();
  } catch (const RequestError& e) {
    return {e.status, error_body(e.code, e.what())};
  } catch (const json::exception& e) {
    return {400, error_body("bad_request", e.what())};
  } catch (const std::exception& e) {
    return {500, error_body("internal_error", e.what())};
  }
}

}  // namespace

ApiResponse FractureService::predict(const json& request) {
  return guarded([&] {
    check_schema(request);
    Image image = decode_image_field(request);
    const auto roi = parse_roi_field(request, image);
    const ClassMode mode = parse_mode_field(request, three_ != nullptr);
    return run_case(request.value("session_id", std::string()), std::move(image), roi, mode);
  });
}

ApiResponse FractureService::roi(const json& request) {
  return guarded([&] {
    check_schema(request);
    if (!request.contains("session_id")) {
      throw RequestError(400, "missing_session", "session_id is required");
    }
    const std::string id = request["session_id"].get<std::string>();
    Image image;
    ClassMode mode;
    {
      auto slot = find_session(id);
      std::lock_guard lock(slot->mu);
      image = slot->data.image;
      mode = request.contains("mode") ? parse_mode_field(request, three_ != nullptr)
                                      : slot->data.mode;
    }
    const auto roi = parse_roi_field(request, image);
    if (!roi) throw RequestError(400, "bad_roi", "roi or clicks is required");
    return run_case(id, std::move(image), roi, mode);
  });
}

std::optional<std::string> FractureService::thumbnail(int item) const {
  if (!manifest_) return std::nullopt;
  const std::string& ref = index_->item_refs()[item];
  for (const auto& r : manifest_->records) {
    if (r.image_ref != ref) continue;
    try {
      const Image img = manifest_->load_image(r);
      const int h = cfg_.thumbnail_size;
      const int w = std::max(1, static_cast<int>(std::lround(
                                    static_cast<double>(img.width()) * h / img.height())));
      return png_base64(resize(img, h, w));
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  return std::nullopt;
}

ApiResponse FractureService::retrieve(const json& request) {
  return guarded([&] {
    check_schema(request);
    if (!index_) throw RequestError(503, "index_not_loaded", "embedding index is not loaded");
    const int k = request.value("k", cfg_.default_k);
    if (k < 1 || k > index_->size()) {
      throw RequestError(400, "bad_k", "k must be in [1, " + std::to_string(index_->size()) + "]");
    }
    std::vector<float> q;
    std::string query_ref;
    std::shared_ptr<SessionSlot> slot;
    if (request.contains("session_id")) {
      slot = find_session(request["session_id"].get<std::string>());
      std::lock_guard lock(slot->mu);
      if (!slot->data.embedding) {
        throw RequestError(503, "model_not_loaded", "no classifier matches the index model");
      }
      q = slot->data.embedding->values;
      query_ref = slot->data.session_id;
    } else if (request.contains("embedding")) {
      q = request["embedding"].get<std::vector<float>>();
    } else {
      throw RequestError(400, "bad_request", "session_id or embedding is required");
    }
    if (static_cast<int>(q.size()) != index_->dim()) {
      throw RequestError(400, "bad_embedding",
                         "embedding must have " + std::to_string(index_->dim()) + " values");
    }
    const RetrievalResult result = query(*index_, q, k, query_ref);
    const bool thumbs = request.value("thumbnails", true);
    json items = json::array();
    for (std::size_t i = 0; i < result.items.size(); ++i) {
      const auto& it = result.items[i];
      json item = {{"rank", i + 1},
                   {"index", it.index},
                   {"item_ref", it.item_ref},
                   {"distance", it.distance},
                   {"label", it.label}};
      const auto& names = index_->label_names();
      item["label_name"] = it.label >= 0 && it.label < static_cast<int>(names.size())
                               ? json(names[it.label])
                               : json(nullptr);
      const auto thumb = thumbs ? thumbnail(it.index) : std::nullopt;
      item["thumbnail_png_base64"] = thumb ? json(*thumb) : json(nullptr);
      items.push_back(std::move(item));
    }
    json body = {{"schema_version", kApiSchemaVersion},
                 {"model_id", index_->model_id()},
                 {"query_ref", query_ref},
                 {"k", k},
                 {"items", items}};
    if (slot) {
      std::lock_guard lock(slot->mu);
      slot->data.retrieval = body;
      slot->data.last_access = std::chrono::steady_clock::now();
    }
    return ApiResponse{200, body};
  });
}

std::vector<std::string> FractureService::load_warnings() const {
  std::vector<std::string> out;
  for (const auto& [name, reason] : load_errors_) out.push_back(name + ": " + reason);
  return out;
}

ApiResponse FractureService::tsne() const {
  if (!tsne_) return {503, error_body("tsne_not_loaded", "no t-SNE table is loaded")};
  json body = *tsne_;
  body["schema_version"] = kApiSchemaVersion;
  return {200, body};
}

ApiResponse FractureService::health() const {
  json loaded = {{"localizer", localizer_ != nullptr},
                 {"classifier_three", three_ != nullptr},
                 {"classifier_two", two_ != nullptr},
                 {"index", index_ != nullptr},
                 {"tsne", tsne_.has_value()},
                 {"manifest", manifest_.has_value()}};
  const bool ready = three_ != nullptr || two_ != nullptr;
  return {200,
          {{"schema_version", kApiSchemaVersion},
           {"status", ready ? "ok" : "degraded"},
           {"loaded", loaded},
           {"load_errors", load_errors_},
           {"sessions", session_count()}}};
}

ApiResponse FractureService::version() const {
  json ids = json::object();
  if (localizer_) ids["localizer"] = localizer_->model_id();
  if (three_) ids["classifier_three"] = three_->model_id();
  if (two_) ids["classifier_two"] = two_->model_id();
  if (index_) ids["index"] = index_->model_id();
  return {200,
          {{"schema_version", kApiSchemaVersion},
           {"service_version", kServiceVersion},
           {"model_ids", ids}}};
}

HttpServer::HttpServer(FractureService& service)
    : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto reply = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto with_body = [this, reply](ApiResponse (FractureService::*handler)(const json&)) {
    return [this, reply, handler](const httplib::Request& req, httplib::Response& res) {
      json request;
      try {
        request = json::parse(req.body);
      } catch (const json::exception& e) {
        reply(res, {400, error_body("bad_request", std::string("malformed JSON: ") + e.what())});
        return;
      }
      reply(res, (service_.*handler)(request));
    };
  };
  server_->Post("/api/predict", with_body(&FractureService::predict));
  server_->Post("/api/roi", with_body(&FractureService::roi));
  server_->Post("/api/retrieve", with_body(&FractureService::retrieve));
  server_->Get("/api/tsne", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.tsne());
  });
  server_->Get("/api/health", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.health());
  });
  server_->Get("/api/version", [this, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.version());
  });
  // Browser clients are served from another origin during development.
  server_->set_post_routing_handler([](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
  });
  server_->Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  server_->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (!res.body.empty()) return;
    const bool missing = res.status == 404;
    res.set_content(error_body(missing ? "not_found" : "bad_request",
                               missing ? "no such endpoint" : "request rejected")
                        .dump(),
                    "application/json");
  });
  server_->set_payload_max_length(64 << 20);
}

int HttpServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

int HttpServer::serve_blocking(const std::string& host, int port,
                               const std::function<void(int)>& on_bound) {
  const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  if (on_bound) on_bound(bound);
  server_->listen_after_bind();
  return bound;
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace femur
