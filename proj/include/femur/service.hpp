#ifndef FEMUR_SERVICE_HPP_
#define FEMUR_SERVICE_HPP_

#include <chrono>
#include <functional>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "femur/classification.hpp"
#include "femur/dataset.hpp"
#include "femur/localization.hpp"
#include "femur/retrieval.hpp"
#include "femur/verification.hpp"
#include "json.hpp"

namespace httplib {
class Server;
}

namespace femur {

constexpr int kApiSchemaVersion = 1;
constexpr const char* kServiceVersion = "1.0.0";

// Model directory layout read by the service:
//   localizer/         localizer artifact
//   classifier_three/  three-class classifier artifact
//   classifier_two/    two-class classifier artifact
//   index.bin          embedding index (optional)
//   tsne.json          t-SNE table (optional)
//   manifest.jsonl     pool manifest for thumbnails (optional)
struct ServiceConfig {
  std::filesystem::path model_dir;
  std::filesystem::path index_path;     // overrides model_dir/index.bin
  std::filesystem::path tsne_path;      // overrides model_dir/tsne.json
  std::filesystem::path manifest_path;  // overrides model_dir/manifest.jsonl
  std::chrono::seconds session_ttl{1800};
  int thumbnail_size = 96;
  int default_k = 8;

  // FEMUR_MODEL_DIR, FEMUR_INDEX, FEMUR_TSNE, FEMUR_MANIFEST.
  static ServiceConfig from_env();
};

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

struct CaseSession {
  std::string session_id;
  Image image;
  std::optional<ROIParams> roi;
  RoiOrigin roi_origin = RoiOrigin::kNone;
  ClassMode mode = ClassMode::kThreeClass;
  nlohmann::json prediction;
  std::optional<ScaleAgreementReport> scale_report;
  std::optional<EmbeddingVector> embedding;  // from the index's model
  nlohmann::json retrieval;
  std::chrono::steady_clock::time_point last_access;
};

// Request handlers as plain functions over JSON; HttpServer binds them to
// routes. Models and the index are loaded once and never modified.
class FractureService {
 public:
  explicit FractureService(ServiceConfig cfg);

  ApiResponse predict(const nlohmann::json& request);
  ApiResponse roi(const nlohmann::json& request);
  ApiResponse retrieve(const nlohmann::json& request);
  ApiResponse tsne() const;
  ApiResponse health() const;
  ApiResponse version() const;

  const ClassifierModel* classifier(ClassMode mode) const;
  const LocalizerModel* localizer() const { return localizer_.get(); }
  const EmbeddingIndex* index() const { return index_.get(); }
  std::size_t session_count() const;
  // "<artifact>: <reason>" for every artifact that failed to load.
  std::vector<std::string> load_warnings() const;

 private:
  ApiResponse run_case(const std::string& session_id, Image image,
                       const std::optional<ROIParams>& manual_roi, ClassMode mode);
  struct SessionSlot {
    std::mutex mu;
    CaseSession data;
  };
  std::shared_ptr<SessionSlot> find_session(const std::string& id);
  void evict_expired();
  const ClassifierModel* index_model() const;
  std::optional<std::string> thumbnail(int index_item) const;

  ServiceConfig cfg_;
  std::unique_ptr<LocalizerModel> localizer_;
  std::unique_ptr<ClassifierModel> three_;
  std::unique_ptr<ClassifierModel> two_;
  std::unique_ptr<EmbeddingIndex> index_;
  std::optional<nlohmann::json> tsne_;
  std::optional<Manifest> manifest_;
  std::map<std::string, std::string> load_errors_;

  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
};

nlohmann::json error_body(const std::string& code, const std::string& message);

class HttpServer {
 public:
  explicit HttpServer(FractureService& service);
  ~HttpServer();

  // Binds host:port (0 = ephemeral) and serves on a background thread.
  // Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  // Serves on the calling thread until stop().
  int serve_blocking(const std::string& host, int port,
                     const std::function<void(int)>& on_bound = {});

 private:
  void install_routes();

  FractureService& service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

}  // namespace femur

#endif  // FEMUR_SERVICE_HPP_
