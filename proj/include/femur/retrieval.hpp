#ifndef FEMUR_RETRIEVAL_HPP_
#define FEMUR_RETRIEVAL_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "femur/classification.hpp"
#include "femur/image.hpp"
#include "femur/kernels.hpp"
#include "json.hpp"

namespace femur {

class IndexError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr int kIndexFormatVersion = 1;

// Immutable after build.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;

  int size() const { return static_cast<int>(labels_.size()); }
  int dim() const { return dim_; }
  const std::vector<float>& vectors() const { return vectors_; }  // row-major n x dim
  std::span<const float> vector(int i) const;
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<std::string>& item_refs() const { return refs_; }
  const std::string& model_id() const { return model_id_; }
  const std::vector<std::string>& label_names() const { return label_names_; }

  // Number of pool items per label.
  std::map<int, int> class_totals() const;

  // Serialized file bytes (header, payload, trailing SHA-256 of the rest).
  std::vector<std::uint8_t> serialize() const;
  static EmbeddingIndex deserialize(std::span<const std::uint8_t> bytes);
  // SHA-256 hex of the payload; equal for identical inputs.
  std::string checksum() const;

  void save(const std::filesystem::path& path) const;
  static EmbeddingIndex load(const std::filesystem::path& path);

 private:
  friend EmbeddingIndex build_index(const std::vector<std::vector<float>>&,
                                    const std::vector<int>&, const std::vector<std::string>&,
                                    const std::string&, std::vector<std::string>);

  int dim_ = 0;
  std::vector<float> vectors_;
  std::vector<int> labels_;
  std::vector<std::string> refs_;
  std::string model_id_;
  std::vector<std::string> label_names_;
};

EmbeddingIndex build_index(const std::vector<std::vector<float>>& embeddings,
                           const std::vector<int>& labels,
                           const std::vector<std::string>& refs, const std::string& model_id,
                           std::vector<std::string> label_names = {});
EmbeddingIndex build_index(const std::vector<EmbeddingVector>& embeddings,
                           const std::vector<int>& labels,
                           const std::vector<std::string>& refs,
                           std::vector<std::string> label_names = {});

struct RetrievedItem {
  int index = 0;  // insertion position in the pool
  std::string item_ref;
  double distance = 0.0;  // Euclidean
  int label = 0;
};

struct RetrievalResult {
  std::string query_ref;
  std::vector<RetrievedItem> items;  // ascending distance, ties by index
};

// Exact k nearest neighbors.
RetrievalResult query(const EmbeddingIndex& index, std::span<const float> q, int k,
                      const std::string& query_ref = {},
                      ExecutionMode mode = ExecutionMode::kReference);
RetrievalResult query(const EmbeddingIndex& index, const EmbeddingVector& q, int k,
                      const std::string& query_ref = {},
                      ExecutionMode mode = ExecutionMode::kReference);
// One result per row of `queries` (row-major, index.dim() wide).
std::vector<RetrievalResult> query_batch(const EmbeddingIndex& index,
                                         std::span<const float> queries, int k,
                                         const std::vector<std::string>& query_refs = {},
                                         ExecutionMode mode = ExecutionMode::kReference);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

// Means over queries. `truth[i]` is the label of query i; `class_totals`
// counts pool items per label.
PrecisionRecall precision_recall_at_k(const std::vector<RetrievalResult>& results,
                                      const std::vector<int>& truth, int k,
                                      const std::map<int, int>& class_totals);
// Recall of a single query at each cutoff 1..items.size().
std::vector<double> recall_curve(const RetrievalResult& result, int truth, int class_total);

inline const std::vector<int>& default_k_values() {
  static const std::vector<int> k{5, 10, 30, 50, 80, 100, 200, 300, 400};
  return k;
}

struct ElevenPointCurve {
  std::vector<double> recall_levels;  // 0.0, 0.1, ..., 1.0
  std::vector<int> classes;
  std::vector<std::vector<double>> per_class;  // interpolated precision
  std::vector<double> per_class_map;
  std::vector<double> overall;  // mean over all queries
  double overall_map = 0.0;
  double map = 0.0;  // macro over classes
  // Mean precision / recall at each k (capped at the result length).
  std::vector<int> k_values;
  std::vector<double> precision_at_k;
  std::vector<double> recall_at_k;
};

// Per query, p_interp(r) = max precision over cutoffs in k_values whose recall
// is >= r (0 when none). Curves average the queries of each class.
ElevenPointCurve eleven_point_pr(const std::vector<RetrievalResult>& results,
                                 const std::vector<int>& truth,
                                 const std::map<int, int>& class_totals,
                                 const std::vector<int>& k_values = default_k_values());

// Flattened pixels after resizing to size x size.
std::vector<float> raw_pixel_vector(const Image& image, int size = 64);
EmbeddingIndex build_raw_pixel_index(const std::vector<const Image*>& pool,
                                     const std::vector<int>& labels,
                                     const std::vector<std::string>& refs, int size = 64);
RetrievalResult raw_pixel_baseline(const Image& query_image, const EmbeddingIndex& raw_index,
                                   int k, const std::string& query_ref = {});

nlohmann::json to_json(const RetrievalResult& result);
nlohmann::json to_json(const ElevenPointCurve& curve);
ElevenPointCurve eleven_point_from_json(const nlohmann::json& j);
std::string pr_curve_csv(const ElevenPointCurve& curve);

}  // namespace femur

#endif  // FEMUR_RETRIEVAL_HPP_
