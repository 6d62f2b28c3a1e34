#include "femur/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "femur/checksum.hpp"

namespace femur {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "index files are little-endian");

namespace {

constexpr char kIndexMagic[4] = {'F', 'M', 'I', 'X'};
constexpr std::size_t kDigestHexSize = 64;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_string(const std::string& s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes_.insert(bytes_.end(), s.begin(), s.end());
  }
  void put_raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint32_t>();
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  void get_raw(void* out, std::size_t n) { std::memcpy(out, take(n), n); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw IndexError("index file is truncated");
    const auto* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

void check_ranked(const RetrievalResult& r) {
  for (std::size_t i = 1; i < r.items.size(); ++i) {
    if (r.items[i].distance < r.items[i - 1].distance) {
      throw std::invalid_argument("retrieval result is not sorted by distance");
    }
  }
}

}  // namespace

std::span<const float> EmbeddingIndex::vector(int i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("index item out of range");
  return std::span<const float>(vectors_).subspan(static_cast<std::size_t>(i) * dim_, dim_);
}

std::map<int, int> EmbeddingIndex::class_totals() const {
  std::map<int, int> totals;
  for (int l : labels_) ++totals[l];
  return totals;
}

EmbeddingIndex build_index(const std::vector<std::vector<float>>& embeddings,
                           const std::vector<int>& labels, const std::vector<std::string>& refs,
                           const std::string& model_id, std::vector<std::string> label_names) {
  if (embeddings.empty()) throw std::invalid_argument("cannot build an index from an empty pool");
  if (labels.size() != embeddings.size() || refs.size() != embeddings.size()) {
    throw std::invalid_argument("embeddings, labels and refs differ in length");
  }
  EmbeddingIndex index;
  index.dim_ = static_cast<int>(embeddings.front().size());
  if (index.dim_ < 1) throw std::invalid_argument("embedding dimension must be >= 1");
  index.vectors_.reserve(embeddings.size() * index.dim_);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (static_cast<int>(embeddings[i].size()) != index.dim_) {
      throw std::invalid_argument("embedding " + std::to_string(i) + " has dimension " +
                                  std::to_string(embeddings[i].size()) + ", expected " +
                                  std::to_string(index.dim_));
    }
    for (float v : embeddings[i]) {
      if (!std::isfinite(v)) throw std::invalid_argument("embedding contains non-finite values");
    }
    index.vectors_.insert(index.vectors_.end(), embeddings[i].begin(), embeddings[i].end());
  }
  index.labels_ = labels;
  index.refs_ = refs;
  index.model_id_ = model_id;
  index.label_names_ = std::move(label_names);
  return index;
}

EmbeddingIndex build_index(const std::vector<EmbeddingVector>& embeddings,
                           const std::vector<int>& labels, const std::vector<std::string>& refs,
                           std::vector<std::string> label_names) {
  if (embeddings.empty()) throw std::invalid_argument("cannot build an index from an empty pool");
  std::vector<std::vector<float>> rows;
  for (const auto& e : embeddings) {
    if (e.model_id != embeddings.front().model_id) {
      throw std::invalid_argument("embeddings come from different models");
    }
    rows.push_back(e.values);
  }
  return build_index(rows, labels, refs, embeddings.front().model_id, std::move(label_names));
}

std::vector<std::uint8_t> EmbeddingIndex::serialize() const {
  Writer w;
  w.put_raw(kIndexMagic, 4);
  w.put<std::uint32_t>(kIndexFormatVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(dim_));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(size()));
  w.put_string(model_id_);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(label_names_.size()));
  for (const auto& n : label_names_) w.put_string(n);
  for (int l : labels_) w.put<std::int32_t>(l);
  for (const auto& r : refs_) w.put_string(r);
  w.put_raw(vectors_.data(), vectors_.size() * sizeof(float));
  const std::string digest = sha256_hex(std::span<const std::uint8_t>(w.bytes()));
  w.put_raw(digest.data(), digest.size());
  return std::move(w.bytes());
}

std::string EmbeddingIndex::checksum() const {
  const auto bytes = serialize();
  return std::string(bytes.end() - kDigestHexSize, bytes.end());
}

EmbeddingIndex EmbeddingIndex::deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 + kDigestHexSize || std::memcmp(bytes.data(), kIndexMagic, 4) != 0) {
    throw IndexError("not an embedding index file");
  }
  const auto payload = bytes.first(bytes.size() - kDigestHexSize);
  const std::string stored(bytes.end() - kDigestHexSize, bytes.end());
  if (sha256_hex(payload) != stored) throw IndexError("index checksum mismatch");
  Reader r(payload);
  char magic[4];
  r.get_raw(magic, 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kIndexFormatVersion) {
    throw IndexError("unsupported index format version " + std::to_string(version));
  }
  EmbeddingIndex index;
  index.dim_ = static_cast<int>(r.get<std::uint32_t>());
  const auto n = r.get<std::uint32_t>();
  if (index.dim_ < 1 || n < 1) throw IndexError("index has no items");
  index.model_id_ = r.get_string();
  const auto names = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < names; ++i) index.label_names_.push_back(r.get_string());
  for (std::uint32_t i = 0; i < n; ++i) index.labels_.push_back(r.get<std::int32_t>());
  for (std::uint32_t i = 0; i < n; ++i) index.refs_.push_back(r.get_string());
  index.vectors_.resize(static_cast<std::size_t>(n) * index.dim_);
  r.get_raw(index.vectors_.data(), index.vectors_.size() * sizeof(float));
  if (!r.done()) throw IndexError("trailing bytes in index file");
  return index;
}

void EmbeddingIndex::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

EmbeddingIndex EmbeddingIndex::load(const std::filesystem::path& path) {
  return deserialize(read_file_bytes(path));
}

std::vector<RetrievalResult> query_batch(const EmbeddingIndex& index,
                                         std::span<const float> queries, int k,
                                         const std::vector<std::string>& query_refs,
                                         ExecutionMode mode) {
  const int n = index.size();
  if (index.dim() < 1 || queries.size() % index.dim() != 0) {
    throw std::invalid_argument("query dimension does not match the index (" +
                                std::to_string(index.dim()) + ")");
  }
  if (k < 1 || k > n) {
    throw std::invalid_argument("k must be in [1, " + std::to_string(n) + "], got " +
                                std::to_string(k));
  }
  const int q = static_cast<int>(queries.size() / index.dim());
  if (!query_refs.empty() && static_cast<int>(query_refs.size()) != q) {
    throw std::invalid_argument("query refs differ in length from queries");
  }
  std::vector<double> dist(static_cast<std::size_t>(q) * n);
  Kernels(mode).squared_distances(q, n, index.dim(), queries, index.vectors(), dist);

  std::vector<RetrievalResult> results(q);
  std::vector<int> order(n);
  for (int i = 0; i < q; ++i) {
    const double* d = dist.data() + static_cast<std::size_t>(i) * n;
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [d](int a, int b) {
      return d[a] != d[b] ? d[a] < d[b] : a < b;
    });
    RetrievalResult& r = results[i];
    if (!query_refs.empty()) r.query_ref = query_refs[i];
    for (int j = 0; j < k; ++j) {
      const int item = order[j];
      r.items.push_back({item, index.item_refs()[item], std::sqrt(d[item]), index.labels()[item]});
    }
  }
  return results;
}

RetrievalResult query(const EmbeddingIndex& index, std::span<const float> q, int k,
                      const std::string& query_ref, ExecutionMode mode) {
  if (static_cast<int>(q.size()) != index.dim()) {
    throw std::invalid_argument("query has dimension " + std::to_string(q.size()) +
                                ", index has " + std::to_string(index.dim()));
  }
  return query_batch(index, q, k, {query_ref}, mode).front();
}

RetrievalResult query(const EmbeddingIndex& index, const EmbeddingVector& q, int k,
                      const std::string& query_ref, ExecutionMode mode) {
  return query(index, std::span<const float>(q.values), k, query_ref, mode);
}

namespace {

int class_total(const std::map<int, int>& totals, int label) {
  const auto it = totals.find(label);
  if (it == totals.end() || it->second <= 0) {
    throw std::invalid_argument("class " + std::to_string(label) + " has no pool items");
  }
  return it->second;
}

}  // namespace

PrecisionRecall precision_recall_at_k(const std::vector<RetrievalResult>& results,
                                      const std::vector<int>& truth, int k,
                                      const std::map<int, int>& class_totals) {
  if (results.empty()) throw std::invalid_argument("no retrieval results");
  if (truth.size() != results.size()) throw std::invalid_argument("truth and results differ in length");
  if (k < 1) throw std::invalid_argument("k must be >= 1");
  PrecisionRecall pr;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (static_cast<int>(results[i].items.size()) < k) {
      throw std::invalid_argument("result shorter than k");
    }
    const int total = class_total(class_totals, truth[i]);
    int hits = 0;
    for (int j = 0; j < k; ++j) hits += results[i].items[j].label == truth[i];
    pr.precision += static_cast<double>(hits) / k;
    pr.recall += static_cast<double>(hits) / total;
  }
  pr.precision /= results.size();
  pr.recall /= results.size();
  return pr;
}

std::vector<double> recall_curve(const RetrievalResult& result, int truth, int class_total) {
  if (class_total <= 0) throw std::invalid_argument("class has no pool items");
  std::vector<double> out;
  int hits = 0;
  for (const auto& item : result.items) {
    hits += item.label == truth;
    out.push_back(static_cast<double>(hits) / class_total);
  }
  return out;
}

ElevenPointCurve eleven_point_pr(const std::vector<RetrievalResult>& results,
                                 const std::vector<int>& truth,
                                 const std::map<int, int>& class_totals,
                                 const std::vector<int>& k_values) {
  if (results.empty()) throw std::invalid_argument("eleven_point_pr: empty results");
  if (truth.size() != results.size()) throw std::invalid_argument("truth and results differ in length");
  if (k_values.empty()) throw std::invalid_argument("eleven_point_pr: empty k_values");
  for (int k : k_values) {
    if (k < 1) throw std::invalid_argument("k values must be >= 1");
  }
  ElevenPointCurve c;
  for (int i = 0; i <= 10; ++i) c.recall_levels.push_back(i / 10.0);
  c.k_values = k_values;
  c.precision_at_k.assign(k_values.size(), 0.0);
  c.recall_at_k.assign(k_values.size(), 0.0);
  c.overall.assign(11, 0.0);

  std::map<int, std::vector<double>> class_sum;
  std::map<int, int> class_queries;
  for (std::size_t q = 0; q < results.size(); ++q) {
    const auto& items = results[q].items;
    if (items.empty()) throw std::invalid_argument("eleven_point_pr: empty result list");
    const int total = class_total(class_totals, truth[q]);
    std::vector<int> hits_at(items.size() + 1, 0);
    for (std::size_t j = 0; j < items.size(); ++j) {
      hits_at[j + 1] = hits_at[j] + (items[j].label == truth[q]);
    }
    std::vector<double> interp(11, 0.0);
    for (std::size_t t = 0; t < k_values.size(); ++t) {
      const int k = std::min<int>(k_values[t], static_cast<int>(items.size()));
      const double precision = static_cast<double>(hits_at[k]) / k;
      const double recall = static_cast<double>(hits_at[k]) / total;
      c.precision_at_k[t] += precision;
      c.recall_at_k[t] += recall;
      for (int level = 0; level <= 10; ++level) {
        if (recall >= level / 10.0) interp[level] = std::max(interp[level], precision);
      }
    }
    auto& sum = class_sum[truth[q]];
    sum.resize(11, 0.0);
    for (int level = 0; level <= 10; ++level) {
      sum[level] += interp[level];
      c.overall[level] += interp[level];
    }
    ++class_queries[truth[q]];
  }
  const double nq = static_cast<double>(results.size());
  for (auto& v : c.precision_at_k) v /= nq;
  for (auto& v : c.recall_at_k) v /= nq;
  for (auto& v : c.overall) v /= nq;
  c.overall_map = std::accumulate(c.overall.begin(), c.overall.end(), 0.0) / 11.0;
  for (auto& [label, sum] : class_sum) {
    for (auto& v : sum) v /= class_queries[label];
    c.classes.push_back(label);
    c.per_class.push_back(sum);
    c.per_class_map.push_back(std::accumulate(sum.begin(), sum.end(), 0.0) / 11.0);
  }
  c.map = std::accumulate(c.per_class_map.begin(), c.per_class_map.end(), 0.0) /
          c.per_class_map.size();
  return c;
}

std::vector<float> raw_pixel_vector(const Image& image, int size) {
  const Image small = resize(image, size, size);
  return std::vector<float>(small.pixels().begin(), small.pixels().end());
}

EmbeddingIndex build_raw_pixel_index(const std::vector<const Image*>& pool,
                                     const std::vector<int>& labels,
                                     const std::vector<std::string>& refs, int size) {
  if (pool.empty()) throw std::invalid_argument("raw pixel baseline: empty pool");
  std::vector<std::vector<float>> rows;
  for (const Image* img : pool) rows.push_back(raw_pixel_vector(*img, size));
  return build_index(rows, labels, refs, "raw_pixels_" + std::to_string(size));
}

RetrievalResult raw_pixel_baseline(const Image& query_image, const EmbeddingIndex& raw_index,
                                   int k, const std::string& query_ref) {
  const int size = static_cast<int>(std::lround(std::sqrt(raw_index.dim())));
  return query(raw_index, raw_pixel_vector(query_image, size), k, query_ref);
}

json to_json(const RetrievalResult& r) {
  check_ranked(r);
  json items = json::array();
  for (const auto& it : r.items) {
    items.push_back({{"index", it.index},
                     {"item_ref", it.item_ref},
                     {"distance", it.distance},
                     {"label", it.label}});
  }
  return {{"query_ref", r.query_ref}, {"items", items}};
}

json to_json(const ElevenPointCurve& c) {
  json classes = json::array();
  for (std::size_t i = 0; i < c.classes.size(); ++i) {
    classes.push_back({{"label", c.classes[i]},
                       {"precision", c.per_class[i]},
                       {"map", c.per_class_map[i]}});
  }
  return {{"recall_levels", c.recall_levels},
          {"classes", classes},
          {"overall", {{"precision", c.overall}, {"map", c.overall_map}}},
          {"map", c.map},
          {"k_values", c.k_values},
          {"precision_at_k", c.precision_at_k},
          {"recall_at_k", c.recall_at_k}};
}

ElevenPointCurve eleven_point_from_json(const json& j) {
  ElevenPointCurve c;
  c.recall_levels = j.at("recall_levels").get<std::vector<double>>();
  for (const auto& cls : j.at("classes")) {
    c.classes.push_back(cls.at("label").get<int>());
    c.per_class.push_back(cls.at("precision").get<std::vector<double>>());
    c.per_class_map.push_back(cls.at("map").get<double>());
  }
  c.overall = j.at("overall").at("precision").get<std::vector<double>>();
  c.overall_map = j.at("overall").at("map").get<double>();
  c.map = j.at("map").get<double>();
  c.k_values = j.value("k_values", std::vector<int>{});
  c.precision_at_k = j.value("precision_at_k", std::vector<double>{});
  c.recall_at_k = j.value("recall_at_k", std::vector<double>{});
  return c;
}

std::string pr_curve_csv(const ElevenPointCurve& c) {
  std::ostringstream out;
  out.precision(17);
  out << "recall";
  for (int label : c.classes) out << ",class_" << label;
  out << ",overall\n";
  for (std::size_t level = 0; level < c.recall_levels.size(); ++level) {
    out << c.recall_levels[level];
    for (const auto& curve : c.per_class) out << ',' << curve[level];
    out << ',' << c.overall[level] << '\n';
  }
  return out.str();
}

}  // namespace femur
