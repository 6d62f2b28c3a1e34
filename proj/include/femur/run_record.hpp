#ifndef FEMUR_RUN_RECORD_HPP_
#define FEMUR_RUN_RECORD_HPP_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace femur {

struct RunRecord {
  std::string run_id;  // derived from command, config and input checksum
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::string input_manifest_checksum;  // empty when the command reads no manifest
  std::map<std::string, std::string> outputs;  // name -> path relative to the run dir
  std::map<std::string, std::string> output_checksums;  // name -> SHA-256
  std::string started_at;   // ISO 8601 UTC
  std::string finished_at;

  static constexpr const char* kFileName = "run_record.json";
};

std::string utc_timestamp();
std::string make_run_id(const std::string& command, const nlohmann::json& config,
                        const std::string& input_checksum);

// Records `path` (inside run_dir) as an output and hashes it.
void add_output(RunRecord& record, const std::filesystem::path& run_dir,
                const std::string& name, const std::filesystem::path& path);

nlohmann::json to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);
void write_run_record(const std::filesystem::path& run_dir, const RunRecord& record);
RunRecord read_run_record(const std::filesystem::path& run_dir);

}  // namespace femur

#endif  // FEMUR_RUN_RECORD_HPP_
