#include "femur/run_record.hpp"

#include <chrono>
#include <ctime>

#include "femur/checksum.hpp"
#include "femur/model.hpp"

namespace femur {

using nlohmann::json;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string make_run_id(const std::string& command, const json& config,
                        const std::string& input_checksum) {
  return sha256_hex(command + "\n" + config.dump() + "\n" + input_checksum).substr(0, 16);
}

void add_output(RunRecord& record, const std::filesystem::path& run_dir, const std::string& name,
                const std::filesystem::path& path) {
  const auto rel = path.is_absolute() ? std::filesystem::relative(path, run_dir) : path;
  record.outputs[name] = rel.generic_string();
  const auto full = run_dir / rel;
  if (std::filesystem::is_regular_file(full)) record.output_checksums[name] = sha256_file(full);
}

json to_json(const RunRecord& r) {
  return {{"run_id", r.run_id},
          {"command", r.command},
          {"config", r.config},
          {"input_manifest_checksum", r.input_manifest_checksum},
          {"outputs", r.outputs},
          {"output_checksums", r.output_checksums},
          {"started_at", r.started_at},
          {"finished_at", r.finished_at}};
}

RunRecord run_record_from_json(const json& j) {
  RunRecord r;
  r.run_id = j.at("run_id").get<std::string>();
  r.command = j.at("command").get<std::string>();
  r.config = j.value("config", json::object());
  r.input_manifest_checksum = j.value("input_manifest_checksum", std::string());
  r.outputs = j.value("outputs", std::map<std::string, std::string>());
  r.output_checksums = j.value("output_checksums", std::map<std::string, std::string>());
  r.started_at = j.value("started_at", std::string());
  r.finished_at = j.value("finished_at", std::string());
  return r;
}

void write_run_record(const std::filesystem::path& run_dir, const RunRecord& record) {
  std::filesystem::create_directories(run_dir);
  write_json_file(run_dir / RunRecord::kFileName, to_json(record));
}

RunRecord read_run_record(const std::filesystem::path& run_dir) {
  return run_record_from_json(read_json_file(run_dir / RunRecord::kFileName));
}

}  // namespace femur
