#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "refusalgate/outcome.hpp"

namespace refusalgate::bench {

/// One benchmark task: prompt plus oracle tests (calibration/evaluation only).
struct DatasetRecord {
  std::string task_id;
  std::string prompt;
  std::string entry_point;  // optional metadata
  std::vector<sandbox::OracleTest> oracle_tests;
};

/// Line-delimited JSON records. Malformed lines raise InputError with the
/// line number; records without oracle tests are rejected with the task_id.
std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const std::vector<DatasetRecord>& records);

std::string record_to_json_line(const DatasetRecord& record);
DatasetRecord record_from_json_line(const std::string& line, size_t line_number = 0);

struct DatasetSplit {
  std::vector<DatasetRecord> calibration;
  std::vector<DatasetRecord> testing;
};

/// Seeded disjoint split; ratio is the calibration share (default 0.6).
DatasetSplit split_dataset(std::vector<DatasetRecord> records, uint64_t seed,
                           double ratio = 0.6);

/// Converters from the published HumanEval / MBPP record layouts into the
/// normalized schema above.
DatasetRecord convert_humaneval_line(const std::string& line, size_t line_number = 0);
DatasetRecord convert_mbpp_line(const std::string& line, size_t line_number = 0);
std::vector<DatasetRecord> convert_dataset(const std::filesystem::path& path,
                                           const std::string& flavor);  // "humaneval"|"mbpp"

/// Digest over the records actually used (ids + content), order-insensitive.
std::string dataset_digest(const std::vector<DatasetRecord>& records);

}  // namespace refusalgate::bench
