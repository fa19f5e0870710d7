#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "calkit/calib_metrics.hpp"
#include "calkit/idk_pipeline.hpp"
#include "calkit/model_client.hpp"

namespace calkit {

std::string_view toolkit_version();

enum class TableFormat { text, csv, latex };

TableFormat parse_table_format(std::string_view text);

/// Fixed-point with `decimals` digits, rounding half away from zero on the
/// shortest decimal form of `value` (so 0.0745 -> "0.075"). Trailing zeros kept.
std::string format_fixed(double value, int decimals);

// fraction -> "47.64%"
std::string format_percent(double fraction, int decimals = 2);

struct SummaryRow {
  std::string label;
  CalibrationSummary summary;
};

// Columns Model, Acc, Conf, ECE, MCE, ENCE at 3 decimals, rows in input order.
std::string render_summary_table(std::span<const SummaryRow> rows, TableFormat format = TableFormat::text);

// Reads back the CSV form of render_summary_table (count is left at 0).
std::vector<SummaryRow> parse_summary_csv(std::istream& in);

struct QuadrantRow {
  std::string label;
  QuadrantCounts counts;
};

// Columns Model, IK-IDK, IDK-IDK, IK-IK, IDK-IK, TRUTHFUL; "/" marks absent
// OOD cells. A row with zero total throws EmptyInputError.
std::string render_quadrant_table(std::span<const QuadrantRow> rows, TableFormat format = TableFormat::text);

// Minimal RFC 4180 field splitting (quoted fields, doubled quotes).
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_field(std::string_view text);

struct ManifestInput {
  std::string path;
  std::string sha256;
};

/// Everything needed to rerun a command: its arguments, seed, toolkit
/// version and the content hash of every input file.
struct RunManifest {
  std::string command;
  std::vector<std::string> args;
  std::uint64_t seed = 0;
  std::vector<ManifestInput> inputs;
  std::vector<std::string> outputs;
  std::string replay_log;
  Json extra = Json::object();

  void add_input(const std::string& path);  // hashes the file now
  Json to_json() const;
  void write(const std::string& path) const;
};

}  // namespace calkit
