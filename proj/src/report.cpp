#include "calkit/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "calkit/errors.hpp"
#include "calkit/util.hpp"

#ifndef CALKIT_VERSION
#define CALKIT_VERSION "0.0.0"
#endif

namespace calkit {
namespace {

using Table = std::vector<std::vector<std::string>>;

std::string render(const Table& t, TableFormat format) {
  std::ostringstream os;
  switch (format) {
    case TableFormat::csv:
      for (const auto& row : t) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_field(row[i]);
        os << '\n';
      }
      break;
    case TableFormat::latex:
      for (const auto& row : t) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? " & " : "") << row[i];
        os << " \\\\\n";
      }
      break;
    case TableFormat::text: {
      std::vector<std::size_t> width(t.front().size(), 0);
      for (const auto& row : t)
        for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
      for (const auto& row : t) {
        std::string line;
        for (std::size_t i = 0; i < row.size(); ++i) {
          if (i == 0) line += row[i] + std::string(width[i] - row[i].size(), ' ');
          else line += "  " + std::string(width[i] - row[i].size(), ' ') + row[i];
        }
        os << line << '\n';
      }
      break;
    }
  }
  return os.str();
}

double parse_double(const std::string& text, std::size_t line) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size()) throw ParseError(line, "bad number '" + t + "'");
  return v;
}

}  // namespace

std::string_view toolkit_version() { return CALKIT_VERSION; }

TableFormat parse_table_format(std::string_view text) {
  if (text == "text") return TableFormat::text;
  if (text == "csv") return TableFormat::csv;
  if (text == "latex") return TableFormat::latex;
  throw DomainError("unknown table format: " + std::string(text));
}

std::string format_fixed(double value, int decimals) {
  if (!std::isfinite(value)) throw DomainError("cannot format a non-finite value");
  if (decimals < 0) throw DomainError("decimals must be >= 0");
  char buf[512];
  const auto res = std::to_chars(buf, buf + sizeof buf, std::fabs(value), std::chars_format::fixed);
  const std::string s(buf, res.ptr);
  const auto dot = s.find('.');
  std::string digits = s.substr(0, dot);  // integer part
  std::string frac = dot == std::string::npos ? "" : s.substr(dot + 1);
  const bool round_up = frac.size() > static_cast<std::size_t>(decimals) && frac[decimals] >= '5';
  frac.resize(decimals, '0');
  std::string all = digits + frac;
  if (round_up) {
    std::size_t i = all.size();
    while (i > 0) {
      --i;
      if (all[i] == '9') {
        all[i] = '0';
      } else {
        ++all[i];
        break;
      }
      if (i == 0) all.insert(all.begin(), '1');
    }
  }
  std::string int_part = all.substr(0, all.size() - decimals);
  std::string out = int_part;
  if (decimals > 0) out += "." + all.substr(all.size() - decimals);
  const bool zero = std::all_of(all.begin(), all.end(), [](char c) { return c == '0'; });
  if (value < 0 && !zero) out.insert(out.begin(), '-');
  return out;
}

std::string format_percent(double fraction, int decimals) { return format_fixed(fraction * 100.0, decimals) + "%"; }

std::string render_summary_table(std::span<const SummaryRow> rows, TableFormat format) {
  if (rows.empty()) throw EmptyInputError("summary table needs at least one row");
  Table t{{"Model", "Acc", "Conf", "ECE", "MCE", "ENCE"}};
  for (const auto& r : rows) {
    const auto& s = r.summary;
    t.push_back({r.label, format_fixed(s.accuracy, 3), format_fixed(s.mean_confidence, 3), format_fixed(s.ece, 3),
                 format_fixed(s.mce, 3), format_fixed(s.ence, 3)});
  }
  return render(t, format);
}

std::vector<SummaryRow> parse_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || split_csv_line(trim(line)) !=
                                     std::vector<std::string>{"Model", "Acc", "Conf", "ECE", "MCE", "ENCE"})
    throw ParseError(1, "unexpected summary CSV header");
  std::vector<SummaryRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 6) throw ParseError(line_no, "expected 6 fields");
    SummaryRow r;
    r.label = f[0];
    r.summary.accuracy = parse_double(f[1], line_no);
    r.summary.mean_confidence = parse_double(f[2], line_no);
    r.summary.ece = parse_double(f[3], line_no);
    r.summary.mce = parse_double(f[4], line_no);
    r.summary.ence = parse_double(f[5], line_no);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_quadrant_table(std::span<const QuadrantRow> rows, TableFormat format) {
  if (rows.empty()) throw EmptyInputError("quadrant table needs at least one row");
  Table t{{"Model", "IK-IDK", "IDK-IDK", "IK-IK", "IDK-IK", "TRUTHFUL"}};
  for (const auto& r : rows) {
    const auto& c = r.counts;
    if (c.total() == 0) throw EmptyInputError("quadrant row '" + r.label + "' has no items");
    auto cell = [](const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : std::string("/"); };
    t.push_back({r.label, std::to_string(c.ik_idk), std::to_string(c.idk_idk), cell(c.ik_ik), cell(c.idk_ik),
                 format_percent(truthful_score(c))});
  }
  return render(t, format);
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  if (quoted) throw ParseError(0, "unterminated quoted CSV field");
  out.push_back(std::move(cur));
  return out;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (const char ch : text) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

void RunManifest::add_input(const std::string& path) { inputs.push_back({path, sha256_hex(read_file(path))}); }

Json RunManifest::to_json() const {
  Json j;
  j["tool"] = "calkit";
  j["version"] = std::string(toolkit_version());
  j["command"] = command;
  j["args"] = args;
  j["seed"] = seed;
  j["inputs"] = Json::array();
  for (const auto& i : inputs) j["inputs"].push_back({{"path", i.path}, {"sha256", i.sha256}});
  j["outputs"] = outputs;
  if (!replay_log.empty()) j["replay_log"] = replay_log;
  if (!extra.empty()) j["extra"] = extra;
  return j;
}

void RunManifest::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << to_json().dump(2) << '\n';
}

}  // namespace calkit
