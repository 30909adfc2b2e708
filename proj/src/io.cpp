#include "mlr/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace mlr {
namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

long long parse_int(std::string_view s) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error("bad integer field: '" + std::string(s) + "'");
  }
  return value;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (!line.empty()) {
      lines.push_back(line);
    }
  }
  return lines;
}

void expect_header(const std::vector<std::string>& lines,
                   const std::string& expected, const std::string& path) {
  if (lines.empty() || lines.front() != expected) {
    throw std::runtime_error(path + ": expected header '" + expected + "'");
  }
}

void expect_fields(const std::vector<std::string_view>& fields,
                   std::size_t want, const std::string& path) {
  if (fields.size() != want) {
    throw std::runtime_error(path + ": wrong field count");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] =
      std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
  if (ec != std::errc{}) {
    throw std::runtime_error("format_double failed");
  }
  return std::string(buf, ptr);
}

double parse_double(std::string_view s) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec == std::errc::result_out_of_range) {
    // from_chars flags overflow but still reports how far it read; the
    // saturated value is fine for our purposes.
    if (ptr != s.data() + s.size()) {
      throw std::runtime_error("bad numeric field: '" + std::string(s) + "'");
    }
    return value;
  }
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw std::runtime_error("bad numeric field: '" + std::string(s) + "'");
  }
  return value;
}

void write_text_atomic(const std::string& path, const std::string& content) {
  std::filesystem::path target(path);
  if (target.has_parent_path()) {
    std::filesystem::create_directories(target.parent_path());
  }
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw std::runtime_error("cannot open " + tmp.string() + " for write");
    }
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      throw std::runtime_error("write to " + tmp.string() + " failed");
    }
  }
  std::filesystem::rename(tmp, target);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_dataset_csv(const std::string& path, const Dataset& data) {
  std::string out;
  out.reserve(static_cast<std::size_t>(data.n()) *
              static_cast<std::size_t>(data.d() + 1) * 26);
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    out += "x_" + std::to_string(j) + ",";
  }
  out += data.has_labels() ? "y,z\n" : "y\n";
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    for (Eigen::Index j = 0; j < data.d(); ++j) {
      out += format_double(data.xs(i, j));
      out += ',';
    }
    out += format_double(data.ys(i));
    if (data.has_labels()) {
      out += ',';
      out += std::to_string(data.zs[static_cast<std::size_t>(i)]);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

Dataset read_dataset_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) {
    throw std::runtime_error(path + ": empty dataset file");
  }
  std::vector<std::string_view> header = split_csv_line(lines.front());
  bool has_z = header.back() == "z";
  std::size_t d = header.size() - (has_z ? 2 : 1);
  if (d == 0 || header[d] != "y") {
    throw std::runtime_error(path + ": expected x_* columns then y");
  }
  Eigen::Index n = static_cast<Eigen::Index>(lines.size()) - 1;
  if (n < 1) {
    throw std::runtime_error(path + ": no data rows");
  }

  Dataset data;
  data.xs.resize(n, static_cast<Eigen::Index>(d));
  data.ys.resize(n);
  if (has_z) {
    data.zs.resize(static_cast<std::size_t>(n));
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<std::string_view> fields =
        split_csv_line(lines[static_cast<std::size_t>(i) + 1]);
    expect_fields(fields, header.size(), path);
    for (std::size_t j = 0; j < d; ++j) {
      data.xs(i, static_cast<Eigen::Index>(j)) = parse_double(fields[j]);
    }
    data.ys(i) = parse_double(fields[d]);
    if (has_z) {
      data.zs[static_cast<std::size_t>(i)] =
          static_cast<int>(parse_int(fields[d + 1]));
    }
  }
  return data;
}

void write_agents_csv(const std::string& path,
                      const std::vector<AgentRange>& agents) {
  bool with_z = false;
  for (const AgentRange& a : agents) {
    with_z = with_z || a.z != 0;
  }
  std::string out =
      with_z ? "agent_id,row_start,row_count,z\n" : "agent_id,row_start,row_count\n";
  for (std::size_t m = 0; m < agents.size(); ++m) {
    out += std::to_string(m);
    out += ',';
    out += std::to_string(agents[m].row_start);
    out += ',';
    out += std::to_string(agents[m].row_count);
    if (with_z) {
      out += ',';
      out += std::to_string(agents[m].z);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

std::vector<AgentRange> read_agents_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) {
    throw std::runtime_error(path + ": empty agents file");
  }
  bool with_z = lines.front() == "agent_id,row_start,row_count,z";
  if (!with_z) {
    expect_header(lines, "agent_id,row_start,row_count", path);
  }
  std::vector<AgentRange> agents;
  agents.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string_view> fields = split_csv_line(lines[i]);
    expect_fields(fields, with_z ? 4 : 3, path);
    if (parse_int(fields[0]) != static_cast<long long>(i - 1)) {
      throw std::runtime_error(path + ": agent ids must be 0..M-1 in order");
    }
    AgentRange a;
    a.row_start = static_cast<Eigen::Index>(parse_int(fields[1]));
    a.row_count = static_cast<Eigen::Index>(parse_int(fields[2]));
    a.z = with_z ? static_cast<int>(parse_int(fields[3])) : 0;
    agents.push_back(a);
  }
  return agents;
}

namespace {
const char* kTraceHeader =
    "iter,objective,data_term,model_term,reg_term,grad_beta_norm,rel_err,nll,"
    "wall_ms";
const char* kRoundsHeader =
    "round,broadcasts,uploads,scalars_sent,rel_err,nll,grad_norm,wall_ms";
}  // namespace

void write_trace_csv(const std::string& path, const Trace& trace) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (const TraceRow& r : trace) {
    out += std::to_string(r.iter);
    for (double v : {r.objective, r.data_term, r.model_term, r.reg_term,
                     r.grad_beta_norm, r.rel_err, r.nll, r.wall_ms}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

Trace read_trace_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  expect_header(lines, kTraceHeader, path);
  Trace trace;
  trace.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string_view> fields = split_csv_line(lines[i]);
    expect_fields(fields, 9, path);
    TraceRow r;
    r.iter = static_cast<int>(parse_int(fields[0]));
    r.objective = parse_double(fields[1]);
    r.data_term = parse_double(fields[2]);
    r.model_term = parse_double(fields[3]);
    r.reg_term = parse_double(fields[4]);
    r.grad_beta_norm = parse_double(fields[5]);
    r.rel_err = parse_double(fields[6]);
    r.nll = parse_double(fields[7]);
    r.wall_ms = parse_double(fields[8]);
    trace.push_back(r);
  }
  return trace;
}

void write_rounds_csv(const std::string& path,
                      const std::vector<RoundLog>& rounds) {
  std::string out = std::string(kRoundsHeader) + "\n";
  for (const RoundLog& r : rounds) {
    out += std::to_string(r.round);
    out += ',' + std::to_string(r.broadcasts);
    out += ',' + std::to_string(r.uploads);
    out += ',' + std::to_string(r.scalars_sent);
    for (double v : {r.rel_err, r.nll, r.grad_norm, r.wall_ms}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  write_text_atomic(path, out);
}

std::vector<RoundLog> read_rounds_csv(const std::string& path) {
  std::vector<std::string> lines = read_lines(path);
  expect_header(lines, kRoundsHeader, path);
  std::vector<RoundLog> rounds;
  rounds.reserve(lines.size() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string_view> fields = split_csv_line(lines[i]);
    expect_fields(fields, 8, path);
    RoundLog r;
    r.round = static_cast<int>(parse_int(fields[0]));
    r.broadcasts = parse_int(fields[1]);
    r.uploads = parse_int(fields[2]);
    r.scalars_sent = parse_int(fields[3]);
    r.rel_err = parse_double(fields[4]);
    r.nll = parse_double(fields[5]);
    r.grad_norm = parse_double(fields[6]);
    r.wall_ms = parse_double(fields[7]);
    rounds.push_back(r);
  }
  return rounds;
}

}  // namespace mlr
