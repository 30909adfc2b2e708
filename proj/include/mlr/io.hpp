#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "mlr/fedsim.hpp"
#include "mlr/model.hpp"
#include "mlr/trace.hpp"

namespace mlr {

// Doubles are serialized with 17 significant digits so every value survives
// a write/read cycle bit for bit (nan and inf included).
std::string format_double(double v);
double parse_double(std::string_view s);

// All writers are atomic: content goes to <path>.tmp in full, then a rename
// replaces the destination, so readers never observe a partial file.
void write_text_atomic(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

// Columns x_0..x_{d-1},y and, when labels were retained, z.
void write_dataset_csv(const std::string& path, const Dataset& data);
Dataset read_dataset_csv(const std::string& path);

// Shard sidecar: agent_id,row_start,row_count and, when any agent carries a
// shared latent label, z.
void write_agents_csv(const std::string& path,
                      const std::vector<AgentRange>& agents);
std::vector<AgentRange> read_agents_csv(const std::string& path);

void write_trace_csv(const std::string& path, const Trace& trace);
Trace read_trace_csv(const std::string& path);

void write_rounds_csv(const std::string& path,
                      const std::vector<RoundLog>& rounds);
std::vector<RoundLog> read_rounds_csv(const std::string& path);

}  // namespace mlr
