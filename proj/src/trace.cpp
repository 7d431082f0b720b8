#include "marla/trace.hpp"

#include <stdexcept>

#include "marla/csv.hpp"

namespace marla {

namespace {

std::string message_kind_name(Message::Kind kind) {
  switch (kind) {
    case Message::Kind::Null: return "null";
    case Message::Kind::LastAction: return "last_action";
    case Message::Kind::Declared: return "declared";
  }
  return "null";
}

Message::Kind message_kind_from(const std::string& name, int line) {
  if (name == "null") return Message::Kind::Null;
  if (name == "last_action") return Message::Kind::LastAction;
  if (name == "declared") return Message::Kind::Declared;
  throw std::invalid_argument("line " + std::to_string(line) + ": unknown message_kind '" +
                              name + "'");
}

}  // namespace

TraceWriter::TraceWriter(const std::string& path, int num_hypotheses, bool training_columns)
    : out_(path, std::ios::trunc),
      num_hypotheses_(num_hypotheses),
      training_columns_(training_columns) {
  if (!out_) throw std::runtime_error("trace: cannot open " + path + " for writing");
  out_ << "episode,step,agent,action_kind,global_process,observation,reward";
  for (int j = 0; j < num_hypotheses_; ++j) out_ << ",belief_" << j;
  out_ << ",message_kind,message_payload";
  if (training_columns_) out_ << ",value_estimate,logprob";
  out_ << "\n";
}

void TraceWriter::write(const TraceRow& row) {
  out_ << row.episode << ',' << row.step << ',' << row.agent << ','
       << (row.sampled ? "sample" : "stop") << ',';
  if (row.sampled) out_ << row.global_process;
  out_ << ',';
  if (row.sampled) out_ << format_double(row.observation);
  out_ << ',' << format_double(row.reward);
  for (int j = 0; j < num_hypotheses_; ++j) {
    out_ << ',' << format_double(row.belief[static_cast<std::size_t>(j)]);
  }
  out_ << ',' << message_kind_name(row.message.kind) << ',';
  if (row.message.kind != Message::Kind::Null) out_ << row.message.payload;
  if (training_columns_) {
    out_ << ',' << (row.value_estimate ? format_double(*row.value_estimate) : std::string())
         << ',' << (row.logprob ? format_double(*row.logprob) : std::string());
  }
  out_ << "\n";
}

std::vector<TraceRow> read_trace(const std::string& path, int* num_hypotheses_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("trace: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) {
    // Empty file: treat as an empty trace with no hypotheses.
    if (num_hypotheses_out) *num_hypotheses_out = 0;
    return {};
  }
  const std::vector<std::string> header = split_csv_line(line);
  int m = 0;
  for (const std::string& h : header) {
    if (h.rfind("belief_", 0) == 0) ++m;
  }
  if (header.size() < 9 || header[0] != "episode" || header[1] != "step" ||
      header[2] != "agent" || header[3] != "action_kind" || m == 0) {
    throw std::invalid_argument("line 1: not an episode trace header");
  }
  const bool training_columns =
      header.size() >= static_cast<std::size_t>(9 + m + 2) && header.back() == "logprob";
  const std::size_t expected = static_cast<std::size_t>(9 + m) + (training_columns ? 2 : 0);
  if (header.size() != expected) {
    throw std::invalid_argument("line 1: unexpected column count " +
                                std::to_string(header.size()));
  }
  if (num_hypotheses_out) *num_hypotheses_out = m;

  std::vector<TraceRow> rows;
  int line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != expected) {
      throw std::invalid_argument("line " + std::to_string(line_number) +
                                  ": expected " + std::to_string(expected) + " fields, got " +
                                  std::to_string(f.size()));
    }
    TraceRow row;
    row.episode = static_cast<int>(parse_int_field(f[0], line_number));
    row.step = static_cast<int>(parse_int_field(f[1], line_number));
    row.agent = static_cast<int>(parse_int_field(f[2], line_number));
    if (f[3] == "sample") {
      row.sampled = true;
      row.global_process = static_cast<int>(parse_int_field(f[4], line_number));
      row.observation = parse_double_field(f[5], line_number);
    } else if (f[3] == "stop") {
      row.sampled = false;
    } else {
      throw std::invalid_argument("line " + std::to_string(line_number) +
                                  ": unknown action_kind '" + f[3] + "'");
    }
    row.reward = parse_double_field(f[6], line_number);
    row.belief.resize(static_cast<std::size_t>(m));
    for (int j = 0; j < m; ++j) {
      row.belief[static_cast<std::size_t>(j)] =
          parse_double_field(f[static_cast<std::size_t>(7 + j)], line_number);
    }
    row.message.kind = message_kind_from(f[static_cast<std::size_t>(7 + m)], line_number);
    if (row.message.kind != Message::Kind::Null) {
      row.message.payload =
          static_cast<int>(parse_int_field(f[static_cast<std::size_t>(8 + m)], line_number));
    }
    if (training_columns) {
      const std::string& v = f[static_cast<std::size_t>(9 + m)];
      const std::string& lp = f[static_cast<std::size_t>(10 + m)];
      if (!v.empty()) row.value_estimate = parse_double_field(v, line_number);
      if (!lp.empty()) row.logprob = parse_double_field(lp, line_number);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace marla
