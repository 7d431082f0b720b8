#ifndef MARLA_TRACE_HPP
#define MARLA_TRACE_HPP

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "marla/env.hpp"

namespace marla {

// One exported episode-trace row. Beliefs are the acting agent's posterior
// after the step; the message is the one the agent broadcasts next tick.
struct TraceRow {
  int episode = 0;
  int step = 0;
  int agent = 0;
  bool sampled = false;       // action_kind: sample | stop
  int global_process = -1;    // empty column for stop rows
  double observation = 0.0;   // empty column for stop rows
  double reward = 0.0;
  std::vector<double> belief;
  Message message;
  std::optional<double> value_estimate;
  std::optional<double> logprob;
};

class TraceWriter {
 public:
  // training_columns appends value_estimate and logprob to the schema.
  TraceWriter(const std::string& path, int num_hypotheses, bool training_columns);
  void write(const TraceRow& row);

 private:
  std::ofstream out_;
  int num_hypotheses_;
  bool training_columns_;
};

// Parses the documented schema; errors carry 1-based line numbers.
std::vector<TraceRow> read_trace(const std::string& path, int* num_hypotheses_out);

}  // namespace marla

#endif  // MARLA_TRACE_HPP
