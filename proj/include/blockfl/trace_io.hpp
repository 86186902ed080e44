#pragma once

#include <iosfwd>
#include <string>

#include "blockfl/simulator.hpp"

namespace blockfl {

// One JSON object per epoch, full precision, stable key order.
std::string trace_to_json(const EpochTrace& trace);

// Writes one trace line per epoch of the run.
void write_trace(const RunResult& run, std::ostream& out);

}  // namespace blockfl
