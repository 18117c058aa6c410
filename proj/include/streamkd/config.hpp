#pragma once

#include <string>

#include "streamkd/pipeline.hpp"

namespace streamkd {

/// Parses the flat "section.key = value" experiment format: one key per line,
/// '#' starts a comment, blank lines ignored. Unknown or repeated keys are
/// config errors naming the offending line. The result is finalized and
/// therefore runnable.
ExperimentSpec parse_experiment_text(const std::string& text,
                                     const std::string& origin);

ExperimentSpec parse_experiment_file(const std::string& path);

/// Renders every field back to the flat format in a fixed key order.
/// parse(render(spec)) reproduces the spec: rendering it again is
/// byte-identical, which is what makes the resolved snapshot self-describing.
std::string render_experiment(const ExperimentSpec& spec);

}  // namespace streamkd
