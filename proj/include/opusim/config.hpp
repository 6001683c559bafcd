#pragma once

#include <string>

// Small output helpers shared by the command-line tools: locale-free
// number formatting so emitted tables are byte-stable across runs, and
// whole-file text writes for --out targets and resolved-settings dumps.

namespace opusim {

std::string format_double(double v, int prec);  // fixed-point, '.' radix
std::string format_sci(double v, int prec);     // scientific, for drifts

void write_text_file(const std::string& path, const std::string& text);

}  // namespace opusim
