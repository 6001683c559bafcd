#include "opusim/trace.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <ostream>
#include <sstream>

#include "opusim/rng.hpp"

namespace opusim::kvsim {

bool TraceUnit::lookahead_bit(uint32_t t) const {
  const std::size_t w = t / 64;
  if (w >= lookahead.size()) return false;
  return (lookahead[w] >> (t % 64)) & 1u;
}

void TraceUnit::set_lookahead_bit(uint32_t t) {
  const std::size_t w = t / 64;
  if (w >= lookahead.size()) lookahead.resize(w + 1, 0);
  lookahead[w] |= uint64_t(1) << (t % 64);
}

TraceParseError::TraceParseError(int line_, const std::string& msg)
    : std::runtime_error("trace line " + std::to_string(line_) + ": " + msg),
      line(line_) {}

namespace {

std::vector<uint64_t> parse_hex_words(const std::string& s, int line) {
  if (s.empty()) throw TraceParseError(line, "empty lookahead field");
  std::vector<uint64_t> words;
  int nibble = 0;
  for (auto it = s.rbegin(); it != s.rend(); ++it) {
    const char c = char(std::tolower(static_cast<unsigned char>(*it)));
    uint64_t v;
    if (c >= '0' && c <= '9') v = uint64_t(c - '0');
    else if (c >= 'a' && c <= 'f') v = uint64_t(c - 'a' + 10);
    else throw TraceParseError(line, std::string("bad hex digit '") + *it + "'");
    const int w = nibble / 16;
    if (w >= int(words.size())) words.push_back(0);
    words[std::size_t(w)] |= v << (4 * (nibble % 16));
    ++nibble;
  }
  while (!words.empty() && words.back() == 0) words.pop_back();
  return words;
}

std::string hex_words(const std::vector<uint64_t>& words) {
  std::string out;
  bool leading = true;
  for (std::size_t i = words.size(); i-- > 0;) {
    for (int n = 15; n >= 0; --n) {
      const int v = int((words[i] >> (4 * n)) & 0xf);
      if (leading && v == 0) continue;
      leading = false;
      out += "0123456789abcdef"[v];
    }
  }
  return out.empty() ? "0" : out;
}

int parse_int(const std::string& s, int line, const char* what) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return int(v);
  } catch (const std::exception&) {
    throw TraceParseError(line, std::string("bad ") + what + " '" + s + "'");
  }
}

std::vector<TraceEntry> parse_needed(const std::string& body, int line) {
  std::vector<TraceEntry> out;
  if (body == "-") return out;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] != '(')
      throw TraceParseError(line, "expected '(' in needed list");
    const std::size_t comma = body.find(',', i);
    const std::size_t close = body.find(')', i);
    if (comma == std::string::npos || close == std::string::npos ||
        comma > close)
      throw TraceParseError(line, "malformed needed pair");
    TraceEntry e;
    e.token = uint32_t(
        parse_int(body.substr(i + 1, comma - i - 1), line, "needed token"));
    e.prov = parse_int(body.substr(comma + 1, close - comma - 1), line,
                       "needed provenance");
    out.push_back(e);
    i = close + 1;
    if (i < body.size()) {
      if (body[i] != ',')
        throw TraceParseError(line, "expected ',' between needed pairs");
      ++i;
      if (i == body.size())
        throw TraceParseError(line, "trailing ',' in needed list");
    }
  }
  return out;
}

}  // namespace

AccessTrace parse_trace(std::istream& in) {
  AccessTrace tr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string f0, f1, f2, f3, f4, extra;
    if (!(ls >> f0 >> f1 >> f2 >> f3 >> f4))
      throw TraceParseError(lineno, "expected 5 fields");
    if (ls >> extra)
      throw TraceParseError(lineno, "unexpected trailing field '" + extra + "'");
    TraceUnit u;
    u.step = parse_int(f0, lineno, "step");
    u.layer = parse_int(f1, lineno, "layer");
    if (u.step < 0 || u.layer < 0)
      throw TraceParseError(lineno, "step/layer must be non-negative");
    if (f2 == "0") u.attend = false;
    else if (f2 == "1") u.attend = true;
    else throw TraceParseError(lineno, "attend flag must be 0 or 1");
    u.lookahead = parse_hex_words(f3, lineno);
    if (f4.rfind("needed:", 0) != 0)
      throw TraceParseError(lineno, "fifth field must start with 'needed:'");
    u.needed = parse_needed(f4.substr(7), lineno);
    if (!u.attend && !u.needed.empty())
      throw TraceParseError(lineno, "attend=0 line must have an empty list");
    for (const TraceEntry& e : u.needed)
      if (e.prov > u.layer)
        throw TraceParseError(lineno, "provenance beyond the current layer");
    tr.units.push_back(std::move(u));
  }
  return tr;
}

void serialize_trace(const AccessTrace& tr, std::ostream& out) {
  for (const TraceUnit& u : tr.units) {
    out << u.step << ' ' << u.layer << ' ' << (u.attend ? 1 : 0) << ' '
        << hex_words(u.lookahead) << " needed:";
    if (u.needed.empty()) {
      out << '-';
    } else {
      for (std::size_t i = 0; i < u.needed.size(); ++i) {
        if (i) out << ',';
        out << '(' << u.needed[i].token << ',' << u.needed[i].prov << ')';
      }
    }
    out << '\n';
  }
}

Synthetic make_synthetic(const SyntheticSpec& spec) {
  if (spec.context <= 0 || spec.steps < 0 || spec.layers <= 0)
    throw std::invalid_argument("make_synthetic: bad dimensions");
  if (spec.skip < 0.0 || spec.skip >= 1.0)
    throw std::invalid_argument("make_synthetic: skip must be in [0, 1)");

  const int tokens = spec.context + spec.steps;
  Synthetic syn;
  syn.mask = dataflow::RouteMask(spec.layers, tokens);
  Rng rng(spec.seed);
  for (int l = 0; l < spec.layers; ++l)
    for (int t = 0; t < tokens; ++t) {
      const bool run = l == 0 || spec.style == TraceStyle::dense ||
                       !rng.bernoulli(spec.skip);
      syn.mask.set(l, t, run);
    }

  for (int s = 0; s < spec.steps; ++s) {
    const int decode_token = spec.context + s;
    const int past = decode_token;  // tokens 0..past-1 are in the cache
    for (int l = 0; l < spec.layers; ++l) {
      TraceUnit u;
      u.step = s;
      u.layer = l;
      u.attend = syn.mask.executed(l, decode_token);
      // Last layer wraps to the next step's layer 0, which always runs:
      // every bit set, so nothing is worth retaining.
      for (int t = 0; t < past; ++t)
        if (l + 1 >= spec.layers || syn.mask.executed(l + 1, t))
          u.set_lookahead_bit(uint32_t(t));
      if (u.attend) {
        for (int t = 0; t < past; ++t) {
          switch (spec.style) {
            case TraceStyle::dense:
              u.needed.push_back({uint32_t(t), l});
              break;
            case TraceStyle::token_wise:
              if (syn.mask.executed(l, t))
                u.needed.push_back({uint32_t(t), l});
              break;
            case TraceStyle::interleaved_skip:
              u.needed.push_back({uint32_t(t), syn.mask.kv_source_layer(l, t)});
              break;
          }
        }
      }
      syn.trace.units.push_back(std::move(u));
    }
  }
  return syn;
}

}  // namespace opusim::kvsim
