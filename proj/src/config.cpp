#include "dtpbc/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "dtpbc/errors.hpp"

namespace dtpbc {

namespace {

using Section = std::map<std::string, std::string>;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"model", {"type", "V_in", "L", "C", "r"}},
      {"gains", {"K_P", "K_I", "K_D"}},
      {"simulation",
       {"delta", "t_final", "mode", "x0", "xi0", "record_every", "blowup_bound", "clamp_input"}},
      {"schedule", {"times", "v_star"}},
      {"solver", {"newton_tol", "newton_max_iter", "substeps"}},
  };
  return keys;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) items.push_back(trim(item));
  return items;
}

const Section* find_section(const ConfigDocument& doc, const std::string& name) {
  const auto it = doc.sections.find(name);
  return it == doc.sections.end() ? nullptr : &it->second;
}

const std::string* find_key(const ConfigDocument& doc, const std::string& section,
                            const std::string& key) {
  const Section* sec = find_section(doc, section);
  if (sec == nullptr) return nullptr;
  const auto it = sec->find(key);
  return it == sec->end() ? nullptr : &it->second;
}

std::string qualified(const std::string& section, const std::string& key) {
  return section + "." + key;
}

const std::string& required(const ConfigDocument& doc, const std::string& section,
                            const std::string& key) {
  const std::string* v = find_key(doc, section, key);
  if (v == nullptr) throw ConfigError(qualified(section, key), "required key is missing");
  return *v;
}

double number(const ConfigDocument& doc, const std::string& section, const std::string& key) {
  return parse_double(required(doc, section, key), qualified(section, key));
}

double number_or(const ConfigDocument& doc, const std::string& section, const std::string& key,
                 double fallback) {
  const std::string* v = find_key(doc, section, key);
  return v == nullptr ? fallback : parse_double(*v, qualified(section, key));
}

int integer_or(const ConfigDocument& doc, const std::string& section, const std::string& key,
               int fallback) {
  const std::string* v = find_key(doc, section, key);
  if (v == nullptr) return fallback;
  int out = 0;
  const auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError(qualified(section, key), "expected an integer, got '" + *v + "'");
  }
  return out;
}

Vector vector_or(const ConfigDocument& doc, const std::string& section, const std::string& key,
                 Eigen::Index size) {
  const std::string* v = find_key(doc, section, key);
  if (v == nullptr) return Vector::Zero(size);
  const auto items = split_list(*v);
  if (static_cast<Eigen::Index>(items.size()) != size) {
    throw ConfigError(qualified(section, key),
                      "expected " + std::to_string(size) + " comma-separated values");
  }
  Vector out(size);
  for (Eigen::Index i = 0; i < size; ++i) {
    out(i) = parse_double(items[static_cast<std::size_t>(i)], qualified(section, key));
  }
  return out;
}

}  // namespace

std::string format_double(double value) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::scientific, 16);
  if (ec != std::errc()) throw Error("number formatting failed");
  return std::string(buf, ptr);
}

double parse_double(std::string_view text, std::string_view key) {
  const std::string s = trim(text);
  if (s == "inf" || s == "+inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  if (s == "nan" || s == "-nan") return std::nan("");
  double out = 0.0;
  const char* begin = s.data();
  if (!s.empty() && s.front() == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key), "expected a number, got '" + s + "'");
  }
  return out;
}

ConfigDocument parse_config_text(std::string_view text) {
  ConfigDocument doc;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("", "line " + std::to_string(line_no) + ": malformed section header");
      }
      current = trim(std::string_view(line).substr(1, line.size() - 2));
      if (!known_keys().contains(current)) throw ConfigError(current, "unknown section");
      if (doc.sections.contains(current)) throw ConfigError(current, "duplicate section");
      doc.sections[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("", "line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    std::string_view rest = std::string_view(line).substr(eq + 1);
    rest = rest.substr(0, rest.find_first_of("#;"));
    const std::string value = trim(rest);
    if (current.empty()) throw ConfigError(key, "key outside of any section");
    if (!known_keys().at(current).contains(key)) {
      throw ConfigError(qualified(current, key), "unknown key");
    }
    auto& section = doc.sections[current];
    if (section.contains(key)) throw ConfigError(qualified(current, key), "duplicate key");
    section[key] = value;
  }
  return doc;
}

ConfigDocument load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

BuckBoostParams buck_boost_from_config(const ConfigDocument& doc) {
  if (find_section(doc, "model") == nullptr) throw ConfigError("model", "section is missing");
  if (const std::string* type = find_key(doc, "model", "type");
      type != nullptr && *type != "buck_boost") {
    throw ConfigError("model.type", "only 'buck_boost' is supported, got '" + *type + "'");
  }
  BuckBoostParams p;
  p.V_in = number(doc, "model", "V_in");
  p.L = number(doc, "model", "L");
  p.C_cap = number(doc, "model", "C");
  p.r = number(doc, "model", "r");
  for (const auto& [key, v] : {std::pair{"V_in", p.V_in}, {"L", p.L}, {"C", p.C_cap}, {"r", p.r}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ConfigError(qualified("model", key), "must be finite and strictly positive");
    }
  }
  return p;
}

PIDGains gains_from_config(const ConfigDocument& doc) {
  const double kp = number(doc, "gains", "K_P");
  const double ki = number(doc, "gains", "K_I");
  const double kd = number(doc, "gains", "K_D");
  if (!(kp > 0.0) || !std::isfinite(kp)) throw ConfigError("gains.K_P", "must be finite and > 0");
  if (!(ki > 0.0) || !std::isfinite(ki)) throw ConfigError("gains.K_I", "must be finite and > 0");
  if (!(kd >= 0.0) || !std::isfinite(kd)) throw ConfigError("gains.K_D", "must be finite and >= 0");
  return PIDGains::scalar(kp, ki, kd);
}

Scenario scenario_from_config(const ConfigDocument& doc) {
  Scenario s;
  s.plant = buck_boost_from_config(doc);

  s.gains = gains_from_config(doc);

  s.stepper.delta = number(doc, "simulation", "delta");
  if (!(s.stepper.delta > 0.0)) throw ConfigError("simulation.delta", "must be > 0");
  s.t_final = number(doc, "simulation", "t_final");
  if (!(s.t_final > 0.0)) throw ConfigError("simulation.t_final", "must be > 0");
  if (const std::string* mode = find_key(doc, "simulation", "mode")) {
    try {
      s.mode = parse_mode(*mode);
    } catch (const InvalidArgument& e) {
      throw ConfigError("simulation.mode", e.what());
    }
  }
  s.x0 = vector_or(doc, "simulation", "x0", 2);
  s.xi0 = vector_or(doc, "simulation", "xi0", 1);
  s.record_every = integer_or(doc, "simulation", "record_every", 1);
  if (s.record_every < 1) throw ConfigError("simulation.record_every", "must be >= 1");
  s.blowup_bound = number_or(doc, "simulation", "blowup_bound", 1e6);
  if (!(s.blowup_bound > 0.0)) throw ConfigError("simulation.blowup_bound", "must be > 0");
  if (const std::string* clamp = find_key(doc, "simulation", "clamp_input")) {
    if (*clamp == "true") {
      s.clamp_input = true;
    } else if (*clamp == "false") {
      s.clamp_input = false;
    } else {
      throw ConfigError("simulation.clamp_input", "expected true or false");
    }
  }

  const auto times = split_list(required(doc, "schedule", "times"));
  const auto volts = split_list(required(doc, "schedule", "v_star"));
  if (times.size() != volts.size()) {
    throw ConfigError("schedule.v_star", "must list as many values as schedule.times");
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    ScheduleEntry entry;
    entry.t = parse_double(times[i], "schedule.times");
    entry.setpoint = Vector::Constant(1, parse_double(volts[i], "schedule.v_star"));
    if (!(entry.setpoint(0) >= 0.0)) throw ConfigError("schedule.v_star", "must be >= 0");
    s.schedule.push_back(std::move(entry));
  }

  s.stepper.newton_tol = number_or(doc, "solver", "newton_tol", s.stepper.newton_tol);
  s.stepper.newton_max_iter = integer_or(doc, "solver", "newton_max_iter", s.stepper.newton_max_iter);
  s.stepper.substeps = integer_or(doc, "solver", "substeps", s.stepper.substeps);

  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("", e.what());
  }
  return s;
}

std::string canonical_scenario(const Scenario& s) {
  std::ostringstream os;
  auto put_matrix = [&os](const char* name, const Matrix& m) {
    os << name << '=';
    for (Eigen::Index i = 0; i < m.size(); ++i) os << format_double(m.data()[i]) << ';';
    os << '\n';
  };
  if (const auto* bb = std::get_if<BuckBoostParams>(&s.plant)) {
    os << "plant=buck_boost\nV_in=" << format_double(bb->V_in) << "\nL=" << format_double(bb->L)
       << "\nC=" << format_double(bb->C_cap) << "\nr=" << format_double(bb->r) << '\n';
  } else {
    const auto& m = std::get<BilinearPHModel>(s.plant);
    os << "plant=general\n";
    put_matrix("Q", m.Q());
    put_matrix("J0", m.J0());
    put_matrix("R", m.R());
    put_matrix("G0", m.G0());
    put_matrix("E", m.E());
    for (Eigen::Index i = 0; i < m.m(); ++i) {
      put_matrix("J", m.J(i));
      put_matrix("G", m.G(i));
    }
  }
  put_matrix("K_P", s.gains.K_P);
  put_matrix("K_I", s.gains.K_I);
  put_matrix("K_D", s.gains.K_D);
  os << "delta=" << format_double(s.stepper.delta) << "\nt_final=" << format_double(s.t_final)
     << "\nmode=" << to_string(s.mode) << '\n';
  put_matrix("x0", s.x0);
  put_matrix("xi0", s.xi0);
  os << "record_every=" << s.record_every << "\nblowup_bound=" << format_double(s.blowup_bound)
     << "\nclamp_input=" << (s.clamp_input ? 1 : 0) << '\n';
  for (const ScheduleEntry& e : s.schedule) {
    os << "at=" << format_double(e.t) << ':';
    for (Eigen::Index i = 0; i < e.setpoint.size(); ++i) os << format_double(e.setpoint(i)) << ';';
    os << '\n';
  }
  os << "newton_tol=" << format_double(s.stepper.newton_tol)
     << "\nnewton_max_iter=" << s.stepper.newton_max_iter << "\nsubsteps=" << s.stepper.substeps
     << '\n';
  return os.str();
}

std::uint64_t scenario_hash(const Scenario& scenario) {
  // FNV-1a, 64 bit.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical_scenario(scenario)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string scenario_hash_hex(const Scenario& scenario) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(scenario_hash(scenario)));
  return buf;
}

}  // namespace dtpbc
