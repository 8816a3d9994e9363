#include "cadm/config.hpp"

#include <fstream>
#include <sstream>

#include "cadm/errors.hpp"
#include "cadm/log.hpp"

namespace cadm {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

// Inline comments start at a '#' or ';' preceded by whitespace (or at the
// start of the line).
std::string strip_inline_comment(const std::string& line) {
  for (std::size_t i = 0; i < line.size(); ++i) {
    if ((line[i] == '#' || line[i] == ';') &&
        (i == 0 || line[i - 1] == ' ' || line[i - 1] == '\t')) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> items;
  std::string current;
  for (const char c : value) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!current.empty()) {
        items.push_back(current);
        current.clear();
      }
    } else {
      current += c;
    }
  }
  if (!current.empty()) items.push_back(current);
  return items;
}

}  // namespace

ConfigFile ConfigFile::parse_string(const std::string& text,
                                    const std::string& origin) {
  ConfigFile cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::string section;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(strip_inline_comment(line));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(origin + ":" + std::to_string(line_no) +
                          ": malformed section header '" + t + "'");
      }
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    }
    const std::string full = section.empty() ? key : section + "." + key;
    if (!cfg.values_.emplace(full, value).second) {
      throw ConfigError(origin + ":" + std::to_string(line_no) +
                        ": duplicate key '" + full + "'");
    }
  }
  return cfg;
}

ConfigFile ConfigFile::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file '" + path + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_string(buffer.str(), path);
}

bool ConfigFile::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string ConfigFile::get_string(const std::string& key,
                                   const std::string& def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

int ConfigFile::get_int(const std::string& key, int def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const int v = std::stoi(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an integer: '" +
                      it->second + "'");
  }
}

double ConfigFile::get_double(const std::string& key, double def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not a number: '" +
                      it->second + "'");
  }
}

bool ConfigFile::get_bool(const std::string& key, bool def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(origin_ + ": key '" + key + "' is not a boolean: '" + v + "'");
}

std::uint64_t ConfigFile::get_u64(const std::string& key, std::uint64_t def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(origin_ + ": key '" + key + "' is not an unsigned integer: '" +
                      it->second + "'");
  }
}

std::vector<double> ConfigFile::get_double_list(
    const std::string& key, const std::vector<double>& def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<double> out;
  for (const auto& item : split_list(it->second)) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": key '" + key + "' has non-numeric item '" +
                        item + "'");
    }
  }
  return out;
}

std::vector<std::string> ConfigFile::get_string_list(
    const std::string& key, const std::vector<std::string>& def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  return split_list(it->second);
}

std::vector<std::uint64_t> ConfigFile::get_u64_list(
    const std::string& key, const std::vector<std::uint64_t>& def) const {
  touched_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(it->second)) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError(origin_ + ": key '" + key + "' has non-integer item '" +
                        item + "'");
    }
  }
  return out;
}

std::vector<std::string> ConfigFile::unused_keys() const {
  std::vector<std::string> unused;
  for (const auto& [key, value] : values_) {
    (void)value;
    if (touched_.count(key) == 0) unused.push_back(key);
  }
  return unused;
}

void ConfigFile::warn_unused() const {
  for (const auto& key : unused_keys()) {
    log_warn(origin_ + ": unrecognized config key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------

SynthShiftConfig synth_config_from(const ConfigFile& c) {
  SynthShiftConfig s;
  s.vocab_size = c.get_int("synth.vocab_size", s.vocab_size);
  s.n_source = c.get_int("synth.n_source", s.n_source);
  s.n_target = c.get_int("synth.n_target", s.n_target);
  s.shift_strength = c.get_double("synth.shift_strength", s.shift_strength);
  s.class_balance = c.get_double("synth.class_balance", s.class_balance);
  s.seed = c.get_u64("synth.seed", s.seed);
  s.validate();
  return s;
}

EncoderConfig encoder_config_from(const ConfigFile& c) {
  EncoderConfig m;
  m.architecture =
      encoder_arch_from_name(c.get_string("model.architecture",
                                          encoder_arch_name(m.architecture)));
  m.vocab_size = c.get_int("model.vocab_size", m.vocab_size);
  m.repr_dim = c.get_int("model.repr_dim", m.repr_dim);
  m.depth = c.get_int("model.depth", m.depth);
  m.heads = c.get_int("model.heads", m.heads);
  m.max_sequence_length = c.get_int("model.max_sequence_length", m.max_sequence_length);
  m.disc_hidden = c.get_int("model.disc_hidden", m.disc_hidden);
  m.adapter = c.get_string("model.adapter", m.adapter);
  m.seed = c.get_u64("model.seed", m.seed);
  m.validate();
  return m;
}

PerturbationConfig perturbation_config_from(const ConfigFile& c) {
  PerturbationConfig p;
  p.epsilon = c.get_double("pgd.epsilon", p.epsilon);
  const std::string mode = c.get_string(
      "pgd.epsilon_mode", p.epsilon_mode == EpsilonMode::Relative ? "relative" : "absolute");
  if (mode == "relative") {
    p.epsilon_mode = EpsilonMode::Relative;
  } else if (mode == "absolute") {
    p.epsilon_mode = EpsilonMode::Absolute;
  } else {
    throw ConfigError("pgd.epsilon_mode must be 'relative' or 'absolute'");
  }
  p.norm = perturb_norm_from_name(c.get_string("pgd.norm", perturb_norm_name(p.norm)));
  p.steps = c.get_int("pgd.steps", p.steps);
  p.step_size = c.get_double("pgd.step_size", p.step_size);
  p.keep_best = c.get_bool("pgd.keep_best", p.keep_best);
  p.random_start = c.get_bool("pgd.random_start", p.random_start);
  p.validate();
  return p;
}

KernelConfig kernel_config_from(const ConfigFile& c) {
  KernelConfig k;
  k.mode = kernel_mode_from_name(c.get_string("kernel.mode", kernel_mode_name(k.mode)));
  k.bandwidths = c.get_double_list("kernel.bandwidths", k.bandwidths);
  k.multipliers = c.get_double_list("kernel.multipliers", k.multipliers);
  k.validate();
  return k;
}

AdaptationConfig adaptation_config_from(const ConfigFile& c) {
  AdaptationConfig a;
  a.lambda = c.get_double("loss.lambda", a.lambda);
  a.tau = c.get_double("train.tau", a.tau);
  a.pseudo_refresh_every = c.get_int("train.pseudo_refresh_every", a.pseudo_refresh_every);
  a.refresh_pseudo_labels = c.get_bool("train.refresh_pseudo_labels", a.refresh_pseudo_labels);
  a.pretrain_epochs = c.get_int("train.pretrain_epochs", a.pretrain_epochs);
  a.disc_epochs = c.get_int("train.disc_epochs", a.disc_epochs);
  a.adapt_epochs = c.get_int("train.adapt_epochs", a.adapt_epochs);
  a.alternation = alternation_from_name(
      c.get_string("train.alternation", alternation_name(a.alternation)));
  a.retrain_disc_on_refresh =
      c.get_bool("train.retrain_disc_on_refresh", a.retrain_disc_on_refresh);
  a.warmup_epochs = c.get_int("train.warmup_epochs", a.warmup_epochs);
  a.lr_encoder = c.get_double("optim.lr_encoder", a.lr_encoder);
  a.lr_heads = c.get_double("optim.lr_heads", a.lr_heads);
  a.batch_size = c.get_int("optim.batch_size", a.batch_size);
  a.seed = c.get_u64("train.seed", a.seed);
  a.pgd = perturbation_config_from(c);
  a.kernel = kernel_config_from(c);
  a.validate();
  return a;
}

}  // namespace cadm
