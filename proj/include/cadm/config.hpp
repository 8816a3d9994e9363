#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "cadm/corpus.hpp"
#include "cadm/trainer.hpp"

namespace cadm {

// INI-style config: [section] headers, key = value lines, # or ; comment
// lines. Keys are addressed as "section.key". Typed getters record which keys
// were read so unknown (likely misspelled) keys can be reported.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::string& path);
  static ConfigFile parse_string(const std::string& text,
                                 const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& def) const;
  int get_int(const std::string& key, int def) const;
  double get_double(const std::string& key, double def) const;
  bool get_bool(const std::string& key, bool def) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const;
  std::vector<double> get_double_list(const std::string& key,
                                      const std::vector<double>& def) const;
  std::vector<std::string> get_string_list(
      const std::string& key, const std::vector<std::string>& def) const;
  std::vector<std::uint64_t> get_u64_list(
      const std::string& key, const std::vector<std::uint64_t>& def) const;

  std::vector<std::string> unused_keys() const;
  void warn_unused() const;

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> touched_;
};

SynthShiftConfig synth_config_from(const ConfigFile& c);
EncoderConfig encoder_config_from(const ConfigFile& c);
PerturbationConfig perturbation_config_from(const ConfigFile& c);
KernelConfig kernel_config_from(const ConfigFile& c);
AdaptationConfig adaptation_config_from(const ConfigFile& c);

}  // namespace cadm
