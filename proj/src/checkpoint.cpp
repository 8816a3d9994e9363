#include "cadm/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cadm/errors.hpp"

namespace cadm {

using nlohmann::json;

namespace {

constexpr int kVersion = 1;

const char* group_key(ParamGroup g) {
  switch (g) {
    case ParamGroup::Encoder: return "encoder";
    case ParamGroup::TaskHead: return "task_head";
    case ParamGroup::DiscHead: return "disc_head";
  }
  return "?";
}

json config_to_json(const EncoderConfig& cfg) {
  json j;
  j["architecture"] = encoder_arch_name(cfg.architecture);
  j["vocab_size"] = cfg.vocab_size;
  j["repr_dim"] = cfg.repr_dim;
  j["depth"] = cfg.depth;
  j["heads"] = cfg.heads;
  j["max_sequence_length"] = cfg.max_sequence_length;
  j["disc_hidden"] = cfg.disc_hidden;
  j["adapter"] = cfg.adapter;
  j["seed"] = cfg.seed;
  return j;
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig cfg;
  cfg.architecture = encoder_arch_from_name(j.at("architecture").get<std::string>());
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.repr_dim = j.at("repr_dim").get<int>();
  cfg.depth = j.at("depth").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.max_sequence_length = j.at("max_sequence_length").get<int>();
  cfg.disc_hidden = j.at("disc_hidden").get<int>();
  cfg.adapter = j.at("adapter").get<std::string>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

json read_checkpoint_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw ValidationError("cannot open checkpoint '" + path + "'");
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError("checkpoint '" + path + "': " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != "cadm-checkpoint") {
    throw ValidationError("'" + path + "' is not a cadm checkpoint");
  }
  if (j.value("version", 0) != kVersion) {
    throw ValidationError("checkpoint '" + path + "' has unsupported version " +
                          std::to_string(j.value("version", 0)));
  }
  return j;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state,
                     const Tokenizer& tokenizer) {
  json j;
  j["format"] = "cadm-checkpoint";
  j["version"] = kVersion;
  j["config"] = config_to_json(state.config);
  j["counters"] = {{"pretrain_steps", state.pretrain_steps},
                   {"disc_steps", state.disc_steps},
                   {"adapt_steps", state.adapt_steps}};
  j["tokenizer"] = tokenizer.vocab();

  json params;
  for (const ParamGroup g :
       {ParamGroup::Encoder, ParamGroup::TaskHead, ParamGroup::DiscHead}) {
    json tensors = json::array();
    for (const auto view : param_views(state, g)) {
      json arr = json::array();
      for (Index i = 0; i < view.size; ++i) {
        if (!std::isfinite(view.data[i])) {
          throw NumericError("refusing to checkpoint non-finite parameters");
        }
        arr.push_back(view.data[i]);
      }
      tensors.push_back(std::move(arr));
    }
    params[group_key(g)] = std::move(tensors);
  }
  j["params"] = std::move(params);

  std::ofstream out(path);
  if (!out) {
    throw ValidationError("cannot write checkpoint '" + path + "'");
  }
  out << j.dump() << "\n";
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  const json j = read_checkpoint_json(path);

  const EncoderConfig cfg = config_from_json(j.at("config"));
  LoadedCheckpoint loaded{init_model(cfg),
                          Tokenizer::from_vocab(
                              j.at("tokenizer").get<std::vector<std::string>>())};

  if (loaded.tokenizer.vocab_size() > cfg.vocab_size) {
    throw ValidationError("checkpoint tokenizer is larger than the model vocabulary");
  }

  for (const ParamGroup g :
       {ParamGroup::Encoder, ParamGroup::TaskHead, ParamGroup::DiscHead}) {
    const json& tensors = j.at("params").at(group_key(g));
    const auto views = param_views(loaded.state, g);
    if (tensors.size() != views.size()) {
      throw ValidationError("checkpoint '" + path + "' has wrong tensor count for " +
                            group_key(g));
    }
    for (std::size_t t = 0; t < views.size(); ++t) {
      const json& arr = tensors[t];
      if (static_cast<Index>(arr.size()) != views[t].size) {
        throw ValidationError("checkpoint '" + path + "' has wrong tensor size in " +
                              group_key(g));
      }
      for (Index i = 0; i < views[t].size; ++i) {
        views[t].data[i] = arr[static_cast<std::size_t>(i)].get<double>();
      }
    }
  }

  const json& counters = j.at("counters");
  loaded.state.pretrain_steps = counters.at("pretrain_steps").get<long>();
  loaded.state.disc_steps = counters.at("disc_steps").get<long>();
  loaded.state.adapt_steps = counters.at("adapt_steps").get<long>();
  return loaded;
}

std::string checkpoint_summary(const std::string& path) {
  const json j = read_checkpoint_json(path);
  const json& cfg = j.at("config");
  const json& counters = j.at("counters");

  std::ostringstream os;
  os << "checkpoint: " << path << "\n"
     << "architecture: " << cfg.at("architecture").get<std::string>() << "\n"
     << "vocab_size: " << cfg.at("vocab_size").get<int>()
     << "  repr_dim: " << cfg.at("repr_dim").get<int>()
     << "  max_seq_len: " << cfg.at("max_sequence_length").get<int>() << "\n";
  if (cfg.at("architecture").get<std::string>() == "tiny_transformer") {
    os << "depth: " << cfg.at("depth").get<int>()
       << "  heads: " << cfg.at("heads").get<int>() << "\n";
  }
  os << "seed: " << cfg.at("seed").get<std::uint64_t>() << "\n"
     << "steps: pretrain " << counters.at("pretrain_steps").get<long>()
     << ", discriminator " << counters.at("disc_steps").get<long>()
     << ", adapt " << counters.at("adapt_steps").get<long>() << "\n"
     << "tokenizer tokens: " << j.at("tokenizer").size() << "\n";

  for (const char* key : {"encoder", "task_head", "disc_head"}) {
    long count = 0;
    double sq = 0.0;
    for (const auto& tensor : j.at("params").at(key)) {
      for (const auto& v : tensor) {
        const double x = v.get<double>();
        sq += x * x;
        ++count;
      }
    }
    os << key << ": " << count << " parameters, l2 norm " << std::sqrt(sq) << "\n";
  }
  return os.str();
}

}  // namespace cadm
