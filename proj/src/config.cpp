#include "mtlfer/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mtlfer/errors.hpp"
#include "mtlfer/rng.hpp"

namespace mtlfer {
namespace {

using json = nlohmann::ordered_json;

// Typed access to one JSON object; finish() rejects keys nobody asked for.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  const json* find(std::string_view key) {
    known_.insert(std::string(key));
    auto it = obj_.find(std::string(key));
    return it == obj_.end() ? nullptr : &*it;
  }

  void number(std::string_view key, double& out) {
    if (const json* v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + ": expected a number");
      out = v->get<double>();
    }
  }

  void count(std::string_view key, std::size_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        throw ConfigError(field(key) + ": expected a non-negative integer");
      }
      out = v->get<std::size_t>();
    }
  }

  void seed(std::string_view key, std::uint64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }

  void flag(std::string_view key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }

  void text(std::string_view key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }

  void range(std::string_view key, std::array<double, 2>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
        throw ConfigError(field(key) + ": expected [low, high]");
      }
      out = {(*v)[0].get<double>(), (*v)[1].get<double>()};
    }
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!known_.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> known_;
};

template <typename Fn>
void checked(const std::string& field, Fn&& validate) {
  try {
    validate();
  } catch (const ConfigError& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

void read_optimizer(const json& j, const std::string& path, AdamConfig& cfg) {
  Reader r(j, path);
  r.number("learning_rate", cfg.learning_rate);
  r.number("beta1", cfg.beta1);
  r.number("beta2", cfg.beta2);
  r.number("epsilon", cfg.epsilon);
  r.finish();
}

void read_augment(const json& j, const std::string& path, AugmentConfig& cfg) {
  Reader r(j, path);
  r.number("jitter_range", cfg.jitter_range);
  r.number("flip_prob", cfg.flip_prob);
  r.number("erase_prob", cfg.erase_prob);
  r.range("erase_area", cfg.erase_area);
  r.range("erase_aspect", cfg.erase_aspect);
  r.number("mix_alpha", cfg.mix_alpha);
  r.flag("mix_real_term", cfg.mix_real_term);
  r.flag("emotion_jitter", cfg.emotion_jitter);
  r.flag("emotion_flip", cfg.emotion_flip);
  r.flag("emotion_erase", cfg.emotion_erase);
  r.flag("emotion_mix", cfg.emotion_mix);
  r.flag("appearance_jitter", cfg.appearance_jitter);
  r.finish();
}

void read_model(const json& j, const std::string& path, ModelConfig& cfg) {
  Reader r(j, path);
  for (auto [key, backbone] : {std::pair<const char*, BackboneConfig*>{"emotion", &cfg.emotion},
                               std::pair<const char*, BackboneConfig*>{"appearance", &cfg.appearance}}) {
    std::string name(to_string(backbone->variant));
    r.text(key, name);
    checked(r.field(key), [&] { *backbone = BackboneConfig::of(parse_variant(name)); });
  }
  r.count("feature_dim", cfg.feature_dim);
  r.count("trunk_dim", cfg.trunk_dim);
  r.count("heads", cfg.heads);
  r.count("reduction", cfg.reduction);
  r.finish();
}

TrainConfig read_train(const json& j, const std::string& path, bool allow_seed) {
  TrainConfig cfg;
  Reader r(j, path);
  r.count("epochs", cfg.epochs);
  r.count("batch_size", cfg.batch_size);
  r.number("lambda", cfg.lambda);
  r.flag("landmark_task", cfg.landmark_task);
  r.flag("class_weighting", cfg.class_weighting);
  if (allow_seed) r.seed("seed", cfg.seed);
  if (const json* v = r.find("optimizer")) read_optimizer(*v, r.field("optimizer"), cfg.optimizer);
  if (const json* v = r.find("augment")) read_augment(*v, r.field("augment"), cfg.augment);
  if (const json* v = r.find("model")) read_model(*v, r.field("model"), cfg.model);
  r.finish();
  checked(path, [&] { cfg.validate(); });
  return cfg;
}

json train_to_json(const TrainConfig& cfg) {
  const auto& a = cfg.augment;
  const auto& m = cfg.model;
  return json{
      {"epochs", cfg.epochs},
      {"batch_size", cfg.batch_size},
      {"lambda", cfg.lambda},
      {"landmark_task", cfg.landmark_task},
      {"class_weighting", cfg.class_weighting},
      {"seed", cfg.seed},
      {"optimizer",
       {{"learning_rate", cfg.optimizer.learning_rate},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"epsilon", cfg.optimizer.epsilon}}},
      {"augment",
       {{"jitter_range", a.jitter_range},
        {"flip_prob", a.flip_prob},
        {"erase_prob", a.erase_prob},
        {"erase_area", a.erase_area},
        {"erase_aspect", a.erase_aspect},
        {"mix_alpha", a.mix_alpha},
        {"mix_real_term", a.mix_real_term},
        {"emotion_jitter", a.emotion_jitter},
        {"emotion_flip", a.emotion_flip},
        {"emotion_erase", a.emotion_erase},
        {"emotion_mix", a.emotion_mix},
        {"appearance_jitter", a.appearance_jitter}}},
      {"model",
       {{"emotion", std::string(to_string(m.emotion.variant))},
        {"appearance", std::string(to_string(m.appearance.variant))},
        {"feature_dim", m.feature_dim},
        {"trunk_dim", m.trunk_dim},
        {"heads", m.heads},
        {"reduction", m.reduction}}},
  };
}

json parse_text(std::string_view text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t RunConfig::data_seed() const { return Rng::derive(seed, "data"); }

void RunConfig::resolve_seeds() {
  train.seed = Rng::derive(seed, "train", 0);
  ensemble.bag_seed = seed;  // member i bags with derive(seed, "bag", i)
  for (std::size_t i = 0; i < ensemble.members.size(); ++i) {
    ensemble.members[i].seed = Rng::derive(seed, "train", i);
  }
}

RunConfig parse_run_config(std::string_view json_text, const std::filesystem::path& base_dir) {
  const json doc = parse_text(json_text, "config");
  RunConfig cfg;
  Reader r(doc, "");
  r.seed("seed", cfg.seed);
  std::string out = cfg.output_dir.string();
  r.text("output_dir", out);
  cfg.output_dir = resolve(base_dir, out);

  const json* data = r.find("data");
  if (!data) throw ConfigError("data: required section is missing");
  {
    Reader d(*data, "data");
    std::string root;
    d.text("root", root);
    if (root.empty()) throw ConfigError("data.root: required");
    cfg.data.root = resolve(base_dir, root);
    d.number("val_fraction", cfg.data.val_fraction);
    if (!(cfg.data.val_fraction > 0.0 && cfg.data.val_fraction < 1.0)) {
      throw ConfigError("data.val_fraction: must lie in (0,1)");
    }
    d.finish();
  }

  json train_section = json::object();
  if (const json* t = r.find("train")) train_section = *t;
  cfg.train = read_train(train_section, "train", false);

  if (const json* e = r.find("ensemble")) {
    Reader er(*e, "ensemble");
    er.number("subsample_fraction", cfg.ensemble.subsample_fraction);
    if (!(cfg.ensemble.subsample_fraction > 0.0 && cfg.ensemble.subsample_fraction <= 1.0)) {
      throw ConfigError("ensemble.subsample_fraction: must lie in (0,1]");
    }
    er.flag("parallel", cfg.ensemble.parallel);
    if (const json* members = er.find("members")) {
      if (!members->is_array() || members->empty()) {
        throw ConfigError("ensemble.members: expected a non-empty array");
      }
      for (std::size_t i = 0; i < members->size(); ++i) {
        // Each member is a partial train section layered over the base one.
        json merged = train_section;
        if (!merged.is_object()) merged = json::object();
        const std::string path = "ensemble.members[" + std::to_string(i) + "]";
        if (!(*members)[i].is_object()) throw ConfigError(path + ": expected an object");
        merged.merge_patch((*members)[i]);
        cfg.ensemble.members.push_back(read_train(merged, path, false));
      }
    }
    er.finish();
  }
  if (cfg.ensemble.members.empty()) {
    for (auto v : {BackboneVariant::Standard, BackboneVariant::Wide, BackboneVariant::Slim}) {
      TrainConfig m = cfg.train;
      m.model.appearance = BackboneConfig::of(v);
      cfg.ensemble.members.push_back(m);
    }
  }
  r.finish();
  cfg.resolve_seeds();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  return parse_run_config(text, path.parent_path());
}

std::string train_config_json(const TrainConfig& cfg) { return train_to_json(cfg).dump(2); }

TrainConfig parse_train_config(std::string_view json_text, std::string_view field) {
  return read_train(parse_text(json_text, std::string(field)), std::string(field), true);
}

void write_descriptor(const std::filesystem::path& path, const EnsembleDescriptor& desc) {
  json members = json::array();
  for (const auto& m : desc.members) {
    members.push_back(json{{"checkpoint", m.checkpoint.generic_string()},
                           {"bag_seed", m.bag_seed},
                           {"bag_size", m.bag_size},
                           {"config", train_to_json(m.config)}});
  }
  const json doc{{"format", "mtlfer-ensemble"},
                 {"version", 1},
                 {"seed", desc.seed},
                 {"bag_seed", desc.bag_seed},
                 {"subsample_fraction", desc.subsample_fraction},
                 {"members", members}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

EnsembleDescriptor read_descriptor(const std::filesystem::path& path) {
  try {
    const json doc = parse_text(read_file(path), path.string());
    EnsembleDescriptor desc;
    Reader r(doc, "");
    std::string format;
    r.text("format", format);
    if (format != "mtlfer-ensemble") throw ConfigError("format: expected \"mtlfer-ensemble\"");
    std::size_t version = 0;
    r.count("version", version);
    if (version != 1) throw ConfigError("version: unsupported " + std::to_string(version));
    r.seed("seed", desc.seed);
    r.seed("bag_seed", desc.bag_seed);
    r.number("subsample_fraction", desc.subsample_fraction);
    const json* members = r.find("members");
    if (!members || !members->is_array() || members->empty()) {
      throw ConfigError("members: expected a non-empty array");
    }
    for (std::size_t i = 0; i < members->size(); ++i) {
      const std::string field = "members[" + std::to_string(i) + "]";
      Reader mr((*members)[i], field);
      DescriptorMember m;
      std::string ckpt;
      mr.text("checkpoint", ckpt);
      if (ckpt.empty()) throw ConfigError(field + ".checkpoint: required");
      m.checkpoint = ckpt;
      mr.seed("bag_seed", m.bag_seed);
      mr.count("bag_size", m.bag_size);
      const json* c = mr.find("config");
      if (!c) throw ConfigError(field + ".config: required");
      m.config = read_train(*c, field + ".config", true);
      mr.finish();
      desc.members.push_back(std::move(m));
    }
    r.finish();
    return desc;
  } catch (const ConfigError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

}  // namespace mtlfer
