#include "romoseg/config.hpp"

#include <fstream>

#include <json.hpp>

namespace romoseg {

using nlohmann::json;

namespace {

const char* refine_mode_name(RefineMode m) {
  switch (m) {
    case RefineMode::kNone: return "none";
    case RefineMode::kMorphological: return "morphological";
    case RefineMode::kExternal: return "external";
  }
  return "none";
}

RefineMode parse_refine_mode(const std::string& s, const std::string& origin) {
  if (s == "none") return RefineMode::kNone;
  if (s == "morphological" || s == "morph") return RefineMode::kMorphological;
  if (s == "external") return RefineMode::kExternal;
  throw FormatError(origin + ": refinement.mode must be none|morphological|external, got '" +
                    s + "'");
}

template <typename T>
T take(json& obj, const char* key, const T& fallback, const std::string& origin) {
  if (!obj.contains(key)) return fallback;
  try {
    T v = obj.at(key).get<T>();
    obj.erase(key);
    return v;
  } catch (const json::exception&) {
    throw FormatError(origin + ": field '" + std::string(key) + "' has the wrong type");
  }
}

void reject_unknown(const json& obj, const std::string& scope, const std::string& origin) {
  if (!obj.empty())
    throw FormatError(origin + ": unknown config key '" + scope + obj.begin().key() + "'");
}

}  // namespace

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw FormatError("config field '" + field + "' " + why);
  };
  if (!(theta_l_multiplier > 0)) fail("theta_l_multiplier", "must be > 0");
  if (!(theta_u_multiplier > 0)) fail("theta_u_multiplier", "must be > 0");
  if (!(theta_l_multiplier < theta_u_multiplier))
    fail("theta_l_multiplier", "must be < theta_u_multiplier");
  if (iterations < 1) fail("iterations", "must be >= 1");
  if (hidden_layers.empty()) fail("hidden_layers", "must list at least one layer width");
  for (const int w : hidden_layers)
    if (w < 1) fail("hidden_layers", "widths must be >= 1");
  if (!(learning_rate > 0)) fail("learning_rate", "must be > 0");
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (!(tau_sq > 0)) fail("tau_sq", "must be > 0");
  if (!(cycle_tolerance > 0)) fail("cycle_tolerance", "must be > 0");
  if (inlier_drop_threshold < 0 || inlier_drop_threshold > 1)
    fail("inlier_drop_threshold", "must be in [0, 1]");
  if (lmeds_trials < 1) fail("lmeds_trials", "must be >= 1");
  if (lipschitz_alpha < 0) fail("lipschitz_alpha", "must be >= 0");
  if (jobs < 0) fail("jobs", "must be >= 0");
  if (refinement.mode == RefineMode::kExternal && refinement.command.empty())
    fail("refinement.command", "must be set when refinement.mode is external");
}

static RunConfig config_from_json_obj(json root, const std::string& origin) {
  if (!root.is_object()) throw FormatError(origin + ": config must be a JSON object");

  RunConfig cfg;
  cfg.theta_l_multiplier = take(root, "theta_l_multiplier", cfg.theta_l_multiplier, origin);
  cfg.theta_u_multiplier = take(root, "theta_u_multiplier", cfg.theta_u_multiplier, origin);
  cfg.iterations = take(root, "iterations", cfg.iterations, origin);
  cfg.hidden_layers = take(root, "hidden_layers", cfg.hidden_layers, origin);
  cfg.learning_rate = take(root, "learning_rate", cfg.learning_rate, origin);
  cfg.epochs = take(root, "epochs", cfg.epochs, origin);
  cfg.tau_sq = take(root, "tau_sq", cfg.tau_sq, origin);
  cfg.cycle_tolerance = take(root, "cycle_tolerance", cfg.cycle_tolerance, origin);
  cfg.inlier_drop_threshold =
      take(root, "inlier_drop_threshold", cfg.inlier_drop_threshold, origin);
  cfg.seed = take(root, "seed", cfg.seed, origin);
  cfg.lmeds_trials = take(root, "lmeds_trials", cfg.lmeds_trials, origin);
  cfg.classical_sampson = take(root, "classical_sampson", cfg.classical_sampson, origin);
  cfg.lipschitz_alpha = take(root, "lipschitz_alpha", cfg.lipschitz_alpha, origin);
  cfg.jobs = take(root, "jobs", cfg.jobs, origin);

  if (root.contains("refinement")) {
    json ref = root.at("refinement");
    root.erase("refinement");
    if (!ref.is_object()) throw FormatError(origin + ": refinement must be an object");
    const std::string mode = take(ref, "mode", std::string("none"), origin);
    cfg.refinement.mode = parse_refine_mode(mode, origin);
    cfg.refinement.command = take(ref, "command", std::string(), origin);
    reject_unknown(ref, "refinement.", origin);
  }

  reject_unknown(root, "", origin);
  cfg.validate();
  return cfg;
}

RunConfig parse_config_json(const std::string& json_text, const std::string& origin) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(origin + ": invalid JSON: " + e.what());
  }
  return config_from_json_obj(std::move(root), origin);
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_json(text, path.string());
}

std::string config_to_json(const RunConfig& cfg) {
  json root;
  root["theta_l_multiplier"] = cfg.theta_l_multiplier;
  root["theta_u_multiplier"] = cfg.theta_u_multiplier;
  root["iterations"] = cfg.iterations;
  root["hidden_layers"] = cfg.hidden_layers;
  root["learning_rate"] = cfg.learning_rate;
  root["epochs"] = cfg.epochs;
  root["tau_sq"] = cfg.tau_sq;
  root["cycle_tolerance"] = cfg.cycle_tolerance;
  root["inlier_drop_threshold"] = cfg.inlier_drop_threshold;
  root["seed"] = cfg.seed;
  root["lmeds_trials"] = cfg.lmeds_trials;
  root["classical_sampson"] = cfg.classical_sampson;
  root["lipschitz_alpha"] = cfg.lipschitz_alpha;
  root["jobs"] = cfg.jobs;
  root["refinement"]["mode"] = refine_mode_name(cfg.refinement.mode);
  root["refinement"]["command"] = cfg.refinement.command;
  return root.dump(2);
}

RunConfig apply_overrides(const RunConfig& base, const std::vector<std::string>& overrides) {
  json root = json::parse(config_to_json(base));
  for (const std::string& ov : overrides) {
    const std::size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw FormatError("override '" + ov + "' is not of the form key=value");
    const std::string key = ov.substr(0, eq);
    const std::string value = ov.substr(eq + 1);

    // Walk the dotted path; every segment must already exist.
    json* node = &root;
    std::size_t pos = 0;
    while (true) {
      const std::size_t dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
      if (!node->is_object() || !node->contains(part))
        throw FormatError("override names unknown config field '" + key + "'");
      node = &node->at(part);
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    json parsed = json::parse(value, nullptr, false);
    if (parsed.is_discarded()) parsed = value;  // bare strings allowed unquoted
    if (node->is_string() && !parsed.is_string())
      parsed = value;
    *node = parsed;
  }
  return parse_config_json(root.dump(), "overrides");
}

}  // namespace romoseg
