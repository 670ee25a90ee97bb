#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace nrba::cli {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kKeys{"input",     "schema",      "seed",        "output",  "methods",
                                  "subgroups", "group_by",    "weights",     "imputation",
                                  "sensitivity", "formula",   "models",      "bootstrap", "scenario"};

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

template <class T>
T get(const nlohmann::json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError(where + "." + key + " has the wrong type");
    }
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    std::vector<std::string> unknown;
    for (const auto& [k, v] : j.items())
        if (!kKeys.count(k)) unknown.push_back(k);
    if (!unknown.empty()) {
        std::string list;
        for (const auto& u : unknown) list += (list.empty() ? "" : ", ") + u;
        throw ConfigError("unknown config keys: " + list);
    }
    RunConfig c;
    if (j.contains("input")) c.input = resolve(base, get<std::string>(j, "input", "config"));
    if (j.contains("schema")) c.schema = resolve(base, get<std::string>(j, "schema", "config"));
    if (j.contains("seed")) c.seed = get<std::uint64_t>(j, "seed", "config");
    if (j.contains("output")) c.output = resolve(base, get<std::string>(j, "output", "config"));
    if (j.contains("methods"))
        for (const auto& t : get<std::vector<std::string>>(j, "methods", "config")) c.methods.push_back(parse_method(t));
    if (j.contains("subgroups")) c.subgroups = get<std::vector<std::string>>(j, "subgroups", "config");
    if (j.contains("group_by")) c.group_by = get<std::string>(j, "group_by", "config");
    if (j.contains("weights")) {
        const auto& w = j.at("weights");
        if (w.contains("propensity")) c.propensity = PropensitySpec::from_json(w.at("propensity"));
        if (w.contains("trim_quantile") && !w.at("trim_quantile").is_null())
            c.trim_quantile = get<double>(w, "trim_quantile", "weights");
    }
    if (j.contains("imputation")) {
        const auto& im = j.at("imputation");
        if (im.contains("m")) c.m = get<std::size_t>(im, "m", "imputation");
        if (im.contains("spec")) c.imputer = ImputerSpec::from_json(im.at("spec"));
    }
    if (j.contains("sensitivity")) {
        c.sensitivity_configured = true;
        const auto& s = j.at("sensitivity");
        if (s.contains("k")) c.sensitivity_k = get<std::vector<double>>(s, "k", "sensitivity");
    }
    if (j.contains("formula")) c.formula = AnalysisFormula::from_json(j.at("formula"));
    if (j.contains("models")) {
        const auto& m = j.at("models");
        if (m.contains("reml")) c.mixed.reml = get<bool>(m, "reml", "models");
        if (m.contains("weight_power")) c.mixed.weight_power = get<double>(m, "weight_power", "models");
        if (m.contains("working")) {
            auto w = get<std::string>(m, "working", "models");
            if (w == "ar1")
                c.gee.working = WorkingCorrelation::Ar1;
            else if (w == "independence")
                c.gee.working = WorkingCorrelation::Independence;
            else
                throw ConfigError("models.working must be 'ar1' or 'independence', got '" + w + "'");
        }
    }
    if (j.contains("bootstrap")) c.bootstrap = get<std::size_t>(j.at("bootstrap"), "replicates", "bootstrap");
    if (j.contains("scenario")) c.scenario = CohortScenario::from_json(j.at("scenario"));
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["input"] = input.string();
    j["schema"] = schema.string();
    j["seed"] = seed ? nlohmann::json(*seed) : nlohmann::json();
    std::vector<std::string> tags;
    for (Method m : methods) tags.emplace_back(nrba::to_string(m));
    j["methods"] = tags;
    j["subgroups"] = subgroups;
    j["group_by"] = group_by ? nlohmann::json(*group_by) : nlohmann::json();
    j["weights"] = {{"propensity", propensity.to_json()},
                    {"trim_quantile", trim_quantile ? nlohmann::json(*trim_quantile) : nlohmann::json()}};
    j["imputation"] = {{"m", m}, {"spec", imputer.to_json()}};
    j["sensitivity"] = {{"k", sensitivity_k}};
    j["formula"] = formula.to_json();
    j["models"] = {{"reml", mixed.reml},
                   {"weight_power", mixed.weight_power},
                   {"working", gee.working == WorkingCorrelation::Ar1 ? "ar1" : "independence"}};
    j["bootstrap"] = {{"replicates", bootstrap}};
    if (scenario) j["scenario"] = scenario->to_json();
    return j;
}

void RunConfig::validate_for_data() const {
    std::vector<std::string> bad;
    if (input.empty())
        bad.push_back("input is required");
    else if (!fs::exists(input))
        bad.push_back("input file does not exist: " + input.string());
    if (schema.empty())
        bad.push_back("schema is required");
    else if (!fs::exists(schema))
        bad.push_back("schema file does not exist: " + schema.string());
    if (!seed) bad.push_back("seed is required (config or --seed)");
    if (m < 2) bad.push_back("imputation.m must be at least 2");
    if (trim_quantile && !(*trim_quantile > 0.0 && *trim_quantile <= 1.0))
        bad.push_back("weights.trim_quantile must lie in (0, 1]");
    if (bootstrap != 0 && bootstrap < 50) bad.push_back("bootstrap.replicates must be 0 or at least 50");
    if (sensitivity_k.empty()) bad.push_back("sensitivity.k must not be empty");
    bool mi = false;
    for (Method x : methods) mi = mi || needs_imputations(x);
    if (sensitivity_configured && !mi && !methods.empty())
        bad.push_back("sensitivity offsets are only valid with MI methods (MI-seq or MI-offset)");
    if (!bad.empty()) {
        std::string msg = "invalid config:";
        for (const auto& b : bad) msg += "\n  - " + b;
        throw ConfigError(msg);
    }
}

std::uint64_t RunConfig::require_seed() const {
    if (!seed) throw ConfigError("seed is required (config or --seed)");
    return *seed;
}

}  // namespace nrba::cli
