#include "pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "nrba/csv.hpp"
#include "report.hpp"

namespace nrba::cli {

namespace fs = std::filesystem;

std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string file_digest(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::ostringstream s;
    s << in.rdbuf();
    return fnv1a_hex(s.str());
}

namespace {

std::string key_of(const nlohmann::json& j) { return fnv1a_hex(j.dump()); }

std::string now_utc() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

std::vector<std::string> unique(const std::vector<std::string>& v) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& s : v)
        if (seen.insert(s).second) out.push_back(s);
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out << text;
}

Provenance parse_provenance(const std::string& s) {
    for (Provenance p : {Provenance::Base, Provenance::CcaAttr, Provenance::AcaAttr, Provenance::AcaSeqAttr})
        if (s == to_string(p)) return p;
    throw DataError("unknown weight provenance '" + s + "'");
}

std::string set_label(const WeightSet& s) {
    if (s.provenance == Provenance::CcaAttr) return "CCA-attr";
    return std::string(to_string(s.provenance)) + " w" + std::to_string(s.wave);
}

std::vector<double> outcome_of(const PanelDataset& d, const WeightSet& s) {
    std::vector<double> y;
    for (auto i : s.units) y.push_back(d.outcome(i, s.wave));
    return y;
}

std::vector<std::string> imputation_files(const std::string& dir, std::size_t m) {
    std::vector<std::string> out;
    for (std::size_t j = 1; j <= m; ++j) out.push_back(dir + "/imputed_" + std::to_string(j) + ".csv");
    out.push_back(dir + "/imputed_manifest.json");
    return out;
}

const char* kStageOrder[] = {"data", "simulate", "pattern", "weights", "impute", "sensitivity", "estimate", "report"};

}  // namespace

Pipeline::Pipeline(RunConfig config, unsigned threads) : config_(std::move(config)), threads_(std::max(1u, threads)) {
    started_ = now_utc();
    fs::create_directories(config_.output);
    manifest_ = nlohmann::json::object();
    auto mpath = out("manifest.json");
    if (fs::exists(mpath)) {
        std::ifstream in(mpath, std::ios::binary);
        try {
            manifest_ = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception&) {
            manifest_ = nlohmann::json::object();
        }
    }
    if (!manifest_.contains("stages") || !manifest_["stages"].is_object()) manifest_["stages"] = nlohmann::json::object();
}

void Pipeline::run_stage(const std::string& name, const std::string& key, const std::function<StageResult()>& compute,
                         const std::function<void()>& load) {
    keys_[name] = key;
    auto& st = manifest_["stages"][name];
    bool reusable = st.is_object() && st.value("key", "") == key && st.contains("outputs");
    if (reusable)
        for (const auto& [rel, digest] : st["outputs"].items()) {
            auto p = out(rel);
            if (!fs::exists(p) || file_digest(p) != digest.get<std::string>()) {
                reusable = false;
                break;
            }
        }
    if (reusable) {
        load();
        reused_.push_back(name);
        log_.emplace_back(name, "reused");
        return;
    }
    StageResult r = compute();
    nlohmann::json outputs = nlohmann::json::object();
    for (const auto& rel : r.outputs) outputs[rel] = file_digest(out(rel));
    st = {{"key", key}, {"outputs", outputs}, {"warnings", unique(r.warnings)}};
    log_.emplace_back(name, "ran");
}

void Pipeline::load_data() {
    if (data_) return;
    config_.validate_for_data();
    seed_ = *config_.seed;
    Schema schema = Schema::load(config_.schema.string());
    Warnings w;
    data_ = load_panel(config_.input.string(), schema, &w);
    data_digest_ = fnv1a_hex(file_digest(config_.input) + file_digest(config_.schema));
    manifest_["stages"]["data"] = {{"key", data_digest_},
                                   {"outputs", nlohmann::json::object()},
                                   {"warnings", unique(w)}};
    config_.formula.validate(schema);
}

std::string Pipeline::data_key() const { return data_digest_; }

bool Pipeline::wants(Method m) const {
    return std::find(config_.methods.begin(), config_.methods.end(), m) != config_.methods.end();
}

void Pipeline::pattern() {
    load_data();
    nlohmann::json k{{"stage", "pattern"}, {"data", data_key()},
                     {"group_by", config_.group_by ? nlohmann::json(*config_.group_by) : nlohmann::json()}};
    run_stage("pattern", key_of(k), [&] {
        auto s = summarize_patterns(*data_, config_.group_by);
        write_pattern_csv(s, out("patterns.csv").string());
        write_rates_csv(s, out("response_rates.csv").string());
        write_item_rates_csv(s, out("item_rates.csv").string());
        StageResult r{{"patterns.csv", "response_rates.csv", "item_rates.csv"}, {}};
        if (!s.monotone) r.warnings.push_back("response pattern is not monotone");
        return r;
    }, [] {});
}

void Pipeline::weights() {
    if (weights_) return;
    load_data();
    std::set<Provenance> need;
    for (Method m : config_.methods)
        if (auto p = needed_weights(m)) need.insert(*p);
    if (need.empty()) need = {Provenance::CcaAttr, Provenance::AcaAttr, Provenance::AcaSeqAttr};
    std::vector<std::string> kinds;
    for (auto p : need) kinds.emplace_back(to_string(p));
    nlohmann::json k{{"stage", "weights"},
                     {"data", data_key()},
                     {"propensity", config_.propensity.to_json()},
                     {"trim", config_.trim_quantile ? nlohmann::json(*config_.trim_quantile) : nlohmann::json()},
                     {"kinds", kinds}};
    const PanelDataset& d = *data_;
    run_stage("weights", key_of(k), [&] {
        StageResult r;
        Warnings w;
        std::vector<WeightSet> sets;
        for (int t = 0; t <= d.last_wave(); ++t) sets.push_back(base_weights(d, t));
        if (need.count(Provenance::AcaAttr))
            for (int t = 1; t <= d.last_wave(); ++t) sets.push_back(baseline_weights(d, t, config_.propensity, &w));
        if (need.count(Provenance::CcaAttr)) sets.push_back(cca_weights(d, config_.propensity, &w));
        if (need.count(Provenance::AcaSeqAttr)) {
            MonotonizeReport rep;
            PanelDataset mono = d.is_monotone() ? d : monotonize(d, &rep);
            if (!d.is_monotone())
                w.push_back("sequential weights: masked " + std::to_string(rep.masked_cells) +
                            " responses after a unit's first nonresponse");
            for (auto& s : sequential_weights(mono, config_.propensity, &w)) sets.push_back(std::move(s));
        }
        std::vector<WeightDiagnostics> diag;
        nlohmann::json models = nlohmann::json::array();
        for (auto& s : sets) {
            diag.push_back(weight_diagnostics(s.weights, outcome_of(d, s), set_label(s)));
            if (s.provenance == Provenance::Base) continue;
            nlohmann::json ms = nlohmann::json::array();
            for (const auto& m : s.models) ms.push_back(m.to_json());
            models.push_back({{"weights", set_label(s)}, {"models", ms}});
            if (config_.trim_quantile && *config_.trim_quantile < 1.0) {
                s = trim_weights(s, *config_.trim_quantile);
                diag.push_back(weight_diagnostics(s.weights, outcome_of(d, s), set_label(s) + " trimmed"));
            }
        }
        write_weights_csv(d, sets, out("weights.csv").string());
        write_diagnostics_csv(diag, out("weight_diagnostics.csv").string());
        write_quintiles_csv(diag, out("weight_quintiles.csv").string());
        write_text(out("propensity_models.json"), models.dump(2) + "\n");
        weights_ = std::move(sets);
        r.outputs = {"weights.csv", "weight_diagnostics.csv", "weight_quintiles.csv", "propensity_models.json"};
        r.warnings = w;
        return r;
    }, [&] {
        auto t = csv::read_file(out("weights.csv").string());
        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < d.n_units(); ++i) index[d.unit_ids()[i]] = i;
        std::vector<WeightSet> sets;
        for (const auto& row : t.rows) {
            Provenance p = parse_provenance(row.at(4));
            int wave = std::stoi(row.at(1));
            if (sets.empty() || sets.back().provenance != p || sets.back().wave != wave) {
                sets.emplace_back();
                sets.back().provenance = p;
                sets.back().wave = wave;
            }
            auto& s = sets.back();
            s.units.push_back(index.at(row.at(0)));
            s.weights.push_back(std::stod(row.at(2)));
            s.unscaled.push_back(std::stod(row.at(3)));
        }
        for (auto& s : sets) s.target_sum = s.sum();
        weights_ = std::move(sets);
    });
}

void Pipeline::impute() {
    if (mi_) return;
    load_data();
    nlohmann::json k{{"stage", "impute"}, {"data", data_key()}, {"spec", config_.imputer.to_json()},
                     {"m", config_.m},    {"seed", seed_}};
    auto files = imputation_files("imputations", config_.m);
    run_stage("impute", key_of(k), [&] {
        auto set = sequential_mi(*data_, config_.imputer, config_.m, seed_, {}, threads_);
        write_imputations(set, out("imputations").string(), "imputed");
        StageResult r{files, set.warnings};
        mi_ = std::move(set);
        return r;
    }, [&] {
        ImputationSet set;
        set.spec = config_.imputer;
        set.seed = seed_;
        for (std::size_t j = 0; j < config_.m; ++j) set.copies.push_back(load_panel(out(files[j]).string(), data_->schema()));
        mi_ = std::move(set);
    });
}

void Pipeline::sensitivity() {
    if (offsets_) return;
    load_data();
    nlohmann::json k{{"stage", "sensitivity"}, {"data", data_key()},           {"spec", config_.imputer.to_json()},
                     {"m", config_.m},         {"seed", seed_},                {"k", config_.sensitivity_k},
                     {"formula", config_.formula.to_json()},
                     {"models", config_.to_json()["models"]}};
    std::vector<std::string> outputs;
    for (std::size_t i = 0; i < config_.sensitivity_k.size(); ++i) {
        auto f = imputation_files("sensitivity/k" + std::to_string(i + 1), config_.m);
        outputs.insert(outputs.end(), f.begin(), f.end());
    }
    outputs.push_back("sensitivity.csv");
    run_stage("sensitivity", key_of(k), [&] {
        StageResult r;
        std::vector<ImputationSet> sets;
        for (std::size_t i = 0; i < config_.sensitivity_k.size(); ++i) {
            const double ks[] = {config_.sensitivity_k[i]};
            sets.push_back(sequential_mi(*data_, config_.imputer, config_.m, seed_, ks, threads_));
            write_imputations(sets.back(), out("sensitivity/k" + std::to_string(i + 1)).string(), "imputed");
            r.warnings.insert(r.warnings.end(), sets.back().warnings.begin(), sets.back().warnings.end());
        }
        EstimateInputs in;
        in.data = &*data_;
        for (const auto& s : sets) in.offset_sets.push_back(&s);
        EstimateRequest req;
        req.methods = {Method::MiOffset};
        req.formula = config_.formula;
        req.mixed = config_.mixed;
        req.gee = config_.gee;
        req.threads = threads_;
        auto table = estimate_table(in, req);
        write_estimates_csv(table, out("sensitivity.csv").string());
        r.warnings.insert(r.warnings.end(), table.warnings.begin(), table.warnings.end());
        offsets_ = std::move(sets);
        r.outputs = outputs;
        return r;
    }, [&] {
        std::vector<ImputationSet> sets;
        for (std::size_t i = 0; i < config_.sensitivity_k.size(); ++i) {
            ImputationSet set;
            set.spec = config_.imputer;
            set.seed = seed_;
            set.offsets = {config_.sensitivity_k[i]};
            for (std::size_t j = 1; j <= config_.m; ++j)
                set.copies.push_back(load_panel(
                    out("sensitivity/k" + std::to_string(i + 1) + "/imputed_" + std::to_string(j) + ".csv").string(),
                    data_->schema()));
            sets.push_back(std::move(set));
        }
        offsets_ = std::move(sets);
    });
}

void Pipeline::estimate() {
    load_data();
    if (config_.methods.empty()) throw ConfigError("no methods selected");
    bool need_w = false;
    for (Method m : config_.methods) need_w = need_w || needed_weights(m).has_value();
    if (need_w) weights();
    if (wants(Method::MiSeq)) impute();
    if (wants(Method::MiOffset)) sensitivity();
    const bool boot = config_.bootstrap > 0 && wants(Method::AcaSeqAttrW);

    std::vector<std::string> tags;
    for (Method m : config_.methods) tags.emplace_back(to_string(m));
    nlohmann::json k{{"stage", "estimate"},
                     {"data", data_key()},
                     {"methods", tags},
                     {"subgroups", config_.subgroups},
                     {"formula", config_.formula.to_json()},
                     {"models", config_.to_json()["models"]},
                     {"bootstrap", boot ? config_.bootstrap : 0},
                     {"seed", boot ? nlohmann::json(seed_) : nlohmann::json()},
                     {"weights", need_w ? keys_.at("weights") : ""},
                     {"impute", wants(Method::MiSeq) ? keys_.at("impute") : ""},
                     {"sensitivity", wants(Method::MiOffset) ? keys_.at("sensitivity") : ""}};
    run_stage("estimate", key_of(k), [&] {
        StageResult r;
        EstimateInputs in;
        in.data = &*data_;
        if (weights_) in.weights = *weights_;
        if (mi_) in.mi = &*mi_;
        if (offsets_ && wants(Method::MiOffset))
            for (const auto& s : *offsets_) in.offset_sets.push_back(&s);
        EstimateRequest req;
        req.methods = config_.methods;
        req.subgroups = config_.subgroups;
        req.formula = config_.formula;
        req.mixed = config_.mixed;
        req.gee = config_.gee;
        req.threads = threads_;
        auto table = estimate_table(in, req);
        write_estimates_csv(table, out("estimates.csv").string());
        write_coefficients_csv(table, out("coefficients.csv").string());
        write_subgroup_means_csv(table, out("subgroup_means.csv").string());
        r.outputs = {"estimates.csv", "coefficients.csv", "subgroup_means.csv"};
        r.warnings = table.warnings;

        if (boot) {
            const PanelDataset& d = *data_;
            PanelDataset mono = d.is_monotone() ? d : monotonize(d);
            auto clusters = mono.cluster_codes();
            std::ofstream bo(out("bootstrap.csv"), std::ios::binary);
            if (!bo) throw DataError("cannot write bootstrap.csv");
            csv::write_row(bo, {"method", "estimand", "se_bootstrap", "replicates", "failures"});
            for (int t = 1; t <= mono.last_wave(); ++t) {
                auto estimator = [&, t](std::span<const std::size_t> units) {
                    PanelDataset sub = mono.subset(units);
                    auto sets = sequential_weights(sub, config_.propensity);
                    WeightSet s = sets[static_cast<std::size_t>(t - 1)];
                    if (config_.trim_quantile && *config_.trim_quantile < 1.0) s = trim_weights(s, *config_.trim_quantile);
                    double num = 0, den = 0;
                    for (std::size_t k2 = 0; k2 < s.units.size(); ++k2) {
                        num += s.weights[k2] * sub.outcome(s.units[k2], t);
                        den += s.weights[k2];
                    }
                    return num / den;
                };
                auto b = bootstrap_se(estimator, clusters, config_.bootstrap, seed_, threads_);
                csv::write_row(bo, {"ACA-seq-attr-w", "mean:w" + std::to_string(t), csv::format_double(b.se),
                                    std::to_string(b.replicates.size()), std::to_string(b.failures.size())});
                for (const auto& f : b.failures) r.warnings.push_back("bootstrap wave " + std::to_string(t) + ": " + f);
            }
            r.outputs.push_back("bootstrap.csv");
        }
        return r;
    }, [] {});
}

void Pipeline::report() {
    pattern();
    estimate();
    const bool sens = config_.sensitivity_configured || wants(Method::MiOffset);
    if (sens) sensitivity();
    nlohmann::json k{{"stage", "report"},
                     {"pattern", keys_.at("pattern")},
                     {"estimate", keys_.at("estimate")},
                     {"weights", keys_.count("weights") ? keys_.at("weights") : ""},
                     {"sensitivity", sens ? keys_.at("sensitivity") : ""},
                     {"k", config_.sensitivity_k}};
    run_stage("report", key_of(k), [&] {
        ReportInputs in;
        in.output = config_.output;
        in.methods = config_.methods;
        in.seed = seed_;
        in.weights = keys_.count("weights") > 0;
        in.sensitivity = sens;
        in.sensitivity_k = config_.sensitivity_k;
        for (const char* s : kStageOrder)
            if (manifest_["stages"].contains(s))
                for (const auto& w : manifest_["stages"][s]["warnings"]) in.warnings.push_back(w.get<std::string>());
        in.warnings = unique(in.warnings);
        write_text(out("report.md"), render_report(in));
        return StageResult{{"report.md"}, {}};
    }, [] {});
}

void Pipeline::simulate() {
    if (!config_.scenario) throw ConfigError("simulate needs a 'scenario' section in the config");
    CohortScenario s = *config_.scenario;
    if (config_.seed) s.seed = *config_.seed;
    s.validate();
    seed_ = s.seed;
    nlohmann::json k{{"stage", "simulate"}, {"scenario", s.to_json()}};
    run_stage("simulate", key_of(k), [&] {
        auto sim = simulate_cohort(s, threads_);
        write_panel(sim.data, out("data.csv").string());
        write_panel(sim.truth.complete, out("complete.csv").string());
        write_text(out("schema.json"), cohort_schema(s).to_json().dump(2) + "\n");
        write_text(out("truth.json"), sim.truth.to_json().dump(2) + "\n");
        nlohmann::json replay{{"seed", s.seed}, {"scenario", s.to_json()}};
        write_text(out("scenario.json"), replay.dump(2) + "\n");
        return StageResult{{"data.csv", "complete.csv", "schema.json", "truth.json", "scenario.json"}, {}};
    }, [] {});
}

void Pipeline::finish(const std::string& command) {
    nlohmann::json cfg = config_.to_json();
    if (!config_.input.empty() && fs::exists(config_.input)) cfg["input"] = file_digest(config_.input);
    if (!config_.schema.empty() && fs::exists(config_.schema)) cfg["schema"] = file_digest(config_.schema);
    manifest_["toolkit_version"] = kToolkitVersion;
    manifest_["config_hash"] = key_of(cfg);
    manifest_["seed"] = seed_;
    std::vector<std::string> all;
    for (const char* s : kStageOrder)
        if (manifest_["stages"].contains(s))
            for (const auto& w : manifest_["stages"][s]["warnings"]) all.push_back(w.get<std::string>());
    manifest_["warnings"] = unique(all);
    manifest_["timestamps"] = "run_log.json";
    write_text(out("manifest.json"), manifest_.dump(2) + "\n");

    nlohmann::json log{{"command", command}, {"started", started_}, {"finished", now_utc()}};
    auto& stages = log["stages"] = nlohmann::json::array();
    for (const auto& [name, status] : log_) stages.push_back({{"stage", name}, {"status", status}});
    write_text(out("run_log.json"), log.dump(2) + "\n");
}

}  // namespace nrba::cli
