#include "nrba/panel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "nrba/csv.hpp"

namespace nrba {

const char* to_string(VarKind kind) {
    switch (kind) {
        case VarKind::Numeric: return "numeric";
        case VarKind::Binary: return "binary";
        case VarKind::Nominal: return "nominal";
        case VarKind::Ordinal: return "ordinal";
    }
    return "?";
}

const char* to_string(Role role) {
    switch (role) {
        case Role::Id: return "id";
        case Role::Cluster: return "cluster";
        case Role::BaseWeight: return "base_weight";
        case Role::Invariant: return "invariant";
        case Role::Covariate: return "covariate";
        case Role::Outcome: return "outcome";
    }
    return "?";
}

VarKind parse_kind(const std::string& s) {
    if (s == "numeric") return VarKind::Numeric;
    if (s == "binary") return VarKind::Binary;
    if (s == "nominal") return VarKind::Nominal;
    if (s == "ordinal") return VarKind::Ordinal;
    throw ConfigError("unknown variable kind '" + s + "' (numeric, binary, nominal, ordinal)");
}

Role parse_role(const std::string& s) {
    if (s == "id") return Role::Id;
    if (s == "cluster") return Role::Cluster;
    if (s == "base_weight") return Role::BaseWeight;
    if (s == "invariant" || s == "Z") return Role::Invariant;
    if (s == "covariate" || s == "X") return Role::Covariate;
    if (s == "outcome" || s == "Y") return Role::Outcome;
    throw ConfigError("unknown variable role '" + s + "' (id, cluster, base_weight, invariant, covariate, outcome)");
}

// ---------------------------------------------------------------------------
// Schema

void Schema::validate() const {
    std::set<std::string> names;
    std::map<Role, int> role_count;
    for (const auto& v : variables) {
        if (v.name.empty()) throw ConfigError("schema: variable with empty name");
        if (!names.insert(v.name).second) throw ConfigError("schema: duplicate variable '" + v.name + "'");
        ++role_count[v.role];
        if (is_categorical(v.kind)) {
            if (v.levels.empty()) throw ConfigError("schema: variable '" + v.name + "' has no levels");
            std::set<std::string> lv(v.levels.begin(), v.levels.end());
            if (lv.size() != v.levels.size()) throw ConfigError("schema: variable '" + v.name + "' has duplicate levels");
            if (v.kind == VarKind::Binary && v.levels.size() != 2)
                throw ConfigError("schema: binary variable '" + v.name + "' needs exactly two levels");
        } else if (!v.levels.empty()) {
            throw ConfigError("schema: numeric variable '" + v.name + "' must not declare levels");
        }
        if (v.role == Role::BaseWeight && v.kind != VarKind::Numeric)
            throw ConfigError("schema: base weight '" + v.name + "' must be numeric");
        if (v.role == Role::Outcome && v.kind != VarKind::Numeric)
            throw ConfigError("schema: outcome '" + v.name + "' must be numeric");
    }
    auto exactly_one = [&](Role r) {
        if (role_count[r] != 1)
            throw ConfigError(std::string("schema: exactly one variable must have role ") + to_string(r) + " (found " +
                              std::to_string(role_count[r]) + ")");
    };
    exactly_one(Role::Id);
    exactly_one(Role::Cluster);
    exactly_one(Role::BaseWeight);
    exactly_one(Role::Outcome);
}

std::optional<std::size_t> Schema::find(const std::string& name) const {
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i].name == name) return i;
    return std::nullopt;
}

std::size_t Schema::index_of(const std::string& name) const {
    if (auto i = find(name)) return *i;
    throw ConfigError("unknown variable '" + name + "'");
}

std::vector<std::size_t> Schema::indices_with_role(Role role) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < variables.size(); ++i)
        if (variables[i].role == role) out.push_back(i);
    return out;
}

namespace {
std::size_t single_role(const Schema& s, Role r) {
    auto idx = s.indices_with_role(r);
    if (idx.size() != 1) throw ConfigError(std::string("schema: expected one variable with role ") + to_string(r));
    return idx.front();
}
}  // namespace

std::size_t Schema::outcome_index() const { return single_role(*this, Role::Outcome); }
std::size_t Schema::id_index() const { return single_role(*this, Role::Id); }
std::size_t Schema::cluster_index() const { return single_role(*this, Role::Cluster); }
std::size_t Schema::base_weight_index() const { return single_role(*this, Role::BaseWeight); }

Schema Schema::from_json(const nlohmann::json& j) {
    Schema s;
    try {
        if (j.contains("missing")) s.missing_tokens = j.at("missing").get<std::vector<std::string>>();
        if (j.contains("last_wave")) s.last_wave = j.at("last_wave").get<int>();
        for (const auto& jv : j.at("variables")) {
            VariableSpec v;
            v.name = jv.at("name").get<std::string>();
            v.role = parse_role(jv.at("role").get<std::string>());
            v.kind = jv.contains("kind") ? parse_kind(jv.at("kind").get<std::string>()) : VarKind::Numeric;
            if (jv.contains("levels")) v.levels = jv.at("levels").get<std::vector<std::string>>();
            if (v.kind == VarKind::Binary && v.levels.empty()) v.levels = {"0", "1"};
            if (v.role == Role::Id || v.role == Role::Cluster) {
                v.kind = VarKind::Numeric;
                v.levels.clear();
            }
            s.variables.push_back(std::move(v));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("schema: ") + e.what());
    }
    s.validate();
    return s;
}

Schema Schema::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open schema " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    try {
        return from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

nlohmann::json Schema::to_json() const {
    nlohmann::json j;
    j["missing"] = missing_tokens;
    if (last_wave >= 0) j["last_wave"] = last_wave;
    auto vars = nlohmann::json::array();
    for (const auto& v : variables) {
        nlohmann::json jv{{"name", v.name}, {"role", to_string(v.role)}};
        if (v.role != Role::Id && v.role != Role::Cluster) jv["kind"] = to_string(v.kind);
        if (!v.levels.empty()) jv["levels"] = v.levels;
        vars.push_back(std::move(jv));
    }
    j["variables"] = std::move(vars);
    return j;
}

// ---------------------------------------------------------------------------
// PanelDataset

PanelDataset::PanelDataset(Schema schema, std::size_t n_units, int last_wave)
    : schema_(std::move(schema)), last_wave_(last_wave) {
    schema_.validate();
    if (last_wave < 1) throw ConfigError("panel needs at least one follow-up wave (T >= 1)");
    schema_.last_wave = last_wave;
    outcome_ = schema_.outcome_index();
    ids_.resize(n_units);
    clusters_.resize(n_units);
    base_weights_.assign(n_units, 1.0);
    cells_.resize(schema_.variables.size());
    for (std::size_t v = 0; v < schema_.variables.size(); ++v) {
        const auto& spec = schema_.variables[v];
        if (spec.role == Role::Id || spec.role == Role::Cluster || spec.role == Role::BaseWeight) continue;
        cells_[v].assign(n_units * (spec.time_varying() ? n_waves() : 1), kMissing);
    }
}

std::vector<std::size_t> PanelDataset::cluster_codes() const {
    std::unordered_map<std::string, std::size_t> code;
    std::vector<std::size_t> out(n_units());
    for (std::size_t i = 0; i < n_units(); ++i) {
        auto [it, inserted] = code.emplace(clusters_[i], code.size());
        out[i] = it->second;
    }
    return out;
}

bool PanelDataset::is_monotone() const {
    for (std::size_t i = 0; i < n_units(); ++i) {
        bool dropped = false;
        for (int t = 0; t <= last_wave_; ++t) {
            bool r = responded(i, t);
            if (r && dropped) return false;
            if (!r) dropped = true;
        }
    }
    return true;
}

int PanelDataset::last_consecutive_wave(std::size_t unit) const {
    for (int t = 0; t <= last_wave_; ++t)
        if (!responded(unit, t)) return t - 1;
    return last_wave_;
}

std::size_t PanelDataset::respondents(int wave) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_units(); ++i) c += responded(i, wave);
    return c;
}

PanelDataset PanelDataset::subset(std::span<const std::size_t> units) const {
    PanelDataset out(schema_, units.size(), last_wave_);
    std::unordered_map<std::size_t, int> seen;
    for (std::size_t k = 0; k < units.size(); ++k) {
        std::size_t i = units[k];
        int copy = seen[i]++;
        out.ids_[k] = copy == 0 ? ids_[i] : ids_[i] + "#" + std::to_string(copy);
        out.clusters_[k] = clusters_[i];
        out.base_weights_[k] = base_weights_[i];
        for (std::size_t v = 0; v < cells_.size(); ++v) {
            if (cells_[v].empty()) continue;
            std::size_t w = schema_.variables[v].time_varying() ? n_waves() : 1;
            std::copy_n(cells_[v].begin() + i * w, w, out.cells_[v].begin() + k * w);
        }
    }
    return out;
}

bool PanelDataset::operator==(const PanelDataset& o) const {
    if (last_wave_ != o.last_wave_ || ids_ != o.ids_ || clusters_ != o.clusters_ || base_weights_ != o.base_weights_)
        return false;
    if (cells_.size() != o.cells_.size()) return false;
    for (std::size_t v = 0; v < cells_.size(); ++v) {
        const auto& a = cells_[v];
        const auto& b = o.cells_[v];
        if (a.size() != b.size()) return false;
        for (std::size_t k = 0; k < a.size(); ++k) {
            if (is_missing(a[k]) != is_missing(b[k])) return false;
            if (!is_missing(a[k]) && a[k] != b[k]) return false;
        }
    }
    return true;
}

std::string wide_column(const VariableSpec& var, int wave) {
    return var.time_varying() ? var.name + "_w" + std::to_string(wave) : var.name;
}

// ---------------------------------------------------------------------------
// CSV ingest

namespace {

int infer_last_wave(const std::vector<std::string>& header, const VariableSpec& outcome) {
    int last = -1;
    std::string prefix = outcome.name + "_w";
    for (const auto& h : header) {
        if (h.rfind(prefix, 0) != 0) continue;
        std::string_view rest(h);
        rest.remove_prefix(prefix.size());
        int t = 0;
        auto res = std::from_chars(rest.data(), rest.data() + rest.size(), t);
        if (res.ec == std::errc() && res.ptr == rest.data() + rest.size()) last = std::max(last, t);
    }
    return last;
}

double parse_cell(const std::string& raw, const VariableSpec& spec, const std::vector<std::string>& missing,
                  std::size_t row, const std::string& column) {
    if (raw.empty() || std::find(missing.begin(), missing.end(), raw) != missing.end()) return kMissing;
    if (is_categorical(spec.kind)) {
        auto it = std::find(spec.levels.begin(), spec.levels.end(), raw);
        if (it == spec.levels.end())
            throw DataError("row " + std::to_string(row) + ", column '" + column + "': unknown level '" + raw + "'");
        return static_cast<double>(it - spec.levels.begin());
    }
    double v = 0.0;
    const char* first = raw.data();
    const char* last = raw.data() + raw.size();
    auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last)
        throw DataError("row " + std::to_string(row) + ", column '" + column + "': cannot parse '" + raw + "' as number");
    return v;
}

}  // namespace

PanelDataset parse_panel(std::string_view text, const Schema& schema_in, Warnings* warnings) {
    schema_in.validate();
    csv::Table table = csv::parse(text);
    Schema schema = schema_in;
    const auto& outcome = schema.variables[schema.outcome_index()];
    int last_wave = schema.last_wave >= 0 ? schema.last_wave : infer_last_wave(table.header, outcome);
    if (last_wave < 1) throw DataError("no follow-up outcome columns '" + outcome.name + "_w<t>' with t >= 1");

    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t c = 0; c < table.header.size(); ++c) col[table.header[c]] = c;
    auto require = [&](const std::string& name) {
        auto it = col.find(name);
        if (it == col.end()) throw DataError("missing column '" + name + "'");
        return it->second;
    };

    // column index per (variable, wave)
    std::vector<std::vector<std::size_t>> where(schema.variables.size());
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        const auto& spec = schema.variables[v];
        int waves = spec.time_varying() ? last_wave + 1 : 1;
        for (int t = 0; t < waves; ++t) where[v].push_back(require(wide_column(spec, t)));
    }

    const std::size_t id_v = schema.id_index();
    const std::size_t cl_v = schema.cluster_index();
    const std::size_t bw_v = schema.base_weight_index();
    const std::size_t y_v = schema.outcome_index();

    std::vector<std::size_t> keep;
    std::unordered_set<std::string> ids;
    std::size_t dropped = 0;
    for (std::size_t r = 0; r < table.rows.size(); ++r) {
        const auto& row = table.rows[r];
        const std::string& id = row[where[id_v][0]];
        if (id.empty()) throw DataError("row " + std::to_string(r + 1) + ": empty unit id");
        if (!ids.insert(id).second) throw DataError("row " + std::to_string(r + 1) + ": duplicate unit id '" + id + "'");
        const std::string& y0 = row[where[y_v][0]];
        double y0v = parse_cell(y0, schema.variables[y_v], schema.missing_tokens, r + 1, table.header[where[y_v][0]]);
        if (is_missing(y0v)) {
            ++dropped;
            continue;
        }
        keep.push_back(r);
    }
    if (keep.empty()) throw DataError("no units with an observed baseline outcome");
    if (dropped > 0)
        warn(warnings, "excluded " + std::to_string(dropped) + " unit(s) missing the baseline outcome '" + outcome.name +
                           "_w0'");

    PanelDataset data(schema, keep.size(), last_wave);
    for (std::size_t k = 0; k < keep.size(); ++k) {
        std::size_t r = keep[k];
        const auto& row = table.rows[r];
        data.set_unit_id(k, row[where[id_v][0]]);
        const std::string& cl = row[where[cl_v][0]];
        if (cl.empty()) throw DataError("row " + std::to_string(r + 1) + ": empty cluster id");
        data.set_cluster(k, cl);
        const auto& bw_spec = schema.variables[bw_v];
        double bw = parse_cell(row[where[bw_v][0]], bw_spec, schema.missing_tokens, r + 1, bw_spec.name);
        if (is_missing(bw)) throw DataError("row " + std::to_string(r + 1) + ": missing base weight");
        if (bw <= 0.0)
            throw DataError("row " + std::to_string(r + 1) + ": base weight must be positive, got " + row[where[bw_v][0]]);
        data.set_base_weight(k, bw);
        for (std::size_t v = 0; v < schema.variables.size(); ++v) {
            const auto& spec = schema.variables[v];
            if (v == id_v || v == cl_v || v == bw_v) continue;
            for (std::size_t t = 0; t < where[v].size(); ++t) {
                std::size_t c = where[v][t];
                data.set_value(k, v, static_cast<int>(t),
                               parse_cell(row[c], spec, schema.missing_tokens, r + 1, table.header[c]));
            }
        }
    }
    return data;
}

PanelDataset load_panel(const std::string& csv_path, const Schema& schema, Warnings* warnings) {
    std::ifstream in(csv_path, std::ios::binary);
    if (!in) throw DataError("cannot open " + csv_path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
        return parse_panel(buf.str(), schema, warnings);
    } catch (const DataError& e) {
        throw DataError(csv_path + ": " + e.what());
    }
}

std::string panel_to_csv(const PanelDataset& data) {
    std::ostringstream out;
    const auto& schema = data.schema();
    std::vector<std::string> header;
    for (const auto& v : schema.variables) {
        int waves = v.time_varying() ? data.n_waves() : 1;
        for (int t = 0; t < waves; ++t) header.push_back(wide_column(v, t));
    }
    csv::write_row(out, header);
    const std::size_t id_v = schema.id_index();
    const std::size_t cl_v = schema.cluster_index();
    const std::size_t bw_v = schema.base_weight_index();
    std::vector<std::string> row;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        row.clear();
        for (std::size_t v = 0; v < schema.variables.size(); ++v) {
            const auto& spec = schema.variables[v];
            if (v == id_v) {
                row.push_back(data.unit_ids()[i]);
                continue;
            }
            if (v == cl_v) {
                row.push_back(data.cluster_ids()[i]);
                continue;
            }
            if (v == bw_v) {
                row.push_back(csv::format_double(data.base_weights()[i]));
                continue;
            }
            int waves = spec.time_varying() ? data.n_waves() : 1;
            for (int t = 0; t < waves; ++t) {
                double x = data.value(i, v, t);
                if (is_missing(x))
                    row.emplace_back();
                else if (is_categorical(spec.kind))
                    row.push_back(spec.levels.at(static_cast<std::size_t>(x)));
                else
                    row.push_back(csv::format_double(x));
            }
        }
        csv::write_row(out, row);
    }
    return out.str();
}

void write_panel(const PanelDataset& data, const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw DataError("cannot write " + csv_path);
    out << panel_to_csv(data);
}

// ---------------------------------------------------------------------------
// Patterns

PatternSummary summarize_patterns(const PanelDataset& data, const std::optional<std::string>& group_by) {
    const auto& schema = data.schema();
    std::optional<std::size_t> group;
    if (group_by) {
        group = schema.index_of(*group_by);
        const auto& g = schema.variables[*group];
        if (!(g.kind == VarKind::Nominal || g.kind == VarKind::Binary) || g.time_varying())
            throw ConfigError("group_by variable '" + *group_by + "' must be a time-invariant nominal variable");
    }

    PatternSummary s;
    std::map<std::string, std::size_t, std::greater<>> counts;
    const int T = data.last_wave();
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        std::string p(static_cast<std::size_t>(T + 1), '0');
        for (int t = 0; t <= T; ++t) p[t] = data.responded(i, t) ? '1' : '0';
        ++counts[p];
    }
    for (auto& [p, c] : counts) {
        s.patterns.push_back({p, c});
        for (std::size_t k = 1; k < p.size(); ++k)
            if (p[k] == '1' && p[k - 1] == '0') s.monotone = false;
    }

    const std::size_t n = data.n_units();
    for (int t = 1; t <= T; ++t) {
        WaveRate r;
        r.wave = t;
        r.base = n;
        r.nonrespondents = n - data.respondents(t);
        r.rate = static_cast<double>(r.nonrespondents) / static_cast<double>(n);
        s.wave_rates.push_back(r);
    }
    if (group) {
        const auto& g = schema.variables[*group];
        for (int t = 1; t <= T; ++t) {
            std::vector<std::size_t> base(g.levels.size(), 0), miss(g.levels.size(), 0);
            std::size_t base_na = 0, miss_na = 0;
            for (std::size_t i = 0; i < n; ++i) {
                double code = data.value(i, *group);
                bool nr = !data.responded(i, t);
                if (is_missing(code)) {
                    ++base_na;
                    miss_na += nr;
                    continue;
                }
                auto c = static_cast<std::size_t>(code);
                ++base[c];
                miss[c] += nr;
            }
            for (std::size_t l = 0; l < g.levels.size(); ++l) {
                WaveRate r{t, g.name, g.levels[l], base[l], miss[l],
                           base[l] ? static_cast<double>(miss[l]) / static_cast<double>(base[l]) : 0.0};
                s.group_rates.push_back(r);
            }
            if (base_na > 0)
                s.group_rates.push_back({t, g.name, "NA", base_na, miss_na,
                                         static_cast<double>(miss_na) / static_cast<double>(base_na)});
        }
    }

    const std::size_t y_v = schema.outcome_index();
    for (std::size_t v = 0; v < schema.variables.size(); ++v) {
        const auto& spec = schema.variables[v];
        if (v == y_v || !(spec.role == Role::Covariate || spec.role == Role::Invariant)) continue;
        int waves = spec.time_varying() ? T + 1 : 1;
        for (int t = 0; t < waves; ++t) {
            ItemRate ir{spec.name, t, 0, 0, 0.0};
            for (std::size_t i = 0; i < n; ++i) {
                if (!data.responded(i, t)) continue;
                ++ir.respondents;
                ir.missing += is_missing(data.value(i, v, t));
            }
            ir.rate = ir.respondents ? static_cast<double>(ir.missing) / static_cast<double>(ir.respondents) : 0.0;
            s.item_rates.push_back(ir);
        }
    }
    return s;
}

namespace {
std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path);
    return out;
}
}  // namespace

void write_pattern_csv(const PatternSummary& s, const std::string& path) {
    auto out = open_out(path);
    csv::write_row(out, {"pattern", "count", "monotone"});
    for (const auto& p : s.patterns) {
        bool mono = true;
        for (std::size_t k = 1; k < p.pattern.size(); ++k)
            if (p.pattern[k] == '1' && p.pattern[k - 1] == '0') mono = false;
        csv::write_row(out, {p.pattern, std::to_string(p.count), mono ? "1" : "0"});
    }
}

void write_rates_csv(const PatternSummary& s, const std::string& path) {
    auto out = open_out(path);
    csv::write_row(out, {"wave", "group", "level", "base", "nonrespondents", "rate"});
    auto emit = [&](const WaveRate& r) {
        csv::write_row(out, {std::to_string(r.wave), r.group.empty() ? "overall" : r.group, r.level,
                             std::to_string(r.base), std::to_string(r.nonrespondents), csv::format_double(r.rate)});
    };
    for (const auto& r : s.wave_rates) emit(r);
    for (const auto& r : s.group_rates) emit(r);
}

void write_item_rates_csv(const PatternSummary& s, const std::string& path) {
    auto out = open_out(path);
    csv::write_row(out, {"variable", "wave", "respondents", "missing", "rate"});
    for (const auto& r : s.item_rates)
        csv::write_row(out, {r.variable, std::to_string(r.wave), std::to_string(r.respondents),
                             std::to_string(r.missing), csv::format_double(r.rate)});
}

// ---------------------------------------------------------------------------
// Monotonize

PanelDataset monotonize(const PanelDataset& data, MonotonizeReport* report) {
    PanelDataset out = data;
    const auto& schema = data.schema();
    const int T = data.last_wave();
    std::vector<std::size_t> tv;
    for (std::size_t v = 0; v < schema.variables.size(); ++v)
        if (schema.variables[v].time_varying()) tv.push_back(v);

    MonotonizeReport rep;
    for (std::size_t i = 0; i < data.n_units(); ++i) {
        int gap = data.last_consecutive_wave(i) + 1;
        if (gap > T) continue;
        bool returns = false;
        for (int t = gap + 1; t <= T; ++t) returns = returns || data.responded(i, t);
        if (!returns) continue;
        MonotonizeReport::Entry e{data.unit_ids()[i], gap, {}};
        for (int t = gap + 1; t <= T; ++t) {
            bool any = false;
            for (std::size_t v : tv) {
                if (!is_missing(out.value(i, v, t))) {
                    out.set_value(i, v, t, kMissing);
                    ++rep.masked_cells;
                    any = true;
                }
            }
            if (any) e.masked_waves.push_back(t);
        }
        if (!e.masked_waves.empty()) rep.entries.push_back(std::move(e));
    }
    if (report) *report = std::move(rep);
    return out;
}

}  // namespace nrba
