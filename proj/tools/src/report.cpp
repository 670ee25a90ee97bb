#include "report.hpp"

#include <cstdio>
#include <map>
#include <sstream>

#include "nrba/csv.hpp"

namespace nrba::cli {

namespace fs = std::filesystem;

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    std::string s = buf;
    if (s == "-0.00") s = "0.00";
    return s;
}

namespace {

struct Cell {
    double est = 0, se = 0;
};

/// label -> (key -> cell), labels in file order.
struct Grid {
    std::vector<std::string> labels;
    std::map<std::string, std::map<std::string, Cell>> cells;
};

Grid read_grid(const fs::path& path) {
    Grid g;
    auto t = csv::read_file(path.string());
    for (const auto& r : t.rows) {
        const std::string& label = r.at(0);
        if (!g.cells.count(label)) g.labels.push_back(label);
        g.cells[label][r.at(1)] = {std::stod(r.at(2)), std::stod(r.at(3))};
    }
    return g;
}

std::string est_se(const Cell& c) { return fixed2(c.est) + " (" + fixed2(c.se) + ")"; }

int max_wave(const Grid& g) {
    int T = -1;
    for (const auto& [label, m] : g.cells)
        for (const auto& [key, c] : m)
            if (key.rfind("mean:w", 0) == 0 && key.find(':', 6) == std::string::npos) T = std::max(T, std::stoi(key.substr(6)));
    return T;
}

}  // namespace

std::string render_report(const ReportInputs& in) {
    std::ostringstream md;
    md << "# Nonresponse bias analysis\n\n";
    md << "Seed: " << in.seed << "\n\n";
    md << "Methods: ";
    for (std::size_t i = 0; i < in.methods.size(); ++i) md << (i ? ", " : "") << to_string(in.methods[i]);
    md << "\n\nEstimates are rounded to 2 decimals; the CSV files keep full precision. Cells show est (se).\n\n";

    if (fs::exists(in.output / "response_rates.csv")) {
        auto t = csv::read_file((in.output / "response_rates.csv").string());
        md << "## Cumulative unit nonresponse\n\n| Wave | Base | Nonrespondents | Rate % |\n|---:|---:|---:|---:|\n";
        for (const auto& r : t.rows)
            if (r.at(1) == "overall")
                md << "| " << r.at(0) << " | " << r.at(3) << " | " << r.at(4) << " | " << fixed2(100.0 * std::stod(r.at(5)))
                   << " |\n";
        md << "\n";
    }

    Grid est = read_grid(in.output / "estimates.csv");
    const int T = max_wave(est);
    bool any_mean = false;
    for (const auto& l : est.labels)
        for (int t = 0; t <= T; ++t) any_mean = any_mean || est.cells[l].count("mean:w" + std::to_string(t));
    if (any_mean) {
        md << "## Outcome means by wave\n\n| Method |";
        for (int t = 0; t <= T; ++t) md << " Wave " << t << " |";
        md << "\n|---|";
        for (int t = 0; t <= T; ++t) md << "---:|";
        md << "\n";
        for (const auto& l : est.labels) {
            if (!est.cells[l].count("mean:w0") && !est.cells[l].count("mean:w1")) continue;
            md << "| " << l << " |";
            for (int t = 0; t <= T; ++t) {
                auto it = est.cells[l].find("mean:w" + std::to_string(t));
                md << " " << (it == est.cells[l].end() ? "" : est_se(it->second)) << " |";
            }
            md << "\n";
        }
        md << "\n";
    }

    std::vector<std::string> model_labels, terms;
    for (const auto& l : est.labels)
        for (const auto& [key, c] : est.cells[l])
            if (key.rfind("coef:", 0) == 0) {
                if (std::find(model_labels.begin(), model_labels.end(), l) == model_labels.end()) model_labels.push_back(l);
            }
    if (!model_labels.empty()) {
        auto t = csv::read_file((in.output / "estimates.csv").string());
        for (const auto& r : t.rows)
            if (r.at(1).rfind("coef:", 0) == 0) {
                std::string term = r.at(1).substr(5);
                if (std::find(terms.begin(), terms.end(), term) == terms.end()) terms.push_back(term);
            }
        md << "## Analysis model coefficients\n\n| Term |";
        for (const auto& l : model_labels) md << " " << l << " |";
        md << "\n|---|";
        for (std::size_t i = 0; i < model_labels.size(); ++i) md << "---:|";
        md << "\n";
        for (const auto& term : terms) {
            md << "| " << term << " |";
            for (const auto& l : model_labels) {
                auto it = est.cells[l].find("coef:" + term);
                md << " " << (it == est.cells[l].end() ? "" : est_se(it->second)) << " |";
            }
            md << "\n";
        }
        md << "\nw-GEE standard errors are sandwich-only and approximate; the cluster bootstrap is the supported "
              "variance for weighted analyses.\n\n";
    }

    if (in.weights && fs::exists(in.output / "weight_diagnostics.csv")) {
        auto t = csv::read_file((in.output / "weight_diagnostics.csv").string());
        md << "## Weight diagnostics\n\n| Weight | n | Mean | SD | Min | Max | Loss(w) % | Design effect |\n"
              "|---|---:|---:|---:|---:|---:|---:|---:|\n";
        for (const auto& r : t.rows) {
            // weight,min,q1,median,q3,max,mean,sd,loss,design_effect,n
            md << "| " << r.at(0) << " | " << r.at(10) << " | " << fixed2(std::stod(r.at(6))) << " | "
               << fixed2(std::stod(r.at(7))) << " | " << fixed2(std::stod(r.at(1))) << " | " << fixed2(std::stod(r.at(5)))
               << " | " << fixed2(100.0 * std::stod(r.at(8))) << " | " << fixed2(std::stod(r.at(9))) << " |\n";
        }
        md << "\n";
    }

    if (in.sensitivity && fs::exists(in.output / "sensitivity.csv")) {
        Grid s = read_grid(in.output / "sensitivity.csv");
        const int TS = max_wave(s);
        md << "## Offset sensitivity analysis\n\nPooled means after shifting imputed values at the dropout wave by "
              "k residual SDs.\n\n| k |";
        for (int t = 1; t <= TS; ++t) md << " Wave " << t << " |";
        md << "\n|---:|";
        for (int t = 1; t <= TS; ++t) md << "---:|";
        md << "\n";
        for (std::size_t i = 0; i < s.labels.size() && i < in.sensitivity_k.size(); ++i) {
            md << "| " << csv::format_double(in.sensitivity_k[i]) << " |";
            for (int t = 1; t <= TS; ++t) {
                auto it = s.cells[s.labels[i]].find("mean:w" + std::to_string(t));
                md << " " << (it == s.cells[s.labels[i]].end() ? "" : est_se(it->second)) << " |";
            }
            md << "\n";
        }
        md << "\n";
    }

    if (fs::exists(in.output / "bootstrap.csv")) {
        auto t = csv::read_file((in.output / "bootstrap.csv").string());
        md << "## Cluster bootstrap standard errors\n\n| Method | Estimand | SE | Replicates |\n|---|---|---:|---:|\n";
        for (const auto& r : t.rows)
            md << "| " << r.at(0) << " | " << r.at(1) << " | " << fixed2(std::stod(r.at(2))) << " | " << r.at(3) << " |\n";
        md << "\n";
    }

    md << "## Plot data\n\n- `subgroup_means.csv`: means by method, wave and subgroup\n"
          "- `coefficients.csv`: model terms by method with wave and race parsed from the term\n\n";

    md << "## Warnings\n\n";
    if (in.warnings.empty()) md << "None.\n";
    for (const auto& w : in.warnings) md << "- " << w << "\n";
    return md.str();
}

}  // namespace nrba::cli
