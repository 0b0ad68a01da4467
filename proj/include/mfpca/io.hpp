#pragma once

// File formats.  Samples travel as long-format CSV
// (subject_id,visit_id,t,value); fitted models are written as a directory of
// CSV files plus a summary.json carrying scalars and settings.  All numbers
// are printed with 17 significant digits so a written model reloads to the
// exact same doubles.  Writes go to a temporary file first and are renamed
// into place, so readers never see partial output.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mfpca/decomposition.hpp"
#include "mfpca/errors.hpp"
#include "mfpca/grid.hpp"
#include "mfpca/scores.hpp"

namespace mfpca {

inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline void atomic_write_text(const std::filesystem::path& path,
                              const std::string& content) {
    const std::filesystem::path tmp =
        path.string() + ".tmp-" + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out)
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        out << content;
        if (!out)
            throw IoError("failed writing '" + tmp.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw IoError("cannot rename '" + tmp.string() + "' to '" +
                      path.string() + "': " + ec.message());
}

namespace csv {

inline std::string trim(const std::string& s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

inline double parse_double(const std::string& field, std::size_t line_no) {
    const std::string t = trim(field);
    if (t.empty())
        throw IoError("empty numeric field on line " + std::to_string(line_no));
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v))
        throw IoError("cannot parse number '" + t + "' on line " +
                      std::to_string(line_no));
    return v;
}

// Lines of a text file with 1-based numbering; trailing blank lines skipped.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    return lines;
}

}  // namespace csv

struct LoadOptions {
    // Optional affine rescaling of the time axis onto [0, 1].
    std::optional<std::pair<double, double>> t_range;
};

// Long-format sample reader.  Subjects and visits are ordered numerically
// when every id parses as a number, lexicographically otherwise.  Every
// observed curve must be sampled on exactly the same grid.
inline MultilevelSample load_sample(const std::filesystem::path& path,
                                    const LoadOptions& opt = {}) {
    const std::vector<std::string> lines = csv::read_lines(path);
    if (lines.empty())
        throw IoError("'" + path.string() + "' is empty");
    {
        const std::vector<std::string> header = csv::split(lines[0]);
        const std::vector<std::string> want = {"subject_id", "visit_id", "t",
                                               "value"};
        if (header.size() != want.size() ||
            !std::equal(header.begin(), header.end(), want.begin()))
            throw IoError("expected header 'subject_id,visit_id,t,value' in '" +
                          path.string() + "'");
    }
    if (lines.size() < 2)
        throw InsufficientData("'" + path.string() + "' has no data rows");

    double lo = 0.0;
    double hi = 1.0;
    if (opt.t_range) {
        lo = opt.t_range->first;
        hi = opt.t_range->second;
        if (!(hi > lo))
            throw InvalidArgument("t-range must satisfy lo < hi");
    }

    struct Row {
        double t;
        double value;
        std::size_t line_no;
    };
    std::map<std::pair<std::string, std::string>, std::vector<Row>> curves;
    std::map<std::pair<std::string, std::string>, std::map<double, std::size_t>>
        seen_t;
    std::vector<std::string> subject_order;
    std::vector<std::string> visit_order;

    for (std::size_t n = 1; n < lines.size(); ++n) {
        if (csv::trim(lines[n]).empty()) continue;
        const std::vector<std::string> f = csv::split(lines[n]);
        const std::size_t line_no = n + 1;
        if (f.size() != 4)
            throw IoError("expected 4 fields on line " +
                          std::to_string(line_no) + ", got " +
                          std::to_string(f.size()));
        if (f[0].empty() || f[1].empty())
            throw IoError("empty id on line " + std::to_string(line_no));
        const double t_raw = csv::parse_double(f[2], line_no);
        const double value = csv::parse_double(f[3], line_no);
        const double t = opt.t_range ? (t_raw - lo) / (hi - lo) : t_raw;
        if (t < -1e-9 || t > 1.0 + 1e-9)
            throw RangeError("t=" + csv::trim(f[2]) + " on line " +
                             std::to_string(line_no) +
                             " falls outside [0, 1] after rescaling");
        const auto key = std::make_pair(f[0], f[1]);
        auto [it, fresh] = seen_t[key].try_emplace(t, line_no);
        if (!fresh)
            throw DuplicateRow("line " + std::to_string(line_no) +
                               " repeats (subject " + f[0] + ", visit " + f[1] +
                               ", t " + csv::trim(f[2]) + ") from line " +
                               std::to_string(it->second));
        if (curves.find(key) == curves.end()) {
            if (std::find(subject_order.begin(), subject_order.end(), f[0]) ==
                subject_order.end())
                subject_order.push_back(f[0]);
            if (std::find(visit_order.begin(), visit_order.end(), f[1]) ==
                visit_order.end())
                visit_order.push_back(f[1]);
        }
        curves[key].push_back({t, value, line_no});
    }
    if (curves.empty())
        throw InsufficientData("'" + path.string() + "' has no data rows");

    auto order_ids = [](std::vector<std::string>* ids) {
        bool numeric = true;
        for (const std::string& s : *ids) {
            char* end = nullptr;
            std::strtod(s.c_str(), &end);
            if (end != s.c_str() + s.size()) {
                numeric = false;
                break;
            }
        }
        std::sort(ids->begin(), ids->end(),
                  [numeric](const std::string& a, const std::string& b) {
                      if (!numeric) return a < b;
                      return std::strtod(a.c_str(), nullptr) <
                             std::strtod(b.c_str(), nullptr);
                  });
    };
    order_ids(&subject_order);
    order_ids(&visit_order);

    // The common grid comes from the first curve; everyone must match it.
    for (auto& [key, rows] : curves)
        std::sort(rows.begin(), rows.end(),
                  [](const Row& a, const Row& b) { return a.t < b.t; });
    const std::vector<Row>& first = curves.begin()->second;
    Eigen::VectorXd points(static_cast<Eigen::Index>(first.size()));
    for (std::size_t s = 0; s < first.size(); ++s)
        points(static_cast<Eigen::Index>(s)) = first[s].t;
    GridPtr grid = SampledGrid::from_points(points);

    const int I = static_cast<int>(subject_order.size());
    const int J = static_cast<int>(visit_order.size());
    Eigen::MatrixXd values =
        Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(I) * J, grid->size());
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(I) * J, 0);
    for (const auto& [key, rows] : curves) {
        const int i = static_cast<int>(
            std::find(subject_order.begin(), subject_order.end(), key.first) -
            subject_order.begin());
        const int j = static_cast<int>(
            std::find(visit_order.begin(), visit_order.end(), key.second) -
            visit_order.begin());
        if (rows.size() != static_cast<std::size_t>(grid->size()))
            throw GridMismatch("subject " + key.first + " visit " + key.second +
                               " has " + std::to_string(rows.size()) +
                               " points; expected " +
                               std::to_string(grid->size()));
        for (std::size_t s = 0; s < rows.size(); ++s) {
            if (rows[s].t != grid->points()(static_cast<Eigen::Index>(s)))
                throw GridMismatch("subject " + key.first + " visit " +
                                   key.second + " samples t=" +
                                   fmt17(rows[s].t) + " (line " +
                                   std::to_string(rows[s].line_no) +
                                   ") not on the common grid");
            values(static_cast<Eigen::Index>(i) * J + j,
                   static_cast<Eigen::Index>(s)) = rows[s].value;
        }
        mask[static_cast<std::size_t>(i) * J + j] = 1;
    }
    return MultilevelSample(grid, I, J, std::move(values), std::move(mask),
                            subject_order, visit_order);
}

inline void save_sample(const MultilevelSample& sample,
                        const std::filesystem::path& path) {
    std::string out = "subject_id,visit_id,t,value\n";
    for (int i = 0; i < sample.n_subjects(); ++i)
        for (int j = 0; j < sample.n_visits(); ++j) {
            if (!sample.present(i, j)) continue;
            for (int s = 0; s < sample.grid()->size(); ++s) {
                out += sample.subject_label(i);
                out += ',';
                out += sample.visit_label(j);
                out += ',';
                out += fmt17(sample.grid()->points()(s));
                out += ',';
                out += fmt17(sample.values()(sample.row_index(i, j), s));
                out += '\n';
            }
        }
    atomic_write_text(path, out);
}

namespace detail {

inline const char* rule_name(LambdaRule rule) {
    switch (rule) {
        case LambdaRule::fixed: return "fixed";
        case LambdaRule::gcv: return "gcv";
        default: return "reml";
    }
}

inline LambdaRule rule_from_name(const std::string& name) {
    if (name == "fixed") return LambdaRule::fixed;
    if (name == "gcv") return LambdaRule::gcv;
    if (name == "reml") return LambdaRule::reml;
    throw InvalidArgument("unknown lambda rule '" + name + "'");
}

inline void write_eigen_level(const std::filesystem::path& dir,
                              const EigenSystem& sys, int level) {
    const std::string tag = "level" + std::to_string(level);
    {
        std::string out = "index,eigenvalue,proportion,cumulative\n";
        const Eigen::VectorXd prop = sys.proportions();
        const Eigen::VectorXd cum = sys.cumulative();
        for (Eigen::Index k = 0; k < sys.eigenvalues.size(); ++k)
            out += std::to_string(k + 1) + "," + fmt17(sys.eigenvalues(k)) +
                   "," + fmt17(prop(k)) + "," + fmt17(cum(k)) + "\n";
        atomic_write_text(dir / ("eigenvalues_" + tag + ".csv"), out);
    }
    {
        std::string out = "t";
        for (Eigen::Index k = 0; k < sys.eigenfunctions.cols(); ++k)
            out += ",phi_" + std::to_string(k + 1);
        out += '\n';
        for (int s = 0; s < sys.grid->size(); ++s) {
            out += fmt17(sys.grid->points()(s));
            for (Eigen::Index k = 0; k < sys.eigenfunctions.cols(); ++k)
                out += "," + fmt17(sys.eigenfunctions(s, k));
            out += '\n';
        }
        atomic_write_text(dir / ("eigenfunctions_" + tag + ".csv"), out);
    }
}

}  // namespace detail

// Writes the model directory: means, eigenvalues, eigenfunctions, optional
// scores, and summary.json.  `extra` is merged into the summary (command
// lines, configuration echo, timing) without affecting reloadability.
inline void write_fit(const MfpcaFit& fit, const std::filesystem::path& dir,
                      const ScoreSet* scores = nullptr,
                      const nlohmann::json& extra = nlohmann::json::object(),
                      const std::vector<std::string>& subject_labels = {},
                      const std::vector<std::string>& visit_labels = {}) {
    std::filesystem::create_directories(dir);
    auto subject_of = [&](int i) {
        return subject_labels.empty() ? std::to_string(i + 1)
                                      : subject_labels[static_cast<std::size_t>(i)];
    };
    auto visit_of = [&](int j) {
        return visit_labels.empty() ? std::to_string(j + 1)
                                    : visit_labels[static_cast<std::size_t>(j)];
    };

    {
        std::string out = "t,mu";
        for (int j = 0; j < fit.J; ++j) out += ",eta_" + std::to_string(j + 1);
        out += '\n';
        for (int s = 0; s < fit.grid->size(); ++s) {
            out += fmt17(fit.grid->points()(s)) + "," +
                   fmt17(fit.means.mu.values(s));
            for (int j = 0; j < fit.J; ++j)
                out += "," + fmt17(fit.means.eta[static_cast<std::size_t>(j)]
                                       .values(s));
            out += '\n';
        }
        atomic_write_text(dir / "means.csv", out);
    }
    detail::write_eigen_level(dir, fit.level1, 1);
    detail::write_eigen_level(dir, fit.level2, 2);

    if (scores) {
        {
            std::string out = "subject_id";
            for (Eigen::Index k = 0; k < scores->xi.cols(); ++k)
                out += ",xi_" + std::to_string(k + 1);
            for (Eigen::Index k = 0; k < scores->xi.cols(); ++k)
                out += ",sd_" + std::to_string(k + 1);
            out += '\n';
            for (Eigen::Index i = 0; i < scores->xi.rows(); ++i) {
                out += subject_of(static_cast<int>(i));
                for (Eigen::Index k = 0; k < scores->xi.cols(); ++k)
                    out += "," + fmt17(scores->xi(i, k));
                for (Eigen::Index k = 0; k < scores->xi.cols(); ++k)
                    out += "," + fmt17(scores->xi_sd(i, k));
                out += '\n';
            }
            atomic_write_text(dir / "scores_level1.csv", out);
        }
        {
            std::string out = "subject_id,visit_id";
            for (Eigen::Index l = 0; l < scores->zeta.cols(); ++l)
                out += ",zeta_" + std::to_string(l + 1);
            for (Eigen::Index l = 0; l < scores->zeta.cols(); ++l)
                out += ",sd_" + std::to_string(l + 1);
            out += '\n';
            for (int i = 0; i < scores->I; ++i)
                for (int j = 0; j < scores->J; ++j) {
                    if (!scores->mask[static_cast<std::size_t>(i) * scores->J +
                                      j])
                        continue;
                    const Eigen::Index row =
                        static_cast<Eigen::Index>(i) * scores->J + j;
                    out += subject_of(i) + "," + visit_of(j);
                    for (Eigen::Index l = 0; l < scores->zeta.cols(); ++l)
                        out += "," + fmt17(scores->zeta(row, l));
                    for (Eigen::Index l = 0; l < scores->zeta.cols(); ++l)
                        out += "," + fmt17(scores->zeta_sd(row, l));
                    out += '\n';
                }
            atomic_write_text(dir / "scores_level2.csv", out);
        }
    }

    nlohmann::json summary;
    summary["I"] = fit.I;
    summary["J"] = fit.J;
    summary["T"] = fit.grid->size();
    summary["grid"] = std::vector<double>(
        fit.grid->points().data(), fit.grid->points().data() + fit.grid->size());
    nlohmann::json absent = nlohmann::json::array();
    for (int i = 0; i < fit.I; ++i)
        for (int j = 0; j < fit.J; ++j)
            if (!fit.mask[static_cast<std::size_t>(i) * fit.J + j])
                absent.push_back({i, j});
    summary["absent"] = absent;
    {
        nlohmann::json subs = nlohmann::json::array();
        for (int i = 0; i < fit.I; ++i) subs.push_back(subject_of(i));
        nlohmann::json vis = nlohmann::json::array();
        for (int j = 0; j < fit.J; ++j) vis.push_back(visit_of(j));
        summary["subject_ids"] = subs;
        summary["visit_ids"] = vis;
    }
    summary["sigma2"] = fit.sigma2;
    summary["sigma2_clamped"] = fit.sigma2_clamped;
    summary["rho_w"] = fit.rho_w;
    summary["level1"] = {{"n_components", fit.level1.eigenvalues.size()},
                         {"n_selected", fit.level1.n_selected},
                         {"eigenvalue_sum", fit.level1.eigenvalues.sum()}};
    summary["level2"] = {{"n_components", fit.level2.eigenvalues.size()},
                         {"n_selected", fit.level2.n_selected},
                         {"eigenvalue_sum", fit.level2.eigenvalues.sum()}};
    summary["options"] = {
        {"smooth", fit.options.smooth},
        {"n_basis", fit.options.smoother.n_basis},
        {"surface_n_basis", fit.options.smoother.surface_n_basis},
        {"penalty_order", fit.options.smoother.penalty_order},
        {"lambda_rule", detail::rule_name(fit.options.smoother.lambda_rule)},
        {"fixed_lambda", fit.options.smoother.fixed_lambda},
        {"p1", fit.options.p1},
        {"p2", fit.options.p2},
        {"selection_rule",
         fit.options.selection == SelectionRule::either ? "either" : "both"},
        {"force_n1", fit.options.force_n1},
        {"force_n2", fit.options.force_n2}};
    for (const auto& [key, value] : extra.items()) summary[key] = value;
    atomic_write_text(dir / "summary.json", summary.dump(2) + "\n");
}

namespace detail {

// Numeric table reader: header plus rows of doubles.
inline std::pair<std::vector<std::string>, Eigen::MatrixXd> read_table(
    const std::filesystem::path& path) {
    const std::vector<std::string> lines = csv::read_lines(path);
    if (lines.empty()) throw IoError("'" + path.string() + "' is empty");
    const std::vector<std::string> header = csv::split(lines[0]);
    Eigen::MatrixXd data(static_cast<Eigen::Index>(lines.size()) - 1,
                         static_cast<Eigen::Index>(header.size()));
    for (std::size_t n = 1; n < lines.size(); ++n) {
        const std::vector<std::string> f = csv::split(lines[n]);
        if (f.size() != header.size())
            throw IoError("line " + std::to_string(n + 1) + " of '" +
                          path.string() + "' has " + std::to_string(f.size()) +
                          " fields; expected " + std::to_string(header.size()));
        for (std::size_t c = 0; c < f.size(); ++c)
            data(static_cast<Eigen::Index>(n) - 1,
                 static_cast<Eigen::Index>(c)) = csv::parse_double(f[c], n + 1);
    }
    return {header, data};
}

inline EigenSystem read_eigen_level(const std::filesystem::path& dir,
                                    GridPtr grid, int level, int n_selected) {
    const std::string tag = "level" + std::to_string(level);
    EigenSystem sys;
    sys.level = level;
    sys.grid = grid;
    const auto [vh, vals] =
        read_table(dir / ("eigenvalues_" + tag + ".csv"));
    sys.eigenvalues = vals.col(1);
    const auto [fh, funcs] =
        read_table(dir / ("eigenfunctions_" + tag + ".csv"));
    if (funcs.rows() != grid->size() ||
        funcs.cols() != sys.eigenvalues.size() + 1)
        throw ShapeError("eigenfunctions_" + tag +
                         ".csv does not match the stored eigenvalues");
    sys.eigenfunctions = funcs.rightCols(funcs.cols() - 1);
    sys.n_selected = n_selected;
    return sys;
}

}  // namespace detail

// Reads back a model directory written by write_fit.
inline MfpcaFit load_fit(const std::filesystem::path& dir) {
    std::ifstream in(dir / "summary.json");
    if (!in)
        throw IoError("cannot open '" + (dir / "summary.json").string() + "'");
    nlohmann::json summary;
    try {
        in >> summary;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse '" + (dir / "summary.json").string() +
                      "': " + e.what());
    }

    MfpcaFit fit;
    fit.I = summary.at("I").get<int>();
    fit.J = summary.at("J").get<int>();
    const std::vector<double> grid_points =
        summary.at("grid").get<std::vector<double>>();
    Eigen::VectorXd pts(static_cast<Eigen::Index>(grid_points.size()));
    for (std::size_t s = 0; s < grid_points.size(); ++s)
        pts(static_cast<Eigen::Index>(s)) = grid_points[s];
    fit.grid = SampledGrid::from_points(std::move(pts));

    fit.mask.assign(static_cast<std::size_t>(fit.I) * fit.J, 1);
    for (const auto& pair : summary.at("absent"))
        fit.mask[static_cast<std::size_t>(pair.at(0).get<int>()) * fit.J +
                 pair.at(1).get<int>()] = 0;

    const auto [mh, mcols] = detail::read_table(dir / "means.csv");
    if (mcols.rows() != fit.grid->size() || mcols.cols() != fit.J + 2)
        throw ShapeError("means.csv does not match the stored grid");
    fit.means.mu = Curve(fit.grid, mcols.col(1));
    for (int j = 0; j < fit.J; ++j)
        fit.means.eta.emplace_back(fit.grid, mcols.col(2 + j));

    fit.level1 = detail::read_eigen_level(
        dir, fit.grid, 1, summary.at("level1").at("n_selected").get<int>());
    fit.level2 = detail::read_eigen_level(
        dir, fit.grid, 2, summary.at("level2").at("n_selected").get<int>());
    fit.sigma2 = summary.at("sigma2").get<double>();
    fit.sigma2_clamped = summary.at("sigma2_clamped").get<bool>();
    fit.rho_w = summary.at("rho_w").get<double>();

    const nlohmann::json& opt = summary.at("options");
    fit.options.smooth = opt.at("smooth").get<bool>();
    fit.options.smoother.n_basis = opt.at("n_basis").get<int>();
    fit.options.smoother.surface_n_basis = opt.at("surface_n_basis").get<int>();
    fit.options.smoother.penalty_order = opt.at("penalty_order").get<int>();
    fit.options.smoother.lambda_rule =
        detail::rule_from_name(opt.at("lambda_rule").get<std::string>());
    fit.options.smoother.fixed_lambda = opt.at("fixed_lambda").get<double>();
    fit.options.p1 = opt.at("p1").get<double>();
    fit.options.p2 = opt.at("p2").get<double>();
    fit.options.selection = opt.at("selection_rule").get<std::string>() == "both"
                                ? SelectionRule::both
                                : SelectionRule::either;
    fit.options.force_n1 = opt.at("force_n1").get<int>();
    fit.options.force_n2 = opt.at("force_n2").get<int>();
    return fit;
}

// Subject-level score table for regression: labels plus the xi columns.
struct ScoreTable {
    std::vector<std::string> subjects;
    Eigen::MatrixXd xi;
};

inline ScoreTable load_score_table(const std::filesystem::path& dir) {
    const std::vector<std::string> lines =
        csv::read_lines(dir / "scores_level1.csv");
    if (lines.size() < 2)
        throw IoError("'" + (dir / "scores_level1.csv").string() +
                      "' has no rows");
    const std::vector<std::string> header = csv::split(lines[0]);
    int n_xi = 0;
    for (const std::string& h : header)
        if (h.rfind("xi_", 0) == 0) ++n_xi;
    ScoreTable table;
    table.xi.resize(static_cast<Eigen::Index>(lines.size()) - 1, n_xi);
    for (std::size_t n = 1; n < lines.size(); ++n) {
        const std::vector<std::string> f = csv::split(lines[n]);
        if (f.size() != header.size())
            throw IoError("scores_level1.csv line " + std::to_string(n + 1) +
                          " is malformed");
        table.subjects.push_back(f[0]);
        for (int k = 0; k < n_xi; ++k)
            table.xi(static_cast<Eigen::Index>(n) - 1, k) =
                csv::parse_double(f[static_cast<std::size_t>(k) + 1], n + 1);
    }
    return table;
}

// Covariate table keyed by subject id; numeric columns parse as numbers,
// anything else is treated as categorical.
struct CovariateTable {
    std::vector<std::string> columns;
    std::map<std::string, std::vector<std::string>> rows;  // subject -> fields
};

inline CovariateTable load_covariates(const std::filesystem::path& path) {
    const std::vector<std::string> lines = csv::read_lines(path);
    if (lines.empty()) throw IoError("'" + path.string() + "' is empty");
    const std::vector<std::string> header = csv::split(lines[0]);
    if (header.empty() || header[0] != "subject_id")
        throw IoError("covariate file must start with a subject_id column");
    CovariateTable table;
    table.columns.assign(header.begin() + 1, header.end());
    for (std::size_t n = 1; n < lines.size(); ++n) {
        if (csv::trim(lines[n]).empty()) continue;
        const std::vector<std::string> f = csv::split(lines[n]);
        if (f.size() != header.size())
            throw IoError("line " + std::to_string(n + 1) + " of '" +
                          path.string() + "' has " + std::to_string(f.size()) +
                          " fields; expected " + std::to_string(header.size()));
        if (table.rows.count(f[0]))
            throw DuplicateRow("subject " + f[0] + " appears twice in '" +
                               path.string() + "' (line " +
                               std::to_string(n + 1) + ")");
        table.rows[f[0]] = std::vector<std::string>(f.begin() + 1, f.end());
    }
    return table;
}

}  // namespace mfpca
