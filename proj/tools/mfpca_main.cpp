// Command-line front end.  Five commands cover the pipeline: `preprocess`
// turns a raw signal into a band-power curve, `fit` estimates the two-level
// decomposition and scores from a long-format CSV, `simulate` measures score
// recovery on synthetic data, `bootstrap` builds a confidence interval for
// the within-subject variance share, and `regress` associates a binary
// outcome with subject-level scores.  Options resolve as command line over
// config file over defaults, and every command echoes its effective
// configuration into the JSON it writes.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mfpca/mfpca.hpp"

namespace {

using nlohmann::json;

// One command-line option mirrored by a config-file key.  Config values
// fill in whatever the command line left untouched, so flags always win.
struct Binding {
    std::string key;
    const CLI::App* owner;
    CLI::Option* opt;
    std::function<void(const json&)> set;
    std::function<json()> get;
};

struct Bindings {
    std::vector<Binding> items;

    template <typename T>
    void add(const CLI::App* owner, CLI::Option* opt, std::string key,
             T* var) {
        items.push_back(
            {std::move(key), owner, opt,
             [var](const json& v) { *var = v.get<T>(); },
             [var]() { return json(*var); }});
    }

    void apply(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in)
            throw mfpca::IoError("cannot open config '" + path.string() + "'");
        json cfg;
        try {
            in >> cfg;
        } catch (const json::exception& e) {
            throw mfpca::IoError("cannot parse config '" + path.string() +
                                 "': " + e.what());
        }
        if (!cfg.is_object())
            throw mfpca::InvalidArgument(
                "config must be a flat JSON object of flag names");
        for (const auto& [key, value] : cfg.items()) {
            bool known = false;
            for (Binding& b : items) {
                if (b.key != key) continue;
                known = true;
                if (b.opt->count() > 0) continue;  // flag given, flag wins
                try {
                    b.set(value);
                } catch (const json::exception&) {
                    throw mfpca::InvalidArgument("config key '" + key +
                                                 "' has the wrong type");
                }
            }
            if (!known)
                throw mfpca::InvalidArgument("unknown config key '" + key +
                                             "'");
        }
    }

    // Effective values of the global options plus the invoked command's.
    json echo(const CLI::App* app, const CLI::App* cmd) const {
        json out = json::object();
        for (const Binding& b : items)
            if (b.owner == app || b.owner == cmd) out[b.key] = b.get();
        return out;
    }
};

struct Globals {
    std::uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = ".";
    std::string config;
};

struct PreprocessArgs {
    std::string input;
    std::string raw_format = "text";
    double rate = 0.0;
    std::string band = "delta";
    double window_seconds = 30.0;
    bool hann = false;
    std::string subject = "1";
    std::string visit = "1";
};

struct FitArgs {
    std::string input;
    std::string t_range;
    std::string method = "pcp";
    std::string score_method = "blup";
    bool no_smooth = false;
    int n_basis = 0;
    int surface_n_basis = 0;
    int penalty_order = 2;
    std::string lambda_rule = "gcv";
    double fixed_lambda = 1.0;
    double p1 = 0.9;
    double p2 = 0.0;
    std::string selection = "either";
    int n1 = 0;
    int n2 = 0;
    double sigma1_sq = -1.0;
    double sigma2_sq = -1.0;
    int gibbs_iterations = 2000;
    int gibbs_burnin = 500;
    int gibbs_thin = 1;
    int gibbs_chains = 3;
    bool plots = false;
};

struct SimulateArgs {
    int case_id = 1;
    double sigma = 0.0;
    int reps = 10;
    std::string method = "pcf";
    int subjects = 200;
    int visits = 2;
    int points = 101;
    int n1 = 4;
    int n2 = 4;
    bool smooth = false;
    int n_basis = 0;
    int surface_n_basis = 0;
    int penalty_order = 2;
    std::string lambda_rule = "gcv";
    double fixed_lambda = 1.0;
};

struct BootstrapArgs {
    std::string fit_dir;
    std::string hypothesis;
    int n_boot = 200;
};

struct RegressArgs {
    std::string fit_dir;
    std::string covariates;
    std::string outcome;
    int n_scores = 0;  // 0 keeps every score column
    std::vector<std::string> adjust;
    bool standardize = false;
};

std::vector<double> to_vector(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

bool parse_full_double(const std::string& s, double* out) {
    const std::string t = mfpca::csv::trim(s);
    if (t.empty()) return false;
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size() || !std::isfinite(v)) return false;
    *out = v;
    return true;
}

std::optional<std::pair<double, double>> parse_t_range(const std::string& s) {
    if (s.empty()) return std::nullopt;
    const std::size_t colon = s.find(':');
    double lo = 0.0;
    double hi = 0.0;
    if (colon == std::string::npos ||
        !parse_full_double(s.substr(0, colon), &lo) ||
        !parse_full_double(s.substr(colon + 1), &hi))
        throw mfpca::InvalidArgument("t-range must look like lo:hi, got '" +
                                     s + "'");
    return std::make_pair(lo, hi);
}

mfpca::SmootherConfig smoother_config(int n_basis, int surface_n_basis,
                                      int penalty_order,
                                      const std::string& lambda_rule,
                                      double fixed_lambda) {
    mfpca::SmootherConfig cfg;
    cfg.n_basis = n_basis;
    cfg.surface_n_basis = surface_n_basis;
    cfg.penalty_order = penalty_order;
    cfg.lambda_rule = mfpca::detail::rule_from_name(lambda_rule);
    cfg.fixed_lambda = fixed_lambda;
    return cfg;
}

std::vector<double> read_signal_text(const std::filesystem::path& path) {
    const std::vector<std::string> lines = mfpca::csv::read_lines(path);
    std::vector<double> x;
    x.reserve(lines.size());
    for (std::size_t n = 0; n < lines.size(); ++n) {
        const std::string t = mfpca::csv::trim(lines[n]);
        if (t.empty()) continue;
        x.push_back(mfpca::csv::parse_double(t, n + 1));
    }
    return x;
}

std::vector<double> read_signal_f32le(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw mfpca::IoError("cannot open '" + path.string() + "'");
    const std::vector<unsigned char> bytes(
        (std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0)
        throw mfpca::IoError("'" + path.string() + "' holds " +
                             std::to_string(bytes.size()) +
                             " bytes; not a whole number of 32-bit floats");
    std::vector<double> x(bytes.size() / 4);
    for (std::size_t s = 0; s < x.size(); ++s) {
        const std::uint32_t word =
            static_cast<std::uint32_t>(bytes[4 * s]) |
            (static_cast<std::uint32_t>(bytes[4 * s + 1]) << 8) |
            (static_cast<std::uint32_t>(bytes[4 * s + 2]) << 16) |
            (static_cast<std::uint32_t>(bytes[4 * s + 3]) << 24);
        x[s] = static_cast<double>(std::bit_cast<float>(word));
    }
    return x;
}

void run_preprocess(const PreprocessArgs& a, const Globals&, const json& echo,
                    const std::filesystem::path& out) {
    if (a.input.empty())
        throw mfpca::InvalidArgument("preprocess needs --input");
    std::vector<double> signal;
    if (a.raw_format == "text")
        signal = read_signal_text(a.input);
    else if (a.raw_format == "f32le")
        signal = read_signal_f32le(a.input);
    else
        throw mfpca::InvalidArgument("raw-format must be text or f32le, got '" +
                                     a.raw_format + "'");
    if (signal.empty())
        throw mfpca::InsufficientData("'" + a.input + "' holds no samples");

    mfpca::BandSpec spec = mfpca::BandSpec::eeg_default(a.rate);
    spec.window_seconds = a.window_seconds;
    spec.hann_taper = a.hann;
    const mfpca::BandPowerSeries series =
        mfpca::band_power(signal, spec, a.band);

    std::string csv = "subject_id,visit_id,t,value\n";
    for (std::size_t w = 0; w < series.values.size(); ++w) {
        if (!series.values[w]) continue;
        csv += a.subject + "," + a.visit + "," +
               mfpca::fmt17(series.times_hours[w]) + "," +
               mfpca::fmt17(*series.values[w]) + "\n";
    }
    mfpca::atomic_write_text(out / "band_power.csv", csv);

    json report;
    report["command"] = "preprocess";
    report["input"] = a.input;
    report["output"] = "band_power.csv";
    report["band"] = series.band;
    report["window_samples"] = spec.window_samples();
    report["windows"] = series.window_count();
    report["undefined_windows"] = series.undefined_count();
    report["defined_windows"] =
        series.window_count() - series.undefined_count();
    report["dropped_samples"] = series.dropped_samples;
    report["times_unit"] = "hours";
    report["config"] = echo;
    mfpca::atomic_write_text(out / "preprocess_report.json",
                             report.dump(2) + "\n");
}

void write_plots(const mfpca::MfpcaFit& fit, const std::filesystem::path& out) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c",
                                    "#9467bd", "#8c564b"};
    const std::vector<double> t = to_vector(fit.grid->points());

    {
        mfpca::SvgChart chart("mean curves");
        chart.add_series(t, to_vector(fit.means.mu.values), "#000000", "overall",
                         2.0);
        for (int j = 0; j < fit.J; ++j)
            chart.add_series(
                t, to_vector(fit.means.visit_mean(j).values),
                palette[static_cast<std::size_t>(j) % 5],
                "visit " + std::to_string(j + 1));
        chart.write(out / "means.svg");
    }
    for (const mfpca::EigenSystem* sys : {&fit.level1, &fit.level2}) {
        if (sys->eigenfunctions.cols() == 0) continue;
        const std::string tag = "level" + std::to_string(sys->level);
        mfpca::SvgChart chart("eigenfunctions " + tag);
        const int K = std::min<int>(3, static_cast<int>(
                                           sys->eigenfunctions.cols()));
        for (int k = 0; k < K; ++k)
            chart.add_series(t, to_vector(sys->eigenfunctions.col(k)),
                             palette[static_cast<std::size_t>(k) % 5],
                             "phi_" + std::to_string(k + 1));
        chart.write(out / ("eigenfunctions_" + tag + ".svg"));
    }
    if (fit.level1.eigenvalues.size() > 0) {
        // The first component shown as a perturbation of the mean.
        const double amp = 2.0 * std::sqrt(fit.level1.eigenvalues(0));
        const Eigen::VectorXd up =
            fit.means.mu.values + amp * fit.level1.eigenfunctions.col(0);
        const Eigen::VectorXd down =
            fit.means.mu.values - amp * fit.level1.eigenfunctions.col(0);
        mfpca::SvgChart chart("mean plus and minus the first component");
        chart.add_series(t, to_vector(fit.means.mu.values), "#000000", "mean",
                         2.0);
        chart.add_series(t, to_vector(up), "#d62728", "+2 sd");
        chart.add_series(t, to_vector(down), "#1f77b4", "-2 sd");
        chart.write(out / "component_level1.svg");
    }
}

void run_fit(const FitArgs& a, const Globals& g, const json& echo,
             const std::filesystem::path& out) {
    if (a.input.empty()) throw mfpca::InvalidArgument("fit needs --input");
    mfpca::LoadOptions load_opt;
    load_opt.t_range = parse_t_range(a.t_range);
    const mfpca::MultilevelSample sample =
        mfpca::load_sample(a.input, load_opt);

    mfpca::MfpcaOptions opt;
    opt.smooth = !a.no_smooth;
    opt.smoother = smoother_config(a.n_basis, a.surface_n_basis,
                                   a.penalty_order, a.lambda_rule,
                                   a.fixed_lambda);
    opt.p1 = a.p1;
    opt.p2 = a.p2;
    if (a.selection == "either")
        opt.selection = mfpca::SelectionRule::either;
    else if (a.selection == "both")
        opt.selection = mfpca::SelectionRule::both;
    else
        throw mfpca::InvalidArgument("selection must be either or both, got '" +
                                     a.selection + "'");
    opt.force_n1 = a.n1;
    opt.force_n2 = a.n2;
    const mfpca::MfpcaFit fit = mfpca::fit_mfpca(sample, opt);

    mfpca::ScoreMethod method;
    if (a.score_method == "blup")
        method = mfpca::ScoreMethod::blup;
    else if (a.score_method == "gibbs")
        method = mfpca::ScoreMethod::gibbs;
    else
        throw mfpca::InvalidArgument(
            "score-method must be blup or gibbs, got '" + a.score_method +
            "'");
    mfpca::GibbsOptions gibbs;
    gibbs.iterations = a.gibbs_iterations;
    gibbs.burnin = a.gibbs_burnin;
    gibbs.thin = a.gibbs_thin;
    gibbs.chains = a.gibbs_chains;
    gibbs.seed = g.seed;

    mfpca::ScoreSet scores;
    json score_info;
    if (a.method == "pcp") {
        const Eigen::MatrixXd C = mfpca::compute_C(fit.level1, fit.level2);
        const mfpca::Projections proj =
            mfpca::project(sample, fit.means, fit.level1, fit.level2);
        mfpca::PcpOptions sopt;
        sopt.method = method;
        sopt.sigma1_sq = a.sigma1_sq;
        sopt.sigma2_sq = a.sigma2_sq;
        sopt.gibbs = gibbs;
        sopt.threads = g.threads;
        scores = mfpca::estimate_scores_pcp(
            proj, C, fit.level1.eigenvalues.head(fit.level1.n_selected),
            fit.level2.eigenvalues.head(fit.level2.n_selected), sopt);
        score_info["sigma1_sq"] = scores.sigma1_sq;
        score_info["sigma2_sq"] = scores.sigma2_sq;
    } else if (a.method == "pcf") {
        mfpca::PcfOptions sopt;
        sopt.method = method;
        sopt.gibbs = gibbs;
        sopt.threads = g.threads;
        scores = mfpca::estimate_scores_pcf(sample, fit.means, fit.level1,
                                            fit.level2, fit.sigma2, sopt);
        score_info["sigma_sq"] = scores.sigma_sq;
    } else {
        throw mfpca::InvalidArgument("method must be pcp or pcf, got '" +
                                     a.method + "'");
    }
    if (method == mfpca::ScoreMethod::gibbs) {
        score_info["max_rhat"] = scores.max_rhat;
        score_info["rhat_warning"] = scores.rhat_warning;
        if (scores.rhat_warning)
            std::cerr << "warning: split-chain diagnostic " << scores.max_rhat
                      << " exceeds 1.1; sampler draws may not have mixed\n";
    }

    json extra;
    extra["command"] = "fit";
    extra["input"] = a.input;
    extra["method"] = a.method;
    extra["score_method"] = a.score_method;
    extra["scores"] = score_info;
    extra["config"] = echo;
    mfpca::write_fit(fit, out, &scores, extra, sample.subject_labels(),
                     sample.visit_labels());
    if (a.plots) write_plots(fit, out);
}

void run_simulate(const SimulateArgs& a, const Globals& g, const json& echo,
                  const std::filesystem::path& out) {
    mfpca::SimExperiment exp;
    exp.config.case_id = a.case_id;
    exp.config.I = a.subjects;
    exp.config.J = a.visits;
    exp.config.T = a.points;
    exp.config.sigma = a.sigma;
    exp.config.seed = g.seed;
    exp.config.n1 = a.n1;
    exp.config.n2 = a.n2;
    exp.replicates = a.reps;
    if (a.method == "pcf")
        exp.model = mfpca::PcModel::pcf;
    else if (a.method == "pcp")
        exp.model = mfpca::PcModel::pcp;
    else
        throw mfpca::InvalidArgument("method must be pcf or pcp, got '" +
                                     a.method + "'");
    exp.smooth = a.smooth;
    exp.smoother = smoother_config(a.n_basis, a.surface_n_basis,
                                   a.penalty_order, a.lambda_rule,
                                   a.fixed_lambda);
    exp.threads = g.threads;
    const mfpca::SimExperimentResult result = mfpca::run_sim_experiment(exp);

    const int n1 = static_cast<int>(result.pooled.level1.size());
    const int n2 = static_cast<int>(result.pooled.level2.size());
    std::string columns;
    for (int k = 0; k < n1; ++k)
        columns += ",level1_c" + std::to_string(k + 1);
    for (int l = 0; l < n2; ++l)
        columns += ",level2_c" + std::to_string(l + 1);
    auto append_row = [&](std::string* s, const mfpca::RmseResult& r) {
        for (int k = 0; k < n1; ++k) *s += "," + mfpca::fmt17(r.level1(k));
        for (int l = 0; l < n2; ++l) *s += "," + mfpca::fmt17(r.level2(l));
        *s += '\n';
    };

    std::string reps_csv = "replicate" + columns + "\n";
    for (std::size_t r = 0; r < result.replicates.size(); ++r) {
        reps_csv += std::to_string(r + 1);
        append_row(&reps_csv, result.replicates[r]);
    }
    mfpca::atomic_write_text(out / "rmse_replicates.csv", reps_csv);

    std::string agg_csv = "statistic" + columns + "\n";
    agg_csv += "median";
    append_row(&agg_csv, result.median);
    agg_csv += "pooled";
    append_row(&agg_csv, result.pooled);
    mfpca::atomic_write_text(out / "rmse_aggregate.csv", agg_csv);

    json summary;
    summary["command"] = "simulate";
    summary["case"] = a.case_id;
    summary["sigma"] = a.sigma;
    summary["replicates"] = a.reps;
    summary["method"] = a.method;
    summary["seed"] = g.seed;
    summary["median_level1"] = to_vector(result.median.level1);
    summary["median_level2"] = to_vector(result.median.level2);
    summary["pooled_level1"] = to_vector(result.pooled.level1);
    summary["pooled_level2"] = to_vector(result.pooled.level2);
    summary["config"] = echo;
    mfpca::atomic_write_text(out / "summary.json", summary.dump(2) + "\n");
}

void run_bootstrap(const BootstrapArgs& a, const Globals& g, const json& echo,
                   const std::filesystem::path& out) {
    if (a.fit_dir.empty())
        throw mfpca::InvalidArgument("bootstrap needs --fit-dir");
    mfpca::BootstrapHypothesis hyp;
    if (a.hypothesis == "h0")
        hyp = mfpca::BootstrapHypothesis::h0;
    else if (a.hypothesis == "h1")
        hyp = mfpca::BootstrapHypothesis::h1;
    else
        throw mfpca::InvalidArgument("hypothesis must be h0 or h1, got '" +
                                     a.hypothesis + "'");
    const mfpca::MfpcaFit fit = mfpca::load_fit(a.fit_dir);
    const mfpca::BootstrapResult result =
        mfpca::bootstrap_rho(fit, hyp, a.n_boot, g.seed, g.threads);

    std::string csv = "index,rho_w\n";
    for (Eigen::Index b = 0; b < result.samples.size(); ++b)
        csv += std::to_string(b + 1) + "," + mfpca::fmt17(result.samples(b)) +
               "\n";
    mfpca::atomic_write_text(out / "bootstrap_samples.csv", csv);

    json summary;
    summary["command"] = "bootstrap";
    summary["fit_dir"] = a.fit_dir;
    summary["hypothesis"] = a.hypothesis;
    summary["n_boot"] = result.n_boot;
    summary["point"] = result.point;
    summary["lower"] = result.lower;
    summary["upper"] = result.upper;
    summary["seed"] = g.seed;
    summary["config"] = echo;
    mfpca::atomic_write_text(out / "bootstrap.json", summary.dump(2) + "\n");
}

double column_sd(const Eigen::VectorXd& v) {
    const double m = v.mean();
    return std::sqrt((v.array() - m).square().sum() /
                     static_cast<double>(v.size() - 1));
}

void run_regress(const RegressArgs& a, const Globals&, const json& echo,
                 const std::filesystem::path& out) {
    if (a.fit_dir.empty())
        throw mfpca::InvalidArgument("regress needs --fit-dir");
    if (a.covariates.empty())
        throw mfpca::InvalidArgument("regress needs --covariates");
    if (a.outcome.empty())
        throw mfpca::InvalidArgument("regress needs --outcome");

    const mfpca::MfpcaFit fit = mfpca::load_fit(a.fit_dir);
    const mfpca::ScoreTable table = mfpca::load_score_table(a.fit_dir);
    const mfpca::CovariateTable covs = mfpca::load_covariates(a.covariates);

    const int n = static_cast<int>(table.subjects.size());
    const int n_xi = static_cast<int>(table.xi.cols());
    const int K = a.n_scores > 0 ? a.n_scores : n_xi;
    if (K > n_xi)
        throw mfpca::InvalidArgument("fit provides " + std::to_string(n_xi) +
                                     " score columns; --scores asked for " +
                                     std::to_string(K));

    auto column_index = [&](const std::string& name) {
        const auto it =
            std::find(covs.columns.begin(), covs.columns.end(), name);
        if (it == covs.columns.end())
            throw mfpca::InvalidArgument("column '" + name + "' not in '" +
                                         a.covariates + "'");
        return static_cast<std::size_t>(it - covs.columns.begin());
    };
    const std::size_t outcome_col = column_index(a.outcome);

    Eigen::VectorXd y(n);
    std::vector<const std::vector<std::string>*> fields(
        static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const std::string& id = table.subjects[static_cast<std::size_t>(i)];
        const auto it = covs.rows.find(id);
        if (it == covs.rows.end())
            throw mfpca::InvalidArgument("subject '" + id +
                                         "' has no covariate row");
        fields[static_cast<std::size_t>(i)] = &it->second;
        if (!parse_full_double(it->second[outcome_col], &y(i)))
            throw mfpca::InvalidArgument("outcome for subject '" + id +
                                         "' is not numeric");
    }

    Eigen::MatrixXd design = table.xi.leftCols(K);
    std::vector<std::string> names;
    for (int k = 0; k < K; ++k) names.push_back("xi_" + std::to_string(k + 1));
    for (const std::string& name : a.adjust) {
        const std::size_t c = column_index(name);
        std::vector<std::string> raw(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i)
            raw[static_cast<std::size_t>(i)] =
                (*fields[static_cast<std::size_t>(i)])[c];
        Eigen::VectorXd numeric(n);
        bool all_numeric = true;
        for (int i = 0; i < n && all_numeric; ++i)
            all_numeric =
                parse_full_double(raw[static_cast<std::size_t>(i)], &numeric(i));
        if (all_numeric) {
            design.conservativeResize(Eigen::NoChange, design.cols() + 1);
            design.col(design.cols() - 1) = numeric;
            names.push_back(name);
        } else {
            const auto [block, block_names] =
                mfpca::encode_categorical(raw, name);
            design.conservativeResize(Eigen::NoChange,
                                      design.cols() + block.cols());
            design.rightCols(block.cols()) = block;
            names.insert(names.end(), block_names.begin(), block_names.end());
        }
    }

    mfpca::RegressionSpec spec;
    spec.outcome = y;
    spec.design = design;
    spec.names = names;
    const mfpca::RegressionFit rfit = mfpca::fit_logistic(spec);

    std::string csv =
        "term,estimate,se,z,p_value,odds_ratio,odds_lower,odds_upper,star";
    if (a.standardize) csv += ",standardized";
    csv += '\n';
    json terms = json::array();
    for (Eigen::Index r = 0; r < rfit.coef.size(); ++r) {
        const bool is_score = r >= 1 && r <= K;
        csv += rfit.names[static_cast<std::size_t>(r)] + "," +
               mfpca::fmt17(rfit.coef(r)) + "," + mfpca::fmt17(rfit.se(r)) +
               "," + mfpca::fmt17(rfit.zstat(r)) + "," +
               mfpca::fmt17(rfit.pvalue(r)) + "," +
               mfpca::fmt17(rfit.odds_ratio(r)) + "," +
               mfpca::fmt17(rfit.odds_lower(r)) + "," +
               mfpca::fmt17(rfit.odds_upper(r)) + "," +
               (rfit.significant[static_cast<std::size_t>(r)] ? "*" : "");
        json term;
        term["name"] = rfit.names[static_cast<std::size_t>(r)];
        term["estimate"] = rfit.coef(r);
        term["se"] = rfit.se(r);
        term["z"] = rfit.zstat(r);
        term["p_value"] = rfit.pvalue(r);
        term["odds_ratio"] = rfit.odds_ratio(r);
        term["odds_lower"] = rfit.odds_lower(r);
        term["odds_upper"] = rfit.odds_upper(r);
        term["significant"] =
            static_cast<bool>(rfit.significant[static_cast<std::size_t>(r)]);
        if (a.standardize) {
            if (is_score) {
                const double sd = column_sd(table.xi.col(r - 1));
                const double std_coef =
                    mfpca::standardize_coef(rfit.coef(r), sd);
                csv += "," + mfpca::fmt17(std_coef);
                term["standardized"] = std_coef;
            } else {
                csv += ",";
            }
        }
        csv += '\n';
        terms.push_back(term);
    }
    mfpca::atomic_write_text(out / "regression.csv", csv);

    const Eigen::VectorXd score_betas = rfit.coef.segment(1, K);
    const mfpca::Curve beta = mfpca::reconstruct_beta_curve(score_betas,
                                                            fit.level1);
    std::string beta_csv = "t,beta\n";
    for (int s = 0; s < beta.grid->size(); ++s)
        beta_csv += mfpca::fmt17(beta.grid->points()(s)) + "," +
                    mfpca::fmt17(beta.values(s)) + "\n";
    mfpca::atomic_write_text(out / "beta_function.csv", beta_csv);

    json summary;
    summary["command"] = "regress";
    summary["fit_dir"] = a.fit_dir;
    summary["covariates"] = a.covariates;
    summary["outcome"] = a.outcome;
    summary["n"] = n;
    summary["n_scores"] = K;
    summary["loglik"] = rfit.loglik;
    summary["iterations"] = rfit.iterations;
    summary["terms"] = terms;
    summary["config"] = echo;
    mfpca::atomic_write_text(out / "regression.json", summary.dump(2) + "\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multilevel functional principal component analysis"};
    app.require_subcommand(1);
    Globals g;
    Bindings bind;

    bind.add(&app, app.add_option("--seed", g.seed, "random seed"), "seed",
             &g.seed);
    bind.add(&app, app.add_option("--threads", g.threads, "worker threads"),
             "threads", &g.threads);
    bind.add(&app, app.add_option("--out-dir", g.out_dir, "output directory"),
             "out-dir", &g.out_dir);
    app.add_option("--config", g.config,
                   "flat JSON file of flag-name/value pairs");

    PreprocessArgs pre;
    CLI::App* cmd_pre = app.add_subcommand(
        "preprocess", "raw signal to windowed band-power curve");
    bind.add(cmd_pre, cmd_pre->add_option("--input", pre.input, "signal file"),
             "input", &pre.input);
    bind.add(cmd_pre,
             cmd_pre->add_option("--raw-format", pre.raw_format,
                                 "text or f32le"),
             "raw-format", &pre.raw_format);
    bind.add(cmd_pre,
             cmd_pre->add_option("--rate", pre.rate, "sampling rate in Hz"),
             "rate", &pre.rate);
    bind.add(cmd_pre, cmd_pre->add_option("--band", pre.band, "target band"),
             "band", &pre.band);
    bind.add(cmd_pre,
             cmd_pre->add_option("--window-seconds", pre.window_seconds,
                                 "window length"),
             "window-seconds", &pre.window_seconds);
    bind.add(cmd_pre,
             cmd_pre->add_flag("--hann", pre.hann, "taper each window"),
             "hann", &pre.hann);
    bind.add(cmd_pre,
             cmd_pre->add_option("--subject", pre.subject, "subject id"),
             "subject", &pre.subject);
    bind.add(cmd_pre, cmd_pre->add_option("--visit", pre.visit, "visit id"),
             "visit", &pre.visit);

    FitArgs fita;
    CLI::App* cmd_fit = app.add_subcommand(
        "fit", "two-level decomposition and scores from a sample CSV");
    bind.add(cmd_fit, cmd_fit->add_option("--input", fita.input, "sample CSV"),
             "input", &fita.input);
    bind.add(cmd_fit,
             cmd_fit->add_option("--t-range", fita.t_range,
                                 "rescale t from lo:hi onto [0,1]"),
             "t-range", &fita.t_range);
    bind.add(cmd_fit,
             cmd_fit->add_option("--method", fita.method, "pcp or pcf"),
             "method", &fita.method);
    bind.add(cmd_fit,
             cmd_fit->add_option("--score-method", fita.score_method,
                                 "blup or gibbs"),
             "score-method", &fita.score_method);
    bind.add(cmd_fit,
             cmd_fit->add_flag("--no-smooth", fita.no_smooth,
                               "skip mean and covariance smoothing"),
             "no-smooth", &fita.no_smooth);
    bind.add(cmd_fit,
             cmd_fit->add_option("--n-basis", fita.n_basis,
                                 "curve smoother basis size (0 = auto)"),
             "n-basis", &fita.n_basis);
    bind.add(cmd_fit,
             cmd_fit->add_option("--surface-n-basis", fita.surface_n_basis,
                                 "surface smoother basis size (0 = auto)"),
             "surface-n-basis", &fita.surface_n_basis);
    bind.add(cmd_fit,
             cmd_fit->add_option("--penalty-order", fita.penalty_order,
                                 "difference penalty order"),
             "penalty-order", &fita.penalty_order);
    bind.add(cmd_fit,
             cmd_fit->add_option("--lambda-rule", fita.lambda_rule,
                                 "gcv, reml, or fixed"),
             "lambda-rule", &fita.lambda_rule);
    bind.add(cmd_fit,
             cmd_fit->add_option("--fixed-lambda", fita.fixed_lambda,
                                 "penalty weight for --lambda-rule fixed"),
             "fixed-lambda", &fita.fixed_lambda);
    bind.add(cmd_fit,
             cmd_fit->add_option("--p1", fita.p1,
                                 "explained-share threshold"),
             "p1", &fita.p1);
    bind.add(cmd_fit,
             cmd_fit->add_option("--p2", fita.p2,
                                 "negligible-share threshold (0 = 1/T)"),
             "p2", &fita.p2);
    bind.add(cmd_fit,
             cmd_fit->add_option("--selection", fita.selection,
                                 "either or both"),
             "selection", &fita.selection);
    bind.add(cmd_fit,
             cmd_fit->add_option("--n1", fita.n1,
                                 "force level-1 component count"),
             "n1", &fita.n1);
    bind.add(cmd_fit,
             cmd_fit->add_option("--n2", fita.n2,
                                 "force level-2 component count"),
             "n2", &fita.n2);
    bind.add(cmd_fit,
             cmd_fit->add_option("--sigma1-sq", fita.sigma1_sq,
                                 "level-1 residual variance (<0 = estimate)"),
             "sigma1-sq", &fita.sigma1_sq);
    bind.add(cmd_fit,
             cmd_fit->add_option("--sigma2-sq", fita.sigma2_sq,
                                 "level-2 residual variance (<0 = estimate)"),
             "sigma2-sq", &fita.sigma2_sq);
    bind.add(cmd_fit,
             cmd_fit->add_option("--gibbs-iterations", fita.gibbs_iterations,
                                 "sampler iterations per chain"),
             "gibbs-iterations", &fita.gibbs_iterations);
    bind.add(cmd_fit,
             cmd_fit->add_option("--gibbs-burnin", fita.gibbs_burnin,
                                 "discarded sampler iterations"),
             "gibbs-burnin", &fita.gibbs_burnin);
    bind.add(cmd_fit,
             cmd_fit->add_option("--gibbs-thin", fita.gibbs_thin,
                                 "keep every k-th draw"),
             "gibbs-thin", &fita.gibbs_thin);
    bind.add(cmd_fit,
             cmd_fit->add_option("--gibbs-chains", fita.gibbs_chains,
                                 "independent chains"),
             "gibbs-chains", &fita.gibbs_chains);
    bind.add(cmd_fit,
             cmd_fit->add_flag("--plots", fita.plots, "write SVG charts"),
             "plots", &fita.plots);

    SimulateArgs sima;
    CLI::App* cmd_sim = app.add_subcommand(
        "simulate", "score recovery on synthetic two-level data");
    bind.add(cmd_sim, cmd_sim->add_option("--case", sima.case_id, "1 or 2"),
             "case", &sima.case_id);
    bind.add(cmd_sim,
             cmd_sim->add_option("--sigma", sima.sigma,
                                 "noise standard deviation"),
             "sigma", &sima.sigma);
    bind.add(cmd_sim, cmd_sim->add_option("--reps", sima.reps, "replicates"),
             "reps", &sima.reps);
    bind.add(cmd_sim,
             cmd_sim->add_option("--method", sima.method, "pcf or pcp"),
             "method", &sima.method);
    bind.add(cmd_sim,
             cmd_sim->add_option("--subjects", sima.subjects, "subjects"),
             "subjects", &sima.subjects);
    bind.add(cmd_sim, cmd_sim->add_option("--visits", sima.visits, "visits"),
             "visits", &sima.visits);
    bind.add(cmd_sim,
             cmd_sim->add_option("--points", sima.points, "grid points"),
             "points", &sima.points);
    bind.add(cmd_sim,
             cmd_sim->add_option("--n1", sima.n1,
                                 "level-1 components to score"),
             "n1", &sima.n1);
    bind.add(cmd_sim,
             cmd_sim->add_option("--n2", sima.n2,
                                 "level-2 components to score"),
             "n2", &sima.n2);
    bind.add(cmd_sim,
             cmd_sim->add_flag("--smooth", sima.smooth,
                               "smooth means and covariances"),
             "smooth", &sima.smooth);
    bind.add(cmd_sim,
             cmd_sim->add_option("--n-basis", sima.n_basis,
                                 "curve smoother basis size (0 = auto)"),
             "n-basis", &sima.n_basis);
    bind.add(cmd_sim,
             cmd_sim->add_option("--surface-n-basis", sima.surface_n_basis,
                                 "surface smoother basis size (0 = auto)"),
             "surface-n-basis", &sima.surface_n_basis);
    bind.add(cmd_sim,
             cmd_sim->add_option("--penalty-order", sima.penalty_order,
                                 "difference penalty order"),
             "penalty-order", &sima.penalty_order);
    bind.add(cmd_sim,
             cmd_sim->add_option("--lambda-rule", sima.lambda_rule,
                                 "gcv, reml, or fixed"),
             "lambda-rule", &sima.lambda_rule);
    bind.add(cmd_sim,
             cmd_sim->add_option("--fixed-lambda", sima.fixed_lambda,
                                 "penalty weight for --lambda-rule fixed"),
             "fixed-lambda", &sima.fixed_lambda);

    BootstrapArgs boota;
    CLI::App* cmd_boot = app.add_subcommand(
        "bootstrap", "confidence interval for the within-subject share");
    bind.add(cmd_boot,
             cmd_boot->add_option("--fit-dir", boota.fit_dir,
                                  "directory written by fit"),
             "fit-dir", &boota.fit_dir);
    bind.add(cmd_boot,
             cmd_boot->add_option("--hypothesis", boota.hypothesis,
                                  "h0 or h1"),
             "hypothesis", &boota.hypothesis);
    bind.add(cmd_boot,
             cmd_boot->add_option("--n-boot,--n", boota.n_boot,
                                  "bootstrap replicates"),
             "n-boot", &boota.n_boot);

    RegressArgs rega;
    CLI::App* cmd_reg = app.add_subcommand(
        "regress", "logistic regression of an outcome on subject scores");
    bind.add(cmd_reg,
             cmd_reg->add_option("--fit-dir", rega.fit_dir,
                                 "directory written by fit"),
             "fit-dir", &rega.fit_dir);
    bind.add(cmd_reg,
             cmd_reg->add_option("--covariates", rega.covariates,
                                 "per-subject covariate CSV"),
             "covariates", &rega.covariates);
    bind.add(cmd_reg,
             cmd_reg->add_option("--outcome", rega.outcome,
                                 "binary outcome column"),
             "outcome", &rega.outcome);
    bind.add(cmd_reg,
             cmd_reg->add_option("--scores", rega.n_scores,
                                 "score columns to use (0 = all)"),
             "scores", &rega.n_scores);
    bind.add(cmd_reg,
             cmd_reg->add_option("--adjust", rega.adjust,
                                 "adjustment columns")
                 ->delimiter(','),
             "adjust", &rega.adjust);
    bind.add(cmd_reg,
             cmd_reg->add_flag("--standardize", rega.standardize,
                               "also report coefficient times score sd"),
             "standardize", &rega.standardize);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (!g.config.empty()) bind.apply(g.config);
        CLI::App* invoked = app.get_subcommands().front();
        const json echo = bind.echo(&app, invoked);
        const std::filesystem::path out(g.out_dir);
        std::filesystem::create_directories(out);
        if (invoked == cmd_pre)
            run_preprocess(pre, g, echo, out);
        else if (invoked == cmd_fit)
            run_fit(fita, g, echo, out);
        else if (invoked == cmd_sim)
            run_simulate(sima, g, echo, out);
        else if (invoked == cmd_boot)
            run_bootstrap(boota, g, echo, out);
        else
            run_regress(rega, g, echo, out);
        return 0;
    } catch (const mfpca::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
