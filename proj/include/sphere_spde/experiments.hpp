#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "sphere_spde/analysis.hpp"
#include "sphere_spde/bounds.hpp"
#include "sphere_spde/config.hpp"
#include "sphere_spde/io.hpp"
#include "sphere_spde/moments.hpp"
#include "sphere_spde/noise.hpp"
#include "sphere_spde/solver_em.hpp"
#include "sphere_spde/solver_exact.hpp"

// The experiment runners behind the command-line subcommands. Each takes a
// parsed Config plus run options, writes its artifacts below out_dir and
// returns what it wrote. Every artifact is a deterministic function of the
// effective configuration (seed included) and does not depend on the thread
// count.

namespace sphere_spde {

struct RunOptions {
    std::filesystem::path out_dir = ".";
    std::optional<std::uint64_t> seed; ///< overrides the config's `seed`
    int threads = 1;
    bool allow_expensive = false;
    std::ostream* log = nullptr;
};

struct RunReport {
    std::vector<std::filesystem::path> files;
    std::vector<ErrorCurve> curves;
    std::string config_hash;
};

/// Monte Carlo runs above this many normal draws need --allow-expensive.
inline constexpr double expensive_draws = 2e9;

/// Rough single-thread throughput used for the printed time estimate.
inline constexpr double draws_per_second = 3e7;

namespace detail {

inline void say(const RunOptions& opt, const std::string& line)
{
    if (opt.log != nullptr) {
        *opt.log << line << '\n';
    }
}

inline std::uint64_t resolve_seed(Config& cfg, const RunOptions& opt)
{
    if (opt.seed) {
        cfg.set("seed", std::to_string(*opt.seed));
    }
    return cfg.get_u64("seed", 1);
}

inline AngularPowerSpectrum spectrum_from(Config& cfg, double alpha)
{
    return AngularPowerSpectrum(alpha, cfg.get_double("C", 1.0), cfg.get_double("A0", 0.0));
}

inline int checked_int(Config& cfg, const std::string& key, std::int64_t fallback, std::int64_t lo,
                       std::int64_t hi)
{
    const std::int64_t v = cfg.get_int(key, fallback);
    if (v < lo || v > hi) {
        throw ConfigError(cfg.where(key) + "'" + key + "' must lie in [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
    }
    return static_cast<int>(v);
}

inline double positive(Config& cfg, const std::string& key, double fallback)
{
    const double v = cfg.get_double(key, fallback);
    if (!(v > 0.0) || !std::isfinite(v)) {
        throw ConfigError(cfg.where(key) + "'" + key + "' must be positive");
    }
    return v;
}

/// Deterministic initial condition (its mean; the field carries no randomness).
///   x0 = zero
///   x0 = mode    one real coefficient at (x0_l, x0_m) of size x0_amplitude,
///                divided by (1 + l(l+1))^{eta/2} when x0_scale_eta is true
///                so that its H^eta norm is x0_amplitude
///   x0 = smooth  zonal profile (1 + l(l+1))^{-(eta+1)/2}, l = 0..x0_degree
inline CoefficientField initial_condition(Config& cfg, double eta, int default_degree)
{
    const std::string kind = cfg.get_choice("x0", "zero", {"zero", "mode", "smooth"});
    if (kind == "zero") {
        return CoefficientField(0);
    }
    if (kind == "mode") {
        const int l = checked_int(cfg, "x0_l", 2, 0, 1 << 14);
        const int m = checked_int(cfg, "x0_m", 0, 0, l);
        double amplitude = cfg.get_double("x0_amplitude", 1.0);
        if (cfg.get_bool("x0_scale_eta", false)) {
            amplitude /= std::pow(1.0 + decay_rate(l), eta / 2.0);
        }
        CoefficientField f(l);
        f.at(l, m, Part::real) = amplitude;
        return f;
    }
    const int degree = checked_int(cfg, "x0_degree", default_degree, 0, 1 << 14);
    CoefficientField f(degree);
    for (int l = 0; l <= degree; ++l) {
        f.at(l, 0) = std::pow(1.0 + decay_rate(l), -(eta + 1.0) / 2.0);
    }
    return f;
}

inline CoefficientField squared(CoefficientField f)
{
    for (double& v : f.values()) {
        v *= v;
    }
    return f;
}

inline void fit_and_report(ErrorCurve& curve, const RunOptions& opt)
{
    try {
        curve.fit();
        std::ostringstream line;
        line << curve.label << ": slope " << io::format_short(curve.slope);
        if (!curve.excluded.empty()) {
            line << " (" << curve.excluded.size() << " zero/nonfinite point(s) left out of the fit)";
        }
        say(opt, line.str());
    } catch (const DegenerateInput& e) {
        say(opt, curve.label + ": no slope (" + e.what() + ")");
    }
}

inline void write_curves(RunReport& report, const RunOptions& opt, const std::string& stem,
                         std::vector<ErrorCurve> curves, const std::vector<std::vector<double>>& guides,
                         const std::string& title, const std::string& x_label, const std::string& y_label)
{
    std::vector<io::PlotSeries> all;
    std::vector<double> all_guides;
    for (std::size_t i = 0; i < curves.size(); ++i) {
        ErrorCurve& c = curves[i];
        fit_and_report(c, opt);
        const std::string name = stem + "_" + c.label;
        const auto csv = opt.out_dir / (name + ".csv");
        io::write_curve_csv(csv, c);
        const io::PlotSeries series{c.label, c.abscissae, c.errors};
        io::PlotOptions po{title + " (" + c.label + ")", x_label, y_label, guides[i]};
        const auto svg = opt.out_dir / (name + ".svg");
        io::write_text(svg, io::render_loglog_svg(std::span<const io::PlotSeries>(&series, 1), po));
        report.files.push_back(csv);
        report.files.push_back(svg);
        all.push_back(series);
        for (double g : guides[i]) {
            if (std::find(all_guides.begin(), all_guides.end(), g) == all_guides.end()) {
                all_guides.push_back(g);
            }
        }
    }
    if (curves.size() > 1) {
        const auto svg = opt.out_dir / (stem + ".svg");
        io::write_text(svg, io::render_loglog_svg(all, {title, x_label, y_label, all_guides}));
        report.files.push_back(svg);
    }
    for (auto& c : curves) {
        report.curves.push_back(std::move(c));
    }
}

/// Prints the cost of a Monte Carlo run and refuses it when large unless allowed.
inline void gate_monte_carlo(const RunOptions& opt, double draws, double bytes, bool always_expensive,
                             const std::string& what)
{
    std::ostringstream line;
    line << what << ": about " << io::format_short(draws) << " normal draws, "
         << io::format_short(bytes / (1024.0 * 1024.0)) << " MiB working memory, ~"
         << io::format_short(std::ceil(draws / draws_per_second / std::max(1, opt.threads))) << " s";
    say(opt, line.str());
    if ((always_expensive || draws > expensive_draws) && !opt.allow_expensive) {
        throw ResourceError(line.str() + "; rerun with --allow-expensive to proceed");
    }
}

inline std::string param_label(const std::string& name, double v)
{
    return name + "_" + io::format_short(v);
}

} // namespace detail

// ---------------------------------------------------------------------------
// spectral

/// Spectral truncation sweep kappa = 2^j against kappa_ref.
/// Keys: error = strong|expectation|second_moment, mode = exact|mc, alpha (list),
/// eta (list; one curve per eta for expectation), T, kappa_ref, j_min, j_max,
/// C, A0, samples, seed, x0 options.
inline RunReport run_spectral(Config& cfg, const RunOptions& opt)
{
    RunReport report;
    const std::string error = cfg.get_choice("error", "strong", {"strong", "expectation", "second_moment"});
    const std::string mode = cfg.get_choice("mode", "exact", {"exact", "mc"});
    const bool strong = error == "strong";
    const double T = detail::positive(cfg, "T", strong ? 1.0 : 0.01);
    const int kappa_ref = detail::checked_int(cfg, "kappa_ref", 1024, 1, 1 << 16);
    const int j_min = detail::checked_int(cfg, "j_min", 0, 0, 30);
    const int j_max = detail::checked_int(cfg, "j_max", 9, j_min, 30);
    if ((1 << j_max) > kappa_ref) {
        throw ConfigError(cfg.where("j_max") + "2^j_max exceeds kappa_ref");
    }
    const std::vector<double> alphas =
        cfg.get_double_list("alpha", strong ? std::vector<double>{1, 2, 3, 4, 5} : std::vector<double>{0.5, 1, 2, 3});
    const std::vector<double> etas = cfg.get_double_list("eta", {0.5, 1.0, 2.0});
    if (alphas.empty() || etas.empty()) {
        throw ConfigError(cfg.source() + ": alpha and eta lists must not be empty");
    }
    const std::size_t samples = mode == "mc" ? static_cast<std::size_t>(detail::checked_int(cfg, "samples", 10, 2, 1 << 30)) : 0;
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    const double C = cfg.get_double("C", 1.0);
    const double A0 = cfg.get_double("A0", 0.0);

    if (mode == "mc" && error == "expectation") {
        throw ConfigError(cfg.where("mode") +
                          "the expectation error is deterministic; use mode = exact");
    }

    const bool per_eta = error == "expectation";
    const std::vector<double>& params = per_eta ? etas : alphas;
    // The initial condition is built once per curve parameter; for noise
    // sweeps it uses the first eta.
    std::vector<CoefficientField> x0s;
    for (const double p : params) {
        x0s.push_back(detail::initial_condition(cfg, per_eta ? p : etas.front(), kappa_ref));
    }
    cfg.reject_unused();
    report.config_hash = cfg.hash();

    if (mode == "mc") {
        const double draws = static_cast<double>(samples) * static_cast<double>(channel_count(kappa_ref)) *
                             static_cast<double>(j_max - j_min + 1) * static_cast<double>(params.size());
        detail::gate_monte_carlo(opt, draws, 8.0 * static_cast<double>(channel_count(kappa_ref) + samples),
                                 kappa_ref >= 1024, "spectral Monte Carlo");
    }

    std::vector<ErrorCurve> curves;
    std::vector<std::vector<double>> guides;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double p = params[i];
        const AngularPowerSpectrum spec(per_eta ? 2.0 : p, C, A0);
        const CoefficientField& x0 = x0s[i];
        const CoefficientField msq = detail::squared(x0);
        ErrorCurve curve;
        curve.label = detail::param_label(per_eta ? "eta" : "alpha", p);
        curve.sweep_param = "kappa";
        for (int j = j_min; j <= j_max; ++j) {
            const int kappa = 1 << j;
            if (mode == "exact") {
                double e = 0.0;
                if (error == "strong") {
                    e = spectral_strong_error_exact(msq, spec, kappa, kappa_ref, T);
                } else if (error == "second_moment") {
                    e = spectral_second_moment_error(msq, spec, kappa, kappa_ref, T);
                } else {
                    e = spectral_expectation_error(x0.resized(std::min(x0.truncation(), kappa_ref)), kappa, T);
                }
                curve.push(kappa, e);
            } else {
                const McEstimate est =
                    mc_spectral_strong_error(x0, spec, kappa, kappa_ref, T, samples, seed, opt.threads);
                if (strong) {
                    curve.push(kappa, est.value, est.stderr_value);
                } else {
                    curve.push(kappa, est.mean_square, est.mean_square_stderr);
                }
            }
        }
        curves.push_back(std::move(curve));
        if (error == "strong") {
            guides.push_back({-p / 2.0});
        } else if (error == "second_moment") {
            guides.push_back({-p});
        } else {
            guides.push_back({});
        }
    }
    const std::string y_label = error == "strong"          ? "strong error"
                                : error == "second_moment" ? "second moment error"
                                                           : "expectation error";
    detail::write_curves(report, opt, "spectral_" + error + "_" + mode, std::move(curves), guides,
                         "spectral " + error + " (" + mode + ")", "kappa", y_label);
    return report;
}

// ---------------------------------------------------------------------------
// em

/// Euler-Maruyama sweeps against the spectral solution of the same truncation.
/// Keys: scheme (list of forward|backward), error, mode, alpha (list), eta
/// (list), sweep = coupled|fixed_kappa, m_min, m_max (coupled: h = T 4^{-m},
/// kappa = 2^m), kappa, level_min, level_max (fixed_kappa: h = T 2^{-level}),
/// T, C_c, C, A0, samples, reference = em|exact, reference_level,
/// reference_kappa, seed, x0 options.
inline RunReport run_em(Config& cfg, const RunOptions& opt)
{
    RunReport report;
    const std::vector<std::string> schemes = cfg.get_string_list("scheme", {"forward", "backward"});
    const std::string error = cfg.get_choice("error", "strong", {"strong", "expectation", "second_moment"});
    const std::string mode = cfg.get_choice("mode", "exact", {"exact", "mc"});
    const bool expectation = error == "expectation";
    const std::string sweep =
        cfg.get_choice("sweep", expectation ? "fixed_kappa" : "coupled", {"coupled", "fixed_kappa"});
    const double T = detail::positive(cfg, "T", expectation ? 0.01 : 1.0);
    const double cc = detail::positive(cfg, "C_c", 2.0);
    const std::vector<double> alphas = cfg.get_double_list(
        "alpha", error == "second_moment" ? std::vector<double>{0.5, 1, 2, 3} : std::vector<double>{1, 2, 3, 4, 5});
    const std::vector<double> etas = cfg.get_double_list("eta", {0.5, 1.0, 2.0});
    if (schemes.empty() || alphas.empty() || etas.empty()) {
        throw ConfigError(cfg.source() + ": scheme, alpha and eta lists must not be empty");
    }
    for (const auto& s : schemes) {
        if (s != "forward" && s != "backward") {
            throw ConfigError(cfg.where("scheme") + "unknown scheme '" + s + "'");
        }
    }
    if (mode == "mc" && error != "strong") {
        throw ConfigError(cfg.where("mode") + "Monte Carlo mode estimates the strong error only");
    }

    struct Point {
        int kappa;
        int level; ///< h = T 2^{-level}
    };
    std::vector<Point> points;
    if (sweep == "coupled") {
        const int m_min = detail::checked_int(cfg, "m_min", 1, 0, 15);
        const int m_max = detail::checked_int(cfg, "m_max", mode == "mc" ? 6 : 10, m_min, 15);
        for (int m = m_min; m <= m_max; ++m) {
            points.push_back({1 << m, 2 * m});
        }
    } else {
        const int kappa = detail::checked_int(cfg, "kappa", 32, 0, 1 << 12);
        const int lo = detail::checked_int(cfg, "level_min", 3, 0, 30);
        const int hi = detail::checked_int(cfg, "level_max", 12, lo, 30);
        for (int j = lo; j <= hi; ++j) {
            points.push_back({kappa, j});
        }
    }

    std::size_t samples = 0;
    bool exact_reference = false;
    int reference_level = 0;
    int reference_kappa = 0;
    if (mode == "mc") {
        samples = static_cast<std::size_t>(detail::checked_int(cfg, "samples", 10, 2, 1 << 30));
        exact_reference = cfg.get_choice("reference", "em", {"em", "exact"}) == "exact";
        reference_level = detail::checked_int(cfg, "reference_level", 14, 0, 30);
        reference_kappa = detail::checked_int(cfg, "reference_kappa", 128, 0, 1 << 12);
        for (const Point& p : points) {
            if (p.level > reference_level || p.kappa > reference_kappa) {
                throw ConfigError(cfg.source() + ": sweep point (kappa " + std::to_string(p.kappa) + ", level " +
                                  std::to_string(p.level) + ") is finer than the reference");
            }
        }
    }
    const std::uint64_t seed = mode == "mc" ? detail::resolve_seed(cfg, opt) : 0;
    const double C = cfg.get_double("C", 1.0);
    const double A0 = cfg.get_double("A0", 0.0);
    const std::vector<double>& params = expectation ? etas : alphas;
    std::vector<CoefficientField> x0s;
    int kappa_max = 0;
    for (const Point& p : points) {
        kappa_max = std::max(kappa_max, p.kappa);
    }
    for (const double p : params) {
        x0s.push_back(detail::initial_condition(cfg, expectation ? p : etas.front(), kappa_max));
    }
    if (mode == "mc" && l2_norm_sq(x0s.front()) != 0.0) {
        throw ConfigError(cfg.where("x0") + "Monte Carlo EM sweeps start from x0 = zero");
    }
    cfg.reject_unused();
    report.config_hash = cfg.hash();

    // All forward points are checked up front and reported together.
    for (const auto& name : schemes) {
        if (name != "forward") {
            continue;
        }
        std::string bad;
        for (const Point& p : points) {
            const StabilityReport r = stability_check(Scheme::forward(cc), p.kappa, std::ldexp(T, -p.level));
            if (!r.ok) {
                bad += "\n  " + r.message;
            }
        }
        if (exact_reference == false && mode == "mc") {
            const StabilityReport r =
                stability_check(Scheme::forward(cc), reference_kappa, std::ldexp(T, -reference_level));
            if (!r.ok) {
                bad += "\n  reference: " + r.message;
            }
        }
        if (!bad.empty()) {
            throw StabilityError("forward Euler sweep has unstable points:" + bad);
        }
    }

    if (mode == "mc") {
        const double fine = std::ldexp(1.0, reference_level);
        const double draws = static_cast<double>(samples) * static_cast<double>(channel_count(reference_kappa)) *
                             fine * static_cast<double>(schemes.size() * params.size());
        detail::gate_monte_carlo(opt, draws, 8.0 * 2.0 * fine * std::max(1, opt.threads), false,
                                 "EM Monte Carlo");
    }

    for (const auto& name : schemes) {
        const Scheme scheme = name == "forward" ? Scheme::forward(cc) : Scheme::backward();
        std::vector<ErrorCurve> curves;
        std::vector<std::vector<double>> guides;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const double p = params[i];
            const AngularPowerSpectrum spec(expectation ? 2.0 : p, C, A0);
            const CoefficientField& x0 = x0s[i];
            const CoefficientField msq = detail::squared(x0);
            ErrorCurve curve;
            curve.label = detail::param_label(expectation ? "eta" : "alpha", p);
            curve.sweep_param = "h";
            if (mode == "exact") {
                for (const Point& pt : points) {
                    const double h = std::ldexp(T, -pt.level);
                    const std::int64_t k = std::int64_t{1} << pt.level;
                    double e = 0.0;
                    if (error == "strong") {
                        e = em_strong_error_exact(scheme, msq, spec, pt.kappa, h, k);
                    } else if (error == "second_moment") {
                        e = em_second_moment_error(scheme, msq, spec, pt.kappa, h, k);
                    } else {
                        e = em_expectation_error(scheme, x0, pt.kappa, h, k);
                    }
                    curve.push(h, e);
                }
            } else {
                std::vector<McPoint> mc_points;
                for (const Point& pt : points) {
                    mc_points.push_back({pt.kappa, pt.level});
                }
                const McReference ref{reference_kappa,
                                      exact_reference ? std::nullopt : std::optional<int>(reference_level)};
                const auto est = mc_strong_errors(scheme, spec, T, mc_points, ref, reference_level, samples, seed,
                                                  opt.threads);
                for (std::size_t q = 0; q < points.size(); ++q) {
                    curve.push(std::ldexp(T, -points[q].level), est[q].value, est[q].stderr_value);
                }
            }
            curves.push_back(std::move(curve));
            if (error == "strong") {
                guides.push_back({std::min(1.0, p / 4.0)});
            } else if (error == "second_moment") {
                guides.push_back({std::min(1.0, p / 2.0)});
            } else {
                guides.push_back({1.0});
            }
        }
        detail::write_curves(report, opt, "em_" + name + "_" + error + "_" + mode, std::move(curves), guides,
                             name + " Euler-Maruyama " + error + " (" + mode + ")", "h", error + " error");
    }
    return report;
}

// ---------------------------------------------------------------------------
// bounds

/// Ratio sweeps of the exponential-approximation and regularity estimates.
/// Keys: propositions (list of forward|backward|regularity), variants (list,
/// default all), mu (list, default all), refinement, include_uncertified,
/// rows = summary|all.
inline RunReport run_bounds(Config& cfg, const RunOptions& opt)
{
    RunReport report;
    const auto propositions = cfg.get_string_list("propositions", {"forward", "backward", "regularity"});
    const auto variants = cfg.get_string_list("variants", {"a", "b", "b_weighted", "c", "d"});
    const bool mu_filter = cfg.has("mu");
    const auto mus = cfg.get_double_list("mu", {});
    const int refinement = detail::checked_int(cfg, "refinement", 1, 0, 6);
    const bool uncertified = cfg.get_bool("include_uncertified", true);
    const bool all_rows = cfg.get_choice("rows", "summary", {"summary", "all"}) == "all";
    cfg.reject_unused();
    report.config_hash = cfg.hash();

    if (propositions.empty() || std::any_of(propositions.begin(), propositions.end(),
                                            [](const std::string& s) { return s.empty(); })) {
        throw ConfigError(cfg.where("propositions") + "usage: propositions must list at least one of "
                                                      "forward, backward, regularity");
    }
    for (const auto& p : propositions) {
        if (p != "forward" && p != "backward" && p != "regularity") {
            throw ConfigError(cfg.where("propositions") + "unknown proposition '" + p + "'");
        }
    }
    auto selected = [&](const BoundCase& c) {
        const bool prop = std::find(propositions.begin(), propositions.end(), c.proposition) != propositions.end();
        const bool var = std::find(variants.begin(), variants.end(), c.variant) != variants.end();
        const bool mu = !mu_filter || std::any_of(mus.begin(), mus.end(),
                                                  [&](double m) { return std::abs(m - c.mu) < 1e-12; });
        return prop && var && mu;
    };

    auto sweep_rows = [&](const std::vector<BoundCase>& cases, const std::string& file, bool certified) {
        std::vector<io::BoundRow> rows;
        std::ostringstream text;
        for (const BoundCase& c : cases) {
            if (!selected(c)) {
                continue;
            }
            auto row_at = [&](const SweepPoint& p, double ratio) {
                return io::BoundRow{c.proposition, c.variant, c.mu, p.product(), p.k, c.gap(p), c.envelope(p), ratio};
            };
            if (all_rows) {
                for (const SweepPoint& p : sweep_grid(refinement, c.product_limit, c.uses_k)) {
                    const double g = c.gap(p);
                    const double e = c.envelope(p);
                    const double ratio = c.ratio ? c.ratio(p) : (e > 0.0 ? std::abs(g) / e : INFINITY);
                    rows.push_back(row_at(p, ratio));
                }
            }
            const SweepResult here = sweep_case(c, refinement);
            const SweepResult finer = sweep_case(c, refinement + 1);
            if (!all_rows) {
                rows.push_back(row_at(here.argmax, here.max_ratio));
            }
            const double growth = finer.max_ratio / here.max_ratio - 1.0;
            const bool ok = std::isfinite(here.max_ratio) && std::isfinite(finer.max_ratio) && growth < 0.05;
            std::ostringstream line;
            line << c.name() << ": sup " << io::format_double(here.max_ratio) << ", refined "
                 << io::format_double(finer.max_ratio) << ", growth " << io::format_short(100.0 * growth) << "% ("
                 << here.skipped << " underflowed points skipped) " << (ok ? "bounded" : "NOT bounded");
            text << line.str() << '\n';
            if (certified || !ok) {
                detail::say(opt, line.str());
            }
        }
        const auto csv = opt.out_dir / (file + ".csv");
        auto out = io::open_output(csv);
        io::write_bounds_csv(out, rows);
        report.files.push_back(csv);
        const auto txt = opt.out_dir / (file + "_report.txt");
        io::write_text(txt, text.str());
        report.files.push_back(txt);
        return rows.size();
    };

    const std::size_t n = sweep_rows(certified_bound_cases(), "bounds", true);
    if (n == 0) {
        throw ConfigError(cfg.source() + ": usage: the selection matches no certified estimate");
    }
    if (uncertified) {
        sweep_rows(uncertified_bound_cases(), "bounds_uncertified", false);
    }
    return report;
}

// ---------------------------------------------------------------------------
// snapshot

/// Largest theta x phi grid a snapshot may request.
inline constexpr std::size_t max_snapshot_points = 4'000'000;

/// Field images on an equiangular grid: row i is theta = pi i / (n_theta - 1),
/// column j is phi = 2 pi j / n_phi.
/// Keys: solver = exact|forward|backward, kappa, times (list), n_theta, n_phi,
/// level (EM step T_max 2^{-level}), alpha, C, A0, C_c, colormap, seed, x0 options.
inline RunReport run_snapshot(Config& cfg, const RunOptions& opt)
{
    RunReport report;
    const std::string solver = cfg.get_choice("solver", "exact", {"exact", "forward", "backward"});
    const int kappa = detail::checked_int(cfg, "kappa", 16, 0, 1 << 10);
    const std::vector<double> times = cfg.get_double_list("times", {0.0, 0.01, 0.1});
    const int n_theta = detail::checked_int(cfg, "n_theta", 91, 2, 1 << 20);
    const int n_phi = detail::checked_int(cfg, "n_phi", 180, 1, 1 << 20);
    const int level = detail::checked_int(cfg, "level", 10, 0, 24);
    const double alpha = detail::positive(cfg, "alpha", 2.0);
    const double cc = detail::positive(cfg, "C_c", 2.0);
    const auto map = cfg.get_choice("colormap", "diverging", {"gray", "diverging"}) == "gray" ? io::Colormap::gray
                                                                                              : io::Colormap::diverging;
    const AngularPowerSpectrum spec = detail::spectrum_from(cfg, alpha);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    const CoefficientField x0 = detail::initial_condition(cfg, cfg.get_double("eta", 1.0), kappa);
    cfg.reject_unused();
    report.config_hash = cfg.hash();

    if (static_cast<std::size_t>(n_theta) * static_cast<std::size_t>(n_phi) > max_snapshot_points) {
        throw ResourceError("snapshot grid " + std::to_string(n_theta) + " x " + std::to_string(n_phi) +
                            " exceeds " + std::to_string(max_snapshot_points) + " points");
    }
    if (times.empty()) {
        throw ConfigError(cfg.where("times") + "need at least one time");
    }
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (!(times[i] >= 0.0) || (i > 0 && !(times[i] > times[i - 1]))) {
            throw ConfigError(cfg.where("times") + "times must be nonnegative and strictly increasing");
        }
    }

    std::vector<CoefficientField> fields;
    if (solver == "exact") {
        fields = spectral_solve(x0, spec, kappa, times, seed, opt.threads).states;
    } else {
        const double horizon = times.back();
        const Scheme scheme = solver == "forward" ? Scheme::forward(cc) : Scheme::backward();
        if (horizon == 0.0) {
            fields.assign(times.size(), x0.resized(kappa));
        } else {
            const double h = std::ldexp(horizon, -level);
            std::vector<std::size_t> steps;
            for (const double t : times) {
                const double k = t / h;
                if (std::abs(k - std::round(k)) > 1e-9 * std::max(1.0, k)) {
                    throw ConfigError(cfg.where("times") + "time " + io::format_short(t) +
                                      " is not on the Euler grid of step " + io::format_double(h));
                }
                steps.push_back(static_cast<std::size_t>(std::llround(k)));
            }
            require_stable(scheme, kappa, h);
            const auto lattice =
                sample_lattice(kappa, horizon, level, seed, LatticeOptions{std::size_t{1} << 31, opt.threads});
            const Trajectory path = em_solve(scheme, x0, spec, kappa, level, lattice, opt.threads);
            for (const std::size_t k : steps) {
                fields.push_back(path.states[k]);
            }
        }
    }

    std::vector<SpherePoint> grid;
    grid.reserve(static_cast<std::size_t>(n_theta) * static_cast<std::size_t>(n_phi));
    for (int i = 0; i < n_theta; ++i) {
        // the last row sits exactly on the south pole
        const double theta = i == n_theta - 1 ? numeric::pi : numeric::pi * i / (n_theta - 1);
        for (int j = 0; j < n_phi; ++j) {
            grid.push_back({theta, 2.0 * numeric::pi * j / n_phi});
        }
    }

    for (std::size_t s = 0; s < fields.size(); ++s) {
        const std::vector<double> values = evaluate_field(fields[s], grid);
        const io::ImageRange range = io::value_range(values);
        char stem_buf[32];
        std::snprintf(stem_buf, sizeof stem_buf, "snapshot_%03zu", s);
        const std::string stem = stem_buf;

        const auto ppm = opt.out_dir / (stem + ".ppm");
        {
            auto out = io::open_output(ppm, true);
            io::write_ppm(out, values, static_cast<std::size_t>(n_theta), static_cast<std::size_t>(n_phi), map,
                          range);
        }
        const auto meta = opt.out_dir / (stem + ".meta");
        std::ostringstream m;
        m << "time = " << io::format_double(times[s]) << '\n'
          << "solver = " << solver << '\n'
          << "min = " << io::format_double(range.min) << '\n'
          << "max = " << io::format_double(range.max) << '\n'
          << "colormap = " << io::to_string(map) << '\n'
          << "n_theta = " << n_theta << '\n'
          << "n_phi = " << n_phi << '\n'
          << "config_hash = " << report.config_hash << '\n';
        io::write_text(meta, m.str());

        const auto csv = opt.out_dir / (stem + ".csv");
        {
            auto out = io::open_output(csv);
            out << "theta,phi,value\n";
            for (std::size_t g = 0; g < grid.size(); ++g) {
                out << io::format_double(grid[g].theta) << ',' << io::format_double(grid[g].phi) << ','
                    << io::format_double(values[g]) << '\n';
            }
        }
        report.files.insert(report.files.end(), {ppm, meta, csv});
        detail::say(opt, stem + ": t = " + io::format_short(times[s]) + ", range [" +
                             io::format_short(range.min) + ", " + io::format_short(range.max) + "]");
    }
    return report;
}

// ---------------------------------------------------------------------------
// moments

/// Mean norms and second moments over time, in closed form for the spectral
/// solution and both Euler schemes, plus an optional exact-solver Monte Carlo
/// check of the second moment.
/// Keys: alpha, C, A0, kappa, times (list), scheme (list), level (the Euler
/// value at time t takes 2^level steps of t 2^{-level}), C_c, samples (0 disables Monte Carlo), seed, x0 options.
inline RunReport run_moments(Config& cfg, const RunOptions& opt)
{
    RunReport report;
    const double alpha = detail::positive(cfg, "alpha", 3.0);
    const int kappa = detail::checked_int(cfg, "kappa", 8, 0, 1 << 12);
    const std::vector<double> times = cfg.get_double_list("times", {0.01, 0.1, 1.0});
    const std::vector<std::string> schemes = cfg.get_string_list("scheme", {"forward", "backward"});
    const int level = detail::checked_int(cfg, "level", 10, 0, 30);
    const double cc = detail::positive(cfg, "C_c", 2.0);
    const std::size_t samples = static_cast<std::size_t>(detail::checked_int(cfg, "samples", 0, 0, 1 << 30));
    const AngularPowerSpectrum spec = detail::spectrum_from(cfg, alpha);
    const std::uint64_t seed = detail::resolve_seed(cfg, opt);
    const CoefficientField x0 = detail::initial_condition(cfg, cfg.get_double("eta", 1.0), kappa);
    cfg.reject_unused();
    report.config_hash = cfg.hash();

    if (times.empty()) {
        throw ConfigError(cfg.where("times") + "need at least one time");
    }
    for (const double t : times) {
        if (!(t >= 0.0)) {
            throw ConfigError(cfg.where("times") + "times must be nonnegative");
        }
    }
    for (const auto& s : schemes) {
        if (s != "forward" && s != "backward") {
            throw ConfigError(cfg.where("scheme") + "unknown scheme '" + s + "'");
        }
    }
    const CoefficientField msq = detail::squared(x0);
    const CoefficientField mean = x0.resized(std::max(kappa, x0.truncation()));

    if (samples > 0) {
        const double draws = static_cast<double>(samples) * static_cast<double>(channel_count(kappa)) *
                             static_cast<double>(times.size());
        detail::gate_monte_carlo(opt, draws, 8.0 * static_cast<double>(samples), false, "moments Monte Carlo");
    }

    const auto csv = opt.out_dir / "moments.csv";
    auto out = io::open_output(csv);
    out << "quantity,t,value,stderr\n";
    auto row = [&](const std::string& q, double t, double v, double se) {
        out << q << ',' << io::format_double(t) << ',' << io::format_double(v) << ',' << io::format_double(se)
            << '\n';
    };
    const double none = std::numeric_limits<double>::quiet_NaN();
    for (const double t : times) {
        row("exact_mean_norm", t, std::sqrt(l2_norm_sq(spectral_expectation(mean, kappa, t))), none);
        row("exact_second_moment", t, exact_second_moment(msq, spec, kappa, t), none);
        for (const auto& name : schemes) {
            const Scheme scheme = name == "forward" ? Scheme::forward(cc) : Scheme::backward();
            if (t == 0.0) {
                row("em_mean_norm_" + name, t, std::sqrt(l2_norm_sq(spectral_expectation(mean, kappa, 0.0))), none);
                row("em_second_moment_" + name, t, exact_second_moment(msq, spec, kappa, 0.0), none);
                continue;
            }
            const double h = std::ldexp(t, -level);
            const std::int64_t steps = std::int64_t{1} << level;
            row("em_mean_norm_" + name, t, std::sqrt(l2_norm_sq(em_expectation(scheme, mean, kappa, h, steps))),
                none);
            row("em_second_moment_" + name, t, em_second_moment(scheme, msq, spec, kappa, h, steps), none);
        }
        if (samples > 0) {
            const McEstimate est = mc_second_moment(x0, spec, kappa, t, samples, seed, opt.threads);
            row("mc_second_moment", t, est.value, est.stderr_value);
        }
    }
    report.files.push_back(csv);
    detail::say(opt, "wrote " + csv.string());
    return report;
}

} // namespace sphere_spde
