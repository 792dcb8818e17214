#include "kvn/systems.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "kvn/errors.hpp"
#include "kvn/io.hpp"

namespace kvn {

Vec VectorField::operator()(VecIn x) const {
    Vec out(dim);
    b(x, out);
    return out;
}

Mat VectorField::jacobian(VecIn x) const {
    Mat out(dim, dim);
    jac_b(x, out);
    return out;
}

Vec ScalarField::gradient(VecIn x) const {
    Vec out(x.size());
    grad(x, out);
    return out;
}

bool Box::contains(VecIn x) const {
    for (int i = 0; i < dim(); ++i)
        if (!(x[i] >= lower[i] && x[i] <= upper[i])) return false;
    return true;
}

double Box::volume() const { return (upper - lower).prod(); }

ScalarField BenchmarkSystem::boundary_taper() const {
    if (law) return *law;
    ScalarField g = domain.level;
    double c = domain.level_value;
    return {[g, c](VecIn x) { return c - g.value(x); },
            [g](VecIn x, VecOut out) {
                g.grad(x, out);
                out = -out;
            }};
}

Box ellipse_bounding_box(const Eigen::Matrix2d& M, double c, double pad) {
    Eigen::Matrix2d inv = M.inverse();
    Box box{Vec(2), Vec(2)};
    for (int i = 0; i < 2; ++i) {
        double e = std::sqrt(c * inv(i, i)) + pad;
        box.lower[i] = -e;
        box.upper[i] = e;
    }
    return box;
}

double bisect(const std::function<double(double)>& f, double lo, double hi, double tol) {
    double flo = f(lo);
    double fhi = f(hi);
    if (flo == 0) return lo;
    if (fhi == 0) return hi;
    if ((flo > 0) == (fhi > 0)) throw PreconditionError("bisect: no sign change on interval");
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        double fm = f(mid);
        if (fm == 0) return mid;
        if ((fm > 0) == (flo > 0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

BenchmarkSystem make_linear_system(const std::string& name, const Eigen::Matrix2d& B,
                                   const Eigen::Matrix2d& M, double c) {
    BenchmarkSystem sys;
    sys.name = name;
    sys.field.dim = 2;
    sys.field.b = [B](VecIn x, VecOut out) { out = B * x; };
    double tr = B.trace();
    sys.field.div_b = [tr](VecIn) { return tr; };
    sys.field.jac_b = [B](VecIn, MatOut out) { out = B; };

    Eigen::Matrix2d Ms = 0.5 * (M + M.transpose());
    sys.domain.level = {[Ms](VecIn x) { return x.dot(Ms * x); },
                        [Ms](VecIn x, VecOut out) { out = 2.0 * Ms * x; }};
    sys.domain.level_value = c;
    sys.domain.indicator = [Ms, c](VecIn x) { return x.dot(Ms * x) < c; };
    sys.domain.box = ellipse_bounding_box(Ms, c, 1e-12);
    sys.domain.exact_volume = std::numbers::pi * c / std::sqrt(Ms.determinant());
    return sys;
}

BenchmarkSystem make_undamped_oscillator() {
    Eigen::Matrix2d B{{0.0, 1.0}, {-2.0, 0.0}};
    Eigen::Matrix2d M{{1.0, 0.0}, {0.0, 0.5}};
    BenchmarkSystem sys = make_linear_system("undamped_oscillator", B, M, 1.0);
    sys.domain.box.lower = Vec{{-1.0, -std::sqrt(2.0)}};
    sys.domain.box.upper = Vec{{1.0, std::sqrt(2.0)}};
    sys.domain.exact_volume = std::numbers::pi * std::sqrt(2.0);
    sys.law = ConservationLaw{[](VecIn x) { return 1.0 - x[0] * x[0] - 0.5 * x[1] * x[1]; },
                              [](VecIn x, VecOut out) {
                                  out[0] = -2.0 * x[0];
                                  out[1] = -x[1];
                              }};
    sys.reference_eigenvalues = {cd(0, std::sqrt(2.0)), cd(0, -std::sqrt(2.0))};
    sys.reference_note = "Koopman eigenvalues +-i*sqrt(2) of B; KvN lattice i*sqrt(2)*k";
    return sys;
}

BenchmarkSystem make_damped_oscillator() {
    Eigen::Matrix2d B{{0.0, 1.0}, {-2.0, -2.0}};
    Eigen::Matrix2d M{{1.0, 0.5}, {0.5, 0.5}};
    BenchmarkSystem sys = make_linear_system("damped_oscillator", B, M, 1.0);
    sys.reference_eigenvalues = {cd(-1, 1), cd(-1, -1)};
    sys.reference_note = "principal Koopman eigenvalues -1 +- i";
    return sys;
}

namespace {

double lv_raw(VecIn x) { return x[0] + x[1] - std::log(x[0]) - std::log(x[1]); }

}  // namespace

BenchmarkSystem make_lotka_volterra() {
    BenchmarkSystem sys;
    sys.name = "lotka_volterra";
    sys.field.dim = 2;
    sys.field.b = [](VecIn x, VecOut out) {
        out[0] = x[0] * (1.0 - x[1]);
        out[1] = x[1] * (x[0] - 1.0);
    };
    sys.field.div_b = [](VecIn x) { return x[0] - x[1]; };
    sys.field.jac_b = [](VecIn x, MatOut out) {
        out(0, 0) = 1.0 - x[1];
        out(0, 1) = -x[0];
        out(1, 0) = x[1];
        out(1, 1) = x[0] - 1.0;
    };

    const double c = 3.0;
    sys.domain.level = {[](VecIn x) { return lv_raw(x); },
                        [](VecIn x, VecOut out) {
                            out[0] = 1.0 - 1.0 / x[0];
                            out[1] = 1.0 - 1.0 / x[1];
                        }};
    sys.domain.level_value = c;
    sys.domain.indicator = [c](VecIn x) { return x[0] > 0 && x[1] > 0 && lv_raw(x) < c; };

    // Axis extremes sit on the line where the other coordinate equals 1.
    auto h = [c](double s) { return 1.0 + s - std::log(s) - c; };
    double lo = bisect(h, 1e-8, 1.0);
    double hi = bisect(h, 1.0, 20.0);
    sys.domain.box.lower = Vec::Constant(2, lo - 1e-12);
    sys.domain.box.upper = Vec::Constant(2, hi + 1e-12);

    sys.law = ConservationLaw{[c](VecIn x) { return c - lv_raw(x); },
                              [](VecIn x, VecOut out) {
                                  out[0] = 1.0 / x[0] - 1.0;
                                  out[1] = 1.0 / x[1] - 1.0;
                              }};
    sys.reference_note = "no closed-form spectrum";
    return sys;
}

BenchmarkSystem make_system(const std::string& name) {
    if (name == "undamped_oscillator") return make_undamped_oscillator();
    if (name == "damped_oscillator") return make_damped_oscillator();
    if (name == "lotka_volterra") return make_lotka_volterra();
    throw ConfigError("unknown system '" + name + "'");
}

void integrate_rk4(const VectorField& field, const Box& box, VecOut x, double t, double dt) {
    if (!(dt > 0)) throw PreconditionError("integrator step dt must be > 0");
    if (t == 0) return;
    const int d = field.dim;
    const long steps = std::max(1L, static_cast<long>(std::ceil(std::abs(t) / dt - 1e-9)));
    const double h = t / static_cast<double>(steps);
    Vec k1(d), k2(d), k3(d), k4(d), tmp(d);
    for (long s = 0; s < steps; ++s) {
        field.b(x, k1);
        tmp = x + 0.5 * h * k1;
        field.b(tmp, k2);
        tmp = x + 0.5 * h * k2;
        field.b(tmp, k3);
        tmp = x + h * k3;
        field.b(tmp, k4);
        x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!box.contains(x) || !x.allFinite())
            throw EscapeError("trajectory left the bounding box", (s + 1) * h);
    }
}

Vec flow(const BenchmarkSystem& sys, VecIn x0, double t, double dt) {
    if (!(dt > 0)) throw PreconditionError("flow: dt must be > 0");
    if (!sys.domain.contains(x0)) throw PreconditionError("flow: x0 must lie in the domain");
    Vec x = x0;
    integrate_rk4(sys.field, sys.domain.box, x, t, dt);
    return x;
}

double SampleResult::acceptance_rate() const {
    return proposals == 0 ? 0.0 : static_cast<double>(points.cols()) / static_cast<double>(proposals);
}

namespace {

std::mt19937_64 block_rng(std::uint64_t seed, std::uint64_t block) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32)};
    return std::mt19937_64(seq);
}

constexpr std::uint64_t kMinProposals = 1000000;
constexpr double kMinAcceptance = 1e-4;

}  // namespace

SampleResult sample_uniform_stats(const Domain& domain, std::size_t m, std::uint64_t seed) {
    if (m < 1) throw PreconditionError("sample_uniform: m >= 1 required");
    const int d = domain.box.dim();
    SampleResult res;
    res.points.resize(d, static_cast<Eigen::Index>(m));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec x(d);
    std::size_t filled = 0;
    for (std::uint64_t block = 0; filled < m; ++block) {
        auto rng = block_rng(seed, block);
        std::size_t target = std::min(m, filled + kSampleBlock);
        while (filled < target) {
            for (int i = 0; i < d; ++i)
                x[i] = domain.box.lower[i] + (domain.box.upper[i] - domain.box.lower[i]) * unif(rng);
            ++res.proposals;
            if (domain.indicator(x)) res.points.col(static_cast<Eigen::Index>(filled++)) = x;
            if (res.proposals >= kMinProposals &&
                static_cast<double>(filled) < kMinAcceptance * static_cast<double>(res.proposals))
                throw PreconditionError("sample_uniform: acceptance rate below 1e-4, degenerate domain");
        }
    }
    return res;
}

Points sample_uniform(const Domain& domain, std::size_t m, std::uint64_t seed) {
    return sample_uniform_stats(domain, m, seed).points;
}

Points sample_density(const Domain& domain, const std::function<double(VecIn)>& density, double bound,
                      std::size_t m, std::uint64_t seed) {
    if (m < 1) throw PreconditionError("sample_density: m >= 1 required");
    if (!(bound > 0)) throw PreconditionError("sample_density: bound must be > 0");
    const int d = domain.box.dim();
    Points out(d, static_cast<Eigen::Index>(m));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec x(d);
    std::size_t filled = 0;
    std::uint64_t proposals = 0;
    while (filled < m) {
        for (int i = 0; i < d; ++i)
            x[i] = domain.box.lower[i] + (domain.box.upper[i] - domain.box.lower[i]) * unif(rng);
        ++proposals;
        double u = unif(rng);
        if (!domain.indicator(x)) continue;
        double p = density(x);
        if (p > bound) throw PreconditionError("sample_density: density exceeds the stated bound");
        if (u * bound < p) out.col(static_cast<Eigen::Index>(filled++)) = x;
        if (proposals >= kMinProposals &&
            static_cast<double>(filled) < kMinAcceptance * static_cast<double>(proposals))
            throw PreconditionError("sample_density: acceptance rate below 1e-4");
    }
    return out;
}

double domain_volume(const Domain& domain, std::size_t m, std::uint64_t seed) {
    if (domain.exact_volume) return *domain.exact_volume;
    const int d = domain.box.dim();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Vec x(d);
    std::size_t hits = 0;
    for (std::size_t l = 0; l < m; ++l) {
        for (int i = 0; i < d; ++i)
            x[i] = domain.box.lower[i] + (domain.box.upper[i] - domain.box.lower[i]) * unif(rng);
        if (domain.indicator(x)) ++hits;
    }
    return domain.box.volume() * static_cast<double>(hits) / static_cast<double>(m);
}

void write_points_csv(const std::string& path, const Points& points) {
    auto out = open_output(path);
    std::vector<std::string> row;
    for (Eigen::Index i = 0; i < points.rows(); ++i) row.push_back("x" + std::to_string(i + 1));
    write_csv_row(out, row);
    for (Eigen::Index l = 0; l < points.cols(); ++l) {
        row.clear();
        for (Eigen::Index i = 0; i < points.rows(); ++i) row.push_back(format_double(points(i, l)));
        write_csv_row(out, row);
    }
}

}  // namespace kvn
