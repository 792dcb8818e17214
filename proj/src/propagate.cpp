#include "kvn/propagate.hpp"

#include <cmath>
#include <cstdio>

#include "kvn/errors.hpp"
#include "kvn/io.hpp"

namespace kvn {

CVec Wavefunction::original_coeffs() const {
    if (!white) throw PreconditionError("wavefunction has no whitening transform");
    return white->T.cast<cd>() * coeffs;
}

cd Wavefunction::value(VecIn x) const {
    CVec u = original_coeffs();
    Vec phi = (*dict)(x);
    return (phi.cast<cd>().array() * u.array()).sum();
}

CVec Wavefunction::values(const Points& points) const {
    if (!dict) throw PreconditionError("wavefunction has no dictionary");
    CVec u = original_coeffs();
    CVec out(points.cols());
    Vec phi(dict->size());
    for (Eigen::Index l = 0; l < points.cols(); ++l) {
        dict->eval(points.col(l), phi);
        out[l] = (phi.cast<cd>().array() * u.array()).sum();
    }
    return out;
}

Propagator::Propagator(const Mat& Qt) {
    if (Qt.rows() != Qt.cols()) throw PreconditionError("propagator: Qt must be square");
    CMat H = cd(0.0, 1.0) * Qt.cast<cd>();
    Eigen::SelfAdjointEigenSolver<CMat> es(H);
    if (es.info() != Eigen::Success) throw NumericalError("propagator: Hermitian eigensolver failed");
    U_ = es.eigenvectors();
    h_ = es.eigenvalues();
}

CVec Propagator::apply(const CVec& c, double dt) const {
    if (c.size() != U_.rows()) throw PreconditionError("propagator: coefficient length mismatch");
    if (dt == 0) return c;
    CVec phase(h_.size());
    for (Eigen::Index j = 0; j < h_.size(); ++j) phase[j] = std::exp(cd(0.0, -h_[j] * dt));
    CVec w = U_.adjoint() * c;
    return U_ * (phase.array() * w.array()).matrix();
}

Wavefunction Propagator::evolve(const Wavefunction& psi, double dt) const {
    Wavefunction out = psi;
    out.coeffs = apply(psi.coeffs, dt);
    out.time = psi.time + dt;
    return out;
}

CMat Propagator::matrix(double t) const {
    CVec phase(h_.size());
    for (Eigen::Index j = 0; j < h_.size(); ++j) phase[j] = std::exp(cd(0.0, -h_[j] * t));
    return U_ * phase.asDiagonal() * U_.adjoint();
}

Wavefunction evolve(const Wavefunction& psi, double dt) {
    if (!std::isfinite(dt)) throw PreconditionError("evolve: dt must be finite");
    if (!psi.white) throw PreconditionError("evolve: wavefunction has no whitening transform");
    return Propagator(psi.white->Qt).evolve(psi, dt);
}

FitResult fit_wavefunction(DictionaryPtr dict, WhiteningPtr white, const ComplexFunction& target,
                           const Points& points, double truncation) {
    if (!dict || !white) throw PreconditionError("fit_wavefunction: dictionary and whitening required");
    const int k = white->k();
    const int n = dict->size();
    if (white->T.rows() != n) throw PreconditionError("fit_wavefunction: whitening does not match dictionary");
    const Eigen::Index m = points.cols();
    if (m < k) throw PreconditionError("fit_wavefunction: at least k points required");

    const Eigen::Index chunk = 2048;
    Mat M = Mat::Zero(k, k);
    CVec rhs = CVec::Zero(k);
    CVec y(m);
    double ynorm2 = 0.0;
    for (Eigen::Index begin = 0; begin < m; begin += chunk) {
        const Eigen::Index len = std::min(chunk, m - begin);
        Mat phi(n, len);
        for (Eigen::Index l = 0; l < len; ++l) {
            dict->eval(points.col(begin + l), phi.col(l));
            y[begin + l] = target(points.col(begin + l));
        }
        Mat pt = white->T.transpose() * phi;
        M.selfadjointView<Eigen::Lower>().rankUpdate(pt);
        rhs += pt.cast<cd>() * y.segment(begin, len);
        ynorm2 += y.segment(begin, len).squaredNorm();
    }
    M.triangularView<Eigen::StrictlyUpper>() = M.transpose();
    GramSpectrum s = gram_spectrum(M, truncation);
    if (s.values.size() < k)
        throw NumericalError("fit_wavefunction: normal equations rank " + std::to_string(s.values.size()) +
                             " < " + std::to_string(k));
    CVec c = s.vectors.cast<cd>() *
             (s.values.cwiseInverse().cast<cd>().asDiagonal() * (s.vectors.transpose().cast<cd>() * rhs));

    double r2 = 0.0;
    for (Eigen::Index begin = 0; begin < m; begin += chunk) {
        const Eigen::Index len = std::min(chunk, m - begin);
        Mat phi(n, len);
        for (Eigen::Index l = 0; l < len; ++l) dict->eval(points.col(begin + l), phi.col(l));
        CVec fitted = (white->T.transpose() * phi).cast<cd>().transpose() * c;
        r2 += (fitted - y.segment(begin, len)).squaredNorm();
    }
    FitResult res;
    res.psi.coeffs = c;
    res.psi.dict = std::move(dict);
    res.psi.white = std::move(white);
    res.relative_residual = ynorm2 > 0 ? std::sqrt(r2 / ynorm2) : std::sqrt(r2);
    res.rank = static_cast<int>(s.values.size());
    return res;
}

cd characteristic_solution(const BenchmarkSystem& sys, const ComplexFunction& psi0, VecIn x, double t,
                           const CharacteristicOptions& opts) {
    if (!(opts.dt > 0)) throw PreconditionError("characteristic_solution: dt must be > 0");
    if (t == 0) return psi0(x);
    const int d = sys.dim();
    const VectorField& f = sys.field;
    // Augmented backward system: y' = -b(y), s' = div b(y).
    auto rhs = [&](const Vec& z, Vec& out) {
        Vec by(d);
        f.b(z.head(d), by);
        out.head(d) = -by;
        out[d] = f.div_b(z.head(d));
    };
    const long steps = std::max(1L, static_cast<long>(std::ceil(std::abs(t) / opts.dt - 1e-9)));
    const double h = t / static_cast<double>(steps);
    Vec z(d + 1), k1(d + 1), k2(d + 1), k3(d + 1), k4(d + 1);
    z.head(d) = x;
    z[d] = 0.0;
    for (long s = 0; s < steps; ++s) {
        rhs(z, k1);
        rhs(z + 0.5 * h * k1, k2);
        rhs(z + 0.5 * h * k2, k3);
        rhs(z + h * k3, k4);
        z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (opts.policy == EscapePolicy::Zero) {
            if (!sys.domain.contains(z.head(d))) return cd(0.0, 0.0);
        } else if (!sys.domain.box.contains(z.head(d)) || !z.allFinite()) {
            throw EscapeError("backward characteristic left the bounding box", (s + 1) * h);
        }
    }
    return psi0(z.head(d)) * std::exp(-0.5 * z[d]);
}

DensityField born_density(const Wavefunction& psi, const Points& points, const Vec& weights) {
    DensityField rho;
    rho.points = points;
    rho.values = psi.values(points).cwiseAbs2();
    if (weights.size() == points.cols()) {
        rho.mass = rho.values.dot(weights);
    } else if (weights.size() != 0) {
        throw PreconditionError("born_density: weights must match points");
    }
    return rho;
}

double expectation(const Wavefunction& psi, const RealFunction& f, const Points& points, const Vec& weights) {
    if (weights.size() != points.cols()) throw PreconditionError("expectation: weights must match points");
    Vec rho = psi.values(points).cwiseAbs2();
    double num = 0.0, den = 0.0;
    for (Eigen::Index l = 0; l < points.cols(); ++l) {
        double wr = weights[l] * rho[l];
        num += wr * f(points.col(l));
        den += wr;
    }
    if (!(den > 0)) throw NumericalError("expectation: wavefunction has zero mass");
    return num / den;
}

Points particle_ensemble(const BenchmarkSystem& sys, const Points& initial, double t, double dt) {
    Points out = initial;
    for (Eigen::Index l = 0; l < out.cols(); ++l) out.col(l) = flow(sys, initial.col(l), t, dt);
    return out;
}

Points particle_ensemble(const BenchmarkSystem& sys, const Sampler& density0, std::size_t count, double t,
                         double dt) {
    Points init = density0(count);
    if (static_cast<std::size_t>(init.cols()) != count)
        throw PreconditionError("particle_ensemble: sampler returned the wrong count");
    return particle_ensemble(sys, init, t, dt);
}

ComplexFunction gaussian_superposition(const std::vector<Vec>& centers, double bandwidth) {
    if (!(bandwidth > 0)) throw ConfigError("gaussian bandwidth must be > 0");
    const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
    return [centers, inv](VecIn x) {
        double s = 0.0;
        for (const auto& mu : centers) s += std::exp(-(x - mu).squaredNorm() * inv);
        return cd(s, 0.0);
    };
}

void write_snapshot_csv(const std::string& path, const Wavefunction& psi, const Domain& domain, int grid) {
    if (grid < 2) throw PreconditionError("snapshot grid must be >= 2");
    if (domain.box.dim() != 2) throw PreconditionError("snapshot export supports d = 2");
    CVec u = psi.original_coeffs();
    Vec phi(psi.dict->size());
    auto out = open_output(path);
    write_csv_row(out, {"x1", "x2", "re_psi", "im_psi", "rho"});
    Vec x(2);
    for (int a = 0; a < grid; ++a)
        for (int b = 0; b < grid; ++b) {
            x[0] = domain.box.lower[0] + (domain.box.upper[0] - domain.box.lower[0]) * a / (grid - 1);
            x[1] = domain.box.lower[1] + (domain.box.upper[1] - domain.box.lower[1]) * b / (grid - 1);
            if (!domain.indicator(x)) {
                write_csv_row(out, {format_double(x[0]), format_double(x[1]), "", "", ""});
                continue;
            }
            psi.dict->eval(x, phi);
            cd v = (phi.cast<cd>().array() * u.array()).sum();
            write_csv_row(out, {format_double(x[0]), format_double(x[1]), format_double(v.real()),
                                format_double(v.imag()), format_double(std::norm(v))});
        }
}

std::string snapshot_filename(const std::string& name, double t) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", t);
    return name + "_t" + buf + ".csv";
}

}  // namespace kvn
