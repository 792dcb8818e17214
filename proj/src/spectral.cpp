#include "kvn/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kvn/errors.hpp"
#include "kvn/io.hpp"

namespace kvn {

namespace {

void reorder(SpectrumResult& spec, const std::vector<std::size_t>& order) {
    std::vector<cd> vals(order.size());
    CMat vecs(spec.eigenvectors.rows(), static_cast<Eigen::Index>(order.size()));
    for (std::size_t j = 0; j < order.size(); ++j) {
        vals[j] = spec.eigenvalues[order[j]];
        vecs.col(static_cast<Eigen::Index>(j)) = spec.eigenvectors.col(static_cast<Eigen::Index>(order[j]));
    }
    spec.eigenvalues = std::move(vals);
    spec.eigenvectors = std::move(vecs);
}

}  // namespace

SpectrumResult eig_skew(const Mat& Qt, double tol) {
    if (Qt.rows() != Qt.cols()) throw PreconditionError("eig_skew: matrix must be square");
    const double scale = std::max(1.0, Qt.size() ? Qt.cwiseAbs().maxCoeff() : 0.0);
    if (skew_defect(Qt) > tol * scale) throw PreconditionError("eig_skew: matrix is not skew-symmetric");
    const Eigen::Index n = Qt.rows();
    SpectrumResult spec;
    spec.coordinates = Coordinates::Whitened;
    if (n == 0) return spec;

    CMat H = cd(0.0, 1.0) * Qt.cast<cd>();
    Eigen::SelfAdjointEigenSolver<CMat> es(H);
    if (es.info() != Eigen::Success) throw NumericalError("eig_skew: Hermitian eigensolver failed");
    const Vec& h = es.eigenvalues();
    spec.eigenvalues.resize(static_cast<std::size_t>(n));
    for (Eigen::Index j = 0; j < n; ++j) {
        // h is ascending, so h_j pairs with h_{n-1-j}.
        double hs = 0.5 * (h[j] - h[n - 1 - j]);
        spec.eigenvalues[static_cast<std::size_t>(j)] = cd(0.0, -hs);
    }
    spec.eigenvectors = es.eigenvectors();
    for (Eigen::Index j = 0; j < n; ++j) spec.eigenvectors.col(j).normalize();

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double ia = spec.eigenvalues[a].imag(), ib = spec.eigenvalues[b].imag();
        if (std::abs(ia) != std::abs(ib)) return std::abs(ia) < std::abs(ib);
        return ia > ib;
    });
    reorder(spec, order);
    return spec;
}

SpectrumResult eig_general(const Mat& M, int max_iterations) {
    if (M.rows() != M.cols()) throw PreconditionError("eig_general: matrix must be square");
    if (!M.allFinite()) throw PreconditionError("eig_general: non-finite entries");
    const Eigen::Index n = M.rows();
    SpectrumResult spec;
    spec.coordinates = Coordinates::Original;
    if (n == 0) return spec;

    Eigen::EigenSolver<Mat> es;
    const int iters = max_iterations > 0 ? max_iterations : static_cast<int>(40 * n);
    es.setMaxIterations(iters);
    es.compute(M, true);
    if (es.info() != Eigen::Success) throw ConvergenceError("eig_general: QR iteration did not converge", iters);
    const auto& ev = es.eigenvalues();
    spec.eigenvalues.assign(ev.data(), ev.data() + n);
    spec.eigenvectors = es.eigenvectors();
    for (Eigen::Index j = 0; j < n; ++j) spec.eigenvectors.col(j).normalize();

    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const cd& x = spec.eigenvalues[a];
        const cd& y = spec.eigenvalues[b];
        if (x.real() != y.real()) return x.real() > y.real();
        if (std::abs(x.imag()) != std::abs(y.imag())) return std::abs(x.imag()) < std::abs(y.imag());
        return x.imag() > y.imag();
    });
    reorder(spec, order);
    return spec;
}

double residual_score(const GeneratorMatrices& gen, cd nu, const CVec& v) {
    if (!gen.has_kvn()) throw PreconditionError("residual_score: KvN columns were not assembled");
    if (v.size() != gen.n()) throw PreconditionError("residual_score: coefficient length mismatch");
    if (v.squaredNorm() == 0) throw PreconditionError("residual_score: v must be nonzero");
    const double vGv = (v.adjoint() * gen.G.cast<cd>() * v)(0, 0).real();
    if (!(vGv > 0)) throw NumericalError("residual_score: v*Gv <= 0, score undefined");
    const CMat Bc = gen.B.cast<cd>();
    const cd vCv = (v.adjoint() * gen.C.cast<cd>() * v)(0, 0);
    const cd vBv = (v.adjoint() * Bc * v)(0, 0);
    const cd vBtv = (v.adjoint() * Bc.transpose() * v)(0, 0);
    const double num = (vCv - std::conj(nu) * vBv - nu * vBtv).real() + std::norm(nu) * vGv;
    return std::sqrt(std::max(0.0, num) / vGv);
}

CVec original_coefficients(const SpectrumResult& spec, const WhitenedRepresentation* white, std::size_t j) {
    if (j >= spec.size()) throw PreconditionError("eigenvector index out of range");
    CVec v = spec.eigenvectors.col(static_cast<Eigen::Index>(j));
    if (spec.coordinates == Coordinates::Whitened) {
        if (!white) throw PreconditionError("whitened eigenvectors need the whitening transform");
        return white->T.cast<cd>() * v;
    }
    return v;
}

void score_spectrum(SpectrumResult& spec, const GeneratorMatrices& gen, const WhitenedRepresentation* white) {
    spec.residuals.resize(spec.size());
    for (std::size_t j = 0; j < spec.size(); ++j)
        spec.residuals[j] = residual_score(gen, spec.eigenvalues[j], original_coefficients(spec, white, j));
}

SpectrumResult kvn_direct_spectrum(const GeneratorMatrices& gen, const WhitenedRepresentation& white) {
    if (!gen.has_kvn()) throw PreconditionError("kvn_direct_spectrum: KvN columns were not assembled");
    Mat K = white.T.transpose() * gen.B * white.T;
    SpectrumResult spec = eig_general(K);
    spec.eigenvectors = white.T.cast<cd>() * spec.eigenvectors;
    for (Eigen::Index j = 0; j < spec.eigenvectors.cols(); ++j) spec.eigenvectors.col(j).normalize();
    spec.coordinates = Coordinates::Original;
    score_spectrum(spec, gen, nullptr);
    return spec;
}

SpectrumResult filter_spectrum(const SpectrumResult& spec, double threshold) {
    if (spec.residuals.size() != spec.size()) throw PreconditionError("filter_spectrum: residuals not populated");
    std::vector<std::size_t> keep;
    for (std::size_t j = 0; j < spec.size(); ++j)
        if (spec.residuals[j] < threshold) keep.push_back(j);
    SpectrumResult out;
    out.coordinates = spec.coordinates;
    out.basis_ref = spec.basis_ref;
    out.eigenvectors.resize(spec.eigenvectors.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
        out.eigenvalues.push_back(spec.eigenvalues[keep[j]]);
        out.residuals.push_back(spec.residuals[keep[j]]);
        out.eigenvectors.col(static_cast<Eigen::Index>(j)) = spec.eigenvectors.col(static_cast<Eigen::Index>(keep[j]));
    }
    return out;
}

CVec eigenfunction_values(const SpectrumResult& spec, const Dictionary& dict, const WhitenedRepresentation* white,
                          std::size_t j, const Points& points) {
    CVec u = original_coefficients(spec, white, j);
    if (u.size() != dict.size()) throw PreconditionError("eigenfunction_values: dictionary size mismatch");
    CVec out(points.cols());
    Vec phi(dict.size());
    for (Eigen::Index l = 0; l < points.cols(); ++l) {
        dict.eval(points.col(l), phi);
        out[l] = (phi.cast<cd>().array() * u.array()).sum();
    }
    return out;
}

void write_spectrum_csv(const std::string& path, const SpectrumResult& spec) {
    auto out = open_output(path);
    write_csv_row(out, {"re", "im", "residual"});
    for (std::size_t j = 0; j < spec.size(); ++j) {
        std::string r = j < spec.residuals.size() ? format_double(spec.residuals[j]) : "";
        write_csv_row(out, {format_double(spec.eigenvalues[j].real()), format_double(spec.eigenvalues[j].imag()), r});
    }
}

void write_eigenfunction_csv(const std::string& path, const SpectrumResult& spec, const Dictionary& dict,
                             const WhitenedRepresentation* white, std::size_t j, const Domain& domain, int grid) {
    if (grid < 2) throw PreconditionError("eigenfunction grid must be >= 2");
    if (domain.box.dim() != 2) throw PreconditionError("eigenfunction export supports d = 2");
    std::vector<double> coords;
    for (int a = 0; a < grid; ++a)
        for (int b = 0; b < grid; ++b) {
            Vec x(2);
            x[0] = domain.box.lower[0] + (domain.box.upper[0] - domain.box.lower[0]) * a / (grid - 1);
            x[1] = domain.box.lower[1] + (domain.box.upper[1] - domain.box.lower[1]) * b / (grid - 1);
            if (domain.indicator(x)) coords.insert(coords.end(), {x[0], x[1]});
        }
    Points pts = Eigen::Map<Mat>(coords.data(), 2, static_cast<Eigen::Index>(coords.size() / 2));
    CVec vals = eigenfunction_values(spec, dict, white, j, pts);
    auto out = open_output(path);
    write_csv_row(out, {"x1", "x2", "re_psi", "im_psi"});
    for (Eigen::Index l = 0; l < pts.cols(); ++l)
        write_csv_row(out, {format_double(pts(0, l)), format_double(pts(1, l)), format_double(vals[l].real()),
                            format_double(vals[l].imag())});
}

}  // namespace kvn
