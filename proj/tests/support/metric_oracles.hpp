#pragma once

#include "cfsynth/image.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

namespace cfs::testing {

// SSIM by direct 2-D windowed sums, no separable filtering.
inline double ssim_oracle(const Image& p, const Image& g) {
    const int n = 11;
    double w[11][11], s = 0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            w[i][j] = std::exp(-((i - 5.0) * (i - 5.0) + (j - 5.0) * (j - 5.0)) / (2 * 1.5 * 1.5));
            s += w[i][j];
        }
    auto luma = [](const Image& im, int y, int x) {
        return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
    };
    double total = 0;
    int count = 0;
    for (int y = 0; y + n <= p.height; ++y)
        for (int x = 0; x + n <= p.width; ++x) {
            double ma = 0, mb = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    ma += w[i][j] / s * luma(p, y + i, x + j);
                    mb += w[i][j] / s * luma(g, y + i, x + j);
                }
            double va = 0, vb = 0, cv = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < n; ++j) {
                    const double da = luma(p, y + i, x + j) - ma, db = luma(g, y + i, x + j) - mb;
                    va += w[i][j] / s * da * da;
                    vb += w[i][j] / s * db * db;
                    cv += w[i][j] / s * da * db;
                }
            const double c1 = 1e-4, c2 = 9e-4;
            total += (2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++count;
        }
    return total / count;
}

// Frechet distance through an eigendecomposition of S1 S2.
inline double frechet_oracle(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const Eigen::VectorXd m1 = a.colwise().mean(), m2 = b.colwise().mean();
    const Eigen::MatrixXd ca = a.rowwise() - m1.transpose(), cb = b.rowwise() - m2.transpose();
    const Eigen::MatrixXd s1 = ca.transpose() * ca / (a.rows() - 1.0), s2 = cb.transpose() * cb / (b.rows() - 1.0);
    Eigen::EigenSolver<Eigen::MatrixXd> es(s1 * s2);
    double tr = 0;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
    return (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2 * tr;
}

}  // namespace cfs::testing
