#include "cfsynth/nn/ops.hpp"

#include "cfsynth/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cfs::nn {

using detail::make_result;
using detail::Node;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

bool needs(const Node& out, std::size_t i) { return out.inputs[i]->requires_grad; }
std::vector<double>& gbuf(const Node& out, std::size_t i) { return out.inputs[i]->grad_buffer(); }

// Fixed summation order. Eigen's vectorized reductions peel by address, so
// their rounding would depend on where the buffer happens to live.
void add_column_sums(const CMapMat& m, double* out) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const double* row = m.data() + r * m.cols();
        for (Eigen::Index c = 0; c < m.cols(); ++c) out[c] += row[c];
    }
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(),
            std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int rank(const Tensor& t) { return static_cast<int>(t.shape().size()); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same(a, b, "add");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!needs(o, k)) continue;
            auto& g = gbuf(o, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same(a, b, "sub");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
        if (needs(o, 0)) {
            auto& g = gbuf(o, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (needs(o, 1)) {
            auto& g = gbuf(o, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mul");
    std::vector<double> out(a.size());
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& o) {
        const auto& av = o.inputs[0]->value;
        const auto& bv = o.inputs[1]->value;
        if (needs(o, 0)) {
            auto& g = gbuf(o, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * bv[i];
        }
        if (needs(o, 1)) {
            auto& g = gbuf(o, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * av[i];
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= s;
    return make_result(a.shape(), std::move(out), {a}, [s](Node& o) {
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * o.grad[i];
    });
}

Tensor silu(const Tensor& x) {
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / (1.0 + std::exp(-xv[i]));
    return make_result(x.shape(), std::move(out), {x}, [](Node& o) {
        const auto& xv = o.inputs[0]->value;
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-xv[i]));
            g[i] += o.grad[i] * (s * (1.0 + xv[i] * (1.0 - s)));
        }
    });
}

Tensor sigmoid(const Tensor& x) {
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
    return make_result(x.shape(), std::move(out), {x}, [](Node& o) {
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * o.value[i] * (1.0 - o.value[i]);
    });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    require(numel(shape) == x.size(), "reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<double> out(x.values().begin(), x.values().end());
    return make_result(shape, std::move(out), {x}, [](Node& o) {
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    });
}

Tensor slice0(const Tensor& x, int begin, int end) {
    require(rank(x) >= 1 && 0 <= begin && begin < end && end <= x.dim(0),
            "slice0: range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " + shape_str(x.shape()));
    const std::size_t row = x.size() / static_cast<std::size_t>(x.dim(0));
    Shape shape = x.shape();
    shape[0] = end - begin;
    auto xv = x.values();
    std::vector<double> out(xv.begin() + static_cast<std::ptrdiff_t>(begin * row),
                            xv.begin() + static_cast<std::ptrdiff_t>(end * row));
    return make_result(shape, std::move(out), {x}, [begin, row](Node& o) {
        auto& g = gbuf(o, 0);
        const std::size_t off = static_cast<std::size_t>(begin) * row;
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[off + i] += o.grad[i];
    });
}

Tensor concat(const Tensor& a, const Tensor& b, int axis) {
    const int r = rank(a);
    if (axis < 0) axis += r;
    require(r == rank(b) && axis >= 0 && axis < r, "concat: bad axis or rank");
    for (int d = 0; d < r; ++d) {
        require(d == axis || a.dim(d) == b.dim(d),
                "concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ off-axis");
    }
    std::size_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(a.dim(d));
    for (int d = axis + 1; d < r; ++d) inner *= static_cast<std::size_t>(a.dim(d));
    const std::size_t na = static_cast<std::size_t>(a.dim(axis)) * inner;
    const std::size_t nb = static_cast<std::size_t>(b.dim(axis)) * inner;
    Shape shape = a.shape();
    shape[static_cast<std::size_t>(axis)] += b.dim(axis);
    std::vector<double> out(outer * (na + nb));
    auto av = a.values(), bv = b.values();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data() + o * na, na, out.data() + o * (na + nb));
        std::copy_n(bv.data() + o * nb, nb, out.data() + o * (na + nb) + na);
    }
    return make_result(shape, std::move(out), {a, b}, [outer, na, nb](Node& o) {
        if (needs(o, 0)) {
            auto& g = gbuf(o, 0);
            for (std::size_t k = 0; k < outer; ++k)
                for (std::size_t i = 0; i < na; ++i) g[k * na + i] += o.grad[k * (na + nb) + i];
        }
        if (needs(o, 1)) {
            auto& g = gbuf(o, 1);
            for (std::size_t k = 0; k < outer; ++k)
                for (std::size_t i = 0; i < nb; ++i) g[k * nb + i] += o.grad[k * (na + nb) + na + i];
        }
    });
}

Tensor permute01(const Tensor& x) {
    require(rank(x) >= 2, "permute01: rank < 2");
    const std::size_t A = static_cast<std::size_t>(x.dim(0));
    const std::size_t B = static_cast<std::size_t>(x.dim(1));
    const std::size_t inner = x.size() / (A * B);
    Shape shape = x.shape();
    std::swap(shape[0], shape[1]);
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < A; ++i)
        for (std::size_t j = 0; j < B; ++j)
            std::copy_n(xv.data() + (i * B + j) * inner, inner, out.data() + (j * A + i) * inner);
    return make_result(shape, std::move(out), {x}, [A, B, inner](Node& o) {
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < A; ++i)
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t c = 0; c < inner; ++c) g[(i * B + j) * inner + c] += o.grad[(j * A + i) * inner + c];
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(rank(w) == 2 && x.dim(-1) == w.dim(0),
            "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
    const int in = w.dim(0), outc = w.dim(1);
    const int rows = static_cast<int>(x.size() / static_cast<std::size_t>(in));
    if (bias.defined()) require(bias.size() == static_cast<std::size_t>(outc), "linear: bias size");
    Shape shape = x.shape();
    shape.back() = outc;
    std::vector<double> out(static_cast<std::size_t>(rows) * outc);
    MapMat Y(out.data(), rows, outc);
    Y.noalias() = CMapMat(x.values().data(), rows, in) * CMapMat(w.values().data(), in, outc);
    if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), outc);
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return make_result(shape, std::move(out), inputs, [rows, in, outc, has_bias](Node& o) {
        CMapMat dY(o.grad.data(), rows, outc);
        if (needs(o, 0)) {
            MapMat dX(gbuf(o, 0).data(), rows, in);
            dX.noalias() += dY * CMapMat(o.inputs[1]->value.data(), in, outc).transpose();
        }
        if (needs(o, 1)) {
            MapMat dW(gbuf(o, 1).data(), in, outc);
            dW.noalias() += CMapMat(o.inputs[0]->value.data(), rows, in).transpose() * dY;
        }
        if (has_bias && needs(o, 2)) {
            add_column_sums(dY, gbuf(o, 2).data());
        }
    });
}

namespace {

struct ConvGeom {
    int B, H, W, C, Ho, Wo, k, stride, pad;
    std::size_t K() const { return static_cast<std::size_t>(k) * k * C; }
    std::size_t P() const { return static_cast<std::size_t>(B) * Ho * Wo; }
};

void im2col(const ConvGeom& g, const double* x, double* cols) {
    const std::size_t K = g.K();
    for (int b = 0; b < g.B; ++b)
        for (int oy = 0; oy < g.Ho; ++oy)
            for (int ox = 0; ox < g.Wo; ++ox) {
                double* row = cols + ((static_cast<std::size_t>(b) * g.Ho + oy) * g.Wo + ox) * K;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        double* dst = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.C;
                        if (iy < 0 || iy >= g.H || ix < 0 || ix >= g.W) {
                            std::fill_n(dst, g.C, 0.0);
                        } else {
                            std::memcpy(dst, x + ((static_cast<std::size_t>(b) * g.H + iy) * g.W + ix) * g.C,
                                        sizeof(double) * static_cast<std::size_t>(g.C));
                        }
                    }
                }
            }
}

void col2im(const ConvGeom& g, const double* cols, double* dx) {
    const std::size_t K = g.K();
    for (int b = 0; b < g.B; ++b)
        for (int oy = 0; oy < g.Ho; ++oy)
            for (int ox = 0; ox < g.Wo; ++ox) {
                const double* row = cols + ((static_cast<std::size_t>(b) * g.Ho + oy) * g.Wo + ox) * K;
                for (int ky = 0; ky < g.k; ++ky) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.H) continue;
                    for (int kx = 0; kx < g.k; ++kx) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix < 0 || ix >= g.W) continue;
                        const double* src = row + (static_cast<std::size_t>(ky) * g.k + kx) * g.C;
                        double* dst = dx + ((static_cast<std::size_t>(b) * g.H + iy) * g.W + ix) * g.C;
                        for (int c = 0; c < g.C; ++c) dst[c] += src[c];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int kernel, int stride, int pad) {
    require(rank(x) == 4, "conv2d: input must be [B,H,W,C], got " + shape_str(x.shape()));
    ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 0, 0, kernel, stride, pad};
    require(kernel >= 1 && stride >= 1 && pad >= 0, "conv2d: bad geometry");
    g.Ho = (g.H + 2 * pad - kernel) / stride + 1;
    g.Wo = (g.W + 2 * pad - kernel) / stride + 1;
    require(g.Ho > 0 && g.Wo > 0, "conv2d: output would be empty");
    require(rank(w) == 2 && static_cast<std::size_t>(w.dim(0)) == g.K(),
            "conv2d: weight " + shape_str(w.shape()) + " incompatible with input " + shape_str(x.shape()));
    const int outc = w.dim(1);
    if (bias.defined()) require(bias.size() == static_cast<std::size_t>(outc), "conv2d: bias size");

    const std::size_t K = g.K(), P = g.P();
    std::vector<double> cols;
    const double* colp;
    if (kernel == 1 && stride == 1 && pad == 0) {
        colp = x.values().data();
    } else {
        cols.resize(P * K);
        im2col(g, x.values().data(), cols.data());
        colp = cols.data();
    }
    std::vector<double> out(P * static_cast<std::size_t>(outc));
    MapMat Y(out.data(), static_cast<Eigen::Index>(P), outc);
    Y.noalias() = CMapMat(colp, static_cast<Eigen::Index>(P), static_cast<Eigen::Index>(K)) *
                  CMapMat(w.values().data(), static_cast<Eigen::Index>(K), outc);
    if (bias.defined()) Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.values().data(), outc);

    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    const bool direct = cols.empty();
    return make_result({g.B, g.Ho, g.Wo, outc}, std::move(out), inputs,
                       [g, outc, has_bias, direct, cols = std::move(cols)](Node& o) {
                           const auto K = static_cast<Eigen::Index>(g.K());
                           const auto P = static_cast<Eigen::Index>(g.P());
                           CMapMat dY(o.grad.data(), P, outc);
                           const double* colp = direct ? o.inputs[0]->value.data() : cols.data();
                           if (needs(o, 1)) {
                               MapMat dW(gbuf(o, 1).data(), K, outc);
                               dW.noalias() += CMapMat(colp, P, K).transpose() * dY;
                           }
                           if (has_bias && needs(o, 2)) {
                               add_column_sums(dY, gbuf(o, 2).data());
                           }
                           if (needs(o, 0)) {
                               CMapMat Wm(o.inputs[1]->value.data(), K, outc);
                               if (direct) {
                                   MapMat dX(gbuf(o, 0).data(), P, K);
                                   dX.noalias() += dY * Wm.transpose();
                               } else {
                                   RowMat dcols = dY * Wm.transpose();
                                   col2im(g, dcols.data(), gbuf(o, 0).data());
                               }
                           }
                       });
}

Tensor upsample2x(const Tensor& x) {
    require(rank(x) == 4, "upsample2x: input must be [B,H,W,C]");
    const int B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    std::vector<double> out(static_cast<std::size_t>(B) * 4 * H * W * C);
    auto xv = x.values();
    for (int b = 0; b < B; ++b)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
                std::copy_n(xv.data() + ((static_cast<std::size_t>(b) * H + y / 2) * W + xx / 2) * C, C,
                            out.data() + ((static_cast<std::size_t>(b) * 2 * H + y) * 2 * W + xx) * C);
    return make_result({B, 2 * H, 2 * W, C}, std::move(out), {x}, [B, H, W, C](Node& o) {
        auto& g = gbuf(o, 0);
        for (int b = 0; b < B; ++b)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx) {
                    const double* src = o.grad.data() + ((static_cast<std::size_t>(b) * 2 * H + y) * 2 * W + xx) * C;
                    double* dst = g.data() + ((static_cast<std::size_t>(b) * H + y / 2) * W + xx / 2) * C;
                    for (int c = 0; c < C; ++c) dst[c] += src[c];
                }
    });
}

Tensor add_channel(const Tensor& x, const Tensor& e) {
    const int B = x.dim(0), C = x.dim(-1);
    require(rank(e) == 2 && e.dim(1) == C && (e.dim(0) == B || e.dim(0) == 1),
            "add_channel: " + shape_str(e.shape()) + " cannot broadcast onto " + shape_str(x.shape()));
    const std::size_t per = x.size() / static_cast<std::size_t>(B) / static_cast<std::size_t>(C);
    const bool bcast = e.dim(0) == 1 && B != 1;
    std::vector<double> out(x.values().begin(), x.values().end());
    auto ev = e.values();
    for (int b = 0; b < B; ++b) {
        const double* er = ev.data() + (bcast ? 0 : static_cast<std::size_t>(b) * C);
        for (std::size_t s = 0; s < per; ++s) {
            double* row = out.data() + (static_cast<std::size_t>(b) * per + s) * C;
            for (int c = 0; c < C; ++c) row[c] += er[c];
        }
    }
    return make_result(x.shape(), std::move(out), {x, e}, [B, C, per, bcast](Node& o) {
        if (needs(o, 0)) {
            auto& g = gbuf(o, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
        }
        if (needs(o, 1)) {
            auto& g = gbuf(o, 1);
            for (int b = 0; b < B; ++b) {
                double* gr = g.data() + (bcast ? 0 : static_cast<std::size_t>(b) * C);
                for (std::size_t s = 0; s < per; ++s) {
                    const double* row = o.grad.data() + (static_cast<std::size_t>(b) * per + s) * C;
                    for (int c = 0; c < C; ++c) gr[c] += row[c];
                }
            }
        }
    });
}

namespace {

// Normalizes `count` groups of `spatial` rows x `width` contiguous channels.
// Layout: row r of batch b starts at (b*spatial + r)*C; group g covers
// channels [g*width, (g+1)*width).
Tensor normalize_groups(const Tensor& x, int batches, int spatial, int C, int groups, const Tensor& gamma,
                        const Tensor& beta, double eps) {
    require(C % groups == 0, "normalization: channels not divisible by groups");
    require(gamma.size() == static_cast<std::size_t>(C) && beta.size() == static_cast<std::size_t>(C),
            "normalization: affine parameter size");
    const int width = C / groups;
    const double n = static_cast<double>(spatial) * width;
    std::vector<double> xhat(x.size());
    std::vector<double> inv(static_cast<std::size_t>(batches) * groups);
    std::vector<double> out(x.size());
    auto xv = x.values();
    auto gv = gamma.values(), bv = beta.values();
    for (int b = 0; b < batches; ++b)
        for (int grp = 0; grp < groups; ++grp) {
            double m = 0.0;
            for (int s = 0; s < spatial; ++s) {
                const double* row = xv.data() + (static_cast<std::size_t>(b) * spatial + s) * C + grp * width;
                for (int c = 0; c < width; ++c) m += row[c];
            }
            m /= n;
            double var = 0.0;
            for (int s = 0; s < spatial; ++s) {
                const double* row = xv.data() + (static_cast<std::size_t>(b) * spatial + s) * C + grp * width;
                for (int c = 0; c < width; ++c) var += (row[c] - m) * (row[c] - m);
            }
            var /= n;
            const double iv = 1.0 / std::sqrt(var + eps);
            inv[static_cast<std::size_t>(b) * groups + grp] = iv;
            for (int s = 0; s < spatial; ++s) {
                const std::size_t base = (static_cast<std::size_t>(b) * spatial + s) * C + grp * width;
                for (int c = 0; c < width; ++c) {
                    const double h = (xv[base + c] - m) * iv;
                    xhat[base + c] = h;
                    out[base + c] = h * gv[grp * width + c] + bv[grp * width + c];
                }
            }
        }
    return make_result(x.shape(), std::move(out), {x, gamma, beta},
                       [=, xhat = std::move(xhat), inv = std::move(inv)](Node& o) {
                           const auto& gv = o.inputs[1]->value;
                           if (needs(o, 1)) {
                               auto& dg = gbuf(o, 1);
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   dg[i % static_cast<std::size_t>(C)] += o.grad[i] * xhat[i];
                           }
                           if (needs(o, 2)) {
                               auto& db = gbuf(o, 2);
                               for (std::size_t i = 0; i < o.grad.size(); ++i)
                                   db[i % static_cast<std::size_t>(C)] += o.grad[i];
                           }
                           if (!needs(o, 0)) return;
                           auto& dx = gbuf(o, 0);
                           for (int b = 0; b < batches; ++b)
                               for (int grp = 0; grp < groups; ++grp) {
                                   double s1 = 0.0, s2 = 0.0;
                                   for (int s = 0; s < spatial; ++s) {
                                       const std::size_t base =
                                           (static_cast<std::size_t>(b) * spatial + s) * C + grp * width;
                                       for (int c = 0; c < width; ++c) {
                                           const double dh = o.grad[base + c] * gv[grp * width + c];
                                           s1 += dh;
                                           s2 += dh * xhat[base + c];
                                       }
                                   }
                                   const double iv = inv[static_cast<std::size_t>(b) * groups + grp];
                                   for (int s = 0; s < spatial; ++s) {
                                       const std::size_t base =
                                           (static_cast<std::size_t>(b) * spatial + s) * C + grp * width;
                                       for (int c = 0; c < width; ++c) {
                                           const double dh = o.grad[base + c] * gv[grp * width + c];
                                           dx[base + c] += iv / n * (n * dh - s1 - xhat[base + c] * s2);
                                       }
                                   }
                               }
                       });
}

}  // namespace

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta, double eps) {
    require(rank(x) >= 2, "group_norm: rank < 2");
    const int B = x.dim(0), C = x.dim(-1);
    const int spatial = static_cast<int>(x.size() / static_cast<std::size_t>(B) / static_cast<std::size_t>(C));
    return normalize_groups(x, B, spatial, C, groups, gamma, beta, eps);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int C = x.dim(-1);
    const int rows = static_cast<int>(x.size() / static_cast<std::size_t>(C));
    return normalize_groups(x, rows, 1, C, 1, gamma, beta, eps);
}

namespace {

struct AttnGeom {
    int B, N, M, heads, dk, dv;
    bool k_bcast, v_bcast;
};

AttnGeom attn_geom(const Tensor& q, const Tensor& k, const Tensor* v, int heads) {
    require(rank(q) == 3 && rank(k) == 3, "attention: q and k must be [B,N,C]");
    AttnGeom g{};
    g.B = q.dim(0);
    g.N = q.dim(1);
    g.M = k.dim(1);
    g.heads = heads;
    require(heads >= 1 && q.dim(2) % heads == 0 && q.dim(2) == k.dim(2),
            "attention: q " + shape_str(q.shape()) + " / k " + shape_str(k.shape()) + " channel mismatch");
    require(k.dim(0) == g.B || k.dim(0) == 1, "attention: key batch must be 1 or match queries");
    g.dk = q.dim(2) / heads;
    g.k_bcast = k.dim(0) == 1 && g.B != 1;
    if (v != nullptr) {
        require(rank(*v) == 3 && v->dim(1) == g.M && v->dim(2) % heads == 0,
                "attention: values " + shape_str(v->shape()) + " do not match keys " + shape_str(k.shape()));
        require(v->dim(0) == g.B || v->dim(0) == 1, "attention: value batch must be 1 or match queries");
        g.dv = v->dim(2) / heads;
        g.v_bcast = v->dim(0) == 1 && g.B != 1;
    }
    return g;
}

// Copies head h of a [*, rows, heads*d] batch slice into a contiguous matrix.
RowMat head_block(const double* base, int rows, int heads, int d, int h) {
    RowMat m(rows, d);
    for (int r = 0; r < rows; ++r)
        std::copy_n(base + static_cast<std::size_t>(r) * heads * d + static_cast<std::size_t>(h) * d, d,
                    m.data() + static_cast<std::size_t>(r) * d);
    return m;
}

void add_head_block(double* base, const RowMat& m, int heads, int h) {
    const auto rows = static_cast<int>(m.rows());
    const auto d = static_cast<int>(m.cols());
    for (int r = 0; r < rows; ++r) {
        double* dst = base + static_cast<std::size_t>(r) * heads * d + static_cast<std::size_t>(h) * d;
        for (int c = 0; c < d; ++c) dst[c] += m(r, c);
    }
}

void softmax_rows(RowMat& s) {
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const double mx = s.row(r).maxCoeff();
        double total = 0.0;
        for (Eigen::Index c = 0; c < s.cols(); ++c) {
            s(r, c) = std::exp(s(r, c) - mx);
            total += s(r, c);
        }
        s.row(r) /= total;
    }
}

}  // namespace

std::vector<double> attention_probs(const Tensor& q, const Tensor& k, int heads) {
    const AttnGeom g = attn_geom(q, k, nullptr, heads);
    const double sc = 1.0 / std::sqrt(static_cast<double>(g.dk));
    std::vector<double> probs(static_cast<std::size_t>(g.B) * g.heads * g.N * g.M);
    for (int b = 0; b < g.B; ++b)
        for (int h = 0; h < g.heads; ++h) {
            const RowMat Q = head_block(q.values().data() + static_cast<std::size_t>(b) * g.N * g.heads * g.dk, g.N,
                                        g.heads, g.dk, h);
            const RowMat K = head_block(
                k.values().data() + static_cast<std::size_t>(g.k_bcast ? 0 : b) * g.M * g.heads * g.dk, g.M, g.heads,
                g.dk, h);
            RowMat S = (Q * K.transpose()) * sc;
            softmax_rows(S);
            std::copy_n(S.data(), S.size(),
                        probs.data() + (static_cast<std::size_t>(b) * g.heads + h) * g.N * g.M);
        }
    return probs;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
    const AttnGeom g = attn_geom(q, k, &v, heads);
    const double sc = 1.0 / std::sqrt(static_cast<double>(g.dk));
    const std::size_t qstride = static_cast<std::size_t>(g.N) * g.heads * g.dk;
    const std::size_t kstride = static_cast<std::size_t>(g.M) * g.heads * g.dk;
    const std::size_t vstride = static_cast<std::size_t>(g.M) * g.heads * g.dv;
    const std::size_t ostride = static_cast<std::size_t>(g.N) * g.heads * g.dv;
    std::vector<double> probs = attention_probs(q, k, heads);
    std::vector<double> out(static_cast<std::size_t>(g.B) * ostride, 0.0);
    for (int b = 0; b < g.B; ++b)
        for (int h = 0; h < g.heads; ++h) {
            CMapMat P(probs.data() + (static_cast<std::size_t>(b) * g.heads + h) * g.N * g.M, g.N, g.M);
            const RowMat V = head_block(v.values().data() + (g.v_bcast ? 0 : b) * vstride, g.M, g.heads, g.dv, h);
            add_head_block(out.data() + b * ostride, P * V, g.heads, h);
        }
    return make_result(
        {g.B, g.N, g.heads * g.dv}, std::move(out), {q, k, v},
        [g, sc, qstride, kstride, vstride, ostride, probs = std::move(probs)](Node& o) {
            const auto& qv = o.inputs[0]->value;
            const auto& kv = o.inputs[1]->value;
            const auto& vv = o.inputs[2]->value;
            double* dq = needs(o, 0) ? gbuf(o, 0).data() : nullptr;
            double* dk = needs(o, 1) ? gbuf(o, 1).data() : nullptr;
            double* dvp = needs(o, 2) ? gbuf(o, 2).data() : nullptr;
            for (int b = 0; b < g.B; ++b)
                for (int h = 0; h < g.heads; ++h) {
                    CMapMat P(probs.data() + (static_cast<std::size_t>(b) * g.heads + h) * g.N * g.M, g.N, g.M);
                    const RowMat dO = head_block(o.grad.data() + b * ostride, g.N, g.heads, g.dv, h);
                    const std::size_t koff = (g.k_bcast ? 0 : b) * kstride;
                    const std::size_t voff = (g.v_bcast ? 0 : b) * vstride;
                    const RowMat V = head_block(vv.data() + voff, g.M, g.heads, g.dv, h);
                    if (dvp) add_head_block(dvp + voff, P.transpose() * dO, g.heads, h);
                    if (!dq && !dk) continue;
                    RowMat dP = dO * V.transpose();
                    RowMat dS(g.N, g.M);
                    for (int r = 0; r < g.N; ++r) {
                        double dot = 0.0;
                        for (int c = 0; c < g.M; ++c) dot += dP(r, c) * P(r, c);
                        dS.row(r) = (P.row(r).array() * (dP.row(r).array() - dot)).matrix() * sc;
                    }
                    if (dq) {
                        const RowMat K = head_block(kv.data() + koff, g.M, g.heads, g.dk, h);
                        add_head_block(dq + b * qstride, dS * K, g.heads, h);
                    }
                    if (dk) {
                        const RowMat Q = head_block(qv.data() + b * qstride, g.N, g.heads, g.dk, h);
                        add_head_block(dk + koff, dS.transpose() * Q, g.heads, h);
                    }
                }
        });
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& index) {
    require(rank(x) == 3, "gather_rows: input must be [B,K,C]");
    const int B = x.dim(0), K = x.dim(1), C = x.dim(2);
    const int M = static_cast<int>(index.size());
    for (int i : index) require(i >= 0 && i < K, "gather_rows: index out of range");
    std::vector<double> out(static_cast<std::size_t>(B) * M * C);
    auto xv = x.values();
    for (int b = 0; b < B; ++b)
        for (int j = 0; j < M; ++j)
            std::copy_n(xv.data() + (static_cast<std::size_t>(b) * K + index[j]) * C, C,
                        out.data() + (static_cast<std::size_t>(b) * M + j) * C);
    return make_result({B, M, C}, std::move(out), {x}, [B, K, C, M, index](Node& o) {
        auto& g = gbuf(o, 0);
        for (int b = 0; b < B; ++b)
            for (int j = 0; j < M; ++j)
                for (int c = 0; c < C; ++c)
                    g[(static_cast<std::size_t>(b) * K + index[j]) * C + c] +=
                        o.grad[(static_cast<std::size_t>(b) * M + j) * C + c];
    });
}

Tensor repeat0(const Tensor& x, int n) {
    require(rank(x) >= 1 && x.dim(0) == 1 && n >= 1, "repeat0: input must have a leading axis of 1");
    Shape shape = x.shape();
    shape[0] = n;
    const std::size_t m = x.size();
    std::vector<double> out(m * static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) std::copy(x.values().begin(), x.values().end(), out.begin() + static_cast<std::ptrdiff_t>(i * m));
    return make_result(shape, std::move(out), {x}, [m, n](Node& o) {
        auto& g = gbuf(o, 0);
        for (int i = 0; i < n; ++i)
            for (std::size_t k = 0; k < m; ++k) g[k] += o.grad[i * m + k];
    });
}

Tensor mask_tokens(const Tensor& x, const std::vector<double>& mask) {
    const int C = x.dim(-1);
    require(mask.size() * static_cast<std::size_t>(C) == x.size(),
            "mask_tokens: mask has " + std::to_string(mask.size()) + " entries for " + shape_str(x.shape()));
    std::vector<double> out(x.size());
    auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i / static_cast<std::size_t>(C)];
    return make_result(x.shape(), std::move(out), {x}, [mask, C](Node& o) {
        auto& g = gbuf(o, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * mask[i / static_cast<std::size_t>(C)];
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.values()) s += v;
    return make_result({1}, {s}, {x}, [](Node& o) {
        auto& g = gbuf(o, 0);
        for (double& v : g) v += o.grad[0];
    });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mse(const Tensor& a, const Tensor& b) {
    require_same(a, b, "mse");
    const std::size_t n = a.size();
    double s = 0.0;
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < n; ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
    return make_result({1}, {s / static_cast<double>(n)}, {a, b}, [n](Node& o) {
        const auto& av = o.inputs[0]->value;
        const auto& bv = o.inputs[1]->value;
        const double k = 2.0 * o.grad[0] / static_cast<double>(n);
        if (needs(o, 0)) {
            auto& g = gbuf(o, 0);
            for (std::size_t i = 0; i < n; ++i) g[i] += k * (av[i] - bv[i]);
        }
        if (needs(o, 1)) {
            auto& g = gbuf(o, 1);
            for (std::size_t i = 0; i < n; ++i) g[i] -= k * (av[i] - bv[i]);
        }
    });
}

Tensor l1(const Tensor& a, const Tensor& b) {
    require_same(a, b, "l1");
    const std::size_t n = a.size();
    double s = 0.0;
    auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < n; ++i) s += std::abs(av[i] - bv[i]);
    return make_result({1}, {s / static_cast<double>(n)}, {a, b}, [n](Node& o) {
        const auto& av = o.inputs[0]->value;
        const auto& bv = o.inputs[1]->value;
        const double k = o.grad[0] / static_cast<double>(n);
        for (std::size_t side = 0; side < 2; ++side) {
            if (!needs(o, side)) continue;
            auto& g = gbuf(o, side);
            const double sign = side == 0 ? 1.0 : -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = av[i] - bv[i];
                g[i] += sign * k * static_cast<double>((d > 0) - (d < 0));
            }
        }
    });
}

}  // namespace cfs::nn
