#include "m3fas/ops.hpp"

#include <algorithm>
#include <cmath>

namespace m3fas {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConst = Eigen::Map<const RowMat>;

void accum_grad(const Tensor& t, const Eigen::ArrayXd& g) {
    if (!t.requires_grad()) return;
    t.ensure_grad();
    t.grad() += g;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

int normalize_axis(int axis, std::size_t rank) {
    int a = axis < 0 ? axis + int(rank) : axis;
    require(a >= 0 && a < int(rank), "axis out of range");
    return a;
}

double stable_sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::from_array(a.shape(), a.value() + b.value());
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(a, out.grad());
            accum_grad(b, out.grad());
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::from_array(a.shape(), a.value() - b.value());
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(a, out.grad());
            accum_grad(b, -out.grad());
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::from_array(a.shape(), a.value() * b.value());
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(a, out.grad() * b.value());
            accum_grad(b, out.grad() * a.value());
        });
    }
    return out;
}

Tensor scalar_mul(const Tensor& x, double c) {
    Tensor out = Tensor::from_array(x.shape(), x.value() * c);
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, c]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, out.grad() * c);
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    Tensor out = Tensor::scalar(x.value().sum());
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, Eigen::ArrayXd::Constant(x.size(), out.grad()[0]));
        });
    }
    return out;
}

Tensor mean(const Tensor& x) {
    require(x.size() > 0, "mean of empty tensor");
    return scalar_mul(sum(x), 1.0 / double(x.size()));
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::from_array(x.shape(), x.value().cwiseMax(0.0));
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, out.grad() * (x.value() > 0.0).cast<double>());
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Eigen::ArrayXd y(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x.value()[i]);
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, out.grad() * out.value() * (1.0 - out.value()));
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    const int a = normalize_axis(axis, x.rank());
    const auto& dims = x.shape();
    Eigen::Index outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= dims[std::size_t(i)];
    for (std::size_t i = std::size_t(a) + 1; i < dims.size(); ++i) inner *= dims[i];
    const Eigen::Index n = dims[std::size_t(a)];
    require(n > 0, "softmax over empty axis");

    Eigen::ArrayXd y(x.size());
    const Eigen::ArrayXd& v = x.value();
    for (Eigen::Index o = 0; o < outer; ++o)
        for (Eigen::Index i = 0; i < inner; ++i) {
            const Eigen::Index base = o * n * inner + i;
            double mx = v[base];
            for (Eigen::Index j = 1; j < n; ++j) mx = std::max(mx, v[base + j * inner]);
            double z = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                const double e = std::exp(v[base + j * inner] - mx);
                y[base + j * inner] = e;
                z += e;
            }
            for (Eigen::Index j = 0; j < n; ++j) y[base + j * inner] /= z;
        }
    Tensor out = Tensor::from_array(x.shape(), std::move(y));
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, outer, inner, n]() mutable {
            if (!out.has_grad()) return;
            const Eigen::ArrayXd& yv = out.value();
            const Eigen::ArrayXd& g = out.grad();
            Eigen::ArrayXd dx(yv.size());
            for (Eigen::Index o = 0; o < outer; ++o)
                for (Eigen::Index i = 0; i < inner; ++i) {
                    const Eigen::Index base = o * n * inner + i;
                    double dot = 0.0;
                    for (Eigen::Index j = 0; j < n; ++j)
                        dot += g[base + j * inner] * yv[base + j * inner];
                    for (Eigen::Index j = 0; j < n; ++j)
                        dx[base + j * inner] =
                            yv[base + j * inner] * (g[base + j * inner] - dot);
                }
            accum_grad(x, dx);
        });
    }
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    require(a.rank() == b.rank() && (a.rank() == 2 || a.rank() == 3),
            "matmul: operands must both be 2-d or both 3-d, got " + shape_str(a.shape()) +
                " and " + shape_str(b.shape()));
    const bool batched = a.rank() == 3;
    const Eigen::Index n_batch = batched ? a.dim(0) : 1;
    if (batched)
        require(b.dim(0) == n_batch, "matmul: batch size mismatch " + shape_str(a.shape()) +
                                         " vs " + shape_str(b.shape()));
    const std::size_t off = batched ? 1 : 0;
    const Eigen::Index ma = a.dim(off), ka = a.dim(off + 1);
    const Eigen::Index kb = b.dim(off), nb = b.dim(off + 1);
    const Eigen::Index m = transpose_a ? ka : ma;
    const Eigen::Index k = transpose_a ? ma : ka;
    const Eigen::Index k2 = transpose_b ? nb : kb;
    const Eigen::Index n = transpose_b ? kb : nb;
    require(k == k2, "matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));

    Shape out_shape = batched ? Shape{n_batch, m, n} : Shape{m, n};
    Tensor out = Tensor::zeros(out_shape);
    for (Eigen::Index batch = 0; batch < n_batch; ++batch) {
        MapConst A(a.value().data() + batch * ma * ka, ma, ka);
        MapConst B(b.value().data() + batch * kb * nb, kb, nb);
        MapMat C(out.value().data() + batch * m * n, m, n);
        if (!transpose_a && !transpose_b)
            C.noalias() = A * B;
        else if (!transpose_a && transpose_b)
            C.noalias() = A * B.transpose();
        else if (transpose_a && !transpose_b)
            C.noalias() = A.transpose() * B;
        else
            C.noalias() = A.transpose() * B.transpose();
    }
    if (detail::tracking({&a, &b})) {
        out.set_requires_grad(true);
        active_tape()->record(
            [a, b, out, transpose_a, transpose_b, n_batch, ma, ka, kb, nb, m, n]() mutable {
                if (!out.has_grad()) return;
                if (a.requires_grad()) a.ensure_grad();
                if (b.requires_grad()) b.ensure_grad();
                for (Eigen::Index batch = 0; batch < n_batch; ++batch) {
                    MapConst A(a.value().data() + batch * ma * ka, ma, ka);
                    MapConst B(b.value().data() + batch * kb * nb, kb, nb);
                    MapConst G(out.grad().data() + batch * m * n, m, n);
                    if (a.requires_grad()) {
                        MapMat dA(a.grad().data() + batch * ma * ka, ma, ka);
                        if (!transpose_a)
                            dA.noalias() += transpose_b ? (G * B).eval() : (G * B.transpose()).eval();
                        else
                            dA.noalias() +=
                                transpose_b ? (B.transpose() * G.transpose()).eval()
                                            : (B * G.transpose()).eval();
                    }
                    if (b.requires_grad()) {
                        MapMat dB(b.grad().data() + batch * kb * nb, kb, nb);
                        if (!transpose_b)
                            dB.noalias() += transpose_a ? (A * G).eval() : (A.transpose() * G).eval();
                        else
                            dB.noalias() +=
                                transpose_a ? (G.transpose() * A.transpose()).eval()
                                            : (G.transpose() * A).eval();
                    }
                }
            });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require(x.rank() == 2 && w.rank() == 2, "linear: x and w must be 2-d");
    require(x.dim(1) == w.dim(0), "linear: input width " + shape_str(x.shape()) +
                                      " does not match weight " + shape_str(w.shape()));
    const Eigen::Index B = x.dim(0), in = x.dim(1), out_w = w.dim(1);
    if (bias.defined())
        require(bias.rank() == 1 && bias.dim(0) == out_w,
                "linear: bias shape " + shape_str(bias.shape()) + " does not match output " +
                    std::to_string(out_w));

    Tensor out = Tensor::zeros({B, out_w});
    {
        MapConst X(x.value().data(), B, in);
        MapConst W(w.value().data(), in, out_w);
        MapMat O(out.value().data(), B, out_w);
        O.noalias() = X * W;
        if (bias.defined())
            O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), out_w);
    }
    if (detail::tracking({&x, &w, &bias})) {
        out.set_requires_grad(true);
        Tensor bias_copy = bias;
        active_tape()->record([x, w, bias_copy, out, B, in, out_w]() mutable {
            if (!out.has_grad()) return;
            MapConst G(out.grad().data(), B, out_w);
            if (x.requires_grad()) {
                x.ensure_grad();
                MapMat dX(x.grad().data(), B, in);
                MapConst W(w.value().data(), in, out_w);
                dX.noalias() += G * W.transpose();
            }
            if (w.requires_grad()) {
                w.ensure_grad();
                MapMat dW(w.grad().data(), in, out_w);
                MapConst X(x.value().data(), B, in);
                dW.noalias() += X.transpose() * G;
            }
            if (bias_copy.defined() && bias_copy.requires_grad()) {
                bias_copy.ensure_grad();
                Eigen::Map<Eigen::RowVectorXd> db(bias_copy.grad().data(), out_w);
                db += G.colwise().sum();
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const int a = normalize_axis(axis, parts[0].rank());
    Shape out_shape = parts[0].shape();
    Eigen::Index axis_total = 0;
    for (const Tensor& p : parts) {
        require(p.rank() == parts[0].rank(), "concat: rank mismatch");
        for (std::size_t i = 0; i < out_shape.size(); ++i)
            if (int(i) != a)
                require(p.shape()[i] == out_shape[i],
                        "concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                            shape_str(parts[0].shape()));
        axis_total += p.dim(std::size_t(a));
    }
    out_shape[std::size_t(a)] = axis_total;

    Eigen::Index outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= out_shape[std::size_t(i)];
    for (std::size_t i = std::size_t(a) + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    Tensor out = Tensor::zeros(out_shape);
    Eigen::Index axis_off = 0;
    for (const Tensor& p : parts) {
        const Eigen::Index plen = p.dim(std::size_t(a)) * inner;
        for (Eigen::Index o = 0; o < outer; ++o)
            out.value().segment(o * axis_total * inner + axis_off * inner, plen) =
                p.value().segment(o * plen, plen);
        axis_off += p.dim(std::size_t(a));
    }

    bool track = false;
    for (const Tensor& p : parts) track = track || detail::tracking({&p});
    if (track) {
        out.set_requires_grad(true);
        std::vector<Tensor> captured = parts;
        active_tape()->record([captured, out, outer, inner, axis_total, a]() mutable {
            if (!out.has_grad()) return;
            Eigen::Index axis_off = 0;
            for (Tensor& p : captured) {
                const Eigen::Index plen = p.dim(std::size_t(a)) * inner;
                if (p.requires_grad()) {
                    p.ensure_grad();
                    for (Eigen::Index o = 0; o < outer; ++o)
                        p.grad().segment(o * plen, plen) +=
                            out.grad().segment(o * axis_total * inner + axis_off * inner, plen);
                }
                axis_off += p.dim(std::size_t(a));
            }
        });
    }
    return out;
}

Tensor slice(const Tensor& x, int axis, Eigen::Index start, Eigen::Index len) {
    const int a = normalize_axis(axis, x.rank());
    require(start >= 0 && len > 0 && start + len <= x.dim(std::size_t(a)),
            "slice: range out of bounds for " + shape_str(x.shape()));
    Shape out_shape = x.shape();
    out_shape[std::size_t(a)] = len;
    Eigen::Index outer = 1, inner = 1;
    for (int i = 0; i < a; ++i) outer *= x.shape()[std::size_t(i)];
    for (std::size_t i = std::size_t(a) + 1; i < x.shape().size(); ++i) inner *= x.shape()[i];
    const Eigen::Index n = x.dim(std::size_t(a));

    Tensor out = Tensor::zeros(out_shape);
    for (Eigen::Index o = 0; o < outer; ++o)
        out.value().segment(o * len * inner, len * inner) =
            x.value().segment(o * n * inner + start * inner, len * inner);
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, outer, inner, n, start, len]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            for (Eigen::Index o = 0; o < outer; ++o)
                x.grad().segment(o * n * inner + start * inner, len * inner) +=
                    out.grad().segment(o * len * inner, len * inner);
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, const Shape& new_shape) {
    require(shape_numel(new_shape) == x.size(), "reshape: size mismatch " +
                                                    shape_str(x.shape()) + " -> " +
                                                    shape_str(new_shape));
    Tensor out = Tensor::from_array(new_shape, x.value());
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, out.grad());
        });
    }
    return out;
}

namespace {

// Gather the receptive fields of one sample into a (IC*KH*KW) x (OH*OW)
// matrix. Out-of-range (padding) taps stay zero. The stride-1 inner loop is
// a contiguous row copy.
void im2col(const double* x, Eigen::Index C, Eigen::Index H, Eigen::Index W, int kh, int kw,
            int stride, int padding, Eigen::Index OH, Eigen::Index OW, RowMat& cols) {
    cols.setZero();
    for (Eigen::Index c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const Eigen::Index row = (c * kh + i) * kw + j;
                double* out_row = cols.data() + row * OH * OW;
                for (Eigen::Index oh = 0; oh < OH; ++oh) {
                    const Eigen::Index ih = oh * stride - padding + i;
                    if (ih < 0 || ih >= H) continue;
                    const double* in_row = x + (c * H + ih) * W;
                    if (stride == 1) {
                        const Eigen::Index iw0 = j - padding;
                        const Eigen::Index ow_lo = std::max<Eigen::Index>(0, -iw0);
                        const Eigen::Index ow_hi = std::min<Eigen::Index>(OW, W - iw0);
                        if (ow_hi > ow_lo)
                            std::copy(in_row + iw0 + ow_lo, in_row + iw0 + ow_hi,
                                      out_row + oh * OW + ow_lo);
                    } else {
                        for (Eigen::Index ow = 0; ow < OW; ++ow) {
                            const Eigen::Index iw = ow * stride - padding + j;
                            if (iw < 0 || iw >= W) continue;
                            out_row[oh * OW + ow] = in_row[iw];
                        }
                    }
                }
            }
}

void col2im_accum(const RowMat& cols, Eigen::Index C, Eigen::Index H, Eigen::Index W, int kh,
                  int kw, int stride, int padding, Eigen::Index OH, Eigen::Index OW, double* dx) {
    for (Eigen::Index c = 0; c < C; ++c)
        for (int i = 0; i < kh; ++i)
            for (int j = 0; j < kw; ++j) {
                const Eigen::Index row = (c * kh + i) * kw + j;
                const double* in_row = cols.data() + row * OH * OW;
                for (Eigen::Index oh = 0; oh < OH; ++oh) {
                    const Eigen::Index ih = oh * stride - padding + i;
                    if (ih < 0 || ih >= H) continue;
                    double* out_row = dx + (c * H + ih) * W;
                    if (stride == 1) {
                        const Eigen::Index iw0 = j - padding;
                        const Eigen::Index ow_lo = std::max<Eigen::Index>(0, -iw0);
                        const Eigen::Index ow_hi = std::min<Eigen::Index>(OW, W - iw0);
                        for (Eigen::Index ow = ow_lo; ow < ow_hi; ++ow)
                            out_row[iw0 + ow] += in_row[oh * OW + ow];
                    } else {
                        for (Eigen::Index ow = 0; ow < OW; ++ow) {
                            const Eigen::Index iw = ow * stride - padding + j;
                            if (iw < 0 || iw >= W) continue;
                            out_row[iw] += in_row[oh * OW + ow];
                        }
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding) {
    require(x.rank() == 4, "conv2d: input must be (B,C,H,W), got " + shape_str(x.shape()));
    require(w.rank() == 4, "conv2d: weight must be (OC,IC,KH,KW), got " + shape_str(w.shape()));
    require(stride >= 1 && padding >= 0, "conv2d: bad stride/padding");
    const Eigen::Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const Eigen::Index OC = w.dim(0), IC = w.dim(1);
    const int kh = int(w.dim(2)), kw = int(w.dim(3));
    require(IC == C, "conv2d: input channels " + shape_str(x.shape()) +
                         " do not match weight " + shape_str(w.shape()));
    const Eigen::Index OH = (H + 2 * padding - kh) / stride + 1;
    const Eigen::Index OW = (W + 2 * padding - kw) / stride + 1;
    require(OH > 0 && OW > 0, "conv2d: kernel larger than padded input, " +
                                  shape_str(x.shape()) + " with " + shape_str(w.shape()));
    if (bias.defined())
        require(bias.rank() == 1 && bias.dim(0) == OC,
                "conv2d: bias shape " + shape_str(bias.shape()) + " does not match " +
                    std::to_string(OC) + " output channels");

    const Eigen::Index K = C * kh * kw;
    const Eigen::Index N = OH * OW;
    Tensor out = Tensor::zeros({B, OC, OH, OW});
    {
        MapConst Wm(w.value().data(), OC, K);
        RowMat cols(K, N);
        for (Eigen::Index b = 0; b < B; ++b) {
            im2col(x.value().data() + b * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW,
                   cols);
            MapMat O(out.value().data() + b * OC * N, OC, N);
            O.noalias() = Wm * cols;
            if (bias.defined())
                O.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), OC);
        }
    }
    if (detail::tracking({&x, &w, &bias})) {
        out.set_requires_grad(true);
        Tensor bias_copy = bias;
        active_tape()->record(
            [x, w, bias_copy, out, B, C, H, W, OC, kh, kw, stride, padding, OH, OW, K,
             N]() mutable {
                if (!out.has_grad()) return;
                RowMat cols(K, N);
                RowMat dcols(K, N);
                MapConst Wm(w.value().data(), OC, K);
                if (x.requires_grad()) x.ensure_grad();
                if (w.requires_grad()) w.ensure_grad();
                for (Eigen::Index b = 0; b < B; ++b) {
                    MapConst G(out.grad().data() + b * OC * N, OC, N);
                    if (w.requires_grad()) {
                        im2col(x.value().data() + b * C * H * W, C, H, W, kh, kw, stride,
                               padding, OH, OW, cols);
                        MapMat dW(w.grad().data(), OC, K);
                        dW.noalias() += G * cols.transpose();
                    }
                    if (x.requires_grad()) {
                        dcols.noalias() = Wm.transpose() * G;
                        col2im_accum(dcols, C, H, W, kh, kw, stride, padding, OH, OW,
                                     x.grad().data() + b * C * H * W);
                    }
                }
                if (bias_copy.defined() && bias_copy.requires_grad()) {
                    bias_copy.ensure_grad();
                    for (Eigen::Index b = 0; b < B; ++b) {
                        MapConst G(out.grad().data() + b * OC * N, OC, N);
                        Eigen::Map<Eigen::VectorXd> db(bias_copy.grad().data(), OC);
                        db += G.rowwise().sum();
                    }
                }
            });
    }
    return out;
}

namespace {

Tensor maxpool_impl(const Tensor& x, std::function<std::pair<Eigen::Index, Eigen::Index>(
                                         Eigen::Index, Eigen::Index)> h_window,
                    std::function<std::pair<Eigen::Index, Eigen::Index>(Eigen::Index,
                                                                        Eigen::Index)> w_window,
                    Eigen::Index OH, Eigen::Index OW) {
    const Eigen::Index B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out = Tensor::zeros({B, C, OH, OW});
    auto argmax = std::make_shared<std::vector<Eigen::Index>>(std::size_t(B * C * OH * OW));
    const double* xv = x.value().data();
    double* ov = out.value().data();
    Eigen::Index oi = 0;
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < C; ++c) {
            const Eigen::Index plane = (b * C + c) * H * W;
            for (Eigen::Index oh = 0; oh < OH; ++oh) {
                const auto [h0, h1] = h_window(oh, H);
                for (Eigen::Index ow = 0; ow < OW; ++ow) {
                    const auto [w0, w1] = w_window(ow, W);
                    Eigen::Index best = plane + h0 * W + w0;
                    double best_v = xv[best];
                    for (Eigen::Index hh = h0; hh < h1; ++hh)
                        for (Eigen::Index ww = w0; ww < w1; ++ww) {
                            const Eigen::Index idx = plane + hh * W + ww;
                            if (xv[idx] > best_v) {
                                best_v = xv[idx];
                                best = idx;
                            }
                        }
                    ov[oi] = best_v;
                    (*argmax)[std::size_t(oi)] = best;
                    ++oi;
                }
            }
        }
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, argmax]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            const Eigen::ArrayXd& g = out.grad();
            for (Eigen::Index i = 0; i < g.size(); ++i)
                x.grad()[(*argmax)[std::size_t(i)]] += g[i];
        });
    }
    return out;
}

}  // namespace

Tensor maxpool2d(const Tensor& x, int k) {
    require(x.rank() == 4, "maxpool2d: input must be (B,C,H,W)");
    require(k >= 1, "maxpool2d: window must be >= 1");
    const Eigen::Index OH = x.dim(2) / k, OW = x.dim(3) / k;
    require(OH > 0 && OW > 0,
            "maxpool2d: window " + std::to_string(k) + " too large for " + shape_str(x.shape()));
    auto win = [k](Eigen::Index o, Eigen::Index) {
        return std::pair<Eigen::Index, Eigen::Index>{o * k, o * k + k};
    };
    return maxpool_impl(x, win, win, OH, OW);
}

Tensor adaptive_maxpool2d(const Tensor& x, Eigen::Index out_h, Eigen::Index out_w) {
    require(x.rank() == 4, "adaptive_maxpool2d: input must be (B,C,H,W)");
    require(out_h >= 1 && out_w >= 1 && out_h <= x.dim(2) && out_w <= x.dim(3),
            "adaptive_maxpool2d: bad output size for " + shape_str(x.shape()));
    auto make_win = [](Eigen::Index out_n) {
        return [out_n](Eigen::Index o, Eigen::Index n) {
            const Eigen::Index lo = o * n / out_n;
            const Eigen::Index hi = ((o + 1) * n + out_n - 1) / out_n;
            return std::pair<Eigen::Index, Eigen::Index>{lo, hi};
        };
    };
    return maxpool_impl(x, make_win(out_h), make_win(out_w), out_h, out_w);
}

Tensor global_avgpool(const Tensor& x) {
    require(x.rank() == 4, "global_avgpool: input must be (B,C,H,W)");
    const Eigen::Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({B, C});
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < C; ++c)
            out.value()[b * C + c] = x.value().segment((b * C + c) * HW, HW).mean();
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, B, C, HW]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index c = 0; c < C; ++c)
                    x.grad().segment((b * C + c) * HW, HW) +=
                        out.grad()[b * C + c] / double(HW);
        });
    }
    return out;
}

Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tensor& running_mean, Tensor& running_var, bool training, double momentum,
                   double eps) {
    require(x.rank() == 4, "batchnorm2d: input must be (B,C,H,W)");
    const Eigen::Index B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    require(gamma.size() == C && beta.size() == C && running_mean.size() == C &&
                running_var.size() == C,
            "batchnorm2d: parameter size does not match " + std::to_string(C) + " channels");
    const Eigen::Index n = B * HW;

    Eigen::ArrayXd mean_c(C), var_c(C);
    if (training) {
        require(n > 0, "batchnorm2d: empty batch");
        mean_c.setZero();
        var_c.setZero();
        for (Eigen::Index b = 0; b < B; ++b)
            for (Eigen::Index c = 0; c < C; ++c)
                mean_c[c] += x.value().segment((b * C + c) * HW, HW).sum();
        mean_c /= double(n);
        for (Eigen::Index b = 0; b < B; ++b)
            for (Eigen::Index c = 0; c < C; ++c)
                var_c[c] +=
                    (x.value().segment((b * C + c) * HW, HW) - mean_c[c]).square().sum();
        var_c /= double(n);
        // Biased variance everywhere, for self-consistency between the batch
        // statistics and the running estimates.
        running_mean.value() = (1.0 - momentum) * running_mean.value() + momentum * mean_c;
        running_var.value() = (1.0 - momentum) * running_var.value() + momentum * var_c;
    } else {
        mean_c = running_mean.value();
        var_c = running_var.value();
    }
    const Eigen::ArrayXd invstd = (var_c + eps).rsqrt();

    auto xhat = std::make_shared<Eigen::ArrayXd>(x.size());
    Tensor out = Tensor::zeros(x.shape());
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < C; ++c) {
            const Eigen::Index off = (b * C + c) * HW;
            xhat->segment(off, HW) = (x.value().segment(off, HW) - mean_c[c]) * invstd[c];
            out.value().segment(off, HW) =
                gamma.value()[c] * xhat->segment(off, HW) + beta.value()[c];
        }

    if (detail::tracking({&x, &gamma, &beta})) {
        out.set_requires_grad(true);
        Eigen::ArrayXd invstd_copy = invstd;
        active_tape()->record(
            [x, gamma, beta, out, xhat, invstd_copy, training, B, C, HW, n]() mutable {
                if (!out.has_grad()) return;
                const Eigen::ArrayXd& g = out.grad();
                for (Eigen::Index c = 0; c < C; ++c) {
                    double sum_g = 0.0, sum_gx = 0.0;
                    for (Eigen::Index b = 0; b < B; ++b) {
                        const Eigen::Index off = (b * C + c) * HW;
                        sum_g += g.segment(off, HW).sum();
                        sum_gx += (g.segment(off, HW) * xhat->segment(off, HW)).sum();
                    }
                    if (gamma.requires_grad()) {
                        gamma.ensure_grad();
                        gamma.grad()[c] += sum_gx;
                    }
                    if (beta.requires_grad()) {
                        beta.ensure_grad();
                        beta.grad()[c] += sum_g;
                    }
                    if (x.requires_grad()) {
                        x.ensure_grad();
                        const double gm = gamma.value()[c];
                        if (training) {
                            // d/dx of the batch-statistics normalization.
                            for (Eigen::Index b = 0; b < B; ++b) {
                                const Eigen::Index off = (b * C + c) * HW;
                                x.grad().segment(off, HW) +=
                                    gm * invstd_copy[c] *
                                    (g.segment(off, HW) - sum_g / double(n) -
                                     xhat->segment(off, HW) * (sum_gx / double(n)));
                            }
                        } else {
                            for (Eigen::Index b = 0; b < B; ++b) {
                                const Eigen::Index off = (b * C + c) * HW;
                                x.grad().segment(off, HW) +=
                                    gm * invstd_copy[c] * g.segment(off, HW);
                            }
                        }
                    }
                }
            });
    }
    return out;
}

Tensor layernorm2d(const Tensor& x, double eps) {
    require(x.rank() == 4, "layernorm2d: input must be (B,C,H,W)");
    const Eigen::Index B = x.dim(0);
    const Eigen::Index per = x.size() / B;
    Tensor out = Tensor::zeros(x.shape());
    auto xhat = std::make_shared<Eigen::ArrayXd>(x.size());
    Eigen::ArrayXd invstd(B);
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto seg = x.value().segment(b * per, per);
        const double mu = seg.mean();
        const double var = (seg - mu).square().mean();
        invstd[b] = 1.0 / std::sqrt(var + eps);
        xhat->segment(b * per, per) = (seg - mu) * invstd[b];
        out.value().segment(b * per, per) = xhat->segment(b * per, per);
    }
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, xhat, invstd, B, per]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            for (Eigen::Index b = 0; b < B; ++b) {
                const auto g = out.grad().segment(b * per, per);
                const auto xh = xhat->segment(b * per, per);
                const double gmean = g.mean();
                const double gxmean = (g * xh).mean();
                x.grad().segment(b * per, per) += invstd[b] * (g - gmean - xh * gxmean);
            }
        });
    }
    return out;
}

Tensor lerp_param(const Tensor& a, const Tensor& b, const Tensor& theta) {
    check_same_shape(a, b, "lerp_param");
    require(theta.size() == 1, "lerp_param: theta must be scalar");
    const double t = theta.value()[0];
    Tensor out = Tensor::from_array(a.shape(), (1.0 - t) * a.value() + t * b.value());
    if (detail::tracking({&a, &b, &theta})) {
        out.set_requires_grad(true);
        active_tape()->record([a, b, theta, out, t]() mutable {
            if (!out.has_grad()) return;
            accum_grad(a, out.grad() * (1.0 - t));
            accum_grad(b, out.grad() * t);
            if (theta.requires_grad()) {
                theta.ensure_grad();
                theta.grad()[0] += (out.grad() * (b.value() - a.value())).sum();
            }
        });
    }
    return out;
}

Tensor scale_param(const Tensor& x, const Tensor& gamma) {
    require(gamma.size() == 1, "scale_param: gamma must be scalar");
    const double g = gamma.value()[0];
    Tensor out = Tensor::from_array(x.shape(), x.value() * g);
    if (detail::tracking({&x, &gamma})) {
        out.set_requires_grad(true);
        active_tape()->record([x, gamma, out, g]() mutable {
            if (!out.has_grad()) return;
            accum_grad(x, out.grad() * g);
            if (gamma.requires_grad()) {
                gamma.ensure_grad();
                gamma.grad()[0] += (out.grad() * x.value()).sum();
            }
        });
    }
    return out;
}

Tensor bce_loss(const Tensor& logits, const Eigen::ArrayXd& labels) {
    require(logits.size() == labels.size(),
            "bce_loss: " + std::to_string(logits.size()) + " logits vs " +
                std::to_string(labels.size()) + " labels");
    require(logits.size() > 0, "bce_loss: empty input");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        require(labels[i] == 0.0 || labels[i] == 1.0, "bce_loss: labels must be 0 or 1");

    const Eigen::ArrayXd& z = logits.value();
    // max(z,0) - z*y + log(1 + exp(-|z|)) avoids overflow for large |z|.
    const Eigen::ArrayXd per =
        z.cwiseMax(0.0) - z * labels + (1.0 + (-z.abs()).exp()).log();
    Tensor out = Tensor::scalar(per.mean());
    if (detail::tracking({&logits})) {
        out.set_requires_grad(true);
        Eigen::ArrayXd labels_copy = labels;
        active_tape()->record([logits, out, labels_copy]() mutable {
            if (!out.has_grad()) return;
            if (!logits.requires_grad()) return;
            const double scale = out.grad()[0] / double(logits.size());
            Eigen::ArrayXd dz(logits.size());
            for (Eigen::Index i = 0; i < logits.size(); ++i)
                dz[i] = (stable_sigmoid(logits.value()[i]) - labels_copy[i]) * scale;
            accum_grad(logits, dz);
        });
    }
    return out;
}

Tensor nchw_to_tokens(const Tensor& x) {
    require(x.rank() == 4, "nchw_to_tokens: input must be (B,C,H,W)");
    const Eigen::Index B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({B, P, C});
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index p = 0; p < P; ++p)
                out.value()[(b * P + p) * C + c] = x.value()[(b * C + c) * P + p];
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, B, C, P]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index c = 0; c < C; ++c)
                    for (Eigen::Index p = 0; p < P; ++p)
                        x.grad()[(b * C + c) * P + p] += out.grad()[(b * P + p) * C + c];
        });
    }
    return out;
}

Tensor tokens_to_nchw(const Tensor& x, Eigen::Index channels, Eigen::Index h, Eigen::Index w) {
    require(x.rank() == 3, "tokens_to_nchw: input must be (B,P,C)");
    const Eigen::Index B = x.dim(0), P = x.dim(1), C = x.dim(2);
    require(C == channels && P == h * w,
            "tokens_to_nchw: token shape " + shape_str(x.shape()) + " does not match " +
                std::to_string(channels) + "x" + std::to_string(h) + "x" + std::to_string(w));
    Tensor out = Tensor::zeros({B, C, h, w});
    for (Eigen::Index b = 0; b < B; ++b)
        for (Eigen::Index c = 0; c < C; ++c)
            for (Eigen::Index p = 0; p < P; ++p)
                out.value()[(b * C + c) * P + p] = x.value()[(b * P + p) * C + c];
    if (detail::tracking({&x})) {
        out.set_requires_grad(true);
        active_tape()->record([x, out, B, C, P]() mutable {
            if (!out.has_grad()) return;
            if (!x.requires_grad()) return;
            x.ensure_grad();
            for (Eigen::Index b = 0; b < B; ++b)
                for (Eigen::Index c = 0; c < C; ++c)
                    for (Eigen::Index p = 0; p < P; ++p)
                        x.grad()[(b * P + p) * C + c] += out.grad()[(b * C + c) * P + p];
        });
    }
    return out;
}

}  // namespace m3fas
