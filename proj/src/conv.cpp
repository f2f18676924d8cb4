#include <Eigen/Dense>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "frontal/autodiff.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace frontal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

int conv_out(int in, int k, int s, int p) { return (in + 2 * p - k) / s + 1; }

// col is [C*kh*kw, OH*OW], one image.
void im2col(const double* x, int C, int H, int W, int kh, int kw, int s, int p,
            int OH, int OW, double* col) {
    const long ohw = static_cast<long>(OH) * OW;
    for (int c = 0; c < C; ++c) {
        const double* plane = x + static_cast<long>(c) * H * W;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                double* row = col + ((static_cast<long>(c) * kh + i) * kw + j) * ohw;
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * s - p + i;
                    double* dst = row + static_cast<long>(oy) * OW;
                    if (iy < 0 || iy >= H) {
                        std::memset(dst, 0, sizeof(double) * static_cast<size_t>(OW));
                        continue;
                    }
                    const double* src = plane + static_cast<long>(iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * s - p + j;
                        dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-add col [K*kh*kw, H*W] into out [K, OH, OW],
// where (H, W) indexes the columns and (oy, ox) = (y*s - p + i, x*s - p + j).
void col2im_add(const double* col, int K, int kh, int kw, int s, int p, int H,
                int W, int OH, int OW, double* out) {
    const long hw = static_cast<long>(H) * W;
    for (int k = 0; k < K; ++k) {
        double* plane = out + static_cast<long>(k) * OH * OW;
        for (int i = 0; i < kh; ++i) {
            for (int j = 0; j < kw; ++j) {
                const double* row = col + ((static_cast<long>(k) * kh + i) * kw + j) * hw;
                for (int y = 0; y < H; ++y) {
                    int oy = y * s - p + i;
                    if (oy < 0 || oy >= OH) continue;
                    const double* src = row + static_cast<long>(y) * W;
                    double* dst = plane + static_cast<long>(oy) * OW;
                    for (int x = 0; x < W; ++x) {
                        int ox = x * s - p + j;
                        if (ox >= 0 && ox < OW) dst[ox] += src[x];
                    }
                }
            }
        }
    }
}

Var conv2d_raw(const Var& x, const Var& w, int s, int p);
Var tconv_raw(const Var& x, const Var& w, int s, int p, int oph, int opw);
Var wgrad_raw(const Var& a, const Var& b, int kh, int kw, int s, int p);

Var conv2d_raw(const Var& x, const Var& w, int s, int p) {
    const Tensor& tx = x.value();
    const Tensor& tw = w.value();
    if (tx.rank() != 4 || tw.rank() != 4) fail("conv2d", tx.shape_str() + " w " + tw.shape_str());
    int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
    int K = tw.dim(0), kh = tw.dim(2), kw = tw.dim(3);
    if (tw.dim(1) != C)
        fail("conv2d", "input channels " + std::to_string(C) + " vs weight " + tw.shape_str());
    int OH = conv_out(H, kh, s, p), OW = conv_out(W, kw, s, p);
    if (OH < 1 || OW < 1 || H + 2 * p < kh || W + 2 * p < kw)
        fail("conv2d", "kernel does not fit input " + tx.shape_str());

    Tensor out({B, K, OH, OW});
    const long ckk = static_cast<long>(C) * kh * kw;
    const long ohw = static_cast<long>(OH) * OW;
    MapConstMat wm(tw.data(), K, ckk);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        std::vector<double> col(static_cast<size_t>(ckk * ohw));
        im2col(tx.data() + static_cast<long>(b) * C * H * W, C, H, W, kh, kw, s, p, OH, OW,
               col.data());
        MapConstMat cm(col.data(), ckk, ohw);
        MapMat om(out.data() + static_cast<long>(b) * K * ohw, K, ohw);
        om.noalias() = wm * cm;
    }
    return make_op("conv2d", std::move(out), {x, w},
                   [s, p, H, W, kh, kw, OH, OW](const Var& g, const std::vector<Var>& in,
                                                const Var&, const std::vector<char>& want) {
                       std::vector<Var> r(2);
                       if (want[0]) {
                           int oph = H - ((OH - 1) * s - 2 * p + kh);
                           int opw = W - ((OW - 1) * s - 2 * p + kw);
                           r[0] = tconv_raw(g, in[1], s, p, oph, opw);
                       }
                       if (want[1]) r[1] = wgrad_raw(in[0], g, kh, kw, s, p);
                       return r;
                   });
}

Var tconv_raw(const Var& x, const Var& w, int s, int p, int oph, int opw) {
    const Tensor& tx = x.value();
    const Tensor& tw = w.value();
    if (tx.rank() != 4 || tw.rank() != 4)
        fail("conv_transpose2d", tx.shape_str() + " w " + tw.shape_str());
    int B = tx.dim(0), C = tx.dim(1), H = tx.dim(2), W = tx.dim(3);
    int K = tw.dim(1), kh = tw.dim(2), kw = tw.dim(3);
    if (tw.dim(0) != C)
        fail("conv_transpose2d",
             "input channels " + std::to_string(C) + " vs weight " + tw.shape_str());
    if (oph < 0 || oph >= s || opw < 0 || opw >= s)
        fail("conv_transpose2d", "output padding must be in [0, stride)");
    int OH = (H - 1) * s - 2 * p + kh + oph;
    int OW = (W - 1) * s - 2 * p + kw + opw;
    if (OH < 1 || OW < 1) fail("conv_transpose2d", "empty output for " + tx.shape_str());

    Tensor out({B, K, OH, OW});
    const long kkk = static_cast<long>(K) * kh * kw;
    const long hw = static_cast<long>(H) * W;
    MapConstMat wm(tw.data(), C, kkk);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        std::vector<double> col(static_cast<size_t>(kkk * hw));
        MapConstMat xm(tx.data() + static_cast<long>(b) * C * hw, C, hw);
        MapMat cm(col.data(), kkk, hw);
        cm.noalias() = wm.transpose() * xm;
        col2im_add(col.data(), K, kh, kw, s, p, H, W, OH, OW,
                   out.data() + static_cast<long>(b) * K * OH * OW);
    }
    return make_op("conv_transpose2d", std::move(out), {x, w},
                   [s, p, kh, kw](const Var& g, const std::vector<Var>& in, const Var&,
                                  const std::vector<char>& want) {
                       std::vector<Var> r(2);
                       if (want[0]) r[0] = conv2d_raw(g, in[1], s, p);
                       if (want[1]) r[1] = wgrad_raw(g, in[0], kh, kw, s, p);
                       return r;
                   });
}

// Weight gradient of a conv mapping a -> b-shaped outputs: returns
// [Cb, Ca, kh, kw], i.e. sum_batch b x im2col(a)^T.
Var wgrad_raw(const Var& a, const Var& b, int kh, int kw, int s, int p) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    int B = ta.dim(0), Ca = ta.dim(1), Ha = ta.dim(2), Wa = ta.dim(3);
    int Kb = tb.dim(1), OH = tb.dim(2), OW = tb.dim(3);
    if (tb.dim(0) != B || conv_out(Ha, kh, s, p) != OH || conv_out(Wa, kw, s, p) != OW)
        fail("conv2d_wgrad", ta.shape_str() + " -> " + tb.shape_str());

    const long ckk = static_cast<long>(Ca) * kh * kw;
    const long ohw = static_cast<long>(OH) * OW;
#ifdef _OPENMP
    int nthreads = std::min(omp_get_max_threads(), B);
#else
    int nthreads = 1;
#endif
    std::vector<Tensor> parts(static_cast<size_t>(nthreads), Tensor({Kb, Ca, kh, kw}));
#pragma omp parallel num_threads(nthreads)
    {
#ifdef _OPENMP
        int tid = omp_get_thread_num();
#else
        int tid = 0;
#endif
        MapMat gm(parts[static_cast<size_t>(tid)].data(), Kb, ckk);
        std::vector<double> col(static_cast<size_t>(ckk * ohw));
#pragma omp for schedule(static)
        for (int bi = 0; bi < B; ++bi) {
            im2col(ta.data() + static_cast<long>(bi) * Ca * Ha * Wa, Ca, Ha, Wa, kh, kw, s,
                   p, OH, OW, col.data());
            MapConstMat cm(col.data(), ckk, ohw);
            MapConstMat bm(tb.data() + static_cast<long>(bi) * Kb * ohw, Kb, ohw);
            gm.noalias() += bm * cm.transpose();
        }
    }
    Tensor gw = std::move(parts[0]);
    for (size_t t = 1; t < parts.size(); ++t) {
        double* acc = gw.data();
        const double* src = parts[t].data();
        long n = gw.size();
        for (long i = 0; i < n; ++i) acc[i] += src[i];
    }
    return make_op("conv2d_wgrad", std::move(gw), {a, b},
                   [s, p, kh, kw, Ha, Wa, OH, OW](const Var& g, const std::vector<Var>& in,
                                                  const Var&, const std::vector<char>& want) {
                       std::vector<Var> r(2);
                       if (want[0]) {
                           int oph = Ha - ((OH - 1) * s - 2 * p + kh);
                           int opw = Wa - ((OW - 1) * s - 2 * p + kw);
                           r[0] = tconv_raw(in[1], g, s, p, oph, opw);
                       }
                       if (want[1]) r[1] = conv2d_raw(in[0], g, s, p);
                       return r;
                   });
}

Var add_channel_bias(const Var& y, const Var& bias, int K, const char* op) {
    const Tensor& tb = bias.value();
    if (tb.rank() != 1 || tb.dim(0) != K)
        fail(op, "bias shape " + tb.shape_str() + " for " + std::to_string(K) + " channels");
    return add(y, reshape(bias, {1, K, 1, 1}));
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& bias, int stride, int pad) {
    Var y = conv2d_raw(x, w, stride, pad);
    return add_channel_bias(y, bias, w.value().dim(0), "conv2d");
}

Var conv_transpose2d(const Var& x, const Var& w, const Var& bias, int stride, int pad,
                     int out_pad) {
    Var y = tconv_raw(x, w, stride, pad, out_pad, out_pad);
    return add_channel_bias(y, bias, w.value().dim(1), "conv_transpose2d");
}

Var avg_pool2d(const Var& x, int k) {
    const Tensor& t = x.value();
    if (t.rank() != 4 || t.dim(2) % k != 0 || t.dim(3) % k != 0)
        fail("avg_pool2d", t.shape_str() + " with window " + std::to_string(k));
    Tensor v = avg_pool2d(t, k);
    return make_op("avg_pool2d", std::move(v), {x},
                   [k](const Var& g, const std::vector<Var>& in, const Var&,
                       const std::vector<char>& w) -> std::vector<Var> {
                       std::vector<Var> r(1);
                       if (!w[0]) return r;
                       // Adjoint: replicate each cell over its window / k^2.
                       const Tensor& tg = g.value();
                       int B = tg.dim(0), C = tg.dim(1), GH = tg.dim(2), GW = tg.dim(3);
                       int H = in[0].value().dim(2), W = in[0].value().dim(3);
                       Tensor up({B, C, H, W});
                       double inv = 1.0 / (k * k);
                       for (int b = 0; b < B; ++b)
                           for (int c = 0; c < C; ++c)
                               for (int y = 0; y < H; ++y)
                                   for (int x2 = 0; x2 < W; ++x2)
                                       up.at(b, c, y, x2) =
                                           inv * tg.at(b, c, y / k, x2 / k);
                       (void)GH;
                       (void)GW;
                       // The unpool is linear with adjoint avg_pool2d, which keeps
                       // the pair differentiable to any order.
                       Var gv = g;
                       r[0] = make_op("avg_unpool2d", std::move(up), {gv},
                                      [k](const Var& gg, const std::vector<Var>&,
                                          const Var&, const std::vector<char>& w2) {
                                          std::vector<Var> rr(1);
                                          if (w2[0]) rr[0] = avg_pool2d(gg, k);
                                          return rr;
                                      });
                       return r;
                   });
}

Tensor avg_pool2d(const Tensor& t, int k) {
    if (t.rank() != 4 || t.dim(2) % k != 0 || t.dim(3) % k != 0)
        fail("avg_pool2d", t.shape_str() + " with window " + std::to_string(k));
    int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    int OH = H / k, OW = W / k;
    Tensor v({B, C, OH, OW});
    double inv = 1.0 / (k * k);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < OH; ++oy)
                for (int ox = 0; ox < OW; ++ox) {
                    double acc = 0;
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < k; ++j)
                            acc += t.at(b, c, oy * k + i, ox * k + j);
                    v.at(b, c, oy, ox) = acc * inv;
                }
    return v;
}

}  // namespace frontal
