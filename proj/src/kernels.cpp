#include "maskgen/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace maskgen::kernels {

// ---------------------------------------------------------------------------
// matmul family
// ---------------------------------------------------------------------------

void matmul_nt(double* out, const double* a, const double* b, int M, int N, int K) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m) {
        const double* arow = a + static_cast<size_t>(m) * K;
        double* orow = out + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const double* brow = b + static_cast<size_t>(n) * K;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            orow[n] = acc;
        }
    }
}

void matmul_nn(double* out, const double* a, const double* b, int M, int N, int K) {
#pragma omp parallel for schedule(static)
    for (int m = 0; m < M; ++m) {
        const double* arow = a + static_cast<size_t>(m) * K;
        double* orow = out + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) orow[n] = 0.0;
        for (int k = 0; k < K; ++k) {
            const double av = arow[k];
            const double* brow = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
}

void matmul_tn_acc(double* out, const double* a, const double* b, int M, int N, int K) {
    // out[k, n] += sum_m a[m, k] * b[m, n]; parallel over rows of out.
#pragma omp parallel for schedule(static)
    for (int k = 0; k < K; ++k) {
        double* orow = out + static_cast<size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const double av = a[static_cast<size_t>(m) * K + k];
            const double* brow = b + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
}

void add_bias(double* x, const double* bias, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        double* row = x + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; ++c) row[c] += bias[c];
    }
}

void bias_grad_acc(double* bias_grad, const double* dy, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cols; ++c) {
        double acc = 0.0;
        for (int r = 0; r < rows; ++r) acc += dy[static_cast<size_t>(r) * cols + c];
        bias_grad[c] += acc;
    }
}

// ---------------------------------------------------------------------------
// layernorm
// ---------------------------------------------------------------------------

static constexpr double kLnEps = 1e-5;

void layernorm_fwd(double* y, double* mean, double* rstd, const double* x,
                   const double* g, const double* b, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        double* yr = y + static_cast<size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xr[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xr[c] - mu;
            var += d * d;
        }
        var /= cols;
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[r] = mu;
        rstd[r] = rs;
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * g[c] + b[c];
    }
}

void layernorm_bwd(double* dx, double* dg_acc, double* db_acc, const double* dy,
                   const double* x, const double* g, const double* mean,
                   const double* rstd, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        const double* dyr = dy + static_cast<size_t>(r) * cols;
        double* dxr = dx + static_cast<size_t>(r) * cols;
        const double mu = mean[r];
        const double rs = rstd[r];
        double sum_dyg = 0.0, sum_dyg_xhat = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * rs;
            const double dyg = dyr[c] * g[c];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
        }
        const double inv = 1.0 / cols;
        for (int c = 0; c < cols; ++c) {
            const double xhat = (xr[c] - mu) * rs;
            const double dyg = dyr[c] * g[c];
            dxr[c] = rs * (dyg - inv * sum_dyg - xhat * inv * sum_dyg_xhat);
        }
    }
    // Parameter grads as column sums; separate pass keeps the accumulation
    // order identical no matter how the row loop above was scheduled.
#pragma omp parallel for schedule(static)
    for (int c = 0; c < cols; ++c) {
        double dg = 0.0, db = 0.0;
        for (int r = 0; r < rows; ++r) {
            const double xhat = (x[static_cast<size_t>(r) * cols + c] - mean[r]) * rstd[r];
            const double dyv = dy[static_cast<size_t>(r) * cols + c];
            dg += dyv * xhat;
            db += dyv;
        }
        dg_acc[c] += dg;
        db_acc[c] += db;
    }
}

// ---------------------------------------------------------------------------
// gelu
// ---------------------------------------------------------------------------

static constexpr double kGeluC = 0.7978845608028654; // sqrt(2/pi)

void gelu_fwd(double* y, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double v = x[i];
        const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
        y[i] = 0.5 * v * (1.0 + t);
    }
}

void gelu_bwd(double* dx, const double* dy, const double* x, size_t n) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double v = x[i];
        const double u = kGeluC * (v + 0.044715 * v * v * v);
        const double t = std::tanh(u);
        const double sech2 = 1.0 - t * t;
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * v * v);
        dx[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du);
    }
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

void softmax_rows(double* y, const double* x, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        double* yr = y + static_cast<size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

void log_softmax_rows(double* y, const double* x, int rows, int cols) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        double* yr = y + static_cast<size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) sum += std::exp(xr[c] - mx);
        const double lse = mx + std::log(sum);
        for (int c = 0; c < cols; ++c) yr[c] = xr[c] - lse;
    }
}

// ---------------------------------------------------------------------------
// conv / pooling
// ---------------------------------------------------------------------------

void conv3x3_fwd(double* y, const double* x, const double* w, const double* b,
                 int cin, int cout, int h, int wd) {
    const size_t plane = static_cast<size_t>(h) * wd;
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        double* yp = y + co * plane;
        const double* wf = w + static_cast<size_t>(co) * cin * 9;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < wd; ++j) {
                double acc = b ? b[co] : 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xp = x + ci * plane;
                    const double* wk = wf + ci * 9;
                    for (int di = -1; di <= 1; ++di) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= h) continue;
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int jj = j + dj;
                            if (jj < 0 || jj >= wd) continue;
                            acc += xp[ii * wd + jj] * wk[(di + 1) * 3 + (dj + 1)];
                        }
                    }
                }
                yp[i * wd + j] = acc;
            }
        }
    }
}

void conv3x3_bwd(double* dx, double* dw_acc, double* db_acc, const double* dy,
                 const double* x, const double* w, int cin, int cout, int h, int wd) {
    const size_t plane = static_cast<size_t>(h) * wd;
    if (dx) {
#pragma omp parallel for schedule(static)
        for (int ci = 0; ci < cin; ++ci) {
            double* dxp = dx + ci * plane;
            for (int i = 0; i < h; ++i) {
                for (int j = 0; j < wd; ++j) {
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co) {
                        const double* dyp = dy + co * plane;
                        const double* wk = w + (static_cast<size_t>(co) * cin + ci) * 9;
                        for (int di = -1; di <= 1; ++di) {
                            const int ii = i - di;
                            if (ii < 0 || ii >= h) continue;
                            for (int dj = -1; dj <= 1; ++dj) {
                                const int jj = j - dj;
                                if (jj < 0 || jj >= wd) continue;
                                acc += dyp[ii * wd + jj] * wk[(di + 1) * 3 + (dj + 1)];
                            }
                        }
                    }
                    dxp[i * wd + j] += acc;
                }
            }
        }
    }
#pragma omp parallel for schedule(static)
    for (int co = 0; co < cout; ++co) {
        const double* dyp = dy + co * plane;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xp = x + ci * plane;
            double* dwk = dw_acc + (static_cast<size_t>(co) * cin + ci) * 9;
            for (int di = -1; di <= 1; ++di) {
                for (int dj = -1; dj <= 1; ++dj) {
                    double acc = 0.0;
                    for (int i = 0; i < h; ++i) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= h) continue;
                        for (int j = 0; j < wd; ++j) {
                            const int jj = j + dj;
                            if (jj < 0 || jj >= wd) continue;
                            acc += dyp[i * wd + j] * xp[ii * wd + jj];
                        }
                    }
                    dwk[(di + 1) * 3 + (dj + 1)] += acc;
                }
            }
        }
        double accb = 0.0;
        for (size_t i = 0; i < plane; ++i) accb += dyp[i];
        db_acc[co] += accb;
    }
}

void avgpool2_fwd(double* y, const double* x, int c, int h, int w) {
    const int ho = h / 2, wo = w / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        const double* xp = x + static_cast<size_t>(ch) * h * w;
        double* yp = y + static_cast<size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j)
                yp[i * wo + j] = 0.25 * (xp[(2 * i) * w + 2 * j] + xp[(2 * i) * w + 2 * j + 1] +
                                         xp[(2 * i + 1) * w + 2 * j] + xp[(2 * i + 1) * w + 2 * j + 1]);
    }
}

void avgpool2_bwd(double* dx, const double* dy, int c, int h, int w) {
    const int ho = h / 2, wo = w / 2;
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < c; ++ch) {
        double* dxp = dx + static_cast<size_t>(ch) * h * w;
        const double* dyp = dy + static_cast<size_t>(ch) * ho * wo;
        for (int i = 0; i < ho; ++i)
            for (int j = 0; j < wo; ++j) {
                const double v = 0.25 * dyp[i * wo + j];
                dxp[(2 * i) * w + 2 * j] += v;
                dxp[(2 * i) * w + 2 * j + 1] += v;
                dxp[(2 * i + 1) * w + 2 * j] += v;
                dxp[(2 * i + 1) * w + 2 * j + 1] += v;
            }
    }
}

// ---------------------------------------------------------------------------
// gaussian blur over a token grid
// ---------------------------------------------------------------------------

static std::vector<double> gaussian_kernel(double sigma, int* radius) {
    const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;
    *radius = r;
    return k;
}

// mirror index with edge repeated: -1 -> 0, n -> n-1
static inline int mirror(int i, int n) {
    if (i < 0) i = -1 - i;
    if (i >= n) i = 2 * n - 1 - i;
    return std::clamp(i, 0, n - 1);
}

void gaussian_blur_grid(double* data, int rows, int cols, int nchan, double sigma) {
    if (sigma == 0.0) return;
    int r;
    const std::vector<double> k = gaussian_kernel(sigma, &r);
#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < nchan; ++ch) {
        std::vector<double> plane(static_cast<size_t>(rows) * cols);
        std::vector<double> tmp(plane.size());
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                plane[i * cols + j] = data[(static_cast<size_t>(i) * cols + j) * nchan + ch];
        // horizontal then vertical pass
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k[d + r] * plane[i * cols + mirror(j + d, cols)];
                tmp[i * cols + j] = acc;
            }
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp[mirror(i + d, rows) * cols + j];
                data[(static_cast<size_t>(i) * cols + j) * nchan + ch] = acc;
            }
    }
}

// ---------------------------------------------------------------------------
// nearest centroid / pairwise distance
// ---------------------------------------------------------------------------

int nearest_centroid(const float* v, const float* centroids, int k, int dim) {
    int best = 0;
    double bestd = 0.0;
    for (int j = 0; j < k; ++j) {
        const float* c = centroids + static_cast<size_t>(j) * dim;
        double d = 0.0;
        for (int t = 0; t < dim; ++t) {
            const double diff = static_cast<double>(v[t]) - static_cast<double>(c[t]);
            d += diff * diff;
        }
        if (j == 0 || d < bestd) {
            bestd = d;
            best = j;
        }
    }
    return best;
}

void assign_nearest(const float* pts, int n, const float* centroids, int k, int dim,
                    int* out_idx, float* out_dist2) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
        const float* v = pts + static_cast<size_t>(i) * dim;
        int best = 0;
        double bestd = 0.0;
        for (int j = 0; j < k; ++j) {
            const float* c = centroids + static_cast<size_t>(j) * dim;
            double d = 0.0;
            for (int t = 0; t < dim; ++t) {
                const double diff = static_cast<double>(v[t]) - static_cast<double>(c[t]);
                d += diff * diff;
            }
            if (j == 0 || d < bestd) {
                bestd = d;
                best = j;
            }
        }
        if (out_idx) out_idx[i] = best;
        if (out_dist2) out_dist2[i] = static_cast<float>(bestd);
    }
}

void pairwise_dist2(double* out, const double* a, int na, const double* b, int nb, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < na; ++i) {
        const double* ai = a + static_cast<size_t>(i) * dim;
        double* orow = out + static_cast<size_t>(i) * nb;
        for (int j = 0; j < nb; ++j) {
            const double* bj = b + static_cast<size_t>(j) * dim;
            double d = 0.0;
            for (int t = 0; t < dim; ++t) {
                const double diff = ai[t] - bj[t];
                d += diff * diff;
            }
            orow[j] = d;
        }
    }
}

// ---------------------------------------------------------------------------
// serial references (kept loop-for-loop identical, minus the pragmas)
// ---------------------------------------------------------------------------

namespace serial {

void matmul_nt(double* out, const double* a, const double* b, int M, int N, int K) {
    for (int m = 0; m < M; ++m) {
        const double* arow = a + static_cast<size_t>(m) * K;
        double* orow = out + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) {
            const double* brow = b + static_cast<size_t>(n) * K;
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
            orow[n] = acc;
        }
    }
}

void matmul_nn(double* out, const double* a, const double* b, int M, int N, int K) {
    for (int m = 0; m < M; ++m) {
        const double* arow = a + static_cast<size_t>(m) * K;
        double* orow = out + static_cast<size_t>(m) * N;
        for (int n = 0; n < N; ++n) orow[n] = 0.0;
        for (int k = 0; k < K; ++k) {
            const double av = arow[k];
            const double* brow = b + static_cast<size_t>(k) * N;
            for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
}

void matmul_tn_acc(double* out, const double* a, const double* b, int M, int N, int K) {
    for (int k = 0; k < K; ++k) {
        double* orow = out + static_cast<size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const double av = a[static_cast<size_t>(m) * K + k];
            const double* brow = b + static_cast<size_t>(m) * N;
            for (int n = 0; n < N; ++n) orow[n] += av * brow[n];
        }
    }
}

void layernorm_fwd(double* y, double* mean, double* rstd, const double* x,
                   const double* g, const double* b, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        double* yr = y + static_cast<size_t>(r) * cols;
        double mu = 0.0;
        for (int c = 0; c < cols; ++c) mu += xr[c];
        mu /= cols;
        double var = 0.0;
        for (int c = 0; c < cols; ++c) {
            const double d = xr[c] - mu;
            var += d * d;
        }
        var /= cols;
        const double rs = 1.0 / std::sqrt(var + kLnEps);
        mean[r] = mu;
        rstd[r] = rs;
        for (int c = 0; c < cols; ++c) yr[c] = (xr[c] - mu) * rs * g[c] + b[c];
    }
}

void gelu_fwd(double* y, const double* x, size_t n) {
    for (size_t i = 0; i < n; ++i) {
        const double v = x[i];
        const double t = std::tanh(kGeluC * (v + 0.044715 * v * v * v));
        y[i] = 0.5 * v * (1.0 + t);
    }
}

void softmax_rows(double* y, const double* x, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<size_t>(r) * cols;
        double* yr = y + static_cast<size_t>(r) * cols;
        double mx = xr[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
        double sum = 0.0;
        for (int c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const double inv = 1.0 / sum;
        for (int c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

void conv3x3_fwd(double* y, const double* x, const double* w, const double* b,
                 int cin, int cout, int h, int wd) {
    const size_t plane = static_cast<size_t>(h) * wd;
    for (int co = 0; co < cout; ++co) {
        double* yp = y + co * plane;
        const double* wf = w + static_cast<size_t>(co) * cin * 9;
        for (int i = 0; i < h; ++i) {
            for (int j = 0; j < wd; ++j) {
                double acc = b ? b[co] : 0.0;
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xp = x + ci * plane;
                    const double* wk = wf + ci * 9;
                    for (int di = -1; di <= 1; ++di) {
                        const int ii = i + di;
                        if (ii < 0 || ii >= h) continue;
                        for (int dj = -1; dj <= 1; ++dj) {
                            const int jj = j + dj;
                            if (jj < 0 || jj >= wd) continue;
                            acc += xp[ii * wd + jj] * wk[(di + 1) * 3 + (dj + 1)];
                        }
                    }
                }
                yp[i * wd + j] = acc;
            }
        }
    }
}

void gaussian_blur_grid(double* data, int rows, int cols, int nchan, double sigma) {
    if (sigma == 0.0) return;
    int r;
    const std::vector<double> k = gaussian_kernel(sigma, &r);
    for (int ch = 0; ch < nchan; ++ch) {
        std::vector<double> plane(static_cast<size_t>(rows) * cols);
        std::vector<double> tmp(plane.size());
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                plane[i * cols + j] = data[(static_cast<size_t>(i) * cols + j) * nchan + ch];
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k[d + r] * plane[i * cols + mirror(j + d, cols)];
                tmp[i * cols + j] = acc;
            }
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                double acc = 0.0;
                for (int d = -r; d <= r; ++d) acc += k[d + r] * tmp[mirror(i + d, rows) * cols + j];
                data[(static_cast<size_t>(i) * cols + j) * nchan + ch] = acc;
            }
    }
}

void assign_nearest(const float* pts, int n, const float* centroids, int k, int dim,
                    int* out_idx, float* out_dist2) {
    for (int i = 0; i < n; ++i) {
        const float* v = pts + static_cast<size_t>(i) * dim;
        int best = 0;
        double bestd = 0.0;
        for (int j = 0; j < k; ++j) {
            const float* c = centroids + static_cast<size_t>(j) * dim;
            double d = 0.0;
            for (int t = 0; t < dim; ++t) {
                const double diff = static_cast<double>(v[t]) - static_cast<double>(c[t]);
                d += diff * diff;
            }
            if (j == 0 || d < bestd) {
                bestd = d;
                best = j;
            }
        }
        if (out_idx) out_idx[i] = best;
        if (out_dist2) out_dist2[i] = static_cast<float>(bestd);
    }
}

void pairwise_dist2(double* out, const double* a, int na, const double* b, int nb, int dim) {
    for (int i = 0; i < na; ++i) {
        const double* ai = a + static_cast<size_t>(i) * dim;
        double* orow = out + static_cast<size_t>(i) * nb;
        for (int j = 0; j < nb; ++j) {
            const double* bj = b + static_cast<size_t>(j) * dim;
            double d = 0.0;
            for (int t = 0; t < dim; ++t) {
                const double diff = ai[t] - bj[t];
                d += diff * diff;
            }
            orow[j] = d;
        }
    }
}

} // namespace serial

} // namespace maskgen::kernels
