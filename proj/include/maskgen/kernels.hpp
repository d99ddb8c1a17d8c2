#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace maskgen::kernels {

// Dense math used by the model stack. Every kernel exists twice: the OpenMP
// version here and a plain-loop reference in kernels::serial. Parallel
// kernels split work only across independent outputs and never reorder an
// accumulation, so both variants produce bit-identical results for any
// thread count. Tests pin that equivalence; bench/ compares throughput.

// out[m, n] = sum_k a[m, k] * b[n, k]          (b is the [out, in] weight layout)
void matmul_nt(double* out, const double* a, const double* b, int M, int N, int K);
// out[m, n] = sum_k a[m, k] * b[k, n]
void matmul_nn(double* out, const double* a, const double* b, int M, int N, int K);
// out[k, n] += sum_m a[m, k] * b[m, n]         (accumulating; gradient of weights)
void matmul_tn_acc(double* out, const double* a, const double* b, int M, int N, int K);

void add_bias(double* x, const double* bias, int rows, int cols);
// bias_grad[c] += sum_r dy[r, c]
void bias_grad_acc(double* bias_grad, const double* dy, int rows, int cols);

// y = ln(x) with per-row mean/var, scale g, shift b. Caches mean and rstd for backward.
void layernorm_fwd(double* y, double* mean, double* rstd, const double* x,
                   const double* g, const double* b, int rows, int cols);
void layernorm_bwd(double* dx, double* dg_acc, double* db_acc, const double* dy,
                   const double* x, const double* g, const double* mean,
                   const double* rstd, int rows, int cols);

// tanh-approximation GELU
void gelu_fwd(double* y, const double* x, size_t n);
void gelu_bwd(double* dx, const double* dy, const double* x, size_t n);

void softmax_rows(double* y, const double* x, int rows, int cols);
void log_softmax_rows(double* y, const double* x, int rows, int cols);

// 3x3 convolution, stride 1, zero padding. x: [cin, h, w], w: [cout, cin, 3, 3].
void conv3x3_fwd(double* y, const double* x, const double* w, const double* b,
                 int cin, int cout, int h, int wd);
void conv3x3_bwd(double* dx, double* dw_acc, double* db_acc, const double* dy,
                 const double* x, const double* w, int cin, int cout, int h, int wd);

// 2x2 average pooling (h, w assumed even).
void avgpool2_fwd(double* y, const double* x, int c, int h, int w);
void avgpool2_bwd(double* dx, const double* dy, int c, int h, int w);

// Per-channel 2D Gaussian blur over an r x c grid. data is [r*c, nchan]
// (position-major), blurred independently for each channel. Mirror padding
// with the edge sample repeated; kernel truncated at 3 sigma and normalized.
// sigma == 0 is the identity.
void gaussian_blur_grid(double* data, int rows, int cols, int nchan, double sigma);

// Index of the nearest centroid by squared L2; ties to the lowest index.
int nearest_centroid(const float* v, const float* centroids, int k, int dim);
// Batch assignment, parallel over points. out_idx may be null when only
// distances are wanted (and vice versa).
void assign_nearest(const float* pts, int n, const float* centroids, int k, int dim,
                    int* out_idx, float* out_dist2);

// All-pairs squared L2 distances: out[i, j] = |a_i - b_j|^2.
void pairwise_dist2(double* out, const double* a, int na, const double* b, int nb, int dim);

namespace serial {
void matmul_nt(double* out, const double* a, const double* b, int M, int N, int K);
void matmul_nn(double* out, const double* a, const double* b, int M, int N, int K);
void matmul_tn_acc(double* out, const double* a, const double* b, int M, int N, int K);
void layernorm_fwd(double* y, double* mean, double* rstd, const double* x,
                   const double* g, const double* b, int rows, int cols);
void gelu_fwd(double* y, const double* x, size_t n);
void softmax_rows(double* y, const double* x, int rows, int cols);
void conv3x3_fwd(double* y, const double* x, const double* w, const double* b,
                 int cin, int cout, int h, int wd);
void gaussian_blur_grid(double* data, int rows, int cols, int nchan, double sigma);
void assign_nearest(const float* pts, int n, const float* centroids, int k, int dim,
                    int* out_idx, float* out_dist2);
void pairwise_dist2(double* out, const double* a, int na, const double* b, int nb, int dim);
} // namespace serial

} // namespace maskgen::kernels
