#include "cdcm/tape.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <memory>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cdcm::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace {
int g_threads = 0;  // 0 = library default

int effective_threads() {
#ifdef _OPENMP
  return g_threads > 0 ? g_threads : omp_get_max_threads();
#else
  return 1;
#endif
}
}  // namespace

void set_num_threads(int n) {
  g_threads = n;
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#endif
  Eigen::setNbThreads(n > 0 ? n : 0);
}

int num_threads() { return effective_threads(); }

// ---------------------------------------------------------------------------
// Tape core

Var Tape::push(Tensor value, bool grad, std::function<void(Tape&)> fn) {
  Node nd;
  nd.value = std::move(value);
  nd.needs_grad = grad;
  nd.backward_fn = grad ? std::move(fn) : std::function<void(Tape&)>();
  nodes_.push_back(std::move(nd));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Tensor& value, Tensor* grad_sink) {
  Var v = push(value, grad_sink != nullptr, {});
  nodes_.back().grad_sink = grad_sink;
  return v;
}

Var Tape::leaf(const Tensor& value) { return push(value, false, {}); }

Tensor& Tape::grad_ref(int id) {
  Node& nd = nodes_[static_cast<size_t>(id)];
  if (nd.grad.data.empty()) nd.grad = Tensor::zeros(nd.value.shape);
  return nd.grad;
}

Tensor* Tape::grad_if_any(int id) {
  Node& nd = nodes_[static_cast<size_t>(id)];
  return nd.grad.data.empty() ? nullptr : &nd.grad;
}

void Tape::accumulate(int id, const double* src, int64_t n) {
  if (!needs_grad(id)) return;
  Tensor& g = grad_ref(id);
  for (int64_t i = 0; i < n; ++i) g.data[static_cast<size_t>(i)] += src[i];
}

void Tape::backward(Var scalar_output) {
  check_config(scalar_output.valid() && value(scalar_output).numel() == 1,
               "backward requires a scalar output");
  grad_ref(scalar_output.id).data[0] = 1.0;
  for (int i = scalar_output.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<size_t>(i)];
    if (!nd.grad.data.empty()) {
      if (nd.backward_fn) nd.backward_fn(*this);
      if (nd.grad_sink) {
        for (size_t k = 0; k < nd.grad.data.size(); ++k) nd.grad_sink->data[k] += nd.grad.data[k];
      }
    }
    // Consumers of this node have already run; buffers are no longer needed.
    nd.value.data = std::vector<double>();
    nd.grad.data = std::vector<double>();
    nd.backward_fn = nullptr;
  }
}

// ---------------------------------------------------------------------------
// Dense

Var dense(Tape& t, Var x, Var w, Var b) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  check_config(xv.rank() == 2 && wv.rank() == 2 && bv.rank() == 1, "dense: bad ranks");
  const int n = xv.dim(0), f = xv.dim(1), o = wv.dim(1);
  check_config(wv.dim(0) == f, "dense: weight rows " + std::to_string(wv.dim(0)) +
                                   " do not match input width " + std::to_string(f));
  check_config(bv.dim(0) == o, "dense: bias size mismatch");

  Tensor out({n, o});
  CMapMat X(xv.data.data(), n, f), W(wv.data.data(), f, o);
  MapMat Y(out.data.data(), n, o);
  Y.noalias() = X * W;
  Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data.data(), o);

  bool grad = t.needs_grad(x.id) || t.needs_grad(w.id) || t.needs_grad(b.id);
  if (!grad) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, w, b, n, f, o](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    CMapMat Gy(gy.data.data(), n, o);
    if (tp.needs_grad(x.id)) {
      const Tensor& wt = tp.value(w);
      CMapMat W(wt.data.data(), f, o);
      MapMat Gx(tp.grad_ref(x.id).data.data(), n, f);
      Gx.noalias() += Gy * W.transpose();
    }
    if (tp.needs_grad(w.id)) {
      const Tensor& xt = tp.value(x);
      CMapMat X(xt.data.data(), n, f);
      MapMat Gw(tp.grad_ref(w.id).data.data(), f, o);
      Gw.noalias() += X.transpose() * Gy;
    }
    if (tp.needs_grad(b.id)) {
      Eigen::Map<Eigen::RowVectorXd> Gb(tp.grad_ref(b.id).data.data(), o);
      Gb += Gy.colwise().sum();
    }
  };
  return self;
}

// ---------------------------------------------------------------------------
// conv2d helpers

struct ConvGeom {
  int n, h, w, cin, kh, kw, cout, stride, dil, ho, wo, pad_y, pad_x;
};

static ConvGeom conv_geometry(const Tensor& x, const Tensor& w, int stride, int dilation,
                              Padding pad) {
  check_config(x.rank() == 4 && w.rank() == 4, "conv2d: expects rank-4 input and kernel");
  ConvGeom g{};
  g.n = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cin = x.dim(3);
  g.kh = w.dim(0);
  g.kw = w.dim(1);
  g.cout = w.dim(3);
  g.stride = stride;
  g.dil = dilation;
  check_config(w.dim(2) == g.cin, "conv2d: kernel input channels " + std::to_string(w.dim(2)) +
                                      " do not match input channels " + std::to_string(g.cin));
  check_config(stride >= 1 && dilation >= 1, "conv2d: stride and dilation must be >= 1");
  const int eff_kh = (g.kh - 1) * g.dil + 1;
  const int eff_kw = (g.kw - 1) * g.dil + 1;
  if (pad == Padding::SAME) {
    g.ho = (g.h + stride - 1) / stride;
    g.wo = (g.w + stride - 1) / stride;
    int pad_total_y = std::max(0, (g.ho - 1) * stride + eff_kh - g.h);
    int pad_total_x = std::max(0, (g.wo - 1) * stride + eff_kw - g.w);
    g.pad_y = pad_total_y / 2;
    g.pad_x = pad_total_x / 2;
  } else {
    check_config(g.h >= eff_kh && g.w >= eff_kw, "conv2d: input smaller than effective kernel");
    g.ho = (g.h - eff_kh) / stride + 1;
    g.wo = (g.w - eff_kw) / stride + 1;
    g.pad_y = g.pad_x = 0;
  }
  return g;
}

// Fill the im2col matrix for one image: rows = ho*wo, cols = kh*kw*cin.
static void im2col_one(const double* img, const ConvGeom& g, double* col) {
  const int cols = g.kh * g.kw * g.cin;
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      double* row = col + (static_cast<int64_t>(oy) * g.wo + ox) * cols;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad_y + ky * g.dil;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad_x + kx * g.dil;
          double* dst = row + (static_cast<int64_t>(ky) * g.kw + kx) * g.cin;
          if (iy < 0 || iy >= g.h || ix < 0 || ix >= g.w) {
            std::memset(dst, 0, sizeof(double) * static_cast<size_t>(g.cin));
          } else {
            std::memcpy(dst, img + (static_cast<int64_t>(iy) * g.w + ix) * g.cin,
                        sizeof(double) * static_cast<size_t>(g.cin));
          }
        }
      }
    }
  }
}

// Scatter-add of a col-shaped gradient back onto one image.
static void col2im_one(const double* col, const ConvGeom& g, double* img_grad) {
  const int cols = g.kh * g.kw * g.cin;
  for (int oy = 0; oy < g.ho; ++oy) {
    for (int ox = 0; ox < g.wo; ++ox) {
      const double* row = col + (static_cast<int64_t>(oy) * g.wo + ox) * cols;
      for (int ky = 0; ky < g.kh; ++ky) {
        const int iy = oy * g.stride - g.pad_y + ky * g.dil;
        if (iy < 0 || iy >= g.h) continue;
        for (int kx = 0; kx < g.kw; ++kx) {
          const int ix = ox * g.stride - g.pad_x + kx * g.dil;
          if (ix < 0 || ix >= g.w) continue;
          const double* src = row + (static_cast<int64_t>(ky) * g.kw + kx) * g.cin;
          double* dst = img_grad + (static_cast<int64_t>(iy) * g.w + ix) * g.cin;
          for (int c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

Var conv2d(Tape& t, Var x, Var w, Var b, int stride, int dilation, Padding pad, Activation act,
           double leaky_slope) {
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  const ConvGeom g = conv_geometry(xv, wv, stride, dilation, pad);
  check_config(bv.rank() == 1 && bv.dim(0) == g.cout, "conv2d: bias size mismatch");

  Tensor out({g.n, g.ho, g.wo, g.cout});
  const int cols = g.kh * g.kw * g.cin;
  const int64_t rows = static_cast<int64_t>(g.ho) * g.wo;
  const int64_t img_elems = static_cast<int64_t>(g.h) * g.w * g.cin;
  CMapMat W(wv.data.data(), cols, g.cout);

#pragma omp parallel
  {
    std::vector<double> colbuf(static_cast<size_t>(rows * cols));
#pragma omp for schedule(static)
    for (int n = 0; n < g.n; ++n) {
      im2col_one(xv.data.data() + n * img_elems, g, colbuf.data());
      CMapMat C(colbuf.data(), rows, cols);
      MapMat Y(out.data.data() + n * rows * g.cout, rows, g.cout);
      Y.noalias() = C * W;
      Y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.data.data(), g.cout);
      if (act == Activation::LEAKY_RELU) {
        double* y = out.data.data() + n * rows * g.cout;
        for (int64_t i = 0; i < rows * g.cout; ++i)
          if (y[i] < 0.0) y[i] *= leaky_slope;
      }
    }
  }

  bool grad = t.needs_grad(x.id) || t.needs_grad(w.id) || t.needs_grad(b.id);
  if (!grad) return t.push(std::move(out), false, {});

  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [=](Tape& tp) {
    const Tensor& yv = tp.value(self);
    const Tensor& gy = *tp.grad_if_any(self.id);
    const Tensor& xin = tp.value(x);
    const Tensor& wt = tp.value(w);
    const bool need_x = tp.needs_grad(x.id);
    const bool need_w = tp.needs_grad(w.id);
    const bool need_b = tp.needs_grad(b.id);
    CMapMat Wm(wt.data.data(), cols, g.cout);

    const int nthreads = effective_threads();
    std::vector<Tensor> dw_acc, db_acc;
    if (need_w)
      for (int i = 0; i < nthreads; ++i) dw_acc.push_back(Tensor::zeros({cols, g.cout}));
    if (need_b)
      for (int i = 0; i < nthreads; ++i) db_acc.push_back(Tensor::zeros({g.cout}));

    Tensor* gx = need_x ? &tp.grad_ref(x.id) : nullptr;

#pragma omp parallel num_threads(nthreads)
    {
#ifdef _OPENMP
      const int tid = omp_get_thread_num();
#else
      const int tid = 0;
#endif
      std::vector<double> gybuf(static_cast<size_t>(rows * g.cout));
      std::vector<double> colbuf((need_w) ? static_cast<size_t>(rows * cols) : 0);
      std::vector<double> gcol(need_x ? static_cast<size_t>(rows * cols) : 0);
#pragma omp for schedule(static)
      for (int n = 0; n < g.n; ++n) {
        const double* gy_n = gy.data.data() + n * rows * g.cout;
        if (act == Activation::LEAKY_RELU) {
          const double* y_n = yv.data.data() + n * rows * g.cout;
          for (int64_t i = 0; i < rows * g.cout; ++i)
            gybuf[static_cast<size_t>(i)] = gy_n[i] * (y_n[i] > 0.0 ? 1.0 : leaky_slope);
          gy_n = gybuf.data();
        }
        CMapMat Gy(gy_n, rows, g.cout);
        if (need_w) {
          im2col_one(xin.data.data() + n * img_elems, g, colbuf.data());
          CMapMat C(colbuf.data(), rows, cols);
          MapMat Dw(dw_acc[static_cast<size_t>(tid)].data.data(), cols, g.cout);
          Dw.noalias() += C.transpose() * Gy;
        }
        if (need_b) {
          Eigen::Map<Eigen::RowVectorXd> Db(db_acc[static_cast<size_t>(tid)].data.data(), g.cout);
          Db += Gy.colwise().sum();
        }
        if (need_x) {
          MapMat Gc(gcol.data(), rows, cols);
          Gc.noalias() = Gy * Wm.transpose();
          col2im_one(gcol.data(), g, gx->data.data() + n * img_elems);
        }
      }
    }
    if (need_w) {
      Tensor& gw = tp.grad_ref(w.id);
      for (int i = 0; i < nthreads; ++i)
        for (size_t k = 0; k < gw.data.size(); ++k) gw.data[k] += dw_acc[static_cast<size_t>(i)].data[k];
    }
    if (need_b) {
      Tensor& gb = tp.grad_ref(b.id);
      for (int i = 0; i < nthreads; ++i)
        for (size_t k = 0; k < gb.data.size(); ++k) gb.data[k] += db_acc[static_cast<size_t>(i)].data[k];
    }
  };
  return self;
}

// ---------------------------------------------------------------------------
// Remaining ops

Var maxpool2x2(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  check_config(xv.rank() == 4, "maxpool2x2: expects rank-4 input");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  check_config(h % 2 == 0 && w % 2 == 0,
               "maxpool2x2: spatial dims must be even, got " + xv.shape_str());
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, ho, wo, c});
  auto idx = std::make_shared<std::vector<int64_t>>(out.data.size());

#pragma omp parallel for schedule(static)
  for (int ni = 0; ni < n; ++ni) {
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox)
        for (int ci = 0; ci < c; ++ci) {
          int64_t best = -1;
          double bv = -1e300;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              int64_t src = (((static_cast<int64_t>(ni) * h + (2 * oy + dy)) * w) + (2 * ox + dx)) * c + ci;
              if (xv.data[static_cast<size_t>(src)] > bv) {
                bv = xv.data[static_cast<size_t>(src)];
                best = src;
              }
            }
          int64_t dst = (((static_cast<int64_t>(ni) * ho + oy) * wo) + ox) * c + ci;
          out.data[static_cast<size_t>(dst)] = bv;
          (*idx)[static_cast<size_t>(dst)] = best;
        }
  }

  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, idx](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[static_cast<size_t>((*idx)[i])] += gy.data[i];
  };
  return self;
}

Var leaky_relu(Tape& t, Var x, double slope) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  for (double& v : out.data)
    if (v < 0.0) v *= slope;
  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, slope](Tape& tp) {
    const Tensor& y = tp.value(self);
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i)
      gx.data[i] += gy.data[i] * (y.data[i] > 0.0 ? 1.0 : slope);
  };
  return self;
}

Var sigmoid(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  Tensor out = xv;
  for (double& v : out.data) {
    if (v >= 0.0) {
      v = 1.0 / (1.0 + std::exp(-v));
    } else {
      double e = std::exp(v);
      v = e / (1.0 + e);
    }
  }
  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x](Tape& tp) {
    const Tensor& y = tp.value(self);
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i)
      gx.data[i] += gy.data[i] * y.data[i] * (1.0 - y.data[i]);
  };
  return self;
}

Var global_avg_pool(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  check_config(xv.rank() == 4, "global_avg_pool: expects rank-4 input");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  const double inv = 1.0 / (static_cast<double>(h) * w);
  Tensor out({n, c});
  for (int ni = 0; ni < n; ++ni) {
    const double* src = xv.data.data() + static_cast<int64_t>(ni) * h * w * c;
    double* dst = out.data.data() + static_cast<int64_t>(ni) * c;
    for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
      for (int ci = 0; ci < c; ++ci) dst[ci] += src[p * c + ci];
    for (int ci = 0; ci < c; ++ci) dst[ci] *= inv;
  }
  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, n, h, w, c, inv](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (int ni = 0; ni < n; ++ni) {
      const double* gsrc = gy.data.data() + static_cast<int64_t>(ni) * c;
      double* gdst = gx.data.data() + static_cast<int64_t>(ni) * h * w * c;
      for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
        for (int ci = 0; ci < c; ++ci) gdst[p * c + ci] += gsrc[ci] * inv;
    }
  };
  return self;
}

Var concat_last(Tape& t, const std::vector<Var>& xs) {
  check_config(!xs.empty(), "concat_last: no inputs");
  const Tensor& first = t.value(xs[0]);
  std::vector<int> lead(first.shape.begin(), first.shape.end() - 1);
  int total_c = 0;
  bool grad = false;
  std::vector<int> widths;
  for (Var v : xs) {
    const Tensor& tv = t.value(v);
    check_config(std::vector<int>(tv.shape.begin(), tv.shape.end() - 1) == lead,
                 "concat_last: leading dims mismatch");
    widths.push_back(tv.shape.back());
    total_c += tv.shape.back();
    grad = grad || t.needs_grad(v.id);
  }
  std::vector<int> out_shape = lead;
  out_shape.push_back(total_c);
  Tensor out(out_shape);
  int64_t rows = out.numel() / total_c;
  int off = 0;
  for (size_t k = 0; k < xs.size(); ++k) {
    const Tensor& tv = t.value(xs[k]);
    const int wk = widths[k];
    for (int64_t r = 0; r < rows; ++r)
      std::memcpy(out.data.data() + r * total_c + off, tv.data.data() + r * wk,
                  sizeof(double) * static_cast<size_t>(wk));
    off += wk;
  }
  if (!grad) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  auto inputs = xs;
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, inputs, widths, rows, total_c](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    int off2 = 0;
    for (size_t k = 0; k < inputs.size(); ++k) {
      const int wk = widths[k];
      if (tp.needs_grad(inputs[k].id)) {
        Tensor& gx = tp.grad_ref(inputs[k].id);
        for (int64_t r = 0; r < rows; ++r)
          for (int j = 0; j < wk; ++j) gx.data[static_cast<size_t>(r * wk + j)] += gy.data[static_cast<size_t>(r * total_c + off2 + j)];
      }
      off2 += wk;
    }
  };
  return self;
}

Var scale_channels(Tape& t, Var x, Var gates) {
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gates);
  check_config(xv.rank() == 4 && gv.rank() == 2, "scale_channels: bad ranks");
  const int n = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
  check_config(gv.dim(0) == n && gv.dim(1) == c, "scale_channels: gate shape mismatch");
  Tensor out({n, h, w, c});
  const int64_t hw = static_cast<int64_t>(h) * w;
  for (int ni = 0; ni < n; ++ni) {
    const double* src = xv.data.data() + ni * hw * c;
    const double* gate = gv.data.data() + static_cast<int64_t>(ni) * c;
    double* dst = out.data.data() + ni * hw * c;
    for (int64_t p = 0; p < hw; ++p)
      for (int ci = 0; ci < c; ++ci) dst[p * c + ci] = src[p * c + ci] * gate[ci];
  }
  bool grad = t.needs_grad(x.id) || t.needs_grad(gates.id);
  if (!grad) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, gates, n, hw, c](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    const Tensor& xin = tp.value(x);
    const Tensor& gin = tp.value(gates);
    if (tp.needs_grad(x.id)) {
      Tensor& gx = tp.grad_ref(x.id);
      for (int ni = 0; ni < n; ++ni) {
        const double* gate = gin.data.data() + static_cast<int64_t>(ni) * c;
        for (int64_t p = 0; p < hw; ++p)
          for (int ci = 0; ci < c; ++ci)
            gx.data[static_cast<size_t>((ni * hw + p) * c + ci)] +=
                gy.data[static_cast<size_t>((ni * hw + p) * c + ci)] * gate[ci];
      }
    }
    if (tp.needs_grad(gates.id)) {
      Tensor& gg = tp.grad_ref(gates.id);
      for (int ni = 0; ni < n; ++ni) {
        for (int64_t p = 0; p < hw; ++p)
          for (int ci = 0; ci < c; ++ci)
            gg.data[static_cast<size_t>(ni * c + ci)] +=
                gy.data[static_cast<size_t>((ni * hw + p) * c + ci)] *
                xin.data[static_cast<size_t>((ni * hw + p) * c + ci)];
      }
    }
  };
  return self;
}

Var dropout(Tape& t, Var x, double rate, Rng& rng, bool training) {
  check_config(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const Tensor& xv = t.value(x);
  auto mask = std::make_shared<std::vector<double>>(xv.data.size());
  const double keep = 1.0 - rate;
  const double scale = 1.0 / keep;
  Tensor out(xv.shape);
  for (size_t i = 0; i < xv.data.size(); ++i) {
    double m = rng.uniform() < rate ? 0.0 : scale;
    (*mask)[i] = m;
    out.data[i] = xv.data[i] * m;
  }
  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x, mask](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i] * (*mask)[i];
  };
  return self;
}

Var flatten(Tape& t, Var x) {
  const Tensor& xv = t.value(x);
  check_config(xv.rank() >= 2, "flatten: expects rank >= 2");
  const int n = xv.dim(0);
  const int rest = static_cast<int>(xv.numel() / n);
  Tensor out = xv.reshaped({n, rest});
  if (!t.needs_grad(x.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, x](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(x.id);
    for (size_t i = 0; i < gy.data.size(); ++i) gx.data[i] += gy.data[i];
  };
  return self;
}

Var euclidean_distance(Tape& t, Var latent, const Tensor& center) {
  const Tensor& lv = t.value(latent);
  check_config(lv.rank() == 2, "euclidean_distance: latent must be rank-2");
  const int n = lv.dim(0), d = lv.dim(1);
  check_config(center.rank() == 1 && center.dim(0) == d,
               "euclidean_distance: center length " + std::to_string(center.numel()) +
                   " does not match latent width " + std::to_string(d));
  Tensor out({n});
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    const double* row = lv.data.data() + static_cast<int64_t>(i) * d;
    for (int k = 0; k < d; ++k) {
      double diff = row[k] - center.data[static_cast<size_t>(k)];
      s += diff * diff;
    }
    out.data[static_cast<size_t>(i)] = std::sqrt(s);
  }
  if (!t.needs_grad(latent.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  Tensor c = center;
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, latent, c, n, d](Tape& tp) {
    const Tensor& dist = tp.value(self);
    const Tensor& gy = *tp.grad_if_any(self.id);
    const Tensor& lin = tp.value(latent);
    Tensor& gl = tp.grad_ref(latent.id);
    for (int i = 0; i < n; ++i) {
      const double di = dist.data[static_cast<size_t>(i)];
      if (di < 1e-300) continue;  // subgradient 0 at the center
      const double s = gy.data[static_cast<size_t>(i)] / di;
      const double* row = lin.data.data() + static_cast<int64_t>(i) * d;
      double* grow = gl.data.data() + static_cast<int64_t>(i) * d;
      for (int k = 0; k < d; ++k) grow[k] += s * (row[k] - c.data[static_cast<size_t>(k)]);
    }
  };
  return self;
}

Var custom_loss_node(Tape& t, Var input, std::function<double(const Tensor&, Tensor&)> fn) {
  const Tensor& xv = t.value(input);
  Tensor grad_stash(xv.shape);
  double val = fn(xv, grad_stash);
  Tensor out = Tensor::scalar(val);
  if (!t.needs_grad(input.id)) return t.push(std::move(out), false, {});
  Var self = t.push(std::move(out), true, {});
  auto saved = std::make_shared<Tensor>(std::move(grad_stash));
  t.nodes_[static_cast<size_t>(self.id)].backward_fn = [self, input, saved](Tape& tp) {
    const Tensor& gy = *tp.grad_if_any(self.id);
    Tensor& gx = tp.grad_ref(input.id);
    const double s = gy.data[0];
    for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += s * saved->data[i];
  };
  return self;
}

}  // namespace cdcm::nn
