#pragma once

// Reverse-mode differentiation over NCHW tensors.
//
// A Tape records every operation of one forward pass in creation order;
// Tape::backward walks the records in reverse and accumulates gradients.
// Parameters are long-lived objects owned outside the tape; their leaf nodes
// push accumulated gradients back into Param::grad at the end of backward().

#include <Eigen/Core>
#include <cmath>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "marsnet/core/tensor.hpp"

namespace marsnet::ag {

enum class ParamKind {
  kernel,  // convolution / dense weights; the only kind under L2 decay
  bias,
  norm_scale,
  norm_shift,
  buffer,  // running statistics, not trainable
};

template <class T>
struct Param {
  std::string name;
  ParamKind kind = ParamKind::kernel;
  Tensor<T> value;
  Tensor<T> grad;

  bool trainable() const { return kind != ParamKind::buffer; }
  bool decays() const { return kind == ParamKind::kernel; }
  void zero_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    else grad.fill(T{0});
  }
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  /// With record=false no backward closures are stored (inference).
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor<T> v) { return push(std::move(v), false, nullptr); }

  Var parameter(Param<T>& p) {
    Var v = push(p.value, p.trainable(), nullptr);
    nodes_[v.id].param = &p;
    return v;
  }

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return v.valid() && nodes_.at(v.id).requires_grad; }

  /// Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor<T>& grad(Var v) {
    auto& node = nodes_.at(v.id);
    if (node.grad.shape() != node.value.shape()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  /// Record an op result. `fn` is kept only when some input needs a gradient.
  Var push(Tensor<T> value, bool requires_grad, Backward fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = record_ && requires_grad;
    if (node.requires_grad) node.fn = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(root)/d(root) = 1 and propagates to every parameter leaf.
  void backward(Var root) {
    if (!record_) fail_runtime("backward() on a non-recording tape");
    grad(root).fill(T{1});
    for (int i = root.id; i >= 0; --i) {
      Node& node = nodes_[i];
      if (!node.requires_grad || node.grad.shape() != node.value.shape()) continue;
      if (node.fn) node.fn(*this, Var{i});
      if (node.param != nullptr) {
        Param<T>& p = *node.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor<T>(p.value.shape());
        const auto& g = node.grad;
        for (std::size_t k = 0; k < g.size(); ++k) p.grad[k] += g[k];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward fn;
    Param<T>* param = nullptr;
    bool requires_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
};

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Unfold one group of one sample into a (cg*k*k) x (h*w) row-major matrix.
template <class T>
void im2col(const T* x, int cg, int h, int w, int k, T* col) {
  const int pad = k / 2;
  for (int c = 0; c < cg; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * h * w;
        // Output columns [x0, x1) read inside the source row.
        const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          T* out = row + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h || x0 >= x1) {
            std::fill(out, out + w, T{0});
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(sy) * w + (kx - pad);
          std::fill(out, out + x0, T{0});
          std::copy(src + x0, src + x1, out + x0);
          std::fill(out + x1, out + w, T{0});
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int cg, int h, int w, int k, T* dx) {
  const int pad = k / 2;
  for (int c = 0; c < cg; ++c) {
    T* dxc = dx + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * h * w;
        const int x0 = std::max(0, pad - kx), x1 = std::min(w, w + pad - kx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* in = row + static_cast<std::size_t>(y) * w;
          T* dst = dxc + static_cast<std::size_t>(sy) * w + (kx - pad);
          for (int xx = x0; xx < x1; ++xx) dst[xx] += in[xx];
        }
      }
    }
  }
}

// Per-thread scratch reused across convolutions; contents are unspecified.
template <class T>
T* scratch(std::size_t n, int slot) {
  thread_local std::vector<T> buf[2];
  if (buf[slot].size() < n) buf[slot].resize(n);
  return buf[slot].data();
}

template <class T>
T sigmoid(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

}  // namespace detail

/// Stride-1 "same" convolution. Kernel shape [out, in/groups, k, k] with odd k;
/// `bias` may be an invalid Var.
template <class T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias = {}, int groups = 1) {
  using Mat = detail::RowMat<T>;
  const Shape xs = tape.shape(x);
  const Shape ws = tape.shape(weight);
  const int k = ws.h;
  require(ws.h == ws.w && k % 2 == 1, "conv2d: kernel must be square and odd");
  require(groups > 0 && xs.c % groups == 0 && ws.n % groups == 0, "conv2d: groups must divide channels");
  require(ws.c * groups == xs.c, "conv2d: kernel expects " + std::to_string(ws.c * groups) +
                                     " input bands, got " + std::to_string(xs.c));
  const int cg = xs.c / groups;
  const int og = ws.n / groups;
  const int kk = cg * k * k;
  const int hw = xs.h * xs.w;
  Tensor<T> out(Shape{xs.n, ws.n, xs.h, xs.w});
  {
    T* col = k == 1 ? nullptr : detail::scratch<T>(static_cast<std::size_t>(kk) * hw, 0);
    const auto& xv = tape.value(x);
    const auto& wv = tape.value(weight);
    for (int n = 0; n < xs.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        const T* cptr = xv.plane(n, g * cg);
        if (k != 1) {
          detail::im2col(cptr, cg, xs.h, xs.w, k, col);
          cptr = col;
        }
        Eigen::Map<const Mat> W(wv.data() + static_cast<std::size_t>(g) * og * kk, og, kk);
        Eigen::Map<const Mat> C(cptr, kk, hw);
        Eigen::Map<Mat> Y(out.plane(n, g * og), og, hw);
        Y.noalias() = W * C;
      }
    }
    if (bias.valid()) {
      const auto& bv = tape.value(bias);
      require(bv.size() == static_cast<std::size_t>(ws.n), "conv2d: bias size mismatch");
      for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < ws.n; ++o) {
          T* p = out.plane(n, o);
          for (int i = 0; i < hw; ++i) p[i] += bv[o];
        }
    }
  }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(weight) || tape.requires_grad(bias);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    const auto& wv = t.value(weight);
    const bool gx = t.requires_grad(x), gw = t.requires_grad(weight);
    T* col = k == 1 || !gw ? nullptr : detail::scratch<T>(static_cast<std::size_t>(kk) * hw, 0);
    T* dcol = k == 1 || !gx ? nullptr : detail::scratch<T>(static_cast<std::size_t>(kk) * hw, 1);
    for (int n = 0; n < xs.n; ++n) {
      for (int g = 0; g < groups; ++g) {
        Eigen::Map<const Mat> DY(dy.plane(n, g * og), og, hw);
        if (gw) {
          const T* cptr = xv.plane(n, g * cg);
          if (k != 1) {
            detail::im2col(cptr, cg, xs.h, xs.w, k, col);
            cptr = col;
          }
          Eigen::Map<const Mat> C(cptr, kk, hw);
          Eigen::Map<Mat> DW(t.grad(weight).data() + static_cast<std::size_t>(g) * og * kk, og, kk);
          DW.noalias() += DY * C.transpose();
        }
        if (gx) {
          Eigen::Map<const Mat> W(wv.data() + static_cast<std::size_t>(g) * og * kk, og, kk);
          T* dxg = t.grad(x).plane(n, g * cg);
          if (k == 1) {
            Eigen::Map<Mat> DX(dxg, kk, hw);
            DX.noalias() += W.transpose() * DY;
          } else {
            Eigen::Map<Mat> DC(dcol, kk, hw);
            DC.noalias() = W.transpose() * DY;
            detail::col2im_add(dcol, cg, xs.h, xs.w, k, dxg);
          }
        }
      }
    }
    if (t.requires_grad(bias)) {
      auto& db = t.grad(bias);
      for (int n = 0; n < xs.n; ++n)
        for (int o = 0; o < ws.n; ++o) {
          const T* p = dy.plane(n, o);
          T s{0};
          for (int i = 0; i < hw; ++i) s += p[i];
          db[o] += s;
        }
    }
  });
}

template <class T>
Var add(Tape<T>& tape, Var a, Var b) {
  require(tape.shape(a) == tape.shape(b), "add: shape mismatch " + tape.shape(a).str() + " vs " + tape.shape(b).str());
  Tensor<T> out = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      auto& g = t.grad(v);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
    }
  });
}

/// Element-wise (Hadamard) product of equal shapes.
template <class T>
Var mul(Tape<T>& tape, Var a, Var b) {
  require(tape.shape(a) == tape.shape(b), "mul: shape mismatch");
  Tensor<T> out = tape.value(a);
  const auto& bv = tape.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return tape.push(std::move(out), tape.requires_grad(a) || tape.requires_grad(b), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    if (t.requires_grad(a)) {
      auto& g = t.grad(a);
      const auto& other = t.value(b);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * other[i];
    }
    if (t.requires_grad(b)) {
      auto& g = t.grad(b);
      const auto& other = t.value(a);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * other[i];
    }
  });
}

/// y = 1 - x
template <class T>
Var one_minus(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.vec()) v = T{1} - v;
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dy[i];
  });
}

template <class T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.vec()) v = v > T{0} ? v : T{0};
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T{0}) g[i] += dy[i];
  });
}

template <class T>
Var sigmoid(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.vec()) v = detail::sigmoid(v);
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& yv = t.value(self);
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i] * yv[i] * (T{1} - yv[i]);
  });
}

/// Broadcast multiply by a per-(sample, band) scale. `s` has shape [N or 1, C, 1, 1].
template <class T>
Var scale_channels(Tape<T>& tape, Var x, Var s) {
  const Shape xs = tape.shape(x), ss = tape.shape(s);
  require(ss.c == xs.c && ss.h == 1 && ss.w == 1 && (ss.n == xs.n || ss.n == 1), "scale_channels: bad scale shape");
  Tensor<T> out = tape.value(x);
  const auto& sv = tape.value(s);
  const std::size_t hw = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T f = sv[static_cast<std::size_t>(ss.n == 1 ? 0 : n) * xs.c + c];
      T* p = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) p[i] *= f;
    }
  return tape.push(std::move(out), tape.requires_grad(x) || tape.requires_grad(s), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    const auto& sv2 = t.value(s);
    const bool gx = t.requires_grad(x), gs = t.requires_grad(s);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const std::size_t si = static_cast<std::size_t>(ss.n == 1 ? 0 : n) * xs.c + c;
        const T* d = dy.plane(n, c);
        if (gx) {
          T* gxp = t.grad(x).plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) gxp[i] += d[i] * sv2[si];
        }
        if (gs) {
          const T* xp = xv.plane(n, c);
          T acc{0};
          for (std::size_t i = 0; i < hw; ++i) acc += d[i] * xp[i];
          t.grad(s)[si] += acc;
        }
      }
  });
}

/// Broadcast multiply by a single-band spatial map `m` of shape [N, 1, H, W].
template <class T>
Var scale_spatial(Tape<T>& tape, Var x, Var m) {
  const Shape xs = tape.shape(x), ms = tape.shape(m);
  require(ms.n == xs.n && ms.c == 1 && ms.h == xs.h && ms.w == xs.w, "scale_spatial: bad map shape");
  Tensor<T> out = tape.value(x);
  const auto& mv = tape.value(m);
  const std::size_t hw = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      T* p = out.plane(n, c);
      const T* mp = mv.plane(n, 0);
      for (std::size_t i = 0; i < hw; ++i) p[i] *= mp[i];
    }
  return tape.push(std::move(out), tape.requires_grad(x) || tape.requires_grad(m), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv = t.value(x);
    const auto& mv2 = t.value(m);
    const bool gx = t.requires_grad(x), gm = t.requires_grad(m);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* d = dy.plane(n, c);
        const T* mp = mv2.plane(n, 0);
        if (gx) {
          T* g = t.grad(x).plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) g[i] += d[i] * mp[i];
        }
        if (gm) {
          T* g = t.grad(m).plane(n, 0);
          const T* xp = xv.plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) g[i] += d[i] * xp[i];
        }
      }
  });
}

template <class T>
Var concat_channels(Tape<T>& tape, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels: nothing to concatenate");
  Shape s = tape.shape(parts.front());
  int total = 0;
  for (Var p : parts) {
    const Shape ps = tape.shape(p);
    require(ps.n == s.n && ps.h == s.h && ps.w == s.w, "concat_channels: spatial/batch mismatch " + ps.str() + " vs " + s.str());
    total += ps.c;
  }
  Tensor<T> out(Shape{s.n, total, s.h, s.w});
  const std::size_t hw = s.plane();
  bool rg = false;
  for (int n = 0; n < s.n; ++n) {
    int off = 0;
    for (Var p : parts) {
      const auto& v = tape.value(p);
      std::copy(v.plane(n, 0), v.plane(n, 0) + hw * v.c(), out.plane(n, off));
      off += v.c();
    }
  }
  for (Var p : parts) rg = rg || tape.requires_grad(p);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    for (int n = 0; n < s.n; ++n) {
      int off = 0;
      for (Var p : parts) {
        const int c = t.shape(p).c;
        if (t.requires_grad(p)) {
          T* g = t.grad(p).plane(n, 0);
          const T* d = dy.plane(n, off);
          for (std::size_t i = 0; i < hw * c; ++i) g[i] += d[i];
        }
        off += c;
      }
    }
  });
}

template <class T>
Var slice_channels(Tape<T>& tape, Var x, int start, int count) {
  const Shape xs = tape.shape(x);
  require(start >= 0 && count > 0 && start + count <= xs.c, "slice_channels: range out of bounds");
  Tensor<T> out(Shape{xs.n, count, xs.h, xs.w});
  const std::size_t hw = xs.plane();
  const auto& xv = tape.value(x);
  for (int n = 0; n < xs.n; ++n) std::copy(xv.plane(n, start), xv.plane(n, start) + hw * count, out.plane(n, 0));
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (int n = 0; n < xs.n; ++n) {
      T* gp = g.plane(n, start);
      const T* d = dy.plane(n, 0);
      for (std::size_t i = 0; i < hw * count; ++i) gp[i] += d[i];
    }
  });
}

/// Per-band mean over the spatial plane -> [N, C, 1, 1].
template <class T>
Var global_avg_pool(Tape<T>& tape, Var x) {
  const Shape xs = tape.shape(x);
  Tensor<T> out(Shape{xs.n, xs.c, 1, 1});
  const auto& xv = tape.value(x);
  const std::size_t hw = xs.plane();
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* p = xv.plane(n, c);
      T s{0};
      for (std::size_t i = 0; i < hw; ++i) s += p[i];
      out(n, c, 0, 0) = s / static_cast<T>(hw);
    }
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T d = dy(n, c, 0, 0) / static_cast<T>(hw);
        T* gp = g.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) gp[i] += d;
      }
  });
}

/// Two-way softmax applied per band. Output is [N, 2C, 1, 1] holding
/// (beta_1 | beta_2). The smaller weight is evaluated directly and the
/// larger one as its complement, so beta_1 + beta_2 == 1 holds exactly.
template <class T>
Var pair_softmax(Tape<T>& tape, Var s1, Var s2) {
  const Shape ss = tape.shape(s1);
  require(ss == tape.shape(s2) && ss.h == 1 && ss.w == 1, "pair_softmax: descriptor shapes must match");
  Tensor<T> out(Shape{ss.n, 2 * ss.c, 1, 1});
  const auto& a = tape.value(s1);
  const auto& b = tape.value(s2);
  for (int n = 0; n < ss.n; ++n)
    for (int c = 0; c < ss.c; ++c) {
      const T d = a(n, c, 0, 0) - b(n, c, 0, 0);
      T b1, b2;
      if (d >= T{0}) {
        const T e = std::exp(-d);
        b2 = e / (T{1} + e);
        b1 = T{1} - b2;
      } else {
        const T e = std::exp(d);
        b1 = e / (T{1} + e);
        b2 = T{1} - b1;
      }
      out(n, c, 0, 0) = b1;
      out(n, ss.c + c, 0, 0) = b2;
    }
  return tape.push(std::move(out), tape.requires_grad(s1) || tape.requires_grad(s2), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& y = t.value(self);
    for (int n = 0; n < ss.n; ++n)
      for (int c = 0; c < ss.c; ++c) {
        const T b1 = y(n, c, 0, 0), b2 = y(n, ss.c + c, 0, 0);
        const T ds = b1 * b2 * (dy(n, c, 0, 0) - dy(n, ss.c + c, 0, 0));
        if (t.requires_grad(s1)) t.grad(s1)(n, c, 0, 0) += ds;
        if (t.requires_grad(s2)) t.grad(s2)(n, c, 0, 0) -= ds;
      }
  });
}

/// Group normalization with per-band affine. gamma/beta have shape [1, C, 1, 1].
template <class T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, T eps = T(1e-5)) {
  const Shape xs = tape.shape(x);
  require(groups > 0 && xs.c % groups == 0, "group_norm: groups must divide band count");
  const int cg = xs.c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cg) * xs.plane();
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  Tensor<T> out(xs);
  std::vector<T> mean(static_cast<std::size_t>(xs.n) * groups), inv_std(mean.size());
  for (int n = 0; n < xs.n; ++n)
    for (int g = 0; g < groups; ++g) {
      const T* p = xv.plane(n, g * cg);
      T m{0};
      for (std::size_t i = 0; i < gsize; ++i) m += p[i];
      m /= static_cast<T>(gsize);
      T var{0};
      for (std::size_t i = 0; i < gsize; ++i) var += (p[i] - m) * (p[i] - m);
      var /= static_cast<T>(gsize);
      const std::size_t gi = static_cast<std::size_t>(n) * groups + g;
      mean[gi] = m;
      inv_std[gi] = T{1} / std::sqrt(var + eps);
      for (int c = g * cg; c < (g + 1) * cg; ++c) {
        const T* xp = xv.plane(n, c);
        T* op = out.plane(n, c);
        for (std::size_t i = 0; i < xs.plane(); ++i) op[i] = (xp[i] - m) * inv_std[gi] * gv[c] + bv[c];
      }
    }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv2 = t.value(x);
    const auto& gv2 = t.value(gamma);
    const std::size_t hw = xs.plane();
    for (int n = 0; n < xs.n; ++n)
      for (int g = 0; g < groups; ++g) {
        const std::size_t gi = static_cast<std::size_t>(n) * groups + g;
        const T m = mean[gi], is = inv_std[gi];
        T sum_dxhat{0}, sum_dxhat_xhat{0};
        for (int c = g * cg; c < (g + 1) * cg; ++c) {
          const T* xp = xv2.plane(n, c);
          const T* d = dy.plane(n, c);
          T dg{0}, db{0};
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (xp[i] - m) * is;
            const T dxhat = d[i] * gv2[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dg += d[i] * xhat;
            db += d[i];
          }
          if (t.requires_grad(gamma)) t.grad(gamma)[c] += dg;
          if (t.requires_grad(beta)) t.grad(beta)[c] += db;
        }
        if (!t.requires_grad(x)) continue;
        const T inv_n = T{1} / static_cast<T>(gsize);
        for (int c = g * cg; c < (g + 1) * cg; ++c) {
          const T* xp = xv2.plane(n, c);
          const T* d = dy.plane(n, c);
          T* gx = t.grad(x).plane(n, c);
          for (std::size_t i = 0; i < hw; ++i) {
            const T xhat = (xp[i] - m) * is;
            const T dxhat = d[i] * gv2[c];
            gx[i] += is * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
          }
        }
      }
  });
}

/// Batch normalization. In training mode batch statistics are used and, when
/// `update_running` is set, the running buffers are blended with momentum.
template <class T>
Var batch_norm(Tape<T>& tape, Var x, Var gamma, Var beta, Param<T>& running_mean, Param<T>& running_var,
               bool training, bool update_running, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape xs = tape.shape(x);
  const std::size_t hw = xs.plane();
  const std::size_t count = static_cast<std::size_t>(xs.n) * hw;
  const auto& xv = tape.value(x);
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  std::vector<T> mean(xs.c), inv_std(xs.c);
  for (int c = 0; c < xs.c; ++c) {
    if (training) {
      T m{0};
      for (int n = 0; n < xs.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) m += p[i];
      }
      m /= static_cast<T>(count);
      T var{0};
      for (int n = 0; n < xs.n; ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) var += (p[i] - m) * (p[i] - m);
      }
      const T biased = var / static_cast<T>(count);
      mean[c] = m;
      inv_std[c] = T{1} / std::sqrt(biased + eps);
      if (update_running) {
        const T unbiased = count > 1 ? var / static_cast<T>(count - 1) : biased;
        running_mean.value[c] = (T{1} - momentum) * running_mean.value[c] + momentum * m;
        running_var.value[c] = (T{1} - momentum) * running_var.value[c] + momentum * unbiased;
      }
    } else {
      mean[c] = running_mean.value[c];
      inv_std[c] = T{1} / std::sqrt(running_var.value[c] + eps);
    }
  }
  Tensor<T> out(xs);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* p = xv.plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) o[i] = (p[i] - mean[c]) * inv_std[c] * gv[c] + bv[c];
    }
  const bool rg = tape.requires_grad(x) || tape.requires_grad(gamma) || tape.requires_grad(beta);
  return tape.push(std::move(out), rg, [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& xv2 = t.value(x);
    const auto& gv2 = t.value(gamma);
    for (int c = 0; c < xs.c; ++c) {
      T dg{0}, db{0};
      for (int n = 0; n < xs.n; ++n) {
        const T* p = xv2.plane(n, c);
        const T* d = dy.plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          dg += d[i] * (p[i] - mean[c]) * inv_std[c];
          db += d[i];
        }
      }
      if (t.requires_grad(gamma)) t.grad(gamma)[c] += dg;
      if (t.requires_grad(beta)) t.grad(beta)[c] += db;
      if (!t.requires_grad(x)) continue;
      const T inv_n = T{1} / static_cast<T>(count);
      for (int n = 0; n < xs.n; ++n) {
        const T* p = xv2.plane(n, c);
        const T* d = dy.plane(n, c);
        T* g = t.grad(x).plane(n, c);
        for (std::size_t i = 0; i < hw; ++i) {
          if (training) {
            const T xhat = (p[i] - mean[c]) * inv_std[c];
            // sum(dy*gamma) = gamma*db, sum(dy*gamma*xhat) = gamma*dg
            g[i] += gv2[c] * inv_std[c] * (d[i] - inv_n * db - xhat * inv_n * dg);
          } else {
            g[i] += d[i] * gv2[c] * inv_std[c];
          }
        }
      }
    }
  });
}

/// 2x2 max pooling with stride 2 (spatial dims must be even).
template <class T>
Var max_pool2(Tape<T>& tape, Var x) {
  const Shape xs = tape.shape(x);
  require(xs.h % 2 == 0 && xs.w % 2 == 0, "max_pool2: spatial size must be even");
  const Shape os{xs.n, xs.c, xs.h / 2, xs.w / 2};
  Tensor<T> out(os);
  std::vector<std::uint32_t> arg(os.size());
  const auto& xv = tape.value(x);
  std::size_t o = 0;
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int xx = 0; xx < os.w; ++xx, ++o) {
          std::size_t best = xv.index(n, c, 2 * y, 2 * xx);
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const std::size_t idx = xv.index(n, c, 2 * y + dy, 2 * xx + dx);
              if (xv[idx] > xv[best]) best = idx;
            }
          out[o] = xv[best];
          arg[o] = static_cast<std::uint32_t>(best);
        }
  return tape.push(std::move(out), tape.requires_grad(x), [=, arg = std::move(arg)](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < dy.size(); ++i) g[arg[i]] += dy[i];
  });
}

namespace detail {
// Half-pixel-centre bilinear taps for 2x upsampling along one axis.
inline void upsample_taps(int in, int o, int& i0, int& i1, double& frac) {
  double src = (o + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  i0 = static_cast<int>(std::floor(src));
  if (i0 > in - 1) i0 = in - 1;
  i1 = i0 + 1 < in ? i0 + 1 : in - 1;
  frac = src - i0;
}
}  // namespace detail

/// Bilinear 2x upsampling with half-pixel centres and edge clamping.
template <class T>
Var upsample_bilinear2(Tape<T>& tape, Var x) {
  const Shape xs = tape.shape(x);
  const Shape os{xs.n, xs.c, xs.h * 2, xs.w * 2};
  Tensor<T> out(os);
  const auto& xv = tape.value(x);
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c) {
      const T* p = xv.plane(n, c);
      T* q = out.plane(n, c);
      for (int y = 0; y < os.h; ++y) {
        int y0, y1;
        double fy;
        detail::upsample_taps(xs.h, y, y0, y1, fy);
        for (int xx = 0; xx < os.w; ++xx) {
          int x0, x1;
          double fx;
          detail::upsample_taps(xs.w, xx, x0, x1, fx);
          const T a = p[y0 * xs.w + x0], b = p[y0 * xs.w + x1];
          const T cc = p[y1 * xs.w + x0], d = p[y1 * xs.w + x1];
          q[y * os.w + xx] = static_cast<T>((1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * cc + fx * d));
        }
      }
    }
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (int n = 0; n < xs.n; ++n)
      for (int c = 0; c < xs.c; ++c) {
        const T* d = dy.plane(n, c);
        T* gp = g.plane(n, c);
        for (int y = 0; y < os.h; ++y) {
          int y0, y1;
          double fy;
          detail::upsample_taps(xs.h, y, y0, y1, fy);
          for (int xx = 0; xx < os.w; ++xx) {
            int x0, x1;
            double fx;
            detail::upsample_taps(xs.w, xx, x0, x1, fx);
            const T v = d[y * os.w + xx];
            gp[y0 * xs.w + x0] += static_cast<T>((1 - fy) * (1 - fx)) * v;
            gp[y0 * xs.w + x1] += static_cast<T>((1 - fy) * fx) * v;
            gp[y1 * xs.w + x0] += static_cast<T>(fy * (1 - fx)) * v;
            gp[y1 * xs.w + x1] += static_cast<T>(fy * fx) * v;
          }
        }
      }
  });
}

/// Per-band weights |gamma_c| / sum |gamma| from a [1, C, 1, 1] scale.
template <class T>
Var abs_normalize(Tape<T>& tape, Var gamma) {
  Tensor<T> out = tape.value(gamma);
  T total{0};
  for (T v : out.vec()) total += std::abs(v);
  require(total > T{0}, "abs_normalize: all-zero scale vector");
  for (auto& v : out.vec()) v = std::abs(v) / total;
  return tape.push(std::move(out), tape.requires_grad(gamma), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    const auto& y = t.value(self);
    const auto& gv = t.value(gamma);
    T dot{0};
    for (std::size_t i = 0; i < y.size(); ++i) dot += dy[i] * y[i];
    auto& g = t.grad(gamma);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T sgn = gv[i] > T{0} ? T{1} : (gv[i] < T{0} ? T{-1} : T{0});
      g[i] += sgn * (dy[i] - dot) / total;
    }
  });
}

/// Hard threshold: 1 where x > threshold, else 0. With `straight_through`
/// the incoming gradient is passed to x unchanged; otherwise the result is
/// a constant of the tape.
template <class T>
Var gate(Tape<T>& tape, Var x, T threshold, bool straight_through) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.vec()) v = v > threshold ? T{1} : T{0};
  if (!straight_through) return tape.constant(std::move(out));
  return tape.push(std::move(out), tape.requires_grad(x), [=](Tape<T>& t, Var self) {
    const auto& dy = t.grad(self);
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += dy[i];
  });
}

/// Mean of squared residuals over pixels where mask != 0, as a [1,1,1,1] node.
/// An all-zero mask yields 0 with no gradient contribution.
template <class T>
Var masked_mse(Tape<T>& tape, Var pred, const Tensor<T>& label, const Tensor<T>& mask) {
  const Shape ps = tape.shape(pred);
  require(ps == label.shape() && ps == mask.shape(),
          "masked_mse: shape mismatch pred " + ps.str() + " label " + label.shape().str() + " mask " + mask.shape().str());
  const auto& pv = tape.value(pred);
  std::size_t count = 0;
  T sse{0};
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (mask[i] == T{0}) continue;
    const T r = pv[i] - label[i];
    sse += r * r;
    ++count;
  }
  Tensor<T> out(Shape{1, 1, 1, 1}, count == 0 ? T{0} : sse / static_cast<T>(count));
  return tape.push(std::move(out), tape.requires_grad(pred) && count > 0,
                   [=, label = label, mask = mask](Tape<T>& t, Var self) {
                     const T d = t.grad(self)[0] * T{2} / static_cast<T>(count);
                     const auto& pv2 = t.value(pred);
                     auto& g = t.grad(pred);
                     for (std::size_t i = 0; i < g.size(); ++i)
                       if (mask[i] != T{0}) g[i] += d * (pv2[i] - label[i]);
                   });
}

/// Scalar <w, x> against a constant weight tensor of the same shape.
template <class T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
  require(tape.shape(x) == weights.shape(), "weighted_sum: shape mismatch");
  const auto& xv = tape.value(x);
  T s{0};
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.push(Tensor<T>(Shape{1, 1, 1, 1}, s), tape.requires_grad(x), [=, weights = weights](Tape<T>& t, Var self) {
    const T d = t.grad(self)[0];
    auto& g = t.grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * weights[i];
  });
}

}  // namespace marsnet::ag
