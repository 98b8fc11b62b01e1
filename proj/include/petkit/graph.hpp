// petkit/graph.hpp
//
// Copyright 2026 the petkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.

#ifndef PETKIT_GRAPH_HPP
#define PETKIT_GRAPH_HPP

#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "petkit/tensor.hpp"

namespace petkit {

template <typename Real>
inline Real gelu_value(Real x) {
  return static_cast<Real>(0.5) * x *
         (static_cast<Real>(1) + std::erf(x * static_cast<Real>(0.70710678118654752440)));
}

template <typename Real>
inline Real gelu_derivative(Real x) {
  const Real phi = static_cast<Real>(0.5) *
                   (static_cast<Real>(1) + std::erf(x * static_cast<Real>(0.70710678118654752440)));
  const Real pdf = static_cast<Real>(std::exp(-0.5 * double(x) * double(x)) /
                                     std::sqrt(2.0 * kPi));
  return phi + x * pdf;
}

// Reverse-mode tape over whole tensors. Nodes are recorded in construction
// order, so every op's inputs have smaller ids and a single reverse sweep is
// a valid backward traversal that visits each node exactly once.
//
// Graphs are single-threaded and not shared; independent graphs may run on
// different threads.
template <typename Real>
class Graph {
 public:
  struct Node {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;
    bool needs_grad = false;
    Tensor<Real>* bound = nullptr;
    std::function<void(Graph&, int)> backward;
  };

  int size() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[id]; }
  const std::vector<Real>& value(int id) const { return nodes_[id].value; }
  const Shape& shape(int id) const { return nodes_[id].shape; }
  const std::vector<Real>& grad(int id) const { return nodes_[id].grad; }

  void clear() {
    nodes_.clear();
    params_.clear();
  }

  // ---- leaves ------------------------------------------------------------

  int input(Shape shape, const Real* data) {
    Node n;
    n.shape = std::move(shape);
    n.value.assign(data, data + shape_numel(n.shape));
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  int input(const Tensor<Real>& t) { return input(t.shape, t.data.data()); }

  // Binds a parameter tensor as a leaf. Bound once per graph; repeated calls
  // return the same node so that gradient accumulation across a batch is a
  // plain sum. After backward(), leaf gradients are flushed into the
  // tensor's grad buffer iff it is trainable.
  int param(Tensor<Real>& p) {
    auto it = params_.find(&p);
    if (it != params_.end()) return it->second;
    Node n;
    n.shape = p.shape;
    n.value = p.data;
    n.needs_grad = p.trainable;
    n.bound = &p;
    nodes_.push_back(std::move(n));
    const int id = size() - 1;
    params_.emplace(&p, id);
    return id;
  }

  // ---- elementwise and structural ops ------------------------------------

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    std::vector<Real> out(nodes_[a].value);
    const std::vector<Real>& bv = nodes_[b].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return add_op(nodes_[a].shape, std::move(out), {a, b}, [a, b](Graph& g, int self) {
      const auto& gy = g.nodes_[self].grad;
      if (g.nodes_[a].needs_grad) axpy(gy, Real(1), g.nodes_[a].grad);
      if (g.nodes_[b].needs_grad) axpy(gy, Real(1), g.nodes_[b].grad);
    });
  }

  int scale(int x, Real c) {
    std::vector<Real> out(nodes_[x].value);
    for (Real& v : out) v *= c;
    return add_op(nodes_[x].shape, std::move(out), {x}, [x, c](Graph& g, int self) {
      if (g.nodes_[x].needs_grad) axpy(g.nodes_[self].grad, c, g.nodes_[x].grad);
    });
  }

  int gelu(int x) {
    std::vector<Real> out(nodes_[x].value.size());
    const auto& xv = nodes_[x].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(xv[i]);
    return add_op(nodes_[x].shape, std::move(out), {x}, [x](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      const auto& xv = g.nodes_[x].value;
      auto& gx = g.nodes_[x].grad;
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * gelu_derivative(xv[i]);
    });
  }

  // Generic elementwise op. Also the hook tests use to plant a corrupted
  // backward rule as a gradcheck negative control.
  int apply_unary(int x, std::function<Real(Real)> fwd, std::function<Real(Real)> deriv) {
    std::vector<Real> out(nodes_[x].value.size());
    const auto& xv = nodes_[x].value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    return add_op(nodes_[x].shape, std::move(out), {x},
                  [x, deriv = std::move(deriv)](Graph& g, int self) {
                    if (!g.nodes_[x].needs_grad) return;
                    const auto& gy = g.nodes_[self].grad;
                    const auto& xv = g.nodes_[x].value;
                    auto& gx = g.nodes_[x].grad;
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * deriv(xv[i]);
                  });
  }

  int transpose2d(int x) {
    const int r = rows_of(x), c = cols_of(x);
    std::vector<Real> out(static_cast<std::size_t>(r) * c);
    const auto& xv = nodes_[x].value;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(j) * r + i] = xv[static_cast<std::size_t>(i) * c + j];
    return add_op({c, r}, std::move(out), {x}, [x, r, c](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      auto& gx = g.nodes_[x].grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          gx[static_cast<std::size_t>(i) * c + j] += gy[static_cast<std::size_t>(j) * r + i];
    });
  }

  int slice_cols(int x, int c0, int width) {
    const int r = rows_of(x), c = cols_of(x);
    if (c0 < 0 || width <= 0 || c0 + width > c)
      throw ShapeError("slice_cols out of range");
    std::vector<Real> out(static_cast<std::size_t>(r) * width);
    const auto& xv = nodes_[x].value;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < width; ++j)
        out[static_cast<std::size_t>(i) * width + j] = xv[static_cast<std::size_t>(i) * c + c0 + j];
    return add_op({r, width}, std::move(out), {x}, [x, c0, width, r, c](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      auto& gx = g.nodes_[x].grad;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < width; ++j)
          gx[static_cast<std::size_t>(i) * c + c0 + j] += gy[static_cast<std::size_t>(i) * width + j];
    });
  }

  int concat_cols(const std::vector<int>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols needs at least one input");
    const int r = rows_of(xs[0]);
    int total = 0;
    for (int x : xs) {
      if (rows_of(x) != r) throw ShapeError("concat_cols row mismatch");
      total += cols_of(x);
    }
    std::vector<Real> out(static_cast<std::size_t>(r) * total);
    int off = 0;
    for (int x : xs) {
      const int c = cols_of(x);
      const auto& xv = nodes_[x].value;
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
          out[static_cast<std::size_t>(i) * total + off + j] = xv[static_cast<std::size_t>(i) * c + j];
      off += c;
    }
    return add_op({r, total}, std::move(out), xs, [xs, r, total](Graph& g, int self) {
      const auto& gy = g.nodes_[self].grad;
      int off = 0;
      for (int x : xs) {
        const int c = g.cols_of(x);
        if (g.nodes_[x].needs_grad) {
          auto& gx = g.nodes_[x].grad;
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j)
              gx[static_cast<std::size_t>(i) * c + j] += gy[static_cast<std::size_t>(i) * total + off + j];
        }
        off += c;
      }
    });
  }

  // Stacks n copies of x along the row axis: output row i is x row (i mod r).
  // With rows = channels this is the adapter channel-compression concat.
  int tile_rows(int x, int n) {
    if (n < 1) throw ConfigError("tile_rows: copy count must be >= 1");
    if (n == 1) return x;
    const int r = rows_of(x), c = cols_of(x);
    std::vector<Real> out(static_cast<std::size_t>(n) * r * c);
    const auto& xv = nodes_[x].value;
    for (int copy = 0; copy < n; ++copy)
      for (std::size_t i = 0; i < xv.size(); ++i)
        out[static_cast<std::size_t>(copy) * xv.size() + i] = xv[i];
    return add_op({n * r, c}, std::move(out), {x}, [x, n](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      auto& gx = g.nodes_[x].grad;
      const std::size_t m = gx.size();
      for (int copy = 0; copy < n; ++copy)
        for (std::size_t i = 0; i < m; ++i) gx[i] += gy[static_cast<std::size_t>(copy) * m + i];
    });
  }

  // ---- dense numeric ops --------------------------------------------------

  // Valid (unpadded) strided 1-d convolution. x: [C_in, L], w: [C_out, C_in, K],
  // optional bias [C_out]; output [C_out, floor((L-K)/stride)+1].
  int conv1d(int x, int w, int b, int stride) {
    const Shape& xs = nodes_[x].shape;
    const Shape& ws = nodes_[w].shape;
    if (xs.size() != 2 || ws.size() != 3) throw ShapeError("conv1d expects x[C,L], w[Co,Ci,K]");
    const int ci = xs[0], L = xs[1];
    const int co = ws[0], wci = ws[1], K = ws[2];
    if (stride < 1) throw ConfigError("conv1d: stride must be >= 1");
    if (wci != ci)
      throw ShapeError("conv1d: weight C_in " + std::to_string(wci) +
                       " does not match input C_in " + std::to_string(ci));
    if (K > L)
      throw ShapeError("conv1d: kernel " + std::to_string(K) + " longer than input length " +
                       std::to_string(L) + " (empty output)");
    if (b >= 0 && (nodes_[b].shape.size() != 1 || nodes_[b].shape[0] != co))
      throw ShapeError("conv1d: bias shape mismatch");
    const int lo = (L - K) / stride + 1;

    std::vector<Real> out(static_cast<std::size_t>(co) * lo, Real(0));
    const auto& xv = nodes_[x].value;
    const auto& wv = nodes_[w].value;
    for (int c = 0; c < co; ++c) {
      Real* orow = out.data() + static_cast<std::size_t>(c) * lo;
      if (b >= 0) {
        const Real bias = nodes_[b].value[c];
        for (int t = 0; t < lo; ++t) orow[t] = bias;
      }
      for (int i = 0; i < ci; ++i) {
        const Real* xrow = xv.data() + static_cast<std::size_t>(i) * L;
        const Real* wrow = wv.data() + (static_cast<std::size_t>(c) * ci + i) * K;
        for (int k = 0; k < K; ++k) {
          const Real wk = wrow[k];
          for (int t = 0; t < lo; ++t) orow[t] += wk * xrow[t * stride + k];
        }
      }
    }

    std::vector<int> ins = {x, w};
    if (b >= 0) ins.push_back(b);
    return add_op({co, lo}, std::move(out), ins,
                  [x, w, b, stride, ci, L, co, K, lo](Graph& g, int self) {
                    const auto& gy = g.nodes_[self].grad;
                    const auto& xv = g.nodes_[x].value;
                    const auto& wv = g.nodes_[w].value;
                    if (g.nodes_[w].needs_grad) {
                      auto& gw = g.nodes_[w].grad;
                      for (int c = 0; c < co; ++c) {
                        const Real* gyrow = gy.data() + static_cast<std::size_t>(c) * lo;
                        for (int i = 0; i < ci; ++i) {
                          const Real* xrow = xv.data() + static_cast<std::size_t>(i) * L;
                          Real* gwrow = gw.data() + (static_cast<std::size_t>(c) * ci + i) * K;
                          for (int k = 0; k < K; ++k) {
                            Real acc = 0;
                            for (int t = 0; t < lo; ++t) acc += gyrow[t] * xrow[t * stride + k];
                            gwrow[k] += acc;
                          }
                        }
                      }
                    }
                    if (g.nodes_[x].needs_grad) {
                      auto& gx = g.nodes_[x].grad;
                      for (int c = 0; c < co; ++c) {
                        const Real* gyrow = gy.data() + static_cast<std::size_t>(c) * lo;
                        for (int i = 0; i < ci; ++i) {
                          Real* gxrow = gx.data() + static_cast<std::size_t>(i) * L;
                          const Real* wrow = wv.data() + (static_cast<std::size_t>(c) * ci + i) * K;
                          for (int k = 0; k < K; ++k) {
                            const Real wk = wrow[k];
                            for (int t = 0; t < lo; ++t) gxrow[t * stride + k] += gyrow[t] * wk;
                          }
                        }
                      }
                    }
                    if (b >= 0 && g.nodes_[b].needs_grad) {
                      auto& gb = g.nodes_[b].grad;
                      for (int c = 0; c < co; ++c) {
                        const Real* gyrow = gy.data() + static_cast<std::size_t>(c) * lo;
                        Real acc = 0;
                        for (int t = 0; t < lo; ++t) acc += gyrow[t];
                        gb[c] += acc;
                      }
                    }
                  });
  }

  // Normalizes the last axis; x is treated as [rows, C] with C = gain size.
  int layer_norm(int x, int gain, int shift, Real eps) {
    if (eps <= Real(0)) throw ConfigError("layer_norm: eps must be positive");
    const Shape& gs = nodes_[gain].shape;
    const int C = nodes_[x].shape.empty() ? 0 : nodes_[x].shape.back();
    if (gs.size() != 1 || gs[0] != C || nodes_[shift].shape != gs)
      throw ShapeError("layer_norm: gain/shift size " + shape_str(gs) +
                       " does not match normalized axis " + std::to_string(C));
    const int R = static_cast<int>(nodes_[x].value.size()) / C;

    std::vector<Real> out(nodes_[x].value.size());
    const auto& xv = nodes_[x].value;
    const auto& gv = nodes_[gain].value;
    const auto& sv = nodes_[shift].value;
    for (int r = 0; r < R; ++r) {
      const Real* xr = xv.data() + static_cast<std::size_t>(r) * C;
      Real* yr = out.data() + static_cast<std::size_t>(r) * C;
      Real mean = 0;
      for (int c = 0; c < C; ++c) mean += xr[c];
      mean /= C;
      Real var = 0;
      for (int c = 0; c < C; ++c) {
        const Real d = xr[c] - mean;
        var += d * d;
      }
      var /= C;
      const Real inv = Real(1) / std::sqrt(var + eps);
      for (int c = 0; c < C; ++c) yr[c] = (xr[c] - mean) * inv * gv[c] + sv[c];
    }
    return add_op(nodes_[x].shape, std::move(out), {x, gain, shift},
                  [x, gain, shift, eps, C, R](Graph& g, int self) {
                    const auto& gy = g.nodes_[self].grad;
                    const auto& xv = g.nodes_[x].value;
                    const auto& gv = g.nodes_[gain].value;
                    const bool ng_x = g.nodes_[x].needs_grad;
                    const bool ng_g = g.nodes_[gain].needs_grad;
                    const bool ng_s = g.nodes_[shift].needs_grad;
                    std::vector<Real> xhat(C);
                    for (int r = 0; r < R; ++r) {
                      const Real* xr = xv.data() + static_cast<std::size_t>(r) * C;
                      const Real* gyr = gy.data() + static_cast<std::size_t>(r) * C;
                      Real mean = 0;
                      for (int c = 0; c < C; ++c) mean += xr[c];
                      mean /= C;
                      Real var = 0;
                      for (int c = 0; c < C; ++c) {
                        const Real d = xr[c] - mean;
                        var += d * d;
                      }
                      var /= C;
                      const Real inv = Real(1) / std::sqrt(var + eps);
                      for (int c = 0; c < C; ++c) xhat[c] = (xr[c] - mean) * inv;
                      if (ng_g) {
                        auto& gg = g.nodes_[gain].grad;
                        for (int c = 0; c < C; ++c) gg[c] += gyr[c] * xhat[c];
                      }
                      if (ng_s) {
                        auto& gs2 = g.nodes_[shift].grad;
                        for (int c = 0; c < C; ++c) gs2[c] += gyr[c];
                      }
                      if (ng_x) {
                        Real m1 = 0, m2 = 0;
                        for (int c = 0; c < C; ++c) {
                          const Real t = gyr[c] * gv[c];
                          m1 += t;
                          m2 += t * xhat[c];
                        }
                        m1 /= C;
                        m2 /= C;
                        auto& gx = g.nodes_[x].grad;
                        Real* gxr = gx.data() + static_cast<std::size_t>(r) * C;
                        for (int c = 0; c < C; ++c)
                          gxr[c] += (gyr[c] * gv[c] - m1 - xhat[c] * m2) * inv;
                      }
                    }
                  });
  }

  // Affine map along the last axis: x[.., Din] * W[Din, Dout] + b.
  int linear(int x, int w, int b) {
    const Shape& ws = nodes_[w].shape;
    if (ws.size() != 2) throw ShapeError("linear: weight must be 2-d");
    const int din = ws[0], dout = ws[1];
    const int xin = nodes_[x].shape.empty() ? 0 : nodes_[x].shape.back();
    if (xin != din)
      throw ShapeError("linear: input dim " + std::to_string(xin) + " != weight dim " +
                       std::to_string(din));
    if (b >= 0 && (nodes_[b].shape.size() != 1 || nodes_[b].shape[0] != dout))
      throw ShapeError("linear: bias shape mismatch");
    const int T = static_cast<int>(nodes_[x].value.size()) / din;

    std::vector<Real> out(static_cast<std::size_t>(T) * dout, Real(0));
    const auto& xv = nodes_[x].value;
    const auto& wv = nodes_[w].value;
    for (int t = 0; t < T; ++t) {
      Real* orow = out.data() + static_cast<std::size_t>(t) * dout;
      if (b >= 0) {
        const auto& bv = nodes_[b].value;
        for (int o = 0; o < dout; ++o) orow[o] = bv[o];
      }
      const Real* xrow = xv.data() + static_cast<std::size_t>(t) * din;
      for (int i = 0; i < din; ++i) {
        const Real xi = xrow[i];
        const Real* wrow = wv.data() + static_cast<std::size_t>(i) * dout;
        for (int o = 0; o < dout; ++o) orow[o] += xi * wrow[o];
      }
    }
    Shape oshape = nodes_[x].shape;
    oshape.back() = dout;
    std::vector<int> ins = {x, w};
    if (b >= 0) ins.push_back(b);
    return add_op(std::move(oshape), std::move(out), ins,
                  [x, w, b, din, dout, T](Graph& g, int self) {
                    const auto& gy = g.nodes_[self].grad;
                    const auto& xv = g.nodes_[x].value;
                    const auto& wv = g.nodes_[w].value;
                    if (g.nodes_[x].needs_grad) {
                      auto& gx = g.nodes_[x].grad;
                      for (int t = 0; t < T; ++t) {
                        const Real* gyr = gy.data() + static_cast<std::size_t>(t) * dout;
                        Real* gxr = gx.data() + static_cast<std::size_t>(t) * din;
                        for (int i = 0; i < din; ++i) {
                          const Real* wrow = wv.data() + static_cast<std::size_t>(i) * dout;
                          Real acc = 0;
                          for (int o = 0; o < dout; ++o) acc += gyr[o] * wrow[o];
                          gxr[i] += acc;
                        }
                      }
                    }
                    if (g.nodes_[w].needs_grad) {
                      auto& gw = g.nodes_[w].grad;
                      for (int t = 0; t < T; ++t) {
                        const Real* gyr = gy.data() + static_cast<std::size_t>(t) * dout;
                        const Real* xrow = xv.data() + static_cast<std::size_t>(t) * din;
                        for (int i = 0; i < din; ++i) {
                          const Real xi = xrow[i];
                          Real* gwr = gw.data() + static_cast<std::size_t>(i) * dout;
                          for (int o = 0; o < dout; ++o) gwr[o] += xi * gyr[o];
                        }
                      }
                    }
                    if (b >= 0 && g.nodes_[b].needs_grad) {
                      auto& gb = g.nodes_[b].grad;
                      for (int t = 0; t < T; ++t) {
                        const Real* gyr = gy.data() + static_cast<std::size_t>(t) * dout;
                        for (int o = 0; o < dout; ++o) gb[o] += gyr[o];
                      }
                    }
                  });
  }

  // C = op(A) * op(B) with optional transposes, all operands 2-d.
  int matmul(int a, int b, bool ta, bool tb) {
    const int ar = rows_of(a), ac = cols_of(a);
    const int br = rows_of(b), bc = cols_of(b);
    const int m = ta ? ac : ar;
    const int k = ta ? ar : ac;
    const int kb = tb ? bc : br;
    const int n = tb ? br : bc;
    if (k != kb) throw ShapeError("matmul: inner dimensions disagree");
    std::vector<Real> out(static_cast<std::size_t>(m) * n, Real(0));
    gemm(nodes_[a].value.data(), ar, ac, ta, nodes_[b].value.data(), br, bc, tb, out.data(), m, n);
    return add_op({m, n}, std::move(out), {a, b},
                  [a, b, ta, tb, ar, ac, br, bc, m, n](Graph& g, int self) {
                    const Real* gy = g.nodes_[self].grad.data();
                    const Real* av = g.nodes_[a].value.data();
                    const Real* bv = g.nodes_[b].value.data();
                    if (g.nodes_[a].needs_grad) {
                      Real* ga = g.nodes_[a].grad.data();
                      // dA = ta ? op(B) dC^T : dC op(B)^T
                      if (!ta)
                        gemm_acc(gy, m, n, false, bv, br, bc, !tb, ga, ar, ac);
                      else
                        gemm_acc(bv, br, bc, tb, gy, m, n, true, ga, ar, ac);
                    }
                    if (g.nodes_[b].needs_grad) {
                      Real* gb = g.nodes_[b].grad.data();
                      // dB = tb ? dC^T op(A) : op(A)^T dC
                      if (!tb)
                        gemm_acc(av, ar, ac, !ta, gy, m, n, false, gb, br, bc);
                      else
                        gemm_acc(gy, m, n, true, av, ar, ac, ta, gb, br, bc);
                    }
                  });
  }

  int softmax_rows(int x) {
    const int R = rows_of(x), C = cols_of(x);
    std::vector<Real> out(nodes_[x].value.size());
    const auto& xv = nodes_[x].value;
    for (int r = 0; r < R; ++r) {
      const Real* xr = xv.data() + static_cast<std::size_t>(r) * C;
      Real* yr = out.data() + static_cast<std::size_t>(r) * C;
      Real mx = xr[0];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xr[c]);
      Real sum = 0;
      for (int c = 0; c < C; ++c) {
        yr[c] = std::exp(xr[c] - mx);
        sum += yr[c];
      }
      const Real inv = Real(1) / sum;
      for (int c = 0; c < C; ++c) yr[c] *= inv;
    }
    return add_op(nodes_[x].shape, std::move(out), {x}, [x, R, C](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      const auto& yv = g.nodes_[self].value;
      auto& gx = g.nodes_[x].grad;
      for (int r = 0; r < R; ++r) {
        const Real* gyr = gy.data() + static_cast<std::size_t>(r) * C;
        const Real* yr = yv.data() + static_cast<std::size_t>(r) * C;
        Real dot = 0;
        for (int c = 0; c < C; ++c) dot += gyr[c] * yr[c];
        Real* gxr = gx.data() + static_cast<std::size_t>(r) * C;
        for (int c = 0; c < C; ++c) gxr[c] += yr[c] * (gyr[c] - dot);
      }
    });
  }

  // Mean over rows: [T, C] -> [C].
  int mean_rows(int x) {
    const int T = rows_of(x), C = cols_of(x);
    std::vector<Real> out(C, Real(0));
    const auto& xv = nodes_[x].value;
    for (int t = 0; t < T; ++t)
      for (int c = 0; c < C; ++c) out[c] += xv[static_cast<std::size_t>(t) * C + c];
    const Real inv = Real(1) / T;
    for (Real& v : out) v *= inv;
    return add_op({C}, std::move(out), {x}, [x, T, C, inv](Graph& g, int self) {
      if (!g.nodes_[x].needs_grad) return;
      const auto& gy = g.nodes_[self].grad;
      auto& gx = g.nodes_[x].grad;
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c) gx[static_cast<std::size_t>(t) * C + c] += gy[c] * inv;
    });
  }

  // y = sum_k coeffs[k] * xs[k]; coeffs is a length-K node.
  int linear_combination(const std::vector<int>& xs, int coeffs) {
    if (xs.empty()) throw ConfigError("linear_combination needs at least one input");
    if (nodes_[coeffs].value.size() != xs.size())
      throw ConfigError("linear_combination: coefficient count " +
                        std::to_string(nodes_[coeffs].value.size()) +
                        " != input count " + std::to_string(xs.size()));
    for (int x : xs) check_same_shape(xs[0], x, "linear_combination");
    const std::size_t n = nodes_[xs[0]].value.size();
    std::vector<Real> out(n, Real(0));
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const Real ck = nodes_[coeffs].value[k];
      const auto& xv = nodes_[xs[k]].value;
      for (std::size_t i = 0; i < n; ++i) out[i] += ck * xv[i];
    }
    std::vector<int> ins = xs;
    ins.push_back(coeffs);
    return add_op(nodes_[xs[0]].shape, std::move(out), ins, [xs, coeffs](Graph& g, int self) {
      const auto& gy = g.nodes_[self].grad;
      for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& xv = g.nodes_[xs[k]].value;
        if (g.nodes_[coeffs].needs_grad) {
          Real dot = 0;
          for (std::size_t i = 0; i < gy.size(); ++i) dot += gy[i] * xv[i];
          g.nodes_[coeffs].grad[k] += dot;
        }
        if (g.nodes_[xs[k]].needs_grad) {
          const Real ck = g.nodes_[coeffs].value[k];
          axpy(gy, ck, g.nodes_[xs[k]].grad);
        }
      }
    });
  }

  // Stable log-sum-exp cross entropy against an integer label; scalar output.
  int softmax_cross_entropy(int logits, int label) {
    const auto& lv = nodes_[logits].value;
    const int K = static_cast<int>(lv.size());
    if (label < 0 || label >= K)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(label) +
                       " out of range [0, " + std::to_string(K) + ")");
    Real mx = lv[0];
    for (int c = 0; c < K; ++c) {
      if (!std::isfinite(static_cast<double>(lv[c])))
        throw NumericError("softmax_cross_entropy: non-finite logit at index " +
                           std::to_string(c));
      mx = std::max(mx, lv[c]);
    }
    Real sum = 0;
    for (int c = 0; c < K; ++c) sum += std::exp(lv[c] - mx);
    const Real loss = std::log(sum) + mx - lv[label];
    return add_op({1}, {loss}, {logits}, [logits, label, K](Graph& g, int self) {
      if (!g.nodes_[logits].needs_grad) return;
      const Real gy = g.nodes_[self].grad[0];
      const auto& lv = g.nodes_[logits].value;
      Real mx = lv[0];
      for (int c = 1; c < K; ++c) mx = std::max(mx, lv[c]);
      Real sum = 0;
      for (int c = 0; c < K; ++c) sum += std::exp(lv[c] - mx);
      auto& gl = g.nodes_[logits].grad;
      for (int c = 0; c < K; ++c) {
        Real p = std::exp(lv[c] - mx) / sum;
        if (c == label) p -= Real(1);
        gl[c] += gy * p;
      }
    });
  }

  // Mean of scalar nodes; the batch-loss reducer.
  int average(const std::vector<int>& xs) {
    if (xs.empty()) throw ConfigError("average needs at least one input");
    Real acc = 0;
    for (int x : xs) {
      if (nodes_[x].value.size() != 1) throw ShapeError("average expects scalar nodes");
      acc += nodes_[x].value[0];
    }
    const Real inv = Real(1) / static_cast<Real>(xs.size());
    return add_op({1}, {acc * inv}, xs, [xs, inv](Graph& g, int self) {
      const Real gy = g.nodes_[self].grad[0] * inv;
      for (int x : xs)
        if (g.nodes_[x].needs_grad) g.nodes_[x].grad[0] += gy;
    });
  }

  // ---- backward -----------------------------------------------------------

  // Seeds d(root)/d(root) = 1 and sweeps the tape once in reverse. Leaf
  // gradients are then flushed into bound trainable tensors.
  void backward(int root) {
    for (int id = 0; id <= root; ++id) {
      Node& n = nodes_[id];
      if (n.needs_grad || id == root) n.grad.assign(n.value.size(), Real(0));
    }
    Node& r = nodes_[root];
    r.grad.assign(r.value.size(), Real(1));
    for (int id = root; id >= 0; --id) {
      if (nodes_[id].backward && nodes_[id].needs_grad) nodes_[id].backward(*this, id);
    }
    for (auto& [tensor, id] : params_) {
      if (!tensor->trainable) continue;
      tensor->ensure_grad();
      const auto& gn = nodes_[id].grad;
      for (std::size_t i = 0; i < gn.size(); ++i) tensor->grad[i] += gn[i];
    }
  }

  // 1-d tensors act as row vectors [1, n]; >=2-d as [d0, numel/d0].
  int rows_of(int id) const {
    return nodes_[id].shape.size() < 2 ? 1 : nodes_[id].shape[0];
  }
  int cols_of(int id) const {
    return nodes_[id].shape.size() < 2
               ? static_cast<int>(nodes_[id].value.size())
               : static_cast<int>(nodes_[id].value.size()) / nodes_[id].shape[0];
  }

 private:
  int add_op(Shape shape, std::vector<Real> value, const std::vector<int>& inputs,
             std::function<void(Graph&, int)> backward) {
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    for (int in : inputs) n.needs_grad = n.needs_grad || nodes_[in].needs_grad;
    if (n.needs_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return size() - 1;
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (nodes_[a].shape != nodes_[b].shape)
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(nodes_[a].shape) +
                       " vs " + shape_str(nodes_[b].shape));
  }

  static void axpy(const std::vector<Real>& x, Real a, std::vector<Real>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
  }

  // out = op(A) op(B), out preallocated (m x n), overwrite.
  static void gemm(const Real* a, int ar, int ac, bool ta, const Real* b, int /*br*/, int bc,
                   bool tb, Real* out, int m, int n) {
    const int k = ta ? ar : ac;
    for (int i = 0; i < m; ++i) {
      Real* orow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) orow[j] = Real(0);
      for (int p = 0; p < k; ++p) {
        const Real av = ta ? a[static_cast<std::size_t>(p) * ac + i] : a[static_cast<std::size_t>(i) * ac + p];
        if (!tb) {
          const Real* brow = b + static_cast<std::size_t>(p) * bc;
          for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        } else {
          for (int j = 0; j < n; ++j) orow[j] += av * b[static_cast<std::size_t>(j) * bc + p];
        }
      }
    }
  }

  // out += op(A) op(B), out preallocated (m x n).
  static void gemm_acc(const Real* a, int ar, int ac, bool ta, const Real* b, int /*br*/, int bc,
                       bool tb, Real* out, int m, int n) {
    const int k = ta ? ar : ac;
    for (int i = 0; i < m; ++i) {
      Real* orow = out + static_cast<std::size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const Real av = ta ? a[static_cast<std::size_t>(p) * ac + i] : a[static_cast<std::size_t>(i) * ac + p];
        if (!tb) {
          const Real* brow = b + static_cast<std::size_t>(p) * bc;
          for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        } else {
          for (int j = 0; j < n; ++j) orow[j] += av * b[static_cast<std::size_t>(j) * bc + p];
        }
      }
    }
  }

  std::vector<Node> nodes_;
  std::unordered_map<Tensor<Real>*, int> params_;

  friend class GraphTestPeer;
};

// Multi-head self-attention over x: [T, H]. Q/K/V/O are stored as combined
// [H, H] projections; heads are column slices. Encoder-style, no mask.
template <typename Real>
struct AttentionParams {
  Tensor<Real> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename Real>
int mhsa_forward(Graph<Real>& g, int x, AttentionParams<Real>& p, int n_heads) {
  const int H = g.shape(x).back();
  if (n_heads <= 0 || H % n_heads != 0)
    throw ConfigError("attention: hidden " + std::to_string(H) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  const int d = H / n_heads;
  const int q = g.linear(x, g.param(p.wq), g.param(p.bq));
  const int k = g.linear(x, g.param(p.wk), g.param(p.bk));
  const int v = g.linear(x, g.param(p.wv), g.param(p.bv));
  const Real inv_sqrt_d = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<int> heads;
  heads.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    const int qh = g.slice_cols(q, h * d, d);
    const int kh = g.slice_cols(k, h * d, d);
    const int vh = g.slice_cols(v, h * d, d);
    const int scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt_d);
    const int att = g.softmax_rows(scores);
    heads.push_back(g.matmul(att, vh, false, false));
  }
  const int ctx = n_heads == 1 ? heads[0] : g.concat_cols(heads);
  return g.linear(ctx, g.param(p.wo), g.param(p.bo));
}

}  // namespace petkit

#endif  // PETKIT_GRAPH_HPP
