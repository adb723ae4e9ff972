#include "xvf/ops.hpp"

#include <algorithm>
#include <cmath>

#include "xvf/error.hpp"
#include "xvf/linalg.hpp"
#include "xvf/rng.hpp"

namespace xvf {

namespace {

using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;
using RowVecMap = Eigen::Map<Eigen::RowVectorXd>;
using ConstRowVecMap = Eigen::Map<const Eigen::RowVectorXd>;

MatMap rows_of(Tensor& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
ConstMatMap rows_of(const Tensor& t) {
  return {t.ptr(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

struct SeqDims {
  std::size_t batch;
  std::size_t frames;
  std::size_t channels;
};

SeqDims sequence_dims(const Shape& shape, const char* op) {
  if (shape.size() == 2) return {1, shape[0], shape[1]};
  if (shape.size() == 3) return {shape[0], shape[1], shape[2]};
  fail<ShapeError>(op, ": expected [T, C] or [B, T, C], got ", shape_string(shape));
}

Shape with_last(Shape shape, std::size_t last) {
  shape.back() = last;
  return shape;
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

}  // namespace

// ---------------------------------------------------------------------------
// Convolution

Var conv1d(const Var& input, const Var& kernel, const Var& bias, std::size_t dilation,
           ConvMode mode) {
  const auto dims = sequence_dims(input.shape(), "conv1d");
  require<ShapeError>(dilation >= 1, "conv1d: dilation must be >= 1, got ", dilation);
  const Shape& ks = kernel.shape();
  std::size_t width = 0;
  std::size_t out_channels = 0;
  if (mode == ConvMode::kDepthwise) {
    require<ShapeError>(ks.size() == 2 && ks[1] == dims.channels,
                        "conv1d(depthwise): kernel must be [width, ", dims.channels, "], got ",
                        shape_string(ks));
    width = ks[0];
    out_channels = dims.channels;
  } else {
    require<ShapeError>(ks.size() == 3 && ks[1] == dims.channels,
                        "conv1d: kernel must be [width, ", dims.channels, ", C_out], got ",
                        shape_string(ks));
    width = ks[0];
    out_channels = ks[2];
    require<ShapeError>(mode != ConvMode::kPointwise || width == 1,
                        "conv1d(pointwise): kernel width must be 1, got ", width);
  }
  require<ShapeError>(width % 2 == 1, "conv1d: kernel width must be odd, got ", width);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require<ShapeError>(bias.value().size() == out_channels, "conv1d: bias must have ",
                        out_channels, " elements, got ", shape_string(bias.shape()));
  }

  const auto T = static_cast<std::ptrdiff_t>(dims.frames);
  const auto cin = static_cast<Eigen::Index>(dims.channels);
  const auto cout = static_cast<Eigen::Index>(out_channels);
  const auto half = static_cast<std::ptrdiff_t>(width / 2);
  const auto dil = static_cast<std::ptrdiff_t>(dilation);

  // Calls fn(tap, out_start, in_start, length) for the valid frame range of each tap.
  auto for_each_tap = [=](auto&& fn) {
    for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(width); ++j) {
      const std::ptrdiff_t off = (j - half) * dil;
      const std::ptrdiff_t start = std::max<std::ptrdiff_t>(0, -off);
      const std::ptrdiff_t end = std::min<std::ptrdiff_t>(T, T - off);
      if (end > start) fn(j, start, start + off, end - start);
    }
  };

  Tensor out(with_last(input.shape(), out_channels));
  const Tensor& x = input.value();
  const Tensor& k = kernel.value();
  for (std::size_t b = 0; b < dims.batch; ++b) {
    ConstMatMap in_b(x.ptr() + b * T * cin, T, cin);
    MatMap out_b(out.ptr() + b * T * cout, T, cout);
    if (mode == ConvMode::kDepthwise) {
      for_each_tap([&](std::ptrdiff_t j, std::ptrdiff_t os, std::ptrdiff_t is, std::ptrdiff_t n) {
        ConstRowVecMap kj(k.ptr() + j * cin, cin);
        out_b.middleRows(os, n).array() += in_b.middleRows(is, n).array().rowwise() * kj.array();
      });
    } else {
      for_each_tap([&](std::ptrdiff_t j, std::ptrdiff_t os, std::ptrdiff_t is, std::ptrdiff_t n) {
        ConstMatMap kj(k.ptr() + j * cin * cout, cin, cout);
        out_b.middleRows(os, n).noalias() += in_b.middleRows(is, n) * kj;
      });
    }
    if (has_bias) out_b.rowwise() += ConstRowVecMap(bias.value().ptr(), cout);
  }

  std::vector<Var> parents{input, kernel};
  if (has_bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), [=](Node& self) {
    Node& in_node = parent(self, 0);
    Node& k_node = parent(self, 1);
    const Tensor& g = self.grad;
    for (std::size_t b = 0; b < dims.batch; ++b) {
      ConstMatMap in_b(in_node.value.ptr() + b * T * cin, T, cin);
      ConstMatMap g_b(g.ptr() + b * T * cout, T, cout);
      if (in_node.requires_grad) {
        MatMap gin_b(in_node.grad_buffer().ptr() + b * T * cin, T, cin);
        for_each_tap([&](std::ptrdiff_t j, std::ptrdiff_t os, std::ptrdiff_t is, std::ptrdiff_t n) {
          if (mode == ConvMode::kDepthwise) {
            ConstRowVecMap kj(k_node.value.ptr() + j * cin, cin);
            gin_b.middleRows(is, n).array() += g_b.middleRows(os, n).array().rowwise() * kj.array();
          } else {
            ConstMatMap kj(k_node.value.ptr() + j * cin * cout, cin, cout);
            gin_b.middleRows(is, n).noalias() += g_b.middleRows(os, n) * kj.transpose();
          }
        });
      }
      if (k_node.requires_grad) {
        Tensor& gk = k_node.grad_buffer();
        for_each_tap([&](std::ptrdiff_t j, std::ptrdiff_t os, std::ptrdiff_t is, std::ptrdiff_t n) {
          if (mode == ConvMode::kDepthwise) {
            RowVecMap gkj(gk.ptr() + j * cin, cin);
            gkj += (in_b.middleRows(is, n).array() * g_b.middleRows(os, n).array())
                       .colwise()
                       .sum()
                       .matrix();
          } else {
            MatMap gkj(gk.ptr() + j * cin * cout, cin, cout);
            gkj.noalias() += in_b.middleRows(is, n).transpose() * g_b.middleRows(os, n);
          }
        });
      }
      if (has_bias && parent(self, 2).requires_grad) {
        RowVecMap gbias(parent(self, 2).grad_buffer().ptr(), cout);
        gbias += g_b.colwise().sum();
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dense layers and elementwise ops

Var affine(const Var& input, const Var& weight, const Var& bias) {
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  require<ShapeError>(w.rank() == 2 && w.dim(1) == x.cols(), "affine: weight ",
                      shape_string(w.shape()), " incompatible with input ",
                      shape_string(x.shape()));
  const std::size_t out_dim = w.dim(0);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require<ShapeError>(bias.value().size() == out_dim, "affine: bias must have ", out_dim,
                        " elements, got ", shape_string(bias.shape()));
  }
  Tensor out(with_last(x.shape(), out_dim));
  auto y = rows_of(out);
  y.noalias() = rows_of(x) * rows_of(w).transpose();
  if (has_bias) y.rowwise() += ConstRowVecMap(bias.value().ptr(), static_cast<Eigen::Index>(out_dim));

  std::vector<Var> parents{input, weight};
  if (has_bias) parents.push_back(bias);
  return make_node(std::move(out), std::move(parents), [has_bias](Node& self) {
    Node& in_node = parent(self, 0);
    Node& w_node = parent(self, 1);
    auto g = rows_of(std::as_const(self.grad));
    if (in_node.requires_grad) rows_of(in_node.grad_buffer()).noalias() += g * rows_of(w_node.value);
    if (w_node.requires_grad) {
      rows_of(w_node.grad_buffer()).noalias() += g.transpose() * rows_of(in_node.value);
    }
    if (has_bias && parent(self, 2).requires_grad) {
      Tensor& gb = parent(self, 2).grad_buffer();
      RowVecMap(gb.ptr(), static_cast<Eigen::Index>(gb.size())) += g.colwise().sum();
    }
  });
}

Var add_bias(const Var& input, const Var& bias) {
  const Tensor& x = input.value();
  require<ShapeError>(bias.value().size() == x.cols(), "add_bias: bias must have ", x.cols(),
                      " elements, got ", shape_string(bias.shape()));
  Tensor out = x;
  rows_of(out).rowwise() += ConstRowVecMap(bias.value().ptr(), static_cast<Eigen::Index>(x.cols()));
  return make_node(std::move(out), {input, bias}, [](Node& self) {
    if (parent(self, 0).requires_grad) rows_of(parent(self, 0).grad_buffer()) += rows_of(self.grad);
    if (parent(self, 1).requires_grad) {
      Tensor& gb = parent(self, 1).grad_buffer();
      RowVecMap(gb.ptr(), static_cast<Eigen::Index>(gb.size())) +=
          rows_of(std::as_const(self.grad)).colwise().sum();
    }
  });
}

Var relu(const Var& input) {
  Tensor out = input.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return make_node(std::move(out), {input}, [](Node& self) {
    Node& in = parent(self, 0);
    Tensor& gin = in.grad_buffer();
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (in.value[i] > 0.0) gin[i] += self.grad[i];
    }
  });
}

Var tanh(const Var& input) {
  Tensor out = input.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return make_node(std::move(out), {input}, [](Node& self) {
    Tensor& gin = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < gin.size(); ++i) {
      const double y = self.value[i];
      gin[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var add(const Var& a, const Var& b) {
  require<ShapeError>(a.shape() == b.shape(), "add: shapes ", shape_string(a.shape()), " and ",
                      shape_string(b.shape()), " differ");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!parent(self, p).requires_grad) continue;
      Tensor& g = parent(self, p).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require<ShapeError>(a.shape() == b.shape(), "mul: shapes ", shape_string(a.shape()), " and ",
                      shape_string(b.shape()), " differ");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_node(std::move(out), {a, b}, [](Node& self) {
    // Both parents may be the same node; each contribution is added separately.
    for (std::size_t p = 0; p < 2; ++p) {
      if (!parent(self, p).requires_grad) continue;
      const Tensor& other = parent(self, 1 - p).value;
      Tensor& g = parent(self, p).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * other[i];
    }
  });
}

Var scale(const Var& input, double factor) {
  Tensor out = input.value();
  for (auto& v : out.data()) v *= factor;
  return make_node(std::move(out), {input}, [factor](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Var sum(const Var& input) {
  double total = 0.0;
  for (double v : input.value().data()) total += v;
  return make_node(Tensor::scalar(total), {input}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    const double go = self.grad[0];
    for (auto& v : g.data()) v += go;
  });
}

Var reshape(const Var& input, Shape shape) {
  Tensor out = input.value().reshaped(std::move(shape));
  return make_node(std::move(out), {input}, [](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Structural ops

Var concat_channels(std::span<const Var> parts) {
  require<ShapeError>(!parts.empty(), "concat_channels: no inputs");
  const Shape& first = parts[0].shape();
  std::size_t total = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require<ShapeError>(s.size() == first.size() &&
                            std::equal(s.begin(), s.end() - 1, first.begin()),
                        "concat_channels: leading extents differ: ", shape_string(s), " vs ",
                        shape_string(first));
    widths.push_back(s.back());
    total += s.back();
  }
  Tensor out(with_last(first, total));
  const std::size_t rows = out.rows();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& v = parts[i].value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.ptr() + r * widths[i], widths[i], out.ptr() + r * total + offset);
    }
    offset += widths[i];
  }
  return make_node(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                   [widths, total, rows](Node& self) {
                     std::size_t off = 0;
                     for (std::size_t i = 0; i < widths.size(); ++i) {
                       Node& p = parent(self, i);
                       if (p.requires_grad) {
                         Tensor& g = p.grad_buffer();
                         for (std::size_t r = 0; r < rows; ++r) {
                           for (std::size_t c = 0; c < widths[i]; ++c) {
                             g[r * widths[i] + c] += self.grad[r * total + off + c];
                           }
                         }
                       }
                       off += widths[i];
                     }
                   });
}

Var append_shared_rows(const Var& per_item, const Var& shared) {
  const Shape& a = per_item.shape();
  const Shape& s = shared.shape();
  require<ShapeError>(a.size() == 3 && s.size() == 2 && a[2] == s[1],
                      "append_shared_rows: expected [B, M, k] and [N, k], got ", shape_string(a),
                      " and ", shape_string(s));
  const std::size_t B = a[0], M = a[1], N = s[0], k = a[2];
  Tensor out({B, M + N, k});
  for (std::size_t b = 0; b < B; ++b) {
    std::copy_n(per_item.value().ptr() + b * M * k, M * k, out.ptr() + b * (M + N) * k);
    std::copy_n(shared.value().ptr(), N * k, out.ptr() + b * (M + N) * k + M * k);
  }
  return make_node(std::move(out), {per_item, shared}, [B, M, N, k](Node& self) {
    Node& pa = parent(self, 0);
    Node& ps = parent(self, 1);
    for (std::size_t b = 0; b < B; ++b) {
      const double* g = self.grad.ptr() + b * (M + N) * k;
      if (pa.requires_grad) {
        double* ga = pa.grad_buffer().ptr() + b * M * k;
        for (std::size_t i = 0; i < M * k; ++i) ga[i] += g[i];
      }
      if (ps.requires_grad) {
        double* gs = ps.grad_buffer().ptr();
        for (std::size_t i = 0; i < N * k; ++i) gs[i] += g[M * k + i];
      }
    }
  });
}

Var batched_matmul_nt(const Var& a, const Var& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  require<ShapeError>(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2],
                      "batched_matmul_nt: expected [B, n, k] and [B, m, k], got ",
                      shape_string(sa), " and ", shape_string(sb));
  const auto B = sa[0];
  const auto n = static_cast<Eigen::Index>(sa[1]);
  const auto m = static_cast<Eigen::Index>(sb[1]);
  const auto k = static_cast<Eigen::Index>(sa[2]);
  Tensor out({B, sa[1], sb[1]});
  for (std::size_t i = 0; i < B; ++i) {
    MatMap(out.ptr() + i * n * m, n, m).noalias() =
        ConstMatMap(a.value().ptr() + i * n * k, n, k) *
        ConstMatMap(b.value().ptr() + i * m * k, m, k).transpose();
  }
  return make_node(std::move(out), {a, b}, [B, n, m, k](Node& self) {
    Node& na = parent(self, 0);
    Node& nb = parent(self, 1);
    for (std::size_t i = 0; i < B; ++i) {
      ConstMatMap g(self.grad.ptr() + i * n * m, n, m);
      if (na.requires_grad) {
        MatMap(na.grad_buffer().ptr() + i * n * k, n, k).noalias() +=
            g * ConstMatMap(nb.value.ptr() + i * m * k, m, k);
      }
      if (nb.requires_grad) {
        MatMap(nb.grad_buffer().ptr() + i * m * k, m, k).noalias() +=
            g.transpose() * ConstMatMap(na.value.ptr() + i * n * k, n, k);
      }
    }
  });
}

Var cosine_scores(const Var& frames, const Var& keys) {
  const auto dims = sequence_dims(frames.shape(), "cosine_scores");
  require<ShapeError>(keys.value().size() == dims.batch * dims.channels,
                      "cosine_scores: keys must be [", dims.batch, ", ", dims.channels, "], got ",
                      shape_string(keys.shape()));
  const std::size_t B = dims.batch, T = dims.frames, D = dims.channels;
  const Tensor& h = frames.value();
  const Tensor& r = keys.value();
  std::vector<double> h_norm(B * T), r_norm(B);
  Tensor out({B, T});
  for (std::size_t b = 0; b < B; ++b) {
    Eigen::Map<const Vector> rb(r.ptr() + b * D, static_cast<Eigen::Index>(D));
    r_norm[b] = rb.norm();
    for (std::size_t t = 0; t < T; ++t) {
      Eigen::Map<const Vector> ht(h.ptr() + (b * T + t) * D, static_cast<Eigen::Index>(D));
      h_norm[b * T + t] = ht.norm();
      // A zero vector has no direction: score 0, no gradient.
      const double denom = h_norm[b * T + t] * r_norm[b];
      out[b * T + t] = denom > 0.0 ? ht.dot(rb) / denom : 0.0;
    }
  }
  return make_node(std::move(out), {frames, keys}, [B, T, D, h_norm, r_norm](Node& self) {
    Node& hn = parent(self, 0);
    Node& rn = parent(self, 1);
    for (std::size_t b = 0; b < B; ++b) {
      Eigen::Map<const Vector> rb(rn.value.ptr() + b * D, static_cast<Eigen::Index>(D));
      for (std::size_t t = 0; t < T; ++t) {
        const std::size_t bt = b * T + t;
        const double g = self.grad[bt];
        if (g == 0.0) continue;
        const double e = self.value[bt];
        Eigen::Map<const Vector> ht(hn.value.ptr() + bt * D, static_cast<Eigen::Index>(D));
        const double hn2 = h_norm[bt], rn2 = r_norm[b];
        if (hn2 * rn2 == 0.0) continue;
        if (hn.requires_grad) {
          Eigen::Map<Vector>(hn.grad_buffer().ptr() + bt * D, static_cast<Eigen::Index>(D)) +=
              g * (rb / (hn2 * rn2) - e * ht / (hn2 * hn2));
        }
        if (rn.requires_grad) {
          Eigen::Map<Vector>(rn.grad_buffer().ptr() + b * D, static_cast<Eigen::Index>(D)) +=
              g * (ht / (hn2 * rn2) - e * rb / (rn2 * rn2));
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalization and regularization

BatchNormState::BatchNormState(std::size_t channels, double momentum_, double epsilon_)
    : running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      momentum(momentum_),
      epsilon(epsilon_) {}

Var batchnorm(const Var& input, const Var& gamma, const Var& beta, BatchNormState& state,
              Mode mode) {
  const Tensor& x = input.value();
  const std::size_t C = x.cols();
  const std::size_t N = x.rows();
  require<ShapeError>(N > 0 && C > 0, "batchnorm: zero-size batch");
  require<ShapeError>(gamma.value().size() == C && beta.value().size() == C &&
                          state.running_mean.size() == C,
                      "batchnorm: parameters must have ", C, " channels");
  require(state.epsilon > 0.0, "batchnorm: epsilon must be positive");

  auto xm = rows_of(x);
  Eigen::RowVectorXd mean, var;
  if (mode == Mode::kTraining) {
    mean = xm.colwise().mean();
    var = (xm.rowwise() - mean).array().square().colwise().mean();
    const double m = state.momentum;
    RowVecMap rm(state.running_mean.ptr(), static_cast<Eigen::Index>(C));
    RowVecMap rv(state.running_var.ptr(), static_cast<Eigen::Index>(C));
    rm = m * rm + (1.0 - m) * mean;
    rv = m * rv + (1.0 - m) * var;
  } else {
    mean = ConstRowVecMap(state.running_mean.ptr(), static_cast<Eigen::Index>(C));
    var = ConstRowVecMap(state.running_var.ptr(), static_cast<Eigen::Index>(C));
  }
  const Eigen::RowVectorXd inv_std = (var.array() + state.epsilon).rsqrt().matrix();
  ConstRowVecMap g(gamma.value().ptr(), static_cast<Eigen::Index>(C));
  ConstRowVecMap bt(beta.value().ptr(), static_cast<Eigen::Index>(C));

  RowMatrix xhat = (xm.rowwise() - mean).array().rowwise() * inv_std.array();
  Tensor out(x.shape());
  rows_of(out) = (xhat.array().rowwise() * g.array()).rowwise() + bt.array();

  const bool training = mode == Mode::kTraining;
  return make_node(std::move(out), {input, gamma, beta},
                   [xhat = std::move(xhat), inv_std, training](Node& self) {
                     Node& in = parent(self, 0);
                     Node& gn = parent(self, 1);
                     Node& bn = parent(self, 2);
                     auto gy = rows_of(std::as_const(self.grad));
                     const auto cols = static_cast<Eigen::Index>(gy.cols());
                     const Eigen::RowVectorXd gsum = gy.colwise().sum();
                     const Eigen::RowVectorXd gxhat_sum =
                         (gy.array() * xhat.array()).colwise().sum().matrix();
                     if (gn.requires_grad) RowVecMap(gn.grad_buffer().ptr(), cols) += gxhat_sum;
                     if (bn.requires_grad) RowVecMap(bn.grad_buffer().ptr(), cols) += gsum;
                     if (!in.requires_grad) return;
                     ConstRowVecMap gamma_v(gn.value.ptr(), cols);
                     const Eigen::RowVectorXd s = (gamma_v.array() * inv_std.array()).matrix();
                     auto gx = rows_of(in.grad_buffer());
                     if (training) {
                       const double n = static_cast<double>(gy.rows());
                       gx.array() += ((gy.rowwise() - gsum / n).array() -
                                      xhat.array().rowwise() * (gxhat_sum / n).array())
                                         .rowwise() *
                                     s.array();
                     } else {
                       gx.array() += gy.array().rowwise() * s.array();
                     }
                   });
}

Var dropout(const Var& input, double rate, Rng& rng, Mode mode) {
  require(rate >= 0.0 && rate < 1.0, "dropout: rate must be in [0, 1), got ", rate);
  if (mode == Mode::kInference || rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(input.value().size());
  for (auto& m : mask) m = rng.uniform() < rate ? 0.0 : keep_scale;
  Tensor out = input.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_node(std::move(out), {input}, [mask = std::move(mask)](Node& self) {
    Tensor& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Loss

Var softmax_cross_entropy(const Var& logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  const std::size_t B = z.rank() == 1 ? 1 : z.rows();
  const std::size_t n = z.cols();
  require<ShapeError>(z.rank() <= 2 && labels.size() == B, "softmax_cross_entropy: ",
                      labels.size(), " labels for logits ", shape_string(z.shape()));
  Tensor probs(Shape{B, n});
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    require(labels[b] < n, "softmax_cross_entropy: label ", labels[b], " out of range for ", n,
            " classes");
    const double* row = z.ptr() + b * n;
    const double mx = *std::max_element(row, row + n);
    double denom = 0.0;
    for (std::size_t c = 0; c < n; ++c) denom += std::exp(row[c] - mx);
    const double log_denom = std::log(denom);
    for (std::size_t c = 0; c < n; ++c) probs[b * n + c] = std::exp(row[c] - mx - log_denom);
    loss += log_denom + mx - row[labels[b]];
  }
  loss /= static_cast<double>(B);
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return make_node(Tensor::scalar(loss), {logits},
                   [probs = std::move(probs), lab = std::move(lab), B, n](Node& self) {
                     Tensor& g = parent(self, 0).grad_buffer();
                     const double go = self.grad[0] / static_cast<double>(B);
                     for (std::size_t b = 0; b < B; ++b) {
                       for (std::size_t c = 0; c < n; ++c) {
                         const double target = c == lab[b] ? 1.0 : 0.0;
                         g[b * n + c] += go * (probs[b * n + c] - target);
                       }
                     }
                   });
}

// ---------------------------------------------------------------------------
// Pooling

Tensor attention_weights(const Tensor& scores, std::size_t batch, std::size_t frames) {
  require<ShapeError>(scores.size() == batch * frames, "attention_weights: expected ",
                      batch * frames, " scores, got ", scores.size());
  Tensor alpha({batch, frames});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* e = scores.ptr() + b * frames;
    const double mx = *std::max_element(e, e + frames);
    double denom = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      alpha[b * frames + t] = std::exp(e[t] - mx);
      denom += alpha[b * frames + t];
    }
    for (std::size_t t = 0; t < frames; ++t) alpha[b * frames + t] /= denom;
  }
  return alpha;
}

Var attentive_pool(const Var& frames, const Var& scores) {
  const auto dims = sequence_dims(frames.shape(), "attentive_pool");
  const std::size_t B = dims.batch, T = dims.frames, D = dims.channels;
  require<ShapeError>(T > 0, "attentive_pool: no frames");
  const bool weighted = scores.defined();
  Tensor alpha;
  if (weighted) {
    alpha = attention_weights(scores.value(), B, T);
  } else {
    alpha = Tensor({B, T}, 1.0 / static_cast<double>(T));
  }

  const Tensor& h = frames.value();
  Tensor out({B, 2 * D});
  for (std::size_t b = 0; b < B; ++b) {
    ConstMatMap hb(h.ptr() + b * T * D, static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(D));
    Eigen::Map<const Vector> ab(alpha.ptr() + b * T, static_cast<Eigen::Index>(T));
    const Eigen::RowVectorXd mu = ab.transpose() * hb;
    const Eigen::RowVectorXd var =
        ab.transpose() * (hb.rowwise() - mu).array().square().matrix();
    RowVecMap(out.ptr() + b * 2 * D, static_cast<Eigen::Index>(D)) = mu;
    RowVecMap(out.ptr() + b * 2 * D + D, static_cast<Eigen::Index>(D)) =
        var.array().max(0.0).sqrt().matrix();
  }

  std::vector<Var> parents{frames};
  if (weighted) parents.push_back(scores);
  return make_node(std::move(out), std::move(parents), [alpha = std::move(alpha), B, T, D,
                                                        weighted](Node& self) {
    constexpr double kVarianceFloor = 1e-10;
    Node& hn = parent(self, 0);
    const auto Ti = static_cast<Eigen::Index>(T);
    const auto Di = static_cast<Eigen::Index>(D);
    for (std::size_t b = 0; b < B; ++b) {
      ConstMatMap hb(hn.value.ptr() + b * T * D, Ti, Di);
      Eigen::Map<const Vector> ab(alpha.ptr() + b * T, Ti);
      ConstRowVecMap mu(self.value.ptr() + b * 2 * D, Di);
      ConstRowVecMap sigma(self.value.ptr() + b * 2 * D + D, Di);
      ConstRowVecMap g_mu(self.grad.ptr() + b * 2 * D, Di);
      ConstRowVecMap g_sigma(self.grad.ptr() + b * 2 * D + D, Di);
      const Eigen::RowVectorXd g_var =
          (g_sigma.array() / (2.0 * sigma.array().square().max(kVarianceFloor).sqrt())).matrix();
      const RowMatrix centered = hb.rowwise() - mu;
      if (hn.requires_grad) {
        MatMap gh(hn.grad_buffer().ptr() + b * T * D, Ti, Di);
        RowMatrix local = (2.0 * centered.array()).rowwise() * g_var.array();
        local.rowwise() += g_mu;
        gh += ab.asDiagonal() * local;
      }
      if (weighted && parent(self, 1).requires_grad) {
        const Vector g_alpha =
            hb * g_mu.transpose() + centered.array().square().matrix() * g_var.transpose();
        const double mean_g = ab.dot(g_alpha);
        double* ge = parent(self, 1).grad_buffer().ptr() + b * T;
        for (std::size_t t = 0; t < T; ++t) {
          ge[t] += ab[static_cast<Eigen::Index>(t)] * (g_alpha[static_cast<Eigen::Index>(t)] - mean_g);
        }
      }
    }
  });
}

}  // namespace xvf
