#pragma once

#include "geoprompt/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace geoprompt {

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                              shape_string(b));
}

template <typename Scalar>
void check_same_tape(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

template <typename Scalar>
bool is_row_broadcast(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (b.rank() > 2 || b.size() != a.cols() || a.rank() == 0) return false;
  return b.rank() < 2 || b.dim(0) == 1;
}

}  // namespace detail

/// Matrix product of a (rows x k, leading dims flattened) with b (k x n).
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (bv.rank() != 2 || av.rank() == 0 || av.cols() != bv.dim(0)) detail::shape_error("matmul", av.shape(), bv.shape());
  Shape out_shape = av.shape();
  out_shape.back() = bv.dim(1);
  Tensor<Scalar> out(out_shape);
  out.matrix().noalias() = av.matrix() * bv.matrix();
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->matrix().noalias() += g.matrix() * b.value().matrix().transpose();
    if (auto* gb = t.grad_buffer(b)) gb->matrix().noalias() += a.value().matrix().transpose() * g.matrix();
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  const auto& av = a.value();
  if (av.rank() != 2) throw std::invalid_argument("transpose: expected rank 2, got " + shape_string(av.shape()));
  Tensor<Scalar> out(Shape{av.dim(1), av.dim(0)});
  out.matrix() = av.matrix().transpose();
  return a.tape().record(std::move(out), {a}, [a](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->matrix() += g.matrix().transpose();
  });
}

/// Elementwise sum. b may also be a row vector broadcast over the rows of a.
template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<Scalar> out(av.shape(), av.values() + bv.values());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
      if (auto* ga = t.grad_buffer(a)) ga->values() += g.values();
      if (auto* gb = t.grad_buffer(b)) gb->values() += g.values();
    });
  }
  if (!detail::is_row_broadcast(av, bv)) detail::shape_error("add", av.shape(), bv.shape());
  Tensor<Scalar> out = av;
  out.matrix().rowwise() += Eigen::Map<const RowVector<Scalar>>(bv.data(), bv.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->values() += g.values();
    if (auto* gb = t.grad_buffer(b)) {
      Eigen::Map<RowVector<Scalar>>(gb->data(), gb->size()) += g.matrix().colwise().sum();
    }
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() == bv.shape()) {
    Tensor<Scalar> out(av.shape(), av.values() - bv.values());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
      if (auto* ga = t.grad_buffer(a)) ga->values() += g.values();
      if (auto* gb = t.grad_buffer(b)) gb->values() -= g.values();
    });
  }
  if (!detail::is_row_broadcast(av, bv)) detail::shape_error("sub", av.shape(), bv.shape());
  Tensor<Scalar> out = av;
  out.matrix().rowwise() -= Eigen::Map<const RowVector<Scalar>>(bv.data(), bv.size());
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->values() += g.values();
    if (auto* gb = t.grad_buffer(b)) {
      Eigen::Map<RowVector<Scalar>>(gb->data(), gb->size()) -= g.matrix().colwise().sum();
    }
  });
}

/// Elementwise (Hadamard) product of equally shaped tensors.
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  detail::check_same_tape(a, b);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.shape() != bv.shape()) detail::shape_error("mul", av.shape(), bv.shape());
  Tensor<Scalar> out(av.shape(), av.values().cwiseProduct(bv.values()));
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->values() += g.values().cwiseProduct(b.value().values());
    if (auto* gb = t.grad_buffer(b)) gb->values() += g.values().cwiseProduct(a.value().values());
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  Tensor<Scalar> out(a.shape(), a.value().values() * s);
  return a.tape().record(std::move(out), {a}, [a, s](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->values() += g.values() * s;
  });
}

/// Concatenation along the first axis (axis = 0) or the last axis (axis = -1).
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& inputs, int axis) {
  if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
  Tape<Scalar>& tape = inputs.front().tape();
  const Shape& first = inputs.front().shape();
  if (first.empty()) throw std::invalid_argument("concat: rank-0 input");
  if (axis == 0) {
    Shape out_shape = first;
    out_shape[0] = 0;
    Index total = 0;
    for (const auto& v : inputs) {
      detail::check_same_tape(inputs.front(), v);
      const Shape& s = v.shape();
      if (s.size() != first.size() || !std::equal(s.begin() + 1, s.end(), first.begin() + 1)) {
        detail::shape_error("concat(axis 0)", first, s);
      }
      out_shape[0] += s[0];
      total += v.value().size();
    }
    Vector<Scalar> values(total);
    Index offset = 0;
    for (const auto& v : inputs) {
      values.segment(offset, v.value().size()) = v.value().values();
      offset += v.value().size();
    }
    return tape.record(Tensor<Scalar>(out_shape, std::move(values)), std::span<const Var<Scalar>>(inputs),
                       [inputs](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                         Index off = 0;
                         for (const auto& v : inputs) {
                           const Index n = v.value().size();
                           if (auto* gv = t.grad_buffer(v)) gv->values() += g.values().segment(off, n);
                           off += n;
                         }
                       });
  }
  if (axis != -1) throw std::invalid_argument("concat: axis must be 0 or -1");
  const Index rows = inputs.front().value().rows();
  Index cols = 0;
  for (const auto& v : inputs) {
    detail::check_same_tape(inputs.front(), v);
    if (v.value().rows() != rows || v.shape().size() != first.size()) detail::shape_error("concat(axis -1)", first, v.shape());
    cols += v.value().cols();
  }
  Shape out_shape = first;
  out_shape.back() = cols;
  Tensor<Scalar> out(out_shape);
  Index c0 = 0;
  for (const auto& v : inputs) {
    out.matrix().middleCols(c0, v.value().cols()) = v.value().matrix();
    c0 += v.value().cols();
  }
  return tape.record(std::move(out), std::span<const Var<Scalar>>(inputs),
                     [inputs](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                       Index c = 0;
                       for (const auto& v : inputs) {
                         const Index n = v.value().cols();
                         if (auto* gv = t.grad_buffer(v)) gv->matrix() += g.matrix().middleCols(c, n);
                         c += n;
                       }
                     });
}

template <typename Scalar>
Var<Scalar> concat(std::initializer_list<Var<Scalar>> inputs, int axis) {
  return concat(std::vector<Var<Scalar>>(inputs), axis);
}

/// Selects slices along the first axis. Backward scatters (adds) into the source.
template <typename Scalar>
Var<Scalar> gather(const Var<Scalar>& x, std::vector<Index> idx) {
  const auto& xv = x.value();
  if (xv.rank() == 0) throw std::invalid_argument("gather: rank-0 input");
  const Index n0 = xv.dim(0);
  const Index stride = n0 == 0 ? 0 : xv.size() / n0;
  for (Index i : idx) {
    if (i < 0 || i >= n0) {
      throw std::invalid_argument("gather: index " + std::to_string(i) + " out of range for shape " +
                                  shape_string(xv.shape()));
    }
  }
  Shape out_shape = xv.shape();
  out_shape[0] = static_cast<Index>(idx.size());
  Tensor<Scalar> out(out_shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    out.values().segment(static_cast<Index>(r) * stride, stride) = xv.values().segment(idx[r] * stride, stride);
  }
  return x.tape().record(std::move(out), {x}, [x, idx = std::move(idx), stride](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      for (std::size_t r = 0; r < idx.size(); ++r) {
        gx->values().segment(idx[r] * stride, stride) += g.values().segment(static_cast<Index>(r) * stride, stride);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& x, Index begin, Index count) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || begin < 0 || count < 0 || begin + count > xv.dim(0)) {
    throw std::invalid_argument("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                                ") outside shape " + shape_string(xv.shape()));
  }
  const Index stride = xv.dim(0) == 0 ? 0 : xv.size() / xv.dim(0);
  Shape out_shape = xv.shape();
  out_shape[0] = count;
  Tensor<Scalar> out(out_shape, xv.values().segment(begin * stride, count * stride));
  return x.tape().record(std::move(out), {x}, [x, begin, count, stride](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->values().segment(begin * stride, count * stride) += g.values();
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& x, Index begin, Index count) {
  const auto& xv = x.value();
  if (xv.rank() == 0 || begin < 0 || count < 0 || begin + count > xv.cols()) {
    throw std::invalid_argument("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                                ") outside shape " + shape_string(xv.shape()));
  }
  Shape out_shape = xv.shape();
  out_shape.back() = count;
  Tensor<Scalar> out(out_shape);
  out.matrix() = xv.matrix().middleCols(begin, count);
  return x.tape().record(std::move(out), {x}, [x, begin, count](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->matrix().middleCols(begin, count) += g.matrix();
  });
}

/// Row-wise softmax over the last axis.
template <typename Scalar>
Var<Scalar> softmax(const Var<Scalar>& x) {
  const auto& xv = x.value();
  Tensor<Scalar> out(xv.shape());
  auto y = out.matrix();
  const auto in = xv.matrix();
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    y.row(r) = (in.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  const int id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto y = t.value(id).matrix();
      const auto gm = g.matrix();
      for (Index r = 0; r < y.rows(); ++r) {
        const Scalar dot = gm.row(r).dot(y.row(r));
        gx->matrix().row(r).array() += y.row(r).array() * (gm.row(r).array() - dot);
      }
    }
  });
}

/// Mean softmax cross-entropy of logits (rows x classes) against integer labels.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::vector<Index> labels) {
  const auto& lv = logits.value();
  const auto z = lv.matrix();
  if (static_cast<Index>(labels.size()) != z.rows()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                shape_string(lv.shape()));
  }
  RowMatrix<Scalar> probs(z.rows(), z.cols());
  Scalar loss = 0;
  for (Index r = 0; r < z.rows(); ++r) {
    const Index y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    const Scalar m = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - m).exp();
    const Scalar s = probs.row(r).sum();
    probs.row(r) /= s;
    loss += -(z(r, y) - m - std::log(s));
  }
  const Index rows = z.rows();
  loss /= static_cast<Scalar>(rows);
  return logits.tape().record(Tensor<Scalar>::scalar(loss), {logits},
                              [logits, probs = std::move(probs), labels = std::move(labels), rows](
                                  Tape<Scalar>& t, const Tensor<Scalar>& g) {
                                if (auto* gl = t.grad_buffer(logits)) {
                                  RowMatrix<Scalar> d = probs;
                                  for (Index r = 0; r < rows; ++r) d(r, labels[static_cast<std::size_t>(r)]) -= 1;
                                  gl->matrix() += d * (g.item() / static_cast<Scalar>(rows));
                                }
                              });
}

/// Row-wise layer normalization with affine gamma/beta (each of length cols).
template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps = Scalar(1e-5)) {
  const auto& xv = x.value();
  const Index n = xv.cols();
  if (gamma.value().size() != n || beta.value().size() != n) {
    detail::shape_error("layernorm", xv.shape(), gamma.shape());
  }
  const auto in = xv.matrix();
  RowMatrix<Scalar> xhat(in.rows(), n);
  Vector<Scalar> inv_std(in.rows());
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar mu = in.row(r).mean();
    const Scalar var = (in.row(r).array() - mu).square().mean();
    inv_std[r] = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std[r];
  }
  Eigen::Map<const RowVector<Scalar>> gm(gamma.value().data(), n);
  Eigen::Map<const RowVector<Scalar>> bm(beta.value().data(), n);
  Tensor<Scalar> out(xv.shape());
  out.matrix() = (xhat.array().rowwise() * gm.array()).rowwise() + bm.array();
  return x.tape().record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        const auto gmat = g.matrix();
        if (auto* gg = t.grad_buffer(gamma)) {
          Eigen::Map<RowVector<Scalar>>(gg->data(), n) += (gmat.array() * xhat.array()).colwise().sum().matrix();
        }
        if (auto* gb = t.grad_buffer(beta)) {
          Eigen::Map<RowVector<Scalar>>(gb->data(), n) += gmat.colwise().sum();
        }
        if (auto* gx = t.grad_buffer(x)) {
          Eigen::Map<const RowVector<Scalar>> gam(gamma.value().data(), n);
          for (Index r = 0; r < gmat.rows(); ++r) {
            const RowVector<Scalar> gh = gmat.row(r).cwiseProduct(gam);
            const Scalar mean_gh = gh.mean();
            const Scalar mean_ghx = gh.dot(xhat.row(r)) / static_cast<Scalar>(n);
            gx->matrix().row(r).array() +=
                inv_std[r] * (gh.array() - mean_gh - xhat.row(r).array() * mean_ghx);
          }
        }
      });
}

/// Exact (erf-based) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& x) {
  const auto& xv = x.value();
  const Scalar inv_sqrt2 = Scalar(1) / std::numbers::sqrt2_v<Scalar>;
  Tensor<Scalar> out(xv.shape());
  out.values() = xv.values().unaryExpr([inv_sqrt2](Scalar v) { return Scalar(0.5) * v * (Scalar(1) + std::erf(v * inv_sqrt2)); });
  return x.tape().record(std::move(out), {x}, [x, inv_sqrt2](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const Scalar inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<Scalar>;
      gx->values() += g.values().cwiseProduct(x.value().values().unaryExpr([=](Scalar v) {
        return Scalar(0.5) * (Scalar(1) + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(Scalar(-0.5) * v * v);
      }));
    }
  });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().values().array().tanh().matrix());
  const int id = x.tape().size();
  return x.tape().record(std::move(out), {x}, [x, id](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto& y = t.value(id).values();
      gx->values().array() += g.values().array() * (Scalar(1) - y.array().square());
    }
  });
}

/// Max over consecutive groups of `group` rows: (G*group) x F -> G x F.
/// Ties resolve to the lowest row; the argmax is a selection noted on the tape.
template <typename Scalar>
Var<Scalar> max_reduce(const Var<Scalar>& x, Index group) {
  const auto& xv = x.value();
  const Index rows = xv.rows();
  const Index cols = xv.cols();
  if (group <= 0 || rows % group != 0) {
    throw std::invalid_argument("max_reduce: group " + std::to_string(group) + " does not divide rows of " +
                                shape_string(xv.shape()));
  }
  const Index groups = rows / group;
  Tensor<Scalar> out(Shape{groups, cols});
  std::vector<Index> arg(static_cast<std::size_t>(groups * cols));
  const auto in = xv.matrix();
  for (Index gi = 0; gi < groups; ++gi) {
    for (Index c = 0; c < cols; ++c) {
      Index best = gi * group;
      Scalar v = in(best, c);
      for (Index r = best + 1; r < (gi + 1) * group; ++r) {
        if (in(r, c) > v) {
          v = in(r, c);
          best = r;
        }
      }
      out.matrix()(gi, c) = v;
      arg[static_cast<std::size_t>(gi * cols + c)] = best;
    }
  }
  x.tape().note_selection(arg);
  return x.tape().record(std::move(out), {x}, [x, arg = std::move(arg), cols](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      auto gm = gx->matrix();
      for (std::size_t k = 0; k < arg.size(); ++k) {
        const Index c = static_cast<Index>(k) % cols;
        gm(arg[k], c) += g.values()[static_cast<Index>(k)];
      }
    }
  });
}

/// Mean over consecutive groups of `group` rows: (G*group) x F -> G x F.
template <typename Scalar>
Var<Scalar> mean_reduce(const Var<Scalar>& x, Index group) {
  const auto& xv = x.value();
  const Index rows = xv.rows();
  if (group <= 0 || rows % group != 0) {
    throw std::invalid_argument("mean_reduce: group " + std::to_string(group) + " does not divide rows of " +
                                shape_string(xv.shape()));
  }
  const Index groups = rows / group;
  const Index cols = xv.cols();
  Tensor<Scalar> out(Shape{groups, cols});
  for (Index gi = 0; gi < groups; ++gi) out.matrix().row(gi) = xv.matrix().middleRows(gi * group, group).colwise().mean();
  return x.tape().record(std::move(out), {x}, [x, group, groups](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const Scalar inv = Scalar(1) / static_cast<Scalar>(group);
      for (Index gi = 0; gi < groups; ++gi) {
        gx->matrix().middleRows(gi * group, group).rowwise() += g.matrix().row(gi) * inv;
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  return x.tape().record(Tensor<Scalar>::scalar(x.value().values().sum()), {x},
                         [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
                           if (auto* gx = t.grad_buffer(x)) gx->values().array() += g.item();
                         });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(std::max<Index>(1, x.value().size()));
  return scale(sum(x), Scalar(1) / n);
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& x, Shape shape) {
  if (shape_size(shape) != x.value().size()) detail::shape_error("reshape", x.shape(), shape);
  return x.tape().record(x.value().reshaped(std::move(shape)), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->values() += g.values();
  });
}

/// x * w + b with w (in x out) and b (out).
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>& b) {
  return add(matmul(x, w), b);
}

}  // namespace geoprompt
