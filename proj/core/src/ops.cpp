#include "imsm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace imsm {

namespace {

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.shape().size() != 2)
    throw DimensionError(std::string(op) + ": expected a 2-D tensor");
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw DimensionError("matmul: inner dimensions disagree");

  Tensor out = Tensor::zeros({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = ap[i * k + p];
      if (av == 0.0) continue;
      const double* brow = bp + p * n;
      double* orow = op + i * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  out.check_finite("matmul");

  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b;
    tape->record([a = a_c, b = b_c, out, m, k, n]() mutable {
      const std::vector<double>& go = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        const double* bp = b.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = go[i * n + j];
            if (g == 0.0) continue;
            for (int p = 0; p < k; ++p) ga[i * k + p] += g * bp[p * n + j];
          }
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = b.grad();
        const double* ap = a.data();
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p) {
            const double av = ap[i * k + p];
            if (av == 0.0) continue;
            for (int j = 0; j < n; ++j) gb[p * n + j] += av * go[i * n + j];
          }
      }
    });
  }
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b, Tape* tape) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k)
    throw DimensionError("matmul_nt: inner dimensions disagree");

  Tensor out = Tensor::zeros({m, n});
  const double* ap = a.data();
  const double* bp = b.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      const double* ar = ap + i * k;
      const double* br = bp + j * k;
      for (int p = 0; p < k; ++p) acc += ar[p] * br[p];
      out.at(i, j) = acc;
    }
  out.check_finite("matmul_nt");

  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b;
    tape->record([a = a_c, b = b_c, out, m, k, n]() mutable {
      const std::vector<double>& go = out.grad();
      if (a.requires_grad()) {
        std::vector<double>& ga = a.grad();
        const double* bp = b.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = go[i * n + j];
            if (g == 0.0) continue;
            for (int p = 0; p < k; ++p) ga[i * k + p] += g * bp[j * k + p];
          }
      }
      if (b.requires_grad()) {
        std::vector<double>& gb = b.grad();
        const double* ap = a.data();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) {
            const double g = go[i * n + j];
            if (g == 0.0) continue;
            for (int p = 0; p < k; ++p) gb[j * k + p] += g * ap[i * k + p];
          }
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor elementwise_binary(const Tensor& a, const Tensor& b, Tape* tape,
                          const char* name, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i], b.data()[i]);
  out.check_finite(name);

  if (want_grad(tape, {&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b;
    tape->record([a = a_c, b = b_c, out, n, bwd]() mutable {
      const std::vector<double>& go = out.grad();
      for (std::size_t i = 0; i < n; ++i) {
        double da, db;
        bwd(a.data()[i], b.data()[i], go[i], da, db);
        if (a.requires_grad()) a.grad()[i] += da;
        if (b.requires_grad()) b.grad()[i] += db;
      }
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "add", [](double x, double y) { return x + y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "sub", [](double x, double y) { return x - y; },
      [](double, double, double g, double& da, double& db) {
        da = g;
        db = -g;
      });
}

Tensor elem_mul(const Tensor& a, const Tensor& b, Tape* tape) {
  return elementwise_binary(
      a, b, tape, "elem_mul", [](double x, double y) { return x * y; },
      [](double x, double y, double g, double& da, double& db) {
        da = g * y;
        db = g * x;
      });
}

Tensor scale(const Tensor& x, double c, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out.data()[i] = c * x.data()[i];
  out.check_finite("scale");
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out, c]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += c * go[i];
    });
  }
  return out;
}

Tensor concat_lastdim(const std::vector<Tensor>& parts, Tape* tape) {
  if (parts.empty()) throw UsageError("concat_lastdim: empty part list");
  const int rows = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    require_2d(p, "concat_lastdim");
    if (p.rows() != rows)
      throw DimensionError("concat_lastdim: leading dimensions disagree");
    total += p.cols();
  }

  Tensor out = Tensor::zeros({rows, total});
  int off = 0;
  for (const Tensor& p : parts) {
    const int c = p.cols();
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < c; ++j) out.at(i, off + j) = p.at(i, j);
    off += c;
  }

  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (tape && any) {
    out.set_requires_grad(true);
    std::vector<Tensor> parts_c = parts;
    tape->record([parts = std::move(parts_c), out, rows, total]() mutable {
      int off = 0;
      for (Tensor& p : parts) {
        const int c = p.cols();
        if (p.requires_grad()) {
          std::vector<double>& gp = p.grad();
          const std::vector<double>& go = out.grad();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j)
              gp[i * c + j] += go[i * total + off + j];
        }
        off += c;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, int start, int len, Tape* tape) {
  require_2d(x, "slice_rows");
  if (start < 0 || len <= 0 || start + len > x.rows())
    throw UsageError("slice_rows: range out of bounds");
  const int d = x.cols();
  Tensor out = Tensor::zeros({len, d});
  std::copy(x.data() + start * d, x.data() + (start + len) * d, out.data());

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out, start, len, d]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (int i = 0; i < len * d; ++i) gx[start * d + i] += go[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, int start, int len, Tape* tape) {
  require_2d(x, "slice_cols");
  if (start < 0 || len <= 0 || start + len > x.cols())
    throw UsageError("slice_cols: range out of bounds");
  const int rows = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({rows, len});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < len; ++j) out.at(i, j) = x.at(i, start + j);

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out, start, len, rows, d]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < len; ++j)
          gx[i * d + start + j] += go[i * len + j];
    });
  }
  return out;
}

Tensor repeat_rows(const Tensor& x, int n, Tape* tape) {
  require_2d(x, "repeat_rows");
  if (x.rows() != 1) throw DimensionError("repeat_rows: input must be 1xd");
  if (n < 1) throw UsageError("repeat_rows: n must be positive");
  const int d = x.cols();
  Tensor out = Tensor::zeros({n, d});
  for (int i = 0; i < n; ++i)
    std::copy(x.data(), x.data() + d, out.data() + i * d);

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out, n, d]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gx[j] += go[i * d + j];
    });
  }
  return out;
}

Tensor mean_rows(const Tensor& x, Tape* tape) {
  require_2d(x, "mean_rows");
  const int t = x.rows(), d = x.cols();
  if (t < 1) throw UsageError("mean_rows: needs at least one row");
  Tensor out = Tensor::zeros({1, d});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < d; ++j) out.data()[j] += x.at(i, j);
  for (int j = 0; j < d; ++j) out.data()[j] /= t;
  out.check_finite("mean_rows");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out, t, d]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) gx[i * d + j] += go[j] / t;
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x, Tape* tape) {
  // Clamped one ulp inside [0,1] so the output stays strictly in (0,1)
  // even where exp saturates.
  static const double kLo = std::nextafter(0.0, 1.0);
  static const double kHi = std::nextafter(1.0, 0.0);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-x.data()[i]));
    out.data()[i] = std::clamp(s, kLo, kHi);
  }
  out.check_finite("sigmoid");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double s = out.data()[i];
        gx[i] += go[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor silu(const Tensor& x, Tape* tape) {
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = v / (1.0 + std::exp(-v));
  }
  out.check_finite("silu");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = x.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        const double v = x.data()[i];
        const double s = 1.0 / (1.0 + std::exp(-v));
        gx[i] += go[i] * s * (1.0 + v * (1.0 - s));
      }
    });
  }
  return out;
}

namespace {

// Shared softmax kernel: for each row, softmax over columns [0, limit(i)).
// Columns beyond the limit get exactly zero.
template <typename LimitFn>
Tensor softmax_rows(const Tensor& x, Tape* tape, const char* name,
                    LimitFn limit) {
  const int rows = x.rows(), cols = x.cols();
  Tensor out = Tensor::zeros({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const int lim = limit(i);
    if (lim < 1) throw UsageError(std::string(name) + ": empty softmax row");
    double mx = x.at(i, 0);
    for (int j = 1; j < lim; ++j) mx = std::max(mx, x.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < lim; ++j) {
      const double e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < lim; ++j) out.at(i, j) /= sum;
  }
  out.check_finite(name);

  if (tape && x.requires_grad()) {
    Tensor xc = x;
    out.set_requires_grad(true);
    tape->record([xc, out, rows, cols, limit]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = xc.grad();
      for (int i = 0; i < rows; ++i) {
        const int lim = limit(i);
        double dot = 0.0;
        for (int j = 0; j < lim; ++j)
          dot += go[i * cols + j] * out.at(i, j);
        for (int j = 0; j < lim; ++j)
          gx[i * cols + j] += out.at(i, j) * (go[i * cols + j] - dot);
      }
    });
  }
  return out;
}

}  // namespace

Tensor softmax_lastdim(const Tensor& x, Tape* tape) {
  require_2d(x, "softmax_lastdim");
  const int cols = x.cols();
  if (cols < 1) throw UsageError("softmax_lastdim: empty rows");
  return softmax_rows(x, tape, "softmax_lastdim",
                      [cols](int) { return cols; });
}

Tensor causal_softmax(const Tensor& scores, int past, Tape* tape) {
  require_2d(scores, "causal_softmax");
  const int cols = scores.cols();
  if (past < 0) throw UsageError("causal_softmax: negative past length");
  return softmax_rows(scores, tape, "causal_softmax", [past, cols](int i) {
    return std::min(past + i + 1, cols);
  });
}

Tensor cross_entropy_masked(const Tensor& logits,
                            const std::vector<int>& targets,
                            const std::vector<std::uint8_t>& mask,
                            Tape* tape) {
  require_2d(logits, "cross_entropy_masked");
  const int t = logits.rows(), v = logits.cols();
  if (static_cast<int>(targets.size()) != t ||
      static_cast<int>(mask.size()) != t)
    throw DimensionError("cross_entropy_masked: targets/mask length mismatch");

  int count = 0;
  for (std::uint8_t m : mask)
    if (m) ++count;
  if (count == 0)
    throw UsageError("cross_entropy_masked: every position masked out");

  // Save per-row probabilities for the backward pass.
  Tensor probs = Tensor::zeros({t, v});
  double loss = 0.0;
  for (int i = 0; i < t; ++i) {
    if (!mask[i]) continue;
    const int y = targets[i];
    if (y < 0 || y >= v)
      throw UsageError("cross_entropy_masked: target id out of vocabulary");
    double mx = logits.at(i, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, logits.at(i, j));
    double sum = 0.0;
    for (int j = 0; j < v; ++j) {
      const double e = std::exp(logits.at(i, j) - mx);
      probs.at(i, j) = e;
      sum += e;
    }
    for (int j = 0; j < v; ++j) probs.at(i, j) /= sum;
    loss -= std::log(probs.at(i, y));
  }
  loss /= count;

  Tensor out = Tensor::scalar(loss);
  out.check_finite("cross_entropy_masked");

  if (want_grad(tape, {&logits})) {
    out.set_requires_grad(true);
    Tensor lg = logits;
    tape->record([lg, out, probs, targets, mask, t, v, count]() mutable {
      const double g = out.grad()[0] / count;
      std::vector<double>& gx = lg.grad();
      for (int i = 0; i < t; ++i) {
        if (!mask[i]) continue;
        for (int j = 0; j < v; ++j) {
          double p = probs.at(i, j);
          if (j == targets[i]) p -= 1.0;
          gx[i * v + j] += g * p;
        }
      }
    });
  }
  return out;
}

Tensor rmsnorm(const Tensor& x, const Tensor& weight, double eps, Tape* tape) {
  require_2d(x, "rmsnorm");
  require_2d(weight, "rmsnorm");
  const int t = x.rows(), d = x.cols();
  if (weight.rows() != 1 || weight.cols() != d)
    throw DimensionError("rmsnorm: weight must be 1xd");

  std::vector<double> inv_rms(t);
  Tensor out = Tensor::zeros({t, d});
  for (int i = 0; i < t; ++i) {
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += x.at(i, j) * x.at(i, j);
    ms = ms / d + eps;
    inv_rms[i] = 1.0 / std::sqrt(ms);
    for (int j = 0; j < d; ++j)
      out.at(i, j) = x.at(i, j) * inv_rms[i] * weight.data()[j];
  }
  out.check_finite("rmsnorm");

  if (want_grad(tape, {&x, &weight})) {
    out.set_requires_grad(true);
    Tensor xc = x, wc = weight;
    tape->record([xc, wc, out, inv_rms, t, d]() mutable {
      const std::vector<double>& go = out.grad();
      for (int i = 0; i < t; ++i) {
        const double s = inv_rms[i];
        if (xc.requires_grad()) {
          double dot = 0.0;  // sum of go*w*x over the row
          for (int j = 0; j < d; ++j)
            dot += go[i * d + j] * wc.data()[j] * xc.at(i, j);
          std::vector<double>& gx = xc.grad();
          for (int j = 0; j < d; ++j)
            gx[i * d + j] += go[i * d + j] * wc.data()[j] * s -
                             xc.at(i, j) * dot * s * s * s / d;
        }
        if (wc.requires_grad()) {
          std::vector<double>& gw = wc.grad();
          for (int j = 0; j < d; ++j)
            gw[j] += go[i * d + j] * xc.at(i, j) * s;
        }
      }
    });
  }
  return out;
}

Tensor embed(const Tensor& table, const std::vector<int>& ids, Tape* tape) {
  require_2d(table, "embed");
  const int v = table.rows(), d = table.cols();
  const int t = static_cast<int>(ids.size());
  if (t == 0) throw UsageError("embed: empty id list");
  Tensor out = Tensor::zeros({t, d});
  for (int i = 0; i < t; ++i) {
    if (ids[i] < 0 || ids[i] >= v)
      throw UsageError("embed: token id out of range");
    std::copy(table.data() + ids[i] * d, table.data() + (ids[i] + 1) * d,
              out.data() + i * d);
  }

  if (want_grad(tape, {&table})) {
    out.set_requires_grad(true);
    Tensor tc = table;
    tape->record([tc, out, ids, t, d]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gt = tc.grad();
      for (int i = 0; i < t; ++i)
        for (int j = 0; j < d; ++j) gt[ids[i] * d + j] += go[i * d + j];
    });
  }
  return out;
}

namespace {

void rope_angles(int pos, int dh, double base, std::vector<double>& cs,
                 std::vector<double>& sn) {
  const int half = dh / 2;
  cs.resize(half);
  sn.resize(half);
  for (int j = 0; j < half; ++j) {
    const double theta =
        pos * std::pow(base, -2.0 * static_cast<double>(j) / dh);
    cs[j] = std::cos(theta);
    sn[j] = std::sin(theta);
  }
}

}  // namespace

Tensor rope(const Tensor& x, int pos_offset, double base, Tape* tape) {
  require_2d(x, "rope");
  const int t = x.rows(), dh = x.cols();
  if (dh % 2 != 0) throw DimensionError("rope: head dimension must be even");
  const int half = dh / 2;

  Tensor out = Tensor::zeros({t, dh});
  std::vector<double> cs, sn;
  for (int i = 0; i < t; ++i) {
    rope_angles(pos_offset + i, dh, base, cs, sn);
    for (int j = 0; j < half; ++j) {
      const double a = x.at(i, j), b = x.at(i, j + half);
      out.at(i, j) = a * cs[j] - b * sn[j];
      out.at(i, j + half) = a * sn[j] + b * cs[j];
    }
  }
  out.check_finite("rope");

  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor xc = x;
    tape->record([xc, out, pos_offset, base, t, dh, half]() mutable {
      const std::vector<double>& go = out.grad();
      std::vector<double>& gx = xc.grad();
      std::vector<double> cs, sn;
      for (int i = 0; i < t; ++i) {
        rope_angles(pos_offset + i, dh, base, cs, sn);
        for (int j = 0; j < half; ++j) {
          const double ga = go[i * dh + j], gb = go[i * dh + j + half];
          // transpose of the rotation
          gx[i * dh + j] += ga * cs[j] + gb * sn[j];
          gx[i * dh + j + half] += -ga * sn[j] + gb * cs[j];
        }
      }
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x, Tape* tape) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
  Tensor out = Tensor::scalar(s);
  out.check_finite("sum_all");
  if (want_grad(tape, {&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x;
    tape->record([x = x_c, out]() mutable {
      const double g = out.grad()[0];
      std::vector<double>& gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

}  // namespace imsm
