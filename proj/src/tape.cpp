#include "vcdi/tape.hpp"

#include <algorithm>
#include <cmath>

#include "vcdi/errors.hpp"
#include "vcdi/geometry.hpp"

namespace vcdi {

namespace {

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ValidationError(std::string(op) + ": shape mismatch");
  }
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) {
    const double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(x);
  return z / (1.0 + z);
}

}  // namespace

TapeValue Tape::push(Mat value, const std::string& op,
                     std::function<void(Tape&)> back) {
  const std::size_t id = nodes_.size();
  check_finite(value, op + "#" + std::to_string(id));
  Node n;
  n.grad = Mat(value.rows, value.cols);
  n.value = std::move(value);
  n.back = std::move(back);
  n.op = op;
  nodes_.push_back(std::move(n));
  return TapeValue{id};
}

void Tape::check_finite(const Mat& m, const std::string& name) const {
  for (double v : m.d) {
    if (!std::isfinite(v)) throw NumericError(name);
  }
}

std::string Tape::node_name(TapeValue v) const {
  return nodes_[v.id].op + "#" + std::to_string(v.id);
}

double Tape::scalar(TapeValue v) const {
  const Mat& m = nodes_[v.id].value;
  if (m.rows != 1 || m.cols != 1) {
    throw ValidationError("scalar() on non-1x1 node " + node_name(v));
  }
  return m.d[0];
}

TapeValue Tape::input(Mat v, const std::string& name) {
  return push(std::move(v), name, nullptr);
}

TapeValue Tape::param(ParamStore& store, const std::string& name) {
  TapeValue v = push(store.value(name), "param:" + name, nullptr);
  bindings_.push_back({v.id, &store, name});
  return v;
}

TapeValue Tape::raw_node(Mat value, const std::string& op,
                         std::function<void(Tape&)> backward) {
  return push(std::move(value), op, std::move(backward));
}

TapeValue Tape::add(TapeValue a, TapeValue b) {
  const Mat& va = nodes_[a.id].value;
  const Mat& vb = nodes_[b.id].value;
  require_same_shape(va, vb, "add");
  Mat out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.d[i] += vb.d[i];
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "add", [oid, a, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i];
      gb.d[i] += g.d[i];
    }
  });
}

TapeValue Tape::sub(TapeValue a, TapeValue b) {
  const Mat& va = nodes_[a.id].value;
  const Mat& vb = nodes_[b.id].value;
  require_same_shape(va, vb, "sub");
  Mat out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.d[i] -= vb.d[i];
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "sub", [oid, a, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i];
      gb.d[i] -= g.d[i];
    }
  });
}

TapeValue Tape::mul(TapeValue a, TapeValue b) {
  const Mat& va = nodes_[a.id].value;
  const Mat& vb = nodes_[b.id].value;
  require_same_shape(va, vb, "mul");
  Mat out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.d[i] *= vb.d[i];
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "mul", [oid, a, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    const Mat& vb = t.nodes_[b.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * vb.d[i];
      gb.d[i] += g.d[i] * va.d[i];
    }
  });
}

TapeValue Tape::div(TapeValue a, TapeValue b) {
  const Mat& va = nodes_[a.id].value;
  const Mat& vb = nodes_[b.id].value;
  require_same_shape(va, vb, "div");
  Mat out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.d[i] /= vb.d[i];
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "div", [oid, a, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    const Mat& vb = t.nodes_[b.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double inv = 1.0 / vb.d[i];
      ga.d[i] += g.d[i] * inv;
      gb.d[i] -= g.d[i] * va.d[i] * inv * inv;
    }
  });
}

TapeValue Tape::scale(TapeValue a, double s) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v *= s;
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "scale", [oid, a, s](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += s * g.d[i];
  });
}

TapeValue Tape::add_scalar(TapeValue a, double s) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v += s;
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "add_scalar", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
  });
}

TapeValue Tape::matmul(TapeValue a, TapeValue b) {
  const Mat& va = nodes_[a.id].value;
  const Mat& vb = nodes_[b.id].value;
  if (va.cols != vb.rows) throw ValidationError("matmul: inner dim mismatch");
  Mat out(va.rows, vb.cols);
  for (std::size_t i = 0; i < va.rows; ++i) {
    for (std::size_t k = 0; k < va.cols; ++k) {
      const double aik = va.d[i * va.cols + k];
      const double* brow = &vb.d[k * vb.cols];
      double* orow = &out.d[i * out.cols];
      for (std::size_t j = 0; j < vb.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "matmul", [oid, a, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    const Mat& vb = t.nodes_[b.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    // ga += g * vb^T
    for (std::size_t i = 0; i < va.rows; ++i) {
      for (std::size_t k = 0; k < va.cols; ++k) {
        double acc = 0.0;
        const double* grow = &g.d[i * g.cols];
        const double* brow = &vb.d[k * vb.cols];
        for (std::size_t j = 0; j < vb.cols; ++j) acc += grow[j] * brow[j];
        ga.d[i * va.cols + k] += acc;
      }
    }
    // gb += va^T * g
    for (std::size_t k = 0; k < vb.rows; ++k) {
      for (std::size_t i = 0; i < va.rows; ++i) {
        const double aik = va.d[i * va.cols + k];
        const double* grow = &g.d[i * g.cols];
        double* gbrow = &gb.d[k * vb.cols];
        for (std::size_t j = 0; j < vb.cols; ++j) gbrow[j] += aik * grow[j];
      }
    }
  });
}

TapeValue Tape::transpose(TapeValue a) {
  const Mat& va = nodes_[a.id].value;
  Mat out(va.cols, va.rows);
  for (std::size_t r = 0; r < va.rows; ++r) {
    for (std::size_t c = 0; c < va.cols; ++c) out(c, r) = va(r, c);
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "transpose", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) ga(c, r) += g(r, c);
    }
  });
}

TapeValue Tape::affine(TapeValue x, TapeValue w, TapeValue b) {
  const Mat& vx = nodes_[x.id].value;
  const Mat& vw = nodes_[w.id].value;
  const Mat& vb = nodes_[b.id].value;
  if (vx.cols != vw.rows) throw ValidationError("affine: inner dim mismatch");
  if (vb.rows != 1 || vb.cols != vw.cols) {
    throw ValidationError("affine: bias shape mismatch");
  }
  Mat out(vx.rows, vw.cols);
  for (std::size_t i = 0; i < vx.rows; ++i) {
    double* orow = &out.d[i * out.cols];
    for (std::size_t j = 0; j < vw.cols; ++j) orow[j] = vb.d[j];
    for (std::size_t k = 0; k < vx.cols; ++k) {
      const double xik = vx.d[i * vx.cols + k];
      const double* wrow = &vw.d[k * vw.cols];
      for (std::size_t j = 0; j < vw.cols; ++j) orow[j] += xik * wrow[j];
    }
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "affine", [oid, x, w, b](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& vx = t.nodes_[x.id].value;
    const Mat& vw = t.nodes_[w.id].value;
    Mat& gx = t.nodes_[x.id].grad;
    Mat& gw = t.nodes_[w.id].grad;
    Mat& gb = t.nodes_[b.id].grad;
    for (std::size_t i = 0; i < vx.rows; ++i) {
      const double* grow = &g.d[i * g.cols];
      for (std::size_t k = 0; k < vx.cols; ++k) {
        double acc = 0.0;
        const double* wrow = &vw.d[k * vw.cols];
        for (std::size_t j = 0; j < vw.cols; ++j) acc += grow[j] * wrow[j];
        gx.d[i * vx.cols + k] += acc;
      }
      for (std::size_t k = 0; k < vx.cols; ++k) {
        const double xik = vx.d[i * vx.cols + k];
        double* gwrow = &gw.d[k * vw.cols];
        for (std::size_t j = 0; j < vw.cols; ++j) gwrow[j] += xik * grow[j];
      }
      for (std::size_t j = 0; j < vw.cols; ++j) gb.d[j] += grow[j];
    }
  });
}

TapeValue Tape::tanh_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = std::tanh(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "tanh", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& y = t.nodes_[oid].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * (1.0 - y.d[i] * y.d[i]);
    }
  });
}

TapeValue Tape::sigmoid_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = stable_sigmoid(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "sigmoid", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& y = t.nodes_[oid].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * y.d[i] * (1.0 - y.d[i]);
    }
  });
}

TapeValue Tape::relu_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = v > 0.0 ? v : 0.0;
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "relu", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (va.d[i] > 0.0) ga.d[i] += g.d[i];
    }
  });
}

TapeValue Tape::softplus_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = stable_softplus(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "softplus", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * stable_sigmoid(va.d[i]);
    }
  });
}

TapeValue Tape::exp_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = std::exp(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "exp", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& y = t.nodes_[oid].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * y.d[i];
  });
}

TapeValue Tape::log_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = std::log(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "log", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] / va.d[i];
  });
}

TapeValue Tape::sqrt_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = std::sqrt(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "sqrt", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& y = t.nodes_[oid].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * 0.5 / y.d[i];
    }
  });
}

TapeValue Tape::square_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = v * v;
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "square", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * 2.0 * va.d[i];
    }
  });
}

TapeValue Tape::huber_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) {
    const double ax = std::abs(v);
    v = ax <= 1.0 ? 0.5 * v * v : ax - 0.5;
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "huber", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& va = t.nodes_[a.id].value;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[i] += g.d[i] * std::clamp(va.d[i], -1.0, 1.0);
    }
  });
}

TapeValue Tape::atan2_op(TapeValue y, TapeValue x) {
  const Mat& vy = nodes_[y.id].value;
  const Mat& vx = nodes_[x.id].value;
  require_same_shape(vy, vx, "atan2");
  Mat out = vy;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.d[i] = std::atan2(vy.d[i], vx.d[i]);
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "atan2", [oid, y, x](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& vy = t.nodes_[y.id].value;
    const Mat& vx = t.nodes_[x.id].value;
    Mat& gy = t.nodes_[y.id].grad;
    Mat& gx = t.nodes_[x.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double r2 = vx.d[i] * vx.d[i] + vy.d[i] * vy.d[i];
      gy.d[i] += g.d[i] * vx.d[i] / r2;
      gx.d[i] -= g.d[i] * vy.d[i] / r2;
    }
  });
}

TapeValue Tape::wrap_angle_op(TapeValue a) {
  Mat out = nodes_[a.id].value;
  for (auto& v : out.d) v = wrap_angle(v);
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "wrap_angle", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i];
  });
}

TapeValue Tape::concat_cols(const std::vector<TapeValue>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: empty");
  const std::size_t rows = nodes_[parts[0].id].value.rows;
  std::size_t cols = 0;
  for (TapeValue p : parts) {
    const Mat& v = nodes_[p.id].value;
    if (v.rows != rows) throw ValidationError("concat_cols: row mismatch");
    cols += v.cols;
  }
  Mat out(rows, cols);
  std::size_t off = 0;
  for (TapeValue p : parts) {
    const Mat& v = nodes_[p.id].value;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < v.cols; ++c) out(r, off + c) = v(r, c);
    }
    off += v.cols;
  }
  const std::size_t oid = nodes_.size();
  std::vector<TapeValue> ps = parts;
  return push(std::move(out), "concat_cols", [oid, ps](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    std::size_t off = 0;
    for (TapeValue p : ps) {
      Mat& gp = t.nodes_[p.id].grad;
      for (std::size_t r = 0; r < gp.rows; ++r) {
        for (std::size_t c = 0; c < gp.cols; ++c) {
          gp(r, c) += g(r, off + c);
        }
      }
      off += gp.cols;
    }
  });
}

TapeValue Tape::concat_rows(const std::vector<TapeValue>& parts) {
  if (parts.empty()) throw ValidationError("concat_rows: empty");
  const std::size_t cols = nodes_[parts[0].id].value.cols;
  std::size_t rows = 0;
  for (TapeValue p : parts) {
    const Mat& v = nodes_[p.id].value;
    if (v.cols != cols) throw ValidationError("concat_rows: col mismatch");
    rows += v.rows;
  }
  Mat out(rows, cols);
  std::size_t off = 0;
  for (TapeValue p : parts) {
    const Mat& v = nodes_[p.id].value;
    std::copy(v.d.begin(), v.d.end(), out.d.begin() + off * cols);
    off += v.rows;
  }
  const std::size_t oid = nodes_.size();
  std::vector<TapeValue> ps = parts;
  return push(std::move(out), "concat_rows", [oid, ps](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    std::size_t off = 0;
    for (TapeValue p : ps) {
      Mat& gp = t.nodes_[p.id].grad;
      for (std::size_t i = 0; i < gp.size(); ++i) {
        gp.d[i] += g.d[off * g.cols + i];
      }
      off += gp.rows;
    }
  });
}

TapeValue Tape::slice_rows(TapeValue a, std::size_t r0, std::size_t r1) {
  const Mat& va = nodes_[a.id].value;
  if (r0 >= r1 || r1 > va.rows) throw ValidationError("slice_rows: bad range");
  Mat out(r1 - r0, va.cols);
  std::copy(va.d.begin() + r0 * va.cols, va.d.begin() + r1 * va.cols,
            out.d.begin());
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "slice_rows", [oid, a, r0](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.d[r0 * ga.cols + i] += g.d[i];
    }
  });
}

TapeValue Tape::slice_cols(TapeValue a, std::size_t c0, std::size_t c1) {
  const Mat& va = nodes_[a.id].value;
  if (c0 >= c1 || c1 > va.cols) throw ValidationError("slice_cols: bad range");
  Mat out(va.rows, c1 - c0);
  for (std::size_t r = 0; r < va.rows; ++r) {
    for (std::size_t c = c0; c < c1; ++c) out(r, c - c0) = va(r, c);
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "slice_cols", [oid, a, c0](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t r = 0; r < g.rows; ++r) {
      for (std::size_t c = 0; c < g.cols; ++c) {
        ga(r, c0 + c) += g(r, c);
      }
    }
  });
}

TapeValue Tape::sum_all(TapeValue a) {
  const Mat& va = nodes_[a.id].value;
  double acc = 0.0;
  for (double v : va.d) acc += v;
  const std::size_t oid = nodes_.size();
  return push(Mat(1, 1, {acc}), "sum_all", [oid, a](Tape& t) {
    const double g = t.nodes_[oid].grad.d[0];
    Mat& ga = t.nodes_[a.id].grad;
    for (auto& v : ga.d) v += g;
  });
}

TapeValue Tape::mean_all(TapeValue a) {
  const Mat& va = nodes_[a.id].value;
  if (va.size() == 0) throw ValidationError("mean_all: empty");
  double acc = 0.0;
  for (double v : va.d) acc += v;
  const double inv = 1.0 / static_cast<double>(va.size());
  const std::size_t oid = nodes_.size();
  return push(Mat(1, 1, {acc * inv}), "mean_all", [oid, a, inv](Tape& t) {
    const double g = t.nodes_[oid].grad.d[0] * inv;
    Mat& ga = t.nodes_[a.id].grad;
    for (auto& v : ga.d) v += g;
  });
}

TapeValue Tape::softmax_rows(TapeValue a) {
  const Mat& va = nodes_[a.id].value;
  return masked_softmax_rows(a, Mat::full(va.rows, va.cols, 1.0));
}

TapeValue Tape::masked_softmax_rows(TapeValue a, Mat allow) {
  const Mat& va = nodes_[a.id].value;
  require_same_shape(va, allow, "masked_softmax_rows");
  Mat out(va.rows, va.cols);
  for (std::size_t r = 0; r < va.rows; ++r) {
    double mx = -1e300;
    bool any = false;
    for (std::size_t c = 0; c < va.cols; ++c) {
      if (allow(r, c) != 0.0) {
        any = true;
        mx = std::max(mx, va(r, c));
      }
    }
    if (!any) continue;  // all-masked row stays zero
    double denom = 0.0;
    for (std::size_t c = 0; c < va.cols; ++c) {
      if (allow(r, c) != 0.0) {
        out(r, c) = std::exp(va(r, c) - mx);
        denom += out(r, c);
      }
    }
    for (std::size_t c = 0; c < va.cols; ++c) out(r, c) /= denom;
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "masked_softmax",
              [oid, a, allow = std::move(allow)](Tape& t) {
                const Mat& g = t.nodes_[oid].grad;
                const Mat& y = t.nodes_[oid].value;
                Mat& ga = t.nodes_[a.id].grad;
                for (std::size_t r = 0; r < g.rows; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < g.cols; ++c) {
                    if (allow(r, c) != 0.0) dot += g(r, c) * y(r, c);
                  }
                  for (std::size_t c = 0; c < g.cols; ++c) {
                    if (allow(r, c) != 0.0) {
                      ga(r, c) += y(r, c) * (g(r, c) - dot);
                    }
                  }
                }
              });
}

TapeValue Tape::layer_norm_rows(TapeValue x, TapeValue gamma, TapeValue beta) {
  constexpr double kEps = 1e-5;
  const Mat& vx = nodes_[x.id].value;
  const Mat& vg = nodes_[gamma.id].value;
  const Mat& vb = nodes_[beta.id].value;
  if (vg.rows != 1 || vg.cols != vx.cols || vb.rows != 1 || vb.cols != vx.cols) {
    throw ValidationError("layer_norm_rows: gamma/beta shape mismatch");
  }
  Mat out(vx.rows, vx.cols);
  const std::size_t n = vx.cols;
  for (std::size_t r = 0; r < vx.rows; ++r) {
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += vx(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = vx(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kEps);
    for (std::size_t c = 0; c < n; ++c) {
      out(r, c) = (vx(r, c) - mu) * inv_std * vg.d[c] + vb.d[c];
    }
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "layer_norm", [oid, x, gamma, beta](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    const Mat& vx = t.nodes_[x.id].value;
    const Mat& vg = t.nodes_[gamma.id].value;
    Mat& gx = t.nodes_[x.id].grad;
    Mat& gg = t.nodes_[gamma.id].grad;
    Mat& gb = t.nodes_[beta.id].grad;
    const std::size_t n = vx.cols;
    const double dn = static_cast<double>(n);
    for (std::size_t r = 0; r < vx.rows; ++r) {
      double mu = 0.0;
      for (std::size_t c = 0; c < n; ++c) mu += vx(r, c);
      mu /= dn;
      double var = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double d = vx(r, c) - mu;
        var += d * d;
      }
      var /= dn;
      const double inv_std = 1.0 / std::sqrt(var + 1e-5);
      // dxhat = g .* gamma; accumulate the two reduction terms.
      double sum_dxhat = 0.0;
      double sum_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double xhat = (vx(r, c) - mu) * inv_std;
        const double dxhat = g(r, c) * vg.d[c];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        gg.d[c] += g(r, c) * xhat;
        gb.d[c] += g(r, c);
      }
      for (std::size_t c = 0; c < n; ++c) {
        const double xhat = (vx(r, c) - mu) * inv_std;
        const double dxhat = g(r, c) * vg.d[c];
        gx(r, c) += inv_std * (dxhat - sum_dxhat / dn - xhat * sum_dxhat_xhat / dn);
      }
    }
  });
}

TapeValue Tape::mul_mask(TapeValue a, Mat m) {
  const Mat& va = nodes_[a.id].value;
  require_same_shape(va, m, "mul_mask");
  Mat out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out.d[i] *= m.d[i];
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "mul_mask", [oid, a, m = std::move(m)](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t i = 0; i < g.size(); ++i) ga.d[i] += g.d[i] * m.d[i];
  });
}

TapeValue Tape::rowgroup_max(TapeValue a, Mat mask, std::size_t group) {
  const Mat& va = nodes_[a.id].value;
  if (group == 0 || va.rows % group != 0) {
    throw ValidationError("rowgroup_max: rows not divisible by group");
  }
  if (mask.rows != va.rows || mask.cols != 1) {
    throw ValidationError("rowgroup_max: mask must be rows x 1");
  }
  const std::size_t blocks = va.rows / group;
  Mat out(blocks, va.cols);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t c = 0; c < va.cols; ++c) {
      double mx = 0.0;
      bool any = false;
      for (std::size_t k = 0; k < group; ++k) {
        const std::size_t r = b * group + k;
        if (mask(r, 0) == 0.0) continue;
        if (!any || va(r, c) > mx) mx = va(r, c);
        any = true;
      }
      if (any) out(b, c) = mx;
    }
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "rowgroup_max",
              [oid, a, mask = std::move(mask), group](Tape& t) {
                const Mat& g = t.nodes_[oid].grad;
                const Mat& va = t.nodes_[a.id].value;
                Mat& ga = t.nodes_[a.id].grad;
                for (std::size_t b = 0; b < g.rows; ++b) {
                  for (std::size_t c = 0; c < g.cols; ++c) {
                    std::size_t best = static_cast<std::size_t>(-1);
                    for (std::size_t k = 0; k < group; ++k) {
                      const std::size_t r = b * group + k;
                      if (mask(r, 0) == 0.0) continue;
                      if (best == static_cast<std::size_t>(-1) ||
                          va(r, c) > va(best, c)) {
                        best = r;
                      }
                    }
                    if (best != static_cast<std::size_t>(-1)) {
                      ga(best, c) += g(b, c);
                    }
                  }
                }
              });
}

TapeValue Tape::cumsum_pairs_rows(TapeValue a) {
  const Mat& va = nodes_[a.id].value;
  if (va.cols % 2 != 0) throw ValidationError("cumsum_pairs_rows: odd cols");
  Mat out(va.rows, va.cols);
  for (std::size_t r = 0; r < va.rows; ++r) {
    double ax = 0.0, ay = 0.0;
    for (std::size_t tcol = 0; tcol < va.cols; tcol += 2) {
      ax += va(r, tcol);
      ay += va(r, tcol + 1);
      out(r, tcol) = ax;
      out(r, tcol + 1) = ay;
    }
  }
  const std::size_t oid = nodes_.size();
  return push(std::move(out), "cumsum_pairs", [oid, a](Tape& t) {
    const Mat& g = t.nodes_[oid].grad;
    Mat& ga = t.nodes_[a.id].grad;
    for (std::size_t r = 0; r < g.rows; ++r) {
      double sx = 0.0, sy = 0.0;
      for (std::size_t tcol = g.cols; tcol >= 2; tcol -= 2) {
        sx += g(r, tcol - 2);
        sy += g(r, tcol - 1);
        ga(r, tcol - 2) += sx;
        ga(r, tcol - 1) += sy;
      }
    }
  });
}

TapeValue Tape::cross_entropy_rows(TapeValue logits, std::vector<int> targets,
                                   std::vector<double> row_weights) {
  const Mat& vz = nodes_[logits.id].value;
  if (targets.size() != vz.rows || row_weights.size() != vz.rows) {
    throw ValidationError("cross_entropy_rows: row count mismatch");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < vz.rows; ++r) {
    if (targets[r] < 0) continue;
    if (static_cast<std::size_t>(targets[r]) >= vz.cols) {
      throw ValidationError("cross_entropy_rows: target out of range");
    }
    double mx = vz(r, 0);
    for (std::size_t c = 1; c < vz.cols; ++c) mx = std::max(mx, vz(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < vz.cols; ++c) denom += std::exp(vz(r, c) - mx);
    const double lse = mx + std::log(denom);
    total += row_weights[r] * (lse - vz(r, static_cast<std::size_t>(targets[r])));
  }
  const std::size_t oid = nodes_.size();
  return push(Mat(1, 1, {total}), "cross_entropy",
              [oid, logits, targets = std::move(targets),
               row_weights = std::move(row_weights)](Tape& t) {
                const double g = t.nodes_[oid].grad.d[0];
                const Mat& vz = t.nodes_[logits.id].value;
                Mat& gz = t.nodes_[logits.id].grad;
                for (std::size_t r = 0; r < vz.rows; ++r) {
                  if (targets[r] < 0) continue;
                  double mx = vz(r, 0);
                  for (std::size_t c = 1; c < vz.cols; ++c) {
                    mx = std::max(mx, vz(r, c));
                  }
                  double denom = 0.0;
                  for (std::size_t c = 0; c < vz.cols; ++c) {
                    denom += std::exp(vz(r, c) - mx);
                  }
                  const double w = g * row_weights[r];
                  for (std::size_t c = 0; c < vz.cols; ++c) {
                    const double s = std::exp(vz(r, c) - mx) / denom;
                    const double onehot =
                        c == static_cast<std::size_t>(targets[r]) ? 1.0 : 0.0;
                    gz(r, c) += w * (s - onehot);
                  }
                }
              });
}

void Tape::backward(TapeValue root) {
  if (backward_done_) throw ValidationError("backward() called twice");
  backward_done_ = true;
  Mat& rg = nodes_[root.id].grad;
  if (rg.rows != 1 || rg.cols != 1) {
    throw ValidationError("backward: root must be 1x1");
  }
  rg.d[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back(*this);
  }
  for (const ParamBinding& b : bindings_) {
    Mat& dst = b.store->grad(b.name);
    const Mat& src = nodes_[b.node_id].grad;
    for (std::size_t i = 0; i < dst.size(); ++i) dst.d[i] += src.d[i];
  }
}

}  // namespace vcdi
