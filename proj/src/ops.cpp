// SPDX-License-Identifier: Apache-2.0
#include "bprune/ops.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

namespace bprune::ops {

namespace {

template <typename T>
inline void axpy(std::size_t n, T alpha, const T* __restrict x, T* __restrict y) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

template <typename T>
Var finish(Tape<T>& tape, Tensor<T> out, std::initializer_list<Var> inputs, typename Tape<T>::BackwardFn fn,
           const char* name) {
    require_finite(out, name);
    return tape.record(std::move(out), inputs, std::move(fn));
}

template <typename T>
using Acc = std::conditional_t<std::is_same_v<T, float>, double, T>;

// c[m x n] += a[m x k] . b[k x n]
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<Acc<T>> buf(n);
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) buf[j] = crow[j];
        for (std::size_t p = 0; p < k; ++p) {
            const Acc<T> av = arow[p];
            if (av != 0) {
                const T* brow = b + p * n;
                for (std::size_t j = 0; j < n; ++j) buf[j] += av * static_cast<Acc<T>>(brow[j]);
            }
        }
        for (std::size_t j = 0; j < n; ++j) crow[j] = static_cast<T>(buf[j]);
    }
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& x) {
    const std::size_t r = x.dim(0);
    const std::size_t c = x.dim(1);
    Tensor<T> out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
    }
    return out;
}

}  // namespace

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
            "matmul: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor<T> out({m, n});
    gemm_acc(av.ptr(), bv.ptr(), out.ptr(), m, k, n);
    return finish(
        tape, std::move(out), {a, b},
        [a, b, m, k, n](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(a)) {
                // grad_a = g . b^T
                const Tensor<T> bt = transpose2d(t.value(b));
                gemm_acc(g.ptr(), bt.ptr(), t.grad_buffer(a).ptr(), m, n, k);
            }
            if (t.requires_grad(b)) {
                // grad_b = a^T . g
                const Tensor<T>& av2 = t.value(a);
                T* gb = t.grad_buffer(b).ptr();
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const T s = av2[i * k + p];
                        if (s != T(0)) axpy(n, s, g.ptr() + i * n, gb + p * n);
                    }
                }
            }
        },
        "matmul");
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    require(av.shape() == bv.shape(), "add: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return finish(
        tape, std::move(out), {a, b},
        [a, b](Tape<T>& t, const Tensor<T>& g) {
            for (const Var in : {a, b}) {
                if (!t.requires_grad(in)) continue;
                Tensor<T>& gi = t.grad_buffer(in);
                for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
            }
        },
        "add");
}

template <typename T>
Var mul(Tape<T>& tape, Var a, Var b) {
    const Tensor<T>& av = tape.value(a);
    const Tensor<T>& bv = tape.value(b);
    require(av.shape() == bv.shape(), "mul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    Tensor<T> out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return finish(
        tape, std::move(out), {a, b},
        [a, b](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(a)) {
                const Tensor<T>& bv2 = t.value(b);
                Tensor<T>& ga = t.grad_buffer(a);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
            }
            if (t.requires_grad(b)) {
                const Tensor<T>& av2 = t.value(a);
                Tensor<T>& gb = t.grad_buffer(b);
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
            }
        },
        "mul");
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
    Tensor<T> out = tape.value(x);
    for (T& v : out.data()) v *= factor;
    return finish(
        tape, std::move(out), {x},
        [x, factor](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
        },
        "scale");
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var x) {
    const Tensor<T>& xv = tape.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
    return finish(
        tape, std::move(out), {x},
        [x](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& xv2 = t.value(x);
            Tensor<T>& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = T(1) / (T(1) + std::exp(-xv2[i]));
                gx[i] += g[i] * s * (T(1) - s);
            }
        },
        "sigmoid");
}

template <typename T>
Var silu(Tape<T>& tape, Var x) {
    const Tensor<T>& xv = tape.value(x);
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] / (T(1) + std::exp(-xv[i]));
    return finish(
        tape, std::move(out), {x},
        [x](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& xv2 = t.value(x);
            Tensor<T>& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T s = T(1) / (T(1) + std::exp(-xv2[i]));
                gx[i] += g[i] * s * (T(1) + xv2[i] * (T(1) - s));
            }
        },
        "silu");
}

template <typename T>
Var scale_groups(Tape<T>& tape, Var x, Var factors, std::size_t group_width) {
    const Tensor<T>& xv = tape.value(x);
    const Tensor<T>& fv = tape.value(factors);
    require(group_width > 0 && fv.size() * group_width == xv.cols(),
            "scale_groups: " + std::to_string(fv.size()) + " factors x width " + std::to_string(group_width) +
                " does not cover " + std::to_string(xv.cols()) + " columns");
    const std::size_t rows = xv.rows(), cols = xv.cols();
    Tensor<T> out = xv;
    for (std::size_t r = 0; r < rows; ++r) {
        T* row = out.ptr() + r * cols;
        for (std::size_t j = 0; j < cols; ++j) row[j] *= fv[j / group_width];
    }
    return finish(
        tape, std::move(out), {x, factors},
        [x, factors, group_width, rows, cols](Tape<T>& t, const Tensor<T>& g) {
            if (t.requires_grad(x)) {
                const Tensor<T>& fv2 = t.value(factors);
                Tensor<T>& gx = t.grad_buffer(x);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += g[r * cols + j] * fv2[j / group_width];
                }
            }
            if (t.requires_grad(factors)) {
                const Tensor<T>& xv2 = t.value(x);
                Tensor<T>& gf = t.grad_buffer(factors);
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t j = 0; j < cols; ++j) gf[j / group_width] += g[r * cols + j] * xv2[r * cols + j];
                }
            }
        },
        "scale_groups");
}

template <typename T>
Var rmsnorm(Tape<T>& tape, Var x, Var weight, T eps) {
    if (!(eps > T(0))) throw std::invalid_argument("rmsnorm: eps must be positive");
    const Tensor<T>& xv = tape.value(x);
    const Tensor<T>& wv = tape.value(weight);
    const std::size_t d = xv.cols(), rows = xv.rows();
    require(wv.size() == d, "rmsnorm: weight size " + std::to_string(wv.size()) + " != feature dim " + std::to_string(d));
    Tensor<T> out(xv.shape());
    Tensor<T> inv_rms({rows});
    for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = xv.ptr() + r * d;
        Acc<T> ss = 0;
        for (std::size_t j = 0; j < d; ++j) ss += static_cast<Acc<T>>(xr[j]) * xr[j];
        const Acc<T> inv = Acc<T>(1) / std::sqrt(ss / static_cast<Acc<T>>(d) + eps);
        inv_rms[r] = static_cast<T>(inv);
        T* o = out.ptr() + r * d;
        for (std::size_t j = 0; j < d; ++j) o[j] = static_cast<T>(xr[j] * inv * wv[j]);
    }
    return finish(
        tape, std::move(out), {x, weight},
        [x, weight, d, rows, inv_rms = std::move(inv_rms)](Tape<T>& t, const Tensor<T>& g) {
            const Tensor<T>& xv2 = t.value(x);
            const Tensor<T>& wv2 = t.value(weight);
            const bool gx_needed = t.requires_grad(x);
            const bool gw_needed = t.requires_grad(weight);
            T* gx = gx_needed ? t.grad_buffer(x).ptr() : nullptr;
            T* gw = gw_needed ? t.grad_buffer(weight).ptr() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const T* xr = xv2.ptr() + r * d;
                const T* gr = g.ptr() + r * d;
                const T inv = inv_rms[r];
                if (gw) {
                    for (std::size_t j = 0; j < d; ++j) gw[j] += gr[j] * xr[j] * inv;
                }
                if (gx) {
                    // dx = inv * (gw_hat - xhat * mean(gw_hat * xhat)), gw_hat = g * w
                    T dot = 0;
                    for (std::size_t j = 0; j < d; ++j) dot += gr[j] * wv2[j] * xr[j] * inv;
                    const T mean_dot = dot / static_cast<T>(d);
                    T* gxr = gx + r * d;
                    for (std::size_t j = 0; j < d; ++j) gxr[j] += inv * (gr[j] * wv2[j] - xr[j] * inv * mean_dot);
                }
            }
        },
        "rmsnorm");
}

namespace {

template <typename T>
void rope_tables(std::span<const int> positions, std::size_t head_dim, double base, std::vector<T>& cos_t,
                 std::vector<T>& sin_t) {
    const std::size_t half = head_dim / 2;
    cos_t.resize(positions.size() * half);
    sin_t.resize(positions.size() * half);
    for (std::size_t t = 0; t < positions.size(); ++t) {
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[t]) * freq;
            cos_t[t * half + i] = static_cast<T>(std::cos(angle));
            sin_t[t * half + i] = static_cast<T>(std::sin(angle));
        }
    }
}

}  // namespace

template <typename T>
Var rope(Tape<T>& tape, Var x, std::size_t n_heads, std::span<const int> positions, double base) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.rank() == 2 && xv.dim(0) == positions.size(), "rope: expected one position per row");
    require(n_heads > 0 && xv.dim(1) % n_heads == 0, "rope: columns not divisible by head count");
    const std::size_t rows = xv.dim(0), cols = xv.dim(1), hd = cols / n_heads, half = hd / 2;
    require(hd % 2 == 0, "rope: head dim must be even");
    std::vector<T> cos_t, sin_t;
    rope_tables<T>(positions, hd, base, cos_t, sin_t);
    Tensor<T> out(xv.shape());
    for (std::size_t t = 0; t < rows; ++t) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            const T* xi = xv.ptr() + t * cols + h * hd;
            T* o = out.ptr() + t * cols + h * hd;
            for (std::size_t i = 0; i < half; ++i) {
                const T c = cos_t[t * half + i], s = sin_t[t * half + i];
                const T x0 = xi[2 * i], x1 = xi[2 * i + 1];
                o[2 * i] = x0 * c - x1 * s;
                o[2 * i + 1] = x0 * s + x1 * c;
            }
        }
    }
    return finish(
        tape, std::move(out), {x},
        [x, rows, cols, n_heads, hd, half, cos_t = std::move(cos_t), sin_t = std::move(sin_t)](Tape<T>& t,
                                                                                                 const Tensor<T>& g) {
            Tensor<T>& gx = t.grad_buffer(x);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const T* gi = g.ptr() + r * cols + h * hd;
                    T* o = gx.ptr() + r * cols + h * hd;
                    for (std::size_t i = 0; i < half; ++i) {
                        const T c = cos_t[r * half + i], s = sin_t[r * half + i];
                        const T g0 = gi[2 * i], g1 = gi[2 * i + 1];
                        o[2 * i] += g0 * c + g1 * s;
                        o[2 * i + 1] += -g0 * s + g1 * c;
                    }
                }
            }
        },
        "rope");
}

template <typename T>
Var causal_attention(Tape<T>& tape, Var q, Var k, Var v, std::size_t n_heads, std::size_t n_kv_heads) {
    const Tensor<T>& qv = tape.value(q);
    const Tensor<T>& kv = tape.value(k);
    const Tensor<T>& vv = tape.value(v);
    require(n_heads > 0 && n_kv_heads > 0 && n_heads % n_kv_heads == 0, "attention: heads not divisible by kv heads");
    require(qv.rank() == 2 && kv.rank() == 2 && vv.rank() == 2, "attention: expected 2-D inputs");
    require(kv.shape() == vv.shape() && qv.dim(0) == kv.dim(0), "attention: k/v/q row mismatch");
    require(qv.dim(1) % n_heads == 0, "attention: q columns not divisible by heads");
    const std::size_t seq = qv.dim(0), hd = qv.dim(1) / n_heads;
    require(kv.dim(1) == n_kv_heads * hd, "attention: k/v columns must be n_kv_heads * head_dim");
    const std::size_t group = n_heads / n_kv_heads;
    const std::size_t qc = qv.dim(1), kc = kv.dim(1);
    const T scale_f = T(1) / std::sqrt(static_cast<T>(hd));

    Tensor<T> probs({n_heads, seq, seq});
    Tensor<T> out({seq, qc});
    std::vector<Acc<T>> scores(seq), acc(hd);
    const Acc<T> scale_a = Acc<T>(1) / std::sqrt(static_cast<Acc<T>>(hd));
    for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t g = h / group;
        for (std::size_t t = 0; t < seq; ++t) {
            const T* qt = qv.ptr() + t * qc + h * hd;
            Acc<T> mx = -std::numeric_limits<Acc<T>>::infinity();
            for (std::size_t s = 0; s <= t; ++s) {
                const T* ks = kv.ptr() + s * kc + g * hd;
                Acc<T> dot = 0;
                for (std::size_t c = 0; c < hd; ++c) dot += static_cast<Acc<T>>(qt[c]) * ks[c];
                scores[s] = dot * scale_a;
                mx = std::max(mx, scores[s]);
            }
            Acc<T> denom = 0;
            for (std::size_t s = 0; s <= t; ++s) {
                scores[s] = std::exp(scores[s] - mx);
                denom += scores[s];
            }
            T* prow = probs.ptr() + (h * seq + t) * seq;
            T* ot = out.ptr() + t * qc + h * hd;
            std::fill(acc.begin(), acc.end(), Acc<T>(0));
            for (std::size_t s = 0; s <= t; ++s) {
                const Acc<T> pr = scores[s] / denom;
                prow[s] = static_cast<T>(pr);
                const T* vs = vv.ptr() + s * kc + g * hd;
                for (std::size_t c = 0; c < hd; ++c) acc[c] += pr * vs[c];
            }
            for (std::size_t c = 0; c < hd; ++c) ot[c] = static_cast<T>(acc[c]);
        }
    }
    return finish(
        tape, std::move(out), {q, k, v},
        [q, k, v, n_heads, group, seq, hd, qc, kc, scale_f, probs = std::move(probs)](Tape<T>& tp,
                                                                                      const Tensor<T>& gout) {
            const Tensor<T>& qv2 = tp.value(q);
            const Tensor<T>& kv2 = tp.value(k);
            const Tensor<T>& vv2 = tp.value(v);
            T* gq = tp.requires_grad(q) ? tp.grad_buffer(q).ptr() : nullptr;
            T* gk = tp.requires_grad(k) ? tp.grad_buffer(k).ptr() : nullptr;
            T* gv = tp.requires_grad(v) ? tp.grad_buffer(v).ptr() : nullptr;
            std::vector<T> dscore(seq);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t g = h / group;
                for (std::size_t t = 0; t < seq; ++t) {
                    const T* prow = probs.ptr() + (h * seq + t) * seq;
                    const T* go = gout.ptr() + t * qc + h * hd;
                    T weighted = 0;
                    for (std::size_t s = 0; s <= t; ++s) {
                        const T* vs = vv2.ptr() + s * kc + g * hd;
                        T dp = 0;
                        for (std::size_t c = 0; c < hd; ++c) dp += go[c] * vs[c];
                        dscore[s] = dp;
                        weighted += prow[s] * dp;
                        if (gv) axpy(hd, prow[s], go, gv + s * kc + g * hd);
                    }
                    if (!gq && !gk) continue;
                    const T* qt = qv2.ptr() + t * qc + h * hd;
                    for (std::size_t s = 0; s <= t; ++s) {
                        const T ds = prow[s] * (dscore[s] - weighted) * scale_f;
                        if (ds == T(0)) continue;
                        if (gq) axpy(hd, ds, kv2.ptr() + s * kc + g * hd, gq + t * qc + h * hd);
                        if (gk) axpy(hd, ds, qt, gk + s * kc + g * hd);
                    }
                }
            }
        },
        "causal_attention");
}

template <typename T>
Var embedding(Tape<T>& tape, Var table, std::span<const int> tokens) {
    const Tensor<T>& tv = tape.value(table);
    require(tv.rank() == 2, "embedding: table must be 2-D");
    const std::size_t vocab = tv.dim(0), d = tv.dim(1);
    Tensor<T> out({tokens.size(), d});
    std::vector<int> toks(tokens.begin(), tokens.end());
    for (std::size_t t = 0; t < toks.size(); ++t) {
        if (toks[t] < 0 || static_cast<std::size_t>(toks[t]) >= vocab) {
            throw std::out_of_range("embedding: token " + std::to_string(toks[t]) + " outside vocab " +
                                    std::to_string(vocab));
        }
        std::copy_n(tv.ptr() + static_cast<std::size_t>(toks[t]) * d, d, out.ptr() + t * d);
    }
    return finish(
        tape, std::move(out), {table},
        [table, d, toks = std::move(toks)](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gt = t.grad_buffer(table);
            for (std::size_t i = 0; i < toks.size(); ++i) {
                axpy(d, T(1), g.ptr() + i * d, gt.ptr() + static_cast<std::size_t>(toks[i]) * d);
            }
        },
        "embedding");
}

template <typename T>
Var softmax_ce(Tape<T>& tape, Var logits, std::span<const int> targets) {
    const Tensor<T>& lv = tape.value(logits);
    require(lv.rank() == 2 && lv.dim(0) == targets.size(), "softmax_ce: need one target per logit row");
    const std::size_t rows = lv.dim(0), vocab = lv.dim(1);
    require(rows > 0, "softmax_ce: empty batch");
    Tensor<T> softmax(lv.shape());
    std::vector<int> tgt(targets.begin(), targets.end());
    T total = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= vocab) {
            throw std::out_of_range("softmax_ce: target " + std::to_string(tgt[r]) + " outside [0," +
                                    std::to_string(vocab) + ")");
        }
        const T* lr = lv.ptr() + r * vocab;
        T* sr = softmax.ptr() + r * vocab;
        const T mx = *std::max_element(lr, lr + vocab);
        T denom = 0;
        for (std::size_t j = 0; j < vocab; ++j) {
            sr[j] = std::exp(lr[j] - mx);
            denom += sr[j];
        }
        for (std::size_t j = 0; j < vocab; ++j) sr[j] /= denom;
        total += (std::log(denom) + mx) - lr[tgt[r]];
    }
    Tensor<T> out({1}, {total / static_cast<T>(rows)});
    return finish(
        tape, std::move(out), {logits},
        [logits, rows, vocab, tgt = std::move(tgt), softmax = std::move(softmax)](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gl = t.grad_buffer(logits);
            const T s = g[0] / static_cast<T>(rows);
            for (std::size_t r = 0; r < rows; ++r) {
                const T* sr = softmax.ptr() + r * vocab;
                T* gr = gl.ptr() + r * vocab;
                for (std::size_t j = 0; j < vocab; ++j) gr[j] += s * sr[j];
                gr[tgt[r]] -= s;
            }
        },
        "softmax_ce");
}

template <typename T>
Var straight_through(Tape<T>& tape, Tensor<T> hard, Var soft) {
    require(hard.shape() == tape.value(soft).shape(), "straight_through: hard/soft shape mismatch");
    return finish(
        tape, std::move(hard), {soft},
        [soft](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gs = t.grad_buffer(soft);
            for (std::size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        },
        "straight_through");
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var x, const Tensor<T>& weights) {
    const Tensor<T>& xv = tape.value(x);
    require(xv.shape() == weights.shape(), "weighted_sum: shape mismatch");
    T total = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) total += xv[i] * weights[i];
    return finish(
        tape, Tensor<T>({1}, {total}), {x},
        [x, weights](Tape<T>& t, const Tensor<T>& g) {
            Tensor<T>& gx = t.grad_buffer(x);
            for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += g[0] * weights[i];
        },
        "weighted_sum");
}

#define BPRUNE_INSTANTIATE_OPS(T)                                                                      \
    template Var matmul<T>(Tape<T>&, Var, Var);                                                        \
    template Var add<T>(Tape<T>&, Var, Var);                                                           \
    template Var mul<T>(Tape<T>&, Var, Var);                                                           \
    template Var scale<T>(Tape<T>&, Var, T);                                                           \
    template Var sigmoid<T>(Tape<T>&, Var);                                                            \
    template Var silu<T>(Tape<T>&, Var);                                                               \
    template Var scale_groups<T>(Tape<T>&, Var, Var, std::size_t);                                     \
    template Var rmsnorm<T>(Tape<T>&, Var, Var, T);                                                    \
    template Var rope<T>(Tape<T>&, Var, std::size_t, std::span<const int>, double);                    \
    template Var causal_attention<T>(Tape<T>&, Var, Var, Var, std::size_t, std::size_t);               \
    template Var embedding<T>(Tape<T>&, Var, std::span<const int>);                                    \
    template Var softmax_ce<T>(Tape<T>&, Var, std::span<const int>);                                   \
    template Var straight_through<T>(Tape<T>&, Tensor<T>, Var);                                        \
    template Var weighted_sum<T>(Tape<T>&, Var, const Tensor<T>&);

BPRUNE_INSTANTIATE_OPS(float)
BPRUNE_INSTANTIATE_OPS(double)

}  // namespace bprune::ops
