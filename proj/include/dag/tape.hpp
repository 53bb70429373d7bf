#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "dag/tensor.hpp"

namespace dag::nn {

/// Reverse-mode tape. One tape holds the computation graph of one forward
/// pass; node creation order is a topological order, so backward() simply
/// walks the nodes in reverse. Tapes are rebuilt per bag (bag sizes vary)
/// and are never shared between threads.
template <typename S>
class Tape {
  public:
    struct Id {
        std::uint32_t v = 0;
    };

    Id leaf(Tensor<S> value) {
        require_finite(value, "leaf");
        return push(std::move(value), nullptr);
    }

    const Tensor<S>& value(Id id) const { return nodes_[id.v].value; }
    const Tensor<S>& grad(Id id) const { return nodes_[id.v].grad; }
    std::size_t size() const { return nodes_.size(); }

    /// out = x * w + b (bias broadcast over rows).
    Id linear(Id x, Id w, Id b) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& wv = value(w);
        const Tensor<S>& bv = value(b);
        if (xv.cols != wv.rows)
            throw ShapeError("linear: inner dimensions disagree " + xv.shape_str() + " vs " +
                             wv.shape_str());
        if (bv.rows != 1 || bv.cols != wv.cols)
            throw ShapeError("linear: bias " + bv.shape_str() + " does not match weight " +
                             wv.shape_str());
        Tensor<S> out(xv.rows, wv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            S* o = out.row_ptr(r);
            for (std::size_t c = 0; c < wv.cols; ++c) o[c] = bv.data[c];
            const S* xr = xv.row_ptr(r);
            for (std::size_t k = 0; k < xv.cols; ++k) {
                const S xk = xr[k];
                const S* wk = wv.row_ptr(k);
                for (std::size_t c = 0; c < wv.cols; ++c) o[c] += xk * wk[c];
            }
        }
        require_finite(out, "linear");
        return push(std::move(out), [x, w, b](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& xv = t.value(x);
            const Tensor<S>& wv = t.value(w);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            Tensor<S>& gw = t.nodes_[w.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t r = 0; r < xv.rows; ++r) {
                const S* gor = go.row_ptr(r);
                S* gxr = gx.row_ptr(r);
                for (std::size_t k = 0; k < xv.cols; ++k) {
                    const S* wk = wv.row_ptr(k);
                    S acc = 0;
                    for (std::size_t c = 0; c < go.cols; ++c) acc += gor[c] * wk[c];
                    gxr[k] += acc;
                }
                const S* xr = xv.row_ptr(r);
                for (std::size_t k = 0; k < xv.cols; ++k) {
                    const S xk = xr[k];
                    S* gwk = gw.row_ptr(k);
                    for (std::size_t c = 0; c < go.cols; ++c) gwk[c] += xk * gor[c];
                }
                for (std::size_t c = 0; c < go.cols; ++c) gb.data[c] += gor[c];
            }
        });
    }

    Id matmul(Id a, Id b) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        if (av.cols != bv.rows)
            throw ShapeError("matmul: inner dimensions disagree " + av.shape_str() + " vs " +
                             bv.shape_str());
        Tensor<S> out(av.rows, bv.cols);
        for (std::size_t r = 0; r < av.rows; ++r) {
            S* o = out.row_ptr(r);
            const S* ar = av.row_ptr(r);
            for (std::size_t k = 0; k < av.cols; ++k) {
                const S ak = ar[k];
                const S* bk = bv.row_ptr(k);
                for (std::size_t c = 0; c < bv.cols; ++c) o[c] += ak * bk[c];
            }
        }
        require_finite(out, "matmul");
        return push(std::move(out), [a, b](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& av = t.value(a);
            const Tensor<S>& bv = t.value(b);
            Tensor<S>& ga = t.nodes_[a.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t r = 0; r < av.rows; ++r) {
                const S* gor = go.row_ptr(r);
                S* gar = ga.row_ptr(r);
                for (std::size_t k = 0; k < av.cols; ++k) {
                    const S* bk = bv.row_ptr(k);
                    S acc = 0;
                    for (std::size_t c = 0; c < go.cols; ++c) acc += gor[c] * bk[c];
                    gar[k] += acc;
                }
                const S* ar = av.row_ptr(r);
                for (std::size_t k = 0; k < av.cols; ++k) {
                    const S ak = ar[k];
                    S* gbk = gb.row_ptr(k);
                    for (std::size_t c = 0; c < go.cols; ++c) gbk[c] += ak * gor[c];
                }
            }
        });
    }

    Id add(Id a, Id b) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        require_same_shape(av, bv, "add");
        Tensor<S> out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
        require_finite(out, "add");
        return push(std::move(out), [a, b](Tape& t, const Tensor<S>& go) {
            Tensor<S>& ga = t.nodes_[a.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i) {
                ga.data[i] += go.data[i];
                gb.data[i] += go.data[i];
            }
        });
    }

    /// Elementwise (Hadamard) product.
    Id mul(Id a, Id b) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        require_same_shape(av, bv, "mul");
        Tensor<S> out = av;
        for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
        require_finite(out, "mul");
        return push(std::move(out), [a, b](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& av = t.value(a);
            const Tensor<S>& bv = t.value(b);
            Tensor<S>& ga = t.nodes_[a.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i) {
                ga.data[i] += go.data[i] * bv.data[i];
                gb.data[i] += go.data[i] * av.data[i];
            }
        });
    }

    Id tanh(Id x) {
        Tensor<S> out = value(x);
        for (auto& v : out.data) v = std::tanh(v);
        require_finite(out, "tanh");
        Id y = push(std::move(out), nullptr);
        nodes_[y.v].back = [x, y](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& yv = t.value(y);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i)
                gx.data[i] += go.data[i] * (S(1) - yv.data[i] * yv.data[i]);
        };
        return y;
    }

    Id sigmoid(Id x) {
        Tensor<S> out = value(x);
        for (auto& v : out.data) v = S(1) / (S(1) + std::exp(-v));
        require_finite(out, "sigmoid");
        Id y = push(std::move(out), nullptr);
        nodes_[y.v].back = [x, y](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& yv = t.value(y);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i)
                gx.data[i] += go.data[i] * yv.data[i] * (S(1) - yv.data[i]);
        };
        return y;
    }

    Id leaky_relu(Id x, S slope) {
        Tensor<S> out = value(x);
        for (auto& v : out.data) v = v >= S(0) ? v : slope * v;
        require_finite(out, "leaky_relu");
        return push(std::move(out), [x, slope](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& xv = t.value(x);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i)
                gx.data[i] += go.data[i] * (xv.data[i] >= S(0) ? S(1) : slope);
        });
    }

    /// Row-wise softmax with per-row max subtraction.
    Id softmax_rows(Id x) {
        const Tensor<S>& xv = value(x);
        Tensor<S> out(xv.rows, xv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            const S* xr = xv.row_ptr(r);
            S* o = out.row_ptr(r);
            S mx = xr[0];
            for (std::size_t c = 1; c < xv.cols; ++c) mx = std::max(mx, xr[c]);
            S sum = 0;
            for (std::size_t c = 0; c < xv.cols; ++c) {
                o[c] = std::exp(xr[c] - mx);
                sum += o[c];
            }
            for (std::size_t c = 0; c < xv.cols; ++c) o[c] /= sum;
        }
        require_finite(out, "softmax_rows");
        Id y = push(std::move(out), nullptr);
        nodes_[y.v].back = [x, y](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& yv = t.value(y);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t r = 0; r < yv.rows; ++r) {
                const S* yr = yv.row_ptr(r);
                const S* gor = go.row_ptr(r);
                S dot = 0;
                for (std::size_t c = 0; c < yv.cols; ++c) dot += gor[c] * yr[c];
                S* gxr = gx.row_ptr(r);
                for (std::size_t c = 0; c < yv.cols; ++c) gxr[c] += yr[c] * (gor[c] - dot);
            }
        };
        return y;
    }

    /// Negative log softmax probability of `label`; logits must be [1xC].
    Id cross_entropy(Id logits, std::size_t label) {
        const Tensor<S>& lv = value(logits);
        if (lv.rows != 1) throw ShapeError("cross_entropy: logits must be [1xC], got " + lv.shape_str());
        if (label >= lv.cols)
            throw InputError("cross_entropy: label " + std::to_string(label) +
                             " out of range for " + std::to_string(lv.cols) + " classes");
        S mx = lv.data[0];
        for (S v : lv.data) mx = std::max(mx, v);
        S sum = 0;
        for (S v : lv.data) sum += std::exp(v - mx);
        const S loss = std::log(sum) + mx - lv.data[label];
        Tensor<S> out = Tensor<S>::scalar(loss);
        require_finite(out, "cross_entropy");
        return push(std::move(out), [logits, label, mx, sum](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& lv = t.value(logits);
            Tensor<S>& gl = t.nodes_[logits.v].grad;
            const S g = go.data[0];
            for (std::size_t c = 0; c < lv.cols; ++c) {
                S p = std::exp(lv.data[c] - mx) / sum;
                gl.data[c] += g * (p - (c == label ? S(1) : S(0)));
            }
        });
    }

    /// out.row(m) = x.row(idx[m]); duplicates allowed, backward scatter-adds.
    Id gather_rows(Id x, std::vector<std::uint32_t> idx) {
        const Tensor<S>& xv = value(x);
        if (idx.empty()) throw InputError("gather_rows: empty index list");
        for (auto i : idx)
            if (i >= xv.rows)
                throw InputError("gather_rows: index " + std::to_string(i) + " out of range " +
                                 xv.shape_str());
        Tensor<S> out(idx.size(), xv.cols);
        for (std::size_t m = 0; m < idx.size(); ++m) {
            const S* src = xv.row_ptr(idx[m]);
            S* dst = out.row_ptr(m);
            for (std::size_t c = 0; c < xv.cols; ++c) dst[c] = src[c];
        }
        return push(std::move(out), [x, idx = std::move(idx)](Tape& t, const Tensor<S>& go) {
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t m = 0; m < idx.size(); ++m) {
                S* dst = gx.row_ptr(idx[m]);
                const S* src = go.row_ptr(m);
                for (std::size_t c = 0; c < go.cols; ++c) dst[c] += src[c];
            }
        });
    }

    /// out.row(m) = w[m] * x.row(m) with w a [Mx1] column of per-row scales.
    Id scale_rows(Id x, Id w) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& wv = value(w);
        if (wv.cols != 1 || wv.rows != xv.rows)
            throw ShapeError("scale_rows: scale column " + wv.shape_str() + " does not match " +
                             xv.shape_str());
        Tensor<S> out = xv;
        for (std::size_t r = 0; r < xv.rows; ++r) {
            S* o = out.row_ptr(r);
            const S s = wv.data[r];
            for (std::size_t c = 0; c < xv.cols; ++c) o[c] *= s;
        }
        require_finite(out, "scale_rows");
        return push(std::move(out), [x, w](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& xv = t.value(x);
            const Tensor<S>& wv = t.value(w);
            Tensor<S>& gx = t.nodes_[x.v].grad;
            Tensor<S>& gw = t.nodes_[w.v].grad;
            for (std::size_t r = 0; r < xv.rows; ++r) {
                const S* gor = go.row_ptr(r);
                const S* xr = xv.row_ptr(r);
                S* gxr = gx.row_ptr(r);
                const S s = wv.data[r];
                S acc = 0;
                for (std::size_t c = 0; c < xv.cols; ++c) {
                    gxr[c] += s * gor[c];
                    acc += gor[c] * xr[c];
                }
                gw.data[r] += acc;
            }
        });
    }

    /// Cosine similarity per row pair: out[m] = <a_m,b_m> / max(|a_m||b_m|, eps).
    /// The eps clamp keeps zero rows finite; when clamped the denominator is
    /// treated as a constant in backward.
    Id row_cosine(Id a, Id b) {
        constexpr S kEps = S(1e-8);
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        require_same_shape(av, bv, "row_cosine");
        Tensor<S> out(av.rows, 1);
        for (std::size_t r = 0; r < av.rows; ++r) {
            const S* ar = av.row_ptr(r);
            const S* br = bv.row_ptr(r);
            S dot = 0, na = 0, nb = 0;
            for (std::size_t c = 0; c < av.cols; ++c) {
                dot += ar[c] * br[c];
                na += ar[c] * ar[c];
                nb += br[c] * br[c];
            }
            out.data[r] = dot / std::max(std::sqrt(na) * std::sqrt(nb), kEps);
        }
        require_finite(out, "row_cosine");
        Id y = push(std::move(out), nullptr);
        nodes_[y.v].back = [a, b, y](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& av = t.value(a);
            const Tensor<S>& bv = t.value(b);
            const Tensor<S>& yv = t.value(y);
            Tensor<S>& ga = t.nodes_[a.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t r = 0; r < av.rows; ++r) {
                const S* ar = av.row_ptr(r);
                const S* br = bv.row_ptr(r);
                S na2 = 0, nb2 = 0;
                for (std::size_t c = 0; c < av.cols; ++c) {
                    na2 += ar[c] * ar[c];
                    nb2 += br[c] * br[c];
                }
                const S na = std::sqrt(na2), nb = std::sqrt(nb2);
                const S g = go.data[r];
                const S s = yv.data[r];
                S* gar = ga.row_ptr(r);
                S* gbr = gb.row_ptr(r);
                if (na * nb <= kEps) {
                    // clamped: d/da (dot/eps) = b/eps
                    for (std::size_t c = 0; c < av.cols; ++c) {
                        gar[c] += g * br[c] / kEps;
                        gbr[c] += g * ar[c] / kEps;
                    }
                } else {
                    const S inv = S(1) / (na * nb);
                    for (std::size_t c = 0; c < av.cols; ++c) {
                        gar[c] += g * (br[c] * inv - s * ar[c] / na2);
                        gbr[c] += g * (ar[c] * inv - s * br[c] / nb2);
                    }
                }
            }
        };
        return y;
    }

    /// out[m] = factor * <a_m, b_m>  (a column [Mx1]).
    Id row_dot(Id a, Id b, S factor) {
        const Tensor<S>& av = value(a);
        const Tensor<S>& bv = value(b);
        require_same_shape(av, bv, "row_dot");
        Tensor<S> out(av.rows, 1);
        for (std::size_t r = 0; r < av.rows; ++r) {
            const S* ar = av.row_ptr(r);
            const S* br = bv.row_ptr(r);
            S acc = 0;
            for (std::size_t c = 0; c < av.cols; ++c) acc += ar[c] * br[c];
            out.data[r] = factor * acc;
        }
        require_finite(out, "row_dot");
        return push(std::move(out), [a, b, factor](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& av = t.value(a);
            const Tensor<S>& bv = t.value(b);
            Tensor<S>& ga = t.nodes_[a.v].grad;
            Tensor<S>& gb = t.nodes_[b.v].grad;
            for (std::size_t r = 0; r < av.rows; ++r) {
                const S g = factor * go.data[r];
                const S* ar = av.row_ptr(r);
                const S* br = bv.row_ptr(r);
                S* gar = ga.row_ptr(r);
                S* gbr = gb.row_ptr(r);
                for (std::size_t c = 0; c < av.cols; ++c) {
                    gar[c] += g * br[c];
                    gbr[c] += g * ar[c];
                }
            }
        });
    }

    /// Collapse consecutive groups of `group` rows by summation:
    /// [G*group x D] -> [G x D].
    Id sum_group_rows(Id x, std::size_t group) {
        const Tensor<S>& xv = value(x);
        if (group == 0 || xv.rows % group != 0)
            throw ShapeError("sum_group_rows: row count " + std::to_string(xv.rows) +
                             " not divisible by group " + std::to_string(group));
        Tensor<S> out(xv.rows / group, xv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            S* o = out.row_ptr(r / group);
            const S* xr = xv.row_ptr(r);
            for (std::size_t c = 0; c < xv.cols; ++c) o[c] += xr[c];
        }
        require_finite(out, "sum_group_rows");
        return push(std::move(out), [x, group](Tape& t, const Tensor<S>& go) {
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t r = 0; r < gx.rows; ++r) {
                const S* gor = go.row_ptr(r / group);
                S* gxr = gx.row_ptr(r);
                for (std::size_t c = 0; c < go.cols; ++c) gxr[c] += gor[c];
            }
        });
    }

    /// Column means: [N x D] -> [1 x D].
    Id mean_rows(Id x) {
        const Tensor<S>& xv = value(x);
        Tensor<S> out(1, xv.cols);
        for (std::size_t r = 0; r < xv.rows; ++r) {
            const S* xr = xv.row_ptr(r);
            for (std::size_t c = 0; c < xv.cols; ++c) out.data[c] += xr[c];
        }
        const S inv = S(1) / S(xv.rows);
        for (auto& v : out.data) v *= inv;
        require_finite(out, "mean_rows");
        return push(std::move(out), [x, inv](Tape& t, const Tensor<S>& go) {
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t r = 0; r < gx.rows; ++r) {
                S* gxr = gx.row_ptr(r);
                for (std::size_t c = 0; c < go.cols; ++c) gxr[c] += inv * go.data[c];
            }
        });
    }

    /// Column maxima: [N x D] -> [1 x D]; gradient routes to the first
    /// (lowest-row) maximum of each column.
    Id max_rows(Id x) {
        const Tensor<S>& xv = value(x);
        Tensor<S> out(1, xv.cols);
        std::vector<std::uint32_t> arg(xv.cols, 0);
        for (std::size_t c = 0; c < xv.cols; ++c) out.data[c] = xv.at(0, c);
        for (std::size_t r = 1; r < xv.rows; ++r) {
            const S* xr = xv.row_ptr(r);
            for (std::size_t c = 0; c < xv.cols; ++c) {
                if (xr[c] > out.data[c]) {
                    out.data[c] = xr[c];
                    arg[c] = std::uint32_t(r);
                }
            }
        }
        require_finite(out, "max_rows");
        return push(std::move(out), [x, arg = std::move(arg)](Tape& t, const Tensor<S>& go) {
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t c = 0; c < go.cols; ++c) gx.at(arg[c], c) += go.data[c];
        });
    }

    /// Same data, new shape (row-major order preserved).
    Id reshape(Id x, std::size_t rows, std::size_t cols) {
        const Tensor<S>& xv = value(x);
        if (rows * cols != xv.numel())
            throw ShapeError("reshape: cannot view " + xv.shape_str() + " as " +
                             Tensor<S>::shape_str(rows, cols));
        Tensor<S> out(rows, cols, xv.data);
        return push(std::move(out), [x](Tape& t, const Tensor<S>& go) {
            Tensor<S>& gx = t.nodes_[x.v].grad;
            for (std::size_t i = 0; i < go.numel(); ++i) gx.data[i] += go.data[i];
        });
    }

    /// out = factor * s * x with s a learnable [1x1] scalar node.
    Id scale_by_scalar(Id x, Id s, S factor) {
        const Tensor<S>& xv = value(x);
        const Tensor<S>& sv = value(s);
        if (sv.numel() != 1) throw ShapeError("scale_by_scalar: scale must be [1x1], got " + sv.shape_str());
        const S k = factor * sv.data[0];
        Tensor<S> out = xv;
        for (auto& v : out.data) v *= k;
        require_finite(out, "scale_by_scalar");
        return push(std::move(out), [x, s, factor](Tape& t, const Tensor<S>& go) {
            const Tensor<S>& xv = t.value(x);
            const S sval = t.value(s).data[0];
            Tensor<S>& gx = t.nodes_[x.v].grad;
            Tensor<S>& gs = t.nodes_[s.v].grad;
            S acc = 0;
            for (std::size_t i = 0; i < go.numel(); ++i) {
                gx.data[i] += factor * sval * go.data[i];
                acc += xv.data[i] * go.data[i];
            }
            gs.data[0] += factor * acc;
        });
    }

    /// Seeds d(top)/d(top) = 1 and propagates adjoints to every node.
    /// `top` must be a [1x1] scalar.
    void backward(Id top) {
        if (value(top).numel() != 1)
            throw ShapeError("backward: top node must be scalar, got " + value(top).shape_str());
        for (auto& n : nodes_) {
            n.grad = Tensor<S>::zeros(n.value.rows, n.value.cols);
        }
        nodes_[top.v].grad.data[0] = S(1);
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
        }
    }

  private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        std::function<void(Tape&, const Tensor<S>&)> back;
    };

    Id push(Tensor<S> v, std::function<void(Tape&, const Tensor<S>&)> back) {
        nodes_.push_back(Node{std::move(v), Tensor<S>(), std::move(back)});
        return Id{std::uint32_t(nodes_.size() - 1)};
    }

    std::vector<Node> nodes_;
};

}  // namespace dag::nn
