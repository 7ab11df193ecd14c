#include "mgimm/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>

namespace mgimm {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        out << (i ? "," : "") << shape[i];
    }
    out << ']';
    return out.str();
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
    return leaf(std::move(value), false);
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad, std::string name) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(name), {}});
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn));
}

template <typename T>
Var<T> Tape<T>::record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    for (const auto& in : inputs) {
        if (&in.tape() != this) {
            throw Error("op mixes vars from different tapes");
        }
        needs = needs || in.requires_grad();
    }
    nodes_.push_back(Node{std::move(value), {}, needs, {}, needs ? std::move(fn) : BackwardFn{}});
    return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) {
        node.grad = Tensor<T>::zeros(node.value.shape());
    }
    return node.grad;
}

template <typename T>
GradientMap<T> Tape<T>::backward(Var<T> loss) {
    if (&loss.tape() != this) {
        throw Error("backward: loss belongs to another tape");
    }
    if (loss.value().size() != 1) {
        throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    for (auto& node : nodes_) {
        node.grad = Tensor<T>();
    }
    if (nodes_[loss.id()].requires_grad) {
        grad(loss.id())[0] = T(1);
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            auto& node = nodes_[i];
            if (node.requires_grad && node.backward && !node.grad.empty()) {
                node.backward(*this, i);
            }
        }
    }
    GradientMap<T> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& node = nodes_[i];
        if (node.name.empty() || !node.requires_grad) {
            continue;
        }
        out[node.name] = node.grad.empty() ? Tensor<T>::zeros(node.value.shape()) : node.grad;
    }
    return out;
}

template <typename T>
std::vector<std::string> Tape<T>::leaf_names() const {
    std::vector<std::string> names;
    for (const auto& node : nodes_) {
        if (!node.name.empty()) {
            names.push_back(node.name);
        }
    }
    return names;
}

// ---- helpers ----------------------------------------------------------------

namespace {

template <typename T>
void require_same_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
}

template <typename T>
void require_matrix(const char* op, const Var<T>& a) {
    if (a.value().rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got shape " + shape_str(a.shape()));
    }
}

// grad(id) += scale * src, elementwise, if the node wants a gradient.
template <typename T>
void accumulate(Tape<T>& tape, std::size_t id, const Tensor<T>& src, T factor = T(1)) {
    if (!tape.requires_grad(id)) {
        return;
    }
    auto& g = tape.grad(id);
    for (std::size_t i = 0; i < g.size(); ++i) {
        g[i] += factor * src[i];
    }
}

// c[m,n] += a[m,k] * b[k,n], plain loops in i-k-j order.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

// c[m,n] += a[m,k] * b[n,k]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc = T(0);
            for (std::size_t p = 0; p < k; ++p) {
                acc += arow[p] * brow[p];
            }
            c[i * n + j] += acc;
        }
    }
}

// c[k,n] += a[m,k]^T * b[m,n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = a[i * k + p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += av * brow[j];
            }
        }
    }
}

template <typename T>
void softmax_rows(const T* x, T* y, std::size_t rows, std::size_t n, bool causal) {
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t live = causal ? std::min(n, r + 1) : n;
        const T* xr = x + r * n;
        T* yr = y + r * n;
        T peak = xr[0];
        for (std::size_t j = 1; j < live; ++j) {
            peak = std::max(peak, xr[j]);
        }
        T total = T(0);
        for (std::size_t j = 0; j < live; ++j) {
            yr[j] = std::exp(xr[j] - peak);
            total += yr[j];
        }
        for (std::size_t j = 0; j < live; ++j) {
            yr[j] /= total;
        }
        for (std::size_t j = live; j < n; ++j) {
            yr[j] = T(0);
        }
    }
}

}  // namespace

// ---- elementwise ------------------------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    require_same_shape("add", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        accumulate(t, ia, g);
        accumulate(t, ib, g);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    require_same_shape("sub", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        accumulate(t, ia, g);
        accumulate(t, ib, g, T(-1));
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    require_same_shape("mul", a, b);
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& av = t.value(ia);
        const auto& bv = t.value(ib);
        if (t.requires_grad(ia)) {
            auto& ga = t.grad(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
    Tensor<T> out = a.value();
    for (auto& v : out.data()) {
        v *= factor;
    }
    const auto ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, factor](Tape<T>& t, std::size_t self) {
        accumulate(t, ia, t.grad(self), factor);
    });
}

template <typename T>
Var<T> add_row(Var<T> a, Var<T> b) {
    const std::size_t n = a.cols();
    if (b.value().size() != n) {
        throw ShapeError("add_row: bias shape " + shape_str(b.shape()) + " does not fit " +
                         shape_str(a.shape()));
    }
    Tensor<T> out = a.value();
    const auto& bv = b.value();
    const std::size_t m = out.size() / n;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < n; ++j) {
            out[r * n + j] += bv[j];
        }
    }
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        accumulate(t, ia, g);
        if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t r = 0; r < m; ++r) {
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
            }
        }
    });
}

// ---- matrix products --------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
    require_matrix("matmul", a);
    require_matrix("matmul", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    }
    Tensor<T> out({m, n});
    gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        const T* g = t.grad(self).data().data();
        if (t.requires_grad(ia)) {
            gemm_nt(g, t.value(ib).data().data(), t.grad(ia).data().data(), m, n, k);
        }
        if (t.requires_grad(ib)) {
            gemm_tn(t.value(ia).data().data(), g, t.grad(ib).data().data(), m, k, n);
        }
    });
}

template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
    require_matrix("matmul_nt", a);
    require_matrix("matmul_nt", b);
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    if (b.cols() != k) {
        throw ShapeError("matmul_nt: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
    }
    Tensor<T> out({m, n});
    gemm_nt(a.value().data().data(), b.value().data().data(), out.data().data(), m, k, n);
    const auto ia = a.id(), ib = b.id();
    return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape<T>& t, std::size_t self) {
        const T* g = t.grad(self).data().data();
        if (t.requires_grad(ia)) {
            gemm_nn(g, t.value(ib).data().data(), t.grad(ia).data().data(), m, n, k);
        }
        if (t.requires_grad(ib)) {
            gemm_tn(g, t.value(ia).data().data(), t.grad(ib).data().data(), m, n, k);
        }
    });
}

template <typename T>
Var<T> transpose(Var<T> a) {
    require_matrix("transpose", a);
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out({n, m});
    const auto& av = a.value();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
    }
    const auto ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
        }
    });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight) {
    return matmul_nt(x, weight);
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    return add_row(matmul_nt(x, weight), bias);
}

// ---- reductions -------------------------------------------------------------

template <typename T>
Var<T> sum(Var<T> a) {
    T total = T(0);
    for (auto v : a.value().data()) total += v;
    const auto ia = a.id();
    return a.tape().record(Tensor<T>::scalar(total), {a}, [ia](Tape<T>& t, std::size_t self) {
        const T g = t.grad(self)[0];
        for (auto& v : t.grad(ia).data()) v += g;
    });
}

template <typename T>
Var<T> mean(Var<T> a) {
    return scale(sum(a), T(1) / static_cast<T>(a.value().size()));
}

// ---- structural -------------------------------------------------------------

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_rows: nothing to concatenate");
    }
    const std::size_t n = parts.front().cols();
    std::size_t total_rows = 0;
    for (const auto& p : parts) {
        require_matrix("concat_rows", p);
        if (p.cols() != n) {
            throw ShapeError("concat_rows: column mismatch " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total_rows += p.rows();
    }
    Tensor<T> out({total_rows, n});
    std::vector<std::size_t> ids;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const auto src = p.value().data();
        std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
        offset += src.size();
        ids.push_back(p.id());
    }
    return parts.front().tape().record(std::move(out), parts, [ids](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        std::size_t off = 0;
        for (auto id : ids) {
            const std::size_t len = t.value(id).size();
            if (t.requires_grad(id)) {
                auto& gi = t.grad(id);
                for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
            }
            off += len;
        }
    });
}

template <typename T>
Var<T> slice_rows(Var<T> a, std::size_t start, std::size_t count) {
    require_matrix("slice_rows", a);
    if (count == 0 || start + count > a.rows()) {
        throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + shape_str(a.shape()));
    }
    const std::size_t n = a.cols();
    const auto src = a.value().data().subspan(start * n, count * n);
    Tensor<T> out({count, n}, std::vector<T>(src.begin(), src.end()));
    const auto ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, start, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[start * n + i] += g[i];
    });
}

template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
    if (parts.empty()) {
        throw ShapeError("concat_cols: nothing to concatenate");
    }
    const std::size_t m = parts.front().rows();
    std::size_t total_cols = 0;
    std::vector<std::size_t> ids, widths;
    for (const auto& p : parts) {
        require_matrix("concat_cols", p);
        if (p.rows() != m) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(parts.front().shape()) +
                             " vs " + shape_str(p.shape()));
        }
        total_cols += p.cols();
        ids.push_back(p.id());
        widths.push_back(p.cols());
    }
    Tensor<T> out({m, total_cols});
    std::size_t col = 0;
    for (const auto& p : parts) {
        const auto& v = p.value();
        for (std::size_t r = 0; r < m; ++r) {
            std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(col));
        }
        col += p.cols();
    }
    return parts.front().tape().record(
        std::move(out), parts, [ids, widths, m, total_cols](Tape<T>& t, std::size_t self) {
            const auto& g = t.grad(self);
            std::size_t c0 = 0;
            for (std::size_t k = 0; k < ids.size(); ++k) {
                if (t.requires_grad(ids[k])) {
                    auto& gi = t.grad(ids[k]);
                    for (std::size_t r = 0; r < m; ++r) {
                        for (std::size_t j = 0; j < widths[k]; ++j) {
                            gi[r * widths[k] + j] += g[r * total_cols + c0 + j];
                        }
                    }
                }
                c0 += widths[k];
            }
        });
}

template <typename T>
Var<T> slice_cols(Var<T> a, std::size_t start, std::size_t count) {
    require_matrix("slice_cols", a);
    if (count == 0 || start + count > a.cols()) {
        throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") out of range for " + shape_str(a.shape()));
    }
    const std::size_t m = a.rows(), n = a.cols();
    Tensor<T> out({m, count});
    const auto& av = a.value();
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t j = 0; j < count; ++j) out[r * count + j] = av[r * n + start + j];
    }
    const auto ia = a.id();
    return a.tape().record(std::move(out), {a}, [ia, start, count, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& ga = t.grad(ia);
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < count; ++j) ga[r * n + start + j] += g[r * count + j];
        }
    });
}

template <typename T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
    require_matrix("embedding", table);
    if (ids.empty()) {
        throw ShapeError("embedding: empty id list");
    }
    const std::size_t vocab = table.rows(), d = table.cols();
    Tensor<T> out({ids.size(), d});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
            throw ShapeError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                             std::to_string(vocab) + " rows");
        }
        const auto src = table.value().row(static_cast<std::size_t>(ids[i]));
        std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    const auto it = table.id();
    return table.tape().record(std::move(out), {table}, [it, ids, d](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        auto& gt = t.grad(it);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const std::size_t base = static_cast<std::size_t>(ids[i]) * d;
            for (std::size_t j = 0; j < d; ++j) gt[base + j] += g[i * d + j];
        }
    });
}

// ---- nonlinearities ---------------------------------------------------------

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta) {
    const std::size_t n = x.cols();
    if (gamma.value().size() != n || beta.value().size() != n) {
        throw ShapeError("layer_norm: gain/shift size does not match " + shape_str(x.shape()));
    }
    const std::size_t m = x.value().size() / n;
    auto xhat = std::make_shared<std::vector<T>>(x.value().size());
    auto inv_std = std::make_shared<std::vector<T>>(m);
    Tensor<T> out(x.shape());
    const auto& xv = x.value();
    const auto& gv = gamma.value();
    const auto& bv = beta.value();
    for (std::size_t r = 0; r < m; ++r) {
        T mu = T(0);
        for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
        mu /= static_cast<T>(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            const T d = xv[r * n + j] - mu;
            var += d * d;
        }
        var /= static_cast<T>(n);
        const T is = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
        (*inv_std)[r] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const T h = (xv[r * n + j] - mu) * is;
            (*xhat)[r * n + j] = h;
            out[r * n + j] = gv[j] * h + bv[j];
        }
    }
    const auto ix = x.id(), ig = gamma.id(), ib = beta.id();
    return x.tape().record(std::move(out), {x, gamma, beta},
                           [ix, ig, ib, m, n, xhat, inv_std](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig)) {
            auto& gg = t.grad(ig);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < n; ++j) gg[j] += g[r * n + j] * (*xhat)[r * n + j];
        }
        if (t.requires_grad(ib)) {
            auto& gb = t.grad(ib);
            for (std::size_t r = 0; r < m; ++r)
                for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
        if (t.requires_grad(ix)) {
            auto& gx = t.grad(ix);
            for (std::size_t r = 0; r < m; ++r) {
                T mean_d = T(0), mean_dh = T(0);
                for (std::size_t j = 0; j < n; ++j) {
                    const T d = g[r * n + j] * gv[j];
                    mean_d += d;
                    mean_dh += d * (*xhat)[r * n + j];
                }
                mean_d /= static_cast<T>(n);
                mean_dh /= static_cast<T>(n);
                for (std::size_t j = 0; j < n; ++j) {
                    const T d = g[r * n + j] * gv[j];
                    gx[r * n + j] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + j] * mean_dh);
                }
            }
        }
    });
}

template <typename T>
Var<T> gelu(Var<T> x) {
    Tensor<T> out(x.shape());
    const auto& xv = x.value();
    const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = T(0.5) * xv[i] * (T(1) + std::erf(xv[i] * inv_sqrt2));
    }
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, inv_sqrt2](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& xv = t.value(ix);
        auto& gx = t.grad(ix);
        const T inv_sqrt_2pi = static_cast<T>(1.0 / std::sqrt(2.0 * std::numbers::pi));
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T cdf = T(0.5) * (T(1) + std::erf(xv[i] * inv_sqrt2));
            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * xv[i] * xv[i]);
            gx[i] += g[i] * (cdf + xv[i] * pdf);
        }
    });
}

template <typename T>
Var<T> softmax(Var<T> x, bool causal) {
    const std::size_t n = x.cols();
    if (n == 0 || x.value().empty()) {
        throw ShapeError("softmax: empty axis");
    }
    const std::size_t m = x.value().size() / n;
    if (causal && m != n) {
        throw ShapeError("softmax: causal mask needs a square input, got " + shape_str(x.shape()));
    }
    Tensor<T> out(x.shape());
    softmax_rows(x.value().data().data(), out.data().data(), m, n, causal);
    const auto ix = x.id();
    return x.tape().record(std::move(out), {x}, [ix, m, n](Tape<T>& t, std::size_t self) {
        const auto& g = t.grad(self);
        const auto& y = t.value(self);
        auto& gx = t.grad(ix);
        for (std::size_t r = 0; r < m; ++r) {
            T dot = T(0);
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
        }
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, int ignore_id) {
    require_matrix("cross_entropy", logits);
    const std::size_t rows = logits.rows(), vocab = logits.cols();
    if (targets.size() != rows) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " rows");
    }
    auto probs = std::make_shared<Tensor<T>>(logits.shape());
    softmax_rows(logits.value().data().data(), probs->data().data(), rows, vocab, false);
    std::size_t supervised = 0;
    T total = T(0);
    for (std::size_t r = 0; r < rows; ++r) {
        const int target = targets[r];
        if (target == ignore_id) {
            continue;
        }
        if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
            throw ShapeError("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                             std::to_string(vocab) + ")");
        }
        // log-sum-exp form keeps -log p finite for extreme logits
        const auto row = logits.value().row(r);
        T peak = row[0];
        for (auto v : row) peak = std::max(peak, v);
        T z = T(0);
        for (auto v : row) z += std::exp(v - peak);
        total += std::log(z) + peak - row[static_cast<std::size_t>(target)];
        ++supervised;
    }
    if (supervised == 0) {
        throw ValidationError("cross_entropy: no supervised positions");
    }
    const T inv = T(1) / static_cast<T>(supervised);
    const auto il = logits.id();
    return logits.tape().record(
        Tensor<T>::scalar(total * inv), {logits},
        [il, probs, targets, ignore_id, inv, rows, vocab](Tape<T>& t, std::size_t self) {
            const T g = t.grad(self)[0] * inv;
            auto& gl = t.grad(il);
            for (std::size_t r = 0; r < rows; ++r) {
                if (targets[r] == ignore_id) continue;
                for (std::size_t j = 0; j < vocab; ++j) gl[r * vocab + j] += g * (*probs)[r * vocab + j];
                gl[r * vocab + static_cast<std::size_t>(targets[r])] -= g;
            }
        });
}

// ---- detached helpers -------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
    }
    Tensor<T> out({a.rows(), b.cols()});
    gemm_nn(a.data().data(), b.data().data(), out.data().data(), a.rows(), a.cols(), b.cols());
    return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
    if (x.empty() || x.cols() == 0) {
        throw ShapeError("softmax: empty axis");
    }
    Tensor<T> out(x.shape());
    softmax_rows(x.data().data(), out.data().data(), x.size() / x.cols(), x.cols(), false);
    return out;
}

// ---- instantiations ---------------------------------------------------------

#define MGIMM_INSTANTIATE_AUTOGRAD(T)                                                     \
    template class Tape<T>;                                                               \
    template Var<T> add(Var<T>, Var<T>);                                                  \
    template Var<T> sub(Var<T>, Var<T>);                                                  \
    template Var<T> mul(Var<T>, Var<T>);                                                  \
    template Var<T> scale(Var<T>, T);                                                     \
    template Var<T> add_row(Var<T>, Var<T>);                                              \
    template Var<T> matmul(Var<T>, Var<T>);                                               \
    template Var<T> matmul_nt(Var<T>, Var<T>);                                            \
    template Var<T> transpose(Var<T>);                                                    \
    template Var<T> linear(Var<T>, Var<T>);                                               \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                       \
    template Var<T> sum(Var<T>);                                                          \
    template Var<T> mean(Var<T>);                                                         \
    template Var<T> concat_rows(const std::vector<Var<T>>&);                              \
    template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                         \
    template Var<T> concat_cols(const std::vector<Var<T>>&);                              \
    template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                         \
    template Var<T> embedding(Var<T>, const std::vector<int>&);                           \
    template Var<T> layer_norm(Var<T>, Var<T>, Var<T>);                                   \
    template Var<T> gelu(Var<T>);                                                         \
    template Var<T> softmax(Var<T>, bool);                                                \
    template Var<T> cross_entropy(Var<T>, const std::vector<int>&, int);                  \
    template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                        \
    template Tensor<T> softmax(const Tensor<T>&);

MGIMM_INSTANTIATE_AUTOGRAD(float)
MGIMM_INSTANTIATE_AUTOGRAD(double)

#undef MGIMM_INSTANTIATE_AUTOGRAD

}  // namespace mgimm
