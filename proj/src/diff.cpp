#include "tfn/diff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace tfn::diff {

namespace {

ValuePtr make_node(int rows, int cols, const char* op, std::vector<ValuePtr> parents) {
    auto v = std::make_shared<Value>();
    v->x = Mat(rows, cols);
    v->op = op;
    for (const auto& p : parents)
        if (p->needs_grad) v->needs_grad = true;
    v->parents = std::move(parents);
    if (v->needs_grad) v->g = Mat(rows, cols);
    return v;
}

void check_same_shape(const ValuePtr& a, const ValuePtr& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

ValuePtr constant(Mat m) {
    auto v = std::make_shared<Value>();
    v->x = std::move(m);
    v->op = "const";
    return v;
}

ValuePtr param(Mat m) {
    auto v = std::make_shared<Value>();
    v->g = Mat(m.rows, m.cols);
    v->x = std::move(m);
    v->needs_grad = true;
    v->op = "param";
    return v;
}

ValuePtr add(const ValuePtr& a, const ValuePtr& b) {
    check_same_shape(a, b, "add");
    auto out = make_node(a->rows(), a->cols(), "add", {a, b});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = a->x.a[i] + b->x.a[i];
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->needs_grad)
                for (int i = 0; i < o->size(); ++i) pa->g.a[i] += o->g.a[i];
            if (pb->needs_grad)
                for (int i = 0; i < o->size(); ++i) pb->g.a[i] += o->g.a[i];
        };
    }
    return out;
}

ValuePtr sub(const ValuePtr& a, const ValuePtr& b) {
    check_same_shape(a, b, "sub");
    auto out = make_node(a->rows(), a->cols(), "sub", {a, b});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = a->x.a[i] - b->x.a[i];
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->needs_grad)
                for (int i = 0; i < o->size(); ++i) pa->g.a[i] += o->g.a[i];
            if (pb->needs_grad)
                for (int i = 0; i < o->size(); ++i) pb->g.a[i] -= o->g.a[i];
        };
    }
    return out;
}

ValuePtr mul(const ValuePtr& a, const ValuePtr& b) {
    check_same_shape(a, b, "mul");
    auto out = make_node(a->rows(), a->cols(), "mul", {a, b});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = a->x.a[i] * b->x.a[i];
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->needs_grad)
                for (int i = 0; i < o->size(); ++i) pa->g.a[i] += o->g.a[i] * pb->x.a[i];
            if (pb->needs_grad)
                for (int i = 0; i < o->size(); ++i) pb->g.a[i] += o->g.a[i] * pa->x.a[i];
        };
    }
    return out;
}

ValuePtr scale(const ValuePtr& a, double c) {
    auto out = make_node(a->rows(), a->cols(), "scale", {a});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = a->x.a[i] * c;
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, c] {
            for (int i = 0; i < o->size(); ++i) pa->g.a[i] += o->g.a[i] * c;
        };
    }
    return out;
}

ValuePtr matmul(const ValuePtr& a, const ValuePtr& b) {
    if (a->cols() != b->rows()) throw std::invalid_argument("matmul: inner dims differ");
    const int m = a->rows(), k = a->cols(), n = b->cols();
    auto out = make_node(m, n, "matmul", {a, b});
    // ikj order, row-major friendly
    for (int i = 0; i < m; ++i) {
        double* orow = out->x.row_ptr(i);
        const double* arow = a->x.row_ptr(i);
        for (int kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b->x.row_ptr(kk);
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb, m, k, n] {
            if (pa->needs_grad) {
                // dA = dO * B^T
                for (int i = 0; i < m; ++i) {
                    const double* grow = o->g.row_ptr(i);
                    double* arow = pa->g.row_ptr(i);
                    for (int kk = 0; kk < k; ++kk) {
                        const double* brow = pb->x.row_ptr(kk);
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        arow[kk] += acc;
                    }
                }
            }
            if (pb->needs_grad) {
                // dB = A^T * dO
                for (int i = 0; i < m; ++i) {
                    const double* arow = pa->x.row_ptr(i);
                    const double* grow = o->g.row_ptr(i);
                    for (int kk = 0; kk < k; ++kk) {
                        const double av = arow[kk];
                        if (av == 0.0) continue;
                        double* brow = pb->g.row_ptr(kk);
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return out;
}

ValuePtr transpose(const ValuePtr& a) {
    auto out = make_node(a->cols(), a->rows(), "transpose", {a});
    for (int i = 0; i < a->rows(); ++i)
        for (int j = 0; j < a->cols(); ++j) out->x(j, i) = a->x(i, j);
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int i = 0; i < pa->rows(); ++i)
                for (int j = 0; j < pa->cols(); ++j) pa->g(i, j) += o->g(j, i);
        };
    }
    return out;
}

ValuePtr tanh(const ValuePtr& a) {
    auto out = make_node(a->rows(), a->cols(), "tanh", {a});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = std::tanh(a->x.a[i]);
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int i = 0; i < o->size(); ++i)
                pa->g.a[i] += o->g.a[i] * (1.0 - o->x.a[i] * o->x.a[i]);
        };
    }
    return out;
}

ValuePtr sigmoid(const ValuePtr& a) {
    auto out = make_node(a->rows(), a->cols(), "sigmoid", {a});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = 1.0 / (1.0 + std::exp(-a->x.a[i]));
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int i = 0; i < o->size(); ++i) {
                const double s = o->x.a[i];
                pa->g.a[i] += o->g.a[i] * s * (1.0 - s);
            }
        };
    }
    return out;
}

ValuePtr exp(const ValuePtr& a) {
    auto out = make_node(a->rows(), a->cols(), "exp", {a});
    for (int i = 0; i < out->size(); ++i) out->x.a[i] = std::exp(a->x.a[i]);
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            for (int i = 0; i < o->size(); ++i) pa->g.a[i] += o->g.a[i] * o->x.a[i];
        };
    }
    return out;
}

ValuePtr add_rowvec(const ValuePtr& m, const ValuePtr& v) {
    if (v->rows() != 1 || v->cols() != m->cols())
        throw std::invalid_argument("add_rowvec: v must be 1 x cols(m)");
    auto out = make_node(m->rows(), m->cols(), "add_rowvec", {m, v});
    for (int i = 0; i < m->rows(); ++i)
        for (int j = 0; j < m->cols(); ++j) out->x(i, j) = m->x(i, j) + v->x(0, j);
    if (out->needs_grad) {
        Value *o = out.get(), *pm = m.get(), *pv = v.get();
        out->backprop = [o, pm, pv] {
            if (pm->needs_grad)
                for (int i = 0; i < o->size(); ++i) pm->g.a[i] += o->g.a[i];
            if (pv->needs_grad)
                for (int i = 0; i < o->rows(); ++i)
                    for (int j = 0; j < o->cols(); ++j) pv->g(0, j) += o->g(i, j);
        };
    }
    return out;
}

ValuePtr concat_rows(const ValuePtr& a, const ValuePtr& b) {
    if (a->cols() != b->cols()) throw std::invalid_argument("concat_rows: cols differ");
    auto out = make_node(a->rows() + b->rows(), a->cols(), "concat_rows", {a, b});
    std::copy(a->x.a.begin(), a->x.a.end(), out->x.a.begin());
    std::copy(b->x.a.begin(), b->x.a.end(), out->x.a.begin() + a->x.size());
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            if (pa->needs_grad)
                for (int i = 0; i < pa->size(); ++i) pa->g.a[i] += o->g.a[i];
            if (pb->needs_grad)
                for (int i = 0; i < pb->size(); ++i) pb->g.a[i] += o->g.a[i + pa->size()];
        };
    }
    return out;
}

ValuePtr concat_cols(const ValuePtr& a, const ValuePtr& b) {
    if (a->rows() != b->rows()) throw std::invalid_argument("concat_cols: rows differ");
    auto out = make_node(a->rows(), a->cols() + b->cols(), "concat_cols", {a, b});
    for (int i = 0; i < a->rows(); ++i) {
        std::copy(a->x.row_ptr(i), a->x.row_ptr(i) + a->cols(), out->x.row_ptr(i));
        std::copy(b->x.row_ptr(i), b->x.row_ptr(i) + b->cols(), out->x.row_ptr(i) + a->cols());
    }
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pb = b.get();
        out->backprop = [o, pa, pb] {
            for (int i = 0; i < o->rows(); ++i) {
                if (pa->needs_grad)
                    for (int j = 0; j < pa->cols(); ++j) pa->g(i, j) += o->g(i, j);
                if (pb->needs_grad)
                    for (int j = 0; j < pb->cols(); ++j) pb->g(i, j) += o->g(i, j + pa->cols());
            }
        };
    }
    return out;
}

ValuePtr vstack(const std::vector<ValuePtr>& rows) {
    if (rows.empty()) throw std::invalid_argument("vstack: empty input");
    const int c = rows[0]->cols();
    int r = 0;
    for (const auto& v : rows) {
        if (v->cols() != c) throw std::invalid_argument("vstack: cols differ");
        r += v->rows();
    }
    auto out = make_node(r, c, "vstack", rows);
    int at = 0;
    for (const auto& v : rows) {
        std::copy(v->x.a.begin(), v->x.a.end(), out->x.a.begin() + static_cast<size_t>(at) * c);
        at += v->rows();
    }
    if (out->needs_grad) {
        Value* o = out.get();
        std::vector<Value*> ps;
        ps.reserve(rows.size());
        for (const auto& v : rows) ps.push_back(v.get());
        out->backprop = [o, ps, c] {
            int off = 0;
            for (Value* p : ps) {
                if (p->needs_grad)
                    for (int i = 0; i < p->size(); ++i) p->g.a[i] += o->g.a[off + i];
                off += p->rows() * c;
            }
        };
    }
    return out;
}

ValuePtr slice_cols(const ValuePtr& a, int first, int count) {
    if (first < 0 || count <= 0 || first + count > a->cols())
        throw std::invalid_argument("slice_cols: range out of bounds");
    auto out = make_node(a->rows(), count, "slice_cols", {a});
    for (int i = 0; i < a->rows(); ++i)
        std::copy(a->x.row_ptr(i) + first, a->x.row_ptr(i) + first + count, out->x.row_ptr(i));
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, first, count] {
            for (int i = 0; i < o->rows(); ++i)
                for (int j = 0; j < count; ++j) pa->g(i, first + j) += o->g(i, j);
        };
    }
    return out;
}

ValuePtr row(const ValuePtr& a, int r) {
    if (r < 0 || r >= a->rows()) throw std::invalid_argument("row: index out of range");
    auto out = make_node(1, a->cols(), "row", {a});
    std::copy(a->x.row_ptr(r), a->x.row_ptr(r) + a->cols(), out->x.row_ptr(0));
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa, r] {
            for (int j = 0; j < o->cols(); ++j) pa->g(r, j) += o->g(0, j);
        };
    }
    return out;
}

ValuePtr sum_all(const ValuePtr& a) {
    auto out = make_node(1, 1, "sum", {a});
    double acc = 0.0;
    for (int i = 0; i < a->size(); ++i) acc += a->x.a[i];
    out->x(0, 0) = acc;
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get();
        out->backprop = [o, pa] {
            const double gv = o->g(0, 0);
            for (int i = 0; i < pa->size(); ++i) pa->g.a[i] += gv;
        };
    }
    return out;
}

ValuePtr softmax_rows(const ValuePtr& scores, const Mat& admissible) {
    if (admissible.rows != scores->rows() || admissible.cols != scores->cols())
        throw std::invalid_argument("softmax_rows: mask shape mismatch");
    auto out = make_node(scores->rows(), scores->cols(), "softmax", {scores});
    const int n = scores->cols();
    for (int i = 0; i < scores->rows(); ++i) {
        const double* s = scores->x.row_ptr(i);
        const double* m = admissible.row_ptr(i);
        double* p = out->x.row_ptr(i);
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < n; ++j)
            if (m[j] != 0.0 && s[j] > mx) mx = s[j];
        if (mx == -std::numeric_limits<double>::infinity())
            throw std::invalid_argument("empty attention support");
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            p[j] = m[j] != 0.0 ? std::exp(s[j] - mx) : 0.0;
            z += p[j];
        }
        for (int j = 0; j < n; ++j) p[j] /= z;
    }
    if (out->needs_grad) {
        Value *o = out.get(), *pa = scores.get();
        out->backprop = [o, pa, n] {
            // ds_j = p_j * (dp_j - sum_k p_k dp_k); masked-out entries have p=0
            for (int i = 0; i < o->rows(); ++i) {
                const double* p = o->x.row_ptr(i);
                const double* gp = o->g.row_ptr(i);
                double* gs = pa->g.row_ptr(i);
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += p[j] * gp[j];
                for (int j = 0; j < n; ++j) gs[j] += p[j] * (gp[j] - dot);
            }
        };
    }
    return out;
}

ValuePtr layer_norm_rows(const ValuePtr& a, const ValuePtr& gain, const ValuePtr& bias,
                         double eps) {
    const int n = a->cols();
    if (gain->rows() != 1 || gain->cols() != n || bias->rows() != 1 || bias->cols() != n)
        throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols");
    auto out = make_node(a->rows(), n, "layer_norm", {a, gain, bias});
    Mat xhat(a->rows(), n);   // normalized pre-gain values, reused in backward
    Mat inv_sd(a->rows(), 1);
    for (int i = 0; i < a->rows(); ++i) {
        const double* xr = a->x.row_ptr(i);
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
        var /= n;
        const double isd = 1.0 / std::sqrt(var + eps);
        inv_sd(i, 0) = isd;
        for (int j = 0; j < n; ++j) {
            xhat(i, j) = (xr[j] - mean) * isd;
            out->x(i, j) = gain->x(0, j) * xhat(i, j) + bias->x(0, j);
        }
    }
    if (out->needs_grad) {
        Value *o = out.get(), *pa = a.get(), *pg = gain.get(), *pb = bias.get();
        auto xh = std::make_shared<Mat>(std::move(xhat));
        auto isdv = std::make_shared<Mat>(std::move(inv_sd));
        out->backprop = [o, pa, pg, pb, xh, isdv, n] {
            for (int i = 0; i < o->rows(); ++i) {
                const double* go = o->g.row_ptr(i);
                const double* xhr = xh->row_ptr(i);
                if (pg->needs_grad)
                    for (int j = 0; j < n; ++j) pg->g(0, j) += go[j] * xhr[j];
                if (pb->needs_grad)
                    for (int j = 0; j < n; ++j) pb->g(0, j) += go[j];
                if (pa->needs_grad) {
                    // dxhat = g * gain; dx = isd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double dxh = go[j] * pg->x(0, j);
                        s1 += dxh;
                        s2 += dxh * xhr[j];
                    }
                    s1 /= n;
                    s2 /= n;
                    const double isd = (*isdv)(i, 0);
                    double* ga = pa->g.row_ptr(i);
                    for (int j = 0; j < n; ++j) {
                        const double dxh = go[j] * pg->x(0, j);
                        ga[j] += isd * (dxh - s1 - xhr[j] * s2);
                    }
                }
            }
        };
    }
    return out;
}

void backward(const ValuePtr& loss) {
    if (loss->size() != 1) throw std::invalid_argument("backward: loss must be 1x1");
    if (!loss->needs_grad) return;

    // iterative post-order DFS for topological order
    std::vector<Value*> order;
    std::unordered_set<Value*> visited;
    std::vector<std::pair<Value*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Value* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->g(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop();
}

std::vector<double> softmax_stable(std::span<const double> v, std::span<const double> mask) {
    if (!mask.empty() && mask.size() != v.size())
        throw std::invalid_argument("softmax_stable: mask length mismatch");
    const size_t n = v.size();
    for (const double x : v)
        if (!std::isfinite(x)) throw std::invalid_argument("softmax_stable: non-finite input");
    double mx = -std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < n; ++i) {
        const bool adm = mask.empty() || mask[i] != 0.0;
        if (adm && v[i] > mx) mx = v[i];
    }
    if (mx == -std::numeric_limits<double>::infinity())
        throw std::invalid_argument("empty attention support");
    std::vector<double> p(n, 0.0);
    double z = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const bool adm = mask.empty() || mask[i] != 0.0;
        if (adm) {
            p[i] = std::exp(v[i] - mx);
            z += p[i];
        }
    }
    for (size_t i = 0; i < n; ++i) p[i] /= z;
    return p;
}

}  // namespace tfn::diff
