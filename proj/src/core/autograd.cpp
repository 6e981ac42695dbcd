#include "vseg/core/autograd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace vseg {

namespace {

std::atomic<std::int64_t> g_node_counter{0};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make_node(Tensor value, std::vector<Var> parents, std::function<void(AgNode&)> fn) {
    auto n = std::make_shared<AgNode>();
    n->value = std::move(value);
    n->id = ++g_node_counter;
    bool needs = false;
    for (const auto& p : parents)
        if (p && p->requires_grad) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(fn);
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    a->value.shape_str() + " vs " + b->value.shape_str());
}

}  // namespace

void AgNode::accumulate(const Tensor& g) {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    for (std::int64_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

Tensor& AgNode::ensure_grad() {
    if (grad.empty()) grad = Tensor::zeros(value.shape());
    return grad;
}

Var make_leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<AgNode>();
    n->value = std::move(value);
    n->id = ++g_node_counter;
    n->requires_grad = requires_grad;
    return n;
}

Var make_constant(Tensor value) { return make_leaf(std::move(value), false); }

void backward(const Var& loss) {
    if (loss->value.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar");
    // Collect reachable subgraph, run closures in descending creation order.
    std::vector<AgNode*> order;
    std::unordered_set<AgNode*> seen;
    std::vector<AgNode*> stack{loss.get()};
    seen.insert(loss.get());
    while (!stack.empty()) {
        AgNode* n = stack.back();
        stack.pop_back();
        order.push_back(n);
        for (const auto& p : n->parents)
            if (p && p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const AgNode* a, const AgNode* b) { return a->id > b->id; });
    loss->ensure_grad();
    loss->grad[0] += 1.0;
    for (AgNode* n : order)
        if (n->backprop && !n->grad.empty()) n->backprop(*n);
}

void zero_grad(const std::vector<Var>& params) {
    for (const auto& p : params)
        if (!p->grad.empty()) p->grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_node(std::move(out), {a, b}, [](AgNode& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, [](AgNode& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] = -g[i];
            n.parents[1]->accumulate(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [](AgNode& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor g = n.grad;
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= bv[i];
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= av[i];
            n.parents[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= s;
    return make_node(std::move(out), {a}, [s](AgNode& n) {
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= s;
        n.parents[0]->accumulate(g);
    });
}

Var silu(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-out[i]));
        out[i] *= s;
    }
    return make_node(std::move(out), {a}, [](AgNode& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.size(); ++i) {
            double s = 1.0 / (1.0 + std::exp(-x[i]));
            g[i] *= s * (1.0 + x[i] * (1.0 - s));
        }
        n.parents[0]->accumulate(g);
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i)
        if (out[i] < 0.0) out[i] *= slope;
    return make_node(std::move(out), {a}, [slope](AgNode& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.size(); ++i)
            if (x[i] < 0.0) g[i] *= slope;
        n.parents[0]->accumulate(g);
    });
}

Var sigmoid_v(const Var& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make_node(std::move(out), {a}, [](AgNode& n) {
        const Tensor& y = n.value;
        Tensor g = n.grad;
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        n.parents[0]->accumulate(g);
    });
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(shape);
    return make_node(std::move(out), {a}, [](AgNode& n) {
        n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
    });
}

// ---------------------------------------------------------------------------
// reductions / losses
// ---------------------------------------------------------------------------

Var sum(const Var& a) {
    double s = 0.0;
    for (std::int64_t i = 0; i < a->value.size(); ++i) s += a->value[i];
    return make_node(Tensor::scalar(s), {a}, [](AgNode& n) {
        Tensor g(n.parents[0]->value.shape(), n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

Var mean(const Var& a) {
    double s = 0.0;
    std::int64_t m = a->value.size();
    for (std::int64_t i = 0; i < m; ++i) s += a->value[i];
    return make_node(Tensor::scalar(s / static_cast<double>(m)), {a}, [m](AgNode& n) {
        Tensor g(n.parents[0]->value.shape(), n.grad[0] / static_cast<double>(m));
        n.parents[0]->accumulate(g);
    });
}

Var mse_loss(const Var& pred, const Var& target) {
    check_same_shape(pred, target, "mse_loss");
    std::int64_t m = pred->value.size();
    double s = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        double d = pred->value[i] - target->value[i];
        s += d * d;
    }
    return make_node(Tensor::scalar(s / static_cast<double>(m)), {pred, target}, [m](AgNode& n) {
        const Tensor& p = n.parents[0]->value;
        const Tensor& t = n.parents[1]->value;
        double c = 2.0 * n.grad[0] / static_cast<double>(m);
        if (n.parents[0]->requires_grad) {
            Tensor g(p.shape());
            for (std::int64_t i = 0; i < m; ++i) g[i] = c * (p[i] - t[i]);
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g(p.shape());
            for (std::int64_t i = 0; i < m; ++i) g[i] = -c * (p[i] - t[i]);
            n.parents[1]->accumulate(g);
        }
    });
}

Var bce_loss(const Var& probs, const Tensor& labels, double clamp_eps) {
    if (!probs->value.same_shape(labels))
        throw std::invalid_argument("bce_loss: probs/labels shape mismatch");
    std::int64_t m = probs->value.size();
    double s = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
        double y = labels[i];
        if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_loss: label outside {0,1}");
        double q = std::clamp(probs->value[i], clamp_eps, 1.0 - clamp_eps);
        s += -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
    }
    Tensor lab = labels;
    return make_node(Tensor::scalar(s / static_cast<double>(m)), {probs},
                     [m, lab, clamp_eps](AgNode& n) {
                         const Tensor& p = n.parents[0]->value;
                         Tensor g(p.shape());
                         double c = n.grad[0] / static_cast<double>(m);
                         for (std::int64_t i = 0; i < m; ++i) {
                             double pv = p[i];
                             if (pv <= clamp_eps || pv >= 1.0 - clamp_eps) {
                                 g[i] = 0.0;  // clamp region: flat
                             } else {
                                 g[i] = c * (-lab[i] / pv + (1.0 - lab[i]) / (1.0 - pv));
                             }
                         }
                         n.parents[0]->accumulate(g);
                     });
}

// ---------------------------------------------------------------------------
// dense layers
// ---------------------------------------------------------------------------

Var linear(const Var& x, const Var& w, const Var& b) {
    const auto& xs = x->value.shape();
    const auto& ws = w->value.shape();
    if (xs.size() != 2 || ws.size() != 2 || xs[1] != ws[1])
        throw std::invalid_argument("linear: bad shapes " + x->value.shape_str() + " x " +
                                    w->value.shape_str());
    int m = xs[0], in = xs[1], out_dim = ws[0];
    if (b && b->value.size() != out_dim) throw std::invalid_argument("linear: bias size");
    Tensor out({m, out_dim});
    {
        CMapMat xm(x->value.data(), m, in);
        CMapMat wm(w->value.data(), out_dim, in);
        MapMat om(out.data(), m, out_dim);
        om.noalias() = xm * wm.transpose();
        if (b)
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < out_dim; ++c) out[static_cast<std::int64_t>(r) * out_dim + c] += b->value[c];
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(out), std::move(parents), [m, in, out_dim](AgNode& n) {
        CMapMat gm(n.grad.data(), m, out_dim);
        const Var& xv = n.parents[0];
        const Var& wv = n.parents[1];
        if (xv->requires_grad) {
            Tensor gx({m, in});
            MapMat gxm(gx.data(), m, in);
            CMapMat wm(wv->value.data(), out_dim, in);
            gxm.noalias() = gm * wm;
            xv->accumulate(gx);
        }
        if (wv->requires_grad) {
            Tensor gw({out_dim, in});
            MapMat gwm(gw.data(), out_dim, in);
            CMapMat xm(xv->value.data(), m, in);
            gwm.noalias() = gm.transpose() * xm;
            wv->accumulate(gw);
        }
        if (n.parents.size() == 3 && n.parents[2]->requires_grad) {
            Tensor gb({out_dim});
            for (int r = 0; r < m; ++r)
                for (int c = 0; c < out_dim; ++c) gb[c] += n.grad[static_cast<std::int64_t>(r) * out_dim + c];
            n.parents[2]->accumulate(gb);
        }
    });
}

Var linear_nobias(const Var& x, const Var& w) { return linear(x, w, nullptr); }

// ---------------------------------------------------------------------------
// conv / image ops
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
    int c, h, w;        // input
    int co, cg, kh, kw; // kernel
    int ho, wo;
    int groups, stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, int stride, int pad, int groups) {
    if (x.ndim() != 3 || k.ndim() != 4) throw std::invalid_argument("conv2d: need [C,H,W] and [Co,Cg,kh,kw]");
    ConvDims d;
    d.c = x.dim(0); d.h = x.dim(1); d.w = x.dim(2);
    d.co = k.dim(0); d.cg = k.dim(1); d.kh = k.dim(2); d.kw = k.dim(3);
    d.groups = groups; d.stride = stride; d.pad = pad;
    if (groups < 1 || d.c % groups != 0 || d.co % groups != 0)
        throw std::invalid_argument("conv2d: channels not divisible by groups");
    if (d.cg != d.c / groups) throw std::invalid_argument("conv2d: kernel channel mismatch");
    d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
    d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
    if (d.ho <= 0 || d.wo <= 0) throw std::invalid_argument("conv2d: empty output");
    return d;
}

// col layout: [cg*kh*kw, ho*wo]
void im2col(const Tensor& x, const ConvDims& d, int group, std::vector<double>& col) {
    const int spatial = d.ho * d.wo;
    col.assign(static_cast<std::size_t>(d.cg) * d.kh * d.kw * spatial, 0.0);
    for (int c = 0; c < d.cg; ++c) {
        const double* xc = x.data() + static_cast<std::int64_t>(group * d.cg + c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                double* dst = col.data() + (static_cast<std::size_t>(c) * d.kh * d.kw + ki * d.kw + kj) * spatial;
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride + ki - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    const double* row = xc + static_cast<std::int64_t>(iy) * d.w;
                    double* drow = dst + static_cast<std::int64_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride + kj - d.pad;
                        if (ix >= 0 && ix < d.w) drow[ox] = row[ix];
                    }
                }
            }
        }
    }
}

void col2im_add(const std::vector<double>& col, const ConvDims& d, int group, Tensor& gx) {
    const int spatial = d.ho * d.wo;
    for (int c = 0; c < d.cg; ++c) {
        double* xc = gx.data() + static_cast<std::int64_t>(group * d.cg + c) * d.h * d.w;
        for (int ki = 0; ki < d.kh; ++ki) {
            for (int kj = 0; kj < d.kw; ++kj) {
                const double* src = col.data() + (static_cast<std::size_t>(c) * d.kh * d.kw + ki * d.kw + kj) * spatial;
                for (int oy = 0; oy < d.ho; ++oy) {
                    int iy = oy * d.stride + ki - d.pad;
                    if (iy < 0 || iy >= d.h) continue;
                    double* row = xc + static_cast<std::int64_t>(iy) * d.w;
                    const double* srow = src + static_cast<std::int64_t>(oy) * d.wo;
                    for (int ox = 0; ox < d.wo; ++ox) {
                        int ix = ox * d.stride + kj - d.pad;
                        if (ix >= 0 && ix < d.w) row[ix] += srow[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad, int groups) {
    ConvDims d = conv_dims(x->value, w->value, stride, pad, groups);
    if (b && b->value.size() != d.co) throw std::invalid_argument("conv2d: bias size");
    const int cog = d.co / d.groups;
    const int krows = d.cg * d.kh * d.kw;
    const int spatial = d.ho * d.wo;
    Tensor out({d.co, d.ho, d.wo});
    std::vector<double> col;
    for (int g = 0; g < d.groups; ++g) {
        im2col(x->value, d, g, col);
        CMapMat wm(w->value.data() + static_cast<std::int64_t>(g) * cog * krows, cog, krows);
        CMapMat cm(col.data(), krows, spatial);
        MapMat om(out.data() + static_cast<std::int64_t>(g) * cog * spatial, cog, spatial);
        om.noalias() = wm * cm;
    }
    if (b) {
        for (int c = 0; c < d.co; ++c) {
            double bv = b->value[c];
            double* oc = out.data() + static_cast<std::int64_t>(c) * spatial;
            for (int i = 0; i < spatial; ++i) oc[i] += bv;
        }
    }
    std::vector<Var> parents = b ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(out), std::move(parents), [d, cog, krows, spatial](AgNode& n) {
        const Var& xv = n.parents[0];
        const Var& wv = n.parents[1];
        std::vector<double> col, gcol;
        Tensor gx;
        if (xv->requires_grad) gx = Tensor::zeros(xv->value.shape());
        Tensor gw;
        if (wv->requires_grad) gw = Tensor::zeros(wv->value.shape());
        for (int g = 0; g < d.groups; ++g) {
            CMapMat gom(n.grad.data() + static_cast<std::int64_t>(g) * cog * spatial, cog, spatial);
            if (wv->requires_grad) {
                im2col(xv->value, d, g, col);
                CMapMat cm(col.data(), krows, spatial);
                MapMat gwm(gw.data() + static_cast<std::int64_t>(g) * cog * krows, cog, krows);
                gwm.noalias() = gom * cm.transpose();
            }
            if (xv->requires_grad) {
                gcol.assign(static_cast<std::size_t>(krows) * spatial, 0.0);
                CMapMat wm(wv->value.data() + static_cast<std::int64_t>(g) * cog * krows, cog, krows);
                MapMat gcm(gcol.data(), krows, spatial);
                gcm.noalias() = wm.transpose() * gom;
                col2im_add(gcol, d, g, gx);
            }
        }
        if (xv->requires_grad) xv->accumulate(gx);
        if (wv->requires_grad) wv->accumulate(gw);
        if (n.parents.size() == 3 && n.parents[2]->requires_grad) {
            Tensor gb({d.co});
            for (int c = 0; c < d.co; ++c) {
                const double* gc = n.grad.data() + static_cast<std::int64_t>(c) * spatial;
                double s = 0.0;
                for (int i = 0; i < spatial; ++i) s += gc[i];
                gb[c] = s;
            }
            n.parents[2]->accumulate(gb);
        }
    });
}

Var upsample_nearest2(const Var& x) {
    if (x->value.ndim() != 3) throw std::invalid_argument("upsample_nearest2: need [C,H,W]");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Tensor out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
                double v = x->value[(static_cast<std::int64_t>(ch) * h + y) * w + xx];
                std::int64_t base = (static_cast<std::int64_t>(ch) * 2 * h + 2 * y) * 2 * w + 2 * xx;
                out[base] = v;
                out[base + 1] = v;
                out[base + 2 * w] = v;
                out[base + 2 * w + 1] = v;
            }
    return make_node(std::move(out), {x}, [c, h, w](AgNode& n) {
        Tensor g({c, h, w});
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int xx = 0; xx < w; ++xx) {
                    std::int64_t base = (static_cast<std::int64_t>(ch) * 2 * h + 2 * y) * 2 * w + 2 * xx;
                    g[(static_cast<std::int64_t>(ch) * h + y) * w + xx] =
                        n.grad[base] + n.grad[base + 1] + n.grad[base + 2 * w] + n.grad[base + 2 * w + 1];
                }
        n.parents[0]->accumulate(g);
    });
}

Var concat_channels(const Var& a, const Var& b) {
    if (a->value.ndim() != 3 || b->value.ndim() != 3 || a->value.dim(1) != b->value.dim(1) ||
        a->value.dim(2) != b->value.dim(2))
        throw std::invalid_argument("concat_channels: spatial mismatch");
    int ca = a->value.dim(0), cb = b->value.dim(0);
    int h = a->value.dim(1), w = a->value.dim(2);
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out({ca + cb, h, w});
    std::copy(a->value.data(), a->value.data() + ca * plane, out.data());
    std::copy(b->value.data(), b->value.data() + cb * plane, out.data() + ca * plane);
    return make_node(std::move(out), {a, b}, [ca, cb, plane](AgNode& n) {
        if (n.parents[0]->requires_grad) {
            Tensor g(n.parents[0]->value.shape());
            std::copy(n.grad.data(), n.grad.data() + ca * plane, g.data());
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g(n.parents[1]->value.shape());
            std::copy(n.grad.data() + ca * plane, n.grad.data() + (ca + cb) * plane, g.data());
            n.parents[1]->accumulate(g);
        }
    });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
    if (x->value.ndim() != 3) throw std::invalid_argument("group_norm: need [C,H,W]");
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels % groups != 0");
    if (gamma->value.size() != c || beta->value.size() != c)
        throw std::invalid_argument("group_norm: gamma/beta size");
    int cg = c / groups;
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    std::int64_t gsize = cg * plane;
    Tensor out({c, h, w});
    Tensor xhat({c, h, w});
    std::vector<double> inv_sigma(groups);
    for (int g = 0; g < groups; ++g) {
        const double* xg = x->value.data() + g * gsize;
        double mu = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) mu += xg[i];
        mu /= static_cast<double>(gsize);
        double var = 0.0;
        for (std::int64_t i = 0; i < gsize; ++i) {
            double d = xg[i] - mu;
            var += d * d;
        }
        var /= static_cast<double>(gsize);
        double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[g] = is;
        for (std::int64_t i = 0; i < gsize; ++i) xhat[g * gsize + i] = (xg[i] - mu) * is;
    }
    for (int ch = 0; ch < c; ++ch) {
        double gm = gamma->value[ch], bt = beta->value[ch];
        for (std::int64_t i = 0; i < plane; ++i)
            out[ch * plane + i] = gm * xhat[ch * plane + i] + bt;
    }
    return make_node(std::move(out), {x, gamma, beta},
                     [c, groups, cg, plane, gsize, xhat, inv_sigma](AgNode& n) {
                         const Var& xv = n.parents[0];
                         const Var& gv = n.parents[1];
                         const Var& bv = n.parents[2];
                         if (gv->requires_grad) {
                             Tensor gg({c});
                             for (int ch = 0; ch < c; ++ch) {
                                 double s = 0.0;
                                 for (std::int64_t i = 0; i < plane; ++i)
                                     s += n.grad[ch * plane + i] * xhat[ch * plane + i];
                                 gg[ch] = s;
                             }
                             gv->accumulate(gg);
                         }
                         if (bv->requires_grad) {
                             Tensor gb({c});
                             for (int ch = 0; ch < c; ++ch) {
                                 double s = 0.0;
                                 for (std::int64_t i = 0; i < plane; ++i) s += n.grad[ch * plane + i];
                                 gb[ch] = s;
                             }
                             bv->accumulate(gb);
                         }
                         if (xv->requires_grad) {
                             Tensor gx(xv->value.shape());
                             std::vector<double> dxh(static_cast<std::size_t>(gsize));
                             for (int g = 0; g < groups; ++g) {
                                 double m1 = 0.0, m2 = 0.0;
                                 for (int cc = 0; cc < cg; ++cc) {
                                     int ch = g * cg + cc;
                                     double gm = gv->value[ch];
                                     for (std::int64_t i = 0; i < plane; ++i) {
                                         double d = n.grad[ch * plane + i] * gm;
                                         dxh[cc * plane + i] = d;
                                         m1 += d;
                                         m2 += d * xhat[ch * plane + i];
                                     }
                                 }
                                 m1 /= static_cast<double>(gsize);
                                 m2 /= static_cast<double>(gsize);
                                 double is = inv_sigma[g];
                                 for (int cc = 0; cc < cg; ++cc) {
                                     int ch = g * cg + cc;
                                     for (std::int64_t i = 0; i < plane; ++i)
                                         gx[ch * plane + i] =
                                             is * (dxh[cc * plane + i] - m1 - xhat[ch * plane + i] * m2);
                                 }
                             }
                             xv->accumulate(gx);
                         }
                     });
}

Var add_bias_chw(const Var& x, const Var& bias) {
    if (x->value.ndim() != 3 || bias->value.size() != x->value.dim(0))
        throw std::invalid_argument("add_bias_chw: shapes");
    int c = x->value.dim(0);
    std::int64_t plane = static_cast<std::int64_t>(x->value.dim(1)) * x->value.dim(2);
    Tensor out = x->value;
    for (int ch = 0; ch < c; ++ch) {
        double b = bias->value[ch];
        for (std::int64_t i = 0; i < plane; ++i) out[ch * plane + i] += b;
    }
    return make_node(std::move(out), {x, bias}, [c, plane](AgNode& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor gb(n.parents[1]->value.shape());
            for (int ch = 0; ch < c; ++ch) {
                double s = 0.0;
                for (std::int64_t i = 0; i < plane; ++i) s += n.grad[ch * plane + i];
                gb[ch] = s;
            }
            n.parents[1]->accumulate(gb);
        }
    });
}

// ---------------------------------------------------------------------------
// node / graph ops
// ---------------------------------------------------------------------------

Var concat_cols(const Var& a, const Var& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(0) != b->value.dim(0))
        throw std::invalid_argument("concat_cols: row mismatch");
    int m = a->value.dim(0), p = a->value.dim(1), q = b->value.dim(1);
    Tensor out({m, p + q});
    for (int r = 0; r < m; ++r) {
        std::copy(a->value.data() + static_cast<std::int64_t>(r) * p,
                  a->value.data() + static_cast<std::int64_t>(r + 1) * p,
                  out.data() + static_cast<std::int64_t>(r) * (p + q));
        std::copy(b->value.data() + static_cast<std::int64_t>(r) * q,
                  b->value.data() + static_cast<std::int64_t>(r + 1) * q,
                  out.data() + static_cast<std::int64_t>(r) * (p + q) + p);
    }
    return make_node(std::move(out), {a, b}, [m, p, q](AgNode& n) {
        if (n.parents[0]->requires_grad) {
            Tensor g({m, p});
            for (int r = 0; r < m; ++r)
                std::copy(n.grad.data() + static_cast<std::int64_t>(r) * (p + q),
                          n.grad.data() + static_cast<std::int64_t>(r) * (p + q) + p,
                          g.data() + static_cast<std::int64_t>(r) * p);
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g({m, q});
            for (int r = 0; r < m; ++r)
                std::copy(n.grad.data() + static_cast<std::int64_t>(r) * (p + q) + p,
                          n.grad.data() + static_cast<std::int64_t>(r + 1) * (p + q),
                          g.data() + static_cast<std::int64_t>(r) * q);
            n.parents[1]->accumulate(g);
        }
    });
}

Var row_scale(const Var& x, const Tensor& s) {
    if (x->value.ndim() != 2 || s.size() != x->value.dim(0))
        throw std::invalid_argument("row_scale: shapes");
    int m = x->value.dim(0), d = x->value.dim(1);
    Tensor out = x->value;
    for (int r = 0; r < m; ++r)
        for (int c = 0; c < d; ++c) out[static_cast<std::int64_t>(r) * d + c] *= s[r];
    Tensor sv = s;
    return make_node(std::move(out), {x}, [m, d, sv](AgNode& n) {
        Tensor g = n.grad;
        for (int r = 0; r < m; ++r)
            for (int c = 0; c < d; ++c) g[static_cast<std::int64_t>(r) * d + c] *= sv[r];
        n.parents[0]->accumulate(g);
    });
}

Var gather_rows(const Var& x, const std::vector<int>& idx) {
    if (x->value.ndim() != 2) throw std::invalid_argument("gather_rows: need [N,d]");
    int nrows = x->value.dim(0), d = x->value.dim(1);
    int m = static_cast<int>(idx.size());
    Tensor out({m, d});
    for (int r = 0; r < m; ++r) {
        int i = idx[static_cast<std::size_t>(r)];
        if (i < 0 || i >= nrows) throw std::out_of_range("gather_rows: index");
        std::copy(x->value.data() + static_cast<std::int64_t>(i) * d,
                  x->value.data() + static_cast<std::int64_t>(i + 1) * d,
                  out.data() + static_cast<std::int64_t>(r) * d);
    }
    std::vector<int> ix = idx;
    return make_node(std::move(out), {x}, [m, d, ix](AgNode& n) {
        Tensor g(n.parents[0]->value.shape());
        for (int r = 0; r < m; ++r) {
            int i = ix[static_cast<std::size_t>(r)];
            for (int c = 0; c < d; ++c)
                g[static_cast<std::int64_t>(i) * d + c] += n.grad[static_cast<std::int64_t>(r) * d + c];
        }
        n.parents[0]->accumulate(g);
    });
}

Var gather_cells3d(const Var& vol, const std::vector<std::array<int, 3>>& cells) {
    if (vol->value.ndim() != 4) throw std::invalid_argument("gather_cells3d: need [C,D,H,W]");
    int c = vol->value.dim(0), dd = vol->value.dim(1), h = vol->value.dim(2), w = vol->value.dim(3);
    int m = static_cast<int>(cells.size());
    std::int64_t chw = static_cast<std::int64_t>(dd) * h * w;
    Tensor out({m, c});
    for (int r = 0; r < m; ++r) {
        auto [z, y, x] = cells[static_cast<std::size_t>(r)];
        if (z < 0 || z >= dd || y < 0 || y >= h || x < 0 || x >= w)
            throw std::out_of_range("gather_cells3d: lattice index");
        std::int64_t off = (static_cast<std::int64_t>(z) * h + y) * w + x;
        for (int ch = 0; ch < c; ++ch) out[static_cast<std::int64_t>(r) * c + ch] = vol->value[ch * chw + off];
    }
    auto cl = cells;
    return make_node(std::move(out), {vol}, [c, h, w, m, chw, cl](AgNode& n) {
        Tensor g(n.parents[0]->value.shape());
        for (int r = 0; r < m; ++r) {
            auto [z, y, x] = cl[static_cast<std::size_t>(r)];
            std::int64_t off = (static_cast<std::int64_t>(z) * h + y) * w + x;
            for (int ch = 0; ch < c; ++ch) g[ch * chw + off] += n.grad[static_cast<std::int64_t>(r) * c + ch];
        }
        n.parents[0]->accumulate(g);
    });
}

Var regroup_to_depth(const Var& x, int gcount) {
    if (x->value.ndim() != 3 || x->value.dim(0) % gcount != 0)
        throw std::invalid_argument("regroup_to_depth: channels % groups != 0");
    int c = x->value.dim(0) / gcount, h = x->value.dim(1), w = x->value.dim(2);
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out({c, gcount, h, w});
    for (int g = 0; g < gcount; ++g)
        for (int ch = 0; ch < c; ++ch)
            std::copy(x->value.data() + (static_cast<std::int64_t>(g) * c + ch) * plane,
                      x->value.data() + (static_cast<std::int64_t>(g) * c + ch + 1) * plane,
                      out.data() + (static_cast<std::int64_t>(ch) * gcount + g) * plane);
    return make_node(std::move(out), {x}, [gcount, c, plane](AgNode& n) {
        Tensor g(n.parents[0]->value.shape());
        for (int gi = 0; gi < gcount; ++gi)
            for (int ch = 0; ch < c; ++ch)
                std::copy(n.grad.data() + (static_cast<std::int64_t>(ch) * gcount + gi) * plane,
                          n.grad.data() + (static_cast<std::int64_t>(ch) * gcount + gi + 1) * plane,
                          g.data() + (static_cast<std::int64_t>(gi) * c + ch) * plane);
        n.parents[0]->accumulate(g);
    });
}

Var scatter_nodes_grid(const Var& x, const std::vector<int>& cell, int h, int w) {
    if (x->value.ndim() != 2 || static_cast<int>(cell.size()) != x->value.dim(0))
        throw std::invalid_argument("scatter_nodes_grid: shapes");
    int m = x->value.dim(0), c = x->value.dim(1);
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    Tensor out({c, h, w});
    for (int r = 0; r < m; ++r) {
        int cl = cell[static_cast<std::size_t>(r)];
        if (cl < 0 || cl >= plane) throw std::out_of_range("scatter_nodes_grid: cell index");
        for (int ch = 0; ch < c; ++ch) out[ch * plane + cl] += x->value[static_cast<std::int64_t>(r) * c + ch];
    }
    std::vector<int> cl = cell;
    return make_node(std::move(out), {x}, [m, c, plane, cl](AgNode& n) {
        Tensor g({m, c});
        for (int r = 0; r < m; ++r)
            for (int ch = 0; ch < c; ++ch)
                g[static_cast<std::int64_t>(r) * c + ch] = n.grad[ch * plane + cl[static_cast<std::size_t>(r)]];
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------------------
// attention ops
// ---------------------------------------------------------------------------

Var gat_edge_logits(const Var& u, const Var& a, const AdjPtr& adj, double slope) {
    if (u->value.ndim() != 2 || a->value.size() != u->value.dim(1))
        throw std::invalid_argument("gat_edge_logits: shapes");
    int d = u->value.dim(1);
    int e = adj->n_edges();
    Tensor out({e});
    for (int k = 0; k < e; ++k) {
        const double* ui = u->value.data() + static_cast<std::int64_t>(adj->dst[static_cast<std::size_t>(k)]) * d;
        const double* uj = u->value.data() + static_cast<std::int64_t>(adj->src[static_cast<std::size_t>(k)]) * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            double hsum = ui[c] + uj[c];
            s += a->value[c] * (hsum < 0.0 ? slope * hsum : hsum);
        }
        out[k] = s;
    }
    AdjPtr ad = adj;
    return make_node(std::move(out), {u, a}, [d, e, ad, slope](AgNode& n) {
        const Var& uv = n.parents[0];
        const Var& av = n.parents[1];
        Tensor gu, ga;
        if (uv->requires_grad) gu = Tensor::zeros(uv->value.shape());
        if (av->requires_grad) ga = Tensor::zeros(av->value.shape());
        for (int k = 0; k < e; ++k) {
            double gs = n.grad[k];
            if (gs == 0.0) continue;
            int i = ad->dst[static_cast<std::size_t>(k)], j = ad->src[static_cast<std::size_t>(k)];
            const double* ui = uv->value.data() + static_cast<std::int64_t>(i) * d;
            const double* uj = uv->value.data() + static_cast<std::int64_t>(j) * d;
            for (int c = 0; c < d; ++c) {
                double hsum = ui[c] + uj[c];
                double m = hsum < 0.0 ? slope * hsum : hsum;
                double dm = hsum < 0.0 ? slope : 1.0;
                if (!ga.empty()) ga[c] += gs * m;
                if (!gu.empty()) {
                    double dh = gs * av->value[c] * dm;
                    gu[static_cast<std::int64_t>(i) * d + c] += dh;
                    gu[static_cast<std::int64_t>(j) * d + c] += dh;
                }
            }
        }
        if (!gu.empty()) uv->accumulate(gu);
        if (!ga.empty()) av->accumulate(ga);
    });
}

Var gat_edge_logits2(const Var& ul, const Var& ur, const Var& a,
                     const AdjPtr& adj, double slope) {
    if (ul->value.ndim() != 2 || ur->value.ndim() != 2 || !ul->value.same_shape(ur->value) ||
        a->value.size() != ul->value.dim(1))
        throw std::invalid_argument("gat_edge_logits2: shapes");
    int d = ul->value.dim(1);
    int e = adj->n_edges();
    Tensor out({e});
    for (int k = 0; k < e; ++k) {
        const double* ui = ul->value.data() + static_cast<std::int64_t>(adj->dst[static_cast<std::size_t>(k)]) * d;
        const double* uj = ur->value.data() + static_cast<std::int64_t>(adj->src[static_cast<std::size_t>(k)]) * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) {
            double hsum = ui[c] + uj[c];
            s += a->value[c] * (hsum < 0.0 ? slope * hsum : hsum);
        }
        out[k] = s;
    }
    AdjPtr ad = adj;
    return make_node(std::move(out), {ul, ur, a}, [d, e, ad, slope](AgNode& n) {
        const Var& lv = n.parents[0];
        const Var& rv = n.parents[1];
        const Var& av = n.parents[2];
        Tensor gl, gr, ga;
        if (lv->requires_grad) gl = Tensor::zeros(lv->value.shape());
        if (rv->requires_grad) gr = Tensor::zeros(rv->value.shape());
        if (av->requires_grad) ga = Tensor::zeros(av->value.shape());
        for (int k = 0; k < e; ++k) {
            double gs = n.grad[k];
            if (gs == 0.0) continue;
            int i = ad->dst[static_cast<std::size_t>(k)], j = ad->src[static_cast<std::size_t>(k)];
            const double* ui = lv->value.data() + static_cast<std::int64_t>(i) * d;
            const double* uj = rv->value.data() + static_cast<std::int64_t>(j) * d;
            for (int c = 0; c < d; ++c) {
                double hsum = ui[c] + uj[c];
                double m = hsum < 0.0 ? slope * hsum : hsum;
                double dm = hsum < 0.0 ? slope : 1.0;
                if (!ga.empty()) ga[c] += gs * m;
                double dh = gs * av->value[c] * dm;
                if (!gl.empty()) gl[static_cast<std::int64_t>(i) * d + c] += dh;
                if (!gr.empty()) gr[static_cast<std::int64_t>(j) * d + c] += dh;
            }
        }
        if (!gl.empty()) lv->accumulate(gl);
        if (!gr.empty()) rv->accumulate(gr);
        if (!ga.empty()) av->accumulate(ga);
    });
}

Var segment_softmax(const Var& logits, const AdjPtr& adj) {
    if (logits->value.size() != adj->n_edges())
        throw std::invalid_argument("segment_softmax: logit count != edge count");
    int e = adj->n_edges();
    Tensor out({e});
    for (int i = 0; i < adj->n_nodes; ++i) {
        int b = adj->seg[static_cast<std::size_t>(i)], en = adj->seg[static_cast<std::size_t>(i) + 1];
        if (b == en) continue;
        double mx = logits->value[b];
        for (int k = b + 1; k < en; ++k) mx = std::max(mx, logits->value[k]);
        double z = 0.0;
        for (int k = b; k < en; ++k) {
            out[k] = std::exp(logits->value[k] - mx);
            z += out[k];
        }
        for (int k = b; k < en; ++k) out[k] /= z;
    }
    AdjPtr ad = adj;
    return make_node(std::move(out), {logits}, [ad](AgNode& n) {
        Tensor g(n.parents[0]->value.shape());
        for (int i = 0; i < ad->n_nodes; ++i) {
            int b = ad->seg[static_cast<std::size_t>(i)], en = ad->seg[static_cast<std::size_t>(i) + 1];
            double dot = 0.0;
            for (int k = b; k < en; ++k) dot += n.grad[k] * n.value[k];
            for (int k = b; k < en; ++k) g[k] = n.value[k] * (n.grad[k] - dot);
        }
        n.parents[0]->accumulate(g);
    });
}

Var edge_aggregate(const Var& alpha, const Var& u, const AdjPtr& adj) {
    if (alpha->value.size() != adj->n_edges() || u->value.ndim() != 2 ||
        u->value.dim(0) != adj->n_nodes)
        throw std::invalid_argument("edge_aggregate: shapes");
    int d = u->value.dim(1);
    Tensor out({adj->n_nodes, d});
    for (int i = 0; i < adj->n_nodes; ++i) {
        double* oi = out.data() + static_cast<std::int64_t>(i) * d;
        for (int k = adj->seg[static_cast<std::size_t>(i)]; k < adj->seg[static_cast<std::size_t>(i) + 1]; ++k) {
            double a = alpha->value[k];
            const double* uj = u->value.data() + static_cast<std::int64_t>(adj->src[static_cast<std::size_t>(k)]) * d;
            for (int c = 0; c < d; ++c) oi[c] += a * uj[c];
        }
    }
    AdjPtr ad = adj;
    return make_node(std::move(out), {alpha, u}, [d, ad](AgNode& n) {
        const Var& av = n.parents[0];
        const Var& uv = n.parents[1];
        Tensor ga, gu;
        if (av->requires_grad) ga = Tensor::zeros(av->value.shape());
        if (uv->requires_grad) gu = Tensor::zeros(uv->value.shape());
        for (int i = 0; i < ad->n_nodes; ++i) {
            const double* gi = n.grad.data() + static_cast<std::int64_t>(i) * d;
            for (int k = ad->seg[static_cast<std::size_t>(i)]; k < ad->seg[static_cast<std::size_t>(i) + 1]; ++k) {
                int j = ad->src[static_cast<std::size_t>(k)];
                const double* uj = uv->value.data() + static_cast<std::int64_t>(j) * d;
                if (!ga.empty()) {
                    double s = 0.0;
                    for (int c = 0; c < d; ++c) s += gi[c] * uj[c];
                    ga[k] = s;
                }
                if (!gu.empty()) {
                    double a = av->value[k];
                    for (int c = 0; c < d; ++c) gu[static_cast<std::int64_t>(j) * d + c] += a * gi[c];
                }
            }
        }
        if (!ga.empty()) av->accumulate(ga);
        if (!gu.empty()) uv->accumulate(gu);
    });
}

}  // namespace vseg
