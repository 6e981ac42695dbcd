#include <doctest.h>

#include <cmath>
#include <functional>

#include "vseg/core/autograd.hpp"
#include "vseg/core/nn.hpp"

using namespace vseg;

namespace {

// Central finite differences on every element of every leaf against the
// autograd gradient.
void check_grads(const std::vector<Var>& leaves, const std::function<Var()>& build,
                 double h = 1e-6, double tol = 1e-6) {
    Var loss = build();
    zero_grad(leaves);
    for (const auto& l : leaves)
        if (!l->grad.empty()) l->grad.fill(0.0);
    backward(loss);
    for (const auto& leaf : leaves) {
        Tensor analytic = leaf->grad.empty() ? Tensor::zeros(leaf->value.shape()) : leaf->grad;
        for (std::int64_t i = 0; i < leaf->value.size(); ++i) {
            double keep = leaf->value[i];
            leaf->value[i] = keep + h;
            double hi = build()->value[0];
            leaf->value[i] = keep - h;
            double lo = build()->value[0];
            leaf->value[i] = keep;
            double fd = (hi - lo) / (2 * h);
            double denom = std::max({1.0, std::abs(fd), std::abs(analytic[i])});
            CHECK(std::abs(fd - analytic[i]) / denom < tol);
        }
    }
}

}  // namespace

TEST_CASE("autograd: elementwise chain") {
    Rng rng(1);
    Var a = make_leaf(rng.normal_tensor({3, 4}), true);
    Var b = make_leaf(rng.normal_tensor({3, 4}), true);
    check_grads({a, b}, [&] { return sum(mul(silu(a), sub(sigmoid_v(b), scale(a, 0.3)))); });
}

TEST_CASE("autograd: leaky relu and mean") {
    Rng rng(2);
    Var a = make_leaf(rng.normal_tensor({17}), true);
    check_grads({a}, [&] { return mean(leaky_relu(a, 0.2)); });
}

TEST_CASE("autograd: linear layer") {
    Rng rng(3);
    Var x = make_leaf(rng.normal_tensor({5, 7}), true);
    Var w = make_leaf(rng.normal_tensor({4, 7}), true);
    Var b = make_leaf(rng.normal_tensor({4}), true);
    check_grads({x, w, b}, [&] { return sum(silu(linear(x, w, b))); });
}

TEST_CASE("autograd: mse and bce") {
    Rng rng(4);
    Var p = make_leaf(rng.normal_tensor({6}), true);
    Var t = make_leaf(rng.normal_tensor({6}), true);
    check_grads({p, t}, [&] { return mse_loss(p, t); });

    Tensor labels({5});
    for (int i = 0; i < 5; ++i) labels[i] = i % 2;
    Var logits = make_leaf(rng.normal_tensor({5}), true);
    check_grads({logits}, [&] { return bce_loss(sigmoid_v(logits), labels, 1e-7); });
}

TEST_CASE("autograd: conv2d stride/pad/groups") {
    Rng rng(5);
    SUBCASE("plain 3x3") {
        Var x = make_leaf(rng.normal_tensor({2, 6, 5}), true);
        Var w = make_leaf(rng.normal_tensor({3, 2, 3, 3}), true);
        Var b = make_leaf(rng.normal_tensor({3}), true);
        check_grads({x, w, b}, [&] { return sum(conv2d(x, w, b, 1, 1, 1)); });
    }
    SUBCASE("stride 2") {
        Var x = make_leaf(rng.normal_tensor({2, 8, 8}), true);
        Var w = make_leaf(rng.normal_tensor({4, 2, 3, 3}), true);
        check_grads({x, w}, [&] { return sum(silu(conv2d(x, w, nullptr, 2, 1, 1))); });
    }
    SUBCASE("grouped") {
        Var x = make_leaf(rng.normal_tensor({6, 5, 5}), true);
        Var w = make_leaf(rng.normal_tensor({6, 2, 3, 3}), true);
        Var b = make_leaf(rng.normal_tensor({6}), true);
        check_grads({x, w, b}, [&] { return sum(conv2d(x, w, b, 1, 1, 3)); });
    }
    SUBCASE("1x1") {
        Var x = make_leaf(rng.normal_tensor({3, 4, 4}), true);
        Var w = make_leaf(rng.normal_tensor({2, 3, 1, 1}), true);
        check_grads({x, w}, [&] { return sum(conv2d(x, w, nullptr, 1, 0, 1)); });
    }
}

TEST_CASE("autograd: conv2d matches a direct-loop oracle") {
    Rng rng(6);
    Tensor xv = rng.normal_tensor({2, 5, 6});
    Tensor wv = rng.normal_tensor({3, 2, 3, 3});
    Tensor bv = rng.normal_tensor({3});
    Var x = make_leaf(xv, false), w = make_leaf(wv, false), b = make_leaf(bv, false);
    Var out = conv2d(x, w, b, 1, 1, 1);
    for (int co = 0; co < 3; ++co)
        for (int oy = 0; oy < 5; ++oy)
            for (int ox = 0; ox < 6; ++ox) {
                double want = bv[co];
                for (int ci = 0; ci < 2; ++ci)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int iy = oy + ky - 1, ix = ox + kx - 1;
                            if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                            want += xv[(ci * 5 + iy) * 6 + ix] * wv[((co * 2 + ci) * 3 + ky) * 3 + kx];
                        }
                CHECK(out->value[(co * 5 + oy) * 6 + ox] == doctest::Approx(want).epsilon(1e-12));
            }
}

TEST_CASE("autograd: upsample, concat, bias broadcast") {
    Rng rng(7);
    Var x = make_leaf(rng.normal_tensor({2, 3, 3}), true);
    Var y = make_leaf(rng.normal_tensor({1, 6, 6}), true);
    Var bias = make_leaf(rng.normal_tensor({3}), true);
    check_grads({x, y, bias}, [&] {
        return sum(silu(add_bias_chw(concat_channels(upsample_nearest2(x), y), bias)));
    });
}

TEST_CASE("autograd: group norm") {
    Rng rng(8);
    Var x = make_leaf(rng.normal_tensor({4, 3, 3}), true);
    Var g = make_leaf(rng.uniform_tensor({4}, 0.5, 1.5), true);
    Var b = make_leaf(rng.normal_tensor({4}), true);
    check_grads({x, g, b}, [&] { return sum(silu(group_norm(x, g, b, 2, 1e-5))); }, 1e-6, 1e-5);
}

TEST_CASE("autograd: node ops") {
    Rng rng(9);
    Var x = make_leaf(rng.normal_tensor({5, 3}), true);
    SUBCASE("gather + concat_cols + row_scale") {
        Tensor s = rng.uniform_tensor({4}, 0.1, 1.0);
        std::vector<int> idx{0, 2, 2, 4};
        Var y = make_leaf(rng.normal_tensor({4, 2}), true);
        check_grads({x, y}, [&] { return sum(row_scale(concat_cols(gather_rows(x, idx), y), s)); });
    }
    SUBCASE("scatter to grid") {
        std::vector<int> cells{0, 3, 3, 5, 2};
        check_grads({x}, [&] { return sum(silu(scatter_nodes_grid(x, cells, 2, 3))); });
    }
    SUBCASE("reshape") {
        check_grads({x}, [&] { return sum(silu(reshape(x, {15}))); });
    }
}

TEST_CASE("autograd: 3d cell gather and regroup") {
    Rng rng(10);
    Var vol = make_leaf(rng.normal_tensor({2, 3, 4, 4}), true);
    std::vector<std::array<int, 3>> cells{{0, 1, 2}, {2, 3, 3}, {1, 0, 0}};
    check_grads({vol}, [&] { return sum(silu(gather_cells3d(vol, cells))); });

    Var x = make_leaf(rng.normal_tensor({6, 3, 3}), true);
    Var r = regroup_to_depth(x, 3);
    CHECK(r->value.shape() == std::vector<int>{2, 3, 3, 3});
    // value permutation is correct: group g channel c -> [c, g]
    for (int g = 0; g < 3; ++g)
        for (int c = 0; c < 2; ++c)
            for (int i = 0; i < 9; ++i)
                CHECK(r->value[(c * 3 + g) * 9 + i] == x->value[(g * 2 + c) * 9 + i]);
    check_grads({x}, [&] { return sum(silu(regroup_to_depth(x, 3))); });
}

namespace {

AdjPtr tiny_adjacency() {
    // path graph 0-1-2 plus isolated node 3 with self loop
    auto adj = std::make_shared<DirectedAdjacency>();
    adj->n_nodes = 4;
    adj->src = {1, 0, 2, 1, 3};
    adj->dst = {0, 1, 1, 2, 3};
    adj->seg = {0, 1, 3, 4, 5};
    return adj;
}

}  // namespace

TEST_CASE("autograd: attention ops") {
    Rng rng(11);
    auto adj = tiny_adjacency();
    Var u = make_leaf(rng.normal_tensor({4, 3}), true);
    Var a = make_leaf(rng.normal_tensor({3}), true);
    SUBCASE("edge logits") {
        check_grads({u, a}, [&] { return sum(gat_edge_logits(u, a, adj, 0.2)); });
    }
    SUBCASE("full attention stack") {
        check_grads({u, a}, [&] {
            Var logits = gat_edge_logits(u, a, adj, 0.2);
            Var alpha = segment_softmax(logits, adj);
            return sum(silu(edge_aggregate(alpha, u, adj)));
        });
    }
    SUBCASE("concat-variant logits") {
        Var ul = make_leaf(rng.normal_tensor({4, 3}), true);
        Var ur = make_leaf(rng.normal_tensor({4, 3}), true);
        check_grads({ul, ur, a}, [&] { return sum(gat_edge_logits2(ul, ur, a, adj, 0.2)); });
    }
}

TEST_CASE("autograd: segment softmax sums to one per destination") {
    Rng rng(12);
    auto adj = tiny_adjacency();
    Var logits = make_leaf(rng.normal_tensor({5}), false);
    Var alpha = segment_softmax(logits, adj);
    for (int i = 0; i < adj->n_nodes; ++i) {
        double s = 0.0;
        for (int k = adj->seg[static_cast<std::size_t>(i)]; k < adj->seg[static_cast<std::size_t>(i) + 1]; ++k)
            s += alpha->value[k];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("adamw: decoupled decay shrinks unused weights") {
    Var w = make_leaf(Tensor({2}, std::vector<double>{1.0, -2.0}), true);
    nn::AdamW opt({w}, 0.1, 0.5);
    w->ensure_grad();  // zero gradient: only decay acts
    opt.step();
    CHECK(w->value[0] == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
    CHECK(w->value[1] == doctest::Approx(-2.0 - 0.1 * 0.5 * -2.0));
}

TEST_CASE("adamw: converges on a quadratic") {
    Rng rng(13);
    Var w = make_leaf(rng.normal_tensor({8}), true);
    Var target = make_leaf(rng.normal_tensor({8}), false);
    nn::AdamW opt({w}, 0.05, 0.0);
    double first = 0.0, last = 0.0;
    for (int it = 0; it < 400; ++it) {
        opt.zero_grad();
        Var loss = mse_loss(w, target);
        backward(loss);
        opt.step();
        if (it == 0) first = loss->value[0];
        last = loss->value[0];
    }
    CHECK(last < first * 1e-4);
}
