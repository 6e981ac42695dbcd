#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "vseg/vessel_graph.hpp"

using namespace vseg;

namespace {

// Independent geodesic oracle: flat O(V^2) Dijkstra without a heap, same
// 26-neighborhood mean-slowness cost model.
double dijkstra_oracle(const Volume& mask, std::array<int, 3> src, std::array<int, 3> dst,
                       double eps_speed) {
    const int nz = mask.nz(), ny = mask.ny(), nx = mask.nx();
    const std::int64_t n = static_cast<std::int64_t>(nz) * ny * nx;
    std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    std::vector<char> done(static_cast<std::size_t>(n), 0);
    auto flat = [&](int z, int y, int x) { return (static_cast<std::int64_t>(z) * ny + y) * nx + x; };
    auto slow = [&](std::int64_t i) { return mask[i] >= 0.5 ? 1.0 : 1.0 / eps_speed; };
    dist[static_cast<std::size_t>(flat(src[0], src[1], src[2]))] = 0.0;
    for (std::int64_t iter = 0; iter < n; ++iter) {
        std::int64_t best = -1;
        double bd = std::numeric_limits<double>::infinity();
        for (std::int64_t i = 0; i < n; ++i)
            if (!done[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] < bd) {
                bd = dist[static_cast<std::size_t>(i)];
                best = i;
            }
        if (best < 0) break;
        done[static_cast<std::size_t>(best)] = 1;
        int x = static_cast<int>(best % nx), y = static_cast<int>((best / nx) % ny),
            z = static_cast<int>(best / (static_cast<std::int64_t>(nx) * ny));
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dz && !dy && !dx) continue;
                    int zz = z + dz, yy = y + dy, xx = x + dx;
                    if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
                    double lz = dz * mask.spacing[0], ly = dy * mask.spacing[1],
                           lx = dx * mask.spacing[2];
                    double len = std::sqrt(lz * lz + ly * ly + lx * lx);
                    std::int64_t j = flat(zz, yy, xx);
                    double nd = bd + len * 0.5 * (slow(best) + slow(j));
                    if (nd < dist[static_cast<std::size_t>(j)]) dist[static_cast<std::size_t>(j)] = nd;
                }
    }
    return dist[static_cast<std::size_t>(flat(dst[0], dst[1], dst[2]))];
}

Volume random_mask(Rng& rng, int nz, int ny, int nx, double p) {
    Volume v(nz, ny, nx);
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.uniform() < p ? 1.0 : 0.0;
    return v;
}

}  // namespace

TEST_CASE("build_nodes: background fallback on an all-zero mask") {
    Volume m(1, 16, 16);
    auto g = build_nodes(m, GridSpec{1, 2, 2});
    REQUIRE(g.n_nodes() == 4);
    std::set<std::pair<double, double>> got;
    for (const auto& n : g.nodes) {
        CHECK(n.label == 0);
        CHECK(n.pos[0] == 0.0);
        got.insert({n.pos[1], n.pos[2]});
    }
    std::set<std::pair<double, double>> want{{3.5, 3.5}, {3.5, 11.5}, {11.5, 3.5}, {11.5, 11.5}};
    CHECK(got == want);
}

TEST_CASE("build_nodes: single vessel voxel becomes the node") {
    Volume m(1, 16, 16);
    m.at(0, 3, 5) = 1.0;
    auto g = build_nodes(m, GridSpec{1, 1, 1});
    REQUIRE(g.n_nodes() == 1);
    CHECK(g.nodes[0].label == 1);
    CHECK(g.nodes[0].pos == std::array<double, 3>{0, 3, 5});
}

TEST_CASE("build_nodes: node at the mean of vessel voxels") {
    Volume m(1, 8, 8);
    m.at(0, 0, 0) = 1.0;
    m.at(0, 2, 4) = 1.0;
    auto g = build_nodes(m, GridSpec{1, 1, 1});
    REQUIRE(g.n_nodes() == 1);
    CHECK(g.nodes[0].pos == std::array<double, 3>{0, 1, 2});
}

TEST_CASE("build_nodes: node count equals grid product and nodes stay in their sub-volume") {
    Rng rng(21);
    for (int rep = 0; rep < 8; ++rep) {
        Volume m = random_mask(rng, 3, 16, 16, 0.1);
        GridSpec grid{3, 4, 4};
        auto g = build_nodes(m, grid);
        CHECK(g.n_nodes() == grid.count());
        int sub_y = 4, sub_x = 4;
        for (int sz = 0; sz < 3; ++sz)
            for (int sy = 0; sy < 4; ++sy)
                for (int sx = 0; sx < 4; ++sx) {
                    const auto& n = g.nodes[static_cast<std::size_t>((sz * 4 + sy) * 4 + sx)];
                    CHECK(n.pos[0] >= sz);
                    CHECK(n.pos[0] <= sz);  // sub depth 1
                    CHECK(n.pos[1] >= sy * sub_y - 0.5);
                    CHECK(n.pos[1] < (sy + 1) * sub_y);
                    CHECK(n.pos[2] >= sx * sub_x - 0.5);
                    CHECK(n.pos[2] < (sx + 1) * sub_x);
                }
    }
}

TEST_CASE("build_nodes: non-binary mask rejected, padding handles odd shapes") {
    Volume bad(1, 4, 4);
    bad.at(0, 0, 0) = 0.7;
    CHECK_THROWS_AS(build_nodes(bad, GridSpec{1, 2, 2}), std::invalid_argument);

    Volume odd(1, 10, 10);  // not divisible by 4 -> padded to 12
    auto g = build_nodes(odd, GridSpec{1, 4, 4});
    CHECK(g.n_nodes() == 16);
    CHECK(g.padded_shape == std::array<int, 3>{1, 12, 12});
    CHECK(g.pad_lo == std::array<int, 3>{0, 1, 1});
}

TEST_CASE("travel_time: src equals dst") {
    Volume m(1, 4, 4);
    CHECK(travel_time(m, {0, 1, 1}, {0, 1, 1}) == 0.0);
}

TEST_CASE("travel_time: straight unit-spacing vessel of length 10") {
    Volume m(1, 5, 16);
    for (int x = 2; x <= 12; ++x) m.at(0, 2, x) = 1.0;
    double t = travel_time(m, {0, 2, 2}, {0, 2, 12});
    CHECK(std::abs(t - 10.0) / 10.0 < 0.05);
}

TEST_CASE("travel_time: crossing background dominates in-vessel travel") {
    // two parallel segments, gap of 6 voxels of background
    Volume m(1, 9, 12);
    for (int x = 0; x < 12; ++x) {
        m.at(0, 1, x) = 1.0;
        m.at(0, 8, x) = 1.0;
    }
    const double eps_speed = 1e-3;
    double cross = travel_time(m, {0, 1, 5}, {0, 8, 5}, eps_speed);
    double along = travel_time(m, {0, 1, 0}, {0, 1, 7}, eps_speed);  // same euclidean length 7
    CHECK(cross >= 100.0 * along);
    double gap = 7.0;  // euclidean separation in mm
    CHECK(cross >= gap / eps_speed * 0.5);
}

TEST_CASE("travel_time: symmetry and triangle inequality") {
    Rng rng(31);
    Volume m = random_mask(rng, 2, 7, 7, 0.35);
    std::array<int, 3> a{0, 1, 2}, b{1, 5, 6}, c{0, 3, 3};
    double ab = travel_time(m, a, b), ba = travel_time(m, b, a);
    CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
    double ac = travel_time(m, a, c), cb = travel_time(m, c, b);
    CHECK(ab <= ac + cb + 1e-9);
}

TEST_CASE("travel_time: matches the independent oracle on random masks") {
    Rng rng(77);
    for (int rep = 0; rep < 20; ++rep) {
        Volume m = random_mask(rng, 2, 8, 8, 0.3);
        m.spacing = {1.5, 0.8, 1.1};
        std::array<int, 3> src{rng.uniform_int(0, 1), rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
        std::array<int, 3> dst{rng.uniform_int(0, 1), rng.uniform_int(0, 7), rng.uniform_int(0, 7)};
        double got = travel_time(m, src, dst);
        double want = dijkstra_oracle(m, src, dst, 1e-3);
        CHECK(std::abs(got - want) <= 1e-9);
    }
}

TEST_CASE("travel_time: rejects out-of-bounds voxels") {
    Volume m(1, 4, 4);
    CHECK_THROWS_AS(travel_time(m, {0, 0, 0}, {0, 0, 4}), std::out_of_range);
    CHECK_THROWS_AS(travel_time(m, {-1, 0, 0}, {0, 0, 0}), std::out_of_range);
}

TEST_CASE("build_edges: straight vessel through 3 sub-volumes gives a path graph") {
    Volume m(1, 4, 12);
    for (int x = 0; x < 12; ++x) m.at(0, 1, x) = 1.0;
    auto g = build_graph(m, GridSpec{1, 1, 3}, EdgePolicy{});
    REQUIRE(g.n_nodes() == 3);
    REQUIRE(g.n_edges() == 2);
    CHECK(g.edges[0] == std::array<int, 2>{0, 1});
    CHECK(g.edges[1] == std::array<int, 2>{1, 2});
    g.validate();
}

TEST_CASE("build_edges: separated branches stay unconnected") {
    // adjacent sub-volumes, vessels separated by a background gap
    Volume m(1, 8, 8);
    for (int x = 0; x < 3; ++x) m.at(0, 4, x) = 1.0;
    for (int x = 5; x < 8; ++x) m.at(0, 4, x) = 1.0;
    double max_in_vessel = 2.0;  // longest within-branch euclidean span is 2 voxels
    EdgePolicy pol;
    pol.tau_factor = 2.0 * max_in_vessel / 8.0;  // pitch is 8 -> threshold = 2x in-vessel distance
    auto g = build_graph(m, GridSpec{1, 1, 2}, pol);
    CHECK(g.n_edges() == 0);
    // oracle: the actual crossing time exceeds the threshold by a wide margin
    double cross = travel_time(m, {0, 4, 2}, {0, 4, 5}, pol.background_speed);
    CHECK(cross >= 10.0 * (2.0 * max_in_vessel));
}

TEST_CASE("build_edges: all-zero mask yields an edgeless graph") {
    Volume m(2, 8, 8);
    auto g = build_graph(m, GridSpec{2, 2, 2}, EdgePolicy{});
    CHECK(g.n_nodes() == 8);
    CHECK(g.n_edges() == 0);
    g.validate();
}

TEST_CASE("build_edges: deterministic and symmetric") {
    Rng rng(99);
    Volume m = random_mask(rng, 3, 12, 12, 0.25);
    auto g1 = build_graph(m, GridSpec{3, 3, 3}, EdgePolicy{});
    auto g2 = build_graph(m, GridSpec{3, 3, 3}, EdgePolicy{});
    std::ostringstream s1, s2;
    write_graph("/tmp/vseg_g1.txt", g1);
    write_graph("/tmp/vseg_g2.txt", g2);
    auto slurp = [](const char* p) {
        std::ifstream f(p);
        std::stringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    CHECK(slurp("/tmp/vseg_g1.txt") == slurp("/tmp/vseg_g2.txt"));
    // weight symmetry through the solver itself
    for (std::size_t e = 0; e < g1.edges.size() && e < 4; ++e) {
        auto vi = g1.nodes[static_cast<std::size_t>(g1.edges[e][0])].pos;
        auto vj = g1.nodes[static_cast<std::size_t>(g1.edges[e][1])].pos;
        std::array<int, 3> a{static_cast<int>(std::llround(vi[0])), static_cast<int>(std::llround(vi[1])),
                             static_cast<int>(std::llround(vi[2]))};
        std::array<int, 3> b{static_cast<int>(std::llround(vj[0])), static_cast<int>(std::llround(vj[1])),
                             static_cast<int>(std::llround(vj[2]))};
        CHECK(travel_time(m, a, b) == doctest::Approx(travel_time(m, b, a)).epsilon(1e-12));
    }
}

TEST_CASE("full_graph: complete graph combinatorics") {
    auto g = full_graph(GridSpec{1, 2, 2});
    CHECK(g.n_nodes() == 4);
    CHECK(g.n_edges() == 6);

    auto big = full_graph(GridSpec{3, 32, 32});
    CHECK(big.n_nodes() == 3072);
    CHECK(static_cast<long long>(big.n_edges()) == 3072LL * 3071 / 2);

    // every node degree = N-1
    std::vector<int> deg(4, 0);
    for (auto& [i, j] : g.edges) {
        deg[static_cast<std::size_t>(i)]++;
        deg[static_cast<std::size_t>(j)]++;
    }
    for (int d : deg) CHECK(d == 3);

    CHECK_THROWS_AS(full_graph(GridSpec{0, 2, 2}), std::invalid_argument);
}

TEST_CASE("adjacency: isolated nodes get a self-loop") {
    Volume m(1, 8, 8);
    auto g = build_graph(m, GridSpec{1, 2, 2}, EdgePolicy{});
    auto adj = build_adjacency(g);
    REQUIRE(adj.n_nodes == 4);
    CHECK(adj.n_edges() == 4);
    for (int i = 0; i < 4; ++i) {
        CHECK(adj.seg[static_cast<std::size_t>(i) + 1] - adj.seg[static_cast<std::size_t>(i)] == 1);
        CHECK(adj.src[static_cast<std::size_t>(adj.seg[static_cast<std::size_t>(i)])] == i);
    }
}

TEST_CASE("graph serialization round trip") {
    Rng rng(5);
    Volume m = random_mask(rng, 3, 8, 8, 0.3);
    auto g = build_graph(m, GridSpec{3, 2, 2}, EdgePolicy{});
    write_graph("/tmp/vseg_graph_rt.txt", g);
    auto g2 = read_graph("/tmp/vseg_graph_rt.txt");
    REQUIRE(g2.n_nodes() == g.n_nodes());
    REQUIRE(g2.n_edges() == g.n_edges());
    for (int i = 0; i < g.n_nodes(); ++i) {
        CHECK(g2.nodes[static_cast<std::size_t>(i)].pos == g.nodes[static_cast<std::size_t>(i)].pos);
        CHECK(g2.nodes[static_cast<std::size_t>(i)].label == g.nodes[static_cast<std::size_t>(i)].label);
    }
    for (int e = 0; e < g.n_edges(); ++e) {
        CHECK(g2.edges[static_cast<std::size_t>(e)] == g.edges[static_cast<std::size_t>(e)]);
        CHECK(g2.weights[static_cast<std::size_t>(e)] == g.weights[static_cast<std::size_t>(e)]);
    }
}

TEST_CASE("parse_grid") {
    auto g = parse_grid("32x32x3");
    CHECK(g.gh == 32);
    CHECK(g.gw == 32);
    CHECK(g.gd == 3);
    CHECK_THROWS_AS(parse_grid("32-32-3"), std::invalid_argument);
    CHECK_THROWS_AS(parse_grid("0x4x3"), std::invalid_argument);
}

TEST_CASE("normalized positions stay in [-1,1]") {
    Rng rng(8);
    Volume m = random_mask(rng, 3, 10, 10, 0.2);
    auto g = build_nodes(m, GridSpec{3, 4, 4});  // padded case
    for (int i = 0; i < g.n_nodes(); ++i) {
        auto u = g.normalized_pos(i);
        for (double c : u) {
            CHECK(c >= -1.0 - 1e-12);
            CHECK(c <= 1.0 + 1e-12);
        }
    }
}
