#include "vseg/vessel_graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace vseg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Neigh {
    int dz, dy, dx;
    double base_len;  // filled per-volume with spacing
};

std::vector<std::array<int, 3>> neighborhood26() {
    std::vector<std::array<int, 3>> out;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
                if (dz || dy || dx) out.push_back({dz, dy, dx});
    return out;
}

void check_binary(const Volume& mask, const char* op) {
    if (!mask.is_binary()) throw std::invalid_argument(std::string(op) + ": mask is not binary");
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

struct Tiling {
    std::array<int, 3> sub;     // sub-volume size per axis (z,y,x)
    std::array<int, 3> pad_lo;
    std::array<int, 3> padded;
};

Tiling make_tiling(const Volume& v, const GridSpec& grid) {
    if (grid.gd < 1 || grid.gh < 1 || grid.gw < 1)
        throw std::invalid_argument("grid dimensions must be >= 1");
    Tiling t;
    std::array<int, 3> dims{v.nz(), v.ny(), v.nx()};
    std::array<int, 3> g{grid.gd, grid.gh, grid.gw};
    for (int a = 0; a < 3; ++a) {
        t.sub[a] = ceil_div(dims[a], g[a]);
        t.padded[a] = t.sub[a] * g[a];
        t.pad_lo[a] = (t.padded[a] - dims[a]) / 2;
    }
    return t;
}

// Multi-source-free Dijkstra from one voxel; early exit once the frontier
// exceeds the cutoff (remaining targets are then unreachable under it).
std::vector<double> dijkstra_from(const Volume& mask, const std::array<int, 3>& src,
                                  double background_speed, double cutoff) {
    const int nz = mask.nz(), ny = mask.ny(), nx = mask.nx();
    auto flat = [&](int z, int y, int x) {
        return (static_cast<std::int64_t>(z) * ny + y) * nx + x;
    };
    std::vector<double> dist(static_cast<std::size_t>(nz) * ny * nx, kInf);
    auto slowness = [&](std::int64_t i) {
        return mask[i] >= 0.5 ? 1.0 : 1.0 / background_speed;
    };
    const auto offs = neighborhood26();
    std::vector<double> step_len(offs.size());
    for (std::size_t k = 0; k < offs.size(); ++k) {
        auto [dz, dy, dx] = offs[k];
        double lz = dz * mask.spacing[0], ly = dy * mask.spacing[1], lx = dx * mask.spacing[2];
        step_len[k] = std::sqrt(lz * lz + ly * ly + lx * lx);
    }
    using Item = std::pair<double, std::int64_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
    std::int64_t s = flat(src[0], src[1], src[2]);
    dist[static_cast<std::size_t>(s)] = 0.0;
    heap.emplace(0.0, s);
    while (!heap.empty()) {
        auto [d, i] = heap.top();
        heap.pop();
        if (d > dist[static_cast<std::size_t>(i)]) continue;
        if (d > cutoff) break;
        int x = static_cast<int>(i % nx);
        int y = static_cast<int>((i / nx) % ny);
        int z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
        double s_i = slowness(i);
        for (std::size_t k = 0; k < offs.size(); ++k) {
            int zz = z + offs[k][0], yy = y + offs[k][1], xx = x + offs[k][2];
            if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
            std::int64_t j = flat(zz, yy, xx);
            double nd = d + step_len[k] * 0.5 * (s_i + slowness(j));
            if (nd < dist[static_cast<std::size_t>(j)]) {
                dist[static_cast<std::size_t>(j)] = nd;
                heap.emplace(nd, j);
            }
        }
    }
    return dist;
}

std::array<int, 3> round_to_voxel(const Volume& v, const std::array<double, 3>& p) {
    return {std::clamp(static_cast<int>(std::llround(p[0])), 0, v.nz() - 1),
            std::clamp(static_cast<int>(std::llround(p[1])), 0, v.ny() - 1),
            std::clamp(static_cast<int>(std::llround(p[2])), 0, v.nx() - 1)};
}

}  // namespace

std::array<double, 3> VesselGraph::normalized_pos(int i) const {
    const auto& p = nodes[static_cast<std::size_t>(i)].pos;
    std::array<double, 3> u;
    for (int a = 0; a < 3; ++a) {
        double extent = static_cast<double>(padded_shape[a] - 1);
        double c = p[a] + pad_lo[a];
        u[a] = extent > 0.0 ? 2.0 * c / extent - 1.0 : 0.0;
    }
    return u;
}

void VesselGraph::validate() const {
    if (n_nodes() != grid.count())
        throw std::invalid_argument("graph: node count != grid product");
    if (weights.size() != edges.size()) throw std::invalid_argument("graph: weight count");
    for (std::size_t e = 0; e < edges.size(); ++e) {
        auto [i, j] = edges[e];
        if (i < 0 || j < 0 || i >= n_nodes() || j >= n_nodes())
            throw std::invalid_argument("graph: edge index out of range");
        if (i == j) throw std::invalid_argument("graph: self-loop");
        if (!(weights[e] >= 0.0) || !std::isfinite(weights[e]))
            throw std::invalid_argument("graph: bad edge weight");
    }
}

VesselGraph build_nodes(const Volume& mask, const GridSpec& grid) {
    check_binary(mask, "build_nodes");
    Tiling t = make_tiling(mask, grid);
    VesselGraph g;
    g.grid = grid;
    g.vol_shape = {mask.nz(), mask.ny(), mask.nx()};
    g.pad_lo = t.pad_lo;
    g.padded_shape = t.padded;
    g.has_labels = true;
    g.nodes.reserve(static_cast<std::size_t>(grid.count()));
    for (int sz = 0; sz < grid.gd; ++sz)
        for (int sy = 0; sy < grid.gh; ++sy)
            for (int sx = 0; sx < grid.gw; ++sx) {
                // sub-volume bounds in original coordinates (may overhang into padding)
                int z0 = sz * t.sub[0] - t.pad_lo[0], z1 = z0 + t.sub[0];
                int y0 = sy * t.sub[1] - t.pad_lo[1], y1 = y0 + t.sub[1];
                int x0 = sx * t.sub[2] - t.pad_lo[2], x1 = x0 + t.sub[2];
                double mz = 0, my = 0, mx = 0;
                std::int64_t cnt = 0;
                for (int z = std::max(z0, 0); z < std::min(z1, mask.nz()); ++z)
                    for (int y = std::max(y0, 0); y < std::min(y1, mask.ny()); ++y)
                        for (int x = std::max(x0, 0); x < std::min(x1, mask.nx()); ++x)
                            if (mask.at(z, y, x) >= 0.5) {
                                mz += z;
                                my += y;
                                mx += x;
                                ++cnt;
                            }
                GraphNode n;
                if (cnt > 0) {
                    n.pos = {mz / cnt, my / cnt, mx / cnt};
                    n.label = 1;
                } else {
                    n.pos = {z0 + (t.sub[0] - 1) / 2.0, y0 + (t.sub[1] - 1) / 2.0,
                             x0 + (t.sub[2] - 1) / 2.0};
                    n.label = 0;
                }
                g.nodes.push_back(n);
            }
    return g;
}

double travel_time(const Volume& mask, const std::array<int, 3>& src,
                   const std::array<int, 3>& dst, double background_speed) {
    check_binary(mask, "travel_time");
    if (!mask.in_bounds(src[0], src[1], src[2]) || !mask.in_bounds(dst[0], dst[1], dst[2]))
        throw std::out_of_range("travel_time: voxel out of bounds");
    auto dist = dijkstra_from(mask, src, background_speed, kInf);
    return dist[(static_cast<std::size_t>(dst[0]) * mask.ny() + dst[1]) * mask.nx() + dst[2]];
}

VesselGraph build_edges(VesselGraph g, const Volume& mask, const EdgePolicy& policy) {
    check_binary(mask, "build_edges");
    Tiling t = make_tiling(mask, g.grid);
    double pitch = 0.0;
    pitch = std::max(pitch, t.sub[0] * mask.spacing[0]);
    pitch = std::max(pitch, t.sub[1] * mask.spacing[1]);
    pitch = std::max(pitch, t.sub[2] * mask.spacing[2]);
    const double tau = policy.tau_factor * pitch;

    auto node_id = [&](int sz, int sy, int sx) {
        return (sz * g.grid.gh + sy) * g.grid.gw + sx;
    };
    std::map<std::pair<int, int>, double> found;
    const int r = policy.candidate_radius;
    for (int sz = 0; sz < g.grid.gd; ++sz)
        for (int sy = 0; sy < g.grid.gh; ++sy)
            for (int sx = 0; sx < g.grid.gw; ++sx) {
                int i = node_id(sz, sy, sx);
                if (!g.nodes[static_cast<std::size_t>(i)].label) continue;
                // candidate partners: foreground nodes in the grid neighborhood, id > i
                std::vector<int> targets;
                for (int dz = -r; dz <= r; ++dz)
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            if (!dz && !dy && !dx) continue;
                            int zz = sz + dz, yy = sy + dy, xx = sx + dx;
                            if (zz < 0 || zz >= g.grid.gd || yy < 0 || yy >= g.grid.gh || xx < 0 ||
                                xx >= g.grid.gw)
                                continue;
                            int j = node_id(zz, yy, xx);
                            if (j > i && g.nodes[static_cast<std::size_t>(j)].label) targets.push_back(j);
                        }
                if (targets.empty()) continue;
                auto src = round_to_voxel(mask, g.nodes[static_cast<std::size_t>(i)].pos);
                auto dist = dijkstra_from(mask, src, policy.background_speed, tau);
                for (int j : targets) {
                    auto dv = round_to_voxel(mask, g.nodes[static_cast<std::size_t>(j)].pos);
                    double d =
                        dist[(static_cast<std::size_t>(dv[0]) * mask.ny() + dv[1]) * mask.nx() + dv[2]];
                    if (d <= tau) found[{i, j}] = d;
                }
            }
    g.edges.clear();
    g.weights.clear();
    for (const auto& [key, w] : found) {
        g.edges.push_back({key.first, key.second});
        g.weights.push_back(w);
    }
    return g;
}

VesselGraph build_graph(const Volume& mask, const GridSpec& grid, const EdgePolicy& policy) {
    return build_edges(build_nodes(mask, grid), mask, policy);
}

namespace {

VesselGraph centers_only(const GridSpec& grid, const std::array<int, 3>& vol_shape) {
    if (grid.gd < 1 || grid.gh < 1 || grid.gw < 1)
        throw std::invalid_argument("grid dimensions must be >= 1");
    Volume shape_probe(vol_shape[0], vol_shape[1], vol_shape[2]);
    Tiling t = make_tiling(shape_probe, grid);
    VesselGraph g;
    g.grid = grid;
    g.vol_shape = vol_shape;
    g.pad_lo = t.pad_lo;
    g.padded_shape = t.padded;
    g.has_labels = false;
    for (int sz = 0; sz < grid.gd; ++sz)
        for (int sy = 0; sy < grid.gh; ++sy)
            for (int sx = 0; sx < grid.gw; ++sx) {
                GraphNode n;
                n.pos = {sz * t.sub[0] - t.pad_lo[0] + (t.sub[0] - 1) / 2.0,
                         sy * t.sub[1] - t.pad_lo[1] + (t.sub[1] - 1) / 2.0,
                         sx * t.sub[2] - t.pad_lo[2] + (t.sub[2] - 1) / 2.0};
                n.label = 0;
                g.nodes.push_back(n);
            }
    return g;
}

}  // namespace

VesselGraph full_graph(const GridSpec& grid) {
    return full_graph(grid, {grid.gd, grid.gh, grid.gw});
}

VesselGraph full_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape) {
    VesselGraph g = centers_only(grid, vol_shape);
    int n = g.n_nodes();
    g.edges.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) g.edges.push_back({i, j});
    g.weights.assign(g.edges.size(), 1.0);
    return g;
}

VesselGraph knn_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape, int k) {
    if (k < 1) throw std::invalid_argument("knn_graph: k must be >= 1");
    VesselGraph g = centers_only(grid, vol_shape);
    int n = g.n_nodes();
    std::map<std::pair<int, int>, double> found;
    std::vector<std::pair<double, int>> cand;
    for (int i = 0; i < n; ++i) {
        cand.clear();
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            double d2 = 0;
            for (int a = 0; a < 3; ++a) {
                double d = g.nodes[static_cast<std::size_t>(i)].pos[a] -
                           g.nodes[static_cast<std::size_t>(j)].pos[a];
                d2 += d * d;
            }
            cand.emplace_back(d2, j);
        }
        int kk = std::min<int>(k, static_cast<int>(cand.size()));
        std::partial_sort(cand.begin(), cand.begin() + kk, cand.end());
        for (int c = 0; c < kk; ++c) {
            int j = cand[static_cast<std::size_t>(c)].second;
            found[{std::min(i, j), std::max(i, j)}] = 1.0;
        }
    }
    for (const auto& [key, w] : found) {
        g.edges.push_back({key.first, key.second});
        g.weights.push_back(w);
    }
    return g;
}

VesselGraph empty_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape) {
    return centers_only(grid, vol_shape);
}

AdjPtr build_adjacency_ptr(const VesselGraph& g) {
    return std::make_shared<DirectedAdjacency>(build_adjacency(g));
}

DirectedAdjacency build_adjacency(const VesselGraph& g) {
    int n = g.n_nodes();
    std::vector<std::vector<int>> incoming(static_cast<std::size_t>(n));
    for (const auto& [i, j] : g.edges) {
        incoming[static_cast<std::size_t>(i)].push_back(j);
        incoming[static_cast<std::size_t>(j)].push_back(i);
    }
    DirectedAdjacency adj;
    adj.n_nodes = n;
    adj.seg.resize(static_cast<std::size_t>(n) + 1, 0);
    for (int i = 0; i < n; ++i) {
        auto& in = incoming[static_cast<std::size_t>(i)];
        std::sort(in.begin(), in.end());
        if (in.empty()) in.push_back(i);  // isolated node: self-loop fallback
        adj.seg[static_cast<std::size_t>(i) + 1] =
            adj.seg[static_cast<std::size_t>(i)] + static_cast<int>(in.size());
        for (int j : in) {
            adj.src.push_back(j);
            adj.dst.push_back(i);
        }
    }
    return adj;
}

void write_graph(const std::string& path, const VesselGraph& g) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.precision(17);
    f << "vesselgraph 1\n";
    f << g.n_nodes() << " " << g.n_edges() << " " << g.grid.gd << " " << g.grid.gh << " "
      << g.grid.gw << "\n";
    f << g.vol_shape[0] << " " << g.vol_shape[1] << " " << g.vol_shape[2] << " " << (g.has_labels ? 1 : 0)
      << "\n";
    for (const auto& n : g.nodes)
        f << n.pos[0] << " " << n.pos[1] << " " << n.pos[2] << " " << static_cast<int>(n.label) << "\n";
    for (std::size_t e = 0; e < g.edges.size(); ++e)
        f << g.edges[e][0] << " " << g.edges[e][1] << " " << g.weights[e] << "\n";
    if (!f) throw std::runtime_error("write failed: " + path);
}

VesselGraph read_graph(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::string tag;
    int version = 0;
    f >> tag >> version;
    if (tag != "vesselgraph" || version != 1) throw std::runtime_error(path + ": bad graph header");
    int n = 0, e = 0, labels = 0;
    VesselGraph g;
    f >> n >> e >> g.grid.gd >> g.grid.gh >> g.grid.gw;
    f >> g.vol_shape[0] >> g.vol_shape[1] >> g.vol_shape[2] >> labels;
    g.has_labels = labels != 0;
    Volume probe(g.vol_shape[0], g.vol_shape[1], g.vol_shape[2]);
    Tiling t = make_tiling(probe, g.grid);
    g.pad_lo = t.pad_lo;
    g.padded_shape = t.padded;
    g.nodes.resize(static_cast<std::size_t>(n));
    for (auto& nd : g.nodes) {
        int lb = 0;
        f >> nd.pos[0] >> nd.pos[1] >> nd.pos[2] >> lb;
        nd.label = static_cast<std::uint8_t>(lb);
    }
    g.edges.resize(static_cast<std::size_t>(e));
    g.weights.resize(static_cast<std::size_t>(e));
    for (int k = 0; k < e; ++k) f >> g.edges[static_cast<std::size_t>(k)][0] >> g.edges[static_cast<std::size_t>(k)][1] >> g.weights[static_cast<std::size_t>(k)];
    if (!f) throw std::runtime_error(path + ": truncated graph");
    return g;
}

GridSpec parse_grid(const std::string& s) {
    GridSpec g;
    char x1 = 0, x2 = 0;
    std::istringstream is(s);
    // "HxWxD": in-plane grid first, slice count last
    if (!(is >> g.gh >> x1 >> g.gw >> x2 >> g.gd) || x1 != 'x' || x2 != 'x')
        throw std::invalid_argument("grid spec must look like 32x32x3");
    if (g.gd < 1 || g.gh < 1 || g.gw < 1) throw std::invalid_argument("grid dims must be >= 1");
    return g;
}

}  // namespace vseg
