#include "vseg/metrics.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace vseg {

namespace {

void check_pair(const Volume& pred, const Volume& gt, const char* op) {
    if (!pred.same_shape(gt)) throw std::invalid_argument(std::string(op) + ": shape mismatch");
    if (!pred.is_binary() || !gt.is_binary())
        throw std::invalid_argument(std::string(op) + ": volumes must be binary");
}

}  // namespace

Components connected_components26(const Volume& mask) {
    const int nz = mask.nz(), ny = mask.ny(), nx = mask.nx();
    Components out;
    out.labels.assign(static_cast<std::size_t>(mask.size()), 0);
    auto flat = [&](int z, int y, int x) { return (static_cast<std::int64_t>(z) * ny + y) * nx + x; };
    std::deque<std::int64_t> queue;
    for (std::int64_t seed = 0; seed < mask.size(); ++seed) {
        if (mask[seed] < 0.5 || out.labels[static_cast<std::size_t>(seed)] != 0) continue;
        int label = out.count() + 1;
        out.sizes.push_back(0);
        queue.push_back(seed);
        out.labels[static_cast<std::size_t>(seed)] = label;
        while (!queue.empty()) {
            std::int64_t i = queue.front();
            queue.pop_front();
            ++out.sizes.back();
            int x = static_cast<int>(i % nx), y = static_cast<int>((i / nx) % ny),
                z = static_cast<int>(i / (static_cast<std::int64_t>(nx) * ny));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dz && !dy && !dx) continue;
                        int zz = z + dz, yy = y + dy, xx = x + dx;
                        if (zz < 0 || zz >= nz || yy < 0 || yy >= ny || xx < 0 || xx >= nx) continue;
                        std::int64_t j = flat(zz, yy, xx);
                        if (mask[j] >= 0.5 && out.labels[static_cast<std::size_t>(j)] == 0) {
                            out.labels[static_cast<std::size_t>(j)] = label;
                            queue.push_back(j);
                        }
                    }
        }
    }
    return out;
}

namespace {

// Topology test on the 3x3x3 neighborhood of p (Malandain & Bertrand):
// p is simple iff the foreground of N26*(p) is one 26-component and the
// background of N18(p) 6-adjacent to p is one 6-component.
bool is_simple_voxel(const Volume& m, int z, int y, int x) {
    bool fg[3][3][3];
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                int zz = z + dz, yy = y + dy, xx = x + dx;
                fg[dz + 1][dy + 1][dx + 1] = m.in_bounds(zz, yy, xx) && m.at(zz, yy, xx) >= 0.5;
            }

    // C*: 26-components of foreground in N26*(p)
    int comp_fg = 0;
    bool seen[3][3][3] = {};
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
                if ((a == 1 && b == 1 && c == 1) || !fg[a][b][c] || seen[a][b][c]) continue;
                ++comp_fg;
                std::deque<std::array<int, 3>> q{{a, b, c}};
                seen[a][b][c] = true;
                while (!q.empty()) {
                    auto [ca, cb, cc] = q.front();
                    q.pop_front();
                    for (int da = -1; da <= 1; ++da)
                        for (int db = -1; db <= 1; ++db)
                            for (int dc = -1; dc <= 1; ++dc) {
                                int na = ca + da, nb = cb + db, nc = cc + dc;
                                if (na < 0 || na > 2 || nb < 0 || nb > 2 || nc < 0 || nc > 2) continue;
                                if (na == 1 && nb == 1 && nc == 1) continue;
                                if (fg[na][nb][nc] && !seen[na][nb][nc]) {
                                    seen[na][nb][nc] = true;
                                    q.push_back({na, nb, nc});
                                }
                            }
                }
            }
    if (comp_fg != 1) return false;

    // C-bar: 6-components of background within N18(p) that touch a face neighbor
    auto in18 = [](int a, int b, int c) {
        int da = std::abs(a - 1), db = std::abs(b - 1), dc = std::abs(c - 1);
        int sum = da + db + dc;
        return sum >= 1 && sum <= 2;
    };
    bool seen_bg[3][3][3] = {};
    int comp_bg = 0;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
                if (!in18(a, b, c) || fg[a][b][c] || seen_bg[a][b][c]) continue;
                // only seed components that are 6-adjacent to p
                if (std::abs(a - 1) + std::abs(b - 1) + std::abs(c - 1) != 1) continue;
                ++comp_bg;
                std::deque<std::array<int, 3>> q{{a, b, c}};
                seen_bg[a][b][c] = true;
                while (!q.empty()) {
                    auto [ca, cb, cc] = q.front();
                    q.pop_front();
                    constexpr int face[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                                {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
                    for (const auto& f : face) {
                        int na = ca + f[0], nb = cb + f[1], nc = cc + f[2];
                        if (na < 0 || na > 2 || nb < 0 || nb > 2 || nc < 0 || nc > 2) continue;
                        if (!in18(na, nb, nc) || fg[na][nb][nc] || seen_bg[na][nb][nc]) continue;
                        seen_bg[na][nb][nc] = true;
                        q.push_back({na, nb, nc});
                    }
                }
            }
    return comp_bg == 1;
}

int count_fg_neighbors26(const Volume& m, int z, int y, int x) {
    int n = 0;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (!dz && !dy && !dx) continue;
                int zz = z + dz, yy = y + dy, xx = x + dx;
                if (m.in_bounds(zz, yy, xx) && m.at(zz, yy, xx) >= 0.5) ++n;
            }
    return n;
}

}  // namespace

Volume skeletonize3d(const Volume& mask) {
    if (!mask.is_binary()) throw std::invalid_argument("skeletonize3d: mask must be binary");
    Volume s = mask;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int z = 0; z < s.nz(); ++z)
            for (int y = 0; y < s.ny(); ++y)
                for (int x = 0; x < s.nx(); ++x) {
                    if (s.at(z, y, x) < 0.5) continue;
                    if (count_fg_neighbors26(s, z, y, x) <= 1) continue;  // endpoint: keep
                    if (is_simple_voxel(s, z, y, x)) {
                        s.at(z, y, x) = 0.0;
                        changed = true;
                    }
                }
    }
    return s;
}

OverlapMetrics overlap_metrics(const Volume& pred, const Volume& gt) {
    check_pair(pred, gt, "overlap_metrics");
    std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::int64_t i = 0; i < pred.size(); ++i) {
        bool p = pred[i] >= 0.5, g = gt[i] >= 0.5;
        if (p && g) ++tp;
        else if (p && !g) ++fp;
        else if (!p && g) ++fn;
        else ++tn;
    }
    OverlapMetrics m;
    if (2 * tp + fp + fn > 0) m.dsc = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    if (tp + fn > 0) m.sen = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (tn + fp > 0) m.spe = static_cast<double>(tn) / static_cast<double>(tn + fp);
    return m;
}

std::optional<double> cl_dice(const Volume& pred, const Volume& gt) {
    check_pair(pred, gt, "cl_dice");
    Volume sp = skeletonize3d(pred);
    Volume sg = skeletonize3d(gt);
    std::int64_t np = sp.count_nonzero(), ng = sg.count_nonzero();
    if (np == 0 || ng == 0) return std::nullopt;
    std::int64_t p_in = 0, g_in = 0;
    for (std::int64_t i = 0; i < sp.size(); ++i) {
        if (sp[i] >= 0.5 && gt[i] >= 0.5) ++p_in;
        if (sg[i] >= 0.5 && pred[i] >= 0.5) ++g_in;
    }
    double tprec = static_cast<double>(p_in) / static_cast<double>(np);
    double tsens = static_cast<double>(g_in) / static_cast<double>(ng);
    if (tprec + tsens == 0.0) return 0.0;
    return 2.0 * tprec * tsens / (tprec + tsens);
}

namespace {

int count_qualifying(const Volume& mask, double min_volume_mm3) {
    auto comps = connected_components26(mask);
    double voxel_vol = mask.spacing[0] * mask.spacing[1] * mask.spacing[2];
    int n = 0;
    for (std::int64_t s : comps.sizes)
        if (static_cast<double>(s) * voxel_vol > min_volume_mm3) ++n;
    return n;
}

}  // namespace

ConnectivityResult connectivity(const Volume& pred, const Volume& gt, double min_volume_mm3) {
    check_pair(pred, gt, "connectivity");
    ConnectivityResult r;
    r.comp_pred = count_qualifying(pred, min_volume_mm3);
    r.comp_gt = count_qualifying(gt, min_volume_mm3);
    if (r.comp_gt == 0) return r;  // undefined, reported missing
    r.con = static_cast<double>(r.comp_pred) / static_cast<double>(r.comp_gt);
    r.excluded = *r.con < 1.0;
    return r;
}

MetricReport evaluate_case(const std::string& case_id, const Volume& pred, const Volume& gt,
                           double min_volume_mm3) {
    MetricReport rep;
    rep.case_id = case_id;
    rep.overlap = overlap_metrics(pred, gt);
    rep.cldice = cl_dice(pred, gt);
    rep.con = connectivity(pred, gt, min_volume_mm3);
    return rep;
}

namespace {

std::string opt_str(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(10);
    os << *v;
    return os.str();
}

}  // namespace

void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "case,dsc,sen,spe,cldice,con,comp_pred,comp_gt,excluded\n";
    for (const auto& r : rows) {
        f << r.case_id << "," << opt_str(r.overlap.dsc) << "," << opt_str(r.overlap.sen) << ","
          << opt_str(r.overlap.spe) << "," << opt_str(r.cldice) << "," << opt_str(r.con.con) << ","
          << r.con.comp_pred << "," << r.con.comp_gt << "," << (r.con.excluded ? 1 : 0) << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

MeanStd aggregate(const std::vector<std::optional<double>>& values) {
    std::vector<double> v;
    for (const auto& o : values)
        if (o) v.push_back(*o);
    MeanStd out;
    if (v.empty()) return out;
    double s = 0.0;
    for (double x : v) s += x;
    double mean = s / static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    out.mean = mean;
    out.stddev = std::sqrt(var / static_cast<double>(v.size()));
    return out;
}

}  // namespace vseg
