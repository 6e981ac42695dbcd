#include "vseg/data_pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vseg {

PreprocessedCase preprocess_case(const Volume& ct_hu, const Volume& liver_mask,
                                 const Volume* vessel_mask, const PreprocessOptions& opts) {
    if (!ct_hu.same_shape(liver_mask))
        throw std::invalid_argument("preprocess: ct/liver shape mismatch");
    BBox box = foreground_bbox(liver_mask);
    if (box.empty()) throw std::invalid_argument("preprocess: empty liver mask");
    if (box.z1 - box.z0 < 3) throw std::invalid_argument("preprocess: fewer than 3 slices");
    if (opts.letterbox) {
        // widen the shorter in-plane side so the crop is square before resizing
        int h = box.y1 - box.y0, w = box.x1 - box.x0;
        int side = std::max(h, w);
        auto widen = [](int lo, int hi, int want, int limit) {
            int grow = want - (hi - lo);
            lo = std::max(0, lo - grow / 2);
            hi = std::min(limit, lo + want);
            lo = std::max(0, hi - want);
            return std::pair<int, int>{lo, hi};
        };
        std::tie(box.y0, box.y1) = widen(box.y0, box.y1, side, ct_hu.ny());
        std::tie(box.x0, box.x1) = widen(box.x0, box.x1, side, ct_hu.nx());
    }

    PreprocessedCase out;
    out.crop = box;
    Volume cropped = crop(ct_hu, box);
    out.ct = resize_inplane_bilinear(cropped, opts.target_size, opts.target_size);
    double range = opts.hu_hi - opts.hu_lo;
    for (std::int64_t i = 0; i < out.ct.size(); ++i)
        out.ct[i] = (std::clamp(out.ct[i], opts.hu_lo, opts.hu_hi) - opts.hu_lo) / range;
    if (vessel_mask) {
        if (!vessel_mask->same_shape(ct_hu))
            throw std::invalid_argument("preprocess: vessel mask shape mismatch");
        out.vessel = resize_inplane_nearest(crop(*vessel_mask, box), opts.target_size,
                                            opts.target_size);
    }
    return out;
}

ConditionBlock condition_block_at(const Volume& ct_norm, int center) {
    if (center < 1 || center > ct_norm.nz() - 2)
        throw std::out_of_range("condition block: central slice has no neighbors");
    ConditionBlock c;
    c.slices = Tensor({3, ct_norm.ny(), ct_norm.nx()});
    c.spacing = ct_norm.spacing;
    c.center_index = center;
    std::int64_t plane = static_cast<std::int64_t>(ct_norm.ny()) * ct_norm.nx();
    for (int s = 0; s < 3; ++s)
        for (std::int64_t i = 0; i < plane; ++i)
            c.slices[s * plane + i] = ct_norm[(center - 1 + s) * plane + i];
    return c;
}

std::vector<ConditionBlock> condition_blocks(const Volume& ct_norm,
                                             const std::vector<int>& annotated_centers) {
    std::vector<ConditionBlock> out;
    for (int s : annotated_centers)
        if (s >= 1 && s <= ct_norm.nz() - 2) out.push_back(condition_block_at(ct_norm, s));
    return out;
}

Tensor mask_block_at(const Volume& vessel, int center) {
    if (center < 1 || center > vessel.nz() - 2)
        throw std::out_of_range("mask block: central slice has no neighbors");
    Tensor m({3, vessel.ny(), vessel.nx()});
    std::int64_t plane = static_cast<std::int64_t>(vessel.ny()) * vessel.nx();
    for (int s = 0; s < 3; ++s)
        for (std::int64_t i = 0; i < plane; ++i)
            m[s * plane + i] = vessel[(center - 1 + s) * plane + i] >= 0.5 ? 1.0 : 0.0;
    return m;
}

Tensor central_mask_at(const Volume& vessel, int center) {
    Tensor m({vessel.ny(), vessel.nx()});
    std::int64_t plane = static_cast<std::int64_t>(vessel.ny()) * vessel.nx();
    for (std::int64_t i = 0; i < plane; ++i) m[i] = vessel[center * plane + i] >= 0.5 ? 1.0 : 0.0;
    return m;
}

// ---------------------------------------------------------------------------
// phantom generation
// ---------------------------------------------------------------------------

namespace {

std::array<double, 3> normalize3(std::array<double, 3> v) {
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n < 1e-12) return {0, 0, 1};
    return {v[0] / n, v[1] / n, v[2] / n};
}

// direction jittered by a random rotation, z-component damped to keep the
// tree inside thin volumes
std::array<double, 3> jitter_dir(Rng& rng, const std::array<double, 3>& d, double spread) {
    std::array<double, 3> j{d[0] + spread * rng.normal() * 0.35, d[1] + spread * rng.normal(),
                            d[2] + spread * rng.normal()};
    return normalize3(j);
}

void render_capsule(Volume& mask, const PhantomBranch& b) {
    std::array<double, 3> end{b.start[0] + b.dir[0] * b.length, b.start[1] + b.dir[1] * b.length,
                              b.start[2] + b.dir[2] * b.length};
    double rmax = std::max(b.r0, b.r1);
    int z0 = std::max(0, static_cast<int>(std::floor(std::min(b.start[0], end[0]) - rmax)));
    int z1 = std::min(mask.nz() - 1, static_cast<int>(std::ceil(std::max(b.start[0], end[0]) + rmax)));
    int y0 = std::max(0, static_cast<int>(std::floor(std::min(b.start[1], end[1]) - rmax)));
    int y1 = std::min(mask.ny() - 1, static_cast<int>(std::ceil(std::max(b.start[1], end[1]) + rmax)));
    int x0 = std::max(0, static_cast<int>(std::floor(std::min(b.start[2], end[2]) - rmax)));
    int x1 = std::min(mask.nx() - 1, static_cast<int>(std::ceil(std::max(b.start[2], end[2]) + rmax)));
    for (int z = z0; z <= z1; ++z)
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                // closest point on the segment
                double pz = z - b.start[0], py = y - b.start[1], px = x - b.start[2];
                double t = (pz * b.dir[0] + py * b.dir[1] + px * b.dir[2]) / b.length;
                t = std::clamp(t, 0.0, 1.0);
                double cz = b.start[0] + b.dir[0] * b.length * t - z;
                double cy = b.start[1] + b.dir[1] * b.length * t - y;
                double cx = b.start[2] + b.dir[2] * b.length * t - x;
                double dist = std::sqrt(cz * cz + cy * cy + cx * cx);
                double radius = b.r0 + (b.r1 - b.r0) * t;
                if (dist <= radius) mask.at(z, y, x) = 1.0;
            }
}

}  // namespace

Phantom generate_phantom(const PhantomParams& p) {
    if (p.radius_min <= 0 || p.radius_max < p.radius_min)
        throw std::invalid_argument("phantom: degenerate radius range");
    if (p.n_branches < 1) throw std::invalid_argument("phantom: need at least one branch");
    Rng rng(p.seed);
    Rng tree_rng = rng.fork(1);
    Rng noise_rng = rng.fork(2);

    Phantom ph;
    ph.mask = Volume(p.depth, p.size, p.size);
    ph.ct = Volume(p.depth, p.size, p.size);

    // grow a binary tree of tapering capsules
    PhantomBranch root;
    root.start = {p.depth / 2.0, p.size * (0.3 + 0.4 * tree_rng.uniform()), 2.0};
    root.dir = normalize3({0.0, tree_rng.normal() * 0.15, 1.0});
    root.length = p.size * (0.35 + 0.15 * tree_rng.uniform());
    root.r0 = p.radius_max;
    root.r1 = std::max(p.radius_min, p.radius_max * 0.85);
    ph.tree.push_back(root);

    std::vector<int> frontier{0};
    while (static_cast<int>(ph.tree.size()) < p.n_branches && !frontier.empty()) {
        // expand the frontier branch with the largest end radius
        std::size_t pick = 0;
        for (std::size_t i = 1; i < frontier.size(); ++i)
            if (ph.tree[static_cast<std::size_t>(frontier[i])].r1 >
                ph.tree[static_cast<std::size_t>(frontier[pick])].r1)
                pick = i;
        int parent = frontier[pick];
        frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));
        const PhantomBranch& pb = ph.tree[static_cast<std::size_t>(parent)];
        std::array<double, 3> base{pb.start[0] + pb.dir[0] * pb.length,
                                   pb.start[1] + pb.dir[1] * pb.length,
                                   pb.start[2] + pb.dir[2] * pb.length};
        for (int child = 0; child < 2 && static_cast<int>(ph.tree.size()) < p.n_branches; ++child) {
            PhantomBranch c;
            c.parent = parent;
            c.start = base;
            c.dir = jitter_dir(tree_rng, pb.dir, 0.55 + 0.25 * child);
            // steer back toward the interior when the tip would leave the volume
            std::array<double, 3> lim{static_cast<double>(p.depth), static_cast<double>(p.size),
                                      static_cast<double>(p.size)};
            for (int a = 0; a < 3; ++a) {
                if (base[a] < 0.18 * lim[a]) c.dir[a] = std::abs(c.dir[a]);
                if (base[a] > 0.82 * lim[a]) c.dir[a] = -std::abs(c.dir[a]);
            }
            c.dir = normalize3(c.dir);
            c.length = pb.length * (0.55 + 0.25 * tree_rng.uniform());
            c.r0 = pb.r1 * (0.92 - 0.06 * tree_rng.uniform());
            c.r1 = std::max(p.radius_min * 0.8, c.r0 * (0.78 + 0.1 * tree_rng.uniform()));
            if (c.r0 < p.radius_min * 0.8 || c.length < 2.0) continue;
            ph.tree.push_back(c);
            frontier.push_back(static_cast<int>(ph.tree.size()) - 1);
        }
    }

    for (const auto& b : ph.tree) render_capsule(ph.mask, b);

    // CT: textured background, bright vessels, additive noise
    double fz = 2.0 * 3.14159265358979 * (0.5 + noise_rng.uniform()) / p.depth;
    double fy = 2.0 * 3.14159265358979 * (1.0 + noise_rng.uniform()) / p.size;
    double fx = 2.0 * 3.14159265358979 * (1.0 + noise_rng.uniform()) / p.size;
    for (int z = 0; z < p.depth; ++z)
        for (int y = 0; y < p.size; ++y)
            for (int x = 0; x < p.size; ++x) {
                double texture = 18.0 * std::sin(fz * z + fy * y) + 12.0 * std::cos(fx * x - fy * y);
                double base = ph.mask.at(z, y, x) >= 0.5 ? p.vessel_hu : p.background_hu + texture;
                ph.ct.at(z, y, x) = base + p.noise_sigma * noise_rng.normal();
            }
    return ph;
}

std::string write_phantom_dataset(const std::string& out_dir, const PhantomParams& base,
                                  int n_cases) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    std::string manifest_path = out_dir + "/manifest.csv";
    std::ofstream man(manifest_path);
    if (!man) throw std::runtime_error("cannot write " + manifest_path);
    man << "case,ct,mask,seed\n";
    for (int i = 0; i < n_cases; ++i) {
        PhantomParams p = base;
        p.seed = base.seed + static_cast<std::uint64_t>(i) * 1000003ULL;
        Phantom ph = generate_phantom(p);
        char id[32];
        std::snprintf(id, sizeof(id), "case_%03d", i);
        std::string ct = out_dir + "/" + id + "_ct.nii";
        std::string mask = out_dir + "/" + id + "_mask.nii";
        io::write_nifti(ct, ph.ct);
        io::write_nifti(mask, ph.mask, true);
        man << id << "," << ct << "," << mask << "," << p.seed << "\n";
    }
    if (!man) throw std::runtime_error("manifest write failed");
    return manifest_path;
}

std::vector<DatasetCase> read_dataset_manifest(const std::string& manifest_csv) {
    std::ifstream f(manifest_csv);
    if (!f) throw std::runtime_error("cannot open " + manifest_csv);
    std::vector<DatasetCase> out;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        DatasetCase c;
        std::string seed;
        if (!std::getline(is, c.id, ',') || !std::getline(is, c.ct_path, ',') ||
            !std::getline(is, c.mask_path, ','))
            throw std::runtime_error("bad manifest row: " + line);
        out.push_back(c);
    }
    return out;
}

std::vector<std::vector<int>> split_dataset(int n_cases, int k, std::uint64_t seed) {
    if (k < 1) throw std::invalid_argument("split: k must be >= 1");
    if (k > n_cases) throw std::invalid_argument("split: k exceeds case count");
    std::vector<int> order(static_cast<std::size_t>(n_cases));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (int i = n_cases - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(rng.uniform_int(0, i))]);
    std::vector<std::vector<int>> folds(static_cast<std::size_t>(k));
    for (int i = 0; i < n_cases; ++i)
        folds[static_cast<std::size_t>(i % k)].push_back(order[static_cast<std::size_t>(i)]);
    for (auto& f : folds) std::sort(f.begin(), f.end());
    return folds;
}

}  // namespace vseg
