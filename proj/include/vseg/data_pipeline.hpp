#pragma once

#include <string>
#include <vector>

#include "vseg/conditioning.hpp"
#include "vseg/volume.hpp"

namespace vseg {

struct PreprocessOptions {
    int target_size = 256;  // in-plane output, stretch-to-square
    double hu_lo = 0.0;
    double hu_hi = 400.0;
    bool letterbox = false;  // aspect-preserving pad instead of stretching
};

struct PreprocessedCase {
    Volume ct;      // cropped, resized, clipped, normalized to [0,1]
    Volume vessel;  // same geometry, nearest-resampled binary (empty when absent)
    BBox crop;
};

// Liver crop + in-plane resize + HU clip/normalize. The liver mask is an
// input; computing it is out of scope.
PreprocessedCase preprocess_case(const Volume& ct_hu, const Volume& liver_mask,
                                 const Volume* vessel_mask, const PreprocessOptions& opts);

// 2.5D blocks centered on the given annotated slices (each must have both
// neighbors inside the volume).
std::vector<ConditionBlock> condition_blocks(const Volume& ct_norm,
                                             const std::vector<int>& annotated_centers);
ConditionBlock condition_block_at(const Volume& ct_norm, int center);
Tensor mask_block_at(const Volume& vessel, int center);    // [3,H,W]
Tensor central_mask_at(const Volume& vessel, int center);  // [H,W]

// ---------------------------------------------------------------------------
// synthetic vessel phantoms
// ---------------------------------------------------------------------------

struct PhantomBranch {
    std::array<double, 3> start{0, 0, 0};  // (z,y,x)
    std::array<double, 3> dir{0, 0, 1};
    double length = 0, r0 = 0, r1 = 0;
    int parent = -1;
};

struct Phantom {
    Volume ct;    // HU, tube-rendered + noise
    Volume mask;  // binary vessel tube union
    std::vector<PhantomBranch> tree;
};

struct PhantomParams {
    std::uint64_t seed = 0;
    int size = 64;       // in-plane
    int depth = 16;      // slices
    int n_branches = 6;
    double radius_min = 1.2;
    double radius_max = 3.2;
    double noise_sigma = 18.0;   // HU
    double vessel_hu = 300.0;
    double background_hu = 70.0;
};

Phantom generate_phantom(const PhantomParams& p);

// Writes ct/mask NIfTI pairs plus a manifest CSV; returns the manifest path.
std::string write_phantom_dataset(const std::string& out_dir, const PhantomParams& base,
                                  int n_cases);

struct DatasetCase {
    std::string id;
    std::string ct_path;
    std::string mask_path;
};
std::vector<DatasetCase> read_dataset_manifest(const std::string& manifest_csv);

// Deterministic seeded k-fold split; k == n gives leave-one-out. Returns the
// test-case indices of each fold.
std::vector<std::vector<int>> split_dataset(int n_cases, int k, std::uint64_t seed);

}  // namespace vseg
