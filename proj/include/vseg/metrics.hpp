#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vseg/volume.hpp"

namespace vseg {

// 26-connected component labelling. Returns one label per voxel (0 =
// background, components numbered from 1) and the voxel count per component.
struct Components {
    std::vector<int> labels;
    std::vector<std::int64_t> sizes;  // sizes[k] is the size of component k+1
    int count() const { return static_cast<int>(sizes.size()); }
};

Components connected_components26(const Volume& mask);

// Iterative 3D thinning: removes simple non-endpoint voxels in deterministic
// raster order until stable. The result is a subset of the input mask.
Volume skeletonize3d(const Volume& mask);

struct OverlapMetrics {
    std::optional<double> dsc, sen, spe;
};

OverlapMetrics overlap_metrics(const Volume& pred, const Volume& gt);

std::optional<double> cl_dice(const Volume& pred, const Volume& gt);

struct ConnectivityResult {
    std::optional<double> con;
    int comp_pred = 0;
    int comp_gt = 0;
    bool excluded = false;  // over-connected (con < 1.0)
};

ConnectivityResult connectivity(const Volume& pred, const Volume& gt, double min_volume_mm3 = 120.0);

struct MetricReport {
    std::string case_id;
    OverlapMetrics overlap;
    std::optional<double> cldice;
    ConnectivityResult con;
};

MetricReport evaluate_case(const std::string& case_id, const Volume& pred, const Volume& gt,
                           double min_volume_mm3 = 120.0);

// CSV columns: case,dsc,sen,spe,cldice,con,comp_pred,comp_gt,excluded
void write_report_csv(const std::string& path, const std::vector<MetricReport>& rows);

struct MeanStd {
    std::optional<double> mean, stddev;
};
MeanStd aggregate(const std::vector<std::optional<double>>& values);

}  // namespace vseg
