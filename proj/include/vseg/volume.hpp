#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace vseg {

// 3D scalar grid with per-axis physical spacing in mm. Index order (z,y,x).
class Volume {
public:
    Volume() = default;
    Volume(int nz, int ny, int nx, double fill = 0.0)
        : nz_(nz), ny_(ny), nx_(nx), data_(static_cast<std::size_t>(nz) * ny * nx, fill) {}

    int nz() const { return nz_; }
    int ny() const { return ny_; }
    int nx() const { return nx_; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double& at(int z, int y, int x) { return data_[idx(z, y, x)]; }
    double at(int z, int y, int x) const { return data_[idx(z, y, x)]; }
    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool in_bounds(int z, int y, int x) const {
        return z >= 0 && z < nz_ && y >= 0 && y < ny_ && x >= 0 && x < nx_;
    }
    bool is_binary() const;
    std::int64_t count_nonzero() const;
    bool same_shape(const Volume& o) const {
        return nz_ == o.nz_ && ny_ == o.ny_ && nx_ == o.nx_;
    }

    // spacing in mm, (z,y,x) order
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

private:
    std::size_t idx(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * ny_ + y) * nx_ + x;
    }
    int nz_ = 0, ny_ = 0, nx_ = 0;
    std::vector<double> data_;
};

// In-plane (y,x) resize of every slice.
Volume resize_inplane_bilinear(const Volume& v, int out_h, int out_w);
Volume resize_inplane_nearest(const Volume& v, int out_h, int out_w);

struct BBox {
    int z0 = 0, z1 = 0, y0 = 0, y1 = 0, x0 = 0, x1 = 0;  // half-open
    bool empty() const { return z1 <= z0 || y1 <= y0 || x1 <= x0; }
};

BBox foreground_bbox(const Volume& mask);
Volume crop(const Volume& v, const BBox& b);

namespace io {

// Minimal NIfTI-1 single-file (.nii) support; spacing round-trips through pixdim.
Volume read_nifti(const std::string& path);
void write_nifti(const std::string& path, const Volume& v, bool as_uint8 = false);

}  // namespace io

}  // namespace vseg
