#include "vseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace vseg {

bool Volume::is_binary() const {
    for (double v : data_)
        if (v != 0.0 && v != 1.0) return false;
    return true;
}

std::int64_t Volume::count_nonzero() const {
    std::int64_t n = 0;
    for (double v : data_)
        if (v != 0.0) ++n;
    return n;
}

Volume resize_inplane_bilinear(const Volume& v, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive target");
    Volume out(v.nz(), out_h, out_w);
    out.spacing = {v.spacing[0], v.spacing[1] * v.ny() / out_h, v.spacing[2] * v.nx() / out_w};
    double sy = out_h > 1 ? static_cast<double>(v.ny() - 1) / (out_h - 1) : 0.0;
    double sx = out_w > 1 ? static_cast<double>(v.nx() - 1) / (out_w - 1) : 0.0;
    for (int z = 0; z < v.nz(); ++z)
        for (int y = 0; y < out_h; ++y) {
            double fy = y * sy;
            int y0 = std::min(static_cast<int>(fy), v.ny() - 1);
            int y1 = std::min(y0 + 1, v.ny() - 1);
            double ty = fy - y0;
            for (int x = 0; x < out_w; ++x) {
                double fx = x * sx;
                int x0 = std::min(static_cast<int>(fx), v.nx() - 1);
                int x1 = std::min(x0 + 1, v.nx() - 1);
                double tx = fx - x0;
                double a = v.at(z, y0, x0) * (1 - tx) + v.at(z, y0, x1) * tx;
                double b = v.at(z, y1, x0) * (1 - tx) + v.at(z, y1, x1) * tx;
                out.at(z, y, x) = a * (1 - ty) + b * ty;
            }
        }
    return out;
}

Volume resize_inplane_nearest(const Volume& v, int out_h, int out_w) {
    if (out_h <= 0 || out_w <= 0) throw std::invalid_argument("resize: non-positive target");
    Volume out(v.nz(), out_h, out_w);
    out.spacing = {v.spacing[0], v.spacing[1] * v.ny() / out_h, v.spacing[2] * v.nx() / out_w};
    for (int z = 0; z < v.nz(); ++z)
        for (int y = 0; y < out_h; ++y) {
            int sy = std::min(static_cast<int>((y + 0.5) * v.ny() / out_h), v.ny() - 1);
            for (int x = 0; x < out_w; ++x) {
                int sx = std::min(static_cast<int>((x + 0.5) * v.nx() / out_w), v.nx() - 1);
                out.at(z, y, x) = v.at(z, sy, sx);
            }
        }
    return out;
}

BBox foreground_bbox(const Volume& mask) {
    BBox b{mask.nz(), 0, mask.ny(), 0, mask.nx(), 0};
    bool any = false;
    for (int z = 0; z < mask.nz(); ++z)
        for (int y = 0; y < mask.ny(); ++y)
            for (int x = 0; x < mask.nx(); ++x)
                if (mask.at(z, y, x) != 0.0) {
                    any = true;
                    b.z0 = std::min(b.z0, z);
                    b.z1 = std::max(b.z1, z + 1);
                    b.y0 = std::min(b.y0, y);
                    b.y1 = std::max(b.y1, y + 1);
                    b.x0 = std::min(b.x0, x);
                    b.x1 = std::max(b.x1, x + 1);
                }
    if (!any) return BBox{};
    return b;
}

Volume crop(const Volume& v, const BBox& b) {
    if (b.empty()) throw std::invalid_argument("crop: empty box");
    Volume out(b.z1 - b.z0, b.y1 - b.y0, b.x1 - b.x0);
    out.spacing = v.spacing;
    for (int z = b.z0; z < b.z1; ++z)
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x) out.at(z - b.z0, y - b.y0, x - b.x0) = v.at(z, y, x);
    return out;
}

namespace io {

namespace {

#pragma pack(push, 1)
struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;

}  // namespace

Volume read_nifti(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    NiftiHeader h{};
    f.read(reinterpret_cast<char*>(&h), sizeof(h));
    if (!f || h.sizeof_hdr != 348)
        throw std::runtime_error(path + ": not a NIfTI-1 file");
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw std::runtime_error(path + ": bad NIfTI magic");
    if (h.dim[0] < 3) {
        // promote 2D to a single-slice volume
        h.dim[3] = 1;
    }
    int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx <= 0 || ny <= 0 || nz <= 0) throw std::runtime_error(path + ": bad dims");
    std::int64_t n = static_cast<std::int64_t>(nx) * ny * nz;

    Volume v(nz, ny, nx);
    v.spacing = {h.pixdim[3] != 0 ? h.pixdim[3] : 1.0, h.pixdim[2] != 0 ? h.pixdim[2] : 1.0,
                 h.pixdim[1] != 0 ? h.pixdim[1] : 1.0};

    f.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);
    auto read_as = [&](auto tag) {
        using T = decltype(tag);
        std::vector<T> buf(static_cast<std::size_t>(n));
        f.read(reinterpret_cast<char*>(buf.data()), n * static_cast<std::int64_t>(sizeof(T)));
        if (!f) throw std::runtime_error(path + ": truncated data");
        // nifti fastest axis is x; Volume is (z,y,x) row-major in x, same order
        for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<double>(buf[static_cast<std::size_t>(i)]);
    };
    switch (h.datatype) {
        case DT_UINT8: read_as(std::uint8_t{}); break;
        case DT_INT16: read_as(std::int16_t{}); break;
        case DT_INT32: read_as(std::int32_t{}); break;
        case DT_FLOAT32: read_as(float{}); break;
        case DT_FLOAT64: read_as(double{}); break;
        default: throw std::runtime_error(path + ": unsupported datatype " + std::to_string(h.datatype));
    }
    double slope = h.scl_slope == 0.0f ? 1.0 : h.scl_slope;
    if (slope != 1.0 || h.scl_inter != 0.0f)
        for (std::int64_t i = 0; i < n; ++i) v[i] = v[i] * slope + h.scl_inter;
    return v;
}

void write_nifti(const std::string& path, const Volume& v, bool as_uint8) {
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(v.nx());
    h.dim[2] = static_cast<std::int16_t>(v.ny());
    h.dim[3] = static_cast<std::int16_t>(v.nz());
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    h.datatype = as_uint8 ? DT_UINT8 : DT_FLOAT64;
    h.bitpix = as_uint8 ? 8 : 64;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = static_cast<float>(v.spacing[2]);
    h.pixdim[2] = static_cast<float>(v.spacing[1]);
    h.pixdim[3] = static_cast<float>(v.spacing[0]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // mm
    h.sform_code = 0;
    h.qform_code = 0;
    std::memcpy(h.magic, "n+1", 4);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(reinterpret_cast<const char*>(&h), sizeof(h));
    const char pad[4] = {0, 0, 0, 0};
    f.write(pad, 4);
    if (as_uint8) {
        std::vector<std::uint8_t> buf(static_cast<std::size_t>(v.size()));
        for (std::int64_t i = 0; i < v.size(); ++i)
            buf[static_cast<std::size_t>(i)] = v[i] != 0.0 ? 1 : 0;
        f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    } else {
        f.write(reinterpret_cast<const char*>(v.data()), v.size() * static_cast<std::int64_t>(sizeof(double)));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

}  // namespace io

}  // namespace vseg
