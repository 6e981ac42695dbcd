#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vseg/core/autograd.hpp"
#include "vseg/volume.hpp"

namespace vseg {

struct GridSpec {
    int gd = 1, gh = 1, gw = 1;
    int count() const { return gd * gh * gw; }
};

struct GraphNode {
    std::array<double, 3> pos{0, 0, 0};  // (z,y,x) voxel coordinates
    std::uint8_t label = 0;              // 1 = foreground sub-volume
};

struct VesselGraph {
    std::vector<GraphNode> nodes;
    std::vector<std::array<int, 2>> edges;  // undirected, canonical i<j order
    std::vector<double> weights;            // travel time per edge (mm)
    GridSpec grid;
    std::array<int, 3> vol_shape{0, 0, 0};  // (nz,ny,nx) the nodes were built over
    std::array<int, 3> pad_lo{0, 0, 0};     // symmetric zero-padding applied before tiling
    std::array<int, 3> padded_shape{0, 0, 0};
    bool has_labels = false;

    int n_nodes() const { return static_cast<int>(nodes.size()); }
    int n_edges() const { return static_cast<int>(edges.size()); }
    // node position mapped to [-1,1]^3 over the padded volume extent
    std::array<double, 3> normalized_pos(int i) const;
    void validate() const;
};

struct EdgePolicy {
    double background_speed = 1e-3;  // speed outside the vessel
    double tau_factor = 3.0;         // threshold = tau_factor * max axis pitch (mm)
    int candidate_radius = 1;        // Chebyshev radius in node-grid space (26-neighborhood)
};

// Foreground sub-volume -> node at the mean vessel-voxel coordinate, label 1;
// background sub-volume -> node at the central voxel, label 0.
VesselGraph build_nodes(const Volume& mask, const GridSpec& grid);

// Shortest arrival time between voxels through a speed field that is 1 inside
// the vessel and policy-epsilon outside (26-connected lattice, mm steps).
double travel_time(const Volume& mask, const std::array<int, 3>& src,
                   const std::array<int, 3>& dst, double background_speed = 1e-3);

// Connects candidate foreground-node pairs whose travel time stays under the
// policy threshold.
VesselGraph build_edges(VesselGraph nodes, const Volume& mask, const EdgePolicy& policy);

VesselGraph build_graph(const Volume& mask, const GridSpec& grid, const EdgePolicy& policy);

// Complete graph over sub-volume centers, unit weights, labels unset.
VesselGraph full_graph(const GridSpec& grid);
VesselGraph full_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape);
// k-nearest-neighbor fallback for dense grids.
VesselGraph knn_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape, int k);
// Nodes only; the edgeless ablation input.
VesselGraph empty_graph(const GridSpec& grid, const std::array<int, 3>& vol_shape);

// Directed incoming-edge structure for attention; isolated nodes receive a
// self-loop so per-node softmax stays well defined.
DirectedAdjacency build_adjacency(const VesselGraph& g);
AdjPtr build_adjacency_ptr(const VesselGraph& g);

void write_graph(const std::string& path, const VesselGraph& g);
VesselGraph read_graph(const std::string& path);

GridSpec parse_grid(const std::string& s);  // "32x32x3" -> {3,32,32}

}  // namespace vseg
