#pragma once

#include <array>
#include <iosfwd>
#include <vector>

namespace mrcouple {

enum class NodeKind { interior, interface, exterior };

/// Uniform bilinear quadrilateral mesh of one subdomain.
///
/// Subdomain 1 covers (0,1) x (0,1), subdomain 2 covers (0,1) x (-1,0); the
/// shared interface is y = 0. Exterior nodes (homogeneous Dirichlet, including
/// the interface endpoints x = 0 and x = 1) carry no unknown.
struct Mesh {
    int subdomain = 1;
    int nx = 0;
    int ny = 0;
    double h = 0.0;  ///< element diameter

    std::vector<std::array<double, 2>> nodes;
    std::vector<std::array<int, 4>> elements;  ///< counter-clockwise from lower-left
    std::vector<NodeKind> kind;
    std::vector<int> dof_of_node;  ///< -1 for exterior nodes
    std::vector<int> node_of_dof;

    int node_count() const { return static_cast<int>(nodes.size()); }
    int element_count() const { return static_cast<int>(elements.size()); }
    int dof_count() const { return static_cast<int>(node_of_dof.size()); }
    int node_index(int i, int j) const { return j * (nx + 1) + i; }
    double element_area(int e) const;
};

/// Builds the structured mesh; throws StructuralError when a count is < 1.
Mesh build_mesh(int subdomain, int nx, int ny);

/// Shared interface numbering (interior interface nodes ordered by x).
struct InterfaceMap {
    std::vector<double> x;                        ///< coordinates of interface unknowns
    std::array<std::vector<int>, 2> dof_of_slot;  ///< interface slot -> subdomain dof
    std::array<std::vector<int>, 2> slot_of_dof;  ///< subdomain dof -> slot or -1

    int size() const { return static_cast<int>(x.size()); }
};

/// Throws MatchError when the interface node coordinates differ.
InterfaceMap match_interfaces(const Mesh& m1, const Mesh& m2);

/// Plain-text dump: a '#' header line, then `node id x y kind dof` and
/// `element id n0 n1 n2 n3` records.
void write_mesh(std::ostream& os, const Mesh& mesh);

}  // namespace mrcouple
