#include "mrcouple/mesh.hpp"

#include "mrcouple/error.hpp"

#include <spdlog/spdlog.h>

#include <cmath>
#include <ostream>
#include <string>

namespace mrcouple {

double Mesh::element_area(int e) const {
    const auto& el = elements[e];
    // Shoelace formula over the four corners.
    double area = 0.0;
    for (int k = 0; k < 4; ++k) {
        const auto& p = nodes[el[k]];
        const auto& q = nodes[el[(k + 1) % 4]];
        area += p[0] * q[1] - q[0] * p[1];
    }
    return 0.5 * area;
}

Mesh build_mesh(int subdomain, int nx, int ny) {
    if (subdomain != 1 && subdomain != 2) {
        throw StructuralError("build_mesh: subdomain must be 1 or 2");
    }
    if (nx < 1 || ny < 1) {
        throw StructuralError("build_mesh: element counts must be >= 1 (got " + std::to_string(nx) +
                              " x " + std::to_string(ny) + ")");
    }
    Mesh m;
    m.subdomain = subdomain;
    m.nx = nx;
    m.ny = ny;
    m.h = std::sqrt(1.0 / (nx * nx) + 1.0 / (ny * ny));

    const double y0 = subdomain == 1 ? 0.0 : -1.0;
    const int interface_row = subdomain == 1 ? 0 : ny;
    const int far_row = subdomain == 1 ? ny : 0;

    m.nodes.reserve((nx + 1) * (ny + 1));
    for (int j = 0; j <= ny; ++j) {
        for (int i = 0; i <= nx; ++i) {
            const double x = static_cast<double>(i) / nx;
            // Interface row is placed at exactly y = 0.
            const double y = j == interface_row ? 0.0 : y0 + static_cast<double>(j) / ny;
            m.nodes.push_back({x, y});

            NodeKind k = NodeKind::interior;
            if (i == 0 || i == nx || j == far_row) {
                k = NodeKind::exterior;
            } else if (j == interface_row) {
                k = NodeKind::interface;
            }
            m.kind.push_back(k);
        }
    }

    m.dof_of_node.assign(m.nodes.size(), -1);
    for (int n = 0; n < m.node_count(); ++n) {
        if (m.kind[n] != NodeKind::exterior) {
            m.dof_of_node[n] = static_cast<int>(m.node_of_dof.size());
            m.node_of_dof.push_back(n);
        }
    }

    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            m.elements.push_back({m.node_index(i, j), m.node_index(i + 1, j),
                                  m.node_index(i + 1, j + 1), m.node_index(i, j + 1)});
        }
    }
    return m;
}

InterfaceMap match_interfaces(const Mesh& m1, const Mesh& m2) {
    if (m1.subdomain == m2.subdomain) {
        throw MatchError("match_interfaces: both meshes belong to subdomain " +
                         std::to_string(m1.subdomain));
    }
    const Mesh& a = m1.subdomain == 1 ? m1 : m2;
    const Mesh& b = m1.subdomain == 1 ? m2 : m1;
    auto interface_dofs = [](const Mesh& m) {
        std::vector<int> dofs;
        for (int d = 0; d < m.dof_count(); ++d) {
            if (m.kind[m.node_of_dof[d]] == NodeKind::interface) dofs.push_back(d);
        }
        // Interface dofs are generated in increasing x already.
        return dofs;
    };
    const std::vector<int> da = interface_dofs(a);
    const std::vector<int> db = interface_dofs(b);
    if (da.size() != db.size()) {
        throw MatchError("match_interfaces: interface node counts differ (" +
                         std::to_string(da.size()) + " vs " + std::to_string(db.size()) +
                         "); non-matching interface meshes are not supported");
    }

    InterfaceMap map;
    map.slot_of_dof[0].assign(a.dof_count(), -1);
    map.slot_of_dof[1].assign(b.dof_count(), -1);
    for (std::size_t s = 0; s < da.size(); ++s) {
        const double xa = a.nodes[a.node_of_dof[da[s]]][0];
        const double xb = b.nodes[b.node_of_dof[db[s]]][0];
        if (std::abs(xa - xb) > 1e-12) {
            throw MatchError("match_interfaces: interface node " + std::to_string(s) +
                             " differs in x (" + std::to_string(xa) + " vs " +
                             std::to_string(xb) + ")");
        }
        map.x.push_back(xa);
        map.dof_of_slot[0].push_back(da[s]);
        map.dof_of_slot[1].push_back(db[s]);
        map.slot_of_dof[0][da[s]] = static_cast<int>(s);
        map.slot_of_dof[1][db[s]] = static_cast<int>(s);
    }
    if (map.size() == 0) {
        spdlog::warn("match_interfaces: interface has no unknowns (nx = 1); subdomains are decoupled");
    }
    return map;
}

void write_mesh(std::ostream& os, const Mesh& mesh) {
    os << "# mrcouple-mesh subdomain=" << mesh.subdomain << " nx=" << mesh.nx << " ny=" << mesh.ny
       << " nodes=" << mesh.node_count() << " elements=" << mesh.element_count()
       << " records: node id x y kind dof | element id n0 n1 n2 n3\n";
    for (int n = 0; n < mesh.node_count(); ++n) {
        const char* k = mesh.kind[n] == NodeKind::interior    ? "interior"
                        : mesh.kind[n] == NodeKind::interface ? "interface"
                                                              : "exterior";
        os << "node " << n << ' ' << mesh.nodes[n][0] << ' ' << mesh.nodes[n][1] << ' ' << k << ' '
           << mesh.dof_of_node[n] << '\n';
    }
    for (int e = 0; e < mesh.element_count(); ++e) {
        const auto& el = mesh.elements[e];
        os << "element " << e << ' ' << el[0] << ' ' << el[1] << ' ' << el[2] << ' ' << el[3] << '\n';
    }
}

}  // namespace mrcouple
