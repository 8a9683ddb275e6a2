#include "trsflow/solver/kernels.hpp"

#include <cmath>

namespace trsflow::solver {

using spacetree::kNumFields;
using spacetree::kT;
using spacetree::Layout;

namespace {

template <class F>
void for_interior(const Layout& L, F&& f) {
  const auto& s = L.s();
  for (int k = 0; k < s[2]; ++k) {
    for (int j = 0; j < s[1]; ++j) {
      for (int i = 0; i < s[0]; ++i) f(L.idx(i, j, k));
    }
  }
}

// Convected value on a face; `side` is +1 for the high face of p.
double face_value(CellCode c, double un, int side, double phi_p, double phi_nb, double upwind) {
  switch (c) {
    case CellCode::kFluid: {
      const double up = un * side >= 0.0 ? phi_p : phi_nb;
      return upwind * up + (1.0 - upwind) * 0.5 * (phi_p + phi_nb);
    }
    case CellCode::kInflow: return phi_nb;
    case CellCode::kOutflow: return phi_p;
    default: return 0.0;
  }
}

}  // namespace

double face_velocity(const DGrid& g, ConstField ua, std::ptrdiff_t p, std::ptrdiff_t nb) {
  switch (g.code(nb)) {
    case CellCode::kFluid: return 0.5 * (ua[static_cast<std::size_t>(p)] + ua[static_cast<std::size_t>(nb)]);
    case CellCode::kInflow: return ua[static_cast<std::size_t>(nb)];
    case CellCode::kOutflow: return ua[static_cast<std::size_t>(p)];
    default: return 0.0;
  }
}

void momentum_predictor(DGrid& g, const FluidProperties& fp, const SolverParams& sp, int dims) {
  const Layout& L = g.layout();
  const Vec3 h = cell_size(g);
  const double nu = fp.nu();
  const Velocity u{g.current.field(0), g.current.field(1), g.current.field(2)};
  const ConstField T = g.current.field(kT);
  for_interior(L, [&](std::ptrdiff_t p) {
    const auto up = static_cast<std::size_t>(p);
    if (!spacetree::is_fluid(g.code(p))) {
      for (int c = 0; c < 3; ++c) g.temp.at(c, p) = u[c][up];
      return;
    }
    for (int c = 0; c < 3; ++c) {
      const ConstField phi = u[static_cast<std::size_t>(c)];
      double conv = 0.0;
      double diff = 0.0;
      for (int a = 0; a < dims; ++a) {
        const double h2 = h[a] * h[a];
        for (const int side : {-1, 1}) {
          const std::ptrdiff_t nb = p + side * L.stride(a);
          const auto un_ = static_cast<std::size_t>(nb);
          const CellCode code = g.code(nb);
          const double un = face_velocity(g, u[static_cast<std::size_t>(a)], p, nb);
          conv -= side * un * face_value(code, un, side, phi[up], phi[un_], sp.upwind) / h[a];
          switch (code) {
            case CellCode::kFluid: diff += (phi[un_] - phi[up]) / h2; break;
            case CellCode::kInflow: diff += 2.0 * (phi[un_] - phi[up]) / h2; break;
            case CellCode::kOutflow: break;
            case CellCode::kWallSlip:
              if (c == a) diff -= 2.0 * phi[up] / h2;
              break;
            default: diff -= 2.0 * phi[up] / h2; break;
          }
        }
      }
      const double buoy = fp.beta * (T[up] - fp.T_inf) * fp.g[c];
      g.temp.at(c, p) = phi[up] + sp.dt * (conv + nu * diff + buoy);
    }
  });
}

void energy_step(DGrid& g, FieldBuffer& out, const FluidProperties& fp, const SolverParams& sp, int dims) {
  const Layout& L = g.layout();
  const Vec3 h = cell_size(g);
  const double alpha = fp.alpha();
  const double source = fp.q_int / (fp.rho_inf * fp.c_p);
  const Velocity u{g.current.field(0), g.current.field(1), g.current.field(2)};
  const ConstField T = g.current.field(kT);
  for_interior(L, [&](std::ptrdiff_t p) {
    const auto up = static_cast<std::size_t>(p);
    if (!spacetree::is_fluid(g.code(p))) {
      out.at(kT, p) = T[up];
      return;
    }
    double conv = 0.0;
    double diff = 0.0;
    for (int a = 0; a < dims; ++a) {
      const double h2 = h[a] * h[a];
      for (const int side : {-1, 1}) {
        const std::ptrdiff_t nb = p + side * L.stride(a);
        const auto un_ = static_cast<std::size_t>(nb);
        const CellCode code = g.code(nb);
        // Donor cell in advective form: only inflowing faces contribute, so a
        // uniform T stays uniform and the update is a convex combination for
        // CFL <= 1. Central blending is left out; without conduction it grows.
        const double un = face_velocity(g, u[static_cast<std::size_t>(a)], p, nb);
        if (side * un < 0.0 && (code == CellCode::kFluid || code == CellCode::kInflow)) {
          conv += std::abs(un) * (T[un_] - T[up]) / h[a];
        }
        if (code == CellCode::kFluid) {
          diff += (T[un_] - T[up]) / h2;
        } else if (code == CellCode::kInflow || code == CellCode::kTempDirichlet) {
          diff += 2.0 * (T[un_] - T[up]) / h2;
        }
      }
    }
    out.at(kT, p) = T[up] + sp.dt * (conv + alpha * diff + source);
  });
}

void divergence(const DGrid& g, const Velocity& vel, std::span<double> out, int dims) {
  const Layout& L = g.layout();
  const Vec3 h = cell_size(g);
  for_interior(L, [&](std::ptrdiff_t p) {
    double d = 0.0;
    if (spacetree::is_fluid(g.code(p))) {
      for (int a = 0; a < dims; ++a) {
        const auto& ua = vel[static_cast<std::size_t>(a)];
        d += (face_velocity(g, ua, p, p + L.stride(a)) - face_velocity(g, ua, p, p - L.stride(a))) / h[a];
      }
    }
    out[static_cast<std::size_t>(p)] = d;
  });
}

void gradient(const DGrid& g, ConstField x, const std::array<std::span<double>, 3>& out, int dims) {
  const Layout& L = g.layout();
  const Vec3 h = cell_size(g);
  const auto face = [&](std::ptrdiff_t p, std::ptrdiff_t nb) {
    switch (g.code(nb)) {
      case CellCode::kFluid: return 0.5 * (x[static_cast<std::size_t>(p)] + x[static_cast<std::size_t>(nb)]);
      case CellCode::kOutflow: return 0.0;
      default: return x[static_cast<std::size_t>(p)];
    }
  };
  for_interior(L, [&](std::ptrdiff_t p) {
    const bool fluid = spacetree::is_fluid(g.code(p));
    for (int a = 0; a < 3; ++a) {
      double v = 0.0;
      if (fluid && a < dims) v = (face(p, p + L.stride(a)) - face(p, p - L.stride(a))) / h[a];
      out[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)] = v;
    }
  });
}

namespace {

// Off-diagonal sum and diagonal of the compact Laplacian at p.
void compact_row(const DGrid& g, ConstField z, std::ptrdiff_t p, const Vec3& h, int dims, double& off,
                 double& diag) {
  const Layout& L = g.layout();
  off = 0.0;
  diag = 0.0;
  for (int a = 0; a < dims; ++a) {
    const double c = 1.0 / (h[a] * h[a]);
    for (const int side : {-1, 1}) {
      const std::ptrdiff_t nb = p + side * L.stride(a);
      switch (g.code(nb)) {
        case CellCode::kFluid:
          off += c * z[static_cast<std::size_t>(nb)];
          diag -= c;
          break;
        case CellCode::kOutflow: diag -= 2.0 * c; break;
        default: break;
      }
    }
  }
}

}  // namespace

void compact_residual(const DGrid& g, ConstField z, ConstField b, std::span<double> r, int dims) {
  const Vec3 h = cell_size(g);
  for_interior(g.layout(), [&](std::ptrdiff_t p) {
    const auto up = static_cast<std::size_t>(p);
    if (!spacetree::is_fluid(g.code(p))) {
      r[up] = 0.0;
      return;
    }
    double off = 0.0;
    double diag = 0.0;
    compact_row(g, z, p, h, dims, off, diag);
    r[up] = b[up] - (off + diag * z[up]);
  });
}

void jacobi_sweep(const DGrid& g, std::span<double> z, ConstField b, std::span<double> scratch, double omega,
                  int dims) {
  const Vec3 h = cell_size(g);
  for_interior(g.layout(), [&](std::ptrdiff_t p) {
    const auto up = static_cast<std::size_t>(p);
    scratch[up] = 0.0;
    if (!spacetree::is_fluid(g.code(p))) return;
    double off = 0.0;
    double diag = 0.0;
    compact_row(g, z, p, h, dims, off, diag);
    if (diag != 0.0) scratch[up] = omega * (b[up] - (off + diag * z[up])) / diag;
  });
  for_interior(g.layout(), [&](std::ptrdiff_t p) { z[static_cast<std::size_t>(p)] += scratch[static_cast<std::size_t>(p)]; });
}

double max_cfl(const DGrid& g, double dt, int dims) {
  const Vec3 h = cell_size(g);
  double m = 0.0;
  for_interior(g.layout(), [&](std::ptrdiff_t p) {
    if (!spacetree::is_fluid(g.code(p))) return;
    double c = 0.0;
    for (int a = 0; a < dims; ++a) c += std::abs(g.current.at(a, p)) * dt / h[a];
    m = std::max(m, c);
  });
  return m;
}

bool has_nonfinite(const DGrid& g, const FieldBuffer& buf) {
  bool bad = false;
  for_interior(g.layout(), [&](std::ptrdiff_t p) {
    for (int f = 0; f < kNumFields; ++f) bad = bad || !std::isfinite(buf.at(f, p));
  });
  return bad;
}

}  // namespace trsflow::solver
