//! Backstepping gain kernels on the triangular domain.
//!
//! The control gains Kw(x, xi), Kv(x, xi) live on
//! T = { (x, xi) : 0 <= xi <= x <= L } and satisfy
//!
//! ```text
//! lambda2 Kw_x - lambda1 Kw_xi = c(x) Kv,
//! lambda2 Kv_x + lambda2 Kv_xi = 0,
//! Kw(x, x)  = -c(x) / (lambda1 + lambda2),
//! Kv(x, 0)  = -Kw(x, 0).
//! ```
//!
//! The second equation makes Kv constant along lines x - xi = const, so it is
//! fully determined by the bottom-edge trace of Kw. The first is integrated
//! along its characteristics d xi/dx = -lambda1/lambda2: a characteristic
//! through (x, xi) meets the diagonal at a = (lambda1 x + lambda2 xi) /
//! (lambda1 + lambda2), and with arc parameter u = x - xi,
//!
//! ```text
//! Kw(x, xi) = -c(a)/(lambda1+lambda2)
//!             - 1/(lambda1+lambda2) * int_0^{x-xi} c(a + u lambda2/(lambda1+lambda2)) Kw(u, 0) du.
//! ```
//!
//! Marching in increasing x closes the system: for xi > 0 the integrand only
//! references the bottom trace at arguments < x, and the single self-reference
//! on the bottom edge is resolved by a scalar fixed point per x-level.
//! Quadrature is trapezoidal on the grid spacing, so the scheme is explicit
//! and first-order convergent.

use crate::traffic_model::CharacteristicParams;
use crate::{Error, Result};

/// Uniform triangular grid over T with `n` nodes per side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelGrid {
    /// Nodes per side.
    pub n: usize,
    /// Node spacing L/(n-1) [m].
    pub h: f64,
    /// Domain size L [m].
    pub length: f64,
}

impl KernelGrid {
    pub fn new(length: f64, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Config(format!("kernel grid needs n >= 3, got {n}")));
        }
        if !(length > 0.0) {
            return Err(Error::Config(format!("kernel grid length {length} must be positive")));
        }
        Ok(Self { n, h: length / (n - 1) as f64, length })
    }

    /// Coordinate of node index i (same spacing in x and xi).
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    /// Number of triangular nodes, n(n+1)/2.
    pub fn node_count(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    /// Flat storage index of node (i, j), j <= i.
    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i < self.n);
        i * (i + 1) / 2 + j
    }
}

/// Discretized gain kernels plus the linearization they were solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelPair {
    pub grid: KernelGrid,
    /// Kw values at triangular nodes, row-major in i.
    pub kw: Vec<f64>,
    /// Kv values at triangular nodes, row-major in i.
    pub kv: Vec<f64>,
    /// Characteristic parameters used by the solve.
    pub chars: CharacteristicParams,
}

impl KernelPair {
    #[inline]
    pub fn kw_at(&self, i: usize, j: usize) -> f64 {
        self.kw[self.grid.idx(i, j)]
    }

    #[inline]
    pub fn kv_at(&self, i: usize, j: usize) -> f64 {
        self.kv[self.grid.idx(i, j)]
    }

    /// CSV dump with one row per triangular node: `x,xi,kw,kv`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,xi,kw,kv\n");
        for i in 0..self.grid.n {
            for j in 0..=i {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    self.grid.coord(i),
                    self.grid.coord(j),
                    self.kw_at(i, j),
                    self.kv_at(i, j)
                ));
            }
        }
        out
    }
}

/// Max-norm residuals of the kernel equations under finite-difference
/// substitution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    /// Transport equation residual of Kw.
    pub res_kw: f64,
    /// Transport equation residual of Kv.
    pub res_kv: f64,
    /// Max violation of the diagonal and bottom-edge conditions.
    pub res_bc: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.res_kw.max(self.res_kv).max(self.res_bc)
    }
}

const FIXED_POINT_TOL: f64 = 1e-12;
const FIXED_POINT_MAX_ITERS: usize = 50;

/// Solve the kernel equations by characteristic marching.
///
/// Deterministic for fixed inputs; the diagonal and bottom-edge conditions
/// hold exactly at the grid nodes of the returned pair.
pub fn solve_kernels(chars: &CharacteristicParams, length: f64, n: usize) -> Result<KernelPair> {
    if !(chars.lambda1 > 0.0 && chars.lambda2 > 0.0) {
        return Err(Error::Config(format!(
            "kernel solve requires lambda1, lambda2 > 0, got ({}, {})",
            chars.lambda1, chars.lambda2
        )));
    }
    let grid = KernelGrid::new(length, n)?;
    let lam_sum = chars.lambda1 + chars.lambda2;
    let beta = chars.lambda2 / lam_sum;
    let h = grid.h;

    let mut kw = vec![0.0; grid.node_count()];
    let mut kv = vec![0.0; grid.node_count()];
    // Bottom-edge trace phi(i) = Kw(x_i, 0).
    let mut phi = vec![0.0; n];

    // Trapezoidal accumulation of the characteristic source integral for the
    // node whose characteristic foot is `a` and arc length is d*h. `phi_end`
    // overrides the final trace value (used while the level's own bottom
    // value is still being iterated).
    let source_integral = |a: f64, d: usize, phi: &[f64], phi_end: f64| -> f64 {
        if d == 0 {
            return 0.0;
        }
        let mut acc = 0.5 * chars.c(a) * phi[0];
        for (k, &p) in phi.iter().enumerate().take(d).skip(1) {
            acc += chars.c(a + beta * (k as f64 * h)) * p;
        }
        acc += 0.5 * chars.c(a + beta * (d as f64 * h)) * phi_end;
        acc * h
    };

    for i in 0..n {
        let x_i = grid.coord(i);
        // Diagonal node is the characteristic boundary datum.
        let diag = -chars.c(x_i) / lam_sum;
        kw[grid.idx(i, i)] = diag;

        if i > 0 {
            // Bottom node (i, 0) references its own trace value through the
            // trapezoid endpoint; resolve by fixed point.
            let a = chars.lambda1 * x_i / lam_sum;
            let boundary = -chars.c(a) / lam_sum;
            let mut value = phi[i - 1];
            let mut converged = false;
            for _ in 0..FIXED_POINT_MAX_ITERS {
                let next = boundary - source_integral(a, i, &phi, value) / lam_sum;
                let delta = (next - value).abs();
                value = next;
                if delta <= FIXED_POINT_TOL * value.abs().max(1.0) {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::Numerics(format!(
                    "kernel bottom-trace fixed point did not converge at x = {x_i} (last value {value:e})"
                )));
            }
            phi[i] = value;
            kw[grid.idx(i, 0)] = value;

            // Interior nodes of the level only reference earlier trace values.
            for j in 1..i {
                let xi_j = grid.coord(j);
                let a = (chars.lambda1 * x_i + chars.lambda2 * xi_j) / lam_sum;
                let d = i - j;
                let boundary = -chars.c(a) / lam_sum;
                kw[grid.idx(i, j)] = boundary - source_integral(a, d, &phi, phi[d]) / lam_sum;
            }
        } else {
            phi[0] = diag;
        }

        // Kv rides the x - xi = const characteristics down to the bottom edge.
        for j in 0..=i {
            kv[grid.idx(i, j)] = -phi[i - j];
        }
    }

    Ok(KernelPair { grid, kw, kv, chars: *chars })
}

/// Finite-difference residuals of the kernel equations.
///
/// Central differences where both neighbors exist in T, one-sided otherwise.
/// Nodes with no admissible stencil in a direction (the apex) are skipped.
pub fn kernel_residual(k: &KernelPair) -> ResidualReport {
    let g = &k.grid;
    let n = g.n;
    let h = g.h;
    let lam1 = k.chars.lambda1;
    let lam2 = k.chars.lambda2;

    // FD derivative of `f` at (i, j) in direction x (di) or xi (dj).
    let derive = |f: &dyn Fn(usize, usize) -> f64, i: usize, j: usize, in_x: bool| -> Option<f64> {
        let (fwd, bwd) = if in_x {
            (i + 1 < n && j <= i + 1, i > 0 && j < i)
        } else {
            (j < i, j > 0)
        };
        let at = |i2: usize, j2: usize| f(i2, j2);
        match (fwd, bwd) {
            (true, true) => {
                let (fp, fm) = if in_x { (at(i + 1, j), at(i - 1, j)) } else { (at(i, j + 1), at(i, j - 1)) };
                Some((fp - fm) / (2.0 * h))
            }
            (true, false) => {
                let fp = if in_x { at(i + 1, j) } else { at(i, j + 1) };
                Some((fp - at(i, j)) / h)
            }
            (false, true) => {
                let fm = if in_x { at(i - 1, j) } else { at(i, j - 1) };
                Some((at(i, j) - fm) / h)
            }
            (false, false) => None,
        }
    };

    let kw = |i: usize, j: usize| k.kw_at(i, j);
    let kv = |i: usize, j: usize| k.kv_at(i, j);

    let mut res_kw = 0.0f64;
    let mut res_kv = 0.0f64;
    for i in 0..n {
        let x_i = g.coord(i);
        for j in 0..=i {
            if let (Some(dx), Some(dxi)) = (derive(&kw, i, j, true), derive(&kw, i, j, false)) {
                let r = lam2 * dx - lam1 * dxi - k.chars.c(x_i) * kv(i, j);
                res_kw = res_kw.max(r.abs());
            }
            if let (Some(dx), Some(dxi)) = (derive(&kv, i, j, true), derive(&kv, i, j, false)) {
                let r = lam2 * dx + lam2 * dxi;
                res_kv = res_kv.max(r.abs());
            }
        }
    }

    let lam_sum = lam1 + lam2;
    let mut res_bc = 0.0f64;
    for i in 0..n {
        let diag = (k.kw_at(i, i) + k.chars.c(g.coord(i)) / lam_sum).abs();
        let bottom = (k.kv_at(i, 0) + k.kw_at(i, 0)).abs();
        res_bc = res_bc.max(diag).max(bottom);
    }

    ResidualReport { res_kw, res_kv, res_bc }
}

/// Bilinear interpolation of both kernels at (x, xi) in T.
///
/// Exact at grid nodes. Cells straddling the diagonal miss their upper-left
/// corner; it is filled with the exact diagonal data of each kernel so the
/// interpolant never extrapolates outside T.
pub fn eval_kernel(k: &KernelPair, x: f64, xi: f64) -> Result<(f64, f64)> {
    let g = &k.grid;
    let slack = 1e-9 * g.length.max(1.0);
    if xi < -slack || xi > x + slack || x > g.length + slack {
        return Err(Error::Domain(format!(
            "kernel query (x, xi) = ({x}, {xi}) outside 0 <= xi <= x <= {}",
            g.length
        )));
    }
    let x = x.clamp(0.0, g.length);
    let xi = xi.clamp(0.0, x);

    let cell = |pos: f64| -> (usize, f64) {
        let raw = pos / g.h;
        let i0 = (raw.floor() as usize).min(g.n - 2);
        (i0, raw - i0 as f64)
    };
    let (i0, tx) = cell(x);
    let (j0, tj) = cell(xi);

    let lam_sum = k.chars.lambda1 + k.chars.lambda2;
    // kv is constant along the diagonal: kv(i, i) = -Kw(0, 0).
    let kv_diag = -k.kw_at(0, 0);

    let corner = |i: usize, j: usize| -> (f64, f64) {
        if j <= i {
            (k.kw_at(i, j), k.kv_at(i, j))
        } else {
            // Missing upper-left corner of a diagonal cell.
            (-k.chars.c(g.coord(i)) / lam_sum, kv_diag)
        }
    };

    let (kw00, kv00) = corner(i0, j0);
    let (kw10, kv10) = corner(i0 + 1, j0);
    let (kw01, kv01) = corner(i0, j0 + 1);
    let (kw11, kv11) = corner(i0 + 1, j0 + 1);

    let blend = |f00: f64, f10: f64, f01: f64, f11: f64| -> f64 {
        f00 * (1.0 - tx) * (1.0 - tj)
            + f10 * tx * (1.0 - tj)
            + f01 * (1.0 - tx) * tj
            + f11 * tx * tj
    };
    Ok((blend(kw00, kw10, kw01, kw11), blend(kv00, kv10, kv01, kv11)))
}
