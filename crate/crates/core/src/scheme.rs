//! Finite-difference discretization of
//!
//! ```text
//! P u = (d_t + v d_x) u - d_v(a d_v u + b u - f) - (c d_v u + d u - g)
//! ```
//!
//! on a planar grid. Transport is explicit first-order upwind, the velocity
//! part is implicit and conservative: face fluxes `a_f D u + b_f avg(u) - f_f`
//! with arithmetic face averages, and `c d_v u` upwinded by the sign of `c`.
//! With `CFL <= 1`, `a > 0` and small `b`, the step is a monotone map, so the
//! scheme has a discrete maximum principle. The discrete residual is
//!
//! ```text
//! R^{n+1} = (u^{n+1} - T u^n)/dt - D(flux(u^{n+1})) - c D u^{n+1} - d u^{n+1} + g
//! ```
//!
//! and pairing `R` with a test function that vanishes near the box edge is
//! the same number as the weak form (summation by parts is exact).

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{GridField, GridSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero data on the velocity edges and zero inflow in position.
    Dirichlet,
    /// Periodic in position, zero flux through the velocity edges.
    PeriodicNoFlux,
}

/// Linear part of the operator together with its boundary treatment.
#[derive(Clone, Debug)]
pub struct LinearOperator {
    pub spec: GridSpec,
    pub a: GridField,
    pub b: Option<GridField>,
    pub c: Option<GridField>,
    pub d: Option<GridField>,
    /// Extra implicit diffusion `d_x(ax d_x)` in position (viscous regularization).
    pub ax: Option<GridField>,
    pub boundary: Boundary,
}

/// Data terms: `f`, `g` of the operator and an external right-hand side.
#[derive(Clone, Debug, Default)]
pub struct Data {
    pub f: Option<GridField>,
    pub g: Option<GridField>,
    /// Right-hand side `S` in `P u = S`.
    pub source: Option<GridField>,
    /// Flux-form right-hand side `F` entering as `+ d_v F`.
    pub flux_source: Option<GridField>,
}

impl LinearOperator {
    /// `d_t + v d_x - d_vv` with the given boundary.
    pub fn kolmogorov(spec: GridSpec, boundary: Boundary) -> Self {
        Self { spec, a: GridField::constant(spec, 1.0), b: None, c: None, d: None, ax: None, boundary }
    }

    pub fn with_diffusion(spec: GridSpec, a: GridField, boundary: Boundary) -> Self {
        Self { spec, a, b: None, c: None, d: None, ax: None, boundary }
    }

    pub fn check(&self) -> Result<()> {
        let c = self.spec.courant();
        if c > 1.0 + 1e-12 {
            return Err(Error::Cfl { courant: c });
        }
        for fld in [Some(&self.a), self.b.as_ref(), self.c.as_ref(), self.d.as_ref(), self.ax.as_ref()]
            .into_iter()
            .flatten()
        {
            self.spec.same_as(&fld.spec)?;
        }
        Ok(())
    }

    #[inline]
    fn opt(f: &Option<GridField>, k: usize) -> f64 {
        f.as_ref().map_or(0.0, |g| g.data[k])
    }

    /// Explicit upwind transport of one level, `T u^n`.
    pub fn transport(&self, level: &[f64], out: &mut [f64]) {
        let s = &self.spec;
        let (nx, nv) = (s.x.n, s.v.n);
        let lam = s.dt() / s.dx();
        let periodic = self.boundary == Boundary::PeriodicNoFlux;
        out.par_chunks_mut(nv).enumerate().for_each(|(ix, row)| {
            for (iv, o) in row.iter_mut().enumerate() {
                let v = s.v.coord(iv);
                let here = level[ix * nv + iv];
                let up = if v > 0.0 {
                    if ix > 0 {
                        level[(ix - 1) * nv + iv]
                    } else if periodic {
                        level[(nx - 2) * nv + iv]
                    } else {
                        0.0
                    }
                } else if ix + 1 < nx {
                    level[(ix + 1) * nv + iv]
                } else if periodic {
                    level[nv + iv]
                } else {
                    0.0
                };
                *o = here - lam * v.abs() * (here - up);
            }
        });
        if periodic {
            // node nx-1 duplicates node 0
            let (first, rest) = out.split_at_mut(nv);
            rest[(nx - 2) * nv..].copy_from_slice(first);
        }
    }

    /// Face flux `a_f D u + b_f avg(u)` between velocity nodes `j` and `j+1`.
    #[inline]
    fn face_flux(&self, base: usize, j: usize, u: &[f64]) -> f64 {
        let h = self.spec.dv();
        let k = base + j;
        let af = 0.5 * (self.a.data[k] + self.a.data[k + 1]);
        let bf = 0.5 * (Self::opt(&self.b, k) + Self::opt(&self.b, k + 1));
        af * (u[j + 1] - u[j]) / h + bf * 0.5 * (u[j] + u[j + 1])
    }

    #[inline]
    fn upwind_dv(&self, k: usize, j: usize, u: &[f64]) -> f64 {
        let c = Self::opt(&self.c, k);
        let n = u.len();
        let h = self.spec.dv();
        if c > 0.0 {
            if j + 1 < n {
                c * (u[j + 1] - u[j]) / h
            } else {
                0.0
            }
        } else if c < 0.0 {
            if j > 0 {
                c * (u[j] - u[j - 1]) / h
            } else {
                0.0
            }
        } else {
            0.0
        }
    }

    /// `A u` on one velocity column at flat offset `base`.
    fn apply_column(&self, base: usize, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let h = self.spec.dv();
        // edge faces carry no flux; Dirichlet edge rows are overwritten anyway
        for j in 0..n {
            let k = base + j;
            let right = if j + 1 < n { self.face_flux(base, j, u) } else { 0.0 };
            let left = if j > 0 { self.face_flux(base, j - 1, u) } else { 0.0 };
            out[j] = (right - left) / h + self.upwind_dv(k, j, u) + Self::opt(&self.d, k) * u[j];
        }
    }

    /// Tridiagonal matrix of `I - dt A` on one velocity column.
    fn column_matrix(&self, base: usize, dt: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.spec.v.n;
        let h = self.spec.dv();
        let mut lo = vec![0.0; n];
        let mut di = vec![1.0; n];
        let mut up = vec![0.0; n];
        for j in 0..n {
            let k = base + j;
            if j + 1 < n {
                let af = 0.5 * (self.a.data[k] + self.a.data[k + 1]);
                let bf = 0.5 * (Self::opt(&self.b, k) + Self::opt(&self.b, k + 1));
                // + (af/h (u_{j+1} - u_j) + bf (u_j + u_{j+1})/2) / h
                di[j] -= dt * (-af / h + 0.5 * bf) / h;
                up[j] -= dt * (af / h + 0.5 * bf) / h;
            }
            if j > 0 {
                let af = 0.5 * (self.a.data[k - 1] + self.a.data[k]);
                let bf = 0.5 * (Self::opt(&self.b, k - 1) + Self::opt(&self.b, k));
                // - (af/h (u_j - u_{j-1}) + bf (u_{j-1} + u_j)/2) / h
                di[j] -= dt * (-af / h - 0.5 * bf) / h;
                lo[j] -= dt * (af / h - 0.5 * bf) / h;
            }
            let c = Self::opt(&self.c, k);
            if c > 0.0 && j + 1 < n {
                di[j] += dt * c / h;
                up[j] -= dt * c / h;
            } else if c < 0.0 && j > 0 {
                di[j] -= dt * c / h;
                lo[j] += dt * c / h;
            }
            di[j] -= dt * Self::opt(&self.d, k);
        }
        (lo, di, up)
    }

    /// Data contribution `Q = S + D F - D f - g` at flat index range of a column.
    fn data_column(&self, data: &Data, base: usize, out: &mut [f64]) {
        let n = out.len();
        let h = self.spec.dv();
        for (j, o) in out.iter_mut().enumerate() {
            let k = base + j;
            let mut q = Self::opt(&data.source, k) - Self::opt(&data.g, k);
            let face = |fld: &Option<GridField>, jj: usize| -> f64 {
                fld.as_ref().map_or(0.0, |f| 0.5 * (f.data[base + jj] + f.data[base + jj + 1]))
            };
            let right_f = if j + 1 < n { face(&data.f, j) } else { 0.0 };
            let left_f = if j > 0 { face(&data.f, j - 1) } else { 0.0 };
            let right_s = if j + 1 < n { face(&data.flux_source, j) } else { 0.0 };
            let left_s = if j > 0 { face(&data.flux_source, j - 1) } else { 0.0 };
            q += ((right_s - left_s) - (right_f - left_f)) / h;
            *o = q;
        }
    }

    /// Marches `P u = S` from level `start`, where `u` equals `initial`.
    /// Levels before `start` are zero.
    pub fn solve(&self, initial: &[f64], start: usize, data: &Data) -> Result<GridField> {
        self.check()?;
        let s = self.spec;
        if initial.len() != s.slab() {
            return Err(invalid("initial level has wrong size"));
        }
        let mut u = GridField::zeros(s);
        u.level_mut(start).copy_from_slice(initial);
        match self.boundary {
            Boundary::Dirichlet => zero_velocity_edges(&s, u.level_mut(start)),
            Boundary::PeriodicNoFlux => {
                let nv = s.v.n;
                let lvl = u.level_mut(start);
                let (first, rest) = lvl.split_at_mut(nv);
                rest[(s.x.n - 2) * nv..].copy_from_slice(first);
            }
        }
        let mut buf = vec![0.0; s.slab()];
        for n in start..s.t.n - 1 {
            let (prev, next) = u.data.split_at_mut((n + 1) * s.slab());
            let prev = &prev[n * s.slab()..];
            let next = &mut next[..s.slab()];
            self.step(prev, next, &mut buf, n + 1, data);
        }
        Ok(u)
    }

    /// One step into level `m`; `buf` is scratch.
    fn step(&self, prev: &[f64], next: &mut [f64], buf: &mut [f64], m: usize, data: &Data) {
        let s = self.spec;
        let dt = s.dt();
        let nv = s.v.n;
        self.transport(prev, buf);
        if let Some(ax) = &self.ax {
            self.implicit_position_diffusion(ax, buf, m, dt);
        }
        let dirichlet = self.boundary == Boundary::Dirichlet;
        next.par_chunks_mut(nv).zip(buf.par_chunks(nv)).enumerate().for_each(|(ix, (col, rhs_t))| {
            let base = s.idx(m, ix, 0);
            let mut q = vec![0.0; nv];
            self.data_column(data, base, &mut q);
            let mut rhs: Vec<f64> = rhs_t.iter().zip(&q).map(|(r, q)| r + dt * q).collect();
            let (mut lo, mut di, mut up) = self.column_matrix(base, dt);
            if dirichlet {
                for j in [0, nv - 1] {
                    lo[j] = 0.0;
                    up[j] = 0.0;
                    di[j] = 1.0;
                    rhs[j] = 0.0;
                }
            }
            thomas(&lo, &di, &up, &mut rhs);
            col.copy_from_slice(&rhs);
        });
        if self.boundary == Boundary::PeriodicNoFlux {
            let (first, rest) = next.split_at_mut(nv);
            rest[(s.x.n - 2) * nv..].copy_from_slice(first);
        }
    }

    fn implicit_position_diffusion(&self, ax: &GridField, level: &mut [f64], m: usize, dt: f64) {
        let s = self.spec;
        let (nx, nv) = (s.x.n, s.v.n);
        let h = s.dx();
        let dirichlet = self.boundary == Boundary::Dirichlet;
        let mut out = level.to_vec();
        for iv in 0..nv {
            let mut lo = vec![0.0; nx];
            let mut di = vec![1.0; nx];
            let mut up = vec![0.0; nx];
            let mut rhs: Vec<f64> = (0..nx).map(|ix| level[ix * nv + iv]).collect();
            for ix in 0..nx {
                if ix + 1 < nx {
                    let kf = 0.5 * (ax.at(m, ix, iv) + ax.at(m, ix + 1, iv)) * dt / (h * h);
                    di[ix] += kf;
                    up[ix] -= kf;
                }
                if ix > 0 {
                    let kf = 0.5 * (ax.at(m, ix - 1, iv) + ax.at(m, ix, iv)) * dt / (h * h);
                    di[ix] += kf;
                    lo[ix] -= kf;
                }
            }
            if dirichlet {
                for ix in [0, nx - 1] {
                    lo[ix] = 0.0;
                    up[ix] = 0.0;
                    di[ix] = 1.0;
                    rhs[ix] = 0.0;
                }
            }
            thomas(&lo, &di, &up, &mut rhs);
            for ix in 0..nx {
                out[ix * nv + iv] = rhs[ix];
            }
        }
        level.copy_from_slice(&out);
    }

    /// Discrete residual `P_h u - S` for levels after `start`; zero on levels
    /// up to `start` and on Dirichlet velocity edges.
    pub fn residual(&self, u: &GridField, start: usize, data: &Data) -> Result<GridField> {
        self.check()?;
        let s = self.spec;
        s.same_as(&u.spec)?;
        let nv = s.v.n;
        let dt = s.dt();
        let mut r = GridField::zeros(s);
        let mut tu = vec![0.0; s.slab()];
        for m in start + 1..s.t.n {
            self.transport(u.level(m - 1), &mut tu);
            let cur = u.level(m);
            let out = r.level_mut(m);
            out.par_chunks_mut(nv).enumerate().for_each(|(ix, col)| {
                let base = s.idx(m, ix, 0);
                let uc = &cur[ix * nv..(ix + 1) * nv];
                let mut au = vec![0.0; nv];
                self.apply_column(base, uc, &mut au);
                let mut q = vec![0.0; nv];
                self.data_column(data, base, &mut q);
                for j in 0..nv {
                    col[j] = (uc[j] - tu[ix * nv + j]) / dt - au[j] - q[j];
                }
            });
            if let Some(ax) = &self.ax {
                // position diffusion, centered conservative form
                let h = s.dx();
                for ix in 1..s.x.n - 1 {
                    for iv in 0..nv {
                        let kr = 0.5 * (ax.at(m, ix, iv) + ax.at(m, ix + 1, iv));
                        let kl = 0.5 * (ax.at(m, ix - 1, iv) + ax.at(m, ix, iv));
                        let d = (kr * (u.at(m, ix + 1, iv) - u.at(m, ix, iv))
                            - kl * (u.at(m, ix, iv) - u.at(m, ix - 1, iv)))
                            / (h * h);
                        *r.at_mut(m, ix, iv) -= d;
                    }
                }
            }
            match self.boundary {
                Boundary::Dirichlet => zero_velocity_edges(&s, r.level_mut(m)),
                Boundary::PeriodicNoFlux => {
                    // the last position column duplicates the first
                    let lvl = r.level_mut(m);
                    let (first, rest) = lvl.split_at_mut(nv);
                    rest[(s.x.n - 2) * nv..].copy_from_slice(first);
                }
            }
        }
        Ok(r)
    }

    /// Weak pairing `<P u - S, phi>` written with the velocity fluxes tested
    /// against `D phi`. Requires `phi` to vanish on the first and last two
    /// velocity nodes and on the position edges.
    pub fn weak_pairing(&self, u: &GridField, start: usize, data: &Data, phi: &GridField) -> Result<f64> {
        self.check()?;
        let s = self.spec;
        s.same_as(&u.spec)?;
        s.same_as(&phi.spec)?;
        check_interior_support(phi)?;
        let nv = s.v.n;
        let (dt, h) = (s.dt(), s.dv());
        let vol = s.cell_volume();
        let mut tu = vec![0.0; s.slab()];
        let mut total = 0.0;
        for m in start + 1..s.t.n {
            self.transport(u.level(m - 1), &mut tu);
            for ix in 0..s.x.n {
                let base = s.idx(m, ix, 0);
                let uc = &u.level(m)[ix * nv..(ix + 1) * nv];
                let ph = &phi.level(m)[ix * nv..(ix + 1) * nv];
                if ph.iter().all(|&z| z == 0.0) {
                    continue;
                }
                let mut acc = 0.0;
                for j in 0..nv {
                    let k = base + j;
                    let time = (uc[j] - tu[ix * nv + j]) / dt;
                    let lower = self.upwind_dv(k, j, uc) + Self::opt(&self.d, k) * uc[j]
                        - Self::opt(&data.g, k)
                        + Self::opt(&data.source, k);
                    acc += (time - lower) * ph[j];
                    if j + 1 < nv {
                        let fface = data.f.as_ref().map_or(0.0, |f| 0.5 * (f.data[k] + f.data[k + 1]));
                        let sface =
                            data.flux_source.as_ref().map_or(0.0, |f| 0.5 * (f.data[k] + f.data[k + 1]));
                        let flux = self.face_flux(base, j, uc) - fface + sface;
                        acc += flux * (ph[j + 1] - ph[j]) / h;
                    }
                }
                total += acc * vol;
            }
        }
        Ok(total)
    }
}

pub(crate) fn zero_velocity_edges(s: &GridSpec, level: &mut [f64]) {
    let nv = s.v.n;
    for ix in 0..s.x.n {
        level[ix * nv] = 0.0;
        level[ix * nv + nv - 1] = 0.0;
    }
}

pub(crate) fn check_interior_support(phi: &GridField) -> Result<()> {
    let s = phi.spec;
    for k in 0..s.len() {
        if phi.data[k] != 0.0 {
            let (_, ix, iv) = s.unravel(k);
            if ix < 2 || iv < 2 || ix + 2 >= s.x.n || iv + 2 >= s.v.n {
                return Err(Error::Support(format!("node {k} at (ix={ix}, iv={iv})")));
            }
        }
    }
    Ok(())
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lo[0]` and
/// `up[n-1]` are ignored.
pub fn thomas(lo: &[f64], di: &[f64], up: &[f64], rhs: &mut [f64]) {
    let n = rhs.len();
    let mut c = vec![0.0; n];
    let mut beta = di[0];
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = up[i - 1] / beta;
        beta = di[i] - lo[i] * c[i - 1];
        rhs[i] = (rhs[i] - lo[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}
