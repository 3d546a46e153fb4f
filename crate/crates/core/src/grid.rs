//! Uniform tensor grid in `(t, pos, vel)` with one position and one
//! velocity axis, and scalar fields sampled on its nodes.
//!
//! Node `(it, ix, iv)` sits at `t_lo + it*dt`, `x_lo + ix*dx`, `v_lo + iv*dv`,
//! endpoints included. Storage is row-major with velocity fastest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(invalid(format!("bad axis [{lo}, {hi}] with {n} nodes")));
        }
        Ok(Self { lo, hi, n })
    }

    #[inline]
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    /// Same extent with `n` nodes.
    pub fn with_nodes(&self, n: usize) -> Self {
        Self { n, ..*self }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub t: Axis,
    pub x: Axis,
    pub v: Axis,
}

impl GridSpec {
    pub fn new(t: Axis, x: Axis, v: Axis) -> Self {
        Self { t, x, v }
    }

    /// Symmetric phase-space box `[-x_half, x_half] x [-v_half, v_half]`
    /// over `[t_lo, t_hi]`.
    pub fn boxed(
        (t_lo, t_hi, nt): (f64, f64, usize),
        (x_half, nx): (f64, usize),
        (v_half, nv): (f64, usize),
    ) -> Result<Self> {
        Ok(Self {
            t: Axis::new(t_lo, t_hi, nt)?,
            x: Axis::new(-x_half, x_half, nx)?,
            v: Axis::new(-v_half, v_half, nv)?,
        })
    }

    /// Scales the node counts so that spacings shrink by `factor`.
    pub fn refined(&self, factor: f64) -> Self {
        let up = |a: &Axis| a.with_nodes((((a.n - 1) as f64) * factor).round() as usize + 1);
        Self { t: up(&self.t), x: up(&self.x), v: up(&self.v) }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.t.n * self.x.n * self.v.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn slab(&self) -> usize {
        self.x.n * self.v.n
    }

    #[inline]
    pub fn idx(&self, it: usize, ix: usize, iv: usize) -> usize {
        (it * self.x.n + ix) * self.v.n + iv
    }

    #[inline]
    pub fn unravel(&self, k: usize) -> (usize, usize, usize) {
        let iv = k % self.v.n;
        let r = k / self.v.n;
        (r / self.x.n, r % self.x.n, iv)
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (f64, f64, f64) {
        let (it, ix, iv) = self.unravel(k);
        (self.t.coord(it), self.x.coord(ix), self.v.coord(iv))
    }

    pub fn dt(&self) -> f64 {
        self.t.step()
    }
    pub fn dx(&self) -> f64 {
        self.x.step()
    }
    pub fn dv(&self) -> f64 {
        self.v.step()
    }

    /// Space-time volume of one node cell.
    pub fn cell_volume(&self) -> f64 {
        self.dt() * self.dx() * self.dv()
    }

    /// Phase-space area of one node cell.
    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dv()
    }

    /// Courant number of explicit upwind transport `v d_x`.
    pub fn courant(&self) -> f64 {
        let vmax = self.v.lo.abs().max(self.v.hi.abs());
        vmax * self.dt() / self.dx()
    }

    pub fn same_as(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// True when the node is on the outer boundary of the phase-space box.
    #[inline]
    pub fn on_phase_boundary(&self, ix: usize, iv: usize) -> bool {
        ix == 0 || iv == 0 || ix + 1 == self.x.n || iv + 1 == self.v.n
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub data: Vec<f64>,
}

const MAGIC: &[u8; 4] = b"HHGF";
const FORMAT_VERSION: u32 = 1;

impl GridField {
    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, data: vec![0.0; spec.len()] }
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self { spec, data: vec![c; spec.len()] }
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let data = (0..spec.len())
            .map(|k| {
                let (t, x, v) = spec.coords(k);
                f(t, x, v)
            })
            .collect();
        Self { spec, data }
    }

    pub fn from_vec(spec: GridSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.len() {
            return Err(Error::GridMismatch(format!(
                "payload has {} values, grid needs {}",
                data.len(),
                spec.len()
            )));
        }
        Ok(Self { spec, data })
    }

    #[inline]
    pub fn at(&self, it: usize, ix: usize, iv: usize) -> f64 {
        self.data[self.spec.idx(it, ix, iv)]
    }

    #[inline]
    pub fn at_mut(&mut self, it: usize, ix: usize, iv: usize) -> &mut f64 {
        let k = self.spec.idx(it, ix, iv);
        &mut self.data[k]
    }

    pub fn level(&self, it: usize) -> &[f64] {
        let s = self.spec.slab();
        &self.data[it * s..(it + 1) * s]
    }

    pub fn level_mut(&mut self, it: usize) -> &mut [f64] {
        let s = self.spec.slab();
        &mut self.data[it * s..(it + 1) * s]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { spec: self.spec, data: self.data.iter().map(|&z| f(z)).collect() }
    }

    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.spec.same_as(&other.spec)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self { spec: self.spec, data })
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|z| c * z)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index and value of the largest entry.
    pub fn argmax(&self) -> (usize, f64) {
        self.data
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, z)| if z > acc.1 { (k, z) } else { acc })
    }

    /// Centered velocity derivative at a node, one-sided at the box edge.
    pub fn dv_at(&self, it: usize, ix: usize, iv: usize) -> f64 {
        let n = self.spec.v.n;
        let h = self.spec.dv();
        if iv == 0 {
            (self.at(it, ix, 1) - self.at(it, ix, 0)) / h
        } else if iv + 1 == n {
            (self.at(it, ix, n - 1) - self.at(it, ix, n - 2)) / h
        } else {
            (self.at(it, ix, iv + 1) - self.at(it, ix, iv - 1)) / (2.0 * h)
        }
    }

    /// Field of centered velocity derivatives `X u = d_v u`.
    pub fn dv_field(&self) -> GridField {
        let spec = self.spec;
        let data = (0..spec.len())
            .map(|k| {
                let (it, ix, iv) = spec.unravel(k);
                self.dv_at(it, ix, iv)
            })
            .collect();
        GridField { spec, data }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let s = &self.spec;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&3u32.to_le_bytes())?;
        for a in [&s.t, &s.x, &s.v] {
            w.write_all(&(a.n as u64).to_le_bytes())?;
        }
        for a in [&s.t, &s.x, &s.v] {
            w.write_all(&a.lo.to_le_bytes())?;
        }
        for a in [&s.t, &s.x, &s.v] {
            w.write_all(&a.step().to_le_bytes())?;
        }
        w.write_all(&s.t.lo.to_le_bytes())?;
        w.write_all(&s.t.hi.to_le_bytes())?;
        for z in &self.data {
            w.write_all(&z.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(invalid("not a grid field dump"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(invalid(format!("unsupported dump version {version}")));
        }
        if read_u32(&mut r)? != 3 {
            return Err(invalid("expected a 3-axis dump"));
        }
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            *d = read_u64(&mut r)? as usize;
        }
        let mut origin = [0.0; 3];
        for o in origin.iter_mut() {
            *o = read_f64(&mut r)?;
        }
        let mut step = [0.0; 3];
        for h in step.iter_mut() {
            *h = read_f64(&mut r)?;
        }
        let _t_lo = read_f64(&mut r)?;
        let t_hi = read_f64(&mut r)?;
        let axis = |i: usize| Axis::new(origin[i], origin[i] + step[i] * (dims[i] - 1) as f64, dims[i]);
        let mut t = axis(0)?;
        t.hi = t_hi;
        let spec = GridSpec { t, x: axis(1)?, v: axis(2)? };
        let mut data = Vec::with_capacity(spec.len());
        for _ in 0..spec.len() {
            data.push(read_f64(&mut r)?);
        }
        Ok(Self { spec, data })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Weighted Lebesgue norm `(sum w |f|^p)^(1/p)`; `p = inf` gives the max of
/// `|f|` over nodes with positive weight.
pub fn weighted_norm(values: &[f64], weights: &[f64], p: f64) -> f64 {
    debug_assert_eq!(values.len(), weights.len());
    if p.is_infinite() {
        return values
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(z, _)| z.abs())
            .fold(0.0, f64::max);
    }
    let s: f64 = values.iter().zip(weights).map(|(z, w)| w * z.abs().powf(p)).sum();
    s.powf(1.0 / p)
}
