//! The grid Ξ_N with the reversible nearest-neighbour chain in scaled units.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::{BoxDomain, CriticalPoint, Kind, PotentialModel};

/// Largest exponent magnitude allowed in scaled weights.
pub const EXP_GUARD: f64 = 700.0;

#[derive(Debug, Clone)]
pub struct LatticeOptions {
    pub f_ref: Option<f64>,
    pub memory_cap_bytes: usize,
}

impl Default for LatticeOptions {
    fn default() -> Self {
        LatticeOptions { f_ref: None, memory_cap_bytes: 2 << 30 }
    }
}

/// Sites are indexed row-major over the bounding integer box (last axis fastest).
#[derive(Debug, Clone)]
pub struct LatticeChain {
    pub n: u32,
    pub dim: usize,
    pub domain: BoxDomain,
    pub lo_index: Vec<i64>,
    pub shape: Vec<usize>,
    strides: Vec<usize>,
    valid: Vec<bool>,
    f: Vec<f64>,
    pub f_ref: f64,
    weight: Vec<f64>,
    /// Conductance to the +e_axis neighbour, 0 where it is missing.
    cond: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpRate {
    pub log_rate: f64,
    pub rate: f64,
}

impl LatticeChain {
    pub fn build(model: &PotentialModel, n: u32, opts: &LatticeOptions) -> Result<Self> {
        if n < 4 {
            return Err(Error::Config(format!("N must be at least 4, got {n}")));
        }
        let d = model.dim;
        let nf = n as f64;
        let mut lo_index = Vec::with_capacity(d);
        let mut shape = Vec::with_capacity(d);
        for i in 0..d {
            let (lo, hi) = (model.domain.lo[i], model.domain.hi[i]);
            let mut k0 = (lo * nf).floor() as i64;
            while (k0 as f64) / nf <= lo {
                k0 += 1;
            }
            let mut k1 = (hi * nf).ceil() as i64;
            while (k1 as f64) / nf >= hi {
                k1 -= 1;
            }
            if k1 < k0 {
                return Err(Error::Config(format!("empty lattice along axis {} at N={n}", i + 1)));
            }
            lo_index.push(k0);
            shape.push((k1 - k0 + 1) as usize);
        }
        let total = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        let total = total.ok_or_else(|| Error::Config("lattice too large".into()))?;
        let bytes = total.saturating_mul(8 * (2 + d) + 1);
        if bytes > opts.memory_cap_bytes {
            return Err(Error::Config(format!(
                "lattice needs about {bytes} bytes, above the cap of {}",
                opts.memory_cap_bytes
            )));
        }
        let mut strides = vec![1usize; d];
        for i in (0..d.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let mut chain = LatticeChain {
            n,
            dim: d,
            domain: model.domain.clone(),
            lo_index,
            shape,
            strides,
            valid: vec![true; total],
            f: vec![0.0; total],
            f_ref: 0.0,
            weight: Vec::new(),
            cond: Vec::new(),
        };
        for s in 0..total {
            let x = chain.coords(s);
            chain.valid[s] = model.domain.contains(&x);
            let v = model.value(&x);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("potential not finite at lattice site {x:?}")));
            }
            chain.f[s] = v;
        }
        let f_ref = match opts.f_ref {
            Some(r) => r,
            None => chain.default_reference()?,
        };
        chain.set_reference(f_ref)?;
        Ok(chain)
    }

    fn default_reference(&self) -> Result<f64> {
        let (lo, hi) = self.f_range();
        let nf = self.n as f64;
        if nf * (hi - lo) <= EXP_GUARD {
            Ok(lo)
        } else if nf * (hi - lo) <= 2.0 * EXP_GUARD {
            Ok(0.5 * (lo + hi))
        } else {
            Err(Error::Numerical(format!(
                "dynamic range N*(max F - min F) = {:.1} cannot be represented in scaled units",
                nf * (hi - lo)
            )))
        }
    }

    /// Re-references all scaled quantities to `f_ref`.
    pub fn set_reference(&mut self, f_ref: f64) -> Result<()> {
        let (lo, hi) = self.f_range();
        let nf = self.n as f64;
        if nf * (hi - f_ref) > EXP_GUARD || nf * (f_ref - lo) > EXP_GUARD {
            return Err(Error::Numerical(format!("reference level {f_ref} puts scaled weights out of range")));
        }
        self.f_ref = f_ref;
        let total = self.f.len();
        self.weight = (0..total).map(|s| if self.valid[s] { (-nf * (self.f[s] - f_ref)).exp() } else { 0.0 }).collect();
        let d = self.dim;
        let mut cond = vec![0.0; total * d];
        for s in 0..total {
            if !self.valid[s] {
                continue;
            }
            for axis in 0..d {
                if let Some(t) = self.neighbor(s, 2 * axis) {
                    cond[s * d + axis] = self.conductance_at(s, t, f_ref);
                }
            }
        }
        self.cond = cond;
        Ok(())
    }

    pub fn with_reference(&self, f_ref: f64) -> Result<Self> {
        let mut c = self.clone();
        c.set_reference(f_ref)?;
        Ok(c)
    }

    /// ĉ(x,y) relative to an arbitrary reference level.
    #[inline]
    pub fn conductance_at(&self, x: usize, y: usize, reference: f64) -> f64 {
        let nf = self.n as f64;
        (-0.5 * nf * (self.f[x] - reference) - 0.5 * nf * (self.f[y] - reference)).exp()
    }

    fn f_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (s, &v) in self.f.iter().enumerate() {
            if self.valid[s] {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    pub fn min_f(&self) -> f64 {
        self.f_range().0
    }

    pub fn max_f(&self) -> f64 {
        self.f_range().1
    }

    /// Number of grid points in the bounding box (all indices below this may be queried).
    pub fn num_sites(&self) -> usize {
        self.f.len()
    }

    pub fn is_site(&self, s: usize) -> bool {
        s < self.valid.len() && self.valid[s]
    }

    pub fn sites(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.f.len()).filter(move |&s| self.valid[s])
    }

    pub fn int_coords(&self, s: usize) -> Vec<i64> {
        (0..self.dim).map(|i| self.lo_index[i] + ((s / self.strides[i]) % self.shape[i]) as i64).collect()
    }

    pub fn coords(&self, s: usize) -> Vec<f64> {
        let nf = self.n as f64;
        self.int_coords(s).into_iter().map(|k| k as f64 / nf).collect()
    }

    /// Writes site coordinates into `out` without allocating.
    #[inline]
    pub fn coords_into(&self, s: usize, out: &mut [f64]) {
        let nf = self.n as f64;
        for i in 0..self.dim {
            out[i] = (self.lo_index[i] + ((s / self.strides[i]) % self.shape[i]) as i64) as f64 / nf;
        }
    }

    pub fn site_of(&self, k: &[i64]) -> Option<usize> {
        let mut s = 0;
        for i in 0..self.dim {
            let off = k[i] - self.lo_index[i];
            if off < 0 || off as usize >= self.shape[i] {
                return None;
            }
            s += off as usize * self.strides[i];
        }
        self.valid[s].then_some(s)
    }

    /// Lattice site closest to a continuum point, if it lies in Ξ_N.
    pub fn nearest_site(&self, x: &[f64]) -> Option<usize> {
        let nf = self.n as f64;
        let k: Vec<i64> = x.iter().map(|v| (v * nf).round() as i64).collect();
        self.site_of(&k)
    }

    /// Direction `dir` = 2·axis for +e_axis and 2·axis+1 for −e_axis.
    #[inline]
    pub fn neighbor(&self, s: usize, dir: usize) -> Option<usize> {
        let axis = dir / 2;
        let pos = (s / self.strides[axis]) % self.shape[axis];
        let t = if dir % 2 == 0 {
            if pos + 1 >= self.shape[axis] {
                return None;
            }
            s + self.strides[axis]
        } else {
            if pos == 0 {
                return None;
            }
            s - self.strides[axis]
        };
        self.valid[t].then_some(t)
    }

    #[inline]
    pub fn f(&self, s: usize) -> f64 {
        self.f[s]
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f
    }

    /// ŵ(x) = exp(−N(F(x) − f_ref)).
    #[inline]
    pub fn weight(&self, s: usize) -> f64 {
        self.weight[s]
    }

    /// ĉ between `s` and its +e_axis neighbour.
    #[inline]
    pub fn conductance(&self, s: usize, axis: usize) -> f64 {
        self.cond[s * self.dim + axis]
    }

    /// ĉ in direction `dir` (either sign).
    #[inline]
    pub fn conductance_dir(&self, s: usize, dir: usize) -> f64 {
        let axis = dir / 2;
        if dir % 2 == 0 {
            self.cond[s * self.dim + axis]
        } else {
            match self.neighbor(s, dir) {
                Some(t) => self.cond[t * self.dim + axis],
                None => 0.0,
            }
        }
    }

    /// Undirected edges as (lower site, upper site, axis).
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.sites().flat_map(move |s| (0..self.dim).filter_map(move |a| self.neighbor(s, 2 * a).map(|t| (s, t, a))))
    }

    #[inline]
    pub fn log_rate_sites(&self, x: usize, y: usize) -> f64 {
        -0.5 * self.n as f64 * (self.f[y] - self.f[x])
    }

    /// R_N(x,y) for integer lattice coordinates; zero rate when y is outside Ξ_N.
    pub fn jump_rate(&self, x: &[i64], y: &[i64]) -> Result<JumpRate> {
        let l1: i64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
        if l1 != 1 || x.len() != self.dim || y.len() != self.dim {
            return Err(Error::Config(format!("{x:?} and {y:?} are not nearest neighbours")));
        }
        let sx = self.site_of(x).ok_or_else(|| Error::Config(format!("{x:?} is not a lattice site")))?;
        match self.site_of(y) {
            Some(sy) => {
                let l = self.log_rate_sites(sx, sy);
                Ok(JumpRate { log_rate: l, rate: l.exp() })
            }
            None => Ok(JumpRate { log_rate: f64::NEG_INFINITY, rate: 0.0 }),
        }
    }

    /// λ_N(x) = Σ_y R_N(x,y).
    pub fn holding_rate(&self, s: usize) -> f64 {
        (0..2 * self.dim).filter_map(|dir| self.neighbor(s, dir)).map(|t| self.log_rate_sites(s, t).exp()).sum()
    }

    pub fn is_connected(&self) -> bool {
        let Some(start) = self.sites().next() else { return false };
        let mut seen = vec![false; self.num_sites()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 1;
        while let Some(s) = stack.pop() {
            for dir in 0..2 * self.dim {
                if let Some(t) = self.neighbor(s, dir) {
                    if !seen[t] {
                        seen[t] = true;
                        count += 1;
                        stack.push(t);
                    }
                }
            }
        }
        count == self.sites().count()
    }

    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&self.n.to_le_bytes())?;
        w.write_all(&(self.num_sites() as u64).to_le_bytes())?;
        w.write_all(&self.f_ref.to_le_bytes())?;
        for i in 0..self.dim {
            w.write_all(&self.domain.lo[i].to_le_bytes())?;
            w.write_all(&self.domain.hi[i].to_le_bytes())?;
            w.write_all(&self.lo_index[i].to_le_bytes())?;
            w.write_all(&(self.shape[i] as u64).to_le_bytes())?;
        }
        for s in 0..self.num_sites() {
            w.write_all(&[self.valid[s] as u8])?;
            w.write_all(&self.f[s].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Config("not a lattice dump (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported lattice dump version {version}")));
        }
        let dim = read_u32(&mut r)? as usize;
        let n = read_u32(&mut r)?;
        let total = read_u64(&mut r)? as usize;
        let f_ref = read_f64(&mut r)?;
        let (mut lo, mut hi, mut lo_index, mut shape) = (vec![], vec![], vec![], vec![]);
        for _ in 0..dim {
            lo.push(read_f64(&mut r)?);
            hi.push(read_f64(&mut r)?);
            lo_index.push(read_u64(&mut r)? as i64);
            shape.push(read_u64(&mut r)? as usize);
        }
        if shape.iter().product::<usize>() != total {
            return Err(Error::Config("lattice dump header is inconsistent".into()));
        }
        let mut valid = Vec::with_capacity(total);
        let mut f = Vec::with_capacity(total);
        for _ in 0..total {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            valid.push(b[0] != 0);
            f.push(read_f64(&mut r)?);
        }
        let mut strides = vec![1usize; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shape[i + 1];
        }
        let mut chain = LatticeChain {
            n,
            dim,
            domain: BoxDomain { lo, hi },
            lo_index,
            shape,
            strides,
            valid,
            f,
            f_ref,
            weight: vec![],
            cond: vec![],
        };
        chain.set_reference(f_ref)?;
        Ok(chain)
    }
}

const MAGIC: &[u8; 8] = b"MSLATTIC";
const FORMAT_VERSION: u32 = 1;

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

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionCheck {
    pub n: u32,
    pub rho: f64,
    /// Σ_k det(Hess F(m^k))^{-1/2} over global minima.
    pub denominator: f64,
    pub global_minima: Vec<Vec<f64>>,
}

/// ρ_N = e^{N F(m)} (2πN)^{-d/2} Σ_x e^{-N F(x)} / Σ_k det(Hess F(m^k))^{-1/2}.
pub fn partition_sum_check(chain: &LatticeChain, cps: &[CriticalPoint]) -> Result<PartitionCheck> {
    let minima: Vec<&CriticalPoint> = cps.iter().filter(|c| c.kind == Kind::Minimum).collect();
    let fmin = minima.iter().map(|c| c.value).fold(f64::INFINITY, f64::min);
    if !fmin.is_finite() {
        return Err(Error::Hypothesis("no global minimum found".into()));
    }
    let (lo, hi) = chain.f_range();
    let tol = 1e-8 * (hi - lo).max(f64::MIN_POSITIVE);
    let global: Vec<&&CriticalPoint> = minima.iter().filter(|c| c.value <= fmin + tol).collect();
    let denominator: f64 = global.iter().map(|c| 1.0 / c.abs_det().sqrt()).sum();
    let nf = chain.n as f64;
    let sum: f64 = chain.sites().map(|s| (-nf * (chain.f(s) - fmin)).exp()).sum();
    let rho = sum * (2.0 * std::f64::consts::PI * nf).powf(-(chain.dim as f64) / 2.0) / denominator;
    Ok(PartitionCheck { n: chain.n, rho, denominator, global_minima: global.iter().map(|c| c.location.clone()).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{builtin, find_critical_points, parse_potential, CriticalOptions};

    fn flat(d: usize) -> PotentialModel {
        parse_potential("flat", "0.3", BoxDomain { lo: vec![-1.5; d], hi: vec![1.5; d] }).unwrap()
    }

    #[test]
    fn counts_interior_sites() {
        let m = builtin("double_well").unwrap();
        let c = LatticeChain::build(&m, 10, &LatticeOptions::default()).unwrap();
        assert_eq!(c.sites().count(), 29);
        assert!((c.coords(0)[0] + 1.4).abs() < 1e-15);
        assert!((c.coords(28)[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn conductances_are_symmetric_geometric_means() {
        let m = builtin("double_well").unwrap();
        let c = LatticeChain::build(&m, 50, &LatticeOptions::default()).unwrap();
        for (s, t, a) in c.edges() {
            let g = c.conductance(s, a);
            assert_eq!(g, c.conductance_dir(t, 2 * a + 1));
            assert_eq!(g, c.conductance_at(t, s, c.f_ref));
            let gm = (c.weight(s) * c.weight(t)).sqrt();
            assert!((g - gm).abs() <= 1e-12 * g);
        }
        let argmin = c.sites().min_by(|&a, &b| c.f(a).total_cmp(&c.f(b))).unwrap();
        assert_eq!(c.weight(argmin), 1.0);
    }

    #[test]
    fn rates_follow_increments() {
        let c = LatticeChain::build(&flat(1), 20, &LatticeOptions::default()).unwrap();
        let r = c.jump_rate(&[0], &[1]).unwrap();
        assert_eq!(r.rate, 1.0);
        let edge = c.jump_rate(&[29], &[30]).unwrap();
        assert_eq!(edge.rate, 0.0);
        assert!(c.jump_rate(&[0], &[2]).is_err());

        let m = parse_potential("lin", "x1", BoxDomain { lo: vec![-1.0], hi: vec![1.0] }).unwrap();
        let c = LatticeChain::build(&m, 10, &LatticeOptions::default()).unwrap();
        // F(y) - F(x) = 1/N here, so over two steps the log rate is -N/2 * 2/N = -1.
        let r1 = c.jump_rate(&[0], &[1]).unwrap().log_rate + c.jump_rate(&[1], &[2]).unwrap().log_rate;
        assert!((r1 + 1.0).abs() < 1e-12);
    }

    #[test]
    fn holding_rate_excludes_outside() {
        let c = LatticeChain::build(&flat(2), 8, &LatticeOptions::default()).unwrap();
        let corner = c.site_of(&[-11, -11]).unwrap();
        assert_eq!(c.holding_rate(corner), 2.0);
        let centre = c.site_of(&[0, 0]).unwrap();
        assert_eq!(c.holding_rate(centre), 4.0);
    }

    #[test]
    fn builtins_are_connected() {
        for name in crate::potential::builtin_names().into_iter().chain(crate::potential::fixture_names()) {
            let m = builtin(name).unwrap();
            let c = LatticeChain::build(&m, 8, &LatticeOptions::default()).unwrap();
            assert!(c.is_connected(), "{name}");
        }
    }

    #[test]
    fn reference_guard_rescales() {
        let m = builtin("four_well").unwrap();
        let c = LatticeChain::build(&m, 400, &LatticeOptions::default()).unwrap();
        assert!(c.f_ref > c.min_f());
        for s in c.sites() {
            assert!(c.weight(s).is_finite() && c.weight(s) > 0.0);
        }
    }

    #[test]
    fn dump_and_load_round_trip() {
        let m = builtin("four_well").unwrap();
        let c = LatticeChain::build(&m, 12, &LatticeOptions::default()).unwrap();
        let mut buf = Vec::new();
        c.dump(&mut buf).unwrap();
        let back = LatticeChain::load(&buf[..]).unwrap();
        assert_eq!(back.f_values(), c.f_values());
        assert_eq!(back.shape, c.shape);
        for (s, _, a) in c.edges() {
            assert_eq!(back.conductance(s, a), c.conductance(s, a));
        }
        assert!(LatticeChain::load(&buf[..10]).is_err());
    }

    #[test]
    fn partition_sum_for_double_well() {
        let m = builtin("double_well").unwrap();
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(1)).unwrap();
        let mut prev = f64::INFINITY;
        for n in [50, 100, 200] {
            let c = LatticeChain::build(&m, n, &LatticeOptions::default()).unwrap();
            let p = partition_sum_check(&c, &cps).unwrap();
            assert!((p.denominator - 2.0 / 8f64.sqrt()).abs() < 1e-10);
            let err = (p.rho - 1.0).abs();
            assert!(err < prev);
            prev = err;
        }
    }
}
