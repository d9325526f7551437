//! Equilibrium potentials, capacities and mean hitting times on the lattice chain, plus the
//! variational bounds built from the saddle geometry.

mod flow;
mod upper;

pub use flow::{flow_lower_bound, saddle_flow, FlowField, FlowOptions, LowerBound};
pub use upper::{default_width, gaussian_profile, test_function, test_function_upper_bound, UpperBound, UpperOptions};

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticeChain, EXP_GUARD};
use crate::linalg::{solve, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverKind {
    Cg,
    Dense,
    /// Banded star-mesh elimination; exact for any conductance contrast.
    Elimination,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    /// Defaults to 20·√(free sites) + 500.
    pub max_iter: Option<usize>,
    pub solver: SolverKind,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-10, max_iter: None, solver: SolverKind::Cg }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaledCapacity {
    /// Level at which the prefactor is expressed.
    pub reference: f64,
    pub prefactor: f64,
    /// −N(reference − f_ref): Ĉap at the lattice reference is prefactor·e^{log_magnitude}.
    pub log_magnitude: f64,
    pub n: u32,
    pub dim: usize,
}

impl ScaledCapacity {
    fn new(chain: &LatticeChain, reference: f64, prefactor: f64) -> Self {
        ScaledCapacity {
            reference,
            prefactor,
            log_magnitude: -(chain.n as f64) * (reference - chain.f_ref),
            n: chain.n,
            dim: chain.dim,
        }
    }

    /// Ĉap relative to an arbitrary level.
    pub fn at(&self, level: f64) -> f64 {
        self.prefactor * (-(self.n as f64) * (self.reference - level)).exp()
    }

    /// κ_N = (2πN)^{1−d/2} e^{N H} Z_N Cap_N.
    pub fn kappa(&self, height: f64) -> f64 {
        let nf = self.n as f64;
        (2.0 * std::f64::consts::PI * nf).powf(1.0 - 0.5 * self.dim as f64) * self.at(height)
    }
}

/// Equilibrium potential stored as minimax labels plus a correction, h = h0 + δ.
#[derive(Debug, Clone)]
pub struct HarmonicSolution {
    pub h0: Vec<f64>,
    pub delta: Vec<f64>,
    pub label: Vec<u8>,
    pub reference: f64,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Dirichlet energy relative to `reference`.
    pub energy: f64,
    pub free_sites: usize,
    pub excluded_sites: usize,
}

pub(crate) const FREE: u8 = 0;
pub(crate) const IN_A: u8 = 1;
pub(crate) const IN_B: u8 = 2;
pub(crate) const OFF: u8 = 3;

impl HarmonicSolution {
    pub fn value(&self, s: usize) -> f64 {
        (self.h0[s] + self.delta[s]).clamp(0.0, 1.0)
    }

    pub fn potential(&self) -> Vec<f64> {
        (0..self.h0.len()).map(|s| self.value(s)).collect()
    }

    /// h(t) − h(s) without cancellation against the labels.
    pub fn difference(&self, s: usize, t: usize) -> f64 {
        (self.h0[t] - self.h0[s]) + (self.delta[t] - self.delta[s])
    }

    /// Largest excursion of the unclamped potential outside [0,1].
    pub fn overshoot(&self) -> f64 {
        (0..self.h0.len())
            .filter(|&s| self.label[s] != OFF)
            .map(|s| {
                let v = self.h0[s] + self.delta[s];
                (-v).max(v - 1.0).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn capacity(&self, chain: &LatticeChain) -> ScaledCapacity {
        ScaledCapacity::new(chain, self.reference, self.energy)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Key(f64);
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Lowest possible maximum of F along lattice paths from `sources` to each site.
pub fn minimax_height(chain: &LatticeChain, sources: &[usize]) -> Vec<f64> {
    let mut m = vec![f64::INFINITY; chain.num_sites()];
    let mut heap = BinaryHeap::new();
    for &s in sources {
        m[s] = chain.f(s);
        heap.push(Reverse((Key(m[s]), s)));
    }
    while let Some(Reverse((Key(v), s))) = heap.pop() {
        if v > m[s] {
            continue;
        }
        for dir in 0..2 * chain.dim {
            if let Some(t) = chain.neighbor(s, dir) {
                let nv = v.max(chain.f(t));
                if nv < m[t] {
                    m[t] = nv;
                    heap.push(Reverse((Key(nv), t)));
                }
            }
        }
    }
    m
}

pub(crate) fn label_sets(chain: &LatticeChain, a: &[usize], b: &[usize]) -> Result<Vec<u8>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("site sets must be nonempty".into()));
    }
    let mut label = vec![OFF; chain.num_sites()];
    for s in chain.sites() {
        label[s] = FREE;
    }
    for (&set_label, set) in [IN_A, IN_B].iter().zip([a, b]) {
        for &s in set {
            if !chain.is_site(s) {
                return Err(Error::Config(format!("site {s} is not in the lattice")));
            }
            if label[s] != FREE && label[s] != set_label {
                return Err(Error::Config("sets must be disjoint".into()));
            }
            label[s] = set_label;
        }
    }
    Ok(label)
}

/// ĉ(s,t) relative to `reference`.
pub(crate) fn local_conductance(chain: &LatticeChain, s: usize, t: usize, reference: f64) -> f64 {
    chain.conductance_at(s, t, reference)
}

fn check_range(chain: &LatticeChain, reference: f64) -> Result<()> {
    let nf = chain.n as f64;
    if nf * (reference - chain.min_f()) > EXP_GUARD {
        return Err(Error::Numerical(format!(
            "N·(H − min F) = {:.1} exceeds the representable range",
            nf * (reference - chain.min_f())
        )));
    }
    Ok(())
}

pub fn solve_equilibrium_potential(
    chain: &LatticeChain,
    a: &[usize],
    b: &[usize],
    opts: &SolveOptions,
) -> Result<HarmonicSolution> {
    let mut label = label_sets(chain, a, b)?;
    let ma = minimax_height(chain, a);
    let mb = minimax_height(chain, b);
    let reference = b.iter().map(|&s| ma[s]).fold(f64::INFINITY, f64::min);
    if !reference.is_finite() {
        return Err(Error::Numerical("B is not reachable from A".into()));
    }
    check_range(chain, reference)?;
    let total = chain.num_sites();
    let mut h0 = vec![0.0; total];
    let mut excluded = 0;
    for s in chain.sites() {
        h0[s] = match label[s] {
            IN_A => 1.0,
            IN_B => 0.0,
            _ if ma[s] < mb[s] => 1.0,
            _ if ma[s] > mb[s] => 0.0,
            _ if ma[s].is_finite() => 0.5,
            _ => {
                label[s] = OFF;
                excluded += 1;
                0.0
            }
        };
    }
    // Active free sites and their neighbourhoods.
    let d = chain.dim;
    let free: Vec<usize> = chain.sites().filter(|&s| label[s] == FREE).collect();
    let mut index = vec![u32::MAX; total];
    for (i, &s) in free.iter().enumerate() {
        index[s] = i as u32;
    }
    let k = free.len();
    let mut nb = vec![u32::MAX; k * 2 * d];
    let mut cw = vec![0.0; k * 2 * d];
    let mut diag = vec![0.0; k];
    let mut fixed = vec![0.0; k];
    let mut to_a = vec![0.0; k];
    let mut isolated = vec![false; k];
    let mut rhs = vec![0.0; k];
    for (i, &s) in free.iter().enumerate() {
        for dir in 0..2 * d {
            if let Some(t) = chain.neighbor(s, dir) {
                if label[t] == OFF {
                    continue;
                }
                let c = local_conductance(chain, s, t, reference);
                cw[i * 2 * d + dir] = c;
                nb[i * 2 * d + dir] = index[t];
                diag[i] += c;
                if label[t] != FREE {
                    fixed[i] += c;
                }
                if label[t] == IN_A {
                    to_a[i] += c;
                }
                rhs[i] += c * (h0[t] - h0[s]);
            }
        }
        if diag[i] == 0.0 {
            // every conductance underflowed: the site carries no current
            diag[i] = 1.0;
            fixed[i] = 1.0;
            isolated[i] = true;
        }
    }
    let mut exact_energy = None;
    let mut eliminate = || -> Result<(Vec<f64>, usize, f64)> {
        let direct: f64 = a
            .iter()
            .flat_map(|&s| (0..2 * d).filter_map(move |dir| chain.neighbor(s, dir).map(|t| (s, t))))
            .filter(|&(_, t)| label[t] == IN_B)
            .map(|(s, t)| local_conductance(chain, s, t, reference))
            .sum();
        let (h, cap) = banded_elimination(&nb, &cw, &fixed, &to_a, 2 * d)?;
        exact_energy = Some(direct + cap);
        Ok(((0..k).map(|i| if isolated[i] { 0.0 } else { h[i] - h0[free[i]] }).collect(), 0, 0.0))
    };
    let (delta_free, iterations, residual_norm) = match opts.solver {
        SolverKind::Cg => {
            let max_iter = opts.max_iter.unwrap_or(20 * (k as f64).sqrt() as usize + 500);
            match pcg(&nb, &cw, &diag, &fixed, &rhs, 2 * d, opts.tol, max_iter) {
                Ok(r) => r,
                Err(e @ (Error::Numerical(_) | Error::NotConverged { .. })) => eliminate().map_err(|_| e)?,
                Err(e) => return Err(e),
            }
        }
        SolverKind::Elimination => eliminate()?,
        SolverKind::Dense => {
            if k > 4000 {
                return Err(Error::Config(format!("dense solve limited to 4000 free sites, got {k}")));
            }
            let mut m = Matrix::zeros(k);
            let mut r = vec![0.0; k];
            for i in 0..k {
                m[(i, i)] = 1.0;
                for dir in 0..2 * d {
                    let j = nb[i * 2 * d + dir];
                    if j != u32::MAX {
                        m[(i, j as usize)] -= cw[i * 2 * d + dir] / diag[i];
                    }
                }
                r[i] = rhs[i] / diag[i];
            }
            (solve(&m, &r)?, 1, 0.0)
        }
    };
    let mut delta = vec![0.0; total];
    for (i, &s) in free.iter().enumerate() {
        delta[s] = delta_free[i];
    }
    let mut sol = HarmonicSolution {
        h0,
        delta,
        label,
        reference,
        iterations,
        residual_norm,
        energy: 0.0,
        free_sites: k,
        excluded_sites: excluded,
    };
    sol.energy = match exact_energy {
        Some(e) => e,
        None => dirichlet_energy_with(chain, |s, t| sol.difference(s, t), reference),
    };
    Ok(sol)
}

const MAX_BAND_ENTRIES: usize = 40_000_000;

// Star-mesh elimination of the free sites in index order, kept in a band. Returns the
// equilibrium potential on the free sites and the effective conductance between A and B
// through them. Every update adds nonnegative terms, so nothing cancels however large the
// conductance contrast.
fn banded_elimination(nb: &[u32], cw: &[f64], fixed: &[f64], to_a: &[f64], deg: usize) -> Result<(Vec<f64>, f64)> {
    let k = fixed.len();
    let mut bw = 0;
    for i in 0..k {
        for e in i * deg..(i + 1) * deg {
            if nb[e] != u32::MAX && nb[e] as usize > i {
                bw = bw.max(nb[e] as usize - i);
            }
        }
    }
    if k.saturating_mul(bw) > MAX_BAND_ENTRIES {
        return Err(Error::Config(format!(
            "elimination band {bw} over {k} free sites exceeds {MAX_BAND_ENTRIES} entries"
        )));
    }
    // upper[i*bw + o] is the conductance between i and i+1+o.
    let mut upper = vec![0.0; k * bw];
    for i in 0..k {
        for e in i * deg..(i + 1) * deg {
            let j = nb[e] as usize;
            if nb[e] != u32::MAX && j > i {
                upper[i * bw + j - i - 1] += cw[e];
            }
        }
    }
    let mut ga = to_a.to_vec();
    let mut gb: Vec<f64> = (0..k).map(|i| (fixed[i] - to_a[i]).max(0.0)).collect();
    let mut pivot = vec![0.0; k];
    let mut cap = 0.0;
    for i in 0..k {
        let width = bw.min(k - 1 - i);
        let row: Vec<(usize, f64)> =
            upper[i * bw..i * bw + width].iter().enumerate().filter(|(_, &c)| c > 0.0).map(|(o, &c)| (o, c)).collect();
        let d = ga[i] + gb[i] + row.iter().map(|(_, c)| c).sum::<f64>();
        if !(d > 0.0) {
            return Err(Error::Numerical("free sites are not connected to A or B".into()));
        }
        pivot[i] = d;
        cap += ga[i] * gb[i] / d;
        for (x, &(o1, c1)) in row.iter().enumerate() {
            let j = i + 1 + o1;
            let share = c1 / d;
            ga[j] += share * ga[i];
            gb[j] += share * gb[i];
            for &(o2, c2) in &row[x + 1..] {
                upper[j * bw + (o2 - o1 - 1)] += share * c2;
            }
        }
    }
    let mut h = vec![0.0; k];
    for i in (0..k).rev() {
        let width = bw.min(k - 1 - i);
        let inflow: f64 = (0..width).map(|o| upper[i * bw + o] * h[i + 1 + o]).sum();
        h[i] = ((ga[i] + inflow) / pivot[i]).min(1.0);
    }
    Ok((h, cap))
}

// Jacobi-preconditioned CG on the free-site Laplacian given as neighbour lists. The operator
// is applied in edge-difference form so that plateaus do not cancel against their own diagonal.
#[allow(clippy::too_many_arguments)]
fn pcg(
    nb: &[u32],
    cw: &[f64],
    diag: &[f64],
    fixed: &[f64],
    b: &[f64],
    deg: usize,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize, f64)> {
    let k = b.len();
    let apply = |p: &[f64], out: &mut [f64]| {
        for i in 0..k {
            let mut acc = fixed[i] * p[i];
            for e in i * deg..(i + 1) * deg {
                if nb[e] != u32::MAX {
                    acc += cw[e] * (p[i] - p[nb[e] as usize]);
                }
            }
            out[i] = acc;
        }
    };
    let precondition = |r: &[f64], z: &mut [f64]| {
        for i in 0..k {
            z[i] = r[i] / diag[i];
        }
    };
    let jacobi_max = |r: &[f64]| (0..k).fold(0.0f64, |m, i| m.max((r[i] / diag[i]).abs()));
    let mut x = vec![0.0; k];
    let mut r = b.to_vec();
    let mut z = vec![0.0; k];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let r0 = rz.sqrt();
    if k == 0 || r0 == 0.0 {
        return Ok((x, 0, 0.0));
    }
    let mut ap = vec![0.0; k];
    for it in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numerical("conjugate gradient lost positive definiteness".into()));
        }
        let alpha = rz / pap;
        for i in 0..k {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precondition(&r, &mut z);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        // Relative energy-norm residual, and the largest Jacobi correction so that
        // low-conductance regions are resolved as well.
        let zmax = jacobi_max(&r);
        let rel = (rz_new.max(0.0).sqrt() / r0).max(zmax);
        if rel <= tol {
            return Ok((x, it + 1, rel));
        }
        let beta = rz_new / rz;
        for i in 0..k {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_new;
    }
    let zmax = jacobi_max(&r);
    let rel = (rz.max(0.0).sqrt() / r0).max(zmax);
    Err(Error::NotConverged { iterations: max_iter, residual: rel })
}

/// Σ_edges ĉ (f(y) − f(x))² relative to `reference`, with differences supplied directly.
pub fn dirichlet_energy_with(chain: &LatticeChain, diff: impl Fn(usize, usize) -> f64, reference: f64) -> f64 {
    let mut e = 0.0;
    for (s, t, _) in chain.edges() {
        let dv = diff(s, t);
        if dv != 0.0 {
            e += local_conductance(chain, s, t, reference) * dv * dv;
        }
    }
    e
}

pub fn dirichlet_energy(chain: &LatticeChain, f: &[f64], reference: f64) -> f64 {
    dirichlet_energy_with(chain, |s, t| f[t] - f[s], reference)
}

pub fn capacity_scaled(chain: &LatticeChain, sol: &HarmonicSolution) -> ScaledCapacity {
    sol.capacity(chain)
}

/// Net current of the equilibrium potential out of the sites where `inside` holds,
/// relative to the solution's reference.
pub fn flux_through_cut(chain: &LatticeChain, sol: &HarmonicSolution, inside: impl Fn(usize) -> bool) -> f64 {
    let mut flux = 0.0;
    for (s, t, _) in chain.edges() {
        let (si, ti) = (inside(s), inside(t));
        if si == ti {
            continue;
        }
        let c = local_conductance(chain, s, t, sol.reference);
        // current from s to t is ĉ (h(s) − h(t))
        let cur = -c * sol.difference(s, t);
        flux += if si { cur } else { -cur };
    }
    flux
}

/// Σ_{x∈A} ŵ(x) λ(x) P_x[H_B < H⁺_A] by a dense absorbing-chain solve, relative to `reference`.
pub fn escape_capacity_dense(chain: &LatticeChain, a: &[usize], b: &[usize], reference: f64) -> Result<f64> {
    let label = label_sets(chain, a, b)?;
    let free: Vec<usize> = chain.sites().filter(|&s| label[s] == FREE).collect();
    let k = free.len();
    if k > 4000 {
        return Err(Error::Config(format!("dense solve limited to 4000 free sites, got {k}")));
    }
    let mut index = vec![usize::MAX; chain.num_sites()];
    for (i, &s) in free.iter().enumerate() {
        index[s] = i;
    }
    // u(y) = P_y[H_B < H_A] on free sites.
    let mut m = Matrix::zeros(k);
    let mut r = vec![0.0; k];
    for (i, &s) in free.iter().enumerate() {
        m[(i, i)] = 1.0;
        let lam = chain.holding_rate(s);
        for dir in 0..2 * chain.dim {
            if let Some(t) = chain.neighbor(s, dir) {
                let p = chain.log_rate_sites(s, t).exp() / lam;
                match label[t] {
                    FREE => m[(i, index[t])] -= p,
                    IN_B => r[i] += p,
                    _ => {}
                }
            }
        }
    }
    let u = if k > 0 { solve(&m, &r)? } else { vec![] };
    let nf = chain.n as f64;
    let mut total = 0.0;
    for &s in a {
        let w = (-nf * (chain.f(s) - reference)).exp();
        for dir in 0..2 * chain.dim {
            if let Some(t) = chain.neighbor(s, dir) {
                let rate = chain.log_rate_sites(s, t).exp();
                let esc = match label[t] {
                    FREE => u[index[t]],
                    IN_B => 1.0,
                    _ => 0.0,
                };
                total += w * rate * esc;
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HittingTime {
    pub mean: f64,
    pub capacity: ScaledCapacity,
    pub iterations: usize,
}

/// E_x[H_B] = Σ_y ŵ(y) h_{x,B}(y) / Ĉap(x,B).
pub fn mean_hitting_time(chain: &LatticeChain, start: usize, b: &[usize], opts: &SolveOptions) -> Result<HittingTime> {
    if b.contains(&start) {
        return Ok(HittingTime { mean: 0.0, capacity: ScaledCapacity::new(chain, chain.f_ref, f64::INFINITY), iterations: 0 });
    }
    mean_hitting_time_from_set(chain, &[start], b, opts)
}

/// Mean hitting time of B started from the equilibrium measure on A.
pub fn mean_hitting_time_from_set(
    chain: &LatticeChain,
    a: &[usize],
    b: &[usize],
    opts: &SolveOptions,
) -> Result<HittingTime> {
    let sol = solve_equilibrium_potential(chain, a, b, opts)?;
    let nf = chain.n as f64;
    let mass: f64 = chain
        .sites()
        .filter(|&s| sol.label[s] != OFF)
        .map(|s| (-nf * (chain.f(s) - sol.reference)).exp() * (sol.h0[s] + sol.delta[s]))
        .sum();
    if !(sol.energy > 0.0) {
        return Err(Error::Numerical("B is unreachable".into()));
    }
    Ok(HittingTime { mean: mass / sol.energy, capacity: sol.capacity(chain), iterations: sol.iterations })
}

/// Dense absorbing solve of λu − Σ R u = 1 off B; returns u(start).
pub fn mean_hitting_time_dense(chain: &LatticeChain, start: usize, b: &[usize]) -> Result<f64> {
    if b.is_empty() {
        return Err(Error::Config("target set must be nonempty".into()));
    }
    if b.contains(&start) {
        return Ok(0.0);
    }
    let mut in_b = vec![false; chain.num_sites()];
    for &s in b {
        in_b[s] = true;
    }
    let free: Vec<usize> = chain.sites().filter(|&s| !in_b[s]).collect();
    let k = free.len();
    if k > 4000 {
        return Err(Error::Config(format!("dense solve limited to 4000 free sites, got {k}")));
    }
    let mut index = vec![usize::MAX; chain.num_sites()];
    for (i, &s) in free.iter().enumerate() {
        index[s] = i;
    }
    let mut m = Matrix::zeros(k);
    let mut r = vec![0.0; k];
    for (i, &s) in free.iter().enumerate() {
        let lam = chain.holding_rate(s);
        m[(i, i)] = 1.0;
        r[i] = 1.0 / lam;
        for dir in 0..2 * chain.dim {
            if let Some(t) = chain.neighbor(s, dir) {
                if !in_b[t] {
                    m[(i, index[t])] -= chain.log_rate_sites(s, t).exp() / lam;
                }
            }
        }
    }
    let u = solve(&m, &r).map_err(|_| Error::Numerical("B is unreachable from the start".into()))?;
    Ok(u[index[start]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeOptions;
    use crate::potential::{builtin, parse_potential, BoxDomain};

    fn chain_of(src: &str, lo: f64, hi: f64, n: u32) -> LatticeChain {
        let m = parse_potential("t", src, BoxDomain { lo: vec![lo], hi: vec![hi] }).unwrap();
        LatticeChain::build(&m, n, &LatticeOptions::default()).unwrap()
    }

    #[test]
    fn constant_three_site_path() {
        // N=4 on (-0.5,0.5): sites -0.25, 0, 0.25.
        let c = chain_of("1 + 0*x1", -0.5, 0.5, 4);
        let s: Vec<usize> = c.sites().collect();
        assert_eq!(s.len(), 3);
        let sol = solve_equilibrium_potential(&c, &[s[0]], &[s[2]], &SolveOptions::default()).unwrap();
        assert_eq!(sol.potential(), vec![1.0, 0.5, 0.0]);
        let chat = c.conductance_at(s[0], s[1], sol.reference);
        assert!((sol.energy - chat / 2.0).abs() < 1e-15);
    }

    #[test]
    fn adjacent_sets_give_indicator() {
        let c = chain_of("x1^2", -1.0, 1.0, 10);
        let s: Vec<usize> = c.sites().collect();
        let i = s.len() / 2;
        let sol = solve_equilibrium_potential(&c, &[s[i]], &[s[i + 1]], &SolveOptions::default()).unwrap();
        for (k, &x) in s.iter().enumerate() {
            assert!((sol.value(x) - if k <= i { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }

    #[test]
    fn single_site_exponential_clock() {
        let c = chain_of("x1^2", -0.5, 0.5, 4);
        let s: Vec<usize> = c.sites().collect();
        // From the middle site both neighbours are in B.
        let lam = c.holding_rate(s[1]);
        let u = mean_hitting_time(&c, s[1], &[s[0], s[2]], &SolveOptions::default()).unwrap();
        assert!((u.mean * lam - 1.0).abs() < 1e-12);
        assert!((mean_hitting_time_dense(&c, s[1], &[s[0], s[2]]).unwrap() * lam - 1.0).abs() < 1e-12);
        assert_eq!(mean_hitting_time(&c, s[0], &[s[0]], &SolveOptions::default()).unwrap().mean, 0.0);
    }

    #[test]
    fn double_well_matches_series_formula_and_dense() {
        let m = builtin("double_well").unwrap();
        for n in [30u32, 100] {
            let c = LatticeChain::build(&m, n, &LatticeOptions::default()).unwrap();
            let sites: Vec<usize> = c.sites().collect();
            let a: Vec<usize> = sites.iter().copied().filter(|&s| c.coords(s)[0] < 0.0 && c.f(s) < 0.5).collect();
            let b: Vec<usize> = sites.iter().copied().filter(|&s| c.coords(s)[0] > 0.0 && c.f(s) < 0.5).collect();
            let sol = solve_equilibrium_potential(&c, &a, &b, &SolveOptions::default()).unwrap();
            let ia = sites.iter().position(|s| s == a.last().unwrap()).unwrap();
            let ib = sites.iter().position(|s| s == &b[0]).unwrap();
            let series: f64 = 1.0 / (ia..ib).map(|k| 1.0 / c.conductance_at(sites[k], sites[k + 1], sol.reference)).sum::<f64>();
            assert!((sol.energy / series - 1.0).abs() < 1e-9, "N={n}");
            let h = sol.potential();
            let worst = sites.windows(2).map(|w| h[w[1]] - h[w[0]]).fold(f64::MIN, f64::max);
            assert!(worst <= 1e-10, "N={n} monotonicity defect {worst:e}");
            if n == 30 {
                let dense =
                    solve_equilibrium_potential(&c, &a, &b, &SolveOptions { solver: SolverKind::Dense, ..Default::default() })
                        .unwrap();
                for &s in &sites {
                    assert!((dense.value(s) - sol.value(s)).abs() < 1e-8);
                }
            }
            let back = solve_equilibrium_potential(&c, &b, &a, &SolveOptions::default()).unwrap();
            assert!((back.energy / sol.energy - 1.0).abs() < 1e-9);
            let k = sol.capacity(&c).kappa(1.0);
            assert!((k / 2.0 - 1.0).abs() < 0.1, "kappa {k}");
        }
    }

    #[test]
    fn escape_form_matches_dirichlet_energy() {
        let m = builtin("double_well").unwrap();
        let c = LatticeChain::build(&m, 20, &LatticeOptions::default()).unwrap();
        let sites: Vec<usize> = c.sites().collect();
        let a: Vec<usize> = sites.iter().copied().filter(|&s| c.coords(s)[0] < -0.8).collect();
        let b: Vec<usize> = sites.iter().copied().filter(|&s| c.coords(s)[0] > 0.6).collect();
        let sol = solve_equilibrium_potential(&c, &a, &b, &SolveOptions::default()).unwrap();
        let esc = escape_capacity_dense(&c, &a, &b, sol.reference).unwrap();
        assert!((esc / sol.energy - 1.0).abs() < 1e-8);
        let cut = flux_through_cut(&c, &sol, |s| c.coords(s)[0] < 0.1);
        assert!((cut / sol.energy - 1.0).abs() < 1e-8);
    }

    #[test]
    fn disjointness_enforced() {
        let c = chain_of("x1^2", -1.0, 1.0, 10);
        let s: Vec<usize> = c.sites().collect();
        let err = solve_equilibrium_potential(&c, &[s[0]], &[s[0]], &SolveOptions::default()).unwrap_err();
        assert!(err.to_string().contains("sets must be disjoint"));
    }
}
