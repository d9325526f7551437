use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{default_width, local_conductance, ScaledCapacity};
use crate::error::{Error, Result};
use crate::landscape::{sites_within, Gluing};
use crate::lattice::LatticeChain;
use crate::linalg::{dot, norm};
use crate::potential::PotentialModel;

#[derive(Debug, Clone, Copy, Default)]
pub struct FlowOptions {
    /// Box half-width; defaults to `default_width` with exponent 0.4.
    pub epsilon: Option<f64>,
}

/// Antisymmetric edge flow stored on the +e_axis edge of each site.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowField {
    pub dim: usize,
    pub flow: Vec<f64>,
    pub sources: Vec<usize>,
    pub sinks: Vec<usize>,
    pub epsilon: f64,
    /// Flux out of ∂₋B before rescaling.
    pub raw_flux: f64,
    /// Largest N·(F(x^k) − F(x^0)) along the descent paths.
    pub path_rise: f64,
    pub max_abs: f64,
}

impl FlowField {
    fn zeros(chain: &LatticeChain, epsilon: f64) -> Self {
        FlowField {
            dim: chain.dim,
            flow: vec![0.0; chain.num_sites() * chain.dim],
            sources: vec![],
            sinks: vec![],
            epsilon,
            raw_flux: 0.0,
            path_rise: 0.0,
            max_abs: 0.0,
        }
    }

    /// Adds `q` to the flow from `s` to its neighbour in direction `dir`.
    fn push(&mut self, chain: &LatticeChain, s: usize, dir: usize, q: f64) -> usize {
        let t = chain.neighbor(s, dir).expect("push along an existing edge");
        let axis = dir / 2;
        if dir % 2 == 0 {
            self.flow[s * self.dim + axis] += q;
        } else {
            self.flow[t * self.dim + axis] -= q;
        }
        t
    }

    /// Flow from `s` to its neighbour in direction `dir`.
    pub fn along(&self, chain: &LatticeChain, s: usize, dir: usize) -> f64 {
        let axis = dir / 2;
        if dir % 2 == 0 {
            self.flow[s * self.dim + axis]
        } else {
            match chain.neighbor(s, dir) {
                Some(t) => -self.flow[t * self.dim + axis],
                None => 0.0,
            }
        }
    }

    /// Net outflow at `s`.
    pub fn divergence(&self, chain: &LatticeChain, s: usize) -> f64 {
        (0..2 * self.dim).filter(|&dir| chain.neighbor(s, dir).is_some()).map(|dir| self.along(chain, s, dir)).sum()
    }

    /// ‖Φ‖² = Σ Φ²/ĉ relative to `reference`.
    pub fn energy(&self, chain: &LatticeChain, reference: f64) -> f64 {
        let mut e = 0.0;
        for (s, t, axis) in chain.edges() {
            let q = self.flow[s * self.dim + axis];
            if q != 0.0 {
                e += q * q / local_conductance(chain, s, t, reference);
            }
        }
        e
    }

    fn scale(&mut self, k: f64) {
        self.flow.iter_mut().for_each(|q| *q *= k);
        self.max_abs = self.flow.iter().fold(0.0, |m, q| m.max(q.abs()));
    }

    /// Largest |div| away from `allowed` sites.
    pub fn max_interior_divergence(&self, chain: &LatticeChain, allowed: &[bool]) -> f64 {
        chain.sites().filter(|&s| !allowed[s]).map(|s| self.divergence(chain, s).abs()).fold(0.0, f64::max)
    }

    /// Total net outflow of a site set.
    pub fn net_outflow(&self, chain: &LatticeChain, set: &[usize]) -> f64 {
        set.iter().map(|&s| self.divergence(chain, s)).sum()
    }
}

/// Unit flow through the saddle `g` from the sites `source` (ℰ on the A side) to `sink`.
pub fn saddle_flow(
    model: &PotentialModel,
    chain: &LatticeChain,
    g: &Gluing,
    a_set: &[usize],
    source: &[bool],
    sink: &[bool],
    opts: &FlowOptions,
) -> Result<FlowField> {
    let d = chain.dim;
    let nf = chain.n as f64;
    let z = &g.saddle;
    let eps = opts.epsilon.unwrap_or_else(|| default_width(chain.n, z.mu(), 0.4));
    if a_set.contains(&g.a) == a_set.contains(&g.b) {
        return Err(Error::Config("saddle does not separate A from its complement".into()));
    }
    // v points from the A side to the other side.
    let sign = if a_set.contains(&g.plus_well) { -1.0 } else { 1.0 };
    let v: Vec<f64> = z.eigenvectors[0].iter().map(|c| sign * c).collect();
    // Axis reflections making every v_j non-negative.
    let dirs: Vec<Option<usize>> =
        (0..d).map(|j| if v[j].abs() < 1e-12 { None } else if v[j] > 0.0 { Some(2 * j) } else { Some(2 * j + 1) }).collect();
    let stable_det: f64 = z.eigenvalues[1..].iter().product();
    let amp = (stable_det).sqrt() / (2.0 * std::f64::consts::PI * nf).powf(0.5 * (d as f64 - 1.0));

    let mut y = vec![0.0; d];
    let rel = |s: usize, y: &mut Vec<f64>| {
        chain.coords_into(s, y);
        for i in 0..d {
            y[i] -= z.location[i];
        }
    };
    let in_box = |y: &[f64]| dot(y, &v).abs() <= eps && (1..d).all(|k| dot(y, &z.eigenvectors[k]).abs() <= eps);
    let along_of = |s: usize| {
        let mut y = vec![0.0; d];
        rel(s, &mut y);
        dot(&y, &v)
    };
    let forward = |s: usize| dirs.iter().flatten().filter_map(move |&dir| chain.neighbor(s, dir).map(|t| (dir, t)));

    // B_N, its back face ∂₋B_N, and the cone region Q_N grown forward from the inner back face.
    let radius = eps * (d as f64).sqrt() + 2.0 / nf;
    let mut box_list = Vec::new();
    for s in sites_within(chain, &z.location, radius) {
        rel(s, &mut y);
        if in_box(&y) {
            box_list.push(s);
        }
    }
    box_list.sort_unstable();
    let boxed: HashSet<usize> = box_list.iter().copied().collect();
    if box_list.is_empty() {
        return Err(Error::Numerical(format!("flow box around {:?} is empty at epsilon {eps:.4}", z.location)));
    }
    let mut sources = Vec::new();
    let mut roots = Vec::new();
    for &s in &box_list {
        for &dir in dirs.iter().flatten() {
            let Some(u) = chain.neighbor(s, dir ^ 1) else { continue };
            if along_of(u) < -eps {
                roots.push(s);
                if !sources.contains(&u) {
                    sources.push(u);
                }
            }
        }
    }
    let mut cone: HashSet<usize> = roots.iter().copied().collect();
    let mut stack = roots;
    while let Some(s) = stack.pop() {
        for (_, t) in forward(s) {
            if along_of(t) <= eps && cone.insert(t) {
                stack.push(t);
            }
        }
    }

    // Φ on every forward edge out of Q_N and out of ∂₋B_N into B_N.
    let mut field = FlowField::zeros(chain, eps);
    let phi = |s: usize, j: usize| {
        let mut y = vec![0.0; d];
        rel(s, &mut y);
        let q: f64 = (1..d).map(|k| z.eigenvalues[k] * dot(&y, &z.eigenvectors[k]).powi(2)).sum();
        amp * v[j].abs() * (-(0.5 * nf) * q).exp()
    };
    let mut cone_list: Vec<usize> = cone.iter().copied().collect();
    cone_list.sort_unstable();
    for &s in cone_list.iter().chain(&sources) {
        let from_back = !cone.contains(&s);
        for (j, dir) in dirs.iter().enumerate() {
            let Some(dir) = *dir else { continue };
            let Some(t) = chain.neighbor(s, dir) else { continue };
            if from_back && !boxed.contains(&t) {
                continue;
            }
            field.push(chain, s, dir, phi(s, j));
        }
    }
    let raw_flux: f64 = sources.iter().map(|&s| field.divergence(chain, s)).sum();

    // Generation-by-generation repair, sweeping Q_N in increasing (x − z)·v.
    let mut order: Vec<(f64, usize)> = cone_list.iter().map(|&s| (along_of(s), s)).collect();
    order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    let mut sinks = Vec::new();
    for &(_, s) in &order {
        let excess = -field.divergence(chain, s);
        let scale: f64 = (0..2 * d).filter(|&dir| chain.neighbor(s, dir).is_some()).map(|dir| field.along(chain, s, dir).abs()).sum();
        // Rounding residue is left in place: pushed sideways it would dominate the energy.
        if excess.abs() <= 64.0 * f64::EPSILON * scale {
            continue;
        }
        let avail: Vec<(usize, f64)> =
            forward(s).map(|(dir, _)| (dir, v[dir / 2].abs())).collect();
        if avail.is_empty() {
            return Err(Error::Numerical(format!("flow repair reached the lattice boundary near {:?}", z.location)));
        }
        let tot: f64 = avail.iter().map(|p| p.1).sum();
        for (dir, w) in avail {
            field.push(chain, s, dir, excess * w / tot);
        }
    }
    for s in chain.sites() {
        rel(s, &mut y);
        if dot(&y, &v) > eps && field.divergence(chain, s) < 0.0 {
            sinks.push(s);
        }
    }

    // Extension along discretised steepest-descent paths.
    let mut rise: f64 = 0.0;
    for &s in &sources {
        let q = field.divergence(chain, s);
        let path = descent_path(model, chain, s, source)?;
        rise = rise.max(path_rise(chain, &path));
        for w in path.windows(2) {
            let dir = step_dir(chain, w[1], w[0]);
            field.push(chain, w[1], dir, q);
        }
    }
    for &s in &sinks {
        let q = -field.divergence(chain, s);
        let path = descent_path(model, chain, s, sink)?;
        rise = rise.max(path_rise(chain, &path));
        for w in path.windows(2) {
            let dir = step_dir(chain, w[0], w[1]);
            field.push(chain, w[0], dir, q);
        }
    }
    let total: f64 = chain.sites().filter(|&s| source[s]).map(|s| field.divergence(chain, s)).sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("flow carries no current".into()));
    }
    field.scale(1.0 / total);
    field.sources = chain.sites().filter(|&s| source[s] && field.divergence(chain, s) != 0.0).collect();
    field.sinks = chain.sites().filter(|&s| sink[s] && field.divergence(chain, s) != 0.0).collect();
    field.raw_flux = raw_flux;
    field.path_rise = rise;
    Ok(field)
}

fn step_dir(chain: &LatticeChain, from: usize, to: usize) -> usize {
    (0..2 * chain.dim).find(|&dir| chain.neighbor(from, dir) == Some(to)).expect("path steps are lattice edges")
}

fn path_rise(chain: &LatticeChain, path: &[usize]) -> f64 {
    let f0 = chain.f(path[0]);
    path.iter().map(|&s| chain.n as f64 * (chain.f(s) - f0)).fold(0.0, f64::max)
}

/// Nearest-neighbour path from `start` following ẋ = −∇F until it meets `target`, loop-erased.
fn descent_path(model: &PotentialModel, chain: &LatticeChain, start: usize, target: &[bool]) -> Result<Vec<usize>> {
    let nf = chain.n as f64;
    let d = chain.dim;
    let step = 1.0 / (4.0 * nf);
    let budget = (40.0 * nf * model.domain.diameter()).ceil() as usize + 100;
    let mut path = vec![start];
    let mut pos: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut x = chain.coords(start);
    let mut cur = start;
    for _ in 0..budget {
        if target[cur] {
            return Ok(path);
        }
        let g = model.gradient(&x);
        let gn = norm(&g);
        if !(gn > 1e-14) {
            return Err(Error::Numerical(format!("descent from site {start} stalled at {x:?}")));
        }
        for i in 0..d {
            x[i] -= step * g[i] / gn;
        }
        let next = chain
            .nearest_site(&x)
            .ok_or_else(|| Error::Numerical(format!("descent from site {start} left the lattice")))?;
        if next == cur {
            continue;
        }
        // Staircase: change the differing coordinates one at a time, lowest F first.
        let mut k = chain.int_coords(cur);
        let goal = chain.int_coords(next);
        while k != goal {
            let best = (0..d)
                .filter(|&i| k[i] != goal[i])
                .filter_map(|i| {
                    let mut c = k.clone();
                    c[i] += (goal[i] - k[i]).signum();
                    chain.site_of(&c).map(|s| (s, c))
                })
                .min_by(|p, q| chain.f(p.0).total_cmp(&chain.f(q.0)))
                .ok_or_else(|| Error::Numerical(format!("descent from site {start} left the lattice")))?;
            k = best.1;
            let s = best.0;
            if let Some(&i) = pos.get(&s) {
                for r in path.drain(i + 1..) {
                    pos.remove(&r);
                }
            } else {
                pos.insert(s, path.len());
                path.push(s);
            }
            if target[s] {
                return Ok(path);
            }
        }
        cur = next;
    }
    Err(Error::Numerical(format!("descent from site {start} exceeded its step budget")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowerBound {
    pub capacity: ScaledCapacity,
    pub thetas: Vec<f64>,
    /// ‖Ψ_z‖² relative to the reference, per flow.
    pub energies: Vec<f64>,
}

/// Thomson bound from the convex combination θ_z ∝ 1/‖Ψ_z‖² of unit flows.
pub fn flow_lower_bound(chain: &LatticeChain, flows: &[FlowField], reference: f64) -> Result<LowerBound> {
    if flows.is_empty() {
        return Err(Error::Config("no saddle flows to combine".into()));
    }
    let energies: Vec<f64> = flows.iter().map(|f| f.energy(chain, reference)).collect();
    let inv: f64 = energies.iter().map(|e| 1.0 / e).sum();
    let thetas: Vec<f64> = energies.iter().map(|e| (1.0 / e) / inv).collect();
    let mut combined = FlowField::zeros(chain, flows[0].epsilon);
    for (f, &t) in flows.iter().zip(&thetas) {
        for (c, q) in combined.flow.iter_mut().zip(&f.flow) {
            *c += t * q;
        }
    }
    let e = combined.energy(chain, reference);
    Ok(LowerBound { capacity: ScaledCapacity::new(chain, reference, 1.0 / e), thetas, energies })
}
