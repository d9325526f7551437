//! The reduced graph on wells and its asymptotic quantities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::{DepthPartition, LevelComponent};
use crate::linalg::{solve, solve_multi, Matrix};
use crate::potential::{CriticalPoint, Kind};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleEdge {
    pub a: usize,
    pub b: usize,
    pub location: Vec<f64>,
    pub value: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedGraph {
    pub vertices: usize,
    pub edges: Vec<SaddleEdge>,
    /// Collapsed conductances 𝐜(a,b), symmetric with zero diagonal.
    pub conductance: Matrix,
    pub mass: Vec<f64>,
    pub bottom: Vec<f64>,
    pub depth: Vec<f64>,
    pub height: f64,
    pub dim: usize,
    pub isolated: Vec<usize>,
    pub degenerate_gluings: Vec<Vec<f64>>,
}

/// ω(z) = μ / sqrt(−det Hess F(z)).
pub fn saddle_weight(z: &CriticalPoint) -> Result<f64> {
    if z.kind != Kind::Saddle {
        return Err(Error::Numerical(format!("point at {:?} is not a nondegenerate saddle", z.location)));
    }
    let mu = z.mu();
    let stable: f64 = z.eigenvalues[1..].iter().product();
    let det = mu * stable;
    if !(det > 0.0) || !(mu > 0.0) {
        return Err(Error::Numerical(format!("degenerate Hessian at saddle {:?}", z.location)));
    }
    Ok(mu / det.sqrt())
}

impl ReducedGraph {
    pub fn from_component(comp: &LevelComponent, height: f64, dim: usize) -> Result<Self> {
        let n = comp.wells.len();
        let mut edges = Vec::new();
        let mut c = Matrix::zeros(n);
        for g in &comp.gluings {
            let omega = saddle_weight(&g.saddle)?;
            c[(g.a, g.b)] += omega;
            c[(g.b, g.a)] += omega;
            edges.push(SaddleEdge { a: g.a, b: g.b, location: g.saddle.location.clone(), value: g.saddle.value, omega });
        }
        let isolated = (0..n).filter(|&a| (0..n).all(|b| c[(a, b)] == 0.0)).collect();
        Ok(ReducedGraph {
            vertices: n,
            edges,
            conductance: c,
            mass: comp.wells.iter().map(|w| w.mass).collect(),
            bottom: comp.wells.iter().map(|w| w.bottom).collect(),
            depth: comp.wells.iter().map(|w| w.depth).collect(),
            height,
            dim,
            isolated,
            degenerate_gluings: comp.degenerate_gluings.iter().map(|z| z.location.clone()).collect(),
        })
    }

    /// Graph with given conductances, masses and depths (one saddle edge per positive pair).
    pub fn from_conductances(c: Matrix, mass: Vec<f64>, depth: Vec<f64>, height: f64, dim: usize) -> Self {
        let n = c.n;
        let mut edges = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                if c[(a, b)] > 0.0 {
                    edges.push(SaddleEdge { a, b, location: vec![], value: height, omega: c[(a, b)] });
                }
            }
        }
        let isolated = (0..n).filter(|&a| (0..n).all(|b| c[(a, b)] == 0.0)).collect();
        ReducedGraph {
            vertices: n,
            edges,
            conductance: c,
            bottom: depth.iter().map(|t| height - t).collect(),
            mass,
            depth,
            height,
            dim,
            isolated,
            degenerate_gluings: vec![],
        }
    }

    /// Edge indices of 𝔖_a.
    pub fn saddles_of(&self, a: usize) -> Vec<usize> {
        (0..self.edges.len()).filter(|&e| self.edges[e].a == a || self.edges[e].b == a).collect()
    }

    /// Edge indices of 𝔖(A).
    pub fn boundary_saddles(&self, a_set: &[usize]) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| a_set.contains(&self.edges[e].a) != a_set.contains(&self.edges[e].b))
            .collect()
    }
}

fn check_sets(n: usize, a: &[usize], b: &[usize]) -> Result<()> {
    if a.is_empty() {
        return Err(Error::Config("set A must be nonempty".into()));
    }
    if a.iter().chain(b).any(|&v| v >= n) {
        return Err(Error::Config("vertex index out of range".into()));
    }
    if a.iter().any(|v| b.contains(v)) {
        return Err(Error::Config("sets must be disjoint".into()));
    }
    Ok(())
}

/// Conductance and equilibrium potential on a weighted graph; an empty B gives zero.
pub fn conductance_between(c: &Matrix, a: &[usize], b: &[usize]) -> Result<(f64, Vec<f64>)> {
    let n = c.n;
    check_sets(n, a, b)?;
    let mut v = vec![0.0; n];
    for &x in a {
        v[x] = 1.0;
    }
    let fixed: Vec<bool> = (0..n).map(|x| a.contains(&x) || b.contains(&x)).collect();
    if b.is_empty() {
        // Harmonic with only the value 1 imposed: constant 1 on the pieces reachable from A.
        let reach = reachable(c, a, &vec![false; n]);
        for x in 0..n {
            if reach[x] {
                v[x] = 1.0;
            }
        }
        return Ok((0.0, v));
    }
    // Free vertices that see the boundary through free paths.
    let touching: Vec<usize> = (0..n).filter(|&x| fixed[x]).collect();
    let reach = reachable(c, &touching, &fixed);
    let free: Vec<usize> = (0..n).filter(|&x| !fixed[x] && reach[x]).collect();
    if !free.is_empty() {
        let k = free.len();
        let mut l = Matrix::zeros(k);
        let mut rhs = vec![0.0; k];
        for (i, &x) in free.iter().enumerate() {
            let deg: f64 = (0..n).map(|y| c[(x, y)]).sum();
            l[(i, i)] = deg;
            for (j, &y) in free.iter().enumerate() {
                if j != i {
                    l[(i, j)] = -c[(x, y)];
                }
            }
            rhs[i] = a.iter().map(|&y| c[(x, y)]).sum();
        }
        let sol = solve(&l, &rhs)?;
        for (i, &x) in free.iter().enumerate() {
            v[x] = sol[i];
        }
    }
    let mut cap = 0.0;
    for x in 0..n {
        for y in 0..n {
            let dv = v[y] - v[x];
            cap += c[(x, y)] * dv * dv;
        }
    }
    Ok((0.5 * cap, v))
}

// Vertices reachable from `from`, walking only through vertices not `blocked` (sources always included).
fn reachable(c: &Matrix, from: &[usize], blocked: &[bool]) -> Vec<bool> {
    let n = c.n;
    let mut seen = vec![false; n];
    let mut stack: Vec<usize> = from.to_vec();
    for &x in from {
        seen[x] = true;
    }
    while let Some(x) = stack.pop() {
        for y in 0..n {
            if c[(x, y)] > 0.0 && !seen[y] && !blocked[y] {
                seen[y] = true;
                stack.push(y);
            }
        }
    }
    seen
}

/// Cap_𝔾(A,B) and V_{A,B}.
pub fn graph_capacity(g: &ReducedGraph, a: &[usize], b: &[usize]) -> Result<(f64, Vec<f64>)> {
    if b.is_empty() {
        return Err(Error::Config("set B must be nonempty".into()));
    }
    conductance_between(&g.conductance, a, b)
}

/// 𝐜_m on S_m from the three-capacity formula; entries outside S_m are zero.
pub fn collapsed_conductance_cm(g: &ReducedGraph, partition: &DepthPartition, m: usize) -> Result<Matrix> {
    let s = partition.tails.get(m).ok_or_else(|| Error::Config(format!("scale {} does not exist", m + 1)))?;
    if s.len() < 2 {
        return Err(Error::Config(format!("scale {} has fewer than two wells", m + 1)));
    }
    let sub = sub_network(&g.conductance, s);
    three_capacity(&sub, s, g.vertices)
}

// Conductance network on `keep` after eliminating the other vertices.
fn sub_network(c: &Matrix, keep: &[usize]) -> Matrix {
    star_mesh_reduce(c, keep).expect("Schur complement of a connected network")
}

fn three_capacity(c: &Matrix, s: &[usize], n: usize) -> Result<Matrix> {
    // `c` is indexed by position in `s`.
    let k = s.len();
    let cap = |a: &[usize], b: &[usize]| -> Result<f64> { Ok(conductance_between(c, a, b)?.0) };
    let single: Vec<f64> = (0..k)
        .map(|i| {
            let rest: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            cap(&[i], &rest)
        })
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(n);
    for i in 0..k {
        for j in (i + 1)..k {
            let rest: Vec<usize> = (0..k).filter(|&x| x != i && x != j).collect();
            let pair = cap(&[i, j], &rest)?;
            let v = 0.5 * (single[i] + single[j] - pair);
            out[(s[i], s[j])] = v;
            out[(s[j], s[i])] = v;
        }
    }
    Ok(out)
}

/// Kron reduction: conductances among `keep` after star-mesh elimination of all other vertices.
/// The result is indexed by position in `keep`.
pub fn star_mesh_reduce(c: &Matrix, keep: &[usize]) -> Result<Matrix> {
    let n = c.n;
    let elim: Vec<usize> = (0..n).filter(|x| !keep.contains(x)).collect();
    let k = keep.len();
    let deg: Vec<f64> = (0..n).map(|x| (0..n).map(|y| c[(x, y)]).sum()).collect();
    let mut red = Matrix::zeros(k);
    for i in 0..k {
        for j in 0..k {
            if i != j {
                red[(i, j)] = c[(keep[i], keep[j])];
            }
        }
    }
    if elim.is_empty() {
        return Ok(red);
    }
    // Only eliminated vertices connected to `keep` matter; isolated pieces carry no current.
    let reach = reachable(c, keep, &vec![false; n]);
    let live: Vec<usize> = elim.iter().copied().filter(|&x| reach[x]).collect();
    if live.is_empty() {
        return Ok(red);
    }
    let m = live.len();
    let mut lff = Matrix::zeros(m);
    for (i, &x) in live.iter().enumerate() {
        lff[(i, i)] = deg[x];
        for (j, &y) in live.iter().enumerate() {
            if i != j {
                lff[(i, j)] = -c[(x, y)];
            }
        }
    }
    let rhs: Vec<Vec<f64>> = keep.iter().map(|&b| live.iter().map(|&x| c[(x, b)]).collect()).collect();
    let sol = solve_multi(&lff, &rhs)?;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            // c_red(a,b) = c(a,b) + Σ_x c(a,x) [L_FF^{-1} c(·,b)]_x
            let extra: f64 = live.iter().enumerate().map(|(t, &x)| c[(keep[i], x)] * sol[j][t]).sum();
            red[(i, j)] += extra;
        }
    }
    for i in 0..k {
        for j in (i + 1)..k {
            let avg = 0.5 * (red[(i, j)] + red[(j, i)]);
            red[(i, j)] = avg;
            red[(j, i)] = avg;
        }
    }
    Ok(red)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleRates {
    pub m: usize,
    pub depth: f64,
    pub members: Vec<usize>,
    pub absorbing: Vec<usize>,
    pub conductance: Matrix,
    pub rates: Matrix,
}

impl ScaleRates {
    /// log β_m = log(2πN) + θ_m N.
    pub fn log_beta(&self, n: u32) -> f64 {
        (2.0 * std::f64::consts::PI * n as f64).ln() + self.depth * n as f64
    }

    /// Σ_b 𝐫_m(a,b).
    pub fn total_rate(&self, a: usize) -> f64 {
        (0..self.rates.n).map(|b| self.rates[(a, b)]).sum()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetastableRates {
    pub scales: Vec<ScaleRates>,
}

pub fn limit_rates(g: &ReducedGraph, partition: &DepthPartition) -> Result<MetastableRates> {
    let n = g.vertices;
    let mut scales = Vec::new();
    for m in 0..partition.scales() {
        let members = partition.tails[m].clone();
        let absorbing = partition.tails.get(m + 1).cloned().unwrap_or_default();
        let conductance = if members.len() >= 2 { collapsed_conductance_cm(g, partition, m)? } else { Matrix::zeros(n) };
        let mut rates = Matrix::zeros(n);
        for &a in &partition.classes[m] {
            for &b in &members {
                if a != b {
                    rates[(a, b)] = conductance[(a, b)] / g.mass[a];
                }
            }
        }
        scales.push(ScaleRates { m, depth: partition.depths[m], members, absorbing, conductance, rates });
    }
    Ok(MetastableRates { scales })
}

/// p(a,b) = 𝐜(a,b) / Σ_c 𝐜(a,c).
pub fn jump_probabilities(g: &ReducedGraph) -> Result<Matrix> {
    if let Some(&a) = g.isolated.first() {
        return Err(Error::Numerical(format!("well {a} has no saddle")));
    }
    let n = g.vertices;
    let mut p = Matrix::zeros(n);
    for a in 0..n {
        let tot: f64 = (0..n).map(|b| g.conductance[(a, b)]).sum();
        for b in 0..n {
            p[(a, b)] = g.conductance[(a, b)] / tot;
        }
    }
    Ok(p)
}

/// ω(z)/Σ_{z'∈𝔖_a} ω(z') per saddle edge of well `a`.
pub fn exit_distribution(g: &ReducedGraph, a: usize) -> Result<Vec<(usize, f64)>> {
    let edges = g.saddles_of(a);
    if edges.is_empty() {
        return Err(Error::Numerical(format!("well {a} has no saddle")));
    }
    let tot: f64 = edges.iter().map(|&e| g.edges[e].omega).sum();
    Ok(edges.iter().map(|&e| (e, g.edges[e].omega / tot)).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EkPrediction {
    pub wells: Vec<usize>,
    /// Σ_{z∈𝔖(A)} ω(z).
    pub kappa: f64,
    /// log μ̂(a) in the lattice's scaled units, one per well.
    pub log_measure: Vec<f64>,
}

pub fn ek_predictions(g: &ReducedGraph, a_set: &[usize], n: u32, f_ref: f64) -> Result<EkPrediction> {
    if a_set.is_empty() || a_set.len() >= g.vertices || a_set.iter().any(|&a| a >= g.vertices) {
        return Err(Error::Config("A must be a nonempty proper subset of the wells".into()));
    }
    let kappa = g.boundary_saddles(a_set).iter().map(|&e| g.edges[e].omega).sum();
    let nf = n as f64;
    let log_measure = (0..g.vertices)
        .map(|a| 0.5 * g.dim as f64 * (2.0 * std::f64::consts::PI * nf).ln() - nf * (g.bottom[a] - f_ref) + g.mass[a].ln())
        .collect();
    Ok(EkPrediction { wells: a_set.to_vec(), kappa, log_measure })
}
