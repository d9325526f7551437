use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::{components_where, WellDecomposition};
use crate::lattice::LatticeChain;
use crate::potential::{CriticalPoint, PotentialModel};

/// Stop label of the non-window surface {F > H + δ}.
pub const SURFACE: u8 = 255;

/// δ_N = max(2(d+2) ln N / N, N^{-0.85}).
pub fn default_delta(n: u32, d: usize) -> f64 {
    let nf = n as f64;
    (2.0 * (d as f64 + 2.0) * nf.ln() / nf).max(nf.powf(-0.85))
}

fn regime_warning(n: u32, d: usize, delta: f64) -> Option<String> {
    let nf = n as f64;
    let small = delta <= 0.1 * nf.powf(-0.75);
    let tail = nf.powi(d as i32 + 1) * (-nf * delta).exp();
    (!small || tail > 1e-2).then(|| {
        format!("delta {delta:.4} at N={n}: delta*N^0.75 = {:.3}, N^(d+1)e^(-N delta) = {tail:.3e}", delta * nf.powf(0.75))
    })
}

#[derive(Debug, Clone, Default)]
pub struct WindowOptions {
    /// δ_N; defaults to `default_delta`.
    pub delta: Option<f64>,
    /// Ball radius ε around each saddle; by default the window is the connected low part of the hyperplane.
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitWindows {
    pub component: usize,
    pub well: usize,
    pub height: f64,
    pub delta: f64,
    /// Largest distance from its saddle of a projected window point.
    pub radius: f64,
    pub saddles: Vec<CriticalPoint>,
    /// 𝒟_z per saddle, sorted.
    pub windows: Vec<Vec<usize>>,
    /// 0 free, k+1 for window k, `SURFACE` for F > H + δ.
    pub stop: Vec<u8>,
    pub warnings: Vec<String>,
}

impl ExitWindows {
    /// 𝒟_a, sorted.
    pub fn stopping_set(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.windows.iter().flatten().copied().collect();
        all.sort_unstable();
        all
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cluster of `cand` (projected points `proj`) linked within `reach`, grown from index `seed`.
fn cluster(proj: &[Vec<f64>], seed: usize, reach: f64) -> Vec<usize> {
    let mut keep = vec![false; proj.len()];
    keep[seed] = true;
    let mut stack = vec![seed];
    while let Some(i) = stack.pop() {
        for j in 0..proj.len() {
            if !keep[j] && proj[i].iter().zip(&proj[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() <= reach * reach {
                keep[j] = true;
                stack.push(j);
            }
        }
    }
    (0..proj.len()).filter(|&i| keep[i]).collect()
}

/// Windows 𝒟_z for every saddle of well `well` and the surrounding stop surface.
pub fn build_exit_windows(
    model: &PotentialModel,
    chain: &LatticeChain,
    decomp: &WellDecomposition,
    component: usize,
    well: usize,
    opts: &WindowOptions,
) -> Result<ExitWindows> {
    let comp = decomp
        .components
        .get(component)
        .ok_or_else(|| Error::Config(format!("component {component} does not exist")))?;
    if well >= comp.wells.len() {
        return Err(Error::Config(format!("well {well} does not exist (component has {} wells)", comp.wells.len())));
    }
    let d = chain.dim;
    let n = chain.n;
    let h = decomp.height;
    let mut warnings = Vec::new();
    let delta = match opts.delta {
        Some(x) if x > 0.0 => x,
        Some(x) => return Err(Error::Config(format!("delta must be positive, got {x}"))),
        None => default_delta(n, d),
    };
    if let Some(w) = regime_warning(n, d, delta) {
        warnings.push(w);
    }
    let saddles: Vec<CriticalPoint> = comp.boundary_gluings(&[well]).into_iter().map(|g| g.saddle.clone()).collect();
    if saddles.is_empty() {
        return Err(Error::Config(format!("well {well} has no saddle")));
    }
    let slab = 1.0 / n as f64;
    let total = chain.num_sites();
    let mut stop = vec![0u8; total];
    let mut windows = Vec::new();
    let mut radius_used = f64::NAN;
    let mut x = vec![0.0; d];
    let mut p = vec![0.0; d];
    for (k, z) in saddles.iter().enumerate() {
        let radius = match opts.radius {
            Some(r) if r > 0.0 => r,
            Some(r) => return Err(Error::Config(format!("window radius must be positive, got {r}"))),
            None => f64::INFINITY,
        };
        let v = z.unstable();
        let mut cand = Vec::new();
        let mut proj = Vec::new();
        let mut floor = f64::INFINITY;
        for s in chain.sites() {
            chain.coords_into(s, &mut x);
            let along = dot(&x, v) - dot(&z.location, v);
            if along.abs() > slab {
                continue;
            }
            for j in 0..d {
                p[j] = x[j] - along * v[j];
            }
            let r2: f64 = p.iter().zip(&z.location).map(|(a, b)| (a - b).powi(2)).sum();
            if r2 > radius * radius {
                continue;
            }
            let excess = model.value(&p) - h;
            floor = floor.min(excess);
            if excess <= delta {
                cand.push(s);
                proj.push(p.clone());
            }
        }
        if cand.is_empty() && !floor.is_finite() {
            return Err(Error::Config(format!(
                "window at saddle {:?} is empty at N={n}; no lattice site lies within radius {radius:.4e}, increase the radius",
                z.location
            )));
        }
        if cand.is_empty() {
            return Err(Error::Config(format!(
                "window at saddle {:?} is empty at N={n}; minimum feasible delta is {:.4e}",
                z.location,
                floor.max(0.0)
            )));
        }
        let seed = (0..cand.len())
            .min_by(|&i, &j| {
                let di: f64 = proj[i].iter().zip(&z.location).map(|(a, b)| (a - b).powi(2)).sum();
                let dj: f64 = proj[j].iter().zip(&z.location).map(|(a, b)| (a - b).powi(2)).sum();
                di.total_cmp(&dj)
            })
            .unwrap();
        let keep = cluster(&proj, seed, 2.0 * (d as f64).sqrt() / n as f64);
        let win: Vec<usize> = keep.iter().map(|&i| cand[i]).collect();
        let extent = keep
            .iter()
            .map(|&i| proj[i].iter().zip(&z.location).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        radius_used = if radius_used.is_nan() { extent } else { radius_used.max(extent) };
        for &s in &win {
            if stop[s] != 0 {
                return Err(Error::Config(format!("windows {} and {k} overlap; reduce the radius", stop[s] - 1)));
            }
            stop[s] = k as u8 + 1;
        }
        windows.push(win);
    }
    for s in chain.sites() {
        if stop[s] == 0 && chain.f(s) > h + delta {
            stop[s] = SURFACE;
        }
    }
    // The free region reachable from the well must not leak into another well.
    let start = comp.wells[well].sites.iter().copied().min_by(|&a, &b| chain.f(a).total_cmp(&chain.f(b)));
    let start = start.ok_or_else(|| Error::Config(format!("well {well} has no sites at N={n}")))?;
    let free = components_where(chain, |s| stop[s] == 0);
    let region = free.label(start).ok_or_else(|| Error::Config("well bottom lies in a window".into()))?;
    for s in free.members(region) {
        for (c, other) in decomp.components.iter().enumerate() {
            if let Some(b) = other.well_of(s) {
                if (c, b) != (component, well) {
                    return Err(Error::Config(format!(
                        "delta {delta:.4e} lets the region around well {well} reach well {b}; use a smaller delta"
                    )));
                }
            }
        }
    }
    Ok(ExitWindows { component, well, height: h, delta, radius: radius_used, saddles, windows, stop, warnings })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossingBox {
    pub epsilon: f64,
    /// a = max{1, (1 + Σλ_j)/μ}.
    pub aspect: f64,
    pub inside: Vec<bool>,
    /// Per site outside the box: 1 for ∂₊, 2 for ∂₋, 3 for a side face. 0 inside.
    pub face: Vec<u8>,
    /// 𝒟_z ∩ B_N: sites with |(y − z)·v| ≤ 1/N inside the box.
    pub start_sites: Vec<usize>,
}

/// B_N = {|(y−z)·v| ≤ aε, |(y−z)·w_j| ≤ ε} around the saddle `z`.
pub fn crossing_box(chain: &LatticeChain, z: &CriticalPoint, epsilon: f64, delta: f64) -> Result<CrossingBox> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let d = chain.dim;
    let mu = z.mu();
    let lam: f64 = z.eigenvalues[1..].iter().sum();
    let aspect = ((1.0 + lam) / mu).max(1.0);
    let total = chain.num_sites();
    let mut inside = vec![false; total];
    let mut face = vec![0u8; total];
    let mut start_sites = Vec::new();
    let mut x = vec![0.0; d];
    let slab = 1.0 / chain.n as f64;
    for s in chain.sites() {
        chain.coords_into(s, &mut x);
        for j in 0..d {
            x[j] -= z.location[j];
        }
        let along = dot(&x, &z.eigenvectors[0]);
        let lateral_ok = (1..d).all(|k| dot(&x, &z.eigenvectors[k]).abs() <= epsilon);
        if along.abs() <= aspect * epsilon && lateral_ok {
            inside[s] = true;
            let side = (1..d).map(|k| dot(&x, &z.eigenvectors[k]).powi(2) * z.eigenvalues[k]).sum::<f64>();
            if along.abs() <= slab && side <= 2.0 * delta {
                start_sites.push(s);
            }
        } else if along > aspect * epsilon && lateral_ok {
            face[s] = 1;
        } else if along < -aspect * epsilon && lateral_ok {
            face[s] = 2;
        } else {
            face[s] = 3;
        }
    }
    if start_sites.is_empty() {
        return Err(Error::Config(format!("crossing box at {:?} has no start sites at N={}", z.location, chain.n)));
    }
    Ok(CrossingBox { epsilon, aspect, inside, face, start_sites })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{Landscape, SetupChoice};

    #[test]
    fn one_dimensional_window_is_the_saddle_site() {
        let l = Landscape::builtin("double_well").unwrap();
        for n in [40, 41] {
            let s = l.setup(n, &SetupChoice::default()).unwrap();
            let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &WindowOptions::default()).unwrap();
            assert_eq!(w.windows.len(), 1);
            let len = w.windows[0].len();
            assert!((1..=2).contains(&len), "{len}");
            for &site in &w.windows[0] {
                assert!(s.chain.coords(site)[0].abs() <= 1.0 / n as f64 + 1e-12);
            }
        }
    }

    #[test]
    fn two_saddle_windows_are_disjoint_and_low() {
        let l = Landscape::builtin("two_saddle").unwrap();
        let s = l.setup(40, &SetupChoice::default()).unwrap();
        let centre = (0..s.wells()).find(|&a| s.decomp.components[s.component].wells[a].deepest_location()[0].abs() < 0.5).unwrap();
        let opts = WindowOptions { delta: Some(0.2), radius: None };
        let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, centre, &opts).unwrap();
        assert_eq!(w.windows.len(), 2);
        assert!(w.windows[0].iter().all(|x| !w.windows[1].contains(x)));
        let slack = 4.0 / 40.0;
        for site in w.stopping_set() {
            assert!(s.chain.f(site) <= w.height + w.delta + slack);
        }
    }

    #[test]
    fn tiny_delta_reports_the_feasible_minimum() {
        let l = Landscape::builtin("rotated_four_well").unwrap();
        let s = l.setup(20, &SetupChoice::default()).unwrap();
        let opts = WindowOptions { delta: Some(1e-9), radius: None };
        let err = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &opts).unwrap_err();
        assert!(err.to_string().contains("minimum feasible delta"), "{err}");
    }

    #[test]
    fn tiny_radius_asks_for_a_larger_one() {
        let l = Landscape::builtin("rotated_four_well").unwrap();
        let s = l.setup(20, &SetupChoice::default()).unwrap();
        let opts = WindowOptions { delta: Some(1e-9), radius: Some(1e-3) };
        let err = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &opts).unwrap_err();
        assert!(err.to_string().contains("increase the radius"), "{err}");
    }

    #[test]
    fn large_delta_is_rejected() {
        let l = Landscape::builtin("four_well").unwrap();
        let s = l.setup(20, &SetupChoice::default()).unwrap();
        let opts = WindowOptions { delta: Some(5.0), radius: None };
        assert!(build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, 0, &opts).is_err());
    }

    #[test]
    fn one_dimensional_box_has_no_sides() {
        let l = Landscape::builtin("double_well").unwrap();
        let s = l.setup(60, &SetupChoice::default()).unwrap();
        let z = &s.decomp.components[s.component].gluings[0].saddle;
        let b = crossing_box(&s.chain, z, 0.2, 0.1).unwrap();
        assert!(b.face.iter().all(|&f| f != 3));
    }
}
