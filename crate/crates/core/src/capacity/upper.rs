use serde::{Deserialize, Serialize};

use super::{dirichlet_energy, ScaledCapacity};
use crate::error::{Error, Result};
use crate::landscape::{components_where, sites_within, MetastableSets, WellDecomposition};
use crate::lattice::LatticeChain;
use crate::linalg::dot;

#[derive(Debug, Clone, Copy, Default)]
pub struct UpperOptions {
    /// Box half-width; see [`default_width`].
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperBound {
    pub capacity: ScaledCapacity,
    pub epsilon: f64,
    pub box_sites: Vec<usize>,
    /// ε·√(Nμ) per saddle: where the Gaussian profile is cut, in standard deviations.
    pub cut_sigmas: Vec<f64>,
    pub warnings: Vec<String>,
}

/// f_N(r) = √(Nμ/2π) ∫_{-∞}^r e^{−Nμs²/2} ds.
pub fn gaussian_profile(n: u32, mu: f64, r: f64) -> f64 {
    0.5 * libm::erfc(-r * (0.5 * n as f64 * mu).sqrt())
}

/// Dirichlet energy of V^A_N, relative to the level height, for the wells `a_set` of one component.
pub fn test_function_upper_bound(
    chain: &LatticeChain,
    decomp: &WellDecomposition,
    component: usize,
    a_set: &[usize],
    sets: &MetastableSets,
    opts: &UpperOptions,
) -> Result<UpperBound> {
    Ok(test_function(chain, decomp, component, a_set, sets, opts)?.1)
}

/// V^A_N itself together with its energy. Without an explicit ε the default width is shrunk
/// in steps of 10% (not below N^{-5/12}) until the boxes fit the geometry.
pub fn test_function(
    chain: &LatticeChain,
    decomp: &WellDecomposition,
    component: usize,
    a_set: &[usize],
    sets: &MetastableSets,
    opts: &UpperOptions,
) -> Result<(Vec<f64>, UpperBound)> {
    if let Some(eps) = opts.epsilon {
        return build(chain, decomp, component, a_set, sets, eps);
    }
    let comp = decomp
        .components
        .get(component)
        .ok_or_else(|| Error::Config(format!("component {component} does not exist")))?;
    let theta = comp.boundary_gluings(a_set).iter().map(|g| g.saddle.mu()).fold(f64::INFINITY, f64::min);
    let floor = (chain.n as f64).powf(-5.0 / 12.0);
    let mut eps = default_width(chain.n, theta, 5.0 / 12.0);
    loop {
        match build(chain, decomp, component, a_set, sets, eps) {
            Err(Error::Config(_)) if eps * 0.9 >= floor => eps *= 0.9,
            other => return other,
        }
    }
}

/// max(N^{-p}, √(6 ln N/(μN))): the second term keeps e^{−μNε²} polynomially small at moderate N.
pub fn default_width(n: u32, mu: f64, exponent: f64) -> f64 {
    let nf = n as f64;
    nf.powf(-exponent).max((6.0 * nf.ln() / (mu * nf)).sqrt())
}

fn build(
    chain: &LatticeChain,
    decomp: &WellDecomposition,
    component: usize,
    a_set: &[usize],
    sets: &MetastableSets,
    eps: f64,
) -> Result<(Vec<f64>, UpperBound)> {
    let comp = decomp
        .components
        .get(component)
        .ok_or_else(|| Error::Config(format!("component {component} does not exist")))?;
    let nwells = comp.wells.len();
    if a_set.is_empty() || a_set.len() >= nwells || a_set.iter().any(|&a| a >= nwells) {
        return Err(Error::Config("A must be a nonempty proper subset of the wells".into()));
    }
    let d = chain.dim;
    let nf = chain.n as f64;
    let h = decomp.height;
    let saddles = comp.boundary_gluings(a_set);
    if saddles.is_empty() {
        return Err(Error::Config("no saddle separates A from its complement".into()));
    }
    let mut warnings = Vec::new();
    let theta = saddles.iter().map(|g| g.saddle.mu()).fold(f64::INFINITY, f64::min);

    // 𝒰_N: components of {F < H + ϑε²} meeting the wells.
    let level = components_where(chain, |s| chain.f(s) < h + theta * eps * eps);
    let mut keep = vec![false; level.count];
    for w in &comp.wells {
        for &s in &w.sites {
            if let Some(l) = level.label(s) {
                keep[l] = true;
            }
        }
    }
    let in_u = |s: usize| level.label(s).is_some_and(|l| keep[l]);

    let total = chain.num_sites();
    let mut v = vec![0.5; total];
    let mut in_box = vec![u32::MAX; total];
    let mut box_sites = Vec::new();
    let mut cut_sigmas = Vec::new();
    let mut y = vec![0.0; d];
    for (zi, g) in saddles.iter().enumerate() {
        let z = &g.saddle;
        let mu = z.mu();
        let sign = if a_set.contains(&g.plus_well) { 1.0 } else { -1.0 };
        let vdir: Vec<f64> = z.eigenvectors[0].iter().map(|c| sign * c).collect();
        let widths: Vec<f64> = (1..d).map(|j| 2.0 * (mu / z.eigenvalues[j]).sqrt() * eps).collect();
        let radius = (eps * eps + widths.iter().map(|w| w * w).sum::<f64>()).sqrt();
        let mut count = 0;
        for s in sites_within(chain, &z.location, radius + 1.0 / nf) {
            if !in_u(s) {
                continue;
            }
            chain.coords_into(s, &mut y);
            for i in 0..d {
                y[i] -= z.location[i];
            }
            let along = dot(&y, &vdir);
            if along.abs() > eps {
                continue;
            }
            if (1..d).any(|j| dot(&y, &z.eigenvectors[j]).abs() > widths[j - 1]) {
                continue;
            }
            if in_box[s] != u32::MAX {
                return Err(Error::Config(format!(
                    "boxes around saddles overlap at epsilon {eps:.4}; try epsilon {:.4}",
                    0.5 * eps
                )));
            }
            in_box[s] = zi as u32;
            v[s] = gaussian_profile(chain.n, mu, along);
            box_sites.push(s);
            count += 1;
        }
        if count == 0 {
            return Err(Error::Numerical(format!("box around saddle {:?} contains no site", z.location)));
        }
        let cut = eps * (nf * mu).sqrt();
        if cut < 3.0 {
            warnings.push(format!(
                "saddle {:?}: box edge at {cut:.2} standard deviations, N is small for this epsilon",
                z.location
            ));
        }
        cut_sigmas.push(cut);
    }

    // 𝒱_N = 𝒰_N minus the boxes, split into A-side and B-side components.
    let rest = components_where(chain, |s| in_u(s) && in_box[s] == u32::MAX);
    let mut side = vec![0u8; rest.count];
    for (a, w) in comp.wells.iter().enumerate() {
        let bit = if a_set.contains(&a) { 1 } else { 2 };
        for &s in &w.sites {
            if let Some(l) = rest.label(s) {
                side[l] |= bit;
            }
        }
    }
    if side.iter().any(|&b| b == 3) {
        return Err(Error::Config(format!(
            "the boxes at epsilon {eps:.4} do not separate A from its complement"
        )));
    }
    for s in chain.sites() {
        if let Some(l) = rest.label(s) {
            v[s] = if side[l] == 1 { 1.0 } else { 0.0 };
        }
    }
    for (a, set) in sets.sets.iter().enumerate() {
        let want = if a_set.contains(&a) { 1.0 } else { 0.0 };
        if set.iter().any(|&s| v[s] != want) {
            return Err(Error::Config(format!("the metastable set of well {a} meets a box at epsilon {eps:.4}")));
        }
    }
    box_sites.sort_unstable();
    let energy = dirichlet_energy(chain, &v, h);
    let ub = UpperBound { capacity: ScaledCapacity::new(chain, h, energy), epsilon: eps, box_sites, cut_sigmas, warnings };
    Ok((v, ub))
}
