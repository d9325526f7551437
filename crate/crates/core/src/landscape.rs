//! Saddle levels, sublevel components, wells, metastable sets and depth partitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeChain;
use crate::linalg::norm;
use crate::potential::{CriticalPoint, Kind, PotentialModel};

pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleLevel {
    pub height: f64,
    pub saddles: Vec<CriticalPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleHierarchy {
    pub levels: Vec<SaddleLevel>,
    /// Reference height below the first level (lowest minimum value).
    pub base_height: f64,
}

/// Default merge tolerance, 1e-8 of the lattice range of F.
pub fn default_merge_tol(chain: &LatticeChain) -> f64 {
    1e-8 * (chain.max_f() - chain.min_f())
}

pub fn build_saddle_levels(cps: &[CriticalPoint], height_merge_tol: f64) -> Result<SaddleHierarchy> {
    let mut saddles: Vec<CriticalPoint> = cps.iter().filter(|c| c.kind == Kind::Saddle).cloned().collect();
    if saddles.is_empty() {
        return Err(Error::Hypothesis("no saddle points found".into()));
    }
    saddles.sort_by(|a, b| a.value.total_cmp(&b.value));
    let mut levels: Vec<SaddleLevel> = Vec::new();
    for s in saddles {
        match levels.last_mut() {
            Some(l) if s.value - l.height <= height_merge_tol => l.saddles.push(s),
            _ => levels.push(SaddleLevel { height: s.value, saddles: vec![s] }),
        }
    }
    let base_height = cps
        .iter()
        .filter(|c| c.kind == Kind::Minimum)
        .map(|c| c.value)
        .fold(f64::INFINITY, f64::min);
    Ok(SaddleHierarchy { levels, base_height })
}

/// Site labels of connected components; `NONE` marks excluded sites.
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&s| self.labels[s] == label as u32).collect()
    }

    pub fn label(&self, s: usize) -> Option<usize> {
        let l = self.labels[s];
        (l != NONE).then_some(l as usize)
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index becomes the root so labels follow enumeration order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Connected components of the sites selected by `keep`.
pub fn components_where(chain: &LatticeChain, keep: impl Fn(usize) -> bool) -> Components {
    let n = chain.num_sites();
    let inside: Vec<bool> = (0..n).map(|s| chain.is_site(s) && keep(s)).collect();
    let mut uf = UnionFind::new(n);
    for s in 0..n {
        if !inside[s] {
            continue;
        }
        for axis in 0..chain.dim {
            if let Some(t) = chain.neighbor(s, 2 * axis) {
                if inside[t] {
                    uf.union(s, t);
                }
            }
        }
    }
    let mut root_label = vec![NONE; n];
    let mut labels = vec![NONE; n];
    let mut count = 0;
    for s in 0..n {
        if !inside[s] {
            continue;
        }
        let r = uf.find(s);
        if root_label[r] == NONE {
            root_label[r] = count as u32;
            count += 1;
        }
        labels[s] = root_label[r];
    }
    Components { labels, count }
}

pub fn sublevel_components(chain: &LatticeChain, height: f64, strict: bool) -> Components {
    if strict {
        components_where(chain, |s| chain.f(s) < height)
    } else {
        components_where(chain, |s| chain.f(s) <= height)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Well {
    pub sites: Vec<usize>,
    /// Local minima located in the well.
    pub minima: Vec<CriticalPoint>,
    /// Indices into `minima` of the deepest ones.
    pub deepest: Vec<usize>,
    /// h_a, value at the deepest minima.
    pub bottom: f64,
    /// 𝛍(a) = Σ_k det(Hess F(m_{a,k}))^{-1/2}.
    pub mass: f64,
    /// θ̂_a = H_i − h_a.
    pub depth: f64,
}

impl Well {
    pub fn deepest_location(&self) -> &[f64] {
        &self.minima[self.deepest[0]].location
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gluing {
    pub saddle: CriticalPoint,
    pub a: usize,
    pub b: usize,
    /// Well reached when leaving the saddle along +v.
    pub plus_well: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelComponent {
    pub sites: Vec<usize>,
    pub wells: Vec<Well>,
    pub gluings: Vec<Gluing>,
    /// Saddles whose two probes reach the same well.
    pub degenerate_gluings: Vec<CriticalPoint>,
    /// Strict-sublevel sites near saddles that belong to no well.
    pub saddle_neighbourhood_sites: Vec<usize>,
    #[serde(skip)]
    well_of: Vec<u32>,
}

impl LevelComponent {
    pub fn well_of(&self, s: usize) -> Option<usize> {
        let l = *self.well_of.get(s)?;
        (l != NONE).then_some(l as usize)
    }

    /// Saddles in 𝔖(A): those gluing a well of A to a well outside A.
    pub fn boundary_gluings(&self, a_set: &[usize]) -> Vec<&Gluing> {
        self.gluings.iter().filter(|g| a_set.contains(&g.a) != a_set.contains(&g.b)).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WellDecomposition {
    pub level: usize,
    pub height: f64,
    pub lower_height: f64,
    pub n: u32,
    pub components: Vec<LevelComponent>,
}

#[derive(Debug, Clone)]
pub struct WellOptions {
    /// Probe distance along ±v; default 4/N.
    pub probe: Option<f64>,
    pub height_merge_tol: Option<f64>,
}

impl Default for WellOptions {
    fn default() -> Self {
        WellOptions { probe: None, height_merge_tol: None }
    }
}

pub fn build_wells(
    model: &PotentialModel,
    chain: &LatticeChain,
    cps: &[CriticalPoint],
    hierarchy: &SaddleHierarchy,
    level: usize,
    opts: &WellOptions,
) -> Result<WellDecomposition> {
    let lev = hierarchy
        .levels
        .get(level)
        .ok_or_else(|| Error::Config(format!("level {} does not exist", level + 1)))?;
    let h = lev.height;
    let lower_height = if level == 0 { hierarchy.base_height } else { hierarchy.levels[level - 1].height };
    let glue = 1e-9 * h.abs();
    let nf = chain.n as f64;
    let d = chain.dim;
    let merge_tol = opts.height_merge_tol.unwrap_or_else(|| default_merge_tol(chain));

    // Off-lattice saddles need their lattice neighbourhood to bridge the wells they glue.
    let exclusion = 2.0 * (d as f64).sqrt() / nf;
    let mut bridge = vec![false; chain.num_sites()];
    for z in &lev.saddles {
        for s in sites_within(chain, &z.location, exclusion) {
            bridge[s] = true;
        }
    }
    let closed = components_where(chain, |s| chain.f(s) <= h + glue || bridge[s]);
    let mut saddle_comp = Vec::with_capacity(lev.saddles.len());
    for z in &lev.saddles {
        let label = chain.nearest_site(&z.location).and_then(|s| closed.label(s));
        let label = label.ok_or_else(|| {
            Error::Numerical(format!("saddle at {:?} is not attached to its sublevel set at N={}", z.location, chain.n))
        })?;
        saddle_comp.push(label);
    }
    let mut comp_labels: Vec<usize> = saddle_comp.clone();
    comp_labels.sort_unstable();
    comp_labels.dedup();

    let near_saddle = |s: usize| bridge[s];
    let probe = opts.probe.unwrap_or(4.0 / nf);

    let mut components = Vec::new();
    for &label in &comp_labels {
        let sites = closed.members(label);
        let strict = components_where(chain, |s| closed.labels[s] == label as u32 && chain.f(s) < h - glue && !near_saddle(s));
        // Fragments containing a local minimum become wells.
        let mut frag_minima: Vec<(usize, CriticalPoint)> = Vec::new();
        for m in cps.iter().filter(|c| c.kind == Kind::Minimum) {
            if let Some(s) = chain.nearest_site(&m.location) {
                if let Some(f) = strict.label(s) {
                    frag_minima.push((f, m.clone()));
                }
            }
        }
        let mut frags: Vec<usize> = frag_minima.iter().map(|(f, _)| *f).collect();
        frags.sort_unstable();
        frags.dedup();
        let mut well_of = vec![NONE; chain.num_sites()];
        let mut wells = Vec::new();
        for (wi, &f) in frags.iter().enumerate() {
            let members = strict.members(f);
            for &s in &members {
                well_of[s] = wi as u32;
            }
            let minima: Vec<CriticalPoint> =
                frag_minima.iter().filter(|(g, _)| *g == f).map(|(_, m)| m.clone()).collect();
            let bottom = minima.iter().map(|m| m.value).fold(f64::INFINITY, f64::min);
            let deepest: Vec<usize> = (0..minima.len()).filter(|&k| minima[k].value <= bottom + merge_tol).collect();
            let mass = deepest.iter().map(|&k| 1.0 / minima[k].abs_det().sqrt()).sum();
            let depth = h - bottom;
            if !(depth > 0.0) {
                return Err(Error::Numerical(format!("well with non-positive depth at level {}", level + 1)));
            }
            wells.push(Well { sites: members, minima, deepest, bottom, mass, depth });
        }
        let saddle_neighbourhood_sites: Vec<usize> = sites
            .iter()
            .copied()
            .filter(|&s| chain.f(s) < h - glue && well_of[s] == NONE)
            .collect();

        let mut gluings = Vec::new();
        let mut degenerate = Vec::new();
        for (zi, z) in lev.saddles.iter().enumerate() {
            if saddle_comp[zi] != label {
                continue;
            }
            let v = z.unstable();
            let mut reached = [0usize; 2];
            for (k, sign) in [1.0, -1.0].iter().enumerate() {
                let start: Vec<f64> = z.location.iter().zip(v).map(|(a, b)| a + sign * probe * b).collect();
                reached[k] = descend_to(model, chain, &start, |s| {
                    let w = well_of[s];
                    (w != NONE).then_some(w as usize)
                })?;
            }
            if reached[0] == reached[1] {
                degenerate.push(z.clone());
            } else {
                let (a, b) = (reached[0].min(reached[1]), reached[0].max(reached[1]));
                gluings.push(Gluing { saddle: z.clone(), a, b, plus_well: reached[0] });
            }
        }
        components.push(LevelComponent { sites, wells, gluings, degenerate_gluings: degenerate, saddle_neighbourhood_sites, well_of });
    }
    Ok(WellDecomposition { level, height: h, lower_height, n: chain.n, components })
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Lattice sites within `radius` of a continuum point.
pub fn sites_within(chain: &LatticeChain, x: &[f64], radius: f64) -> Vec<usize> {
    let nf = chain.n as f64;
    let d = chain.dim;
    let reach = (radius * nf).ceil() as i64 + 1;
    let centre: Vec<i64> = x.iter().map(|v| (v * nf).round() as i64).collect();
    let span = (2 * reach + 1) as usize;
    let mut out = Vec::new();
    let mut k = vec![0i64; d];
    for idx in 0..span.pow(d as u32) {
        let mut rem = idx;
        for i in 0..d {
            k[i] = centre[i] - reach + (rem % span) as i64;
            rem /= span;
        }
        if let Some(s) = chain.site_of(&k) {
            if dist(&chain.coords(s), x) <= radius {
                out.push(s);
            }
        }
    }
    out.sort_unstable();
    out
}

/// Steepest descent from `start` (Euler steps of length 1/(4N)) until `hit` accepts the nearest site.
pub fn descend_to<T>(
    model: &PotentialModel,
    chain: &LatticeChain,
    start: &[f64],
    hit: impl Fn(usize) -> Option<T>,
) -> Result<T> {
    let nf = chain.n as f64;
    let step = 1.0 / (4.0 * nf);
    let budget = (40.0 * nf * model.domain.diameter()).ceil() as usize + 100;
    let mut x = start.to_vec();
    for _ in 0..budget {
        let s = chain
            .nearest_site(&x)
            .ok_or_else(|| Error::Numerical(format!("descent from {start:?} left the lattice")))?;
        if let Some(t) = hit(s) {
            return Ok(t);
        }
        let g = model.gradient(&x);
        let gn = norm(&g);
        if !(gn > 1e-14) {
            return Err(Error::Numerical(format!("descent from {start:?} stalled at {x:?}")));
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= step * gi / gn;
        }
    }
    Err(Error::Numerical(format!("descent from {start:?} exceeded its step budget")))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetastableSets {
    pub epsilon: f64,
    pub sets: Vec<Vec<usize>>,
}

pub fn default_epsilon(decomp: &WellDecomposition, component: usize) -> f64 {
    let comp = &decomp.components[component];
    let min_depth = comp.wells.iter().map(|w| w.depth).fold(f64::INFINITY, f64::min);
    0.5 * (decomp.height - decomp.lower_height).min(min_depth)
}

/// ℰ^a_N = {x ∈ W_a : F(x) < H_i − ε}.
pub fn metastable_sets(
    chain: &LatticeChain,
    decomp: &WellDecomposition,
    component: usize,
    epsilon: Option<f64>,
) -> Result<MetastableSets> {
    let comp = decomp
        .components
        .get(component)
        .ok_or_else(|| Error::Config(format!("component {component} does not exist")))?;
    let eps = epsilon.unwrap_or_else(|| default_epsilon(decomp, component));
    let gap = decomp.height - decomp.lower_height;
    if !(eps > 0.0 && eps < gap) {
        return Err(Error::Config(format!("epsilon {eps} must lie in (0, {gap})")));
    }
    let mut sets = Vec::new();
    for (a, w) in comp.wells.iter().enumerate() {
        let set: Vec<usize> = w.sites.iter().copied().filter(|&s| chain.f(s) < decomp.height - eps).collect();
        if set.is_empty() {
            return Err(Error::Config(format!(
                "metastable set of well {a} is empty at N={} with epsilon {eps}",
                chain.n
            )));
        }
        sets.push(set);
    }
    Ok(MetastableSets { epsilon: eps, sets })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthPartition {
    pub depths: Vec<f64>,
    pub classes: Vec<Vec<usize>>,
    pub tails: Vec<Vec<usize>>,
}

impl DepthPartition {
    pub fn scales(&self) -> usize {
        self.depths.len()
    }
}

pub fn depth_partition(comp: &LevelComponent, depth_merge_tol: f64) -> DepthPartition {
    let mut order: Vec<usize> = (0..comp.wells.len()).collect();
    order.sort_by(|&a, &b| comp.wells[a].depth.total_cmp(&comp.wells[b].depth).then(a.cmp(&b)));
    let mut depths: Vec<f64> = Vec::new();
    let mut classes: Vec<Vec<usize>> = Vec::new();
    for a in order {
        let t = comp.wells[a].depth;
        match depths.last() {
            Some(&last) if t - last <= depth_merge_tol => classes.last_mut().unwrap().push(a),
            _ => {
                depths.push(t);
                classes.push(vec![a]);
            }
        }
    }
    for c in classes.iter_mut() {
        c.sort_unstable();
    }
    let tails = (0..classes.len())
        .map(|m| {
            let mut t: Vec<usize> = classes[m..].iter().flatten().copied().collect();
            t.sort_unstable();
            t
        })
        .collect();
    DepthPartition { depths, classes, tails }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeOptions;
    use crate::potential::{builtin, find_critical_points, CriticalOptions};

    fn setup(name: &str, n: u32) -> (PotentialModel, LatticeChain, Vec<CriticalPoint>, SaddleHierarchy) {
        let m = builtin(name).unwrap();
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(m.dim)).unwrap();
        let c = LatticeChain::build(&m, n, &LatticeOptions::default()).unwrap();
        let h = build_saddle_levels(&cps, default_merge_tol(&c)).unwrap();
        (m, c, cps, h)
    }

    #[test]
    fn levels_of_double_and_four_well() {
        let (_, _, _, h) = setup("double_well", 20);
        assert_eq!(h.levels.len(), 1);
        assert!((h.levels[0].height - 1.0).abs() < 1e-12);
        let (_, _, _, h) = setup("four_well", 10);
        assert_eq!(h.levels.len(), 1);
        assert_eq!(h.levels[0].saddles.len(), 4);
    }

    #[test]
    fn close_saddles_merge() {
        let (_, _, cps, _) = setup("double_well", 20);
        let mut extra = cps.clone();
        let mut s = cps.iter().find(|c| c.kind == Kind::Saddle).unwrap().clone();
        s.value += 1e-12;
        s.location[0] = 0.5;
        extra.push(s);
        let h = build_saddle_levels(&extra, 1e-9).unwrap();
        assert_eq!(h.levels.len(), 1);
        assert_eq!(h.levels[0].saddles.len(), 2);
        let h = build_saddle_levels(&extra, 1e-14).unwrap();
        assert_eq!(h.levels.len(), 2);
    }

    #[test]
    fn sublevel_component_counts() {
        let (_, c, _, _) = setup("double_well", 40);
        assert_eq!(sublevel_components(&c, -1.0, true).count, 0);
        assert_eq!(sublevel_components(&c, 0.5, true).count, 2);
        assert_eq!(sublevel_components(&c, c.max_f() + 1.0, false).count, 1);
    }

    #[test]
    fn double_well_decomposition() {
        let (m, c, cps, h) = setup("double_well", 50);
        let d = build_wells(&m, &c, &cps, &h, 0, &WellOptions::default()).unwrap();
        assert_eq!(d.components.len(), 1);
        let comp = &d.components[0];
        assert_eq!(comp.wells.len(), 2);
        assert_eq!(comp.gluings.len(), 1);
        assert!(comp.degenerate_gluings.is_empty());
        for w in &comp.wells {
            assert!((w.mass - 1.0 / 8f64.sqrt()).abs() < 1e-9);
            assert!((w.depth - 1.0).abs() < 1e-9);
        }
        let e = metastable_sets(&c, &d, 0, Some(0.5)).unwrap();
        for (a, set) in e.sets.iter().enumerate() {
            assert!(set.iter().all(|&s| comp.well_of(s) == Some(a)));
            assert!(set.iter().all(|&s| c.f(s) < 0.5));
        }
        assert!(metastable_sets(&c, &d, 0, Some(1.5)).is_err());
        let p = depth_partition(comp, 1e-8);
        assert_eq!(p.scales(), 1);
        assert_eq!(p.classes[0], vec![0, 1]);
    }

    #[test]
    fn tilted_well_has_two_scales() {
        let (m, c, cps, h) = setup("tilted_double_well", 60);
        let d = build_wells(&m, &c, &cps, &h, 0, &WellOptions::default()).unwrap();
        let comp = &d.components[0];
        let p = depth_partition(comp, 1e-8);
        assert_eq!(p.scales(), 2);
        let shallow = p.classes[0][0];
        assert!(comp.wells[shallow].deepest_location()[0] > 0.0);
        assert_eq!(p.tails[1], p.classes[1]);
        assert!((default_epsilon(&d, 0) - 0.403786).abs() < 1e-5);
    }

    #[test]
    fn four_well_is_a_glued_cycle() {
        let (m, c, cps, h) = setup("four_well", 30);
        let d = build_wells(&m, &c, &cps, &h, 0, &WellOptions::default()).unwrap();
        assert_eq!(d.components.len(), 1);
        let comp = &d.components[0];
        assert_eq!(comp.wells.len(), 4);
        assert_eq!(comp.gluings.len(), 4);
        let mut degree = [0; 4];
        for g in &comp.gluings {
            degree[g.a] += 1;
            degree[g.b] += 1;
        }
        assert_eq!(degree, [2; 4]);
    }
}
