//! Glue from a potential to lattice-level objects: critical points, wells, metastable sets.

use serde::{Deserialize, Serialize};

use crate::capacity::{
    flow_lower_bound, saddle_flow, solve_equilibrium_potential, test_function_upper_bound, FlowField, FlowOptions,
    HarmonicSolution, LowerBound, ScaledCapacity, SolveOptions, UpperBound, UpperOptions,
};
use crate::error::{Error, Result};
use crate::landscape::{
    build_saddle_levels, build_wells, default_merge_tol, metastable_sets, MetastableSets, SaddleHierarchy,
    WellDecomposition, WellOptions,
};
use crate::lattice::{LatticeChain, LatticeOptions};
use crate::potential::{find_critical_points, CriticalOptions, CriticalPoint, PotentialModel};
use crate::reduction::ReducedGraph;

#[derive(Debug, Clone)]
pub struct Landscape {
    pub model: PotentialModel,
    pub critical_points: Vec<CriticalPoint>,
}

impl Landscape {
    pub fn new(model: PotentialModel) -> Result<Self> {
        let cps = find_critical_points(&model, &CriticalOptions::for_dim(model.dim))?;
        Ok(Landscape { model, critical_points: cps })
    }

    pub fn builtin(name: &str) -> Result<Self> {
        Landscape::new(crate::potential::builtin(name)?)
    }

    pub fn chain(&self, n: u32) -> Result<LatticeChain> {
        LatticeChain::build(&self.model, n, &LatticeOptions::default())
    }

    pub fn setup(&self, n: u32, choice: &SetupChoice) -> Result<Setup> {
        let chain = self.chain(n)?;
        self.setup_on(chain, choice)
    }

    pub fn setup_on(&self, chain: LatticeChain, choice: &SetupChoice) -> Result<Setup> {
        let hierarchy = build_saddle_levels(&self.critical_points, default_merge_tol(&chain))?;
        if hierarchy.levels.is_empty() {
            return Err(Error::Config(format!("potential '{}' has no saddle points", self.model.name)));
        }
        let level = choice.level.unwrap_or(hierarchy.levels.len() - 1);
        let decomp = build_wells(&self.model, &chain, &self.critical_points, &hierarchy, level, &WellOptions::default())?;
        let component = match choice.component {
            Some(c) => c,
            None => (0..decomp.components.len())
                .max_by_key(|&c| (decomp.components[c].wells.len(), std::cmp::Reverse(c)))
                .ok_or_else(|| Error::Numerical("no level component".into()))?,
        };
        let sets = metastable_sets(&chain, &decomp, component, choice.epsilon)?;
        Ok(Setup { chain, hierarchy, decomp, component, sets })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SetupChoice {
    /// Saddle level (0-based); defaults to the highest.
    pub level: Option<usize>,
    /// Level component; defaults to the one with the most wells.
    pub component: Option<usize>,
    /// Metastable-set margin ε.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Setup {
    pub chain: LatticeChain,
    pub hierarchy: SaddleHierarchy,
    pub decomp: WellDecomposition,
    pub component: usize,
    pub sets: MetastableSets,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sandwich {
    pub a: Vec<usize>,
    pub exact: ScaledCapacity,
    pub upper: UpperBound,
    pub lower: LowerBound,
    pub kappa_exact: f64,
    pub kappa_upper: f64,
    pub kappa_lower: f64,
    pub kappa_pred: f64,
    pub flow_divergence: f64,
    pub flow_unitarity: f64,
    pub raw_flux: Vec<f64>,
    pub path_rise: f64,
}

impl Setup {
    pub fn wells(&self) -> usize {
        self.decomp.components[self.component].wells.len()
    }

    pub fn height(&self) -> f64 {
        self.decomp.height
    }

    pub fn graph(&self) -> Result<ReducedGraph> {
        ReducedGraph::from_component(&self.decomp.components[self.component], self.decomp.height, self.chain.dim)
    }

    /// ℰ(A) as a site list.
    pub fn sites_of(&self, wells: &[usize]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for &a in wells {
            let set = self.sets.sets.get(a).ok_or_else(|| Error::Config(format!("well {a} does not exist")))?;
            out.extend_from_slice(set);
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn mask_of(&self, wells: &[usize]) -> Result<Vec<bool>> {
        let mut m = vec![false; self.chain.num_sites()];
        for s in self.sites_of(wells)? {
            m[s] = true;
        }
        Ok(m)
    }

    pub fn complement(&self, a: &[usize]) -> Vec<usize> {
        (0..self.wells()).filter(|x| !a.contains(x)).collect()
    }

    pub fn check_wells(&self, a: &[usize], b: &[usize]) -> Result<()> {
        let n = self.wells();
        if a.is_empty() || b.is_empty() {
            return Err(Error::Config("well sets must be nonempty".into()));
        }
        if let Some(x) = a.iter().chain(b).find(|&&x| x >= n) {
            return Err(Error::Config(format!("well {x} does not exist (component has {n} wells)")));
        }
        if a.iter().any(|x| b.contains(x)) {
            return Err(Error::Config("sets must be disjoint".into()));
        }
        Ok(())
    }

    pub fn exact_capacity(&self, a: &[usize], b: &[usize], opts: &SolveOptions) -> Result<HarmonicSolution> {
        self.check_wells(a, b)?;
        solve_equilibrium_potential(&self.chain, &self.sites_of(a)?, &self.sites_of(b)?, opts)
    }

    pub fn saddle_flows(&self, model: &PotentialModel, a: &[usize], opts: &FlowOptions) -> Result<Vec<FlowField>> {
        let comp = &self.decomp.components[self.component];
        let b = self.complement(a);
        let source = self.mask_of(a)?;
        let sink = self.mask_of(&b)?;
        comp.boundary_gluings(a)
            .into_iter()
            .map(|g| saddle_flow(model, &self.chain, g, a, &source, &sink, opts))
            .collect()
    }

    /// Flow lower bound, exact capacity and test-function upper bound for A against its complement.
    pub fn sandwich(
        &self,
        model: &PotentialModel,
        a: &[usize],
        upper: &UpperOptions,
        flow: &FlowOptions,
        solve: &SolveOptions,
    ) -> Result<Sandwich> {
        let b = self.complement(a);
        let exact = self.exact_capacity(a, &b, solve)?.capacity(&self.chain);
        let ub = test_function_upper_bound(&self.chain, &self.decomp, self.component, a, &self.sets, upper)?;
        let flows = self.saddle_flows(model, a, flow)?;
        let lb = flow_lower_bound(&self.chain, &flows, self.height())?;
        let mut allowed = self.mask_of(a)?;
        for (m, s) in allowed.iter_mut().zip(self.mask_of(&b)?) {
            *m |= s;
        }
        let src = self.sites_of(a)?;
        let mut div: f64 = 0.0;
        let mut unit: f64 = 0.0;
        for f in &flows {
            div = div.max(f.max_interior_divergence(&self.chain, &allowed) / f.max_abs);
            unit = unit.max((f.net_outflow(&self.chain, &src) - 1.0).abs());
        }
        let g = self.graph()?;
        let kappa_pred = g.boundary_saddles(a).iter().map(|&e| g.edges[e].omega).sum();
        let h = self.height();
        Ok(Sandwich {
            a: a.to_vec(),
            kappa_exact: exact.kappa(h),
            kappa_upper: ub.capacity.kappa(h),
            kappa_lower: lb.capacity.kappa(h),
            kappa_pred,
            exact,
            upper: ub,
            lower: lb,
            flow_divergence: div,
            flow_unitarity: unit,
            raw_flux: flows.iter().map(|f| f.raw_flux).collect(),
            path_rise: flows.iter().map(|f| f.path_rise).fold(0.0, f64::max),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sandwich(name: &str, n: u32, a: &[usize]) -> Sandwich {
        let l = Landscape::builtin(name).unwrap();
        let s = l.setup(n, &SetupChoice::default()).unwrap();
        s.sandwich(&l.model, a, &UpperOptions::default(), &FlowOptions::default(), &SolveOptions::default()).unwrap()
    }

    #[test]
    fn double_well_sandwich() {
        let w = sandwich("double_well", 100, &[0]);
        assert!(w.kappa_lower <= w.kappa_exact * (1.0 + 1e-10));
        assert!(w.kappa_exact < w.kappa_upper);
        assert!((w.kappa_upper / 2.0 - 1.0).abs() < 0.25);
        assert!(w.flow_divergence < 1e-12);
        assert!(w.flow_unitarity < 1e-10);
        assert_eq!(w.lower.thetas, vec![1.0]);
    }

    #[test]
    fn four_well_sandwich() {
        let w = sandwich("four_well", 32, &[0]);
        assert!(w.kappa_lower < w.kappa_exact, "{} {}", w.kappa_lower, w.kappa_exact);
        assert!(w.kappa_exact < w.kappa_upper);
        assert_eq!(w.lower.thetas.len(), 2);
        assert!((w.lower.thetas[0] - 0.5).abs() < 1e-9);
        assert!(w.flow_divergence < 1e-12);
    }
}
