//! Event-driven simulation of the lattice chain and the Monte Carlo experiments built on it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::LatticeChain;

mod experiments;
mod windows;

pub use experiments::{
    exit_experiment, low_boundary_exit_experiment, saddle_crossing_experiment, trace_projection_experiment,
    CrossingOptions, DomainSpec, LowBoundaryOptions, RunOptions, TraceOptions,
};
pub use windows::{build_exit_windows, crossing_box, default_delta, CrossingBox, ExitWindows, WindowOptions, SURFACE};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_JUMPS: u64 = 1_000_000_000;
pub const Z95: f64 = 1.959_963_984_540_054;
pub const Z99: f64 = 2.575_829_303_548_900_4;

/// Per-site holding rates and cumulative jump probabilities.
#[derive(Debug, Clone)]
pub struct SimTables {
    pub dim: usize,
    rate: Vec<f64>,
    nbr: Vec<u32>,
    cum: Vec<f64>,
}

impl SimTables {
    pub fn new(chain: &LatticeChain) -> Self {
        let k = 2 * chain.dim;
        let total = chain.num_sites();
        let mut rate = vec![0.0; total];
        let mut nbr = vec![u32::MAX; total * k];
        let mut cum = vec![0.0; total * k];
        for s in chain.sites() {
            let mut acc = 0.0;
            for dir in 0..k {
                if let Some(t) = chain.neighbor(s, dir) {
                    acc += chain.log_rate_sites(s, t).exp();
                    nbr[s * k + dir] = t as u32;
                }
                cum[s * k + dir] = acc;
            }
            rate[s] = acc;
            for dir in 0..k {
                cum[s * k + dir] /= acc;
            }
            // Guard the last available entry against rounding below 1.
            if let Some(last) = (0..k).rev().find(|&dir| nbr[s * k + dir] != u32::MAX) {
                cum[s * k + last] = 1.0;
            }
        }
        SimTables { dim: chain.dim, rate, nbr, cum }
    }

    /// λ_N(x).
    pub fn rate(&self, s: usize) -> f64 {
        self.rate[s]
    }

    /// Neighbour chosen with probability R_N(x,y)/λ_N(x) for a uniform `u` in [0,1).
    #[inline]
    pub fn next(&self, s: usize, u: f64) -> usize {
        let k = 2 * self.dim;
        let row = &self.cum[s * k..(s + 1) * k];
        let dir = row.iter().position(|&c| u < c).unwrap_or(k - 1);
        self.nbr[s * k + dir] as usize
    }
}

/// Stream `replica` of the ChaCha8 generator keyed by `seed`.
pub fn replica_rng(seed: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Walk {
    pub site: usize,
    pub time: f64,
    pub jumps: u64,
    /// False when the jump budget ran out first.
    pub stopped: bool,
}

/// Runs from `x0` until `stop(site)` holds on arrival; `hold(site, dt)` sees every holding interval.
pub fn walk_until(
    tables: &SimTables,
    x0: usize,
    rng: &mut ChaCha8Rng,
    max_jumps: u64,
    mut stop: impl FnMut(usize) -> bool,
    mut hold: impl FnMut(usize, f64),
) -> Walk {
    let mut s = x0;
    let mut time = 0.0;
    let mut jumps = 0;
    loop {
        if stop(s) {
            return Walk { site: s, time, jumps, stopped: true };
        }
        if jumps >= max_jumps {
            return Walk { site: s, time, jumps, stopped: false };
        }
        let dt = -(1.0 - rng.gen::<f64>()).ln() / tables.rate[s];
        hold(s, dt);
        time += dt;
        s = tables.next(s, rng.gen::<f64>());
        jumps += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    /// Index of the stop set reached, or None on timeout.
    pub set: Option<usize>,
    pub site: usize,
    pub time: f64,
    pub jumps: u64,
}

/// Continuous-time run until one of the stop sets is reached. `stop[s]` is 0 for free sites and k+1 for set k.
pub fn run_until_hit(tables: &SimTables, x0: usize, stop: &[u8], rng: &mut ChaCha8Rng, max_jumps: u64) -> Result<Hit> {
    if max_jumps == 0 {
        return Err(Error::Config("max_jumps must be at least 1".into()));
    }
    if stop.get(x0).copied().unwrap_or(0) != 0 {
        return Err(Error::Config("start site lies in a stop set".into()));
    }
    let w = walk_until(tables, x0, rng, max_jumps, |s| stop[s] != 0, |_, _| {});
    let set = w.stopped.then(|| stop[w.site] as usize - 1);
    Ok(Hit { set, site: w.site, time: w.time, jumps: w.jumps })
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson(k: u64, n: u64, z: f64) -> [f64; 2] {
    if n == 0 {
        return [0.0, 1.0];
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
    [(centre - half).clamp(0.0, p), (centre + half).clamp(p, 1.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeStat {
    pub name: String,
    pub count: u64,
    pub frequency: f64,
    pub wilson95: [f64; 2],
    pub wilson99: [f64; 2],
    pub predicted: Option<f64>,
}

impl OutcomeStat {
    pub fn contains_prediction(&self, z: f64) -> Option<bool> {
        let n = if self.frequency > 0.0 { (self.count as f64 / self.frequency).round() as u64 } else { 0 };
        self.predicted.map(|p| {
            let [lo, hi] = wilson(self.count, n, z);
            lo <= p && p <= hi
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: u64,
    pub outcome: String,
    pub site: usize,
    pub time: f64,
    pub jumps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub experiment: String,
    pub potential: String,
    pub n: u32,
    pub seed: u64,
    pub replicas: u64,
    pub parameters: BTreeMap<String, f64>,
    pub outcomes: Vec<OutcomeStat>,
    pub timeouts: u64,
    pub total_jumps: u64,
    pub total_time: f64,
    /// Experiment-specific summary statistics.
    pub statistics: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub records: Vec<ReplicaRecord>,
}

impl ExperimentReport {
    pub(crate) fn new(experiment: &str, potential: &str, n: u32, seed: u64, replicas: u64) -> Self {
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.into(),
            potential: potential.into(),
            n,
            seed,
            replicas,
            parameters: BTreeMap::new(),
            outcomes: vec![],
            timeouts: 0,
            total_jumps: 0,
            total_time: 0.0,
            statistics: BTreeMap::new(),
            warnings: vec![],
            records: vec![],
        }
    }

    /// Fills outcome statistics from per-replica labels (None = timeout) in `names` order.
    pub(crate) fn tally(&mut self, names: &[String], predicted: &[Option<f64>], labels: &[Option<usize>]) {
        let n = self.replicas;
        let mut counts = vec![0u64; names.len()];
        for l in labels {
            match l {
                Some(k) => counts[*k] += 1,
                None => self.timeouts += 1,
            }
        }
        self.outcomes = names
            .iter()
            .zip(&counts)
            .zip(predicted)
            .map(|((name, &count), &predicted)| OutcomeStat {
                name: name.clone(),
                count,
                frequency: count as f64 / n as f64,
                wilson95: wilson(count, n, Z95),
                wilson99: wilson(count, n, Z99),
                predicted,
            })
            .collect();
    }

    pub fn outcome(&self, name: &str) -> Option<&OutcomeStat> {
        self.outcomes.iter().find(|o| o.name == name)
    }

    /// Per-replica CSV: replica,outcome,site,time,jumps.
    pub fn records_csv(&self) -> String {
        let mut out = String::from("replica,outcome,site,time,jumps\n");
        for r in &self.records {
            out.push_str(&format!("{},{},{},{:e},{}\n", r.replica, r.outcome, r.site, r.time, r.jumps));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeOptions;
    use crate::potential::{builtin, parse_potential, BoxDomain};

    fn flat(n: u32) -> LatticeChain {
        let m = parse_potential("flat", "0*x1", BoxDomain { lo: vec![-1.0], hi: vec![1.0] }).unwrap();
        LatticeChain::build(&m, n, &LatticeOptions::default()).unwrap()
    }

    #[test]
    fn fixed_seed_repeats_bitwise() {
        let c = LatticeChain::build(&builtin("four_well").unwrap(), 10, &LatticeOptions::default()).unwrap();
        let t = SimTables::new(&c);
        let x0 = c.nearest_site(&[1.0, 1.0]).unwrap();
        let mut stop = vec![0u8; c.num_sites()];
        stop[c.nearest_site(&[-1.0, -1.0]).unwrap()] = 1;
        let a = run_until_hit(&t, x0, &stop, &mut replica_rng(7, 3), 200_000).unwrap();
        let b = run_until_hit(&t, x0, &stop, &mut replica_rng(7, 3), 200_000).unwrap();
        assert_eq!(a.time.to_bits(), b.time.to_bits());
        assert_eq!((a.site, a.jumps, a.set), (b.site, b.jumps, b.set));
        let other = run_until_hit(&t, x0, &stop, &mut replica_rng(7, 4), 200_000).unwrap();
        assert_ne!(a.time.to_bits(), other.time.to_bits());
    }

    #[test]
    fn symmetric_walk_hits_each_end_half_the_time() {
        let c = flat(10);
        let t = SimTables::new(&c);
        let sites: Vec<usize> = c.sites().collect();
        let mut stop = vec![0u8; c.num_sites()];
        stop[sites[0]] = 1;
        stop[*sites.last().unwrap()] = 2;
        let mid = sites[sites.len() / 2];
        let n = 4000;
        let left = (0..n)
            .filter(|&r| run_until_hit(&t, mid, &stop, &mut replica_rng(11, r), 1_000_000).unwrap().set == Some(0))
            .count() as u64;
        let [lo, hi] = wilson(left, n, Z99);
        assert!(lo <= 0.5 && 0.5 <= hi, "{left}/{n}");
    }

    #[test]
    fn steep_descent_into_stop_set() {
        let m = parse_potential("slope", "3*x1", BoxDomain { lo: vec![-1.0], hi: vec![1.0] }).unwrap();
        let c = LatticeChain::build(&m, 40, &LatticeOptions::default()).unwrap();
        let t = SimTables::new(&c);
        let sites: Vec<usize> = c.sites().collect();
        let mut stop = vec![0u8; c.num_sites()];
        stop[sites[10]] = 1;
        stop[*sites.last().unwrap()] = 2;
        let hits = (0..1000)
            .filter(|&r| run_until_hit(&t, sites[11], &stop, &mut replica_rng(5, r), 10_000).unwrap().set == Some(0))
            .count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn embedded_chain_and_holding_times() {
        let c = LatticeChain::build(&builtin("double_well").unwrap(), 20, &LatticeOptions::default()).unwrap();
        let t = SimTables::new(&c);
        let x = c.nearest_site(&[0.5]).unwrap();
        let right = c.neighbor(x, 0).unwrap();
        let p = c.log_rate_sites(x, right).exp() / c.holding_rate(x);
        let mut rng = replica_rng(1, 0);
        let steps = 1_000_000u64;
        let k = (0..steps).filter(|_| t.next(x, rng.gen::<f64>()) == right).count() as f64;
        let sd = (steps as f64 * p * (1.0 - p)).sqrt();
        assert!((k - steps as f64 * p).abs() <= 4.0 * sd);
        let visits = 100_000;
        let mut total = 0.0;
        for _ in 0..visits {
            total += -(1.0 - rng.gen::<f64>()).ln() / t.rate(x);
        }
        let mean = total / visits as f64;
        let expect = 1.0 / c.holding_rate(x);
        assert!((mean - expect).abs() <= 3.0 * expect / (visits as f64).sqrt());
    }

    #[test]
    fn wilson_interval_is_valid() {
        for (k, n) in [(0, 10), (10, 10), (5, 10), (5000, 10000)] {
            let [lo, hi] = wilson(k, n, Z95);
            assert!(0.0 <= lo && lo <= hi && hi <= 1.0);
            let p = k as f64 / n as f64;
            assert!(lo <= p && p <= hi);
        }
    }

    #[test]
    fn timeout_and_bad_start() {
        let c = flat(10);
        let t = SimTables::new(&c);
        let sites: Vec<usize> = c.sites().collect();
        let mut stop = vec![0u8; c.num_sites()];
        stop[sites[0]] = 1;
        let h = run_until_hit(&t, sites[15], &stop, &mut replica_rng(0, 0), 1).unwrap();
        assert_eq!(h.set, None);
        assert!(run_until_hit(&t, sites[0], &stop, &mut replica_rng(0, 0), 10).is_err());
        assert!(run_until_hit(&t, sites[3], &stop, &mut replica_rng(0, 0), 0).is_err());
    }
}
