use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::windows::{crossing_box, default_delta, ExitWindows, SURFACE};
use super::{replica_rng, run_until_hit, walk_until, ExperimentReport, ReplicaRecord, SimTables, DEFAULT_MAX_JUMPS};
use crate::error::{Error, Result};
use crate::landscape::{components_where, DepthPartition, MetastableSets};
use crate::lattice::LatticeChain;
use crate::potential::CriticalPoint;
use crate::reduction::{exit_distribution, limit_rates, ReducedGraph};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOptions {
    pub potential: String,
    pub replicas: u64,
    pub seed: u64,
    pub max_jumps: u64,
    pub keep_records: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { potential: String::new(), replicas: 1000, seed: 0, max_jumps: DEFAULT_MAX_JUMPS, keep_records: false }
    }
}

struct Outcome {
    label: Option<usize>,
    site: usize,
    time: f64,
    jumps: u64,
}

fn check_run(run: &RunOptions, min_replicas: u64) -> Result<()> {
    if run.replicas < min_replicas {
        return Err(Error::Config(format!("at least {min_replicas} replicas are required, got {}", run.replicas)));
    }
    if run.max_jumps == 0 {
        return Err(Error::Config("max_jumps must be at least 1".into()));
    }
    Ok(())
}

fn finish(
    report: &mut ExperimentReport,
    run: &RunOptions,
    names: &[String],
    predicted: &[Option<f64>],
    outs: &[Outcome],
) {
    let labels: Vec<Option<usize>> = outs.iter().map(|o| o.label).collect();
    report.tally(names, predicted, &labels);
    report.total_jumps = outs.iter().map(|o| o.jumps).sum();
    report.total_time = outs.iter().map(|o| o.time).sum();
    report.parameters.insert("max_jumps".into(), run.max_jumps as f64);
    if report.timeouts > 0 {
        report.warnings.push(format!("{} replicas hit the jump budget", report.timeouts));
    }
    if run.keep_records {
        report.records = outs
            .iter()
            .enumerate()
            .map(|(r, o)| ReplicaRecord {
                replica: r as u64,
                outcome: o.label.map_or_else(|| "timeout".to_string(), |k| names[k].clone()),
                site: o.site,
                time: o.time,
                jumps: o.jumps,
            })
            .collect();
    }
}

fn pick(rng: &mut rand_chacha::ChaCha8Rng, sites: &[usize]) -> usize {
    if sites.len() == 1 {
        sites[0]
    } else {
        sites[rng.gen_range(0..sites.len())]
    }
}

/// Exit point through the windows of `windows.well`, started uniformly from `start`.
pub fn exit_experiment(
    chain: &LatticeChain,
    windows: &ExitWindows,
    graph: Option<&ReducedGraph>,
    start: &[usize],
    run: &RunOptions,
) -> Result<ExperimentReport> {
    check_run(run, 100)?;
    if start.is_empty() {
        return Err(Error::Config("no start sites".into()));
    }
    if let Some(&s) = start.iter().find(|&&s| windows.stop.get(s).copied().unwrap_or(SURFACE) != 0) {
        return Err(Error::Config(format!("start site {s} lies in the stopping set")));
    }
    let k = windows.windows.len();
    let mut names: Vec<String> = (0..k).map(|i| format!("window_{i}")).collect();
    names.push("surface".into());
    let mut predicted = vec![None; k + 1];
    if let Some(g) = graph {
        let dist = exit_distribution(g, windows.well)?;
        for (i, z) in windows.saddles.iter().enumerate() {
            predicted[i] = dist.iter().find(|(e, _)| g.edges[*e].location == z.location).map(|&(_, p)| p);
        }
        predicted[k] = Some(0.0);
    }
    let mut stop = windows.stop.clone();
    for s in stop.iter_mut() {
        if *s == SURFACE {
            *s = k as u8 + 1;
        }
    }
    let tables = SimTables::new(chain);
    let outs: Vec<Outcome> = (0..run.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(run.seed, r);
            let x0 = pick(&mut rng, start);
            let h = run_until_hit(&tables, x0, &stop, &mut rng, run.max_jumps).expect("validated start");
            Outcome { label: h.set, site: h.site, time: h.time, jumps: h.jumps }
        })
        .collect();
    let mut report = ExperimentReport::new("exit", &run.potential, chain.n, run.seed, run.replicas);
    report.parameters.insert("delta".into(), windows.delta);
    report.parameters.insert("radius".into(), windows.radius);
    report.parameters.insert("well".into(), windows.well as f64);
    report.warnings.extend(windows.warnings.iter().cloned());
    finish(&mut report, run, &names, &predicted, &outs);
    Ok(report)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CrossingOptions {
    /// ε_N; defaults to N^{-7/16}.
    pub epsilon: Option<f64>,
    /// Window height δ for the start sites; defaults to min(δ_N, λ_min ε²/8).
    pub delta: Option<f64>,
    /// Start every replica at the site nearest z instead of 𝒟_z.
    pub start_at_saddle: bool,
}

/// Exit face of the box B_N around `z`.
pub fn saddle_crossing_experiment(
    chain: &LatticeChain,
    z: &CriticalPoint,
    opts: &CrossingOptions,
    run: &RunOptions,
) -> Result<ExperimentReport> {
    check_run(run, 1)?;
    let nf = chain.n as f64;
    let eps = opts.epsilon.unwrap_or(nf.powf(-7.0 / 16.0));
    let lmin = z.eigenvalues[1..].iter().copied().fold(f64::INFINITY, f64::min);
    let delta = opts.delta.unwrap_or_else(|| {
        let d = default_delta(chain.n, chain.dim);
        if lmin.is_finite() {
            d.min(lmin * eps * eps / 8.0)
        } else {
            d
        }
    });
    let bx = crossing_box(chain, z, eps, delta)?;
    let start = if opts.start_at_saddle {
        let s = chain
            .nearest_site(&z.location)
            .ok_or_else(|| Error::Config(format!("saddle {:?} is outside the lattice", z.location)))?;
        vec![s]
    } else {
        bx.start_sites.clone()
    };
    if start.iter().any(|&s| !bx.inside[s]) {
        return Err(Error::Config("start site lies outside the crossing box".into()));
    }
    let tables = SimTables::new(chain);
    let outs: Vec<Outcome> = (0..run.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(run.seed, r);
            let x0 = pick(&mut rng, &start);
            let w = walk_until(&tables, x0, &mut rng, run.max_jumps, |s| bx.face[s] != 0, |_, _| {});
            let label = w.stopped.then(|| bx.face[w.site] as usize - 1);
            Outcome { label, site: w.site, time: w.time, jumps: w.jumps }
        })
        .collect();
    let names: Vec<String> = ["plus", "minus", "side"].iter().map(|s| s.to_string()).collect();
    let mut report = ExperimentReport::new("saddle_crossing", &run.potential, chain.n, run.seed, run.replicas);
    report.parameters.insert("epsilon".into(), eps);
    report.parameters.insert("aspect".into(), bx.aspect);
    report.parameters.insert("delta".into(), delta);
    report.parameters.insert("start_sites".into(), start.len() as f64);
    finish(&mut report, run, &names, &[Some(0.5), Some(0.5), Some(0.0)], &outs);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceOptions {
    /// Scale index m (0-based).
    pub m: usize,
    /// Starting well; must belong to scale m.
    pub start_well: usize,
    /// Horizon in units of β_m.
    pub horizon: f64,
    /// Fewer transitions than this flags the rate statistics as partial.
    pub min_transitions: u64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions { m: 0, start_well: 0, horizon: 1.0, min_transitions: 20 }
    }
}

struct TraceRun {
    out: Outcome,
    /// time[a] spent inside ℰ^a.
    time_in: Vec<f64>,
    outside: f64,
    /// jumps[a][b] of the projected trajectory.
    jumps: Vec<Vec<u64>>,
    /// Completed sojourns (well, trace time).
    sojourns: Vec<(usize, f64)>,
}

/// Projection Ψ^m_N of a run from the bottom of ℰ^a over `horizon`·β_m.
pub fn trace_projection_experiment(
    chain: &LatticeChain,
    graph: &ReducedGraph,
    sets: &MetastableSets,
    partition: &DepthPartition,
    opts: &TraceOptions,
    run: &RunOptions,
) -> Result<ExperimentReport> {
    check_run(run, 1)?;
    if opts.m >= partition.scales() {
        return Err(Error::Config(format!("scale {} does not exist ({} scales)", opts.m + 1, partition.scales())));
    }
    let members = &partition.tails[opts.m];
    if !members.contains(&opts.start_well) {
        return Err(Error::Config(format!("well {} is not in scale {}", opts.start_well, opts.m + 1)));
    }
    if !(opts.horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {}", opts.horizon)));
    }
    let rates = limit_rates(graph, partition)?;
    let scale = &rates.scales[opts.m];
    let beta = scale.log_beta(chain.n).exp();
    let horizon = opts.horizon * beta;
    let nw = graph.vertices;
    let mut label = vec![u8::MAX; chain.num_sites()];
    for &a in members {
        for &s in &sets.sets[a] {
            label[s] = a as u8;
        }
    }
    let x0 = *sets.sets[opts.start_well]
        .iter()
        .min_by(|&&a, &&b| chain.f(a).total_cmp(&chain.f(b)))
        .ok_or_else(|| Error::Config("empty metastable set".into()))?;
    let tables = SimTables::new(chain);
    let runs: Vec<TraceRun> = (0..run.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(run.seed, r);
            let mut tr = TraceRun {
                out: Outcome { label: None, site: x0, time: 0.0, jumps: 0 },
                time_in: vec![0.0; nw],
                outside: 0.0,
                jumps: vec![vec![0; nw]; nw],
                sojourns: vec![],
            };
            let mut s = x0;
            let mut current = opts.start_well;
            let mut sojourn = 0.0;
            let mut time = 0.0;
            let mut n = 0u64;
            loop {
                if n >= run.max_jumps {
                    break;
                }
                let dt = -(1.0 - rng.gen::<f64>()).ln() / tables.rate(s);
                let dt = dt.min(horizon - time);
                match label[s] {
                    u8::MAX => tr.outside += dt,
                    a => {
                        tr.time_in[a as usize] += dt;
                        sojourn += dt;
                    }
                }
                time += dt;
                if time >= horizon {
                    tr.out.label = Some(current);
                    break;
                }
                s = tables.next(s, rng.gen::<f64>());
                n += 1;
                let b = label[s];
                if b != u8::MAX && b as usize != current {
                    tr.jumps[current][b as usize] += 1;
                    tr.sojourns.push((current, sojourn));
                    sojourn = 0.0;
                    current = b as usize;
                }
            }
            tr.out.site = s;
            tr.out.time = time;
            tr.out.jumps = n;
            tr
        })
        .collect();

    let names: Vec<String> = (0..nw).map(|a| format!("final_well_{a}")).collect();
    let mut report = ExperimentReport::new("trace_projection", &run.potential, chain.n, run.seed, run.replicas);
    report.parameters.insert("m".into(), opts.m as f64 + 1.0);
    report.parameters.insert("start_well".into(), opts.start_well as f64);
    report.parameters.insert("horizon_beta".into(), opts.horizon);
    report.parameters.insert("beta".into(), beta);
    report.parameters.insert("epsilon".into(), sets.epsilon);

    let total_time: f64 = runs.iter().map(|t| t.out.time).sum();
    let outside: f64 = runs.iter().map(|t| t.outside).sum();
    let st = &mut report.statistics;
    st.insert("occupation_outside".into(), if total_time > 0.0 { outside / total_time } else { 0.0 });
    let mut transitions = 0;
    for &a in members {
        let time_a: f64 = runs.iter().map(|t| t.time_in[a]).sum();
        st.insert(format!("time_in_{a}"), time_a);
        for &b in members {
            if a == b {
                continue;
            }
            let count: u64 = runs.iter().map(|t| t.jumps[a][b]).sum();
            transitions += count;
            st.insert(format!("transitions_{a}_{b}"), count as f64);
            if time_a > 0.0 {
                let rate = count as f64 / time_a;
                st.insert(format!("rate_{a}_{b}"), rate);
                let limit = scale.rates[(a, b)];
                if limit > 0.0 {
                    st.insert(format!("rate_ratio_{a}_{b}"), rate * beta / limit);
                }
            }
        }
        let mut hold: Vec<f64> = runs.iter().flat_map(|t| t.sojourns.iter().filter(|x| x.0 == a).map(|x| x.1)).collect();
        if hold.len() >= 2 {
            let k = hold.len() as f64;
            let mean = hold.iter().sum::<f64>() / k;
            let var = hold.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
            hold.sort_by(f64::total_cmp);
            let median = hold[hold.len() / 2];
            st.insert(format!("holding_count_{a}"), k);
            st.insert(format!("holding_cv_{a}"), var.sqrt() / mean);
            // Exponential law: median = mean·ln 2.
            st.insert(format!("holding_median_ratio_{a}"), median / (mean * std::f64::consts::LN_2));
        }
    }
    st.insert("transitions".into(), transitions as f64);
    if transitions < opts.min_transitions {
        report.warnings.push(format!(
            "only {transitions} transitions (< {}); rate statistics are partial",
            opts.min_transitions
        ));
    }
    let outs: Vec<Outcome> = runs.into_iter().map(|t| t.out).collect();
    let predicted = vec![None; nw];
    finish(&mut report, run, &names, &predicted, &outs);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DomainSpec {
    /// Lattice sites in the closed box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Component of {F < height} containing the site nearest `point`.
    Sublevel { height: f64, point: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowBoundaryOptions {
    pub domain: DomainSpec,
    /// ε_N; defaults to N^{-1/2}.
    pub epsilon: Option<f64>,
    /// Start point; defaults to the lowest site of D_N.
    pub start: Option<Vec<f64>>,
}

/// Exit from D_N through B_N = {y ∈ ∂D_N : F(y) ≤ min_{∂D_N} F + 2ε}.
pub fn low_boundary_exit_experiment(chain: &LatticeChain, opts: &LowBoundaryOptions, run: &RunOptions) -> Result<ExperimentReport> {
    check_run(run, 1)?;
    let d = chain.dim;
    let total = chain.num_sites();
    let mut inside = vec![false; total];
    match &opts.domain {
        DomainSpec::Box { lo, hi } => {
            if lo.len() != d || hi.len() != d {
                return Err(Error::Config(format!("domain box must have dimension {d}")));
            }
            let mut x = vec![0.0; d];
            for s in chain.sites() {
                chain.coords_into(s, &mut x);
                inside[s] = (0..d).all(|j| lo[j] <= x[j] && x[j] <= hi[j]);
            }
        }
        DomainSpec::Sublevel { height, point } => {
            let comps = components_where(chain, |s| chain.f(s) < *height);
            let seed = chain.nearest_site(point).ok_or_else(|| Error::Config(format!("point {point:?} is outside the lattice")))?;
            let label = comps
                .label(seed)
                .ok_or_else(|| Error::Config(format!("point {point:?} is not below height {height}")))?;
            for s in comps.members(label) {
                inside[s] = true;
            }
        }
    }
    let boundary: Vec<usize> = chain
        .sites()
        .filter(|&s| !inside[s] && (0..2 * d).any(|dir| chain.neighbor(s, dir).is_some_and(|t| inside[t])))
        .collect();
    if boundary.is_empty() {
        return Err(Error::Config("the domain has an empty boundary on the lattice; B_N is empty".into()));
    }
    let eps = opts.epsilon.unwrap_or((chain.n as f64).powf(-0.5));
    let low = boundary.iter().map(|&s| chain.f(s)).fold(f64::INFINITY, f64::min);
    let mut stop = vec![0u8; total];
    for &s in &boundary {
        stop[s] = if chain.f(s) <= low + 2.0 * eps { 1 } else { 2 };
    }
    let x0 = match &opts.start {
        Some(p) => chain.nearest_site(p).ok_or_else(|| Error::Config(format!("start {p:?} is outside the lattice")))?,
        None => chain.sites().filter(|&s| inside[s]).min_by(|&a, &b| chain.f(a).total_cmp(&chain.f(b))).unwrap(),
    };
    if !inside[x0] {
        return Err(Error::Config("start site lies outside the domain".into()));
    }
    let tables = SimTables::new(chain);
    let outs: Vec<Outcome> = (0..run.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(run.seed, r);
            let h = run_until_hit(&tables, x0, &stop, &mut rng, run.max_jumps).expect("validated start");
            Outcome { label: h.set, site: h.site, time: h.time, jumps: h.jumps }
        })
        .collect();
    let names: Vec<String> = ["low", "high"].iter().map(|s| s.to_string()).collect();
    let mut report = ExperimentReport::new("low_boundary_exit", &run.potential, chain.n, run.seed, run.replicas);
    report.parameters.insert("epsilon".into(), eps);
    report.parameters.insert("boundary_min".into(), low);
    report.parameters.insert("low_sites".into(), stop.iter().filter(|&&x| x == 1).count() as f64);
    report.parameters.insert("boundary_sites".into(), boundary.len() as f64);
    finish(&mut report, run, &names, &[Some(1.0), Some(0.0)], &outs);
    Ok(report)
}
