use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use metastable::analysis::{Landscape, Setup, SetupChoice};
use metastable::capacity::{FlowOptions, SolveOptions, UpperOptions};
use metastable::landscape::{depth_partition, DepthPartition, SaddleHierarchy};
use metastable::linalg::Matrix;
use metastable::potential::{
    builtin, check_hypotheses, parse_potential_file, BoxDomain, CriticalPoint, DriftConvention, HypothesisReport,
};
use metastable::reduction::{
    collapsed_conductance_cm, exit_distribution, graph_capacity, limit_rates, saddle_weight, MetastableRates,
    ReducedGraph,
};
use metastable::simulate::{
    build_exit_windows, exit_experiment, low_boundary_exit_experiment, saddle_crossing_experiment,
    trace_projection_experiment, CrossingOptions, ExperimentReport, LowBoundaryOptions, RunOptions, TraceOptions,
    WindowOptions,
};
use metastable::verify::{criteria_for, run_criterion, CriterionResult, CRITERIA};
use metastable::{Error, Result};
use serde::Serialize;

use crate::config::{Experiment, RunConfig, SCHEMA_VERSION};

pub struct Done {
    pub files: Vec<PathBuf>,
    pub acceptance_failed: bool,
}

const DEPTH_MERGE_TOL: f64 = 1e-6;

struct Output {
    dir: PathBuf,
    command: &'static str,
    started: Instant,
    files: Vec<PathBuf>,
}

impl Output {
    fn new(cfg: &RunConfig, command: &'static str, started: Instant) -> Result<Self> {
        let dir = cfg.out_dir();
        std::fs::create_dir_all(&dir)
            .map_err(|e| Error::Config(format!("cannot create output directory '{}': {e}", dir.display())))?;
        Ok(Output { dir, command, started, files: vec![] })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))?;
        self.files.push(path);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
        text.push('\n');
        self.write(name, &text)
    }

    // Wall-clock data lives beside the report so the report itself stays byte-identical.
    fn finish(mut self, acceptance_failed: bool) -> Result<Done> {
        let meta = Meta {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            finished_unix_seconds: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        };
        let name = format!("{}.meta.json", self.command);
        self.json(&name, &meta)?;
        Ok(Done { files: self.files, acceptance_failed })
    }
}

#[derive(Serialize)]
struct Meta {
    command: String,
    version: String,
    finished_unix_seconds: u64,
    elapsed_seconds: f64,
}

fn load_landscape(cfg: &RunConfig) -> Result<Landscape> {
    let model = match (&cfg.potential, &cfg.builtin) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read potential file '{}': {e}", p.display())))?;
            let name = p.file_stem().map_or("potential".into(), |s| s.to_string_lossy().into_owned());
            parse_potential_file(&name, &text)?
        }
        (None, Some(b)) => builtin(b)?,
        (None, None) => return Err(Error::Config("no potential given: set `potential` or `builtin`".into())),
    };
    Landscape::new(model)
}

fn hypotheses(cfg: &RunConfig, l: &Landscape) -> HypothesisReport {
    check_hypotheses(&l.model, &l.critical_points, cfg.drift_convention.unwrap_or(DriftConvention::Inward))
}

fn hypothesis_error(r: &HypothesisReport) -> Error {
    let mut parts = Vec::new();
    for (ok, name, offenders) in [(r.h2_ok, "H2", &r.h2_offenders), (r.h3_ok, "H3", &r.h3_offenders)] {
        if !ok {
            let first = offenders.first().map_or(String::new(), |o| format!(" ({} at {:?})", o.reason, o.location));
            parts.push(format!("{name} fails{first}"));
        }
    }
    if !r.h4_ok {
        parts.push("H4 boundary drift fails".into());
    }
    Error::Hypothesis(format!("{}; rerun with --force to continue", parts.join(", ")))
}

fn require_hypotheses(cfg: &RunConfig, l: &Landscape) -> Result<()> {
    let r = hypotheses(cfg, l);
    if r.all_ok() || cfg.force {
        Ok(())
    } else {
        Err(hypothesis_error(&r))
    }
}

fn choice(cfg: &RunConfig) -> SetupChoice {
    SetupChoice { level: cfg.setup.level, component: cfg.setup.component, epsilon: cfg.setup.epsilon }
}

#[derive(Serialize)]
struct PotentialInfo {
    name: String,
    dim: usize,
    domain: BoxDomain,
    source: String,
}

fn potential_info(l: &Landscape) -> PotentialInfo {
    PotentialInfo {
        name: l.model.name.clone(),
        dim: l.model.dim,
        domain: l.model.domain.clone(),
        source: l.model.to_file_text(),
    }
}

#[derive(Serialize)]
struct AnalyzeReport {
    schema_version: u32,
    potential: PotentialInfo,
    critical_points: Vec<CriticalPoint>,
    hypotheses: HypothesisReport,
    /// Null for a potential without saddle points.
    hierarchy: Option<SaddleHierarchy>,
    lattices: Vec<LatticeSummary>,
}

#[derive(Serialize)]
struct LatticeSummary {
    n: u32,
    sites: usize,
    level: usize,
    height: f64,
    component: usize,
    components: usize,
    epsilon: f64,
    wells: Vec<WellSummary>,
    saddles: Vec<SaddleSummary>,
}

#[derive(Serialize)]
struct WellSummary {
    index: usize,
    minima: Vec<Vec<f64>>,
    bottom: f64,
    depth: f64,
    mass: f64,
    sites: usize,
    metastable_sites: usize,
    saddles: Vec<usize>,
}

#[derive(Serialize)]
struct SaddleSummary {
    index: usize,
    a: usize,
    b: usize,
    plus_well: usize,
    location: Vec<f64>,
    value: f64,
    omega: Option<f64>,
}

fn summarize(s: &Setup) -> LatticeSummary {
    let comp = &s.decomp.components[s.component];
    let saddles: Vec<SaddleSummary> = comp
        .gluings
        .iter()
        .enumerate()
        .map(|(index, g)| SaddleSummary {
            index,
            a: g.a,
            b: g.b,
            plus_well: g.plus_well,
            location: g.saddle.location.clone(),
            value: g.saddle.value,
            omega: saddle_weight(&g.saddle).ok(),
        })
        .collect();
    let wells = comp
        .wells
        .iter()
        .enumerate()
        .map(|(index, w)| WellSummary {
            index,
            minima: w.minima.iter().map(|m| m.location.clone()).collect(),
            bottom: w.bottom,
            depth: w.depth,
            mass: w.mass,
            sites: w.sites.len(),
            metastable_sites: s.sets.sets[index].len(),
            saddles: saddles.iter().filter(|z| z.a == index || z.b == index).map(|z| z.index).collect(),
        })
        .collect();
    LatticeSummary {
        n: s.chain.n,
        sites: s.chain.sites().count(),
        level: s.decomp.level,
        height: s.height(),
        component: s.component,
        components: s.decomp.components.len(),
        epsilon: s.sets.epsilon,
        wells,
        saddles,
    }
}

pub fn analyze(cfg: &RunConfig) -> Result<Done> {
    let started = Instant::now();
    cfg.validate_common(false)?;
    let l = load_landscape(cfg)?;
    let hyp = hypotheses(cfg, &l);
    let hierarchy = metastable::landscape::build_saddle_levels(&l.critical_points, 1e-10).ok();
    let mut lattices = Vec::new();
    if hierarchy.is_some() {
        for &n in &cfg.n {
            lattices.push(summarize(&l.setup(n, &choice(cfg))?));
        }
    }
    let ok = hyp.all_ok() || cfg.force;
    let err = (!ok).then(|| hypothesis_error(&hyp));
    let report = AnalyzeReport {
        schema_version: SCHEMA_VERSION,
        potential: potential_info(&l),
        critical_points: l.critical_points.clone(),
        hypotheses: hyp,
        hierarchy,
        lattices,
    };
    let mut out = Output::new(cfg, "analyze", started)?;
    out.json("analyze.json", &report)?;
    let done = out.finish(false)?;
    match err {
        Some(e) => Err(e),
        None => Ok(done),
    }
}

#[derive(Serialize)]
struct ReduceReport {
    schema_version: u32,
    potential: String,
    lattices: Vec<ReducedLattice>,
}

#[derive(Serialize)]
struct ReducedLattice {
    n: u32,
    graph: ReducedGraph,
    partition: DepthPartition,
    /// 𝐜_m for m = 1, 2, … (null where S_m has one well).
    collapsed: Vec<Option<Matrix>>,
    rates: MetastableRates,
    log_beta: Vec<f64>,
    exit_distributions: Vec<ExitDistribution>,
}

#[derive(Serialize)]
struct ExitDistribution {
    well: usize,
    /// (edge index, probability) pairs; empty for a well without saddles.
    saddles: Vec<(usize, f64)>,
}

pub fn reduce(cfg: &RunConfig) -> Result<Done> {
    let started = Instant::now();
    cfg.validate_common(true)?;
    let l = load_landscape(cfg)?;
    require_hypotheses(cfg, &l)?;
    let mut lattices = Vec::new();
    for &n in &cfg.n {
        let s = l.setup(n, &choice(cfg))?;
        let graph = s.graph()?;
        let partition = depth_partition(&s.decomp.components[s.component], DEPTH_MERGE_TOL);
        let collapsed =
            (0..partition.scales()).map(|m| collapsed_conductance_cm(&graph, &partition, m).ok()).collect();
        let rates = limit_rates(&graph, &partition)?;
        let log_beta = rates.scales.iter().map(|r| r.log_beta(n)).collect();
        let exit_distributions = (0..graph.vertices)
            .map(|a| ExitDistribution { well: a, saddles: exit_distribution(&graph, a).unwrap_or_default() })
            .collect();
        lattices.push(ReducedLattice { n, graph, partition, collapsed, rates, log_beta, exit_distributions });
    }
    let mut out = Output::new(cfg, "reduce", started)?;
    out.json("reduce.json", &ReduceReport { schema_version: SCHEMA_VERSION, potential: l.model.name.clone(), lattices })?;
    out.finish(false)
}

#[derive(Serialize)]
struct CapacityReport {
    schema_version: u32,
    potential: String,
    a: Vec<usize>,
    b: Option<Vec<usize>>,
    lattices: Vec<CapacityRow>,
}

#[derive(Serialize)]
struct CapacityRow {
    n: u32,
    b: Vec<usize>,
    kappa_exact: f64,
    graph_capacity: f64,
    ratio_to_graph: f64,
    /// Present when B is the complement of A.
    bounds: Option<Bounds>,
    solver: SolverDiagnostics,
}

#[derive(Serialize)]
struct Bounds {
    kappa_upper: f64,
    kappa_lower: f64,
    kappa_pred: f64,
    ratio_to_pred: f64,
    relative_gap: f64,
    flow_divergence: f64,
    flow_unitarity: f64,
    upper_epsilon: f64,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct SolverDiagnostics {
    iterations: usize,
    residual: f64,
    free_sites: usize,
    excluded_sites: usize,
    overshoot: f64,
}

fn csv_field(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:e}"))
}

pub fn capacity(cfg: &RunConfig) -> Result<Done> {
    let started = Instant::now();
    cfg.validate_common(true)?;
    cfg.validate_capacity()?;
    let l = load_landscape(cfg)?;
    require_hypotheses(cfg, &l)?;
    let k = &cfg.capacity;
    let solve = SolveOptions { tol: k.tol, max_iter: k.max_iter, solver: k.solver };
    let mut rows = Vec::new();
    for &n in &cfg.n {
        let s = l.setup(n, &choice(cfg))?;
        let b = k.b.clone().unwrap_or_else(|| s.complement(&k.a));
        s.check_wells(&k.a, &b)?;
        let sol = s.exact_capacity(&k.a, &b, &solve)?;
        let kappa_exact = sol.capacity(&s.chain).kappa(s.height());
        let cap = graph_capacity(&s.graph()?, &k.a, &b)?.0;
        let bounds = if b == s.complement(&k.a) {
            let w = s.sandwich(
                &l.model,
                &k.a,
                &UpperOptions { epsilon: k.upper_epsilon },
                &FlowOptions { epsilon: k.flow_epsilon },
                &solve,
            )?;
            Some(Bounds {
                kappa_upper: w.kappa_upper,
                kappa_lower: w.kappa_lower,
                kappa_pred: w.kappa_pred,
                ratio_to_pred: w.kappa_exact / w.kappa_pred,
                relative_gap: (w.kappa_upper - w.kappa_lower) / w.kappa_exact,
                flow_divergence: w.flow_divergence,
                flow_unitarity: w.flow_unitarity,
                upper_epsilon: w.upper.epsilon,
                warnings: w.upper.warnings.clone(),
            })
        } else {
            None
        };
        rows.push(CapacityRow {
            n,
            b,
            kappa_exact,
            graph_capacity: cap,
            ratio_to_graph: kappa_exact / cap,
            bounds,
            solver: SolverDiagnostics {
                iterations: sol.iterations,
                residual: sol.residual_norm,
                free_sites: sol.free_sites,
                excluded_sites: sol.excluded_sites,
                overshoot: sol.overshoot(),
            },
        });
    }
    let mut csv = String::from("n,kappa_exact,kappa_upper,kappa_lower,kappa_pred,graph_capacity\n");
    for r in &rows {
        let b = r.bounds.as_ref();
        csv.push_str(&format!(
            "{},{:e},{},{},{},{:e}\n",
            r.n,
            r.kappa_exact,
            csv_field(b.map(|x| x.kappa_upper)),
            csv_field(b.map(|x| x.kappa_lower)),
            csv_field(b.map(|x| x.kappa_pred)),
            r.graph_capacity
        ));
    }
    let report = CapacityReport {
        schema_version: SCHEMA_VERSION,
        potential: l.model.name.clone(),
        a: k.a.clone(),
        b: k.b.clone(),
        lattices: rows,
    };
    let mut out = Output::new(cfg, "capacity", started)?;
    out.json("capacity.json", &report)?;
    out.write("capacity.csv", &csv)?;
    out.finish(false)
}

#[derive(Serialize)]
struct SimulateReport {
    schema_version: u32,
    reports: Vec<ExperimentReport>,
}

fn lowest_site(s: &Setup, well: usize) -> Result<usize> {
    let set = s.sets.sets.get(well).ok_or_else(|| Error::Config(format!("well {well} does not exist")))?;
    set.iter()
        .copied()
        .min_by(|&a, &b| s.chain.f(a).total_cmp(&s.chain.f(b)))
        .ok_or_else(|| Error::Numerical(format!("metastable set of well {well} is empty")))
}

fn run_experiment(cfg: &RunConfig, l: &Landscape, n: u32) -> Result<ExperimentReport> {
    let p = &cfg.simulate;
    let run = RunOptions {
        potential: l.model.name.clone(),
        replicas: p.replicas,
        seed: p.seed,
        max_jumps: p.max_jumps,
        keep_records: p.records,
    };
    if p.experiment == Experiment::LowBoundary {
        let opts = LowBoundaryOptions { domain: p.domain.clone().expect("validated"), epsilon: p.epsilon, start: p.start.clone() };
        return low_boundary_exit_experiment(&l.chain(n)?, &opts, &run);
    }
    let s = l.setup(n, &choice(cfg))?;
    let comp = &s.decomp.components[s.component];
    match p.experiment {
        Experiment::Exit => {
            let opts = WindowOptions { delta: p.delta, radius: p.radius };
            let w = build_exit_windows(&l.model, &s.chain, &s.decomp, s.component, p.well, &opts)?;
            exit_experiment(&s.chain, &w, Some(&s.graph()?), &[lowest_site(&s, p.well)?], &run)
        }
        Experiment::Crossing => {
            let g = comp.gluings.get(p.saddle).ok_or_else(|| {
                Error::Config(format!("saddle {} does not exist ({} saddles)", p.saddle, comp.gluings.len()))
            })?;
            let opts = CrossingOptions { epsilon: p.epsilon, delta: p.delta, start_at_saddle: p.start_at_saddle };
            saddle_crossing_experiment(&s.chain, &g.saddle, &opts, &run)
        }
        Experiment::Trace => {
            let partition = depth_partition(comp, DEPTH_MERGE_TOL);
            let opts =
                TraceOptions { m: p.scale, start_well: p.well, horizon: p.horizon, min_transitions: p.min_transitions };
            trace_projection_experiment(&s.chain, &s.graph()?, &s.sets, &partition, &opts, &run)
        }
        Experiment::LowBoundary => unreachable!(),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Done> {
    let started = Instant::now();
    cfg.validate_common(true)?;
    cfg.validate_simulate()?;
    let l = load_landscape(cfg)?;
    require_hypotheses(cfg, &l)?;
    let reports = cfg.n.iter().map(|&n| run_experiment(cfg, &l, n)).collect::<Result<Vec<_>>>()?;
    let mut out = Output::new(cfg, "simulate", started)?;
    for r in &reports {
        if cfg.simulate.records {
            out.write(&format!("simulate_N{}.csv", r.n), &r.records_csv())?;
        }
    }
    let mut reports = reports;
    for r in reports.iter_mut() {
        r.records.clear();
    }
    out.json("simulate.json", &SimulateReport { schema_version: SCHEMA_VERSION, reports })?;
    out.finish(false)
}

#[derive(Serialize)]
struct VerifyReport {
    schema_version: u32,
    passed: bool,
    criteria: Vec<CriterionResult>,
    summary: BTreeMap<usize, bool>,
}

pub fn verify(cfg: &RunConfig) -> Result<Done> {
    let started = Instant::now();
    cfg.validate_verify()?;
    if let Some(p) = &cfg.potential {
        return Err(Error::Config(format!(
            "verify runs on shipped potentials only; '{}' is a file",
            Path::new(p).display()
        )));
    }
    let ids: Vec<usize> = if !cfg.verify.criteria.is_empty() {
        cfg.verify.criteria.clone()
    } else if let Some(b) = &cfg.builtin {
        builtin(b)?;
        let ids = criteria_for(b);
        if ids.is_empty() {
            return Err(Error::Config(format!("no acceptance criterion exercises '{b}'")));
        }
        ids
    } else {
        (1..=CRITERIA).collect()
    };
    let mut results = Vec::new();
    for id in ids {
        let r = run_criterion(id);
        println!("{}", r.line());
        results.push(r);
    }
    let passed = results.iter().all(|r| r.passed);
    let summary = results.iter().map(|r| (r.id, r.passed)).collect();
    let mut out = Output::new(cfg, "verify", started)?;
    out.json("verify.json", &VerifyReport { schema_version: SCHEMA_VERSION, passed, criteria: results, summary })?;
    out.finish(!passed)
}
