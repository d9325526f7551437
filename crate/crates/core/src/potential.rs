//! Potential models on axis-aligned boxes: file format, builtins, critical points, hypothesis checks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::linalg::{norm, solve, sym_eigen, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Open-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| *v > *l && *v < *h)
    }

    pub fn diameter(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) * (h - l)).sum::<f64>().sqrt()
    }

    /// Distance from an interior point to the boundary.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (l, h))| (v - l).min(h - v))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct PotentialModel {
    pub name: String,
    pub dim: usize,
    pub domain: BoxDomain,
    pub expr: Expr,
    grad: Vec<Expr>,
    hess: Vec<Expr>,
}

impl PotentialModel {
    pub fn new(name: &str, expr: Expr, domain: BoxDomain) -> Result<Self> {
        let dim = domain.dim();
        if dim == 0 {
            return Err(Error::Model("dimension must be positive".into()));
        }
        if domain.hi.len() != dim {
            return Err(Error::Model("domain bounds have mismatched lengths".into()));
        }
        for i in 0..dim {
            if !(domain.lo[i] < domain.hi[i]) || !domain.lo[i].is_finite() || !domain.hi[i].is_finite() {
                return Err(Error::Model(format!("coordinate {} has empty range", i + 1)));
            }
        }
        if expr.arity() > dim {
            return Err(Error::Model(format!("variable index out of range for dimension {dim}")));
        }
        let grad: Vec<Expr> = (0..dim).map(|k| expr.diff(k)).collect();
        let mut hess = vec![Expr::Const(0.0); dim * dim];
        for i in 0..dim {
            for j in i..dim {
                let h = grad[i].diff(j);
                hess[j * dim + i] = h.clone();
                hess[i * dim + j] = h;
            }
        }
        let model = PotentialModel { name: name.to_string(), dim, domain, expr, grad, hess };
        // Finite values on a coarse interior grid.
        for x in model.grid(5) {
            if !model.value(&x).is_finite() {
                return Err(Error::Model(format!("potential is not finite at {x:?}")));
            }
        }
        Ok(model)
    }

    /// Symbolic gradient and Hessian (row-major, mirrored).
    pub fn derivatives(&self) -> (&[Expr], &[Expr]) {
        (&self.grad, &self.hess)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.expr.eval(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grad.iter().map(|g| g.eval(x)).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Matrix {
        Matrix { n: self.dim, data: self.hess.iter().map(|h| h.eval(x)).collect() }
    }

    /// Cell-centred interior grid with `per_axis` points per coordinate.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let d = self.dim;
        let total = per_axis.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let k = idx % per_axis;
                        idx /= per_axis;
                        let (l, h) = (self.domain.lo[i], self.domain.hi[i]);
                        l + (k as f64 + 0.5) * (h - l) / per_axis as f64
                    })
                    .collect()
            })
            .collect()
    }

    /// Text in the potential file format.
    pub fn to_file_text(&self) -> String {
        let dom: Vec<String> =
            self.domain.lo.iter().zip(&self.domain.hi).map(|(l, h)| format!("[{l:?},{h:?}]")).collect();
        format!("dim = {}\ndomain = {}\nF = {}\n", self.dim, dom.join("x"), self.expr)
    }
}

/// Parses a potential file:
/// `dim = d`, `domain = [lo,hi]x...`, then `F = expr` (continuation lines allowed, `#` starts a comment).
pub fn parse_potential_file(name: &str, text: &str) -> Result<PotentialModel> {
    let mut dim: Option<usize> = None;
    let mut domain: Option<BoxDomain> = None;
    let mut expr_src: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::Model(format!("line {}: {msg}", lineno + 1));
        if let Some(src) = expr_src.as_mut() {
            src.push(' ');
            src.push_str(line);
            continue;
        }
        let (key, val) = line.split_once('=').ok_or_else(|| bad("expected 'key = value'"))?;
        match key.trim() {
            "dim" => {
                let d: usize = val.trim().parse().map_err(|_| bad("dim must be a positive integer"))?;
                if d == 0 {
                    return Err(bad("dim must be a positive integer"));
                }
                dim = Some(d);
            }
            "domain" => domain = Some(parse_domain(val).map_err(|m| bad(&m))?),
            "F" => {
                if dim.is_none() || domain.is_none() {
                    return Err(bad("'dim' and 'domain' must precede 'F'"));
                }
                expr_src = Some(val.trim().to_string());
            }
            other => return Err(bad(&format!("unknown key '{other}'"))),
        }
    }
    let dim = dim.ok_or_else(|| Error::Model("missing 'dim' line".into()))?;
    let domain = domain.ok_or_else(|| Error::Model("missing 'domain' line".into()))?;
    let src = expr_src.ok_or_else(|| Error::Model("missing 'F' line".into()))?;
    if domain.dim() != dim {
        return Err(Error::Model(format!("domain has {} factors but dim = {dim}", domain.dim())));
    }
    parse_potential(name, &src, domain)
}

/// Builds a model from an expression string.
pub fn parse_potential(name: &str, src: &str, domain: BoxDomain) -> Result<PotentialModel> {
    if src.trim().is_empty() {
        return Err(Error::Model("empty expression".into()));
    }
    let e = expr::parse(src, domain.dim())?;
    PotentialModel::new(name, e, domain)
}

fn parse_domain(val: &str) -> std::result::Result<BoxDomain, String> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for factor in val.split('x') {
        let f = factor.trim();
        let inner = f
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| format!("malformed interval '{f}'"))?;
        let (a, b) = inner.split_once(',').ok_or_else(|| format!("malformed interval '{f}'"))?;
        let a: f64 = a.trim().parse().map_err(|_| format!("bad bound '{a}'"))?;
        let b: f64 = b.trim().parse().map_err(|_| format!("bad bound '{b}'"))?;
        lo.push(a);
        hi.push(b);
    }
    Ok(BoxDomain { lo, hi })
}

const BUILTINS: &[(&str, &str)] = &[
    ("double_well", include_str!("../potentials/double_well.pot")),
    ("tilted_double_well", include_str!("../potentials/tilted_double_well.pot")),
    ("quadratic_well", include_str!("../potentials/quadratic_well.pot")),
    ("four_well", include_str!("../potentials/four_well.pot")),
    ("two_saddle", include_str!("../potentials/two_saddle.pot")),
];

/// Extra landscapes for simulation budgets and geometry checks; resolvable by name but not builtins.
const FIXTURES: &[(&str, &str)] = &[
    ("rotated_four_well", include_str!("../potentials/rotated_four_well.pot")),
    ("shallow_double_well", include_str!("../potentials/shallow_double_well.pot")),
    ("shallow_tilted_double_well", include_str!("../potentials/shallow_tilted_double_well.pot")),
    ("walled_four_well", include_str!("../potentials/walled_four_well.pot")),
    ("shallow_two_saddle", include_str!("../potentials/shallow_two_saddle.pot")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

pub fn fixture_names() -> Vec<&'static str> {
    FIXTURES.iter().map(|(n, _)| *n).collect()
}

pub fn builtin(name: &str) -> Result<PotentialModel> {
    let (_, text) = BUILTINS
        .iter()
        .chain(FIXTURES)
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown builtin potential '{name}'")))?;
    parse_potential_file(name, text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Minimum,
    Saddle,
    Maximum,
    Degenerate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    /// Row-major d×d.
    pub hessian: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` belongs to `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub kind: Kind,
}

impl CriticalPoint {
    /// Unstable curvature μ of a saddle.
    pub fn mu(&self) -> f64 {
        -self.eigenvalues[0]
    }

    /// Unstable direction v of a saddle.
    pub fn unstable(&self) -> &[f64] {
        &self.eigenvectors[0]
    }

    pub fn abs_det(&self) -> f64 {
        self.eigenvalues.iter().product::<f64>().abs()
    }
}

#[derive(Debug, Clone)]
pub struct CriticalOptions {
    pub seeds_per_axis: usize,
    /// Absolute gradient tolerance; `None` means 1e-10 times the gradient scale on the seed grid.
    pub newton_tol: Option<f64>,
    pub max_iter: usize,
    pub degeneracy_rel: f64,
    pub dedup_rel: f64,
    pub eigen_tol: f64,
}

impl CriticalOptions {
    pub fn for_dim(d: usize) -> Self {
        CriticalOptions {
            seeds_per_axis: match d {
                1 => 41,
                2 => 21,
                _ => 9,
            },
            newton_tol: None,
            max_iter: 200,
            degeneracy_rel: 1e-8,
            dedup_rel: 1e-6,
            eigen_tol: 1e-12,
        }
    }
}

pub fn classify(model: &PotentialModel, x: &[f64], opts: &CriticalOptions) -> CriticalPoint {
    let h = model.hessian(x);
    let eig = sym_eigen(&h, opts.eigen_tol);
    let tol = opts.degeneracy_rel * h.frobenius();
    let neg = eig.values.iter().filter(|&&l| l < -tol).count();
    let pos = eig.values.iter().filter(|&&l| l > tol).count();
    let d = model.dim;
    let kind = if pos == d {
        Kind::Minimum
    } else if neg == 1 && pos == d - 1 {
        Kind::Saddle
    } else if neg == d {
        Kind::Maximum
    } else {
        Kind::Degenerate
    };
    CriticalPoint {
        location: x.to_vec(),
        value: model.value(x),
        grad_norm: norm(&model.gradient(x)),
        hessian: h.data,
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        kind,
    }
}

/// Multi-start Newton on ∇F = 0 from a regular seed grid.
pub fn find_critical_points(model: &PotentialModel, opts: &CriticalOptions) -> Result<Vec<CriticalPoint>> {
    if opts.seeds_per_axis < 3 {
        return Err(Error::Config("seeds_per_axis must be at least 3".into()));
    }
    let seeds = model.grid(opts.seeds_per_axis);
    let tol = opts.newton_tol.unwrap_or_else(|| {
        let scale = seeds.iter().map(|x| norm(&model.gradient(x))).fold(0.0, f64::max);
        1e-10 * scale.max(1.0)
    });
    let diam = model.domain.diameter();
    let dedup = opts.dedup_rel * diam;
    let mut found: Vec<Vec<f64>> = Vec::new();
    for seed in seeds {
        let Some(x) = newton(model, seed, tol, opts.max_iter, diam) else { continue };
        let dup = found.iter().any(|y| dist(y, &x) <= dedup.max(1e3 * tol));
        if !dup {
            found.push(x);
        }
    }
    let mut cps: Vec<CriticalPoint> = found.iter().map(|x| classify(model, x, opts)).collect();
    cps.sort_by(|a, b| {
        a.value.total_cmp(&b.value).then_with(|| {
            a.location.iter().zip(&b.location).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Ok(cps)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn newton(model: &PotentialModel, mut x: Vec<f64>, tol: f64, max_iter: usize, diam: f64) -> Option<Vec<f64>> {
    for _ in 0..max_iter {
        let g = model.gradient(&x);
        let gn = norm(&g);
        if !gn.is_finite() {
            return None;
        }
        if gn <= tol {
            return Some(x);
        }
        let h = model.hessian(&x);
        let mut step = solve(&h, &g).ok()?;
        let len = norm(&step);
        let cap = 0.25 * diam;
        if len > cap {
            step.iter_mut().for_each(|s| *s *= cap / len);
        }
        for (xi, si) in x.iter_mut().zip(&step) {
            *xi -= si;
        }
        if !model.domain.contains(&x) {
            return None;
        }
    }
    let g = norm(&model.gradient(&x));
    (g <= tol).then_some(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftConvention {
    /// Require ∇F·n > 0 on faces, n the outward normal.
    Inward,
    /// Require ∇F·n < 0, the inequality as literally printed.
    Literal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaceDrift {
    pub axis: usize,
    pub upper: bool,
    pub min_normal_derivative: f64,
    pub max_normal_derivative: f64,
    pub violations: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Offender {
    pub location: Vec<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h1_lipschitz_estimate: f64,
    pub h2_ok: bool,
    pub h2_offenders: Vec<Offender>,
    pub h3_ok: bool,
    pub h3_offenders: Vec<Offender>,
    pub h4_ok: bool,
    pub h4_convention: DriftConvention,
    pub h4_boundary_drift: Vec<FaceDrift>,
    pub warnings: Vec<String>,
}

impl HypothesisReport {
    pub fn all_ok(&self) -> bool {
        self.h2_ok && self.h3_ok && self.h4_ok
    }
}

pub fn check_hypotheses(model: &PotentialModel, cps: &[CriticalPoint], convention: DriftConvention) -> HypothesisReport {
    let d = model.dim;
    let per_axis = match d {
        1 => 200,
        2 => 30,
        _ => 10,
    };
    // H1: Hessian differences between neighbouring grid points.
    let pts = model.grid(per_axis);
    let hs: Vec<Matrix> = pts.iter().map(|x| model.hessian(x)).collect();
    let mut lip: f64 = 0.0;
    for (idx, x) in pts.iter().enumerate() {
        let mut stride = 1;
        for _ in 0..d {
            let k = (idx / stride) % per_axis;
            if k + 1 < per_axis {
                let j = idx + stride;
                let diff: Vec<f64> = hs[idx].data.iter().zip(&hs[j].data).map(|(a, b)| a - b).collect();
                lip = lip.max(norm(&diff) / dist(x, &pts[j]));
            }
            stride *= per_axis;
        }
    }

    let mut h2 = Vec::new();
    let mut h3 = Vec::new();
    let mut warnings = Vec::new();
    for cp in cps.iter().filter(|c| c.kind == Kind::Degenerate) {
        let tol = 1e-8 * norm(&cp.hessian);
        let negatives = cp.eigenvalues.iter().filter(|&&l| l < -tol).count();
        if negatives >= 2 && negatives < d {
            h3.push(Offender { location: cp.location.clone(), reason: format!("saddle of index {negatives}") });
            continue;
        }
        match local_shape(model, cp) {
            Shape::Min => h2.push(Offender {
                location: cp.location.clone(),
                reason: "local minimum with degenerate Hessian".into(),
            }),
            Shape::Max => warnings.push(format!("degenerate local maximum at {:?}", cp.location)),
            Shape::Neither => h3.push(Offender {
                location: cp.location.clone(),
                reason: "critical point with a vanishing Hessian eigenvalue".into(),
            }),
        }
    }

    // H4 on a sample of face points.
    let face_pts: usize = match d {
        1 => 1,
        2 => 41,
        _ => 9,
    };
    let mut faces = Vec::new();
    let mut h4_ok = true;
    for axis in 0..d {
        for upper in [false, true] {
            let mut samples = Vec::new();
            let others = d - 1;
            let count = face_pts.pow(others as u32);
            for mut idx in 0..count {
                let mut x = vec![0.0; d];
                let mut o = 0;
                for (i, xi) in x.iter_mut().enumerate() {
                    if i == axis {
                        *xi = if upper { model.domain.hi[i] } else { model.domain.lo[i] };
                    } else {
                        let k = idx % face_pts;
                        idx /= face_pts;
                        let (l, h) = (model.domain.lo[i], model.domain.hi[i]);
                        *xi = l + (k as f64 + 0.5) * (h - l) / face_pts as f64;
                        o += 1;
                    }
                }
                debug_assert_eq!(o, others);
                let g = model.gradient(&x);
                samples.push(if upper { g[axis] } else { -g[axis] });
            }
            let violations = samples
                .iter()
                .filter(|&&s| match convention {
                    DriftConvention::Inward => !(s > 0.0),
                    DriftConvention::Literal => !(s < 0.0),
                })
                .count();
            if violations > 0 {
                h4_ok = false;
                warnings.push(format!(
                    "H4: {violations} of {} samples on face x{} = {} violate the boundary drift condition",
                    samples.len(),
                    axis + 1,
                    if upper { "hi" } else { "lo" }
                ));
            }
            faces.push(FaceDrift {
                axis,
                upper,
                min_normal_derivative: samples.iter().copied().fold(f64::INFINITY, f64::min),
                max_normal_derivative: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                violations,
                samples: samples.len(),
            });
        }
    }
    if !cps.iter().any(|c| c.kind == Kind::Minimum) {
        warnings.push("no nondegenerate local minimum found".into());
    }
    HypothesisReport {
        h1_lipschitz_estimate: lip,
        h2_ok: h2.is_empty(),
        h2_offenders: h2,
        h3_ok: h3.is_empty(),
        h3_offenders: h3,
        h4_ok,
        h4_convention: convention,
        h4_boundary_drift: faces,
        warnings,
    }
}

enum Shape {
    Min,
    Max,
    Neither,
}

// Sign pattern of F - F(x) on a small sphere around a degenerate critical point.
fn local_shape(model: &PotentialModel, cp: &CriticalPoint) -> Shape {
    let d = model.dim;
    let r = 1e-3 * model.domain.diameter();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    match d {
        1 => dirs.extend([vec![1.0], vec![-1.0]]),
        2 => {
            for k in 0..16 {
                let t = k as f64 * std::f64::consts::PI / 8.0;
                dirs.push(vec![t.cos(), t.sin()]);
            }
        }
        _ => {
            for p in model_grid_signs(d) {
                let n = norm(&p);
                dirs.push(p.iter().map(|v| v / n).collect());
            }
        }
    }
    let (mut above, mut below) = (false, false);
    for u in dirs {
        let y: Vec<f64> = cp.location.iter().zip(&u).map(|(a, b)| a + r * b).collect();
        let df = model.value(&y) - cp.value;
        if df > 0.0 {
            above = true;
        } else if df < 0.0 {
            below = true;
        }
    }
    match (above, below) {
        (true, false) => Shape::Min,
        (false, true) => Shape::Max,
        _ => Shape::Neither,
    }
}

fn model_grid_signs(d: usize) -> Vec<Vec<f64>> {
    let total = 3usize.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let k = idx % 3;
                    idx /= 3;
                    k as f64 - 1.0
                })
                .collect::<Vec<f64>>()
        })
        .filter(|v| v.iter().any(|&c| c != 0.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(src: &str, d: usize, lo: f64, hi: f64) -> PotentialModel {
        parse_potential("t", src, BoxDomain { lo: vec![lo; d], hi: vec![hi; d] }).unwrap()
    }

    #[test]
    fn evaluates_simple_quadratic() {
        let m = unit("x1^2 + 2*x2^2", 2, -2.0, 2.0);
        assert_eq!(m.value(&[1.0, 1.0]), 3.0);
        let h = m.hessian(&[0.3, -0.7]);
        assert_eq!(h.data, vec![2.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn out_of_range_variable_is_rejected() {
        let err = parse_potential("t", "x3", BoxDomain { lo: vec![0.0; 2], hi: vec![1.0; 2] }).unwrap_err();
        assert!(err.to_string().contains("outside dimension"), "{err}");
    }

    #[test]
    fn double_well_second_derivative_matches_differences() {
        let m = builtin("double_well").unwrap();
        let h = 1e-5;
        let fd = (m.value(&[h]) - 2.0 * m.value(&[0.0]) + m.value(&[-h])) / (h * h);
        assert!((fd - (-4.0)).abs() < 1e-4);
        assert_eq!(m.hessian(&[0.0]).data[0], -4.0);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let m = unit("3.5", 2, -1.0, 1.0);
        assert_eq!(m.gradient(&[0.2, 0.4]), vec![0.0, 0.0]);
    }

    #[test]
    fn file_format_round_trip() {
        let m = builtin("four_well").unwrap();
        let again = parse_potential_file("copy", &m.to_file_text()).unwrap();
        assert_eq!(again.expr, m.expr);
        assert_eq!(again.domain, m.domain);
        assert!(parse_potential_file("x", "dim = 1\nF = x1").is_err());
        assert!(parse_potential_file("x", "dim = 2\ndomain = [0,1]\nF = x1").is_err());
    }

    #[test]
    fn double_well_critical_points() {
        let m = builtin("double_well").unwrap();
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(1)).unwrap();
        let mut got: Vec<(f64, Kind)> = cps.iter().map(|c| (c.location[0], c.kind)).collect();
        got.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(got.len(), 3);
        assert!((got[0].0 + 1.0).abs() < 1e-9 && got[0].1 == Kind::Minimum);
        assert!(got[1].0.abs() < 1e-9 && got[1].1 == Kind::Saddle);
        assert!((got[2].0 - 1.0).abs() < 1e-9 && got[2].1 == Kind::Minimum);
    }

    #[test]
    fn four_well_critical_points() {
        let m = builtin("four_well").unwrap();
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(2)).unwrap();
        let count = |k| cps.iter().filter(|c| c.kind == k).count();
        assert_eq!((count(Kind::Minimum), count(Kind::Saddle), count(Kind::Maximum)), (4, 4, 1));
        for s in cps.iter().filter(|c| c.kind == Kind::Saddle) {
            assert!((s.mu() - 4.0).abs() < 1e-8 && (s.eigenvalues[1] - 8.0).abs() < 1e-8);
        }
    }

    #[test]
    fn convex_quadratic_has_single_minimum() {
        let m = unit("x1^2 + 2*x2^2", 2, -1.0, 1.0);
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(2)).unwrap();
        assert_eq!(cps.len(), 1);
        assert_eq!(cps[0].kind, Kind::Minimum);
    }

    #[test]
    fn hypotheses_on_double_well_pass() {
        let m = builtin("double_well").unwrap();
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(1)).unwrap();
        let rep = check_hypotheses(&m, &cps, DriftConvention::Inward);
        assert!(rep.all_ok(), "{rep:?}");
        let lit = check_hypotheses(&m, &cps, DriftConvention::Literal);
        assert!(!lit.h4_ok);
    }

    #[test]
    fn boundary_minimum_triggers_h4_warning() {
        let m = unit("(x1 - 1.5)^2", 1, -1.5, 1.5);
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(1)).unwrap();
        let rep = check_hypotheses(&m, &cps, DriftConvention::Inward);
        assert!(!rep.h4_ok);
        assert!(!rep.warnings.is_empty());
    }

    #[test]
    fn cubic_inflection_violates_h3() {
        let m = unit("x1^3", 1, -1.0, 1.0);
        let cps = find_critical_points(&m, &CriticalOptions::for_dim(1)).unwrap();
        assert!(cps.iter().any(|c| c.kind == Kind::Degenerate));
        let rep = check_hypotheses(&m, &cps, DriftConvention::Inward);
        assert!(!rep.h3_ok);
        assert!(rep.h2_ok);
    }
}
