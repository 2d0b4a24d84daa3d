//! Resilient-bound synthesis: the invariant-ellipsoid LMI for a fixed
//! contraction rate `a`, the grid search over `a`, and an independent
//! certificate check.
//!
//! Decision variables are the shape matrix `W`, the squared bounds
//! `rᵢ = γ̂ᵢ²`, and auxiliaries `tᵢ ≤ √rᵢ` (via `[[rᵢ, tᵢ], [tᵢ, 1]] ⪰ 0`)
//! whose sum is maximized, so the optimum equals `Σ γ̂ᵢ`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_sym_eigenvalue, spectral_radius};
use crate::model::DiscreteModel;
use crate::reachability::{
    check_separation, Bounds, Ellipsoid, InputStrategy, ReachSampler, UnsafeSet, ALL_STRATEGIES,
};
use crate::sdp::{self, LmiBlock, SdpOptions, SdpProblem, SdpStatus};

/// Lower bound `ε` in `W ⪰ εI`.
pub const W_EPSILON: f64 = 1e-8;
/// Stability margin for `ρ(A) < 1`.
pub const SCHUR_MARGIN: f64 = 1e-9;

/// How the `(1 − a)` budget of the dissipation inequality is split over
/// the bounded channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LmiWeighting {
    /// `(1 − a)/k` per channel, `k` = number of inputs plus one for the
    /// disturbance when `γ_ω > 0`. Certifies `V(k) ≤ 1`.
    #[default]
    Channels,
    /// `(1 − a)/m` on every input and on the disturbance. Only certifies
    /// `V(k) ≤ (m + 1)/m` when `γ_ω > 0`.
    PerInput,
}

impl LmiWeighting {
    pub fn divisor(self, m: usize, disturbance_bound: f64) -> f64 {
        match self {
            LmiWeighting::Channels if disturbance_bound > 0.0 => (m + 1) as f64,
            _ => m as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityCheck {
    pub spectral_radius: f64,
    pub stable: bool,
}

pub fn check_schur_stability(a: &DMatrix<f64>) -> Result<StabilityCheck> {
    let rho = spectral_radius(a)?;
    Ok(StabilityCheck {
        spectral_radius: rho,
        stable: rho < 1.0 - SCHUR_MARGIN,
    })
}

/// Evaluates the block matrix
///
/// ```text
/// [ aW      0           0            W Aᵀ   ]
/// [ 0       (1−a)/k R̂   0            R̂ Bᵀ   ]
/// [ 0       0           (1−a)/k γ²   γ² Hᵀ  ]
/// [ A W     B R̂         H γ²         W      ]
/// ```
///
/// with `R̂ = diag(r)` and `γ = γ_ω`. Size `n + m + 1 + n`.
pub fn assemble_lmi(
    model: &DiscreteModel,
    w: &DMatrix<f64>,
    r: &[f64],
    disturbance_bound: f64,
    a: f64,
    divisor: f64,
) -> Result<DMatrix<f64>> {
    let n = model.state_dim();
    let m = model.input_dim();
    if w.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "assemble_lmi",
            expected: format!("W of shape {n}x{n}"),
            got: format!("{}x{}", w.nrows(), w.ncols()),
        });
    }
    if r.len() != m {
        return Err(Error::DimensionMismatch {
            context: "assemble_lmi",
            expected: format!("{m} entries in r"),
            got: format!("{}", r.len()),
        });
    }
    let size = 2 * n + m + 1;
    let off = n + m + 1;
    let weight = (1.0 - a) / divisor;
    let g2 = disturbance_bound * disturbance_bound;
    let r_hat = DMatrix::from_diagonal(&DVector::from_row_slice(r));

    let mut out = DMatrix::zeros(size, size);
    out.view_mut((0, 0), (n, n)).copy_from(&(w * a));
    out.view_mut((n, n), (m, m)).copy_from(&(&r_hat * weight));
    out[(n + m, n + m)] = weight * g2;
    out.view_mut((off, off), (n, n)).copy_from(w);

    let wat = w * model.a.transpose();
    let rbt = &r_hat * model.b.transpose();
    let hgt = model.h.transpose() * g2;
    out.view_mut((0, off), (n, n)).copy_from(&wat);
    out.view_mut((n, off), (m, n)).copy_from(&rbt);
    out.view_mut((n + m, off), (1, n)).copy_from(&hgt);
    out.view_mut((off, 0), (n, n)).copy_from(&wat.transpose());
    out.view_mut((off, n), (n, m)).copy_from(&rbt.transpose());
    out.view_mut((off, n + m), (n, 1))
        .copy_from(&hgt.transpose());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub model: DiscreteModel,
    pub bounds: Bounds,
    pub unsafe_set: UnsafeSet,
    pub a_grid: Vec<f64>,
    pub weighting: LmiWeighting,
}

/// Default grid `{0.02, 0.04, …, 0.98}`.
pub fn default_a_grid() -> Vec<f64> {
    (1..=49).map(|i| i as f64 * 0.02).collect()
}

/// Parses `start:step:end` (inclusive end, within rounding).
pub fn parse_a_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [start, step, end] = parts.as_slice() else {
        return Err(Error::Config(format!(
            "a-grid `{spec}` must be start:step:end"
        )));
    };
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad number `{s}` in a-grid `{spec}`")))
    };
    let (start, step, end) = (parse(start)?, parse(step)?, parse(end)?);
    if step.is_nan() || step <= 0.0 || end < start {
        return Err(Error::Config(format!(
            "a-grid `{spec}` needs step > 0 and end >= start"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

impl SynthesisProblem {
    pub fn new(
        model: DiscreteModel,
        bounds: Bounds,
        unsafe_set: UnsafeSet,
        a_grid: Vec<f64>,
    ) -> Result<Self> {
        if a_grid.is_empty() {
            return Err(Error::param("a_grid", "must contain at least one value"));
        }
        if let Some(a) = a_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::param(
                "a_grid",
                format!("value {a} is outside (0, 1)"),
            ));
        }
        if bounds.len() != model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "synthesis bounds",
                expected: format!("{} input bounds", model.input_dim()),
                got: format!("{}", bounds.len()),
            });
        }
        bounds.require_positive()?;
        unsafe_set.check_dim(model.state_dim())?;
        let stab = check_schur_stability(&model.a)?;
        if !stab.stable {
            return Err(Error::Unstable(stab.spectral_radius));
        }
        Ok(Self {
            model,
            bounds,
            unsafe_set,
            a_grid,
            weighting: LmiWeighting::default(),
        })
    }

    pub fn with_weighting(mut self, weighting: LmiWeighting) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn divisor(&self) -> f64 {
        self.weighting
            .divisor(self.model.input_dim(), self.bounds.disturbance)
    }
}

/// Variable layout: upper triangle of `W` (row-major), then `r`, then `t`.
#[derive(Debug, Clone, Copy)]
struct VarLayout {
    n: usize,
    m: usize,
}

impl VarLayout {
    fn w(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }
    fn n_w(&self) -> usize {
        self.n * (self.n + 1) / 2
    }
    fn r(&self, i: usize) -> usize {
        self.n_w() + i
    }
    fn t(&self, i: usize) -> usize {
        self.n_w() + self.m + i
    }
    fn total(&self) -> usize {
        self.n_w() + 2 * self.m
    }
    fn unpack_w(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| x[self.w(i, j)])
    }
}

/// The invariance LMI as an affine block in `(W, r)`. The disturbance
/// row and column are dropped when `γ_ω = 0`, where they vanish.
fn invariance_block(
    model: &DiscreteModel,
    layout: VarLayout,
    disturbance_bound: f64,
    a: f64,
    divisor: f64,
) -> LmiBlock {
    let VarLayout { n, m } = layout;
    let has_w = disturbance_bound > 0.0;
    let k_w = usize::from(has_w);
    let off = n + m + k_w;
    let size = off + n;
    let weight = (1.0 - a) / divisor;
    let g2 = disturbance_bound * disturbance_bound;

    let mut constant = DMatrix::zeros(size, size);
    if has_w {
        constant[(n + m, n + m)] = weight * g2;
        for q in 0..n {
            constant[(n + m, off + q)] = g2 * model.h[(q, 0)];
            constant[(off + q, n + m)] = g2 * model.h[(q, 0)];
        }
    }
    let mut block = LmiBlock::new(constant);

    for i in 0..n {
        for j in i..n {
            let coeff = block.coeff_mut(layout.w(i, j));
            coeff.add(i, j, a);
            coeff.add(off + i, off + j, 1.0);
            // W Aᵀ: the (p, q) entry is Σ_l W[p, l] A[q, l].
            for q in 0..n {
                coeff.add(i, off + q, model.a[(q, j)]);
                if i != j {
                    coeff.add(j, off + q, model.a[(q, i)]);
                }
            }
        }
    }
    for i in 0..m {
        let coeff = block.coeff_mut(layout.r(i));
        coeff.add(n + i, n + i, weight);
        for q in 0..n {
            coeff.add(n + i, off + q, model.b[(q, i)]);
        }
    }
    block
}

fn build_sdp(problem: &SynthesisProblem, a: f64) -> (SdpProblem, VarLayout) {
    let model = &problem.model;
    let layout = VarLayout {
        n: model.state_dim(),
        m: model.input_dim(),
    };
    let VarLayout { n, m } = layout;
    let mut sdp = SdpProblem::new(layout.total());
    for i in 0..m {
        sdp.objective[layout.t(i)] = -1.0;
    }

    sdp.blocks.push(invariance_block(
        model,
        layout,
        problem.bounds.disturbance,
        a,
        problem.divisor(),
    ));

    let mut w_floor = LmiBlock::new(DMatrix::identity(n, n) * -W_EPSILON);
    for i in 0..n {
        for j in i..n {
            w_floor.coeff_mut(layout.w(i, j)).add(i, j, 1.0);
        }
    }
    sdp.blocks.push(w_floor);

    for (i, g) in problem.bounds.gamma.iter().enumerate() {
        sdp.blocks
            .push(LmiBlock::scalar(g * g, &[(layout.r(i), -1.0)]));
    }

    for h in problem.unsafe_set.halfspaces() {
        let mut terms = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = if i == j {
                    h.c[i] * h.c[i]
                } else {
                    2.0 * h.c[i] * h.c[j]
                };
                if v != 0.0 {
                    terms.push((layout.w(i, j), -v));
                }
            }
        }
        sdp.blocks.push(LmiBlock::scalar(h.g * h.g, &terms));
    }

    for i in 0..m {
        let mut blk = LmiBlock::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        blk.coeff_mut(layout.r(i)).add(0, 0, 1.0);
        blk.coeff_mut(layout.t(i)).add(0, 1, 1.0);
        sdp.blocks.push(blk);
        sdp.blocks
            .push(LmiBlock::scalar(0.0, &[(layout.t(i), 1.0)]));
    }
    (sdp, layout)
}

fn start_point(problem: &SynthesisProblem, layout: VarLayout) -> DVector<f64> {
    let mut x = DVector::zeros(layout.total());
    let w0 = problem
        .unsafe_set
        .halfspaces()
        .iter()
        .map(|h| h.g * h.g / h.c.norm_squared())
        .fold(1.0, f64::min)
        * 0.5;
    for i in 0..layout.n {
        x[layout.w(i, i)] = w0;
    }
    for (i, g) in problem.bounds.gamma.iter().enumerate() {
        x[layout.r(i)] = 1e-3 * g * g;
        x[layout.t(i)] = 1e-2 * g;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum GridStatus {
    Optimal { objective: f64 },
    Infeasible,
    NumericalFailure { message: String },
}

impl GridStatus {
    pub fn label(&self) -> String {
        match self {
            GridStatus::Optimal { .. } => "optimal".into(),
            GridStatus::Infeasible => "infeasible".into(),
            GridStatus::NumericalFailure { .. } => "numerical failure".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub a: f64,
    #[serde(flatten)]
    pub status: GridStatus,
}

/// Certificate for one value of `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedASolution {
    pub w: DMatrix<f64>,
    pub r: Vec<f64>,
    pub status: GridStatus,
}

pub fn solve_fixed_a(problem: &SynthesisProblem, a: f64) -> Result<FixedASolution> {
    solve_fixed_a_with(problem, a, &SdpOptions::default())
}

pub fn solve_fixed_a_with(
    problem: &SynthesisProblem,
    a: f64,
    opts: &SdpOptions,
) -> Result<FixedASolution> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::param("a", format!("must lie in (0, 1), got {a}")));
    }
    let (sdp_problem, layout) = build_sdp(problem, a);
    let start = start_point(problem, layout);
    let sol = sdp::solve(&sdp_problem, &start, opts);
    log::debug!(
        "a = {a}: {:?} after {} Newton steps, gap {:.2e}",
        sol.status,
        sol.newton_steps,
        sol.gap
    );
    let w = layout.unpack_w(&sol.x);
    let r: Vec<f64> = (0..layout.m).map(|i| sol.x[layout.r(i)]).collect();
    let status = match sol.status {
        SdpStatus::Optimal => GridStatus::Optimal {
            objective: r.iter().map(|v| v.max(0.0).sqrt()).sum(),
        },
        SdpStatus::Infeasible => GridStatus::Infeasible,
        SdpStatus::NumericalFailure(message) => GridStatus::NumericalFailure { message },
    };
    Ok(FixedASolution { w, r, status })
}

/// Synthesized resilient bounds with their certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResilientResult {
    pub w: DMatrix<f64>,
    pub gamma_hat: Vec<f64>,
    pub r: Vec<f64>,
    pub a: f64,
    pub objective: f64,
    pub weighting: LmiWeighting,
    pub per_a_status: Vec<GridPoint>,
}

impl ResilientResult {
    pub fn ellipsoid(&self) -> Result<Ellipsoid> {
        Ellipsoid::new(crate::linalg::symmetrize(&self.w))
    }

    pub fn to_file(&self) -> ResultFile {
        ResultFile {
            w: self
                .w
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            gamma_hat: self.gamma_hat.clone(),
            a: self.a,
            objective: self.objective,
            per_a_status: self.per_a_status.clone(),
            r: Some(self.r.clone()),
            weighting: Some(self.weighting),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ResultFile>(text)?.into_result()
    }
}

/// On-disk form of [`ResilientResult`]; `W` is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    #[serde(rename = "W")]
    pub w: Vec<Vec<f64>>,
    pub gamma_hat: Vec<f64>,
    pub a: f64,
    pub objective: f64,
    pub per_a_status: Vec<GridPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weighting: Option<LmiWeighting>,
}

impl ResultFile {
    pub fn into_result(self) -> Result<ResilientResult> {
        let n = self.w.len();
        if self.w.iter().any(|row| row.len() != n) {
            return Err(Error::Config("W must be a square row-major matrix".into()));
        }
        let w = DMatrix::from_fn(n, n, |i, j| self.w[i][j]);
        let r = self
            .r
            .unwrap_or_else(|| self.gamma_hat.iter().map(|g| g * g).collect());
        if r.len() != self.gamma_hat.len() {
            return Err(Error::Config("r and gamma_hat lengths differ".into()));
        }
        Ok(ResilientResult {
            w,
            gamma_hat: self.gamma_hat,
            r,
            a: self.a,
            objective: self.objective,
            weighting: self.weighting.unwrap_or_default(),
            per_a_status: self.per_a_status,
        })
    }
}

/// Grid search over `a`; keeps the certificate with the largest `Σ γ̂`
/// (ties go to the smaller `a`).
pub fn synthesize(problem: &SynthesisProblem) -> Result<ResilientResult> {
    synthesize_with(problem, &SdpOptions::default())
}

pub fn synthesize_with(problem: &SynthesisProblem, opts: &SdpOptions) -> Result<ResilientResult> {
    let solutions: Vec<(f64, FixedASolution)> = problem
        .a_grid
        .par_iter()
        .map(|&a| solve_fixed_a_with(problem, a, opts).map(|s| (a, s)))
        .collect::<Result<_>>()?;

    let per_a_status: Vec<GridPoint> = solutions
        .iter()
        .map(|(a, s)| GridPoint {
            a: *a,
            status: s.status.clone(),
        })
        .collect();

    let mut best: Option<(f64, f64, &FixedASolution)> = None;
    for (a, s) in &solutions {
        if let GridStatus::Optimal { objective } = s.status {
            let better = match best {
                None => true,
                Some((ba, bo, _)) => objective > bo || (objective == bo && *a < ba),
            };
            if better {
                best = Some((*a, objective, s));
            }
        }
    }
    let Some((a, objective, sol)) = best else {
        return Err(Error::Infeasible {
            statuses: per_a_status
                .iter()
                .map(|p| (p.a, p.status.label()))
                .collect(),
        });
    };
    let gamma_hat: Vec<f64> = sol.r.iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok(ResilientResult {
        w: crate::linalg::symmetrize(&sol.w),
        gamma_hat,
        r: sol.r.clone(),
        a,
        objective,
        weighting: problem.weighting,
        per_a_status,
    })
}

/// Re-check tolerances.
pub const LMI_TOL: f64 = 1e-7;
pub const BOUND_TOL: f64 = 1e-9;
pub const LEVEL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Signed amount by which the inequality is violated (≤ 0 means slack).
    pub residual: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub checks: Vec<CheckOutcome>,
    /// `V(0)` for a nonzero initial state, if one was given.
    pub initial_level: Option<f64>,
    pub max_level: f64,
}

impl CertificateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// `V(0) > 1`: invariance from this start is then only `V ≤ V(0)`.
    pub fn initial_level_exceeds_one(&self) -> bool {
        self.initial_level.is_some_and(|v| v > 1.0)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub trials: usize,
    pub horizon: usize,
    pub seed: u64,
    pub strategies: Vec<InputStrategy>,
    pub initial_state: Option<DVector<f64>>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            trials: 1000,
            horizon: 500,
            seed: 0,
            strategies: ALL_STRATEGIES.to_vec(),
            initial_state: None,
        }
    }
}

/// Solver-free re-check of a certificate.
pub fn verify_certificate(
    model: &DiscreteModel,
    result: &ResilientResult,
    unsafe_set: &UnsafeSet,
    bounds: &Bounds,
    opts: &VerifyOptions,
) -> Result<CertificateReport> {
    let n = model.state_dim();
    let m = model.input_dim();
    if result.w.shape() != (n, n) || result.r.len() != m || result.gamma_hat.len() != m {
        return Err(Error::DimensionMismatch {
            context: "certificate",
            expected: format!("W {n}x{n} and {m} bounds"),
            got: format!(
                "W {}x{} and {} bounds",
                result.w.nrows(),
                result.w.ncols(),
                result.r.len()
            ),
        });
    }
    unsafe_set.check_dim(n)?;
    let mut checks = Vec::new();

    let asym = (&result.w - result.w.transpose()).abs().max();
    let w_min = min_sym_eigenvalue(&result.w);
    checks.push(CheckOutcome {
        name: "W symmetric positive definite".into(),
        passed: asym <= 1e-9 * result.w.abs().max().max(1.0) && w_min > 0.0,
        residual: -w_min,
        detail: format!("min eigenvalue {w_min:.3e}, asymmetry {asym:.1e}"),
    });

    let divisor = result.weighting.divisor(m, bounds.disturbance);
    let lmi = assemble_lmi(
        model,
        &result.w,
        &result.r,
        bounds.disturbance,
        result.a,
        divisor,
    )?;
    let lmi_min = min_sym_eigenvalue(&lmi);
    checks.push(CheckOutcome {
        name: "invariance LMI positive semidefinite".into(),
        passed: lmi_min >= -LMI_TOL,
        residual: -lmi_min,
        detail: format!("min eigenvalue {lmi_min:.3e} at a = {}", result.a),
    });

    let sym_w = crate::linalg::symmetrize(&result.w);
    let margins: Vec<f64> = unsafe_set
        .halfspaces()
        .iter()
        .map(|h| (h.c.transpose() * &sym_w * &h.c)[(0, 0)] - h.g * h.g)
        .collect();
    let (worst_j, worst_margin) =
        margins
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
            );
    checks.push(CheckOutcome {
        name: "ellipsoid separated from unsafe set".into(),
        passed: worst_margin <= BOUND_TOL,
        residual: worst_margin,
        detail: format!("max c_jᵀWc_j − g_j² = {worst_margin:.3e} (half-space {worst_j})"),
    });

    let bound_excess = result
        .r
        .iter()
        .zip(&bounds.gamma)
        .map(|(r, g)| r - g * g)
        .fold(f64::NEG_INFINITY, f64::max);
    let gamma_ok = result.gamma_hat.iter().all(|g| *g > 0.0);
    checks.push(CheckOutcome {
        name: "resilient bounds within physical bounds".into(),
        passed: bound_excess <= BOUND_TOL && gamma_ok,
        residual: bound_excess,
        detail: format!("max r_i − γ_i² = {bound_excess:.3e}"),
    });

    let (level_check, max_level, initial_level) = match result.ellipsoid() {
        Ok(ell) => {
            let resilient = bounds.with_gamma(result.gamma_hat.clone())?;
            let sampler =
                ReachSampler::new(model, &resilient, opts.horizon, opts.trials, opts.seed)
                    .with_strategies(&opts.strategies);
            let max_level = sampler.max_of(|x| ell.level(x).unwrap_or(f64::INFINITY))?;
            let initial = match &opts.initial_state {
                Some(x0) => Some(ell.level(x0)?),
                None => None,
            };
            (
                CheckOutcome {
                    name: "Lyapunov level along sampled trajectories".into(),
                    passed: max_level <= 1.0 + LEVEL_TOL,
                    residual: max_level - 1.0,
                    detail: format!(
                        "max V(k) = {max_level:.9} over {} trajectories of {} steps",
                        opts.trials, opts.horizon
                    ),
                },
                max_level,
                initial,
            )
        }
        Err(e) => (
            CheckOutcome {
                name: "Lyapunov level along sampled trajectories".into(),
                passed: false,
                residual: f64::INFINITY,
                detail: format!("W is not a valid ellipsoid: {e}"),
            },
            f64::INFINITY,
            None,
        ),
    };
    checks.push(level_check);

    Ok(CertificateReport {
        checks,
        initial_level,
        max_level,
    })
}

/// Independent separation report for a certificate; used by reporting.
pub fn separation_margins(result: &ResilientResult, unsafe_set: &UnsafeSet) -> Result<Vec<f64>> {
    Ok(check_separation(&result.ellipsoid()?, unsafe_set).margins)
}
