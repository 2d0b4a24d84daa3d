//! Small dense semidefinite-program solver.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  F₀ᵏ + Σᵢ xᵢ Fᵢᵏ ⪰ 0   for every block k
//! ```
//!
//! Scalar linear inequalities are 1×1 blocks. The solver follows the central
//! path of the log-det barrier with damped Newton steps, after a phase-I
//! problem that finds a strictly feasible start. Every iterate is strictly
//! feasible, so a returned point satisfies all blocks with positive slack.

use nalgebra::{DMatrix, DVector};

/// `(row, col, value)` of a sparse matrix.
type Entry = (usize, usize, f64);

/// Symmetric sparse matrix stored by its upper-triangular entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseSym {
    entries: Vec<(usize, usize, f64)>,
}

impl SparseSym {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `v` at `(r, c)` and, off the diagonal, at `(c, r)`.
    pub fn add(&mut self, r: usize, c: usize, v: f64) {
        if v == 0.0 {
            return;
        }
        let (r, c) = if r <= c { (r, c) } else { (c, r) };
        match self.entries.iter_mut().find(|(a, b, _)| *a == r && *b == c) {
            Some(e) => e.2 += v,
            None => self.entries.push((r, c, v)),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Both triangles, one entry per stored position.
    fn full_entries(&self) -> Vec<Entry> {
        let mut out = Vec::with_capacity(2 * self.entries.len());
        for &(r, c, v) in &self.entries {
            out.push((r, c, v));
            if r != c {
                out.push((c, r, v));
            }
        }
        out
    }

    pub fn add_to(&self, target: &mut DMatrix<f64>, scale: f64) {
        for &(r, c, v) in &self.entries {
            target[(r, c)] += scale * v;
            if r != c {
                target[(c, r)] += scale * v;
            }
        }
    }
}

/// One affine symmetric matrix inequality `F₀ + Σ xᵢ Fᵢ ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiBlock {
    pub constant: DMatrix<f64>,
    pub coeffs: Vec<(usize, SparseSym)>,
}

impl LmiBlock {
    pub fn new(constant: DMatrix<f64>) -> Self {
        assert!(constant.is_square(), "LMI constant must be square");
        Self {
            constant,
            coeffs: Vec::new(),
        }
    }

    /// Scalar inequality `constant + Σ coefᵢ xᵢ ≥ 0`.
    pub fn scalar(constant: f64, terms: &[(usize, f64)]) -> Self {
        let mut b = Self::new(DMatrix::from_element(1, 1, constant));
        for &(var, coef) in terms {
            b.coeff_mut(var).add(0, 0, coef);
        }
        b
    }

    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// Coefficient matrix of variable `var`, created on first use.
    pub fn coeff_mut(&mut self, var: usize) -> &mut SparseSym {
        let pos = match self.coeffs.iter().position(|(v, _)| *v == var) {
            Some(p) => p,
            None => {
                self.coeffs.push((var, SparseSym::new()));
                self.coeffs.len() - 1
            }
        };
        &mut self.coeffs[pos].1
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut f = self.constant.clone();
        for (var, coef) in &self.coeffs {
            coef.add_to(&mut f, x[*var]);
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    pub num_vars: usize,
    /// Minimized linear objective.
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl SdpProblem {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: DVector::zeros(num_vars),
            blocks: Vec::new(),
        }
    }

    fn barrier_degree(&self) -> f64 {
        self.blocks.iter().map(|b| b.size()).sum::<usize>() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpOptions {
    /// Stop once the barrier duality-gap bound drops below this.
    pub gap_tol: f64,
    /// Barrier parameter growth per outer iteration.
    pub mu: f64,
    pub max_newton_steps: usize,
    /// Box `|xᵢ| ≤ bound` added to both phases so the analytic centre exists.
    pub variable_bound: Option<f64>,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            gap_tol: 1e-9,
            mu: 12.0,
            max_newton_steps: 2000,
            variable_bound: Some(100.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    /// Upper bound on `objective − optimum` at termination.
    pub gap: f64,
    pub newton_steps: usize,
}

struct Centering {
    x: DVector<f64>,
    steps: usize,
}

enum CenterError {
    Numerical(String),
    StepBudget,
}

/// Cholesky factors of every block, or `None` if any block is not PD.
fn factor_blocks(
    blocks: &[LmiBlock],
    x: &DVector<f64>,
) -> Option<Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>> {
    blocks
        .iter()
        .map(|b| b.evaluate(x).cholesky())
        .collect::<Option<Vec<_>>>()
}

/// `Σ log det Fₖ(x)`, or `None` outside the interior.
fn log_det_sum(blocks: &[LmiBlock], x: &DVector<f64>) -> Option<f64> {
    let factors = factor_blocks(blocks, x)?;
    let mut logdet = 0.0;
    for f in &factors {
        logdet += 2.0 * f.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    }
    logdet.is_finite().then_some(logdet)
}

/// Gradient and Hessian of `t·cᵀx − Σ log det Fₖ(x)`.
fn derivatives(
    t: f64,
    c: &DVector<f64>,
    blocks: &[LmiBlock],
    x: &DVector<f64>,
) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let p = x.len();
    let mut grad = c * t;
    let mut hess = DMatrix::<f64>::zeros(p, p);
    for block in blocks {
        let chol = block.evaluate(x).cholesky()?;
        let z = chol.inverse();
        let k = block.size();
        let full: Vec<(usize, Vec<Entry>)> = block
            .coeffs
            .iter()
            .filter(|(_, s)| !s.is_empty())
            .map(|(v, s)| (*v, s.full_entries()))
            .collect();
        // S_i = Z F_i Z
        let mut s_mats = Vec::with_capacity(full.len());
        for (var, entries) in &full {
            let mut zf = DMatrix::<f64>::zeros(k, k);
            let mut tr = 0.0;
            for &(a, b, v) in entries {
                // (Z F)[:, b] += v Z[:, a]
                let col = z.column(a) * v;
                let mut target = zf.column_mut(b);
                target += col;
                tr += v * z[(b, a)];
            }
            grad[*var] -= tr;
            s_mats.push(&zf * &z);
        }
        for (ii, (vi, _)) in full.iter().enumerate() {
            let s = &s_mats[ii];
            for (vj, entries_j) in full.iter().skip(ii) {
                let mut acc = 0.0;
                for &(cc, d, w) in entries_j {
                    acc += w * s[(d, cc)];
                }
                hess[(*vi, *vj)] += acc;
                if vi != vj {
                    hess[(*vj, *vi)] += acc;
                }
            }
        }
    }
    Some((grad, hess))
}

/// Solves `H d = −g` after symmetric Jacobi scaling of `H`.
fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
    let p = grad.len();
    let scale = DVector::from_iterator(
        p,
        hess.diagonal()
            .iter()
            .map(|d| if *d > 0.0 { 1.0 / d.sqrt() } else { 1.0 }),
    );
    let scaled = DMatrix::from_fn(p, p, |i, j| hess[(i, j)] * scale[i] * scale[j]);
    let rhs = -grad.component_mul(&scale);
    let solve = |m: DMatrix<f64>| m.cholesky().map(|ch| ch.solve(&rhs));
    let y = solve(scaled.clone()).or_else(|| {
        let mut eps = 1e-14;
        for _ in 0..8 {
            let mut reg = scaled.clone();
            for i in 0..p {
                reg[(i, i)] += eps;
            }
            if let Some(y) = solve(reg) {
                return Some(y);
            }
            eps *= 100.0;
        }
        scaled.clone().lu().solve(&rhs)
    })?;
    Some(y.component_mul(&scale))
}

fn center(
    t: f64,
    c: &DVector<f64>,
    blocks: &[LmiBlock],
    mut x: DVector<f64>,
    budget: usize,
) -> Result<Centering, CenterError> {
    let mut steps = 0;
    let mut stalled = 0;
    let mut logdet = log_det_sum(blocks, &x)
        .ok_or_else(|| CenterError::Numerical("start point is not strictly feasible".into()))?;
    loop {
        if steps >= budget {
            return Err(CenterError::StepBudget);
        }
        let (grad, hess) = derivatives(t, c, blocks, &x)
            .ok_or_else(|| CenterError::Numerical("lost strict feasibility".into()))?;
        let dir = newton_direction(&grad, &hess)
            .ok_or_else(|| CenterError::Numerical("singular Newton system".into()))?;
        let slope = grad.dot(&dir);
        let decrement = -slope;
        steps += 1;
        if !(decrement.is_finite()) {
            return Err(CenterError::Numerical("non-finite Newton decrement".into()));
        }
        if decrement <= 1e-8 {
            return Ok(Centering { x, steps });
        }
        // Barrier change measured as a difference so that the large linear
        // term does not swamp it at high t.
        let lin = t * c.dot(&dir);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-10 {
            let trial = &x + &dir * alpha;
            if let Some(ld) = log_det_sum(blocks, &trial) {
                let change = alpha * lin - (ld - logdet);
                if change <= 0.25 * alpha * slope {
                    x = trial;
                    logdet = ld;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        log::trace!("t = {t:.3e} decrement {decrement:.3e} alpha {alpha:.3e}");
        if !accepted || alpha < 1e-6 {
            // Rounding floor reached: the point is as centred as double
            // precision allows.
            if decrement < 1e-5 {
                return Ok(Centering { x, steps });
            }
            stalled += 1;
            if !accepted || stalled > 20 {
                return Err(CenterError::Numerical("line search stalled".into()));
            }
        } else {
            stalled = 0;
        }
    }
}

fn with_box(problem: &SdpProblem, bound: Option<f64>) -> Vec<LmiBlock> {
    let mut blocks = problem.blocks.clone();
    if let Some(r) = bound {
        for i in 0..problem.num_vars {
            blocks.push(LmiBlock::scalar(r, &[(i, -1.0)]));
            blocks.push(LmiBlock::scalar(r, &[(i, 1.0)]));
        }
    }
    blocks
}

fn min_block_eigenvalue(blocks: &[LmiBlock], x: &DVector<f64>) -> f64 {
    blocks
        .iter()
        .map(|b| crate::linalg::min_sym_eigenvalue(&b.evaluate(x)))
        .fold(f64::INFINITY, f64::min)
}

/// Finds a strictly feasible point, starting the search from `start`.
fn phase_one(
    blocks: &[LmiBlock],
    start: &DVector<f64>,
    opts: &SdpOptions,
    steps: &mut usize,
) -> Result<DVector<f64>, SdpStatus> {
    let p = start.len();
    if min_block_eigenvalue(blocks, start) > 0.0 && factor_blocks(blocks, start).is_some() {
        return Ok(start.clone());
    }
    // Variables (x, s); blocks Fₖ(x) + s I ⪰ 0; minimize s.
    let s_var = p;
    let mut aux: Vec<LmiBlock> = blocks
        .iter()
        .map(|b| {
            let mut nb = b.clone();
            let coeff = nb.coeff_mut(s_var);
            for i in 0..b.size() {
                coeff.add(i, i, 1.0);
            }
            nb
        })
        .collect();
    // Keep s bounded below when the box is absent.
    aux.push(LmiBlock::scalar(1.0, &[(s_var, 1.0)]));
    let mut c = DVector::zeros(p + 1);
    c[s_var] = 1.0;
    let degree: f64 = aux.iter().map(|b| b.size()).sum::<usize>() as f64;

    let s0 = (-min_block_eigenvalue(blocks, start)).max(0.0) + 1.0;
    let mut x = start.clone().insert_row(p, s0);
    // s + 1 ≥ 0 must hold strictly at the start.
    if x[s_var] <= -1.0 {
        x[s_var] = 0.0;
    }
    let mut t = 1.0;
    loop {
        let budget = opts.max_newton_steps.saturating_sub(*steps);
        let centred = match center(t, &c, &aux, x.clone(), budget) {
            Ok(cn) => cn,
            Err(CenterError::StepBudget) => {
                return Err(SdpStatus::NumericalFailure(
                    "phase I step budget exhausted".into(),
                ))
            }
            Err(CenterError::Numerical(msg)) => {
                return Err(SdpStatus::NumericalFailure(format!("phase I: {msg}")))
            }
        };
        *steps += centred.steps;
        x = centred.x;
        let s = x[s_var];
        if s < 0.0 {
            let candidate = x.rows(0, p).into_owned();
            if factor_blocks(blocks, &candidate).is_some() {
                return Ok(candidate);
            }
        }
        let gap = degree / t;
        if s - gap > 0.0 {
            return Err(SdpStatus::Infeasible);
        }
        if gap < opts.gap_tol {
            return Err(SdpStatus::Infeasible);
        }
        t *= opts.mu;
    }
}

/// Solves `problem` starting the feasibility search from `start`.
pub fn solve(problem: &SdpProblem, start: &DVector<f64>, opts: &SdpOptions) -> SdpSolution {
    assert_eq!(
        start.len(),
        problem.num_vars,
        "start point has wrong length"
    );
    let blocks = with_box(problem, opts.variable_bound);
    let degree = problem.barrier_degree()
        + opts
            .variable_bound
            .map_or(0.0, |_| 2.0 * problem.num_vars as f64);
    let c = &problem.objective;
    let mut steps = 0;

    let failure = |status: SdpStatus, x: DVector<f64>, steps: usize| SdpSolution {
        objective: c.dot(&x),
        status,
        x,
        gap: f64::INFINITY,
        newton_steps: steps,
    };

    let mut x = match phase_one(&blocks, start, opts, &mut steps) {
        Ok(x) => x,
        Err(status) => return failure(status, start.clone(), steps),
    };

    let mut t = 1.0;
    loop {
        let budget = opts.max_newton_steps.saturating_sub(steps);
        match center(t, c, &blocks, x.clone(), budget) {
            Ok(cn) => {
                steps += cn.steps;
                x = cn.x;
            }
            Err(err) => {
                let gap = degree / t * opts.mu;
                // The last centred point is feasible; accept it when its
                // gap is already small.
                let status = if gap < 1e-6 {
                    SdpStatus::Optimal
                } else {
                    SdpStatus::NumericalFailure(match err {
                        CenterError::StepBudget => "Newton step budget exhausted".into(),
                        CenterError::Numerical(msg) => msg,
                    })
                };
                return SdpSolution {
                    objective: c.dot(&x),
                    status,
                    x,
                    gap,
                    newton_steps: steps,
                };
            }
        }
        let gap = degree / t;
        if gap < opts.gap_tol {
            return SdpSolution {
                objective: c.dot(&x),
                status: SdpStatus::Optimal,
                x,
                gap,
                newton_steps: steps,
            };
        }
        t *= opts.mu;
    }
}
