//! Ellipsoid geometry, unsafe half-spaces and an empirical reachable-set
//! sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse_quadratic_form, min_sym_eigenvalue};
use crate::model::DiscreteModel;

/// Membership slack for `xᵀW⁻¹x ≤ 1`.
pub const CONTAINS_TOL: f64 = 1e-9;
/// Slack on `cᵀWc − g² ≤ 0`.
pub const SEPARATION_TOL: f64 = 1e-9;

/// Origin-centred ellipsoid `{x : xᵀ W⁻¹ x ≤ 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    w: DMatrix<f64>,
}

impl Ellipsoid {
    pub fn new(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::NotSquare {
                rows: w.nrows(),
                cols: w.ncols(),
            });
        }
        let scale = w.abs().max().max(1.0);
        if (&w - w.transpose()).abs().max() > 1e-9 * scale {
            return Err(Error::param("W", "shape matrix must be symmetric"));
        }
        if min_sym_eigenvalue(&w) <= 0.0 {
            return Err(Error::NotPositiveDefinite("ellipsoid shape matrix"));
        }
        Ok(Self { w })
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    /// `xᵀ W⁻¹ x`, the Lyapunov level of `x`.
    pub fn level(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "ellipsoid membership",
                expected: format!("{}-vector", self.dim()),
                got: format!("{}-vector", x.len()),
            });
        }
        inverse_quadratic_form(&self.w, x)
    }

    pub fn contains(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.level(x)? <= 1.0 + CONTAINS_TOL)
    }

    /// Support value `sqrt(cᵀ W c) = max {cᵀx : x ∈ E}`.
    pub fn support(&self, c: &DVector<f64>) -> f64 {
        (c.transpose() * &self.w * c)[(0, 0)].max(0.0).sqrt()
    }
}

/// Unsafe half-space `{x : cᵀx ≥ g}`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    pub c: DVector<f64>,
    pub g: f64,
}

impl HalfSpace {
    pub fn new(c: DVector<f64>, g: f64) -> Result<Self> {
        if c.norm() <= 0.0 || c.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(
                "c",
                "normal vector must be finite and nonzero",
            ));
        }
        if !g.is_finite() {
            return Err(Error::param("g", "offset must be finite"));
        }
        Ok(Self { c, g })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsafeSet {
    halfspaces: Vec<HalfSpace>,
}

impl UnsafeSet {
    pub fn new(halfspaces: Vec<HalfSpace>) -> Result<Self> {
        let Some(first) = halfspaces.first() else {
            return Err(Error::param(
                "unsafe",
                "at least one half-space is required",
            ));
        };
        let n = first.dim();
        if let Some(bad) = halfspaces.iter().find(|h| h.dim() != n) {
            return Err(Error::DimensionMismatch {
                context: "unsafe set",
                expected: format!("normals of length {n}"),
                got: format!("length {}", bad.dim()),
            });
        }
        for h in &halfspaces {
            HalfSpace::new(h.c.clone(), h.g)?;
        }
        Ok(Self { halfspaces })
    }

    /// `|Δf| ≥ limit` as the two half-spaces `±e₁ᵀx ≥ limit`.
    pub fn frequency_limit(n: usize, limit: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("unsafe", "state dimension must be positive"));
        }
        let mut up = DVector::zeros(n);
        up[0] = 1.0;
        let down = -&up;
        Self::new(vec![
            HalfSpace::new(up, limit)?,
            HalfSpace::new(down, limit)?,
        ])
    }

    pub fn halfspaces(&self) -> &[HalfSpace] {
        &self.halfspaces
    }

    pub fn dim(&self) -> usize {
        self.halfspaces[0].dim()
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::DimensionMismatch {
                context: "unsafe set",
                expected: format!("normals of length {n}"),
                got: format!("length {}", self.dim()),
            });
        }
        Ok(())
    }
}

/// Declarative unsafe-set forms accepted in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UnsafeDecl {
    FrequencyLimit { frequency_limit: f64 },
    Halfspaces { halfspaces: Vec<HalfSpaceDecl> },
    List(Vec<HalfSpaceDecl>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpaceDecl {
    pub c: Vec<f64>,
    pub g: f64,
}

impl UnsafeDecl {
    /// Parses either a `frequency_limit:<value>` shorthand or JSON text.
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if let Some(rest) = trimmed.strip_prefix("frequency_limit") {
            let value = rest.trim_start_matches([':', '=', ' ']).trim();
            let limit: f64 = value
                .parse()
                .map_err(|_| Error::Config(format!("bad frequency_limit shorthand `{text}`")))?;
            return Ok(UnsafeDecl::FrequencyLimit {
                frequency_limit: limit,
            });
        }
        Ok(serde_json::from_str(trimmed)?)
    }

    pub fn resolve(&self, n: usize) -> Result<UnsafeSet> {
        let set = match self {
            UnsafeDecl::FrequencyLimit { frequency_limit } => {
                UnsafeSet::frequency_limit(n, *frequency_limit)?
            }
            UnsafeDecl::Halfspaces { halfspaces } | UnsafeDecl::List(halfspaces) => UnsafeSet::new(
                halfspaces
                    .iter()
                    .map(|h| HalfSpace::new(DVector::from_vec(h.c.clone()), h.g))
                    .collect::<Result<_>>()?,
            )?,
        };
        set.check_dim(n)?;
        Ok(set)
    }
}

/// Per-input setpoint bounds `γ` and the disturbance bound `γ_ω`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub gamma: Vec<f64>,
    pub disturbance: f64,
}

impl Bounds {
    /// Entries must be finite and nonnegative; synthesis additionally
    /// requires strictly positive `γ`.
    pub fn new(gamma: Vec<f64>, disturbance: f64) -> Result<Self> {
        for (i, g) in gamma.iter().enumerate() {
            if !(g.is_finite() && *g >= 0.0) {
                return Err(Error::param(
                    format!("gamma[{i}]"),
                    format!("must be >= 0, got {g}"),
                ));
            }
        }
        if !(disturbance.is_finite() && disturbance >= 0.0) {
            return Err(Error::param(
                "disturbance_bound",
                format!("must be >= 0, got {disturbance}"),
            ));
        }
        Ok(Self { gamma, disturbance })
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn require_positive(&self) -> Result<()> {
        match self.gamma.iter().position(|g| *g <= 0.0) {
            Some(i) => Err(Error::param(
                format!("gamma[{i}]"),
                "must be strictly positive",
            )),
            None => Ok(()),
        }
    }

    pub fn with_gamma(&self, gamma: Vec<f64>) -> Result<Self> {
        Self::new(gamma, self.disturbance)
    }
}

/// `(|g| − sqrt(cᵀWc)) / ‖c‖₂`; positive means strictly separated.
pub fn hyperplane_distance(e: &Ellipsoid, h: &HalfSpace) -> f64 {
    (h.g.abs() - e.support(&h.c)) / h.c.norm()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationReport {
    /// `cᵢᵀ W cᵢ − gᵢ²` per half-space; nonpositive is safe.
    pub margins: Vec<f64>,
    pub safe: bool,
}

pub fn check_separation(e: &Ellipsoid, d: &UnsafeSet) -> SeparationReport {
    let margins: Vec<f64> = d
        .halfspaces()
        .iter()
        .map(|h| (h.c.transpose() * e.shape() * &h.c)[(0, 0)] - h.g * h.g)
        .collect();
    let safe = margins.iter().all(|m| *m <= SEPARATION_TOL);
    SeparationReport { margins, safe }
}

/// How each sampled trajectory draws its inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputStrategy {
    /// Uniform in `[−γᵢ, γᵢ]` every step.
    Uniform,
    /// Random sign times `γᵢ` every step.
    BangBang,
    /// One random sign per channel held for the whole trajectory.
    ConstantExtreme,
}

pub const ALL_STRATEGIES: [InputStrategy; 3] = [
    InputStrategy::Uniform,
    InputStrategy::BangBang,
    InputStrategy::ConstantExtreme,
];

/// Seed-derived stream for one trial; independent of scheduling.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws a value in `[−1, 1]` per `strategy`. `held` carries the sign for
/// the constant strategy.
fn unit_draw(rng: &mut ChaCha8Rng, strategy: InputStrategy, held: f64) -> f64 {
    match strategy {
        InputStrategy::Uniform => rng.random_range(-1.0..=1.0),
        InputStrategy::BangBang => {
            if rng.random_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        }
        InputStrategy::ConstantExtreme => held,
    }
}

/// Monte Carlo exploration of the bounded-input reachable set from the
/// origin. Trial `i` uses `strategies[i % strategies.len()]`.
#[derive(Debug, Clone)]
pub struct ReachSampler<'a> {
    pub model: &'a DiscreteModel,
    pub bounds: &'a Bounds,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub strategies: Vec<InputStrategy>,
}

impl<'a> ReachSampler<'a> {
    pub fn new(
        model: &'a DiscreteModel,
        bounds: &'a Bounds,
        horizon: usize,
        trials: usize,
        seed: u64,
    ) -> Self {
        Self {
            model,
            bounds,
            horizon,
            trials,
            seed,
            strategies: ALL_STRATEGIES.to_vec(),
        }
    }

    pub fn with_strategies(mut self, strategies: &[InputStrategy]) -> Self {
        self.strategies = strategies.to_vec();
        self
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::param("sampler", "horizon and trials must be >= 1"));
        }
        if self.strategies.is_empty() {
            return Err(Error::param(
                "sampler",
                "at least one input strategy is required",
            ));
        }
        if self.bounds.len() != self.model.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "reachable-set sampling",
                expected: format!("{} input bounds", self.model.input_dim()),
                got: format!("{}", self.bounds.len()),
            });
        }
        Ok(())
    }

    /// Runs one trial, handing each visited state (after the origin) to `visit`.
    pub fn run_trial(&self, trial: usize, mut visit: impl FnMut(&DVector<f64>)) {
        let m = self.model.input_dim();
        let strategy = self.strategies[trial % self.strategies.len()];
        let mut rng = trial_rng(self.seed, trial as u64);
        let mut held = vec![0.0; m + 1];
        for h in held.iter_mut() {
            *h = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
        let h_col = self.model.h.column(0);
        let mut x = DVector::zeros(self.model.state_dim());
        let mut u = DVector::zeros(m);
        for _ in 0..self.horizon {
            for i in 0..m {
                u[i] = self.bounds.gamma[i] * unit_draw(&mut rng, strategy, held[i]);
            }
            let w = self.bounds.disturbance * unit_draw(&mut rng, strategy, held[m]);
            x = &self.model.a * &x + &self.model.b * &u + h_col * w;
            visit(&x);
        }
    }

    /// Every visited state, trial-major.
    pub fn states(&self) -> Result<Vec<DVector<f64>>> {
        self.validate()?;
        let per_trial: Vec<Vec<DVector<f64>>> = (0..self.trials)
            .into_par_iter()
            .map(|t| {
                let mut out = Vec::with_capacity(self.horizon);
                self.run_trial(t, |x| out.push(x.clone()));
                out
            })
            .collect();
        Ok(per_trial.into_iter().flatten().collect())
    }

    /// Maximum of `f` over every visited state, without storing them.
    pub fn max_of<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&DVector<f64>) -> f64 + Sync,
    {
        self.validate()?;
        let per_trial: Vec<f64> = (0..self.trials)
            .into_par_iter()
            .map(|t| {
                let mut best = f64::NEG_INFINITY;
                self.run_trial(t, |x| best = best.max(f(x)));
                best
            })
            .collect();
        Ok(per_trial.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }
}

/// Convenience wrapper returning every visited state with all strategies mixed.
pub fn sample_reachable(
    model: &DiscreteModel,
    bounds: &Bounds,
    horizon: usize,
    trials: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    ReachSampler::new(model, bounds, horizon, trials, seed).states()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn e1(n: usize) -> DVector<f64> {
        let mut c = DVector::zeros(n);
        c[0] = 1.0;
        c
    }

    #[test]
    fn distance_diagonal() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2) * 0.01).unwrap();
        let h = HalfSpace::new(e1(2), 0.2).unwrap();
        assert_relative_eq!(hyperplane_distance(&e, &h), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn distance_tangent_is_zero() {
        let e = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[0.04, 0.01, 0.01, 0.09])).unwrap();
        let h = HalfSpace::new(e1(2), 0.2).unwrap();
        assert!(hyperplane_distance(&e, &h).abs() < 1e-15);
    }

    #[test]
    fn distance_non_unit_normal() {
        let e = Ellipsoid::new(DMatrix::identity(2, 2)).unwrap();
        let h = HalfSpace::new(DVector::from_vec(vec![3.0, 4.0]), 10.0).unwrap();
        assert_relative_eq!(hyperplane_distance(&e, &h), 1.0, epsilon = 1e-15);
    }

    fn w_with_w11(w11: f64) -> Ellipsoid {
        let mut w = DMatrix::identity(7, 7) * 0.5;
        w[(0, 0)] = w11;
        Ellipsoid::new(w).unwrap()
    }

    #[test]
    fn separation_cases() {
        let d = UnsafeSet::frequency_limit(7, 0.2).unwrap();
        let r = check_separation(&w_with_w11(0.03), &d);
        assert!(r.safe);
        assert_relative_eq!(r.margins[0], -0.01, epsilon = 1e-15);

        assert!(check_separation(&w_with_w11(0.04), &d).safe);

        let r = check_separation(&w_with_w11(0.05), &d);
        assert!(!r.safe);
        assert_relative_eq!(r.margins[0], 0.01, epsilon = 1e-15);
        assert_relative_eq!(r.margins[1], 0.01, epsilon = 1e-15);
    }

    #[test]
    fn containment() {
        let e = Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap();
        assert!(e.contains(&DVector::zeros(2)).unwrap());
        // boundary point along direction d: x = d / sqrt(dᵀW⁻¹d)
        let d = DVector::from_vec(vec![1.0, -2.0]);
        let x = &d / e.level(&d).unwrap().sqrt();
        assert!(e.contains(&x).unwrap());
        assert!(!e.contains(&(x * 2.0)).unwrap());
        assert!(e.contains(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn ellipsoid_rejects_bad_shape() {
        assert!(Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])).is_err());
        assert!(Ellipsoid::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(HalfSpace::new(DVector::zeros(2), 1.0).is_err());
        assert!(UnsafeSet::new(vec![]).is_err());
    }

    #[test]
    fn unsafe_decl_forms() {
        let a = UnsafeDecl::parse("frequency_limit:0.2")
            .unwrap()
            .resolve(7)
            .unwrap();
        let b = UnsafeDecl::parse(r#"{"frequency_limit": 0.2}"#)
            .unwrap()
            .resolve(7)
            .unwrap();
        assert_eq!(a, b);
        let c = UnsafeDecl::parse(r#"[{"c":[1,0],"g":0.2},{"c":[-1,0],"g":0.2}]"#)
            .unwrap()
            .resolve(2)
            .unwrap();
        assert_eq!(c, UnsafeSet::frequency_limit(2, 0.2).unwrap());
        let d = UnsafeDecl::parse(r#"{"halfspaces":[{"c":[0,1],"g":1}]}"#).unwrap();
        assert!(d.resolve(3).is_err());
        assert!(d.resolve(2).is_ok());
    }

    fn scalar_model() -> DiscreteModel {
        DiscreteModel::new(
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::from_element(1, 1, 0.5),
            DMatrix::zeros(1, 1),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_bounds_stay_at_origin() {
        let (_, d) =
            crate::model::build_discrete(&crate::model::ModelConfig::case_study()).unwrap();
        let b = Bounds::new(vec![0.0; 4], 0.0).unwrap();
        let states = sample_reachable(&d, &b, 20, 9, 3).unwrap();
        assert_eq!(states.len(), 180);
        assert!(states.iter().all(|x| x.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_bang_bang_step() {
        let m = scalar_model();
        let b = Bounds::new(vec![1.0], 0.0).unwrap();
        let states = ReachSampler::new(&m, &b, 1, 1, 11)
            .with_strategies(&[InputStrategy::BangBang])
            .states()
            .unwrap();
        assert_eq!(states.len(), 1);
        assert_relative_eq!(states[0][0].abs(), 0.5);
    }

    #[test]
    fn sampler_is_deterministic() {
        let (_, d) =
            crate::model::build_discrete(&crate::model::ModelConfig::case_study()).unwrap();
        let b = crate::model::PowerSystemParams::case_study().physical_bounds();
        let s1 = sample_reachable(&d, &b, 30, 17, 5).unwrap();
        let s2 = sample_reachable(&d, &b, 30, 17, 5).unwrap();
        assert_eq!(s1, s2);
        let s3 = sample_reachable(&d, &b, 30, 17, 6).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn sampler_bounds_monotone_with_shared_seeds() {
        let (_, d) =
            crate::model::build_discrete(&crate::model::ModelConfig::case_study()).unwrap();
        let small = Bounds::new(vec![0.1, 0.1, 0.05, 0.05], 0.05).unwrap();
        let large = Bounds::new(vec![0.2, 0.3, 0.1, 0.1], 0.1).unwrap();
        let df = |x: &DVector<f64>| x[0].abs();
        let lo = ReachSampler::new(&d, &small, 100, 300, 9)
            .max_of(df)
            .unwrap();
        let hi = ReachSampler::new(&d, &large, 100, 300, 9)
            .max_of(df)
            .unwrap();
        assert!(hi >= lo, "{hi} < {lo}");
    }

    proptest! {
        #[test]
        fn distance_sign_matches_margin(
            diag in prop::collection::vec(0.01f64..2.0, 3),
            off in -0.3f64..0.3,
            c in prop::collection::vec(-2.0f64..2.0, 3),
            g in 0.05f64..3.0,
            scale in 0.1f64..10.0,
        ) {
            let mut w = DMatrix::from_diagonal(&DVector::from_vec(diag.clone()));
            let bound = (diag[0] * diag[1]).sqrt() * 0.9;
            w[(0, 1)] = off.clamp(-bound, bound);
            w[(1, 0)] = w[(0, 1)];
            let e = Ellipsoid::new(w).unwrap();
            let cv = DVector::from_vec(c);
            prop_assume!(cv.norm() > 1e-3);
            let h = HalfSpace::new(cv.clone(), g).unwrap();
            let dist = hyperplane_distance(&e, &h);
            let margin = check_separation(&e, &UnsafeSet::new(vec![h]).unwrap()).margins[0];
            prop_assume!(dist.abs() > 1e-12);
            prop_assert_eq!(dist > 0.0, margin < 0.0);

            let scaled = HalfSpace::new(cv * scale, g * scale).unwrap();
            let dist_s = hyperplane_distance(&e, &scaled);
            let margin_s = check_separation(&e, &UnsafeSet::new(vec![scaled]).unwrap()).margins[0];
            prop_assert_eq!(dist_s > 0.0, dist > 0.0);
            prop_assert_eq!(margin_s < 0.0, margin < 0.0);
        }
    }
}
