//! Parameter extraction by damped Gauss-Newton (Levenberg-Marquardt) least
//! squares.
//!
//! Four forward models can be fitted:
//!
//! - [`Model::Spectrum`]: `|r(ω)|²` (or complex `r`) of a single trace,
//! - [`Model::FieldMap`]: a bias-field map with `ω_m = γB + ω_m0` shared by
//!   every row,
//! - [`Model::Decay`]: `E(t) = A exp(-t/τ)`, compared on a log scale,
//! - [`Model::Lorentzian`]: a plain Lorentzian dip, for linewidth read-off.
//!
//! Rates, couplings and other strictly positive quantities are optimised in
//! log space; frequencies and offsets are optimised linearly after mapping the
//! bound interval onto `[0, 1]`. Bounds are enforced by clamping each trial
//! point. Standard errors come from the linearised covariance
//! `s² (JᵀJ)⁻¹` at the optimum and are approximate.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::physics::ModeParameters;
use crate::spectra::reflection_gradient;

pub const MAX_ITERATIONS: usize = 500;
pub const STEP_TOLERANCE: f64 = 1e-10;
pub const DECREASE_TOLERANCE: f64 = 1e-12;
/// Largest projected gradient cosine accepted as a stationary point.
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const INITIAL_DAMPING: f64 = 1e-3;
const DAMPING_UP: f64 = 3.0;
const DAMPING_DOWN: f64 = 2.0;
const MAX_DAMPING: f64 = 1e16;
const SINGULAR_RATIO: f64 = 1e-12;
/// Largest change of `ln v` for a log-scaled parameter in one step.
const MAX_LOG_STEP: f64 = 0.5;
/// Gradient floor, relative to the data norm, below which any residual
/// counts as stationary.
const GRADIENT_FLOOR: f64 = 1e-10;
/// Gradient, relative to the data norm, at which iteration stops early.
const NEGLIGIBLE_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Param {
    G,
    KappaA,
    KappaA1,
    KappaM,
    OmegaA,
    OmegaM,
    Gamma,
    OmegaM0,
    Amplitude,
    Tau,
    Baseline,
    Depth,
    Width,
    Center,
}

impl Param {
    pub const ALL: [Param; 14] = [
        Param::G,
        Param::KappaA,
        Param::KappaA1,
        Param::KappaM,
        Param::OmegaA,
        Param::OmegaM,
        Param::Gamma,
        Param::OmegaM0,
        Param::Amplitude,
        Param::Tau,
        Param::Baseline,
        Param::Depth,
        Param::Width,
        Param::Center,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Param::G => "g",
            Param::KappaA => "kappa_a",
            Param::KappaA1 => "kappa_a1",
            Param::KappaM => "kappa_m",
            Param::OmegaA => "omega_a",
            Param::OmegaM => "omega_m",
            Param::Gamma => "gamma",
            Param::OmegaM0 => "omega_m0",
            Param::Amplitude => "amplitude",
            Param::Tau => "tau",
            Param::Baseline => "baseline",
            Param::Depth => "depth",
            Param::Width => "width",
            Param::Center => "center",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Whether the parameter is strictly positive and fitted in log space.
    pub fn is_log_scaled(&self) -> bool {
        matches!(
            self,
            Param::G
                | Param::KappaA
                | Param::KappaA1
                | Param::KappaM
                | Param::Gamma
                | Param::Amplitude
                | Param::Tau
                | Param::Depth
                | Param::Width
        )
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub type ParamValues = BTreeMap<Param, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Spectrum,
    FieldMap,
    Decay,
    Lorentzian,
}

impl Model {
    /// Parameters of the model, in the order used for its partial derivatives.
    pub fn params(&self) -> &'static [Param] {
        match self {
            Model::Spectrum => &[
                Param::OmegaA,
                Param::OmegaM,
                Param::KappaA,
                Param::KappaA1,
                Param::KappaM,
                Param::G,
            ],
            Model::FieldMap => &[
                Param::OmegaA,
                Param::Gamma,
                Param::OmegaM0,
                Param::KappaA,
                Param::KappaA1,
                Param::KappaM,
                Param::G,
            ],
            Model::Decay => &[Param::Amplitude, Param::Tau],
            Model::Lorentzian => &[Param::Baseline, Param::Depth, Param::Width, Param::Center],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observations {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Observations {
    pub fn len(&self) -> usize {
        match self {
            Observations::Real(v) => v.len(),
            Observations::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Real observations as given, complex ones as `|r|²`.
    pub fn power(&self) -> Vec<f64> {
        match self {
            Observations::Real(v) => v.clone(),
            Observations::Complex(v) => v.iter().map(|z| z.norm_sqr()).collect(),
        }
    }
}

/// Observed values with their abscissa (angular frequency or time) and, for
/// field maps, the bias field of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct FitData {
    x: Vec<f64>,
    field: Option<Vec<f64>>,
    obs: Observations,
}

impl FitData {
    pub fn new(x: Vec<f64>, field: Option<Vec<f64>>, obs: Observations) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::FitSetup("data is empty".into()));
        }
        if obs.len() != x.len() {
            return Err(Error::FitSetup(format!(
                "{} abscissa values but {} observations",
                x.len(),
                obs.len()
            )));
        }
        if let Some(f) = &field {
            if f.len() != x.len() {
                return Err(Error::FitSetup(format!(
                    "{} abscissa values but {} field values",
                    x.len(),
                    f.len()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::FitSetup("non-finite field value".into()));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::FitSetup("non-finite abscissa value".into()));
        }
        let finite = match &obs {
            Observations::Real(v) => v.iter().all(|y| y.is_finite()),
            Observations::Complex(v) => v.iter().all(|y| y.re.is_finite() && y.im.is_finite()),
        };
        if !finite {
            return Err(Error::FitSetup("non-finite observation".into()));
        }
        Ok(Self { x, field, obs })
    }

    /// `|r|²` against angular frequency.
    pub fn power(omegas: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        Self::new(omegas, None, Observations::Real(power))
    }

    /// Complex reflection against angular frequency.
    pub fn complex(omegas: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        Self::new(omegas, None, Observations::Complex(values))
    }

    /// Long-format field map: one `(B, ω, |r|²)` triple per point.
    pub fn map(fields: Vec<f64>, omegas: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        Self::new(omegas, Some(fields), Observations::Real(power))
    }

    /// Energy against time.
    pub fn decay(t: Vec<f64>, energy: Vec<f64>) -> Result<Self> {
        Self::new(t, None, Observations::Real(energy))
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn field(&self) -> Option<&[f64]> {
        self.field.as_deref()
    }

    pub fn observations(&self) -> &Observations {
        &self.obs
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    fn x_range(&self) -> (f64, f64) {
        let lo = self.x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = self.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Distinct field values in ascending order.
    fn field_rows(&self) -> Vec<f64> {
        let mut rows: Vec<f64> = self.field.clone().unwrap_or_default();
        rows.sort_by(|a, b| a.total_cmp(b));
        rows.dedup();
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitProblem {
    model: Model,
    data: FitData,
    free: Vec<(Param, Bounds)>,
    fixed: ParamValues,
    weights: Option<Vec<f64>>,
    max_iterations: usize,
}

impl FitProblem {
    pub fn new(model: Model, data: FitData) -> Self {
        Self {
            model,
            data,
            free: Vec::new(),
            fixed: ParamValues::new(),
            weights: None,
            max_iterations: MAX_ITERATIONS,
        }
    }

    /// Caps the number of accepted steps; a fit that hits the cap is not converged.
    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    /// Marks `param` as free within `[lower, upper]`.
    pub fn free(mut self, param: Param, lower: f64, upper: f64) -> Self {
        self.free.retain(|(p, _)| *p != param);
        self.free.push((param, Bounds { lower, upper }));
        self
    }

    pub fn fixed(mut self, param: Param, value: f64) -> Self {
        self.fixed.insert(param, value);
        self
    }

    /// Per-point weights multiplying the squared residual.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn data(&self) -> &FitData {
        &self.data
    }

    pub fn free_params(&self) -> Vec<Param> {
        self.free.iter().map(|(p, _)| *p).collect()
    }

    pub fn bounds(&self, param: Param) -> Option<Bounds> {
        self.free.iter().find(|(p, _)| *p == param).map(|(_, b)| *b)
    }

    pub fn validate(&self) -> Result<()> {
        let setup = |msg: String| Err(Error::FitSetup(msg));
        if self.free.is_empty() {
            return setup("no free parameters".into());
        }
        if self.data.is_empty() {
            return setup("data is empty".into());
        }
        let names = self.model.params();
        for (p, b) in &self.free {
            if !names.contains(p) {
                return setup(format!("`{p}` is not a parameter of the {:?} model", self.model));
            }
            if self.fixed.contains_key(p) {
                return setup(format!("`{p}` is both free and fixed"));
            }
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return setup(format!("bounds of `{p}` must be finite and ordered, got [{}, {}]", b.lower, b.upper));
            }
            if p.is_log_scaled() && b.lower <= 0.0 {
                return setup(format!("`{p}` is fitted in log space and needs a positive lower bound"));
            }
        }
        for (p, v) in &self.fixed {
            if !names.contains(p) {
                return setup(format!("`{p}` is not a parameter of the {:?} model", self.model));
            }
            if !v.is_finite() {
                return setup(format!("fixed `{p}` is not finite"));
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.data.len() {
                return setup(format!("{} weights for {} points", w.len(), self.data.len()));
            }
            if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return setup("weights must be finite and non-negative".into());
            }
        }
        match self.model {
            Model::FieldMap => {
                if self.data.field.is_none() {
                    return setup("field map needs a bias field per point".into());
                }
                if self.data.field_rows().len() < 3 {
                    return setup("field map needs at least 3 bias-field rows".into());
                }
            }
            Model::Decay | Model::Lorentzian => {
                if matches!(self.data.obs, Observations::Complex(_)) {
                    return setup(format!("{:?} model takes real observations", self.model));
                }
            }
            Model::Spectrum => {}
        }
        if self.model == Model::Decay {
            if let Observations::Real(e) = &self.data.obs {
                if e.iter().any(|v| *v <= 0.0) {
                    return setup("decay data must be strictly positive".into());
                }
            }
        }
        Ok(())
    }

    /// Full model parameter vector, free values taken from `values`.
    fn assemble(&self, values: &ParamValues) -> Result<Vec<f64>> {
        self.model
            .params()
            .iter()
            .map(|p| {
                self.fixed
                    .get(p)
                    .or_else(|| values.get(p))
                    .copied()
                    .ok_or_else(|| Error::FitSetup(format!("no value for `{p}`")))
            })
            .collect()
    }

    /// Weighted residual vector `sqrt(w) (model - data)` at `values`.
    pub fn residuals(&self, values: &ParamValues) -> Result<Vec<f64>> {
        let v = self.assemble(values)?;
        Ok(self.evaluate(&v, false).0)
    }

    /// Residuals and their partial derivatives with respect to each free
    /// parameter in natural units (one column per free parameter).
    pub fn jacobian(&self, values: &ParamValues) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let v = self.assemble(values)?;
        let (r, full) = self.evaluate(&v, true);
        let k = self.model.params().len();
        let cols = self
            .free
            .iter()
            .map(|(p, _)| {
                let j = self.model.params().iter().position(|q| q == p).unwrap();
                (0..r.len()).map(|i| full[i * k + j]).collect()
            })
            .collect();
        Ok((r, cols))
    }

    /// Residuals and, if asked, the row-major derivative table against all
    /// model parameters.
    fn evaluate(&self, v: &[f64], with_jacobian: bool) -> (Vec<f64>, Vec<f64>) {
        let k = self.model.params().len();
        let n = self.data.len();
        let rows = match self.data.obs {
            Observations::Real(_) => n,
            Observations::Complex(_) => 2 * n,
        };
        let mut r = Vec::with_capacity(rows);
        let mut jac = if with_jacobian { Vec::with_capacity(rows * k) } else { Vec::new() };
        let sqrt_w = |i: usize| self.weights.as_ref().map_or(1.0, |w| w[i].sqrt());

        match self.model {
            Model::Spectrum | Model::FieldMap => {
                for i in 0..n {
                    let omega = self.data.x[i];
                    let (p, field) = match self.model {
                        Model::Spectrum => (
                            ModeParameters {
                                omega_a: v[0],
                                omega_m: v[1],
                                kappa_a: v[2],
                                kappa_a1: v[3],
                                kappa_m: v[4],
                                g: v[5],
                            },
                            0.0,
                        ),
                        _ => {
                            let b = self.data.field.as_ref().unwrap()[i];
                            (
                                ModeParameters {
                                    omega_a: v[0],
                                    omega_m: v[1] * b + v[2],
                                    kappa_a: v[3],
                                    kappa_a1: v[4],
                                    kappa_m: v[5],
                                    g: v[6],
                                },
                                b,
                            )
                        }
                    };
                    let (refl, grad) = reflection_gradient(&p, omega);
                    // grad order: ω_a, ω_m, κ_a, κ_a1, κ_m, g
                    let dz: Vec<Complex64> = match self.model {
                        Model::Spectrum => grad.to_vec(),
                        _ => vec![grad[0], grad[1] * field, grad[1], grad[2], grad[3], grad[4], grad[5]],
                    };
                    let s = sqrt_w(i);
                    match &self.data.obs {
                        Observations::Real(y) => {
                            r.push(s * (refl.norm_sqr() - y[i]));
                            if with_jacobian {
                                jac.extend(dz.iter().map(|d| s * 2.0 * (refl.conj() * d).re));
                            }
                        }
                        Observations::Complex(y) => {
                            r.push(s * (refl.re - y[i].re));
                            r.push(s * (refl.im - y[i].im));
                            if with_jacobian {
                                jac.extend(dz.iter().map(|d| s * d.re));
                                jac.extend(dz.iter().map(|d| s * d.im));
                            }
                        }
                    }
                }
            }
            Model::Decay => {
                let Observations::Real(y) = &self.data.obs else { unreachable!() };
                let (amp, tau) = (v[0], v[1]);
                for i in 0..n {
                    let t = self.data.x[i];
                    let s = sqrt_w(i);
                    r.push(s * (amp.ln() - t / tau - y[i].ln()));
                    if with_jacobian {
                        jac.push(s / amp);
                        jac.push(s * t / (tau * tau));
                    }
                }
            }
            Model::Lorentzian => {
                let Observations::Real(y) = &self.data.obs else { unreachable!() };
                let (base, depth, width, center) = (v[0], v[1], v[2], v[3]);
                for i in 0..n {
                    let dx = self.data.x[i] - center;
                    let q = width * width + dx * dx;
                    let shape = width * width / q;
                    let s = sqrt_w(i);
                    r.push(s * (base - depth * shape - y[i]));
                    if with_jacobian {
                        jac.push(s);
                        jac.push(-s * shape);
                        jac.push(-s * depth * 2.0 * width * dx * dx / (q * q));
                        jac.push(-s * depth * 2.0 * width * width * dx / (q * q));
                    }
                }
            }
        }
        (r, jac)
    }

    /// Norm of the weighted data, the scale for "exact fit" detection.
    fn data_norm(&self) -> f64 {
        let w = |i: usize| self.weights.as_ref().map_or(1.0, |w| w[i]);
        let sum: f64 = match &self.data.obs {
            Observations::Real(y) => match self.model {
                Model::Decay => y.iter().enumerate().map(|(i, v)| w(i) * v.ln().powi(2)).sum(),
                _ => y.iter().enumerate().map(|(i, v)| w(i) * v * v).sum(),
            },
            Observations::Complex(y) => y.iter().enumerate().map(|(i, v)| w(i) * v.norm_sqr()).sum(),
        };
        sum.sqrt()
    }
}

/// Map between natural parameter values and the optimiser's coordinates.
#[derive(Debug, Clone, Copy)]
enum Transform {
    Log,
    Linear { lower: f64, span: f64 },
}

impl Transform {
    fn for_param(param: Param, b: Bounds) -> Self {
        if param.is_log_scaled() {
            Transform::Log
        } else {
            Transform::Linear {
                lower: b.lower,
                span: b.upper - b.lower,
            }
        }
    }

    fn to_internal(&self, v: f64) -> f64 {
        match *self {
            Transform::Log => v.ln(),
            Transform::Linear { lower, span } => (v - lower) / span,
        }
    }

    fn to_natural(&self, u: f64) -> f64 {
        match *self {
            Transform::Log => u.exp(),
            Transform::Linear { lower, span } => lower + span * u,
        }
    }

    /// `dv/du` at internal coordinate `u`.
    fn slope(&self, u: f64) -> f64 {
        match *self {
            Transform::Log => u.exp(),
            Transform::Linear { span, .. } => span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// The projected gradient vanished or the residual is exactly zero.
    Gradient,
    /// The accepted step fell below the step tolerance.
    Step,
    /// The relative decrease of the squared residual fell below tolerance.
    Decrease,
    /// No damping value produced a decrease.
    Damping,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// Free and fixed parameters together.
    pub params: ParamValues,
    /// Linearised standard errors of the free parameters; infinite along
    /// directions the data do not constrain.
    pub stderr: ParamValues,
    pub residual_norm: f64,
    /// Accepted steps.
    pub iterations: usize,
    pub converged: bool,
    pub singular_jacobian: bool,
    pub termination: Termination,
    /// Squared residual at the start and after every accepted step.
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn get(&self, param: Param) -> Option<f64> {
        self.params.get(&param).copied()
    }

    pub fn error(&self, param: Param) -> Option<f64> {
        self.stderr.get(&param).copied()
    }
}

struct Scaled {
    jhat: DMatrix<f64>,
    scale: Vec<f64>,
}

fn scaled_jacobian(problem: &FitProblem, values: &ParamValues, u: &[f64], tr: &[Transform]) -> Result<(DVector<f64>, Scaled)> {
    let (r, cols) = problem.jacobian(values)?;
    let m = r.len();
    let n = cols.len();
    let mut jhat = DMatrix::zeros(m, n);
    let mut scale = vec![1.0; n];
    for j in 0..n {
        let slope = tr[j].slope(u[j]);
        let norm = cols[j].iter().map(|v| (v * slope).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            scale[j] = norm;
        }
        for i in 0..m {
            jhat[(i, j)] = cols[j][i] * slope / scale[j];
        }
    }
    if !jhat.iter().all(|v| v.is_finite()) || !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite residual or Jacobian".into()));
    }
    Ok((DVector::from_vec(r), Scaled { jhat, scale }))
}

/// Largest `|J_jᵀ r| / |J_j|` over the free coordinates, ignoring
/// coordinates pinned at a bound with the descent direction pointing outward.
fn projected_gradient(jhat: &DMatrix<f64>, r: &DVector<f64>, u: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    let grad = jhat.transpose() * r;
    let mut worst: f64 = 0.0;
    for j in 0..u.len() {
        let gj = grad[j];
        let at_lower = u[j] <= lo[j] && gj > 0.0;
        let at_upper = u[j] >= hi[j] && gj < 0.0;
        if at_lower || at_upper {
            continue;
        }
        let cn = jhat.column(j).norm();
        if cn > 0.0 {
            worst = worst.max(gj.abs() / cn);
        }
    }
    worst
}

/// Damped Gauss-Newton minimisation of the squared weighted residual.
///
/// Never reports success silently: `converged` is set only when the
/// projected gradient criterion holds at the returned point.
pub fn fit(problem: &FitProblem, init: &ParamValues) -> Result<FitResult> {
    problem.validate()?;
    let free = problem.free_params();
    let n = free.len();
    let mut tr = Vec::with_capacity(n);
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    for (p, b) in &problem.free {
        let v = *init
            .get(p)
            .ok_or_else(|| Error::FitSetup(format!("no initial value for free `{p}`")))?;
        if !(v >= b.lower && v <= b.upper) {
            return Err(Error::FitSetup(format!(
                "initial `{p}` = {v:e} outside bounds [{:e}, {:e}]",
                b.lower, b.upper
            )));
        }
        let t = Transform::for_param(*p, *b);
        lo.push(t.to_internal(b.lower));
        hi.push(t.to_internal(b.upper));
        u.push(t.to_internal(v));
        tr.push(t);
    }

    let values_at = |u: &[f64]| -> ParamValues {
        let mut vals = problem.fixed.clone();
        for j in 0..n {
            // clamp again after the round trip through exp/ln
            let b = problem.free[j].1;
            vals.insert(free[j], tr[j].to_natural(u[j]).clamp(b.lower, b.upper));
        }
        vals
    };

    let data_norm = problem.data_norm();
    // gradient small against the residual, or against the data when the
    // residual itself is at the rounding floor
    let stationary = |r: &DVector<f64>, jhat: &DMatrix<f64>, u: &[f64], rel: f64, floor: f64| {
        projected_gradient(jhat, r, u, &lo, &hi) <= rel * r.norm() + floor * data_norm
    };

    let mut values = values_at(&u);
    let (mut r, mut sj) = scaled_jacobian(problem, &values, &u, &tr)?;
    let mut cost = r.norm_squared();
    let mut history = vec![cost];
    let mut lambda = INITIAL_DAMPING;
    let mut iterations = 0;
    let mut singular = false;
    let termination;

    loop {
        if stationary(&r, &sj.jhat, &u, 1e-4 * GRADIENT_TOLERANCE, NEGLIGIBLE_RESIDUAL) {
            termination = Termination::Gradient;
            break;
        }
        if iterations >= problem.max_iterations {
            termination = Termination::MaxIterations;
            break;
        }
        let svd = sj.jhat.clone().svd(true, true);
        let (su, sv) = (svd.u.as_ref().unwrap(), svd.v_t.as_ref().unwrap());
        let sigma = &svd.singular_values;
        let smax = sigma.max();
        if smax == 0.0 || sigma.min() / smax < SINGULAR_RATIO {
            singular = true;
        }
        let utr = su.transpose() * &r;

        let mut accepted = None;
        while lambda <= MAX_DAMPING {
            let filtered = DVector::from_iterator(
                sigma.len(),
                sigma.iter().zip(utr.iter()).map(|(s, c)| -s * c / (s * s + lambda)),
            );
            let step_hat = sv.transpose() * filtered;
            let trial: Vec<f64> = (0..n)
                .map(|j| (u[j] + step_hat[j] / sj.scale[j]).clamp(lo[j], hi[j]))
                .collect();
            // a step that rescales a positive parameter too far counts as rejected
            let too_long = (0..n).any(|j| matches!(tr[j], Transform::Log) && (trial[j] - u[j]).abs() > MAX_LOG_STEP);
            if too_long {
                lambda *= DAMPING_UP;
                continue;
            }
            let trial_values = values_at(&trial);
            let trial_r = DVector::from_vec(problem.residuals(&trial_values)?);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                accepted = Some((trial, trial_values, trial_cost));
                break;
            }
            lambda *= DAMPING_UP;
        }
        let Some((trial, trial_values, trial_cost)) = accepted else {
            termination = Termination::Damping;
            break;
        };

        iterations += 1;
        let step = (0..n).map(|j| (trial[j] - u[j]).abs()).fold(0.0, f64::max);
        let decrease = (cost - trial_cost) / cost;
        u = trial;
        values = trial_values;
        (r, sj) = scaled_jacobian(problem, &values, &u, &tr)?;
        cost = trial_cost;
        history.push(cost);
        lambda = (lambda / DAMPING_DOWN).max(f64::MIN_POSITIVE);

        if step < STEP_TOLERANCE {
            termination = Termination::Step;
            break;
        }
        if decrease < DECREASE_TOLERANCE {
            termination = Termination::Decrease;
            break;
        }
    }

    let grad_ok = stationary(&r, &sj.jhat, &u, GRADIENT_TOLERANCE, GRADIENT_FLOOR);
    let converged = grad_ok && termination != Termination::MaxIterations;

    let (stderr, singular_final) = standard_errors(&sj, &u, &tr, cost, &free);
    Ok(FitResult {
        params: values,
        stderr,
        residual_norm: cost.sqrt(),
        iterations,
        converged,
        singular_jacobian: singular || singular_final,
        termination,
        cost_history: history,
    })
}

fn standard_errors(sj: &Scaled, u: &[f64], tr: &[Transform], cost: f64, free: &[Param]) -> (ParamValues, bool) {
    let (m, n) = sj.jhat.shape();
    let s2 = if m > n { cost / (m - n) as f64 } else { f64::INFINITY };
    let svd = sj.jhat.clone().svd(false, true);
    let vt = svd.v_t.as_ref().unwrap();
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    let mut singular = false;
    let mut out = ParamValues::new();
    for j in 0..n {
        let mut var = 0.0;
        for k in 0..sigma.len() {
            let vjk = vt[(k, j)];
            if sigma[k] == 0.0 || sigma[k] / smax < SINGULAR_RATIO {
                singular = true;
                if vjk.abs() > 1e-8 {
                    var = f64::INFINITY;
                }
            } else {
                var += (vjk / sigma[k]).powi(2);
            }
        }
        let sd_internal = (s2 * var).sqrt() / sj.scale[j];
        out.insert(free[j], sd_internal * tr[j].slope(u[j]));
    }
    (out, singular)
}

/// Default search interval for `param` starting from `init`.
///
/// Positive quantities get three decades either side; frequencies may move
/// one full data span beyond the observed range.
pub fn default_bounds(param: Param, init: f64, data: &FitData) -> Result<Bounds> {
    let (xmin, xmax) = data.x_range();
    let span = (xmax - xmin).max(f64::MIN_POSITIVE);
    let b = match param {
        p if p.is_log_scaled() => {
            if !(init > 0.0 && init.is_finite()) {
                return Err(Error::FitSetup(format!("`{p}` must start positive, got {init}")));
            }
            if p == Param::Gamma {
                Bounds { lower: 0.5 * init, upper: 2.0 * init }
            } else {
                Bounds { lower: init * 1e-3, upper: init * 1e3 }
            }
        }
        Param::OmegaA | Param::OmegaM | Param::Center => Bounds {
            lower: (xmin - span).min(init),
            upper: (xmax + span).max(init),
        },
        Param::OmegaM0 => {
            let reach = 0.5 * xmax.abs().max(xmin.abs()) + span;
            Bounds { lower: init - reach, upper: init + reach }
        }
        _ => {
            let reach = 1.0 + init.abs();
            Bounds { lower: init - reach, upper: init + reach }
        }
    };
    Ok(b)
}

/// Problem with every parameter present in `init` free under
/// [`default_bounds`], except those listed in `fixed`.
pub fn problem_with_defaults(model: Model, data: FitData, init: &ParamValues, fixed: &[Param]) -> Result<FitProblem> {
    let mut problem = FitProblem::new(model, data);
    for &p in model.params() {
        let v = *init
            .get(&p)
            .ok_or_else(|| Error::FitSetup(format!("no initial value for `{p}`")))?;
        if fixed.contains(&p) {
            problem = problem.fixed(p, v);
        } else {
            let b = default_bounds(p, v, &problem.data)?;
            problem = problem.free(p, b.lower, b.upper);
        }
    }
    Ok(problem)
}

/// Joint fit of a bias-field map, all seven shared parameters free.
pub fn fit_field_map(data: &FitData, init: &ParamValues) -> Result<FitResult> {
    let problem = problem_with_defaults(Model::FieldMap, data.clone(), init, &[])?;
    fit(&problem, init)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedQuantities {
    pub cooperativity: f64,
    pub purcell_factor: f64,
    /// Normal-mode splitting `2g`.
    pub splitting: f64,
    /// Energy-exchange period `π/g`; `None` for `g = 0`.
    pub rabi_period: Option<f64>,
}

pub fn derived_from_rates(g: f64, kappa_a: f64, kappa_m: f64) -> DerivedQuantities {
    let c = g * g / (kappa_a * kappa_m);
    DerivedQuantities {
        cooperativity: c,
        purcell_factor: 1.0 + c,
        splitting: 2.0 * g,
        rabi_period: (g > 0.0).then(|| std::f64::consts::PI / g),
    }
}

pub fn derived_quantities(result: &FitResult) -> Result<DerivedQuantities> {
    let get = |p: Param| {
        result
            .get(p)
            .ok_or_else(|| Error::FitSetup(format!("fit result has no `{p}`")))
    };
    Ok(derived_from_rates(get(Param::G)?, get(Param::KappaA)?, get(Param::KappaM)?))
}

/// A dip located by prominence, on a lightly smoothed trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dip {
    pub index: usize,
    pub center: f64,
    pub floor: f64,
    pub prominence: f64,
    /// Full width at half prominence.
    pub width: f64,
}

fn smooth(y: &[f64]) -> Vec<f64> {
    let n = y.len();
    if n < 50 {
        return y.to_vec();
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(2);
            let b = (i + 3).min(n);
            y[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect()
}

fn crossing(x: &[f64], s: &[f64], from: usize, level: f64, leftward: bool) -> f64 {
    let mut k = from;
    loop {
        let next = if leftward {
            if k == 0 {
                return x[0];
            }
            k - 1
        } else {
            if k + 1 >= x.len() {
                return x[x.len() - 1];
            }
            k + 1
        };
        if (s[next] - level) * (s[k] - level) <= 0.0 && s[next] != s[k] {
            let f = (level - s[k]) / (s[next] - s[k]);
            return x[k] + f * (x[next] - x[k]);
        }
        k = next;
    }
}

/// Local minima of `y` (sorted by `x`) whose prominence reaches
/// `min_prominence`, ordered by position.
pub fn find_dips(x: &[f64], y: &[f64], min_prominence: f64) -> Vec<Dip> {
    let s = smooth(y);
    let n = s.len();
    let mut dips = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if s[i] < s[i - 1] {
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] > s[i] {
                let k = (i + j) / 2;
                let mut left_max = s[k];
                for v in s[..k].iter().rev() {
                    if *v < s[k] {
                        break;
                    }
                    left_max = left_max.max(*v);
                }
                let mut right_max = s[k];
                for v in &s[k + 1..] {
                    if *v < s[k] {
                        break;
                    }
                    right_max = right_max.max(*v);
                }
                let prominence = left_max.min(right_max) - s[k];
                if prominence >= min_prominence && prominence > 0.0 {
                    let level = s[k] + 0.5 * prominence;
                    let width = crossing(x, &s, k, level, false) - crossing(x, &s, k, level, true);
                    let center = if k > 0 && k + 1 < n {
                        let (a, b, c) = (s[k - 1], s[k], s[k + 1]);
                        let denom = a - 2.0 * b + c;
                        let off = if denom > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
                        x[k] + off * 0.5 * (x[k + 1] - x[k - 1])
                    } else {
                        x[k]
                    };
                    dips.push(Dip {
                        index: k,
                        center,
                        floor: s[k],
                        prominence,
                        width,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    dips
}

fn sorted_xy(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    (idx.iter().map(|&i| x[i]).collect(), idx.iter().map(|&i| y[i]).collect())
}

/// `κ (1 - ρ)` with `ρ = sqrt(floor / baseline)`: the under-coupled reading
/// of a dip floor for a resonance of half-width `κ`.
fn port_rate(kappa: f64, floor: f64, baseline: f64) -> f64 {
    let rho = (floor.max(0.0) / baseline).sqrt().min(1.0);
    kappa * (1.0 - rho)
}

/// Starting values for a single-spectrum fit.
///
/// One resolved dip is read as a bare cavity (`g = 0`); two dips are read as
/// split polaritons when they are further apart than they are wide, and as a
/// transparency window inside a broad cavity dip otherwise.
pub fn init_guess(data: &FitData) -> Result<ParamValues> {
    let (x, y) = sorted_xy(&data.x, &data.obs.power());
    let s = smooth(&y);
    let baseline = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let depth = baseline - floor;
    if !(depth > 1e-6 * baseline.abs().max(1e-300)) || x.len() < 5 {
        return Err(Error::FlatSpectrum(depth));
    }
    let mut dips = find_dips(&x, &y, 0.2 * depth);
    if dips.is_empty() {
        return Err(Error::FlatSpectrum(depth));
    }
    dips.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
    dips.truncate(2);
    dips.sort_by(|a, b| a.center.total_cmp(&b.center));

    let mut out = ParamValues::new();
    if dips.len() == 1 {
        let d = dips[0];
        let kappa = 0.5 * d.width;
        out.insert(Param::OmegaA, d.center);
        out.insert(Param::OmegaM, d.center);
        out.insert(Param::KappaA, kappa);
        out.insert(Param::KappaM, kappa);
        out.insert(Param::KappaA1, 0.5 * port_rate(kappa, d.floor, baseline));
        out.insert(Param::G, 0.0);
        return Ok(out);
    }

    let (a, b) = (dips[0], dips[1]);
    let separation = b.center - a.center;
    let mean_width = 0.5 * (a.width + b.width);
    if separation > mean_width {
        let mid = 0.5 * (a.center + b.center);
        let kappa = 0.5 * mean_width;
        let k1 = port_rate(kappa, 0.5 * (a.floor + b.floor), baseline).clamp(0.01 * kappa, 0.99 * kappa);
        out.insert(Param::OmegaA, mid);
        out.insert(Param::OmegaM, mid);
        out.insert(Param::KappaA, kappa);
        out.insert(Param::KappaM, kappa);
        out.insert(Param::KappaA1, k1);
        out.insert(Param::G, 0.5 * separation);
        return Ok(out);
    }

    // transparency window between the two lobes
    let k = (a.index..=b.index).max_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap();
    let lobe_floor = a.floor.min(b.floor);
    let height = (s[k] / baseline).clamp(1e-6, 0.999);
    let level = 0.5 * (s[k] + lobe_floor);
    let window = crossing(&x, &s, k, level, false) - crossing(&x, &s, k, level, true);
    let root = height.sqrt();
    let c_est = root / (1.0 - root);
    let kappa_m = window / (2.0 * (1.0 + c_est));
    let half = 0.5 * (baseline + lobe_floor);
    let left = s.iter().position(|v| *v < half).unwrap();
    let right = s.iter().rposition(|v| *v < half).unwrap();
    let kappa_a = 0.5 * (x[right] - x[left]);
    out.insert(Param::OmegaA, x[k]);
    out.insert(Param::OmegaM, x[k]);
    out.insert(Param::KappaA, kappa_a);
    out.insert(Param::KappaM, kappa_m);
    out.insert(Param::KappaA1, 0.5 * port_rate(kappa_a, lobe_floor, baseline).max(0.02 * kappa_a));
    out.insert(Param::G, (c_est * kappa_a * kappa_m).sqrt());
    Ok(out)
}

/// Starting values for a field-map fit, from per-row dip positions.
///
/// The cavity is the dip that stays put between the first and last rows;
/// in rows showing both branches their sum tracks `ω_a + ω_m(B)`, which a
/// straight-line fit turns into `γ` and `ω_m0`.
pub fn init_guess_field_map(data: &FitData) -> Result<ParamValues> {
    let field = data
        .field()
        .ok_or_else(|| Error::FitSetup("field map needs a bias field per point".into()))?;
    let rows = data.field_rows();
    if rows.len() < 3 {
        return Err(Error::FitSetup("field map needs at least 3 bias-field rows".into()));
    }
    let power = data.obs.power();
    let mut per_row = Vec::with_capacity(rows.len());
    for &b in &rows {
        let (xs, ys): (Vec<f64>, Vec<f64>) = (0..data.len())
            .filter(|&i| field[i] == b)
            .map(|i| (data.x[i], power[i]))
            .unzip();
        let (xs, ys) = sorted_xy(&xs, &ys);
        let s = smooth(&ys);
        let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut dips = find_dips(&xs, &ys, 0.02 * (hi - lo));
        dips.sort_by(|a, b| b.prominence.total_cmp(&a.prominence));
        dips.truncate(2);
        dips.sort_by(|a, b| a.center.total_cmp(&b.center));
        per_row.push((b, dips, hi));
    }

    let first = &per_row[0].1;
    let last = &per_row[per_row.len() - 1].1;
    let mut best: Option<(f64, Dip, Dip)> = None;
    for d1 in first {
        for d2 in last {
            let gap = (d1.center - d2.center).abs();
            if best.is_none_or(|(g, _, _)| gap < g) {
                best = Some((gap, *d1, *d2));
            }
        }
    }
    let (_, cav_first, cav_last) = best.ok_or(Error::FlatSpectrum(0.0))?;
    let omega_a = 0.5 * (cav_first.center + cav_last.center);

    let mut bs = Vec::new();
    let mut wm = Vec::new();
    let mut half_split = f64::INFINITY;
    for (b, dips, _) in &per_row {
        if dips.len() == 2 {
            bs.push(*b);
            wm.push(dips[0].center + dips[1].center - omega_a);
            half_split = half_split.min(0.5 * (dips[1].center - dips[0].center));
        }
    }
    if bs.len() < 2 {
        return Err(Error::FitSetup("fewer than two rows resolve both branches".into()));
    }
    let nb = bs.len() as f64;
    let mb = bs.iter().sum::<f64>() / nb;
    let mw = wm.iter().sum::<f64>() / nb;
    let sbb: f64 = bs.iter().map(|b| (b - mb).powi(2)).sum();
    let sbw: f64 = bs.iter().zip(&wm).map(|(b, w)| (b - mb) * (w - mw)).sum();
    if sbb == 0.0 || sbw <= 0.0 {
        return Err(Error::FitSetup("dispersion slope is not positive".into()));
    }
    let gamma = sbw / sbb;
    let omega_m0 = mw - gamma * mb;

    // linewidths from the most detuned row
    let (_, dips, baseline) = if (rows[0] * gamma + omega_m0 - omega_a).abs()
        > (rows[rows.len() - 1] * gamma + omega_m0 - omega_a).abs()
    {
        &per_row[0]
    } else {
        &per_row[per_row.len() - 1]
    };
    let cav = dips
        .iter()
        .min_by(|a, b| (a.center - omega_a).abs().total_cmp(&(b.center - omega_a).abs()))
        .unwrap();
    let kappa_a = 0.5 * cav.width;
    let kappa_m = dips
        .iter()
        .find(|d| d.index != cav.index)
        .map_or(kappa_a, |d| 0.5 * d.width);

    let mut out = ParamValues::new();
    out.insert(Param::OmegaA, omega_a);
    out.insert(Param::Gamma, gamma);
    out.insert(Param::OmegaM0, omega_m0);
    out.insert(Param::KappaA, kappa_a);
    out.insert(Param::KappaA1, 0.5 * port_rate(kappa_a, cav.floor, *baseline).max(0.02 * kappa_a));
    out.insert(Param::KappaM, kappa_m);
    out.insert(Param::G, half_split);
    Ok(out)
}

/// Starting values for a decay fit from a straight line through `ln E`.
pub fn init_guess_decay(data: &FitData) -> Result<ParamValues> {
    let e = data.obs.power();
    if e.iter().any(|v| *v <= 0.0) {
        return Err(Error::FitSetup("decay data must be strictly positive".into()));
    }
    if data.len() < 2 {
        return Err(Error::FitSetup("decay needs at least 2 points".into()));
    }
    let n = data.len() as f64;
    let mt = data.x.iter().sum::<f64>() / n;
    let ml = e.iter().map(|v| v.ln()).sum::<f64>() / n;
    let stt: f64 = data.x.iter().map(|t| (t - mt).powi(2)).sum();
    let stl: f64 = data.x.iter().zip(&e).map(|(t, v)| (t - mt) * (v.ln() - ml)).sum();
    let slope = stl / stt;
    if !(slope < 0.0) {
        return Err(Error::FitSetup("trace does not decay".into()));
    }
    let mut out = ParamValues::new();
    out.insert(Param::Tau, -1.0 / slope);
    out.insert(Param::Amplitude, (ml - slope * mt).exp());
    Ok(out)
}

/// Starting values for a Lorentzian dip.
pub fn init_guess_lorentzian(data: &FitData) -> Result<ParamValues> {
    let (x, y) = sorted_xy(&data.x, &data.obs.power());
    let s = smooth(&y);
    let baseline = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let floor = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let depth = baseline - floor;
    if !(depth > 0.0) {
        return Err(Error::FlatSpectrum(depth));
    }
    let dip = find_dips(&x, &y, 0.5 * depth)
        .into_iter()
        .max_by(|a, b| a.prominence.total_cmp(&b.prominence))
        .ok_or(Error::FlatSpectrum(depth))?;
    let mut out = ParamValues::new();
    out.insert(Param::Baseline, baseline);
    out.insert(Param::Depth, depth);
    out.insert(Param::Width, 0.5 * dip.width);
    out.insert(Param::Center, dip.center);
    Ok(out)
}

pub fn mode_parameters(values: &ParamValues) -> Result<ModeParameters> {
    let get = |p: Param| {
        values
            .get(&p)
            .copied()
            .ok_or_else(|| Error::FitSetup(format!("no value for `{p}`")))
    };
    Ok(ModeParameters {
        omega_a: get(Param::OmegaA)?,
        omega_m: get(Param::OmegaM)?,
        kappa_a: get(Param::KappaA)?,
        kappa_a1: get(Param::KappaA1)?,
        kappa_m: get(Param::KappaM)?,
        g: get(Param::G)?,
    })
}
