//! Stability diagnostics for TD training with a mixing critic.
//!
//! The training-time danger is easiest to see on the linearized update: near
//! a fixed point, one critic step multiplies the value error by
//! `M = I - 2*alpha_q*(I - gamma*J)`, where `J` is the mixer Jacobian with
//! respect to the agent utilities. When `gamma*||J||_op > 1` the map turns
//! expansive and the error grows geometrically. This module simulates that
//! affine map exactly, computes the spectral radius / operator norm behind
//! the regime prediction, derives loop-gain diagnostics (including the
//! `1/sigma_Q` attenuation that value normalization buys), watches live runs
//! for divergence, and normalizes raw returns onto benchmark score scales.

mod score;

pub use score::{normalized_score, ScoreScale, SCORE_SCALE_VERSION};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffmath::Array;
use crate::error::{Error, Result};
use crate::valuedecomp::CriticStack;
use crate::Real;

// ---------------------------------------------------------------------------
// Linearized TD dynamics
// ---------------------------------------------------------------------------

/// The affine system `Q <- Q - 2*alpha_q*(I - gamma*J)(Q - q_bar)`.
#[derive(Debug, Clone)]
pub struct LinearTdSystem {
    /// `[A, A]` stand-in for the mixer Jacobian.
    pub j: Array<Real>,
    pub gamma: Real,
    pub alpha_q: Real,
    pub q0: Vec<Real>,
    pub q_bar: Vec<Real>,
}

impl LinearTdSystem {
    pub fn new(j: Array<Real>, gamma: Real, alpha_q: Real, q0: Vec<Real>, q_bar: Vec<Real>) -> Result<Self> {
        let sys = LinearTdSystem { j, gamma, alpha_q, q0, q_bar };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, c) = self.j.dims2();
        if r != c {
            return Err(Error::config(format!("jacobian must be square, got {r}x{c}")));
        }
        if self.q0.len() != r || self.q_bar.len() != r {
            return Err(Error::config(format!(
                "q vectors must have length {r}, got {} and {}",
                self.q0.len(),
                self.q_bar.len()
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.alpha_q > 0.0) {
            return Err(Error::config(format!("alpha_q must be positive, got {}", self.alpha_q)));
        }
        Ok(())
    }

    /// The one-step error multiplier `M = (1 - 2*alpha_q)*I + 2*alpha_q*gamma*J`.
    pub fn step_matrix(&self) -> Array<Real> {
        let n = self.j.dims2().0;
        let mut m = self.j.map(|v| 2.0 * self.alpha_q * self.gamma * v);
        for i in 0..n {
            let v = m.get2(i, i) + (1.0 - 2.0 * self.alpha_q);
            m.set2(i, i, v);
        }
        m
    }
}

/// Trajectory of error norms from iterating the exact affine map.
#[derive(Debug, Clone, Serialize)]
pub struct TdTrace {
    /// `||Q_t - q_bar||` for `t = 0..=steps` (shorter if truncated).
    pub error_norms: Vec<Real>,
    /// `error_norms[t+1] / error_norms[t]`.
    pub growth_ratios: Vec<Real>,
    /// Tail geometric rate: `exp` of the least-squares slope of `ln e_t`
    /// over the second half of the trajectory (robust to the norm
    /// oscillation a dominant complex eigenvalue pair produces).
    pub empirical_rate: Real,
    /// Step at which iteration stopped early (overflow or full contraction).
    pub truncated_at: Option<usize>,
    /// Error norm escaped the representable range: definitely expansive.
    pub overflowed: bool,
}

// Bounds chosen so squaring entries inside the norm never overflows.
const OVERFLOW_LIMIT: Real = 1e150;
const UNDERFLOW_LIMIT: Real = 1e-150;

fn vec_norm(v: &[Real]) -> Real {
    v.iter().map(|x| x * x).sum::<Real>().sqrt()
}

fn matvec(m: &Array<Real>, v: &[Real]) -> Vec<Real> {
    let (rows, cols) = m.dims2();
    debug_assert_eq!(cols, v.len());
    (0..rows).map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Iterate the affine map for `steps` steps and record the error norms.
///
/// Iteration stops early when the error norm leaves `[1e-150, 1e150]`:
/// above, the trajectory is truncated and marked expansive; below, the error
/// has fully contracted and further ratios would be numerical noise.
pub fn simulate_linear_td(system: &LinearTdSystem, steps: usize) -> Result<TdTrace> {
    system.validate()?;
    if steps == 0 {
        return Err(Error::usage("simulation needs at least one step"));
    }
    let m = system.step_matrix();
    let mut err: Vec<Real> = system.q0.iter().zip(&system.q_bar).map(|(q, b)| q - b).collect();
    let mut norms = vec![vec_norm(&err)];
    let mut truncated_at = None;
    let mut overflowed = false;
    for t in 1..=steps {
        err = matvec(&m, &err);
        let n = vec_norm(&err);
        norms.push(n);
        if !n.is_finite() || n > OVERFLOW_LIMIT {
            truncated_at = Some(t);
            overflowed = true;
            break;
        }
        if n < UNDERFLOW_LIMIT {
            truncated_at = Some(t);
            break;
        }
    }
    let ratios: Vec<Real> = norms
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let empirical_rate = tail_geometric_rate(&norms);
    Ok(TdTrace { error_norms: norms, growth_ratios: ratios, empirical_rate, truncated_at, overflowed })
}

/// Least-squares slope of `ln e_t` over the second half of the finite,
/// positive part of the trajectory, exponentiated back to a per-step rate.
fn tail_geometric_rate(norms: &[Real]) -> Real {
    let b = norms.len() - 1;
    let points: Vec<(Real, Real)> = (b / 2..=b)
        .filter(|&t| norms[t].is_finite() && norms[t] > 0.0)
        .map(|t| (t as Real, norms[t].ln()))
        .collect();
    if points.len() < 2 {
        return 0.0;
    }
    let n = points.len() as Real;
    let mean_t = points.iter().map(|p| p.0).sum::<Real>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<Real>() / n;
    let cov: Real = points.iter().map(|p| (p.0 - mean_t) * (p.1 - mean_y)).sum();
    let var: Real = points.iter().map(|p| (p.0 - mean_t) * (p.0 - mean_t)).sum();
    (cov / var).exp()
}

// ---------------------------------------------------------------------------
// Spectral radius
// ---------------------------------------------------------------------------

/// Characteristic polynomial coefficients `[1, c1, ..., cn]` of
/// `lambda^n + c1*lambda^(n-1) + ... + cn` via the Faddeev–LeVerrier
/// recurrence.
fn char_poly(m: &Array<Real>) -> Vec<Real> {
    let n = m.dims2().0;
    let mut coeffs = vec![1.0];
    // A_k = M * (A_{k-1} + c_{k-1} I), c_k = -tr(A_k)/k
    let mut a = m.clone();
    for k in 1..=n {
        let trace: Real = (0..n).map(|i| a.get2(i, i)).sum();
        let c = -trace / k as Real;
        coeffs.push(c);
        if k == n {
            break;
        }
        let mut shifted = a.clone();
        for i in 0..n {
            shifted.set2(i, i, shifted.get2(i, i) + c);
        }
        a = m.matmul(&shifted);
    }
    coeffs
}

fn eval_poly(coeffs: &[Real], z: Complex64) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for &c in coeffs {
        acc = acc * z + Complex64::new(c, 0.0);
    }
    acc
}

/// All complex roots of a monic polynomial by Durand–Kerner iteration.
fn poly_roots(coeffs: &[Real]) -> Vec<Complex64> {
    let n = coeffs.len() - 1;
    if n == 0 {
        return Vec::new();
    }
    // Scale-aware initial ring radius: the classic (0.4 + 0.9i)^k seeds,
    // stretched by a root magnitude bound so large-coefficient polynomials
    // still converge.
    let bound = 1.0
        + coeffs[1..]
            .iter()
            .map(|c| c.abs())
            .fold(0.0 as Real, Real::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> =
        (0..n).map(|k| seed.powu(k as u32 + 1) / seed.norm().powi(k as i32) * bound.min(1e3)).collect();
    for _ in 0..2000 {
        let mut max_delta: Real = 0.0;
        for i in 0..n {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..n {
                if i != j {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                // coincident iterates: nudge apart deterministically
                roots[i] += Complex64::new(1e-8 * (i as Real + 1.0), 1e-8);
                max_delta = Real::INFINITY;
                continue;
            }
            let delta = eval_poly(coeffs, roots[i]) / denom;
            roots[i] -= delta;
            max_delta = max_delta.max(delta.norm());
        }
        let scale = roots.iter().map(|r| r.norm()).fold(1.0 as Real, Real::max);
        if max_delta < 1e-13 * scale {
            break;
        }
    }
    roots
}

/// Largest absolute eigenvalue, via the characteristic polynomial.
pub fn spectral_radius(m: &Array<Real>) -> Result<Real> {
    let (r, c) = m.dims2();
    if r != c {
        return Err(Error::usage(format!("spectral radius needs a square matrix, got {r}x{c}")));
    }
    if r == 0 {
        return Err(Error::usage("spectral radius of an empty matrix"));
    }
    if r == 1 {
        return Ok(m.get2(0, 0).abs());
    }
    let coeffs = char_poly(m);
    Ok(poly_roots(&coeffs).iter().map(|z| z.norm()).fold(0.0, Real::max))
}

// ---------------------------------------------------------------------------
// Operator norm
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize)]
pub struct OperatorNorm {
    pub value: Real,
    /// False when the power iteration hit its cap without meeting tolerance
    /// on every restart; the value is then a lower-bound estimate.
    pub converged: bool,
}

const OP_NORM_TOL: Real = 1e-8;
const OP_NORM_CAP: usize = 10_000;
const OP_NORM_RESTARTS: u64 = 5;

/// Largest singular value by power iteration on `J^T J`. Deterministic: the
/// start vectors come from fixed seeds; up to five restarts are attempted if
/// the iteration stagnates before tolerance.
pub fn operator_norm(j: &Array<Real>) -> OperatorNorm {
    let (rows, cols) = j.dims2();
    if rows == 0 || cols == 0 {
        return OperatorNorm { value: 0.0, converged: true };
    }
    let mut best: Real = 0.0;
    for restart in 0..OP_NORM_RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED + restart);
        let mut v = Array::new(vec![cols, 1], (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let norm0 = vec_norm(v.as_slice());
        if norm0 == 0.0 {
            continue;
        }
        for x in v.as_mut_slice() {
            *x /= norm0;
        }
        let mut sigma_prev = 0.0;
        for _ in 0..OP_NORM_CAP {
            let w = j.matmul(&v); // [rows,1]
            let sigma = vec_norm(w.as_slice());
            if sigma == 0.0 {
                // v is in the null space: the estimate from this start vector
                // is 0; another restart may find a better direction.
                sigma_prev = 0.0;
                break;
            }
            let mut next = j.matmul_tn(&w); // J^T w, [cols,1]
            let n = vec_norm(next.as_slice());
            if n == 0.0 {
                sigma_prev = sigma;
                break;
            }
            for x in next.as_mut_slice() {
                *x /= n;
            }
            v = next;
            if (sigma - sigma_prev).abs() <= OP_NORM_TOL * sigma.max(1.0) {
                best = best.max(sigma);
                return OperatorNorm { value: best, converged: true };
            }
            sigma_prev = sigma;
        }
        best = best.max(sigma_prev);
    }
    OperatorNorm { value: best, converged: best == 0.0 }
}

/// Operator norm of the mixer Jacobian `dQ_tot/dQ^a` at one
/// `(state, utilities)` point, extracted by reverse-mode autodiff.
pub fn operator_norm_of_mixer(
    stack: &CriticStack,
    member: usize,
    state: &[Real],
    utilities: &[Real],
) -> Result<OperatorNorm> {
    let grad = stack.mixer_jacobian(member, state, utilities)?;
    let row = Array::new(vec![1, grad.len()], grad);
    Ok(operator_norm(&row))
}

// ---------------------------------------------------------------------------
// Loop gain
// ---------------------------------------------------------------------------

/// Closed-loop gain `gamma * ||J||_op * ||d pi / d Q_tot||`; passing
/// `sigma_q` yields the normalized variant, which is exactly the raw gain
/// divided by `sigma_q`.
pub fn loop_gain(op_norm: Real, gamma: Real, actor_sensitivity: Real, sigma_q: Option<Real>) -> Real {
    let raw = gamma * op_norm * actor_sensitivity;
    match sigma_q {
        Some(s) => raw / s,
        None => raw,
    }
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Contractive,
    Expansive,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityReport {
    pub op_norm: Real,
    pub op_norm_converged: bool,
    /// `rho(I - 2*alpha_q*(I - gamma*J))`.
    pub spectral_radius: Real,
    /// `expansive` iff the spectral radius exceeds 1.
    pub regime: Regime,
    pub growth_ratios: Vec<Real>,
    pub empirical_rate: Real,
    pub error_norms: Vec<Real>,
    pub truncated_at: Option<usize>,
    pub loop_gain_raw: Real,
    pub loop_gain_svn: Real,
}

/// Run every diagnostic on one linear system. `actor_sensitivity` scales the
/// loop gains (it has no intrinsic measurement; 1.0 reports the bare
/// `gamma*||J||_op`), and `sigma_q` feeds the normalized gain.
pub fn analyze(
    system: &LinearTdSystem,
    steps: usize,
    actor_sensitivity: Real,
    sigma_q: Real,
) -> Result<StabilityReport> {
    let op = operator_norm(&system.j);
    let rho = spectral_radius(&system.step_matrix())?;
    let trace = simulate_linear_td(system, steps)?;
    let regime = if rho > 1.0 || trace.overflowed { Regime::Expansive } else { Regime::Contractive };
    Ok(StabilityReport {
        op_norm: op.value,
        op_norm_converged: op.converged,
        spectral_radius: rho,
        regime,
        growth_ratios: trace.growth_ratios,
        empirical_rate: trace.empirical_rate,
        error_norms: trace.error_norms,
        truncated_at: trace.truncated_at,
        loop_gain_raw: loop_gain(op.value, system.gamma, actor_sensitivity, None),
        loop_gain_svn: loop_gain(op.value, system.gamma, actor_sensitivity, Some(sigma_q)),
    })
}

/// Jacobian argument for the `dynamics` command: a preset name or a path to
/// a JSON file holding a square matrix as an array of rows.
pub fn jacobian_from_arg(arg: &str) -> Result<Array<Real>> {
    match arg {
        // the worked scalar presets: J = [[1]] contracts, J = [[2]] expands
        // (at gamma = 0.9)
        "scalar1" => Ok(Array::new(vec![1, 1], vec![1.0])),
        "scalar2" => Ok(Array::new(vec![1, 1], vec![2.0])),
        path => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::io(path.to_string(), e))?;
            let rows: Vec<Vec<Real>> = serde_json::from_str(&text)
                .map_err(|e| Error::Serde(format!("jacobian file {path}: {e}")))?;
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(Error::config(format!(
                    "jacobian file {path} must hold a non-empty square matrix"
                )));
            }
            Ok(Array::new(vec![n, n], rows.into_iter().flatten().collect()))
        }
    }
}

// ---------------------------------------------------------------------------
// Divergence monitor
// ---------------------------------------------------------------------------

pub const DEFAULT_DRIFT_MULTIPLIER: Real = 50.0;
pub const GRAD_BLOWUP_THRESHOLD: Real = 1e6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DivergenceFlags {
    /// `|q_abs_mean|` exceeded the drift threshold.
    pub value_scale_drift: bool,
    /// Total gradient norm exceeded [`GRAD_BLOWUP_THRESHOLD`].
    pub grad_blowup: bool,
    /// A monitored quantity stopped being finite: immediate halt.
    pub non_finite: bool,
}

impl DivergenceFlags {
    pub fn any(&self) -> bool {
        self.value_scale_drift || self.grad_blowup || self.non_finite
    }

    /// Metrics-file encoding: semicolon-joined flag names, empty when clean.
    pub fn render(&self) -> String {
        let mut names = Vec::new();
        if self.value_scale_drift {
            names.push("value_scale_drift");
        }
        if self.grad_blowup {
            names.push("grad_blowup");
        }
        if self.non_finite {
            names.push("non_finite");
        }
        names.join(";")
    }
}

/// Watches q-scale and gradient norms against thresholds derived from the
/// dataset's return scale. A degenerate all-zero-return dataset yields a
/// zero drift threshold and flags immediately — by design, since any value
/// growth is then unexplained by the data.
#[derive(Debug, Clone, Copy)]
pub struct DivergenceMonitor {
    q_threshold: Real,
    grad_threshold: Real,
}

impl DivergenceMonitor {
    /// Threshold = `multiplier * max|dataset return| / (1 - gamma)`.
    pub fn new(max_abs_return: Real, gamma: Real) -> Self {
        Self::with_multiplier(DEFAULT_DRIFT_MULTIPLIER, max_abs_return, gamma)
    }

    pub fn with_multiplier(multiplier: Real, max_abs_return: Real, gamma: Real) -> Self {
        DivergenceMonitor {
            q_threshold: multiplier * max_abs_return / (1.0 - gamma),
            grad_threshold: GRAD_BLOWUP_THRESHOLD,
        }
    }

    pub fn q_threshold(&self) -> Real {
        self.q_threshold
    }

    pub fn check(&self, q_abs_mean: Real, grad_norm: Real) -> DivergenceFlags {
        DivergenceFlags {
            value_scale_drift: q_abs_mean.is_finite() && q_abs_mean.abs() > self.q_threshold,
            grad_blowup: grad_norm.is_finite() && grad_norm > self.grad_threshold,
            non_finite: !q_abs_mean.is_finite() || !grad_norm.is_finite(),
        }
    }
}
