//! Maximum-likelihood estimation of a qubit-to-two-qubit Choi matrix.
//!
//! The Choi matrix is written as `S = C†C` with `C` upper triangular, so
//! every candidate is positive semidefinite by construction. For a record
//! with input `ρ` and clone projector `F`, both `ρᵀ` and `F` are rank one,
//! `ρᵀ ⊗ F = q q†`, and the outcome probability collapses to `‖C q‖²`. The
//! log-likelihood is therefore
//!
//! ```text
//! L(C) = Σ_l log ‖C q_l‖²
//! ```
//!
//! and it is maximized together with the trace penalty `−μ Tr[C†C]`,
//! `μ = K/N`, by a downhill simplex over the 64 real parameters of `C`.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{clone_choi, tp_residual, ChoiJson, ChoiMatrix};
use crate::error::{Error, Result};
use crate::experiment::{
    generate_dataset, povm_element, state_density, Dataset, MeasurementRecord, MeasurementSetting, Outcome, PureState,
};
use crate::matlin::{kron, CMat};

/// Input dimension (one qubit).
pub const DIM_IN: usize = 2;
/// Output dimension (two qubits).
pub const DIM_OUT: usize = 4;
/// Side of the Choi matrix and of `C`.
pub const DIM: usize = DIM_IN * DIM_OUT;
/// Real parameters of an upper-triangular `DIM × DIM` complex matrix with
/// real diagonal.
pub const N_PARAMS: usize = DIM * DIM;

/// Upper-triangular Cholesky factor with a real diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct CholFactor {
    c: CMat,
}

impl CholFactor {
    /// Accepts an upper-triangular matrix with a real diagonal.
    pub fn new(c: CMat) -> Result<Self> {
        if c.dims() != (DIM, DIM) {
            return Err(Error::Dimension(format!(
                "Cholesky factor must be {DIM}x{DIM}, got {:?}",
                c.dims()
            )));
        }
        for i in 0..DIM {
            if c[(i, i)].im != 0.0 {
                return Err(Error::Config(format!("diagonal entry {i} is not real")));
            }
            for j in 0..i {
                if c[(i, j)] != Complex64::new(0.0, 0.0) {
                    return Err(Error::Config(format!("entry ({i}, {j}) below the diagonal")));
                }
            }
        }
        Ok(CholFactor { c })
    }

    /// `scale · 1`.
    pub fn scaled_identity(scale: f64) -> Self {
        CholFactor {
            c: CMat::identity(DIM).scale_re(scale),
        }
    }

    /// Unpacks a parameter vector: the diagonal first, then the strictly
    /// upper entries row by row as `(re, im)` pairs.
    pub fn from_params(p: &ParamVector) -> Self {
        let x = p.as_slice();
        let mut c = CMat::zeros(DIM, DIM);
        for i in 0..DIM {
            c[(i, i)] = Complex64::new(x[i], 0.0);
        }
        let mut k = DIM;
        for i in 0..DIM {
            for j in i + 1..DIM {
                c[(i, j)] = Complex64::new(x[k], x[k + 1]);
                k += 2;
            }
        }
        CholFactor { c }
    }

    pub fn to_params(&self) -> ParamVector {
        let mut x = Vec::with_capacity(N_PARAMS);
        x.extend((0..DIM).map(|i| self.c[(i, i)].re));
        for i in 0..DIM {
            for j in i + 1..DIM {
                let z = self.c[(i, j)];
                x.push(z.re);
                x.push(z.im);
            }
        }
        ParamVector(x)
    }

    pub fn mat(&self) -> &CMat {
        &self.c
    }

    /// `S = C†C`.
    pub fn choi(&self) -> ChoiMatrix {
        ChoiMatrix::new(DIM_IN, DIM_OUT, &self.c.adjoint() * &self.c).expect("fixed dims")
    }

    /// `Tr[C†C] = ‖C‖²_F`.
    pub fn trace_norm_sq(&self) -> f64 {
        self.c.norm().powi(2)
    }
}

/// The 64 real coordinates of a [`CholFactor`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.len() != N_PARAMS {
            return Err(Error::Dimension(format!(
                "parameter vector needs {N_PARAMS} entries, got {}",
                x.len()
            )));
        }
        Ok(ParamVector(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Single nonzero column of `R† ⊗ A†` for one record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QColumn(pub [Complex64; DIM]);

impl QColumn {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn to_column(&self) -> CMat {
        CMat::column(&self.0)
    }
}

/// Knobs for the simplex search and the penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Penalty weight; `None` means `K / N`.
    pub mu_override: Option<f64>,
    /// Objective evaluations allowed per simplex run.
    pub max_evals: usize,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Edge length of the initial simplex, and half-width of the restart
    /// perturbation.
    pub initial_step: f64,
    /// Convergence threshold on the relative spread of vertex values.
    pub value_tolerance: f64,
    /// Restarts after the first run.
    pub restarts: usize,
    /// Lower clamp on per-record probabilities inside the logarithm.
    pub prob_floor: f64,
    /// Seed for restart perturbations.
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mu_override: None,
            max_evals: 200_000,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            initial_step: 0.05,
            value_tolerance: 1e-8,
            restarts: 3,
            prob_floor: 1e-12,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reflection", self.reflection),
            ("expansion", self.expansion),
            ("contraction", self.contraction),
            ("shrink", self.shrink),
            ("initial_step", self.initial_step),
            ("value_tolerance", self.value_tolerance),
            ("prob_floor", self.prob_floor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(mu) = self.mu_override {
            if !(mu.is_finite() && mu >= 0.0) {
                return Err(Error::Config(format!("mu must be non-negative, got {mu}")));
            }
        }
        Ok(())
    }

    /// Penalty weight for a dataset of `k` records.
    pub fn mu(&self, k: usize) -> f64 {
        self.mu_override.unwrap_or(k as f64 / DIM_IN as f64)
    }
}

/// `α̃ = α/2 + π(a − 1)/4`: the outcome sign folded into the half angle.
pub fn shifted_angle(polar: f64, sign: i8) -> f64 {
    polar / 2.0 + FRAC_PI_4 * (sign as f64 - 1.0)
}

/// `R` with `R†R = ρᵀ`: first row `(cos(θ/2), e^{iφ} sin(θ/2))`, second zero.
pub fn chol_r(s: &PureState) -> CMat {
    let mut r = CMat::zeros(2, 2);
    r[(0, 0)] = Complex64::new((s.theta / 2.0).cos(), 0.0);
    r[(0, 1)] = Complex64::from_polar((s.theta / 2.0).sin(), s.phi);
    r
}

fn qubit_factor(polar: f64, azimuth: f64, sign: i8) -> CMat {
    let t = shifted_angle(polar, sign);
    let mut f = CMat::zeros(2, 2);
    f[(0, 0)] = Complex64::new(t.cos(), 0.0);
    f[(0, 1)] = Complex64::from_polar(t.sin(), -azimuth);
    f
}

/// `A` with `A†A = F`, as a Kronecker product of one factor per clone.
pub fn chol_a(m: &MeasurementSetting, o: Outcome) -> CMat {
    kron(
        &qubit_factor(m.alpha, m.beta, o.a()),
        &qubit_factor(m.gamma, m.delta, o.b()),
    )
}

/// `q` such that `q q† = ρᵀ ⊗ F`, built as the Kronecker product of the
/// conjugated first rows of `R` and `A`.
pub fn q_column(r: &MeasurementRecord) -> QColumn {
    let rr = chol_r(&r.state);
    let aa = chol_a(&r.setting, r.outcome);
    let mut q = [Complex64::new(0.0, 0.0); DIM];
    for i in 0..DIM_IN {
        for j in 0..DIM_OUT {
            q[i * DIM_OUT + j] = rr[(0, i)].conj() * aa[(0, j)].conj();
        }
    }
    QColumn(q)
}

/// The eight entries of `q` written out term by term.
pub fn q_column_closed_form(r: &MeasurementRecord) -> QColumn {
    let PureState { theta, phi } = r.state;
    let MeasurementSetting {
        alpha,
        beta,
        gamma,
        delta,
    } = r.setting;
    let ta = shifted_angle(alpha, r.outcome.a());
    let tg = shifted_angle(gamma, r.outcome.b());
    let (ch, sh) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let (ca, sa) = (ta.cos(), ta.sin());
    let (cg, sg) = (tg.cos(), tg.sin());
    let e = |arg: f64, modulus: f64| Complex64::from_polar(modulus, arg);
    QColumn([
        e(0.0, ch * ca * cg),
        e(delta, ch * ca * sg),
        e(beta, ch * sa * cg),
        e(beta + delta, ch * sa * sg),
        e(-phi, sh * ca * cg),
        e(delta - phi, sh * ca * sg),
        e(beta - phi, sh * sa * cg),
        e(beta + delta - phi, sh * sa * sg),
    ])
}

/// Precomputed per-record columns with the fast likelihood kernel.
#[derive(Clone, Debug)]
pub struct Likelihood {
    qs: Vec<[Complex64; DIM]>,
    floor: f64,
}

impl Likelihood {
    pub fn new(d: &Dataset, floor: f64) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Likelihood {
            qs: d.records.iter().map(|r| q_column(r).0).collect(),
            floor,
        })
    }

    pub fn len(&self) -> usize {
        self.qs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.qs.is_empty()
    }

    /// `Σ_l log max(‖C q_l‖², floor)` for `C` given by raw parameters.
    pub fn eval_params(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), N_PARAMS);
        // Unpack into a dense upper triangle once per call.
        let mut c = [[Complex64::new(0.0, 0.0); DIM]; DIM];
        let mut k = DIM;
        for (i, row) in c.iter_mut().enumerate() {
            row[i] = Complex64::new(x[i], 0.0);
            for z in &mut row[i + 1..] {
                *z = Complex64::new(x[k], x[k + 1]);
                k += 2;
            }
        }
        let mut total = 0.0;
        for q in &self.qs {
            let mut p = 0.0;
            for (i, row) in c.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for j in i..DIM {
                    acc += row[j] * q[j];
                }
                p += acc.norm_sqr();
            }
            total += p.max(self.floor).ln();
        }
        total
    }

    pub fn eval(&self, c: &CholFactor) -> f64 {
        self.eval_params(c.to_params().as_slice())
    }
}

/// `Σ_l log max(‖C q_l‖², floor)`.
pub fn log_likelihood(c: &CholFactor, d: &Dataset, floor: f64) -> Result<f64> {
    Ok(Likelihood::new(d, floor)?.eval(c))
}

/// `ρᵀ ⊗ F` for one record, from the density matrix and projector.
pub fn record_operator(r: &MeasurementRecord) -> CMat {
    kron(
        &state_density(&r.state).transpose(),
        &povm_element(&r.setting, r.outcome),
    )
}

/// `Σ_l log Tr[S (ρᵀ_l ⊗ F_l)]`, evaluated on `S` directly with full
/// matrices.
pub fn log_likelihood_choi(s: &CMat, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for r in &d.records {
        total += s.matmul(&record_operator(r))?.trace().re.ln();
    }
    Ok(total)
}

/// `L(C) − μ Tr[C†C]`.
pub fn penalized_objective(c: &CholFactor, d: &Dataset, cfg: &EstimatorConfig) -> Result<f64> {
    let ll = log_likelihood(c, d, cfg.prob_floor)?;
    Ok(ll - cfg.mu(d.len()) * c.trace_norm_sq())
}

/// Result of a simplex run.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexOutcome {
    pub point: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Downhill simplex search that maximizes `objective`.
///
/// The initial simplex is `init` plus `initial_step` along each axis. The
/// search stops when the relative spread of vertex values drops below
/// `value_tolerance` or after `max_evals` objective calls, whichever comes
/// first.
pub fn nelder_mead<F>(mut objective: F, init: &[f64], cfg: &EstimatorConfig) -> Result<SimplexOutcome>
where
    F: FnMut(&[f64]) -> f64,
{
    cfg.validate()?;
    let n = init.len();
    if n == 0 {
        return Err(Error::Config("empty parameter vector".into()));
    }
    if cfg.max_evals < n + 1 {
        return Err(Error::Config(format!(
            "max_evals must be at least {} for {n} parameters",
            n + 1
        )));
    }

    let mut evals = 0usize;
    // Work with the negated objective so "lower is better" below.
    let mut f = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = -objective(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let f0 = f(init, &mut evals);
    if !f0.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut vals: Vec<f64> = Vec::with_capacity(n + 1);
    pts.push(init.to_vec());
    vals.push(f0);
    for i in 0..n {
        let mut x = init.to_vec();
        x[i] += cfg.initial_step;
        vals.push(f(&x, &mut evals));
        pts.push(x);
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial2 = vec![0.0; n];
    let mut converged = false;

    loop {
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        let (fb, fw) = (vals[best], vals[worst]);
        let spread = (fw - fb).abs();
        if spread <= cfg.value_tolerance * (fb.abs() + fw.abs()).max(1.0) * 0.5 {
            converged = true;
            break;
        }
        if evals >= cfg.max_evals {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &idx in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&pts[idx]) {
                *c += x;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n as f64);

        let xw = &pts[worst];
        for ((t, c), w) in trial.iter_mut().zip(&centroid).zip(xw) {
            *t = c + cfg.reflection * (c - w);
        }
        let fr = f(&trial, &mut evals);

        if fr < fb {
            if evals < cfg.max_evals {
                for ((e, c), r) in trial2.iter_mut().zip(&centroid).zip(&trial) {
                    *e = c + cfg.expansion * (r - c);
                }
                let fe = f(&trial2, &mut evals);
                if fe < fr {
                    pts[worst].copy_from_slice(&trial2);
                    vals[worst] = fe;
                    continue;
                }
            }
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        if fr < vals[second_worst] {
            pts[worst].copy_from_slice(&trial);
            vals[worst] = fr;
            continue;
        }
        if evals >= cfg.max_evals {
            break;
        }

        // Contract toward the better of the reflected and worst points.
        let outside = fr < fw;
        {
            let xw = &pts[worst];
            for (((t2, c), r), w) in trial2.iter_mut().zip(&centroid).zip(&trial).zip(xw) {
                *t2 = if outside {
                    c + cfg.contraction * (r - c)
                } else {
                    c + cfg.contraction * (w - c)
                };
            }
        }
        let fc = f(&trial2, &mut evals);
        let bar = if outside { fr } else { fw };
        if fc <= bar {
            pts[worst].copy_from_slice(&trial2);
            vals[worst] = fc;
            continue;
        }

        // Shrink toward the best vertex.
        let xb = pts[best].clone();
        for &idx in &order[1..] {
            if evals >= cfg.max_evals {
                break;
            }
            for (x, b) in pts[idx].iter_mut().zip(&xb) {
                *x = b + cfg.shrink * (*x - b);
            }
            vals[idx] = f(&pts[idx], &mut evals);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .expect("nonempty simplex");
    Ok(SimplexOutcome {
        point: pts[best].clone(),
        value: -vals[best],
        evaluations: evals,
        converged,
    })
}

/// Reconstructed Choi matrix and run diagnostics.
#[derive(Clone, Debug)]
pub struct EstimationResult {
    /// `C†C` rescaled to trace `N`.
    pub choi_est: ChoiMatrix,
    /// Best factor found, before rescaling.
    pub factor: CholFactor,
    pub log_likelihood: f64,
    pub penalized_value: f64,
    pub evaluations: usize,
    pub restarts_used: usize,
    /// Whether the last simplex run met the value tolerance.
    pub converged: bool,
    pub tp_residual: f64,
    /// `Tr[C†C]` before rescaling.
    pub trace_of_s: f64,
    pub error_vs_truth: Option<f64>,
}

/// Diagnostics block of the result file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Diagnostics {
    pub k: usize,
    pub log_likelihood: f64,
    pub penalized_value: f64,
    pub evaluations: usize,
    pub restarts_used: usize,
    pub converged: bool,
    pub tp_residual: f64,
    pub trace_of_s: f64,
    pub error_vs_truth: Option<f64>,
}

/// Result file: the Choi schema plus `diagnostics`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EstimationJson {
    #[serde(flatten)]
    pub choi: ChoiJson,
    pub diagnostics: Diagnostics,
}

impl EstimationResult {
    pub fn to_json(&self, k: usize) -> EstimationJson {
        EstimationJson {
            choi: self.choi_est.to_json(),
            diagnostics: Diagnostics {
                k,
                log_likelihood: self.log_likelihood,
                penalized_value: self.penalized_value,
                evaluations: self.evaluations,
                restarts_used: self.restarts_used,
                converged: self.converged,
                tp_residual: self.tp_residual,
                trace_of_s: self.trace_of_s,
                error_vs_truth: self.error_vs_truth,
            },
        }
    }
}

/// Runs the full reconstruction without a reference channel.
pub fn estimate(d: &Dataset, cfg: &EstimatorConfig) -> Result<EstimationResult> {
    estimate_against(d, cfg, None)
}

/// Runs the full reconstruction; when `truth` is given the result carries
/// [`error_metric`] against it.
pub fn estimate_against(d: &Dataset, cfg: &EstimatorConfig, truth: Option<&ChoiMatrix>) -> Result<EstimationResult> {
    cfg.validate()?;
    let lik = Likelihood::new(d, cfg.prob_floor)?;
    let mu = cfg.mu(d.len());
    let objective = |x: &[f64]| lik.eval_params(x) - mu * x.iter().map(|v| v * v).sum::<f64>();

    // ½·1 has trace N = 2 and full rank.
    let init = CholFactor::scaled_identity(0.5).to_params().into_vec();
    let mut run = nelder_mead(objective, &init, cfg)?;
    let mut evaluations = run.evaluations;
    let mut restarts_used = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Restarts probe a converged simplex for premature collapse; a run that
    // ran out of budget is reported as is.
    for _ in 0..cfg.restarts {
        if !run.converged {
            break;
        }
        let start: Vec<f64> = run
            .point
            .iter()
            .map(|x| x + rng.gen_range(-cfg.initial_step..=cfg.initial_step))
            .collect();
        let next = nelder_mead(objective, &start, cfg)?;
        evaluations += next.evaluations;
        restarts_used += 1;
        let gain = next.value - run.value;
        let small = gain < 1e-6 * run.value.abs().max(1.0);
        let next_converged = next.converged;
        if gain > 0.0 {
            run = next;
        }
        if small || !next_converged {
            break;
        }
    }

    let factor = CholFactor::from_params(&ParamVector::new(run.point.clone())?);
    let raw = factor.choi();
    let trace_of_s = raw.trace();
    let choi_est = raw.scaled(DIM_IN as f64 / trace_of_s);
    let error_vs_truth = truth.map(|t| error_metric(&choi_est, t)).transpose()?;
    Ok(EstimationResult {
        tp_residual: tp_residual(&choi_est),
        log_likelihood: lik.eval(&factor),
        penalized_value: run.value,
        evaluations,
        restarts_used,
        converged: run.converged,
        trace_of_s,
        error_vs_truth,
        choi_est,
        factor,
    })
}

fn check_same_dims(a: &ChoiMatrix, b: &ChoiMatrix) -> Result<()> {
    if a.mat().dims() != b.mat().dims() {
        return Err(Error::Dimension(format!(
            "cannot compare {:?} with {:?}",
            a.mat().dims(),
            b.mat().dims()
        )));
    }
    Ok(())
}

/// Mean complex modulus of the elementwise difference.
pub fn error_metric(est: &ChoiMatrix, truth: &ChoiMatrix) -> Result<f64> {
    check_same_dims(est, truth)?;
    let a = est.mat().as_slice();
    let b = truth.mat().as_slice();
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).norm()).sum::<f64>() / a.len() as f64)
}

/// Mean absolute difference of the real parts only.
pub fn error_metric_real(est: &ChoiMatrix, truth: &ChoiMatrix) -> Result<f64> {
    check_same_dims(est, truth)?;
    let a = est.mat().as_slice();
    let b = truth.mat().as_slice();
    Ok(a.iter().zip(b).map(|(x, y)| (x.re - y.re).abs()).sum::<f64>() / a.len() as f64)
}

/// One generate-and-estimate cycle of a scaling study.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub k: usize,
    pub trial: usize,
    pub seed: u64,
    pub error: f64,
    pub error_real: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub k: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingStudy {
    pub trials: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
    /// Least-squares slope of `ln(mean error)` against `ln K`; `None` with
    /// fewer than two distinct `K`.
    pub slope: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `trial` at sample size `k`.
pub fn trial_seed(seed: u64, k: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ k as u64) ^ trial as u64)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Some(sxy / sxx)
}

/// Repeats generate-and-estimate against the cloner for each `K` and
/// summarizes the error.
pub fn scaling_study(k_values: &[usize], trials: usize, seed: u64, cfg: &EstimatorConfig) -> Result<ScalingStudy> {
    scaling_study_with(k_values, trials, seed, cfg, |_| {})
}

/// [`scaling_study`] with a callback after every trial.
pub fn scaling_study_with(
    k_values: &[usize],
    trials: usize,
    seed: u64,
    cfg: &EstimatorConfig,
    mut progress: impl FnMut(&TrialRow),
) -> Result<ScalingStudy> {
    if k_values.is_empty() {
        return Err(Error::Config("empty K grid".into()));
    }
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let truth = clone_choi();
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &k in k_values {
        let mut errs = Vec::with_capacity(trials);
        for t in 0..trials {
            let s = trial_seed(seed, k, t);
            let d = generate_dataset(k, s)?;
            let run_cfg = EstimatorConfig { seed: s, ..cfg.clone() };
            let res = estimate_against(&d, &run_cfg, Some(&truth))?;
            let row = TrialRow {
                k,
                trial: t,
                seed: s,
                error: res.error_vs_truth.expect("truth supplied"),
                error_real: error_metric_real(&res.choi_est, &truth)?,
            };
            progress(&row);
            errs.push(row.error);
            rows.push(row);
        }
        let mean = errs.iter().sum::<f64>() / trials as f64;
        let std = if trials > 1 {
            (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64).sqrt()
        } else {
            0.0
        };
        summary.push(SummaryRow {
            k,
            mean_error: mean,
            std_error: std,
        });
    }
    let lx: Vec<f64> = summary.iter().map(|r| (r.k as f64).ln()).collect();
    let ly: Vec<f64> = summary.iter().map(|r| r.mean_error.ln()).collect();
    Ok(ScalingStudy {
        slope: fit_slope(&lx, &ly),
        trials: rows,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{generate_record, prob_closed, random_direction};
    use crate::matlin::{cholesky_psd, DEFAULT_TOL};
    use std::f64::consts::PI;

    fn random_record(rng: &mut ChaCha8Rng) -> MeasurementRecord {
        let (theta, phi) = random_direction(rng);
        let (alpha, beta) = random_direction(rng);
        let (gamma, delta) = random_direction(rng);
        let o = Outcome::ALL[rng.gen_range(0..4)];
        MeasurementRecord {
            state: PureState { theta, phi },
            setting: MeasurementSetting {
                alpha,
                beta,
                gamma,
                delta,
            },
            outcome: o,
        }
    }

    fn random_factor(rng: &mut ChaCha8Rng) -> CholFactor {
        let x: Vec<f64> = (0..N_PARAMS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        CholFactor::from_params(&ParamVector::new(x).unwrap())
    }

    fn truth_factor() -> CholFactor {
        CholFactor::new(cholesky_psd(clone_choi().mat(), DEFAULT_TOL).unwrap()).unwrap()
    }

    #[test]
    fn param_roundtrip_and_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_factor(&mut rng);
        let p = c.to_params();
        assert_eq!(p.as_slice().len(), 64);
        assert_eq!(CholFactor::from_params(&p), c);
        for i in 0..DIM {
            assert_eq!(c.mat()[(i, i)].im, 0.0);
            for j in 0..i {
                assert_eq!(c.mat()[(i, j)], Complex64::new(0.0, 0.0));
            }
        }
        assert_eq!(p.as_slice()[8], c.mat()[(0, 1)].re);
        assert_eq!(p.as_slice()[9], c.mat()[(0, 1)].im);
        assert!(ParamVector::new(vec![0.0; 63]).is_err());
        assert!(CholFactor::new(CMat::identity(8).scale(Complex64::i())).is_err());
    }

    #[test]
    fn chol_r_cases() {
        let r0 = chol_r(&PureState { theta: 0.0, phi: 0.4 });
        assert!(r0.approx_eq(&CMat::from_real_rows(&[[1.0, 0.0], [0.0, 0.0]]), 1e-15));
        let phi = 0.7;
        let rpi = chol_r(&PureState { theta: PI, phi });
        assert!(rpi[(0, 0)].norm() < 1e-15);
        assert!((rpi[(0, 1)] - Complex64::from_polar(1.0, phi)).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let s = random_record(&mut rng).state;
            let r = chol_r(&s);
            assert!((&r.adjoint() * &r).approx_eq(&state_density(&s).transpose(), 1e-14));
        }
    }

    #[test]
    fn chol_a_cases() {
        let z = MeasurementSetting {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
        };
        let p0 = CMat::from_real_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(chol_a(&z, Outcome::new(1, 1).unwrap()).approx_eq(&kron(&p0, &p0), 1e-15));

        // α = 0, a = −1 gives α̃ = −π/2 and the factor [[0, −e^{−iβ}], [0, 0]].
        let beta = 1.1;
        let f = qubit_factor(0.0, beta, -1);
        assert!(f[(0, 0)].norm() < 1e-15);
        assert!((f[(0, 1)] + Complex64::from_polar(1.0, -beta)).norm() < 1e-15);
        let p1 = CMat::from_real_rows(&[[0.0, 0.0], [0.0, 1.0]]);
        assert!((&f.adjoint() * &f).approx_eq(&p1, 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let r = random_record(&mut rng);
            let a = chol_a(&r.setting, r.outcome);
            assert!((&a.adjoint() * &a).approx_eq(&povm_element(&r.setting, r.outcome), 1e-12));
        }
    }

    #[test]
    fn q_column_identities() {
        let zero = MeasurementRecord {
            state: PureState { theta: 0.0, phi: 0.0 },
            setting: MeasurementSetting {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.0,
                delta: 0.0,
            },
            outcome: Outcome::new(1, 1).unwrap(),
        };
        let q = q_column(&zero);
        assert!((q.0[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(q.0[1..].iter().all(|z| z.norm() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let mut r = random_record(&mut rng);
            let q = q_column(&r);
            assert!((q.norm() - 1.0).abs() < 1e-14);
            let closed = q_column_closed_form(&r);
            for (a, b) in q.0.iter().zip(&closed.0) {
                assert!((a - b).norm() <= 1e-14);
            }
            let col = q.to_column();
            assert!((&col * &col.adjoint()).approx_eq(&record_operator(&r), 1e-12));

            r.state.theta = PI;
            let q = q_column(&r);
            assert!(q.0[..4].iter().all(|z| z.norm() < 1e-15));
        }
    }

    #[test]
    fn likelihood_at_truth_matches_closed_form_probabilities() {
        let d = generate_dataset(500, 5).unwrap();
        let ll = log_likelihood(&truth_factor(), &d, 1e-300).unwrap();
        let oracle: f64 = d
            .records
            .iter()
            .map(|r| prob_closed(&r.state, &r.setting, r.outcome).ln())
            .sum();
        assert!((ll - oracle).abs() <= 1e-10 * oracle.abs());
    }

    #[test]
    fn rank_one_shortcut_matches_full_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for t in 0..5 {
            let c = random_factor(&mut rng);
            let d = generate_dataset(100, 100 + t).unwrap();
            let fast = log_likelihood(&c, &d, 1e-300).unwrap();
            let full = log_likelihood_choi(c.choi().mat(), &d).unwrap();
            assert!((fast - full).abs() <= 1e-10 * full.abs().max(1.0));

            let q = q_column(&d.records[0]).to_column();
            let cq = &c.mat().clone() * &q;
            let s = c.choi();
            let tr = (s.mat() * &(&q * &q.adjoint())).trace();
            assert!((cq.norm().powi(2) - tr.re).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_scaling_and_gauge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let c = random_factor(&mut rng);
        let d = generate_dataset(200, 8).unwrap();
        let ll = log_likelihood(&c, &d, 1e-300).unwrap();
        let doubled = CholFactor::from_params(
            &ParamVector::new(c.to_params().as_slice().iter().map(|x| 2.0 * x).collect()).unwrap(),
        );
        let ll2 = log_likelihood(&doubled, &d, 1e-300).unwrap();
        assert!((ll2 - ll - 200.0 * 4f64.ln()).abs() < 1e-9);

        // Only S = C†C matters: a unitary on the left leaves L unchanged.
        let u = {
            let (_, v) = crate::matlin::hermitian_eig(&{
                let g = random_factor(&mut rng).mat().clone();
                &g + &g.adjoint()
            })
            .unwrap();
            v
        };
        let uc = &u * c.mat();
        let s = &uc.adjoint() * &uc;
        let ll_gauge = log_likelihood_choi(&s, &d).unwrap();
        assert!((ll_gauge - ll).abs() <= 1e-10 * ll.abs());
    }

    #[test]
    fn phase_of_q_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = random_factor(&mut rng);
        let r = generate_record(3, 0);
        let q = q_column(&r);
        let rotated: Vec<Complex64> = q.0.iter().map(|z| z * Complex64::from_polar(1.0, 0.9)).collect();
        let a = (c.mat() * &q.to_column()).norm();
        let b = (c.mat() * &CMat::column(&rotated)).norm();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn floor_guards_annihilated_records() {
        let d = generate_dataset(10, 1).unwrap();
        let zero = CholFactor::scaled_identity(0.0);
        let ll = log_likelihood(&zero, &d, 1e-12).unwrap();
        assert!((ll - 10.0 * 1e-12f64.ln()).abs() < 1e-9);
        assert!(matches!(
            log_likelihood(&zero, &Dataset::default(), 1e-12),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn penalty_uses_k_over_n() {
        let cfg = EstimatorConfig::default();
        assert_eq!(cfg.mu(2), 1.0);
        assert_eq!(cfg.mu(100), 50.0);
        assert_eq!(cfg.mu(10_000), 5000.0);

        let d = generate_dataset(100, 2).unwrap();
        let c = CholFactor::scaled_identity(0.5); // Tr[C†C] = 2
        let ll = log_likelihood(&c, &d, cfg.prob_floor).unwrap();
        let pen = penalized_objective(&c, &d, &cfg).unwrap();
        assert!((ll - pen - 100.0).abs() < 1e-9);

        let free = EstimatorConfig {
            mu_override: Some(0.0),
            ..cfg.clone()
        };
        assert_eq!(penalized_objective(&c, &d, &free).unwrap(), ll);

        let bigger = CholFactor::scaled_identity(0.6);
        let shift = log_likelihood(&bigger, &d, cfg.prob_floor).unwrap() - ll;
        // Remove the likelihood change to isolate the penalty: it grows with ‖C‖².
        let pen_big = penalized_objective(&bigger, &d, &cfg).unwrap() - shift;
        assert!(pen_big < pen);
    }

    #[test]
    fn simplex_finds_quadratic_optimum() {
        let cfg = EstimatorConfig {
            restarts: 0,
            value_tolerance: 1e-14,
            initial_step: 0.5,
            ..Default::default()
        };
        let init = vec![0.0; 64];
        // Restart on the incumbent until a run converges in place.
        let mut x = init;
        for _ in 0..20 {
            let out = nelder_mead(|x| -x.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>(), &x, &cfg).unwrap();
            x = out.point;
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{x:?}");

        let out = nelder_mead(|x| -x.iter().map(|v| v * v).sum::<f64>(), &[0.7, -0.3, 1.2], &cfg).unwrap();
        assert!(out.converged);
        assert!(out.point.iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn simplex_budget_and_monotonicity() {
        let cfg = EstimatorConfig {
            max_evals: 65,
            ..Default::default()
        };
        let out = nelder_mead(|x| -x.iter().map(|v| v * v).sum::<f64>(), &[1.0; 64], &cfg).unwrap();
        assert_eq!(out.evaluations, 65);
        assert!(!out.converged);

        let small = EstimatorConfig {
            max_evals: 64,
            ..Default::default()
        };
        assert!(nelder_mead(|_| 0.0, &[0.0; 64], &small).is_err());
        assert!(matches!(
            nelder_mead(|_| f64::NAN, &[0.0; 4], &EstimatorConfig::default()),
            Err(Error::NonFinite)
        ));

        // Best value never gets worse as the budget grows.
        let f = |x: &[f64]| {
            -x.iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 1.0) * (v - 0.3).powi(2))
                .sum::<f64>()
        };
        let mut last = f64::NEG_INFINITY;
        for budget in [20, 50, 100, 400, 1000] {
            let cfg = EstimatorConfig {
                max_evals: budget,
                ..Default::default()
            };
            let out = nelder_mead(f, &[0.0; 8], &cfg).unwrap();
            assert!(out.value >= last);
            last = out.value;
        }
    }

    #[test]
    fn simplex_is_deterministic() {
        let cfg = EstimatorConfig {
            max_evals: 3000,
            ..Default::default()
        };
        let f = |x: &[f64]| -(x[0] - 1.0).powi(2) - 10.0 * (x[1] - x[0] * x[0]).powi(2);
        let a = nelder_mead(f, &[-1.0, 2.0], &cfg).unwrap();
        let b = nelder_mead(f, &[-1.0, 2.0], &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn error_metric_arithmetic() {
        let t = clone_choi();
        assert_eq!(error_metric(&t, &t).unwrap(), 0.0);
        let mut m = t.mat().clone();
        m[(0, 5)] += Complex64::new(1.0 / 6.0, 0.0);
        m[(5, 0)] += Complex64::new(1.0 / 6.0, 0.0);
        let e = ChoiMatrix::new(2, 4, m).unwrap();
        assert!((error_metric(&e, &t).unwrap() - 2.0 / (6.0 * 64.0)).abs() < 1e-16);
        assert!((error_metric_real(&e, &t).unwrap() - 2.0 / (6.0 * 64.0)).abs() < 1e-16);
        let other = ChoiMatrix::new(2, 2, CMat::identity(4)).unwrap();
        assert!(error_metric(&other, &t).is_err());
    }

    #[test]
    fn estimate_rejects_empty_data() {
        assert!(matches!(
            estimate(&Dataset::default(), &EstimatorConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn slope_fit() {
        let x: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 - 0.5 * v).collect();
        assert!((fit_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(fit_slope(&[1.0], &[1.0]), None);
        assert_eq!(fit_slope(&[1.0, 1.0], &[1.0, 2.0]), None);
    }

    #[test]
    fn trial_seeds_differ() {
        let a = trial_seed(1, 100, 0);
        assert_ne!(a, trial_seed(1, 100, 1));
        assert_ne!(a, trial_seed(1, 101, 0));
        assert_ne!(a, trial_seed(2, 100, 0));
        assert_eq!(a, trial_seed(1, 100, 0));
    }
}
