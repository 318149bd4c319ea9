//! Simulated measurement campaign: random pure qubits into the cloner,
//! independent random projective measurements on each clone.
//!
//! Each record draws its randomness from its own ChaCha stream, selected by
//! record index under a common seed, so any subset of records can be
//! regenerated independently of the others.

use std::f64::consts::{PI, TAU};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::ChoiMatrix;
use crate::error::{Error, Result};
use crate::matlin::{kron, pauli, CMat};

/// Pure qubit state `cos(θ/2)|0⟩ + e^{iφ} sin(θ/2)|1⟩`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PureState {
    pub theta: f64,
    pub phi: f64,
}

/// Directions of the two clone measurements: `(alpha, beta)` for clone B,
/// `(gamma, delta)` for clone C, each as (polar, azimuth).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementSetting {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Measurement result on the two clones, each `±1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Outcome {
    a: i8,
    b: i8,
}

impl Outcome {
    /// Sampling order for the inverse CDF.
    pub const ALL: [Outcome; 4] = [
        Outcome { a: 1, b: 1 },
        Outcome { a: 1, b: -1 },
        Outcome { a: -1, b: 1 },
        Outcome { a: -1, b: -1 },
    ];

    pub fn new(a: i8, b: i8) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b)] {
            if v != 1 && v != -1 {
                return Err(Error::Config(format!("outcome {name} must be +1 or -1, got {v}")));
            }
        }
        Ok(Outcome { a, b })
    }

    pub fn a(self) -> i8 {
        self.a
    }

    pub fn b(self) -> i8 {
        self.b
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeasurementRecord {
    pub state: PureState,
    pub setting: MeasurementSetting,
    pub outcome: Outcome,
}

/// An ordered list of records plus the seed that produced them (0 when
/// loaded from elsewhere).
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<MeasurementRecord>,
    pub seed: u64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Isotropic direction on the sphere as (polar, azimuth).
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> (f64, f64) {
    let cos_polar: f64 = rng.gen_range(-1.0..=1.0);
    let azimuth: f64 = rng.gen_range(0.0..TAU);
    (cos_polar.acos(), azimuth)
}

fn bloch(polar: f64, azimuth: f64) -> [f64; 3] {
    [polar.sin() * azimuth.cos(), polar.sin() * azimuth.sin(), polar.cos()]
}

/// `½(1 + σ·v)` for a Bloch vector `v`, scaled by the sign of the outcome.
fn half_projector(v: [f64; 3], sign: f64) -> CMat {
    let [id, sx, sy, sz] = pauli();
    let mut m = id;
    for (s, comp) in [sx, sy, sz].iter().zip(v) {
        m = &m + &s.scale_re(sign * comp);
    }
    m.scale_re(0.5)
}

/// Density matrix `½(1 + σ·n)` of a pure state.
pub fn state_density(s: &PureState) -> CMat {
    half_projector(bloch(s.theta, s.phi), 1.0)
}

/// Amplitudes `(cos(θ/2), e^{iφ} sin(θ/2))`.
pub fn state_vector(s: &PureState) -> [Complex64; 2] {
    [
        Complex64::new((s.theta / 2.0).cos(), 0.0),
        Complex64::from_polar((s.theta / 2.0).sin(), s.phi),
    ]
}

/// Product projector `¼(1 + a σ·r) ⊗ (1 + b σ·t)`.
pub fn povm_element(m: &MeasurementSetting, o: Outcome) -> CMat {
    let fb = half_projector(bloch(m.alpha, m.beta), o.a as f64);
    let fc = half_projector(bloch(m.gamma, m.delta), o.b as f64);
    kron(&fb, &fc)
}

/// Outcome probability for the ideal cloner, in closed form.
pub fn prob_closed(s: &PureState, m: &MeasurementSetting, o: Outcome) -> f64 {
    let (a, b) = (o.a as f64, o.b as f64);
    let (st, ct) = s.theta.sin_cos();
    let (sa, ca) = m.alpha.sin_cos();
    let (sg, cg) = m.gamma.sin_cos();
    0.25 + (a * ca + b * cg) * ct / 6.0
        + (a * sa * (m.beta - s.phi).cos() + b * sg * (m.delta - s.phi).cos()) * st / 6.0
        + a * b * (ca * cg + sa * sg * (m.delta - m.beta).cos()) / 12.0
}

/// Outcome probability `Tr[(ρᵀ ⊗ F) S]` for an arbitrary qubit-to-two-qubit
/// Choi matrix.
pub fn prob_trace(s: &PureState, m: &MeasurementSetting, o: Outcome, choi: &ChoiMatrix) -> Result<f64> {
    if choi.dim_in() != 2 || choi.dim_out() != 4 {
        return Err(Error::Dimension(format!(
            "expected a 2->4 Choi matrix, got {}->{}",
            choi.dim_in(),
            choi.dim_out()
        )));
    }
    let op = kron(&state_density(s).transpose(), &povm_element(m, o));
    Ok(op.matmul(choi.mat())?.trace().re)
}

/// Draws an outcome from the ideal cloner's statistics with one uniform
/// variate and the fixed order `++, +−, −+, −−`.
pub fn sample_outcome<R: Rng + ?Sized>(s: &PureState, m: &MeasurementSetting, rng: &mut R) -> Outcome {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for o in &Outcome::ALL[..3] {
        cum += prob_closed(s, m, *o);
        if u < cum {
            return *o;
        }
    }
    Outcome::ALL[3]
}

/// Generator for record `index` under `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one record from its own stream.
pub fn generate_record(seed: u64, index: u64) -> MeasurementRecord {
    let mut rng = record_rng(seed, index);
    let (theta, phi) = random_direction(&mut rng);
    let (alpha, beta) = random_direction(&mut rng);
    let (gamma, delta) = random_direction(&mut rng);
    let state = PureState { theta, phi };
    let setting = MeasurementSetting {
        alpha,
        beta,
        gamma,
        delta,
    };
    let outcome = sample_outcome(&state, &setting, &mut rng);
    MeasurementRecord {
        state,
        setting,
        outcome,
    }
}

/// `k` simulated records from the ideal cloner.
pub fn generate_dataset(k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset {
        records: (0..k as u64).map(|i| generate_record(seed, i)).collect(),
        seed,
    })
}

/// `k` simulated records from the channel with Choi matrix `choi`, sampled
/// with the trace-form probabilities. Settings are drawn exactly as in
/// [`generate_dataset`].
pub fn generate_dataset_from(choi: &ChoiMatrix, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut records = Vec::with_capacity(k);
    for i in 0..k as u64 {
        let mut rng = record_rng(seed, i);
        let (theta, phi) = random_direction(&mut rng);
        let (alpha, beta) = random_direction(&mut rng);
        let (gamma, delta) = random_direction(&mut rng);
        let state = PureState { theta, phi };
        let setting = MeasurementSetting {
            alpha,
            beta,
            gamma,
            delta,
        };
        let u: f64 = rng.gen();
        let mut outcome = Outcome::ALL[3];
        let mut cum = 0.0;
        for o in &Outcome::ALL[..3] {
            cum += prob_trace(&state, &setting, *o, choi)?;
            if u < cum {
                outcome = *o;
                break;
            }
        }
        records.push(MeasurementRecord {
            state,
            setting,
            outcome,
        });
    }
    Ok(Dataset { records, seed })
}

/// One JSON-lines record.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RecordLine {
    pub theta: f64,
    pub phi: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub a: i64,
    pub b: i64,
}

/// Optional first line of a dataset file.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HeaderLine {
    pub k: usize,
    pub seed: u64,
}

impl From<&MeasurementRecord> for RecordLine {
    fn from(r: &MeasurementRecord) -> Self {
        RecordLine {
            theta: r.state.theta,
            phi: r.state.phi,
            alpha: r.setting.alpha,
            beta: r.setting.beta,
            gamma: r.setting.gamma,
            delta: r.setting.delta,
            a: r.outcome.a as i64,
            b: r.outcome.b as i64,
        }
    }
}

fn check_polar(name: &str, v: f64) -> std::result::Result<(), String> {
    if v.is_finite() && (0.0..=PI).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} = {v} outside [0, pi]"))
    }
}

fn check_azimuth(name: &str, v: f64) -> std::result::Result<(), String> {
    if v.is_finite() && (0.0..TAU).contains(&v) {
        Ok(())
    } else {
        Err(format!("{name} = {v} outside [0, 2pi)"))
    }
}

fn check_sign(name: &str, v: i64) -> std::result::Result<i8, String> {
    match v {
        1 => Ok(1),
        -1 => Ok(-1),
        _ => Err(format!("{name} = {v} is not +1 or -1")),
    }
}

impl TryFrom<RecordLine> for MeasurementRecord {
    type Error = String;

    fn try_from(l: RecordLine) -> std::result::Result<Self, String> {
        check_polar("theta", l.theta)?;
        check_azimuth("phi", l.phi)?;
        check_polar("alpha", l.alpha)?;
        check_azimuth("beta", l.beta)?;
        check_polar("gamma", l.gamma)?;
        check_azimuth("delta", l.delta)?;
        let a = check_sign("a", l.a)?;
        let b = check_sign("b", l.b)?;
        Ok(MeasurementRecord {
            state: PureState {
                theta: l.theta,
                phi: l.phi,
            },
            setting: MeasurementSetting {
                alpha: l.alpha,
                beta: l.beta,
                gamma: l.gamma,
                delta: l.delta,
            },
            outcome: Outcome { a, b },
        })
    }
}

/// Writes the JSON-lines form, one record per line, optionally preceded by
/// a `{"k", "seed"}` header line.
pub fn write_dataset_to<W: Write>(d: &Dataset, mut w: W, header: bool) -> Result<()> {
    if header {
        let h = HeaderLine {
            k: d.len(),
            seed: d.seed,
        };
        serde_json::to_writer(&mut w, &h)?;
        writeln!(w)?;
    }
    for r in &d.records {
        serde_json::to_writer(&mut w, &RecordLine::from(r))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(d: &Dataset, path: &Path, header: bool) -> Result<()> {
    write_dataset_to(d, BufWriter::new(File::create(path)?), header)
}

/// Parses the JSON-lines form. The header is optional; blank lines are
/// skipped. Errors carry the 1-based line number.
pub fn read_dataset_from<R: BufRead>(r: R) -> Result<Dataset> {
    let mut d = Dataset::default();
    let mut declared_k = None;
    for (i, line) in r.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno, msg };
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?;
        if d.records.is_empty() && declared_k.is_none() && value.get("k").is_some() {
            let h: HeaderLine = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            declared_k = Some(h.k);
            d.seed = h.seed;
            continue;
        }
        let rec: RecordLine = serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        d.records.push(MeasurementRecord::try_from(rec).map_err(parse_err)?);
    }
    if let Some(k) = declared_k {
        if k != d.len() {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header declares k = {k} but file has {} records", d.len()),
            });
        }
    }
    Ok(d)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    read_dataset_from(BufReader::new(File::open(path)?))
}

/// CSV with columns `theta,phi,alpha,beta,gamma,delta,a,b`.
pub fn write_dataset_csv<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    writeln!(w, "theta,phi,alpha,beta,gamma,delta,a,b")?;
    for r in &d.records {
        let l = RecordLine::from(r);
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            l.theta, l.phi, l.alpha, l.beta, l.gamma, l.delta, l.a, l.b
        )?;
    }
    w.flush()?;
    Ok(())
}
