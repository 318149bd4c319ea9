//! Choi matrices of qubit channels and the 1-to-2 universal cloner.
//!
//! Every Choi matrix here lives on `input ⊗ output`, input first. For the
//! cloner that is `A ⊗ B ⊗ C` with `A` the input qubit and `B`, `C` the two
//! clones, in lexicographic order. With that convention
//!
//! ```text
//! S = Σ_jk |j⟩⟨k| ⊗ E(|j⟩⟨k|)        E(ρ) = Tr_in[(ρᵀ ⊗ 1) S]
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlin::{self, hermitian_eig, kron, partial_trace, CMat};

/// Eigenvalue cutoff used when extracting Kraus operators.
pub const KRAUS_TOL: f64 = 1e-8;

/// Choi matrix of a linear map from `dim_in × dim_in` to `dim_out × dim_out`
/// operators.
#[derive(Clone, Debug, PartialEq)]
pub struct ChoiMatrix {
    dim_in: usize,
    dim_out: usize,
    mat: CMat,
}

impl ChoiMatrix {
    pub fn new(dim_in: usize, dim_out: usize, mat: CMat) -> Result<Self> {
        let n = dim_in * dim_out;
        if mat.dims() != (n, n) {
            return Err(Error::Dimension(format!(
                "a {dim_in}->{dim_out} Choi matrix must be {n}x{n}, got {:?}",
                mat.dims()
            )));
        }
        Ok(ChoiMatrix { dim_in, dim_out, mat })
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn mat(&self) -> &CMat {
        &self.mat
    }

    pub fn into_mat(self) -> CMat {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    /// Same channel dimensions, scaled matrix.
    pub fn scaled(&self, s: f64) -> ChoiMatrix {
        ChoiMatrix {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            mat: self.mat.scale_re(s),
        }
    }

    /// `Tr_out[S]`, which equals the identity for trace-preserving maps.
    pub fn output_trace(&self) -> CMat {
        partial_trace(&self.mat, &[self.dim_in, self.dim_out], &[0]).expect("dimensions fixed at construction")
    }

    /// Smallest eigenvalue of the matrix.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = hermitian_eig(&self.mat)?;
        Ok(vals.last().copied().unwrap_or(0.0))
    }

    pub fn to_json(&self) -> ChoiJson {
        let n = self.mat.rows();
        ChoiJson {
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            mat: (0..n)
                .map(|i| self.mat.row(i).iter().map(|z| [z.re, z.im]).collect())
                .collect(),
        }
    }

    pub fn from_json(json: &ChoiJson) -> Result<Self> {
        let n = json.dim_in * json.dim_out;
        if json.mat.len() != n || json.mat.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "expected a {n}x{n} matrix for dims ({}, {})",
                json.dim_in, json.dim_out
            )));
        }
        let data = json
            .mat
            .iter()
            .flatten()
            .map(|&[re, im]| Complex64::new(re, im))
            .collect();
        ChoiMatrix::new(json.dim_in, json.dim_out, CMat::from_vec(n, n, data)?)
    }
}

/// Wire form of a Choi matrix: `{"dim_in", "dim_out", "mat": [[[re, im], ...], ...]}`,
/// rows in input-first order.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ChoiJson {
    pub dim_in: usize,
    pub dim_out: usize,
    pub mat: Vec<Vec<[f64; 2]>>,
}

/// Kraus operators `A_k`, each `dim_out × dim_in`.
#[derive(Clone, Debug)]
pub struct KrausSet {
    ops: Vec<CMat>,
}

impl KrausSet {
    pub fn new(ops: Vec<CMat>) -> Result<Self> {
        if let Some(first) = ops.first() {
            if ops.iter().any(|a| a.dims() != first.dims()) {
                return Err(Error::Dimension("Kraus operators differ in shape".into()));
            }
        }
        Ok(KrausSet { ops })
    }

    pub fn ops(&self) -> &[CMat] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `Σ_k A_k ρ A_k†`.
    pub fn apply(&self, rho: &CMat) -> Result<CMat> {
        let mut acc: Option<CMat> = None;
        for a in &self.ops {
            let term = a.matmul(rho)?.matmul(&a.adjoint())?;
            acc = Some(match acc {
                Some(sum) => &sum + &term,
                None => term,
            });
        }
        acc.ok_or_else(|| Error::Dimension("empty Kraus set".into()))
    }

    /// `Σ_k A_k† A_k`, the identity for a trace-preserving set.
    pub fn completeness(&self) -> CMat {
        let n = self.ops.first().map_or(0, |a| a.cols());
        self.ops
            .iter()
            .fold(CMat::zeros(n, n), |acc, a| &acc + &(&a.adjoint() * a))
    }
}

/// Normalized Pauli operators `V_i = σ_i / √2`, an orthonormal basis for 2×2
/// operators under the Hilbert–Schmidt inner product.
pub struct PauliBasis {
    ops: [CMat; 4],
}

impl PauliBasis {
    pub fn new() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        PauliBasis {
            ops: matlin::pauli().map(|p| p.scale_re(s)),
        }
    }

    pub fn ops(&self) -> &[CMat; 4] {
        &self.ops
    }

    /// Expansion coefficients `Tr[V_i† O]`.
    pub fn coefficients(&self, o: &CMat) -> [Complex64; 4] {
        let mut out = [Complex64::new(0.0, 0.0); 4];
        for (c, v) in out.iter_mut().zip(&self.ops) {
            *c = (&v.adjoint() * o).trace();
        }
        out
    }

    /// `Σ_i c_i V_i`.
    pub fn synthesize(&self, coeffs: &[Complex64; 4]) -> CMat {
        self.ops
            .iter()
            .zip(coeffs)
            .fold(CMat::zeros(2, 2), |acc, (v, &c)| &acc + &v.scale(c))
    }
}

impl Default for PauliBasis {
    fn default() -> Self {
        Self::new()
    }
}

/// Unnormalized maximally entangled vector `Σ_k |k⟩ ⊗ |k⟩` as an `n²×1` column.
pub fn max_entangled(n: usize) -> CMat {
    let mut v = CMat::zeros(n * n, 1);
    for k in 0..n {
        v[(k * n + k, 0)] = Complex64::new(1.0, 0.0);
    }
    v
}

/// Projector onto the symmetric subspace of two qubits.
pub fn symmetric_projector() -> CMat {
    CMat::from_real_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.5, 0.5, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

/// Checks that `rho` is a valid qubit density matrix.
pub fn validate_density(rho: &CMat, tol: f64) -> Result<()> {
    if rho.dims() != (2, 2) {
        return Err(Error::InvalidState(format!("expected 2x2, got {:?}", rho.dims())));
    }
    if !rho.is_hermitian(tol) {
        return Err(Error::InvalidState("not Hermitian".into()));
    }
    let tr = rho.trace();
    if (tr - Complex64::new(1.0, 0.0)).norm() > tol {
        return Err(Error::InvalidState(format!("trace {tr} is not 1")));
    }
    let (vals, _) = hermitian_eig(rho)?;
    if vals[1] < -tol {
        return Err(Error::InvalidState(format!("negative eigenvalue {:.3e}", vals[1])));
    }
    Ok(())
}

/// The optimal symmetric 1-to-2 qubit cloner, `ρ ↦ (2/3) s₂ (ρ ⊗ 1) s₂`.
pub fn clone_apply(rho: &CMat) -> Result<CMat> {
    validate_density(rho, matlin::DEFAULT_TOL)?;
    Ok(clone_apply_linear(rho))
}

/// The cloner's linear extension, valid on any 2×2 operator.
pub fn clone_apply_linear(op: &CMat) -> CMat {
    let s2 = symmetric_projector();
    let lifted = kron(op, &CMat::identity(2));
    (&(&s2 * &lifted) * &s2).scale_re(2.0 / 3.0)
}

/// Choi matrix `Σ_i V_i* ⊗ E(V_i)` over an orthonormal operator basis of
/// the input space.
pub fn choi_from_basis<F>(action: F, basis: &[CMat], n: usize, m: usize) -> Result<ChoiMatrix>
where
    F: Fn(&CMat) -> CMat,
{
    let mut s = CMat::zeros(n * m, n * m);
    for v in basis {
        let out = action(v);
        if out.dims() != (m, m) {
            return Err(Error::Dimension(format!(
                "channel produced {:?}, expected {m}x{m}",
                out.dims()
            )));
        }
        s = &s + &kron(&v.conj(), &out);
    }
    ChoiMatrix::new(n, m, s)
}

/// Matrix units `|j⟩⟨k|`, an orthonormal operator basis in any dimension.
pub fn matrix_units(n: usize) -> Vec<CMat> {
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for k in 0..n {
            let mut e = CMat::zeros(n, n);
            e[(j, k)] = Complex64::new(1.0, 0.0);
            out.push(e);
        }
    }
    out
}

/// Choi matrix of a linear map given by its action.
///
/// Qubit inputs are expanded in the normalized Pauli basis, other
/// dimensions in matrix units. The result is independent of the basis.
pub fn choi_from_action<F>(action: F, n: usize, m: usize) -> Result<ChoiMatrix>
where
    F: Fn(&CMat) -> CMat,
{
    if n == 2 {
        choi_from_basis(action, PauliBasis::new().ops(), n, m)
    } else {
        choi_from_basis(action, &matrix_units(n), n, m)
    }
}

/// Choi matrix as `(1 ⊗ E)(|Ψ⟩⟨Ψ|)`, acting with the channel block by block
/// on the second half of the maximally entangled projector.
pub fn choi_from_entangled<F>(action: F, n: usize, m: usize) -> Result<ChoiMatrix>
where
    F: Fn(&CMat) -> CMat,
{
    let psi = max_entangled(n);
    let proj = &psi * &psi.adjoint();
    let mut s = CMat::zeros(n * m, n * m);
    for j in 0..n {
        for k in 0..n {
            // Block (j, k) of |Ψ⟩⟨Ψ| in the input index is an n×n operator
            // on the second copy.
            let mut block = CMat::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    block[(a, b)] = proj[(j * n + a, k * n + b)];
                }
            }
            let out = action(&block);
            if out.dims() != (m, m) {
                return Err(Error::Dimension(format!(
                    "channel produced {:?}, expected {m}x{m}",
                    out.dims()
                )));
            }
            for a in 0..m {
                for b in 0..m {
                    s[(j * m + a, k * m + b)] = out[(a, b)];
                }
            }
        }
    }
    ChoiMatrix::new(n, m, s)
}

/// Choi matrix of the universal cloner, entered as exact sixths.
pub fn clone_choi() -> ChoiMatrix {
    #[rustfmt::skip]
    let sixths: [[f64; 8]; 8] = [
        [4.0, 0.0, 0.0, 0.0, 0.0, 2.0, 2.0, 0.0],
        [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0],
        [0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 2.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        [2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0],
        [0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0, 4.0],
    ];
    let rows: Vec<Vec<f64>> = sixths.iter().map(|r| r.iter().map(|x| x / 6.0).collect()).collect();
    ChoiMatrix::new(2, 4, CMat::from_real_rows(&rows)).expect("8x8 literal")
}

/// `E(ρ) = Tr_in[(ρᵀ ⊗ 1_out) S]`.
pub fn apply_choi(s: &ChoiMatrix, rho: &CMat) -> Result<CMat> {
    let (n, m) = (s.dim_in, s.dim_out);
    if rho.dims() != (n, n) {
        return Err(Error::Dimension(format!("input must be {n}x{n}, got {:?}", rho.dims())));
    }
    let lifted = kron(&rho.transpose(), &CMat::identity(m));
    partial_trace(&lifted.matmul(&s.mat)?, &[n, m], &[1])
}

/// Kraus operators from the spectral decomposition of `S`, one per
/// eigenvalue above `tol`.
pub fn kraus_from_choi(s: &ChoiMatrix, tol: f64) -> Result<KrausSet> {
    let (vals, vecs) = hermitian_eig(&s.mat)?;
    let scale = s.mat.max_abs().max(1.0);
    if let Some(&lowest) = vals.last() {
        if lowest < -tol * scale {
            return Err(Error::NotPsd(lowest));
        }
    }
    let (n, m) = (s.dim_in, s.dim_out);
    let mut ops = Vec::new();
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= tol {
            continue;
        }
        let w = lam.sqrt();
        let mut a = CMat::zeros(m, n);
        for i in 0..n {
            for j in 0..m {
                a[(j, i)] = vecs[(i * m + j, k)] * w;
            }
        }
        ops.push(a);
    }
    KrausSet::new(ops)
}

/// Largest elementwise deviation of `Tr_out[S]` from the identity.
pub fn tp_residual(s: &ChoiMatrix) -> f64 {
    s.output_trace().max_deviation(&CMat::identity(s.dim_in))
}

/// Two-qubit swap.
pub fn swap_gate() -> CMat {
    CMat::from_real_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}
