//! Dense complex operator kernel on small composite Hilbert spaces.
//!
//! Basis convention: for a qubit, index 0 is the σ^z = +1 eigenstate and
//! index 1 the σ^z = −1 eigenstate. `σ_-` maps index 0 to index 1. Composite
//! basis indices are row-major over the layout's factors, the first factor
//! being the most significant digit; qubits always precede the bosonic modes.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
pub use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subsystem {
    Qubit(usize),
    /// Input mode A.
    InputMode,
    /// Readout mode B.
    ReadoutMode,
}

impl fmt::Display for Subsystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Subsystem::Qubit(j) => write!(f, "q{j}"),
            Subsystem::InputMode => f.write_str("A"),
            Subsystem::ReadoutMode => f.write_str("B"),
        }
    }
}

/// Ordered tensor-product structure: qubits first, then mode A, then mode B.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertLayout {
    dims: Vec<usize>,
    labels: Vec<Subsystem>,
    strides: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(
        n_qubits: usize,
        input_levels: Option<usize>,
        readout_levels: Option<usize>,
    ) -> Result<Self> {
        let mut dims = vec![2; n_qubits];
        let mut labels: Vec<Subsystem> = (0..n_qubits).map(Subsystem::Qubit).collect();
        if let Some(m) = input_levels {
            dims.push(m);
            labels.push(Subsystem::InputMode);
        }
        if let Some(m) = readout_levels {
            dims.push(m);
            labels.push(Subsystem::ReadoutMode);
        }
        if dims.is_empty() {
            return invalid("layout needs at least one subsystem");
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return invalid(format!("subsystem dimension {d} < 2"));
        }
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Ok(Self {
            dims,
            labels,
            strides,
        })
    }

    pub fn qubits(n: usize) -> Result<Self> {
        Self::new(n, None, None)
    }

    pub fn shared(self) -> Arc<Self> {
        Arc::new(self)
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn labels(&self) -> &[Subsystem] {
        &self.labels
    }

    pub fn n_qubits(&self) -> usize {
        self.labels
            .iter()
            .filter(|l| matches!(l, Subsystem::Qubit(_)))
            .count()
    }

    pub fn position(&self, s: Subsystem) -> Result<usize> {
        self.labels
            .iter()
            .position(|&l| l == s)
            .ok_or_else(|| Error::InvalidArgument(format!("subsystem {s} not in layout")))
    }

    pub fn levels(&self, s: Subsystem) -> Result<usize> {
        Ok(self.dims[self.position(s)?])
    }

    pub fn stride(&self, pos: usize) -> usize {
        self.strides[pos]
    }

    /// Composite basis index from per-factor digits.
    pub fn index(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.dims.len());
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    pub fn digit(&self, index: usize, pos: usize) -> usize {
        (index / self.strides[pos]) % self.dims[pos]
    }

    pub fn digits(&self, index: usize) -> Vec<usize> {
        (0..self.dims.len()).map(|p| self.digit(index, p)).collect()
    }
}

/// Dense square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<C64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| if i == j { ONE } else { ZERO })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn diagonal(diag: &[C64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (k, &d) in diag.iter().enumerate() {
            m[(k, k)] = d;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.n, |i, j| self[(j, i)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.n, rhs.n, "matrix dimension mismatch");
        let n = self.n;
        let mut out = vec![ZERO; n * n];
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let rrow = &rhs.data[k * n..(k + 1) * n];
                for (o, &b) in row.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        Self { n, data: out }
    }

    pub fn commutator(&self, rhs: &Self) -> Self {
        &self.matmul(rhs) - &rhs.matmul(self)
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        let (n, m) = (self.n, rhs.n);
        Self::from_fn(n * m, |i, j| self[(i / m, j / m)] * rhs[(i % m, j % m)])
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|&x| x * c).collect(),
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                self.data[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.n).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.n, other.n);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// max |M − M†|
    pub fn hermiticity_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..self.n {
            for j in i..self.n {
                err = err.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        err
    }

    pub fn one_norm(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Matrix exponential by scaling and squaring of a Taylor series.
    pub fn expm(&self) -> Self {
        let norm = self.one_norm();
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scaled = self.scale(ONE / 2f64.powi(squarings as i32));
        let mut result = Self::identity(self.n);
        let mut term = Self::identity(self.n);
        for k in 1..=40 {
            term = term.matmul(&scaled).scale(C64::new(1.0 / k as f64, 0.0));
            result += &term;
            if term.max_abs() < 1e-18 {
                break;
            }
        }
        for _ in 0..squarings {
            result = result.matmul(&result);
        }
        result
    }

    /// Eigenvalues (ascending) and column eigenvectors of a Hermitian matrix.
    pub fn hermitian_eigen(&self) -> (Vec<f64>, Matrix) {
        let m = DMatrix::from_fn(self.n, self.n, |i, j| self[(i, j)]);
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let vectors = Self::from_fn(self.n, |i, j| eig.eigenvectors[(i, order[j])]);
        (values, vectors)
    }

    pub fn hermitian_eigenvalues(&self) -> Vec<f64> {
        self.hermitian_eigen().0
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.n + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.n + j]
    }
}

impl AddAssign<&Matrix> for Matrix {
    fn add_assign(&mut self, rhs: &Matrix) {
        assert_eq!(self.n, rhs.n);
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.n, rhs.n);
        Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl Mul<f64> for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: f64) -> Matrix {
        self.scale(C64::new(rhs, 0.0))
    }
}

/// Truncated bosonic lowering operator: ⟨n−1|a|n⟩ = √n.
pub fn annihilation(levels: usize) -> Result<Matrix> {
    if levels < 2 {
        return invalid(format!(
            "annihilation needs at least 2 levels, got {levels}"
        ));
    }
    let mut a = Matrix::zeros(levels);
    for n in 1..levels {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(a)
}

pub fn creation(levels: usize) -> Result<Matrix> {
    Ok(annihilation(levels)?.adjoint())
}

pub fn number(levels: usize) -> Result<Matrix> {
    let a = annihilation(levels)?;
    Ok(a.adjoint().matmul(&a))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PauliAxis {
    X,
    Y,
    Z,
    /// σ_+ : σ^z = −1 → σ^z = +1
    Raising,
    /// σ_- : σ^z = +1 → σ^z = −1
    Lowering,
}

impl FromStr for PauliAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Self::X),
            "y" | "Y" => Ok(Self::Y),
            "z" | "Z" => Ok(Self::Z),
            "+" | "plus" | "raising" => Ok(Self::Raising),
            "-" | "minus" | "lowering" => Ok(Self::Lowering),
            other => invalid(format!("unknown Pauli axis tag `{other}`")),
        }
    }
}

pub fn pauli(axis: PauliAxis) -> Matrix {
    let c = |re: f64, im: f64| C64::new(re, im);
    match axis {
        PauliAxis::X => Matrix::from_rows(&[&[ZERO, ONE], &[ONE, ZERO]]),
        PauliAxis::Y => Matrix::from_rows(&[&[ZERO, c(0.0, -1.0)], &[c(0.0, 1.0), ZERO]]),
        PauliAxis::Z => Matrix::from_rows(&[&[ONE, ZERO], &[ZERO, -ONE]]),
        PauliAxis::Raising => Matrix::from_rows(&[&[ZERO, ONE], &[ZERO, ZERO]]),
        PauliAxis::Lowering => Matrix::from_rows(&[&[ZERO, ZERO], &[ONE, ZERO]]),
    }
}

/// Operator on the full composite space of a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    layout: Arc<HilbertLayout>,
    matrix: Matrix,
}

impl Operator {
    pub fn new(layout: Arc<HilbertLayout>, matrix: Matrix) -> Result<Self> {
        if matrix.dim() != layout.dim() {
            return invalid(format!(
                "operator dimension {} does not match layout dimension {}",
                matrix.dim(),
                layout.dim()
            ));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: &Arc<HilbertLayout>) -> Self {
        Self {
            matrix: Matrix::zeros(layout.dim()),
            layout: Arc::clone(layout),
        }
    }

    pub fn identity(layout: &Arc<HilbertLayout>) -> Self {
        Self {
            matrix: Matrix::identity(layout.dim()),
            layout: Arc::clone(layout),
        }
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn adjoint(&self) -> Self {
        self.with_matrix(self.matrix.adjoint())
    }

    pub fn scale(&self, c: C64) -> Self {
        self.with_matrix(self.matrix.scale(c))
    }

    pub fn product(&self, rhs: &Operator) -> Self {
        self.check_same(rhs);
        self.with_matrix(self.matrix.matmul(&rhs.matrix))
    }

    pub fn commutator(&self, rhs: &Operator) -> Self {
        self.check_same(rhs);
        self.with_matrix(self.matrix.commutator(&rhs.matrix))
    }

    /// self += c · rhs
    pub fn add_scaled(&mut self, c: C64, rhs: &Operator) {
        self.check_same(rhs);
        for (a, b) in self.matrix.data.iter_mut().zip(&rhs.matrix.data) {
            *a += c * b;
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.matrix.hermiticity_error() < tol
    }

    pub fn apply(&self, state: &StateVector) -> Result<StateVector> {
        check_layouts(&self.layout, &state.layout)?;
        Ok(StateVector {
            layout: Arc::clone(&self.layout),
            amps: self.matrix.apply(&state.amps),
        })
    }

    pub fn to_sparse(&self) -> SparseOperator {
        SparseOperator::from_matrix(Arc::clone(&self.layout), &self.matrix)
    }

    fn with_matrix(&self, matrix: Matrix) -> Self {
        Self {
            layout: Arc::clone(&self.layout),
            matrix,
        }
    }

    fn check_same(&self, rhs: &Operator) {
        assert!(
            Arc::ptr_eq(&self.layout, &rhs.layout) || *self.layout == *rhs.layout,
            "operators live on different layouts"
        );
    }
}

fn check_layouts(a: &Arc<HilbertLayout>, b: &Arc<HilbertLayout>) -> Result<()> {
    if Arc::ptr_eq(a, b) || **a == **b {
        Ok(())
    } else {
        invalid("layout mismatch")
    }
}

/// Embed a tensor product of local operators, one per distinct subsystem,
/// with identity on every other factor.
pub fn embed_product(
    factors: &[(Subsystem, &Matrix)],
    layout: &Arc<HilbertLayout>,
) -> Result<Operator> {
    let mut located = Vec::with_capacity(factors.len());
    for (s, m) in factors {
        let pos = layout.position(*s)?;
        if m.dim() != layout.dims()[pos] {
            return invalid(format!(
                "operator of dimension {} cannot act on {s} with {} levels",
                m.dim(),
                layout.dims()[pos]
            ));
        }
        if located.iter().any(|&(p, _)| p == pos) {
            return invalid(format!("subsystem {s} appears twice in product"));
        }
        located.push((pos, *m));
    }
    let dim = layout.dim();
    let mut out = Matrix::zeros(dim);
    let mut entries: Vec<(usize, C64)> = Vec::new();
    let mut next: Vec<(usize, C64)> = Vec::new();
    for col in 0..dim {
        entries.clear();
        entries.push((col, ONE));
        for &(pos, m) in &located {
            next.clear();
            let stride = layout.stride(pos);
            for &(row, v) in &entries {
                let d = layout.digit(row, pos);
                for d2 in 0..m.dim() {
                    let x = m[(d2, d)];
                    if x != ZERO {
                        next.push(((row + d2 * stride) - d * stride, v * x));
                    }
                }
            }
            std::mem::swap(&mut entries, &mut next);
        }
        for &(row, v) in &entries {
            out[(row, col)] += v;
        }
    }
    Operator::new(Arc::clone(layout), out)
}

pub fn embed(op: &Matrix, target: Subsystem, layout: &Arc<HilbertLayout>) -> Result<Operator> {
    embed_product(&[(target, op)], layout)
}

/// Compressed-row copy of an operator for repeated application.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    layout: Arc<HilbertLayout>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub fn from_matrix(layout: Arc<HilbertLayout>, m: &Matrix) -> Self {
        let n = m.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let v = m[(i, j)];
                if v != ZERO {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            layout,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn is_zero(&self) -> bool {
        self.vals.is_empty()
    }

    /// out = M x
    pub fn apply_into(&self, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = acc;
        }
    }

    /// out += c · M x
    pub fn apply_add_into(&self, c: C64, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o += c * acc;
        }
    }

    /// ⟨x|M|x⟩ without allocating.
    pub fn expectation(&self, x: &[C64]) -> C64 {
        let mut total = ZERO;
        for (i, xi) in x.iter().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            total += xi.conj() * acc;
        }
        total
    }
}

/// Complex amplitude vector over a layout.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    layout: Arc<HilbertLayout>,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn new(layout: Arc<HilbertLayout>, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != layout.dim() {
            return invalid(format!(
                "state length {} does not match layout dimension {}",
                amps.len(),
                layout.dim()
            ));
        }
        Ok(Self { layout, amps })
    }

    pub fn basis(layout: &Arc<HilbertLayout>, digits: &[usize]) -> Result<Self> {
        if digits.len() != layout.dims().len()
            || digits.iter().zip(layout.dims()).any(|(d, n)| d >= n)
        {
            return invalid(format!("basis digits {digits:?} outside layout"));
        }
        let mut amps = vec![ZERO; layout.dim()];
        amps[layout.index(digits)] = ONE;
        Self::new(Arc::clone(layout), amps)
    }

    /// Tensor product of one local state per factor, in layout order.
    pub fn product(layout: &Arc<HilbertLayout>, factors: &[Vec<C64>]) -> Result<Self> {
        if factors.len() != layout.dims().len()
            || factors
                .iter()
                .zip(layout.dims())
                .any(|(f, &n)| f.len() != n)
        {
            return invalid("product factors do not match layout");
        }
        let mut amps = vec![ONE];
        for f in factors {
            amps = amps
                .iter()
                .flat_map(|&a| f.iter().map(move |&b| a * b))
                .collect();
        }
        Self::new(Arc::clone(layout), amps)
    }

    pub fn layout(&self) -> &Arc<HilbertLayout> {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amps)
    }

    pub fn normalize(&mut self) -> f64 {
        let n = self.norm();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
        n
    }

    /// ⟨self|other⟩
    pub fn inner(&self, other: &StateVector) -> C64 {
        inner(&self.amps, &other.amps)
    }

    /// |⟨self|other⟩|² for normalized states.
    pub fn fidelity(&self, other: &StateVector) -> f64 {
        self.inner(other).norm_sqr()
    }
}

pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// ⟨ψ|O|ψ⟩
pub fn expectation(state: &StateVector, op: &Operator) -> Result<C64> {
    check_layouts(&state.layout, &op.layout)?;
    Ok(inner(&state.amps, &op.matrix.apply(&state.amps)))
}
