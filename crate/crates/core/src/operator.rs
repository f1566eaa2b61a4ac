//! Dense complex operators on tensor-product Hilbert spaces.
//!
//! An [`Operator`] is a square row-major complex matrix tagged with the
//! [`HilbertLayout`] it acts on. The qubit factor uses the basis ordering
//! `index 0 = |1> (excited)`, `index 1 = |0> (ground)`, so that
//! `sigma_z = diag(1, -1)` and `sigma_- |1> = |0>`. Ancilla factors are
//! Fock spaces truncated to `N` levels with `index n = |n>`.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::{c, cr, Real, C};

/// Ordered subsystem dimensions. The empty layout is the trivial space of
/// dimension one.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertLayout {
    dims: Vec<usize>,
}

impl HilbertLayout {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("subsystem dimensions must be >= 1, got {dims:?}")));
        }
        Ok(Self { dims })
    }

    pub fn single(dim: usize) -> Self {
        Self::new(vec![dim]).expect("dimension must be positive")
    }

    pub fn trivial() -> Self {
        Self { dims: Vec::new() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_slots(&self) -> usize {
        self.dims.len()
    }

    pub fn total(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn concat(&self, other: &HilbertLayout) -> HilbertLayout {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        HilbertLayout { dims }
    }

    pub fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.dims.len() {
            Err(Error::invalid(format!(
                "slot {slot} out of range for layout {self}"
            )))
        } else {
            Ok(())
        }
    }
}

impl fmt::Display for HilbertLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.dims)
    }
}

/// Dense square complex matrix on a [`HilbertLayout`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator<T> {
    layout: HilbertLayout,
    data: Vec<C<T>>,
}

impl<T: Real> Operator<T> {
    pub fn zeros(layout: HilbertLayout) -> Self {
        let n = layout.total();
        Self {
            layout,
            data: vec![C::zero(); n * n],
        }
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let mut op = Self::zeros(layout);
        for i in 0..op.dim() {
            op[(i, i)] = cr(T::one());
        }
        op
    }

    pub fn from_fn(layout: HilbertLayout, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let n = layout.total();
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { layout, data }
    }

    /// Builds an operator from row-major entries.
    pub fn from_vec(layout: HilbertLayout, data: Vec<C<T>>) -> Result<Self> {
        let n = layout.total();
        if data.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    /// Builds a single-factor operator from real row-major entries.
    pub fn from_real_rows(rows: &[&[f64]]) -> Self {
        let n = rows.len();
        Self::from_fn(HilbertLayout::single(n), |i, j| cr(T::lit(rows[i][j])))
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.total()
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    /// Re-tags the matrix with another layout of the same total dimension.
    pub fn with_layout(mut self, layout: HilbertLayout) -> Result<Self> {
        if layout.total() != self.dim() {
            return Err(Error::LayoutMismatch {
                left: self.layout,
                right: layout,
            });
        }
        self.layout = layout;
        Ok(self)
    }

    pub fn adjoint(&self) -> Self {
        let n = self.dim();
        Self::from_fn(self.layout.clone(), |i, j| self.data[j * n + i].conj())
    }

    pub fn trace(&self) -> C<T> {
        let n = self.dim();
        (0..n).map(|i| self.data[i * n + i]).fold(C::zero(), |a, b| a + b)
    }

    pub fn scale(&self, s: C<T>) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: T) -> Self {
        Self {
            layout: self.layout.clone(),
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub(crate) fn scale_in_place(&mut self, s: T) {
        for z in &mut self.data {
            *z = *z * s;
        }
    }

    /// `self += other * s`
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        self.assert_same_layout(other);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// Matrix product. Zero entries of `self` are skipped, so sparse-ish
    /// left factors (ladder and Pauli embeddings) are cheap.
    pub fn matmul(&self, rhs: &Self) -> Self {
        self.assert_same_layout(rhs);
        let n = self.dim();
        let mut out = vec![C::zero(); n * n];
        for i in 0..n {
            let row = &mut out[i * n..(i + 1) * n];
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.is_zero() {
                    continue;
                }
                let b = &rhs.data[k * n..(k + 1) * n];
                for (o, &bk) in row.iter_mut().zip(b) {
                    *o += a * bk;
                }
            }
        }
        Self {
            layout: self.layout.clone(),
            data: out,
        }
    }

    /// `self * rhs^dagger`, evaluated as `(rhs * self^dagger)^dagger` so the
    /// (usually sparse) `rhs` sits on the left of the product.
    pub fn matmul_adjoint(&self, rhs: &Self) -> Self {
        rhs.matmul(&self.adjoint()).adjoint()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.assert_same_layout(other);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).norm())
            .fold(T::zero(), T::max)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    /// `max |A - A^dagger|` over entries.
    pub fn hermiticity_error(&self) -> T {
        let n = self.dim();
        let mut worst = T::zero();
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.hermiticity_error() <= tol
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn hermitian_eigenvalues(&self) -> Result<Vec<T>> {
        linalg::hermitian_eigenvalues(self.dim(), &self.data)
    }

    pub fn min_eigenvalue(&self) -> Result<T> {
        Ok(self
            .hermitian_eigenvalues()?
            .first()
            .copied()
            .unwrap_or_else(T::zero))
    }

    fn assert_same_layout(&self, other: &Self) {
        assert!(
            self.layout == other.layout,
            "operator layout mismatch: {} vs {}",
            self.layout,
            other.layout
        );
    }

    pub(crate) fn check_same_layout(&self, other: &Self) -> Result<()> {
        if self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::LayoutMismatch {
                left: self.layout.clone(),
                right: other.layout.clone(),
            })
        }
    }
}

impl<T> Index<(usize, usize)> for Operator<T> {
    type Output = C<T>;

    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        let n = self.layout.total();
        &self.data[i * n + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Operator<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        let n = self.layout.total();
        &mut self.data[i * n + j]
    }
}

impl<T: Real> Add for &Operator<T> {
    type Output = Operator<T>;

    fn add(self, rhs: Self) -> Operator<T> {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl<T: Real> Sub for &Operator<T> {
    type Output = Operator<T>;

    fn sub(self, rhs: Self) -> Operator<T> {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl<T: Real> AddAssign<&Operator<T>> for Operator<T> {
    fn add_assign(&mut self, rhs: &Operator<T>) {
        self.assert_same_layout(rhs);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl<T: Real> SubAssign<&Operator<T>> for Operator<T> {
    fn sub_assign(&mut self, rhs: &Operator<T>) {
        self.assert_same_layout(rhs);
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl<T: Real> Mul for &Operator<T> {
    type Output = Operator<T>;

    fn mul(self, rhs: Self) -> Operator<T> {
        self.matmul(rhs)
    }
}

impl<T: Real> Mul<C<T>> for &Operator<T> {
    type Output = Operator<T>;

    fn mul(self, rhs: C<T>) -> Operator<T> {
        self.scale(rhs)
    }
}

impl<T: Real> Neg for &Operator<T> {
    type Output = Operator<T>;

    fn neg(self) -> Operator<T> {
        self.scale_real(-T::one())
    }
}

/// Single-factor operators the builders know about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardOp {
    PauliX,
    PauliY,
    PauliZ,
    SigmaPlus,
    SigmaMinus,
    Identity,
    Annihilation,
}

/// Standard matrix of `kind` on the single-factor layout `[dim]`.
///
/// Pauli and ladder kinds need `dim == 2`; the annihilation operator needs
/// `dim >= 2` and has `a[n-1, n] = sqrt(n)`.
pub fn make_standard_operator<T: Real>(kind: StandardOp, dim: usize) -> Result<Operator<T>> {
    let layout = HilbertLayout::new(vec![dim])?;
    let needs_qubit = !matches!(kind, StandardOp::Identity | StandardOp::Annihilation);
    if needs_qubit && dim != 2 {
        return Err(Error::invalid(format!("{kind:?} requires dim = 2, got {dim}")));
    }
    let (o, l, i) = (T::zero(), T::one(), T::one());
    let entries: [C<T>; 4] = match kind {
        StandardOp::PauliX => [c(o, o), c(l, o), c(l, o), c(o, o)],
        StandardOp::PauliY => [c(o, o), c(o, -i), c(o, i), c(o, o)],
        StandardOp::PauliZ => [c(l, o), c(o, o), c(o, o), c(-l, o)],
        StandardOp::SigmaPlus => [c(o, o), c(l, o), c(o, o), c(o, o)],
        StandardOp::SigmaMinus => [c(o, o), c(o, o), c(l, o), c(o, o)],
        StandardOp::Identity => return Ok(Operator::identity(layout)),
        StandardOp::Annihilation => {
            if dim < 2 {
                return Err(Error::invalid(format!(
                    "annihilation operator requires truncation >= 2, got {dim}"
                )));
            }
            return Ok(Operator::from_fn(layout, |r, col| {
                if col == r + 1 {
                    cr(T::lit(col as f64).sqrt())
                } else {
                    C::zero()
                }
            }));
        }
    };
    Operator::from_vec(layout, entries.to_vec())
}

/// Kronecker product; the result's layout is the concatenation of layouts.
pub fn kron<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Operator<T> {
    let (na, nb) = (a.dim(), b.dim());
    let n = na * nb;
    let mut data = vec![C::zero(); n * n];
    for i in 0..na {
        for j in 0..na {
            let aij = a.data[i * na + j];
            if aij.is_zero() {
                continue;
            }
            for k in 0..nb {
                for l in 0..nb {
                    data[(i * nb + k) * n + j * nb + l] = aij * b.data[k * nb + l];
                }
            }
        }
    }
    Operator {
        layout: a.layout.concat(&b.layout),
        data,
    }
}

/// Lifts a single-factor operator into `layout` at position `slot`.
pub fn embed<T: Real>(op: &Operator<T>, slot: usize, layout: &HilbertLayout) -> Result<Operator<T>> {
    layout.check_slot(slot)?;
    if op.dim() != layout.dims()[slot] {
        return Err(Error::invalid(format!(
            "operator of dimension {} cannot sit in slot {slot} of {layout}",
            op.dim()
        )));
    }
    let left: usize = layout.dims()[..slot].iter().product();
    let right: usize = layout.dims()[slot + 1..].iter().product();
    let ident = |d: usize| Operator::<T>::identity(HilbertLayout::single(d));
    let mut out = op.clone();
    if left > 1 {
        out = kron(&ident(left), &out);
    }
    if right > 1 {
        out = kron(&out, &ident(right));
    }
    out.with_layout(layout.clone())
}

/// Lifts an operator on `layout` into `layout ++ suffix` (`op ⊗ I`) or
/// `prefix ++ layout` (`I ⊗ op`).
pub(crate) fn lift<T: Real>(op: &Operator<T>, prefix: &HilbertLayout, suffix: &HilbertLayout) -> Operator<T> {
    let mut out = op.clone();
    if prefix.total() > 1 || prefix.num_slots() > 0 {
        out = kron(&Operator::identity(prefix.clone()), &out);
    }
    if suffix.total() > 1 || suffix.num_slots() > 0 {
        out = kron(&out, &Operator::identity(suffix.clone()));
    }
    out
}

/// Partial trace over every slot not in `keep`. Works for arbitrary
/// operators, not only density matrices. Kept slots appear in ascending
/// order in the result layout.
pub fn partial_trace<T: Real>(op: &Operator<T>, keep: &[usize]) -> Result<Operator<T>> {
    if keep.is_empty() {
        return Err(Error::invalid("partial trace needs at least one kept slot"));
    }
    let layout = op.layout();
    for &s in keep {
        layout.check_slot(s)?;
    }
    let dims = layout.dims();
    let kept_slots: Vec<usize> = (0..dims.len()).filter(|s| keep.contains(s)).collect();
    let out_layout = HilbertLayout::new(kept_slots.iter().map(|&s| dims[s]).collect())?;
    let n = layout.total();
    let nk = out_layout.total();

    // full index -> (kept index, traced index)
    let mut kept_idx = vec![0usize; n];
    let mut traced_idx = vec![0usize; n];
    for (full, (ki, ti)) in kept_idx.iter_mut().zip(traced_idx.iter_mut()).enumerate() {
        let mut rem = full;
        let mut digits = vec![0usize; dims.len()];
        for s in (0..dims.len()).rev() {
            digits[s] = rem % dims[s];
            rem /= dims[s];
        }
        let (mut k, mut t) = (0usize, 0usize);
        for s in 0..dims.len() {
            if keep.contains(&s) {
                k = k * dims[s] + digits[s];
            } else {
                t = t * dims[s] + digits[s];
            }
        }
        *ki = k;
        *ti = t;
    }

    let mut out = Operator::zeros(out_layout);
    for i in 0..n {
        for j in 0..n {
            if traced_idx[i] == traced_idx[j] {
                out.data[kept_idx[i] * nk + kept_idx[j]] += op.data[i * n + j];
            }
        }
    }
    Ok(out)
}

/// `AB - BA`.
pub fn commutator<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Result<Operator<T>> {
    a.check_same_layout(b)?;
    Ok(&a.matmul(b) - &b.matmul(a))
}

/// `AB + BA`.
pub fn anticommutator<T: Real>(a: &Operator<T>, b: &Operator<T>) -> Result<Operator<T>> {
    a.check_same_layout(b)?;
    Ok(&a.matmul(b) + &b.matmul(a))
}

/// `tr(rho A)` without forming the product.
pub fn expectation<T: Real>(rho: &Operator<T>, a: &Operator<T>) -> Result<C<T>> {
    rho.check_same_layout(a)?;
    let n = rho.dim();
    let mut acc = C::zero();
    for i in 0..n {
        for k in 0..n {
            acc += rho.data[i * n + k] * a.data[k * n + i];
        }
    }
    Ok(acc)
}

const TRACE_TOL: f64 = 1e-8;
const HERMITIAN_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = 1e-8;

/// Unit-trace, Hermitian, positive semidefinite operator.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix<T> {
    op: Operator<T>,
}

impl<T: Real> DensityMatrix<T> {
    /// Validates trace, Hermiticity and positivity. Tolerances are the
    /// `f64` ones, widened for lower-precision scalars.
    pub fn new(op: Operator<T>) -> Result<Self> {
        let n = T::lit(op.dim().max(1) as f64);
        let floor = T::epsilon() * T::lit(64.0) * n;
        let tol = |t: f64| T::lit(t).max(floor);
        let tr = op.trace();
        if (tr - cr(T::one())).norm() > tol(TRACE_TOL) {
            return Err(Error::invalid(format!("density matrix trace is {tr}, expected 1")));
        }
        let herm = op.hermiticity_error();
        if herm > tol(HERMITIAN_TOL) {
            return Err(Error::invalid(format!("density matrix is not Hermitian (error {herm:e})")));
        }
        let min = op.min_eigenvalue()?;
        if min < -tol(POSITIVITY_TOL) {
            return Err(Error::invalid(format!("density matrix has eigenvalue {min:e}")));
        }
        Ok(Self { op })
    }

    /// Wraps without validation. Callers own the invariant.
    pub fn new_unchecked(op: Operator<T>) -> Self {
        Self { op }
    }

    /// `|psi><psi| / <psi|psi>` on `layout`.
    pub fn pure(layout: HilbertLayout, amplitudes: &[C<T>]) -> Result<Self> {
        if amplitudes.len() != layout.total() {
            return Err(Error::LengthMismatch {
                expected: layout.total(),
                actual: amplitudes.len(),
            });
        }
        let norm: T = amplitudes.iter().map(|z| z.norm_sqr()).sum();
        if !(norm > T::zero()) {
            return Err(Error::invalid("state vector has zero norm"));
        }
        let op = Operator::from_fn(layout, |i, j| amplitudes[i] * amplitudes[j].conj() / norm);
        Ok(Self { op })
    }

    /// Fock state `|n><n|` on an `N`-level truncation.
    pub fn fock(truncation: usize, n: usize) -> Result<Self> {
        if n >= truncation {
            return Err(Error::invalid(format!("Fock level {n} outside truncation {truncation}")));
        }
        let mut amps = vec![C::zero(); truncation];
        amps[n] = cr(T::one());
        Self::pure(HilbertLayout::single(truncation), &amps)
    }

    /// Qubit state `(I + x sx + y sy + z sz) / 2`.
    pub fn from_bloch(x: T, y: T, z: T) -> Result<Self> {
        let r2 = x * x + y * y + z * z;
        if r2 > T::one() + T::lit(1e-12).max(T::epsilon() * T::lit(8.0)) {
            return Err(Error::invalid(format!("Bloch vector norm {} exceeds 1", r2.sqrt())));
        }
        let half = T::lit(0.5);
        let op = Operator::from_vec(
            HilbertLayout::single(2),
            vec![
                c((T::one() + z) * half, T::zero()),
                c(x * half, -y * half),
                c(x * half, y * half),
                c((T::one() - z) * half, T::zero()),
            ],
        )?;
        Ok(Self { op })
    }

    pub fn maximally_mixed(layout: HilbertLayout) -> Self {
        let d = T::lit(layout.total() as f64);
        Self {
            op: Operator::identity(layout).scale_real(T::one() / d),
        }
    }

    /// Tensor product of factor states, in order.
    pub fn product(factors: &[DensityMatrix<T>]) -> Result<Self> {
        let (first, rest) = factors
            .split_first()
            .ok_or_else(|| Error::invalid("product of zero factors"))?;
        let op = rest.iter().fold(first.op.clone(), |acc, f| kron(&acc, &f.op));
        Ok(Self { op })
    }

    pub fn as_operator(&self) -> &Operator<T> {
        &self.op
    }

    pub fn into_operator(self) -> Operator<T> {
        self.op
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.op.layout()
    }

    pub fn purity(&self) -> T {
        // tr(rho^2) = sum |rho_ij|^2 for Hermitian rho
        self.op.as_slice().iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self> {
        Ok(Self {
            op: partial_trace(&self.op, keep)?,
        })
    }

    pub fn expectation(&self, a: &Operator<T>) -> Result<C<T>> {
        expectation(&self.op, a)
    }

    /// Bloch vector of a single-qubit state.
    pub fn bloch_vector(&self) -> Result<[T; 3]> {
        if self.layout().dims() != [2] {
            return Err(Error::invalid(format!(
                "Bloch vector needs a qubit layout, got {}",
                self.layout()
            )));
        }
        Ok(qubit_bloch(self.op.as_slice()))
    }
}

/// `(x, y, z) = (tr sx rho, tr sy rho, tr sz rho)` for a row-major 2x2 block.
pub(crate) fn qubit_bloch<T: Real>(d: &[C<T>]) -> [T; 3] {
    [(d[1] + d[2]).re, (d[2] - d[1]).im, d[0].re - d[3].re]
}

impl<T> std::ops::Deref for DensityMatrix<T> {
    type Target = Operator<T>;

    fn deref(&self) -> &Operator<T> {
        &self.op
    }
}
