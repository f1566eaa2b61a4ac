//! `(S, L, H)` models: composition products and the qubit + ancilla-bank
//! builders.
//!
//! Series products follow the Gough–James rule
//! `S = S2 S1`, `L = L2 + S2 L1`, `H = H1 + H2 + Im{L2^dag S2 L1}`
//! with `Im{X} = (X - X^dag) / 2i`. Both products place the first argument's
//! factors before the second's in the joint layout (`series(G2, G1)` puts
//! `G1` first).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{embed, lift, make_standard_operator, HilbertLayout, Operator, StandardOp};
use crate::scalar::{c, cr, Real, C};

const HERMITIAN_TOL: f64 = 1e-10;

/// Qubit operators available for direct and probe couplings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitOpKind {
    X,
    Y,
    Z,
    Minus,
    Plus,
}

impl QubitOpKind {
    pub fn standard(self) -> StandardOp {
        match self {
            QubitOpKind::X => StandardOp::PauliX,
            QubitOpKind::Y => StandardOp::PauliY,
            QubitOpKind::Z => StandardOp::PauliZ,
            QubitOpKind::Minus => StandardOp::SigmaMinus,
            QubitOpKind::Plus => StandardOp::SigmaPlus,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QubitOpKind::X => "x",
            QubitOpKind::Y => "y",
            QubitOpKind::Z => "z",
            QubitOpKind::Minus => "minus",
            QubitOpKind::Plus => "plus",
        }
    }
}

impl fmt::Display for QubitOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QubitOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" | "sigma_x" | "pauli_x" => Ok(QubitOpKind::X),
            "y" | "sigma_y" | "pauli_y" => Ok(QubitOpKind::Y),
            "z" | "sigma_z" | "pauli_z" => Ok(QubitOpKind::Z),
            "minus" | "sigma_minus" | "-" => Ok(QubitOpKind::Minus),
            "plus" | "sigma_plus" | "+" => Ok(QubitOpKind::Plus),
            other => Err(Error::invalid(format!("unknown qubit operator `{other}`"))),
        }
    }
}

/// A menu operator times an optional complex scalar.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QubitCoupling<T> {
    pub kind: QubitOpKind,
    pub scale: C<T>,
}

impl<T: Real> QubitCoupling<T> {
    pub fn new(kind: QubitOpKind) -> Self {
        Self {
            kind,
            scale: cr(T::one()),
        }
    }

    pub fn scaled(kind: QubitOpKind, scale: C<T>) -> Self {
        Self { kind, scale }
    }

    /// The operator on the bare qubit layout `[2]`.
    pub fn matrix(&self) -> Operator<T> {
        make_standard_operator::<T>(self.kind.standard(), 2)
            .expect("qubit operators are 2x2")
            .scale(self.scale)
    }
}

/// How the ancilla bank couples to the driving white-noise field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMode {
    /// One Lindblad channel `sqrt(gamma_k) a_k` per ancilla.
    #[default]
    Independent,
    /// A single channel `sum_k sqrt(gamma_k) a_k`.
    Shared,
}

impl fmt::Display for FieldMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldMode::Independent => "independent",
            FieldMode::Shared => "shared",
        })
    }
}

impl FromStr for FieldMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "independent" => Ok(FieldMode::Independent),
            "shared" => Ok(FieldMode::Shared),
            other => Err(Error::invalid(format!("unknown field mode `{other}`"))),
        }
    }
}

/// One damped ancilla mode and its direct coupling to the qubit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AncillaParams<T> {
    pub omega: T,
    pub gamma: T,
    pub kappa: T,
    pub sigma: QubitCoupling<T>,
    pub truncation: usize,
}

impl<T: Real> AncillaParams<T> {
    pub fn new(omega: T, gamma: T, kappa: T, sigma: QubitOpKind, truncation: usize) -> Result<Self> {
        let p = Self {
            omega,
            gamma,
            kappa,
            sigma: QubitCoupling::new(sigma),
            truncation,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > T::zero()) || !self.gamma.is_finite() {
            return Err(Error::invalid(format!("ancilla gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.kappa >= T::zero()) || !self.kappa.is_finite() {
            return Err(Error::invalid(format!("ancilla kappa must be >= 0, got {}", self.kappa)));
        }
        if !self.omega.is_finite() {
            return Err(Error::invalid("ancilla omega must be finite"));
        }
        if self.truncation < 2 {
            return Err(Error::invalid(format!(
                "ancilla truncation must be >= 2, got {}",
                self.truncation
            )));
        }
        Ok(())
    }
}

/// The direct qubit–ancilla coupling kept in split form: the free part
/// `H_S + H_A` together with `C^dag Sigma` and `Sigma^dag C`, so that
/// `H_I = i (C^dag Sigma - Sigma^dag C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectCoupling<T> {
    pub free_hamiltonian: Operator<T>,
    pub c_dag_sigma: Operator<T>,
    pub sigma_dag_c: Operator<T>,
}

impl<T: Real> DirectCoupling<T> {
    pub fn interaction_hamiltonian(&self) -> Operator<T> {
        (&self.c_dag_sigma - &self.sigma_dag_c).scale(c(T::zero(), T::one()))
    }

    fn lifted(&self, prefix: &HilbertLayout, suffix: &HilbertLayout) -> Self {
        Self {
            free_hamiltonian: lift(&self.free_hamiltonian, prefix, suffix),
            c_dag_sigma: lift(&self.c_dag_sigma, prefix, suffix),
            sigma_dag_c: lift(&self.sigma_dag_c, prefix, suffix),
        }
    }

    fn merged(a: Option<Self>, b: Option<Self>, hamiltonian_a: &Operator<T>, hamiltonian_b: &Operator<T>) -> Option<Self> {
        match (a, b) {
            (None, None) => None,
            (Some(a), None) => Some(Self {
                free_hamiltonian: &a.free_hamiltonian + hamiltonian_b,
                ..a
            }),
            (None, Some(b)) => Some(Self {
                free_hamiltonian: &b.free_hamiltonian + hamiltonian_a,
                ..b
            }),
            (Some(a), Some(b)) => Some(Self {
                free_hamiltonian: &a.free_hamiltonian + &b.free_hamiltonian,
                c_dag_sigma: &a.c_dag_sigma + &b.c_dag_sigma,
                sigma_dag_c: &a.sigma_dag_c + &b.sigma_dag_c,
            }),
        }
    }
}

/// An `(S, L, H)` triple over one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SlhModel<T> {
    layout: HilbertLayout,
    /// `channels x channels`, row-major.
    scattering: Vec<Operator<T>>,
    couplings: Vec<Operator<T>>,
    hamiltonian: Operator<T>,
    probe_channel: Option<usize>,
    direct: Option<DirectCoupling<T>>,
}

impl<T: Real> SlhModel<T> {
    pub fn new(
        layout: HilbertLayout,
        scattering: Vec<Operator<T>>,
        couplings: Vec<Operator<T>>,
        hamiltonian: Operator<T>,
    ) -> Result<Self> {
        let m = couplings.len();
        if scattering.len() != m * m {
            return Err(Error::invalid(format!(
                "scattering matrix has {} entries for {m} channels",
                scattering.len()
            )));
        }
        for op in scattering.iter().chain(&couplings).chain(std::iter::once(&hamiltonian)) {
            if op.layout() != &layout {
                return Err(Error::LayoutMismatch {
                    left: layout.clone(),
                    right: op.layout().clone(),
                });
            }
        }
        if !hamiltonian.is_hermitian(T::lit(HERMITIAN_TOL)) {
            return Err(Error::invalid(format!(
                "hamiltonian is not Hermitian (error {:e})",
                hamiltonian.hermiticity_error()
            )));
        }
        if !is_unitary(&scattering, m, &layout) {
            return Err(Error::invalid("scattering matrix is not unitary"));
        }
        Ok(Self {
            layout,
            scattering,
            couplings,
            hamiltonian,
            probe_channel: None,
            direct: None,
        })
    }

    /// `(I, L, H)` with identity scattering.
    pub fn with_identity_scattering(
        layout: HilbertLayout,
        couplings: Vec<Operator<T>>,
        hamiltonian: Operator<T>,
    ) -> Result<Self> {
        let s = identity_scattering(couplings.len(), &layout);
        Self::new(layout, s, couplings, hamiltonian)
    }

    /// The model with no degrees of freedom and no channels.
    pub fn empty() -> Self {
        let layout = HilbertLayout::trivial();
        Self {
            hamiltonian: Operator::zeros(layout.clone()),
            layout,
            scattering: Vec::new(),
            couplings: Vec::new(),
            probe_channel: None,
            direct: None,
        }
    }

    /// `(I, 0, 0)` on the trivial layout with `channels` field channels.
    pub fn passthrough(channels: usize) -> Self {
        let layout = HilbertLayout::trivial();
        Self {
            scattering: identity_scattering(channels, &layout),
            couplings: vec![Operator::zeros(layout.clone()); channels],
            hamiltonian: Operator::zeros(layout.clone()),
            layout,
            probe_channel: None,
            direct: None,
        }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn scattering(&self) -> &[Operator<T>] {
        &self.scattering
    }

    pub fn couplings(&self) -> &[Operator<T>] {
        &self.couplings
    }

    pub fn hamiltonian(&self) -> &Operator<T> {
        &self.hamiltonian
    }

    pub fn channel_count(&self) -> usize {
        self.couplings.len()
    }

    /// Index of the measured probe channel, if one was attached.
    pub fn probe_channel(&self) -> Option<usize> {
        self.probe_channel
    }

    pub fn probe_operator(&self) -> Option<&Operator<T>> {
        self.probe_channel.map(|i| &self.couplings[i])
    }

    pub fn direct_coupling(&self) -> Option<&DirectCoupling<T>> {
        self.direct.as_ref()
    }

    pub fn has_identity_scattering(&self) -> bool {
        let m = self.channel_count();
        let id = Operator::identity(self.layout.clone());
        let zero = Operator::zeros(self.layout.clone());
        (0..m).all(|i| {
            (0..m).all(|j| {
                let want = if i == j { &id } else { &zero };
                self.scattering[i * m + j] == *want
            })
        })
    }

    fn lifted(&self, prefix: &HilbertLayout, suffix: &HilbertLayout) -> Self {
        let l = |op: &Operator<T>| lift(op, prefix, suffix);
        Self {
            layout: prefix.concat(&self.layout).concat(suffix),
            scattering: self.scattering.iter().map(l).collect(),
            couplings: self.couplings.iter().map(l).collect(),
            hamiltonian: l(&self.hamiltonian),
            probe_channel: self.probe_channel,
            direct: self.direct.as_ref().map(|d| d.lifted(prefix, suffix)),
        }
    }
}

fn identity_scattering<T: Real>(m: usize, layout: &HilbertLayout) -> Vec<Operator<T>> {
    let mut s = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            s.push(if i == j {
                Operator::identity(layout.clone())
            } else {
                Operator::zeros(layout.clone())
            });
        }
    }
    s
}

fn is_unitary<T: Real>(s: &[Operator<T>], m: usize, layout: &HilbertLayout) -> bool {
    let tol = T::lit(1e-10);
    let id = Operator::<T>::identity(layout.clone());
    for i in 0..m {
        for j in 0..m {
            let mut acc = Operator::zeros(layout.clone());
            for k in 0..m {
                acc += &s[k * m + i].adjoint().matmul(&s[k * m + j]);
            }
            if i == j {
                acc -= &id;
            }
            if acc.max_abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Concatenation product `G1 ⊞ G2`: block-diagonal scattering, stacked
/// couplings, summed Hamiltonians.
pub fn concatenate<T: Real>(g1: &SlhModel<T>, g2: &SlhModel<T>) -> SlhModel<T> {
    let a = g1.lifted(&HilbertLayout::trivial(), &g2.layout);
    let b = g2.lifted(&g1.layout, &HilbertLayout::trivial());
    let layout = g1.layout.concat(&g2.layout);
    let (m1, m2) = (a.channel_count(), b.channel_count());
    let m = m1 + m2;
    let mut scattering = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let entry = if i < m1 && j < m1 {
                a.scattering[i * m1 + j].clone()
            } else if i >= m1 && j >= m1 {
                b.scattering[(i - m1) * m2 + (j - m1)].clone()
            } else {
                Operator::zeros(layout.clone())
            };
            scattering.push(entry);
        }
    }
    let mut couplings = a.couplings;
    couplings.extend(b.couplings);
    let probe_channel = a.probe_channel.or(b.probe_channel.map(|p| p + m1));
    let direct = DirectCoupling::merged(a.direct, b.direct, &a.hamiltonian, &b.hamiltonian);
    SlhModel {
        layout,
        scattering,
        couplings,
        hamiltonian: &a.hamiltonian + &b.hamiltonian,
        probe_channel,
        direct,
    }
}

/// Series product `G2 ◁ G1` (output of `G1` feeds `G2`).
pub fn series<T: Real>(g2: &SlhModel<T>, g1: &SlhModel<T>) -> Result<SlhModel<T>> {
    let m = g1.channel_count();
    if g2.channel_count() != m {
        return Err(Error::invalid(format!(
            "series product needs equal channel counts, got {} and {m}",
            g2.channel_count()
        )));
    }
    let first = g1.lifted(&HilbertLayout::trivial(), &g2.layout);
    let second = g2.lifted(&g1.layout, &HilbertLayout::trivial());
    let layout = g1.layout.concat(&g2.layout);

    let mut scattering = Vec::with_capacity(m * m);
    for i in 0..m {
        for j in 0..m {
            let mut acc = Operator::zeros(layout.clone());
            for k in 0..m {
                acc += &second.scattering[i * m + k].matmul(&first.scattering[k * m + j]);
            }
            scattering.push(acc);
        }
    }

    let mut couplings = Vec::with_capacity(m);
    for i in 0..m {
        let mut li = second.couplings[i].clone();
        for j in 0..m {
            li += &second.scattering[i * m + j].matmul(&first.couplings[j]);
        }
        couplings.push(li);
    }

    // Im{L2^dag S2 L1}
    let mut cross = Operator::zeros(layout.clone());
    for i in 0..m {
        let l2_dag = second.couplings[i].adjoint();
        for j in 0..m {
            cross += &l2_dag.matmul(&second.scattering[i * m + j]).matmul(&first.couplings[j]);
        }
    }
    let imag = (&cross - &cross.adjoint()).scale(C::new(T::zero(), -T::lit(0.5)));
    let mut hamiltonian = &first.hamiltonian + &second.hamiltonian;
    hamiltonian += &imag;

    let mut direct = DirectCoupling::merged(first.direct, second.direct, &first.hamiltonian, &second.hamiltonian);
    if let Some(d) = direct.as_mut() {
        d.free_hamiltonian += &imag;
    }
    Ok(SlhModel {
        layout,
        scattering,
        couplings,
        hamiltonian,
        probe_channel: first.probe_channel.or(second.probe_channel),
        direct,
    })
}

/// Single ancilla `(I, sqrt(gamma) a, omega a^dag a)` on `[N]`.
pub fn single_ancilla<T: Real>(p: &AncillaParams<T>) -> Result<SlhModel<T>> {
    p.validate()?;
    let a = make_standard_operator::<T>(StandardOp::Annihilation, p.truncation)?;
    let number = a.adjoint().matmul(&a);
    SlhModel::with_identity_scattering(
        a.layout().clone(),
        vec![a.scale_real(p.gamma.sqrt())],
        number.scale_real(p.omega),
    )
}

/// The ancilla bank `(I, M = Gamma A, H_A = A^dag Omega A)` on `[N_1, ..., N_n]`.
pub fn build_ancilla_bank<T: Real>(params: &[AncillaParams<T>], mode: FieldMode) -> Result<SlhModel<T>> {
    if params.is_empty() {
        return Err(Error::invalid("ancilla bank needs at least one ancilla"));
    }
    let mut bank = SlhModel::empty();
    for p in params {
        bank = concatenate(&bank, &single_ancilla(p)?);
    }
    if mode == FieldMode::Shared {
        let mut total = Operator::zeros(bank.layout.clone());
        for m in &bank.couplings {
            total += m;
        }
        bank = SlhModel::with_identity_scattering(bank.layout, vec![total], bank.hamiltonian)?;
    }
    Ok(bank)
}

/// Attaches the qubit to the bank through
/// `H_I = i (C^dag Sigma - Sigma^dag C)` with `C = -Gamma^dag A / 2` and
/// `Sigma_k = sqrt(kappa_k) sigma_k`. The result lives on `[2, N_1, ..., N_n]`.
pub fn build_augmented<T: Real>(
    omega_q: T,
    bank: &SlhModel<T>,
    params: &[AncillaParams<T>],
) -> Result<SlhModel<T>> {
    let truncations: Vec<usize> = params.iter().map(|p| p.truncation).collect();
    if bank.layout.dims() != truncations.as_slice() {
        return Err(Error::invalid(format!(
            "bank layout {} does not match ancilla truncations {truncations:?}",
            bank.layout
        )));
    }
    for p in params {
        p.validate()?;
    }
    let qubit = HilbertLayout::single(2);
    let lifted = bank.lifted(&qubit, &HilbertLayout::trivial());
    let layout = lifted.layout.clone();

    let sz = make_standard_operator::<T>(StandardOp::PauliZ, 2)?;
    let h_s = embed(&sz.scale_real(omega_q * T::lit(0.5)), 0, &layout)?;

    let mut c_dag_sigma = Operator::zeros(layout.clone());
    let mut sigma_dag_c = Operator::zeros(layout.clone());
    for (k, p) in params.iter().enumerate() {
        if p.kappa == T::zero() {
            continue;
        }
        let a = make_standard_operator::<T>(StandardOp::Annihilation, p.truncation)?;
        let c_k = embed(&a, k + 1, &layout)?.scale_real(-p.gamma.sqrt() * T::lit(0.5));
        let sigma_k = embed(&p.sigma.matrix().scale_real(p.kappa.sqrt()), 0, &layout)?;
        c_dag_sigma += &c_k.adjoint().matmul(&sigma_k);
        sigma_dag_c += &sigma_k.adjoint().matmul(&c_k);
    }
    let free_hamiltonian = &h_s + &lifted.hamiltonian;
    let direct = DirectCoupling {
        free_hamiltonian: free_hamiltonian.clone(),
        c_dag_sigma,
        sigma_dag_c,
    };
    let hamiltonian = &free_hamiltonian + &direct.interaction_hamiltonian();
    let mut model = SlhModel::new(layout, lifted.scattering, lifted.couplings, hamiltonian)?;
    model.direct = Some(direct);
    Ok(model)
}

/// Appends the probe channel `L = sqrt(gamma_q) * probe` (qubit slot) and
/// marks it as the measured channel.
pub fn build_probed<T: Real>(
    augmented: &SlhModel<T>,
    gamma_q: T,
    probe: QubitCoupling<T>,
) -> Result<SlhModel<T>> {
    if !(gamma_q >= T::zero()) || !gamma_q.is_finite() {
        return Err(Error::invalid(format!("probe rate must be >= 0, got {gamma_q}")));
    }
    if augmented.layout.dims().first() != Some(&2) {
        return Err(Error::invalid(format!(
            "probed model needs the qubit in slot 0, got layout {}",
            augmented.layout
        )));
    }
    let l = embed(&probe.matrix().scale_real(gamma_q.sqrt()), 0, &augmented.layout)?;
    let probe_model = SlhModel::with_identity_scattering(
        augmented.layout.clone(),
        vec![l],
        Operator::zeros(augmented.layout.clone()),
    )?;
    // same space, so stack the channel rather than tensoring
    let m = augmented.channel_count();
    let mut scattering = Vec::with_capacity((m + 1) * (m + 1));
    for i in 0..=m {
        for j in 0..=m {
            scattering.push(if i < m && j < m {
                augmented.scattering[i * m + j].clone()
            } else if i == j {
                Operator::identity(augmented.layout.clone())
            } else {
                Operator::zeros(augmented.layout.clone())
            });
        }
    }
    let mut couplings = augmented.couplings.clone();
    couplings.extend(probe_model.couplings);
    Ok(SlhModel {
        layout: augmented.layout.clone(),
        scattering,
        couplings,
        hamiltonian: augmented.hamiltonian.clone(),
        probe_channel: Some(m),
        direct: augmented.direct.clone(),
    })
}
