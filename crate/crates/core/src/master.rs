//! Unconditional dynamics: Lindblad generators, the augmented master
//! equation, RK4 integration and reduction to the qubit.
//!
//! The dissipator for a collapse operator `N` is
//! `D[N](rho) = N rho N^dag - (N^dag N rho + rho N^dag N) / 2`.

use crate::error::{Error, Result};
use crate::linalg;
use crate::operator::{commutator, make_standard_operator, DensityMatrix, HilbertLayout, Operator, StandardOp};
use crate::scalar::{c, Real, C};
use crate::slh::{AncillaParams, DirectCoupling, QubitCoupling, SlhModel};

const HERMITIAN_TOL: f64 = 1e-10;
/// Integration aborts once an output state has an eigenvalue below `-tol`.
pub const DEFAULT_POSITIVITY_TOL: f64 = 1e-6;

/// Hamiltonian plus collapse operators, with the non-Hermitian effective
/// generator `K = -iH - 1/2 sum L^dag L` cached.
#[derive(Clone, Debug)]
pub struct GeneratorSpec<T> {
    hamiltonian: Operator<T>,
    collapse_ops: Vec<Operator<T>>,
    direct_terms: Option<DirectCoupling<T>>,
    effective: Operator<T>,
}

impl<T: Real> GeneratorSpec<T> {
    pub fn new(hamiltonian: Operator<T>, collapse_ops: Vec<Operator<T>>) -> Result<Self> {
        for l in &collapse_ops {
            hamiltonian.check_same_layout(l)?;
        }
        if !hamiltonian.is_hermitian(T::lit(HERMITIAN_TOL)) {
            return Err(Error::invalid("generator hamiltonian is not Hermitian"));
        }
        let mut effective = hamiltonian.scale(c(T::zero(), -T::one()));
        for l in &collapse_ops {
            effective.add_scaled(&l.adjoint().matmul(l), -T::lit(0.5));
        }
        Ok(Self {
            hamiltonian,
            collapse_ops,
            direct_terms: None,
            effective,
        })
    }

    /// Generator of a model's master equation: every coupling (bank channels
    /// and, if attached, the probe) becomes a collapse operator.
    pub fn from_model(model: &SlhModel<T>) -> Result<Self> {
        let mut spec = Self::new(model.hamiltonian().clone(), model.couplings().to_vec())?;
        spec.direct_terms = model.direct_coupling().cloned();
        Ok(spec)
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.hamiltonian.layout()
    }

    pub fn hamiltonian(&self) -> &Operator<T> {
        &self.hamiltonian
    }

    pub fn collapse_ops(&self) -> &[Operator<T>] {
        &self.collapse_ops
    }

    pub fn direct_terms(&self) -> Option<&DirectCoupling<T>> {
        self.direct_terms.as_ref()
    }

    pub(crate) fn effective(&self) -> &Operator<T> {
        &self.effective
    }
}

/// `-i[H, rho] + sum_j D[L_j](rho)`.
pub fn lindblad_apply<T: Real>(rho: &Operator<T>, spec: &GeneratorSpec<T>) -> Result<Operator<T>> {
    rho.check_same_layout(&spec.hamiltonian)?;
    Ok(apply_unchecked(rho, spec))
}

pub(crate) fn apply_unchecked<T: Real>(rho: &Operator<T>, spec: &GeneratorSpec<T>) -> Operator<T> {
    // K rho + rho K^dag, with rho K^dag = (K rho^dag)^dag so K stays on the left
    let mut out = spec.effective.matmul(rho);
    out += &spec.effective.matmul(&rho.adjoint()).adjoint();
    for l in &spec.collapse_ops {
        let l_rho = l.matmul(rho);
        out += &l_rho.matmul_adjoint(l);
    }
    out
}

/// The augmented master equation written with the direct-coupling terms
/// kept explicit:
/// `-i[H_S + H_A, rho] + sum_j D[L_j](rho) + [C^dag Sigma, rho] + [rho, Sigma^dag C]`.
pub fn augmented_apply<T: Real>(rho: &Operator<T>, spec: &GeneratorSpec<T>) -> Result<Operator<T>> {
    let direct = spec
        .direct_terms
        .as_ref()
        .ok_or_else(|| Error::UnsupportedMode("generator carries no direct-coupling terms".into()))?;
    rho.check_same_layout(&direct.free_hamiltonian)?;
    let mut out = commutator(&direct.free_hamiltonian, rho)?.scale(c(T::zero(), -T::one()));
    let half = T::lit(0.5);
    for l in &spec.collapse_ops {
        let ldl = l.adjoint().matmul(l);
        out += &l.matmul(rho).matmul(&l.adjoint());
        out.add_scaled(&ldl.matmul(rho), -half);
        out.add_scaled(&rho.matmul(&ldl), -half);
    }
    out += &commutator(&direct.c_dag_sigma, rho)?;
    out += &commutator(rho, &direct.sigma_dag_c)?;
    Ok(out)
}

/// Per-output-point health of an integrated state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateDiagnostics<T> {
    /// `|tr rho - 1|` before renormalization.
    pub trace_drift: T,
    pub hermiticity: T,
    /// Smallest eigenvalue, when it was computed for this point.
    pub min_eig: Option<T>,
}

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions<T> {
    pub positivity_tol: T,
    /// Compute the full spectrum every `eigen_every` output points
    /// (0 = never; a Cholesky positivity gate still runs on every point).
    pub eigen_every: usize,
}

impl<T: Real> Default for IntegrateOptions<T> {
    fn default() -> Self {
        Self {
            positivity_tol: T::lit(DEFAULT_POSITIVITY_TOL),
            eigen_every: 1,
        }
    }
}

/// Integrated unconditional trajectory.
#[derive(Clone, Debug)]
pub struct MasterSolution<T> {
    pub times: Vec<T>,
    pub states: Vec<DensityMatrix<T>>,
    pub diagnostics: Vec<StateDiagnostics<T>>,
}

impl<T: Real> MasterSolution<T> {
    /// Qubit Bloch vectors (slot 0 reduced) at every output point.
    pub fn qubit_bloch(&self) -> Result<Vec<[T; 3]>> {
        self.states
            .iter()
            .map(|rho| reduce_to_qubit(rho)?.bloch_vector())
            .collect()
    }

    pub fn max_trace_drift(&self) -> T {
        self.diagnostics.iter().map(|d| d.trace_drift).fold(T::zero(), T::max)
    }
}

/// Fixed-grid classic RK4; one step per grid interval. Every output state is
/// divided by its trace and checked for positivity.
pub fn integrate_master<T: Real>(
    rho0: &DensityMatrix<T>,
    spec: &GeneratorSpec<T>,
    t_grid: &[T],
    opts: &IntegrateOptions<T>,
) -> Result<MasterSolution<T>> {
    let mut states = Vec::with_capacity(t_grid.len());
    let diagnostics = integrate_master_observed(rho0, spec, t_grid, opts, |_, rho| states.push(rho.clone()))?;
    Ok(MasterSolution {
        times: t_grid.to_vec(),
        states,
        diagnostics,
    })
}

/// Like [`integrate_master`] but hands each output state to `observer`
/// instead of storing it.
pub fn integrate_master_observed<T: Real, F>(
    rho0: &DensityMatrix<T>,
    spec: &GeneratorSpec<T>,
    t_grid: &[T],
    opts: &IntegrateOptions<T>,
    mut observer: F,
) -> Result<Vec<StateDiagnostics<T>>>
where
    F: FnMut(usize, &DensityMatrix<T>),
{
    rho0.as_operator().check_same_layout(spec.hamiltonian())?;
    check_grid(t_grid)?;
    let mut diagnostics = Vec::with_capacity(t_grid.len());
    let mut rho = rho0.as_operator().clone();
    let first = diagnose(&rho, T::zero(), 0, t_grid, T::zero(), opts)?;
    diagnostics.push(first);
    observer(0, rho0);

    let half = T::lit(0.5);
    let sixth = T::one() / T::lit(6.0);
    for k in 1..t_grid.len() {
        let h = t_grid[k] - t_grid[k - 1];
        let k1 = apply_unchecked(&rho, spec);
        let mut tmp = rho.clone();
        tmp.add_scaled(&k1, h * half);
        let k2 = apply_unchecked(&tmp, spec);
        let mut tmp = rho.clone();
        tmp.add_scaled(&k2, h * half);
        let k3 = apply_unchecked(&tmp, spec);
        let mut tmp = rho.clone();
        tmp.add_scaled(&k3, h);
        let k4 = apply_unchecked(&tmp, spec);

        let w = h * sixth;
        rho.add_scaled(&k1, w);
        rho.add_scaled(&k2, w + w);
        rho.add_scaled(&k3, w + w);
        rho.add_scaled(&k4, w);

        let tr = rho.trace().re;
        let drift = (tr - T::one()).abs();
        rho.scale_in_place(T::one() / tr);
        let d = diagnose(&rho, drift, k, t_grid, h, opts)?;
        diagnostics.push(d);
        observer(k, &DensityMatrix::new_unchecked(rho.clone()));
    }
    Ok(diagnostics)
}

fn check_grid<T: Real>(t_grid: &[T]) -> Result<()> {
    if t_grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    Ok(())
}

fn diagnose<T: Real>(
    rho: &Operator<T>,
    trace_drift: T,
    step: usize,
    t_grid: &[T],
    dt: T,
    opts: &IntegrateOptions<T>,
) -> Result<StateDiagnostics<T>> {
    let min_eig = if opts.eigen_every > 0 && step % opts.eigen_every == 0 {
        Some(rho.min_eigenvalue()?)
    } else {
        None
    };
    let violated = match min_eig {
        Some(m) => m < -opts.positivity_tol,
        None => !linalg::is_positive_definite_shifted(rho.dim(), rho.as_slice(), opts.positivity_tol),
    };
    if violated {
        let m = match min_eig {
            Some(m) => m,
            None => rho.min_eigenvalue()?,
        };
        return Err(Error::PositivityViolation {
            step,
            time: t_grid[step].to_f64_lossy(),
            dt: dt.to_f64_lossy(),
            min_eig: m.to_f64_lossy(),
            threshold: opts.positivity_tol.to_f64_lossy(),
        });
    }
    Ok(StateDiagnostics {
        trace_drift,
        hermiticity: rho.hermiticity_error(),
        min_eig,
    })
}

/// Partial trace over every ancilla, keeping the qubit in slot 0.
pub fn reduce_to_qubit<T: Real>(rho: &DensityMatrix<T>) -> Result<DensityMatrix<T>> {
    if rho.layout().dims().first() != Some(&2) {
        return Err(Error::invalid(format!(
            "layout {} does not start with a qubit factor",
            rho.layout()
        )));
    }
    rho.partial_trace(&[0])
}

/// Closed-form first moments of a linear ancilla bank in vacuum input:
/// `<a_k(t)> = exp(-(gamma_k / 2 + i omega_k) t) <a_k(0)>`.
pub fn ancilla_moment_oracle<T: Real>(t: T, params: &[AncillaParams<T>], a0: &[C<T>]) -> Result<Vec<C<T>>> {
    if a0.len() != params.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: a0.len(),
        });
    }
    if t < T::zero() {
        return Err(Error::invalid("moment oracle needs t >= 0"));
    }
    Ok(params
        .iter()
        .zip(a0)
        .map(|(p, &m0)| {
            let rate = c(-p.gamma * T::lit(0.5) * t, -p.omega * t);
            m0 * rate.exp()
        })
        .collect())
}

/// Qubit-only generator where the qubit couples straight to white noise:
/// `H = (omega_q / 2) sz`, collapse operators `sqrt(kappa_k) sigma_k` and
/// the probe `L`.
pub fn markovian_baseline_spec<T: Real>(
    omega_q: T,
    sigma_ops: &[Operator<T>],
    probe: &Operator<T>,
) -> Result<GeneratorSpec<T>> {
    let qubit = HilbertLayout::single(2);
    for op in sigma_ops.iter().chain(std::iter::once(probe)) {
        if op.layout() != &qubit {
            return Err(Error::LayoutMismatch {
                left: qubit.clone(),
                right: op.layout().clone(),
            });
        }
    }
    let h = make_standard_operator::<T>(StandardOp::PauliZ, 2)?.scale_real(omega_q * T::lit(0.5));
    let mut collapse = sigma_ops.to_vec();
    collapse.push(probe.clone());
    GeneratorSpec::new(h, collapse)
}

/// Baseline collapse operators `sqrt(kappa_k) sigma_k` from ancilla params.
pub fn markovian_sigma_ops<T: Real>(params: &[AncillaParams<T>]) -> Vec<Operator<T>> {
    params
        .iter()
        .map(|p| p.sigma.matrix().scale_real(p.kappa.sqrt()))
        .collect()
}

pub fn markovian_probe_op<T: Real>(gamma_q: T, probe: QubitCoupling<T>) -> Operator<T> {
    probe.matrix().scale_real(gamma_q.sqrt())
}

pub fn markovian_baseline_apply<T: Real>(
    rho_q: &Operator<T>,
    omega_q: T,
    sigma_ops: &[Operator<T>],
    probe: &Operator<T>,
) -> Result<Operator<T>> {
    let spec = markovian_baseline_spec(omega_q, sigma_ops, probe)?;
    lindblad_apply(rho_q, &spec)
}

/// Uniform grid `0, dt, ..., n dt` with `n = round(t_final / dt)`.
pub fn uniform_grid<T: Real>(dt: T, t_final: T) -> Result<Vec<T>> {
    if !(dt > T::zero()) || !(t_final > T::zero()) {
        return Err(Error::invalid("dt and t_final must be positive"));
    }
    let n = (t_final / dt).round().to_usize().unwrap_or(0).max(1);
    Ok((0..=n).map(|k| dt * T::lit(k as f64)).collect())
}

/// `<a>` for the annihilation operator in `slot`.
pub fn mode_expectation<T: Real>(rho: &DensityMatrix<T>, slot: usize) -> Result<C<T>> {
    let n = rho.layout().dims().get(slot).copied().ok_or_else(|| Error::invalid("slot out of range"))?;
    let a = make_standard_operator::<T>(StandardOp::Annihilation, n)?;
    let full = crate::operator::embed(&a, slot, rho.layout())?;
    rho.expectation(&full)
}
