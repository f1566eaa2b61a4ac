//! Conditional dynamics under continuous homodyne detection of the probe
//! quadrature `L + L^dag`.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::master::{apply_unchecked, GeneratorSpec};
use crate::operator::{DensityMatrix, Operator};
use crate::scalar::{cr, Real};
use crate::slh::SlhModel;

/// States whose smallest eigenvalue drops below minus this abort the run.
pub const POSITIVITY_FLOOR: f64 = 1e-4;

/// Standard normal draws addressed by `(seed, step)`.
///
/// Each step reads exactly four 32-bit words of a ChaCha8 stream, so any
/// step can be regenerated without replaying the ones before it.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    const WORDS_PER_STEP: u128 = 4;

    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Standard normal variate for `step` (Box-Muller, cosine branch).
    pub fn normal(&mut self, step: u64) -> f64 {
        self.rng.set_word_pos(step as u128 * Self::WORDS_PER_STEP);
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Wiener increment with variance `dt` for `step`.
    pub fn increment<T: Real>(&mut self, step: u64, dt: T) -> T {
        T::lit(self.normal(step)) * dt.sqrt()
    }
}

/// Discretization of the conditional-state update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmeScheme {
    /// `rho + G(rho) dt + F(rho) dW`, then trace renormalization.
    EulerMaruyama,
    /// `M rho M^dag + sum_unmonitored L rho L^dag dt` with
    /// `M = I + K dt + L dY`, then trace renormalization. Agrees with
    /// Euler-Maruyama to first order and maps states to states.
    #[default]
    Kraus,
}

impl fmt::Display for SmeScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SmeScheme::EulerMaruyama => "euler_maruyama",
            SmeScheme::Kraus => "kraus",
        })
    }
}

impl FromStr for SmeScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "euler_maruyama" | "euler-maruyama" | "em" => Ok(SmeScheme::EulerMaruyama),
            "kraus" => Ok(SmeScheme::Kraus),
            other => Err(Error::invalid(format!("unknown filter scheme `{other}`"))),
        }
    }
}

/// Generator of the unconditional dynamics together with the measured
/// probe operator. The probe must be one of the collapse operators, or zero.
#[derive(Clone, Debug)]
pub struct FilterModel<T> {
    spec: GeneratorSpec<T>,
    probe: Operator<T>,
    quadrature: Operator<T>,
    unmonitored: Vec<Operator<T>>,
    scheme: SmeScheme,
}

impl<T: Real> FilterModel<T> {
    pub fn new(spec: GeneratorSpec<T>, probe: Operator<T>) -> Result<Self> {
        spec.hamiltonian().check_same_layout(&probe)?;
        let mut unmonitored = spec.collapse_ops().to_vec();
        if probe.max_abs() != T::zero() {
            let pos = unmonitored
                .iter()
                .position(|l| *l == probe)
                .ok_or_else(|| Error::invalid("probe operator is not one of the collapse operators"))?;
            unmonitored.remove(pos);
        }
        let quadrature = &probe + &probe.adjoint();
        Ok(Self { spec, probe, quadrature, unmonitored, scheme: SmeScheme::default() })
    }

    /// Uses the model's probe channel; a model without one is filtered with
    /// `L = 0`, which leaves the record uninformative.
    pub fn from_model(model: &SlhModel<T>) -> Result<Self> {
        let spec = GeneratorSpec::from_model(model)?;
        let probe = match model.probe_operator() {
            Some(l) => l.clone(),
            None => Operator::zeros(model.layout().clone()),
        };
        Self::new(spec, probe)
    }

    pub fn with_scheme(mut self, scheme: SmeScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn scheme(&self) -> SmeScheme {
        self.scheme
    }

    pub fn spec(&self) -> &GeneratorSpec<T> {
        &self.spec
    }

    pub fn probe(&self) -> &Operator<T> {
        &self.probe
    }

    /// `tr[(L + L^dag) rho]`.
    pub fn measured_mean(&self, rho: &Operator<T>) -> T {
        trace_product(&self.quadrature, rho)
    }

    /// One update of `rho` with innovation `dw` under the model's scheme.
    /// Returns the new state and `dY`.
    pub fn advance(&self, rho: &DensityMatrix<T>, dt: T, dw: T) -> Result<(DensityMatrix<T>, T)> {
        rho.as_operator().check_same_layout(self.spec.hamiltonian())?;
        check_step(dt, dw)?;
        let m = self.measured_mean(rho.as_operator());
        let next = self.step(rho.as_operator(), m, dt, dw);
        gate(&next, 0, dt, dt)?;
        Ok((DensityMatrix::new_unchecked(next), m * dt + dw))
    }

    fn step(&self, rho: &Operator<T>, m: T, dt: T, dw: T) -> Operator<T> {
        match self.scheme {
            SmeScheme::EulerMaruyama => euler_step(rho, &self.spec, &self.probe, m, dt, dw),
            SmeScheme::Kraus => kraus_step(rho, self, m * dt + dw, dt),
        }
    }
}

fn trace_product<T: Real>(a: &Operator<T>, b: &Operator<T>) -> T {
    let n = a.dim();
    let (x, y) = (a.as_slice(), b.as_slice());
    let mut acc = T::zero();
    for i in 0..n {
        for k in 0..n {
            let p = x[i * n + k];
            if p.re != T::zero() || p.im != T::zero() {
                acc += (p * y[k * n + i]).re;
            }
        }
    }
    acc
}

/// One Euler-Maruyama step of the normalized stochastic master equation
/// `d rho = G(rho) dt + (L rho + rho L^dag - m rho) dW`, `m = tr[(L + L^dag) rho]`,
/// followed by trace renormalization. Returns the new state and
/// `dY = m dt + dW`.
pub fn sme_step<T: Real>(
    rho: &DensityMatrix<T>,
    spec: &GeneratorSpec<T>,
    probe: &Operator<T>,
    dt: T,
    dw: T,
) -> Result<(DensityMatrix<T>, T)> {
    rho.as_operator().check_same_layout(spec.hamiltonian())?;
    rho.as_operator().check_same_layout(probe)?;
    check_step(dt, dw)?;
    let quadrature = probe + &probe.adjoint();
    let m = trace_product(&quadrature, rho.as_operator());
    let next = euler_step(rho.as_operator(), spec, probe, m, dt, dw);
    gate(&next, 0, dt, dt)?;
    Ok((DensityMatrix::new_unchecked(next), m * dt + dw))
}

fn check_step<T: Real>(dt: T, dw: T) -> Result<()> {
    if !(dt > T::zero()) || !dt.is_finite() {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if !dw.is_finite() {
        return Err(Error::invalid("dW must be finite"));
    }
    Ok(())
}

fn euler_step<T: Real>(rho: &Operator<T>, spec: &GeneratorSpec<T>, probe: &Operator<T>, m: T, dt: T, dw: T) -> Operator<T> {
    let drift = apply_unchecked(rho, spec);
    let l_rho = probe.matmul(rho);
    let rho_ld = rho.matmul_adjoint(probe);
    let mut next = rho.clone();
    next.add_scaled(&drift, dt);
    next.add_scaled(&l_rho, dw);
    next.add_scaled(&rho_ld, dw);
    next.add_scaled(rho, -m * dw);
    normalize(next)
}

fn kraus_step<T: Real>(rho: &Operator<T>, model: &FilterModel<T>, dy: T, dt: T) -> Operator<T> {
    let mut m_op = Operator::identity(rho.layout().clone());
    m_op.add_scaled(model.spec.effective(), dt);
    m_op.add_scaled(&model.probe, dy);
    let m_rho = m_op.matmul(rho);
    let mut next = m_rho.matmul_adjoint(&m_op);
    for l in &model.unmonitored {
        next.add_scaled(&l.matmul(rho).matmul_adjoint(l), dt);
    }
    normalize(next)
}

// Hermitian part scaled to unit trace.
fn normalize<T: Real>(op: Operator<T>) -> Operator<T> {
    let mut sym = &op + &op.adjoint();
    let tr = sym.trace().re;
    sym.scale_in_place(T::one() / tr);
    sym
}

fn gate<T: Real>(rho: &Operator<T>, step: usize, time: T, dt: T) -> Result<()> {
    let floor = T::lit(POSITIVITY_FLOOR);
    let finite = rho.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite());
    if finite && linalg::is_positive_definite_shifted(rho.dim(), rho.as_slice(), floor) {
        return Ok(());
    }
    let min_eig = if finite {
        rho.min_eigenvalue().map(|v| v.to_f64_lossy()).unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    Err(Error::PositivityViolation {
        step,
        time: time.to_f64_lossy(),
        dt: dt.to_f64_lossy(),
        min_eig,
        threshold: POSITIVITY_FLOOR,
    })
}

/// What a trajectory keeps per grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum StorageMode {
    /// Full conditional states of the augmented system.
    #[default]
    Full,
    /// Only the qubit Bloch vector (slot 0 must be a qubit).
    BlochOnly,
}

#[derive(Clone, Debug)]
pub enum TrajectoryStates<T> {
    Full(Vec<DensityMatrix<T>>),
    Bloch(Vec<[T; 3]>),
}

/// One simulated measurement run. `record[k]` and `innovations[k]` belong to
/// the step from `t_grid[k]` to `t_grid[k + 1]`.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub t_grid: Vec<T>,
    pub states: TrajectoryStates<T>,
    pub record: Vec<T>,
    pub innovations: Vec<T>,
    /// `tr[(L + L^dag) rho]` before each step.
    pub measured_mean: Vec<T>,
    pub seed: u64,
}

impl<T: Real> Trajectory<T> {
    /// Qubit Bloch vectors whichever way the trajectory was stored.
    pub fn bloch(&self) -> Result<Vec<[T; 3]>> {
        match &self.states {
            TrajectoryStates::Bloch(b) => Ok(b.clone()),
            TrajectoryStates::Full(_) => conditional_qubit(self),
        }
    }

    pub fn full_states(&self) -> Option<&[DensityMatrix<T>]> {
        match &self.states {
            TrajectoryStates::Full(s) => Some(s),
            TrajectoryStates::Bloch(_) => None,
        }
    }
}

/// Qubit Bloch vector of a state whose slot 0 is a qubit.
pub(crate) fn leading_qubit_bloch<T: Real>(rho: &Operator<T>) -> [T; 3] {
    let n = rho.dim();
    let m = n / 2;
    let d = rho.as_slice();
    let mut q = [cr(T::zero()); 4];
    for k in 0..m {
        q[0] += d[k * n + k];
        q[1] += d[k * n + m + k];
        q[2] += d[(m + k) * n + k];
        q[3] += d[(m + k) * n + m + k];
    }
    crate::operator::qubit_bloch(&q)
}

fn check_inputs<T: Real>(rho0: &DensityMatrix<T>, model: &FilterModel<T>, t_grid: &[T], mode: StorageMode) -> Result<()> {
    rho0.as_operator().check_same_layout(model.spec.hamiltonian())?;
    if t_grid.is_empty() {
        return Err(Error::invalid("time grid is empty"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    if mode == StorageMode::BlochOnly && rho0.layout().dims().first() != Some(&2) {
        return Err(Error::invalid(format!("Bloch storage needs a qubit in slot 0, layout is {}", rho0.layout())));
    }
    Ok(())
}

/// Simulates one homodyne run. Noise for step `k` comes from
/// `NoiseStream::new(seed)` at index `k`, so the whole path is fixed by
/// the seed. The stored innovation is `dY - m dt`, which equals the drawn
/// increment up to rounding and makes the bookkeeping identity exact.
pub fn simulate_trajectory<T: Real>(
    rho0: &DensityMatrix<T>,
    model: &FilterModel<T>,
    t_grid: &[T],
    seed: u64,
    mode: StorageMode,
) -> Result<Trajectory<T>> {
    let mut noise = NoiseStream::new(seed);
    run(rho0, model, t_grid, mode, seed, |k, dt, m| {
        let dy = m * dt + noise.increment(k as u64, dt);
        Ok(dy)
    })
}

/// Re-runs the filter driven by a measurement record alone; the innovation
/// of each step is recovered as `dY - tr[(L + L^dag) rho] dt`.
pub fn replay_filter<T: Real>(
    rho0: &DensityMatrix<T>,
    model: &FilterModel<T>,
    record: &[T],
    t_grid: &[T],
) -> Result<Vec<DensityMatrix<T>>> {
    if record.len() + 1 != t_grid.len() {
        return Err(Error::LengthMismatch { expected: t_grid.len().saturating_sub(1), actual: record.len() });
    }
    let traj = run(rho0, model, t_grid, StorageMode::Full, 0, |k, _, _| Ok(record[k]))?;
    match traj.states {
        TrajectoryStates::Full(s) => Ok(s),
        TrajectoryStates::Bloch(_) => unreachable!(),
    }
}

fn run<T: Real, F>(
    rho0: &DensityMatrix<T>,
    model: &FilterModel<T>,
    t_grid: &[T],
    mode: StorageMode,
    seed: u64,
    mut next_record: F,
) -> Result<Trajectory<T>>
where
    F: FnMut(usize, T, T) -> Result<T>,
{
    check_inputs(rho0, model, t_grid, mode)?;
    let steps = t_grid.len() - 1;
    let mut record = Vec::with_capacity(steps);
    let mut innovations = Vec::with_capacity(steps);
    let mut means = Vec::with_capacity(steps);
    let mut full = Vec::new();
    let mut bloch = Vec::new();
    let mut rho = rho0.as_operator().clone();
    let mut keep = |rho: &Operator<T>| match mode {
        StorageMode::Full => full.push(DensityMatrix::new_unchecked(rho.clone())),
        StorageMode::BlochOnly => bloch.push(leading_qubit_bloch(rho)),
    };
    keep(&rho);
    for k in 0..steps {
        let dt = t_grid[k + 1] - t_grid[k];
        let m = model.measured_mean(&rho);
        let dy = next_record(k, dt, m)?;
        let dw = dy - m * dt;
        if !dw.is_finite() {
            return Err(Error::invalid(format!("non-finite record increment at step {k}")));
        }
        rho = model.step(&rho, m, dt, dw);
        gate(&rho, k + 1, t_grid[k + 1], dt)?;
        record.push(dy);
        innovations.push(dw);
        means.push(m);
        keep(&rho);
    }
    let states = match mode {
        StorageMode::Full => TrajectoryStates::Full(full),
        StorageMode::BlochOnly => TrajectoryStates::Bloch(bloch),
    };
    Ok(Trajectory {
        t_grid: t_grid.to_vec(),
        states,
        record,
        innovations,
        measured_mean: means,
        seed,
    })
}

/// Per-time qubit Bloch vectors of a trajectory that stored full states.
pub fn conditional_qubit<T: Real>(trajectory: &Trajectory<T>) -> Result<Vec<[T; 3]>> {
    match &trajectory.states {
        TrajectoryStates::Full(states) => states
            .iter()
            .map(|rho| crate::master::reduce_to_qubit(rho)?.bloch_vector())
            .collect(),
        TrajectoryStates::Bloch(_) => Err(Error::UnsupportedMode(
            "trajectory stores Bloch vectors only; rerun with full state storage".into(),
        )),
    }
}

/// Mean and standard error of conditional qubit Bloch vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleResult<T> {
    pub t_grid: Vec<T>,
    pub mean: Vec<[T; 3]>,
    /// Sample standard deviation divided by `sqrt(n_traj)`.
    pub stderr: Vec<[T; 3]>,
    pub n_traj: usize,
    pub seeds: Vec<u64>,
}

const ENSEMBLE_CHUNK: usize = 64;

/// Runs seeds `base_seed .. base_seed + n_traj` (in parallel) and averages
/// their qubit Bloch vectors. Accumulation happens in seed order, so the
/// result does not depend on the thread schedule.
pub fn ensemble_average<T: Real>(
    rho0: &DensityMatrix<T>,
    model: &FilterModel<T>,
    t_grid: &[T],
    n_traj: usize,
    base_seed: u64,
) -> Result<EnsembleResult<T>> {
    if n_traj < 2 {
        return Err(Error::invalid(format!("an ensemble needs at least 2 trajectories, got {n_traj}")));
    }
    check_inputs(rho0, model, t_grid, StorageMode::BlochOnly)?;
    let seeds: Vec<u64> = (0..n_traj as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let points = t_grid.len();
    let mut count = 0usize;
    let mut mean = vec![[T::zero(); 3]; points];
    let mut m2 = vec![[T::zero(); 3]; points];
    let mut failed: Vec<(u64, Error)> = Vec::new();

    for chunk in seeds.chunks(ENSEMBLE_CHUNK) {
        let results: Vec<(u64, Result<Trajectory<T>>)> = chunk
            .par_iter()
            .map(|&s| (s, simulate_trajectory(rho0, model, t_grid, s, StorageMode::BlochOnly)))
            .collect();
        for (seed, res) in results {
            let traj = match res {
                Ok(t) => t,
                Err(e) => {
                    failed.push((seed, e));
                    continue;
                }
            };
            let TrajectoryStates::Bloch(b) = traj.states else { unreachable!() };
            // Welford update in seed order
            count += 1;
            let n = T::from_usize(count).unwrap();
            for (i, v) in b.iter().enumerate() {
                for c in 0..3 {
                    let delta = v[c] - mean[i][c];
                    mean[i][c] += delta / n;
                    m2[i][c] += delta * (v[c] - mean[i][c]);
                }
            }
        }
    }
    if !failed.is_empty() {
        return Err(Error::EnsembleFailed {
            failed: failed.len(),
            total: n_traj,
            seeds: failed.iter().map(|f| f.0).collect(),
            first: failed[0].1.to_string(),
        });
    }
    let n = T::from_usize(count).unwrap();
    let stderr = m2
        .iter()
        .map(|s| {
            let mut out = [T::zero(); 3];
            for c in 0..3 {
                out[c] = (s[c] / (n - T::one())).sqrt() / n.sqrt();
            }
            out
        })
        .collect();
    Ok(EnsembleResult { t_grid: t_grid.to_vec(), mean, stderr, n_traj, seeds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::master::{integrate_master, uniform_grid};
    use crate::operator::{embed, make_standard_operator, HilbertLayout, StandardOp};
    use crate::slh::{build_ancilla_bank, build_augmented, build_probed, AncillaParams, FieldMode, QubitCoupling, QubitOpKind};

    fn fig4(n: usize, gamma_q: f64) -> SlhModel<f64> {
        let p = vec![AncillaParams::new(2.0, 0.6, 1.0, QubitOpKind::Y, n).unwrap()];
        let bank = build_ancilla_bank(&p, FieldMode::Independent).unwrap();
        let aug = build_augmented(2.0, &bank, &p).unwrap();
        build_probed(&aug, gamma_q, QubitCoupling::new(QubitOpKind::X)).unwrap()
    }

    fn start(n: usize) -> DensityMatrix<f64> {
        DensityMatrix::product(&[DensityMatrix::from_bloch(1.0, 0.0, 0.0).unwrap(), DensityMatrix::fock(n, 0).unwrap()]).unwrap()
    }

    #[test]
    fn noise_is_addressable_and_standard() {
        let mut a = NoiseStream::new(7);
        let seq: Vec<f64> = (0..5).map(|k| a.normal(k)).collect();
        let mut b = NoiseStream::new(7);
        assert_eq!(b.normal(3), seq[3]);
        assert_eq!(b.normal(0), seq[0]);
        assert_ne!(NoiseStream::new(8).normal(0), seq[0]);
        let mut s = NoiseStream::new(1);
        let xs: Vec<f64> = (0..200_000).map(|k| s.normal(k)).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.01);
    }

    #[test]
    fn zero_noise_zero_probe_is_euler_step() {
        let model = fig4(3, 0.0);
        let spec = GeneratorSpec::from_model(&model).unwrap();
        let rho = start(3);
        let probe = Operator::zeros(model.layout().clone());
        let (next, dy) = sme_step(&rho, &spec, &probe, 1e-3, 0.0).unwrap();
        let mut expect = rho.as_operator().clone();
        expect.add_scaled(&apply_unchecked(rho.as_operator(), &spec), 1e-3);
        assert!(next.max_abs_diff(&expect) < 1e-15);
        assert_eq!(dy, 0.0);
    }

    #[test]
    fn schemes_agree_to_first_order() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap();
        let em = fm.clone().with_scheme(SmeScheme::EulerMaruyama);
        for &dt in &[1e-3, 1e-4] {
            let dw = 0.5 * f64::sqrt(dt);
            let (a, ya) = fm.advance(&start(3), dt, dw).unwrap();
            let (b, yb) = em.advance(&start(3), dt, dw).unwrap();
            assert_eq!(ya, yb);
            assert!(a.max_abs_diff(&b) < 2.0 * dt, "{}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn euler_maruyama_loses_positivity_on_pure_states() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap().with_scheme(SmeScheme::EulerMaruyama);
        let grid = uniform_grid(1e-3, 1.0).unwrap();
        assert!(matches!(
            simulate_trajectory(&start(3), &fm, &grid, 11, StorageMode::BlochOnly),
            Err(Error::PositivityViolation { .. })
        ));
    }

    #[test]
    fn measurement_term_is_traceless() {
        let model = fig4(3, 0.8);
        let l = model.probe_operator().unwrap();
        let rho = start(3);
        let r = rho.as_operator();
        let m = trace_product(&(l + &l.adjoint()), r);
        let f = &(&l.matmul(r) + &r.matmul_adjoint(l)) - &r.scale_real(m);
        assert!(f.trace().norm() < 1e-15);
    }

    #[test]
    fn first_step_record_value() {
        let model = fig4(5, 0.8);
        let spec = GeneratorSpec::from_model(&model).unwrap();
        let dt = 1e-3;
        let (_, dy) = sme_step(&start(5), &spec, model.probe_operator().unwrap(), dt, dt.sqrt()).unwrap();
        assert!((dy - (2.0 * 0.8f64.sqrt() * dt + dt.sqrt())).abs() < 1e-15);
    }

    #[test]
    fn reruns_are_bit_identical_and_bookkeeping_exact() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap();
        let grid = uniform_grid(1e-3, 0.5).unwrap();
        let a = simulate_trajectory(&start(3), &fm, &grid, 11, StorageMode::Full).unwrap();
        let b = simulate_trajectory(&start(3), &fm, &grid, 11, StorageMode::Full).unwrap();
        assert_eq!(a.record, b.record);
        assert_eq!(a.innovations, b.innovations);
        for (x, y) in a.full_states().unwrap().iter().zip(b.full_states().unwrap()) {
            assert_eq!(x.as_operator(), y.as_operator());
        }
        for k in 0..a.record.len() {
            assert_eq!(a.record[k] - a.measured_mean[k] * (grid[k + 1] - grid[k]), a.innovations[k]);
        }
        for s in a.full_states().unwrap() {
            assert!((s.trace().re - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn replay_reproduces_states() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap();
        let grid = uniform_grid(1e-3, 0.5).unwrap();
        let traj = simulate_trajectory(&start(3), &fm, &grid, 3, StorageMode::Full).unwrap();
        let replayed = replay_filter(&start(3), &fm, &traj.record, &grid).unwrap();
        for (x, y) in replayed.iter().zip(traj.full_states().unwrap()) {
            assert!(x.max_abs_diff(y) <= 1e-10);
        }
        assert!(matches!(
            replay_filter(&start(3), &fm, &traj.record[1..], &grid),
            Err(Error::LengthMismatch { .. })
        ));
        let em = fm.clone().with_scheme(SmeScheme::EulerMaruyama);
        let mut bad = traj.record.clone();
        bad[10] += 1e6;
        assert!(matches!(
            replay_filter(&start(3), &em, &bad, &grid),
            Err(Error::PositivityViolation { .. })
        ));
    }

    #[test]
    fn without_probe_the_record_carries_no_information() {
        let fm = FilterModel::from_model(&fig4(3, 0.0)).unwrap();
        let grid = uniform_grid(1e-3, 1.0).unwrap();
        let a = simulate_trajectory(&start(3), &fm, &grid, 1, StorageMode::BlochOnly).unwrap();
        let b = simulate_trajectory(&start(3), &fm, &grid, 2, StorageMode::BlochOnly).unwrap();
        assert_ne!(a.record, b.record);
        assert_eq!(a.bloch().unwrap(), b.bloch().unwrap());
        let me = integrate_master(&start(3), fm.spec(), &grid, &Default::default()).unwrap();
        let mb = me.qubit_bloch().unwrap();
        for (x, y) in a.bloch().unwrap().iter().zip(&mb) {
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() < 2e-3);
            }
        }
        let ens = ensemble_average(&start(3), &fm, &grid, 2, 5).unwrap();
        assert_eq!(ens.mean, a.bloch().unwrap());
    }

    #[test]
    fn conditional_qubit_paths() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap();
        let grid = uniform_grid(1e-3, 0.2).unwrap();
        let traj = simulate_trajectory(&start(3), &fm, &grid, 9, StorageMode::Full).unwrap();
        let bl = conditional_qubit(&traj).unwrap();
        assert_eq!(bl[0], [1.0, 0.0, 0.0]);
        let sx = embed(&make_standard_operator::<f64>(StandardOp::PauliX, 2).unwrap(), 0, &HilbertLayout::new(vec![2, 3]).unwrap()).unwrap();
        for (b, s) in bl.iter().zip(traj.full_states().unwrap()) {
            assert!((b[0] - s.expectation(&sx).unwrap().re).abs() < 1e-12);
            assert!((b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt() <= 1.0 + 1e-8);
        }
        let light = simulate_trajectory(&start(3), &fm, &grid, 9, StorageMode::BlochOnly).unwrap();
        assert!(matches!(conditional_qubit(&light), Err(Error::UnsupportedMode(_))));
        for (x, y) in light.bloch().unwrap().iter().zip(&bl) {
            for c in 0..3 {
                assert!((x[c] - y[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ensemble_rejects_single_trajectory() {
        let fm = FilterModel::from_model(&fig4(2, 0.8)).unwrap();
        assert!(ensemble_average(&start(2), &fm, &[0.0, 1e-3], 1, 0).is_err());
    }

    #[test]
    fn ensemble_reports_failing_seeds() {
        let fm = FilterModel::from_model(&fig4(3, 0.8)).unwrap().with_scheme(SmeScheme::EulerMaruyama);
        let grid = uniform_grid(1e-3, 1.0).unwrap();
        match ensemble_average(&start(3), &fm, &grid, 3, 40) {
            Err(Error::EnsembleFailed { failed, total, seeds, .. }) => {
                assert_eq!(total, 3);
                assert_eq!(failed, seeds.len());
                assert!(seeds.iter().all(|s| (40..43).contains(s)));
            }
            other => panic!("expected ensemble failure, got {other:?}"),
        }
    }

    #[test]
    fn stderr_shrinks_with_more_trajectories() {
        let fm = FilterModel::from_model(&fig4(2, 0.8)).unwrap();
        let grid = uniform_grid(1e-2, 1.0).unwrap();
        let a = ensemble_average(&start(2), &fm, &grid, 100, 0).unwrap();
        let b = ensemble_average(&start(2), &fm, &grid, 200, 1000).unwrap();
        let last = grid.len() - 1;
        let ratio = b.stderr[last][0] / a.stderr[last][0];
        assert!((ratio - 0.5f64.sqrt()).abs() < 0.2 * 0.5f64.sqrt(), "{ratio}");
    }
}
