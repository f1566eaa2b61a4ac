//! Lorentzian spectra, their memory kernels, and Lorentzian-mixture fitting.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::scalar::{c, Real, C};

/// One Lorentzian line: peak position, full width at half maximum, and weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LorentzianComponent<T> {
    pub center: T,
    pub linewidth: T,
    pub weight: T,
}

impl<T: Real> LorentzianComponent<T> {
    pub fn new(center: T, linewidth: T, weight: T) -> Result<Self> {
        let comp = LorentzianComponent { center, linewidth, weight };
        comp.validate()?;
        Ok(comp)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.center.is_finite() {
            return Err(Error::invalid("lorentzian center must be finite"));
        }
        if !(self.linewidth > T::zero()) || !self.linewidth.is_finite() {
            return Err(Error::invalid(format!("lorentzian linewidth must be positive, got {}", self.linewidth)));
        }
        if !(self.weight >= T::zero()) || !self.weight.is_finite() {
            return Err(Error::invalid(format!("lorentzian weight must be non-negative, got {}", self.weight)));
        }
        Ok(())
    }
}

/// Unit-peak Lorentzian line shape.
pub fn lorentzian_psd<T: Real>(omega: T, comp: &LorentzianComponent<T>) -> T {
    let a = comp.linewidth * comp.linewidth / T::lit(4.0);
    let d = omega - comp.center;
    a / (a + d * d)
}

/// Weighted sum of Lorentzian lines.
pub fn mixture_psd<T: Real>(omega: T, comps: &[LorentzianComponent<T>]) -> T {
    comps.iter().map(|k| k.weight * lorentzian_psd(omega, k)).sum()
}

/// Damped oscillating kernel of a single line at time `t`.
fn line_kernel<T: Real>(t: T, comp: &LorentzianComponent<T>) -> C<T> {
    let half = comp.linewidth / T::lit(2.0);
    let amp = half * (-half * t).exp();
    let phase = -comp.center * t;
    c(amp * phase.cos(), amp * phase.sin())
}

/// Causal memory kernel of the mixture. Errors for `t < 0`.
pub fn memory_kernel<T: Real>(t: T, comps: &[LorentzianComponent<T>]) -> Result<C<T>> {
    if !(t >= T::zero()) {
        return Err(Error::invalid(format!("memory kernel is causal; t = {t} < 0")));
    }
    Ok(comps
        .iter()
        .fold(c(T::zero(), T::zero()), |acc, k| acc + line_kernel(t, k) * k.weight))
}

/// Largest deviation between each line shape and the squared magnitude of
/// the trapezoidal one-sided Fourier transform of its kernel, over all
/// components and grid frequencies.
///
/// The step must resolve the slowest decay and the fastest oscillation of
/// the integrand (`dt * max(|omega - center|, linewidth / 2) <= pi / 10`),
/// and `t_max` must cover at least `20 / linewidth` of every line.
pub fn kernel_psd_consistency<T: Real>(
    comps: &[LorentzianComponent<T>],
    omega_grid: &[T],
    t_max: T,
    dt: T,
) -> Result<T> {
    if comps.is_empty() || omega_grid.is_empty() {
        return Err(Error::invalid("need at least one component and one frequency"));
    }
    if !(dt > T::zero()) || !(t_max > dt) {
        return Err(Error::invalid(format!("need 0 < dt < t_max, got dt = {dt}, t_max = {t_max}")));
    }
    let limit = T::PI() / T::lit(10.0);
    for comp in comps {
        comp.validate()?;
        if t_max * comp.linewidth < T::lit(20.0) {
            return Err(Error::invalid(format!(
                "t_max = {t_max} too short for linewidth {}; need t_max >= {}",
                comp.linewidth,
                T::lit(20.0) / comp.linewidth
            )));
        }
        for &w in omega_grid {
            let rate = (w - comp.center).abs().max(comp.linewidth / T::lit(2.0));
            if dt * rate > limit {
                return Err(Error::invalid(format!(
                    "dt = {dt} does not resolve frequency offset {} (need dt <= {})",
                    rate,
                    limit / rate
                )));
            }
        }
    }

    let steps = (t_max / dt).round().to_usize().unwrap_or(usize::MAX).max(1);
    let h = t_max / T::from_usize(steps).unwrap();
    let half = T::lit(0.5);
    let mut worst = T::zero();
    for comp in comps {
        let g2 = comp.linewidth * half;
        for &w in omega_grid {
            // integrand (g/2) exp(-(g/2) t + i (w - w_k) t), advanced by a fixed ratio
            let rate = c(-g2, w - comp.center);
            let ratio = (rate * h).exp();
            let mut f = c(g2, T::zero());
            let mut sum = f * half;
            for k in 1..steps {
                f = f * ratio;
                if k % 1024 == 0 {
                    f = (rate * (h * T::from_usize(k).unwrap())).exp() * g2;
                }
                sum += f;
            }
            let tail = (rate * t_max).exp() * g2;
            sum += tail * half;
            let ft = sum * h;
            let err = (ft.norm_sqr() - lorentzian_psd(w, comp)).abs();
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Sampled target spectrum on a strictly increasing frequency grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumSamples<T> {
    omega: Vec<T>,
    values: Vec<T>,
}

impl<T: Real> SpectrumSamples<T> {
    pub fn new(omega: Vec<T>, values: Vec<T>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(Error::LengthMismatch { expected: omega.len(), actual: values.len() });
        }
        if omega.is_empty() {
            return Err(Error::invalid("spectrum has no samples"));
        }
        for (i, (&w, &j)) in omega.iter().zip(&values).enumerate() {
            if !w.is_finite() || !j.is_finite() {
                return Err(Error::invalid(format!("non-finite sample at row {i}")));
            }
            if j < T::zero() {
                return Err(Error::invalid(format!("negative spectral density {j} at row {i}")));
            }
            if i > 0 && w <= omega[i - 1] {
                return Err(Error::invalid(format!("frequencies must strictly increase (row {i})")));
            }
        }
        Ok(SpectrumSamples { omega, values })
    }

    /// Samples a Lorentzian mixture on the given grid.
    pub fn from_mixture(omega: Vec<T>, comps: &[LorentzianComponent<T>]) -> Result<Self> {
        let values = omega.iter().map(|&w| mixture_psd(w, comps)).collect();
        Self::new(omega, values)
    }

    pub fn omega(&self) -> &[T] {
        &self.omega
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

impl SpectrumSamples<f64> {
    /// Reads a two-column `omega,J` CSV with one header row; `#` lines are skipped.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)?;
        let (mut omega, mut values) = (Vec::new(), Vec::new());
        for (i, row) in rdr.deserialize::<(f64, f64)>().enumerate() {
            let (w, j) = row.map_err(|e| Error::invalid(format!("spectrum row {}: {e}", i + 1)))?;
            omega.push(w);
            values.push(j);
        }
        Self::new(omega, values)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["omega", "J"])?;
        for (o, j) in self.omega.iter().zip(&self.values) {
            w.write_record([format!("{o:.11e}"), format!("{j:.11e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult<T> {
    pub components: Vec<LorentzianComponent<T>>,
    /// Root-mean-square residual over the samples.
    pub rmse: T,
    pub converged: bool,
    pub iterations: usize,
}

const MAX_ITERATIONS: usize = 200;
const REL_TOL: f64 = 1e-10;

// Unconstrained parameters per line: (center, ln linewidth, sqrt weight).
fn pack<T: Real>(comps: &[LorentzianComponent<T>]) -> Vec<T> {
    comps
        .iter()
        .flat_map(|k| [k.center, k.linewidth.ln(), k.weight.sqrt()])
        .collect()
}

fn unpack<T: Real>(p: &[T]) -> Vec<LorentzianComponent<T>> {
    p.chunks(3)
        .map(|q| LorentzianComponent { center: q[0], linewidth: q[1].exp(), weight: q[2] * q[2] })
        .collect()
}

fn cost<T: Real>(samples: &SpectrumSamples<T>, comps: &[LorentzianComponent<T>]) -> T {
    samples
        .omega
        .iter()
        .zip(&samples.values)
        .map(|(&w, &j)| {
            let r = mixture_psd(w, comps) - j;
            r * r
        })
        .sum()
}

fn residuals_and_jacobian<T: Real>(samples: &SpectrumSamples<T>, p: &[T]) -> (Vec<T>, Vec<T>) {
    let np = p.len();
    let m = samples.len();
    let comps = unpack(p);
    let mut r = vec![T::zero(); m];
    let mut jac = vec![T::zero(); m * np];
    let two = T::lit(2.0);
    for (row, (&w, &target)) in samples.omega.iter().zip(&samples.values).enumerate() {
        let mut model = T::zero();
        for (k, comp) in comps.iter().enumerate() {
            let a = comp.linewidth * comp.linewidth / T::lit(4.0);
            let d = w - comp.center;
            let den = a + d * d;
            let s = a / den;
            let v = p[3 * k + 2];
            model += v * v * s;
            let den2 = den * den;
            jac[row * np + 3 * k] = v * v * a * two * d / den2;
            jac[row * np + 3 * k + 1] = v * v * (d * d / den2) * two * a;
            jac[row * np + 3 * k + 2] = two * v * s;
        }
        r[row] = model - target;
    }
    (r, jac)
}

fn levenberg_marquardt<T: Real>(samples: &SpectrumSamples<T>, init: &[LorentzianComponent<T>]) -> FitResult<T> {
    let mut p = pack(init);
    let np = p.len();
    let m = samples.len();
    let mut current = cost(samples, &unpack(&p));
    let scale: T = samples.values.iter().map(|&v| v * v).sum::<T>().max(T::min_positive_value());
    let floor = T::epsilon() * T::epsilon() * scale;
    let mut lambda = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        if current <= floor {
            converged = true;
            break;
        }
        iterations += 1;
        let (r, jac) = residuals_and_jacobian(samples, &p);
        let mut jtj = vec![T::zero(); np * np];
        let mut grad = vec![T::zero(); np];
        for row in 0..m {
            let jr = &jac[row * np..(row + 1) * np];
            for a in 0..np {
                grad[a] += jr[a] * r[row];
                for b in 0..np {
                    jtj[a * np + b] += jr[a] * jr[b];
                }
            }
        }
        let dmax = (0..np).map(|a| jtj[a * np + a]).fold(T::zero(), T::max);
        let dfloor = dmax.max(T::min_positive_value()) * T::lit(1e-12);

        let mut accepted = false;
        while lambda < T::lit(1e16) {
            let mut lhs = jtj.clone();
            for a in 0..np {
                lhs[a * np + a] += lambda * jtj[a * np + a].max(dfloor);
            }
            let rhs: Vec<T> = grad.iter().map(|&g| -g).collect();
            let step = match solve_spd(np, &lhs, &rhs) {
                Some(s) => s,
                None => {
                    lambda *= T::lit(10.0);
                    continue;
                }
            };
            let trial: Vec<T> = p.iter().zip(&step).map(|(&a, &b)| a + b).collect();
            let trial_cost = if trial.iter().all(|v| v.is_finite()) {
                cost(samples, &unpack(&trial))
            } else {
                T::infinity()
            };
            if trial_cost < current {
                let rel = (current - trial_cost) / current;
                p = trial;
                current = trial_cost;
                lambda = (lambda / T::lit(10.0)).max(T::lit(1e-15));
                accepted = true;
                if rel < T::lit(REL_TOL) {
                    converged = true;
                }
                break;
            }
            lambda *= T::lit(10.0);
        }
        if !accepted {
            // no descent direction left at working precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }

    let rmse = (current / T::from_usize(m).unwrap()).sqrt();
    FitResult { components: unpack(&p), rmse, converged, iterations }
}

/// Peak-picked starting line for the largest feature of `residual`.
fn pick_peak<T: Real>(omega: &[T], residual: &[T]) -> LorentzianComponent<T> {
    let (imax, &peak) = residual
        .iter()
        .enumerate()
        .fold((0, &residual[0]), |best, (i, v)| if *v > *best.1 { (i, v) } else { best });
    let spacing = (omega[omega.len() - 1] - omega[0]) / T::from_usize(omega.len().max(2) - 1).unwrap();
    if !(peak > T::zero()) {
        return LorentzianComponent { center: omega[imax], linewidth: spacing * T::lit(2.0), weight: T::zero() };
    }
    let half = peak / T::lit(2.0);
    let crossing = |from: usize, to: usize| -> Option<T> {
        // linear interpolation between the last sample above and the first below half maximum
        if to == from {
            return None;
        }
        let (lo, hi) = if to > from { (from, to) } else { (to, from) };
        let mut idx: Vec<usize> = (lo..=hi).collect();
        if to < from {
            idx.reverse();
        }
        for win in idx.windows(2) {
            let (i, j) = (win[0], win[1]);
            if residual[j] <= half {
                let f = (residual[i] - half) / (residual[i] - residual[j]);
                return Some(omega[i] + (omega[j] - omega[i]) * f);
            }
        }
        None
    };
    let right = crossing(imax, omega.len() - 1);
    let left = crossing(imax, 0);
    let center = omega[imax];
    let fwhm = match (left, right) {
        (Some(l), Some(r)) => r - l,
        (Some(l), None) => (center - l) * T::lit(2.0),
        (None, Some(r)) => (r - center) * T::lit(2.0),
        (None, None) => omega[omega.len() - 1] - omega[0],
    };
    LorentzianComponent { center, linewidth: fwhm.max(spacing), weight: peak }
}

/// Fits `n` Lorentzian lines to `samples` by Levenberg-Marquardt on
/// (center, ln linewidth, sqrt weight).
///
/// Without `init`, lines are added one at a time: each new line is
/// peak-picked from the residual of the previous fit, whose lines are
/// reused as the starting point.
pub fn fit_lorentzian_mixture<T: Real>(
    samples: &SpectrumSamples<T>,
    n: usize,
    init: Option<&[LorentzianComponent<T>]>,
) -> Result<FitResult<T>> {
    check_fit_size(samples, n)?;
    match init {
        Some(start) => {
            if start.len() != n {
                return Err(Error::LengthMismatch { expected: n, actual: start.len() });
            }
            for k in start {
                k.validate()?;
            }
            Ok(levenberg_marquardt(samples, start))
        }
        None => Ok(fit_nested(samples, n)?.pop().expect("n >= 1")),
    }
}

/// Nested fits for 1..=max_n lines; entry `k` holds the `k + 1`-line fit.
/// Each fit starts from the previous one plus a peak-picked line whose weight
/// is shrunk until it does not raise the residual, so the RMSE never grows.
pub fn fit_nested<T: Real>(samples: &SpectrumSamples<T>, max_n: usize) -> Result<Vec<FitResult<T>>> {
    check_fit_size(samples, max_n)?;
    let mut fits: Vec<FitResult<T>> = Vec::with_capacity(max_n);
    let mut base: Vec<LorentzianComponent<T>> = Vec::new();
    let mut base_cost = cost(samples, &base);
    for _ in 0..max_n {
        let residual: Vec<T> = samples
            .omega
            .iter()
            .zip(&samples.values)
            .map(|(&w, &j)| j - mixture_psd(w, &base))
            .collect();
        let mut extra = pick_peak(&samples.omega, &residual);
        let mut start = base.clone();
        start.push(extra);
        let mut tries = 0;
        while cost(samples, &start) > base_cost && tries < 60 {
            extra.weight = extra.weight / T::lit(2.0);
            *start.last_mut().unwrap() = extra;
            tries += 1;
        }
        if cost(samples, &start) > base_cost {
            extra.weight = T::zero();
            *start.last_mut().unwrap() = extra;
        }
        let fit = levenberg_marquardt(samples, &start);
        base = fit.components.clone();
        base_cost = cost(samples, &base);
        fits.push(fit);
    }
    Ok(fits)
}

fn check_fit_size<T: Real>(samples: &SpectrumSamples<T>, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("need at least one component"));
    }
    if samples.len() < 3 * n {
        return Err(Error::invalid(format!(
            "{} samples are too few for {n} components (need {})",
            samples.len(),
            3 * n
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(center: f64, linewidth: f64, weight: f64) -> LorentzianComponent<f64> {
        LorentzianComponent::new(center, linewidth, weight).unwrap()
    }

    #[test]
    fn line_shape_values() {
        let k = line(10.0, 0.6, 1.0);
        assert_eq!(lorentzian_psd(10.0, &k), 1.0);
        assert!((lorentzian_psd(10.3, &k) - 0.5).abs() < 1e-14);
        assert!((lorentzian_psd(9.7, &k) - 0.5).abs() < 1e-14);
        assert!((lorentzian_psd(10.6, &k) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn mixture_values() {
        let a = line(1.0, 0.5, 1.0);
        assert_eq!(mixture_psd(1.3, &[a]), lorentzian_psd(1.3, &a));
        assert_eq!(mixture_psd(0.2, &[line(1.0, 0.5, 0.0), line(2.0, 1.0, 0.0)]), 0.0);
        assert!((mixture_psd(2.0, &[line(2.0, 0.5, 0.7), line(2.0, 3.0, 0.4)]) - 1.1).abs() < 1e-15);
        let (p, q) = (line(1.0, 0.5, 0.3), line(-2.0, 0.1, 2.0));
        assert_eq!(mixture_psd(0.4, &[p, q]), mixture_psd(0.4, &[q, p]));
    }

    #[test]
    fn kernel_values() {
        let comps = [line(10.0, 0.6, 1.0), line(1.0, 2.0, 0.5)];
        let z0 = memory_kernel(0.0, &comps).unwrap();
        assert!((z0.re - (0.3 + 0.5)).abs() < 1e-15 && z0.im == 0.0);
        let z = memory_kernel(1.0, &comps[..1]).unwrap();
        let expect = C::new(0.0, -10.0).exp() * (0.3 * (-0.3f64).exp());
        assert!((z - expect).norm() < 1e-14);
        assert!((z.norm() - 0.2222).abs() < 1e-4);
        assert!(memory_kernel(-1e-9, &comps).is_err());
        let mut last = f64::INFINITY;
        for i in 0..50 {
            let m = memory_kernel(i as f64 * 0.2, &comps[..1]).unwrap().norm();
            assert!(m <= last);
            last = m;
        }
    }

    #[test]
    fn fourier_consistency_and_convergence() {
        let k = line(2.0, 0.6, 1.0);
        let grid: Vec<f64> = (0..41).map(|i| 2.0 + (i as f64 - 20.0) * 0.1).collect();
        let coarse = kernel_psd_consistency(&[k], &grid, 40.0, 4e-2).unwrap();
        let fine = kernel_psd_consistency(&[k], &grid, 80.0, 2e-2).unwrap();
        assert!(fine < coarse);
        assert!(kernel_psd_consistency(&[k], &grid, 50.0 / 0.6, 1e-3).unwrap() < 1e-3);
        let peak = kernel_psd_consistency(&[k], &[2.0], 50.0 / 0.6, 1e-3).unwrap();
        assert!(peak < 1e-6);
        assert!(kernel_psd_consistency(&[k], &grid, 10.0, 1e-3).is_err());
        assert!(kernel_psd_consistency(&[k], &[200.0], 100.0, 1e-2).is_err());
    }

    #[test]
    fn samples_validation() {
        assert!(SpectrumSamples::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(SpectrumSamples::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(SpectrumSamples::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(SpectrumSamples::new(vec![0.0, f64::NAN], vec![1.0, 1.0]).is_err());
        assert!(SpectrumSamples::new(vec![0.0, 1.0], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn single_line_fit_is_exact() {
        let truth = [line(0.5, 0.8, 2.0)];
        let grid: Vec<f64> = (0..121).map(|i| -3.0 + i as f64 * 0.05).collect();
        let s = SpectrumSamples::from_mixture(grid, &truth).unwrap();
        let fit = fit_lorentzian_mixture(&s, 1, None).unwrap();
        assert!(fit.rmse <= 1e-10, "{}", fit.rmse);
        assert!(fit.converged);
        let k = fit.components[0];
        assert!((k.center - 0.5).abs() < 1e-8 && (k.linewidth - 0.8).abs() < 1e-8 && (k.weight - 2.0).abs() < 1e-8);
    }

    #[test]
    fn fit_rejects_small_sample_sets() {
        let s = SpectrumSamples::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0; 5]).unwrap();
        assert!(fit_lorentzian_mixture(&s, 2, None).is_err());
        assert!(fit_lorentzian_mixture(&s, 0, None).is_err());
    }

    #[test]
    fn flat_spectrum_reports_residual() {
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let s = SpectrumSamples::new(grid.clone(), vec![0.5; 50]).unwrap();
        let fit = fit_lorentzian_mixture(&s, 1, None).unwrap();
        assert!(fit.rmse.is_finite() && fit.rmse < 0.5);
        let k = fit.components[0];
        let mean_s = grid.iter().map(|&w| lorentzian_psd(w, &k)).sum::<f64>() / 50.0;
        assert!((k.weight * mean_s - 0.5).abs() < 0.1);
    }

    #[test]
    fn f32_line_shape() {
        let k = LorentzianComponent::<f32>::new(1.0, 0.5, 1.0).unwrap();
        assert!((lorentzian_psd(1.25f32, &k) - 0.5).abs() < 1e-6);
    }
}
