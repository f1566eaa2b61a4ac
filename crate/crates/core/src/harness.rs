//! Command dispatch and CSV artifacts.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::filter::{ensemble_average, simulate_trajectory, EnsembleResult, StorageMode};
use crate::master::{
    integrate_master_observed, markovian_baseline_spec, markovian_probe_op, markovian_sigma_ops, GeneratorSpec,
    IntegrateOptions, StateDiagnostics,
};
use crate::slh::QubitCoupling;
use crate::spectra::{fit_nested, LorentzianComponent, SpectrumSamples};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Command {
    Spectrum,
    Evolve,
    Baseline,
    Filter,
    Ensemble,
    Fit,
    Compare,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Spectrum,
        Command::Evolve,
        Command::Baseline,
        Command::Filter,
        Command::Ensemble,
        Command::Fit,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Spectrum => "spectrum",
            Command::Evolve => "evolve",
            Command::Baseline => "baseline",
            Command::Filter => "filter",
            Command::Ensemble => "ensemble",
            Command::Fit => "fit",
            Command::Compare => "compare",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command `{s}`")))
    }
}

/// Qubit Bloch vectors on a time grid, with optional per-point diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct BlochSeries {
    pub t_grid: Vec<f64>,
    pub bloch: Vec<[f64; 3]>,
    pub diagnostics: Vec<StateDiagnostics<f64>>,
}

impl BlochSeries {
    pub fn last(&self) -> [f64; 3] {
        *self.bloch.last().expect("non-empty series")
    }
}

fn run_master(rho0: &crate::operator::DensityMatrix<f64>, spec: &GeneratorSpec<f64>, grid: &[f64]) -> Result<BlochSeries> {
    let mut bloch = Vec::with_capacity(grid.len());
    let slot0_qubit = rho0.layout().dims().first() == Some(&2);
    if !slot0_qubit {
        return Err(Error::invalid("state has no qubit in slot 0"));
    }
    let diagnostics = integrate_master_observed(rho0, spec, grid, &IntegrateOptions::default(), |_, rho| {
        bloch.push(crate::filter::leading_qubit_bloch(rho.as_operator()))
    })?;
    Ok(BlochSeries { t_grid: grid.to_vec(), bloch, diagnostics })
}

/// Unconditional qubit dynamics of the augmented model.
pub fn unconditional_series(cfg: &ExperimentConfig) -> Result<BlochSeries> {
    let spec = GeneratorSpec::from_model(&cfg.build_model()?)?;
    run_master(&cfg.initial_state()?, &spec, &cfg.time_grid()?)
}

/// Qubit coupled directly to white noise through `sqrt(kappa_k) sigma_k`
/// and the probe, with no ancillas.
pub fn baseline_series(cfg: &ExperimentConfig) -> Result<BlochSeries> {
    let params = cfg.ancilla_params()?;
    let probe = markovian_probe_op(cfg.probe.gamma, QubitCoupling::new(cfg.probe.operator));
    let spec = markovian_baseline_spec(cfg.omega_q, &markovian_sigma_ops(&params), &probe)?;
    run_master(&cfg.initial_qubit()?, &spec, &cfg.time_grid()?)
}

pub fn ensemble_series(cfg: &ExperimentConfig) -> Result<EnsembleResult<f64>> {
    ensemble_average(
        &cfg.initial_state()?,
        &cfg.filter_model()?,
        &cfg.time_grid()?,
        cfg.n_traj,
        cfg.base_seed,
    )
}

/// Lines of the configured ancilla bank.
pub fn ancilla_lines(cfg: &ExperimentConfig) -> Result<Vec<LorentzianComponent<f64>>> {
    cfg.ancillas
        .iter()
        .map(|a| LorentzianComponent::new(a.omega, a.gamma, a.kappa))
        .collect()
}

pub fn spectrum_samples(cfg: &ExperimentConfig) -> Result<SpectrumSamples<f64>> {
    let lines = ancilla_lines(cfg)?;
    let lo = cfg
        .spectrum
        .omega_min
        .unwrap_or_else(|| lines.iter().map(|k| k.center - 10.0 * k.linewidth).fold(f64::INFINITY, f64::min));
    let hi = cfg
        .spectrum
        .omega_max
        .unwrap_or_else(|| lines.iter().map(|k| k.center + 10.0 * k.linewidth).fold(f64::NEG_INFINITY, f64::max));
    let (lo, hi) = if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (-1.0, 1.0) };
    if !(hi > lo) {
        return Err(Error::config("spectrum.omega_max", "must exceed spectrum.omega_min"));
    }
    let n = cfg.spectrum.points;
    let omega = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    SpectrumSamples::from_mixture(omega, &lines)
}

/// First time the series falls below `x(0) / e`, linearly interpolated
/// between grid points; `None` if it never does (or starts at zero).
pub fn decay_time(t_grid: &[f64], x: &[f64]) -> Option<f64> {
    let x0 = *x.first()?;
    if x0 == 0.0 {
        return None;
    }
    let level = x0 * (-1.0f64).exp();
    let below = |v: f64| if x0 > 0.0 { v < level } else { v > level };
    for k in 1..x.len() {
        if below(x[k]) {
            let f = (x[k - 1] - level) / (x[k - 1] - x[k]);
            return Some(t_grid[k - 1] + f * (t_grid[k] - t_grid[k - 1]));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSummary {
    pub markov_decay_time: Option<f64>,
    pub nonmarkov_decay_time: Option<f64>,
    pub markov_final: [f64; 3],
    pub nonmarkov_final: [f64; 3],
}

impl CompareSummary {
    pub fn from_series(uncond: &BlochSeries, markov: &BlochSeries) -> Self {
        let xs = |s: &BlochSeries| s.bloch.iter().map(|b| b[0]).collect::<Vec<_>>();
        Self {
            markov_decay_time: decay_time(&markov.t_grid, &xs(markov)),
            nonmarkov_decay_time: decay_time(&uncond.t_grid, &xs(uncond)),
            markov_final: markov.last(),
            nonmarkov_final: uncond.last(),
        }
    }

    /// Largest componentwise gap between the two final Bloch vectors.
    pub fn final_gap(&self) -> f64 {
        (0..3)
            .map(|i| (self.markov_final[i] - self.nonmarkov_final[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn line(&self) -> String {
        let t = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:.11e}"));
        let b = |v: [f64; 3]| format!("{:.11e},{:.11e},{:.11e}", v[0], v[1], v[2]);
        format!(
            "markov_decay_time={} nonmarkov_decay_time={} markov_final={} nonmarkov_final={} final_gap={:.11e}",
            t(self.markov_decay_time),
            t(self.nonmarkov_decay_time),
            b(self.markov_final),
            b(self.nonmarkov_final),
            self.final_gap()
        )
    }
}

/// Provenance line written at the top of every artifact.
pub fn header(cfg: &ExperimentConfig, cmd: Command) -> String {
    format!(
        "# pseudomode {VERSION} command={cmd} config_hash={} seed={} field_mode={} scheme={}",
        cfg.hash(),
        cfg.base_seed,
        cfg.field_mode,
        cfg.scheme
    )
}

pub fn fmt_num(v: f64) -> String {
    format!("{v:.11e}")
}

fn write_table(path: &Path, header: &str, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "{header}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(columns)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn bloch_cells(b: &[f64; 3]) -> impl Iterator<Item = String> + '_ {
    b.iter().map(|&v| fmt_num(v))
}

fn write_series(path: &Path, header: &str, s: &BlochSeries) -> Result<()> {
    let rows = s.t_grid.iter().zip(&s.bloch).zip(&s.diagnostics).map(|((t, b), d)| {
        let mut row = vec![fmt_num(*t)];
        row.extend(bloch_cells(b));
        row.push(fmt_num(d.trace_drift));
        row.push(d.min_eig.map_or(String::new(), fmt_num));
        row
    });
    write_table(path, header, &["t", "x", "y", "z", "tr_drift", "min_eig"], rows)
}

pub fn write_ensemble(path: &Path, header: &str, e: &EnsembleResult<f64>) -> Result<()> {
    let rows = e.t_grid.iter().enumerate().map(|(i, t)| {
        let mut row = vec![fmt_num(*t)];
        row.extend(bloch_cells(&e.mean[i]));
        row.extend(bloch_cells(&e.stderr[i]));
        row
    });
    write_table(path, header, &["t", "mean_x", "mean_y", "mean_z", "se_x", "se_y", "se_z"], rows)
}

pub const FIGURE_COLUMNS: [&str; 13] = [
    "t",
    "uncond_x",
    "uncond_y",
    "uncond_z",
    "cond_mean_x",
    "cond_mean_y",
    "cond_mean_z",
    "cond_se_x",
    "cond_se_y",
    "cond_se_z",
    "markov_x",
    "markov_y",
    "markov_z",
];

/// Writes the merged unconditional / conditional-mean / Markovian table.
/// All three series must share one time grid.
pub fn emit_figure_data(
    path: &Path,
    header: &str,
    uncond: &BlochSeries,
    cond: &EnsembleResult<f64>,
    markov: &BlochSeries,
) -> Result<PathBuf> {
    if uncond.t_grid != cond.t_grid || uncond.t_grid != markov.t_grid {
        return Err(Error::invalid("figure series are not on the same time grid"));
    }
    let n = uncond.t_grid.len();
    if uncond.bloch.len() != n || cond.mean.len() != n || cond.stderr.len() != n || markov.bloch.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: cond.mean.len().min(markov.bloch.len()) });
    }
    let rows = (0..n).map(|i| {
        let mut row = vec![fmt_num(uncond.t_grid[i])];
        row.extend(bloch_cells(&uncond.bloch[i]));
        row.extend(bloch_cells(&cond.mean[i]));
        row.extend(bloch_cells(&cond.stderr[i]));
        row.extend(bloch_cells(&markov.bloch[i]));
        row
    });
    write_table(path, header, &FIGURE_COLUMNS, rows)?;
    Ok(path.to_path_buf())
}

/// Max over time and components of the unconditional qubit Bloch gap
/// between truncation `cfg.truncation` and `other`.
pub fn truncation_convergence(cfg: &ExperimentConfig, other: usize) -> Result<f64> {
    let a = unconditional_series(cfg)?;
    let mut wide = cfg.clone();
    wide.truncation = other;
    let b = unconditional_series(&wide)?;
    Ok(a
        .bloch
        .iter()
        .zip(&b.bloch)
        .flat_map(|(p, q)| (0..3).map(move |i| (p[i] - q[i]).abs()))
        .fold(0.0, f64::max))
}

/// Runs one command, writing its artifacts into `cfg.output_dir`.
/// Returns the written paths.
pub fn run_command(cmd: Command, cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir)?;
    let head = header(cfg, cmd);
    let mut out = Vec::new();
    match cmd {
        Command::Spectrum => {
            let s = spectrum_samples(cfg)?;
            let p = dir.join("spectrum.csv");
            let rows = s.omega().iter().zip(s.values()).map(|(w, j)| vec![fmt_num(*w), fmt_num(*j)]);
            write_table(&p, &head, &["omega", "J"], rows)?;
            out.push(p);
        }
        Command::Evolve => {
            let p = dir.join("evolve.csv");
            write_series(&p, &head, &unconditional_series(cfg)?)?;
            out.push(p);
        }
        Command::Baseline => {
            let p = dir.join("baseline.csv");
            write_series(&p, &head, &baseline_series(cfg)?)?;
            out.push(p);
        }
        Command::Filter => {
            let seed = cfg.base_seed;
            let grid = cfg.time_grid()?;
            let traj = simulate_trajectory(&cfg.initial_state()?, &cfg.filter_model()?, &grid, seed, StorageMode::BlochOnly)?;
            let bloch = traj.bloch()?;
            let p = dir.join(format!("filter_seed{seed}.csv"));
            let rows = grid.iter().zip(&bloch).map(|(t, b)| {
                let mut row = vec![fmt_num(*t)];
                row.extend(bloch_cells(b));
                row
            });
            write_table(&p, &head, &["t", "x", "y", "z"], rows)?;
            out.push(p);
            let p = dir.join(format!("record_seed{seed}.csv"));
            let rows = (0..traj.record.len()).map(|k| {
                vec![k.to_string(), fmt_num(grid[k]), fmt_num(traj.record[k]), fmt_num(traj.innovations[k])]
            });
            write_table(&p, &head, &["step", "t", "dY", "dW"], rows)?;
            out.push(p);
        }
        Command::Ensemble => {
            let p = dir.join("ensemble.csv");
            write_ensemble(&p, &head, &ensemble_series(cfg)?)?;
            out.push(p);
        }
        Command::Fit => {
            let input = cfg.fit.input.clone().unwrap_or_else(|| dir.join("spectrum.csv"));
            let samples = SpectrumSamples::read_csv(&input)?;
            let fits = fit_nested(&samples, cfg.fit.components)?;
            let best = fits.last().expect("at least one fit");
            let p = dir.join("fit.csv");
            let rows = best
                .components
                .iter()
                .enumerate()
                .map(|(i, k)| vec![i.to_string(), fmt_num(k.center), fmt_num(k.linewidth), fmt_num(k.weight)]);
            write_table(&p, &head, &["component", "center", "linewidth", "weight"], rows)?;
            out.push(p);
            let p = dir.join("fit_residuals.csv");
            let rows = fits.iter().enumerate().map(|(i, f)| {
                vec![(i + 1).to_string(), fmt_num(f.rmse), f.converged.to_string(), f.iterations.to_string()]
            });
            write_table(&p, &head, &["n", "rmse", "converged", "iterations"], rows)?;
            out.push(p);
        }
        Command::Compare => {
            let uncond = unconditional_series(cfg)?;
            let markov = baseline_series(cfg)?;
            let cond = ensemble_series(cfg)?;
            out.push(emit_figure_data(&dir.join("compare.csv"), &head, &uncond, &cond, &markov)?);
            let summary = CompareSummary::from_series(&uncond, &markov);
            let p = dir.join("compare_summary.txt");
            std::fs::write(&p, format!("{head}\n{}\n", summary.line()))?;
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_time_interpolates() {
        let t = [0.0, 1.0, 2.0];
        let x = [1.0, 0.5, 0.0];
        let e = (-1.0f64).exp();
        let expect = 1.0 + (0.5 - e) / 0.5;
        assert!((decay_time(&t, &x).unwrap() - expect).abs() < 1e-15);
        assert_eq!(decay_time(&t, &[1.0, 0.9, 0.8]), None);
        assert_eq!(decay_time(&t, &[0.0, 0.9, 0.8]), None);
    }

    #[test]
    fn command_names_round_trip() {
        for c in Command::ALL {
            assert_eq!(c.name().parse::<Command>().unwrap(), c);
        }
        assert!("plot".parse::<Command>().is_err());
    }
}
