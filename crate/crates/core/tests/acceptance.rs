//! Acceptance criteria 1-10. Runs as a plain binary (no libtest harness) so
//! every criterion prints one PASS/FAIL line; exits nonzero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use pseudomode::config::{ExperimentConfig, PRESET_PAPER_FIG4};
use pseudomode::filter::{replay_filter, simulate_trajectory, StorageMode};
use pseudomode::harness::{run_command, truncation_convergence, Command};
use pseudomode::master::{
    ancilla_moment_oracle, augmented_apply, integrate_master_observed, lindblad_apply, mode_expectation, uniform_grid,
    IntegrateOptions,
};
use pseudomode::operator::{DensityMatrix, HilbertLayout, Operator};
use pseudomode::slh::{build_ancilla_bank, build_augmented, build_probed, AncillaParams, FieldMode, QubitCoupling, QubitOpKind};
use pseudomode::spectra::{fit_nested, kernel_psd_consistency, lorentzian_psd, LorentzianComponent, SpectrumSamples};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn preset() -> ExperimentConfig {
    ExperimentConfig::preset(PRESET_PAPER_FIG4).unwrap()
}

fn random_unit_trace_hermitian(rng: &mut ChaCha8Rng, layout: &HilbertLayout) -> Operator<f64> {
    let n = layout.total();
    let a = Operator::from_fn(layout.clone(), |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    let mut h = (&a + &a.adjoint()).scale_real(0.5);
    let shift = (1.0 - h.trace().re) / n as f64;
    h = &h + &Operator::identity(layout.clone()).scale_real(shift);
    h
}

fn c1_generator_equivalence() -> Outcome {
    let mut cfg = preset();
    cfg.truncation = 4;
    let model = cfg.build_model().unwrap();
    let spec = pseudomode::master::GeneratorSpec::from_model(&model).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let rho = random_unit_trace_hermitian(&mut rng, model.layout());
        let a = lindblad_apply(&rho, &spec).unwrap();
        let b = augmented_apply(&rho, &spec).unwrap();
        worst = worst.max(a.max_abs_diff(&b));
    }
    outcome(worst <= 1e-12, format!("max |diff| = {worst:.3e} (tol 1e-12)"))
}

fn c2_conservation() -> Outcome {
    let cfg = preset();
    let spec = pseudomode::master::GeneratorSpec::from_model(&cfg.build_model().unwrap()).unwrap();
    let grid = cfg.time_grid().unwrap();
    let mut trace_err: f64 = 0.0;
    let diags = integrate_master_observed(&cfg.initial_state().unwrap(), &spec, &grid, &IntegrateOptions::default(), |_, rho| {
        trace_err = trace_err.max((rho.trace().re - 1.0).abs());
    })
    .unwrap();
    let drift = diags.iter().map(|d| d.trace_drift).fold(0.0, f64::max).max(trace_err);
    let herm = diags.iter().map(|d| d.hermiticity).fold(0.0, f64::max);
    let min_eig = diags.iter().map(|d| d.min_eig.unwrap()).fold(f64::INFINITY, f64::min);
    outcome(
        drift <= 1e-8 && herm <= 1e-10 && min_eig >= -1e-8,
        format!("max |tr-1| = {drift:.3e} (1e-8), hermiticity = {herm:.3e} (1e-10), min eig = {min_eig:.3e} (>= -1e-8)"),
    )
}

fn c3_moment_oracle() -> Outcome {
    let p = AncillaParams::new(2.0, 0.6, 0.0, QubitOpKind::Y, 5).unwrap();
    let bank = build_ancilla_bank(&[p], FieldMode::Independent).unwrap();
    let aug = build_augmented(2.0, &bank, &[p]).unwrap();
    let model = build_probed(&aug, 0.8, QubitCoupling::new(QubitOpKind::X)).unwrap();
    let spec = pseudomode::master::GeneratorSpec::from_model(&model).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = vec![Complex64::new(0.0, 0.0); 5];
    amps[0] = Complex64::new(s, 0.0);
    amps[1] = Complex64::new(s, 0.0);
    let anc = DensityMatrix::pure(HilbertLayout::single(5), &amps).unwrap();
    let rho0 = DensityMatrix::product(&[DensityMatrix::from_bloch(1.0, 0.0, 0.0).unwrap(), anc]).unwrap();
    let grid = uniform_grid(1e-3, 10.0).unwrap();
    let a0 = mode_expectation(&rho0, 1).unwrap();
    let mut worst: f64 = 0.0;
    integrate_master_observed(&rho0, &spec, &grid, &IntegrateOptions::default(), |k, rho| {
        let got = mode_expectation(rho, 1).unwrap();
        let want = ancilla_moment_oracle(grid[k], &[p], &[a0]).unwrap()[0];
        worst = worst.max((got - want).norm());
    })
    .unwrap();
    outcome(worst <= 1e-6, format!("max |<a>_ME - oracle| = {worst:.3e} (tol 1e-6)"))
}

fn c4_lorentzian() -> Outcome {
    let lines: [(f64, f64); 3] = [(2.0, 0.6), (1.0, 0.5), (3.0, 1.2)];
    let mut identity_err: f64 = 0.0;
    let mut ft_err: f64 = 0.0;
    for &(w, g) in &lines {
        let k = LorentzianComponent::new(w, g, 1.0).unwrap();
        identity_err = identity_err.max((lorentzian_psd(w, &k) - 1.0).abs());
        identity_err = identity_err.max((lorentzian_psd(w + g / 2.0, &k) - 0.5).abs());
        identity_err = identity_err.max((lorentzian_psd(w - g / 2.0, &k) - 0.5).abs());
        let grid: Vec<f64> = (0..=40).map(|i| w + (i as f64 - 20.0) * g / 4.0).collect();
        ft_err = ft_err.max(kernel_psd_consistency(&[k], &grid, 50.0 / g, 1e-3).unwrap());
    }
    let eps = 4.0 * f64::EPSILON;
    outcome(
        identity_err <= eps && ft_err <= 1e-3,
        format!("peak/half-width error = {identity_err:.3e} (<= 4 eps), Fourier consistency = {ft_err:.3e} (1e-3)"),
    )
}

struct CompareRun {
    rows: Vec<Vec<f64>>,
    summary: String,
}

fn compare_run(dir: &Path) -> CompareRun {
    let mut cfg = preset();
    cfg.output_dir = dir.to_path_buf();
    run_command(Command::Compare, &cfg).unwrap();
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(dir.join("compare.csv")).unwrap();
    let rows = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|v| v.parse::<f64>().unwrap()).collect())
        .collect();
    let summary = std::fs::read_to_string(dir.join("compare_summary.txt")).unwrap();
    CompareRun { rows, summary: summary.lines().nth(1).unwrap().to_string() }
}

fn c5_filter_consistency(run: &CompareRun) -> Outcome {
    let mut worst = 0.0;
    let mut at = (0.0, 0);
    for r in &run.rows {
        for i in 0..3 {
            let ratio = (r[4 + i] - r[1 + i]).abs() / (3.0 * r[7 + i]).max(0.05);
            if ratio > worst {
                worst = ratio;
                at = (r[0], i);
            }
        }
    }
    outcome(
        worst <= 1.0 && run.rows.len() == 10_001,
        format!(
            "500 trajectories: worst |mean - uncond| / max(3 se, 0.05) = {worst:.3} at t = {:.3}, component {} (<= 1)",
            at.0,
            ["x", "y", "z"][at.1]
        ),
    )
}

fn c6_innovations() -> Outcome {
    let cfg = preset();
    let grid = cfg.time_grid().unwrap();
    let traj = simulate_trajectory(&cfg.initial_state().unwrap(), &cfg.filter_model().unwrap(), &grid, 0, StorageMode::BlochOnly).unwrap();
    let dw = &traj.innovations;
    let n = dw.len() as f64;
    let mean = dw.iter().sum::<f64>() / n;
    let var = dw.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mean_tol = 3.0 * (cfg.dt / n).sqrt();
    let rel = (var / cfg.dt - 1.0).abs();
    outcome(
        dw.len() == 10_000 && mean.abs() <= mean_tol && rel <= 0.05,
        format!("|mean dW| = {:.3e} (<= {mean_tol:.3e}), |var/dt - 1| = {rel:.4} (<= 0.05)", mean.abs()),
    )
}

fn c7_replay() -> Outcome {
    let cfg = preset();
    let grid = cfg.time_grid().unwrap();
    let rho0 = cfg.initial_state().unwrap();
    let fm = cfg.filter_model().unwrap();
    let a = simulate_trajectory(&rho0, &fm, &grid, 7, StorageMode::Full).unwrap();
    let b = simulate_trajectory(&rho0, &fm, &grid, 7, StorageMode::Full).unwrap();
    let replayed = replay_filter(&rho0, &fm, &a.record, &grid).unwrap();
    let sa = a.full_states().unwrap();
    let dev = replayed.iter().zip(sa).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max);
    let identical = a.record == b.record
        && a.innovations == b.innovations
        && sa.iter().zip(b.full_states().unwrap()).all(|(x, y)| x.as_operator() == y.as_operator());
    outcome(dev <= 1e-10 && identical, format!("replay deviation = {dev:.3e} (1e-10), reruns bit-identical = {identical}"))
}

fn c8_markov_vs_nonmarkov(run: &CompareRun) -> Outcome {
    let field = |name: &str| -> String {
        run.summary
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix(&format!("{name}=")).map(str::to_string))
            .unwrap()
    };
    let markov: f64 = field("markov_decay_time").parse().unwrap_or(f64::INFINITY);
    let nonmarkov: f64 = field("nonmarkov_decay_time").parse().unwrap_or(f64::INFINITY);
    let gap: f64 = field("final_gap").parse().unwrap();
    outcome(
        markov < nonmarkov && gap >= 0.01,
        format!("1/e time: markov {markov:.4} < non-markov {nonmarkov:.4}; final Bloch gap = {gap:.4} (>= 0.01)"),
    )
}

fn c9_fit() -> Outcome {
    let truth = [
        LorentzianComponent::new(1.0, 0.5, 1.0).unwrap(),
        LorentzianComponent::new(3.0, 1.2, 0.4).unwrap(),
    ];
    let omega: Vec<f64> = (0..=240).map(|i| -2.0 + i as f64 * 0.05).collect();
    let samples = SpectrumSamples::from_mixture(omega, &truth).unwrap();
    let fits = fit_nested(&samples, 3).unwrap();
    let mut got = fits[1].components.clone();
    got.sort_by(|a, b| a.center.partial_cmp(&b.center).unwrap());
    let mut sq = 0.0;
    for (g, t) in got.iter().zip(&truth) {
        for (x, y) in [(g.center, t.center), (g.linewidth, t.linewidth), (g.weight, t.weight)] {
            sq += ((x - y) / y).powi(2);
        }
    }
    let rel_rmse = (sq / 6.0).sqrt();
    let rmses: Vec<f64> = fits.iter().map(|f| f.rmse).collect();
    let monotone = rmses.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        rel_rmse <= 1e-4 && monotone,
        format!("relative parameter RMSE = {rel_rmse:.3e} (1e-4); residual n=1..3 = {rmses:?} non-increasing = {monotone}"),
    )
}

fn c10_truncation() -> Outcome {
    let dev = truncation_convergence(&preset(), 10).unwrap();
    outcome(dev <= 1e-3, format!("max Bloch deviation N=5 vs N=10 = {dev:.3e} (1e-3)"))
}

fn main() -> ExitCode {
    // honour libtest-style filtering flags without acting on them
    let listing = std::env::args().any(|a| a == "--list");
    if listing {
        return ExitCode::SUCCESS;
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut failures = 0;
    let mut report = |id: u32, name: &str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "acceptance {id:>2} {name:<28} {} [{secs:.2}s] {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "generator equivalence", &c1_generator_equivalence);
    report(2, "conservation", &c2_conservation);
    report(3, "linear ancilla oracle", &c3_moment_oracle);
    report(4, "lorentzian identities", &c4_lorentzian);
    let start = Instant::now();
    let run = compare_run(tmp.path());
    println!("(compare run on preset: {:.2}s)", start.elapsed().as_secs_f64());
    report(5, "filter consistency", &|| c5_filter_consistency(&run));
    report(6, "innovation statistics", &c6_innovations);
    report(7, "replay determinism", &c7_replay);
    report(8, "markov vs non-markov", &|| c8_markov_vs_nonmarkov(&run));
    report(9, "spectrum fitting", &c9_fit);
    report(10, "truncation convergence", &c10_truncation);
    if failures == 0 {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
