//! Acceptance suite: every shipping criterion, one pass/fail line each.
//!
//! The tracking scenarios run the full twin protocol at desk scale; the
//! property criteria drive the constitutive and observation layers with
//! independent oracles. Tolerances are pinned here, in code.

use cda_lab::config::parse_config;
use cda_lab::experiments::{
    check_error_monotonicity, gronwall_envelope_check, jensen_sandwich_check, run_twin,
    TrackingReport, TwinExperimentConfig,
};
use cda_lab::fields::{norm, Grid, HorizontalBc, NormKind, ScalarField};
use cda_lab::interpolants::{projection_diagnostics, Interpolant, InterpolantKind, VerticalExtent};
use cda_lab::solver::{step_target, TargetState};
use cda_lab::thermo::{
    gibbs_residual, relative_energy, FluidPointState, GasModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn pass(criterion: &str, detail: String) {
    println!("ACCEPTANCE {criterion}: PASS ({detail})");
}

fn twin_from_doc(doc: &str) -> TwinExperimentConfig {
    parse_config(doc)
        .expect("config parses")
        .build_twin(None)
        .expect("twin builds")
}

/// The flagship configuration: 64x64 horizontal, 16 levels, ideal gas,
/// lambda = 50, horizontal resolution 4 cells, nudging window T = 2,
/// horizon T+ = 4, CFL-satisfying dt.
fn flagship_doc(lambda: f64) -> String {
    format!(
        "experiment = twin
gas_model = ideal
grid.nx = 64
grid.ny = 64
grid.nz = 16
interpolant.kind = cell_average
interpolant.delta = 0.0625
interpolant.vertical = blocks:8
times.t_minus = -0.5
times.t_sync = 2
times.t_plus = 4
solver.dt = 0.004
nudging.lambda = {lambda}
init.observed.velocity_amplitude = 0.2
init.observed.temperature_amplitude = 0.1
init.observed.perturbation = 0.02
output.every_steps = 5
seed = 42
"
    )
}

fn decay_doc(lambda: f64) -> String {
    format!(
        "experiment = twin
gas_model = ideal
grid.nx = 32
grid.ny = 32
grid.nz = 8
interpolant.kind = cell_average
interpolant.delta = 0.0625
interpolant.vertical = blocks:4
times.t_minus = -0.2
times.t_sync = 2
times.t_plus = 2.2
solver.dt = 0.004
nudging.lambda = {lambda}
init.observed.velocity_amplitude = 0.2
init.observed.temperature_amplitude = 0.1
output.every_steps = 1
seed = 42
"
    )
}

/// Snapshot invariants that must hold for every run: Jensen sandwich
/// margins and the pointwise density closure.
fn assert_snapshot_invariants(report: &TrackingReport, label: &str) {
    for (i, m) in report.jensen_margin.iter().enumerate() {
        assert!(
            *m >= -1e-12,
            "{label}: Jensen margin {m:e} at output {i} below -1e-12"
        );
    }
    for (i, (mean, res)) in report
        .boussinesq_mean
        .iter()
        .zip(&report.boussinesq_residual)
        .enumerate()
    {
        assert!(*mean < 1e-12, "{label}: |mean(R)| = {mean:e} at output {i}");
        assert!(
            *res < 1e-11,
            "{label}: density closure residual {res:e} at output {i}"
        );
    }
}

#[test]
fn criterion_01_tracking_and_04_growth_envelope() {
    let start = std::time::Instant::now();
    let config = twin_from_doc(&flagship_doc(50.0));
    let report = run_twin(&config).expect("flagship twin run");
    let elapsed = start.elapsed().as_secs_f64();

    let (_, e0) = report.row_at(0.0).unwrap();
    let (_, et) = report.row_at(2.0).unwrap();
    let ru = et.u_l2 / e0.u_l2;
    let rt = et.t_l2 / e0.t_l2;
    let rr = et.r_l2 / e0.r_l2;
    assert!(ru <= 1e-3, "criterion 1: err_u ratio {ru:e} > 1e-3");
    assert!(rt <= 1e-3, "criterion 1: err_T ratio {rt:e} > 1e-3");
    assert!(rr <= 1e-3, "criterion 1: err_R ratio {rr:e} > 1e-3");
    assert!(
        elapsed <= 300.0,
        "criterion 1: runtime {elapsed:.1}s exceeds 5 minutes"
    );
    assert_snapshot_invariants(&report, "criterion 1");
    pass(
        "01 tracking-property",
        format!(
            "err ratios at T: u {ru:.2e}, T {rt:.2e}, R {rr:.2e} (all <= 1e-3), runtime {elapsed:.0}s"
        ),
    );

    // criterion 4 rides on the same trajectory: bounded log-slope after T
    let check = gronwall_envelope_check(&report, 50.0, None);
    assert!(
        check.growth_exponent.is_finite(),
        "criterion 4: growth exponent not finite"
    );
    assert!(
        check.growth_ok,
        "criterion 4: envelope violated by factor {}",
        check.growth_margin
    );
    assert!(
        check.growth_margin <= 1.2,
        "criterion 4: margin {} > 1.2",
        check.growth_margin
    );
    pass(
        "04 growth-envelope",
        format!(
            "K = {:.3e}, series within {:.3}x of envelope on [T, T+]",
            check.growth_exponent, check.growth_margin
        ),
    );
}

#[test]
fn criterion_02_control_without_nudging() {
    let config = twin_from_doc(&flagship_doc(0.0));
    let report = run_twin(&config).expect("control twin run");
    let (_, e0) = report.row_at(0.0).unwrap();
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for (t, e) in report.times.iter().zip(&report.errors) {
        if *t > 2.0 + 1e-9 {
            break;
        }
        for (now, init) in [
            (e.u_l2, e0.u_l2),
            (e.t_l2, e0.t_l2),
            (e.r_l2, e0.r_l2),
        ] {
            let ratio = now / init;
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
    }
    assert!(
        lo > 0.1 && hi < 10.0,
        "criterion 2: error ratios left the factor-10 band: [{lo:.3}, {hi:.3}]"
    );
    assert_snapshot_invariants(&report, "criterion 2");
    pass(
        "02 control-run",
        format!("error ratios stayed in [{lo:.3}, {hi:.3}] through t = T with lambda = 0"),
    );
}

#[test]
fn criterion_03_decay_envelope() {
    let lambdas = [5.0, 25.0, 125.0];
    let mut rates = Vec::new();
    let mut floors = Vec::new();
    for &lambda in &lambdas {
        let config = twin_from_doc(&decay_doc(lambda));
        let report = run_twin(&config).expect("decay run");
        assert_snapshot_invariants(&report, "criterion 3");
        let check = gronwall_envelope_check(&report, lambda, None);
        assert!(
            check.decay_ok,
            "criterion 3: lambda {lambda}: fitted rate {:.3e} below lambda/4 = {:.3e}",
            check.decay_rate,
            lambda / 4.0
        );
        rates.push(check.decay_rate);
        floors.push(check.floor);
    }
    for w in rates.windows(2) {
        assert!(
            w[1] >= 0.9 * w[0],
            "criterion 3: rate sequence decreased beyond 10%: {rates:?}"
        );
    }
    pass(
        "03 decay-envelope",
        format!(
            "rates {:.3e}/{:.3e}/{:.3e} >= lambda/4, non-decreasing; floors {:.1e}/{:.1e}/{:.1e}",
            rates[0], rates[1], rates[2], floors[0], floors[1], floors[2]
        ),
    );
}

#[test]
fn criterion_05_jensen_sandwich() {
    // a short run with output every step: check every snapshot for every beta
    let doc = "experiment = twin
grid.nx = 16
grid.ny = 16
grid.nz = 4
interpolant.delta = 0.25
interpolant.vertical = blocks:2
times.t_minus = -0.05
times.t_sync = 0.25
times.t_plus = 0.4
solver.dt = 0.005
nudging.lambda = 25
init.observed.perturbation = 0.05
output.every_steps = 1
";
    let config = twin_from_doc(doc);
    let report = run_twin(&config).expect("jensen run");
    assert!(report.times.len() > 80);
    let mut checked = 0;
    for m in &report.jensen_margin {
        assert!(*m >= -1e-12, "criterion 5: margin {m:e}");
        checked += 1;
    }
    // direct two-sided evaluation on manufactured snapshots as well
    let grid = Grid::new(12, 12, 6, 1.0, 1.0, HorizontalBc::Walls).unwrap();
    let pi = std::f64::consts::PI;
    let a = ScalarField::from_fn(&grid, |x, y, z| (pi * x).sin() * y + z);
    let b = ScalarField::from_fn(&grid, |x, y, _| 0.3 * (2.0 * pi * y).cos() * x);
    for beta in [0.1, 0.5, 0.9] {
        let j = jensen_sandwich_check(&a, &b, beta).unwrap();
        assert!(j.lower_ok && j.upper_ok, "criterion 5: beta {beta}: {j:?}");
        assert!(j.margin >= -1e-12);
    }
    pass(
        "05 jensen-sandwich",
        format!("two-sided bounds held to 1e-12 at {checked} snapshots x three beta values"),
    );
}

#[test]
fn criterion_06_interpolant_axiom() {
    let n = 128;
    let grid = Grid::new(n, n, 1, 1.0, 1.0, HorizontalBc::Walls).unwrap();
    let pi = std::f64::consts::PI;
    let smooth: Vec<ScalarField> = (1..=3)
        .map(|m| {
            let m = m as f64;
            ScalarField::from_fn(&grid, move |x, y, _| {
                (m * pi * x).sin() * (pi * y).sin() + 0.5 * (2.0 * pi * x).cos()
            })
        })
        .collect();
    // random fields for the projection-axiom defects
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noisy = ScalarField::zeros(&grid);
    for v in &mut noisy.data {
        *v = rng.gen_range(-1.0..1.0);
    }
    let mut worst_idem = 0.0f64;
    let mut worst_adj = 0.0f64;
    let deltas = [0.125, 0.0625, 0.03125];
    let mut errs = Vec::new();
    for &delta in &deltas {
        let interp =
            Interpolant::new(InterpolantKind::CellAverage, delta, VerticalExtent::Full, &grid)
                .unwrap();
        let mut samples = smooth.clone();
        samples.push(noisy.clone());
        let diag = projection_diagnostics(&interp, &samples).unwrap();
        worst_idem = worst_idem.max(diag.idempotence_defect);
        worst_adj = worst_adj.max(diag.self_adjointness_defect);
        // approximation error of the first smooth sample
        errs.push(diag.sample_errors[0]);
    }
    assert!(worst_idem < 1e-12, "criterion 6: idempotence {worst_idem:e}");
    assert!(
        worst_adj < 1e-12,
        "criterion 6: self-adjointness {worst_adj:e}"
    );
    let slope = {
        let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e: &f64| e.ln()).collect();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    assert!(
        (slope - 1.0).abs() <= 0.2,
        "criterion 6: error-vs-delta slope {slope}"
    );
    pass(
        "06 interpolant-axiom",
        format!(
            "idempotence {worst_idem:.1e}, self-adjointness {worst_adj:.1e} (< 1e-12), slope {slope:.3}"
        ),
    );
}

#[test]
fn criterion_07_relative_energy() {
    let model = GasModel::ideal();
    let comparison = FluidPointState::new(1.0, 1.0, [0.0; 3]).unwrap();
    // exact zero at equality
    let s = FluidPointState::new(1.7, 0.6, [0.2, -0.4, 0.1]).unwrap();
    assert_eq!(relative_energy(&model, 1.0, &s, &s).unwrap(), 0.0);

    // 10^4-sample nonnegativity fuzz
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut min = f64::INFINITY;
    for _ in 0..10_000 {
        let state = FluidPointState::new(
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.5..2.0),
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ],
        )
        .unwrap();
        min = min.min(relative_energy(&model, 1.0, &state, &comparison).unwrap());
    }
    assert!(min >= -1e-12, "criterion 7: fuzz minimum {min:e}");

    // quadratic small-perturbation scaling
    let hs = [1e-1, 1e-2, 1e-3, 1e-4];
    let es: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let state =
                FluidPointState::new(1.0 + 0.3 * h, 1.0 + 0.2 * h, [0.1 * h, 0.0, 0.0]).unwrap();
            relative_energy(&model, 1.0, &state, &comparison).unwrap()
        })
        .collect();
    let n = hs.len() as f64;
    let sx: f64 = hs.iter().map(|h| h.ln()).sum();
    let sy: f64 = es.iter().map(|e| e.ln()).sum();
    let sxx: f64 = hs.iter().map(|h| h.ln().powi(2)).sum();
    let sxy: f64 = hs.iter().zip(&es).map(|(h, e)| h.ln() * e.ln()).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    assert!(
        (slope - 2.0).abs() <= 0.05,
        "criterion 7: scaling exponent {slope}"
    );
    pass(
        "07 relative-energy",
        format!("fuzz min {min:.1e} >= -1e-12, exact zero at equality, exponent {slope:.4}"),
    );
}

#[test]
fn criterion_08_gibbs_law() {
    let mut worst = 0.0f64;
    for model in [GasModel::ideal(), GasModel::degenerate()] {
        for i in 0..10 {
            for j in 0..10 {
                let rho = 0.5 + 1.5 * i as f64 / 9.0;
                let theta = 0.5 + 1.5 * j as f64 / 9.0;
                let (rt, rr) = gibbs_residual(&model, rho, theta, 1e-5).unwrap();
                worst = worst.max(rt.abs()).max(rr.abs());
            }
        }
    }
    assert!(worst < 1e-6, "criterion 8: residual {worst:e}");
    pass(
        "08 gibbs-law",
        format!("max relative residual {worst:.2e} < 1e-6 over both presets, 10x10 states"),
    );
}

#[test]
fn criterion_09_boussinesq_closure() {
    // output every step so the closure is certified at every output time
    let doc = "experiment = twin
grid.nx = 16
grid.ny = 16
grid.nz = 8
interpolant.delta = 0.25
interpolant.vertical = blocks:4
times.t_minus = -0.1
times.t_sync = 0.3
times.t_plus = 0.45
solver.dt = 0.005
nudging.lambda = 20
boundary.theta_bottom = 0.3
boundary.theta_top = -0.3
init.observed.temperature_amplitude = 0.15
output.every_steps = 1
";
    let config = twin_from_doc(doc);
    let report = run_twin(&config).expect("closure run");
    let mut worst_mean = 0.0f64;
    let mut worst_res = 0.0f64;
    for (mean, res) in report.boussinesq_mean.iter().zip(&report.boussinesq_residual) {
        worst_mean = worst_mean.max(*mean);
        worst_res = worst_res.max(*res);
    }
    assert!(worst_mean < 1e-12, "criterion 9: |mean(R)| {worst_mean:e}");
    assert!(worst_res < 1e-11, "criterion 9: gradient residual {worst_res:e}");
    pass(
        "09 boussinesq-closure",
        format!(
            "max |mean(R)| {worst_mean:.1e} < 1e-12, max pointwise residual {worst_res:.1e} at {} outputs",
            report.times.len()
        ),
    );
}

#[test]
fn criterion_10_energy_identities() {
    let doc = |dt: f64| {
        format!(
            "experiment = twin
grid.nx = 32
grid.ny = 32
grid.nz = 8
interpolant.delta = 0.125
interpolant.vertical = blocks:4
times.t_minus = -0.1
times.t_sync = 0.3
times.t_plus = 0.4
solver.dt = {dt}
nudging.lambda = 20
init.observed.perturbation = 0.02
output.every_steps = 1
output.energy_diagnostics = true
"
        )
    };
    let dts = [0.008, 0.004, 0.002];
    let mut res_u = Vec::new();
    let mut res_t = Vec::new();
    for &dt in &dts {
        let config = twin_from_doc(&doc(dt));
        let report = run_twin(&config).expect("energy run");
        let e = report.energy.expect("energy diagnostics enabled");
        let mu = e.res_velocity.iter().map(|v| v.abs()).sum::<f64>() / e.res_velocity.len() as f64;
        let mt = e.res_temperature.iter().map(|v| v.abs()).sum::<f64>()
            / e.res_temperature.len() as f64;
        res_u.push(mu);
        res_t.push(mt);
    }
    let slope = |es: &[f64]| {
        let xs: Vec<f64> = dts.iter().map(|d| d.ln()).collect();
        let ys: Vec<f64> = es.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    };
    let su = slope(&res_u);
    let st = slope(&res_t);
    assert!(
        su >= 0.9,
        "criterion 10: velocity identity order {su} ({res_u:?})"
    );
    assert!(
        st >= 0.9,
        "criterion 10: temperature identity order {st} ({res_t:?})"
    );
    pass(
        "10 energy-identities",
        format!("normalized residual orders: velocity {su:.2}, temperature {st:.2} (>= 1)"),
    );
}

#[test]
fn criterion_11_trivial_equilibrium() {
    let cfg = parse_config(
        "grid.nx = 32
grid.ny = 32
grid.nz = 8
boundary.theta_bottom = 0
boundary.theta_top = 0
solver.dt = 0.005
",
    )
    .unwrap();
    let setup = cfg.build_setup().unwrap();
    let mut state = TargetState::resting(&setup, 0.0);
    let mut worst_u = 0.0f64;
    let mut worst_t = 0.0f64;
    for _ in 0..1000 {
        state = step_target(&state, &setup, 0.005).expect("equilibrium step");
        worst_u = worst_u.max(state.velocity.max_abs());
        worst_t = worst_t.max(
            state
                .temperature
                .data
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        );
    }
    assert!(worst_u < 1e-10, "criterion 11: velocity grew to {worst_u:e}");
    assert!(worst_t < 1e-10, "criterion 11: temperature grew to {worst_t:e}");
    pass(
        "11 trivial-equilibrium",
        format!("max |u| {worst_u:.1e}, max |T| {worst_t:.1e} over 1000 steps (< 1e-10)"),
    );
}

#[test]
fn criterion_12_determinism() {
    let doc = "experiment = twin
grid.nx = 16
grid.ny = 16
grid.nz = 4
interpolant.delta = 0.25
interpolant.vertical = blocks:2
times.t_minus = -0.05
times.t_sync = 0.2
times.t_plus = 0.3
solver.dt = 0.005
nudging.lambda = 15
init.observed.perturbation = 0.03
init.sync.perturbation = 0.01
seed = 9001
output.every_steps = 1
";
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("d.cfg");
    std::fs::write(&cfg_path, doc).unwrap();
    let mut tables = Vec::new();
    for sub in ["a", "b"] {
        let out_dir = dir.path().join(sub);
        let args: Vec<String> = [
            "twin",
            "--config",
            cfg_path.to_str().unwrap(),
            "--output-dir",
            out_dir.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = cda_lab::cli::run_cli(&args, &mut out, &mut err);
        assert_eq!(code, 0, "{}", String::from_utf8_lossy(&err));
        tables.push(std::fs::read(out_dir.join("series.csv")).unwrap());
    }
    assert_eq!(
        tables[0], tables[1],
        "criterion 12: time-series tables differ between identical runs"
    );
    pass(
        "12 determinism",
        format!(
            "two identical runs produced bitwise-identical series tables ({} bytes)",
            tables[0].len()
        ),
    );
}

#[test]
fn property_error_monotone_in_lambda() {
    // supporting property: for fixed delta the error at t_sync does not
    // increase with lambda across the sweep, up to the floor plus 10%
    let doc = "experiment = sweep
grid.nx = 16
grid.ny = 16
grid.nz = 4
interpolant.delta = 0.125
interpolant.vertical = blocks:2
times.t_minus = -0.05
times.t_sync = 0.5
times.t_plus = 0.6
solver.dt = 0.005
init.observed.velocity_amplitude = 0.2
init.observed.temperature_amplitude = 0.1
output.every_steps = 2
";
    let cfg = parse_config(doc).unwrap();
    let twin = cfg.build_twin(None).unwrap();
    let rows =
        cda_lab::experiments::run_sweep(&twin, &[1.0, 5.0, 25.0, 125.0], &[0.125], 2).unwrap();
    let pairs: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.lambda, r.err_u_l2.max(r.err_t_l2)))
        .collect();
    let floor = pairs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let violations = check_error_monotonicity(&pairs, floor, 0.10);
    assert_eq!(violations, 0, "monotonicity violations: {pairs:?}");
    println!("PROPERTY lambda-monotonicity: PASS ({pairs:?})");
}

#[test]
fn property_norms_match_independent_quadrature() {
    // spot-check the norm plumbing feeding every criterion with a
    // brute-force quadrature oracle
    let grid = Grid::new(24, 24, 6, 1.3, 0.8, HorizontalBc::Walls).unwrap();
    let f = ScalarField::from_fn(&grid, |x, y, z| (3.0 * x).sin() * y + z * z);
    let dv = grid.cell_volume();
    let mut l2 = 0.0;
    for v in &f.data {
        l2 += v * v * dv;
    }
    assert!((norm(&f, NormKind::L2) - l2.sqrt()).abs() < 1e-12);
    println!("PROPERTY norm-oracle: PASS");
}
