//! Time integration of the observed limit system and its synchronized
//! (nudged) twin.
//!
//! The dynamics couple a 2-D incompressible horizontal velocity with a
//! 3-D temperature deviation:
//!
//! * momentum: `rho_bar (u_t + div_h(u x u)) + grad Pi =
//!   mu_bar lap_h u + <R> grad_h Phi`, with the density deviation `R`
//!   slaved to the temperature through the linearized pressure balance;
//! * temperature: `rho_bar c_p (T_t + u . grad_h T)
//!   - rho_bar theta_bar alpha u . grad_h Phi =
//!   kappa_bar lap T + theta_bar alpha p_theta d/dt mean(T)`, the last
//!   term closed algebraically by integrating the equation over the box;
//! * the synchronized copy gains the relaxation forcings
//!   `-Lambda I[u~ - u]` and `-theta_bar Lambda I[T~ - T]` while the
//!   observation window is open.
//!
//! One step is semi-implicit: explicit advection/buoyancy/nudging, a
//! projection, implicit diffusion, and a second projection. The
//! equilibrium part of the buoyancy is assembled as a discrete gradient
//! (`grad_wall_aware` of a pointwise potential), so the first projection
//! absorbs it into the pressure potential exactly and the resting state
//! stays resting to solver tolerance.

mod energy;

pub use energy::{
    energy_identity_residual, energy_residual_step, EnergyIdentityDiagnostics, TemperatureTerms,
    VelocityTerms,
};

use crate::error::{CdaError, Result};
use crate::fields::{
    domain_mean, grad_h_with_trace, grad_wall_aware, helmholtz_solve, vertical_average, BcSpec,
    Grid, HorizontalBc, NormKind, Projector, ScalarBc, ScalarField, SolveParams, Trace,
    VectorField2D,
};
use crate::fields::{div_wall_aware, norm, vector_l1_norm, vector_norm};
use crate::interpolants::Interpolant;
use crate::thermo::{derived_coefficients, transport_coefficients, DerivedCoefficients, GasModel,
    ReferenceState};
use rand::Rng;
use std::sync::Arc;

/// Immutable problem data shared by both runs.
#[derive(Debug, Clone)]
pub struct ProblemSetup {
    pub grid: Arc<Grid>,
    pub hgrid: Arc<Grid>,
    pub model: GasModel,
    pub reference: ReferenceState,
    pub coeffs: DerivedCoefficients,
    pub theta_boundary: Trace,
    /// Centrifugal coefficient `c_f` in `Phi = G + c_f |x_h|^2`.
    pub centrifugal: f64,
    /// Potential `Phi` sampled on the 3-D grid (`G = -x3`, radius measured
    /// from the vertical axis through the domain center).
    pub phi: ScalarField,
    /// Analytic horizontal gradient of `Phi` (it is quadratic).
    pub grad_phi: VectorField2D,
    /// Vertical average of `Phi`.
    pub phi_bar: ScalarField,
    pub phi_mean: f64,
    pub mu_bar: f64,
    pub kappa_bar: f64,
    pub solve: SolveParams,
    pub projector: Projector,
    temp_bc: BcSpec,
    temp_boundary_term: ScalarField,
    velocity_bc: BcSpec,
}

impl ProblemSetup {
    pub fn new(
        grid: Arc<Grid>,
        model: GasModel,
        reference: ReferenceState,
        theta_boundary: Trace,
        centrifugal: f64,
        solve: SolveParams,
        projection_tol: f64,
    ) -> Result<Self> {
        let coeffs = derived_coefficients(&model, &reference)?;
        let closure = reference.rho_bar * coeffs.c_p
            - reference.theta_bar * coeffs.alpha * coeffs.p_theta;
        if !(closure > 0.0) {
            return Err(CdaError::ThermoStability(format!(
                "mean-temperature closure denominator {closure:e} <= 0"
            )));
        }
        let tc = transport_coefficients(&model, reference.theta_bar)?;
        let hgrid = grid.horizontal();
        let (cx, cy) = (grid.lx / 2.0, grid.ly / 2.0);
        let phi = ScalarField::from_fn(&grid, |x, y, z| {
            -z + centrifugal * ((x - cx).powi(2) + (y - cy).powi(2))
        });
        let grad_phi = VectorField2D::from_fn(&hgrid, |x, y| {
            (2.0 * centrifugal * (x - cx), 2.0 * centrifugal * (y - cy))
        });
        let phi_bar = vertical_average(&phi);
        let phi_mean = domain_mean(&phi);
        let temp_bc = BcSpec {
            horizontal: match grid.horizontal_bc {
                HorizontalBc::Periodic => ScalarBc::Periodic,
                HorizontalBc::Walls => ScalarBc::Dirichlet(theta_boundary),
            },
            vertical: ScalarBc::Dirichlet(theta_boundary),
        };
        let temp_boundary_term = crate::fields::ops_boundary_term(&grid, &temp_bc);
        let velocity_bc = BcSpec {
            horizontal: match grid.horizontal_bc {
                HorizontalBc::Periodic => ScalarBc::Periodic,
                HorizontalBc::Walls => ScalarBc::Dirichlet(Trace::Zero),
            },
            vertical: ScalarBc::Neumann,
        };
        let projector = Projector::new(SolveParams {
            tol_rel: projection_tol,
            tol_abs: 1e-15,
            max_iter: solve.max_iter,
        });
        Ok(ProblemSetup {
            grid,
            hgrid,
            model,
            reference,
            coeffs,
            theta_boundary,
            centrifugal,
            phi,
            grad_phi,
            phi_bar,
            phi_mean,
            mu_bar: tc.mu,
            kappa_bar: tc.kappa,
            solve,
            projector,
            temp_bc,
            temp_boundary_term,
            velocity_bc,
        })
    }

    /// Kinematic viscosity of the limit momentum equation.
    pub fn nu_u(&self) -> f64 {
        self.mu_bar / self.reference.rho_bar
    }

    /// Thermal diffusivity `kappa_bar / (rho_bar c_p)`.
    pub fn nu_t(&self) -> f64 {
        self.kappa_bar / (self.reference.rho_bar * self.coeffs.c_p)
    }

    /// Weight of the mean term, `theta_bar alpha p_theta / (rho_bar c_p)`;
    /// lies in (0, 1) for stable models and doubles as the coefficient of
    /// the squared-mean correction in the temperature energy identity.
    pub fn beta_mean(&self) -> f64 {
        self.reference.theta_bar * self.coeffs.alpha * self.coeffs.p_theta
            / (self.reference.rho_bar * self.coeffs.c_p)
    }

    /// `rho_bar c_p - theta_bar alpha p_theta`, positive by construction.
    pub fn closure_denominator(&self) -> f64 {
        self.reference.rho_bar * self.coeffs.c_p
            - self.reference.theta_bar * self.coeffs.alpha * self.coeffs.p_theta
    }

    /// Temperature relaxation coefficient of the nudging term.
    pub fn lambda_temperature(&self, lambda: f64) -> f64 {
        self.reference.theta_bar * lambda / (self.reference.rho_bar * self.coeffs.c_p)
    }

    /// Compact Laplacian of the temperature with its boundary trace.
    pub fn laplacian_temperature(&self, t: &ScalarField) -> ScalarField {
        let (hor, ver) = crate::fields::ops_lap_ends(&self.grid, &self.temp_bc);
        let mut l = crate::fields::ops_laplacian_homogeneous(t, hor, ver);
        l.axpy(1.0, &self.temp_boundary_term);
        l
    }

    pub(crate) fn laplacian_velocity_component(&self, c: &ScalarField) -> ScalarField {
        let (hor, ver) = crate::fields::ops_lap_ends(&self.hgrid, &self.velocity_bc);
        crate::fields::ops_laplacian_homogeneous(c, hor, ver)
    }

    /// Homogeneous-Dirichlet Laplacian of a temperature difference (both
    /// runs share the same trace, so the ghost data cancels).
    pub fn laplacian_temperature_difference(&self, s: &ScalarField) -> ScalarField {
        let hom = BcSpec {
            horizontal: match self.grid.horizontal_bc {
                HorizontalBc::Periodic => ScalarBc::Periodic,
                HorizontalBc::Walls => ScalarBc::Dirichlet(Trace::Zero),
            },
            vertical: ScalarBc::Dirichlet(Trace::Zero),
        };
        let (hor, ver) = crate::fields::ops_lap_ends(&self.grid, &hom);
        crate::fields::ops_laplacian_homogeneous(s, hor, ver)
    }
}

/// Density deviation slaved to the temperature:
/// `R = (rho_bar Phi - p_theta T) / p_rho + const`, the constant fixing
/// `mean(R) = 0`.
pub fn boussinesq_density(t: &ScalarField, setup: &ProblemSetup) -> Result<ScalarField> {
    if !t.is_finite() {
        return Err(CdaError::NonFinite("temperature in boussinesq_density".into()));
    }
    let d = &setup.coeffs;
    if !(d.p_rho > 0.0) {
        return Err(CdaError::ThermoStability("p_rho <= 0".into()));
    }
    let rho_bar = setup.reference.rho_bar;
    let mut r = ScalarField::zeros(&t.grid);
    for ((rv, tv), pv) in r.data.iter_mut().zip(&t.data).zip(&setup.phi.data) {
        *rv = (rho_bar * pv - d.p_theta * tv) / d.p_rho;
    }
    let m = domain_mean(&r);
    r.add_constant(-m);
    Ok(r)
}

/// Evolving fields of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetState {
    pub velocity: VectorField2D,
    pub temperature: ScalarField,
    /// Pressure potential, zero-mean gauge.
    pub pressure_potential: ScalarField,
    pub time: f64,
}

impl TargetState {
    pub fn resting(setup: &ProblemSetup, time: f64) -> TargetState {
        TargetState {
            velocity: VectorField2D::zeros(&setup.hgrid),
            temperature: ScalarField::zeros(&setup.grid),
            pressure_potential: ScalarField::zeros(&setup.hgrid),
            time,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.is_finite()
            && self.temperature.is_finite()
            && self.pressure_potential.is_finite()
    }

    /// Relative divergence defect `||div u|| / ||grad u||` measured with
    /// the projection's own divergence.
    pub fn divergence_defect(&self) -> f64 {
        let d = div_wall_aware(&self.velocity);
        let dn = norm(&d, NormKind::L2);
        let gn = vector_norm(&self.velocity, NormKind::H1Seminorm);
        if gn == 0.0 {
            if dn == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            dn / gn
        }
    }
}

/// Nudging strength, observation window and observation operators.
#[derive(Debug, Clone)]
pub struct NudgingConfig {
    pub lambda: f64,
    /// Nudging is active for `0 <= t <= window_end`.
    pub window_end: f64,
    pub interp_velocity: Interpolant,
    pub interp_temperature: Interpolant,
}

impl NudgingConfig {
    pub fn new(
        lambda: f64,
        window_end: f64,
        interp_velocity: Interpolant,
        interp_temperature: Interpolant,
    ) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(CdaError::Constraint(format!(
                "nudging strength must satisfy lambda >= 0, got {lambda}"
            )));
        }
        if !(window_end >= 0.0) {
            return Err(CdaError::Constraint(format!(
                "nudging window end must satisfy T >= 0, got {window_end}"
            )));
        }
        Ok(NudgingConfig {
            lambda,
            window_end,
            interp_velocity,
            interp_temperature,
        })
    }

    /// Window indicator; the forcing acts only when the strength is
    /// positive, so a zero strength reproduces the plain dynamics exactly.
    pub fn active(&self, t: f64) -> bool {
        self.lambda > 0.0 && (0.0..=self.window_end).contains(&t)
    }
}

/// Conservative advection divergence `div_h(u x u)`.
pub(crate) fn momentum_advection(u: &VectorField2D) -> VectorField2D {
    let g = &u.grid;
    let n = g.len();
    let mut uu = ScalarField::zeros(g);
    let mut uv = ScalarField::zeros(g);
    let mut vv = ScalarField::zeros(g);
    for i in 0..n {
        uu.data[i] = u.x[i] * u.x[i];
        uv.data[i] = u.x[i] * u.y[i];
        vv.data[i] = u.y[i] * u.y[i];
    }
    let ax = {
        let mut a = crate::fields::ops_d_dx_even(&uu);
        a.axpy(1.0, &crate::fields::ops_d_dy_even(&uv));
        a
    };
    let ay = {
        let mut a = crate::fields::ops_d_dx_even(&uv);
        a.axpy(1.0, &crate::fields::ops_d_dy_even(&vv));
        a
    };
    VectorField2D {
        grid: Arc::clone(g),
        x: ax.data,
        y: ay.data,
    }
}

/// Horizontal advection `u . grad_h T` of the 3-D temperature by the
/// planar velocity (extended trivially in the vertical).
pub(crate) fn temperature_advection(
    u: &VectorField2D,
    t: &ScalarField,
    setup: &ProblemSetup,
) -> ScalarField {
    let g = &t.grid;
    let (gx, gy) = grad_h_with_trace(t, &setup.theta_boundary);
    let mut out = ScalarField::zeros(g);
    let slice = g.nx * g.ny;
    for k in 0..g.nz {
        for idx in 0..slice {
            out.data[k * slice + idx] =
                u.x[idx] * gx.data[k * slice + idx] + u.y[idx] * gy.data[k * slice + idx];
        }
    }
    out
}

/// `u . grad_h Phi` as a horizontal field.
pub(crate) fn potential_advection(u: &VectorField2D, setup: &ProblemSetup) -> ScalarField {
    let mut out = ScalarField::zeros(&setup.hgrid);
    for i in 0..out.data.len() {
        out.data[i] = u.x[i] * setup.grad_phi.x[i] + u.y[i] * setup.grad_phi.y[i];
    }
    out
}

/// Algebraic closure of the mean-temperature rate: integrate the
/// temperature equation over the box and solve for `d/dt mean(T)`. The
/// nudging mean is passed by the caller (zero for the observed run).
pub(crate) fn mean_closure_rate(
    lap_mean: f64,
    adv_mean: f64,
    pot_mean: f64,
    nudge_mean_scaled: f64,
    setup: &ProblemSetup,
) -> f64 {
    let rf = &setup.reference;
    let d = &setup.coeffs;
    (setup.kappa_bar * lap_mean - rf.rho_bar * d.c_p * adv_mean
        + rf.rho_bar * rf.theta_bar * d.alpha * pot_mean
        - nudge_mean_scaled)
        / setup.closure_denominator()
}

/// Per-step scalar diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    /// Closure value used for `d/dt mean(T)`.
    pub mean_rate: f64,
    pub cfl: f64,
}

pub(crate) struct NudgeTerms {
    /// `I[u - u_obs]` (velocity observation mismatch).
    pub velocity: VectorField2D,
    /// `I[T - T_obs]`.
    pub temperature: ScalarField,
}

pub(crate) fn advance(
    state: &TargetState,
    nudge: Option<(&TargetState, &NudgingConfig)>,
    setup: &ProblemSetup,
    dt: f64,
) -> Result<(TargetState, StepInfo)> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(CdaError::InvalidInput(format!("bad time step {dt}")));
    }
    let rf = &setup.reference;
    let d = &setup.coeffs;
    let umax = state.velocity.max_abs();
    if !umax.is_finite() {
        return Err(CdaError::NonFinite(format!(
            "velocity at t = {}",
            state.time
        )));
    }
    let hmin = setup.hgrid.hx().min(setup.hgrid.hy());
    let cfl = umax * dt / hmin;
    if cfl > 0.5 {
        return Err(CdaError::Cfl(format!(
            "|u| dt / h = {cfl:.3} > 0.5 at t = {} (|u| = {umax:.3e}, dt = {dt:.3e})",
            state.time
        )));
    }

    // Observation mismatch terms, evaluated only when the window is open
    // so an inactive configuration reproduces the plain step bit for bit.
    let nudging = match nudge {
        Some((observed, cfg)) if cfg.active(state.time) => {
            if *observed.velocity.grid != *state.velocity.grid
                || *observed.temperature.grid != *state.temperature.grid
            {
                return Err(CdaError::InvalidInput(
                    "observed and synchronized states live on different grids".into(),
                ));
            }
            if (observed.time - state.time).abs() > 1e-9 * dt.max(1.0) {
                return Err(CdaError::InvalidInput(format!(
                    "observed time {} does not match synchronized time {}",
                    observed.time, state.time
                )));
            }
            if cfg.lambda * dt > 2.0 {
                return Err(CdaError::StabilityGuard(format!(
                    "explicit nudging needs lambda dt <= 2, got {}",
                    cfg.lambda * dt
                )));
            }
            let mut dv = state.velocity.clone();
            dv.axpy(-1.0, &observed.velocity);
            let mut ds = state.temperature.clone();
            ds.axpy(-1.0, &observed.temperature);
            Some((
                NudgeTerms {
                    velocity: cfg.interp_velocity.apply_vector(&dv)?,
                    temperature: cfg.interp_temperature.apply(&ds)?,
                },
                cfg.lambda,
            ))
        }
        _ => None,
    };

    // --- momentum: explicit terms ------------------------------------
    let adv = momentum_advection(&state.velocity);
    let tbar = vertical_average(&state.temperature);
    let t_mean = domain_mean(&state.temperature);
    let m_const = rf.rho_bar * setup.phi_mean - d.p_theta * t_mean;
    // equilibrium part of the buoyancy as an exact discrete gradient
    let mut psi_eq = ScalarField::zeros(&setup.hgrid);
    for (p, pb) in psi_eq.data.iter_mut().zip(&setup.phi_bar.data) {
        *p = (0.5 * rf.rho_bar * pb * pb - m_const * pb) / d.p_rho;
    }
    let grad_psi = grad_wall_aware(&psi_eq);

    let mut u_star = state.velocity.clone();
    let buoy_coeff = -rf.rho_bar * d.alpha;
    for i in 0..u_star.x.len() {
        let fx = grad_psi.x[i] + buoy_coeff * tbar.data[i] * setup.grad_phi.x[i];
        let fy = grad_psi.y[i] + buoy_coeff * tbar.data[i] * setup.grad_phi.y[i];
        u_star.x[i] += dt * (-adv.x[i] + fx / rf.rho_bar);
        u_star.y[i] += dt * (-adv.y[i] + fy / rf.rho_bar);
    }
    if let Some((terms, lambda)) = &nudging {
        let c = -lambda / rf.rho_bar * dt;
        u_star.axpy(c, &terms.velocity);
    }

    // projection 1: absorb gradient forcings before diffusion mixes them
    let mut warm = state.pressure_potential.clone();
    warm.scale(dt / rf.rho_bar);
    let (q1, _) = setup.projector.project(&mut u_star, Some(&warm))?;

    // implicit viscosity
    let c_visc = setup.nu_u() * dt;
    let ux = helmholtz_solve(
        c_visc,
        &u_star.component(0),
        &setup.velocity_bc,
        None,
        &setup.solve,
    )?;
    let uy = helmholtz_solve(
        c_visc,
        &u_star.component(1),
        &setup.velocity_bc,
        None,
        &setup.solve,
    )?;
    let mut u_new = VectorField2D {
        grid: Arc::clone(&setup.hgrid),
        x: ux.data,
        y: uy.data,
    };

    // projection 2: restore the divergence-free invariant
    let (q2, _) = setup.projector.project(&mut u_new, None)?;
    let mut pressure = q1;
    pressure.axpy(1.0, &q2);
    pressure.scale(rf.rho_bar / dt);
    let pm = domain_mean(&pressure);
    pressure.add_constant(-pm);

    // --- temperature --------------------------------------------------
    let adv_t = temperature_advection(&state.velocity, &state.temperature, setup);
    let pot = potential_advection(&state.velocity, setup);
    let lap_t = setup.laplacian_temperature(&state.temperature);
    let nudge_mean_scaled = match &nudging {
        Some((terms, lambda)) => {
            rf.theta_bar * lambda * domain_mean(&terms.temperature)
        }
        None => 0.0,
    };
    let mean_rate = mean_closure_rate(
        domain_mean(&lap_t),
        domain_mean(&adv_t),
        domain_mean(&pot),
        nudge_mean_scaled,
        setup,
    );

    let forcing_coeff = rf.theta_bar * d.alpha / d.c_p;
    let mean_coeff = setup.beta_mean() * mean_rate;
    let mut t_star = state.temperature.clone();
    let slice = setup.grid.nx * setup.grid.ny;
    for k in 0..setup.grid.nz {
        for idx in 0..slice {
            let i = k * slice + idx;
            t_star.data[i] += dt * (-adv_t.data[i] + forcing_coeff * pot.data[idx] + mean_coeff);
        }
    }
    if let Some((terms, lambda)) = &nudging {
        let c = -setup.lambda_temperature(*lambda) * dt;
        t_star.axpy(c, &terms.temperature);
    }
    let t_new = helmholtz_solve(
        setup.nu_t() * dt,
        &t_star,
        &setup.temp_bc,
        Some(&setup.temp_boundary_term),
        &setup.solve,
    )?;

    Ok((
        TargetState {
            velocity: u_new,
            temperature: t_new,
            pressure_potential: pressure,
            time: state.time + dt,
        },
        StepInfo {
            mean_rate,
            cfl,
        },
    ))
}

/// Advance the observed (target) system by one step.
pub fn step_target(state: &TargetState, setup: &ProblemSetup, dt: f64) -> Result<TargetState> {
    advance(state, None, setup, dt).map(|(s, _)| s)
}

/// Advance the synchronized system by one step, relaxing toward the
/// observed state while the window is open.
pub fn step_synchronized(
    state: &TargetState,
    observed: &TargetState,
    nudging: &NudgingConfig,
    setup: &ProblemSetup,
    dt: f64,
) -> Result<TargetState> {
    advance(state, Some((observed, nudging)), setup, dt).map(|(s, _)| s)
}

/// Assemble a well-prepared initial state: divergence-free velocity,
/// trace-compatible temperature, optional seeded smooth perturbation of
/// prescribed L1 size on both fields.
pub fn well_prepared_state(
    setup: &ProblemSetup,
    t0: &ScalarField,
    u0: &VectorField2D,
    perturbation: f64,
    rng: &mut impl Rng,
    time: f64,
) -> Result<TargetState> {
    if !(perturbation >= 0.0) {
        return Err(CdaError::InvalidInput(format!(
            "perturbation size must be nonnegative, got {perturbation}"
        )));
    }
    if *t0.grid != *setup.grid || !setup.hgrid.horizontally_compatible(&u0.grid) {
        return Err(CdaError::InvalidInput(
            "initial fields live on the wrong grid".into(),
        ));
    }
    check_temperature_trace(t0, setup)?;
    check_wall_velocity(u0, &setup.hgrid)?;

    let mut velocity = u0.clone();
    setup.projector.project(&mut velocity, None)?;
    if perturbation > 0.0 {
        let mut pert = random_stream_velocity(&setup.hgrid, rng);
        setup.projector.project(&mut pert, None)?;
        let l1 = vector_l1_norm(&pert);
        if l1 > 0.0 {
            let s = perturbation / l1;
            velocity.axpy(s, &pert);
        }
    }
    let defect = {
        let d = div_wall_aware(&velocity);
        let dn = norm(&d, NormKind::L2);
        let gn = vector_norm(&velocity, NormKind::H1Seminorm).max(1e-300);
        dn / gn
    };
    if vector_norm(&velocity, NormKind::L2) > 0.0 && defect > 1e-8 {
        return Err(CdaError::NonConvergence(format!(
            "projection left a relative divergence defect of {defect:e}"
        )));
    }

    let mut temperature = t0.clone();
    if perturbation > 0.0 {
        let mut pert = random_interior_scalar(&setup.grid, rng);
        let l1 = crate::fields::l1_norm(&pert);
        if l1 > 0.0 {
            pert.scale(perturbation / l1);
            temperature.axpy(1.0, &pert);
        }
    }

    // Boussinesq compatibility: the derived density must make the
    // linearized pressure balance hold pointwise (constant residual).
    let r = boussinesq_density(&temperature, setup)?;
    let mut g = ScalarField::zeros(&setup.grid);
    for i in 0..g.data.len() {
        g.data[i] = setup.coeffs.p_rho * r.data[i] + setup.coeffs.p_theta * temperature.data[i]
            - setup.reference.rho_bar * setup.phi.data[i];
    }
    let gm = domain_mean(&g);
    let scale = setup.reference.rho_bar
        * setup.phi.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for v in &g.data {
        if (v - gm).abs() > 1e-9 * scale {
            return Err(CdaError::InvalidInput(format!(
                "Boussinesq residual {:e} exceeds tolerance",
                (v - gm).abs()
            )));
        }
    }

    Ok(TargetState {
        velocity,
        temperature,
        pressure_potential: ScalarField::zeros(&setup.hgrid),
        time,
    })
}

fn check_temperature_trace(t0: &ScalarField, setup: &ProblemSetup) -> Result<()> {
    let g = &setup.grid;
    let trace = &setup.theta_boundary;
    let scale = t0.data.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 0.05 * scale + 1e-9;
    let mut worst = 0.0f64;
    // wall-extrapolated values vs trace on the plates (and lateral walls
    // when the grid has them)
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (x, y, _) = g.center(i, j, 0);
            if g.nz > 1 {
                let bot = 1.5 * t0.at(i, j, 0) - 0.5 * t0.at(i, j, 1);
                let top = 1.5 * t0.at(i, j, g.nz - 1) - 0.5 * t0.at(i, j, g.nz - 2);
                worst = worst.max((bot - trace.eval(x, y, 0.0)).abs());
                worst = worst.max((top - trace.eval(x, y, 1.0)).abs());
            }
        }
    }
    if g.horizontal_bc == HorizontalBc::Walls {
        for k in 0..g.nz {
            let z = (k as f64 + 0.5) * g.hz();
            for j in 0..g.ny {
                let (_, y, _) = g.center(0, j, k);
                let left = 1.5 * t0.at(0, j, k) - 0.5 * t0.at(1, j, k);
                let right = 1.5 * t0.at(g.nx - 1, j, k) - 0.5 * t0.at(g.nx - 2, j, k);
                worst = worst.max((left - trace.eval(0.0, y, z)).abs());
                worst = worst.max((right - trace.eval(g.lx, y, z)).abs());
            }
        }
    }
    if worst > tol {
        return Err(CdaError::InvalidInput(format!(
            "initial temperature misses the boundary trace by {worst:e} (tolerance {tol:e})"
        )));
    }
    Ok(())
}

fn check_wall_velocity(u0: &VectorField2D, hgrid: &Arc<Grid>) -> Result<()> {
    if hgrid.horizontal_bc != HorizontalBc::Walls {
        return Ok(());
    }
    let scale = u0.max_abs().max(1.0);
    let tol = 0.05 * scale + 1e-9;
    let g = hgrid;
    let mut worst = 0.0f64;
    let mut probe = |a: f64, b: f64| {
        let w = 1.5 * a - 0.5 * b;
        worst = worst.max(w.abs());
    };
    for j in 0..g.ny {
        for c in [&u0.x, &u0.y] {
            probe(c[j * g.nx], c[j * g.nx + 1]);
            probe(c[j * g.nx + g.nx - 1], c[j * g.nx + g.nx - 2]);
        }
    }
    for i in 0..g.nx {
        for c in [&u0.x, &u0.y] {
            probe(c[i], c[g.nx + i]);
            probe(c[(g.ny - 1) * g.nx + i], c[(g.ny - 2) * g.nx + i]);
        }
    }
    if worst > tol {
        return Err(CdaError::InvalidInput(format!(
            "initial velocity does not vanish on the walls (extrapolated {worst:e}, tolerance {tol:e})"
        )));
    }
    Ok(())
}

/// Random smooth velocity from low-mode stream functions whose gradient
/// vanishes on walls.
pub(crate) fn random_stream_velocity(grid: &Arc<Grid>, rng: &mut impl Rng) -> VectorField2D {
    let pi = std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    let periodic = grid.horizontal_bc == HorizontalBc::Periodic;
    let mut coefs = Vec::new();
    for m in 1..=2u32 {
        for n in 1..=2u32 {
            coefs.push((
                m as f64,
                n as f64,
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.0..2.0 * pi),
                rng.gen_range(0.0..2.0 * pi),
            ));
        }
    }
    // analytic curl of the stream function, projected later by the caller
    VectorField2D::from_fn(grid, |x, y| {
        let mut ux = 0.0;
        let mut uy = 0.0;
        for &(m, n, c, p1, p2) in &coefs {
            if periodic {
                let (kx, ky) = (2.0 * pi * m / lx, 2.0 * pi * n / ly);
                let sx = (kx * x + p1).sin();
                let cx = (kx * x + p1).cos();
                let sy = (ky * y + p2).sin();
                let cy = (ky * y + p2).cos();
                ux += c * sx * cy * ky;
                uy -= c * cx * sy * kx;
            } else {
                let (ax, ay) = (pi * m / lx, pi * n / ly);
                let sx = (ax * x).sin();
                let sy = (ay * y).sin();
                // psi = sin^2(ax x) sin^2(ay y): grad vanishes on walls
                ux += c * sx * sx * 2.0 * sy * (ay * y).cos() * ay;
                uy -= c * 2.0 * sx * (ax * x).cos() * ax * sy * sy;
            }
        }
        (ux, uy)
    })
}

/// Random smooth scalar vanishing on the whole boundary.
pub(crate) fn random_interior_scalar(grid: &Arc<Grid>, rng: &mut impl Rng) -> ScalarField {
    let pi = std::f64::consts::PI;
    let (lx, ly) = (grid.lx, grid.ly);
    let periodic = grid.horizontal_bc == HorizontalBc::Periodic;
    // keep every mode comfortably resolved so the boundary trace check
    // sees a genuinely smooth field
    let k_max = if grid.nz >= 8 { 2 } else { 1 };
    let mut coefs = Vec::new();
    for m in 1..=2u32 {
        for n in 1..=2u32 {
            for k in 1..=k_max {
                coefs.push((
                    m as f64,
                    n as f64,
                    k as f64,
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..2.0 * pi),
                ));
            }
        }
    }
    ScalarField::from_fn(grid, |x, y, z| {
        let mut v = 0.0;
        for &(m, n, k, c, phase) in &coefs {
            let vert = if grid.nz > 1 { (k * pi * z).sin() } else { 1.0 };
            let h = if periodic {
                (2.0 * pi * m * x / lx + phase).sin() * (2.0 * pi * n * y / ly).cos()
            } else {
                (m * pi * x / lx).sin() * (n * pi * y / ly).sin()
            };
            v += c * h * vert;
        }
        v
    })
}
