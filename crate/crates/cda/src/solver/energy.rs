//! Discrete accounting of the twin-difference energy identities.
//!
//! For the velocity difference `w = u - u~` the balance reads
//!
//! `d/dt ||w||^2/2 + (mu/rho) ||grad w||^2 + (Lambda/rho) <I w, w> 1_win
//!    = alpha <(<T~> - <T>) grad Phi, w> + <A(u~) - A(u), w>`,
//!
//! and for the temperature difference `S = T - T~`, with
//! `beta = theta alpha p_theta / (rho c_p)` and
//! `Q = int S^2 - (beta/|V|)(int S)^2`,
//!
//! `d/dt Q/2 + nu_T ||grad S||^2 + lambda_T <I S, S> 1_win
//!    = -<u.grad T - u~.grad T~, S> + (theta alpha / c_p) <w.grad Phi, S>`.
//!
//! Every term is evaluated with the same discrete operators the stepper
//! uses, so the per-step imbalance is pure time-discretization error and
//! shrinks at first order in `dt`. Dissipation terms are computed as
//! `-<lap w, w>`, the summation-by-parts twin of the squared gradient on
//! these stencils.

use super::{
    momentum_advection, potential_advection, temperature_advection, NudgingConfig, ProblemSetup,
    TargetState,
};
use crate::error::{CdaError, Result};
use crate::fields::{domain_mean, vertical_average, ScalarField, VectorField2D};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VelocityTerms {
    pub rate: f64,
    pub viscous: f64,
    pub nudging: f64,
    pub buoyancy: f64,
    pub advection: f64,
}

impl VelocityTerms {
    pub fn residual(&self) -> f64 {
        self.rate + self.viscous + self.nudging - self.buoyancy - self.advection
    }

    pub fn max_magnitude(&self) -> f64 {
        self.rate
            .abs()
            .max(self.viscous.abs())
            .max(self.nudging.abs())
            .max(self.buoyancy.abs())
            .max(self.advection.abs())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TemperatureTerms {
    pub rate: f64,
    pub diffusion: f64,
    pub nudging: f64,
    pub advection: f64,
    pub potential_forcing: f64,
}

impl TemperatureTerms {
    pub fn residual(&self) -> f64 {
        self.rate + self.diffusion + self.nudging - self.advection - self.potential_forcing
    }

    pub fn max_magnitude(&self) -> f64 {
        self.rate
            .abs()
            .max(self.diffusion.abs())
            .max(self.nudging.abs())
            .max(self.advection.abs())
            .max(self.potential_forcing.abs())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyIdentityDiagnostics {
    /// Time at the start of each accounted step.
    pub times: Vec<f64>,
    /// Normalized imbalance of the velocity identity per step.
    pub res_velocity: Vec<f64>,
    /// Normalized imbalance of the temperature identity per step.
    pub res_temperature: Vec<f64>,
    pub velocity_terms: Vec<VelocityTerms>,
    pub temperature_terms: Vec<TemperatureTerms>,
}

fn hinner(a: &VectorField2D, b: &VectorField2D) -> f64 {
    let dv = a.grid.cell_volume();
    (a.x.iter().zip(&b.x).map(|(p, q)| p * q).sum::<f64>()
        + a.y.iter().zip(&b.y).map(|(p, q)| p * q).sum::<f64>())
        * dv
}

fn sinner(a: &ScalarField, b: &ScalarField) -> f64 {
    let dv = a.grid.cell_volume();
    a.data.iter().zip(&b.data).map(|(p, q)| p * q).sum::<f64>() * dv
}

/// Account one step `(n) -> (n+1)` of an aligned twin pair.
pub fn energy_residual_step(
    obs0: &TargetState,
    sync0: &TargetState,
    obs1: &TargetState,
    sync1: &TargetState,
    nudging: &NudgingConfig,
    setup: &ProblemSetup,
) -> Result<(VelocityTerms, TemperatureTerms)> {
    let dt = obs1.time - obs0.time;
    if !(dt > 0.0) {
        return Err(CdaError::InvalidInput(
            "trajectory states must be strictly increasing in time".into(),
        ));
    }
    if (sync0.time - obs0.time).abs() > 1e-9 || (sync1.time - obs1.time).abs() > 1e-9 {
        return Err(CdaError::InvalidInput(
            "observed and synchronized trajectories are misaligned".into(),
        ));
    }
    let rf = &setup.reference;
    let d = &setup.coeffs;
    let active = nudging.active(obs0.time);

    // velocity difference at both ends
    let mut w0 = obs0.velocity.clone();
    w0.axpy(-1.0, &sync0.velocity);
    let mut w1 = obs1.velocity.clone();
    w1.axpy(-1.0, &sync1.velocity);

    let rate = (hinner(&w1, &w1) - hinner(&w0, &w0)) / (2.0 * dt);
    let lap_w = VectorField2D {
        grid: w0.grid.clone(),
        x: setup.laplacian_velocity_component(&w0.component(0)).data,
        y: setup.laplacian_velocity_component(&w0.component(1)).data,
    };
    let viscous = -setup.nu_u() * hinner(&lap_w, &w0);
    let nudging_term = if active {
        let iw = nudging.interp_velocity.apply_vector(&w0)?;
        nudging.lambda / rf.rho_bar * hinner(&iw, &w0)
    } else {
        0.0
    };
    // buoyancy difference: alpha <T~ - T> grad Phi . w
    let mut s0 = obs0.temperature.clone();
    s0.axpy(-1.0, &sync0.temperature);
    let sbar = vertical_average(&s0);
    let mut buoy_field = VectorField2D::zeros(&setup.hgrid);
    for i in 0..buoy_field.x.len() {
        buoy_field.x[i] = -d.alpha * sbar.data[i] * setup.grad_phi.x[i];
        buoy_field.y[i] = -d.alpha * sbar.data[i] * setup.grad_phi.y[i];
    }
    let buoyancy = hinner(&buoy_field, &w0);
    let mut adv_diff = momentum_advection(&sync0.velocity);
    adv_diff.axpy(-1.0, &momentum_advection(&obs0.velocity));
    let advection = hinner(&adv_diff, &w0);
    let vel = VelocityTerms {
        rate,
        viscous,
        nudging: nudging_term,
        buoyancy,
        advection,
    };

    // temperature difference functional
    let beta = setup.beta_mean();
    let vol = setup.grid.volume();
    let q_of = |s: &ScalarField| {
        let l2 = sinner(s, s);
        let mean_int = domain_mean(s) * vol;
        l2 - beta / vol * mean_int * mean_int
    };
    let mut s1 = obs1.temperature.clone();
    s1.axpy(-1.0, &sync1.temperature);
    let t_rate = (q_of(&s1) - q_of(&s0)) / (2.0 * dt);
    let lap_s = setup.laplacian_temperature_difference(&s0);
    let diffusion = -setup.nu_t() * sinner(&lap_s, &s0);
    let t_nudging = if active {
        let is = nudging.interp_temperature.apply(&s0)?;
        setup.lambda_temperature(nudging.lambda) * sinner(&is, &s0)
    } else {
        0.0
    };
    let mut adv_t = temperature_advection(&obs0.velocity, &obs0.temperature, setup);
    adv_t.axpy(
        -1.0,
        &temperature_advection(&sync0.velocity, &sync0.temperature, setup),
    );
    let t_advection = -sinner(&adv_t, &s0);
    let mut wdphi = potential_advection(&obs0.velocity, setup);
    wdphi.axpy(-1.0, &potential_advection(&sync0.velocity, setup));
    // broadcast the horizontal field against the 3-D difference
    let forcing_coeff = rf.theta_bar * d.alpha / d.c_p;
    let slice = setup.grid.nx * setup.grid.ny;
    let mut potential_forcing = 0.0;
    for k in 0..setup.grid.nz {
        for idx in 0..slice {
            potential_forcing += wdphi.data[idx] * s0.data[k * slice + idx];
        }
    }
    potential_forcing *= forcing_coeff * setup.grid.cell_volume();
    let temp = TemperatureTerms {
        rate: t_rate,
        diffusion,
        nudging: t_nudging,
        advection: t_advection,
        potential_forcing,
    };
    Ok((vel, temp))
}

/// Account every consecutive step of two aligned trajectories and return
/// the normalized per-step imbalances.
pub fn energy_identity_residual(
    traj_observed: &[TargetState],
    traj_sync: &[TargetState],
    nudging: &NudgingConfig,
    setup: &ProblemSetup,
) -> Result<EnergyIdentityDiagnostics> {
    if traj_observed.len() != traj_sync.len() || traj_observed.len() < 2 {
        return Err(CdaError::InvalidInput(
            "need two aligned trajectories with at least two states".into(),
        ));
    }
    let mut out = EnergyIdentityDiagnostics::default();
    for n in 0..traj_observed.len() - 1 {
        let (vel, temp) = energy_residual_step(
            &traj_observed[n],
            &traj_sync[n],
            &traj_observed[n + 1],
            &traj_sync[n + 1],
            nudging,
            setup,
        )?;
        out.times.push(traj_observed[n].time);
        out.res_velocity
            .push(vel.residual() / vel.max_magnitude().max(1e-300));
        out.res_temperature
            .push(temp.residual() / temp.max_magnitude().max(1e-300));
        out.velocity_terms.push(vel);
        out.temperature_terms.push(temp);
    }
    Ok(out)
}
