//! The composite verification chain: spectrum → necessary conditions →
//! tangent fields → both continuity clouds → verdict.

use pseudohyp::continuity::{
    build_cloud, classify_cloud_with, default_rho_limit, ContinuityVerdict, FieldTag, Thresholds,
    DEFAULT_PAIR_BUDGET, DEFAULT_PHI_GAP, DEFAULT_RHO_BINS,
};
use pseudohyp::integrate::{integrate_trajectory, iterate_map};
use pseudohyp::lyapunov::{
    check_necessary_conditions, lyapunov_spectrum, NecessaryConditionReport, DEFAULT_RENORM_INTERVAL,
    DEFAULT_SPAN, DEFAULT_TRANSIENT,
};
use pseudohyp::systems::SystemKind;
use pseudohyp::tangent_fields::{build_fields, default_trim};
use pseudohyp::{IntegratorOptions, LyapunovSpectrum, SystemModel};

use crate::CliResult;

/// Seed shared by the field/cloud commands when none is given.
pub const DEFAULT_FIELD_SEED: u64 = 7;

/// Orbit samples used for the tangent fields when none are requested.
pub const DEFAULT_SAMPLES: usize = 200_000;

/// Flow sampling interval for the field trajectory.
pub const DEFAULT_SAMPLE_DT: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct VerifySettings {
    pub x0: Option<Vec<f64>>,
    pub spectrum_transient: f64,
    pub spectrum_span: f64,
    pub renorm_interval: f64,
    /// Contracting-split index; `None` means n − 1.
    pub k: Option<usize>,
    /// Transient before the field-sampling trajectory.
    pub transient: f64,
    /// Orbit samples kept for the fields (iterations for maps).
    pub samples: usize,
    pub sample_dt: f64,
    pub m1: Option<usize>,
    pub m2: Option<usize>,
    pub seed: u64,
    pub pair_budget: usize,
    pub rho_bins: usize,
    pub phi_gap: f64,
    /// `None` means 1% of each cloud's diameter.
    pub rho_limit: Option<f64>,
    pub integrator: IntegratorOptions,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            x0: None,
            spectrum_transient: DEFAULT_TRANSIENT,
            spectrum_span: DEFAULT_SPAN,
            renorm_interval: DEFAULT_RENORM_INTERVAL,
            k: None,
            transient: DEFAULT_TRANSIENT,
            samples: DEFAULT_SAMPLES,
            sample_dt: DEFAULT_SAMPLE_DT,
            m1: None,
            m2: None,
            seed: DEFAULT_FIELD_SEED,
            pair_budget: DEFAULT_PAIR_BUDGET,
            rho_bins: DEFAULT_RHO_BINS,
            phi_gap: DEFAULT_PHI_GAP,
            rho_limit: None,
            integrator: IntegratorOptions::default(),
        }
    }
}

/// What one cloud looked like, kept after the cloud itself is dropped.
#[derive(Debug, Clone)]
pub struct CloudSummary {
    pub field: FieldTag,
    pub pairs: usize,
    pub max_rho: f64,
    pub max_phi: f64,
    pub verdict: ContinuityVerdict<f64>,
}

#[derive(Debug)]
pub struct VerifyOutcome {
    pub spectrum: LyapunovSpectrum,
    pub conditions: NecessaryConditionReport<f64>,
    pub ess: Option<CloudSummary>,
    pub ncu: Option<CloudSummary>,
    pub pseudohyperbolic: bool,
    /// `necessary_conditions` or `continuity` when the verdict is negative.
    pub failing_stage: Option<&'static str>,
}

/// Default start state per system family (well inside each basin).
pub fn default_x0(model: &SystemModel) -> Vec<f64> {
    match model.name() {
        "henon2d" | "lozi" => vec![0.1, 0.1],
        "henon3d" => vec![0.1, 0.1, 0.1],
        "anosov_linear" | "anosov_perturbed" => vec![0.1, 0.2],
        _ => vec![1.0; model.dim()],
    }
}

fn cloud_summary(
    model: &SystemModel,
    fields: &[pseudohyp::TangentFieldSample],
    tag: FieldTag,
    settings: &VerifySettings,
) -> CliResult<CloudSummary> {
    let cloud = build_cloud(model, fields, tag, settings.pair_budget, settings.seed)?;
    let mut th = Thresholds::with_rho_limit(
        settings
            .rho_limit
            .unwrap_or_else(|| default_rho_limit(&cloud)),
    );
    th.rho_bins = settings.rho_bins;
    th.phi_gap = settings.phi_gap;
    let verdict = classify_cloud_with(&cloud, th);
    Ok(CloudSummary {
        field: tag,
        pairs: cloud.pairs.len(),
        max_rho: cloud.max_rho(),
        max_phi: cloud.max_phi(),
        verdict,
    })
}

/// Runs the whole chain. Stops after the necessary-condition stage when it
/// fails (the clouds stay `None`); a negative verdict is a successful run —
/// errors are reserved for stages that could not be computed at all.
pub fn verify_pseudohyperbolicity(
    model: &SystemModel,
    settings: &VerifySettings,
) -> CliResult<VerifyOutcome> {
    let n = model.dim();
    let is_flow = model.kind() == SystemKind::Flow;
    let x0 = settings
        .x0
        .clone()
        .unwrap_or_else(|| default_x0(model));

    let spectrum = lyapunov_spectrum(
        model,
        &x0,
        settings.spectrum_transient,
        settings.spectrum_span,
        settings.renorm_interval,
        &settings.integrator,
    )?;
    let k = settings.k.unwrap_or(n - 1);
    let conditions = check_necessary_conditions(&spectrum, k, is_flow);
    if !conditions.pass {
        return Ok(VerifyOutcome {
            spectrum,
            conditions,
            ess: None,
            ncu: None,
            pseudohyperbolic: false,
            failing_stage: Some("necessary_conditions"),
        });
    }

    let traj = if is_flow {
        let span = settings.samples as f64 * settings.sample_dt;
        integrate_trajectory(
            model,
            &x0,
            settings.transient,
            span,
            settings.sample_dt,
            &settings.integrator,
        )?
    } else {
        iterate_map(
            model,
            &x0,
            settings.transient.round().max(0.0) as usize,
            settings.samples,
            &settings.integrator,
        )?
    };
    let auto_trim = default_trim(traj.len()).min(traj.len() / 4);
    let m1 = settings.m1.unwrap_or(auto_trim);
    let m2 = settings.m2.unwrap_or(auto_trim);
    let fields = build_fields(model, &traj, m1, m2, settings.seed, &settings.integrator)?;
    drop(traj);

    let ess = cloud_summary(model, &fields, FieldTag::Ess, settings)?;
    let ncu = cloud_summary(model, &fields, FieldTag::Ncu, settings)?;
    let continuous = ess.verdict.class == pseudohyp::continuity::CloudClass::Continuous
        && ncu.verdict.class == pseudohyp::continuity::CloudClass::Continuous;
    Ok(VerifyOutcome {
        spectrum,
        conditions,
        ess: Some(ess),
        ncu: Some(ncu),
        pseudohyperbolic: continuous,
        failing_stage: if continuous { None } else { Some("continuity") },
    })
}
