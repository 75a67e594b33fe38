use serde::{Deserialize, Serialize};

use super::config::{DahlquistParams, MethodConfig, Preset, ProblemParams};
use crate::collocation::NodeFamily;
use crate::controller::{ControllerConfig, Strategy};
use crate::problems::{AcParams, NlsParams, QuenchParams, VdpParams};
use crate::sweeper::PrecondKind;

/// How the reference solution of a preset without closed form is computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub method: MethodConfig,
    pub controller: ControllerConfig,
}

pub(crate) struct PresetDefaults {
    pub t0: f64,
    pub t_end: f64,
    pub problem: ProblemParams,
    pub method: MethodConfig,
    pub controller: ControllerConfig,
    pub r_tol_factor: Option<f64>,
    pub reference: ReferenceConfig,
}

fn method(inner_ratio: Option<f64>, inner_max_iter: usize) -> MethodConfig {
    MethodConfig {
        nodes: NodeFamily::RadauRight,
        m: 3,
        preconditioner: PrecondKind::ImplicitEuler,
        inner_ratio,
        inner_tol: 1e-14,
        inner_max_iter,
    }
}

fn controller(eps_tol: f64, dt_init: f64) -> ControllerConfig {
    ControllerConfig { strategy: Strategy::DtkAdaptive, eps_tol, dt_init, ..ControllerConfig::default() }
}

/// High-order Δt-adaptive run with exact inner solves; it needs no residual
/// threshold and therefore cannot stall on roundoff.
fn tight(eps_tol: f64, dt_init: f64) -> ReferenceConfig {
    ReferenceConfig {
        method: MethodConfig {
            nodes: NodeFamily::RadauRight,
            m: 5,
            preconditioner: PrecondKind::Lu,
            inner_ratio: None,
            inner_tol: 1e-14,
            inner_max_iter: 50,
        },
        controller: ControllerConfig {
            strategy: Strategy::DtAdaptive,
            eps_tol,
            k_max: 9,
            dt_init,
            restart_budget: 1_000_000,
            ..ControllerConfig::default()
        },
    }
}

pub(crate) fn defaults(preset: Preset) -> PresetDefaults {
    match preset {
        Preset::Dahlquist => PresetDefaults {
            t0: 0.0,
            t_end: 1.0,
            problem: ProblemParams::Dahlquist(DahlquistParams { lambda: -1.0 }),
            method: method(None, 50),
            controller: controller(1e-6, 0.1),
            r_tol_factor: Some(1e-3),
            reference: tight(1e-13, 0.1),
        },
        Preset::Vdp => PresetDefaults {
            t0: 0.0,
            t_end: 20.0,
            problem: ProblemParams::Vdp(VdpParams { mu: 5.0, u0: 1.1, v0: 0.0 }),
            method: method(Some(1e-5), 9),
            controller: controller(1e-6, 1e-2),
            r_tol_factor: Some(1e-5),
            reference: tight(1e-13, 1e-3),
        },
        Preset::VdpTransition => PresetDefaults {
            t0: 0.0,
            t_end: 20.0,
            problem: ProblemParams::Vdp(VdpParams { mu: 1000.0, u0: 1.1, v0: 0.0 }),
            method: method(Some(1e-5), 9),
            controller: controller(1e-5, 1e-4),
            r_tol_factor: Some(1e-5),
            reference: tight(1e-12, 1e-5),
        },
        Preset::Quench => PresetDefaults {
            t0: 0.0,
            t_end: 500.0,
            problem: ProblemParams::Quench(QuenchParams::default()),
            method: method(Some(1e-1), 5),
            controller: controller(1e-5, 1.0),
            r_tol_factor: Some(1e-1),
            reference: tight(1e-11, 0.1),
        },
        Preset::Nls => {
            let mut reference = ReferenceConfig {
                method: method(None, 1),
                controller: ControllerConfig { r_tol: 1e-13, ..controller(1e-12, 1e-3) },
            };
            reference.method.m = 4;
            PresetDefaults {
                t0: 0.0,
                t_end: 1.0,
                problem: ProblemParams::Nls(NlsParams { n: 64 }),
                method: method(None, 1),
                controller: controller(1e-6, 1e-2),
                r_tol_factor: Some(1e-4),
                reference,
            }
        }
        Preset::AllenCahn => PresetDefaults {
            t0: 0.0,
            t_end: 0.025,
            problem: ProblemParams::AllenCahn(AcParams::default()),
            method: method(None, 1),
            controller: controller(1e-5, 1e-4),
            r_tol_factor: Some(1e-3),
            reference: tight(1e-11, 1e-5),
        },
    }
}
