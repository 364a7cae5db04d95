//! Gate logic: the gating factor g, the gated response
//! `s_out = max(0, a - i) * g`, and the secondary commands it biases the
//! primary layer with.

use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};
use crate::plant::SecondaryCommand;
use crate::reflex::ReflexDrive;
use crate::supervisor::{DecisionKind, SupervisoryDecision};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateParams {
    pub k_i: f64,
    pub k_f: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Persistence at which an event stops being treated as a prepulse.
    pub p_sat: u32,
    /// Threshold bias per unit of gating.
    pub b: f64,
    /// Delay bias per unit of gating (s).
    pub d: f64,
    pub p_ess_max_share: f64,
    pub k_df: f64,
    pub k_dv: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        GateParams {
            k_i: 1.0,
            k_f: 1.0,
            g_min: 0.0,
            g_max: 2.0,
            p_sat: 5,
            b: 0.5,
            d: 0.05,
            p_ess_max_share: 0.5,
            k_df: 0.001,
            k_dv: 0.01,
        }
    }
}

impl GateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.g_min <= 1.0 && 1.0 <= self.g_max && self.g_min >= 0.0) {
            return Err(NmgError::InvalidParams(
                "gate bounds must satisfy 0 <= g_min <= 1 <= g_max".into(),
            ));
        }
        if [self.k_i, self.k_f, self.b, self.d, self.p_ess_max_share]
            .iter()
            .any(|x| !(x.is_finite() && *x >= 0.0))
        {
            return Err(NmgError::InvalidParams(
                "gate gains must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "PPI")]
    Ppi,
    #[serde(rename = "PPF")]
    Ppf,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateFactor {
    pub g: f64,
    pub rationale_kind: GateKind,
}

impl GateFactor {
    pub fn neutral() -> Self {
        GateFactor {
            g: 1.0,
            rationale_kind: GateKind::Neutral,
        }
    }

    fn from_g(g: f64) -> Self {
        let rationale_kind = if g < 1.0 {
            GateKind::Ppi
        } else if g > 1.0 {
            GateKind::Ppf
        } else {
            GateKind::Neutral
        };
        GateFactor { g, rationale_kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateContext {
    pub persistence: u32,
    pub t_since_precursor: f64,
}

pub fn gating_factor(
    decision: &SupervisoryDecision,
    ctx: &GateContext,
    params: &GateParams,
) -> GateFactor {
    if ctx.persistence >= params.p_sat {
        return GateFactor::neutral();
    }
    let c = decision.confidence;
    let g = match decision.kind {
        DecisionKind::Inhibit => 1.0 - params.k_i * c,
        DecisionKind::Facilitate => 1.0 + params.k_f * c,
        DecisionKind::Neutral => 1.0,
    };
    GateFactor::from_g(g.clamp(params.g_min, params.g_max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatedResponse {
    pub s_out: f64,
    pub source_drive: ReflexDrive,
    pub decision: SupervisoryDecision,
    pub g: GateFactor,
}

/// Net drive after inhibition, scaled by the gate.
pub fn gated_output(a: f64, i_mag: f64, g: f64) -> f64 {
    (a - i_mag).max(0.0) * g
}

/// Combine one decision cycle. `hop` bounds how far apart the drive and
/// decision timestamps may be.
pub fn gate(
    drive: &ReflexDrive,
    decision: &SupervisoryDecision,
    g: &GateFactor,
    hop: f64,
) -> Result<GatedResponse> {
    if (drive.t - decision.t).abs() > hop + 1e-9 {
        return Err(NmgError::CycleMismatch {
            drive_t: drive.t,
            decision_t: decision.t,
        });
    }
    Ok(GatedResponse {
        s_out: gated_output(drive.a, decision.i_mag, g.g),
        source_drive: drive.clone(),
        decision: *decision,
        g: *g,
    })
}

pub fn synthesize_commands(
    resp: &GatedResponse,
    params: &GateParams,
    ess_p_max: f64,
) -> SecondaryCommand {
    let g = resp.g.g;
    match resp.g.rationale_kind {
        GateKind::Neutral => SecondaryCommand::neutral(),
        GateKind::Ppi => SecondaryCommand {
            trip_threshold_bias: params.b * (1.0 - g),
            trip_delay_bias: params.d * (1.0 - g),
            shed_desensitize: true,
            ess_predispatch: 0.0,
            ..SecondaryCommand::neutral()
        },
        GateKind::Ppf => SecondaryCommand {
            trip_threshold_bias: -params.b * (g - 1.0),
            // The reflex floors the effective delay at zero.
            trip_delay_bias: -params.d * (g - 1.0),
            prearm: true,
            ess_predispatch: (resp.s_out * params.p_ess_max_share * ess_p_max)
                .clamp(-ess_p_max, ess_p_max),
            df_offset: params.k_df * resp.s_out,
            dv_offset: params.k_dv * resp.s_out,
            shed_desensitize: false,
        },
    }
}
