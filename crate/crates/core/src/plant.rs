//! Single-bus microgrid physics and the droop primary loop.
//!
//! Frequency is dynamic (aggregate swing equation in per-unit, explicit Euler
//! at `dt_sim`), voltage is algebraic: nominal plus secondary offset plus
//! reactive support minus whatever sag the active disturbances impose.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgUnit {
    pub p_set: f64,
    pub p_max: f64,
    pub droop_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssParams {
    pub p_max: f64,
    /// Usable energy in pu·s.
    pub e_cap: f64,
    pub soc0: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    pub f0: f64,
    /// Aggregate inertia constant (pu·s).
    pub m: f64,
    /// Load damping (pu power per pu frequency).
    pub d: f64,
    pub dg_units: Vec<DgUnit>,
    pub ess: EssParams,
    pub v0: f64,
    pub dt_sim: f64,
    /// Base load at t = 0 (pu).
    pub load: f64,
    /// Share of the base load carried by each breaker-protected feeder.
    pub feeder_shares: Vec<f64>,
    /// Supply lost when an islanding event fires (pu).
    pub islanding_import: f64,
    /// Bus voltage rise per pu of reactive injection.
    pub var_reactance: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        let dg = DgUnit {
            p_set: 0.4,
            p_max: 1.0,
            droop_r: 0.05,
        };
        PlantParams {
            f0: 50.0,
            m: 10.0,
            d: 1.0,
            dg_units: vec![dg.clone(), dg],
            ess: EssParams {
                p_max: 0.3,
                e_cap: 600.0,
                soc0: 0.8,
            },
            v0: 1.0,
            dt_sim: 0.001,
            load: 0.8,
            feeder_shares: vec![0.5],
            islanding_import: 0.1,
            var_reactance: 0.1,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(NmgError::InvalidParams(msg.to_string()));
        let finite = [
            self.f0,
            self.m,
            self.d,
            self.v0,
            self.dt_sim,
            self.load,
            self.islanding_import,
            self.var_reactance,
            self.ess.p_max,
            self.ess.e_cap,
            self.ess.soc0,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return bad("plant parameters must be finite");
        }
        if self.m <= 0.0 {
            return bad("inertia m must be > 0");
        }
        if self.d < 0.0 {
            return bad("damping d must be >= 0");
        }
        if self.dt_sim <= 0.0 {
            return bad("dt_sim must be > 0");
        }
        if !(0.0..=1.0).contains(&self.ess.soc0) {
            return bad("ess.soc0 must lie in [0, 1]");
        }
        if self.ess.p_max < 0.0 || self.ess.e_cap <= 0.0 {
            return bad("ess.p_max must be >= 0 and ess.e_cap > 0");
        }
        for u in &self.dg_units {
            if !(u.droop_r > 0.0 && u.droop_r.is_finite()) {
                return bad("every droop_r must be > 0");
            }
            if !(u.p_max >= 0.0 && u.p_set.is_finite()) {
                return bad("every p_max must be >= 0");
            }
        }
        let share: f64 = self.feeder_shares.iter().sum();
        if self.feeder_shares.iter().any(|s| !(0.0..=1.0).contains(s)) || share > 1.0 + 1e-12 {
            return bad("feeder shares must lie in [0, 1] and sum to at most 1");
        }
        Ok(())
    }

    /// Σ 1/R_i over all droop units.
    pub fn droop_gain(&self) -> f64 {
        self.dg_units.iter().map(|u| 1.0 / u.droop_r).sum()
    }

    /// Protected elements in breaker-vector order: feeders, DGs, ESS.
    pub fn elements(&self) -> Vec<ElementId> {
        let mut out: Vec<ElementId> = (0..self.feeder_shares.len())
            .map(ElementId::Feeder)
            .collect();
        out.extend((0..self.dg_units.len()).map(ElementId::Dg));
        out.push(ElementId::Ess);
        out
    }

    pub fn element_index(&self, el: ElementId) -> Option<usize> {
        let nf = self.feeder_shares.len();
        let nd = self.dg_units.len();
        match el {
            ElementId::Feeder(k) if k < nf => Some(k),
            ElementId::Dg(i) if i < nd => Some(nf + i),
            ElementId::Ess => Some(nf + nd),
            _ => None,
        }
    }
}

/// A breaker-protected element of the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ElementId {
    Feeder(usize),
    Dg(usize),
    Ess,
}

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElementId::Feeder(k) => write!(f, "feeder{k}"),
            ElementId::Dg(i) => write!(f, "dg{i}"),
            ElementId::Ess => write!(f, "ess"),
        }
    }
}

impl FromStr for ElementId {
    type Err = NmgError;

    fn from_str(s: &str) -> Result<Self> {
        let parse_idx = |rest: &str| {
            rest.parse::<usize>()
                .map_err(|_| NmgError::Parse(format!("bad element id {s:?}")))
        };
        if s == "ess" {
            Ok(ElementId::Ess)
        } else if let Some(rest) = s.strip_prefix("feeder") {
            parse_idx(rest).map(ElementId::Feeder)
        } else if let Some(rest) = s.strip_prefix("dg") {
            parse_idx(rest).map(ElementId::Dg)
        } else {
            Err(NmgError::Parse(format!("bad element id {s:?}")))
        }
    }
}

impl TryFrom<String> for ElementId {
    type Error = NmgError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ElementId> for String {
    fn from(e: ElementId) -> String {
        e.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub t: f64,
    pub delta_f: f64,
    pub v: f64,
    pub p_dg: Vec<f64>,
    /// Positive = discharge.
    pub p_ess: f64,
    pub soc: f64,
    /// Demand, excluding fault current paths.
    pub p_load: f64,
    /// Demand actually supplied after feeder trips and shedding.
    pub p_served: f64,
    pub shed_fraction: f64,
    pub breaker_closed: Vec<bool>,
    pub prearm: bool,
    /// Reactive injection held by the last VarInject action.
    pub q_var: f64,
}

impl PlantState {
    pub fn initial(params: &PlantParams) -> Self {
        PlantState {
            t: 0.0,
            delta_f: 0.0,
            v: params.v0,
            p_dg: params
                .dg_units
                .iter()
                .map(|u| u.p_set.clamp(0.0, u.p_max))
                .collect(),
            p_ess: 0.0,
            soc: params.ess.soc0,
            p_load: params.load,
            p_served: params.load,
            shed_fraction: 0.0,
            breaker_closed: vec![true; params.elements().len()],
            prearm: false,
            q_var: 0.0,
        }
    }

    pub fn is_closed(&self, params: &PlantParams, el: ElementId) -> bool {
        params
            .element_index(el)
            .map(|i| self.breaker_closed[i])
            .unwrap_or(false)
    }

    fn check_finite(&self) -> Result<()> {
        let fields: [(&'static str, f64); 6] = [
            ("delta_f", self.delta_f),
            ("v", self.v),
            ("p_ess", self.p_ess),
            ("soc", self.soc),
            ("p_load", self.p_load),
            ("shed_fraction", self.shed_fraction),
        ];
        for (name, x) in fields {
            if !x.is_finite() {
                return Err(NmgError::NonFinite {
                    t: self.t,
                    field: name,
                });
            }
        }
        if self.p_dg.iter().any(|x| !x.is_finite()) {
            return Err(NmgError::NonFinite {
                t: self.t,
                field: "p_dg",
            });
        }
        Ok(())
    }
}

/// Secondary-layer biases. Every field at its default is the neutral command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SecondaryCommand {
    pub df_offset: f64,
    pub dv_offset: f64,
    pub ess_predispatch: f64,
    pub trip_threshold_bias: f64,
    pub trip_delay_bias: f64,
    pub prearm: bool,
    pub shed_desensitize: bool,
}

impl SecondaryCommand {
    pub fn neutral() -> Self {
        Self::default()
    }

    pub fn is_neutral(&self) -> bool {
        *self == Self::default()
    }
}

/// Disturbance effects active during one plant step, resolved by the
/// scenario timeline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Injections {
    /// Extra demand on the unprotected bus load (pu).
    pub load_delta: f64,
    /// Supply lost (pu), e.g. import lost at islanding.
    pub gen_loss: f64,
    /// Voltage sag depth imposed by non-fault events (pu).
    pub sag_depth: f64,
    /// (harmonic order, amplitude relative to the fundamental).
    pub harmonics: Vec<(u32, f64)>,
    /// Faults not yet cleared: (element, severity pu).
    pub faults: Vec<(ElementId, f64)>,
}

impl Injections {
    pub fn none() -> Self {
        Self::default()
    }

    fn faulted(&self, el: ElementId) -> bool {
        self.faults.iter().any(|(e, _)| *e == el)
    }
}

/// Droop characteristic of every DG, biased by the secondary frequency offset.
pub fn droop_dispatch(delta_f: f64, params: &PlantParams, cmd: &SecondaryCommand) -> Vec<f64> {
    params
        .dg_units
        .iter()
        .map(|u| (u.p_set - (delta_f - cmd.df_offset) / u.droop_r).clamp(0.0, u.p_max))
        .collect()
}

/// ESS power the unit can actually deliver for the requested set-point.
pub fn ess_dispatch(request: f64, soc: f64, params: &PlantParams) -> f64 {
    let ess = &params.ess;
    let mut p = request.clamp(-ess.p_max, ess.p_max);
    if p > 0.0 {
        p = p.min(soc * ess.e_cap / params.dt_sim);
    } else if p < 0.0 {
        p = p.max(-(1.0 - soc) * ess.e_cap / params.dt_sim);
    }
    p
}

/// Advance the plant by one `dt_sim`.
pub fn step(
    state: &PlantState,
    params: &PlantParams,
    cmd: &SecondaryCommand,
    inj: &Injections,
) -> Result<PlantState> {
    state.check_finite()?;
    let dt = params.dt_sim;

    let mut p_dg = droop_dispatch(state.delta_f, params, cmd);
    for (i, p) in p_dg.iter_mut().enumerate() {
        let el = ElementId::Dg(i);
        if !state.is_closed(params, el) || inj.faulted(el) {
            *p = 0.0;
        }
    }

    let ess_available = state.is_closed(params, ElementId::Ess) && !inj.faulted(ElementId::Ess);
    let p_ess = if ess_available {
        ess_dispatch(cmd.ess_predispatch, state.soc, params)
    } else {
        0.0
    };

    let open_share: f64 = params
        .feeder_shares
        .iter()
        .enumerate()
        .filter(|(k, _)| !state.is_closed(params, ElementId::Feeder(*k)))
        .map(|(_, s)| s)
        .sum();
    let demand = params.load + inj.load_delta;
    let served = (params.load * (1.0 - open_share) + inj.load_delta) * (1.0 - state.shed_fraction);
    let fault_load: f64 = inj
        .faults
        .iter()
        .filter(|(e, _)| matches!(e, ElementId::Feeder(_)) && state.is_closed(params, *e))
        .map(|(_, sev)| sev)
        .sum();

    let supply: f64 = p_dg.iter().sum::<f64>() + p_ess;
    let imbalance = supply - served - fault_load - inj.gen_loss - params.d * state.delta_f;
    let delta_f = state.delta_f + dt * imbalance / params.m;
    let soc = (state.soc - p_ess * dt / params.ess.e_cap).clamp(0.0, 1.0);

    let fault_sag = inj
        .faults
        .iter()
        .filter(|(e, _)| state.is_closed(params, *e))
        .map(|(_, sev)| *sev)
        .fold(0.0, f64::max);
    let sag = inj.sag_depth.max(fault_sag);
    let v = params.v0 + cmd.dv_offset + params.var_reactance * state.q_var - sag;

    let next = PlantState {
        t: state.t + dt,
        delta_f,
        v,
        p_dg,
        p_ess,
        soc,
        p_load: demand,
        p_served: served,
        shed_fraction: state.shed_fraction,
        breaker_closed: state.breaker_closed.clone(),
        prearm: state.prearm || cmd.prearm,
        q_var: state.q_var,
    };
    next.check_finite()?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProtectionAction {
    Trip(ElementId),
    Shed(f64),
    VarInject(f64),
    Prearm,
    None,
}

impl ProtectionAction {
    /// Trip and Shed interrupt supply; these are what false/missed-trip
    /// accounting counts.
    pub fn interrupts_load(&self) -> bool {
        matches!(self, ProtectionAction::Trip(_) | ProtectionAction::Shed(_))
    }

    /// Fixed priority used when several criteria propose actions.
    pub fn priority(&self) -> u8 {
        match self {
            ProtectionAction::Trip(_) => 3,
            ProtectionAction::Shed(_) => 2,
            ProtectionAction::VarInject(_) => 1,
            ProtectionAction::Prearm | ProtectionAction::None => 0,
        }
    }
}

impl fmt::Display for ProtectionAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtectionAction::Trip(e) => write!(f, "trip:{e}"),
            ProtectionAction::Shed(x) => write!(f, "shed:{x}"),
            ProtectionAction::VarInject(q) => write!(f, "var:{q}"),
            ProtectionAction::Prearm => write!(f, "prearm"),
            ProtectionAction::None => write!(f, "none"),
        }
    }
}

impl FromStr for ProtectionAction {
    type Err = NmgError;

    fn from_str(s: &str) -> Result<Self> {
        let num = |x: &str| {
            x.parse::<f64>()
                .map_err(|_| NmgError::Parse(format!("bad action {s:?}")))
        };
        match s.split_once(':') {
            Some(("trip", e)) => Ok(ProtectionAction::Trip(e.parse()?)),
            Some(("shed", x)) => Ok(ProtectionAction::Shed(num(x)?)),
            Some(("var", x)) => Ok(ProtectionAction::VarInject(num(x)?)),
            None if s == "prearm" => Ok(ProtectionAction::Prearm),
            None if s == "none" => Ok(ProtectionAction::None),
            _ => Err(NmgError::Parse(format!("bad action {s:?}"))),
        }
    }
}

/// Result of pushing an action through the actuation gateway.
#[derive(Debug, Clone, PartialEq)]
pub struct Actuation {
    pub state: PlantState,
    /// False when the action changed nothing (e.g. tripping an open breaker).
    pub effective: bool,
}

pub fn apply_protection(
    state: &PlantState,
    action: &ProtectionAction,
    params: &PlantParams,
) -> Result<Actuation> {
    let mut next = state.clone();
    let effective = match action {
        ProtectionAction::Trip(el) => {
            let idx = params
                .element_index(*el)
                .ok_or_else(|| NmgError::InvalidParams(format!("unknown element {el}")))?;
            let was = next.breaker_closed[idx];
            next.breaker_closed[idx] = false;
            was
        }
        ProtectionAction::Shed(frac) => {
            if !(0.0..=1.0).contains(frac) {
                return Err(NmgError::ShedOutOfRange(*frac));
            }
            // Fractions apply to the surviving load.
            next.shed_fraction = 1.0 - (1.0 - state.shed_fraction) * (1.0 - frac);
            *frac > 0.0 && state.shed_fraction < 1.0
        }
        ProtectionAction::VarInject(q) => {
            next.q_var = *q;
            *q != state.q_var
        }
        ProtectionAction::Prearm => {
            next.prearm = true;
            !state.prearm
        }
        ProtectionAction::None => false,
    };
    Ok(Actuation {
        state: next,
        effective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_dg(load: f64) -> PlantParams {
        PlantParams {
            dg_units: vec![DgUnit {
                p_set: 0.5,
                p_max: 1.0,
                droop_r: 0.05,
            }],
            load,
            feeder_shares: vec![],
            ..PlantParams::default()
        }
    }

    #[test]
    fn droop_examples() {
        let p = single_dg(0.5);
        let cmd = SecondaryCommand::neutral();
        assert_eq!(droop_dispatch(0.0, &p, &cmd), vec![0.5]);
        let got = droop_dispatch(-0.005, &p, &cmd)[0];
        assert!((got - 0.6).abs() < 1e-12, "{got}");
        assert_eq!(droop_dispatch(-1.0, &p, &cmd), vec![1.0]);
    }

    #[test]
    fn df_offset_shifts_droop_reference() {
        let p = single_dg(0.5);
        let cmd = SecondaryCommand {
            df_offset: 0.005,
            ..Default::default()
        };
        assert!((droop_dispatch(0.0, &p, &cmd)[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let s1 = step(&s0, &p, &SecondaryCommand::neutral(), &Injections::none()).unwrap();
        assert_eq!(s1.t, p.dt_sim);
        let mut expect = s0.clone();
        expect.t = s1.t;
        assert_eq!(s1, expect);
    }

    #[test]
    fn load_step_settles_at_droop_value() {
        let p = single_dg(0.5);
        let inj = Injections {
            load_delta: 0.1,
            ..Injections::none()
        };
        let mut s = PlantState::initial(&p);
        for _ in 0..10_000 {
            s = step(&s, &p, &SecondaryCommand::neutral(), &inj).unwrap();
        }
        let expect = -0.1 / (1.0 / 0.05 + 1.0);
        assert!(
            (s.delta_f - expect).abs() < 1e-9,
            "{} vs {expect}",
            s.delta_f
        );
    }

    #[test]
    fn empty_storage_cannot_discharge() {
        let mut p = PlantParams::default();
        p.ess.soc0 = 0.0;
        let s0 = PlantState::initial(&p);
        let cmd = SecondaryCommand {
            ess_predispatch: 0.2,
            ..Default::default()
        };
        let s1 = step(&s0, &p, &cmd, &Injections::none()).unwrap();
        assert_eq!(s1.p_ess, 0.0);
        assert_eq!(s1.soc, 0.0);
    }

    #[test]
    fn ess_power_clamped() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let cmd = SecondaryCommand {
            ess_predispatch: 5.0,
            ..Default::default()
        };
        let s1 = step(&s0, &p, &cmd, &Injections::none()).unwrap();
        assert_eq!(s1.p_ess, p.ess.p_max);
        assert!(s1.soc < s0.soc);
    }

    #[test]
    fn non_finite_state_rejected() {
        let p = PlantParams::default();
        let mut s = PlantState::initial(&p);
        s.delta_f = f64::NAN;
        let err = step(&s, &p, &SecondaryCommand::neutral(), &Injections::none()).unwrap_err();
        assert!(matches!(
            err,
            NmgError::NonFinite {
                field: "delta_f",
                ..
            }
        ));
    }

    #[test]
    fn open_dg_breaker_zeroes_output() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let s1 = apply_protection(&s0, &ProtectionAction::Trip(ElementId::Dg(1)), &p)
            .unwrap()
            .state;
        let s2 = step(&s1, &p, &SecondaryCommand::neutral(), &Injections::none()).unwrap();
        assert_eq!(s2.p_dg[1], 0.0);
        assert!(s2.delta_f < 0.0);
    }

    #[test]
    fn fault_sag_clears_when_breaker_opens() {
        let p = PlantParams::default();
        let inj = Injections {
            faults: vec![(ElementId::Dg(1), 0.4)],
            ..Injections::none()
        };
        let s0 = PlantState::initial(&p);
        let s1 = step(&s0, &p, &SecondaryCommand::neutral(), &inj).unwrap();
        assert!((s1.v - 0.6).abs() < 1e-12);
        assert_eq!(s1.p_dg[1], 0.0);
        let tripped = apply_protection(&s1, &ProtectionAction::Trip(ElementId::Dg(1)), &p)
            .unwrap()
            .state;
        let s2 = step(&tripped, &p, &SecondaryCommand::neutral(), &inj).unwrap();
        assert_eq!(s2.v, 1.0);
    }

    #[test]
    fn trip_feeder_and_noop_retrip() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let trip = ProtectionAction::Trip(ElementId::Feeder(0));
        let a = apply_protection(&s0, &trip, &p).unwrap();
        assert!(a.effective);
        assert!(!a.state.breaker_closed[0]);
        let b = apply_protection(&a.state, &trip, &p).unwrap();
        assert!(!b.effective);
        assert_eq!(b.state, a.state);
    }

    #[test]
    fn repeated_shed_compounds() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let s1 = apply_protection(&s0, &ProtectionAction::Shed(0.2), &p)
            .unwrap()
            .state;
        let s2 = apply_protection(&s1, &ProtectionAction::Shed(0.2), &p)
            .unwrap()
            .state;
        assert!((s2.shed_fraction - 0.36).abs() < 1e-12);
    }

    #[test]
    fn shed_out_of_range_rejected() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        assert!(matches!(
            apply_protection(&s0, &ProtectionAction::Shed(1.5), &p),
            Err(NmgError::ShedOutOfRange(_))
        ));
    }

    #[test]
    fn none_is_identity() {
        let p = PlantParams::default();
        let s0 = PlantState::initial(&p);
        let a = apply_protection(&s0, &ProtectionAction::None, &p).unwrap();
        assert_eq!(a.state, s0);
        assert!(!a.effective);
    }

    #[test]
    fn action_string_roundtrip() {
        for a in [
            ProtectionAction::Trip(ElementId::Dg(1)),
            ProtectionAction::Trip(ElementId::Feeder(0)),
            ProtectionAction::Trip(ElementId::Ess),
            ProtectionAction::Shed(0.1),
            ProtectionAction::VarInject(0.05),
            ProtectionAction::Prearm,
            ProtectionAction::None,
        ] {
            assert_eq!(a.to_string().parse::<ProtectionAction>().unwrap(), a);
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = PlantParams {
            m: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let mut p = PlantParams::default();
        p.dg_units[0].droop_r = 0.0;
        assert!(p.validate().is_err());
        let mut p = PlantParams::default();
        p.ess.soc0 = 1.2;
        assert!(p.validate().is_err());
        assert!(PlantParams::default().validate().is_ok());
    }
}
