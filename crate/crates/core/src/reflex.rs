//! Fast reflex protection: instantaneous and definite-time criteria that
//! turn features into a protection drive, plus hard limits that no gating
//! can mask.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};
use crate::plant::{ElementId, ProtectionAction, SecondaryCommand};
use crate::telemetry::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Criterion {
    SagInstant,
    RoCoFDefiniteTime,
    FreqUnderOver,
    ThdSustained,
}

impl Criterion {
    pub const ALL: [Criterion; 4] = [
        Criterion::SagInstant,
        Criterion::RoCoFDefiniteTime,
        Criterion::FreqUnderOver,
        Criterion::ThdSustained,
    ];

    fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            Criterion::SagInstant => "sag",
            Criterion::RoCoFDefiniteTime => "rocof",
            Criterion::FreqUnderOver => "freq",
            Criterion::ThdSustained => "thd",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Criterion {
    type Err = NmgError;
    fn from_str(s: &str) -> Result<Self> {
        Criterion::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| NmgError::Parse(format!("bad criterion {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pickup {
    pub threshold: f64,
    /// Definite-time delay (s); 0 for instantaneous elements.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflexLimits {
    pub sag: Pickup,
    pub rocof: Pickup,
    pub freq: Pickup,
    pub thd: Pickup,
    pub df_hard: f64,
    pub rocof_hard: f64,
    /// Fraction of surviving load removed per Shed.
    pub shed_step: f64,
    /// Reactive injection per VarInject (pu).
    pub var_step: f64,
    /// Default trip target when the fault location is unknown.
    pub trip_element: ElementId,
    /// Minimum gated drive that executes the proposed action.
    pub act_threshold: f64,
}

impl Default for ReflexLimits {
    fn default() -> Self {
        ReflexLimits {
            sag: Pickup {
                threshold: 0.05,
                delay: 0.0,
            },
            rocof: Pickup {
                threshold: 0.5,
                delay: 0.05,
            },
            freq: Pickup {
                threshold: 0.01,
                delay: 0.1,
            },
            thd: Pickup {
                threshold: 0.05,
                delay: 0.1,
            },
            df_hard: 0.04,
            rocof_hard: 5.0,
            shed_step: 0.1,
            var_step: 0.02,
            trip_element: ElementId::Feeder(0),
            act_threshold: 0.5,
        }
    }
}

impl ReflexLimits {
    pub fn validate(&self) -> Result<()> {
        let ps = [self.sag, self.rocof, self.freq, self.thd];
        if ps
            .iter()
            .any(|p| !(p.threshold > 0.0 && p.threshold.is_finite() && p.delay >= 0.0))
        {
            return Err(NmgError::InvalidParams(
                "pickups must be positive and delays non-negative".into(),
            ));
        }
        if self.df_hard < self.freq.threshold || self.rocof_hard < self.rocof.threshold {
            return Err(NmgError::InvalidParams(
                "hard limits must not sit below gated pickups".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.shed_step) {
            return Err(NmgError::ShedOutOfRange(self.shed_step));
        }
        Ok(())
    }

    fn pickup(&self, c: Criterion) -> Pickup {
        match c {
            Criterion::SagInstant => self.sag,
            Criterion::RoCoFDefiniteTime => self.rocof,
            Criterion::FreqUnderOver => self.freq,
            Criterion::ThdSustained => self.thd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflexDrive {
    pub a: f64,
    pub proposed: ProtectionAction,
    pub criteria_fired: BTreeSet<Criterion>,
    pub t: f64,
}

impl ReflexDrive {
    pub fn idle(t: f64) -> Self {
        ReflexDrive {
            a: 0.0,
            proposed: ProtectionAction::None,
            criteria_fired: BTreeSet::new(),
            t,
        }
    }
}

fn measured(c: Criterion, fv: &FeatureVector) -> f64 {
    match c {
        Criterion::SagInstant => fv.sag_depth,
        Criterion::RoCoFDefiniteTime => fv.rocof.abs(),
        Criterion::FreqUnderOver => fv.df_mag,
        Criterion::ThdSustained => fv.thd,
    }
}

/// Linear in overshoot past pickup, saturating at twice the pickup.
pub fn severity(value: f64, threshold: f64) -> f64 {
    (value / threshold - 1.0).clamp(0.0, 1.0)
}

/// Reflex element with its definite-time timers.
#[derive(Debug, Clone)]
pub struct Reflex {
    limits: ReflexLimits,
    picked_up_at: [Option<f64>; 4],
}

impl Reflex {
    pub fn new(limits: ReflexLimits) -> Self {
        Reflex {
            limits,
            picked_up_at: [None; 4],
        }
    }

    pub fn limits(&self) -> &ReflexLimits {
        &self.limits
    }

    pub fn evaluate(&mut self, fv: &FeatureVector, cmd: &SecondaryCommand, t: f64) -> ReflexDrive {
        let mut drive = ReflexDrive::idle(t);
        let mut best = ProtectionAction::None;
        for c in Criterion::ALL {
            let p = self.limits.pickup(c);
            let threshold = (p.threshold * (1.0 + cmd.trip_threshold_bias)).max(0.0);
            let delay = (p.delay + cmd.trip_delay_bias).max(0.0);
            let value = measured(c, fv);
            let timer = &mut self.picked_up_at[c.index()];
            if value > threshold {
                let since = *timer.get_or_insert(t);
                // Tolerance absorbs hop accumulation error.
                if t - since + 1e-9 >= delay {
                    drive.criteria_fired.insert(c);
                    drive.a = drive
                        .a
                        .max(severity(value, threshold).max(f64::MIN_POSITIVE));
                    let action = self.proposal(c, fv, cmd);
                    if action.priority() > best.priority() {
                        best = action;
                    }
                }
            } else {
                *timer = None;
            }
        }
        drive.proposed = best;
        drive
    }

    fn proposal(
        &self,
        c: Criterion,
        fv: &FeatureVector,
        cmd: &SecondaryCommand,
    ) -> ProtectionAction {
        let shed = if cmd.shed_desensitize {
            ProtectionAction::None
        } else {
            ProtectionAction::Shed(self.limits.shed_step)
        };
        match c {
            Criterion::SagInstant => ProtectionAction::Trip(self.limits.trip_element),
            Criterion::RoCoFDefiniteTime if fv.rocof < 0.0 && fv.delta_f < 0.0 => shed,
            Criterion::FreqUnderOver if fv.delta_f < 0.0 => shed,
            Criterion::ThdSustained => ProtectionAction::VarInject(self.limits.var_step),
            _ => ProtectionAction::None,
        }
    }

    /// Restart definite-time timing of the given criteria after an operation.
    pub fn rearm(&mut self, fired: &BTreeSet<Criterion>) {
        for c in fired {
            self.picked_up_at[c.index()] = None;
        }
    }
}

/// Hard safety limits; inclusive boundaries; independent of any gate state.
pub fn hard_override(fv: &FeatureVector, limits: &ReflexLimits) -> Option<ProtectionAction> {
    if fv.df_mag >= limits.df_hard || fv.rocof.abs() >= limits.rocof_hard {
        Some(ProtectionAction::Trip(limits.trip_element))
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quiet_features_do_nothing() {
        let mut r = Reflex::new(ReflexLimits::default());
        let d = r.evaluate(&FeatureVector::default(), &SecondaryCommand::neutral(), 0.0);
        assert_eq!(d.a, 0.0);
        assert_eq!(d.proposed, ProtectionAction::None);
        assert!(d.criteria_fired.is_empty());
    }

    #[test]
    fn double_pickup_sag_saturates() {
        let mut r = Reflex::new(ReflexLimits::default());
        let fv = FeatureVector {
            sag_depth: 0.1,
            ..Default::default()
        };
        let d = r.evaluate(&fv, &SecondaryCommand::neutral(), 0.0);
        assert_eq!(d.a, 1.0);
        assert!(d.criteria_fired.contains(&Criterion::SagInstant));
        assert_eq!(d.proposed, ProtectionAction::Trip(ElementId::Feeder(0)));
    }

    #[test]
    fn definite_time_waits_for_delay() {
        let mut r = Reflex::new(ReflexLimits::default());
        let fv = FeatureVector {
            rocof: -0.6,
            delta_f: -0.005,
            ..Default::default()
        };
        let cmd = SecondaryCommand::neutral();
        // Sustained for 30 ms at a 10 ms hop: not yet.
        for k in 0..=3 {
            let d = r.evaluate(&fv, &cmd, k as f64 * 0.01);
            assert!(d.criteria_fired.is_empty(), "fired at hop {k}");
        }
        let mut fired_at = None;
        for k in 4..=6 {
            let d = r.evaluate(&fv, &cmd, k as f64 * 0.01);
            if !d.criteria_fired.is_empty() && fired_at.is_none() {
                fired_at = Some(k);
                assert_eq!(d.proposed, ProtectionAction::Shed(0.1));
            }
        }
        assert_eq!(fired_at, Some(5));
    }

    #[test]
    fn timer_resets_below_pickup() {
        let mut r = Reflex::new(ReflexLimits::default());
        let hot = FeatureVector {
            rocof: -0.6,
            ..Default::default()
        };
        let cmd = SecondaryCommand::neutral();
        for k in 0..4 {
            r.evaluate(&hot, &cmd, k as f64 * 0.01);
        }
        r.evaluate(&FeatureVector::default(), &cmd, 0.04);
        let d = r.evaluate(&hot, &cmd, 0.05);
        assert!(d.criteria_fired.is_empty());
    }

    #[test]
    fn desensitized_shedding_proposes_nothing() {
        let mut r = Reflex::new(ReflexLimits {
            freq: Pickup {
                threshold: 0.01,
                delay: 0.0,
            },
            ..Default::default()
        });
        let fv = FeatureVector {
            df_mag: 0.02,
            delta_f: -0.02,
            ..Default::default()
        };
        let cmd = SecondaryCommand {
            shed_desensitize: true,
            ..Default::default()
        };
        let d = r.evaluate(&fv, &cmd, 0.0);
        assert_eq!(d.a, 1.0);
        assert_eq!(d.proposed, ProtectionAction::None);
    }

    #[test]
    fn hard_limits_inclusive() {
        let l = ReflexLimits::default();
        let at = FeatureVector {
            df_mag: l.df_hard,
            ..Default::default()
        };
        assert!(hard_override(&at, &l).is_some());
        let below = FeatureVector {
            df_mag: l.df_hard * 0.99,
            rocof: l.rocof_hard * 0.99,
            ..Default::default()
        };
        assert!(hard_override(&below, &l).is_none());
        let neg = FeatureVector {
            rocof: -1.01 * l.rocof_hard,
            ..Default::default()
        };
        assert!(hard_override(&neg, &l).is_some());
    }

    #[test]
    fn limits_validation() {
        assert!(ReflexLimits::default().validate().is_ok());
        let l = ReflexLimits {
            df_hard: 0.001,
            ..Default::default()
        };
        assert!(l.validate().is_err());
    }

    #[test]
    fn criterion_names_roundtrip() {
        for c in Criterion::ALL {
            assert_eq!(c.to_string().parse::<Criterion>().unwrap(), c);
        }
    }
}
