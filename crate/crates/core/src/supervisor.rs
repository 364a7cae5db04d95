//! EMS supervision: harmless/harmful classification of precursors,
//! inhibit/facilitate/neutral decisions, episodic reward and the tabular
//! contextual-bandit policy that learns from it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NmgError, Result};
use crate::report::KpiReport;
use crate::telemetry::{FeatureVector, Thresholds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Harmless,
    Harmful,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionKind {
    Inhibit,
    Facilitate,
    Neutral,
}

impl DecisionKind {
    /// Order also breaks argmax ties.
    pub const ALL: [DecisionKind; 3] = [
        DecisionKind::Inhibit,
        DecisionKind::Facilitate,
        DecisionKind::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    fn name(self) -> &'static str {
        match self {
            DecisionKind::Inhibit => "inhibit",
            DecisionKind::Facilitate => "facilitate",
            DecisionKind::Neutral => "neutral",
        }
    }
}

impl fmt::Display for DecisionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DecisionKind {
    type Err = NmgError;
    fn from_str(s: &str) -> Result<Self> {
        DecisionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| NmgError::Parse(format!("bad decision kind {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisoryDecision {
    pub kind: DecisionKind,
    pub confidence: f64,
    /// Subtractive inhibition; zero unless `kind` is Inhibit.
    pub i_mag: f64,
    pub t: f64,
}

impl SupervisoryDecision {
    pub fn neutral(confidence: f64, t: f64) -> Self {
        SupervisoryDecision {
            kind: DecisionKind::Neutral,
            confidence,
            i_mag: 0.0,
            t,
        }
    }

    fn with_kind(kind: DecisionKind, c: f64, t: f64) -> Self {
        SupervisoryDecision {
            kind,
            confidence: c,
            i_mag: if kind == DecisionKind::Inhibit {
                c
            } else {
                0.0
            },
            t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyMode {
    RuleBased,
    Learned,
}

/// Boundaries of the hand-written harmful rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleParams {
    pub sag_duration: f64,
    pub thd: f64,
    pub rocof: f64,
    pub persistence: u32,
}

impl Default for RuleParams {
    fn default() -> Self {
        RuleParams {
            sag_duration: 0.05,
            thd: 0.05,
            rocof: 0.3,
            persistence: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinFeature {
    SagDepth,
    SagDuration,
    Rocof,
    Thd,
    DfMag,
    Persistence,
}

impl BinFeature {
    fn read(self, fv: &FeatureVector) -> f64 {
        match self {
            BinFeature::SagDepth => fv.sag_depth,
            BinFeature::SagDuration => fv.sag_duration,
            BinFeature::Rocof => fv.rocof.abs(),
            BinFeature::Thd => fv.thd,
            BinFeature::DfMag => fv.df_mag,
            BinFeature::Persistence => fv.persistence as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub feature: BinFeature,
    /// Ascending edges; n edges make n + 1 bins. A value equal to an edge
    /// falls in the lower bin.
    pub edges: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub mode: PolicyMode,
    /// Bin key → action values in [Inhibit, Facilitate, Neutral] order.
    pub q_table: BTreeMap<String, [f64; 3]>,
    pub bins: Vec<BinSpec>,
    /// Bin key → [harmless, harmful] evidence counts.
    pub label_history: BTreeMap<String, [u32; 2]>,
    pub epsilon: f64,
    pub alpha_lr: f64,
    pub rng_seed: u64,
    /// Confidence below which decisions fall back to Neutral.
    pub c_min: f64,
    pub rule: RuleParams,
    /// Precursor thresholds, used to scale evidence strength.
    pub thresholds: Thresholds,
}

impl Default for PolicyState {
    fn default() -> Self {
        PolicyState::rule_based()
    }
}

pub fn default_bins() -> Vec<BinSpec> {
    vec![
        BinSpec {
            feature: BinFeature::SagDuration,
            edges: vec![0.05, 0.1, 0.15],
        },
        BinSpec {
            feature: BinFeature::Thd,
            edges: vec![0.02, 0.05, 0.08],
        },
    ]
}

impl PolicyState {
    pub fn rule_based() -> Self {
        PolicyState {
            mode: PolicyMode::RuleBased,
            q_table: BTreeMap::new(),
            bins: default_bins(),
            label_history: BTreeMap::new(),
            epsilon: 0.0,
            alpha_lr: 0.2,
            rng_seed: 0,
            c_min: 0.2,
            rule: RuleParams::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn learned(bins: Vec<BinSpec>, epsilon: f64, alpha_lr: f64, rng_seed: u64) -> Self {
        PolicyState {
            mode: PolicyMode::Learned,
            bins,
            epsilon,
            alpha_lr,
            rng_seed,
            ..PolicyState::rule_based()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(NmgError::InvalidParams("epsilon must lie in [0, 1]".into()));
        }
        if !(self.alpha_lr > 0.0 && self.alpha_lr <= 1.0) {
            return Err(NmgError::InvalidParams(
                "alpha_lr must lie in (0, 1]".into(),
            ));
        }
        if self.q_table.values().flatten().any(|q| !q.is_finite()) {
            return Err(NmgError::InvalidParams("non-finite q-value".into()));
        }
        for b in &self.bins {
            if b.edges.windows(2).any(|w| w[0] > w[1]) {
                return Err(NmgError::InvalidParams("bin edges must ascend".into()));
            }
        }
        Ok(())
    }

    pub fn bin_key(&self, fv: &FeatureVector) -> String {
        self.bins
            .iter()
            .map(|b| {
                let x = b.feature.read(fv);
                b.edges.iter().filter(|e| x > **e).count().to_string()
            })
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn q_values(&self, fv: &FeatureVector) -> [f64; 3] {
        self.q_table
            .get(&self.bin_key(fv))
            .copied()
            .unwrap_or([0.0; 3])
    }

    /// Greedy action for the features' bin.
    pub fn greedy(&self, fv: &FeatureVector) -> DecisionKind {
        argmax(&self.q_values(fv))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NmgError::Parse(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: PolicyState = serde_json::from_str(s).map_err(|e| NmgError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

fn argmax(q: &[f64; 3]) -> DecisionKind {
    let mut best = DecisionKind::Inhibit;
    for k in DecisionKind::ALL {
        if q[k.index()] > q[best.index()] {
            best = k;
        }
    }
    best
}

/// Strength of the precursor relative to the detection thresholds, in [0, 1].
fn evidence(fv: &FeatureVector, th: &Thresholds) -> f64 {
    [
        fv.sag_depth / th.sag_precursor,
        fv.thd / th.thd_precursor,
        fv.rocof.abs() / th.rocof_precursor,
        fv.df_mag / th.df_precursor,
    ]
    .into_iter()
    .fold(0.0, f64::max)
    .min(1.0)
}

pub fn classify(fv: &FeatureVector, policy: &PolicyState) -> (Label, f64) {
    match policy.mode {
        PolicyMode::RuleBased => classify_rule(fv, policy),
        PolicyMode::Learned => classify_learned(fv, policy),
    }
}

fn classify_rule(fv: &FeatureVector, policy: &PolicyState) -> (Label, f64) {
    let r = &policy.rule;
    let harmful = (fv.sag_duration > r.sag_duration && fv.thd > r.thd)
        || fv.rocof.abs() > r.rocof
        || fv.persistence >= r.persistence;
    // Signed distance to the boundary of each clause; the rule is an OR, so
    // the overall margin is the largest one.
    let sustained = (fv.sag_duration / r.sag_duration).min(fv.thd / r.thd) - 1.0;
    let ramp = fv.rocof.abs() / r.rocof - 1.0;
    let persist = fv.persistence as f64 / r.persistence.max(1) as f64 - 1.0;
    let margin = sustained.max(ramp).max(persist);
    let c = margin.abs().min(1.0) * evidence(fv, &policy.thresholds);
    let label = if harmful {
        Label::Harmful
    } else {
        Label::Harmless
    };
    (label, c.clamp(0.0, 1.0))
}

fn classify_learned(fv: &FeatureVector, policy: &PolicyState) -> (Label, f64) {
    let q = policy.q_values(fv);
    let label = match argmax(&q) {
        DecisionKind::Inhibit => Label::Harmless,
        DecisionKind::Facilitate => Label::Harmful,
        DecisionKind::Neutral => {
            let [harmless, harmful] = policy
                .label_history
                .get(&policy.bin_key(fv))
                .copied()
                .unwrap_or([0, 0]);
            if harmful > harmless {
                Label::Harmful
            } else {
                Label::Harmless
            }
        }
    };
    (label, softmax_gap(&q))
}

fn softmax_gap(q: &[f64; 3]) -> f64 {
    let top = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|x| x / z).collect();
    p.sort_by(|a, b| b.total_cmp(a));
    (p[0] - p[1]).clamp(0.0, 1.0)
}

/// Deterministic decision table.
pub fn decide(label: Label, c: f64, policy: &PolicyState, t: f64) -> SupervisoryDecision {
    let c = c.clamp(0.0, 1.0);
    if c < policy.c_min {
        return SupervisoryDecision::neutral(c, t);
    }
    let kind = match label {
        Label::Harmless => DecisionKind::Inhibit,
        Label::Harmful => DecisionKind::Facilitate,
    };
    SupervisoryDecision::with_kind(kind, c, t)
}

/// Policy plus the seeded generator used for exploration.
#[derive(Debug, Clone)]
pub struct Supervisor {
    pub policy: PolicyState,
    rng: ChaCha8Rng,
    explore: bool,
    forced: Option<DecisionKind>,
}

impl Supervisor {
    pub fn new(policy: PolicyState) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(policy.rng_seed);
        Supervisor {
            policy,
            rng,
            explore: false,
            forced: None,
        }
    }

    /// Enable epsilon-greedy substitution, seeded per episode.
    pub fn with_exploration(mut self, episode_seed: u64) -> Self {
        self.explore = true;
        self.rng = ChaCha8Rng::seed_from_u64(self.policy.rng_seed ^ episode_seed);
        self
    }

    /// Pin every decision to one kind (confidence still from the classifier).
    pub fn forced(mut self, kind: Option<DecisionKind>) -> Self {
        self.forced = kind;
        self
    }

    pub fn decide(&mut self, fv: &FeatureVector, t: f64) -> SupervisoryDecision {
        let (label, c) = classify(fv, &self.policy);
        if let Some(kind) = self.forced {
            return SupervisoryDecision::with_kind(kind, c.clamp(0.0, 1.0), t);
        }
        let d = decide(label, c, &self.policy, t);
        if self.explore
            && self.policy.mode == PolicyMode::Learned
            && self.rng.gen::<f64>() < self.policy.epsilon
        {
            let kind = DecisionKind::ALL[self.rng.gen_range(0..3)];
            return SupervisoryDecision::with_kind(kind, d.confidence, t);
        }
        d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_dev: f64,
    pub w_trip: f64,
    pub w_miss: f64,
    pub w_ess: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_dev: 1.0,
            w_trip: 2.0,
            w_miss: 5.0,
            w_ess: 0.1,
        }
    }
}

pub fn reward(kpis: &KpiReport, w: &RewardWeights) -> f64 {
    1.0 - w.w_dev * kpis.freq_dev_area
        - w.w_trip * kpis.false_trips as f64
        - w.w_miss * kpis.missed_faults as f64
        - w.w_ess * kpis.ess_stress
}

/// Episode outcome fed back to the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforcementOutcome {
    pub kpis: KpiReport,
    pub r: f64,
}

/// Single-step contextual-bandit update toward the observed reward.
pub fn update(
    policy: &mut PolicyState,
    fv: &FeatureVector,
    action: DecisionKind,
    r: f64,
) -> Result<()> {
    if policy.mode != PolicyMode::Learned {
        return Err(NmgError::UpdateInRuleMode);
    }
    if !r.is_finite() {
        return Err(NmgError::InvalidParams(format!("reward {r} not finite")));
    }
    let key = policy.bin_key(fv);
    let alpha = policy.alpha_lr;
    let q = policy.q_table.entry(key.clone()).or_insert([0.0; 3]);
    let slot = &mut q[action.index()];
    *slot += alpha * (r - *slot);

    let good = r >= 0.0;
    let label = match (action, good) {
        (DecisionKind::Inhibit, true) | (DecisionKind::Facilitate, false) => Some(0),
        (DecisionKind::Facilitate, true) | (DecisionKind::Inhibit, false) => Some(1),
        (DecisionKind::Neutral, _) => None,
    };
    if let Some(i) = label {
        policy.label_history.entry(key).or_insert([0, 0])[i] += 1;
    }
    Ok(())
}

/// Synthetic precursor stream whose harmfulness depends only on sag
/// duration. Outcomes of each action are scored through the same reward
/// the closed-loop runs use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableTask {
    /// Harmful iff sag_duration exceeds this (s).
    pub duration_boundary: f64,
    pub duration_range: (f64, f64),
    pub depth_range: (f64, f64),
    pub thd_range: (f64, f64),
    /// Sag depth at which an ungated reflex trips.
    pub reflex_trip_depth: f64,
}

impl Default for SeparableTask {
    fn default() -> Self {
        SeparableTask {
            duration_boundary: 0.1,
            duration_range: (0.02, 0.2),
            depth_range: (0.06, 0.2),
            thd_range: (0.0, 0.1),
            reflex_trip_depth: 0.075,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precursor {
    pub features: FeatureVector,
    pub harmful: bool,
}

impl SeparableTask {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Precursor {
        let u = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
        let features = FeatureVector {
            sag_depth: u(rng, self.depth_range),
            sag_duration: u(rng, self.duration_range),
            thd: u(rng, self.thd_range),
            ..FeatureVector::default()
        };
        Precursor {
            harmful: features.sag_duration > self.duration_boundary,
            features,
        }
    }

    /// Binning that resolves the decision boundary and nothing else.
    pub fn bins(&self) -> Vec<BinSpec> {
        let b = self.duration_boundary;
        vec![BinSpec {
            feature: BinFeature::SagDuration,
            edges: vec![0.5 * b, b, 1.5 * b],
        }]
    }

    pub fn dataset(&self, seed: u64, n: usize) -> Vec<Precursor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }

    /// Episode KPIs for taking `action` on `p`.
    pub fn outcome(&self, p: &Precursor, action: DecisionKind) -> KpiReport {
        let mut k = KpiReport::quiescent();
        match (p.harmful, action) {
            (true, DecisionKind::Facilitate) => {
                k.freq_dev_area = 0.01;
                k.ess_stress = 0.1;
            }
            (true, DecisionKind::Inhibit) => {
                k.missed_faults = 1;
                k.freq_dev_area = 0.05;
            }
            (true, DecisionKind::Neutral) => k.freq_dev_area = 0.05,
            (false, DecisionKind::Inhibit) => {}
            (false, DecisionKind::Facilitate) => {
                k.false_trips = 1;
                k.ess_stress = 0.1;
            }
            (false, DecisionKind::Neutral) => {
                if p.features.sag_depth >= self.reflex_trip_depth {
                    k.false_trips = 1;
                } else {
                    // Sub-trip reflex chatter still disturbs the bus.
                    k.freq_dev_area = 0.01;
                }
            }
        }
        k
    }

    /// Epsilon-greedy training; one decision per precursor.
    pub fn train(
        &self,
        policy: &mut PolicyState,
        seed: u64,
        episodes: usize,
        weights: &RewardWeights,
    ) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..episodes {
            let p = self.sample(&mut rng);
            let action = if rng.gen::<f64>() < policy.epsilon {
                DecisionKind::ALL[rng.gen_range(0..3)]
            } else {
                policy.greedy(&p.features)
            };
            let r = reward(&self.outcome(&p, action), weights);
            update(policy, &p.features, action, r)?;
        }
        Ok(())
    }

    /// Fraction of precursors where the greedy action matches the ground
    /// truth (Inhibit for harmless, Facilitate for harmful).
    pub fn accuracy(&self, policy: &PolicyState, held_out: &[Precursor]) -> f64 {
        if held_out.is_empty() {
            return 0.0;
        }
        let correct = held_out
            .iter()
            .filter(|p| {
                let want = if p.harmful {
                    DecisionKind::Facilitate
                } else {
                    DecisionKind::Inhibit
                };
                policy.greedy(&p.features) == want
            })
            .count();
        correct as f64 / held_out.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sag(depth: f64, duration: f64, thd: f64) -> FeatureVector {
        FeatureVector {
            sag_depth: depth,
            sag_duration: duration,
            thd,
            ..Default::default()
        }
    }

    #[test]
    fn rule_examples() {
        let p = PolicyState::rule_based();
        assert_eq!(classify(&sag(0.08, 0.04, 0.01), &p).0, Label::Harmless);
        assert_eq!(classify(&sag(0.08, 0.2, 0.08), &p).0, Label::Harmful);
        let (label, c) = classify(&FeatureVector::default(), &p);
        assert_eq!(label, Label::Harmless);
        assert_eq!(c, 0.0);
    }

    #[test]
    fn rule_persistence_and_rocof_clauses() {
        let p = PolicyState::rule_based();
        let persistent = FeatureVector {
            sag_depth: 0.06,
            persistence: 3,
            ..Default::default()
        };
        assert_eq!(classify(&persistent, &p).0, Label::Harmful);
        let ramp = FeatureVector {
            rocof: -0.4,
            ..Default::default()
        };
        assert_eq!(classify(&ramp, &p).0, Label::Harmful);
    }

    #[test]
    fn decision_table() {
        let p = PolicyState::rule_based();
        let d = decide(Label::Harmless, 0.9, &p, 0.0);
        assert_eq!(d.kind, DecisionKind::Inhibit);
        assert_eq!(d.i_mag, 0.9);
        let d = decide(Label::Harmful, 0.8, &p, 0.0);
        assert_eq!(d.kind, DecisionKind::Facilitate);
        assert_eq!(d.i_mag, 0.0);
        let d = decide(Label::Harmless, 0.1, &p, 0.0);
        assert_eq!(d.kind, DecisionKind::Neutral);
        assert_eq!(d.confidence, 0.1);
        assert_eq!(d.i_mag, 0.0);
    }

    #[test]
    fn reward_examples() {
        let w = RewardWeights::default();
        let mut k = KpiReport::quiescent();
        assert_eq!(reward(&k, &w), 1.0);
        k.false_trips = 1;
        assert_eq!(reward(&k, &w), -1.0);
        k.false_trips = 0;
        k.missed_faults = 1;
        assert_eq!(reward(&k, &w), -4.0);
    }

    #[test]
    fn update_examples() {
        let mut p = PolicyState::learned(default_bins(), 0.0, 0.5, 1);
        let fv = sag(0.1, 0.03, 0.0);
        update(&mut p, &fv, DecisionKind::Inhibit, 1.0).unwrap();
        assert_eq!(p.q_values(&fv)[0], 0.5);
        let mut prev = 0.5;
        for _ in 0..40 {
            update(&mut p, &fv, DecisionKind::Inhibit, 1.0).unwrap();
            let q = p.q_values(&fv)[0];
            assert!(q > prev && q <= 1.0);
            prev = q;
        }
        assert!((prev - 1.0).abs() < 1e-9);
        let before = p.q_values(&fv);
        update(&mut p, &fv, DecisionKind::Facilitate, before[1]).unwrap();
        assert_eq!(p.q_values(&fv), before);
    }

    #[test]
    fn update_rejected_in_rule_mode() {
        let mut p = PolicyState::rule_based();
        assert!(matches!(
            update(
                &mut p,
                &FeatureVector::default(),
                DecisionKind::Inhibit,
                1.0
            ),
            Err(NmgError::UpdateInRuleMode)
        ));
    }

    #[test]
    fn greedy_converges_within_q_gap_bound() {
        let alpha = 0.3;
        let mut p = PolicyState::learned(default_bins(), 0.0, alpha, 1);
        // Start from a policy that prefers Facilitate.
        let fv = sag(0.1, 0.03, 0.0);
        p.q_table.insert(p.bin_key(&fv), [0.0, 1.0, 0.5]);
        let bound = (0.01f64.ln() / (1.0 - alpha).ln()).ceil() as usize;
        let mut switched = None;
        for n in 1..=bound {
            for k in DecisionKind::ALL {
                let r = if k == DecisionKind::Inhibit {
                    1.0
                } else {
                    -1.0
                };
                update(&mut p, &fv, k, r).unwrap();
            }
            if p.greedy(&fv) == DecisionKind::Inhibit {
                switched = Some(n);
                break;
            }
        }
        assert!(switched.is_some(), "no switch within {bound} updates");
    }

    #[test]
    fn learned_classification_and_neutral_history() {
        let mut p = PolicyState::learned(default_bins(), 0.0, 0.5, 1);
        let fv = sag(0.1, 0.03, 0.0);
        let key = p.bin_key(&fv);
        p.q_table.insert(key.clone(), [0.0, 2.0, 0.0]);
        let (label, c) = classify(&fv, &p);
        assert_eq!(label, Label::Harmful);
        assert!(c > 0.5);
        p.q_table.insert(key.clone(), [0.0, 0.0, 1.0]);
        p.label_history.insert(key, [1, 4]);
        assert_eq!(classify(&fv, &p).0, Label::Harmful);
    }

    #[test]
    fn exploration_is_seeded() {
        let p = PolicyState::learned(default_bins(), 0.5, 0.5, 9);
        let fv = sag(0.1, 0.03, 0.0);
        let run = || {
            let mut s = Supervisor::new(p.clone()).with_exploration(3);
            (0..50)
                .map(|i| s.decide(&fv, i as f64).kind)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn policy_json_roundtrip() {
        let mut p = PolicyState::learned(default_bins(), 0.1, 0.2, 5);
        update(&mut p, &sag(0.1, 0.12, 0.06), DecisionKind::Facilitate, 0.9).unwrap();
        let back = PolicyState::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn bins_put_edge_values_low() {
        let p = PolicyState::learned(default_bins(), 0.0, 0.5, 1);
        assert_eq!(p.bin_key(&sag(0.1, 0.1, 0.0)), "1-0");
        assert_eq!(p.bin_key(&sag(0.1, 0.1001, 0.09)), "2-3");
    }
}
