//! Scenario descriptions, suite generators and the closed-loop orchestrator
//! that ties plant, telemetry, reflex, supervisor and gate together.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{BelController, BelParams, PiController, PiParams};
use crate::error::{NmgError, Result};
use crate::gate::{self, GateContext, GateFactor, GateParams};
use crate::plant::{
    self, ElementId, Injections, PlantParams, PlantState, ProtectionAction, SecondaryCommand,
};
use crate::reflex::{hard_override, Reflex, ReflexLimits};
use crate::report::{
    self, Event, EventKind, GroundTruth, HopRecord, InjectionTag, KpiConfig, KpiReport, StepRecord,
    Trace,
};
use crate::supervisor::{self, DecisionKind, PolicyState, RewardWeights, Supervisor};
use crate::telemetry::{self, FeatureExtractor, FeatureVector, Thresholds, WindowConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InjectionKind {
    /// Permanent change of bus demand.
    LoadStep { delta_p: f64 },
    /// Voltage dip, optionally with harmonic distortion riding on it.
    Sag {
        depth: f64,
        duration: f64,
        #[serde(default)]
        harmonics: Vec<Harmonic>,
    },
    HarmonicBurst {
        order: u32,
        amplitude: f64,
        duration: f64,
    },
    /// Stays in place until the faulted element's breaker opens.
    Fault { severity: f64, element: ElementId },
    /// Loss of the grid import, permanent.
    Islanding,
}

impl InjectionKind {
    pub fn tag(&self) -> InjectionTag {
        match self {
            InjectionKind::LoadStep { .. } => InjectionTag::LoadStep,
            InjectionKind::Sag { .. } => InjectionTag::Sag,
            InjectionKind::HarmonicBurst { .. } => InjectionTag::HarmonicBurst,
            InjectionKind::Fault { .. } => InjectionTag::Fault,
            InjectionKind::Islanding => InjectionTag::Islanding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioInjection {
    pub t_start: f64,
    pub kind: InjectionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairTruth {
    Benign,
    Harmful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepulsePulsePair {
    pub prepulse: ScenarioInjection,
    #[serde(default)]
    pub pulse: Option<ScenarioInjection>,
    #[serde(default)]
    pub delta_t: f64,
    pub ground_truth: PairTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimelineItem {
    Pair(PrepulsePulsePair),
    Single(ScenarioInjection),
}

impl TimelineItem {
    fn injections(&self) -> Vec<&ScenarioInjection> {
        match self {
            TimelineItem::Single(s) => vec![s],
            TimelineItem::Pair(p) => std::iter::once(&p.prepulse)
                .chain(p.pulse.as_ref())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "sg-nmg")]
    SgNmg,
    #[serde(rename = "bel")]
    Bel,
    #[serde(rename = "pi")]
    Pi,
    #[serde(rename = "droop-only")]
    DroopOnly,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::SgNmg,
        ControllerKind::Bel,
        ControllerKind::Pi,
        ControllerKind::DroopOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::SgNmg => "sg-nmg",
            ControllerKind::Bel => "bel",
            ControllerKind::Pi => "pi",
            ControllerKind::DroopOnly => "droop-only",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = NmgError;
    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| NmgError::Parse(format!("unknown controller {s:?}")))
    }
}

fn default_secondary_period() -> f64 {
    0.1
}

fn default_command_hold() -> f64 {
    1.2
}

fn default_controller() -> ControllerKind {
    ControllerKind::SgNmg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
    #[serde(default = "default_secondary_period")]
    pub secondary_period: f64,
    /// How long a gated secondary command stays in force without a fresh
    /// non-neutral decision (s).
    #[serde(default = "default_command_hold")]
    pub command_hold: f64,
    #[serde(default)]
    pub timeline: Vec<TimelineItem>,
    #[serde(default)]
    pub plant: PlantParams,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub reflex: ReflexLimits,
    #[serde(default)]
    pub gate: GateParams,
    #[serde(default)]
    pub pi: PiParams,
    #[serde(default)]
    pub bel: BelParams,
    #[serde(default)]
    pub kpi: KpiConfig,
}

impl ScenarioSpec {
    /// A quiet scenario with default parameters.
    pub fn new(name: &str, seed: u64, duration: f64) -> Self {
        ScenarioSpec {
            name: name.to_string(),
            seed,
            duration,
            controller: ControllerKind::SgNmg,
            secondary_period: default_secondary_period(),
            command_hold: default_command_hold(),
            timeline: Vec::new(),
            plant: PlantParams::default(),
            thresholds: Thresholds::default(),
            window: WindowConfig::default(),
            reflex: ReflexLimits::default(),
            gate: GateParams::default(),
            pi: PiParams::default(),
            bel: BelParams::default(),
            kpi: KpiConfig::default(),
        }
    }

    pub fn with_controller(mut self, controller: ControllerKind) -> Self {
        self.controller = controller;
        self
    }

    pub fn injections(&self) -> impl Iterator<Item = &ScenarioInjection> {
        self.timeline.iter().flat_map(|item| item.injections())
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let pairs: Vec<_> = self
            .timeline
            .iter()
            .filter_map(|i| match i {
                TimelineItem::Pair(p) => Some(p.ground_truth),
                TimelineItem::Single(_) => None,
            })
            .collect();
        if pairs.contains(&PairTruth::Harmful)
            || self
                .injections()
                .any(|s| matches!(s.kind, InjectionKind::Fault { .. }))
        {
            GroundTruth::Harmful
        } else if !pairs.is_empty() {
            GroundTruth::Benign
        } else {
            GroundTruth::Unlabeled
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NmgError::InvalidParams(format!("{}: {m}", self.name)));
        self.plant.validate()?;
        self.reflex.validate()?;
        self.gate.validate()?;
        if self.command_hold.is_nan() || self.command_hold < 0.0 {
            return bad(format!("command_hold {} must be >= 0", self.command_hold));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        let dt = self.plant.dt_sim;
        for (what, x) in [
            ("hop", self.window.hop),
            ("window", self.window.window),
            ("secondary_period", self.secondary_period),
        ] {
            let k = x / dt;
            if !(k >= 1.0 && (k - k.round()).abs() < 1e-6) {
                return bad(format!("{what} {x} is not a whole number of plant steps"));
            }
        }
        for inj in self.injections() {
            if !(inj.t_start >= 0.0 && inj.t_start < self.duration) {
                return bad(format!(
                    "injection at {} outside [0, duration)",
                    inj.t_start
                ));
            }
            match &inj.kind {
                InjectionKind::Fault { severity, element } => {
                    if *severity <= self.thresholds.sag_fault {
                        return bad(format!("fault severity {severity} is below fault level"));
                    }
                    if self.plant.element_index(*element).is_none() {
                        return bad(format!("unknown element {element}"));
                    }
                }
                InjectionKind::Sag {
                    depth, duration, ..
                } => {
                    if !(*depth >= 0.0 && *duration > 0.0) {
                        return bad("sag needs depth >= 0 and duration > 0".into());
                    }
                }
                InjectionKind::HarmonicBurst {
                    order, duration, ..
                } => {
                    if *order < 2 || *duration <= 0.0 {
                        return bad("harmonic burst needs order >= 2 and duration > 0".into());
                    }
                }
                InjectionKind::LoadStep { .. } | InjectionKind::Islanding => {}
            }
        }
        for item in &self.timeline {
            if let TimelineItem::Pair(p) = item {
                match (p.ground_truth, &p.pulse) {
                    (PairTruth::Benign, Some(_)) => {
                        return bad("benign pair carries a pulse".into())
                    }
                    (PairTruth::Harmful, None) => return bad("harmful pair has no pulse".into()),
                    (PairTruth::Harmful, Some(pulse)) => {
                        if p.delta_t <= 0.0
                            || (pulse.t_start - p.prepulse.t_start - p.delta_t).abs() > 1e-9
                        {
                            return bad("pulse must follow the prepulse by delta_t > 0".into());
                        }
                    }
                    (PairTruth::Benign, None) => {}
                }
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec =
            toml::from_str(text).map_err(|e| NmgError::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| NmgError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NmgError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| NmgError::io(path, e))
    }
}

/// Every `*.toml` scenario in a directory, sorted by file name.
pub fn load_suite(dir: &Path) -> Result<Vec<ScenarioSpec>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| NmgError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioSpec::load(p)).collect()
}

pub fn save_suite(specs: &[ScenarioSpec], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| NmgError::io(dir, e))?;
    for s in specs {
        s.save(&dir.join(format!("{}.toml", s.name)))?;
    }
    Ok(())
}

/// Length of benign scenarios (s).
pub const PPI_DURATION: f64 = 1.0;
/// Simulated time kept after a harmful pulse (s).
pub const PPF_TAIL: f64 = 1.0;
pub const DEFAULT_DELTA_T_RANGE: (f64, f64) = (0.6, 1.0);

/// Benign prepulses: short deep sags or short harmonic bursts, no pulse.
pub fn generate_ppi_suite(seed: u64, n: usize) -> Vec<ScenarioSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t_start = rng.gen_range(0.3..0.5);
            let kind = if rng.gen_bool(0.7) {
                InjectionKind::Sag {
                    depth: rng.gen_range(0.06..0.2),
                    duration: rng.gen_range(0.01..0.03),
                    harmonics: Vec::new(),
                }
            } else {
                InjectionKind::HarmonicBurst {
                    order: [3, 5, 7][rng.gen_range(0..3)],
                    amplitude: rng.gen_range(0.06..0.1),
                    duration: rng.gen_range(0.02..0.05),
                }
            };
            let mut spec =
                ScenarioSpec::new(&format!("ppi-{seed}-{i:03}"), seed ^ i as u64, PPI_DURATION);
            spec.timeline.push(TimelineItem::Pair(PrepulsePulsePair {
                prepulse: ScenarioInjection { t_start, kind },
                pulse: None,
                delta_t: 0.0,
                ground_truth: PairTruth::Benign,
            }));
            spec
        })
        .collect()
}

/// Harmful pairs: a long shallow sag with harmonic distortion, followed
/// `delta_t` later by a fault on the second DG.
pub fn generate_ppf_suite(
    seed: u64,
    n: usize,
    delta_t_range: (f64, f64),
) -> Result<Vec<ScenarioSpec>> {
    let (lo, hi) = delta_t_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(NmgError::EmptyRange { lo, hi });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..n)
        .map(|i| {
            let t_start = rng.gen_range(0.3..0.5);
            let delta_t = if lo == hi { lo } else { rng.gen_range(lo..hi) };
            let prepulse = ScenarioInjection {
                t_start,
                kind: InjectionKind::Sag {
                    depth: rng.gen_range(0.015..0.022),
                    duration: rng.gen_range(0.12..0.25_f64).min(0.8 * delta_t),
                    harmonics: vec![Harmonic {
                        order: 5,
                        amplitude: rng.gen_range(0.08..0.12),
                    }],
                },
            };
            let pulse = ScenarioInjection {
                t_start: t_start + delta_t,
                kind: InjectionKind::Fault {
                    severity: rng.gen_range(0.35..0.5),
                    element: ElementId::Dg(1),
                },
            };
            let mut spec = ScenarioSpec::new(
                &format!("ppf-{seed}-{i:03}"),
                seed ^ i as u64,
                pulse.t_start + PPF_TAIL,
            );
            spec.timeline.push(TimelineItem::Pair(PrepulsePulsePair {
                prepulse,
                pulse: Some(pulse),
                delta_t,
                ground_truth: PairTruth::Harmful,
            }));
            spec
        })
        .collect();
    Ok(specs)
}

/// Per-run overrides of the supervisory layer.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Policy used instead of the default rule-based one.
    pub policy: Option<PolicyState>,
    /// Enables epsilon-greedy exploration with this episode seed.
    pub explore_seed: Option<u64>,
    /// Pin every decision to one kind.
    pub forced: Option<DecisionKind>,
    /// Run SG-NMG with supervisor and gate removed (reflex only).
    pub disable_supervision: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub trace: Trace,
    /// Features and action of every supervisory decision, in order.
    pub decisions: Vec<(FeatureVector, DecisionKind)>,
}

#[derive(Debug, Clone)]
struct Scheduled {
    start: usize,
    /// Exclusive end step; None for events that persist.
    end: Option<usize>,
    kind: InjectionKind,
}

fn schedule(spec: &ScenarioSpec) -> Vec<Scheduled> {
    let dt = spec.plant.dt_sim;
    let steps = |x: f64| (x / dt).round() as usize;
    spec.injections()
        .map(|inj| {
            let start = steps(inj.t_start);
            let end = match &inj.kind {
                InjectionKind::Sag { duration, .. }
                | InjectionKind::HarmonicBurst { duration, .. } => {
                    Some(start + steps(*duration).max(1))
                }
                _ => None,
            };
            Scheduled {
                start,
                end,
                kind: inj.kind.clone(),
            }
        })
        .collect()
}

fn resolve(sched: &[Scheduled], k: usize, state: &PlantState, params: &PlantParams) -> Injections {
    let mut inj = Injections::none();
    for s in sched {
        if k < s.start || s.end.is_some_and(|e| k >= e) {
            continue;
        }
        match &s.kind {
            InjectionKind::LoadStep { delta_p } => inj.load_delta += delta_p,
            InjectionKind::Sag {
                depth, harmonics, ..
            } => {
                inj.sag_depth = inj.sag_depth.max(*depth);
                inj.harmonics
                    .extend(harmonics.iter().map(|h| (h.order, h.amplitude)));
            }
            InjectionKind::HarmonicBurst {
                order, amplitude, ..
            } => inj.harmonics.push((*order, *amplitude)),
            InjectionKind::Fault { severity, element } => {
                if state.is_closed(params, *element) {
                    inj.faults.push((*element, *severity));
                }
            }
            InjectionKind::Islanding => inj.gen_loss += params.islanding_import,
        }
    }
    inj
}

/// Ideal relay localization: a trip goes to the element carrying an
/// uncleared fault when there is one.
fn localize(action: ProtectionAction, inj: &Injections) -> ProtectionAction {
    match (&action, inj.faults.first()) {
        (ProtectionAction::Trip(_), Some((el, _))) => ProtectionAction::Trip(*el),
        _ => action,
    }
}

fn step_record(s: &PlantState) -> StepRecord {
    StepRecord {
        t: s.t,
        delta_f: s.delta_f,
        v: s.v,
        p_dg: s.p_dg.clone(),
        p_ess: s.p_ess,
        soc: s.soc,
        p_load: s.p_load,
        p_served: s.p_served,
        shed_fraction: s.shed_fraction,
        breaker_closed: s.breaker_closed.clone(),
        prearm: s.prearm,
    }
}

/// Run one scenario with default options.
pub fn run(spec: &ScenarioSpec) -> Result<Trace> {
    Ok(run_with(spec, &RunOptions::default())?.trace)
}

pub fn run_with(spec: &ScenarioSpec, opts: &RunOptions) -> Result<RunOutput> {
    simulate(spec, opts, None)
}

/// One BEL episode that keeps learning in the supplied controller.
pub fn run_bel_episode(spec: &ScenarioSpec, bel: &mut BelController) -> Result<Trace> {
    let spec = spec.clone().with_controller(ControllerKind::Bel);
    Ok(simulate(&spec, &RunOptions::default(), Some(bel))?.trace)
}

fn simulate(
    spec: &ScenarioSpec,
    opts: &RunOptions,
    bel: Option<&mut BelController>,
) -> Result<RunOutput> {
    spec.validate()?;
    let params = &spec.plant;
    let dt = params.dt_sim;
    let n_steps = (spec.duration / dt).round() as usize;
    let hop_steps = (spec.window.hop / dt).round() as usize;
    let sec_steps = (spec.secondary_period / dt).round() as usize;
    let sched = schedule(spec);

    let mut state = PlantState::initial(params);
    let mut cmd = SecondaryCommand::neutral();
    let mut extractor = FeatureExtractor::new(
        &spec.window,
        &spec.thresholds,
        params,
        spec.window.hops_per_window(),
    );
    let mut reflex = Reflex::new(spec.reflex.clone());
    let supervising = spec.controller == ControllerKind::SgNmg && !opts.disable_supervision;
    let policy = opts.policy.clone().unwrap_or_else(|| PolicyState {
        thresholds: spec.thresholds.clone(),
        ..PolicyState::rule_based()
    });
    let mut sup = Supervisor::new(policy).forced(opts.forced);
    if let Some(seed) = opts.explore_seed {
        sup = sup.with_exploration(seed);
    }
    let window_steps = (spec.window.window / dt).round() as usize;
    let hold_steps = (spec.command_hold / dt).round() as usize;
    // Strongest non-neutral response since the last secondary tick.
    let mut pending: Option<gate::GatedResponse> = None;
    let mut cmd_expires = 0usize;
    let mut blocked_until = 0usize;
    let mut pi = PiController::new(&spec.pi);
    let mut own_bel;
    let bel = match bel {
        Some(b) => b,
        None => {
            own_bel = BelController::new(&spec.bel);
            &mut own_bel
        }
    };

    let mut trace = Trace {
        elements: params.elements().iter().map(|e| e.to_string()).collect(),
        steps: Vec::with_capacity(n_steps),
        hops: Vec::with_capacity(n_steps / hop_steps + 1),
        events: Vec::new(),
    };
    let mut decisions = Vec::new();

    for k in 0..n_steps {
        let inj = resolve(&sched, k, &state, params);
        for s in sched.iter().filter(|s| s.start == k) {
            trace.events.push(Event {
                step: k,
                kind: EventKind::Injection(s.kind.tag()),
            });
        }
        state = plant::step(&state, params, &cmd, &inj)?;
        extractor.push(telemetry::sample(&state, &inj, params, &spec.window));

        if (k + 1) % hop_steps == 0 && extractor.is_full() {
            let t = state.t;
            let fv = extractor.extract()?;
            let event = telemetry::detect_event(&fv, &spec.thresholds, t);
            if let Some(ev) = &event {
                extractor.mark_precursor(t);
                trace.events.push(Event {
                    step: k,
                    kind: EventKind::Detection(ev.kind),
                });
            }
            let drive = reflex.evaluate(&fv, &cmd, t);
            let mut hop = HopRecord {
                step: k,
                features: fv,
                a: drive.a,
                criteria: drive.criteria_fired.clone(),
                decision: None,
                c: 0.0,
                i_mag: 0.0,
                g: 1.0,
                s_out: drive.a,
            };
            if supervising && event.is_some() {
                let d = sup.decide(&fv, t);
                let ctx = GateContext {
                    persistence: fv.persistence,
                    t_since_precursor: fv.t_since_precursor,
                };
                let g: GateFactor = gate::gating_factor(&d, &ctx, &spec.gate);
                let resp = gate::gate(&drive, &d, &g, spec.window.hop)?;
                hop.decision = Some(d.kind);
                hop.c = d.confidence;
                hop.i_mag = d.i_mag;
                hop.g = g.g;
                hop.s_out = resp.s_out;
                decisions.push((fv, d.kind));
                if resp.g.rationale_kind != gate::GateKind::Neutral
                    && pending.as_ref().is_none_or(|p| stronger(&resp, p))
                {
                    pending = Some(resp);
                }
            }

            let act_threshold = spec.reflex.act_threshold * if state.prearm { 0.5 } else { 1.0 };
            let action = if let Some(a) = hard_override(&fv, &spec.reflex) {
                Some((localize(a, &inj), true))
            } else if drive.proposed != ProtectionAction::None
                && hop.s_out >= act_threshold
                && k >= blocked_until
            {
                Some((localize(drive.proposed, &inj), false))
            } else {
                None
            };
            if let Some((a, hard)) = action {
                let act = plant::apply_protection(&state, &a, params)?;
                state = act.state;
                if a.interrupts_load() {
                    // The window still describes the system before the
                    // operation until it has fully refreshed.
                    blocked_until = k + window_steps;
                }
                if act.effective {
                    trace.events.push(Event {
                        step: k,
                        kind: if hard {
                            EventKind::HardOverride(a)
                        } else {
                            EventKind::Action(a)
                        },
                    });
                }
                reflex.rearm(&drive.criteria_fired);
            }
            trace.hops.push(hop);
        }

        if (k + 1) % sec_steps == 0 {
            match spec.controller {
                ControllerKind::SgNmg => {
                    if let Some(resp) = pending.take() {
                        cmd = gate::synthesize_commands(&resp, &spec.gate, params.ess.p_max);
                        cmd_expires = k + 1 + hold_steps;
                    } else if k + 1 >= cmd_expires {
                        cmd = SecondaryCommand::neutral();
                    }
                }
                ControllerKind::Pi => cmd = pi.command(state.delta_f, spec.secondary_period),
                ControllerKind::Bel => cmd = bel.command(state.delta_f, spec.secondary_period),
                ControllerKind::DroopOnly => {}
            }
            extractor.set_v_ref(params.v0 + cmd.dv_offset);
        }
        trace.steps.push(step_record(&state));
    }
    Ok(RunOutput { trace, decisions })
}

fn stronger(a: &gate::GatedResponse, b: &gate::GatedResponse) -> bool {
    let key = |r: &gate::GatedResponse| (r.s_out, (r.g.g - 1.0).abs());
    key(a) > key(b)
}

/// KPI settings consistent with the scenario's plant and thresholds.
pub fn kpi_config(spec: &ScenarioSpec) -> KpiConfig {
    KpiConfig {
        dt: spec.plant.dt_sim,
        rocof_limit: spec.thresholds.rocof_limit,
        ..spec.kpi
    }
}

pub fn kpis(spec: &ScenarioSpec, trace: &Trace) -> Result<KpiReport> {
    report::compute_kpis(trace, spec.ground_truth(), &kpi_config(spec))
}

fn pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| NmgError::InvalidParams(format!("thread pool: {e}")))
}

/// Run every scenario; output order follows input order whatever the
/// parallelism.
pub fn run_batch(
    specs: &[ScenarioSpec],
    opts: &RunOptions,
    parallelism: usize,
) -> Result<Vec<RunOutput>> {
    if parallelism <= 1 {
        return specs.iter().map(|s| run_with(s, opts)).collect();
    }
    pool(parallelism)?.install(|| specs.par_iter().map(|s| run_with(s, opts)).collect())
}

/// Run a suite under one controller and collect per-scenario KPIs.
pub fn evaluate_suite(
    specs: &[ScenarioSpec],
    controller: ControllerKind,
    opts: &RunOptions,
    parallelism: usize,
) -> Result<report::ControllerReports> {
    let specs: Vec<_> = specs
        .iter()
        .map(|s| s.clone().with_controller(controller))
        .collect();
    let outputs = run_batch(&specs, opts, parallelism)?;
    let reports = specs
        .iter()
        .zip(&outputs)
        .map(|(s, o)| Ok((s.name.clone(), kpis(s, &o.trace)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(report::ControllerReports {
        controller: controller.name().to_string(),
        reports,
    })
}

/// Closed-loop bandit training: each episode runs one scenario with
/// exploration, scores it, and credits every distinct (bin, action) pair
/// that occurred with the episode reward. Returns per-episode rewards.
pub fn train_policy(
    specs: &[ScenarioSpec],
    policy: &mut PolicyState,
    episodes: usize,
    seed: u64,
    weights: &RewardWeights,
) -> Result<Vec<f64>> {
    if specs.is_empty() {
        return Err(NmgError::InvalidParams("no scenarios to train on".into()));
    }
    let mut rewards = Vec::with_capacity(episodes);
    for e in 0..episodes {
        let spec = specs[e % specs.len()]
            .clone()
            .with_controller(ControllerKind::SgNmg);
        let opts = RunOptions {
            policy: Some(policy.clone()),
            explore_seed: Some(seed.wrapping_add(e as u64)),
            ..RunOptions::default()
        };
        let out = run_with(&spec, &opts)?;
        let r = supervisor::reward(&kpis(&spec, &out.trace)?, weights);
        let mut seen = std::collections::BTreeSet::new();
        for (fv, action) in &out.decisions {
            if seen.insert((policy.bin_key(fv), action.index())) {
                supervisor::update(policy, fv, *action, r)?;
            }
        }
        rewards.push(r);
    }
    Ok(rewards)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelEpisode {
    pub freq_dev_area: f64,
    pub delta_f_end: f64,
    pub v_w: Vec<f64>,
    /// Smallest change of any amygdala weight over the episode's updates.
    pub min_vw_step: f64,
}

/// Repeated BEL episodes on one scenario. The reward held during an
/// episode is `1 - |Δf|` at the end of the previous one.
pub fn run_bel_episodes(spec: &ScenarioSpec, episodes: usize) -> Result<Vec<BelEpisode>> {
    let mut bel = BelController::new(&spec.bel);
    let mut rew = 1.0;
    let mut log = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        bel.begin_episode(rew);
        let trace = run_bel_episode(spec, &mut bel)?;
        let k = kpis(spec, &trace)?;
        let delta_f_end = trace.steps.last().map(|s| s.delta_f).unwrap_or(0.0);
        rew = 1.0 - delta_f_end.abs();
        log.push(BelEpisode {
            freq_dev_area: k.freq_dev_area,
            delta_f_end,
            v_w: bel.state.v_w.clone(),
            min_vw_step: bel.min_vw_step,
        });
    }
    Ok(log)
}
