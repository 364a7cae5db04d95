//! Comparison controllers for the secondary layer: a brain-emotional-learning
//! (BEL) controller and a plain PI frequency restorer. Both act through
//! `df_offset`, the same path the gate uses.

use serde::{Deserialize, Serialize};

use crate::plant::SecondaryCommand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelState {
    /// Amygdala weights, one per stimulus channel.
    pub v_w: Vec<f64>,
    /// Thalamic shortcut weight on the strongest stimulus.
    pub v_th: f64,
    /// Orbitofrontal weights.
    pub w_o: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
}

impl BelState {
    pub fn zeros(channels: usize, alpha: f64, beta: f64) -> Self {
        BelState {
            v_w: vec![0.0; channels],
            v_th: 0.0,
            w_o: vec![0.0; channels],
            alpha,
            beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BelInput {
    pub s: Vec<f64>,
    pub rew: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BelOutput {
    /// Amygdala (excitatory) output.
    pub a_out: f64,
    /// Orbitofrontal (inhibitory) output.
    pub o_out: f64,
    pub e: f64,
}

pub fn bel_output(state: &BelState, input: &BelInput) -> BelOutput {
    let s_max = input.s.iter().copied().fold(0.0, f64::max);
    let a_out = dot(&state.v_w, &input.s) + state.v_th * s_max;
    let o_out = dot(&state.w_o, &input.s);
    BelOutput {
        a_out,
        o_out,
        e: a_out - o_out,
    }
}

/// Amygdala learns only when it under-predicts the reward; the
/// orbitofrontal path learns from the output error in both directions.
pub fn bel_update(state: &BelState, input: &BelInput, a_out: f64, e_out: f64) -> BelState {
    let under = (input.rew - a_out).max(0.0);
    let err = e_out - input.rew;
    let mut next = state.clone();
    for (i, s) in input.s.iter().enumerate() {
        next.v_w[i] += state.alpha * s * under;
        next.w_o[i] += state.beta * s * err;
    }
    next
}

fn dot(w: &[f64], s: &[f64]) -> f64 {
    w.iter().zip(s).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiState {
    pub kp: f64,
    pub ki: f64,
    pub integ: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl PiState {
    pub fn new(kp: f64, ki: f64, out_min: f64, out_max: f64) -> Self {
        PiState {
            kp,
            ki,
            integ: 0.0,
            out_min,
            out_max,
        }
    }
}

/// PI step with clamping anti-windup: the integrator stops when the output
/// saturates in the direction the error is pushing.
pub fn pi_step(state: &PiState, error: f64, dt: f64) -> (f64, PiState) {
    let mut integ = (state.integ + state.ki * error * dt).clamp(state.out_min, state.out_max);
    let raw = state.kp * error + integ;
    if (raw > state.out_max && error > 0.0) || (raw < state.out_min && error < 0.0) {
        integ = state.integ.clamp(state.out_min, state.out_max);
    }
    let u = (state.kp * error + integ).clamp(state.out_min, state.out_max);
    (
        u,
        PiState {
            integ,
            ..state.clone()
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PiParams {
    pub kp: f64,
    pub ki: f64,
    /// Output bound on df_offset (pu).
    pub limit: f64,
}

impl Default for PiParams {
    fn default() -> Self {
        PiParams {
            kp: 0.2,
            ki: 1.0,
            limit: 0.05,
        }
    }
}

/// PI restorer closing the loop on frequency deviation.
#[derive(Debug, Clone)]
pub struct PiController {
    state: PiState,
}

impl PiController {
    pub fn new(p: &PiParams) -> Self {
        PiController {
            state: PiState::new(p.kp, p.ki, -p.limit, p.limit),
        }
    }

    pub fn command(&mut self, delta_f: f64, dt: f64) -> SecondaryCommand {
        let (u, next) = pi_step(&self.state, -delta_f, dt);
        self.state = next;
        SecondaryCommand {
            df_offset: u,
            ..SecondaryCommand::neutral()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BelParams {
    pub alpha: f64,
    pub beta: f64,
    /// df_offset per unit of emotional output.
    pub k_out: f64,
    /// Clip on the integral stimulus (pu·s).
    pub integral_clip: f64,
}

impl Default for BelParams {
    fn default() -> Self {
        BelParams {
            alpha: 0.2,
            beta: 0.05,
            k_out: 0.003,
            integral_clip: 0.05,
        }
    }
}

/// BEL secondary controller. Weights persist across episodes; the reward
/// is fixed for the duration of an episode.
#[derive(Debug, Clone)]
pub struct BelController {
    pub state: BelState,
    params: BelParams,
    integral: f64,
    rew: f64,
    /// Smallest per-update change of any amygdala weight this episode.
    pub min_vw_step: f64,
}

impl BelController {
    pub fn new(params: &BelParams) -> Self {
        BelController {
            state: BelState::zeros(2, params.alpha, params.beta),
            params: params.clone(),
            integral: 0.0,
            rew: 1.0,
            min_vw_step: f64::INFINITY,
        }
    }

    /// Reset per-episode signals, keeping learned weights.
    pub fn begin_episode(&mut self, rew: f64) {
        self.integral = 0.0;
        self.rew = rew;
        self.min_vw_step = f64::INFINITY;
    }

    pub fn command(&mut self, delta_f: f64, dt: f64) -> SecondaryCommand {
        let clip = self.params.integral_clip;
        self.integral = (self.integral + delta_f * dt).clamp(-clip, clip);
        let input = BelInput {
            s: vec![delta_f.abs(), self.integral.abs()],
            rew: self.rew,
        };
        let out = bel_output(&self.state, &input);
        let next = bel_update(&self.state, &input, out.a_out, out.e);
        for (new, old) in next.v_w.iter().zip(&self.state.v_w) {
            self.min_vw_step = self.min_vw_step.min(new - old);
        }
        self.state = next;
        // Stimuli are magnitudes; the sign of the accumulated error picks
        // the correction direction.
        let sign = if self.integral != 0.0 {
            -self.integral.signum()
        } else {
            -delta_f.signum()
        };
        let sign = if sign.is_nan() { 0.0 } else { sign };
        SecondaryCommand {
            df_offset: self.params.k_out * out.e * sign,
            ..SecondaryCommand::neutral()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bel_output_examples() {
        let zero = BelState::zeros(2, 0.1, 0.1);
        let inp = BelInput {
            s: vec![0.2, 0.3],
            rew: 1.0,
        };
        assert_eq!(bel_output(&zero, &inp).e, 0.0);

        let st = BelState {
            v_w: vec![1.0, 0.0],
            v_th: 0.0,
            w_o: vec![0.5, 0.0],
            alpha: 0.1,
            beta: 0.1,
        };
        let e = bel_output(
            &st,
            &BelInput {
                s: vec![0.2, 0.0],
                rew: 0.0,
            },
        )
        .e;
        assert!((e - 0.1).abs() < 1e-12);

        let sym = BelState {
            v_w: vec![0.7, 1.3],
            v_th: 0.0,
            w_o: vec![0.7, 1.3],
            alpha: 0.1,
            beta: 0.1,
        };
        for s in [[0.0, 0.0], [0.4, 0.1], [3.0, 2.0]] {
            let inp = BelInput {
                s: s.to_vec(),
                rew: 0.0,
            };
            assert_eq!(bel_output(&sym, &inp).e, 0.0);
        }
    }

    #[test]
    fn thalamic_shortcut_uses_max_stimulus() {
        let st = BelState {
            v_th: 2.0,
            ..BelState::zeros(2, 0.1, 0.1)
        };
        let out = bel_output(
            &st,
            &BelInput {
                s: vec![0.1, 0.4],
                rew: 0.0,
            },
        );
        assert!((out.a_out - 0.8).abs() < 1e-12);
    }

    #[test]
    fn bel_update_examples() {
        let st = BelState::zeros(1, 0.1, 0.1);
        let over = BelInput {
            s: vec![1.0],
            rew: 0.5,
        };
        assert_eq!(bel_update(&st, &over, 0.8, 0.8).v_w, vec![0.0]);
        let under = BelInput {
            s: vec![1.0],
            rew: 1.0,
        };
        let next = bel_update(&st, &under, 0.0, 0.0);
        assert!((next.v_w[0] - 0.1).abs() < 1e-12);
        let exact = bel_update(&st, &under, 0.3, 1.0);
        assert_eq!(exact.w_o, vec![0.0]);
    }

    #[test]
    fn pi_examples() {
        let st = PiState::new(1.0, 0.0, -1.0, 1.0);
        assert_eq!(pi_step(&st, 0.0, 0.1).0, 0.0);
        assert_eq!(pi_step(&st, 0.5, 0.1).0, 0.5);
    }

    #[test]
    fn pi_integrator_freezes_at_limit() {
        // ki = 1, e = 1, dt = 0.1 → integ climbs 0.1 per step to 0.5.
        let mut st = PiState::new(0.0, 1.0, -0.5, 0.5);
        let mut outs = Vec::new();
        for _ in 0..10 {
            let (u, next) = pi_step(&st, 1.0, 0.1);
            outs.push(u);
            st = next;
        }
        for (k, u) in outs.iter().enumerate().take(5) {
            assert!((u - 0.1 * (k + 1) as f64).abs() < 1e-12);
        }
        assert!(outs[5..].iter().all(|u| *u == 0.5));
        assert_eq!(st.integ, 0.5);
    }

    #[test]
    fn pi_antiwindup_with_proportional_saturation() {
        let mut st = PiState::new(2.0, 1.0, -0.5, 0.5);
        for _ in 0..100 {
            st = pi_step(&st, 1.0, 0.1).1;
        }
        // Output pinned by kp·e alone; integrator must not have wound up.
        assert_eq!(st.integ, 0.0);
        let (u, _) = pi_step(&st, -0.1, 0.1);
        assert!(u < 0.0);
    }
}
