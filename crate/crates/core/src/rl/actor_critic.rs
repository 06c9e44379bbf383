//! Deterministic-policy actor-critic over the pretrained policy network.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::replay::{Experience, ACTION_DIM};
use super::RlError;
use crate::features::{encode, DecisionLabel, ObservedState, FEATURE_DIM};
use crate::market::{BuyerPolicy, DecisionView};
use crate::neural::mlp::{max_relative_error, Adam, Dropout, Mlp};
use crate::neural::{PolicyNetwork, PolicyOutput};
use crate::protocol::{ActionKind, ActionSet, NegotiationAction};
use crate::SimRng;

pub const CRITIC_INPUT: usize = FEATURE_DIM + ACTION_DIM;
pub const DEFAULT_CRITIC_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    /// Standard deviation of the Gaussian noise added to the unit offer.
    pub noise_scale: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub critic_hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Buyer decisions between gradient updates.
    pub update_every: usize,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            noise_scale: 0.1,
            actor_lr: 1e-4,
            critic_lr: 1e-3,
            critic_hidden: DEFAULT_CRITIC_HIDDEN.to_vec(),
            buffer_capacity: 100_000,
            batch_size: 64,
            update_every: 1,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::InvalidConfig(m.to_string()));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.critic_hidden.contains(&0) {
            return bad("critic layers must be non-empty");
        }
        if self.batch_size == 0 || self.batch_size >= self.buffer_capacity {
            return bad("batch size must satisfy 0 < K < N");
        }
        if self.update_every == 0 {
            return bad("update_every must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectMode {
    Explore,
    Exploit,
}

/// One-hot decision followed by the unit offer (zero unless countering).
pub fn encode_action(label: DecisionLabel, offer_unit: f64) -> [f64; ACTION_DIM] {
    let mut a = [0.0; ACTION_DIM];
    a[label.index()] = 1.0;
    if label == DecisionLabel::CounterOffer {
        a[DecisionLabel::COUNT] = offer_unit;
    }
    a
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy decision in head order among `legal`; Exit when none is legal.
pub fn masked_argmax(logits: &[f64; DecisionLabel::COUNT], legal: ActionSet) -> DecisionLabel {
    let mut best: Option<DecisionLabel> = None;
    for i in 0..DecisionLabel::COUNT {
        let label = DecisionLabel::from_index(i).expect("index in range");
        if !legal.contains(label.action_kind()) {
            continue;
        }
        if best.is_none_or(|b| logits[i] > logits[b.index()]) {
            best = Some(label);
        }
    }
    best.unwrap_or(DecisionLabel::Exit)
}

/// An action chosen by the actor together with its critic encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct Selected {
    pub action: NegotiationAction,
    pub label: DecisionLabel,
    pub offer_unit: f64,
    pub encoded: [f64; ACTION_DIM],
}

/// Masked greedy decision of `actor`, with Gaussian noise of scale `noise`
/// on the unit offer.
pub fn select_with(
    actor: &PolicyNetwork,
    state: &ObservedState,
    features: &[f64; FEATURE_DIM],
    legal: ActionSet,
    noise: f64,
    rng: &mut SimRng,
) -> Result<Selected, RlError> {
    let out = actor.eval(features)?;
    let label = masked_argmax(&out.logits, legal);
    let mut unit = out.offer_unit;
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).map_err(|e| RlError::InvalidConfig(e.to_string()))?;
        unit = (unit + dist.sample(rng)).clamp(0.0, 1.0);
    }
    let action = match label {
        DecisionLabel::CounterOffer => {
            let price = state.ip_b + unit * (state.rp_b - state.ip_b);
            NegotiationAction::offer(price).map_err(|e| RlError::InvalidConfig(e.to_string()))?
        }
        other => NegotiationAction::simple(other.action_kind()),
    };
    Ok(Selected {
        action,
        label,
        offer_unit: unit,
        encoded: encode_action(label, unit),
    })
}

/// Buyer that follows a fixed policy network greedily.
#[derive(Debug, Clone)]
pub struct NetworkBuyer<'a> {
    pub actor: &'a PolicyNetwork,
}

impl BuyerPolicy for NetworkBuyer<'_> {
    fn decide(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> NegotiationAction {
        let features = encode(&view.observed);
        select_with(self.actor, &view.observed, &features, view.legal, 0.0, rng)
            .map(|s| s.action)
            .unwrap_or(NegotiationAction::simple(ActionKind::Exit))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean critic value of the actor's own actions before its step.
    pub actor_objective: f64,
}

#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub actor: PolicyNetwork,
    pub critic: Mlp,
    pub actor_target: PolicyNetwork,
    pub critic_target: Mlp,
    pub config: DdpgConfig,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl ActorCritic {
    pub fn new(actor: PolicyNetwork, config: DdpgConfig, rng: &mut SimRng) -> Result<Self, RlError> {
        config.validate()?;
        let mut sizes = vec![CRITIC_INPUT];
        sizes.extend_from_slice(&config.critic_hidden);
        sizes.push(1);
        let critic = Mlp::new(&sizes, rng);
        Self::from_parts(actor, critic, config)
    }

    /// Builds from existing networks; targets start as copies.
    pub fn from_parts(actor: PolicyNetwork, critic: Mlp, config: DdpgConfig) -> Result<Self, RlError> {
        config.validate()?;
        if critic.input_dim() != CRITIC_INPUT || critic.output_dim() != 1 {
            return Err(RlError::InvalidConfig(format!(
                "critic must map {CRITIC_INPUT} inputs to one value"
            )));
        }
        Ok(Self {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: Adam::new(actor.mlp.params().len(), config.actor_lr),
            critic_opt: Adam::new(critic.params().len(), config.critic_lr),
            actor,
            critic,
            config,
        })
    }

    pub fn select_action(
        &self,
        state: &ObservedState,
        features: &[f64; FEATURE_DIM],
        legal: ActionSet,
        mode: SelectMode,
        rng: &mut SimRng,
    ) -> Result<Selected, RlError> {
        let noise = match mode {
            SelectMode::Explore => self.config.noise_scale,
            SelectMode::Exploit => 0.0,
        };
        select_with(&self.actor, state, features, legal, noise, rng)
    }

    fn q(critic: &Mlp, state: &[f64], action: &[f64]) -> Result<f64, RlError> {
        let mut x = state.to_vec();
        x.extend_from_slice(action);
        Ok(critic.eval(&x)?[0])
    }

    fn greedy_encoding(out: &PolicyOutput) -> [f64; ACTION_DIM] {
        let label = DecisionLabel::from_index(argmax(&out.logits)).expect("index in range");
        encode_action(label, out.offer_unit)
    }

    /// TD targets `r + gamma * (1 - terminal) * Q'(s', mu'(s'))`.
    pub fn targets(&self, batch: &[&Experience]) -> Result<Vec<f64>, RlError> {
        batch
            .iter()
            .map(|e| {
                if e.terminal || self.config.gamma == 0.0 {
                    return Ok(e.reward);
                }
                let next = self.actor_target.eval(&e.next_state)?;
                let q = Self::q(&self.critic_target, &e.next_state, &Self::greedy_encoding(&next))?;
                Ok(e.reward + self.config.gamma * q)
            })
            .collect()
    }

    /// Mean squared TD error and its gradient over the critic parameters.
    pub fn critic_loss_and_grad(
        &self,
        batch: &[&Experience],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), RlError> {
        let mut grads = vec![0.0; self.critic.params().len()];
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (e, y) in batch.iter().zip(targets) {
            let mut x = e.state.to_vec();
            x.extend_from_slice(&e.action);
            let (q, tape) = self.critic.forward(&x, Dropout::Off)?;
            let err = q[0] - y;
            loss += err * err / n;
            self.critic.backward(&tape, &[2.0 * err / n], &mut grads);
        }
        Ok((loss, grads))
    }

    /// Mean critic value of the actor's greedy actions and the gradient of
    /// its negation over the actor parameters. The discrete part passes
    /// through as softmax probabilities.
    pub fn actor_objective_and_grad(&self, batch: &[&Experience]) -> Result<(f64, Vec<f64>), RlError> {
        let mut grads = vec![0.0; self.actor.mlp.params().len()];
        let mut scratch = vec![0.0; self.critic.params().len()];
        let n = batch.len() as f64;
        let mut objective = 0.0;
        for e in batch {
            let (out, tape) = self.actor.forward_taped(&e.state, Dropout::Off)?;
            let mut x = e.state.to_vec();
            x.extend_from_slice(&Self::greedy_encoding(&out));
            let (q, ctape) = self.critic.forward(&x, Dropout::Off)?;
            objective += q[0] / n;
            let dx = self.critic.backward(&ctape, &[-1.0 / n], &mut scratch);
            let da = &dx[FEATURE_DIM..];
            let p = &out.probs;
            let dot: f64 = (0..DecisionLabel::COUNT).map(|i| da[i] * p[i]).sum();
            let d_logits: Vec<f64> = (0..DecisionLabel::COUNT).map(|i| p[i] * (da[i] - dot)).collect();
            let u = out.offer_unit;
            let d_pre = da[DecisionLabel::COUNT] * u * (1.0 - u);
            self.actor.backward(&tape, &d_logits, d_pre, &mut grads);
        }
        Ok((objective, grads))
    }

    /// One critic step, one actor step, then soft target updates.
    pub fn update(&mut self, batch: &[&Experience]) -> Result<UpdateStats, RlError> {
        if batch.is_empty() {
            return Err(RlError::EmptyBatch);
        }
        let targets = self.targets(batch)?;
        let (critic_loss, cg) = self.critic_loss_and_grad(batch, &targets)?;
        self.critic_opt.step(self.critic.params_mut(), &cg);
        let (actor_objective, ag) = self.actor_objective_and_grad(batch)?;
        self.actor_opt.step(self.actor.mlp.params_mut(), &ag);
        self.soft_update();
        Ok(UpdateStats {
            critic_loss,
            actor_objective,
        })
    }

    pub fn soft_update(&mut self) {
        let tau = self.config.tau;
        self.actor_target.mlp.soft_update_from(&self.actor.mlp, tau);
        self.critic_target.soft_update_from(&self.critic, tau);
    }
}

/// Largest relative error of the analytic critic gradient against central
/// differences over `samples` random parameters.
pub fn critic_gradient_check(
    ac: &ActorCritic,
    batch: &[&Experience],
    samples: usize,
    rng: &mut SimRng,
) -> Result<f64, RlError> {
    let targets = ac.targets(batch)?;
    let (_, grads) = ac.critic_loss_and_grad(batch, &targets)?;
    let n = grads.len();
    let which: Vec<usize> = (0..samples.min(n)).map(|_| rng.random_range(0..n)).collect();
    let mut probe = ac.clone();
    let mut params = ac.critic.params().to_vec();
    Ok(max_relative_error(&mut params, &grads, &which, 1e-5, |p| {
        probe.critic.params_mut().copy_from_slice(p);
        probe
            .critic_loss_and_grad(batch, &targets)
            .map(|(l, _)| l)
            .unwrap_or(f64::NAN)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::policy::POLICY_OUTPUTS;
    use crate::protocol::Stage;
    use rand::SeedableRng;

    fn state() -> ObservedState {
        ObservedState {
            ns_r: 3,
            nc_r: 5,
            stage: Stage::S1,
            x_best: 350.0,
            t_left: 40_000,
            horizon: 100_000,
            ip_b: 320.0,
            rp_b: 520.0,
        }
    }

    fn synthetic_batch(rng: &mut SimRng, k: usize) -> Vec<Experience> {
        (0..k)
            .map(|i| {
                let mut s = [0.0; FEATURE_DIM];
                s.iter_mut().for_each(|v| *v = rng.random_range(0.0..1.0));
                let label = DecisionLabel::from_index(i % DecisionLabel::COUNT).unwrap();
                let a = encode_action(label, rng.random_range(0.0..1.0));
                Experience {
                    state: s,
                    action: a,
                    reward: (s[0] - s[7] + a[5] - 0.5).clamp(-1.0, 1.0),
                    next_state: s.map(|v| 1.0 - v),
                    terminal: i % 2 == 0,
                }
            })
            .collect()
    }

    fn zero_ac(cfg: DdpgConfig) -> ActorCritic {
        let actor = PolicyNetwork::from_mlp(Mlp::zeros(&[FEATURE_DIM, 8, 6]), 0.0).unwrap();
        ActorCritic::from_parts(actor, Mlp::zeros(&[CRITIC_INPUT, 8, 1]), cfg).unwrap()
    }

    #[test]
    fn zero_actor_prefers_offer_over_exit() {
        let ac = zero_ac(DdpgConfig::default());
        let s = state();
        let f = crate::features::encode(&s);
        let legal = ActionSet::of(&[ActionKind::Offer, ActionKind::Exit]);
        let mut rng = SimRng::seed_from_u64(0);
        let sel = ac.select_action(&s, &f, legal, SelectMode::Exploit, &mut rng).unwrap();
        assert_eq!(sel.action.kind(), ActionKind::Offer);
        assert_eq!(sel.action.offer_value(), Some(420.0));
        let only_exit = ActionSet::of(&[ActionKind::Exit]);
        let sel = ac.select_action(&s, &f, only_exit, SelectMode::Exploit, &mut rng).unwrap();
        assert_eq!(sel.label, DecisionLabel::Exit);
    }

    #[test]
    fn zero_noise_explore_equals_exploit() {
        let mut rng = SimRng::seed_from_u64(3);
        let actor = PolicyNetwork::new(&[16], 0.0, &mut rng);
        let cfg = DdpgConfig {
            noise_scale: 0.0,
            ..DdpgConfig::default()
        };
        let ac = ActorCritic::new(actor, cfg, &mut rng).unwrap();
        let s = state();
        let f = crate::features::encode(&s);
        let legal = ActionSet::of(&[ActionKind::Offer, ActionKind::Exit]);
        let a = ac.select_action(&s, &f, legal, SelectMode::Explore, &mut rng).unwrap();
        let b = ac.select_action(&s, &f, legal, SelectMode::Exploit, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explore_noise_stays_in_bounds() {
        let mut rng = SimRng::seed_from_u64(4);
        let actor = PolicyNetwork::new(&[16], 0.0, &mut rng);
        let cfg = DdpgConfig {
            noise_scale: 5.0,
            ..DdpgConfig::default()
        };
        let ac = ActorCritic::new(actor, cfg, &mut rng).unwrap();
        let s = state();
        let f = crate::features::encode(&s);
        let legal = ActionSet::of(&[ActionKind::Offer]);
        for _ in 0..200 {
            let sel = ac.select_action(&s, &f, legal, SelectMode::Explore, &mut rng).unwrap();
            let p = sel.action.offer_value().unwrap();
            assert!((s.ip_b..=s.rp_b).contains(&p));
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let mut ac = zero_ac(DdpgConfig::default());
        assert!(matches!(ac.update(&[]), Err(RlError::EmptyBatch)));
    }

    #[test]
    fn zero_discount_targets_are_rewards() {
        let mut rng = SimRng::seed_from_u64(5);
        let actor = PolicyNetwork::new(&[16], 0.0, &mut rng);
        let cfg = DdpgConfig {
            gamma: 0.0,
            ..DdpgConfig::default()
        };
        let ac = ActorCritic::new(actor, cfg, &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 8);
        let refs: Vec<&Experience> = batch.iter().collect();
        let t = ac.targets(&refs).unwrap();
        assert_eq!(t, batch.iter().map(|e| e.reward).collect::<Vec<_>>());
    }

    #[test]
    fn unit_tau_copies_online_networks() {
        let mut rng = SimRng::seed_from_u64(6);
        let actor = PolicyNetwork::new(&[16], 0.0, &mut rng);
        let cfg = DdpgConfig {
            tau: 1.0,
            ..DdpgConfig::default()
        };
        let mut ac = ActorCritic::new(actor, cfg, &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 8);
        let refs: Vec<&Experience> = batch.iter().collect();
        ac.update(&refs).unwrap();
        assert_eq!(ac.actor_target, ac.actor);
        assert_eq!(ac.critic_target, ac.critic);
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        let mut rng = SimRng::seed_from_u64(8);
        let actor = PolicyNetwork::with_default_architecture(&mut rng);
        let ac = ActorCritic::new(actor, DdpgConfig::default(), &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 16);
        let refs: Vec<&Experience> = batch.iter().collect();
        let err = critic_gradient_check(&ac, &refs, 200, &mut rng).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = SimRng::seed_from_u64(9);
        let mut actor = PolicyNetwork::new(&[12], 0.0, &mut rng);
        let n = actor.mlp.params().len();
        actor.mlp.params_mut()[n - POLICY_OUTPUTS] += 10.0;
        let ac = ActorCritic::new(actor, DdpgConfig::default(), &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 6);
        let refs: Vec<&Experience> = batch.iter().collect();
        let (_, grads) = ac.actor_objective_and_grad(&refs).unwrap();
        // The argmax is piecewise constant, so only the offer pathway has a
        // finite-difference counterpart.
        let offer_only = |p: &[f64]| {
            let mut probe = ac.actor.clone();
            probe.mlp.params_mut().copy_from_slice(p);
            refs.iter()
                .map(|e| {
                    let out = probe.eval(&e.state).unwrap();
                    let a = encode_action(DecisionLabel::CounterOffer, out.offer_unit);
                    -ActorCritic::q(&ac.critic, &e.state, &a).unwrap() / refs.len() as f64
                })
                .sum::<f64>()
        };
        let offer_bias = grads.len() - 1;
        let mut params = ac.actor.mlp.params().to_vec();
        let err = max_relative_error(&mut params, &grads, &[offer_bias], 1e-6, offer_only);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn critic_loss_drops_on_fixed_batch() {
        let mut rng = SimRng::seed_from_u64(10);
        let actor = PolicyNetwork::with_default_architecture(&mut rng);
        let mut ac = ActorCritic::new(actor, DdpgConfig::default(), &mut rng).unwrap();
        let batch = synthetic_batch(&mut rng, 64);
        let refs: Vec<&Experience> = batch.iter().collect();
        let first = ac.update(&refs).unwrap().critic_loss;
        let mut last = first;
        for _ in 0..199 {
            last = ac.update(&refs).unwrap().critic_loss;
        }
        assert!(first / last >= 10.0, "{first} -> {last}");
    }
}
