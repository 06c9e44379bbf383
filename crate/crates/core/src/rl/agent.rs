//! The learning buyer: acts through the actor, turns its decisions into
//! experiences and learns while it negotiates.

use std::collections::BTreeMap;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::actor_critic::{ActorCritic, SelectMode, UpdateStats};
use super::replay::{Experience, ReplayBuffer, ACTION_DIM};
use super::reward::{reward_classification, RewardContext, RewardSpec, UtilityFrame};
use super::RlError;
use crate::features::{encode, DecisionLabel, FEATURE_DIM};
use crate::market::{run_episode, BuyerPolicy, CloseCause, DecisionView, EpisodeRun, EpisodeSpec, ThreadClosed, ThreadId};
use crate::protocol::{ActionKind, NegotiationAction};
use crate::{derive_seed, SimRng};

#[derive(Debug, Clone)]
struct Pending {
    state: [f64; FEATURE_DIM],
    action: [f64; ACTION_DIM],
    reward: f64,
}

/// Buyer policy backed by an actor-critic.
#[derive(Debug)]
pub struct RlBuyer {
    pub ac: ActorCritic,
    pub buffer: ReplayBuffer,
    pub mode: SelectMode,
    /// Store experiences and run updates while acting.
    pub learn: bool,
    pub reward_spec: RewardSpec,
    pending: BTreeMap<ThreadId, Pending>,
    frame: Option<UtilityFrame>,
    sample_rng: SimRng,
    decisions: u64,
    updates: u64,
    episode_reward: f64,
    episode_stats: Vec<UpdateStats>,
    error: Option<RlError>,
}

impl RlBuyer {
    pub fn new(ac: ActorCritic, reward_spec: RewardSpec, seed: u64) -> Result<Self, RlError> {
        let buffer = ReplayBuffer::new(ac.config.buffer_capacity, ac.config.batch_size)?;
        Ok(Self {
            ac,
            buffer,
            mode: SelectMode::Explore,
            learn: true,
            reward_spec,
            pending: BTreeMap::new(),
            frame: None,
            sample_rng: SimRng::seed_from_u64(seed),
            decisions: 0,
            updates: 0,
            episode_reward: 0.0,
            episode_stats: Vec::new(),
            error: None,
        })
    }

    /// Greedy, non-learning copy of the behaviour.
    pub fn frozen(ac: ActorCritic, reward_spec: RewardSpec) -> Result<Self, RlError> {
        let mut b = Self::new(ac, reward_spec, 0)?;
        b.mode = SelectMode::Exploit;
        b.learn = false;
        Ok(b)
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    fn store(&mut self, e: Experience) {
        self.episode_reward += e.reward;
        if self.learn {
            self.buffer.push(e);
        }
    }

    fn maybe_update(&mut self) -> Result<(), RlError> {
        if !self.learn || self.decisions % self.ac.config.update_every as u64 != 0 {
            return Ok(());
        }
        let Some(batch) = self.buffer.sample(&mut self.sample_rng) else {
            return Ok(());
        };
        let stats = self.ac.update(&batch)?;
        self.updates += 1;
        self.episode_stats.push(stats);
        Ok(())
    }

    fn act(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> Result<NegotiationAction, RlError> {
        let frame = UtilityFrame {
            ip_b: view.observed.ip_b,
            rp_b: view.observed.rp_b,
            t_end: view.t_end,
        };
        self.frame = Some(frame);
        let state = encode(&view.observed);
        if let Some(prev) = self.pending.remove(&view.thread_id) {
            self.store(Experience {
                state: prev.state,
                action: prev.action,
                reward: prev.reward,
                next_state: state,
                terminal: false,
            });
        }
        let sel = self.ac.select_action(&view.observed, &state, view.legal, self.mode, rng)?;
        let reward = match (sel.label, sel.action.offer_value()) {
            (DecisionLabel::CounterOffer, Some(price)) => reward_classification(
                &RewardContext::CounterOffer {
                    price,
                    seller_offers: view.seller_offers,
                },
                view.now,
                &frame,
                &self.reward_spec,
            ),
            _ => 0.0,
        };
        self.pending.insert(
            view.thread_id,
            Pending {
                state,
                action: sel.encoded,
                reward,
            },
        );
        self.decisions += 1;
        self.maybe_update()?;
        Ok(sel.action)
    }

    /// Summarizes and resets the per-episode bookkeeping.
    fn finish_episode(&mut self) -> (f64, Option<f64>, Option<f64>) {
        self.pending.clear();
        self.frame = None;
        let n = self.episode_stats.len() as f64;
        let mean = |f: fn(&UpdateStats) -> f64| (n > 0.0).then(|| self.episode_stats.iter().map(f).sum::<f64>() / n);
        let out = (
            self.episode_reward,
            mean(|s| s.critic_loss),
            mean(|s| s.actor_objective),
        );
        self.episode_reward = 0.0;
        self.episode_stats.clear();
        out
    }

    /// Runs one episode, surfacing any learner failure.
    pub fn run(&mut self, spec: &EpisodeSpec, rng: &mut SimRng) -> Result<(EpisodeRun, TrainingLogRow), RlError> {
        let run = run_episode(spec, self, rng)?;
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        let (reward, critic_loss, actor_objective) = self.finish_episode();
        let row = TrainingLogRow {
            step: self.updates,
            episode: spec.episode_id,
            reward,
            critic_loss,
            actor_objective,
            epsilon_noise: if self.mode == SelectMode::Explore { self.ac.config.noise_scale } else { 0.0 },
        };
        Ok((run, row))
    }
}

impl BuyerPolicy for RlBuyer {
    fn decide(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> NegotiationAction {
        match self.act(view, rng) {
            Ok(a) => a,
            Err(e) => {
                self.error.get_or_insert(e);
                NegotiationAction::simple(ActionKind::Exit)
            }
        }
    }

    fn thread_closed(&mut self, closed: &ThreadClosed) {
        let Some(prev) = self.pending.remove(&closed.thread_id) else {
            return;
        };
        let Some(frame) = self.frame else {
            return;
        };
        let ctx = match (closed.cause, closed.price) {
            (CloseCause::Agreement, Some(price)) => RewardContext::Agreement { price },
            (CloseCause::BuyerConcluded, _) => RewardContext::Other,
            _ => RewardContext::NoDeal,
        };
        let reward = reward_classification(&ctx, closed.time, &frame, &self.reward_spec);
        self.store(Experience {
            state: prev.state,
            action: prev.action,
            reward,
            next_state: prev.state,
            terminal: true,
        });
    }
}

/// One line of the training log, written per episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogRow {
    /// Gradient updates performed so far.
    pub step: u64,
    pub episode: u64,
    /// Sum of the rewards of the episode's experiences.
    pub reward: f64,
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
    pub epsilon_noise: f64,
}

pub const TRAINING_LOG_HEADER: &str = "step,episode,reward,critic_loss,actor_objective,epsilon_noise";

pub fn write_training_log<W: std::io::Write>(out: W, rows: &[TrainingLogRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRAINING_LOG_HEADER.split(','))?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.step.to_string(),
            r.episode.to_string(),
            r.reward.to_string(),
            opt(r.critic_loss),
            opt(r.actor_objective),
            r.epsilon_noise.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Trains `agent` over `specs` in order and returns the per-episode log.
pub fn train_rl(agent: &mut RlBuyer, specs: &[EpisodeSpec], seed: u64) -> Result<Vec<TrainingLogRow>, RlError> {
    let mut log = Vec::with_capacity(specs.len());
    for (i, spec) in specs.iter().enumerate() {
        let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[i as u64, 0x71]));
        let (_, row) = agent.run(spec, &mut rng)?;
        log.push(row);
    }
    Ok(log)
}
