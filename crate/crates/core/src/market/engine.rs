//! Discrete-event simulation of one episode of the open market.
//!
//! Agent 0 is the focal buyer whose decisions come from a [`BuyerPolicy`].
//! Every other buyer runs the teacher heuristic and every seller runs the
//! episode's seller tactic. Sellers hold one thread with every live buyer.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ObservedState;
use crate::market::config::{
    sample_buyer_prices, sample_deadline, sample_market, sample_seller_prices, MarketConfig, PriceBounds,
    SampledMarket, LATENCY_JITTER_MS,
};
use crate::metrics::EpisodeResult;
use crate::protocol::{
    legal_actions, ActionKind, ActionSet, Millis, NegotiationAction, NegotiationThreadState, Outcome,
    ProtocolError, Role, TraceRecord,
};
use crate::rl::reward::metric_utility;
use crate::strategies::{teacher_decide, SellerStrategy, SellerView, TeacherParams};
use crate::{derive_seed, SimRng};

pub type AgentId = u32;
pub type ThreadId = u64;

pub const FOCAL_BUYER: AgentId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    AgentEnter,
    AgentLeave,
    ActionDue,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct MarketEvent {
    pub time: Millis,
    pub agent_id: AgentId,
    pub thread_id: Option<ThreadId>,
    pub kind: EventKind,
    /// Move counter of the thread when an action was scheduled; stale
    /// events are dropped.
    token: u32,
}

impl MarketEvent {
    pub fn new(time: Millis, kind: EventKind, agent_id: AgentId, thread_id: Option<ThreadId>) -> Self {
        Self {
            time,
            agent_id,
            thread_id,
            kind,
            token: 0,
        }
    }
}

/// What to do when the focal policy returns an illegal action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllegalActionMode {
    #[default]
    Abort,
    /// Replace the action with Exit.
    Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceScope {
    #[default]
    None,
    Focal,
    All,
}

/// Population and pacing parameters of the market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketDynamics {
    /// Per-second probability that a live non-focal agent leaves.
    pub leave_rate: f64,
}

impl Default for MarketDynamics {
    fn default() -> Self {
        Self { leave_rate: 1.0 / 120.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub config: MarketConfig,
    pub episode_id: u64,
    pub seller: SellerStrategy,
    pub teacher: TeacherParams,
    pub illegal: IllegalActionMode,
    pub trace: TraceScope,
    pub dynamics: MarketDynamics,
}

impl EpisodeSpec {
    pub fn new(config: MarketConfig, episode_id: u64, seller: SellerStrategy, teacher: TeacherParams) -> Self {
        Self {
            config,
            episode_id,
            seller,
            teacher,
            illegal: IllegalActionMode::Abort,
            trace: TraceScope::None,
            dynamics: MarketDynamics::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("illegal action in thread {thread_id} at {time} ms: {source}")]
    IllegalAction {
        thread_id: ThreadId,
        time: Millis,
        source: ProtocolError,
    },
    #[error("unknown thread {0}")]
    UnknownThread(ThreadId),
    #[error("thread {0} is closed")]
    ThreadClosed(ThreadId),
}

/// The focal buyer's view when it holds the turn in a thread.
#[derive(Debug, Clone)]
pub struct DecisionView<'a> {
    pub thread_id: ThreadId,
    /// Elapsed time since the focal buyer entered, in ms.
    pub now: Millis,
    /// The focal buyer's deadline.
    pub t_end: Millis,
    pub observed: ObservedState,
    pub thread: &'a NegotiationThreadState,
    pub legal: ActionSet,
    /// Latest offer of every seller in an open thread with the focal buyer.
    pub seller_offers: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CloseCause {
    Agreement,
    BuyerExit,
    SellerExit,
    /// The thread's deadline passed.
    Deadline,
    /// The seller sold to someone else or left the market.
    SellerGone,
    /// The buyer agreed in another thread.
    BuyerConcluded,
}

/// A focal thread ending.
#[derive(Debug, Clone, PartialEq)]
pub struct ThreadClosed {
    pub thread_id: ThreadId,
    pub time: Millis,
    pub outcome: Outcome,
    pub price: Option<f64>,
    pub cause: CloseCause,
    pub t_end: Millis,
}

/// Decision maker for the focal buyer.
pub trait BuyerPolicy {
    fn decide(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> NegotiationAction;

    /// Called once for every focal thread when it ends.
    fn thread_closed(&mut self, _closed: &ThreadClosed) {}
}

/// Picks uniformly among legal actions, with offers uniform in the buyer's
/// price range.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomLegalPolicy;

impl BuyerPolicy for RandomLegalPolicy {
    fn decide(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> NegotiationAction {
        let kinds: Vec<ActionKind> = view.legal.iter().collect();
        let kind = kinds[rng.random_range(0..kinds.len())];
        if kind == ActionKind::Offer {
            let o = &view.observed;
            NegotiationAction::offer(rng.random_range(o.ip_b..=o.rp_b)).expect("positive price")
        } else {
            NegotiationAction::simple(kind)
        }
    }
}

#[derive(Debug, Clone)]
struct Agent {
    role: Role,
    bounds: PriceBounds,
    entered: Millis,
    /// Absolute deadline once entered; unused for sellers.
    deadline: Millis,
    lifetime: Millis,
    alive: bool,
    open: Vec<ThreadId>,
}

#[derive(Debug, Clone)]
struct Thread {
    buyer: AgentId,
    seller: AgentId,
    state: NegotiationThreadState,
    buyer_offers: Vec<f64>,
    deadline: Millis,
    moves: u32,
}

/// Summary of one processed event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Focal threads closed by this event.
    pub focal_closed: Vec<ThreadClosed>,
    pub focal_decided: bool,
}

/// Result of a finished episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRun {
    pub result: EpisodeResult,
    pub sampled: SampledMarket,
    pub trace: Vec<TraceRecord>,
    pub events: u64,
    pub focal_decisions: u64,
    pub peak_population: u32,
}

pub struct Market {
    spec: EpisodeSpec,
    seed: u64,
    pub sampled: SampledMarket,
    now: Millis,
    agents: Vec<Agent>,
    threads: Vec<Thread>,
    queue: BinaryHeap<Reverse<MarketEvent>>,
    live: u32,
    peak: u32,
    epoch: u64,
    nc_cache: RefCell<Vec<(u64, u32)>>,
    stamp: RefCell<(u32, Vec<u32>)>,
    result: Option<EpisodeResult>,
    trace: Vec<TraceRecord>,
    events: u64,
    focal_decisions: u64,
}

/// Lifetime in ms under a per-second leave probability.
fn sample_lifetime(rate: f64, rng: &mut SimRng) -> Millis {
    if rate <= 0.0 {
        return Millis::MAX / 4;
    }
    if rate >= 1.0 {
        return 1000;
    }
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let seconds = (u.ln() / (1.0 - rate).ln()).ceil().max(1.0);
    (seconds.min(1e9) as Millis) * 1000
}

impl Market {
    pub fn new(spec: &EpisodeSpec) -> Self {
        let seed = derive_seed(spec.config.seed, &[spec.episode_id]);
        let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[1]));
        let sampled = sample_market(&spec.config, &mut rng);
        let mut churn = SimRng::seed_from_u64(derive_seed(seed, &[2]));
        let rate = spec.dynamics.leave_rate;
        let class = spec.config.deadline_class;

        let mut m = Market {
            spec: spec.clone(),
            seed,
            sampled: sampled.clone(),
            now: 0,
            agents: Vec::new(),
            threads: Vec::new(),
            queue: BinaryHeap::new(),
            live: 0,
            peak: 0,
            epoch: 0,
            nc_cache: RefCell::new(Vec::new()),
            stamp: RefCell::new((0, Vec::new())),
            result: None,
            trace: Vec::new(),
            events: 0,
            focal_decisions: 0,
        };

        let agent = |role, bounds, deadline_len, churn: &mut SimRng| Agent {
            role,
            bounds,
            entered: 0,
            deadline: deadline_len,
            lifetime: sample_lifetime(rate, churn),
            alive: false,
            open: Vec::new(),
        };
        m.agents.push(Agent {
            lifetime: Millis::MAX / 4,
            ..agent(Role::Buyer, sampled.buyer, sampled.t_end, &mut churn)
        });
        for &bounds in &sampled.sellers {
            m.agents.push(agent(Role::Seller, bounds, 0, &mut churn));
        }
        for _ in 0..sampled.initial_competitors {
            let bounds = sample_buyer_prices(&mut churn);
            let d = sample_deadline(class, &mut churn);
            m.agents.push(agent(Role::Buyer, bounds, d, &mut churn));
        }
        let initial = m.agents.len() as AgentId;

        // Arrivals keep the expected population at the sampled density. Every
        // potential entrant is drawn up front so that the arrival stream does
        // not depend on how negotiations unfold.
        let enter_p = (sampled.max_agents as f64 * rate).min(1.0);
        let buyer_frac = sampled.ratio.buyer_fraction();
        for second in 1..=sampled.t_end / 1000 {
            if churn.random_bool(enter_p) {
                let role = if churn.random_bool(buyer_frac) { Role::Buyer } else { Role::Seller };
                let bounds = match role {
                    Role::Buyer => sample_buyer_prices(&mut churn),
                    Role::Seller => sample_seller_prices(sampled.zoa, &mut churn),
                };
                let d = match role {
                    Role::Buyer => sample_deadline(class, &mut churn),
                    Role::Seller => 0,
                };
                let id = m.agents.len() as AgentId;
                m.agents.push(agent(role, bounds, d, &mut churn));
                m.push(MarketEvent::new(second * 1000, EventKind::AgentEnter, id, None));
            }
        }
        m.nc_cache = RefCell::new(vec![(u64::MAX, 0); m.agents.len()]);
        m.stamp = RefCell::new((0, vec![0; m.agents.len()]));
        for id in 0..initial {
            m.spawn(id);
        }
        m
    }

    fn push(&mut self, ev: MarketEvent) {
        self.queue.push(Reverse(ev));
    }

    fn latency(&self, thread: ThreadId, moves: u32) -> Millis {
        let h = derive_seed(self.seed, &[3, thread, moves as u64]);
        let jitter = h % (2 * LATENCY_JITTER_MS + 1);
        self.sampled.turn_latency - LATENCY_JITTER_MS + jitter
    }

    fn decision_rng(&self, thread: ThreadId, moves: u32) -> SimRng {
        SimRng::seed_from_u64(derive_seed(self.seed, &[4, thread, moves as u64]))
    }

    /// Activates a drawn agent and opens threads with every live
    /// counterpart.
    fn spawn(&mut self, id: AgentId) {
        let now = self.now;
        let ag = &mut self.agents[id as usize];
        ag.alive = true;
        ag.entered = now;
        if ag.role == Role::Buyer {
            ag.deadline += now;
        }
        let role = ag.role;
        let mut leave_at = now.saturating_add(ag.lifetime);
        if role == Role::Buyer && id != FOCAL_BUYER {
            leave_at = leave_at.min(ag.deadline + 1);
        }
        self.live += 1;
        self.peak = self.peak.max(self.live);
        if id != FOCAL_BUYER {
            self.push(MarketEvent::new(leave_at, EventKind::AgentLeave, id, None));
        }
        let partners: Vec<AgentId> = (0..self.agents.len() as AgentId)
            .filter(|&a| {
                let ag = &self.agents[a as usize];
                ag.alive && ag.role != role
            })
            .collect();
        for p in partners {
            let (buyer, seller) = match role {
                Role::Buyer => (id, p),
                Role::Seller => (p, id),
            };
            self.open_thread(buyer, seller);
        }
    }

    fn open_thread(&mut self, buyer: AgentId, seller: AgentId) {
        let tid = self.threads.len() as ThreadId;
        let deadline = self.agents[buyer as usize].deadline;
        self.threads.push(Thread {
            buyer,
            seller,
            state: NegotiationThreadState::new(seller, self.now),
            buyer_offers: Vec::new(),
            deadline,
            moves: 0,
        });
        self.agents[buyer as usize].open.push(tid);
        self.agents[seller as usize].open.push(tid);
        self.epoch += 1;
        let at = self.now + self.latency(tid, 0);
        self.push(MarketEvent::new(at, EventKind::ActionDue, buyer, Some(tid)));
    }

    fn close_thread(&mut self, tid: ThreadId, cause: CloseCause, price: Option<f64>, report: &mut StepReport) {
        let th = &mut self.threads[tid as usize];
        th.state.force_no_deal();
        let (buyer, seller) = (th.buyer, th.seller);
        // A thread that runs out of time ends at its deadline.
        let time = if cause == CloseCause::Deadline { self.now.min(th.deadline) } else { self.now };
        for a in [buyer, seller] {
            let open = &mut self.agents[a as usize].open;
            if let Some(pos) = open.iter().position(|&t| t == tid) {
                open.swap_remove(pos);
            }
        }
        self.epoch += 1;
        if buyer == FOCAL_BUYER {
            report.focal_closed.push(ThreadClosed {
                thread_id: tid,
                time,
                outcome: if price.is_some() { Outcome::Agreement } else { Outcome::NoDeal },
                price,
                cause,
                t_end: self.sampled.t_end,
            });
        }
    }

    /// Removes an agent and ends all its threads.
    fn retire(&mut self, agent: AgentId, report: &mut StepReport) {
        let ag = &mut self.agents[agent as usize];
        if !ag.alive {
            return;
        }
        ag.alive = false;
        let role = ag.role;
        self.live -= 1;
        let cause = match role {
            Role::Seller => CloseCause::SellerGone,
            Role::Buyer => CloseCause::BuyerConcluded,
        };
        let open = self.agents[agent as usize].open.clone();
        for tid in open {
            self.close_thread(tid, cause, None, report);
        }
    }

    /// Earliest pending event, without removing it.
    pub fn peek_event(&self) -> Option<MarketEvent> {
        self.queue.peek().map(|r| r.0)
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn live_agents(&self) -> u32 {
        self.live
    }

    /// The focal buyer's result once it has agreed.
    pub fn focal_result(&self) -> Option<&EpisodeResult> {
        self.result.as_ref()
    }

    /// Applies the earliest pending event. Returns `None` when the queue is
    /// empty.
    pub fn step(
        &mut self,
        policy: &mut dyn BuyerPolicy,
        rng: &mut SimRng,
    ) -> Option<Result<(MarketEvent, StepReport), MarketError>> {
        let Reverse(ev) = self.queue.pop()?;
        self.now = ev.time;
        self.events += 1;
        let mut report = StepReport::default();
        let r = match ev.kind {
            EventKind::AgentEnter => {
                if self.live < self.sampled.max_agents {
                    self.spawn(ev.agent_id);
                }
                Ok(())
            }
            EventKind::AgentLeave => {
                self.retire(ev.agent_id, &mut report);
                Ok(())
            }
            EventKind::ActionDue => self.action_due(ev, policy, rng, &mut report),
        };
        Some(r.map(|_| (ev, report)))
    }

    fn action_due(
        &mut self,
        ev: MarketEvent,
        policy: &mut dyn BuyerPolicy,
        rng: &mut SimRng,
        report: &mut StepReport,
    ) -> Result<(), MarketError> {
        let tid = ev.thread_id.expect("action events name a thread");
        let th = &self.threads[tid as usize];
        if th.state.protocol.is_terminal() || th.moves != ev.token {
            return Ok(());
        }
        if self.now > th.deadline {
            self.close_thread(tid, CloseCause::Deadline, None, report);
            return Ok(());
        }
        let actor = self.agents[ev.agent_id as usize].role;
        debug_assert_eq!(th.state.protocol.turn(), Some(actor));
        let mut action = match actor {
            Role::Seller => self.seller_action(tid),
            Role::Buyer if ev.agent_id == FOCAL_BUYER => {
                report.focal_decided = true;
                self.focal_decisions += 1;
                self.focal_action(tid, policy, rng)?
            }
            Role::Buyer => self.competitor_action(tid)?,
        };

        let th = &mut self.threads[tid as usize];
        let agreed = match th.state.apply(&action, actor, self.now) {
            Ok(p) => p,
            Err(_) if ev.agent_id == FOCAL_BUYER && self.spec.illegal == IllegalActionMode::Mask => {
                action = NegotiationAction::simple(ActionKind::Exit);
                th.state.apply(&action, actor, self.now).map_err(|source| MarketError::IllegalAction {
                    thread_id: tid,
                    time: self.now,
                    source,
                })?
            }
            Err(source) => {
                return Err(MarketError::IllegalAction {
                    thread_id: tid,
                    time: self.now,
                    source,
                })
            }
        };
        if actor == Role::Buyer {
            if let Some(x) = action.offer_value() {
                th.buyer_offers.push(x);
            }
        }
        th.moves += 1;
        let (buyer, seller, moves) = (th.buyer, th.seller, th.moves);
        let stage_after = th.state.protocol.label();
        let terminal = th.state.protocol.is_terminal();

        let traced = match self.spec.trace {
            TraceScope::None => false,
            TraceScope::Focal => buyer == FOCAL_BUYER,
            TraceScope::All => true,
        };
        if traced {
            self.trace.push(TraceRecord {
                episode_id: self.spec.episode_id,
                thread_id: tid,
                time_ms: self.now,
                actor: actor.as_str().to_string(),
                action_kind: action.kind().as_str().to_string(),
                offer_value: action.offer_value(),
                stage_after: stage_after.to_string(),
            });
        }

        if let Some(price) = agreed {
            self.close_thread(tid, CloseCause::Agreement, Some(price), report);
            if buyer == FOCAL_BUYER {
                let b = self.agents[FOCAL_BUYER as usize].bounds;
                self.result = Some(EpisodeResult::agreement(
                    self.spec.episode_id,
                    price,
                    self.now,
                    metric_utility(price, b.ip, b.rp),
                ));
            }
            self.retire(buyer, report);
            self.retire(seller, report);
        } else if terminal {
            let cause = match actor {
                Role::Buyer => CloseCause::BuyerExit,
                Role::Seller => CloseCause::SellerExit,
            };
            self.close_thread(tid, cause, None, report);
        } else {
            let next = match actor {
                Role::Buyer => seller,
                Role::Seller => buyer,
            };
            let at = self.now + self.latency(tid, moves);
            self.push(MarketEvent {
                time: at,
                agent_id: next,
                thread_id: Some(tid),
                kind: EventKind::ActionDue,
                token: moves,
            });
        }
        Ok(())
    }

    fn seller_action(&self, tid: ThreadId) -> NegotiationAction {
        let th = &self.threads[tid as usize];
        let seller = &self.agents[th.seller as usize];
        let view = SellerView {
            ip: seller.bounds.ip,
            rp: seller.bounds.rp,
            elapsed: self.now - th.state.start_time,
            // A seller's deadline matches the buyer's in each thread.
            horizon: th.deadline - th.state.start_time,
            buyer_offers: &th.buyer_offers,
            last_own: th.state.last_seller_offer,
        };
        let stage = th.state.protocol.stage().expect("open thread");
        let mut rng = self.decision_rng(tid, th.moves);
        self.spec.seller.respond(stage, &view, &mut rng)
    }

    fn lowest_seller_offer(&self, buyer: AgentId) -> Option<f64> {
        self.agents[buyer as usize]
            .open
            .iter()
            .filter_map(|&t| self.threads[t as usize].state.last_seller_offer)
            .reduce(f64::min)
    }

    fn competitor_action(&self, tid: ThreadId) -> Result<NegotiationAction, MarketError> {
        let th = &self.threads[tid as usize];
        let observed = self.observe(th.buyer, tid)?;
        let lowest = self.lowest_seller_offer(th.buyer);
        let mut rng = self.decision_rng(tid, th.moves);
        Ok(teacher_decide(&observed, &th.state, lowest, &self.spec.teacher, &mut rng))
    }

    fn focal_action(
        &self,
        tid: ThreadId,
        policy: &mut dyn BuyerPolicy,
        rng: &mut SimRng,
    ) -> Result<NegotiationAction, MarketError> {
        let th = &self.threads[tid as usize];
        let observed = self.observe(FOCAL_BUYER, tid)?;
        let offers: Vec<f64> = self.agents[FOCAL_BUYER as usize]
            .open
            .iter()
            .filter_map(|&t| self.threads[t as usize].state.last_seller_offer)
            .collect();
        let view = DecisionView {
            thread_id: tid,
            now: self.now,
            t_end: self.sampled.t_end,
            observed,
            thread: &th.state,
            legal: legal_actions(th.state.protocol, Role::Buyer),
            seller_offers: &offers,
        };
        Ok(policy.decide(&view, rng))
    }

    /// Number of distinct other buyers negotiating with any of `buyer`'s
    /// sellers.
    fn competitors(&self, buyer: AgentId) -> u32 {
        let mut cache = self.nc_cache.borrow_mut();
        let (epoch, value) = cache[buyer as usize];
        if epoch == self.epoch {
            return value;
        }
        let mut guard = self.stamp.borrow_mut();
        let (stamp, seen) = &mut *guard;
        *stamp = stamp.wrapping_add(1);
        if *stamp == 0 {
            seen.iter_mut().for_each(|s| *s = 0);
            *stamp = 1;
        }
        let mut count = 0;
        for &t in &self.agents[buyer as usize].open {
            let seller = self.threads[t as usize].seller;
            for &u in &self.agents[seller as usize].open {
                let other = self.threads[u as usize].buyer;
                if other != buyer && seen[other as usize] != *stamp {
                    seen[other as usize] = *stamp;
                    count += 1;
                }
            }
        }
        cache[buyer as usize] = (self.epoch, count);
        count
    }

    /// The buyer's state attributes for one of its open threads.
    pub fn observe(&self, buyer: AgentId, thread: ThreadId) -> Result<ObservedState, MarketError> {
        let th = self
            .threads
            .get(thread as usize)
            .filter(|t| t.buyer == buyer)
            .ok_or(MarketError::UnknownThread(thread))?;
        let stage = th.state.protocol.stage().ok_or(MarketError::ThreadClosed(thread))?;
        let agent = &self.agents[buyer as usize];
        let last_seller = th.state.last_seller_action_at.unwrap_or(th.state.start_time);
        Ok(ObservedState {
            ns_r: agent.open.len() as u32,
            nc_r: self.competitors(buyer),
            stage,
            x_best: th.state.x_best.unwrap_or(agent.bounds.ip),
            t_left: th.deadline.saturating_sub(last_seller),
            horizon: agent.deadline - agent.entered,
            ip_b: agent.bounds.ip,
            rp_b: agent.bounds.rp,
        })
    }

    fn finish(mut self) -> EpisodeRun {
        let result = self.result.take().unwrap_or(EpisodeResult::failure(self.spec.episode_id));
        EpisodeRun {
            result,
            sampled: self.sampled,
            trace: self.trace,
            events: self.events,
            focal_decisions: self.focal_decisions,
            peak_population: self.peak,
        }
    }

    /// Closes every remaining focal thread at the deadline.
    fn expire_focal(&mut self, report: &mut StepReport) {
        self.now = self.now.max(self.sampled.t_end + 1);
        let open = self.agents[FOCAL_BUYER as usize].open.clone();
        for tid in open {
            self.close_thread(tid, CloseCause::Deadline, None, report);
        }
    }
}

/// Runs one episode until the focal buyer agrees or its deadline passes.
pub fn run_episode(
    spec: &EpisodeSpec,
    policy: &mut dyn BuyerPolicy,
    rng: &mut SimRng,
) -> Result<EpisodeRun, MarketError> {
    let mut market = Market::new(spec);
    let t_end = market.sampled.t_end;
    while market.result.is_none() && market.peek_event().is_some_and(|e| e.time <= t_end) {
        let (_, report) = market.step(policy, rng).expect("event is pending")?;
        for c in &report.focal_closed {
            policy.thread_closed(c);
        }
    }
    if market.result.is_none() {
        let mut report = StepReport::default();
        market.expire_focal(&mut report);
        for c in &report.focal_closed {
            policy.thread_closed(c);
        }
    }
    Ok(market.finish())
}
