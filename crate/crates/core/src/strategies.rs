//! Fixed seller tactics and the teacher buyer heuristic.
//!
//! Sellers use the classic time-dependent family (polynomial concession
//! curve) and three tit-for-tat variants that imitate the buyer's moves.
//! The teacher buyer concedes on a weighted blend of time pressure,
//! competition and seller scarcity; it supplies supervision data and drives
//! every competitor buyer in the market.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::ObservedState;
use crate::market::config::MAX_DENSITY;
use crate::protocol::{ActionKind, NegotiationAction, NegotiationThreadState, ParseError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeDependentParams {
    /// Concession exponent: 1 linear, above 1 conceder, below 1 boulware.
    pub beta: f64,
    /// Fraction of the range conceded at time zero.
    pub kappa: f64,
}

impl TimeDependentParams {
    pub const LINEAR: Self = Self { beta: 1.0, kappa: 0.0 };
    pub const CONCEDER: Self = Self { beta: 5.0, kappa: 0.0 };
    pub const BOULWARE: Self = Self { beta: 0.2, kappa: 0.0 };
}

/// Price asked by a time-dependent seller `elapsed` ms into a negotiation
/// that must end after `horizon` ms.
pub fn seller_time_dependent_offer(
    params: &TimeDependentParams,
    ip_s: f64,
    rp_s: f64,
    elapsed: u64,
    horizon: u64,
) -> f64 {
    let frac = if horizon == 0 {
        1.0
    } else {
        (elapsed as f64 / horizon as f64).clamp(0.0, 1.0)
    };
    let alpha = params.kappa + (1.0 - params.kappa) * frac.powf(1.0 / params.beta);
    (ip_s - alpha * (ip_s - rp_s)).clamp(rp_s, ip_s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TftVariant {
    Relative,
    RandomAbsolute,
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviourDependentParams {
    pub variant: TftVariant,
    /// How many buyer offers back the imitation looks.
    pub delta: usize,
    /// Half-width of the uniform noise of the random absolute variant.
    pub noise_bound: f64,
}

/// Next price of a tit-for-tat seller.
///
/// `buyer_offers` holds the buyer's offers in this thread, oldest first.
/// With too little history the seller repeats its last offer, or opens at
/// `ip_s`.
pub fn seller_behaviour_dependent_offer<R: Rng + ?Sized>(
    params: &BehaviourDependentParams,
    buyer_offers: &[f64],
    last_own: Option<f64>,
    ip_s: f64,
    rp_s: f64,
    rng: &mut R,
) -> f64 {
    let Some(last_own) = last_own else {
        return ip_s;
    };
    let delta = params.delta.max(1);
    let n = buyer_offers.len();
    if n < delta + 1 {
        return last_own.clamp(rp_s, ip_s);
    }
    let next = match params.variant {
        TftVariant::Relative => {
            let older = buyer_offers[n - 1 - delta];
            let newer = buyer_offers[n - delta];
            last_own * (older / newer)
        }
        TftVariant::RandomAbsolute => {
            let older = buyer_offers[n - 1 - delta];
            let newer = buyer_offers[n - delta];
            let noise = if params.noise_bound > 0.0 {
                rng.random_range(-params.noise_bound..=params.noise_bound)
            } else {
                0.0
            };
            last_own - (newer - older) + noise
        }
        TftVariant::Averaged => {
            // Ratio over the whole window rather than a single step.
            let older = buyer_offers[n - 1 - delta];
            let newest = buyer_offers[n - 1];
            last_own * (older / newest)
        }
    };
    next.clamp(rp_s, ip_s)
}

/// A seller tactic selectable by id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SellerStrategy {
    TimeDependent(TimeDependentParams),
    BehaviourDependent(BehaviourDependentParams),
}

impl SellerStrategy {
    pub const IDS: [&'static str; 6] = ["conceder", "linear", "boulware", "rel_tft", "rand_tft", "avg_tft"];

    pub fn from_id(id: &str) -> Option<SellerStrategy> {
        let bd = |variant, delta, noise_bound| {
            SellerStrategy::BehaviourDependent(BehaviourDependentParams {
                variant,
                delta,
                noise_bound,
            })
        };
        Some(match id {
            "conceder" => SellerStrategy::TimeDependent(TimeDependentParams::CONCEDER),
            "linear" => SellerStrategy::TimeDependent(TimeDependentParams::LINEAR),
            "boulware" => SellerStrategy::TimeDependent(TimeDependentParams::BOULWARE),
            "rel_tft" => bd(TftVariant::Relative, 1, 0.0),
            "rand_tft" => bd(TftVariant::RandomAbsolute, 1, 5.0),
            "avg_tft" => bd(TftVariant::Averaged, 2, 0.0),
            _ => return None,
        })
    }

    pub fn is_time_dependent(&self) -> bool {
        matches!(self, SellerStrategy::TimeDependent(_))
    }

    /// Price the seller would propose next in a thread.
    pub fn next_offer<R: Rng + ?Sized>(&self, view: &SellerView<'_>, rng: &mut R) -> f64 {
        match self {
            SellerStrategy::TimeDependent(p) => {
                seller_time_dependent_offer(p, view.ip, view.rp, view.elapsed, view.horizon)
            }
            SellerStrategy::BehaviourDependent(p) => seller_behaviour_dependent_offer(
                p,
                view.buyer_offers,
                view.last_own,
                view.ip,
                view.rp,
                rng,
            ),
        }
    }

    /// The seller's move when it holds the turn.
    ///
    /// At S2 it accepts a buyer offer that is at least what it would ask
    /// next, otherwise it counters. At S3 it always reserves.
    pub fn respond<R: Rng + ?Sized>(&self, stage: Stage, view: &SellerView<'_>, rng: &mut R) -> NegotiationAction {
        match stage {
            Stage::S3 => NegotiationAction::simple(ActionKind::Reserve),
            Stage::S2 => {
                let next = self.next_offer(view, rng);
                match view.buyer_offers.last() {
                    Some(&b) if b >= next => NegotiationAction::simple(ActionKind::Accept),
                    _ => NegotiationAction::offer(next).expect("seller prices are positive"),
                }
            }
            Stage::S1 | Stage::S4 => NegotiationAction::simple(ActionKind::Exit),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown seller strategy `{0}` (valid: conceder, linear, boulware, rel_tft, rand_tft, avg_tft)")]
pub struct UnknownStrategy(pub String);

impl FromStr for SellerStrategy {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SellerStrategy::from_id(s).ok_or_else(|| UnknownStrategy(s.to_string()))
    }
}

impl fmt::Display for SellerStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let id = SellerStrategy::IDS
            .into_iter()
            .find(|id| SellerStrategy::from_id(id).as_ref() == Some(self));
        match id {
            Some(id) => f.write_str(id),
            None => write!(f, "{self:?}"),
        }
    }
}

/// What a seller sees of one thread.
#[derive(Debug, Clone, Copy)]
pub struct SellerView<'a> {
    pub ip: f64,
    pub rp: f64,
    pub elapsed: u64,
    pub horizon: u64,
    pub buyer_offers: &'a [f64],
    pub last_own: Option<f64>,
}

/// Parameters of the teacher buyer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherParams {
    /// Weights on (time pressure, competition, seller scarcity).
    pub concession_weights: [f64; 3],
    /// Acceptance slack as a fraction of the buyer's price range.
    pub accept_margin: f64,
    /// Fraction of the deadline left below which reservations are requested.
    pub reserve_trigger: f64,
    /// Half-width of uniform noise on offers, as a fraction of the range.
    pub offer_noise: f64,
}

impl Default for TeacherParams {
    fn default() -> Self {
        Self {
            concession_weights: [0.6, 0.2, 0.2],
            accept_margin: 0.05,
            reserve_trigger: 0.1,
            offer_noise: 0.0,
        }
    }
}

impl TeacherParams {
    pub fn validate(&self) -> Result<(), String> {
        let w = self.concession_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err("teacher weights must be nonnegative".into());
        }
        if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err("teacher weights must sum to 1".into());
        }
        for (name, v) in [
            ("accept_margin", self.accept_margin),
            ("reserve_trigger", self.reserve_trigger),
            ("offer_noise", self.offer_noise),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Parses and validates a JSON parameter file.
    pub fn from_json(text: &[u8]) -> Result<Self, ParseError> {
        let p: TeacherParams = serde_json::from_slice(text).map_err(|e| ParseError(e.to_string()))?;
        p.validate().map_err(ParseError)?;
        Ok(p)
    }

    /// Fraction of the price range the teacher is willing to pay in `state`.
    pub fn concession(&self, state: &ObservedState) -> f64 {
        let [wt, wc, ws] = self.concession_weights;
        let pressure = 1.0 - state.time_left_fraction();
        let competition = (state.nc_r as f64 / MAX_DENSITY as f64).min(1.0);
        let scarcity = 1.0 / state.ns_r.max(1) as f64;
        (wt * pressure + wc * competition + ws * scarcity).clamp(0.0, 1.0)
    }

    pub fn target_price(&self, state: &ObservedState) -> f64 {
        state.ip_b + self.concession(state) * (state.rp_b - state.ip_b)
    }
}

/// The teacher's move in `thread`, whose stage is one where the buyer holds
/// the turn. `lowest_seller_offer` is the best standing seller offer across
/// all of the buyer's threads.
pub fn teacher_decide<R: Rng + ?Sized>(
    state: &ObservedState,
    thread: &NegotiationThreadState,
    lowest_seller_offer: Option<f64>,
    params: &TeacherParams,
    rng: &mut R,
) -> NegotiationAction {
    let range = state.rp_b - state.ip_b;
    let target = params.target_price(state);
    let margin = params.accept_margin * range;
    let offer = |rng: &mut R| {
        let noise = if params.offer_noise > 0.0 {
            rng.random_range(-params.offer_noise..=params.offer_noise) * range
        } else {
            0.0
        };
        let x = (target + noise).clamp(state.ip_b, state.rp_b);
        NegotiationAction::offer(x).expect("buyer prices are positive")
    };
    match thread.protocol.stage() {
        Some(Stage::S4) => NegotiationAction::simple(ActionKind::Confirm),
        Some(Stage::S2) => {
            let Some(ask) = thread.last_seller_offer else {
                return offer(rng);
            };
            let affordable = ask <= state.rp_b;
            let closing = (state.t_left as f64) < params.reserve_trigger * state.horizon as f64;
            if affordable && ask <= target + margin {
                NegotiationAction::simple(ActionKind::Accept)
            } else if affordable && closing && ask <= target + 2.0 * margin {
                NegotiationAction::simple(ActionKind::ReqToReserve)
            } else if state.t_left == 0 && lowest_seller_offer.is_none_or(|o| o > state.rp_b) {
                NegotiationAction::simple(ActionKind::Exit)
            } else {
                offer(rng)
            }
        }
        _ => offer(rng),
    }
}
