//! Utility and per-action rewards of the learning buyer.

use serde::{Deserialize, Serialize};

use crate::protocol::Millis;

/// How elapsed time enters the discounted utility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscountVariant {
    /// Factor `(t / t_end)^d`.
    #[default]
    AsWritten,
    /// Factor `(1 - t / t_end)^d`.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub discount_exponent: f64,
    pub variant: DiscountVariant,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            discount_exponent: 0.6,
            variant: DiscountVariant::AsWritten,
        }
    }
}

/// Buyer bounds and deadline needed to score a price.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityFrame {
    pub ip_b: f64,
    pub rp_b: f64,
    pub t_end: Millis,
}

pub fn metric_utility(x: f64, ip_b: f64, rp_b: f64) -> f64 {
    (rp_b - x) / (rp_b - ip_b)
}

/// Discounted utility of agreeing on `x` at elapsed time `t`.
pub fn utility(x: f64, t: Millis, frame: &UtilityFrame, spec: &RewardSpec) -> f64 {
    let frac = (t as f64 / frame.t_end as f64).clamp(0.0, 1.0);
    let base = match spec.variant {
        DiscountVariant::AsWritten => frac,
        DiscountVariant::Inverted => 1.0 - frac,
    };
    metric_utility(x, frame.ip_b, frame.rp_b) * base.powf(spec.discount_exponent)
}

/// What the buyer's last action led to.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardContext<'a> {
    Agreement { price: f64 },
    NoDeal,
    CounterOffer { price: f64, seller_offers: &'a [f64] },
    Other,
}

/// Reward for an offer given the sellers' standing offers. Rewards are
/// clipped to [-1, 1], which only matters for prices far above `rp_b`.
pub fn reward_regression(
    x: f64,
    seller_offers: &[f64],
    t: Millis,
    frame: &UtilityFrame,
    spec: &RewardSpec,
) -> f64 {
    if t > frame.t_end {
        return 0.0;
    }
    if seller_offers.iter().all(|&o| x <= o) {
        utility(x, t, frame, spec).clamp(-1.0, 1.0)
    } else if seller_offers.iter().all(|&o| x > o) {
        -1.0
    } else {
        0.0
    }
}

pub fn reward_classification(ctx: &RewardContext<'_>, t: Millis, frame: &UtilityFrame, spec: &RewardSpec) -> f64 {
    match *ctx {
        RewardContext::Agreement { price } if t <= frame.t_end => {
            utility(price, t, frame, spec).clamp(-1.0, 1.0)
        }
        RewardContext::NoDeal if t <= frame.t_end => -1.0,
        RewardContext::CounterOffer { price, seller_offers } => {
            reward_regression(price, seller_offers, t, frame, spec)
        }
        _ => 0.0,
    }
}
