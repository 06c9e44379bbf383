use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::protocol::{Millis, ParseError};

/// Market density: total agents trading the resource.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Density {
    H,
    A,
    L,
}

/// Market ratio: buyers over sellers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RatioClass {
    H,
    A,
    L,
}

/// Zone of agreement between buyer and seller price ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Zoa {
    #[serde(rename = "100", alias = "H", alias = "H100")]
    H100,
    #[serde(rename = "60", alias = "A", alias = "A60")]
    A60,
    #[serde(rename = "10", alias = "L", alias = "L10")]
    L10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeadlineClass {
    Lg,
    A,
    Sh,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::H, Density::A, Density::L];

    pub fn choices(self) -> [u32; 3] {
        match self {
            Density::H => [30, 40, 50],
            Density::A => [18, 23, 28],
            Density::L => [8, 10, 12],
        }
    }
}

impl RatioClass {
    pub const ALL: [RatioClass; 3] = [RatioClass::H, RatioClass::A, RatioClass::L];

    pub fn choices(self) -> [MarketRatio; 3] {
        let r = |buyers, sellers| MarketRatio { buyers, sellers };
        match self {
            RatioClass::H => [r(10, 1), r(1, 1), r(1, 10)],
            RatioClass::A => [r(5, 1), r(1, 1), r(1, 5)],
            RatioClass::L => [r(2, 1), r(1, 1), r(1, 2)],
        }
    }
}

impl Zoa {
    pub const ALL: [Zoa; 3] = [Zoa::H100, Zoa::A60, Zoa::L10];

    /// Intervals for the seller's initial and reservation price.
    pub fn seller_intervals(self) -> ((f64, f64), (f64, f64)) {
        match self {
            Zoa::H100 => ((500.0, 550.0), (300.0, 350.0)),
            Zoa::A60 => ((580.0, 630.0), (380.0, 430.0)),
            Zoa::L10 => ((680.0, 730.0), (480.0, 530.0)),
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Zoa::H100 => 100,
            Zoa::A60 => 60,
            Zoa::L10 => 10,
        }
    }
}

impl DeadlineClass {
    pub const ALL: [DeadlineClass; 3] = [DeadlineClass::Lg, DeadlineClass::A, DeadlineClass::Sh];

    /// Inclusive bounds in milliseconds.
    pub fn interval_ms(self) -> (Millis, Millis) {
        match self {
            DeadlineClass::Lg => (151_000, 210_000),
            DeadlineClass::A => (91_000, 150_000),
            DeadlineClass::Sh => (30_000, 90_000),
        }
    }
}

macro_rules! knob_strings {
    ($ty:ty, $($variant:path => [$($name:literal),+]),+ $(,)?) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => [$($name),+][0]),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = ParseError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                $(if [$($name),+].iter().any(|n| n.eq_ignore_ascii_case(s)) {
                    return Ok($variant);
                })+
                Err(ParseError(format!(
                    "unknown {} `{}` (expected one of: {})",
                    stringify!($ty),
                    s,
                    [$($variant.as_str()),+].join(", ")
                )))
            }
        }
    };
}

knob_strings!(Density, Density::H => ["H"], Density::A => ["A"], Density::L => ["L"]);
knob_strings!(RatioClass, RatioClass::H => ["H"], RatioClass::A => ["A"], RatioClass::L => ["L"]);
knob_strings!(Zoa, Zoa::H100 => ["100", "H", "H100"], Zoa::A60 => ["60", "A", "A60"], Zoa::L10 => ["10", "L", "L10"]);
knob_strings!(DeadlineClass, DeadlineClass::Lg => ["Lg", "long"], DeadlineClass::A => ["A", "average"], DeadlineClass::Sh => ["Sh", "short"]);

/// The four qualitative market knobs plus the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarketConfig {
    pub md: Density,
    pub mr: RatioClass,
    pub zoa: Zoa,
    pub deadline_class: DeadlineClass,
    pub seed: u64,
}

impl MarketConfig {
    /// All 81 knob combinations, in (md, mr, zoa, deadline) order.
    pub fn sweep(seed: u64) -> Vec<MarketConfig> {
        let mut out = Vec::with_capacity(81);
        for md in Density::ALL {
            for mr in RatioClass::ALL {
                for zoa in Zoa::ALL {
                    for deadline_class in DeadlineClass::ALL {
                        out.push(MarketConfig {
                            md,
                            mr,
                            zoa,
                            deadline_class,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    /// The setting used for the SL/RL comparisons: low density, high ratio,
    /// long deadline.
    pub fn comparison(zoa: Zoa, seed: u64) -> MarketConfig {
        MarketConfig {
            md: Density::L,
            mr: RatioClass::H,
            zoa,
            deadline_class: DeadlineClass::Lg,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketRatio {
    pub buyers: u32,
    pub sellers: u32,
}

impl MarketRatio {
    pub fn buyer_fraction(&self) -> f64 {
        self.buyers as f64 / (self.buyers + self.sellers) as f64
    }
}

impl fmt::Display for MarketRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.buyers, self.sellers)
    }
}

pub const BUYER_IP_RANGE: (f64, f64) = (300.0, 350.0);
pub const BUYER_RP_RANGE: (f64, f64) = (500.0, 550.0);
/// Lowest and highest price appearing anywhere in the parameter table.
pub const GLOBAL_PRICE_RANGE: (f64, f64) = (300.0, 730.0);
pub const MAX_DENSITY: u32 = 50;
pub const TURN_LATENCY_MS: Millis = 500;
pub const LATENCY_JITTER_MS: Millis = 250;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub ip: f64,
    pub rp: f64,
}

/// Quantitative values drawn for one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledMarket {
    pub max_agents: u32,
    pub ratio: MarketRatio,
    pub buyer: PriceBounds,
    /// Prices of the sellers present at the start.
    pub sellers: Vec<PriceBounds>,
    pub initial_competitors: u32,
    pub zoa: Zoa,
    pub deadline_class: DeadlineClass,
    pub t_end: Millis,
    pub turn_latency: Millis,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.random_range(lo..=hi)
}

pub fn sample_buyer_prices<R: Rng + ?Sized>(rng: &mut R) -> PriceBounds {
    PriceBounds {
        ip: uniform(rng, BUYER_IP_RANGE),
        rp: uniform(rng, BUYER_RP_RANGE),
    }
}

pub fn sample_seller_prices<R: Rng + ?Sized>(zoa: Zoa, rng: &mut R) -> PriceBounds {
    let (ip, rp) = zoa.seller_intervals();
    PriceBounds {
        ip: uniform(rng, ip),
        rp: uniform(rng, rp),
    }
}

pub fn sample_deadline<R: Rng + ?Sized>(class: DeadlineClass, rng: &mut R) -> Millis {
    let (lo, hi) = class.interval_ms();
    rng.random_range(lo..=hi)
}

/// Draws the quantitative market for `config`. The initial population fills
/// the sampled density: one focal buyer, the rest split by the ratio with at
/// least one seller.
pub fn sample_market<R: Rng + ?Sized>(config: &MarketConfig, rng: &mut R) -> SampledMarket {
    let max_agents = config.md.choices()[rng.random_range(0..3)];
    let ratio = config.mr.choices()[rng.random_range(0..3)];
    let buyer = sample_buyer_prices(rng);
    let t_end = sample_deadline(config.deadline_class, rng);
    let others = max_agents - 1;
    let n_sellers = ((others as f64 * (1.0 - ratio.buyer_fraction())).round() as u32).clamp(1, others);
    let sellers = (0..n_sellers)
        .map(|_| sample_seller_prices(config.zoa, rng))
        .collect();
    SampledMarket {
        max_agents,
        ratio,
        buyer,
        sellers,
        initial_competitors: others - n_sellers,
        zoa: config.zoa,
        deadline_class: config.deadline_class,
        t_end,
        turn_latency: TURN_LATENCY_MS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(md: Density, zoa: Zoa, deadline_class: DeadlineClass) -> MarketConfig {
        MarketConfig {
            md,
            mr: RatioClass::A,
            zoa,
            deadline_class,
            seed: 0,
        }
    }

    #[test]
    fn sweep_has_81_distinct_settings() {
        let all = MarketConfig::sweep(1);
        assert_eq!(all.len(), 81);
        let set: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(set.len(), 81);
    }

    #[test]
    fn sampled_values_stay_in_table_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..300 {
            let c = MarketConfig::sweep(seed)[(seed % 81) as usize];
            let m = sample_market(&c, &mut rng);
            assert!(c.md.choices().contains(&m.max_agents));
            assert!(c.mr.choices().contains(&m.ratio));
            let (lo, hi) = c.deadline_class.interval_ms();
            assert!((lo..=hi).contains(&m.t_end));
            assert!(m.buyer.ip < m.buyer.rp);
            assert!((300.0..=350.0).contains(&m.buyer.ip));
            assert!((500.0..=550.0).contains(&m.buyer.rp));
            let ((ipl, iph), (rpl, rph)) = c.zoa.seller_intervals();
            for s in &m.sellers {
                assert!(s.rp < s.ip);
                assert!((ipl..=iph).contains(&s.ip) && (rpl..=rph).contains(&s.rp));
            }
            assert!(!m.sellers.is_empty());
            assert_eq!(1 + m.sellers.len() as u32 + m.initial_competitors, m.max_agents);
        }
    }

    #[test]
    fn documented_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = sample_market(&cfg(Density::H, Zoa::A60, DeadlineClass::Sh), &mut rng);
            assert!([30, 40, 50].contains(&m.max_agents));
            assert!(m.sellers.iter().all(|s| (580.0..=630.0).contains(&s.ip)));
            assert!((30_000..=90_000).contains(&m.t_end));
        }
    }

    #[test]
    fn knob_parsing() {
        assert_eq!("60".parse::<Zoa>().unwrap(), Zoa::A60);
        assert_eq!("L10".parse::<Zoa>().unwrap(), Zoa::L10);
        assert_eq!("lg".parse::<DeadlineClass>().unwrap(), DeadlineClass::Lg);
        assert_eq!("h".parse::<Density>().unwrap(), Density::H);
        let err = "Q".parse::<Density>().unwrap_err();
        assert!(err.0.contains("H, A, L"));
    }
}
