//! State featurization, supervision datasets and the correlation audit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::market::config::{MarketConfig, GLOBAL_PRICE_RANGE, MAX_DENSITY};
use crate::market::engine::{run_episode, BuyerPolicy, DecisionView, EpisodeSpec};
use crate::protocol::{ActionKind, Millis, NegotiationAction, ParseError, Stage};
use crate::strategies::{teacher_decide, SellerStrategy, TeacherParams};
use crate::{derive_seed, SimRng};

/// Width of the encoded state vector.
pub const FEATURE_DIM: usize = 10;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "ns_r", "nc_r", "s1", "s2", "s3", "s4", "x_best", "t_left", "ip_b", "rp_b",
];

/// What the buyer knows about one thread and its market at a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedState {
    /// Sellers the buyer is negotiating with.
    pub ns_r: u32,
    /// Other buyers negotiating with the same sellers.
    pub nc_r: u32,
    pub stage: Stage,
    /// Best price exchanged in the thread; the buyer's initial price before
    /// any offer was made.
    pub x_best: f64,
    /// Deadline minus the time of the seller's last action.
    pub t_left: Millis,
    /// The buyer's total negotiation time, used to normalize `t_left`.
    pub horizon: Millis,
    pub ip_b: f64,
    pub rp_b: f64,
}

impl ObservedState {
    pub fn time_left_fraction(&self) -> f64 {
        if self.horizon == 0 {
            return 0.0;
        }
        (self.t_left as f64 / self.horizon as f64).clamp(0.0, 1.0)
    }
}

fn scale_price(p: f64) -> f64 {
    let (lo, hi) = GLOBAL_PRICE_RANGE;
    (p - lo) / (hi - lo)
}

fn unscale_price(v: f64) -> f64 {
    let (lo, hi) = GLOBAL_PRICE_RANGE;
    lo + v * (hi - lo)
}

/// Fixed-scale encoding shared by every market setting.
pub fn encode(state: &ObservedState) -> [f64; FEATURE_DIM] {
    let mut f = [0.0; FEATURE_DIM];
    f[0] = state.ns_r as f64 / MAX_DENSITY as f64;
    f[1] = state.nc_r as f64 / MAX_DENSITY as f64;
    f[2 + state.stage.index()] = 1.0;
    f[6] = scale_price(state.x_best);
    f[7] = state.time_left_fraction();
    f[8] = scale_price(state.ip_b);
    f[9] = scale_price(state.rp_b);
    f
}

/// Buyer bounds recovered from an encoded vector.
pub fn decode_bounds(features: &[f64]) -> (f64, f64) {
    (unscale_price(features[8]), unscale_price(features[9]))
}

/// The five decisions of the buyer's discrete head, in head order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionLabel {
    CounterOffer,
    Accept,
    Confirm,
    ReqToReserve,
    Exit,
}

impl DecisionLabel {
    pub const ALL: [DecisionLabel; 5] = [
        DecisionLabel::CounterOffer,
        DecisionLabel::Accept,
        DecisionLabel::Confirm,
        DecisionLabel::ReqToReserve,
        DecisionLabel::Exit,
    ];
    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn action_kind(self) -> ActionKind {
        match self {
            DecisionLabel::CounterOffer => ActionKind::Offer,
            DecisionLabel::Accept => ActionKind::Accept,
            DecisionLabel::Confirm => ActionKind::Confirm,
            DecisionLabel::ReqToReserve => ActionKind::ReqToReserve,
            DecisionLabel::Exit => ActionKind::Exit,
        }
    }

    pub fn from_action(kind: ActionKind) -> Option<Self> {
        Some(match kind {
            ActionKind::Offer => DecisionLabel::CounterOffer,
            ActionKind::Accept => DecisionLabel::Accept,
            ActionKind::Confirm => DecisionLabel::Confirm,
            ActionKind::ReqToReserve => DecisionLabel::ReqToReserve,
            ActionKind::Exit => DecisionLabel::Exit,
            ActionKind::Reserve | ActionKind::Cancel => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionLabel::CounterOffer => "counter-offer",
            DecisionLabel::Accept => "accept",
            DecisionLabel::Confirm => "confirm",
            DecisionLabel::ReqToReserve => "reqToReserve",
            DecisionLabel::Exit => "exit",
        }
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DecisionLabel {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DecisionLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| ParseError(format!("unknown label `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub features: [f64; FEATURE_DIM],
    pub label: DecisionLabel,
    /// Offered price, present exactly for counter-offers.
    pub label_offer: Option<f64>,
}

impl DatasetRow {
    /// Offer target mapped onto the unit interval of the buyer's bounds.
    pub fn offer_unit(&self) -> Option<f64> {
        let (ip, rp) = decode_bounds(&self.features);
        self.label_offer.map(|x| ((x - ip) / (rp - ip)).clamp(0.0, 1.0))
    }
}

pub const DATASET_HEADER: &str = "ns_r,nc_r,s1,s2,s3,s4,x_best,t_left,ip_b,rp_b,label_action,label_offer";

#[derive(Serialize, Deserialize)]
struct CsvRow {
    ns_r: f64,
    nc_r: f64,
    s1: f64,
    s2: f64,
    s3: f64,
    s4: f64,
    x_best: f64,
    t_left: f64,
    ip_b: f64,
    rp_b: f64,
    label_action: String,
    label_offer: Option<f64>,
}

pub fn write_dataset<W: std::io::Write>(out: W, rows: &[DatasetRow]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(DATASET_HEADER.split(','))?;
    }
    for r in rows {
        let f = r.features;
        w.serialize(CsvRow {
            ns_r: f[0],
            nc_r: f[1],
            s1: f[2],
            s2: f[3],
            s3: f[4],
            s4: f[5],
            x_best: f[6],
            t_left: f[7],
            ip_b: f[8],
            rp_b: f[9],
            label_action: r.label.as_str().to_string(),
            label_offer: r.label_offer,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a dataset CSV. Rejects non-finite features, unknown labels and
/// offers that are missing, superfluous or outside the buyer's bounds.
pub fn parse_dataset(input: &[u8]) -> Result<Vec<DatasetRow>, ParseError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| ParseError(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != DATASET_HEADER {
        return Err(ParseError(format!("unexpected dataset header `{headers}`")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let r = rec.map_err(|e| ParseError(e.to_string()))?;
        let features = [
            r.ns_r, r.nc_r, r.s1, r.s2, r.s3, r.s4, r.x_best, r.t_left, r.ip_b, r.rp_b,
        ];
        if features.iter().any(|v| !v.is_finite()) {
            return Err(ParseError(format!("row {i}: non-finite feature")));
        }
        let label: DecisionLabel = r.label_action.parse()?;
        let (ip, rp) = decode_bounds(&features);
        if !(ip < rp) {
            return Err(ParseError(format!("row {i}: ip_b must be below rp_b")));
        }
        match (label, r.label_offer) {
            (DecisionLabel::CounterOffer, Some(x)) if x.is_finite() && x >= ip - 1e-6 && x <= rp + 1e-6 => {}
            (DecisionLabel::CounterOffer, _) => {
                return Err(ParseError(format!("row {i}: counter-offer needs a price within bounds")))
            }
            (_, Some(_)) => return Err(ParseError(format!("row {i}: price on a non-offer label"))),
            (_, None) => {}
        }
        rows.push(DatasetRow {
            features,
            label,
            label_offer: r.label_offer,
        });
    }
    Ok(rows)
}

/// Buyer policy that follows the teacher heuristic and can log its decisions.
#[derive(Debug, Clone)]
pub struct TeacherPolicy {
    pub params: TeacherParams,
    pub record: bool,
    pub rows: Vec<DatasetRow>,
}

impl TeacherPolicy {
    pub fn new(params: TeacherParams) -> Self {
        Self {
            params,
            record: false,
            rows: Vec::new(),
        }
    }

    pub fn recording(params: TeacherParams) -> Self {
        Self {
            record: true,
            ..Self::new(params)
        }
    }
}

impl BuyerPolicy for TeacherPolicy {
    fn decide(&mut self, view: &DecisionView<'_>, rng: &mut SimRng) -> NegotiationAction {
        let lowest = view.seller_offers.iter().copied().reduce(f64::min);
        let action = teacher_decide(&view.observed, view.thread, lowest, &self.params, rng);
        if self.record {
            if let Some(label) = DecisionLabel::from_action(action.kind()) {
                self.rows.push(DatasetRow {
                    features: encode(&view.observed),
                    label,
                    label_offer: action.offer_value(),
                });
            }
        }
        action
    }
}

/// Runs teacher-driven episodes and collects one row per focal buyer
/// decision, shuffled with `seed`. Episode `i` uses `configs[i % len]` and
/// cycles through `sellers` once per pass over the configs.
pub fn generate_dataset(
    configs: &[MarketConfig],
    sellers: &[SellerStrategy],
    teacher: TeacherParams,
    episodes: usize,
    seed: u64,
) -> Vec<DatasetRow> {
    if configs.is_empty() || sellers.is_empty() {
        return Vec::new();
    }
    let per_episode: Vec<Vec<DatasetRow>> = (0..episodes as u64)
        .into_par_iter()
        .map(|ep| {
            let i = ep as usize;
            let config = MarketConfig {
                seed,
                ..configs[i % configs.len()]
            };
            let seller = sellers[(i / configs.len()) % sellers.len()];
            let spec = EpisodeSpec::new(config, ep, seller, teacher);
            let mut policy = TeacherPolicy::recording(teacher);
            let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[ep, 0x7ea]));
            run_episode(&spec, &mut policy, &mut rng).expect("teacher actions are always legal");
            policy.rows
        })
        .collect();
    let mut rows: Vec<DatasetRow> = per_episode.into_iter().flatten().collect();
    let mut rng = SimRng::seed_from_u64(derive_seed(seed, &[0x5f1f]));
    rows.shuffle(&mut rng);
    rows
}

/// Correlation matrix of the columns of a row-major table.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    pub matrix: Vec<Vec<f64>>,
    /// Columns with zero variance; their correlations are reported as 0.
    pub degenerate: Vec<bool>,
}

impl Correlation {
    /// Largest absolute off-diagonal coefficient.
    pub fn max_off_diagonal(&self) -> f64 {
        let n = self.matrix.len();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m = m.max(self.matrix[i][j].abs());
                }
            }
        }
        m
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W, names: &[&str]) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![String::new()];
        header.extend(names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (i, row) in self.matrix.iter().enumerate() {
            let mut rec = vec![names.get(i).map_or(i.to_string(), |s| s.to_string())];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pearson correlation between all pairs of columns.
///
/// Uses centered sums in a single pass over the pairs, so it stays accurate
/// for columns with large offsets. Returns `None` with fewer than two rows.
pub fn pearson_matrix(rows: &[Vec<f64>]) -> Option<Correlation> {
    if rows.len() < 2 {
        return None;
    }
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    let degenerate: Vec<bool> = (0..d).map(|i| cov[i][i] <= 0.0).collect();
    let mut matrix = vec![vec![0.0; d]; d];
    for i in 0..d {
        matrix[i][i] = 1.0;
        for j in (i + 1)..d {
            let rho = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                (cov[i][j] / (cov[i][i].sqrt() * cov[j][j].sqrt())).clamp(-1.0, 1.0)
            };
            matrix[i][j] = rho;
            matrix[j][i] = rho;
        }
    }
    Some(Correlation { matrix, degenerate })
}

/// The seven buyer-state attributes behind a dataset row, with the protocol
/// stage as a single ordinal column (1..4).
pub const ATTRIBUTE_NAMES: [&str; 7] = ["ns_r", "nc_r", "s_neg", "x_best", "t_left", "ip_b", "rp_b"];

pub fn attribute_columns(row: &DatasetRow) -> Vec<f64> {
    let f = &row.features;
    let stage = (2..6).find(|&i| f[i] > 0.5).map_or(0.0, |i| (i - 1) as f64);
    vec![f[0], f[1], stage, f[6], f[7], f[8], f[9]]
}
