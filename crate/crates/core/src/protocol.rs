//! Turn-based concurrent bilateral negotiation protocol.
//!
//! One buyer/seller dialogue (a *thread*) moves through stages S1..S4 and
//! ends in the terminal stage S5 with either an agreement or no deal:
//!
//! | stage | turn   | meaning                                         |
//! |-------|--------|-------------------------------------------------|
//! | S1    | buyer  | opening: buyer must make the first offer        |
//! | S2    | seller | buyer offer pending, seller responds            |
//! | S2    | buyer  | seller counter-offer pending, buyer responds    |
//! | S3    | seller | buyer asked to reserve the seller's last offer  |
//! | S4    | buyer  | offer reserved, buyer confirms or cancels       |
//!
//! Accept is terminal on its own; Confirm only finalizes a reservation and
//! Cancel releases it back to S2 with the seller to move. Either party may
//! Exit from any open state, whoever holds the turn.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated time in milliseconds.
pub type Millis = u64;

/// The action pool, in canonical order. The order is used for tie-breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Offer,
    ReqToReserve,
    Reserve,
    Cancel,
    Confirm,
    Accept,
    Exit,
}

impl ActionKind {
    pub const ALL: [ActionKind; 7] = [
        ActionKind::Offer,
        ActionKind::ReqToReserve,
        ActionKind::Reserve,
        ActionKind::Cancel,
        ActionKind::Confirm,
        ActionKind::Accept,
        ActionKind::Exit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Offer => "offer",
            ActionKind::ReqToReserve => "reqToReserve",
            ActionKind::Reserve => "reserve",
            ActionKind::Cancel => "cancel",
            ActionKind::Confirm => "confirm",
            ActionKind::Accept => "accept",
            ActionKind::Exit => "exit",
        }
    }
}

impl fmt::Display for ActionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ActionKind {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ActionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ParseError(format!("unknown action kind `{s}`")))
    }
}

/// An action together with its price, which is present exactly for offers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegotiationAction {
    kind: ActionKind,
    offer: Option<f64>,
}

impl NegotiationAction {
    /// An offer at `price`. Non-positive or non-finite prices are rejected.
    pub fn offer(price: f64) -> Result<Self, ProtocolError> {
        if !(price.is_finite() && price > 0.0) {
            return Err(ProtocolError::InvalidOffer(price));
        }
        Ok(Self {
            kind: ActionKind::Offer,
            offer: Some(price),
        })
    }

    /// A price-less action. Panics on `ActionKind::Offer`.
    pub fn simple(kind: ActionKind) -> Self {
        assert!(kind != ActionKind::Offer, "offers need a price");
        Self { kind, offer: None }
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn offer_value(&self) -> Option<f64> {
        self.offer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Buyer,
    Seller,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Buyer => Role::Seller,
            Role::Seller => Role::Buyer,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Buyer => "buyer",
            Role::Seller => "seller",
        }
    }
}

impl FromStr for Role {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "buyer" => Ok(Role::Buyer),
            "seller" => Ok(Role::Seller),
            _ => Err(ParseError(format!("unknown role `{s}`"))),
        }
    }
}

/// Non-terminal protocol stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
    S4,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::S1, Stage::S2, Stage::S3, Stage::S4];

    /// Zero-based index, used for one-hot encodings.
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    Agreement,
    NoDeal,
}

/// Protocol state of one thread. The terminal stage carries the outcome, so
/// an open state always has exactly one turn holder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolState {
    Open { stage: Stage, turn: Role },
    Terminal(Outcome),
}

impl ProtocolState {
    pub const INITIAL: ProtocolState = ProtocolState::Open {
        stage: Stage::S1,
        turn: Role::Buyer,
    };

    pub fn is_terminal(&self) -> bool {
        matches!(self, ProtocolState::Terminal(_))
    }

    pub fn stage(&self) -> Option<Stage> {
        match *self {
            ProtocolState::Open { stage, .. } => Some(stage),
            ProtocolState::Terminal(_) => None,
        }
    }

    pub fn turn(&self) -> Option<Role> {
        match *self {
            ProtocolState::Open { turn, .. } => Some(turn),
            ProtocolState::Terminal(_) => None,
        }
    }

    pub fn outcome(&self) -> Option<Outcome> {
        match *self {
            ProtocolState::Terminal(o) => Some(o),
            ProtocolState::Open { .. } => None,
        }
    }

    /// Label used in traces: `S1`..`S4`, `S5`.
    pub fn label(&self) -> &'static str {
        match self.stage() {
            Some(Stage::S1) => "S1",
            Some(Stage::S2) => "S2",
            Some(Stage::S3) => "S3",
            Some(Stage::S4) => "S4",
            None => "S5",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("illegal action {kind} by {actor:?} in state {state:?}")]
    IllegalAction {
        state: ProtocolState,
        actor: Role,
        kind: ActionKind,
    },
    #[error("offer value must be a positive finite price, got {0}")]
    InvalidOffer(f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ParseError(pub String);

/// A small set of action kinds, one bit per kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);

    pub fn of(kinds: &[ActionKind]) -> Self {
        kinds.iter().fold(Self::EMPTY, |s, &k| s.with(k))
    }

    pub fn with(self, kind: ActionKind) -> Self {
        ActionSet(self.0 | (1 << kind as u8))
    }

    pub fn contains(&self, kind: ActionKind) -> bool {
        self.0 & (1 << kind as u8) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    /// Members in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = ActionKind> + '_ {
        ActionKind::ALL.into_iter().filter(|k| self.contains(*k))
    }
}

/// Action kinds `actor` may take in `state`.
pub fn legal_actions(state: ProtocolState, actor: Role) -> ActionSet {
    use ActionKind::*;
    let (stage, turn) = match state {
        ProtocolState::Terminal(_) => return ActionSet::EMPTY,
        ProtocolState::Open { stage, turn } => (stage, turn),
    };
    if actor != turn {
        return ActionSet::of(&[Exit]);
    }
    match (stage, actor) {
        (Stage::S1, Role::Buyer) => ActionSet::of(&[Offer, Exit]),
        (Stage::S2, Role::Seller) => ActionSet::of(&[Offer, Accept, Exit]),
        (Stage::S2, Role::Buyer) => ActionSet::of(&[Offer, ReqToReserve, Accept, Exit]),
        (Stage::S3, Role::Seller) => ActionSet::of(&[Offer, Reserve, Exit]),
        (Stage::S4, Role::Buyer) => ActionSet::of(&[Cancel, Confirm, Exit]),
        // S1/S4 with the seller to move and S3 with the buyer to move are
        // unreachable from the initial state; only leaving is allowed.
        _ => ActionSet::of(&[Exit]),
    }
}

/// Successor of `state` after `actor` performs `action`.
pub fn transition(
    state: ProtocolState,
    action: &NegotiationAction,
    actor: Role,
) -> Result<ProtocolState, ProtocolError> {
    let kind = action.kind();
    if !legal_actions(state, actor).contains(kind) {
        return Err(ProtocolError::IllegalAction { state, actor, kind });
    }
    let open = |stage, turn| ProtocolState::Open { stage, turn };
    let next = match kind {
        ActionKind::Exit => ProtocolState::Terminal(Outcome::NoDeal),
        ActionKind::Accept | ActionKind::Confirm => ProtocolState::Terminal(Outcome::Agreement),
        ActionKind::Offer => open(Stage::S2, actor.other()),
        ActionKind::ReqToReserve => open(Stage::S3, Role::Seller),
        ActionKind::Reserve => open(Stage::S4, Role::Buyer),
        ActionKind::Cancel => open(Stage::S2, Role::Seller),
    };
    Ok(next)
}

/// Forces no-deal once `now` is strictly past `t_end`.
pub fn deadline_check(now: Millis, t_end: Millis, state: ProtocolState) -> ProtocolState {
    if now > t_end && !state.is_terminal() {
        ProtocolState::Terminal(Outcome::NoDeal)
    } else {
        state
    }
}

/// Mutable record of one buyer/seller dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationThreadState {
    pub seller_id: u32,
    pub protocol: ProtocolState,
    /// Lowest price offered by either side so far.
    pub x_best: Option<f64>,
    pub last_seller_offer: Option<f64>,
    pub last_buyer_offer: Option<f64>,
    pub last_seller_action_at: Option<Millis>,
    pub start_time: Millis,
    pub reserved_offer: Option<f64>,
}

impl NegotiationThreadState {
    pub fn new(seller_id: u32, start_time: Millis) -> Self {
        Self {
            seller_id,
            protocol: ProtocolState::INITIAL,
            x_best: None,
            last_seller_offer: None,
            last_buyer_offer: None,
            last_seller_action_at: None,
            start_time,
            reserved_offer: None,
        }
    }

    /// Applies `action` through [`transition`] and updates the bookkeeping.
    /// Returns the agreed price when the action concludes a deal.
    pub fn apply(
        &mut self,
        action: &NegotiationAction,
        actor: Role,
        now: Millis,
    ) -> Result<Option<f64>, ProtocolError> {
        let before = self.protocol;
        let next = transition(before, action, actor)?;
        if actor == Role::Seller {
            self.last_seller_action_at = Some(now);
        }
        let mut agreed = None;
        match action.kind() {
            ActionKind::Offer => {
                let x = action.offer_value().expect("offer carries a price");
                match actor {
                    Role::Buyer => self.last_buyer_offer = Some(x),
                    Role::Seller => self.last_seller_offer = Some(x),
                }
                self.x_best = Some(self.x_best.map_or(x, |b| b.min(x)));
                self.reserved_offer = None;
            }
            ActionKind::ReqToReserve => self.reserved_offer = self.last_seller_offer,
            ActionKind::Reserve => {}
            ActionKind::Cancel => self.reserved_offer = None,
            ActionKind::Confirm => agreed = self.reserved_offer.take(),
            ActionKind::Accept => {
                // Accepting takes the counterparty's standing offer.
                agreed = match actor {
                    Role::Buyer => self.last_seller_offer,
                    Role::Seller => self.last_buyer_offer,
                };
                self.reserved_offer = None;
            }
            ActionKind::Exit => self.reserved_offer = None,
        }
        self.protocol = next;
        Ok(agreed)
    }

    pub fn force_no_deal(&mut self) {
        if !self.protocol.is_terminal() {
            self.protocol = ProtocolState::Terminal(Outcome::NoDeal);
            self.reserved_offer = None;
        }
    }
}

/// One line of an episode trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode_id: u64,
    pub thread_id: u64,
    pub time_ms: Millis,
    pub actor: String,
    pub action_kind: String,
    pub offer_value: Option<f64>,
    pub stage_after: String,
}

pub const TRACE_HEADER: &str = "episode_id,thread_id,time_ms,actor,action_kind,offer_value,stage_after";

/// Writes trace records as CSV with a header row.
pub fn write_trace<W: std::io::Write>(out: W, records: &[TraceRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace CSV, validating action kinds, actors and stage labels.
pub fn parse_trace(input: &[u8]) -> Result<Vec<TraceRecord>, ParseError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| ParseError(e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != TRACE_HEADER {
        return Err(ParseError(format!("unexpected trace header `{headers}`")));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<TraceRecord>() {
        let r = row.map_err(|e| ParseError(e.to_string()))?;
        r.actor.parse::<Role>()?;
        let kind = r.action_kind.parse::<ActionKind>()?;
        if !matches!(r.stage_after.as_str(), "S1" | "S2" | "S3" | "S4" | "S5") {
            return Err(ParseError(format!("bad stage `{}`", r.stage_after)));
        }
        match (kind, r.offer_value) {
            (ActionKind::Offer, Some(v)) if v.is_finite() && v > 0.0 => {}
            (ActionKind::Offer, _) => return Err(ParseError("offer row without a valid price".into())),
            (_, Some(_)) => return Err(ParseError("price on a non-offer row".into())),
            (_, None) => {}
        }
        out.push(r);
    }
    Ok(out)
}
