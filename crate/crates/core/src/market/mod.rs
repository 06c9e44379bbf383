//! Market settings and the event-driven engine.

pub mod config;
pub mod engine;

pub use config::{DeadlineClass, Density, MarketConfig, RatioClass, SampledMarket, Zoa};
pub use engine::{
    CloseCause, ThreadClosed, ThreadId, AgentId,
    run_episode, BuyerPolicy, DecisionView, EpisodeRun, EpisodeSpec, IllegalActionMode, Market, MarketError,
    RandomLegalPolicy, TraceScope,
};
