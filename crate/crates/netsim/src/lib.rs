//! Desk-scale physical model of a RIS-assisted SWIPT network with RSMA and a
//! contextual-bandit PPO solver that optimizes it under a chosen set of
//! enforced constraint kinds.

pub mod env;
pub mod ppo;
