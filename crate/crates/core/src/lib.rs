//! Core of the formulink agent: the knowledge base, the token-budgeted LLM
//! gateway, dialogue memory, the staged dialogue orchestrator, the
//! formulation IR, and the scripted evaluation world.

pub mod agent;
pub mod formulation;
pub mod gateway;
pub mod kb;
pub mod memory;
pub mod sim;
