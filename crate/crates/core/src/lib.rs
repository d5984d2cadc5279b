//! NAIVE: a probabilistic temporal inference engine.
//!
//! A knowledge base is a graph of variables over typed ranges; the engine
//! evaluates any variable at an instant, interval or series of times by
//! backward chaining through declared procedures, propagating uncertainty
//! as probability densities. Inferred densities are cached and invalidated
//! by forward chaining when new observations arrive; evidence that receives
//! zero probability is reported as a contradiction.
//!
//! The numeric core is generic over the scalar type; the `*64` aliases
//! below are what most callers want.

pub mod density;
pub mod dsl;
pub mod engine;
pub mod kb;
pub mod scalar;
pub mod timebase;

pub use scalar::Real;

/// `f64` instantiations of the core types.
pub type Density64 = density::Density<f64>;
pub type Range64 = density::Range<f64>;
pub type EventSet64 = density::EventSet<f64>;
pub type GridPolicy64 = density::GridPolicy<f64>;
pub type Partition64 = density::Partition<f64>;
pub type KnowledgeBase64 = kb::KnowledgeBase<f64>;
pub type Procedure64 = kb::Procedure<f64>;
pub type VariableDef64 = kb::VariableDef<f64>;
pub type EvalContext64 = engine::EvalContext<f64>;
pub type EngineConfig64 = engine::EngineConfig<f64>;
pub type Observation64 = engine::Observation<f64>;
pub type Contradiction64 = engine::Contradiction<f64>;

/// `f32` instantiations, for memory-constrained embeddings.
pub type Density32 = density::Density<f32>;
pub type Range32 = density::Range<f32>;
pub type EventSet32 = density::EventSet<f32>;
pub type GridPolicy32 = density::GridPolicy<f32>;
pub type Partition32 = density::Partition<f32>;
pub type KnowledgeBase32 = kb::KnowledgeBase<f32>;
pub type EvalContext32 = engine::EvalContext<f32>;
pub type Observation32 = engine::Observation<f32>;
