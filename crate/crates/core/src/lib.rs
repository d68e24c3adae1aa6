//! Semantic parsing over tables with macro grammars: a lambda DCS executor,
//! a floating base grammar with beam search, macro induction from
//! consistent derivations, nearest-neighbor triggering of macro rules, and
//! an online learner trained from denotations.

pub mod dataset;
pub mod grammar;
pub mod kb;
pub mod learner;
pub mod lf;
pub mod macros;
pub mod parser;
pub mod synthetic;
pub mod trigger;

pub type Model = learner::Model<f64>;
pub type ModelF32 = learner::Model<f32>;
pub type Learner = learner::Learner<f64>;
pub type LearnerF32 = learner::Learner<f32>;
