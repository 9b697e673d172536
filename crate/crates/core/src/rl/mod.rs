//! Risk-seeking policy-gradient searcher and the history collector built on it.

pub mod corpus;
pub mod policy;
pub mod search;
