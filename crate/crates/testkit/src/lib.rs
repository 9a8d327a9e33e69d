//! Reference implementations the test suites compare against.
//!
//! Everything in this crate is deliberately written with textbook algorithms
//! and no shared code with the main library, so that agreement between the
//! two is meaningful evidence of correctness rather than a tautology. Nothing
//! here is tuned for speed; problem sizes in the tests are tiny.

pub mod gen;
pub mod kalman;
pub mod lp;
