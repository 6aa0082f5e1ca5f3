//! Integration and acceptance tests for `porflow`.
//!
//! Everything lives in one test binary so that a red acceptance criterion
//! does not stop the remaining suites from running.


mod criteria;
mod pipeline;
mod unit_suites;
mod verification_checks;
