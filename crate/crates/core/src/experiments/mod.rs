//! Reusable experiment setups shared by the CLI and the test suites.

pub mod controlled;
pub mod fixtures;
pub mod oracle;
pub mod selftest;

pub use controlled::{affine_fit_residual, controlled_sweep, sweep_csv, sweep_point, SweepPoint};
pub use fixtures::{density_fixture, fixture_cost, fixture_ledger, DensityFixture, FixtureCost};
pub use oracle::{compare_with_oracle, random_case, Mismatch, OracleCase};
pub use selftest::{self_test, Check, SelfTestOptions};
