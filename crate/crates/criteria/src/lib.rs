//! Acceptance suite for `softrigid`; see `tests/acceptance.rs`.
