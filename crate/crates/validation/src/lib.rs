//! Holds the `acceptance` test target. Run it with
//! `cargo test -p adtsat-validation --test acceptance -- --nocapture`.
