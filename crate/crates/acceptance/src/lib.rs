//! Holds the `acceptance` test target, which prints one pass/fail line per
//! criterion. Run it with `cargo test -p macrogram-validation`.
