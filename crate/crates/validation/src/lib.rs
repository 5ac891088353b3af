//! Holds the `acceptance` test target, which trains and evaluates the
//! experiment matrices end to end. Run it with
//! `cargo test -p whiten-validation --test acceptance`.
