//! Holds the `acceptance` integration target. Kept as its own package so the
//! long-running checks run after the library and CLI suites.
