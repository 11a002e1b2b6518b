//! Shared test oracles: central finite differences, a per-op gradient-check
//! suite, and a brute-force assignment enumerator. Everything here is
//! independent of the library's own differentiation and matching code paths.
#![allow(dead_code)]

pub mod assignment;
pub mod fd;
pub mod gradsuite;
pub mod selection;
