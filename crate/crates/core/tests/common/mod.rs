// Shared between the integration test binaries; each one uses a subset.
#![allow(dead_code)]

pub mod fixtures;
pub mod gradsuite;
pub mod oracle;
