mod cloud;
mod collapse;
mod quench;
mod selftest;

pub use cloud::cmd_cloud;
pub use collapse::cmd_collapse;
pub use quench::{cmd_quench, cmd_spectroscopy};
pub use selftest::cmd_selftest;

/// How a run ended when it did not fail outright.
#[derive(Clone, Debug, PartialEq)]
pub enum Status {
    Complete,
    /// Some jobs failed; what was computed has been written.
    Partial(String),
}

/// File-name fragment for a control value: `0.35` becomes `0p35`.
pub(crate) fn tag(value: f64) -> String {
    format!("{value}").replace('-', "m").replace('.', "p")
}
