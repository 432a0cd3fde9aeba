//! Deterministic and chance-constrained model predictive control of sewer
//! networks under uncertain rain forecasts.

pub mod distributions;
pub mod network;
pub mod simulator;
pub mod qp;
pub mod mpc;
pub mod ccmpc;
pub mod scenarios;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/network.md")]
    mod network {}
    #[doc = include_str!("../../../book/src/distributions.md")]
    mod distributions {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/qp.md")]
    mod qp {}
    #[doc = include_str!("../../../book/src/mpc.md")]
    mod mpc {}
    #[doc = include_str!("../../../book/src/ccmpc.md")]
    mod ccmpc {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
