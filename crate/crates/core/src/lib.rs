//! Repetitive action counting over frame-feature sequences with a
//! skim-then-focus network.
//!
//! A light skim branch reads a coarse view of the whole video once and
//! picks the frames most like the repeated action. A focus branch then reads
//! short full-resolution views, guided by a vector pooled from those frames,
//! and predicts per-frame densities whose sum is the count.
//!
//! ```
//! use skimfocus::config::{CountMode, ModelConfig};
//! use skimfocus::model::{PreparedVideo, SkimFocusNet};
//! use skimfocus::synth::{generate_sequence, SynthConfig};
//!
//! let synth = SynthConfig::default();
//! let seq = generate_sequence(0, 5, &synth, 1);
//! let mut cfg = ModelConfig::desk(synth.d_in);
//! cfg.d = 8;
//! cfg.heads = 2;
//! let net = SkimFocusNet::new(&cfg, 0)?;
//! let video = PreparedVideo::new(&seq, None, &cfg, CountMode::Standard)?;
//! let pred = net.count_video(&video)?;
//! assert!(pred.count >= 0.0);
//! # Ok::<(), skimfocus::Error>(())
//! ```
//!
//! The guide in `book/` walks through every stage; its snippets are compiled
//! as doctests of this crate.

pub mod arch;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod focus;
pub mod model;
pub mod nn;
pub mod plot;
pub mod skim;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/views.md")]
    mod views {}
    #[doc = include_str!("../../../book/src/skim.md")]
    mod skim {}
    #[doc = include_str!("../../../book/src/focus.md")]
    mod focus {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/specified.md")]
    mod specified {}
    #[doc = include_str!("../../../book/src/autodiff.md")]
    mod autodiff {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
