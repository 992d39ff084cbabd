//! Signal processing, augmentation, a small reverse-mode autodiff engine, and
//! the contrastive objectives used to learn embeddings from unlabeled
//! hydrophone audio.
//!
//! The crate is `no_std` (with `alloc`); file formats, timing and the command
//! line live in the `hydroembed` companion crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audio;
pub mod augment;
pub mod dsp;
pub mod error;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
