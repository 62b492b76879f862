// negated comparisons reject NaN; index loops walk several parallel arrays
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autoencoder;
pub mod channels;
pub mod error;
pub mod harness;
pub mod ldpc;
pub mod link;
pub mod ofdm;
pub mod trainers;
pub mod wgan;

pub use error::{Error, Result};
