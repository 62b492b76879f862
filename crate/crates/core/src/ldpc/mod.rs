//! LDPC codes: alist descriptors, systematic encoding, sum-product decoding
//! and iterative demapping/decoding.

mod bp;
mod code;
mod encode;
mod idd;

pub use bp::{bp_decode, hard_decisions, BpDecoder, BpOutput, LLR_CLIP};
pub use code::ParityCheck;
pub use encode::Encoder;
pub use idd::{idd_loop, IddOutput, SoftDemapper};
