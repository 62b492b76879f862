use num_complex::Complex64;

use super::bp::{hard_decisions, BpDecoder, LLR_CLIP};
use super::code::ParityCheck;
use crate::error::{Error, Result};

/// A soft demapper usable inside the IDD loop.
pub trait SoftDemapper {
    fn bits_per_symbol(&self) -> usize;

    /// Writes `m` extrinsic LLRs per symbol into `out`.
    ///
    /// `snr_db` holds one value per symbol; `prior` holds `m` a-priori LLRs
    /// per symbol (all zero when none are available).
    fn demap(&self, y: &[Complex64], snr_db: &[f64], prior: &[f64], out: &mut [f64]) -> Result<()>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct IddOutput {
    /// BP posterior after the last iteration run.
    pub posterior: Vec<f64>,
    /// Iterations actually run (early exit on a satisfied syndrome).
    pub iterations: usize,
}

impl IddOutput {
    pub fn hard_decisions(&self) -> Vec<u8> {
        hard_decisions(&self.posterior)
    }
}

/// Iterative demapping and decoding.
///
/// Each iteration demaps with the decoder's extrinsic LLRs as a-priori input
/// (zero in the first iteration), then runs `bp_iters` flooding BP iterations
/// that continue from the previous check messages. The loop stops early once the
/// posterior hard decisions form a codeword.
pub fn idd_loop<D: SoftDemapper + ?Sized>(
    y: &[Complex64],
    snr_db: &[f64],
    demapper: &D,
    pc: &ParityCheck,
    decoder: &mut BpDecoder,
    n_idd: usize,
    bp_iters: usize,
) -> Result<IddOutput> {
    let m = demapper.bits_per_symbol();
    if n_idd == 0 || bp_iters == 0 {
        return Err(Error::InvalidArgument(
            "IDD needs at least one iteration".into(),
        ));
    }
    if y.len() * m != pc.n() {
        return Err(Error::InvalidArgument(format!(
            "{} symbols x {m} bits does not fill a codeword of {} bits",
            y.len(),
            pc.n()
        )));
    }
    if snr_db.len() != y.len() {
        return Err(Error::Length {
            what: "per-symbol SNR",
            expected: y.len(),
            got: snr_db.len(),
        });
    }
    decoder.reset();
    let mut prior = vec![0.0; pc.n()];
    let mut channel = vec![0.0; pc.n()];
    let mut posterior = Vec::new();
    for it in 1..=n_idd {
        demapper.demap(y, snr_db, &prior, &mut channel)?;
        for _ in 0..bp_iters {
            decoder.iterate(&channel)?;
        }
        let out = decoder.output(&channel);
        posterior = out.posterior;
        if it == n_idd || pc.is_codeword(&hard_decisions(&posterior)) {
            return Ok(IddOutput {
                posterior,
                iterations: it,
            });
        }
        for (p, e) in prior.iter_mut().zip(&out.extrinsic) {
            *p = e.clamp(-LLR_CLIP, LLR_CLIP);
        }
    }
    Ok(IddOutput {
        posterior,
        iterations: n_idd,
    })
}
