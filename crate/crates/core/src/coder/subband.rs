//! Bitplane entropy coding of quantization indices.
//!
//! Each subband is coded independently with fresh adaptive contexts, most
//! significant magnitude plane first: a coefficient that is not yet
//! significant codes a significance bit (context chosen by how many of its
//! eight neighbours are already significant) followed by a sign on the
//! plane where it becomes significant; already-significant coefficients
//! code refinement bits.  Byte offsets recorded after each plane let a
//! payload prefix decode to a coarser quantization.

use super::range::{Prob, RangeDecoder, RangeEncoder};
use crate::error::{Error, Result};

const SIG_CTX: usize = 4;

struct Contexts {
    sig: [Prob; SIG_CTX],
    sign: Prob,
    refine_first: Prob,
    refine_rest: Prob,
}

impl Contexts {
    fn new() -> Self {
        Contexts {
            sig: [Prob::default(); SIG_CTX],
            sign: Prob::default(),
            refine_first: Prob::default(),
            refine_rest: Prob::default(),
        }
    }
}

fn sig_context(sig: &[bool], h: usize, w: usize, y: usize, x: usize) -> usize {
    let mut n = 0usize;
    for dy in -1i64..=1 {
        for dx in -1i64..=1 {
            if dy == 0 && dx == 0 {
                continue;
            }
            let (yy, xx) = (y as i64 + dy, x as i64 + dx);
            if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w && sig[yy as usize * w + xx as usize] {
                n += 1;
            }
        }
    }
    n.min(SIG_CTX - 1)
}

/// Entropy-coded subband plus its quality-scalability metadata.
#[derive(Debug, Clone)]
pub struct SubbandPayload {
    pub bytes: Vec<u8>,
    pub nplanes: u8,
    /// `offsets[p]` = payload prefix length sufficient to decode planes
    /// `0..=p` (most significant first).
    pub plane_offsets: Vec<u32>,
}

pub fn encode_subband(indices: &[i64], h: usize, w: usize) -> Result<SubbandPayload> {
    if indices.len() != h * w {
        return Err(Error::config("subband index count does not match extents"));
    }
    let max_mag = indices.iter().map(|q| q.unsigned_abs()).max().unwrap_or(0);
    let nplanes = (64 - max_mag.leading_zeros()) as u8;
    let mut enc = RangeEncoder::new();
    let mut ctx = Contexts::new();
    let mut sig = vec![false; indices.len()];
    let mut sig_plane = vec![0u8; indices.len()];
    let mut offsets = Vec::with_capacity(nplanes as usize);
    for plane in (0..nplanes).rev() {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let mag = indices[i].unsigned_abs();
                let bit = (mag >> plane) & 1 == 1;
                if !sig[i] {
                    let c = sig_context(&sig, h, w, y, x);
                    enc.encode_bit(&mut ctx.sig[c], bit);
                    if bit {
                        sig[i] = true;
                        sig_plane[i] = plane;
                        enc.encode_bit(&mut ctx.sign, indices[i] < 0);
                    }
                } else {
                    let first = sig_plane[i] == plane + 1;
                    let p = if first {
                        &mut ctx.refine_first
                    } else {
                        &mut ctx.refine_rest
                    };
                    enc.encode_bit(p, bit);
                }
            }
        }
        offsets.push(enc.safe_prefix_len() as u32);
    }
    let bytes = enc.finish();
    let total = bytes.len() as u32;
    for o in &mut offsets {
        *o = (*o).min(total);
    }
    Ok(SubbandPayload {
        bytes,
        nplanes,
        plane_offsets: offsets,
    })
}

/// Decode the most significant `planes_to_read` planes; indices below the
/// cut reconstruct at the middle of their residual uncertainty interval.
/// Never reads past `payload`.
pub fn decode_subband(
    payload: &[u8],
    h: usize,
    w: usize,
    nplanes: u8,
    planes_to_read: u8,
) -> Result<Vec<i64>> {
    let n = h * w;
    let planes_to_read = planes_to_read.min(nplanes);
    if nplanes == 0 || planes_to_read == 0 {
        return Ok(vec![0; n]);
    }
    let mut dec = RangeDecoder::new(payload)?;
    let mut ctx = Contexts::new();
    let mut sig = vec![false; n];
    let mut sig_plane = vec![0u8; n];
    let mut mags = vec![0u64; n];
    let mut negs = vec![false; n];
    for plane in ((nplanes - planes_to_read)..nplanes).rev() {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if !sig[i] {
                    let c = sig_context(&sig, h, w, y, x);
                    if dec.decode_bit(&mut ctx.sig[c])? {
                        sig[i] = true;
                        sig_plane[i] = plane;
                        mags[i] = 1;
                        negs[i] = dec.decode_bit(&mut ctx.sign)?;
                    }
                } else {
                    let first = sig_plane[i] == plane + 1;
                    let p = if first {
                        &mut ctx.refine_first
                    } else {
                        &mut ctx.refine_rest
                    };
                    let bit = dec.decode_bit(p)?;
                    mags[i] = (mags[i] << 1) | bit as u64;
                }
            }
        }
    }
    let cut = nplanes - planes_to_read;
    let out = (0..n)
        .map(|i| {
            if !sig[i] {
                return 0i64;
            }
            let mut m = mags[i] << cut;
            if cut > 0 {
                m += 1 << (cut - 1);
            }
            let v = m as i64;
            if negs[i] {
                -v
            } else {
                v
            }
        })
        .collect();
    Ok(out)
}

/// Frame a payload for the codestream: u32 little-endian length, the bytes,
/// then the two-byte terminator `FF 7F`.
pub const FRAME_TERMINATOR: [u8; 2] = [0xFF, 0x7F];

pub fn write_framed(payload: &[u8], out: &mut Vec<u8>) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&FRAME_TERMINATOR);
}

/// Size of one framed payload.
pub fn framed_len(payload_len: usize) -> usize {
    4 + payload_len + 2
}

pub(crate) fn read_framed<'a>(cur: &mut crate::store::Cursor<'a>) -> Result<&'a [u8]> {
    let len = cur.u32()? as usize;
    if len > (1 << 30) {
        return Err(cur.err("unreasonable payload length"));
    }
    let payload = cur.take(len)?;
    let term = cur.take(2)?;
    if term != FRAME_TERMINATOR {
        return Err(cur.err("missing payload terminator"));
    }
    Ok(payload)
}
