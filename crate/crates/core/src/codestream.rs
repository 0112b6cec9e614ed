//! The compressed-image container.
//!
//! Layout: magic `LWAV`, u16 version, u32 width/height, u8 levels, a
//! length-prefixed structure name, the net configuration, a 32-byte model
//! digest, the f32 base quantizer step, then per-subband bitplane
//! truncation tables followed by the framed payloads in coding order
//! (LL first, then details coarse to fine).  Decoding refuses payloads
//! whose model digest does not match the supplied weight container, and a
//! byte budget decodes a prefix of the stream to a coarser reconstruction
//! using the truncation tables.

use crate::coder::subband::{decode_subband, encode_subband, framed_len, read_framed, write_framed};
use crate::coder::{class_delta, pyramid_classes, Band, ClassKey, Quantizer};
use crate::error::{Error, Result};
use crate::lifting::{analyze, level_band_shapes, synthesize, LiftingStructure, SubbandPyramid};
use crate::ops::{make_structure, NetConfig};
use crate::store::{Cursor, WeightStore};
use crate::tensor::Tensor;

pub const CODESTREAM_MAGIC: &[u8; 4] = b"LWAV";
pub const CODESTREAM_VERSION: u16 = 1;
/// Input samples are shifted to a signed range before analysis.
pub const LEVEL_SHIFT: f64 = 128.0;

#[derive(Debug, Clone)]
pub struct SubbandTable {
    pub class: ClassKey,
    pub nplanes: u8,
    /// Payload prefix lengths sufficient to decode the top `p+1` planes.
    pub offsets: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct CodestreamHeader {
    pub width: u32,
    pub height: u32,
    pub levels: u8,
    pub structure: String,
    pub config: NetConfig,
    pub digest: [u8; 32],
    pub base_delta: f32,
    pub tables: Vec<SubbandTable>,
}

impl CodestreamHeader {
    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(CODESTREAM_MAGIC);
        out.extend_from_slice(&CODESTREAM_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.levels);
        out.extend_from_slice(&(self.structure.len() as u16).to_le_bytes());
        out.extend_from_slice(self.structure.as_bytes());
        out.extend_from_slice(&(self.config.channels as u16).to_le_bytes());
        out.extend_from_slice(&(self.config.kernel as u16).to_le_bytes());
        out.extend_from_slice(&(self.config.residual_blocks as u16).to_le_bytes());
        out.push(self.config.compact as u8);
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.base_delta.to_le_bytes());
        out.extend_from_slice(&(self.tables.len() as u16).to_le_bytes());
        for t in &self.tables {
            out.push(t.class.level);
            out.push(t.class.band.to_u8());
            out.push(t.nplanes);
            for o in &t.offsets {
                out.extend_from_slice(&o.to_le_bytes());
            }
        }
    }

    fn parse(cur: &mut Cursor) -> Result<Self> {
        let magic = cur.take(4)?;
        if magic != CODESTREAM_MAGIC {
            return Err(cur.err("bad magic, expected LWAV"));
        }
        let version = cur.u16()?;
        if version != CODESTREAM_VERSION {
            return Err(cur.err(format!("unsupported codestream version {version}")));
        }
        let width = cur.u32()?;
        let height = cur.u32()?;
        if width == 0 || height == 0 || width > (1 << 20) || height > (1 << 20) {
            return Err(cur.err("unreasonable image extents"));
        }
        let levels = cur.u8()?;
        if levels == 0 || levels > 16 {
            return Err(cur.err("unreasonable level count"));
        }
        if (width as usize) < (1usize << levels) || (height as usize) < (1usize << levels) {
            return Err(cur.err("extents too small for the level count"));
        }
        let id_len = cur.u16()? as usize;
        if id_len > 256 {
            return Err(cur.err("unreasonable structure id length"));
        }
        let structure = String::from_utf8(cur.take(id_len)?.to_vec())
            .map_err(|_| cur.err("structure id is not UTF-8"))?;
        let channels = cur.u16()? as usize;
        let kernel = cur.u16()? as usize;
        let residual_blocks = cur.u16()? as usize;
        let compact = match cur.u8()? {
            0 => false,
            1 => true,
            _ => return Err(cur.err("invalid compact flag")),
        };
        let config = NetConfig::new(channels.max(1), kernel | 1, residual_blocks, compact)
            .map_err(|e| cur.err(format!("bad net config: {e}")))?;
        if channels == 0 || kernel % 2 == 0 {
            return Err(cur.err("invalid net configuration"));
        }
        let mut digest = [0u8; 32];
        digest.copy_from_slice(cur.take(32)?);
        let base_delta = cur.f32()?;
        if !(base_delta > 0.0) || !base_delta.is_finite() {
            return Err(cur.err("invalid base quantizer step"));
        }
        let count = cur.u16()? as usize;
        if count != 3 * levels as usize + 1 {
            return Err(cur.err("subband table count does not match level count"));
        }
        let mut tables = Vec::with_capacity(count);
        for _ in 0..count {
            let level = cur.u8()?;
            if level == 0 || level > levels {
                return Err(cur.err("subband level out of range"));
            }
            let band = Band::from_u8(cur.u8()?).map_err(|_| cur.err("invalid band code"))?;
            let nplanes = cur.u8()?;
            if nplanes > 64 {
                return Err(cur.err("unreasonable plane count"));
            }
            let mut offsets = Vec::with_capacity(nplanes as usize);
            let mut prev = 0u32;
            for _ in 0..nplanes {
                let o = cur.u32()?;
                if o < prev {
                    return Err(cur.err("truncation offsets must be non-decreasing"));
                }
                prev = o;
                offsets.push(o);
            }
            tables.push(SubbandTable {
                class: ClassKey { level, band },
                nplanes,
                offsets,
            });
        }
        Ok(CodestreamHeader {
            width,
            height,
            levels,
            structure,
            config,
            digest,
            base_delta,
            tables,
        })
    }
}

fn band_plane<'a>(pyr: &'a SubbandPyramid, class: ClassKey) -> &'a Tensor {
    let d = class.level as usize - 1;
    match class.band {
        Band::Ll => &pyr.ll,
        Band::Hl => &pyr.details[d].hl,
        Band::Lh => &pyr.details[d].lh,
        Band::Hh => &pyr.details[d].hh,
    }
}

fn band_plane_mut<'a>(pyr: &'a mut SubbandPyramid, class: ClassKey) -> &'a mut Tensor {
    let d = class.level as usize - 1;
    match class.band {
        Band::Ll => &mut pyr.ll,
        Band::Hl => &mut pyr.details[d].hl,
        Band::Lh => &mut pyr.details[d].lh,
        Band::Hh => &mut pyr.details[d].hh,
    }
}

/// Encode one image plane (values in `[0, 255]`) into a complete
/// codestream.
pub fn encode_image(
    image: &Tensor,
    structure_name: &str,
    config: NetConfig,
    weights: &WeightStore,
    digest: [u8; 32],
    levels: usize,
    base_delta: f64,
) -> Result<Vec<u8>> {
    // The header carries the step as f32; round once so encoder and decoder
    // quantize identically.
    let base_delta = base_delta as f32;
    if !(base_delta > 0.0) {
        return Err(Error::config("base quantizer step must be positive"));
    }
    let (structure, _) = make_structure(structure_name, config)?;
    crate::ops::validate_weights(&structure, weights)?;
    let shifted = image.map(|v| v - LEVEL_SHIFT);
    let pyramid = analyze(&shifted, &structure, weights, levels)?;
    let mut tables = Vec::new();
    let mut payloads = Vec::new();
    for class in pyramid_classes(levels) {
        let plane = band_plane(&pyramid, class);
        let q = Quantizer::new(class_delta(base_delta as f64, class, levels))?;
        let indices = q.quantize_plane(plane);
        let payload = encode_subband(&indices, plane.height(), plane.width())?;
        tables.push(SubbandTable {
            class,
            nplanes: payload.nplanes,
            offsets: payload.plane_offsets.clone(),
        });
        payloads.push(payload.bytes);
    }
    let header = CodestreamHeader {
        width: image.width() as u32,
        height: image.height() as u32,
        levels: levels as u8,
        structure: structure_name.to_string(),
        config,
        digest,
        base_delta,
        tables,
    };
    let mut out = Vec::new();
    header.write(&mut out);
    for p in &payloads {
        write_framed(p, &mut out);
    }
    Ok(out)
}

/// Parse only the header.
pub fn parse_header(bytes: &[u8]) -> Result<CodestreamHeader> {
    CodestreamHeader::parse(&mut Cursor::new(bytes))
}

/// Byte length of the header (the payload section starts here).
pub fn header_len(bytes: &[u8]) -> Result<usize> {
    let mut cur = Cursor::new(bytes);
    CodestreamHeader::parse(&mut cur)?;
    Ok(bytes.len() - cur.remaining())
}

/// Decode a codestream, optionally honouring a byte budget (quality
/// scalability: a prefix decodes to a coarser quantization).  `weights`
/// must carry the digest the stream was encoded with whenever the
/// structure has learned operators.
pub fn decode_image(
    bytes: &[u8],
    weights: Option<(&WeightStore, [u8; 32])>,
    max_bytes: Option<usize>,
) -> Result<(Tensor, CodestreamHeader)> {
    let visible = match max_bytes {
        Some(b) => &bytes[..b.min(bytes.len())],
        None => bytes,
    };
    let mut cur = Cursor::new(visible);
    let header = CodestreamHeader::parse(&mut cur).map_err(|e| match e {
        // A budget that cuts inside the header is its own failure mode.
        Error::Format { offset, msg } if max_bytes.is_some_and(|b| b < bytes.len()) => {
            Error::Format {
                offset,
                msg: format!("byte budget truncates the header: {msg}"),
            }
        }
        other => other,
    })?;
    let (structure, template) = make_structure(&header.structure, header.config)?;
    let empty = WeightStore::new();
    let weights_ref = if template.is_empty() {
        &empty
    } else {
        let (store, digest) = weights.ok_or_else(|| {
            Error::config(format!(
                "structure '{}' needs a weight container to decode",
                header.structure
            ))
        })?;
        if digest != header.digest {
            return Err(Error::DigestMismatch);
        }
        crate::ops::validate_weights(&structure, store)?;
        store
    };
    let shapes = level_band_shapes(
        header.height as usize,
        header.width as usize,
        header.levels as usize,
        structure.low_row_phase,
        structure.low_col_phase,
    );
    let mut pyramid = empty_pyramid(&shapes, header.width as usize, header.height as usize);
    for table in &header.tables {
        let class = table.class;
        let idx = shape_index(class);
        let (h, w) = shapes[class.level as usize - 1][idx];
        let q = Quantizer::new(class_delta(
            header.base_delta as f64,
            class,
            header.levels as usize,
        ))?;
        let indices = if cur.remaining() < 4 {
            vec![0i64; h * w]
        } else {
            let full_frame = 4 + peek_len(&cur)? + 2;
            if cur.remaining() >= full_frame {
                let payload = read_framed(&mut cur)?;
                decode_subband(payload, h, w, table.nplanes, table.nplanes)?
            } else {
                // Budget cuts inside this frame: decode the plane prefix the
                // available bytes cover, then stop consuming.
                let avail = cur.remaining().saturating_sub(4);
                let planes = table
                    .offsets
                    .iter()
                    .take_while(|&&o| (o as usize) <= avail)
                    .count() as u8;
                let _ = cur.u32()?;
                let payload = cur.take(avail)?;
                decode_subband(payload, h, w, table.nplanes, planes)?
            }
        };
        let plane = band_plane_mut(&mut pyramid, class);
        *plane = q.dequantize_plane(&indices, &[1, h, w]);
    }
    let rec = synthesize(&pyramid, &structure, weights_ref)?;
    Ok((rec.map(|v| v + LEVEL_SHIFT), header))
}

fn peek_len(cur: &Cursor) -> Result<usize> {
    Ok(u32::from_le_bytes(cur.peek4()?) as usize)
}

fn shape_index(class: ClassKey) -> usize {
    match class.band {
        Band::Ll => 0,
        Band::Hl => 1,
        Band::Lh => 2,
        Band::Hh => 3,
    }
}

fn empty_pyramid(
    shapes: &[[(usize, usize); 4]],
    width: usize,
    height: usize,
) -> SubbandPyramid {
    let details = shapes
        .iter()
        .map(|s| crate::lifting::DetailBands {
            hl: Tensor::plane(s[1].0, s[1].1),
            lh: Tensor::plane(s[2].0, s[2].1),
            hh: Tensor::plane(s[3].0, s[3].1),
        })
        .collect();
    let last = shapes.last().unwrap();
    SubbandPyramid {
        details,
        ll: Tensor::plane(last[0].0, last[0].1),
        source_height: height,
        source_width: width,
    }
}

/// The in-process reference path the codestream must reproduce bit-exactly:
/// analyze, quantize, midpoint dequantize, synthesize.
pub fn reference_reconstruction(
    image: &Tensor,
    structure: &LiftingStructure,
    weights: &WeightStore,
    levels: usize,
    base_delta: f64,
) -> Result<Tensor> {
    let base_delta = (base_delta as f32) as f64;
    let shifted = image.map(|v| v - LEVEL_SHIFT);
    let pyramid = analyze(&shifted, structure, weights, levels)?;
    let mut rec_pyr = pyramid.zeros_like();
    for class in pyramid_classes(levels) {
        let plane = band_plane(&pyramid, class);
        let q = Quantizer::new(class_delta(base_delta, class, levels))?;
        let indices = q.quantize_plane(plane);
        *band_plane_mut(&mut rec_pyr, class) =
            q.dequantize_plane(&indices, plane.shape());
    }
    let rec = synthesize(&rec_pyr, structure, weights)?;
    Ok(rec.map(|v| v + LEVEL_SHIFT))
}

/// Total payload bits a codestream would spend at this step, without
/// assembling the container (used by rate sweeps).
pub fn payload_bits(
    pyramid: &SubbandPyramid,
    levels: usize,
    base_delta: f64,
) -> Result<usize> {
    let base_delta = (base_delta as f32) as f64;
    let mut total = 0usize;
    for class in pyramid_classes(levels) {
        let plane = band_plane(pyramid, class);
        let q = Quantizer::new(class_delta(base_delta, class, levels))?;
        let indices = q.quantize_plane(plane);
        let payload = encode_subband(&indices, plane.height(), plane.width())?;
        total += 8 * framed_len(payload.bytes.len());
    }
    Ok(total)
}

/// Quantize/dequantize a pyramid at this step (decoder-side reference for
/// rate sweeps).
pub fn quantized_pyramid(
    pyramid: &SubbandPyramid,
    levels: usize,
    base_delta: f64,
) -> Result<SubbandPyramid> {
    let base_delta = (base_delta as f32) as f64;
    let mut out = pyramid.zeros_like();
    for class in pyramid_classes(levels) {
        let plane = band_plane(pyramid, class);
        let q = Quantizer::new(class_delta(base_delta, class, levels))?;
        let indices = q.quantize_plane(plane);
        *band_plane_mut(&mut out, class) = q.dequantize_plane(&indices, plane.shape());
    }
    Ok(out)
}
