//! Little-endian binary artifacts.
//!
//! | magic  | contents                                                      |
//! |--------|---------------------------------------------------------------|
//! | `S2B1` | entity embeddings: `E`, `d`, centers, raw offsets, contexts, β |
//! | `S2BQ` | box codebook and packed codes of every set                    |
//! | `S2BN` | Set2Bin sketches, one bit-packed row per set                  |
//! | `S2BE` | single-vector models (Set2Vec, order), tagged by method       |
//! | `S2BP` | PQ center/offset codebooks and packed codes                   |

use std::fs;
use std::path::Path;

use crate::baselines::{BinSketch, OrderModel, PqCodes, PqModel, VecModel};
use crate::corpus::Measure;
use crate::error::{Error, Result};
use crate::model::EntityEmbeddings;
use crate::quant::{code_width, CodeAssignment, Codebook};

pub const MAGIC_EMBEDDINGS: [u8; 4] = *b"S2B1";
pub const MAGIC_CODEBOOK: [u8; 4] = *b"S2BQ";
pub const MAGIC_SKETCH: [u8; 4] = *b"S2BN";
pub const MAGIC_VECTORS: [u8; 4] = *b"S2BE";
pub const MAGIC_PQ: [u8; 4] = *b"S2BP";

const TAG_VEC: u8 = 1;
const TAG_ORDER: u8 = 2;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}

/// Packs `width`-bit codes least-significant bit first.
pub fn pack_codes(codes: &[u32], width: u32) -> Vec<u8> {
    let mut out = vec![0u8; (codes.len() * width as usize).div_ceil(8)];
    let mut bit = 0usize;
    for &c in codes {
        for b in 0..width {
            if c >> b & 1 == 1 {
                out[bit / 8] |= 1 << (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack_codes(bytes: &[u8], width: u32, count: usize) -> Result<Vec<u32>> {
    if bytes.len() != (count * width as usize).div_ceil(8) {
        return Err(corrupt(format!("{} bytes cannot hold {count} codes of {width} bits", bytes.len())));
    }
    let mut bit = 0usize;
    Ok((0..count)
        .map(|_| {
            let mut c = 0u32;
            for b in 0..width {
                c |= ((bytes[bit / 8] >> (bit % 8)) as u32 & 1) << b;
                bit += 1;
            }
            c
        })
        .collect())
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }

    fn u8(&mut self, x: u8) -> &mut Self {
        self.0.push(x);
        self
    }

    fn u32(&mut self, x: usize) -> &mut Self {
        let x = u32::try_from(x).expect("size exceeds u32");
        self.bytes(&x.to_le_bytes())
    }

    fn f32s(&mut self, xs: &[f32]) -> &mut Self {
        for x in xs {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
        self
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], magic: [u8; 4]) -> Result<Self> {
        if buf.len() < 4 || buf[..4] != magic {
            return Err(corrupt(format!(
                "bad magic, expected {}",
                String::from_utf8_lossy(&magic)
            )));
        }
        Ok(Reader { buf, pos: 4 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt("size overflow"))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(corrupt(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Shape errors while decoding mean the file is damaged.
fn rebrand(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => corrupt(m),
        Error::DimensionMismatch { expected, got } => corrupt(format!("expected {expected} values, got {got}")),
        other => other,
    }
}

pub fn embeddings_to_bytes(emb: &EntityEmbeddings) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_EMBEDDINGS)
        .u32(emb.num_entities())
        .u32(emb.dim())
        .f32s(emb.centers_raw())
        .f32s(emb.offsets_raw())
        .f32s(emb.ctx_center())
        .f32s(emb.ctx_offset())
        .f32s(&[emb.beta() as f32]);
    w.0
}

pub fn embeddings_from_bytes(buf: &[u8]) -> Result<EntityEmbeddings> {
    let mut r = Reader::new(buf, MAGIC_EMBEDDINGS)?;
    let (e, d) = (r.u32()?, r.u32()?);
    let n = e.checked_mul(d).ok_or_else(|| corrupt("size overflow"))?;
    let c = r.f32s(n)?;
    let f = r.f32s(n)?;
    let ac = r.f32s(d)?;
    let af = r.f32s(d)?;
    let beta = r.f32s(1)?[0] as f64;
    r.finish()?;
    if d == 0 || !(beta > 0.0 && beta.is_finite()) {
        return Err(corrupt("invalid dimension or beta"));
    }
    EntityEmbeddings::from_raw(e, d, beta, c, f, ac, af).map_err(rebrand)
}

/// Codebook and codes of `num_sets` sets. β is not stored and comes from
/// the embeddings file.
pub fn codebook_to_bytes(cb: &Codebook, codes: &[CodeAssignment]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_CODEBOOK)
        .u32(cb.dim())
        .u32(cb.num_subspaces())
        .u32(cb.num_keys())
        .f32s(cb.centers_raw())
        .f32s(cb.offsets_raw())
        .u32(codes.len());
    let flat: Vec<u32> = codes.iter().flat_map(|c| c.0.iter().copied()).collect();
    w.bytes(&pack_codes(&flat, code_width(cb.num_keys())));
    w.0
}

pub fn codebook_from_bytes(buf: &[u8], beta: f64) -> Result<(Codebook, Vec<CodeAssignment>)> {
    let mut r = Reader::new(buf, MAGIC_CODEBOOK)?;
    let (d, dd, k) = (r.u32()?, r.u32()?, r.u32()?);
    if dd == 0 || d % dd != 0 || k == 0 {
        return Err(corrupt(format!("invalid codebook shape d={d} D={dd} K={k}")));
    }
    let n = k.checked_mul(d).ok_or_else(|| corrupt("size overflow"))?;
    let c = r.f32s(n)?;
    let f = r.f32s(n)?;
    let cb = Codebook::from_f32(d, dd, k, beta, &c, &f).map_err(rebrand)?;
    let num_sets = r.u32()?;
    let count = num_sets.checked_mul(dd).ok_or_else(|| corrupt("size overflow"))?;
    let width = code_width(k);
    let flat = unpack_codes(r.take((count * width as usize).div_ceil(8))?, width, count)?;
    r.finish()?;
    let codes: Vec<CodeAssignment> = flat.chunks_exact(dd.max(1)).map(|c| CodeAssignment(c.to_vec())).collect();
    for c in &codes {
        c.validate(&cb).map_err(rebrand)?;
    }
    Ok((cb, codes))
}

pub fn sketches_to_bytes(d: usize, sketches: &[BinSketch]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_SKETCH).u32(d).u32(sketches.len());
    let row = d.div_ceil(8);
    for s in sketches {
        assert_eq!(s.dim(), d, "sketch width differs");
        let bytes: Vec<u8> = s.words().iter().flat_map(|w| w.to_le_bytes()).collect();
        w.bytes(&bytes[..row]);
    }
    w.0
}

pub fn sketches_from_bytes(buf: &[u8]) -> Result<(usize, Vec<BinSketch>)> {
    let mut r = Reader::new(buf, MAGIC_SKETCH)?;
    let (d, n) = (r.u32()?, r.u32()?);
    if d == 0 {
        return Err(corrupt("zero sketch width"));
    }
    let row = d.div_ceil(8);
    let mut out = Vec::with_capacity(n.min(buf.len()));
    for _ in 0..n {
        let mut bytes = r.take(row)?.to_vec();
        bytes.resize(d.div_ceil(64) * 8, 0);
        let words = bytes
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(BinSketch::from_words(d, words).map_err(rebrand)?);
    }
    r.finish()?;
    Ok((d, out))
}

/// A decoded `S2BE` file.
#[derive(Clone, Debug)]
pub enum VectorArtifact {
    Vec(VecModel),
    Order(OrderModel),
}

/// Set2Vec models are saved with their materialized entity table.
pub fn vec_to_bytes(m: &VecModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_VECTORS)
        .u8(TAG_VEC)
        .u32(m.num_entities())
        .u32(m.dim())
        .f32s(&m.entity_table())
        .f32s(m.ctx())
        .u8(m.measure().index() as u8);
    w.0
}

pub fn order_to_bytes(m: &OrderModel) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_VECTORS)
        .u8(TAG_ORDER)
        .u32(m.num_entities())
        .u32(m.dim())
        .f32s(m.table_raw())
        .f32s(m.ctx());
    w.0
}

pub fn vectors_from_bytes(buf: &[u8]) -> Result<VectorArtifact> {
    let mut r = Reader::new(buf, MAGIC_VECTORS)?;
    let tag = r.u8()?;
    let (e, d) = (r.u32()?, r.u32()?);
    if d == 0 {
        return Err(corrupt("zero dimension"));
    }
    let table = r.f32s(e.checked_mul(d).ok_or_else(|| corrupt("size overflow"))?)?;
    let ctx = r.f32s(d)?;
    let out = match tag {
        TAG_VEC => {
            let m = *Measure::ALL
                .get(r.u8()? as usize)
                .ok_or_else(|| corrupt("unknown measure tag"))?;
            VectorArtifact::Vec(VecModel::from_table(e, d, m, table, ctx).map_err(rebrand)?)
        }
        TAG_ORDER => VectorArtifact::Order(OrderModel::from_raw(e, d, table, ctx).map_err(rebrand)?),
        t => return Err(corrupt(format!("unknown method tag {t}"))),
    };
    r.finish()?;
    Ok(out)
}

/// PQ keys and the center and offset codes of every set. The embeddings
/// are saved separately as `S2B1`.
pub fn pq_to_bytes(m: &PqModel, codes: &[PqCodes]) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC_PQ)
        .u32(m.embeddings.dim())
        .u32(m.num_subspaces())
        .u32(m.num_keys())
        .f32s(m.center_keys())
        .f32s(m.offset_keys_raw())
        .u32(codes.len());
    let flat: Vec<u32> = codes
        .iter()
        .flat_map(|c| c.center.iter().chain(&c.offset).copied())
        .collect();
    w.bytes(&pack_codes(&flat, code_width(m.num_keys())));
    w.0
}

pub fn pq_from_bytes(buf: &[u8], embeddings: EntityEmbeddings) -> Result<(PqModel, Vec<PqCodes>)> {
    let mut r = Reader::new(buf, MAGIC_PQ)?;
    let (d, dd, k) = (r.u32()?, r.u32()?, r.u32()?);
    if d != embeddings.dim() {
        return Err(corrupt(format!("codebook width {d} differs from embedding width {}", embeddings.dim())));
    }
    if dd == 0 || d % dd != 0 || k == 0 {
        return Err(corrupt(format!("invalid codebook shape d={d} D={dd} K={k}")));
    }
    let n = k.checked_mul(d).ok_or_else(|| corrupt("size overflow"))?;
    let kc = r.f32s(n)?;
    let kf = r.f32s(n)?;
    let model = PqModel::new(embeddings, dd, k, kc, kf).map_err(rebrand)?;
    let num_sets = r.u32()?;
    let count = num_sets.checked_mul(2 * dd).ok_or_else(|| corrupt("size overflow"))?;
    let width = code_width(k);
    let flat = unpack_codes(r.take((count * width as usize).div_ceil(8))?, width, count)?;
    r.finish()?;
    if flat.iter().any(|&c| c as usize >= k) {
        return Err(corrupt(format!("code out of range for K = {k}")));
    }
    let codes = flat
        .chunks_exact(2 * dd)
        .map(|c| PqCodes {
            center: c[..dd].to_vec(),
            offset: c[dd..].to_vec(),
        })
        .collect();
    Ok((model, codes))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    Ok(fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    Ok(fs::write(path, bytes)?)
}
