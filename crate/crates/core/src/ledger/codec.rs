//! Canonical binary encoding for ledger records and blocks.
//!
//! Strings and byte strings carry a 4-byte big-endian length prefix,
//! integers are 8-byte big-endian, digests are raw 32 bytes. Fields appear in
//! declaration order. Decoding is strict: trailing bytes are an error.

use num_bigint::BigUint;

use super::{BallotRecord, Block, Digest, LedgerError};
use crate::he::{Ciphertext, KeyFingerprint};
use crate::schema::EncryptedBatch;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        let len = u32::try_from(v.len()).expect("field longer than 4 GiB");
        self.buf.extend_from_slice(&len.to_be_bytes());
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn digest(&mut self, d: &Digest) -> &mut Self {
        self.buf.extend_from_slice(&d.0);
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LedgerError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                LedgerError::Malformed(format!("unexpected end at byte {}", self.pos))
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn u64(&mut self) -> Result<u64, LedgerError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], LedgerError> {
        let len = u32::from_be_bytes(self.take(4)?.try_into().unwrap());
        self.take(len as usize)
    }

    pub fn str(&mut self) -> Result<String, LedgerError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| LedgerError::Malformed("invalid utf-8".into()))
    }

    pub fn digest(&mut self) -> Result<Digest, LedgerError> {
        Ok(Digest(self.take(32)?.try_into().unwrap()))
    }

    pub fn finish(self) -> Result<(), LedgerError> {
        if self.pos != self.buf.len() {
            return Err(LedgerError::Malformed(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub(crate) fn encode_record_into(w: &mut Writer, r: &BallotRecord) {
    w.str(&r.receipt_id).digest(&r.voter_pseudonym);
    w.str(&r.batch.schema_id)
        .u64(r.batch.ciphertexts.len() as u64);
    for ct in &r.batch.ciphertexts {
        w.bytes(&ct.value().to_bytes_be())
            .raw(&ct.key_fingerprint().0);
    }
    w.str(&r.vote).u64(r.cast_at);
}

pub(crate) fn decode_record(r: &mut Reader<'_>) -> Result<BallotRecord, LedgerError> {
    let receipt_id = r.str()?;
    let voter_pseudonym = r.digest()?;
    let schema_id = r.str()?;
    let count = r.u64()?;
    let mut ciphertexts = Vec::with_capacity(count.min(64) as usize);
    for _ in 0..count {
        let value = r.bytes()?;
        // minimal big-endian: no leading zero byte
        if value.first() == Some(&0) {
            return Err(LedgerError::Malformed("non-canonical integer".into()));
        }
        let fp = r.digest()?;
        ciphertexts.push(Ciphertext::from_parts(
            BigUint::from_bytes_be(value),
            KeyFingerprint(fp.0),
        ));
    }
    let vote = r.str()?;
    let cast_at = r.u64()?;
    Ok(BallotRecord {
        receipt_id,
        voter_pseudonym,
        batch: EncryptedBatch {
            schema_id,
            ciphertexts,
        },
        vote,
        cast_at,
    })
}

pub(crate) fn encode_record(r: &BallotRecord) -> Vec<u8> {
    let mut w = Writer::new();
    encode_record_into(&mut w, r);
    w.finish()
}

/// `record_count ∥ records`, the bytes covered by `payload_hash`.
pub(crate) fn encode_payload(records: &[BallotRecord]) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(records.len() as u64);
    for r in records {
        encode_record_into(&mut w, r);
    }
    w.finish()
}

pub(crate) fn encode_header(
    index: u64,
    prev: &Digest,
    payload: &Digest,
    sealed_at: u64,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(index).digest(prev).digest(payload).u64(sealed_at);
    w.finish()
}

/// `index ∥ prev_hash ∥ (record_count ∥ records) ∥ payload_hash ∥ block_hash ∥ sealed_at`.
pub(crate) fn encode_block(b: &Block) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(b.index).digest(&b.prev_hash);
    w.raw(&encode_payload(&b.records));
    w.digest(&b.payload_hash)
        .digest(&b.block_hash)
        .u64(b.sealed_at);
    w.finish()
}

/// Decodes a block, returning it with the raw payload bytes it was parsed
/// from so hashes can be checked against what is actually stored.
pub(crate) fn decode_block(bytes: &[u8]) -> Result<(Block, &[u8]), LedgerError> {
    let mut r = Reader::new(bytes);
    let index = r.u64()?;
    let prev_hash = r.digest()?;
    let payload_start = r.position();
    let count = r.u64()?;
    let mut records = Vec::with_capacity(count.min(4096) as usize);
    for _ in 0..count {
        records.push(decode_record(&mut r)?);
    }
    let payload = &bytes[payload_start..r.position()];
    let payload_hash = r.digest()?;
    let block_hash = r.digest()?;
    let sealed_at = r.u64()?;
    r.finish()?;
    Ok((
        Block {
            index,
            prev_hash,
            records,
            payload_hash,
            block_hash,
            sealed_at,
        },
        payload,
    ))
}
