// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Byte-stream encoding of transaction requests.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header (30 bytes)
//!   magic u32 = 0x44423446 | version u8 = 1 | msg_type u8
//!   instance_id u32 | vnf_id u32 | txn_template_id u32 | seq u64 | payload_len u32
//! payload (payload_len bytes)
//!   field_count u16
//!   field_count × { key_len u16, key bytes, value_len u32, tag u8, body }
//! ```
//!
//! Value bodies: `0` Int as i64; `1` Str as UTF-8; `2` Ints as a run of
//! i64; `3` Tokens as a run of `{len u32, UTF-8 bytes}`. `value_len` covers
//! the tag and the body. Only packet data travels on the wire: the VNF and
//! the transaction template are referenced by declaration index, and target
//! keys ride in the payload under reserved `@<access_id>` fields.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::job::ValidatedJob;
use crate::tpg::TransactionRequest;
use crate::value::{FieldMap, Scalar};

pub const MAGIC: u32 = 0x4442_3446;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 30;
const KEY_PREFIX: char = '@';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    TxnRequest = 1,
}

impl MsgType {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(MsgType::TxnRequest),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub msg_type: MsgType,
    pub instance_id: u32,
    pub vnf_id: u32,
    pub txn_template_id: u32,
    pub seq: u64,
    pub fields: Vec<(String, Scalar)>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("bad magic {0:#010x}")]
    BadMagic(u32),
    #[error("unknown version {0}")]
    UnknownVersion(u8),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("message of {0} bytes is shorter than the header")]
    TruncatedHeader(usize),
    #[error("payload truncated: needed {needed} bytes at offset {offset}, {available} available")]
    TruncatedPayload { offset: usize, needed: usize, available: usize },
    #[error("unknown value tag {0}")]
    BadTag(u8),
    #[error("invalid UTF-8 at offset {0}")]
    BadUtf8(usize),
    #[error("value length {len} invalid for tag {tag}")]
    BadValueLength { tag: u8, len: usize },
    #[error("{0} bytes after the declared payload")]
    TrailingBytes(usize),
    #[error("field `{0}` does not fit its length prefix")]
    TooLong(String),
    #[error("{0} fields exceed the field count prefix")]
    TooManyFields(usize),
    #[error("packet data field `{0}` uses the reserved `@` prefix")]
    ReservedField(String),
    #[error("`{0}` is not declared in the job")]
    UnknownName(String),
    #[error("VNF index {0} is not declared")]
    UnknownVnf(u32),
    #[error("transaction template index {0} is not declared")]
    UnknownTemplate(u32),
    #[error("target keys for `{0}` must be a token list")]
    BadTargetKeys(String),
}

fn put_value(out: &mut Vec<u8>, key: &str, value: &Scalar) -> Result<(), CodecError> {
    let mut body = Vec::new();
    match value {
        Scalar::Int(v) => {
            body.push(0);
            body.extend_from_slice(&v.to_le_bytes());
        }
        Scalar::Str(s) => {
            body.push(1);
            body.extend_from_slice(s.as_bytes());
        }
        Scalar::Ints(vs) => {
            body.push(2);
            for v in vs {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        Scalar::Tokens(ts) => {
            body.push(3);
            for t in ts {
                let len = u32::try_from(t.len()).map_err(|_| CodecError::TooLong(key.to_owned()))?;
                body.extend_from_slice(&len.to_le_bytes());
                body.extend_from_slice(t.as_bytes());
            }
        }
    }
    let len = u32::try_from(body.len()).map_err(|_| CodecError::TooLong(key.to_owned()))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&body);
    Ok(())
}

pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, CodecError> {
    let count = u16::try_from(msg.fields.len()).map_err(|_| CodecError::TooManyFields(msg.fields.len()))?;
    let mut payload = Vec::new();
    payload.extend_from_slice(&count.to_le_bytes());
    for (key, value) in &msg.fields {
        let klen = u16::try_from(key.len()).map_err(|_| CodecError::TooLong(key.clone()))?;
        payload.extend_from_slice(&klen.to_le_bytes());
        payload.extend_from_slice(key.as_bytes());
        put_value(&mut payload, key, value)?;
    }
    let plen = u32::try_from(payload.len()).map_err(|_| CodecError::TooLong("payload".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.push(msg.msg_type as u8);
    out.extend_from_slice(&msg.instance_id.to_le_bytes());
    out.extend_from_slice(&msg.vnf_id.to_le_bytes());
    out.extend_from_slice(&msg.txn_template_id.to_le_bytes());
    out.extend_from_slice(&msg.seq.to_le_bytes());
    out.extend_from_slice(&plen.to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(CodecError::TruncatedPayload { offset: self.pos, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<String, CodecError> {
        let at = self.pos;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::BadUtf8(at))
    }
}

fn parse_value(tag: u8, body: &[u8], base: usize) -> Result<Scalar, CodecError> {
    let bad_len = || CodecError::BadValueLength { tag, len: body.len() };
    match tag {
        0 => Ok(Scalar::Int(i64::from_le_bytes(body.try_into().map_err(|_| bad_len())?))),
        1 => String::from_utf8(body.to_vec()).map(Scalar::Str).map_err(|_| CodecError::BadUtf8(base)),
        2 => {
            if !body.len().is_multiple_of(8) {
                return Err(bad_len());
            }
            Ok(Scalar::Ints(body.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()))
        }
        3 => {
            let mut r = Reader { buf: body, pos: 0 };
            let mut toks = Vec::new();
            while r.pos < body.len() {
                let n = r.u32().map_err(|_| bad_len())? as usize;
                let at = r.pos;
                let bytes = r.take(n).map_err(|_| bad_len())?;
                toks.push(String::from_utf8(bytes.to_vec()).map_err(|_| CodecError::BadUtf8(base + at))?);
            }
            Ok(Scalar::Tokens(toks))
        }
        other => Err(CodecError::BadTag(other)),
    }
}

pub fn decode(bytes: &[u8]) -> Result<WireMessage, CodecError> {
    if bytes.len() >= 4 {
        let magic = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
        if magic != MAGIC {
            return Err(CodecError::BadMagic(magic));
        }
    }
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::TruncatedHeader(bytes.len()));
    }
    if bytes[4] != VERSION {
        return Err(CodecError::UnknownVersion(bytes[4]));
    }
    let msg_type = MsgType::from_u8(bytes[5]).ok_or(CodecError::UnknownMsgType(bytes[5]))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    let instance_id = u32_at(6);
    let vnf_id = u32_at(10);
    let txn_template_id = u32_at(14);
    let seq = u64::from_le_bytes(bytes[18..26].try_into().expect("8 bytes"));
    let payload_len = u32_at(26) as usize;
    let available = bytes.len() - HEADER_LEN;
    if payload_len > available {
        return Err(CodecError::TruncatedPayload { offset: HEADER_LEN, needed: payload_len, available });
    }
    if payload_len < available {
        return Err(CodecError::TrailingBytes(available - payload_len));
    }
    let mut r = Reader { buf: bytes, pos: HEADER_LEN };
    let count = r.u16()?;
    let mut fields = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let klen = r.u16()? as usize;
        let key = r.utf8(klen)?;
        let vlen = r.u32()? as usize;
        let base = r.pos;
        let value = r.take(vlen)?;
        let (&tag, body) = value.split_first().ok_or(CodecError::BadValueLength { tag: 0, len: 0 })?;
        fields.push((key, parse_value(tag, body, base + 1)?));
    }
    if r.pos != bytes.len() {
        return Err(CodecError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(WireMessage { msg_type, instance_id, vnf_id, txn_template_id, seq, fields })
}

/// Packs a request: names become declaration indices, target keys become
/// reserved payload fields.
pub fn request_to_message(job: &ValidatedJob, req: &TransactionRequest) -> Result<WireMessage, CodecError> {
    let vnf_id = job.vnf_index(&req.vnf_id).ok_or_else(|| CodecError::UnknownName(req.vnf_id.clone()))?;
    let txn_template_id = job.txn_index(&req.txn_id).ok_or_else(|| CodecError::UnknownName(req.txn_id.clone()))?;
    let mut fields = Vec::with_capacity(req.packet_data.len() + req.target_keys.len());
    for (k, v) in &req.packet_data {
        if k.starts_with(KEY_PREFIX) {
            return Err(CodecError::ReservedField(k.clone()));
        }
        fields.push((k.clone(), v.clone()));
    }
    for (access, keys) in &req.target_keys {
        fields.push((format!("{KEY_PREFIX}{access}"), Scalar::Tokens(keys.clone())));
    }
    Ok(WireMessage {
        msg_type: MsgType::TxnRequest,
        instance_id: req.instance_id,
        vnf_id,
        txn_template_id,
        seq: req.seq,
        fields,
    })
}

pub fn message_to_request(job: &ValidatedJob, msg: &WireMessage) -> Result<TransactionRequest, CodecError> {
    let vnf = job.vnfs.get(msg.vnf_id as usize).ok_or(CodecError::UnknownVnf(msg.vnf_id))?;
    let txn = job
        .transactions
        .get(msg.txn_template_id as usize)
        .ok_or(CodecError::UnknownTemplate(msg.txn_template_id))?;
    let mut packet_data = FieldMap::new();
    let mut target_keys = BTreeMap::new();
    for (k, v) in &msg.fields {
        match k.strip_prefix(KEY_PREFIX) {
            Some(access) => {
                let keys = v.as_tokens().ok_or_else(|| CodecError::BadTargetKeys(access.to_owned()))?;
                target_keys.insert(access.to_owned(), keys.to_vec());
            }
            None => {
                packet_data.insert(k.clone(), v.clone());
            }
        }
    }
    Ok(TransactionRequest {
        seq: msg.seq,
        vnf_id: vnf.vnf_id.clone(),
        instance_id: msg.instance_id,
        txn_id: txn.txn_id.clone(),
        packet_data,
        target_keys,
    })
}

pub fn encode_request(job: &ValidatedJob, req: &TransactionRequest) -> Result<Vec<u8>, CodecError> {
    encode(&request_to_message(job, req)?)
}

pub fn decode_request(job: &ValidatedJob, bytes: &[u8]) -> Result<TransactionRequest, CodecError> {
    message_to_request(job, &decode(bytes)?)
}
