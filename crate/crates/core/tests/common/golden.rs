// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Wire-format fixtures: golden encodings and a decode fuzzer.

use chainstate::harness::codec::{decode, encode, MsgType, WireMessage};
use chainstate::tpg::make_seq;
use chainstate::value::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn golden(parts: &[&str]) -> Vec<u8> {
    hex::decode(parts.concat()).unwrap()
}

/// Hand-assembled encodings of three messages, field by field.
pub fn golden_vectors() -> Vec<(WireMessage, Vec<u8>)> {
    let empty = WireMessage { msg_type: MsgType::TxnRequest, instance_id: 0, vnf_id: 0, txn_template_id: 0, seq: 1, fields: vec![] };
    let empty_bytes = golden(&[
        "46344244", "01", "01", "00000000", "00000000", "00000000", "0100000000000000", "02000000", // header
        "0000",
    ]);

    let amount = WireMessage {
        msg_type: MsgType::TxnRequest,
        instance_id: 3,
        vnf_id: 1,
        txn_template_id: 2,
        seq: make_seq(5, 9),
        fields: vec![("amount".into(), Scalar::Int(5))],
    };
    let amount_bytes = golden(&[
        "46344244", "01", "01", "03000000", "01000000", "02000000", "0900000005000000", "17000000",
        "0100",
        "0600", "616d6f756e74", "09000000", "00", "0500000000000000",
    ]);

    let mixed = WireMessage {
        msg_type: MsgType::TxnRequest,
        instance_id: 1,
        vnf_id: 2,
        txn_template_id: 4,
        seq: 42,
        fields: vec![
            ("mode".into(), Scalar::Str("fw".into())),
            ("@ports".into(), Scalar::Ints(vec![1, -1])),
            ("@hist".into(), Scalar::Tokens(vec!["ssh".into(), "ftp".into()])),
        ],
    };
    let mixed_bytes = golden(&[
        "46344244", "01", "01", "01000000", "02000000", "04000000", "2a00000000000000", "46000000",
        "0300",
        "0400", "6d6f6465", "03000000", "01", "6677",
        "0600", "40706f727473", "11000000", "02", "0100000000000000", "ffffffffffffffff",
        "0500", "4068697374", "0f000000", "03", "03000000", "737368", "03000000", "667470",
    ]);

    vec![(empty, empty_bytes), (amount, amount_bytes), (mixed, mixed_bytes)]
}

/// Decoding arbitrary bytes either fails with an error value or yields a
/// message that encodes back to exactly those bytes. Runs `cases` random
/// and mutated inputs; returns how many decoded.
pub fn fuzz_decode(seed: u64, cases: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let valid = encode(&WireMessage {
        msg_type: MsgType::TxnRequest,
        instance_id: 1,
        vnf_id: 2,
        txn_template_id: 3,
        seq: 4,
        fields: vec![
            ("a".into(), Scalar::Tokens(vec!["xy".into(), "z".into()])),
            ("b".into(), Scalar::Ints(vec![7, 8])),
            ("c".into(), Scalar::Str("hello".into())),
        ],
    })
    .map_err(|e| e.to_string())?;
    let mut decoded = 0;
    for i in 0..cases {
        let bytes: Vec<u8> = if i % 2 == 0 {
            let len = rng.random_range(0..96);
            let mut b: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            // a valid prefix gets past the header checks more often
            if i % 4 == 0 && b.len() >= 6 {
                b[..6].copy_from_slice(&valid[..6]);
            }
            b
        } else {
            let mut b = valid.clone();
            for _ in 0..rng.random_range(1..4) {
                let at = rng.random_range(0..b.len());
                b[at] = rng.random();
            }
            if rng.random_bool(0.3) {
                b.truncate(rng.random_range(0..b.len()));
            }
            b
        };
        if let Ok(msg) = decode(&bytes) {
            decoded += 1;
            if encode(&msg).map_err(|e| e.to_string())? != bytes {
                return Err(format!("case {i}: decoded message re-encodes differently"));
            }
        }
    }
    Ok(decoded)
}

/// Random message with up to eight fields of every scalar kind.
pub fn random_message(rng: &mut ChaCha8Rng) -> WireMessage {
    let text = |rng: &mut ChaCha8Rng, max: usize| -> String {
        let len = rng.random_range(0..=max);
        (0..len).map(|_| rng.random::<char>()).collect()
    };
    let fields = (0..rng.random_range(0..8))
        .map(|_| {
            let name = text(rng, 12);
            let value = match rng.random_range(0..4) {
                0 => Scalar::Int(rng.random()),
                1 => Scalar::Str(text(rng, 24)),
                2 => Scalar::Ints((0..rng.random_range(0..6)).map(|_| rng.random()).collect()),
                _ => Scalar::Tokens((0..rng.random_range(0..5)).map(|_| text(rng, 8)).collect()),
            };
            (name, value)
        })
        .collect();
    WireMessage {
        msg_type: MsgType::TxnRequest,
        instance_id: rng.random(),
        vnf_id: rng.random(),
        txn_template_id: rng.random(),
        seq: rng.random(),
        fields,
    }
}
