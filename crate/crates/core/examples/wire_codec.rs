// Copyright (c) The chainstate Authors
// SPDX-License-Identifier: Apache-2.0

//! Encodes a transaction request in the binary wire format, dumps it, and
//! decodes it back.

use chainstate::harness::codec::{decode, decode_request, encode_request, HEADER_LEN};
use chainstate::tpg::{make_seq, TransactionRequest};
use chainstate::vnf::kv_job;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let job = kv_job(serde_json::json!({}));
    let req = TransactionRequest::new(make_seq(7, 3), "kv", 2, "kv_transfer")
        .with_key("debit", &["h4"])
        .with_key("credit", &["h9", "h4"])
        .with_data("amount", 25);
    let bytes = encode_request(&job, &req)?;
    println!("header  {}", hex::encode(&bytes[..HEADER_LEN]));
    println!("payload {}", hex::encode(&bytes[HEADER_LEN..]));
    println!("{:#?}", decode(&bytes)?);
    assert_eq!(decode_request(&job, &bytes)?, req);
    println!("round trip ok, {} bytes", bytes.len());
    Ok(())
}
