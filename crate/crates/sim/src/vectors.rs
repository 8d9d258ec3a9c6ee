//! Reference vectors computed by the library, in the JSON-lines layout of
//! `oracle/reference_vectors.py`.

use cbdc_core::channel::{chunk_for_mtu, encode_frame};
use cbdc_core::crypto::{derive_generators, REFERENCE_SUITE};
use cbdc_core::hash::to_hex;
use cbdc_core::ledger::{EntryKind, LedgerEntry};
use cbdc_core::secure_element::genesis_head;
use cbdc_core::wallet::device_id_for;
use cbdc_core::zkp::Nullifier;
use cbdc_core::{KeyPair, PedersenParams, Scalar, Transcript};
use serde_json::{json, Value};

pub fn compute() -> Vec<Value> {
    let mut out = Vec::new();
    out.push(json!({
        "name": "suite",
        "suite_id": REFERENCE_SUITE.suite_id,
        "e_len": REFERENCE_SUITE.element_len,
        "scalar_len": REFERENCE_SUITE.scalar_len,
    }));
    let c = Transcript::new().challenge(b"challenge");
    out.push(json!({"name": "transcript_fresh_challenge", "label": "challenge", "challenge": to_hex(&c.encode())}));

    let gens = derive_generators(b"cbdc/v1");
    out.push(json!({
        "name": "generators",
        "tag": "cbdc/v1",
        "g_val": to_hex(&gens.g_val().encode()),
        "g_blind": to_hex(&gens.g_blind().encode()),
    }));
    let r = Scalar::hash_from(&[b"vector-blinding"]);
    let com = PedersenParams::standard().commit_u64(1200, &r);
    out.push(json!({
        "name": "pedersen",
        "value": 1200,
        "blinding": to_hex(&r.encode()),
        "commitment": to_hex(&com.encode()),
    }));

    let keys = KeyPair::from_seed(b"vector-key");
    let msg = b"vector-message";
    let pk = keys.public().encode();
    out.push(json!({
        "name": "schnorr",
        "seed": "vector-key",
        "message": to_hex(msg),
        "pk": to_hex(&pk),
        "signature": to_hex(&keys.sign(msg).encode()),
    }));
    out.push(json!({"name": "device_id", "pk": to_hex(&pk), "device_id": to_hex(&device_id_for(keys.public()))}));

    let seed = [0x11; 32];
    let nf = Nullifier::derive(&seed, 5);
    out.push(json!({
        "name": "nullifier",
        "prf_seed": to_hex(&seed),
        "counter": 5,
        "nullifier": to_hex(nf.as_bytes()),
        "tx_id": to_hex(&nf.tx_id()),
    }));
    let dev = [0x22; 16];
    out.push(json!({"name": "genesis_head", "device_id": to_hex(&dev), "head": to_hex(&genesis_head(&dev))}));

    let entry = LedgerEntry {
        index: 0,
        kind: EntryKind::Issuance,
        payload_hash: [0x33; 32],
        prev_hash: [0; 32],
        amount_delta: 10_000,
    };
    out.push(json!({
        "name": "ledger_genesis",
        "prev_hash": to_hex(&entry.prev_hash),
        "payload_hash": to_hex(&entry.payload_hash),
        "amount_delta": entry.amount_delta,
        "entry_hash": to_hex(&entry.hash()),
    }));

    let frame = encode_frame(2, b"cbdc").expect("small frame");
    out.push(json!({"name": "frame", "msg_type": 2, "payload": to_hex(b"cbdc"), "frame": to_hex(&frame)}));
    for mtu in [255, 244] {
        let chunks = chunk_for_mtu(&[0u8; 600], mtu, 0).expect("valid mtu").len();
        out.push(json!({"name": "chunking", "frame_len": 600, "mtu": mtu, "chunks": chunks}));
    }
    out
}

/// One compact JSON object per line, keys sorted.
pub fn to_jsonl(vectors: &[Value]) -> String {
    vectors.iter().map(|v| format!("{v}\n")).collect()
}

/// Names of vectors that differ from `expected` (a JSON-lines document), or
/// are missing from either side.
pub fn mismatches(expected: &str) -> Vec<String> {
    let ours = compute();
    let theirs: Vec<Value> = expected
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap_or(Value::Null))
        .collect();
    let mut bad = Vec::new();
    for i in 0..ours.len().max(theirs.len()) {
        match (ours.get(i), theirs.get(i)) {
            (Some(a), Some(b)) if a == b => {}
            (a, b) => {
                let name = a.or(b).and_then(|v| v["name"].as_str()).unwrap_or("?");
                bad.push(format!("{i}:{name}"));
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn own_output_has_no_mismatches() {
        let text = to_jsonl(&compute());
        assert!(mismatches(&text).is_empty());
        let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert_eq!(mismatches(&truncated).len(), compute().len() - 3);
    }
}
