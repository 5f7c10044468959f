//! JSON-lines request/response protocol for the decoding engine.
//!
//! One JSON object per line, UTF-8. Requests carry base64-encoded
//! little-endian f32 logits; responses echo the request id and either the
//! step outcome or an error code. Server state is read-only, so any number
//! of connections can be served from one table.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::decode::{
    decode_step, Candidate, DecodeError, DecodeRequest, FilterSpec, KeepSpec, SelectMode,
};
use crate::neighbors::NeighborTable;
use crate::vocab::VocabPartition;

#[derive(Debug, Deserialize)]
pub struct WireRequest {
    pub id: String,
    pub logits_b64: String,
    pub temperature: f32,
    pub filter: FilterSpec,
    pub keep: KeepSpec,
    pub select: SelectMode,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_tau")]
    pub tau_score: f32,
}

fn default_tau() -> f32 {
    1.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WireResponse {
    Ok {
        id: String,
        token: u32,
        deferred: bool,
        candidates: Vec<Candidate>,
    },
    Err {
        id: String,
        error: String,
    },
}

fn error_code(e: &DecodeError) -> &'static str {
    match e {
        DecodeError::BadTemperature(_) => "bad_temperature",
        DecodeError::DimMismatch { .. } => "bad_logits_len",
        DecodeError::NonFiniteLogit(_) => "non_finite_logit",
        DecodeError::MissingSeed => "missing_seed",
        DecodeError::KPrimeTooLarge { .. } => "bad_k_prime",
        DecodeError::NonContentCandidate(_) => "non_content_candidate",
    }
}

pub fn decode_logits_b64(b64: &str, expected_len: usize) -> Result<Vec<f32>, &'static str> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(b64)
        .map_err(|_| "bad_base64")?;
    if bytes.len() != expected_len * 4 {
        return Err("bad_logits_len");
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn encode_logits_b64(logits: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(logits.len() * 4);
    for l in logits {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Answer one protocol line. Malformed input never panics; it produces an
/// error response so the serving loop can continue.
pub fn handle_line(line: &str, table: &NeighborTable, partition: &VocabPartition) -> WireResponse {
    let req: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(_) => {
            // best effort to recover the id for correlation
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_str()).map(str::to_owned))
                .unwrap_or_default();
            return WireResponse::Err {
                id,
                error: "bad_request".into(),
            };
        }
    };
    let logits = match decode_logits_b64(&req.logits_b64, partition.v_emb as usize) {
        Ok(l) => l,
        Err(code) => {
            return WireResponse::Err {
                id: req.id,
                error: code.into(),
            }
        }
    };
    let dreq = DecodeRequest {
        logits,
        temperature: req.temperature,
        filter: req.filter,
        keep: req.keep,
        select: req.select,
        seed: req.seed,
        tau_score: req.tau_score,
    };
    match decode_step(&dreq, table, partition) {
        Ok(out) => WireResponse::Ok {
            id: req.id,
            token: out.token,
            deferred: out.deferred,
            candidates: out.candidates,
        },
        Err(e) => WireResponse::Err {
            id: req.id,
            error: error_code(&e).into(),
        },
    }
}

/// Request/response loop over arbitrary reader/writer pairs (used for the
/// stdio transport and for tests).
pub fn serve_stream<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    table: &NeighborTable,
    partition: &VocabPartition,
) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = handle_line(&line, table, partition);
        serde_json::to_writer(&mut writer, &resp)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

pub fn serve_stdio(table: &NeighborTable, partition: &VocabPartition) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    serve_stream(stdin.lock(), stdout.lock(), table, partition)
}

/// TCP transport: one thread per connection, each connection handled in
/// request order.
pub fn serve_tcp(
    addr: &str,
    table: Arc<NeighborTable>,
    partition: Arc<VocabPartition>,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    log::info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let table = Arc::clone(&table);
        let partition = Arc::clone(&partition);
        std::thread::spawn(move || {
            let reader = BufReader::new(stream.try_clone().expect("clone stream"));
            if let Err(e) = serve_stream(reader, stream, &table, &partition) {
                log::warn!("connection error: {e}");
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingMatrix, TokenizerMeta};
    use crate::neighbors::{build_neighbor_table, NeighborBuildConfig};
    use std::collections::BTreeSet;

    fn fixture() -> (NeighborTable, VocabPartition) {
        let meta = TokenizerMeta {
            v_tok: 4,
            special_ids: BTreeSet::new(),
            added_ids: BTreeSet::new(),
        };
        let p = VocabPartition::build(&meta, 4).unwrap();
        let e = EmbeddingMatrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.0]).unwrap();
        let t = build_neighbor_table(&e, &p, &NeighborBuildConfig { k: 2, ..Default::default() })
            .unwrap();
        (t, p)
    }

    fn request_json(id: &str, logits: &[f32], select: &str, seed: u64) -> String {
        format!(
            r#"{{"id":"{id}","logits_b64":"{}","temperature":1.0,"filter":{{"type":"top_m","m":2}},"keep":{{"type":"k_prime","k_prime":2}},"select":"{select}","seed":{seed}}}"#,
            encode_logits_b64(logits)
        )
    }

    #[test]
    fn response_echoes_request_id() {
        let (t, p) = fixture();
        let resp = handle_line(&request_json("req-1", &[1.0, 0.5, 0.0, -1.0], "argmax", 0), &t, &p);
        match resp {
            WireResponse::Ok { id, .. } => assert_eq!(id, "req-1"),
            WireResponse::Err { .. } => panic!("expected ok"),
        }
    }

    #[test]
    fn wrong_length_payload_reports_bad_logits_len() {
        let (t, p) = fixture();
        let line = request_json("x", &[1.0, 0.5], "argmax", 0);
        match handle_line(&line, &t, &p) {
            WireResponse::Err { id, error } => {
                assert_eq!(id, "x");
                assert_eq!(error, "bad_logits_len");
            }
            _ => panic!("expected error"),
        }
    }

    #[test]
    fn malformed_json_yields_error_and_loop_continues() {
        let (t, p) = fixture();
        let input = format!(
            "not json at all\n{}\n",
            request_json("ok-after", &[1.0, 0.5, 0.0, -1.0], "argmax", 0)
        );
        let mut out = Vec::new();
        serve_stream(input.as_bytes(), &mut out, &t, &p).unwrap();
        let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("bad_request"));
        assert!(lines[1].contains("ok-after"));
    }

    #[test]
    fn equal_seeds_give_equal_tokens() {
        let (t, p) = fixture();
        let line = request_json("s", &[0.5, 0.4, 0.3, 0.2], "sample", 1234);
        let a = serde_json::to_string(&handle_line(&line, &t, &p)).unwrap();
        let b = serde_json::to_string(&handle_line(&line, &t, &p)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn logits_b64_round_trip() {
        let logits = vec![0.5f32, -1.25, 3.75];
        let b64 = encode_logits_b64(&logits);
        let back = decode_logits_b64(&b64, 3).unwrap();
        assert_eq!(logits, back);
    }
}
