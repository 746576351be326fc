//! Local rule-oracle-as-a-service: a loopback HTTP endpoint speaking the
//! chat-completions wire shape, answering every coordination prompt with the
//! decision the deterministic oracle would make for the region embedded in
//! the prompt. Lets `record-transcripts --synthesize` produce replayable
//! transcripts with no network.

use std::collections::BTreeSet;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use ccma_core::coord::{rule_oracle_scores, Region};
use ccma_core::reward::{argmax_in_tie_order, RewardWeights};
use ccma_core::sim::{
    DrivingStyle, MetaAction, RoadGeometry, VehicleKind, VehicleState, WorldState,
};
use ccma_core::{Error, Result};

pub struct OracleService {
    endpoint: String,
    shutdown: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl OracleService {
    pub fn start(geometry: RoadGeometry, weights: RewardWeights) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        listener.set_nonblocking(true)?;
        let endpoint = format!("http://{}", listener.local_addr()?);
        let shutdown = Arc::new(AtomicBool::new(false));
        let stop = shutdown.clone();
        let handle = std::thread::spawn(move || {
            while !stop.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        let _ = stream.set_nonblocking(false);
                        let body = match read_request(&mut stream) {
                            Some(body) => body,
                            None => continue,
                        };
                        let content = answer(&body, &geometry, &weights)
                            .unwrap_or_else(|e| format!("oracle service error: {e}"));
                        let reply = serde_json::json!({
                            "choices": [{"message": {"role": "assistant", "content": content}}]
                        })
                        .to_string();
                        let response = format!(
                            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                            reply.len()
                        );
                        let _ = stream.write_all(response.as_bytes());
                    }
                    Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self {
            endpoint,
            shutdown,
            handle: Some(handle),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

impl Drop for OracleService {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<String> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        match stream.read(&mut chunk) {
            Ok(0) => return None,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
            }
            Err(_) => return None,
        }
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (k, v) = l.split_once(':')?;
            k.trim()
                .eq_ignore_ascii_case("content-length")
                .then(|| v.trim().parse().ok())?
        })
        .unwrap_or(0);
    while buf.len() < header_end + content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => buf.extend_from_slice(&chunk[..n]),
            Err(_) => break,
        }
    }
    Some(String::from_utf8_lossy(&buf[header_end..]).to_string())
}

/// Reconstruct the region from the prompt's serialized state and answer with
/// the oracle's decision in the wire format.
fn answer(request_body: &str, geometry: &RoadGeometry, weights: &RewardWeights) -> Result<String> {
    let request: serde_json::Value = serde_json::from_str(request_body)
        .map_err(|e| Error::Parse(format!("request is not JSON: {e}")))?;
    let user = request["messages"]
        .as_array()
        .and_then(|m| m.iter().find(|msg| msg["role"] == "user"))
        .and_then(|msg| msg["content"].as_str())
        .ok_or_else(|| Error::Parse("request carries no user message".into()))?;

    let state_start = user
        .find("Current region state:\n")
        .ok_or_else(|| Error::Parse("prompt lacks the region state block".into()))?
        + "Current region state:\n".len();
    let state_line = user[state_start..]
        .lines()
        .next()
        .ok_or_else(|| Error::Parse("region state block is empty".into()))?;
    let state: serde_json::Value = serde_json::from_str(state_line)
        .map_err(|e| Error::Parse(format!("region state is not JSON: {e}")))?;

    let center_id = state["region_center"]
        .as_u64()
        .ok_or_else(|| Error::Parse("region state lacks region_center".into()))?;
    let vehicles = state["vehicles"]
        .as_array()
        .ok_or_else(|| Error::Parse("region state lacks vehicles".into()))?;

    let mut world = WorldState::new(geometry.clone(), 0);
    let mut member_ids = BTreeSet::new();
    for v in vehicles {
        let id = v["id"].as_u64().ok_or_else(|| Error::Parse("vehicle lacks id".into()))?;
        let kind = if v["kind"] == "CAV" { VehicleKind::Cav } else { VehicleKind::Hdv };
        let mut veh = VehicleState::new(
            id,
            kind,
            v["lane"].as_u64().unwrap_or(0) as usize,
            v["pos"].as_f64().unwrap_or(0.0),
            v["speed"].as_f64().unwrap_or(0.0),
        );
        veh.lat = v["lat"].as_f64().unwrap_or(0.0);
        veh.accel = v["accel"].as_f64().unwrap_or(0.0);
        veh.prev_accel = veh.accel;
        veh.target_speed = v["target_speed"].as_f64().unwrap_or(veh.speed);
        veh.merged = v["merged"].as_bool().unwrap_or(false);
        veh.style = match v["style"].as_str() {
            Some("aggressive") => DrivingStyle::aggressive(),
            Some("conservative") => DrivingStyle::conservative(),
            _ => DrivingStyle::normal(),
        };
        world.vehicles.push(veh);
        member_ids.insert(id);
    }
    world.vehicles.sort_by_key(|v| v.id);

    let region = Region {
        center_id,
        member_ids,
        radius: 50.0,
    };
    let scores = rule_oracle_scores(&region, &world, weights)?;

    let mut decisions = Vec::new();
    for (&id, row) in &scores.scores {
        let values: Vec<(MetaAction, f64)> =
            MetaAction::ALL.iter().map(|&a| (a, row[a.index()])).collect();
        let action = argmax_in_tie_order(&values).expect("five actions");
        decisions.push(serde_json::json!({
            "id": id,
            "action": action.name(),
            "reason": if id == center_id { "merge_alignment" } else { "coordinate" },
        }));
    }
    Ok(serde_json::json!({
        "region": center_id,
        "source": "remote_lm",
        "decisions": decisions,
        "messages": [],
    })
    .to_string())
}
