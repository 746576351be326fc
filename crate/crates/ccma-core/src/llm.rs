//! Remote language-model backend: deterministic prompt assembly, a
//! chat-completions wire protocol with retry/backoff, response validation
//! with one repair round, and the adapter that maps a model's JSON decision
//! onto action scores. A transcript recorder/replayer makes every remote
//! interaction reproducible offline.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::coord::{ActionScores, DecisionEntry, DecisionSource, Region, RegionalDecision};
use crate::coord::CommMessage;
use crate::error::{Error, Result};
use crate::sim::{MetaAction, WorldState};

/// Default per-episode budget of remote calls.
pub const DEFAULT_CALL_BUDGET: usize = 64;
/// Default rank temperature: a chosen action gets logit 1/0.25 = 4.
pub const DEFAULT_RANK_TEMPERATURE: f64 = 0.25;
/// Base backoff delay between retries.
const BACKOFF_BASE: Duration = Duration::from_millis(500);

/// Environment variables the backend reads its deployment from.
pub const ENV_ENDPOINT: &str = "CCMA_LM_ENDPOINT";
pub const ENV_MODEL: &str = "CCMA_LM_MODEL";
pub const ENV_API_KEY: &str = "CCMA_LM_API_KEY";

/// Connection settings for the remote model.
#[derive(Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model_name: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Read from the environment; never serialized or logged.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendConfig")
            .field("endpoint", &self.endpoint)
            .field("model_name", &self.model_name)
            .field("temperature", &self.temperature)
            .field("timeout_secs", &self.timeout_secs)
            .field("max_retries", &self.max_retries)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model_name: "glm-4-9b".to_string(),
            temperature: 0.0,
            timeout_secs: 30.0,
            max_retries: 2,
            api_key: None,
        }
    }
}

impl BackendConfig {
    /// Build from `CCMA_LM_ENDPOINT` / `CCMA_LM_MODEL` / `CCMA_LM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENV_ENDPOINT).ok()?;
        let mut cfg = Self {
            endpoint,
            ..Self::default()
        };
        if let Ok(model) = std::env::var(ENV_MODEL) {
            cfg.model_name = model;
        }
        cfg.api_key = std::env::var(ENV_API_KEY).ok();
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(Error::Config(format!(
                "backend endpoint must be an http(s) URL, got {:?}",
                self.endpoint
            )));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config("backend temperature must be in [0,2]".into()));
        }
        if self.max_retries > 3 {
            return Err(Error::Config("max_retries must be <= 3".into()));
        }
        Ok(())
    }
}

/// A fully assembled prompt: fixed role/task/tool framing, the serialized
/// region observation, the three-section reasoning scaffold and up to two
/// worked examples.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub role_desc: String,
    pub task_desc: String,
    pub tool_desc: String,
    pub anomaly_note: Option<String>,
    pub observation_json: String,
    pub steps: [String; 3],
    pub few_shot: Vec<String>,
    pub inbox_json: String,
    pub repair_note: Option<String>,
}

impl PromptBundle {
    /// System message: role, task, tool framing plus any anomaly note.
    pub fn render_system(&self) -> String {
        let mut out = format!("{}\n\n{}\n\n{}", self.role_desc, self.task_desc, self.tool_desc);
        if let Some(note) = &self.anomaly_note {
            out.push_str("\n\nAnomaly: ");
            out.push_str(note);
        }
        out
    }

    /// User message: worked examples, scaffold, observation and inbox.
    pub fn render_user(&self) -> String {
        let mut out = String::new();
        for (i, shot) in self.few_shot.iter().enumerate() {
            out.push_str(&format!("Worked example {}:\n{}\n\n", i + 1, shot));
        }
        out.push_str("Work through these steps in order:\n");
        for step in &self.steps {
            out.push_str("- ");
            out.push_str(step);
            out.push('\n');
        }
        out.push_str("\nCurrent region state:\n");
        out.push_str(&self.observation_json);
        out.push_str("\n\nMessages received by region members last step:\n");
        out.push_str(&self.inbox_json);
        if let Some(note) = &self.repair_note {
            out.push_str("\n\nYour previous reply was invalid: ");
            out.push_str(note);
            out.push_str("\nReply again with only the JSON decision object.");
        }
        out.push_str("\n\nRespond with the JSON decision object.");
        out
    }

    /// Stable identity of the full request, used for transcript replay.
    pub fn cache_key(&self) -> String {
        format!("{}\n\u{1e}\n{}", self.render_system(), self.render_user())
    }

    /// Copy of this prompt carrying a repair note for the re-prompt round.
    pub fn with_repair_note(&self, note: &str) -> Self {
        let mut p = self.clone();
        p.repair_note = Some(note.to_string());
        p
    }
}

fn fmt2(x: f64) -> String {
    format!("{x:.2}")
}

/// Deterministic serialization of the region's members: id-ascending, fixed
/// key order, two-decimal fixed-point numbers.
fn region_state_json(region: &Region, world: &WorldState) -> String {
    let mut parts: Vec<String> = Vec::new();
    for &id in &region.member_ids {
        let Some(v) = world.vehicle(id) else { continue };
        parts.push(format!(
            "{{\"id\":{},\"kind\":\"{}\",\"lane\":{},\"pos\":{},\"lat\":{},\"speed\":{},\"accel\":{},\"target_speed\":{},\"merged\":{},\"on_ramp\":{},\"style\":\"{}\"}}",
            v.id,
            match v.kind {
                crate::sim::VehicleKind::Cav => "CAV",
                crate::sim::VehicleKind::Hdv => "HDV",
            },
            v.lane,
            fmt2(v.pos),
            fmt2(v.lat),
            fmt2(v.speed),
            fmt2(v.accel),
            fmt2(v.target_speed),
            v.merged,
            v.on_ramp(&world.geometry),
            match v.style.label {
                crate::sim::StyleLabel::Aggressive => "aggressive",
                crate::sim::StyleLabel::Normal => "normal",
                crate::sim::StyleLabel::Conservative => "conservative",
            },
        ));
    }
    format!(
        "{{\"time\":{},\"region_center\":{},\"merge_zone\":[{},{}],\"vehicles\":[{}]}}",
        fmt2(world.time()),
        region.center_id,
        fmt2(world.geometry.merge_zone_start()),
        fmt2(world.geometry.merge_zone_end()),
        parts.join(",")
    )
}

fn inbox_json(inbox: &[CommMessage]) -> String {
    if inbox.is_empty() {
        return "[]".to_string();
    }
    let parts: Vec<String> = inbox
        .iter()
        .map(|m| {
            format!(
                "{{\"sender\":{},\"tick\":{},\"intent\":\"{}\",\"reason\":\"{}\",\"target\":{}}}",
                m.sender,
                m.tick,
                m.intent.name(),
                m.reason.name(),
                m.target.map_or("null".to_string(), |t| t.to_string()),
            )
        })
        .collect();
    format!("[{}]", parts.join(","))
}

const FEW_SHOT_OPEN_GAP: &str = r#"State: ramp vehicle 4 at the middle of the merge zone, a clear gap in the right main lane alongside it.
{"region": 4, "source": "remote_lm", "decisions": [{"id": 4, "action": "LANE_LEFT", "reason": "gap alongside is open, merge now"}, {"id": 2, "action": "IDLE", "reason": "gap stays open without intervention"}], "messages": [{"sender": 4, "tick": 12, "intent": "LANE_LEFT", "reason": "merge_request", "target": null}]}"#;

const FEW_SHOT_TIGHT_GAP: &str = r#"State: ramp vehicle 7 approaching the merge zone, right-lane gap behind vehicle 3 too small to enter.
{"region": 7, "source": "remote_lm", "decisions": [{"id": 7, "action": "SLOWER", "reason": "wait for the gap to open"}, {"id": 3, "action": "SLOWER", "reason": "open space for the merging vehicle"}], "messages": [{"sender": 3, "tick": 5, "intent": "SLOWER", "reason": "gap_offer", "target": 7}]}"#;

/// Assemble the deterministic prompt for one region.
pub fn build_prompt(
    region: &Region,
    world: &WorldState,
    inbox: &[CommMessage],
) -> Result<PromptBundle> {
    if region.member_ids.is_empty() {
        return Err(Error::Input("cannot build a prompt for an empty region".into()));
    }
    let any_frozen = region
        .member_ids
        .iter()
        .filter_map(|id| world.vehicle(*id))
        .any(|v| v.frozen);
    let center_near_end = world
        .vehicle(region.center_id)
        .map(|v| {
            v.on_ramp(&world.geometry) && world.geometry.merge_zone_end() - v.pos < 30.0
        })
        .unwrap_or(false);
    let anomaly_note = if any_frozen {
        Some("a collision occurred in this region; prioritize safety".to_string())
    } else if center_near_end {
        Some("the merge window is closing for the centre vehicle".to_string())
    } else {
        None
    };

    Ok(PromptBundle {
        role_desc: "You are the regional coordinator for connected automated vehicles on a \
                    highway on-ramp merge segment. You decide one action per vehicle in your \
                    region for the next second."
            .to_string(),
        task_desc: "Choose actions that complete the ramp vehicle's merge safely and keep \
                    traffic flowing. Reply with a single JSON object of the exact shape \
                    {\"region\": <centre id>, \"source\": \"remote_lm\", \"decisions\": \
                    [{\"id\": <vehicle id>, \"action\": <ACTION>, \"reason\": <short text>}], \
                    \"messages\": []}. Cover each vehicle at most once; omitted vehicles hold \
                    their course."
            .to_string(),
        tool_desc: "Available actions per vehicle: LANE_LEFT (move one lane left; a ramp \
                    vehicle merges onto the main road), LANE_RIGHT (move one lane right), \
                    IDLE (hold lane and speed), FASTER (+5 m/s target speed), SLOWER (-5 m/s \
                    target speed). Main-lane vehicles asked to SLOWER or LANE_LEFT open gaps \
                    for merging traffic."
            .to_string(),
        anomaly_note,
        observation_json: region_state_json(region, world),
        steps: [
            "Observation: restate the positions, lanes and speeds that matter for the merge."
                .to_string(),
            "Action Analysis: for each vehicle, weigh which actions keep it safe and help \
             the merge."
                .to_string(),
            "Critical Thinking: check the combined actions for conflicts, then commit to \
             the final JSON decision."
                .to_string(),
        ],
        few_shot: vec![FEW_SHOT_OPEN_GAP.to_string(), FEW_SHOT_TIGHT_GAP.to_string()],
        inbox_json: inbox_json(inbox),
        repair_note: None,
    })
}

/// Issue one chat-completion request with retry/backoff. Timeouts and 5xx
/// responses are retried up to `max_retries` with exponential backoff; 4xx
/// responses fail immediately.
pub fn query_backend(cfg: &BackendConfig, prompt: &PromptBundle) -> Result<String> {
    cfg.validate()?;
    let payload = json!({
        "model": cfg.model_name,
        "messages": [
            {"role": "system", "content": prompt.render_system()},
            {"role": "user", "content": prompt.render_user()},
        ],
        "temperature": cfg.temperature,
    });

    let mut attempt = 0u32;
    loop {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(cfg.timeout_secs))
            .build();
        let mut req = agent
            .post(&cfg.endpoint)
            .set("content-type", "application/json");
        if let Some(key) = &cfg.api_key {
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        match req.send_json(payload.clone()) {
            Ok(resp) => {
                let body: Value = resp
                    .into_json()
                    .map_err(|e| Error::Parse(format!("backend response is not JSON: {e}")))?;
                return extract_choice_text(&body);
            }
            Err(ureq::Error::Status(code, _)) if (400..500).contains(&code) => {
                return Err(Error::BackendRequest(format!("backend returned status {code}")));
            }
            Err(err) => {
                if attempt >= cfg.max_retries {
                    return Err(Error::BackendUnavailable(format!(
                        "backend still failing after {attempt} retries: {err}"
                    )));
                }
                std::thread::sleep(BACKOFF_BASE * 2u32.pow(attempt));
                attempt += 1;
            }
        }
    }
}

fn extract_choice_text(body: &Value) -> Result<String> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| Error::Parse("backend response has no choices".into()))?;
    let text = choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(|t| t.as_str())
        .ok_or_else(|| Error::Parse("backend choice carries no text".into()))?;
    Ok(text.to_string())
}

/// Scan free-form text for the first balanced JSON object that parses and
/// validates as a regional decision. Tolerates surrounding prose and code
/// fences; never panics on malformed input.
pub fn parse_decision(text: &str, region: &Region) -> Result<RegionalDecision> {
    let bytes = text.as_bytes();
    let mut saw_candidate = false;
    let mut search_from = 0usize;
    while let Some(open_rel) = text[search_from..].find('{') {
        let open = search_from + open_rel;
        if let Some(end) = balanced_object_end(bytes, open) {
            saw_candidate = true;
            let candidate = &text[open..=end];
            if let Ok(value) = serde_json::from_str::<Value>(candidate) {
                if value.get("decisions").is_some() {
                    return decision_from_value(&value, region);
                }
            }
        }
        search_from = open + 1;
    }
    if saw_candidate {
        Err(Error::Parse("no JSON object with a decisions field found".into()))
    } else {
        Err(Error::Parse("response contains no JSON object".into()))
    }
}

/// Index of the matching `}` for the `{` at `start`, honoring strings and
/// escapes; `None` when unbalanced.
fn balanced_object_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn decision_from_value(value: &Value, region: &Region) -> Result<RegionalDecision> {
    let raw = value
        .get("decisions")
        .and_then(|d| d.as_array())
        .ok_or_else(|| Error::Validation("decisions must be an array".into()))?;

    let mut decisions: Vec<DecisionEntry> = Vec::new();
    let mut seen: BTreeMap<u64, ()> = BTreeMap::new();
    for entry in raw {
        let id = entry
            .get("id")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Validation("decision entry lacks an integer id".into()))?;
        if !region.member_ids.contains(&id) {
            return Err(Error::Validation(format!("decision for id {id} outside the region")));
        }
        if seen.insert(id, ()).is_some() {
            return Err(Error::Validation(format!("duplicate decision for id {id}")));
        }
        let action_name = entry
            .get("action")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Validation(format!("decision for id {id} lacks an action")))?;
        let action = MetaAction::from_name(action_name).ok_or_else(|| {
            Error::Validation(format!("unknown action {action_name:?} for id {id}"))
        })?;
        let reason = entry
            .get("reason")
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string();
        decisions.push(DecisionEntry { id, action, reason });
    }
    if let Some(msgs) = value.get("messages") {
        if !msgs.is_null() && !msgs.is_array() {
            return Err(Error::Validation("messages must be an array when present".into()));
        }
    }

    Ok(RegionalDecision {
        region: region.center_id,
        source: DecisionSource::RemoteLm,
        decisions,
        messages: Vec::new(),
    })
}

/// Map a validated decision onto per-member logits: the chosen action gets
/// `1/rank_temperature`, everything else 0; members the model skipped get an
/// all-zero row (uniform after softmax, so they idle under the tie order).
pub fn lm_scores(
    decision: &RegionalDecision,
    region: &Region,
    rank_temperature: Option<f64>,
) -> ActionScores {
    let logit = 1.0 / rank_temperature.unwrap_or(DEFAULT_RANK_TEMPERATURE);
    let mut scores = BTreeMap::new();
    for &id in &region.member_ids {
        let mut row = [0.0; 5];
        if let Some(action) = decision.action_for(id) {
            row[action.index()] = logit;
        }
        scores.insert(id, row);
    }
    ActionScores { scores }
}

/// One prompt/response pair of a recorded session.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt: String,
    pub response: String,
}

enum Transport {
    Http,
    Replay(HashMap<String, VecDeque<String>>),
}

/// A stateful handle on the remote backend: counts calls against a budget,
/// optionally records every exchange, and can replay a recorded transcript
/// instead of touching the network.
pub struct LmSession {
    cfg: BackendConfig,
    transport: Transport,
    recorder: Option<File>,
    calls_made: usize,
    call_budget: usize,
}

impl LmSession {
    pub fn http(cfg: BackendConfig) -> Self {
        Self {
            cfg,
            transport: Transport::Http,
            recorder: None,
            calls_made: 0,
            call_budget: DEFAULT_CALL_BUDGET,
        }
    }

    /// Replay a recorded transcript; lookups are keyed by the exact prompt,
    /// served in recording order for repeated prompts.
    pub fn replay(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line).map_err(|e| {
                Error::Parse(format!("transcript line {}: {e}", idx + 1))
            })?;
            map.entry(entry.prompt).or_default().push_back(entry.response);
        }
        Ok(Self {
            cfg: BackendConfig::default(),
            transport: Transport::Replay(map),
            recorder: None,
            calls_made: 0,
            call_budget: DEFAULT_CALL_BUDGET,
        })
    }

    /// Append every exchange to a transcript file (flushed per record).
    pub fn with_recorder(mut self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.recorder = Some(file);
        Ok(self)
    }

    pub fn with_call_budget(mut self, budget: usize) -> Self {
        self.call_budget = budget;
        self
    }

    /// Reset the per-episode call counter.
    pub fn begin_episode(&mut self) {
        self.calls_made = 0;
    }

    pub fn calls_made(&self) -> usize {
        self.calls_made
    }

    /// Complete one prompt through the configured transport.
    pub fn complete(&mut self, prompt: &PromptBundle) -> Result<String> {
        if self.calls_made >= self.call_budget {
            return Err(Error::BackendUnavailable(format!(
                "per-episode call budget of {} exhausted",
                self.call_budget
            )));
        }
        self.calls_made += 1;
        let key = prompt.cache_key();
        match &mut self.transport {
            Transport::Http => {
                let response = query_backend(&self.cfg, prompt)?;
                if let Some(file) = &mut self.recorder {
                    let entry = TranscriptEntry {
                        prompt: key,
                        response: response.clone(),
                    };
                    let line = serde_json::to_string(&entry)?;
                    writeln!(file, "{line}")?;
                    file.flush()?;
                }
                Ok(response)
            }
            Transport::Replay(map) => map
                .get_mut(&key)
                .and_then(|q| q.pop_front())
                .ok_or_else(|| {
                    Error::BackendUnavailable("prompt not present in replay transcript".into())
                }),
        }
    }
}
