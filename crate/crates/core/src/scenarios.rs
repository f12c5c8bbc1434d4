// Copyright 2026 the nebula authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Deterministic smart-home traffic synthesis: benign routine sessions
//! with diurnal arrival rates, the three attack templates (chain-of-tool
//! exfiltration, install persistence, device impact) with evasion
//! parameters, and the transparent weak-label rules.
//!
//! Generation is a pure function of the config: session start times come
//! from one scheduling stream, and each session derives its own RNG from
//! the master seed and slot index, so streams are byte-identical across
//! runs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fusion::GuardrailCorpus;
use crate::math::ln;
use crate::novelty::Allowlist;
use crate::schema::{EdgeType, Event, NodeRef, NodeType, Status, TimestampMs};

const MS_PER_HOUR: i64 = 3_600_000;
const MS_PER_DAY: i64 = 86_400_000;

/// Hourly session-rate multipliers (index = hour of day).
const DIURNAL: [f64; 24] = [
    0.2, 0.15, 0.1, 0.05, 0.1, 0.3, 0.8, 1.4, 1.6, 1.4, 1.3, 1.4, 2.0, 1.5, 1.2, 1.2, 1.3, 1.6,
    1.9, 1.8, 1.5, 1.0, 0.6, 0.35,
];

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvasionConfig {
    /// Inclusive range of benign filler invokes inserted into attack
    /// chains.
    pub filler_steps: (u32, u32),
    /// Inclusive range of extra inter-step delay in milliseconds.
    pub delay_jitter_ms: (i64, i64),
    /// Rotate attack egress endpoints per instance.
    pub endpoint_churn: bool,
    /// Replace verbatim injection prompts with scripted rephrasings.
    pub paraphrase: bool,
}

impl Default for EvasionConfig {
    fn default() -> Self {
        EvasionConfig {
            filler_steps: (0, 2),
            delay_jitter_ms: (0, 2_000),
            endpoint_churn: true,
            paraphrase: false,
        }
    }
}

impl EvasionConfig {
    pub fn none() -> Self {
        EvasionConfig {
            filler_steps: (0, 0),
            delay_jitter_ms: (0, 0),
            endpoint_churn: false,
            paraphrase: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub device: String,
    pub tool: String,
    pub role: String,
}

/// Parses the `device|tool|role` catalog format.
pub fn parse_catalog(text: &str) -> Vec<CatalogEntry> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let mut parts = l.split('|');
            Some(CatalogEntry {
                device: parts.next()?.to_string(),
                tool: parts.next()?.to_string(),
                role: parts.next()?.to_string(),
            })
        })
        .collect()
}

pub fn default_catalog() -> Vec<CatalogEntry> {
    parse_catalog(include_str!("../data/device_catalog.txt"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_ms: i64,
    pub sessions_per_hour: f64,
    pub attack_prevalence: f64,
    pub evasion: EvasionConfig,
    pub device_catalog: Vec<CatalogEntry>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            duration_ms: 24 * MS_PER_HOUR,
            sessions_per_hour: 30.0,
            attack_prevalence: 0.10,
            evasion: EvasionConfig::default(),
            device_catalog: default_catalog(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.attack_prevalence) {
            return Err("attack_prevalence must be in [0, 1]".to_string());
        }
        if self.duration_ms <= 0 {
            return Err("duration_ms must be positive".to_string());
        }
        if self.evasion.filler_steps.0 > self.evasion.filler_steps.1
            || self.evasion.delay_jitter_ms.0 > self.evasion.delay_jitter_ms.1
            || self.evasion.delay_jitter_ms.0 < 0
        {
            return Err("evasion ranges must be non-negative and ordered".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SessionLabel {
    Benign,
    ExfilChain,
    InstallPersistence,
    DeviceImpact,
}

impl SessionLabel {
    pub fn label(self) -> &'static str {
        match self {
            SessionLabel::Benign => "benign",
            SessionLabel::ExfilChain => "exfil_chain",
            SessionLabel::InstallPersistence => "install_persistence",
            SessionLabel::DeviceImpact => "device_impact",
        }
    }

    pub fn parse(label: &str) -> Option<SessionLabel> {
        [
            SessionLabel::Benign,
            SessionLabel::ExfilChain,
            SessionLabel::InstallPersistence,
            SessionLabel::DeviceImpact,
        ]
        .into_iter()
        .find(|l| l.label() == label)
    }

    pub fn is_attack(self) -> bool {
        self != SessionLabel::Benign
    }
}

impl fmt::Display for SessionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Template-side ground truth: one label per generated session plus the
/// edges each template considers part of the attack.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    pub labels: BTreeMap<String, SessionLabel>,
    pub red_edges: BTreeMap<String, Vec<String>>,
}

impl GroundTruth {
    fn mark(&mut self, session_id: &str, label: SessionLabel, red: Vec<String>) {
        self.labels.insert(session_id.to_string(), label);
        if !red.is_empty() {
            self.red_edges.insert(session_id.to_string(), red);
        }
    }

    pub fn merge(&mut self, other: GroundTruth) {
        self.labels.extend(other.labels);
        self.red_edges.extend(other.red_edges);
    }
}

/// One scheduled session: identity, start time, and the derived RNG seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionSlot {
    pub session_id: String,
    pub start_ts: TimestampMs,
    pub seed: u64,
}

/// The hosts benign traffic egresses to; written out as the pipeline
/// allowlist.
pub fn generator_allowlist() -> Allowlist {
    let mut a = Allowlist::default();
    for host in [
        "hub.home.lan",
        "nas.local",
        "*.vendor.example",
        "weather.example",
        "mail.example",
        "push.example",
        "mqtt.home.lan",
    ] {
        a.add_host(host);
    }
    a
}

/// Providers considered part of the sanctioned catalog by the weak rules.
pub fn benign_providers() -> BTreeSet<String> {
    ["core"].into_iter().map(String::from).collect()
}

fn parse_paraphrases(text: &str) -> BTreeMap<usize, Vec<String>> {
    let mut map: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((idx, phrase)) = line.split_once('|') {
            if let Ok(i) = idx.parse::<usize>() {
                map.entry(i - 1).or_default().push(phrase.to_string());
            }
        }
    }
    map
}

/// The scripted paraphrase table, three variants per injection phrase.
pub fn paraphrase_table() -> BTreeMap<usize, Vec<String>> {
    parse_paraphrases(include_str!("../data/guardrail_paraphrases.txt"))
}

struct SessionBuilder {
    session_id: String,
    t: TimestampMs,
    seq: u32,
    jitter: (i64, i64),
    events: Vec<Event>,
}

impl SessionBuilder {
    fn new(slot: &SessionSlot, jitter: (i64, i64)) -> Self {
        SessionBuilder {
            session_id: slot.session_id.clone(),
            t: slot.start_ts,
            seq: 0,
            jitter,
            events: Vec::new(),
        }
    }

    fn next_eid(&mut self) -> String {
        self.seq += 1;
        format!("{}-e{:03}", self.session_id, self.seq)
    }

    fn advance(&mut self, base_ms: i64, rng: &mut ChaCha8Rng) {
        let jitter = if self.jitter.1 > self.jitter.0 {
            rng.random_range(self.jitter.0..=self.jitter.1)
        } else {
            self.jitter.0
        };
        self.t += base_ms + jitter;
    }

    fn invoke(
        &mut self,
        tool: &str,
        provider: &str,
        scope: Option<&str>,
        prompt: Option<String>,
    ) -> String {
        let eid = self.next_eid();
        self.events.push(Event {
            eid: eid.clone(),
            ts: self.t,
            etype: EdgeType::Invoke,
            src: NodeRef::new(NodeType::Agent, "main"),
            dst: NodeRef::new(NodeType::Tool, tool),
            session_id: self.session_id.clone(),
            provider: provider.to_string(),
            tool_name: Some(tool.to_string()),
            scope: scope.map(String::from),
            status: Status::Ok,
            bytes: None,
            dest_host: None,
            dest_port: None,
            prompt_text: prompt,
        });
        eid
    }

    fn install(&mut self, provider: &str) -> String {
        let eid = self.next_eid();
        self.events.push(Event {
            eid: eid.clone(),
            ts: self.t,
            etype: EdgeType::Install,
            src: NodeRef::new(NodeType::Agent, "main"),
            dst: NodeRef::new(NodeType::McpServer, provider),
            session_id: self.session_id.clone(),
            provider: provider.to_string(),
            tool_name: None,
            scope: Some("registry".to_string()),
            status: Status::Ok,
            bytes: None,
            dest_host: None,
            dest_port: None,
            prompt_text: None,
        });
        eid
    }

    fn action(&mut self, tool: &str, device: &str, scope: &str) -> String {
        let eid = format!("{}:act", self.events.last().map(|e| e.eid.clone()).unwrap_or_else(|| self.next_eid()));
        self.events.push(Event {
            eid: eid.clone(),
            ts: self.t,
            etype: EdgeType::Action,
            src: NodeRef::new(NodeType::Tool, tool),
            dst: NodeRef::new(NodeType::Device, device),
            session_id: self.session_id.clone(),
            provider: "core".to_string(),
            tool_name: Some(tool.to_string()),
            scope: Some(scope.to_string()),
            status: Status::Ok,
            bytes: None,
            dest_host: None,
            dest_port: None,
            prompt_text: None,
        });
        eid
    }

    /// Synthesized egress for the invoke `cause`; mirrors the collector's
    /// `<eid>:net` convention.
    fn net_out(
        &mut self,
        cause: &str,
        tool: &str,
        provider: &str,
        host: &str,
        port: u16,
        bytes: u64,
        scope: Option<&str>,
    ) -> String {
        let eid = format!("{cause}:net");
        self.events.push(Event {
            eid: eid.clone(),
            ts: self.t,
            etype: EdgeType::NetOut,
            src: NodeRef::new(NodeType::Tool, tool),
            dst: NodeRef::new(NodeType::Remote, format!("{host}:{port}")),
            session_id: self.session_id.clone(),
            provider: provider.to_string(),
            tool_name: Some(tool.to_string()),
            scope: scope.map(String::from),
            status: Status::Ok,
            bytes: Some(bytes),
            dest_host: Some(host.to_string()),
            dest_port: Some(port),
            prompt_text: None,
        });
        eid
    }
}

fn pick_device<'a>(catalog: &'a [CatalogEntry], role: &str, rng: &mut ChaCha8Rng) -> &'a CatalogEntry {
    let matching: Vec<&CatalogEntry> = catalog.iter().filter(|c| c.role == role).collect();
    if matching.is_empty() {
        &catalog[0]
    } else {
        matching[rng.random_range(0..matching.len())]
    }
}

fn benign_prompt(rng: &mut ChaCha8Rng, corpus: &GuardrailCorpus) -> Option<String> {
    if rng.random::<f64>() < 0.25 {
        Some(corpus.benign[rng.random_range(0..corpus.benign.len())].clone())
    } else {
        None
    }
}

fn in_night_tod(ts: TimestampMs) -> bool {
    let tod = ts.rem_euclid(MS_PER_DAY);
    tod >= 22 * MS_PER_HOUR || tod < 6 * MS_PER_HOUR
}

/// Emits one benign routine session.
fn benign_session(cfg: &ScenarioConfig, slot: &SessionSlot, corpus: &GuardrailCorpus) -> Vec<Event> {
    let mut rng = ChaCha8Rng::seed_from_u64(slot.seed);
    let mut b = SessionBuilder::new(slot, (0, 400));
    let catalog = &cfg.device_catalog;
    let roll = rng.random::<f64>();
    let prompt = benign_prompt(&mut rng, corpus);

    // Template choice; the benign day-time unlock swaps to a media scene
    // at night so it never mimics the night-unlock attack.
    let choice = if roll < 0.13 {
        0
    } else if roll < 0.25 {
        1
    } else if roll < 0.32 {
        if in_night_tod(slot.start_ts) { 6 } else { 2 }
    } else if roll < 0.38 {
        3
    } else if roll < 0.50 {
        4
    } else if roll < 0.64 {
        5
    } else if roll < 0.79 {
        6
    } else if roll < 0.87 {
        7
    } else if roll < 0.93 {
        8
    } else {
        9
    };
    match choice {
        0 => {
            // Morning routine: lights, coffee, climate, notify.
            let light = pick_device(catalog, "lighting", &mut rng);
            b.invoke(&light.tool, "core", Some("light.on"), prompt);
            b.action(&light.tool, &light.device, "light.on");
            b.advance(700, &mut rng);
            let plug = pick_device(catalog, "appliance", &mut rng);
            b.invoke(&plug.tool, "core", Some("power.on"), None);
            b.action(&plug.tool, &plug.device, "power.on");
            b.advance(900, &mut rng);
            let climate = pick_device(catalog, "comfort", &mut rng);
            b.invoke(&climate.tool, "core", Some("climate.set"), None);
            b.action(&climate.tool, &climate.device, "climate.set");
            b.advance(600, &mut rng);
            let n = b.invoke("notify_push", "core", Some("notify"), None);
            b.net_out(&n, "notify_push", "core", "push.example", 443, 256 + rng.random_range(0..512), Some("notify"));
        }
        1 => {
            // Evening lockdown.
            let lock = pick_device(catalog, "lock", &mut rng);
            b.invoke(&lock.tool, "core", Some("lock.close"), prompt);
            b.action(&lock.tool, &lock.device, "lock.close");
            b.advance(800, &mut rng);
            let alarm = pick_device(catalog, "alarm", &mut rng);
            b.invoke(&alarm.tool, "core", Some("alarm.arm"), None);
            b.action(&alarm.tool, &alarm.device, "alarm.arm");
            b.advance(500, &mut rng);
            let n = b.invoke("notify_push", "core", Some("notify"), None);
            b.net_out(&n, "notify_push", "core", "push.example", 443, 256 + rng.random_range(0..512), Some("notify"));
        }
        2 => {
            // Day-time unlock with notification.
            let lock = pick_device(catalog, "lock", &mut rng);
            b.invoke(&lock.tool, "core", Some("lock.open"), prompt);
            b.action(&lock.tool, &lock.device, "lock.open");
            b.advance(600, &mut rng);
            let n = b.invoke("notify_push", "core", Some("notify"), None);
            b.net_out(&n, "notify_push", "core", "push.example", 443, 200 + rng.random_range(0..400), Some("notify"));
        }
        3 => {
            // Leak response.
            let sensor = pick_device(catalog, "sensor", &mut rng);
            b.invoke(&sensor.tool, "core", Some("sensor"), prompt);
            b.advance(400, &mut rng);
            let irrigation = pick_device(catalog, "appliance", &mut rng);
            b.invoke(&irrigation.tool, "core", Some("power.off"), None);
            b.action(&irrigation.tool, &irrigation.device, "power.off");
            b.advance(500, &mut rng);
            let n = b.invoke("notify_push", "core", Some("notify"), None);
            b.net_out(&n, "notify_push", "core", "push.example", 443, 300 + rng.random_range(0..300), Some("notify"));
        }
        4 => {
            // Camera snapshot archived to the NAS.
            b.invoke("reolink_snapshot", "core", Some("camera"), prompt);
            b.advance(1_200, &mut rng);
            let n = b.invoke("nas_upload", "core", Some("file"), None);
            b.net_out(&n, "nas_upload", "core", "nas.local", 8443, 50_000 + rng.random_range(0..150_000), Some("file"));
        }
        5 => {
            // Climate report by mail.
            let sensor = pick_device(catalog, "sensor", &mut rng);
            b.invoke(&sensor.tool, "core", Some("sensor"), prompt);
            b.advance(600, &mut rng);
            b.invoke("summarize", "core", None, None);
            b.advance(700, &mut rng);
            let n = b.invoke("email_send", "core", Some("report"), None);
            b.net_out(&n, "email_send", "core", "mail.example", 443, 2_000 + rng.random_range(0..6_000), Some("report"));
        }
        6 => {
            // Media scene.
            let media = pick_device(catalog, "media", &mut rng);
            b.invoke(&media.tool, "core", Some("media.play"), prompt);
            b.action(&media.tool, &media.device, "media.play");
            if rng.random::<f64>() < 0.5 {
                b.advance(900, &mut rng);
                let light = pick_device(catalog, "lighting", &mut rng);
                b.invoke(&light.tool, "core", Some("light.dim"), None);
                b.action(&light.tool, &light.device, "light.dim");
            }
        }
        7 => {
            // Telemetry push over MQTT.
            let sensor = pick_device(catalog, "sensor", &mut rng);
            b.invoke(&sensor.tool, "core", Some("sensor"), prompt);
            b.advance(300, &mut rng);
            let n = b.invoke("mqtt_publish", "core", Some("telemetry"), None);
            b.net_out(&n, "mqtt_publish", "core", "mqtt.home.lan", 1883, 128 + rng.random_range(0..256), Some("telemetry"));
        }
        8 => {
            // Vendor plugin install; the weak provider rule deliberately
            // fires on this routine, which keeps the rules-only baseline
            // honest.
            let n = b.invoke("registry_fetch", "core", Some("registry"), prompt);
            b.net_out(&n, "registry_fetch", "core", "registry.vendor.example", 443, 4_000 + rng.random_range(0..8_000), Some("registry"));
            b.advance(1_500, &mut rng);
            b.install("vendor-plugins");
            b.advance(1_000, &mut rng);
            b.invoke("plugin_configure", "vendor-plugins", Some("registry"), None);
        }
        _ => {
            // Firmware refresh from the vendor channel.
            b.invoke("read_config", "core", Some("config"), prompt);
            b.advance(800, &mut rng);
            b.invoke("summarize", "core", None, None);
            b.advance(900, &mut rng);
            let n = b.invoke("vendor_fetch", "core", Some("file"), None);
            b.net_out(&n, "vendor_fetch", "core", "firmware.vendor.example", 443, 30_000 + rng.random_range(0..90_000), Some("file"));
        }
    }
    b.events
}

fn attack_prompt(
    rng: &mut ChaCha8Rng,
    corpus: &GuardrailCorpus,
    paraphrases: &BTreeMap<usize, Vec<String>>,
    paraphrase: bool,
    preferred: &[usize],
) -> String {
    let idx = preferred[rng.random_range(0..preferred.len())];
    if paraphrase {
        let variants = &paraphrases[&idx];
        variants[rng.random_range(0..variants.len())].clone()
    } else {
        corpus.injection[idx].clone()
    }
}

fn filler_step(b: &mut SessionBuilder, rng: &mut ChaCha8Rng) {
    let tool = ["sensor_read", "light_ctl", "log", "weather_fetch"][rng.random_range(0..4)];
    b.invoke(tool, "core", None, None);
    b.advance(500, rng);
}

/// Chain-of-tool exfiltration: sensitive read, camouflage, then egress to
/// a fresh endpoint.
pub fn gen_exfil_chain(cfg: &ScenarioConfig, slot: &SessionSlot) -> (Vec<Event>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(slot.seed);
    let corpus = GuardrailCorpus::bundled();
    let paraphrases = paraphrase_table();
    let mut b = SessionBuilder::new(slot, cfg.evasion.delay_jitter_ms);

    let prompt = attack_prompt(
        &mut rng,
        &corpus,
        &paraphrases,
        cfg.evasion.paraphrase,
        &[0, 2, 3, 9, 19],
    );
    let fillers = if cfg.evasion.filler_steps.1 > 0 {
        rng.random_range(cfg.evasion.filler_steps.0..=cfg.evasion.filler_steps.1)
    } else {
        0
    };

    let mut red = Vec::new();
    red.push(b.invoke("read_config", "core", Some("config"), Some(prompt)));
    b.advance(600, &mut rng);
    for _ in 0..fillers {
        filler_step(&mut b, &mut rng);
    }
    b.invoke("summarize", "core", None, None);
    b.advance(700, &mut rng);
    b.invoke("log", "core", None, None);
    b.advance(500, &mut rng);
    let host = if cfg.evasion.endpoint_churn {
        format!("exfil-{:05}.dropzone.example", rng.random_range(0..100_000))
    } else {
        "drop.dropzone.example".to_string()
    };
    let port = [8081u16, 9001, 443][rng.random_range(0..3)];
    let post = b.invoke("http_post", "core", Some("file"), None);
    red.push(post.clone());
    red.push(b.net_out(
        &post,
        "http_post",
        "core",
        &host,
        port,
        8_192 + rng.random_range(0..57_344),
        Some("file"),
    ));
    (b.events, red)
}

/// Catalog extension: install a fresh provider, then repeated invoke +
/// egress to its endpoint, optionally spilling into a follow-on session.
pub fn gen_install_persistence(
    cfg: &ScenarioConfig,
    slot: &SessionSlot,
) -> (Vec<Event>, Vec<(String, Vec<String>)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(slot.seed);
    let corpus = GuardrailCorpus::bundled();
    let paraphrases = paraphrase_table();
    let provider = format!("attacker-{:08x}", splitmix64(slot.seed) as u32);
    let c2_base = format!("c2-{:08x}.badnet.example", splitmix64(slot.seed ^ 1) as u32);

    let mut sessions = Vec::new();
    let mut b = SessionBuilder::new(slot, cfg.evasion.delay_jitter_ms);
    let mut red = Vec::new();

    red.push(b.install(&provider));
    b.advance(900, &mut rng);
    let prompt = attack_prompt(
        &mut rng,
        &corpus,
        &paraphrases,
        cfg.evasion.paraphrase,
        &[1, 7, 15, 17],
    );
    let reps = 2 + rng.random_range(0..2);
    for r in 0..reps {
        let tool = if r % 2 == 0 { "credential_harvester" } else { "malicious_cross_call" };
        let scope = if r % 2 == 0 { "credential" } else { "remote" };
        let p = if r == 0 { Some(prompt.clone()) } else { None };
        let inv = b.invoke(tool, &provider, Some(scope), p);
        let host = if cfg.evasion.endpoint_churn {
            format!("c2-{:05}.badnet.example", rng.random_range(0..100_000))
        } else {
            c2_base.clone()
        };
        red.push(inv.clone());
        red.push(b.net_out(&inv, tool, &provider, &host, 8081, 4_096 + rng.random_range(0..28_672), None));
        b.advance(1_200, &mut rng);
    }
    sessions.push((b.session_id.clone(), red));
    let mut events = b.events;

    // Follow-on session reusing the installed provider without another
    // install.
    if rng.random::<f64>() < 0.35 {
        let follow = SessionSlot {
            session_id: format!("{}-b", slot.session_id),
            start_ts: slot.start_ts + 60_000 + rng.random_range(0..240_000),
            seed: splitmix64(slot.seed ^ 2),
        };
        let mut fb = SessionBuilder::new(&follow, cfg.evasion.delay_jitter_ms);
        let mut fred = Vec::new();
        for r in 0..2 {
            let tool = if r % 2 == 0 { "credential_harvester" } else { "malicious_cross_call" };
            let inv = fb.invoke(tool, &provider, Some("credential"), None);
            let host = if cfg.evasion.endpoint_churn {
                format!("c2-{:05}.badnet.example", rng.random_range(0..100_000))
            } else {
                c2_base.clone()
            };
            fred.push(inv.clone());
            fred.push(fb.net_out(&inv, tool, &provider, &host, 8081, 4_096 + rng.random_range(0..16_384), None));
            fb.advance(1_500, &mut rng);
        }
        sessions.push((fb.session_id.clone(), fred));
        events.extend(fb.events);
    }
    (events, sessions)
}

/// Physical-impact scenarios at night: unlock, silent camera, or alarm
/// suppression (siren off strictly before the unlock).
pub fn gen_device_impact(cfg: &ScenarioConfig, slot: &SessionSlot) -> (Vec<Event>, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(slot.seed);
    let corpus = GuardrailCorpus::bundled();
    let paraphrases = paraphrase_table();
    let mut b = SessionBuilder::new(slot, cfg.evasion.delay_jitter_ms);
    let catalog = &cfg.device_catalog;
    let mut red = Vec::new();

    match rng.random_range(0..3u32) {
        0 => {
            // Night unlock.
            let prompt = attack_prompt(&mut rng, &corpus, &paraphrases, cfg.evasion.paraphrase, &[18]);
            let lock = pick_device(catalog, "lock", &mut rng);
            red.push(b.invoke(&lock.tool, "core", Some("lock.open"), Some(prompt)));
            red.push(b.action(&lock.tool, &lock.device, "lock.open"));
        }
        1 => {
            // Silent camera: snapshot exfiltrated, no notification step.
            let prompt = attack_prompt(&mut rng, &corpus, &paraphrases, cfg.evasion.paraphrase, &[11]);
            red.push(b.invoke("reolink_snapshot", "core", Some("camera"), Some(prompt)));
            b.advance(900, &mut rng);
            let host = if cfg.evasion.endpoint_churn {
                format!("snoop-{:05}.dropzone.example", rng.random_range(0..100_000))
            } else {
                "snoop.dropzone.example".to_string()
            };
            let post = b.invoke("http_post", "core", Some("camera"), None);
            red.push(post.clone());
            red.push(b.net_out(&post, "http_post", "core", &host, 443, 120_000 + rng.random_range(0..380_000), Some("camera")));
        }
        _ => {
            // Alarm suppression: siren off precedes the unlock.
            let prompt = attack_prompt(&mut rng, &corpus, &paraphrases, cfg.evasion.paraphrase, &[12]);
            red.push(b.invoke("alarm_ctl", "core", Some("siren.off"), Some(prompt)));
            red.push(b.action("alarm_ctl", "reolink_camera_siren", "siren.off"));
            b.advance(1_100, &mut rng);
            let lock = pick_device(catalog, "lock", &mut rng);
            red.push(b.invoke(&lock.tool, "core", Some("lock.open"), None));
            red.push(b.action(&lock.tool, &lock.device, "lock.open"));
        }
    }
    (b.events, red)
}

/// Session start times from exponential inter-arrivals under the diurnal
/// rate table.
fn schedule(cfg: &ScenarioConfig) -> Vec<TimestampMs> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x5C4E_D01E));
    let mut starts = Vec::new();
    let mut hour_start = 0i64;
    while hour_start < cfg.duration_ms {
        let hour = ((hour_start / MS_PER_HOUR) % 24) as usize;
        let rate = cfg.sessions_per_hour * DIURNAL[hour];
        if rate > 0.0 {
            let hour_end = (hour_start + MS_PER_HOUR).min(cfg.duration_ms);
            let mut t = hour_start as f64;
            loop {
                let gap_hours = -ln(1.0 - rng.random::<f64>()) / rate;
                t += gap_hours * MS_PER_HOUR as f64;
                if t >= hour_end as f64 {
                    break;
                }
                starts.push(t as i64);
            }
        }
        hour_start += MS_PER_HOUR;
    }
    starts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Exfil,
    Persistence,
    Device,
}

/// Generates the full mixed stream: benign routines plus attack sessions
/// at the configured prevalence, events globally sorted by `(ts, eid)`.
pub fn generate(cfg: &ScenarioConfig) -> (Vec<Event>, GroundTruth) {
    cfg.validate().expect("scenario config");
    let corpus = GuardrailCorpus::bundled();
    let starts = schedule(cfg);
    let n = starts.len();

    let attack_count = (cfg.attack_prevalence * n as f64 + 0.5) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    let mut pick_rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0xA77A_C4ED));
    for i in (1..order.len()).rev() {
        let j = pick_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut attack_slots: Vec<usize> = order.into_iter().take(attack_count).collect();
    attack_slots.sort_unstable();
    let family_cycle = [
        Family::Exfil,
        Family::Persistence,
        Family::Exfil,
        Family::Persistence,
        Family::Device,
    ];
    let family_of: BTreeMap<usize, Family> = attack_slots
        .iter()
        .enumerate()
        .map(|(k, &slot)| (slot, family_cycle[k % family_cycle.len()]))
        .collect();

    let mut events = Vec::new();
    let mut truth = GroundTruth::default();
    for (idx, &start) in starts.iter().enumerate() {
        let mut slot = SessionSlot {
            session_id: format!("s{idx:06}"),
            start_ts: start,
            seed: splitmix64(cfg.seed ^ (idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        };
        match family_of.get(&idx) {
            None => {
                truth.mark(&slot.session_id, SessionLabel::Benign, Vec::new());
                events.extend(benign_session(cfg, &slot, &corpus));
            }
            Some(Family::Exfil) => {
                let (ev, red) = gen_exfil_chain(cfg, &slot);
                truth.mark(&slot.session_id, SessionLabel::ExfilChain, red);
                events.extend(ev);
            }
            Some(Family::Persistence) => {
                let (ev, sessions) = gen_install_persistence(cfg, &slot);
                for (sid, red) in sessions {
                    truth.mark(&sid, SessionLabel::InstallPersistence, red);
                }
                events.extend(ev);
            }
            Some(Family::Device) => {
                // Device impact runs at night on the same day.
                let day = slot.start_ts.div_euclid(MS_PER_DAY);
                let mut night_rng = ChaCha8Rng::seed_from_u64(splitmix64(slot.seed ^ 3));
                let offset = night_rng.random_range(0..8 * MS_PER_HOUR);
                slot.start_ts = day * MS_PER_DAY + 22 * MS_PER_HOUR + offset;
                let (ev, red) = gen_device_impact(cfg, &slot);
                truth.mark(&slot.session_id, SessionLabel::DeviceImpact, red);
                events.extend(ev);
            }
        }
    }
    events.sort_by(|a, b| (a.ts, &a.eid).cmp(&(b.ts, &b.eid)));
    (events, truth)
}

/// Benign-only stream over the same schedule (prevalence ignored).
pub fn gen_benign(cfg: &ScenarioConfig) -> (Vec<Event>, GroundTruth) {
    let benign_cfg = ScenarioConfig { attack_prevalence: 0.0, ..cfg.clone() };
    generate(&benign_cfg)
}

/// Configuration of the transparent weak-label rules.
#[derive(Debug, Clone)]
pub struct WeakRuleConfig {
    pub allowlist: Allowlist,
    pub benign_providers: BTreeSet<String>,
    pub sensitive_scopes: BTreeSet<String>,
    pub night_device_scopes: BTreeSet<String>,
    pub night_start_ms: i64,
    pub night_end_ms: i64,
}

impl Default for WeakRuleConfig {
    fn default() -> Self {
        WeakRuleConfig {
            allowlist: generator_allowlist(),
            benign_providers: benign_providers(),
            sensitive_scopes: crate::dagfeat::default_sensitive_scopes(),
            night_device_scopes: ["lock.open", "siren.off"].into_iter().map(String::from).collect(),
            night_start_ms: 22 * MS_PER_HOUR,
            night_end_ms: 6 * MS_PER_HOUR,
        }
    }
}

impl WeakRuleConfig {
    fn in_night(&self, ts: TimestampMs) -> bool {
        let tod = ts.rem_euclid(MS_PER_DAY);
        if self.night_start_ms <= self.night_end_ms {
            (self.night_start_ms..self.night_end_ms).contains(&tod)
        } else {
            tod >= self.night_start_ms || tod < self.night_end_ms
        }
    }
}

/// Weak-label outcome for one session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WeakLabelReport {
    /// Invoke to a provider outside the sanctioned catalog (the
    /// install-introduced-provider rule).
    pub rule_new_provider: bool,
    /// Sensitive-scope access followed by egress to a non-allowlisted
    /// destination.
    pub rule_sensitive_egress: bool,
    /// Lock-open or siren-off device activity inside the night interval.
    pub rule_night_device: bool,
    pub red_eids: Vec<String>,
}

impl WeakLabelReport {
    pub fn flagged(&self) -> bool {
        self.rule_new_provider || self.rule_sensitive_egress || self.rule_night_device
    }

    pub fn hits(&self) -> u32 {
        self.rule_new_provider as u32
            + self.rule_sensitive_egress as u32
            + self.rule_night_device as u32
    }
}

/// Applies the weak rules to one session's events; pure in the event list
/// and rule config.
pub fn weak_label_session(events: &[&Event], cfg: &WeakRuleConfig) -> WeakLabelReport {
    let mut ordered: Vec<&Event> = events.to_vec();
    ordered.sort_by(|a, b| (a.ts, &a.eid).cmp(&(b.ts, &b.eid)));
    let mut report = WeakLabelReport::default();
    let mut red: BTreeSet<String> = BTreeSet::new();

    // Rule 1: invokes bound to providers outside the catalog, plus the
    // installs that introduced them.
    for e in &ordered {
        match e.etype {
            EdgeType::Invoke if !cfg.benign_providers.contains(&e.provider) => {
                report.rule_new_provider = true;
                red.insert(e.eid.clone());
            }
            EdgeType::Install if !cfg.benign_providers.contains(&e.provider) => {
                red.insert(e.eid.clone());
            }
            _ => {}
        }
    }
    if !report.rule_new_provider {
        // Installs alone do not fire the rule; drop their tentative marks.
        red.clear();
    }

    // Rule 2: sensitive access then non-allowlisted egress.
    let mut first_sensitive: Option<(TimestampMs, String)> = None;
    for e in &ordered {
        if matches!(e.etype, EdgeType::Invoke | EdgeType::Access) {
            if let Some(scope) = &e.scope {
                if cfg.sensitive_scopes.contains(scope) {
                    first_sensitive = Some((e.ts, e.eid.clone()));
                    break;
                }
            }
        }
    }
    if let Some((ts0, sensitive_eid)) = first_sensitive {
        for e in &ordered {
            if e.etype == EdgeType::NetOut && e.ts >= ts0 {
                let host = e.dest_host.as_deref().unwrap_or("");
                let port = e.dest_port.unwrap_or(0);
                if !cfg.allowlist.matches(host, port) {
                    report.rule_sensitive_egress = true;
                    red.insert(sensitive_eid.clone());
                    red.insert(e.eid.clone());
                }
            }
        }
    }

    // Rule 3: night-time lock/siren activity.
    for e in &ordered {
        if matches!(e.etype, EdgeType::Action | EdgeType::Invoke) {
            if let Some(scope) = &e.scope {
                if cfg.night_device_scopes.contains(scope) && cfg.in_night(e.ts) {
                    report.rule_night_device = true;
                    red.insert(e.eid.clone());
                }
            }
        }
    }

    report.red_eids = red.into_iter().collect();
    report
}

/// Weak labels for a whole stream, grouped by session.
pub fn weak_label(events: &[Event], cfg: &WeakRuleConfig) -> BTreeMap<String, WeakLabelReport> {
    let mut by_session: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in events {
        by_session.entry(&e.session_id).or_default().push(e);
    }
    by_session
        .into_iter()
        .map(|(sid, evs)| (sid.to_string(), weak_label_session(&evs, cfg)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::serialize_event_line;

    fn small_cfg(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            duration_ms: 2 * MS_PER_HOUR,
            sessions_per_hour: 40.0,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn generation_is_byte_deterministic() {
        let (e1, t1) = generate(&small_cfg(7));
        let (e2, t2) = generate(&small_cfg(7));
        let s1: Vec<String> = e1.iter().map(serialize_event_line).collect();
        let s2: Vec<String> = e2.iter().map(serialize_event_line).collect();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert!(!e1.is_empty());
    }

    #[test]
    fn prevalence_is_respected() {
        let cfg = ScenarioConfig {
            seed: 11,
            duration_ms: 6 * MS_PER_HOUR,
            sessions_per_hour: 40.0,
            ..ScenarioConfig::default()
        };
        let (_, truth) = generate(&cfg);
        // Prevalence counts scheduled slots; follow-on persistence
        // sessions share their slot.
        let slots: BTreeSet<&str> = truth
            .labels
            .keys()
            .map(|s| s.strip_suffix("-b").unwrap_or(s.as_str()))
            .collect();
        let attack_slots = truth
            .labels
            .iter()
            .filter(|(sid, l)| l.is_attack() && !sid.ends_with("-b"))
            .count() as f64;
        let expected = (0.10 * slots.len() as f64 + 0.5).floor();
        assert!(
            (attack_slots - expected).abs() <= 1.0,
            "attacks {attack_slots} vs expected {expected}"
        );
    }

    #[test]
    fn causality_and_allowlist_hold() {
        let (events, truth) = generate(&small_cfg(3));
        let by_eid: BTreeMap<&str, &Event> =
            events.iter().map(|e| (e.eid.as_str(), e)).collect();
        let allow = generator_allowlist();
        for e in &events {
            if e.etype == EdgeType::NetOut {
                if let Some(cause) = e.eid.strip_suffix(":net") {
                    let inv = by_eid[cause];
                    assert!(e.ts >= inv.ts, "net_out precedes its invoke");
                }
                if truth.labels[&e.session_id] == SessionLabel::Benign {
                    assert!(
                        allow.matches(e.dest_host.as_deref().unwrap(), e.dest_port.unwrap()),
                        "benign egress to {:?} not allowlisted",
                        e.dest_host
                    );
                }
            }
        }
    }

    #[test]
    fn diurnal_rates_separate_night_from_noon() {
        for seed in [1, 2, 3] {
            let cfg = ScenarioConfig {
                seed,
                duration_ms: 24 * MS_PER_HOUR,
                sessions_per_hour: 30.0,
                attack_prevalence: 0.0,
                ..ScenarioConfig::default()
            };
            let starts = schedule(&cfg);
            let count_at = |hour: i64| {
                starts
                    .iter()
                    .filter(|&&t| t / MS_PER_HOUR == hour)
                    .count()
            };
            assert!(count_at(3) < count_at(12), "seed {seed}");
        }
    }

    #[test]
    fn exfil_template_shapes() {
        let cfg = ScenarioConfig { evasion: EvasionConfig::none(), ..ScenarioConfig::default() };
        let slot = SessionSlot { session_id: "sx".into(), start_ts: 40 * MS_PER_HOUR, seed: 9 };
        let (events, red) = gen_exfil_chain(&cfg, &slot);
        let invokes = events.iter().filter(|e| e.etype == EdgeType::Invoke).count();
        let nets = events.iter().filter(|e| e.etype == EdgeType::NetOut).count();
        assert_eq!((invokes, nets), (4, 1), "canonical chain without evasion");
        assert_eq!(red.len(), 3);
        assert!(events[0].prompt_text.is_some());

        let with_filler = ScenarioConfig {
            evasion: EvasionConfig { filler_steps: (2, 2), ..EvasionConfig::none() },
            ..ScenarioConfig::default()
        };
        let (events, _) = gen_exfil_chain(&with_filler, &slot);
        let invokes = events.iter().filter(|e| e.etype == EdgeType::Invoke).count();
        assert_eq!(invokes, 6, "two fillers add two invokes");

        let churn = ScenarioConfig {
            evasion: EvasionConfig { endpoint_churn: true, ..EvasionConfig::none() },
            ..ScenarioConfig::default()
        };
        let host_of = |slot_seed: u64| {
            let slot = SessionSlot { session_id: "sy".into(), start_ts: 0, seed: slot_seed };
            let (events, _) = gen_exfil_chain(&churn, &slot);
            events
                .iter()
                .find(|e| e.etype == EdgeType::NetOut)
                .unwrap()
                .dest_host
                .clone()
                .unwrap()
        };
        assert_ne!(host_of(1), host_of(2), "endpoint churn rotates hosts");
    }

    #[test]
    fn persistence_template_shapes() {
        let cfg = ScenarioConfig { evasion: EvasionConfig::none(), ..ScenarioConfig::default() };
        let slot = SessionSlot { session_id: "sp".into(), start_ts: 0, seed: 4 };
        let (events, sessions) = gen_install_persistence(&cfg, &slot);
        let installs = events.iter().filter(|e| e.etype == EdgeType::Install).count();
        assert_eq!(installs, 1, "one install regardless of follow-on sessions");
        let invokes = events.iter().filter(|e| e.etype == EdgeType::Invoke).count();
        let nets = events.iter().filter(|e| e.etype == EdgeType::NetOut).count();
        assert!(invokes >= 2 && nets == invokes, "k invoke+net_out repetitions");
        let provider = &events[0].provider;
        assert!(provider.starts_with("attacker-"), "attacker namespace");
        assert!(events.iter().all(|e| e.provider == *provider || e.provider == "core"));
        assert!(!sessions.is_empty());

        // Find a seed with a follow-on session and check provider reuse
        // without re-install.
        let mut saw_follow = false;
        for seed in 0..40 {
            let slot = SessionSlot { session_id: format!("sp{seed}"), start_ts: 0, seed };
            let (events, sessions) = gen_install_persistence(&cfg, &slot);
            if sessions.len() == 2 {
                saw_follow = true;
                let follow_id = &sessions[1].0;
                let follow: Vec<&Event> =
                    events.iter().filter(|e| &e.session_id == follow_id).collect();
                assert!(follow.iter().all(|e| e.etype != EdgeType::Install));
                assert!(follow.iter().any(|e| e.provider.starts_with("attacker-")));
            }
        }
        assert!(saw_follow, "no follow-on session in 40 seeds");
    }

    #[test]
    fn device_impact_shapes() {
        let cfg = ScenarioConfig { evasion: EvasionConfig::none(), ..ScenarioConfig::default() };
        let night_ts = 23 * MS_PER_HOUR;
        let mut saw = [false; 3];
        for seed in 0..60 {
            let slot = SessionSlot { session_id: format!("sd{seed}"), start_ts: night_ts, seed };
            let (events, _) = gen_device_impact(&cfg, &slot);
            let scopes: Vec<&str> =
                events.iter().filter_map(|e| e.scope.as_deref()).collect();
            if scopes.contains(&"siren.off") {
                saw[2] = true;
                let siren = events
                    .iter()
                    .position(|e| e.scope.as_deref() == Some("siren.off"))
                    .unwrap();
                let unlock = events
                    .iter()
                    .position(|e| e.scope.as_deref() == Some("lock.open"))
                    .unwrap();
                assert!(siren < unlock, "siren-off must precede unlock");
            } else if scopes.contains(&"camera") {
                saw[1] = true;
                assert!(
                    events.iter().all(|e| e.tool_name.as_deref() != Some("notify_push")),
                    "silent camera must not notify"
                );
                assert!(events.iter().any(|e| e.etype == EdgeType::NetOut));
            } else if scopes.contains(&"lock.open") {
                saw[0] = true;
                assert!(in_night_tod(events[0].ts));
            }
        }
        assert_eq!(saw, [true; 3], "all three device scenarios appear");
    }

    #[test]
    fn weak_rules_fire_where_expected() {
        let rules = WeakRuleConfig::default();
        let cfg = ScenarioConfig::default();

        let slot = SessionSlot { session_id: "sp".into(), start_ts: 0, seed: 4 };
        let (events, _) = gen_install_persistence(&cfg, &slot);
        let refs: Vec<&Event> = events.iter().filter(|e| e.session_id == "sp").collect();
        assert!(weak_label_session(&refs, &rules).rule_new_provider);

        let slot = SessionSlot { session_id: "sx".into(), start_ts: 40 * MS_PER_HOUR, seed: 9 };
        let (events, _) = gen_exfil_chain(&cfg, &slot);
        let refs: Vec<&Event> = events.iter().collect();
        assert!(weak_label_session(&refs, &rules).rule_sensitive_egress);
    }

    #[test]
    fn every_attack_session_is_weak_flagged() {
        let (events, truth) = generate(&ScenarioConfig {
            seed: 5,
            duration_ms: 12 * MS_PER_HOUR,
            sessions_per_hour: 30.0,
            ..ScenarioConfig::default()
        });
        let reports = weak_label(&events, &WeakRuleConfig::default());
        for (sid, label) in &truth.labels {
            if label.is_attack() {
                assert!(
                    reports[sid].flagged(),
                    "attack session {sid} ({label}) evaded its own labeler"
                );
            }
        }
        // And the benign plugin installs keep the rules imperfect.
        let benign_flagged = truth
            .labels
            .iter()
            .filter(|(sid, l)| !l.is_attack() && reports[*sid].flagged())
            .count();
        assert!(benign_flagged > 0, "rules should misfire on benign installs");
    }
}
