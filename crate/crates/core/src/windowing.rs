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

//! Micro-batch window assembly with a lateness watermark, eid
//! deduplication, and the persistent global node index.
//!
//! A window `w` covers `[t0 + w*W, t0 + (w+1)*W)`. An event belonging to
//! an earlier window still merges into it while stream progress (the
//! maximum event time seen) is within the lateness watermark of that
//! window's close; beyond the watermark it is dropped and counted, never
//! merged into a stale window. Windows are flushed append-closed once the
//! watermark passes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::Value;

use crate::codec::{CodecError, Reader, Writer};
use crate::dagfeat::{self, SessionDagSummary};
use crate::novelty::CountMinSketch;
use crate::schema::{EdgeType, Event, NodeRef, NodeType, Status, TimestampMs};

pub const WINDOW_MAGIC: [u8; 4] = *b"NEBW";
pub const NODE_INDEX_MAGIC: [u8; 4] = *b"NEBI";
pub const SEEN_MAGIC: [u8; 4] = *b"NEBE";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    /// Window length W in milliseconds.
    pub window_ms: i64,
    /// Lateness watermark L in milliseconds; `0 <= L < W`.
    pub lateness_ms: i64,
    /// Stream origin t0 in milliseconds.
    pub origin_ms: TimestampMs,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { window_ms: 10_000, lateness_ms: 2_000, origin_ms: 0 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window_ms <= 0 {
            return Err("window_ms must be > 0".to_string());
        }
        if self.lateness_ms < 0 || self.lateness_ms >= self.window_ms {
            return Err("lateness_ms must satisfy 0 <= L < W".to_string());
        }
        Ok(())
    }

    pub fn window_start(&self, window_id: u64) -> TimestampMs {
        self.origin_ms + window_id as i64 * self.window_ms
    }

    pub fn window_end(&self, window_id: u64) -> TimestampMs {
        self.window_start(window_id) + self.window_ms
    }

    fn home_window(&self, ts: TimestampMs) -> Option<u64> {
        if ts < self.origin_ms {
            return None;
        }
        Some(((ts - self.origin_ms).div_euclid(self.window_ms)) as u64)
    }
}

/// Placement decision for one arriving event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// Belongs to the currently open window.
    Current(u64),
    /// Belongs to an earlier window that is still within its watermark.
    LateMerge(u64),
    /// Opens a window ahead of the current one.
    RollForward(u64),
    /// Arrived past its window's watermark; dropped and counted.
    TooLate,
}

/// Places an event timestamp given the highest window already opened and
/// the stream progress (max event time observed). Progress is what
/// distinguishes a within-watermark straggler from one arriving after its
/// window sealed.
pub fn assign_window(
    ts: TimestampMs,
    cfg: &WindowConfig,
    current_window: u64,
    progress: TimestampMs,
) -> Placement {
    let Some(home) = cfg.home_window(ts) else {
        return Placement::TooLate;
    };
    if home > current_window {
        Placement::RollForward(home)
    } else if home == current_window {
        Placement::Current(home)
    } else if progress <= cfg.window_end(home) + cfg.lateness_ms {
        Placement::LateMerge(home)
    } else {
        Placement::TooLate
    }
}

/// Persistent mapping from node references to dense global integer IDs,
/// assigned in first-seen order and never reused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeIndex {
    forward: BTreeMap<(NodeType, String), u64>,
    refs: Vec<NodeRef>,
}

impl NodeIndex {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    /// Returns the stable id for `r`, assigning the next dense id on first
    /// sight.
    pub fn globalize(&mut self, r: &NodeRef) -> u64 {
        if let Some(&id) = self.forward.get(&(r.node_type, r.key.clone())) {
            return id;
        }
        let id = self.refs.len() as u64;
        self.forward.insert((r.node_type, r.key.clone()), id);
        self.refs.push(r.clone());
        id
    }

    pub fn lookup(&self, r: &NodeRef) -> Option<u64> {
        self.forward.get(&(r.node_type, r.key.clone())).copied()
    }

    pub fn resolve(&self, id: u64) -> Option<&NodeRef> {
        self.refs.get(id as usize)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(NODE_INDEX_MAGIC, FORMAT_VERSION);
        w.put_u32(self.refs.len() as u32);
        for r in &self.refs {
            w.put_u8(r.node_type.code());
            w.put_str(&r.key);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::open(bytes, NODE_INDEX_MAGIC, FORMAT_VERSION)?;
        let n = r.u32()?;
        let mut index = NodeIndex::default();
        for _ in 0..n {
            let code = r.u8()?;
            let key = r.string()?;
            let node_type = NodeType::from_code(code)
                .ok_or_else(|| CodecError::CorruptContainer(format!("node type code {code}")))?;
            index.globalize(&NodeRef::new(node_type, key));
        }
        r.done()?;
        Ok(index)
    }
}

/// Seen-eid state backing deduplication; entries are evicted once they age
/// past the horizon (default `10 * (W + L)`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeenState {
    horizon_ms: i64,
    entries: BTreeMap<String, TimestampMs>,
}

impl SeenState {
    pub fn new(horizon_ms: i64) -> Self {
        SeenState { horizon_ms, entries: BTreeMap::new() }
    }

    pub fn with_default_horizon(cfg: &WindowConfig) -> Self {
        Self::new(10 * (cfg.window_ms + cfg.lateness_ms))
    }

    pub fn horizon_ms(&self) -> i64 {
        self.horizon_ms
    }

    pub fn contains(&self, eid: &str) -> bool {
        self.entries.contains_key(eid)
    }

    /// Records an eid; returns false when it was already present.
    pub fn insert(&mut self, eid: &str, ts: TimestampMs) -> bool {
        if self.entries.contains_key(eid) {
            return false;
        }
        self.entries.insert(eid.to_string(), ts);
        true
    }

    pub fn evict_older_than(&mut self, cutoff: TimestampMs) {
        self.entries.retain(|_, &mut ts| ts >= cutoff);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(SEEN_MAGIC, FORMAT_VERSION);
        w.put_i64(self.horizon_ms);
        w.put_u32(self.entries.len() as u32);
        for (eid, &ts) in &self.entries {
            w.put_str(eid);
            w.put_i64(ts);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::open(bytes, SEEN_MAGIC, FORMAT_VERSION)?;
        let horizon_ms = r.i64()?;
        let n = r.u32()?;
        let mut entries = BTreeMap::new();
        for _ in 0..n {
            let eid = r.string()?;
            let ts = r.i64()?;
            entries.insert(eid, ts);
        }
        r.done()?;
        Ok(SeenState { horizon_ms, entries })
    }
}

/// Per-edge attribute record carried alongside the typed arrays.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EdgeAttrs {
    pub session_id: String,
    pub provider: String,
    pub status: Status,
    pub scope: Option<String>,
    pub bytes: Option<u64>,
    pub dest_host: Option<String>,
    pub dest_port: Option<u16>,
    pub prompt_text: Option<String>,
}

impl EdgeAttrs {
    fn from_event(e: &Event) -> Self {
        EdgeAttrs {
            session_id: e.session_id.clone(),
            provider: e.provider.clone(),
            status: e.status,
            scope: e.scope.clone(),
            bytes: e.bytes,
            dest_host: e.dest_host.clone(),
            dest_port: e.dest_port,
            prompt_text: e.prompt_text.clone(),
        }
    }

    fn to_line(&self) -> String {
        let esc = |s: &str| serde_json::to_string(s).unwrap();
        let mut out = String::with_capacity(96);
        out.push('{');
        out.push_str(&format!("\"session_id\":{}", esc(&self.session_id)));
        out.push_str(&format!(",\"provider\":{}", esc(&self.provider)));
        out.push_str(&format!(",\"status\":{}", esc(self.status.label())));
        if let Some(s) = &self.scope {
            out.push_str(&format!(",\"scope\":{}", esc(s)));
        }
        if let Some(b) = self.bytes {
            out.push_str(&format!(",\"bytes\":{b}"));
        }
        if let Some(h) = &self.dest_host {
            out.push_str(&format!(",\"dest_host\":{}", esc(h)));
        }
        if let Some(p) = self.dest_port {
            out.push_str(&format!(",\"dest_port\":{p}"));
        }
        if let Some(p) = &self.prompt_text {
            out.push_str(&format!(",\"prompt_text\":{}", esc(p)));
        }
        out.push('}');
        out
    }

    fn from_line(line: &str) -> Result<Self, CodecError> {
        let bad = |what: &str| CodecError::CorruptContainer(format!("attr record: {what}"));
        let v: Value = serde_json::from_str(line).map_err(|e| bad(&e.to_string()))?;
        let obj = v.as_object().ok_or_else(|| bad("not an object"))?;
        let req = |k: &str| -> Result<String, CodecError> {
            obj.get(k)
                .and_then(Value::as_str)
                .map(String::from)
                .ok_or_else(|| bad(k))
        };
        let opt = |k: &str| obj.get(k).and_then(Value::as_str).map(String::from);
        Ok(EdgeAttrs {
            session_id: req("session_id")?,
            provider: req("provider")?,
            status: Status::parse(&req("status")?).ok_or_else(|| bad("status"))?,
            scope: opt("scope"),
            bytes: obj.get("bytes").and_then(Value::as_u64),
            dest_host: opt("dest_host"),
            dest_port: obj.get("dest_port").and_then(Value::as_u64).map(|p| p as u16),
            prompt_text: opt("prompt_text"),
        })
    }
}

/// One micro-batch graph: parallel typed arrays over global node IDs,
/// edges sorted by `(edge_ts, eid)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowGraph {
    pub window_id: u64,
    pub t_start: TimestampMs,
    pub t_end: TimestampMs,
    pub node_ids: Vec<u64>,
    pub node_types: Vec<NodeType>,
    pub edge_src: Vec<u64>,
    pub edge_dst: Vec<u64>,
    pub edge_types: Vec<EdgeType>,
    pub edge_ts: Vec<TimestampMs>,
    pub edge_eids: Vec<String>,
    pub edge_attrs: Vec<EdgeAttrs>,
}

impl WindowGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_src.len()
    }

    /// Local (dense, window-scoped) position of a global node id.
    pub fn local_of(&self, global: u64) -> Option<usize> {
        self.node_ids.binary_search(&global).ok()
    }
}

/// Builds the window graph and per-session DAG summaries for one
/// completed batch. Mutates the node index append-only, consumes the
/// seen-eid state for dedup, and reads the bigram sketch for rare-path
/// scores before folding this batch's bigrams into it.
pub fn build_window(
    window_id: u64,
    events: &[Event],
    index: &mut NodeIndex,
    seen: &mut SeenState,
    cfg: &WindowConfig,
    bigram_cms: &mut CountMinSketch,
) -> (WindowGraph, Vec<SessionDagSummary>) {
    let mut batch: Vec<&Event> = events.iter().collect();
    batch.sort_by(|a, b| (a.ts, &a.eid).cmp(&(b.ts, &b.eid)));
    batch.dedup_by(|a, b| a.eid == b.eid);
    batch.retain(|e| seen.insert(&e.eid, e.ts));

    let mut graph = WindowGraph {
        window_id,
        t_start: cfg.window_start(window_id),
        t_end: cfg.window_end(window_id),
        ..WindowGraph::default()
    };

    // Session grouping for DAG summaries; read the sketch for every
    // session first, then apply this batch's updates.
    let mut sessions: BTreeMap<&str, Vec<&Event>> = BTreeMap::new();
    for e in &batch {
        sessions.entry(&e.session_id).or_default().push(e);
    }
    let mut summaries = Vec::with_capacity(sessions.len());
    for events in sessions.values() {
        summaries.push(dagfeat::summarize_session(events, bigram_cms).expect("non-empty session"));
    }
    for events in sessions.values() {
        for pair in dagfeat::tool_bigrams(events) {
            bigram_cms.update(pair.as_bytes());
        }
    }

    for e in &batch {
        let src = index.globalize(&e.src);
        let dst = index.globalize(&e.dst);
        graph.edge_src.push(src);
        graph.edge_dst.push(dst);
        graph.edge_types.push(e.etype);
        graph.edge_ts.push(e.ts);
        graph.edge_eids.push(e.eid.clone());
        graph.edge_attrs.push(EdgeAttrs::from_event(e));
    }

    let mut present: Vec<u64> = graph.edge_src.iter().chain(graph.edge_dst.iter()).copied().collect();
    present.sort_unstable();
    present.dedup();
    graph.node_types = present
        .iter()
        .map(|&id| index.resolve(id).expect("id just globalized").node_type)
        .collect();
    graph.node_ids = present;

    seen.evict_older_than(graph.t_end - seen.horizon_ms());
    (graph, summaries)
}

/// Encodes a window graph in the `.nebwin` container layout.
pub fn serialize_window(g: &WindowGraph) -> Vec<u8> {
    let mut w = Writer::with_header(WINDOW_MAGIC, FORMAT_VERSION);
    w.put_u64(g.window_id);
    w.put_u64(g.t_start as u64);
    w.put_u64(g.t_end as u64);
    w.put_u32(g.num_nodes() as u32);
    w.put_u32(g.num_edges() as u32);
    w.put_u64_array(&g.node_ids);
    w.put_u8_array(&g.node_types.iter().map(|t| t.code()).collect::<Vec<_>>());
    w.put_u64_array(&g.edge_src);
    w.put_u64_array(&g.edge_dst);
    w.put_u8_array(&g.edge_types.iter().map(|t| t.code()).collect::<Vec<_>>());
    w.put_u64_array(&g.edge_ts.iter().map(|&t| t as u64).collect::<Vec<_>>());
    w.put_u32(g.edge_eids.len() as u32);
    for eid in &g.edge_eids {
        w.put_str(eid);
    }
    w.put_u32(g.edge_attrs.len() as u32);
    for attrs in &g.edge_attrs {
        w.put_str(&attrs.to_line());
    }
    w.finish()
}

pub fn deserialize_window(bytes: &[u8]) -> Result<WindowGraph, CodecError> {
    let mut r = Reader::open(bytes, WINDOW_MAGIC, FORMAT_VERSION)?;
    let window_id = r.u64()?;
    let t_start = r.u64()? as i64;
    let t_end = r.u64()? as i64;
    let num_nodes = r.u32()? as usize;
    let num_edges = r.u32()? as usize;

    let node_ids = r.u64_array()?;
    let node_types = r
        .u8_array()?
        .into_iter()
        .map(|c| {
            NodeType::from_code(c)
                .ok_or_else(|| CodecError::CorruptContainer(format!("node type code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edge_src = r.u64_array()?;
    let edge_dst = r.u64_array()?;
    let edge_types = r
        .u8_array()?
        .into_iter()
        .map(|c| {
            EdgeType::from_code(c)
                .ok_or_else(|| CodecError::CorruptContainer(format!("edge type code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let edge_ts = r.u64_array()?.into_iter().map(|t| t as i64).collect::<Vec<_>>();

    let n_eids = r.u32()? as usize;
    let mut edge_eids = Vec::with_capacity(n_eids);
    for _ in 0..n_eids {
        edge_eids.push(r.string()?);
    }
    let n_attrs = r.u32()? as usize;
    let mut edge_attrs = Vec::with_capacity(n_attrs);
    for _ in 0..n_attrs {
        edge_attrs.push(EdgeAttrs::from_line(&r.string()?)?);
    }
    r.done()?;

    let g = WindowGraph {
        window_id,
        t_start,
        t_end,
        node_ids,
        node_types,
        edge_src,
        edge_dst,
        edge_types,
        edge_ts,
        edge_eids,
        edge_attrs,
    };
    let shapes_ok = g.node_ids.len() == num_nodes
        && g.node_types.len() == num_nodes
        && [
            g.edge_src.len(),
            g.edge_dst.len(),
            g.edge_types.len(),
            g.edge_ts.len(),
            g.edge_eids.len(),
            g.edge_attrs.len(),
        ]
        .iter()
        .all(|&n| n == num_edges);
    if !shapes_ok {
        return Err(CodecError::CorruptContainer("array shape mismatch".to_string()));
    }
    Ok(g)
}

/// Streaming batcher: feeds arriving events through [`assign_window`],
/// buffers open windows, and yields each window once its watermark passes.
#[derive(Debug)]
pub struct WindowAssembler {
    cfg: WindowConfig,
    current: Option<u64>,
    progress: TimestampMs,
    buffers: BTreeMap<u64, Vec<Event>>,
    too_late: u64,
}

impl WindowAssembler {
    pub fn new(cfg: WindowConfig) -> Self {
        WindowAssembler {
            cfg,
            current: None,
            progress: TimestampMs::MIN,
            buffers: BTreeMap::new(),
            too_late: 0,
        }
    }

    pub fn too_late(&self) -> u64 {
        self.too_late
    }

    /// Offers one event; returns any windows sealed by this arrival, in id
    /// order.
    pub fn offer(&mut self, event: Event) -> Vec<(u64, Vec<Event>)> {
        let placement = match self.current {
            None => match self.cfg.home_window(event.ts) {
                Some(h) => Placement::RollForward(h),
                None => Placement::TooLate,
            },
            Some(current) => assign_window(event.ts, &self.cfg, current, self.progress),
        };
        match placement {
            Placement::Current(w) | Placement::LateMerge(w) => {
                self.buffers.entry(w).or_default().push(event.clone());
            }
            Placement::RollForward(w) => {
                self.current = Some(w);
                self.buffers.entry(w).or_default().push(event.clone());
            }
            Placement::TooLate => {
                self.too_late += 1;
            }
        }
        self.progress = self.progress.max(event.ts);
        self.drain_sealed()
    }

    fn drain_sealed(&mut self) -> Vec<(u64, Vec<Event>)> {
        let sealed: Vec<u64> = self
            .buffers
            .keys()
            .copied()
            .filter(|&w| self.progress > self.cfg.window_end(w) + self.cfg.lateness_ms)
            .collect();
        sealed
            .into_iter()
            .map(|w| (w, self.buffers.remove(&w).unwrap()))
            .collect()
    }

    /// Flushes all remaining open windows at end of stream.
    pub fn finish(mut self) -> (Vec<(u64, Vec<Event>)>, u64) {
        let rest: Vec<(u64, Vec<Event>)> = core::mem::take(&mut self.buffers).into_iter().collect();
        (rest, self.too_late)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_event_line;

    fn ev(eid: &str, ts: i64, etype: &str, src: &str, dst: &str, session: &str) -> Event {
        let mut extra = String::new();
        if etype == "net_out" {
            extra = ",\"dest_host\":\"x.example\",\"dest_port\":443".to_string();
        }
        parse_event_line(&format!(
            r#"{{"eid":"{eid}","ts":{ts},"etype":"{etype}","src":"{src}","dst":"{dst}","session_id":"{session}","provider":"core","status":"ok"{extra}}}"#
        ))
        .unwrap()
    }

    fn cfg() -> WindowConfig {
        WindowConfig::default()
    }

    #[test]
    fn assign_in_window() {
        assert_eq!(assign_window(3_000, &cfg(), 0, 3_000), Placement::Current(0));
    }

    #[test]
    fn assign_late_within_watermark() {
        // Window 1 is open (progress 10_500); a 9_500 straggler still
        // merges into window 0.
        assert_eq!(assign_window(9_500, &cfg(), 1, 10_500), Placement::LateMerge(0));
    }

    #[test]
    fn assign_too_late_beyond_watermark() {
        // Same timestamp arriving once progress passed t_end + L.
        assert_eq!(assign_window(9_500, &cfg(), 1, 13_000), Placement::TooLate);
    }

    #[test]
    fn assign_opens_future_window() {
        assert_eq!(assign_window(25_000, &cfg(), 0, 9_000), Placement::RollForward(2));
    }

    #[test]
    fn globalize_is_dense_and_stable() {
        let mut index = NodeIndex::default();
        let tool = NodeRef::new(NodeType::Tool, "http_post");
        let agent = NodeRef::new(NodeType::Agent, "main");
        assert_eq!(index.globalize(&tool), 0);
        assert_eq!(index.globalize(&tool), 0);
        assert_eq!(index.globalize(&agent), 1);
        let reloaded = NodeIndex::from_bytes(&index.to_bytes()).unwrap();
        assert_eq!(reloaded.lookup(&tool), Some(0));
        assert_eq!(reloaded.lookup(&agent), Some(1));
        assert_eq!(reloaded, index);
    }

    fn exfil_batch() -> Vec<Event> {
        vec![
            ev("e1", 1_000, "invoke", "agent:main", "tool:read_config", "s1"),
            ev("e2", 2_000, "invoke", "agent:main", "tool:summarize", "s1"),
            ev("e3", 3_000, "invoke", "agent:main", "tool:log", "s1"),
            ev("e4", 4_000, "invoke", "agent:main", "tool:http_post", "s1"),
        ]
    }

    #[test]
    fn build_exfil_window() {
        let mut index = NodeIndex::default();
        let mut seen = SeenState::with_default_horizon(&cfg());
        let mut cms = CountMinSketch::new(2, 64, 0);
        let mut batch = exfil_batch();
        batch.push(ev("e4:net", 4_000, "net_out", "tool:http_post", "remote:evil.example:443", "s1"));
        let (g, summaries) = build_window(0, &batch, &mut index, &mut seen, &cfg(), &mut cms);
        assert_eq!(g.num_edges(), 5);
        assert_eq!(summaries.len(), 1);
        assert_eq!(summaries[0].session_id, "s1");
        // invoke + net_out at equal ts sort by eid, keeping cause first.
        assert_eq!(g.edge_eids[3], "e4");
        assert_eq!(g.edge_eids[4], "e4:net");
    }

    #[test]
    fn duplicate_eids_collapse() {
        let mut index = NodeIndex::default();
        let mut seen = SeenState::with_default_horizon(&cfg());
        let mut cms = CountMinSketch::new(2, 64, 0);
        let mut batch = exfil_batch();
        batch.extend(exfil_batch());
        let (g, _) = build_window(0, &batch, &mut index, &mut seen, &cfg(), &mut cms);
        assert_eq!(g.num_edges(), 4);

        // A second submission adds nothing: every eid is already seen.
        let (g2, s2) = build_window(0, &exfil_batch(), &mut index, &mut seen, &cfg(), &mut cms);
        assert_eq!(g2.num_edges(), 0);
        assert!(s2.is_empty());
    }

    #[test]
    fn empty_batch_builds_empty_graph() {
        let mut index = NodeIndex::default();
        let mut seen = SeenState::with_default_horizon(&cfg());
        let mut cms = CountMinSketch::new(2, 64, 0);
        let (g, summaries) = build_window(3, &[], &mut index, &mut seen, &cfg(), &mut cms);
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.num_nodes(), 0);
        assert_eq!(g.t_start, 30_000);
        assert!(summaries.is_empty());
    }

    #[test]
    fn window_container_round_trips() {
        let mut index = NodeIndex::default();
        let mut seen = SeenState::with_default_horizon(&cfg());
        let mut cms = CountMinSketch::new(2, 64, 0);
        let mut batch = exfil_batch();
        batch.push(ev("e4:net", 4_000, "net_out", "tool:http_post", "remote:evil.example:443", "s1"));
        let (g, _) = build_window(0, &batch, &mut index, &mut seen, &cfg(), &mut cms);

        let bytes = serialize_window(&g);
        assert_eq!(deserialize_window(&bytes).unwrap(), g);
        assert_eq!(serialize_window(&deserialize_window(&bytes).unwrap()), bytes);

        assert!(matches!(
            deserialize_window(&bytes[..bytes.len() - 2]),
            Err(CodecError::CorruptContainer(_))
        ));
    }

    #[test]
    fn assembler_seals_on_watermark() {
        let mut asm = WindowAssembler::new(cfg());
        assert!(asm.offer(ev("a", 1_000, "invoke", "agent:main", "tool:log", "s1")).is_empty());
        assert!(asm.offer(ev("b", 10_500, "invoke", "agent:main", "tool:log", "s1")).is_empty());
        // Straggler for window 0 within the watermark.
        assert!(asm.offer(ev("c", 9_700, "invoke", "agent:main", "tool:log", "s1")).is_empty());
        // Progress beyond 12_000 seals window 0.
        let sealed = asm.offer(ev("d", 12_500, "invoke", "agent:main", "tool:log", "s1"));
        assert_eq!(sealed.len(), 1);
        assert_eq!(sealed[0].0, 0);
        assert_eq!(sealed[0].1.len(), 2);
        // Another 9_700 copy is now beyond the watermark.
        assert!(asm.offer(ev("e", 9_700, "invoke", "agent:main", "tool:log", "s1")).is_empty());
        assert_eq!(asm.too_late(), 1);
        let (rest, dropped) = asm.finish();
        assert_eq!(rest.len(), 1);
        assert_eq!(dropped, 1);
    }
}
