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

//! Rarity and novelty state: a conservative-update Count-Min sketch, a
//! TTL last-seen table over relation triples and destination buckets, and
//! the destination allowlist.
//!
//! Query operations (`ttl_novelty`, `dst_novelty`, `rarity_percentile`)
//! never mutate state; the scorer touches last-seen entries explicitly
//! after a window is scored.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::codec::{CodecError, Reader, Writer};
use crate::schema::{EdgeType, NodeType, TimestampMs};

pub const SKETCH_MAGIC: [u8; 4] = *b"NEBS";
pub const TTL_MAGIC: [u8; 4] = *b"NEBT";
const STATE_VERSION: u32 = 1;

/// Default TTL Δ: 600 s.
pub const DEFAULT_TTL_MS: i64 = 600_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NoveltyError {
    /// A query timestamp precedes a stored last-seen value; the replay is
    /// misordered.
    ClockRegression { now: TimestampMs, last_seen: TimestampMs },
}

impl fmt::Display for NoveltyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoveltyError::ClockRegression { now, last_seen } => {
                write!(f, "clock regression: now={now} < last_seen={last_seen}")
            }
        }
    }
}

impl core::error::Error for NoveltyError {}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Count-Min sketch with conservative update: an increment only raises the
/// row counters currently at the minimum, so `estimate(x) >= count(x)`
/// still holds while over-counting shrinks on skewed streams. With width
/// `w` and depth `d`, over-estimation stays below `(e/w) * total_updates`
/// with probability at least `1 - e^-d`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMinSketch {
    depth: usize,
    width: usize,
    counters: Vec<u64>,
    total_updates: u64,
    seeds: Vec<u64>,
}

impl CountMinSketch {
    pub fn new(depth: usize, width: usize, seed: u64) -> Self {
        assert!(depth >= 1 && width >= 1, "sketch dimensions must be >= 1");
        let mut state = seed ^ 0xA076_1D64_78BD_642F;
        let seeds = (0..depth).map(|_| splitmix64(&mut state)).collect();
        CountMinSketch {
            depth,
            width,
            counters: alloc::vec![0; depth * width],
            total_updates: 0,
            seeds,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn total_updates(&self) -> u64 {
        self.total_updates
    }

    fn slot(&self, row: usize, key: &[u8]) -> usize {
        // Seeded FNV-1a with a splitmix finalizer for avalanche.
        let mut h = 0xCBF2_9CE4_8422_2325u64 ^ self.seeds[row];
        for &b in key {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        let mut s = h;
        let mixed = splitmix64(&mut s);
        row * self.width + (mixed % self.width as u64) as usize
    }

    pub fn update(&mut self, key: &[u8]) {
        let slots: Vec<usize> = (0..self.depth).map(|r| self.slot(r, key)).collect();
        let current_min = slots.iter().map(|&i| self.counters[i]).min().unwrap();
        for &i in &slots {
            if self.counters[i] == current_min {
                self.counters[i] += 1;
            }
        }
        self.total_updates += 1;
    }

    pub fn estimate(&self, key: &[u8]) -> u64 {
        (0..self.depth)
            .map(|r| self.counters[self.slot(r, key)])
            .min()
            .unwrap()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(SKETCH_MAGIC, STATE_VERSION);
        w.put_u32(self.depth as u32);
        w.put_u32(self.width as u32);
        w.put_u64(self.total_updates);
        w.put_u64_array(&self.seeds);
        w.put_u64_array(&self.counters);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::open(bytes, SKETCH_MAGIC, STATE_VERSION)?;
        let depth = r.u32()? as usize;
        let width = r.u32()? as usize;
        let total_updates = r.u64()?;
        let seeds = r.u64_array()?;
        let counters = r.u64_array()?;
        r.done()?;
        if seeds.len() != depth || counters.len() != depth * width {
            return Err(CodecError::CorruptContainer("sketch shape".to_string()));
        }
        Ok(CountMinSketch { depth, width, counters, total_updates, seeds })
    }
}

/// Canonical byte form of a relation triple, fixed so sketches and TTL
/// checkpoints stay portable: `src_type|etype|dst_type`.
pub fn triple_key(src: NodeType, etype: EdgeType, dst: NodeType) -> String {
    format!("{}|{}|{}", src.label(), etype.label(), dst.label())
}

/// Frequency-complement rarity of a relation triple:
/// `1 - estimate / (1 + total_updates)`.
pub fn rarity_percentile(s: &CountMinSketch, triple: (NodeType, EdgeType, NodeType)) -> f64 {
    let key = triple_key(triple.0, triple.1, triple.2);
    let est = s.estimate(key.as_bytes()) as f64;
    (1.0 - est / (1.0 + s.total_updates() as f64)).clamp(0.0, 1.0)
}

/// Last-seen table with a fixed TTL Δ. Tracks relation type triples,
/// `(provider, tool)` pairs, and destination host / host:port buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TtlTable {
    ttl_ms: i64,
    triples: BTreeMap<String, TimestampMs>,
    provider_tools: BTreeMap<String, TimestampMs>,
    hosts: BTreeMap<String, TimestampMs>,
    host_ports: BTreeMap<String, TimestampMs>,
}

impl TtlTable {
    pub fn new(ttl_ms: i64) -> Self {
        assert!(ttl_ms > 0, "TTL must be positive");
        TtlTable {
            ttl_ms,
            triples: BTreeMap::new(),
            provider_tools: BTreeMap::new(),
            hosts: BTreeMap::new(),
            host_ports: BTreeMap::new(),
        }
    }

    pub fn ttl_ms(&self) -> i64 {
        self.ttl_ms
    }

    fn fresh(&self, last_seen: Option<&TimestampMs>, now: TimestampMs) -> bool {
        matches!(last_seen, Some(&seen) if now - seen <= self.ttl_ms)
    }

    /// TTL novelty indicator: 1 when the triple was never seen or was last
    /// seen more than Δ ago. Read-only.
    pub fn ttl_novelty(
        &self,
        triple: (NodeType, EdgeType, NodeType),
        now: TimestampMs,
    ) -> Result<bool, NoveltyError> {
        let key = triple_key(triple.0, triple.1, triple.2);
        match self.triples.get(&key) {
            None => Ok(true),
            Some(&seen) if now < seen => {
                Err(NoveltyError::ClockRegression { now, last_seen: seen })
            }
            Some(&seen) => Ok(now - seen > self.ttl_ms),
        }
    }

    /// Records an observation of the triple. Last-seen values never move
    /// backwards.
    pub fn touch_triple(&mut self, triple: (NodeType, EdgeType, NodeType), now: TimestampMs) {
        let key = triple_key(triple.0, triple.1, triple.2);
        let slot = self.triples.entry(key).or_insert(now);
        *slot = (*slot).max(now);
    }

    pub fn touch_provider_tool(&mut self, provider: &str, tool: &str, now: TimestampMs) {
        let slot = self
            .provider_tools
            .entry(format!("{provider}|{tool}"))
            .or_insert(now);
        *slot = (*slot).max(now);
    }

    pub fn provider_tool_seen_within(&self, provider: &str, tool: &str, now: TimestampMs) -> bool {
        self.fresh(self.provider_tools.get(&format!("{provider}|{tool}")), now)
    }

    pub fn host_seen_within(&self, host: &str, now: TimestampMs) -> bool {
        self.fresh(self.hosts.get(&host.to_lowercase()), now)
    }

    pub fn host_port_seen_within(&self, host: &str, port: u16, now: TimestampMs) -> bool {
        self.fresh(
            self.host_ports.get(&format!("{}:{port}", host.to_lowercase())),
            now,
        )
    }

    pub fn touch_host(&mut self, host: &str, port: u16, now: TimestampMs) {
        let host = host.to_lowercase();
        let slot = self.hosts.entry(host.clone()).or_insert(now);
        *slot = (*slot).max(now);
        let slot = self.host_ports.entry(format!("{host}:{port}")).or_insert(now);
        *slot = (*slot).max(now);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_header(TTL_MAGIC, STATE_VERSION);
        w.put_i64(self.ttl_ms);
        for map in [&self.triples, &self.provider_tools, &self.hosts, &self.host_ports] {
            w.put_u32(map.len() as u32);
            for (k, &v) in map {
                w.put_str(k);
                w.put_i64(v);
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::open(bytes, TTL_MAGIC, STATE_VERSION)?;
        let ttl_ms = r.i64()?;
        let mut maps: [BTreeMap<String, TimestampMs>; 4] = Default::default();
        for map in maps.iter_mut() {
            let n = r.u32()?;
            for _ in 0..n {
                let k = r.string()?;
                let v = r.i64()?;
                map.insert(k, v);
            }
        }
        r.done()?;
        let [triples, provider_tools, hosts, host_ports] = maps;
        Ok(TtlTable { ttl_ms, triples, provider_tools, hosts, host_ports })
    }
}

/// Destination allowlist: host patterns (exact or `*.suffix` wildcard,
/// subdomains only) plus `(host, port)` pairs. Matching is
/// case-insensitive; an empty allowlist matches nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Allowlist {
    host_patterns: Vec<String>,
    pairs: Vec<(String, u16)>,
}

fn pattern_matches(pattern: &str, host: &str) -> bool {
    match pattern.strip_prefix("*.") {
        Some(suffix) => {
            host.len() > suffix.len() + 1 && host.ends_with(suffix)
                && host.as_bytes()[host.len() - suffix.len() - 1] == b'.'
        }
        None => pattern == host,
    }
}

impl Allowlist {
    pub fn add_host(&mut self, pattern: &str) {
        self.host_patterns.push(pattern.to_lowercase());
    }

    pub fn add_host_port(&mut self, pattern: &str, port: u16) {
        self.pairs.push((pattern.to_lowercase(), port));
    }

    pub fn matches(&self, host: &str, port: u16) -> bool {
        let host = host.to_lowercase();
        self.host_patterns.iter().any(|p| pattern_matches(p, &host))
            || self
                .pairs
                .iter()
                .any(|(p, lp)| *lp == port && pattern_matches(p, &host))
    }

    pub fn is_empty(&self) -> bool {
        self.host_patterns.is_empty() && self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.host_patterns.len() + self.pairs.len()
    }

    /// Parses the allowlist text format: one `host` or `host:port` entry
    /// per line, `#` comments, blank lines ignored.
    pub fn parse(text: &str) -> Allowlist {
        let mut list = Allowlist::default();
        for line in text.lines() {
            let entry = line.split('#').next().unwrap_or("").trim();
            if entry.is_empty() {
                continue;
            }
            match entry.rsplit_once(':') {
                Some((host, port)) if port.chars().all(|c| c.is_ascii_digit()) && !port.is_empty() => {
                    match port.parse::<u16>() {
                        Ok(p) if p >= 1 => list.add_host_port(host, p),
                        _ => list.add_host(entry),
                    }
                }
                _ => list.add_host(entry),
            }
        }
        list
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for p in &self.host_patterns {
            out.push_str(p);
            out.push('\n');
        }
        for (p, port) in &self.pairs {
            out.push_str(&format!("{p}:{port}\n"));
        }
        out
    }
}

/// Destination novelty against the allowlist and TTL host buckets:
/// 0 for allowlisted or fully familiar destinations, 0.5 for a fresh port
/// on a familiar host, 1 for an unknown or TTL-expired host. Read-only.
pub fn dst_novelty_parts(
    host: &str,
    port: u16,
    allow: &Allowlist,
    ttl: &TtlTable,
    now: TimestampMs,
) -> f64 {
    if allow.matches(host, port) {
        return 0.0;
    }
    if ttl.host_seen_within(host, now) {
        if ttl.host_port_seen_within(host, port, now) {
            0.0
        } else {
            0.5
        }
    } else {
        1.0
    }
}

/// [`dst_novelty_parts`] for a full event; callers must pass a `net_out`.
pub fn dst_novelty(
    e: &crate::schema::Event,
    allow: &Allowlist,
    ttl: &TtlTable,
) -> f64 {
    debug_assert_eq!(e.etype, EdgeType::NetOut);
    let fallback_host = || {
        e.dst
            .key
            .rsplit_once(':')
            .map(|(h, _)| h.to_string())
            .unwrap_or_else(|| e.dst.key.clone())
    };
    let host = e.dest_host.clone().unwrap_or_else(fallback_host);
    let port = e.dest_port.unwrap_or(0);
    dst_novelty_parts(&host, port, allow, ttl, e.ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_sketch_estimates_zero() {
        let s = CountMinSketch::new(4, 64, 7);
        assert_eq!(s.estimate(b"x"), 0);
    }

    #[test]
    fn estimate_never_undercounts() {
        let mut s = CountMinSketch::new(4, 64, 7);
        for _ in 0..3 {
            s.update(b"x");
        }
        assert!(s.estimate(b"x") >= 3);
        assert_eq!(s.total_updates(), 3);
    }

    #[test]
    fn rarity_for_unseen_triple_is_one() {
        let s = CountMinSketch::new(4, 256, 1);
        let t = (NodeType::Agent, EdgeType::Invoke, NodeType::Tool);
        assert_eq!(rarity_percentile(&s, t), 1.0);
    }

    #[test]
    fn rarity_for_dominant_triple_matches_formula() {
        let mut s = CountMinSketch::new(4, 256, 1);
        let t = (NodeType::Tool, EdgeType::NetOut, NodeType::Remote);
        let key = triple_key(t.0, t.1, t.2);
        for _ in 0..100 {
            s.update(key.as_bytes());
        }
        let got = rarity_percentile(&s, t);
        assert!((got - (1.0 - 100.0 / 101.0)).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn ttl_novelty_trichotomy() {
        let mut t = TtlTable::new(DEFAULT_TTL_MS);
        let triple = (NodeType::Agent, EdgeType::Install, NodeType::McpServer);
        assert_eq!(t.ttl_novelty(triple, 1000), Ok(true));
        t.touch_triple(triple, 1_000_000);
        assert_eq!(t.ttl_novelty(triple, 1_000_000 + 5_000), Ok(false));
        assert_eq!(t.ttl_novelty(triple, 1_000_000 + DEFAULT_TTL_MS), Ok(false));
        assert_eq!(t.ttl_novelty(triple, 1_000_000 + DEFAULT_TTL_MS + 1), Ok(true));
    }

    #[test]
    fn regression_is_an_error() {
        let mut t = TtlTable::new(1000);
        let triple = (NodeType::Agent, EdgeType::Invoke, NodeType::Tool);
        t.touch_triple(triple, 5000);
        assert!(matches!(
            t.ttl_novelty(triple, 4000),
            Err(NoveltyError::ClockRegression { .. })
        ));
    }

    #[test]
    fn touch_never_decreases() {
        let mut t = TtlTable::new(1000);
        let triple = (NodeType::Agent, EdgeType::Invoke, NodeType::Tool);
        t.touch_triple(triple, 5000);
        t.touch_triple(triple, 3000);
        assert_eq!(t.ttl_novelty(triple, 5500), Ok(false));
        assert_eq!(t.ttl_novelty(triple, 6001), Ok(true));
    }

    #[test]
    fn allowlist_wildcard_and_case() {
        let list = Allowlist::parse("*.example.com\nnas.local:8443\n# comment\n");
        assert!(list.matches("Media.Example.COM", 443));
        assert!(!list.matches("example.com", 443), "wildcard is subdomain-only");
        assert!(list.matches("NAS.local", 8443));
        assert!(!list.matches("nas.local", 80));
        assert!(!Allowlist::default().matches("anything", 443));
    }

    #[test]
    fn dst_novelty_ladder() {
        let mut ttl = TtlTable::new(DEFAULT_TTL_MS);
        let mut allow = Allowlist::default();
        allow.add_host("*.example.com");
        allow.add_host_port("nas.local", 8443);

        assert_eq!(dst_novelty_parts("media.example.com", 443, &allow, &ttl, 0), 0.0);
        assert_eq!(dst_novelty_parts("evil.example", 443, &allow, &ttl, 0), 1.0);

        ttl.touch_host("evil.example", 443, 1000);
        assert_eq!(dst_novelty_parts("evil.example", 443, &allow, &ttl, 2000), 0.0);
        assert_eq!(dst_novelty_parts("evil.example", 8081, &allow, &ttl, 2000), 0.5);
        let late = 1000 + DEFAULT_TTL_MS + 1;
        assert_eq!(dst_novelty_parts("evil.example", 8081, &allow, &ttl, late), 1.0);
    }

    #[test]
    fn checkpoints_round_trip() {
        let mut s = CountMinSketch::new(3, 128, 99);
        for i in 0..50u32 {
            s.update(&i.to_le_bytes());
        }
        assert_eq!(CountMinSketch::from_bytes(&s.to_bytes()).unwrap(), s);

        let mut t = TtlTable::new(60_000);
        t.touch_triple((NodeType::Agent, EdgeType::Invoke, NodeType::Tool), 42);
        t.touch_host("a.example", 443, 50);
        t.touch_provider_tool("core", "log", 60);
        assert_eq!(TtlTable::from_bytes(&t.to_bytes()).unwrap(), t);
    }
}
