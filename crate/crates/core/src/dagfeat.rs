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

//! Session-DAG scalar summaries and the per-edge feature rows.
//!
//! The session DAG orders a session's events by `(ts, eid)` and links each
//! event to its direct successor, plus an explicit edge from an invoke to
//! the `net_out` it caused (recognized by the `<eid>:net` suffix used by
//! the collector). Scalars derived from that DAG feed both feature rows
//! and the fused DAG score.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::math::{clip01, log2, squash};
use crate::novelty::{self, Allowlist, CountMinSketch, TtlTable};
use crate::schema::{EdgeType, Event, Status};
use crate::windowing::{NodeIndex, WindowGraph};

/// Ports not flagged as nonstandard in net attributes.
pub const STANDARD_PORTS: [u16; 4] = [80, 443, 8443, 1883];

/// Feature vector width: 3 one-hot + 7 DAG scalars + rarity + destination
/// novelty + 3 net attributes + 2 scope flags.
pub const FEATURE_DIM: usize = 3 + 7 + 1 + 1 + 3 + 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DagError {
    EmptySession,
    /// A window edge references a session with no summary.
    MissingSummary(String),
}

impl fmt::Display for DagError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DagError::EmptySession => write!(f, "cannot summarize an empty session"),
            DagError::MissingSummary(sid) => write!(f, "missing session summary for {sid:?}"),
        }
    }
}

impl core::error::Error for DagError {}

/// Per-session scalar summary of the precedence DAG.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionDagSummary {
    pub session_id: String,
    /// Longest path through the DAG, counted in edges and floored at 1.
    pub chain_len: u64,
    /// Maximum out-degree in the DAG.
    pub branching: u64,
    /// Recency of the latest install at the session tail: 1/(1+k) with k
    /// events between the install and the last event; 0 with no install.
    pub install_proximity: f64,
    pub rare_path: f64,
    pub unique_tools: u64,
    pub net_out_count: u64,
    pub install_count: u64,
    pub duration_ms: i64,
    pub has_install: bool,
}

/// Consecutive tool-name pairs of a session's invoke sequence, in the
/// canonical `a|b` form used as sketch keys.
pub fn tool_bigrams(events: &[&Event]) -> Vec<String> {
    let mut ordered: Vec<&Event> = events.to_vec();
    ordered.sort_by(|a, b| (a.ts, &a.eid).cmp(&(b.ts, &b.eid)));
    let tools: Vec<&str> = ordered
        .iter()
        .filter(|e| e.etype == EdgeType::Invoke)
        .filter_map(|e| e.tool_name.as_deref())
        .collect();
    tools.windows(2).map(|w| format!("{}|{}", w[0], w[1])).collect()
}

/// Rare-path score over a session's tool sequence: the complement of the
/// relative frequency of its least-common bigram,
/// `1 - min_b estimate(b) / (1 + total_updates)`, clipped to `[0, 1]`.
/// Sessions with fewer than two tools score 0.
pub fn rare_path_score(tools: &[&str], cms: &CountMinSketch) -> f64 {
    if tools.len() < 2 {
        return 0.0;
    }
    let total = 1.0 + cms.total_updates() as f64;
    let min_freq = tools
        .windows(2)
        .map(|w| cms.estimate(format!("{}|{}", w[0], w[1]).as_bytes()) as f64 / total)
        .fold(f64::INFINITY, f64::min);
    clip01(1.0 - min_freq)
}

/// Builds the session DAG and computes its scalars. `events` must share
/// one session id; rare-path reads (never mutates) the bigram sketch.
pub fn summarize_session(
    events: &[&Event],
    bigram_cms: &CountMinSketch,
) -> Result<SessionDagSummary, DagError> {
    if events.is_empty() {
        return Err(DagError::EmptySession);
    }
    let mut ordered: Vec<&Event> = events.to_vec();
    ordered.sort_by(|a, b| (a.ts, &a.eid).cmp(&(b.ts, &b.eid)));
    let n = ordered.len();

    let mut dag: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..n.saturating_sub(1) {
        dag.insert((i, i + 1));
    }
    // Pair each synthesized net_out with its causing invoke.
    let position: BTreeMap<&str, usize> = ordered
        .iter()
        .enumerate()
        .map(|(i, e)| (e.eid.as_str(), i))
        .collect();
    for (j, e) in ordered.iter().enumerate() {
        if e.etype != EdgeType::NetOut {
            continue;
        }
        if let Some(cause) = e.eid.strip_suffix(":net") {
            if let Some(&i) = position.get(cause) {
                if i < j {
                    dag.insert((i, j));
                }
            }
        }
    }

    // Longest path in edges; DAG edges always point forward in the sorted
    // order, so one left-to-right sweep is a topological pass.
    let mut dist = alloc::vec![0u64; n];
    let mut out_degree = alloc::vec![0u64; n];
    for &(i, j) in &dag {
        out_degree[i] += 1;
        dist[j] = dist[j].max(dist[i] + 1);
    }
    let chain_len = dist.iter().copied().max().unwrap_or(0).max(1);
    let branching = out_degree.iter().copied().max().unwrap_or(0);

    let install_count = ordered.iter().filter(|e| e.etype == EdgeType::Install).count() as u64;
    let has_install = install_count > 0;
    let install_proximity = match ordered.iter().rposition(|e| e.etype == EdgeType::Install) {
        None => 0.0,
        Some(q) => {
            let between = (n - 1).saturating_sub(q + 1);
            1.0 / (1.0 + between as f64)
        }
    };

    let tools: Vec<&str> = ordered
        .iter()
        .filter(|e| e.etype == EdgeType::Invoke)
        .filter_map(|e| e.tool_name.as_deref())
        .collect();
    let unique_tools = tools.iter().collect::<BTreeSet<_>>().len() as u64;

    Ok(SessionDagSummary {
        session_id: ordered[0].session_id.clone(),
        chain_len,
        branching,
        install_proximity,
        rare_path: rare_path_score(&tools, bigram_cms),
        unique_tools,
        net_out_count: ordered.iter().filter(|e| e.etype == EdgeType::NetOut).count() as u64,
        install_count,
        duration_ms: ordered[n - 1].ts - ordered[0].ts,
        has_install,
    })
}

/// One feature row; every component lands in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeFeatureRow {
    /// install / invoke / net_out indicator.
    pub etype_onehot: [f64; 3],
    /// chain_len, branching, install_proximity, rare_path, unique_tools,
    /// net_out_count (counts squashed by x/(1+x)), duration/W.
    pub dag_scalars: [f64; 7],
    pub rarity_pct: f64,
    pub dst_novelty: f64,
    /// log2(1+bytes)/32, status-error flag, nonstandard-port flag.
    pub net_attrs: [f64; 3],
    /// scope-shift flag, sensitive-scope flag.
    pub scope_flags: [f64; 2],
}

impl EdgeFeatureRow {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.etype_onehot);
        v.extend_from_slice(&self.dag_scalars);
        v.push(self.rarity_pct);
        v.push(self.dst_novelty);
        v.extend_from_slice(&self.net_attrs);
        v.extend_from_slice(&self.scope_flags);
        v
    }

    /// Mean of the attribute-cue components (net attrs + scope flags),
    /// the `s_attr` fusion input.
    pub fn attr_score(&self) -> f64 {
        (self.net_attrs.iter().sum::<f64>() + self.scope_flags.iter().sum::<f64>()) / 5.0
    }
}

/// Read-only state consulted during feature construction.
pub struct FeatureContext<'a> {
    pub rarity_cms: &'a CountMinSketch,
    pub ttl: &'a TtlTable,
    pub allowlist: &'a Allowlist,
    pub sensitive_scopes: &'a BTreeSet<String>,
}

fn onehot(etype: EdgeType) -> [f64; 3] {
    match etype {
        EdgeType::Install => [1.0, 0.0, 0.0],
        EdgeType::Invoke => [0.0, 1.0, 0.0],
        EdgeType::NetOut => [0.0, 0.0, 1.0],
        _ => [0.0, 0.0, 0.0],
    }
}

/// Builds one feature row per scored-type edge (install, invoke, net_out),
/// in window edge order. Returns the rows and the window edge indices they
/// describe. State is only read; last-seen touches happen after scoring.
pub fn build_features(
    window: &WindowGraph,
    summaries: &[SessionDagSummary],
    ctx: &FeatureContext<'_>,
) -> Result<(Vec<EdgeFeatureRow>, Vec<usize>), DagError> {
    let by_session: BTreeMap<&str, &SessionDagSummary> = summaries
        .iter()
        .map(|s| (s.session_id.as_str(), s))
        .collect();
    let window_ms = (window.t_end - window.t_start).max(1) as f64;

    // Running scope histogram per session, in edge order: the modal scope
    // "so far" is over strictly earlier scoped events.
    let mut scope_counts: BTreeMap<&str, BTreeMap<&str, u64>> = BTreeMap::new();

    let mut rows = Vec::new();
    let mut scored = Vec::new();
    for i in 0..window.num_edges() {
        let etype = window.edge_types[i];
        let attrs = &window.edge_attrs[i];

        let scope_shift = match &attrs.scope {
            None => 0.0,
            Some(scope) => {
                let hist = scope_counts.entry(attrs.session_id.as_str()).or_default();
                let modal = hist
                    .iter()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                    .map(|(s, _)| *s);
                let shift = match modal {
                    Some(m) if m != scope.as_str() => 1.0,
                    _ => 0.0,
                };
                *hist.entry(scope.as_str()).or_insert(0) += 1;
                shift
            }
        };

        if !etype.is_scored() {
            continue;
        }
        let summary = by_session
            .get(attrs.session_id.as_str())
            .ok_or_else(|| DagError::MissingSummary(attrs.session_id.clone()))?;

        let triple = (
            window.node_types[window.local_of(window.edge_src[i]).unwrap()],
            etype,
            window.node_types[window.local_of(window.edge_dst[i]).unwrap()],
        );
        let dst_novelty = if etype == EdgeType::NetOut {
            let host = attrs.dest_host.as_deref().unwrap_or("");
            let port = attrs.dest_port.unwrap_or(0);
            novelty::dst_novelty_parts(host, port, ctx.allowlist, ctx.ttl, window.edge_ts[i])
        } else {
            0.0
        };
        let nonstandard_port = match attrs.dest_port {
            Some(p) if etype == EdgeType::NetOut => {
                if STANDARD_PORTS.contains(&p) {
                    0.0
                } else {
                    1.0
                }
            }
            _ => 0.0,
        };
        let sensitive_scope = match &attrs.scope {
            Some(s) if ctx.sensitive_scopes.contains(s) => 1.0,
            _ => 0.0,
        };

        rows.push(EdgeFeatureRow {
            etype_onehot: onehot(etype),
            dag_scalars: [
                squash(summary.chain_len as f64),
                squash(summary.branching as f64),
                summary.install_proximity,
                summary.rare_path,
                squash(summary.unique_tools as f64),
                squash(summary.net_out_count as f64),
                clip01(summary.duration_ms as f64 / window_ms),
            ],
            rarity_pct: novelty::rarity_percentile(ctx.rarity_cms, triple),
            dst_novelty,
            net_attrs: [
                clip01(log2(1.0 + attrs.bytes.unwrap_or(0) as f64) / 32.0),
                if attrs.status == Status::Ok { 0.0 } else { 1.0 },
                nonstandard_port,
            ],
            scope_flags: [scope_shift, sensitive_scope],
        });
        scored.push(i);
    }
    Ok((rows, scored))
}

/// Edge indices kept under the lite profile: installs, net_outs, and
/// invokes of tools in the sensitive set. Always a subset of the scored
/// set.
pub fn lite_filter(
    window: &WindowGraph,
    index: &NodeIndex,
    sensitive_tools: &BTreeSet<String>,
) -> Vec<usize> {
    (0..window.num_edges())
        .filter(|&i| match window.edge_types[i] {
            EdgeType::Install | EdgeType::NetOut => true,
            EdgeType::Invoke => index
                .resolve(window.edge_dst[i])
                .map(|r| sensitive_tools.contains(&r.key))
                .unwrap_or(false),
            _ => false,
        })
        .collect()
}

/// Default sensitive-invoke tool set for the lite profile.
pub fn default_sensitive_tools() -> BTreeSet<String> {
    ["read_config", "credential_harvester", "reolink_snapshot", "remove_server"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// Default sensitive scope tags.
pub fn default_sensitive_scopes() -> BTreeSet<String> {
    ["credential", "config", "secret", "camera", "lock.open", "siren.off"]
        .into_iter()
        .map(String::from)
        .collect()
}
