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

//! Event vocabulary and the line record format.
//!
//! The node and edge vocabularies are closed: eight node types, six edge
//! types, three statuses. Anything else is a parse error, never a silent
//! extension. Provider identity is an attribute, not a type, so a tool
//! exposed by a hostile server is still a `tool` node.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde_json::Value;

/// Millisecond timestamps; signed so watermark arithmetic never underflows.
pub type TimestampMs = i64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeType {
    Agent,
    McpServer,
    Tool,
    Device,
    Remote,
    Resource,
    Host,
    Session,
}

impl NodeType {
    pub const ALL: [NodeType; 8] = [
        NodeType::Agent,
        NodeType::McpServer,
        NodeType::Tool,
        NodeType::Device,
        NodeType::Remote,
        NodeType::Resource,
        NodeType::Host,
        NodeType::Session,
    ];

    pub fn label(self) -> &'static str {
        match self {
            NodeType::Agent => "agent",
            NodeType::McpServer => "mcp_server",
            NodeType::Tool => "tool",
            NodeType::Device => "device",
            NodeType::Remote => "remote",
            NodeType::Resource => "resource",
            NodeType::Host => "host",
            NodeType::Session => "session",
        }
    }

    pub fn parse(label: &str) -> Option<NodeType> {
        Self::ALL.iter().copied().find(|t| t.label() == label)
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&t| t == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<NodeType> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeType {
    Invoke,
    Install,
    NetOut,
    Action,
    Access,
    Perm,
}

impl EdgeType {
    pub const ALL: [EdgeType; 6] = [
        EdgeType::Invoke,
        EdgeType::Install,
        EdgeType::NetOut,
        EdgeType::Action,
        EdgeType::Access,
        EdgeType::Perm,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EdgeType::Invoke => "invoke",
            EdgeType::Install => "install",
            EdgeType::NetOut => "net_out",
            EdgeType::Action => "action",
            EdgeType::Access => "access",
            EdgeType::Perm => "perm",
        }
    }

    pub fn parse(label: &str) -> Option<EdgeType> {
        Self::ALL.iter().copied().find(|t| t.label() == label)
    }

    pub fn code(self) -> u8 {
        Self::ALL.iter().position(|&t| t == self).unwrap() as u8
    }

    pub fn from_code(code: u8) -> Option<EdgeType> {
        Self::ALL.get(code as usize).copied()
    }

    /// Edge classes that enter feature construction and scoring.
    pub fn is_scored(self) -> bool {
        matches!(self, EdgeType::Invoke | EdgeType::Install | EdgeType::NetOut)
    }
}

impl fmt::Display for EdgeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Status {
    Ok,
    Error,
    Denied,
}

impl Default for Status {
    fn default() -> Self {
        Status::Ok
    }
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
            Status::Denied => "denied",
        }
    }

    pub fn parse(label: &str) -> Option<Status> {
        [Status::Ok, Status::Error, Status::Denied]
            .into_iter()
            .find(|s| s.label() == label)
    }
}

/// Typed node reference; the wire form is `"<node_type>:<key>"`, split on
/// the first colon so keys like `evil.example:443` survive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub node_type: NodeType,
    pub key: String,
}

impl NodeRef {
    pub fn new(node_type: NodeType, key: impl Into<String>) -> Self {
        NodeRef { node_type, key: key.into() }
    }

    pub fn parse(encoded: &str) -> Result<NodeRef, SchemaError> {
        let (type_label, key) = encoded.split_once(':').ok_or_else(|| SchemaError::violation(
            "node_ref",
            format!("expected <node_type>:<key>, got {encoded:?}"),
        ))?;
        let node_type = NodeType::parse(type_label).ok_or_else(|| {
            SchemaError::violation("node_type", format!("unknown node type {type_label:?}"))
        })?;
        if key.is_empty() {
            return Err(SchemaError::violation("node_ref", "empty node key"));
        }
        Ok(NodeRef::new(node_type, key))
    }
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.node_type.label(), self.key)
    }
}

/// One normalized control-plane record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub eid: String,
    pub ts: TimestampMs,
    pub etype: EdgeType,
    pub src: NodeRef,
    pub dst: NodeRef,
    pub session_id: String,
    pub provider: String,
    pub tool_name: Option<String>,
    pub scope: Option<String>,
    pub status: Status,
    pub bytes: Option<u64>,
    pub dest_host: Option<String>,
    pub dest_port: Option<u16>,
    pub prompt_text: Option<String>,
}

impl Event {
    /// The `(src_type, etype, dst_type)` relation triple.
    pub fn type_triple(&self) -> (NodeType, EdgeType, NodeType) {
        (self.src.node_type, self.etype, self.dst.node_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchemaError {
    /// The line is not a syntactically valid record.
    MalformedRecord(String),
    /// A field-level invariant is broken; names the offending field.
    SchemaViolation { field: String, reason: String },
}

impl SchemaError {
    pub(crate) fn violation(field: &str, reason: impl Into<String>) -> Self {
        SchemaError::SchemaViolation { field: field.to_owned(), reason: reason.into() }
    }
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaError::MalformedRecord(why) => write!(f, "malformed record: {why}"),
            SchemaError::SchemaViolation { field, reason } => {
                write!(f, "schema violation on `{field}`: {reason}")
            }
        }
    }
}

impl core::error::Error for SchemaError {}

/// One broken invariant found by [`validate_event`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub reason: String,
}

fn get_str(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String, SchemaError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(SchemaError::violation(field, "expected a string")),
        None => Err(SchemaError::violation(field, "missing required field")),
    }
}

fn get_opt_str(
    obj: &serde_json::Map<String, Value>,
    field: &str,
) -> Result<Option<String>, SchemaError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(Value::Null) | None => Ok(None),
        Some(_) => Err(SchemaError::violation(field, "expected a string")),
    }
}

/// Parses one line of the event record format.
///
/// Unknown extra fields are ignored; missing required fields, type errors,
/// and invariant breaks are `SchemaViolation`; broken syntax is
/// `MalformedRecord`.
pub fn parse_event_line(line: &str) -> Result<Event, SchemaError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| SchemaError::MalformedRecord(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| SchemaError::MalformedRecord("record is not an object".to_string()))?;

    let eid = get_str(obj, "eid")?;
    let ts = match obj.get("ts") {
        Some(Value::Number(n)) => n
            .as_i64()
            .ok_or_else(|| SchemaError::violation("ts", "not an integer timestamp"))?,
        Some(_) => return Err(SchemaError::violation("ts", "expected an integer")),
        None => return Err(SchemaError::violation("ts", "missing required field")),
    };
    let etype_label = get_str(obj, "etype")?;
    let etype = EdgeType::parse(&etype_label)
        .ok_or_else(|| SchemaError::violation("etype", format!("unknown edge type {etype_label:?}")))?;
    let src = NodeRef::parse(&get_str(obj, "src")?)?;
    let dst = NodeRef::parse(&get_str(obj, "dst")?)?;
    let session_id = get_str(obj, "session_id")?;
    let provider = get_str(obj, "provider")?;
    let status_label = get_str(obj, "status")?;
    let status = Status::parse(&status_label)
        .ok_or_else(|| SchemaError::violation("status", format!("unknown status {status_label:?}")))?;

    let bytes = match obj.get("bytes") {
        Some(Value::Number(n)) => Some(
            n.as_u64()
                .ok_or_else(|| SchemaError::violation("bytes", "must be a non-negative integer"))?,
        ),
        Some(Value::Null) | None => None,
        Some(_) => return Err(SchemaError::violation("bytes", "expected an integer")),
    };
    let dest_port = match obj.get("dest_port") {
        Some(Value::Number(n)) => {
            let raw = n
                .as_i64()
                .ok_or_else(|| SchemaError::violation("dest_port", "not an integer"))?;
            if !(1..=65535).contains(&raw) {
                return Err(SchemaError::violation("dest_port", "out of range [1, 65535]"));
            }
            Some(raw as u16)
        }
        Some(Value::Null) | None => None,
        Some(_) => return Err(SchemaError::violation("dest_port", "expected an integer")),
    };

    let event = Event {
        eid,
        ts,
        etype,
        src,
        dst,
        session_id,
        provider,
        tool_name: get_opt_str(obj, "tool_name")?,
        scope: get_opt_str(obj, "scope")?,
        status,
        bytes,
        dest_host: get_opt_str(obj, "dest_host")?,
        dest_port,
        prompt_text: get_opt_str(obj, "prompt_text")?,
    };

    if let Some(v) = validate_event(&event).into_iter().next() {
        return Err(SchemaError::SchemaViolation { field: v.field, reason: v.reason });
    }
    Ok(event)
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Writes the line record form of `e`; field order is fixed so equal events
/// serialize to identical bytes.
pub fn serialize_event_line(e: &Event) -> String {
    let mut out = String::with_capacity(160);
    out.push('{');
    out.push_str(&format!("\"eid\":{}", json_str(&e.eid)));
    out.push_str(&format!(",\"ts\":{}", e.ts));
    out.push_str(&format!(",\"etype\":{}", json_str(e.etype.label())));
    out.push_str(&format!(",\"src\":{}", json_str(&e.src.to_string())));
    out.push_str(&format!(",\"dst\":{}", json_str(&e.dst.to_string())));
    out.push_str(&format!(",\"session_id\":{}", json_str(&e.session_id)));
    out.push_str(&format!(",\"provider\":{}", json_str(&e.provider)));
    if let Some(t) = &e.tool_name {
        out.push_str(&format!(",\"tool_name\":{}", json_str(t)));
    }
    if let Some(s) = &e.scope {
        out.push_str(&format!(",\"scope\":{}", json_str(s)));
    }
    out.push_str(&format!(",\"status\":{}", json_str(e.status.label())));
    if let Some(b) = e.bytes {
        out.push_str(&format!(",\"bytes\":{b}"));
    }
    if let Some(h) = &e.dest_host {
        out.push_str(&format!(",\"dest_host\":{}", json_str(h)));
    }
    if let Some(p) = e.dest_port {
        out.push_str(&format!(",\"dest_port\":{p}"));
    }
    if let Some(p) = &e.prompt_text {
        out.push_str(&format!(",\"prompt_text\":{}", json_str(p)));
    }
    out.push('}');
    out
}

/// Canonicalizes an event in place: destination hosts and remote node keys
/// fold to lower case; everything else is already canonical. Idempotent.
pub fn normalize_event(mut raw: Event) -> Event {
    if let Some(h) = raw.dest_host.take() {
        raw.dest_host = Some(h.to_lowercase());
    }
    if raw.src.node_type == NodeType::Remote {
        raw.src.key = raw.src.key.to_lowercase();
    }
    if raw.dst.node_type == NodeType::Remote {
        raw.dst.key = raw.dst.key.to_lowercase();
    }
    raw
}

/// Checks every Event invariant; the empty report means the event is valid.
pub fn validate_event(e: &Event) -> Vec<Violation> {
    let mut report = Vec::new();
    let mut push = |field: &str, reason: &str| {
        report.push(Violation { field: field.to_owned(), reason: reason.to_owned() })
    };
    if e.eid.is_empty() {
        push("eid", "must be non-empty");
    }
    if e.ts < 0 {
        push("ts", "must be >= 0");
    }
    if e.session_id.is_empty() {
        push("session_id", "must be non-empty");
    }
    if e.src.key.is_empty() {
        push("src", "empty node key");
    }
    if e.dst.key.is_empty() {
        push("dst", "empty node key");
    }
    match e.etype {
        EdgeType::NetOut => {
            if e.dst.node_type != NodeType::Remote {
                push("dst", "net_out destination must be a remote node");
            }
            if e.dest_port.is_none() {
                push("dest_port", "required on net_out events");
            }
        }
        EdgeType::Install => {
            if e.dst.node_type != NodeType::McpServer {
                push("dst", "install destination must be an mcp_server node");
            }
        }
        EdgeType::Invoke => {
            if e.src.node_type != NodeType::Agent {
                push("src", "invoke source must be an agent node");
            }
            if e.dst.node_type != NodeType::Tool {
                push("dst", "invoke destination must be a tool node");
            }
        }
        _ => {}
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_line() -> &'static str {
        r#"{"eid":"e1","ts":0,"etype":"invoke","src":"agent:main","dst":"tool:log","session_id":"s1","provider":"core","status":"ok"}"#
    }

    #[test]
    fn parses_minimal_record() {
        let e = parse_event_line(minimal_line()).unwrap();
        assert_eq!(e.eid, "e1");
        assert_eq!(e.etype, EdgeType::Invoke);
        assert_eq!(e.src, NodeRef::new(NodeType::Agent, "main"));
        assert_eq!(e.dst, NodeRef::new(NodeType::Tool, "log"));
        assert_eq!(e.status, Status::Ok);
        assert_eq!(e.bytes, None);
    }

    #[test]
    fn net_out_requires_dest_port() {
        let line = r#"{"eid":"e2","ts":5,"etype":"net_out","src":"tool:http_post","dst":"remote:leak.example:443","session_id":"s1","provider":"core","status":"ok"}"#;
        match parse_event_line(line) {
            Err(SchemaError::SchemaViolation { field, .. }) => assert_eq!(field, "dest_port"),
            other => panic!("expected dest_port violation, got {other:?}"),
        }
    }

    #[test]
    fn unknown_etype_rejected() {
        let line = minimal_line().replace("invoke", "teleport");
        match parse_event_line(&line) {
            Err(SchemaError::SchemaViolation { field, .. }) => assert_eq!(field, "etype"),
            other => panic!("expected etype violation, got {other:?}"),
        }
    }

    #[test]
    fn broken_syntax_is_malformed() {
        assert!(matches!(
            parse_event_line("{not json"),
            Err(SchemaError::MalformedRecord(_))
        ));
    }

    #[test]
    fn unknown_extra_fields_ignored() {
        let line = minimal_line().replace(",\"status\"", ",\"color\":\"red\",\"status\"");
        assert!(parse_event_line(&line).is_ok());
    }

    #[test]
    fn remote_key_keeps_embedded_colon() {
        let r = NodeRef::parse("remote:evil.example:443").unwrap();
        assert_eq!(r.node_type, NodeType::Remote);
        assert_eq!(r.key, "evil.example:443");
    }

    #[test]
    fn normalize_folds_host_case() {
        let mut e = parse_event_line(minimal_line()).unwrap();
        e.dest_host = Some("Evil.Example".into());
        let n = normalize_event(e);
        assert_eq!(n.dest_host.as_deref(), Some("evil.example"));
        assert_eq!(normalize_event(n.clone()), n);
    }

    #[test]
    fn provider_is_attribute_not_type() {
        let line = minimal_line().replace("\"provider\":\"core\"", "\"provider\":\"evilmcp\"");
        let e = normalize_event(parse_event_line(&line).unwrap());
        assert_eq!(e.dst.node_type, NodeType::Tool);
        assert_eq!(e.provider, "evilmcp");
    }

    #[test]
    fn validate_reports_each_break() {
        let mut e = parse_event_line(minimal_line()).unwrap();
        e.etype = EdgeType::NetOut;
        let report = validate_event(&e);
        let fields: Vec<_> = report.iter().map(|v| v.field.as_str()).collect();
        assert!(fields.contains(&"dst"));
        assert!(fields.contains(&"dest_port"));
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let line = r#"{"eid":"e9","ts":1200,"etype":"net_out","src":"tool:http_post","dst":"remote:leak.example:443","session_id":"s1","provider":"core","tool_name":"http_post","scope":"exfil","status":"ok","bytes":2048,"dest_host":"leak.example","dest_port":443}"#;
        let e = parse_event_line(line).unwrap();
        assert_eq!(parse_event_line(&serialize_event_line(&e)).unwrap(), e);
    }

    #[test]
    fn closed_enums_cover_codes() {
        for t in NodeType::ALL {
            assert_eq!(NodeType::from_code(t.code()), Some(t));
        }
        for t in EdgeType::ALL {
            assert_eq!(EdgeType::from_code(t.code()), Some(t));
        }
        assert_eq!(NodeType::from_code(8), None);
        assert_eq!(EdgeType::from_code(6), None);
    }
}
