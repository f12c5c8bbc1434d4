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

//! Core detection engine for MCP control-plane traffic.
//!
//! Everything in this crate is allocation-only (`no_std` + `alloc`): event
//! schema and normalization, micro-batch window assembly, session-DAG
//! features, Count-Min/TTL novelty state, the graph behavior scorer, late
//! score fusion with severity hysteresis, evaluation metrics, and the
//! deterministic traffic generator. File and socket handling live in the
//! companion `nebula` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod codec;
pub mod dagfeat;
pub mod encoder;
pub mod eval;
pub mod fusion;
mod math;
pub mod novelty;
pub mod scenarios;
pub mod schema;
pub mod windowing;

pub use schema::{EdgeType, Event, NodeRef, NodeType, Status};
pub use windowing::{WindowConfig, WindowGraph};
