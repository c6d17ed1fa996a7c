//! Wire formats, fragmentation and the per-node state budget.

pub mod budget;
mod fragment;
mod frame;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fragment::{
    fragment_message, MessageKey, Reassembler, Reassembly, MAX_MESSAGE_PAYLOAD, REASSEMBLY_BUFFERS, REASSEMBLY_TIMEOUT,
};
pub use frame::*;

/// 16-bit node address. `0x0000` is unassigned, `0xFFFF` is broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u16);

impl NodeId {
    pub const UNASSIGNED: NodeId = NodeId(0x0000);
    pub const BROADCAST: NodeId = NodeId(0xFFFF);

    pub fn is_unicast(self) -> bool {
        self != Self::UNASSIGNED && self != Self::BROADCAST
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("truncated frame: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown frame type tag {0:#04x}")]
    UnknownTag(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("frame of {0} bytes exceeds the radio limit")]
    FrameTooLarge(usize),
    #[error("beacon carries {0} neighbor entries (max 4)")]
    TooManyNeighbors(usize),
    #[error("fragment payload of {0} bytes exceeds 15")]
    PayloadTooLarge(usize),
    #[error("fragment count {0} outside 1..=8")]
    FragmentCount(u8),
    #[error("fragment index {index} not below count {count}")]
    FragmentIndex { index: u8, count: u8 },
    #[error("{field} = {value} out of range")]
    FieldOutOfRange { field: &'static str, value: u32 },
    #[error("digest flag does not match the frame body")]
    DigestFlagMismatch,
    #[error("digest lists {0} members (max 60)")]
    TooManyMembers(usize),
    #[error("message of {0} bytes exceeds 120")]
    MessageTooLarge(usize),
    #[error("empty message")]
    EmptyMessage,
    #[error("fragment count {got} conflicts with {expected} already buffered")]
    ConflictingFragmentCount { expected: u8, got: u8 },
}
