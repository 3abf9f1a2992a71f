//! Trap classification shared by both segment backends and the interpreter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Why execution aborted. Every variant surfaces as a single `trap` event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "kebab-case")]
pub enum Trap {
    /// Access outside the handle's `[0, bound)` window, or a bad free target.
    #[error("spatial violation")]
    Spatial,
    /// Access or free through a handle whose segment is not allocated.
    #[error("temporal violation")]
    Temporal,
    /// Corrupted handle, or a handle load/store at an unaligned address.
    #[error("handle integrity violation")]
    Integrity,
    #[error("segment memory exhausted")]
    OutOfMemory,
    /// Slice offsets that do not select a sub-window of the handle.
    #[error("invalid slice")]
    Slice,
    /// The `trap` instruction.
    #[error("unreachable executed")]
    Unreachable,
    #[error("integer divide by zero")]
    DivideByZero,
    #[error("integer overflow")]
    IntegerOverflow,
    /// Linear-memory load or store outside the heap.
    #[error("linear memory out of bounds")]
    LinearBounds,
    /// Baggy backend: handle arithmetic strayed more than half a slot away.
    #[error("handle strayed too far from its slot")]
    Stray,
    /// Baggy backend: use of a handle carrying the out-of-bounds marker.
    #[error("use of out-of-bounds marked handle")]
    Marked,
    /// Baggy backend: access beyond the whole backing store.
    #[error("access outside the backing store")]
    BackingBounds,
    /// Baggy backend: free of a slot that is not allocated.
    #[error("free of unallocated slot")]
    BadFree,
}
