use crate::time::SimTime;

use super::frame::{DataFragment, MAX_FRAGMENTS, MAX_FRAGMENT_PAYLOAD};
use super::{NodeId, ProtocolError};

pub const MAX_MESSAGE_PAYLOAD: usize = MAX_FRAGMENT_PAYLOAD * MAX_FRAGMENTS as usize;
pub const REASSEMBLY_BUFFERS: usize = 2;
pub const REASSEMBLY_TIMEOUT: SimTime = SimTime::from_secs(5);

/// `(src, msg_seq)` identifies one application message.
pub type MessageKey = (NodeId, u16);

/// Splits a message into at most eight 15-byte fragments.
pub fn fragment_message(
    src: NodeId,
    dst: NodeId,
    msg_seq: u16,
    ttl: u8,
    payload: &[u8],
) -> Result<Vec<DataFragment>, ProtocolError> {
    if payload.is_empty() {
        return Err(ProtocolError::EmptyMessage);
    }
    if payload.len() > MAX_MESSAGE_PAYLOAD {
        return Err(ProtocolError::MessageTooLarge(payload.len()));
    }
    let count = payload.len().div_ceil(MAX_FRAGMENT_PAYLOAD) as u8;
    Ok(payload
        .chunks(MAX_FRAGMENT_PAYLOAD)
        .enumerate()
        .map(|(i, chunk)| DataFragment {
            src,
            dst,
            msg_seq,
            ttl,
            frag_index: i as u8,
            frag_count: count,
            payload: chunk.to_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reassembly {
    Complete(Vec<u8>),
    Pending,
}

#[derive(Debug, Clone)]
struct Buffer {
    key: MessageKey,
    created: SimTime,
    last_activity: SimTime,
    slots: Vec<Option<Vec<u8>>>,
}

impl Buffer {
    fn complete(&self) -> bool {
        self.slots.iter().all(Option::is_some)
    }
}

/// Bounded reassembly buffers for multi-fragment messages.
#[derive(Debug, Clone, Default)]
pub struct Reassembler {
    buffers: Vec<Buffer>,
    evicted: Vec<MessageKey>,
}

impl Reassembler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Keys of partially received messages dropped since the last call.
    pub fn take_evicted(&mut self) -> Vec<MessageKey> {
        std::mem::take(&mut self.evicted)
    }

    /// Drops buffers idle for at least [`REASSEMBLY_TIMEOUT`].
    pub fn expire(&mut self, now: SimTime) {
        let evicted = &mut self.evicted;
        self.buffers.retain(|b| {
            let keep = now - b.last_activity < REASSEMBLY_TIMEOUT;
            if !keep {
                evicted.push(b.key);
            }
            keep
        });
    }

    /// Earliest instant at which [`Reassembler::expire`] would drop something.
    pub fn next_deadline(&self) -> Option<SimTime> {
        self.buffers.iter().map(|b| b.last_activity + REASSEMBLY_TIMEOUT).min()
    }

    pub fn push(&mut self, frag: &DataFragment, now: SimTime) -> Result<Reassembly, ProtocolError> {
        if frag.frag_count == 0 || frag.frag_index >= frag.frag_count {
            return Err(ProtocolError::FragmentIndex { index: frag.frag_index, count: frag.frag_count });
        }
        self.expire(now);
        let key = (frag.src, frag.msg_seq);
        if frag.frag_count == 1 {
            return Ok(Reassembly::Complete(frag.payload.clone()));
        }
        let pos = match self.buffers.iter().position(|b| b.key == key) {
            Some(pos) => {
                if self.buffers[pos].slots.len() != usize::from(frag.frag_count) {
                    return Err(ProtocolError::ConflictingFragmentCount {
                        expected: self.buffers[pos].slots.len() as u8,
                        got: frag.frag_count,
                    });
                }
                pos
            }
            None => {
                if self.buffers.len() >= REASSEMBLY_BUFFERS {
                    let oldest = self
                        .buffers
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, b)| b.created)
                        .map(|(i, _)| i)
                        .expect("non-empty");
                    let gone = self.buffers.remove(oldest);
                    self.evicted.push(gone.key);
                }
                self.buffers.push(Buffer {
                    key,
                    created: now,
                    last_activity: now,
                    slots: vec![None; usize::from(frag.frag_count)],
                });
                self.buffers.len() - 1
            }
        };
        let buf = &mut self.buffers[pos];
        buf.last_activity = now;
        let slot = &mut buf.slots[usize::from(frag.frag_index)];
        if slot.is_none() {
            *slot = Some(frag.payload.clone());
        }
        if buf.complete() {
            let buf = self.buffers.remove(pos);
            let payload = buf.slots.into_iter().flatten().flatten().collect();
            Ok(Reassembly::Complete(payload))
        } else {
            Ok(Reassembly::Pending)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(n: usize) -> Vec<u8> {
        (0..n).map(|i| (i * 7 + 3) as u8).collect()
    }

    #[test]
    fn fragment_counts() {
        let f = fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(120)).unwrap();
        assert_eq!(f.len(), 8);
        assert!(f.iter().all(|f| f.payload.len() == 15 && f.frag_count == 8 && f.msg_seq == 9));
        assert_eq!(fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(15)).unwrap().len(), 1);
        let f = fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(50)).unwrap();
        assert_eq!(f.iter().map(|f| f.payload.len()).collect::<Vec<_>>(), vec![15, 15, 15, 5]);
        assert_eq!(
            fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(121)),
            Err(ProtocolError::MessageTooLarge(121))
        );
        assert_eq!(fragment_message(NodeId(1), NodeId(2), 9, 16, &[]), Err(ProtocolError::EmptyMessage));
    }

    #[test]
    fn in_order_and_reverse() {
        let msg = payload(120);
        let frags = fragment_message(NodeId(1), NodeId(2), 9, 16, &msg).unwrap();
        for order in [frags.clone(), frags.iter().rev().cloned().collect()] {
            let mut r = Reassembler::new();
            let mut out = None;
            for (i, f) in order.iter().enumerate() {
                match r.push(f, SimTime::from_millis(i as u64)).unwrap() {
                    Reassembly::Complete(p) => out = Some(p),
                    Reassembly::Pending => assert!(i < 7),
                }
            }
            assert_eq!(out.unwrap(), msg);
            assert!(r.is_empty());
        }
    }

    #[test]
    fn duplicate_fragment_is_pending() {
        let msg = payload(60);
        let frags = fragment_message(NodeId(1), NodeId(2), 9, 16, &msg).unwrap();
        let mut r = Reassembler::new();
        assert_eq!(r.push(&frags[3], SimTime::ZERO).unwrap(), Reassembly::Pending);
        assert_eq!(r.push(&frags[3], SimTime::ZERO).unwrap(), Reassembly::Pending);
        r.push(&frags[0], SimTime::ZERO).unwrap();
        r.push(&frags[1], SimTime::ZERO).unwrap();
        assert_eq!(r.push(&frags[2], SimTime::ZERO).unwrap(), Reassembly::Complete(msg));
    }

    #[test]
    fn conflicting_count_is_an_error() {
        let a = fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(60)).unwrap();
        let b = fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(30)).unwrap();
        let mut r = Reassembler::new();
        r.push(&a[0], SimTime::ZERO).unwrap();
        assert!(matches!(
            r.push(&b[1], SimTime::ZERO),
            Err(ProtocolError::ConflictingFragmentCount { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn idle_buffers_time_out() {
        let frags = fragment_message(NodeId(1), NodeId(2), 9, 16, &payload(30)).unwrap();
        let mut r = Reassembler::new();
        r.push(&frags[0], SimTime::ZERO).unwrap();
        assert_eq!(r.next_deadline(), Some(SimTime::from_secs(5)));
        r.expire(SimTime::from_millis(4_999));
        assert_eq!(r.len(), 1);
        r.expire(SimTime::from_secs(5));
        assert!(r.is_empty());
        assert_eq!(r.take_evicted(), vec![(NodeId(1), 9)]);
    }

    #[test]
    fn oldest_buffer_evicted_when_full() {
        let mut r = Reassembler::new();
        for (seq, t) in [(1u16, 0u64), (2, 10), (3, 20)] {
            let f = fragment_message(NodeId(1), NodeId(2), seq, 16, &payload(30)).unwrap();
            r.push(&f[0], SimTime::from_millis(t)).unwrap();
        }
        assert_eq!(r.len(), 2);
        assert_eq!(r.take_evicted(), vec![(NodeId(1), 1)]);
    }
}
