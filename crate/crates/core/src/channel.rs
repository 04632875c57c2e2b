//! Pairwise secure channels over untrusted simulated links.
//!
//! Each ordered pair of endpoints has its own key and counter, so an endpoint
//! holds a send key for `local -> remote` and a receive key for
//! `remote -> local`. Messages travel as opaque wire bytes through a
//! [`Network`], which is where an [`Adversary`] gets to touch them.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{
    chunk_count, CryptoError, GcmCipher, MacTag, Nonce, SealedMessage, SymmetricKey, BLOCK_LEN,
    DEFAULT_CHUNK_SIZE, MAX_CHAINS, TAG_LEN,
};
use crate::timing::{LinkSpec, TimingMode, TimingModel};

pub type NodeId = u32;

/// The CPU-side endpoint.
pub const HOST: NodeId = u32::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChannelError {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("replay detected (counter {counter}, high-water {high_water})")]
    Replay { counter: u32, high_water: u32 },
    #[error("send counter exhausted on channel {from}->{to}; rekey required")]
    CounterExhausted { from: NodeId, to: NodeId },
    #[error("malformed wire message: {0}")]
    Malformed(String),
    #[error("message for channel {got_from}->{got_to} delivered to {from}->{to}")]
    Misaddressed { from: NodeId, to: NodeId, got_from: NodeId, got_to: NodeId },
    #[error("empty payload")]
    EmptyPayload,
    #[error("no message in flight on {from}->{to}")]
    Missing { from: NodeId, to: NodeId },
}

impl ChannelError {
    /// Chunk index for authentication failures.
    pub fn failed_chunk(&self) -> Option<usize> {
        match self {
            ChannelError::Crypto(CryptoError::AuthenticationFailure { chunk }) => Some(*chunk),
            _ => None,
        }
    }
}

pub fn channel_id(from: NodeId, to: NodeId) -> [u8; 8] {
    let mut id = [0u8; 8];
    id[..4].copy_from_slice(&from.to_be_bytes());
    id[4..].copy_from_slice(&to.to_be_bytes());
    id
}

fn split_channel_id(id: [u8; 8]) -> (NodeId, NodeId) {
    let from = u32::from_be_bytes(id[..4].try_into().expect("4 bytes"));
    let to = u32::from_be_bytes(id[4..].try_into().expect("4 bytes"));
    (from, to)
}

/// Pre-shared keys, one per ordered endpoint pair, derived from a seed.
#[derive(Debug, Clone, Copy)]
pub struct KeyStore {
    seed: u64,
}

impl KeyStore {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn key(&self, from: NodeId, to: NodeId) -> SymmetricKey {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(((from as u64) << 32) | to as u64);
        SymmetricKey::generate(&mut rng)
    }
}

/// Logical size a transfer is billed at. The bytes actually sealed may be a
/// scaled-down stand-in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransferCost {
    pub logical_bytes: u64,
    /// Size of the reduction this transfer belongs to; indexes the cost curve.
    pub reduction_bytes: u64,
}

impl TransferCost {
    /// A lone message: billed at its own size, curve indexed at twice that
    /// (the curve was profiled on two-worker reductions).
    pub fn standalone(bytes: u64) -> Self {
        Self { logical_bytes: bytes, reduction_bytes: 2 * bytes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingRecord {
    pub start_s: f64,
    pub encrypt_s: f64,
    pub mac_s: f64,
    pub link_s: f64,
    pub decrypt_s: f64,
    pub verify_s: f64,
    pub end_s: f64,
}

impl TimingRecord {
    pub fn crypto_s(&self) -> f64 {
        self.encrypt_s + self.mac_s + self.decrypt_s + self.verify_s
    }
}

/// Send-side timing without touching any bytes.
pub fn modeled_send(timing: &TimingModel, link: &LinkSpec, cc: bool, start_s: f64, cost: TransferCost) -> TimingRecord {
    let (encrypt_s, mac_s) = if cc { timing.split(timing.seal_time(cost.reduction_bytes)) } else { (0.0, 0.0) };
    let link_s = link.transfer_time(cost.logical_bytes);
    TimingRecord { start_s, encrypt_s, mac_s, link_s, end_s: start_s + encrypt_s + mac_s + link_s, ..Default::default() }
}

/// Receive-side timing without touching any bytes.
pub fn modeled_recv(timing: &TimingModel, cc: bool, start_s: f64, cost: TransferCost) -> TimingRecord {
    let (decrypt_s, verify_s) = if cc { timing.split(timing.open_time(cost.reduction_bytes)) } else { (0.0, 0.0) };
    TimingRecord { start_s, decrypt_s, verify_s, end_s: start_s + decrypt_s + verify_s, ..Default::default() }
}

/// Opaque bytes on a link, with routing addresses the link itself attaches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeliveredMessage {
    pub from: NodeId,
    pub to: NodeId,
    pub wire: Vec<u8>,
}

// channel_id(8) counter(4) cc(1) chunk_size(4) n_tags(4) payload_len(8)
const HEADER_LEN: usize = 29;

struct Frame {
    nonce: Nonce,
    cc: bool,
    chunk_size: usize,
    payload: Vec<u8>,
    tags: Vec<MacTag>,
}

// Fixed-size frame header. Sealed frames authenticate it as AAD of every chunk.
fn header(nonce: &Nonce, cc: bool, chunk_size: usize, n_tags: usize, len: usize) -> Vec<u8> {
    let mut w = Vec::with_capacity(HEADER_LEN);
    w.extend_from_slice(&nonce.channel_id);
    w.extend_from_slice(&nonce.counter.to_be_bytes());
    w.push(cc as u8);
    w.extend_from_slice(&(chunk_size as u32).to_be_bytes());
    w.extend_from_slice(&(n_tags as u32).to_be_bytes());
    w.extend_from_slice(&(len as u64).to_be_bytes());
    w
}

fn encode(frame: &Frame) -> Vec<u8> {
    let mut w = header(&frame.nonce, frame.cc, frame.chunk_size, frame.tags.len(), frame.payload.len());
    w.reserve(frame.payload.len() + frame.tags.len() * TAG_LEN);
    w.extend_from_slice(&frame.payload);
    for t in &frame.tags {
        w.extend_from_slice(&t.0);
    }
    w
}

fn decode(wire: &[u8]) -> Result<Frame, ChannelError> {
    let bad = |m: &str| ChannelError::Malformed(m.to_string());
    if wire.len() < HEADER_LEN {
        return Err(bad("short header"));
    }
    let be32 = |at: usize| u32::from_be_bytes(wire[at..at + 4].try_into().expect("4 bytes"));
    let nonce = Nonce::new(wire[..8].try_into().expect("8 bytes"), be32(8));
    let cc = match wire[12] {
        0 => false,
        1 => true,
        _ => return Err(bad("bad mode byte")),
    };
    let chunk_size = be32(13) as usize;
    let n_tags = be32(17) as usize;
    let len = u64::from_be_bytes(wire[21..29].try_into().expect("8 bytes"));
    let body = (wire.len() - HEADER_LEN) as u64;
    if len > body || body - len != (n_tags * TAG_LEN) as u64 {
        return Err(bad("length fields disagree with message size"));
    }
    let len = len as usize;
    if cc {
        if chunk_size < BLOCK_LEN || n_tags != chunk_count(len, chunk_size) {
            return Err(bad("tag count does not match chunking"));
        }
    } else if n_tags != 0 || chunk_size != 0 {
        return Err(bad("plaintext frame carries tags"));
    }
    let payload = wire[HEADER_LEN..HEADER_LEN + len].to_vec();
    let tags = wire[HEADER_LEN + len..]
        .chunks_exact(TAG_LEN)
        .map(|t| MacTag(t.try_into().expect("16 bytes")))
        .collect();
    Ok(Frame { nonce, cc, chunk_size, payload, tags })
}

/// One endpoint of a pairwise channel.
pub struct SecureChannel {
    pub local_id: NodeId,
    pub remote_id: NodeId,
    tx: GcmCipher,
    rx: GcmCipher,
    /// Next counter to use; reaching 2^32 means the key is spent.
    send_counter: u64,
    recv_high_water: Option<u32>,
    pub link: LinkSpec,
    pub cc_enabled: bool,
    pub chunk_size: usize,
    timing: Arc<TimingModel>,
}

impl std::fmt::Debug for SecureChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureChannel")
            .field("local_id", &self.local_id)
            .field("remote_id", &self.remote_id)
            .field("send_counter", &self.send_counter)
            .field("recv_high_water", &self.recv_high_water)
            .field("cc_enabled", &self.cc_enabled)
            .finish_non_exhaustive()
    }
}

impl SecureChannel {
    pub fn new(
        keys: &KeyStore,
        local_id: NodeId,
        remote_id: NodeId,
        link: LinkSpec,
        cc_enabled: bool,
        timing: Arc<TimingModel>,
    ) -> Self {
        Self {
            local_id,
            remote_id,
            tx: GcmCipher::new(&keys.key(local_id, remote_id)),
            rx: GcmCipher::new(&keys.key(remote_id, local_id)),
            send_counter: 0,
            recv_high_water: None,
            link,
            cc_enabled,
            chunk_size: DEFAULT_CHUNK_SIZE,
            timing,
        }
    }

    /// Both endpoints of the `a <-> b` channel.
    pub fn pair(
        keys: &KeyStore,
        a: NodeId,
        b: NodeId,
        link: LinkSpec,
        cc_enabled: bool,
        timing: Arc<TimingModel>,
    ) -> (Self, Self) {
        (
            Self::new(keys, a, b, link, cc_enabled, timing.clone()),
            Self::new(keys, b, a, link, cc_enabled, timing),
        )
    }

    pub fn send_counter(&self) -> u64 {
        self.send_counter
    }

    pub fn recv_high_water(&self) -> Option<u32> {
        self.recv_high_water
    }

    /// Starts the send counter somewhere else; for exercising exhaustion.
    pub fn set_send_counter(&mut self, next: u64) {
        self.send_counter = next;
    }

    // Keeps the chain count within the two-byte index range.
    fn chunk_size_for(&self, len: usize) -> usize {
        let min = len.div_ceil(MAX_CHAINS).next_multiple_of(BLOCK_LEN);
        self.chunk_size.max(min)
    }

    pub fn send(
        &mut self,
        payload: &[u8],
        clock: f64,
        cost: TransferCost,
    ) -> Result<(DeliveredMessage, TimingRecord), ChannelError> {
        if payload.is_empty() {
            return Err(ChannelError::EmptyPayload);
        }
        if self.send_counter > u32::MAX as u64 {
            return Err(ChannelError::CounterExhausted { from: self.local_id, to: self.remote_id });
        }
        let nonce = Nonce::new(channel_id(self.local_id, self.remote_id), self.send_counter as u32);
        let mut record = modeled_send(&self.timing, &self.link, self.cc_enabled, clock, cost);
        let frame = if self.cc_enabled {
            let started = Instant::now();
            let chunk = self.chunk_size_for(payload.len());
            let aad = header(&nonce, true, chunk, chunk_count(payload.len(), chunk), payload.len());
            let sealed = self.tx.seal(nonce, payload, chunk, Some(&aad))?;
            if self.timing.mode == TimingMode::Measured {
                let seal_s = started.elapsed().as_secs_f64() * cost.logical_bytes as f64 / payload.len() as f64;
                (record.encrypt_s, record.mac_s) = self.timing.split(seal_s);
                record.end_s = clock + seal_s + record.link_s;
            }
            Frame { nonce, cc: true, chunk_size: sealed.chunk_size, payload: sealed.ciphertext, tags: sealed.tags }
        } else {
            Frame { nonce, cc: false, chunk_size: 0, payload: payload.to_vec(), tags: Vec::new() }
        };
        self.send_counter += 1;
        let msg = DeliveredMessage { from: self.local_id, to: self.remote_id, wire: encode(&frame) };
        Ok((msg, record))
    }

    pub fn recv(
        &mut self,
        msg: &DeliveredMessage,
        clock: f64,
        cost: TransferCost,
    ) -> Result<(Vec<u8>, TimingRecord), ChannelError> {
        let frame = decode(&msg.wire)?;
        let (got_from, got_to) = split_channel_id(frame.nonce.channel_id);
        if (got_from, got_to) != (self.remote_id, self.local_id) {
            return Err(ChannelError::Misaddressed {
                from: self.remote_id,
                to: self.local_id,
                got_from,
                got_to,
            });
        }
        if frame.cc != self.cc_enabled {
            return Err(ChannelError::Malformed("protection mode does not match channel".into()));
        }
        if let Some(high_water) = self.recv_high_water {
            if frame.nonce.counter <= high_water {
                return Err(ChannelError::Replay { counter: frame.nonce.counter, high_water });
            }
        }
        let mut record = modeled_recv(&self.timing, self.cc_enabled, clock, cost);
        let plaintext = if frame.cc {
            let len = frame.payload.len();
            let sealed = SealedMessage {
                ciphertext: frame.payload,
                nonce: frame.nonce,
                tags: frame.tags,
                chunk_size: frame.chunk_size,
                aad_prefix: Some(msg.wire[..HEADER_LEN].to_vec()),
            };
            let started = Instant::now();
            let pt = self.rx.open(&sealed)?;
            if self.timing.mode == TimingMode::Measured && len > 0 {
                let open_s = started.elapsed().as_secs_f64() * cost.logical_bytes as f64 / len as f64;
                (record.decrypt_s, record.verify_s) = self.timing.split(open_s);
                record.end_s = clock + open_s;
            }
            pt
        } else {
            frame.payload
        };
        // Only an authenticated counter may move the high-water mark.
        self.recv_high_water = Some(frame.nonce.counter);
        Ok((plaintext, record))
    }
}

/// Sends `payload` billed at its own size.
pub fn channel_send(
    ch: &mut SecureChannel,
    payload: &[u8],
    clock: f64,
) -> Result<(DeliveredMessage, TimingRecord), ChannelError> {
    ch.send(payload, clock, TransferCost::standalone(payload.len() as u64))
}

pub fn channel_recv(
    ch: &mut SecureChannel,
    msg: &DeliveredMessage,
    clock: f64,
) -> Result<(Vec<u8>, TimingRecord), ChannelError> {
    let len = decode(&msg.wire)?.payload.len() as u64;
    ch.recv(msg, clock, TransferCost::standalone(len))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AdversaryMode {
    None,
    /// Flip one bit of the wire bytes; the position wraps modulo the message length.
    FlipBit { bit: u64 },
    /// Deliver a copy of the previous message on the link in place of the target.
    Replay,
    /// Hold the target back and deliver it after the next message.
    Reorder,
}

/// Link-level attacker. It rewrites bytes in flight and never sees endpoint state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adversary {
    pub mode: AdversaryMode,
    pub from: NodeId,
    pub to: NodeId,
    /// Zero-based index of the targeted message on the `from -> to` link.
    pub message_index: u64,
}

impl Adversary {
    pub fn none() -> Self {
        Self { mode: AdversaryMode::None, from: 0, to: 0, message_index: 0 }
    }

    pub fn is_active(&self) -> bool {
        self.mode != AdversaryMode::None
    }
}

#[derive(Default)]
struct LinkState {
    queue: VecDeque<DeliveredMessage>,
    sent: u64,
    last: Option<DeliveredMessage>,
    held: Option<DeliveredMessage>,
}

/// In-flight messages on every directed link.
#[derive(Default)]
pub struct Network {
    links: HashMap<(NodeId, NodeId), LinkState>,
    adversary: Option<Adversary>,
    /// Set once the adversary has acted.
    pub tampered: bool,
}

impl Network {
    pub fn new(adversary: Option<Adversary>) -> Self {
        Self { adversary: adversary.filter(Adversary::is_active), ..Default::default() }
    }

    pub fn transmit(&mut self, msg: DeliveredMessage) {
        let link = self.links.entry((msg.from, msg.to)).or_default();
        let index = link.sent;
        link.sent += 1;
        let target = self
            .adversary
            .filter(|a| (a.from, a.to, a.message_index) == (msg.from, msg.to, index));
        let mut deliver = msg.clone();
        if let Some(adv) = target {
            self.tampered = true;
            match adv.mode {
                AdversaryMode::FlipBit { bit } => {
                    let bits = deliver.wire.len() as u64 * 8;
                    let bit = bit % bits;
                    deliver.wire[(bit / 8) as usize] ^= 1 << (bit % 8);
                }
                AdversaryMode::Replay => {
                    // With nothing earlier to replay, the target is sent twice.
                    match link.last.clone() {
                        Some(prev) => deliver = prev,
                        None => link.queue.push_back(msg.clone()),
                    }
                }
                AdversaryMode::Reorder => {
                    link.held = Some(msg.clone());
                    link.last = Some(msg);
                    return;
                }
                AdversaryMode::None => {}
            }
        }
        link.queue.push_back(deliver);
        if let Some(held) = link.held.take() {
            link.queue.push_back(held);
        }
        link.last = Some(msg);
    }

    pub fn take(&mut self, from: NodeId, to: NodeId) -> Result<DeliveredMessage, ChannelError> {
        self.links
            .get_mut(&(from, to))
            .and_then(|l| l.queue.pop_front())
            .ok_or(ChannelError::Missing { from, to })
    }

    pub fn in_flight(&self) -> usize {
        self.links.values().map(|l| l.queue.len() + l.held.is_some() as usize).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::LinkKind;

    fn pair(cc: bool) -> (SecureChannel, SecureChannel) {
        let link = LinkSpec::new(LinkKind::PeerLink, 150e9, 5e-6).unwrap();
        SecureChannel::pair(&KeyStore::new(7), 0, 1, link, cc, Arc::new(TimingModel::default()))
    }

    #[test]
    fn keys_differ_per_direction() {
        let ks = KeyStore::new(1);
        assert_ne!(ks.key(0, 1), ks.key(1, 0));
        assert_eq!(ks.key(0, 1), KeyStore::new(1).key(0, 1));
        assert_ne!(ks.key(0, 1), KeyStore::new(2).key(0, 1));
    }

    #[test]
    fn cc_off_link_time_example() {
        let link = LinkSpec::new(LinkKind::HostLink, 25e9, 2e-6).unwrap();
        let timing = Arc::new(TimingModel::default());
        let (mut a, _) = SecureChannel::pair(&KeyStore::new(0), HOST, 0, link, false, timing);
        let (_, rec) = a.send(&[1], 0.0, TransferCost::standalone(100_000_000)).unwrap();
        assert!((rec.link_s - (0.004 + 2e-6)).abs() < 1e-15);
        assert_eq!(rec.crypto_s(), 0.0);
    }

    #[test]
    fn roundtrip_and_tag_count() {
        let (mut a, mut b) = pair(true);
        a.chunk_size = 1024;
        let payload: Vec<u8> = (0..5000u32).map(|i| i as u8).collect();
        let (msg, rec) = channel_send(&mut a, &payload, 1.0).unwrap();
        assert!(rec.encrypt_s > 0.0 && rec.mac_s > 0.0);
        assert_eq!(msg.wire.len(), HEADER_LEN + 5000 + 5 * TAG_LEN);
        let (pt, rrec) = channel_recv(&mut b, &msg, rec.end_s).unwrap();
        assert_eq!(pt, payload);
        assert!(rrec.decrypt_s > 0.0 && rrec.end_s > rec.end_s);
        assert_eq!(b.recv_high_water(), Some(0));
    }

    #[test]
    fn every_wire_bit_is_covered() {
        let (mut a, _) = pair(true);
        let (msg, _) = channel_send(&mut a, &[7u8; 12], 0.0).unwrap();
        for bit in 0..msg.wire.len() * 8 {
            let (_, mut b) = pair(true);
            let mut bad = msg.clone();
            bad.wire[bit / 8] ^= 1 << (bit % 8);
            assert!(channel_recv(&mut b, &bad, 0.0).is_err(), "bit {bit} accepted");
        }
    }

    #[test]
    fn cc_off_frames_without_tags() {
        let (mut a, mut b) = pair(false);
        let (msg, _) = channel_send(&mut a, b"hello", 0.0).unwrap();
        assert_eq!(&msg.wire[HEADER_LEN..], b"hello");
        assert_eq!(channel_recv(&mut b, &msg, 0.0).unwrap().0, b"hello");
    }

    #[test]
    fn exact_resend_is_replay() {
        let (mut a, mut b) = pair(true);
        let (m0, _) = channel_send(&mut a, b"first", 0.0).unwrap();
        channel_recv(&mut b, &m0, 0.0).unwrap();
        let err = channel_recv(&mut b, &m0, 0.0).unwrap_err();
        assert_eq!(err, ChannelError::Replay { counter: 0, high_water: 0 });
        assert_eq!(err.to_string(), "replay detected (counter 0, high-water 0)");
    }

    #[test]
    fn two_message_orderings() {
        for order in [[0usize, 1], [1, 0]] {
            let (mut a, mut b) = pair(true);
            let msgs: Vec<_> = [b"m0", b"m1"].iter().map(|p| channel_send(&mut a, *p, 0.0).unwrap().0).collect();
            let first = channel_recv(&mut b, &msgs[order[0]], 0.0);
            let second = channel_recv(&mut b, &msgs[order[1]], 0.0);
            assert!(first.is_ok());
            if order == [0, 1] {
                assert!(second.is_ok());
            } else {
                assert_eq!(second.unwrap_err(), ChannelError::Replay { counter: 0, high_water: 1 });
            }
        }
    }

    #[test]
    fn forged_message_does_not_move_high_water() {
        let (mut a, mut b) = pair(true);
        let (mut m, _) = channel_send(&mut a, &[9; 64], 0.0).unwrap();
        m.wire[HEADER_LEN + 3] ^= 4;
        assert_eq!(channel_recv(&mut b, &m, 0.0).unwrap_err().failed_chunk(), Some(0));
        assert_eq!(b.recv_high_water(), None);
    }

    #[test]
    fn wrong_direction_rejected() {
        let (mut a, _) = pair(true);
        let (msg, _) = channel_send(&mut a, b"x", 0.0).unwrap();
        assert!(matches!(channel_recv(&mut a, &msg, 0.0), Err(ChannelError::Misaddressed { .. })));
    }

    #[test]
    fn counter_exhaustion() {
        let (mut a, _) = pair(true);
        a.set_send_counter(u32::MAX as u64);
        assert!(channel_send(&mut a, b"last", 0.0).is_ok());
        assert_eq!(
            channel_send(&mut a, b"one more", 0.0).unwrap_err(),
            ChannelError::CounterExhausted { from: 0, to: 1 }
        );
    }

    #[test]
    fn empty_payload_rejected() {
        let (mut a, _) = pair(false);
        assert_eq!(channel_send(&mut a, &[], 0.0).unwrap_err(), ChannelError::EmptyPayload);
    }

    #[test]
    fn network_adversaries() {
        let (mut a, mut b) = pair(true);
        let mut net = Network::new(Some(Adversary { mode: AdversaryMode::Reorder, from: 0, to: 1, message_index: 0 }));
        net.transmit(channel_send(&mut a, b"m0", 0.0).unwrap().0);
        assert!(matches!(net.take(0, 1), Err(ChannelError::Missing { .. })));
        net.transmit(channel_send(&mut a, b"m1", 0.0).unwrap().0);
        assert_eq!(channel_recv(&mut b, &net.take(0, 1).unwrap(), 0.0).unwrap().0, b"m1");
        assert!(matches!(channel_recv(&mut b, &net.take(0, 1).unwrap(), 0.0), Err(ChannelError::Replay { .. })));

        let (mut a, mut b) = pair(true);
        let mut net = Network::new(Some(Adversary { mode: AdversaryMode::Replay, from: 0, to: 1, message_index: 1 }));
        for p in [b"m0", b"m1"] {
            net.transmit(channel_send(&mut a, p, 0.0).unwrap().0);
        }
        channel_recv(&mut b, &net.take(0, 1).unwrap(), 0.0).unwrap();
        assert!(matches!(channel_recv(&mut b, &net.take(0, 1).unwrap(), 0.0), Err(ChannelError::Replay { .. })));
    }

    #[test]
    fn large_payload_enlarges_chunks() {
        let (mut a, mut b) = pair(true);
        a.chunk_size = 16;
        let payload = vec![3u8; MAX_CHAINS * 16 + 1];
        let (msg, _) = channel_send(&mut a, &payload, 0.0).unwrap();
        assert_eq!(channel_recv(&mut b, &msg, 0.0).unwrap().0, payload);
    }
}
