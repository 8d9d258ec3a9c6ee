//! Simulated NFC/BLE link: framing, MTU chunking, CRC-32 and a seeded fault
//! model. Profiles differ only in MTU and latency.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use thiserror::Error;

use crate::hash;

pub const MAGIC: [u8; 2] = [0xCB, 0xDC];
pub const VERSION: u8 = 1;
/// magic(2) version(1) msg_type(1) length(4)
pub const HEADER_LEN: usize = 8;
pub const CRC_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = 1 << 20;
/// stream id(4) seq(2) total(2) flags(2)
pub const CHUNK_HEADER_LEN: usize = 10;
pub const MIN_MTU: usize = 16;
const CHUNKS_PER_TICK: usize = 64;
const FLAG_LAST: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChannelError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown frame version {0}")]
    UnknownVersion(u8),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("frame truncated")]
    Truncated,
    #[error("length field disagrees with frame size")]
    LengthMismatch,
    #[error("payload exceeds {MAX_PAYLOAD} bytes")]
    TooLarge,
    #[error("stream incomplete")]
    IncompleteStream,
    #[error("chunks from different streams or with inconsistent headers")]
    InconsistentStream,
    #[error("mtu below {MIN_MTU}")]
    MtuTooSmall,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub payload: Vec<u8>,
}

pub fn encode_frame(msg_type: u8, payload: &[u8]) -> Result<Vec<u8>, ChannelError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(ChannelError::TooLarge);
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, ChannelError> {
    if bytes.len() < 2 {
        return Err(ChannelError::Truncated);
    }
    if bytes[..2] != MAGIC {
        return Err(ChannelError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(ChannelError::Truncated);
    }
    if bytes[2] != VERSION {
        return Err(ChannelError::UnknownVersion(bytes[2]));
    }
    let len = u32::from_be_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(ChannelError::TooLarge);
    }
    let body_end = bytes.len() - CRC_LEN;
    let crc = u32::from_be_bytes(bytes[body_end..].try_into().expect("4 bytes"));
    if crc32fast::hash(&bytes[..body_end]) != crc {
        return Err(ChannelError::ChecksumMismatch);
    }
    if body_end - HEADER_LEN != len {
        return Err(ChannelError::LengthMismatch);
    }
    Ok(Frame {
        msg_type: bytes[3],
        payload: bytes[HEADER_LEN..body_end].to_vec(),
    })
}

pub fn chunk_for_mtu(frame: &[u8], mtu: usize, stream_id: u32) -> Result<Vec<Vec<u8>>, ChannelError> {
    if mtu < MIN_MTU {
        return Err(ChannelError::MtuTooSmall);
    }
    let cap = mtu - CHUNK_HEADER_LEN;
    let total = frame.len().div_ceil(cap).max(1);
    if total > u16::MAX as usize {
        return Err(ChannelError::TooLarge);
    }
    let mut chunks = Vec::with_capacity(total);
    for seq in 0..total {
        let body = &frame[seq * cap..((seq + 1) * cap).min(frame.len())];
        let flags = if seq + 1 == total { FLAG_LAST } else { 0 };
        let mut c = Vec::with_capacity(CHUNK_HEADER_LEN + body.len());
        c.extend_from_slice(&stream_id.to_be_bytes());
        c.extend_from_slice(&(seq as u16).to_be_bytes());
        c.extend_from_slice(&(total as u16).to_be_bytes());
        c.extend_from_slice(&flags.to_be_bytes());
        c.extend_from_slice(body);
        chunks.push(c);
    }
    Ok(chunks)
}

/// Reorders and de-duplicates chunks of one stream and joins their bodies.
pub fn reassemble(chunks: &[Vec<u8>]) -> Result<Vec<u8>, ChannelError> {
    let mut stream = None;
    let mut total = None;
    let mut parts: BTreeMap<u16, &[u8]> = BTreeMap::new();
    for c in chunks {
        if c.len() < CHUNK_HEADER_LEN {
            return Err(ChannelError::InconsistentStream);
        }
        let id = u32::from_be_bytes(c[0..4].try_into().expect("4 bytes"));
        let seq = u16::from_be_bytes([c[4], c[5]]);
        let tot = u16::from_be_bytes([c[6], c[7]]);
        if *stream.get_or_insert(id) != id || *total.get_or_insert(tot) != tot || seq >= tot {
            return Err(ChannelError::InconsistentStream);
        }
        parts.entry(seq).or_insert(&c[CHUNK_HEADER_LEN..]);
    }
    match total {
        Some(t) if parts.len() == t as usize => Ok(parts.into_values().flatten().copied().collect()),
        _ => Err(ChannelError::IncompleteStream),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Nfc,
    Ble,
}

impl Profile {
    pub fn mtu(self) -> usize {
        match self {
            Profile::Nfc => 255,
            Profile::Ble => 244,
        }
    }

    /// Ticks for one frame: a fixed setup cost plus one tick per
    /// `CHUNKS_PER_TICK` chunks, so a full bundle still fits well inside the
    /// default protocol timeout.
    pub fn latency_ticks(self, chunks: usize) -> u64 {
        let setup = match self {
            Profile::Nfc => 1,
            Profile::Ble => 2,
        };
        setup + chunks.div_ceil(CHUNKS_PER_TICK) as u64
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Nfc => "nfc",
            Profile::Ble => "ble",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Fault {
    Drop,
    Duplicate,
    /// Flips one byte in the payload or CRC region.
    Corrupt,
    /// Cuts the frame to half its length.
    Truncate,
    Delay(u64),
}

/// Per-mille probabilities for random faults, checked in declaration order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FaultRates {
    pub drop: u16,
    pub duplicate: u16,
    pub corrupt: u16,
    pub truncate: u16,
    pub delay: u16,
    pub delay_ticks: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FaultPlan {
    pub seed: u64,
    pub rates: FaultRates,
    /// Explicit faults by absolute frame index; these override `rates`.
    pub schedule: BTreeMap<u64, Fault>,
}

impl FaultPlan {
    fn roll(&self, frame_index: u64, what: &[u8]) -> u64 {
        let h = hash::tagged(b"fault/v1", &[&self.seed.to_be_bytes(), &frame_index.to_be_bytes(), what]);
        u64::from_be_bytes(h[..8].try_into().expect("8 bytes"))
    }

    /// Pure function of `(seed, frame_index)`.
    pub fn fault_for(&self, frame_index: u64) -> Option<Fault> {
        if let Some(f) = self.schedule.get(&frame_index) {
            return Some(*f);
        }
        let r = &self.rates;
        let mut x = (self.roll(frame_index, b"kind") % 1000) as u16;
        for (rate, fault) in [
            (r.drop, Fault::Drop),
            (r.duplicate, Fault::Duplicate),
            (r.corrupt, Fault::Corrupt),
            (r.truncate, Fault::Truncate),
            (r.delay, Fault::Delay(r.delay_ticks)),
        ] {
            if x < rate {
                return Some(fault);
            }
            x -= rate.min(x);
        }
        None
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelConfig {
    pub profile: Profile,
    pub fault_plan: FaultPlan,
}

/// Chunks of one frame arriving at `at_tick`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub frame_index: u64,
    pub at_tick: u64,
    pub chunks: Vec<Vec<u8>>,
}

impl Delivery {
    pub fn receive(&self) -> Result<Frame, ChannelError> {
        decode_frame(&reassemble(&self.chunks)?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    pub config: ChannelConfig,
    next_frame: u64,
}

impl Channel {
    pub fn new(config: ChannelConfig) -> Self {
        Channel { config, next_frame: 0 }
    }

    pub fn next_frame_index(&self) -> u64 {
        self.next_frame
    }

    /// Schedules `fault` for the frame `offset` frames from now.
    pub fn schedule(&mut self, offset: u64, fault: Fault) {
        self.config.fault_plan.schedule.insert(self.next_frame + offset, fault);
    }

    /// Sends one encoded frame and returns what reaches the other end. A
    /// dropped frame yields no delivery; a duplicate yields two.
    pub fn transmit(&mut self, frame: &[u8], now: u64) -> Vec<Delivery> {
        let index = self.next_frame;
        self.next_frame += 1;
        let plan = &self.config.fault_plan;
        let fault = plan.fault_for(index);
        let mut bytes = frame.to_vec();
        match fault {
            Some(Fault::Corrupt) if bytes.len() > HEADER_LEN => {
                let span = (bytes.len() - HEADER_LEN) as u64;
                let pos = HEADER_LEN + (plan.roll(index, b"pos") % span) as usize;
                let flip = (plan.roll(index, b"xor") % 255) as u8 + 1;
                bytes[pos] ^= flip;
            }
            Some(Fault::Truncate) => bytes.truncate(bytes.len() / 2),
            _ => {}
        }
        let mtu = self.config.profile.mtu();
        let chunks = chunk_for_mtu(&bytes, mtu, index as u32).expect("profile mtu is valid");
        let at_tick = now + self.config.profile.latency_ticks(chunks.len());
        let d = |at_tick| Delivery {
            frame_index: index,
            at_tick,
            chunks: chunks.clone(),
        };
        match fault {
            Some(Fault::Drop) => Vec::new(),
            Some(Fault::Duplicate) => alloc::vec![d(at_tick), d(at_tick + 1)],
            Some(Fault::Delay(t)) => alloc::vec![d(at_tick + t)],
            _ => alloc::vec![d(at_tick)],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(profile: Profile) -> Channel {
        Channel::new(ChannelConfig {
            profile,
            fault_plan: FaultPlan::default(),
        })
    }

    #[test]
    fn frame_round_trip_and_layout() {
        let f = encode_frame(0x02, b"abc").unwrap();
        assert_eq!(&f[..8], &[0xCB, 0xDC, 1, 2, 0, 0, 0, 3]);
        assert_eq!(f.len(), 8 + 3 + 4);
        let d = decode_frame(&f).unwrap();
        assert_eq!(d.msg_type, 2);
        assert_eq!(d.payload, b"abc");
    }

    #[test]
    fn crc_is_the_reflected_ieee_variant() {
        // Check value of CRC-32/ISO-HDLC.
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn payload_flip_fails_checksum() {
        let mut f = encode_frame(1, &[7; 40]).unwrap();
        f[HEADER_LEN + 5] ^= 1;
        assert_eq!(decode_frame(&f), Err(ChannelError::ChecksumMismatch));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut f = encode_frame(1, b"x").unwrap();
        f[0] = 0;
        assert_eq!(decode_frame(&f), Err(ChannelError::BadMagic));
        let mut f = encode_frame(1, b"x").unwrap();
        f[2] = 9;
        assert_eq!(decode_frame(&f), Err(ChannelError::UnknownVersion(9)));
    }

    #[test]
    fn chunk_counts() {
        let frame = [0u8; 600];
        let chunks = chunk_for_mtu(&frame, 255, 0).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks.iter().all(|c| c.len() <= 255));
        assert_eq!(chunk_for_mtu(&frame[..245], 255, 0).unwrap().len(), 1);
        assert_eq!(chunk_for_mtu(&frame, 15, 0), Err(ChannelError::MtuTooSmall));
    }

    #[test]
    fn reassembly_tolerates_reordering_but_not_gaps() {
        let frame: Vec<u8> = (0..600u32).map(|i| i as u8).collect();
        let mut chunks = chunk_for_mtu(&frame, 244, 7).unwrap();
        chunks.reverse();
        chunks.push(chunks[0].clone());
        assert_eq!(reassemble(&chunks).unwrap(), frame);
        let mut gap = chunk_for_mtu(&frame, 244, 7).unwrap();
        gap.remove(1);
        assert_eq!(reassemble(&gap), Err(ChannelError::IncompleteStream));
    }

    #[test]
    fn scheduled_drop_hides_one_message() {
        let mut ch = plain(Profile::Nfc);
        ch.schedule(1, Fault::Drop);
        let seen: Vec<u8> = (0..3u8)
            .flat_map(|i| ch.transmit(&encode_frame(i, &[i]).unwrap(), 0))
            .map(|d| d.receive().unwrap().msg_type)
            .collect();
        assert_eq!(seen, [0, 2]);
    }

    #[test]
    fn corrupt_and_truncate_never_decode() {
        for fault in [Fault::Corrupt, Fault::Truncate] {
            for seed in 0..200 {
                let mut ch = plain(Profile::Ble);
                ch.config.fault_plan.seed = seed;
                ch.schedule(0, fault);
                let frame = encode_frame(3, &[seed as u8; 300]).unwrap();
                let d = ch.transmit(&frame, 0);
                assert_eq!(d.len(), 1);
                assert!(d[0].receive().is_err());
            }
        }
    }

    #[test]
    fn duplicate_and_delay_timing() {
        let mut ch = plain(Profile::Nfc);
        ch.schedule(0, Fault::Duplicate);
        ch.schedule(1, Fault::Delay(5));
        let f = encode_frame(1, b"p").unwrap();
        let dup = ch.transmit(&f, 10);
        assert_eq!(dup.iter().map(|d| d.at_tick).collect::<Vec<_>>(), [12, 13]);
        let late = ch.transmit(&f, 10);
        assert_eq!(late[0].at_tick, 17);
    }

    #[test]
    fn random_faults_are_a_function_of_seed_and_index() {
        let plan = FaultPlan {
            seed: 42,
            rates: FaultRates {
                drop: 100,
                duplicate: 100,
                corrupt: 100,
                truncate: 100,
                delay: 100,
                delay_ticks: 3,
            },
            schedule: BTreeMap::new(),
        };
        let a: Vec<_> = (0..500).map(|i| plan.fault_for(i)).collect();
        let b: Vec<_> = (0..500).map(|i| plan.fault_for(i)).collect();
        assert_eq!(a, b);
        let faults = a.iter().filter(|f| f.is_some()).count();
        assert!((150..350).contains(&faults), "{faults}");
    }
}
