//! Inter-core event words and per-pixel stream framing.
//!
//! A firing pixel is sent as one header word followed by its payload words.
//! Header: `y` (11 bits) | `x` (11 bits) | payload word count (10 bits).
//! The all-ones word is reserved for the end-of-frame synchronization event,
//! so coordinates stop at 2046.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorcore::Bf16;

pub const SYNC_WORD: u32 = 0xFFFF_FFFF;
pub const MAX_COORD: usize = 2046;
pub const MAX_PAYLOAD_WORDS: usize = 1023;

/// Payload encoding of a pixel's activations or spikes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// One word per activation: channel in the high half, BFloat16 value in the low half.
    Aer,
    /// One bit per channel, 32 channels per word. Spikes only.
    Bitmask,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Aer => "aer",
            Scheme::Bitmask => "bitmask",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aer" => Ok(Scheme::Aer),
            "bitmask" => Ok(Scheme::Bitmask),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme {other:?}, expected aer or bitmask"
            ))),
        }
    }
}

#[inline]
pub fn encode_aer(channel: u16, value: Bf16) -> u32 {
    (channel as u32) << 16 | value.to_bits() as u32
}

#[inline]
pub fn decode_aer(word: u32) -> (u16, Bf16) {
    ((word >> 16) as u16, Bf16::from_bits(word as u16))
}

pub fn encode_header(y: usize, x: usize, count: usize) -> Result<u32> {
    if y > MAX_COORD || x > MAX_COORD {
        return Err(Error::Codec(format!("pixel ({x}, {y}) exceeds the 11-bit header range")));
    }
    if count > MAX_PAYLOAD_WORDS {
        return Err(Error::Codec(format!("{count} payload words exceed the 10-bit count")));
    }
    Ok((y as u32) << 21 | (x as u32) << 10 | count as u32)
}

pub fn decode_header(word: u32) -> (usize, usize, usize) {
    (
        (word >> 21) as usize,
        (word >> 10 & 0x7FF) as usize,
        (word & 0x3FF) as usize,
    )
}

/// Payload words for one pixel. `channels` is the layer width and sets the
/// bitmask word count. An empty list encodes to no words.
pub fn encode_events(acts: &[(u16, Bf16)], scheme: Scheme, channels: usize) -> Result<Vec<u32>> {
    if acts.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(&(c, _)) = acts.iter().find(|(c, _)| *c as usize >= channels) {
        return Err(Error::Codec(format!("channel {c} outside a {channels}-channel layer")));
    }
    match scheme {
        Scheme::Aer => Ok(acts.iter().map(|&(c, v)| encode_aer(c, v)).collect()),
        Scheme::Bitmask => {
            let mut words = vec![0u32; channels.div_ceil(32)];
            let mut prev: Option<u16> = None;
            for &(c, v) in acts {
                if v != Bf16::ONE {
                    return Err(Error::Codec(format!(
                        "bitmask encodes binary spikes only, channel {c} carries {v}"
                    )));
                }
                if prev.is_some_and(|p| p >= c) {
                    return Err(Error::Codec("bitmask channels must be strictly ascending".into()));
                }
                prev = Some(c);
                words[c as usize / 32] |= 1 << (c % 32);
            }
            Ok(words)
        }
    }
}

/// Inverse of [`encode_events`]; bitmask spikes come back as 1.0 in
/// ascending channel order.
pub fn decode_events(words: &[u32], scheme: Scheme) -> Vec<(u16, Bf16)> {
    match scheme {
        Scheme::Aer => words.iter().map(|&w| decode_aer(w)).collect(),
        Scheme::Bitmask => {
            let mut out = Vec::new();
            for (i, &w) in words.iter().enumerate() {
                let mut bits = w;
                while bits != 0 {
                    let b = bits.trailing_zeros();
                    out.push(((i * 32) as u16 + b as u16, Bf16::ONE));
                    bits &= bits - 1;
                }
            }
            out
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelPacket {
    pub y: u16,
    pub x: u16,
    pub words: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StreamItem {
    Pixel(PixelPacket),
    Sync,
}

impl StreamItem {
    /// Words on the wire, header included.
    pub fn word_count(&self) -> usize {
        match self {
            StreamItem::Pixel(p) => 1 + p.words.len(),
            StreamItem::Sync => 1,
        }
    }
}

pub fn serialize_stream(items: &[StreamItem]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for item in items {
        match item {
            StreamItem::Pixel(p) => {
                out.push(encode_header(p.y as usize, p.x as usize, p.words.len())?);
                out.extend_from_slice(&p.words);
            }
            StreamItem::Sync => out.push(SYNC_WORD),
        }
    }
    Ok(out)
}

pub fn parse_stream(words: &[u32]) -> Result<Vec<StreamItem>> {
    let mut items = Vec::new();
    let mut i = 0;
    while i < words.len() {
        if words[i] == SYNC_WORD {
            items.push(StreamItem::Sync);
            i += 1;
            continue;
        }
        let (y, x, n) = decode_header(words[i]);
        if i + 1 + n > words.len() {
            return Err(Error::Codec(format!(
                "pixel header at word {i} announces {n} words, {} remain",
                words.len() - i - 1
            )));
        }
        items.push(StreamItem::Pixel(PixelPacket {
            y: y as u16,
            x: x as u16,
            words: words[i + 1..i + 1 + n].to_vec(),
        }));
        i += 1 + n;
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aer_word_layout() {
        let w = encode_aer(5, Bf16::ONE);
        assert_eq!(w, 0x0005_3F80);
        assert_eq!(decode_aer(w), (5, Bf16::ONE));
    }

    #[test]
    fn word_counts() {
        let one = [(7u16, Bf16::ONE)];
        assert_eq!(encode_events(&one, Scheme::Bitmask, 32).unwrap().len(), 1);
        let five: Vec<(u16, Bf16)> = (0..5).map(|c| (c, Bf16::from_f32(0.5 + c as f32))).collect();
        assert_eq!(encode_events(&five, Scheme::Aer, 32).unwrap().len(), 5);
        assert_eq!(encode_events(&one, Scheme::Bitmask, 33).unwrap().len(), 2);
        assert!(encode_events(&[], Scheme::Bitmask, 32).unwrap().is_empty());
    }

    #[test]
    fn bitmask_rejects_values() {
        let acts = [(1u16, Bf16::from_f32(0.5))];
        assert!(matches!(encode_events(&acts, Scheme::Bitmask, 32), Err(Error::Codec(_))));
        assert!(encode_events(&[(32, Bf16::ONE)], Scheme::Bitmask, 32).is_err());
    }

    #[test]
    fn header_and_stream() {
        let h = encode_header(55, 3, 4).unwrap();
        assert_eq!(decode_header(h), (55, 3, 4));
        assert!(encode_header(2047, 0, 0).is_err());
        assert_ne!(encode_header(MAX_COORD, MAX_COORD, MAX_PAYLOAD_WORDS).unwrap(), SYNC_WORD);
        let items = vec![
            StreamItem::Pixel(PixelPacket { y: 0, x: 1, words: vec![1, 2] }),
            StreamItem::Pixel(PixelPacket { y: 3, x: 0, words: vec![] }),
            StreamItem::Sync,
        ];
        let words = serialize_stream(&items).unwrap();
        // Header + 2 payload words, a bare header, the sync word.
        assert_eq!(words.len(), 5);
        assert_eq!(items.iter().map(StreamItem::word_count).sum::<usize>(), 5);
        assert_eq!(parse_stream(&words).unwrap(), items);
        assert!(parse_stream(&words[..2]).is_err());
    }
}
