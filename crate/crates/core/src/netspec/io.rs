//! Binary weight file.
//!
//! ```text
//! "SFNW"  u16 version  u16 layer_count  u16 input_height  u16 input_width
//! per layer:
//!   u8 kind  u8 k  u16 cin  u16 cout  u8 flags (bit0 bias, bit1 recurrent, bit2 fused_maxpool)
//!   bf16 kernel[k*k*cin*cout]
//!   bf16 rec_kernel[k*k*cout*cout]      (recurrent only)
//!   bf16 bias[cout or 0]
//!   bf16 thresholds[cout or 0]
//!   bf16 leaks[cout or 0]
//! u32 crc32 of every preceding byte
//! ```
//! All integers and BFloat16 words are little-endian.

use std::fs;
use std::path::Path;

use super::{LayerKind, LayerParams, LayerSpec, NetworkSpec};
use crate::error::{Error, Result};
use crate::tensorcore::{Bf16, Kernel};

pub const MAGIC: &[u8; 4] = b"SFNW";
pub const FORMAT_VERSION: u16 = 1;

const FLAG_BIAS: u8 = 1;
const FLAG_RECURRENT: u8 = 2;
const FLAG_MAXPOOL: u8 = 4;

/// Serialise without validating, so malformed networks can be written in tests.
pub fn to_bytes(net: &NetworkSpec) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(net.layers.len() as u16).to_le_bytes());
    out.extend_from_slice(&(net.input_height as u16).to_le_bytes());
    out.extend_from_slice(&(net.input_width as u16).to_le_bytes());
    for layer in &net.layers {
        let s = &layer.spec;
        out.push(s.kind.code());
        out.push(s.kernel as u8);
        out.extend_from_slice(&(s.in_channels as u16).to_le_bytes());
        out.extend_from_slice(&(s.out_channels as u16).to_le_bytes());
        let mut flags = 0;
        if s.has_bias {
            flags |= FLAG_BIAS;
        }
        if s.recurrent {
            flags |= FLAG_RECURRENT;
        }
        if s.fused_maxpool {
            flags |= FLAG_MAXPOOL;
        }
        out.push(flags);
        let mut put = |vals: &[Bf16]| {
            for v in vals {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        };
        put(layer.kernel.data());
        if let Some(rec) = &layer.rec_kernel {
            put(rec.data());
        }
        put(&layer.bias);
        put(&layer.thresholds);
        put(&layer.leaks);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!(
                    "truncated: need {n} bytes for {what}, {} remain",
                    self.buf.len() - self.pos
                ),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn bf16s(&mut self, n: usize, what: &str) -> Result<Vec<Bf16>> {
        let b = self.take(2 * n, what)?;
        Ok(b.chunks_exact(2)
            .map(|c| Bf16::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect())
    }
}

/// Parse and validate a weight file image.
pub fn from_bytes(buf: &[u8]) -> Result<NetworkSpec> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad magic, expected \"SFNW\"".into(),
        });
    }
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u16("layer count")? as usize;
    let input_height = r.u16("input height")? as usize;
    let input_width = r.u16("input width")? as usize;
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let at = r.pos;
        let kind = LayerKind::from_code(r.u8("layer kind")?).ok_or_else(|| Error::Parse {
            offset: at,
            message: format!("layer {i}: unknown kind"),
        })?;
        let k = r.u8("kernel size")? as usize;
        let cin = r.u16("input channels")? as usize;
        let cout = r.u16("output channels")? as usize;
        let flags_at = r.pos;
        let flags = r.u8("flags")?;
        if flags & !(FLAG_BIAS | FLAG_RECURRENT | FLAG_MAXPOOL) != 0 {
            return Err(Error::Parse {
                offset: flags_at,
                message: format!("layer {i}: unknown flag bits {flags:#04x}"),
            });
        }
        if k % 2 == 0 {
            return Err(Error::Parse {
                offset: at + 1,
                message: format!("layer {i}: kernel size {k} must be odd"),
            });
        }
        let spec = LayerSpec {
            kind,
            kernel: k,
            in_channels: cin,
            out_channels: cout,
            has_bias: flags & FLAG_BIAS != 0,
            recurrent: flags & FLAG_RECURRENT != 0,
            fused_maxpool: flags & FLAG_MAXPOOL != 0,
        };
        let kernel = Kernel::from_bf16(k, cin, cout, r.bf16s(k * k * cin * cout, "kernel")?)?;
        let rec_kernel = if spec.recurrent {
            Some(Kernel::from_bf16(
                k,
                cout,
                cout,
                r.bf16s(k * k * cout * cout, "recurrent kernel")?,
            )?)
        } else {
            None
        };
        let bias = r.bf16s(if spec.has_bias { cout } else { 0 }, "bias")?;
        let thresholds = r.bf16s(if kind.is_sparse() { cout } else { 0 }, "thresholds")?;
        let leaks = r.bf16s(if kind == LayerKind::ConvLif { cout } else { 0 }, "leaks")?;
        layers.push(LayerParams {
            spec,
            kernel,
            rec_kernel,
            bias,
            thresholds,
            leaks,
        });
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != buf.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: format!("{} trailing bytes after checksum", buf.len() - r.pos),
        });
    }
    let computed = crc32fast::hash(&buf[..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let net = NetworkSpec {
        input_height,
        input_width,
        layers,
    };
    net.validate()?;
    Ok(net)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkSpec> {
    from_bytes(&fs::read(path)?)
}

/// Validate, then write.
pub fn save_network(net: &NetworkSpec, path: impl AsRef<Path>) -> Result<()> {
    net.validate()?;
    fs::write(path, to_bytes(net))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netspec::{firenet, FireNetShape, NetworkKind};

    #[test]
    fn round_trip_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        for (i, kind) in [NetworkKind::Ann, NetworkKind::Snn].into_iter().enumerate() {
            let net = firenet(FireNetShape::full(kind), 40 + i as u64).unwrap();
            let path = dir.path().join(format!("net{i}.sfnw"));
            save_network(&net, &path).unwrap();
            assert_eq!(load_network(&path).unwrap(), net);
        }
    }

    #[test]
    fn zero_threshold_rejected_as_invariant() {
        let mut net = firenet(FireNetShape::full(NetworkKind::Ann), 2).unwrap();
        net.layers[3].thresholds[0] = Bf16::ZERO;
        let bytes = to_bytes(&net);
        assert!(matches!(from_bytes(&bytes), Err(Error::Invariant(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let net = firenet(
            FireNetShape {
                kind: NetworkKind::Snn,
                channels: 4,
                height: 8,
                width: 8,
            },
            2,
        )
        .unwrap();
        let bytes = to_bytes(&net);
        let cut = bytes.len() - 37;
        match from_bytes(&bytes[..cut]) {
            Err(Error::Parse { offset, message }) => {
                assert!(offset <= cut, "offset {offset} beyond file end {cut}");
                assert!(message.contains("truncated"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(from_bytes(&bytes[..3]), Err(Error::Parse { offset: 0, .. })));
    }

    #[test]
    fn corruption_and_version() {
        let net = firenet(FireNetShape::full(NetworkKind::Ann), 5).unwrap();
        let mut bytes = to_bytes(&net);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(from_bytes(&bytes), Err(Error::Checksum { .. })));
        let mut bytes = to_bytes(&net);
        bytes[4] = 9;
        assert!(matches!(from_bytes(&bytes), Err(Error::Version { found: 9, .. })));
    }
}
