//! Model file layout, all integers little-endian:
//!
//! ```text
//! "AEAPT"  u16 version  u8 architecture tag
//! u32 len  JSON config
//! u32 n    n × (u64 epoch, f64 loss)
//! u64 generator steps  u64 discriminator steps
//! u32 k    k × (u32 rows, u32 cols, rows·cols × f64)
//! u32 CRC-32 of everything above
//! ```

use std::fs;
use std::path::Path;

use super::config::{Architecture, ModelConfig};
use super::{train, TrainedModel};
use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 5] = b"AEAPT";
pub const FORMAT_VERSION: u16 = 1;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| format_err(format!("{what} too large: {n}")))
}

pub fn model_to_bytes(model: &TrainedModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(model.architecture().tag());

    let config = serde_json::to_vec(model.config())
        .map_err(|e| format_err(format!("cannot encode config: {e}")))?;
    out.extend_from_slice(&len_u32(config.len(), "config")?.to_le_bytes());
    out.extend_from_slice(&config);

    let trace = model.loss_trace();
    out.extend_from_slice(&len_u32(trace.len(), "loss trace")?.to_le_bytes());
    for &(epoch, loss) in trace {
        out.extend_from_slice(&(epoch as u64).to_le_bytes());
        out.extend_from_slice(&loss.to_le_bytes());
    }
    out.extend_from_slice(&model.generator_steps().to_le_bytes());
    out.extend_from_slice(&model.discriminator_steps().to_le_bytes());

    let params = model.network().params();
    out.extend_from_slice(&len_u32(params.len(), "parameter list")?.to_le_bytes());
    for p in params {
        out.extend_from_slice(&len_u32(p.rows(), "rows")?.to_le_bytes());
        out.extend_from_slice(&len_u32(p.cols(), "cols")?.to_le_bytes());
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| format_err(format!("truncated model file at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<TrainedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_err("not a model file (bad magic bytes)"));
    }
    if bytes.len() < MAGIC.len() + 2 + 1 + 4 {
        return Err(format_err("truncated model file"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    let mut r = Reader { buf: body, pos: MAGIC.len() };
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(format_err(format!(
            "unsupported model format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(format_err("checksum mismatch (file truncated or corrupt)"));
    }
    let tag = r.u8()?;
    let architecture = Architecture::from_tag(tag)
        .ok_or_else(|| format_err(format!("unknown architecture tag {tag}")))?;

    let config_len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| format_err(format!("bad config block: {e}")))?;
    if config.architecture != architecture {
        return Err(format_err(format!(
            "header says {architecture} but config says {}",
            config.architecture
        )));
    }
    config
        .validate()
        .map_err(|e| format_err(format!("invalid stored config: {e}")))?;

    let trace_len = r.u32()? as usize;
    let mut trace = Vec::with_capacity(trace_len.min(1 << 16));
    for _ in 0..trace_len {
        let epoch = r.u64()? as usize;
        trace.push((epoch, r.f64()?));
    }
    let generator_steps = r.u64()?;
    let discriminator_steps = r.u64()?;

    let mut network = train::initial_network(&config);
    let count = r.u32()? as usize;
    {
        let mut params = network.params_mut();
        if params.len() != count {
            return Err(format_err(format!(
                "{} parameter blocks stored, {} expected for {architecture}",
                count,
                params.len()
            )));
        }
        for (i, p) in params.iter_mut().enumerate() {
            let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
            if (rows, cols) != (p.rows(), p.cols()) {
                return Err(format_err(format!(
                    "parameter block {i} is {rows}×{cols}, expected {}",
                    p.shape()
                )));
            }
            let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            **p = Matrix::new(rows, cols, data)?;
        }
    }
    if r.pos != body.len() {
        return Err(format_err(format!(
            "{} trailing bytes after parameters",
            body.len() - r.pos
        )));
    }
    TrainedModel::from_parts(config, network, trace, generator_steps, discriminator_steps)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    let bytes = model_to_bytes(model)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("cannot write {}", path.display()), e))
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    let bytes =
        fs::read(path).map_err(|e| Error::io(format!("cannot read {}", path.display()), e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::models::fit;

    fn trained(arch: Architecture) -> (TrainedModel, crate::data::BooleanDataset) {
        let spec = SyntheticSpec {
            normal_count: 30,
            anomaly_count: 2,
            attribute_count: 10,
            seed: 8,
            ..SyntheticSpec::default()
        };
        let (d, _) = generate_synthetic(&spec).unwrap();
        let mut c = ModelConfig::new(arch, 10);
        c.epochs = 2;
        c.chunk_size = 4;
        (fit(&c, &d).unwrap(), d)
    }

    #[test]
    fn round_trip_gives_identical_scores() {
        let dir = tempfile::tempdir().unwrap();
        for arch in Architecture::ALL {
            let (m, d) = trained(arch);
            let path = dir.path().join(format!("{arch}.model"));
            save_model(&m, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, m, "{arch}");
            let a: Vec<u64> = m.score_all(&d).unwrap().iter().map(|s| s.to_bits()).collect();
            let b: Vec<u64> = back.score_all(&d).unwrap().iter().map(|s| s.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(model_to_bytes(&back).unwrap(), fs::read(&path).unwrap());
        }
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let (m, _) = trained(Architecture::Ae);
        let mut bytes = model_to_bytes(&m).unwrap();
        bytes[0] = b'X';
        assert!(matches!(model_from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_and_flipped_files_are_format_errors() {
        let (m, _) = trained(Architecture::GruAe);
        let bytes = model_to_bytes(&m).unwrap();
        for cut in [3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(model_from_bytes(&bytes[..cut]), Err(Error::Format(_))), "{cut}");
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(model_from_bytes(&flipped), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let (m, _) = trained(Architecture::Ae);
        let mut bytes = model_to_bytes(&m).unwrap();
        bytes[5] = 9;
        let err = model_from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn loaded_model_rejects_wrong_width() {
        let (m, _) = trained(Architecture::AtAe);
        let back = model_from_bytes(&model_to_bytes(&m).unwrap()).unwrap();
        let spec = SyntheticSpec {
            normal_count: 5,
            anomaly_count: 1,
            attribute_count: 12,
            ..SyntheticSpec::default()
        };
        let (other, _) = generate_synthetic(&spec).unwrap();
        assert!(matches!(back.score_all(&other), Err(Error::Shape { .. })));
    }
}
