//! Binary container for model checkpoints and cached spectrograms.
//!
//! Layout (all integers little-endian `u32`, floats little-endian `f64`):
//!
//! ```text
//! "XLEC" version
//! n_meta  { key_len key  value_len value }*
//! n_tensors { name_len name  rank  dim*  value* }*
//! ```
//!
//! Metadata is stored sorted by key, so identical content gives identical
//! bytes.

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xlstm_ecg_core::network::FusionNetwork;
use xlstm_ecg_core::{Spectrogram, StftConfig, Tensor};

use crate::config::RunConfig;
use crate::error::{read_file, write_file, AppError, Result};

pub const MAGIC: &[u8; 4] = b"XLEC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| AppError::data(format!("value {v} does not fit the container format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            AppError::data(format!("container truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| AppError::data(format!("non-UTF-8 string before byte {}", self.pos)))
    }
}

impl Container {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, self.meta.len())?;
        for (k, v) in &self.meta {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        put_u32(&mut out, self.tensors.len())?;
        for (name, t) in &self.tensors {
            put_str(&mut out, name)?;
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(AppError::data("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(AppError::data(format!("unsupported checkpoint version {version}")));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let n = r.u32()?;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| {
                AppError::data(format!("tensor {name} has an overflowing shape {shape:?}"))
            })?;
            let raw = r.take(count.checked_mul(8).ok_or_else(|| AppError::data("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(AppError::data(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?).map_err(|e| match e {
            AppError::Data(m) => AppError::Data(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| AppError::data(format!("container has no tensor '{name}'")))
    }
}

/// A trained network with the configuration and class names it was
/// trained with.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub class_names: Vec<String>,
    pub net: FusionNetwork,
}

const CLASS_NAMES_KEY: &str = "class_names";

pub fn save_checkpoint(path: &Path, config: &RunConfig, class_names: &[String], net: &FusionNetwork) -> Result<()> {
    let mut meta: BTreeMap<String, String> =
        config.pairs_with_derived().into_iter().map(|(k, v)| (format!("config.{k}"), v)).collect();
    meta.insert(CLASS_NAMES_KEY.to_string(), class_names.join("\n"));
    meta.insert("kind".to_string(), "model".to_string());
    let tensors = net.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    Container { meta, tensors }.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::load(path)?;
    if c.meta.get("kind").map(String::as_str) != Some("model") {
        return Err(AppError::data(format!("{} is not a model checkpoint", path.display())));
    }
    let config = RunConfig::from_pairs(
        c.meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| (k, v.as_str()))),
    )?;
    let class_names: Vec<String> = c
        .meta
        .get(CLASS_NAMES_KEY)
        .map(|s| s.lines().map(String::from).collect())
        .unwrap_or_default();
    if class_names.len() != config.network.n_classes {
        return Err(AppError::data(format!(
            "{}: {} class names for {} classes",
            path.display(),
            class_names.len(),
            config.network.n_classes
        )));
    }
    // parameters are overwritten below; the seed only shapes the throwaway init
    let mut net = FusionNetwork::new(config.network.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    net.load_params(c.tensors.iter().map(|(n, t)| (n.as_str(), t)))
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint {
        config,
        class_names,
        net,
    })
}

/// Cache file name for a record id.
pub fn cache_file_name(record_id: &str) -> String {
    let safe: String = record_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.xspec")
}

pub fn save_spectrogram(path: &Path, record_id: &str, stft: &StftConfig, spec: &Spectrogram) -> Result<()> {
    let meta = [
        ("kind", "spectrogram".to_string()),
        ("record_id", record_id.to_string()),
        ("stft", stft.cache_key()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let tensors = vec![
        ("values".to_string(), Tensor::new([spec.frames(), spec.leads(), spec.bins()], spec.values().to_vec())?),
        ("bin_freqs".to_string(), Tensor::new([spec.bins()], spec.bin_freqs.clone())?),
        ("frame_times".to_string(), Tensor::new([spec.frames()], spec.frame_times.clone())?),
    ];
    Container { meta, tensors }.save(path)
}

/// Loads a cached spectrogram, or `None` when it was computed for a
/// different record or STFT configuration.
pub fn load_spectrogram(path: &Path, record_id: &str, stft: &StftConfig) -> Result<Option<Spectrogram>> {
    let c = Container::load(path)?;
    let matches = c.meta.get("kind").map(String::as_str) == Some("spectrogram")
        && c.meta.get("record_id").map(String::as_str) == Some(record_id)
        && c.meta.get("stft") == Some(&stft.cache_key());
    if !matches {
        return Ok(None);
    }
    let values = c.tensor("values")?;
    let &[frames, leads, _] = values.shape() else {
        return Err(AppError::data(format!("{}: spectrogram values must be rank 3", path.display())));
    };
    Ok(Some(Spectrogram::new(
        frames,
        leads,
        c.tensor("bin_freqs")?.data().to_vec(),
        c.tensor("frame_times")?.data().to_vec(),
        values.data().to_vec(),
    )?))
}
