//! Corpus container: little-endian, versioned, SHA-256 trailer.
//!
//! ```text
//! magic "PHDCORP\0" | version u32 | header_len u32 | header (JSON)
//! per utterance: n u32 | tokens n×u32 | durations n×u32 | samples u32 | samples×f32
//! sha256 of everything above (32 bytes)
//! ```

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusConfig, Utterance};
use crate::{rng, Error, Result};

pub const CORPUS_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PHDCORP\0";

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub seed: u64,
    pub train: Vec<Utterance>,
    pub holdout: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: CorpusConfig,
    seed: u64,
    n_train: usize,
    n_holdout: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub split: String,
    pub seed: u64,
    pub tokens: Vec<usize>,
    pub durations: Vec<u32>,
}

/// Human-readable companion of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub seed: u64,
    pub config: CorpusConfig,
    pub n_train: usize,
    pub n_holdout: usize,
    pub sha256: String,
    pub utterances: Vec<ManifestEntry>,
}

impl Corpus {
    pub fn all(&self) -> impl Iterator<Item = &Utterance> {
        self.train.iter().chain(&self.holdout)
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.holdout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn header(&self) -> Header {
        Header {
            config: self.config.clone(),
            seed: self.seed,
            n_train: self.train.len(),
            n_holdout: self.holdout.len(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for u in self.all() {
            out.extend_from_slice(&(u.tokens.len() as u32).to_le_bytes());
            for &t in &u.tokens {
                out.extend_from_slice(&(t as u32).to_le_bytes());
            }
            for &d in &u.durations {
                out.extend_from_slice(&d.to_le_bytes());
            }
            out.extend_from_slice(&(u.waveform.len() as u32).to_le_bytes());
            for &s in &u.waveform {
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Corpus> {
        if bytes.len() < MAGIC.len() + 8 + 32 {
            return Err(Error::Format("corpus file truncated".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::Format("not a corpus file (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        let mut r = Reader { buf: body, pos: 8 };
        let version = r.u32()?;
        if version != CORPUS_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CORPUS_VERSION,
            });
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Integrity("corpus checksum mismatch".into()));
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Format(format!("corpus header: {e}")))?;
        let mut all = Vec::with_capacity(header.n_train + header.n_holdout);
        for _ in 0..header.n_train + header.n_holdout {
            let n = r.u32()? as usize;
            let tokens = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let durations = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let s = r.u32()? as usize;
            let raw = r.take(4 * s)?;
            let waveform = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            all.push(Utterance {
                tokens,
                durations,
                waveform,
                sample_rate: header.config.sample_rate,
                samples_per_frame: header.config.samples_per_frame,
            });
        }
        if r.pos != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        let holdout = all.split_off(header.n_train);
        Ok(Corpus {
            config: header.config,
            seed: header.seed,
            train: all,
            holdout,
        })
    }

    pub fn manifest(&self, sha256: &str) -> CorpusManifest {
        let utterances = self
            .all()
            .enumerate()
            .map(|(i, u)| ManifestEntry {
                index: i,
                split: if i < self.train.len() { "train" } else { "holdout" }.into(),
                seed: rng::derive_seed(self.seed, "utterance", i as u64),
                tokens: u.tokens.clone(),
                durations: u.durations.clone(),
            })
            .collect();
        CorpusManifest {
            version: CORPUS_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            n_train: self.train.len(),
            n_holdout: self.holdout.len(),
            sha256: sha256.to_string(),
            utterances,
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("corpus file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Predicted container size: fixed framing plus 8 bytes per token, 4 per
/// sample and 8 per utterance.
pub fn expected_file_size(header_len: usize, tokens: usize, samples: usize, utterances: usize) -> usize {
    MAGIC.len() + 4 + 4 + header_len + 8 * utterances + 8 * tokens + 4 * samples + 32
}

/// Writes the corpus and `<path>.manifest.json`; returns the hex digest.
pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<String> {
    let bytes = corpus.to_bytes();
    let hex: String = bytes[bytes.len() - 32..].iter().map(|b| format!("{b:02x}")).collect();
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    let manifest = serde_json::to_string_pretty(&corpus.manifest(&hex)).expect("manifest serializes");
    std::fs::write(manifest_path(path), manifest)?;
    Ok(hex)
}

pub fn manifest_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    s.into()
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    Corpus::from_bytes(&std::fs::read(path)?)
}
