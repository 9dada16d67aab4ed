//! Dataset ingestion (TSV) and synthetic Zipf workloads.
//!
//! The on-disk format is one `user_id<TAB>word<TAB>count` line per entry.
//! Repeated `(user, word)` pairs add up. Users keep the order in which they
//! first appear, which fixes their device ids.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson, Zipf};
use rayon::prelude::*;

use crate::bits::BitString;
use crate::device::DeviceDataset;
use crate::encoding::Codebook;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawDataset {
    users: Vec<(String, BTreeMap<String, u64>)>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EncodeStats {
    /// Distinct `(user, word)` entries dropped because the word did not fit.
    pub dropped_entries: u64,
    /// Occurrences behind those entries.
    pub dropped_occurrences: u64,
}

fn check_word(word: &str) -> std::result::Result<(), String> {
    if word.is_empty() {
        return Err("empty word".into());
    }
    if word.contains(['\t', '\n', '\r']) {
        return Err(format!("word {word:?} contains a tab or newline"));
    }
    Ok(())
}

impl RawDataset {
    pub fn from_users(users: impl IntoIterator<Item = (String, BTreeMap<String, u64>)>) -> Result<Self> {
        let mut out = RawDataset::default();
        for (user, words) in users {
            for (word, count) in words {
                check_word(&word).map_err(Error::Parse)?;
                out.add(&user, &word, count);
            }
        }
        Ok(out)
    }

    fn add(&mut self, user: &str, word: &str, count: u64) {
        // Users are usually contiguous in files, so check the last one first.
        let idx = match self.users.iter().rposition(|(u, _)| u == user) {
            Some(i) => i,
            None => {
                self.users.push((user.to_string(), BTreeMap::new()));
                self.users.len() - 1
            }
        };
        *self.users[idx].1.entry(word.to_string()).or_insert(0) += count;
    }

    pub fn users(&self) -> &[(String, BTreeMap<String, u64>)] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn read_tsv<R: BufRead>(input: R, name: &str) -> Result<Self> {
        let mut users: Vec<(String, BTreeMap<String, u64>)> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let malformed = |message: String| Error::Malformed {
                path: name.to_string(),
                line: lineno,
                message,
            };
            let line = line.map_err(|e| malformed(e.to_string()))?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(malformed(format!("expected 3 tab-separated fields, found {}", fields.len())));
            }
            let (user, word, count) = (fields[0], fields[1], fields[2]);
            if user.is_empty() {
                return Err(malformed("empty user id".into()));
            }
            check_word(word).map_err(&malformed)?;
            let count: u64 = count
                .parse()
                .ok()
                .filter(|&c| c > 0)
                .ok_or_else(|| malformed(format!("count {count:?} is not a positive integer")))?;
            let idx = *index.entry(user.to_string()).or_insert_with(|| {
                users.push((user.to_string(), BTreeMap::new()));
                users.len() - 1
            });
            *users[idx].1.entry(word.to_string()).or_insert(0) += count;
        }
        if users.is_empty() {
            return Err(Error::NoUsers(name.to_string()));
        }
        Ok(Self { users })
    }

    pub fn load_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_tsv(BufReader::new(file), &path.display().to_string())
    }

    pub fn write_tsv_to<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut out = BufWriter::new(out);
        for (user, words) in &self.users {
            for (word, count) in words {
                writeln!(out, "{user}\t{word}\t{count}")?;
            }
        }
        out.flush()
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_tsv_to(file).map_err(|e| Error::io(path, e))
    }

    /// Character counts over all occurrences, for building a Huffman code.
    pub fn char_frequencies(&self) -> BTreeMap<char, u64> {
        crate::encoding::char_frequencies(
            self.users
                .iter()
                .flat_map(|(_, ws)| ws.iter().map(|(w, &c)| (w.as_str(), c))),
        )
    }

    /// Total occurrences of each word.
    pub fn word_totals(&self) -> BTreeMap<&str, u64> {
        let mut out = BTreeMap::new();
        for (_, ws) in &self.users {
            for (w, &c) in ws {
                *out.entry(w.as_str()).or_insert(0) += c;
            }
        }
        out
    }

    /// Encodes every word to `r` bits. Words that do not fit are dropped and
    /// counted; a user left without words becomes an empty device.
    pub fn encode(&self, codebook: &Codebook, r: usize) -> (Vec<DeviceDataset>, EncodeStats) {
        let mut stats = EncodeStats::default();
        let mut cache: HashMap<&str, Option<BitString>> = HashMap::new();
        let devices = self
            .users
            .iter()
            .map(|(_, ws)| {
                let mut entries = Vec::with_capacity(ws.len());
                for (w, &c) in ws {
                    let code = *cache.entry(w.as_str()).or_insert_with(|| codebook.encode(w, r).ok());
                    match code {
                        Some(bits) => entries.push((bits, c.min(u32::MAX as u64) as u32)),
                        None => {
                            stats.dropped_entries += 1;
                            stats.dropped_occurrences += c;
                        }
                    }
                }
                DeviceDataset::new(entries)
            })
            .collect();
        (devices, stats)
    }
}

/// Reads a plain word-per-line list (blank lines and surrounding whitespace
/// ignored).
pub fn load_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZipfSpec {
    pub n_devices: usize,
    pub vocab_size: usize,
    pub exponent: f64,
    pub words_per_device_mean: f64,
    pub words_per_device_min: usize,
    pub seed: u64,
}

impl Default for ZipfSpec {
    fn default() -> Self {
        Self {
            n_devices: 50_000,
            vocab_size: 5_000,
            exponent: 1.1,
            words_per_device_mean: 8.0,
            words_per_device_min: 1,
            seed: 0,
        }
    }
}

// Approximate English letter frequencies (per mille), a..z.
const LETTER_WEIGHTS: [u32; 26] = [
    82, 15, 28, 43, 127, 22, 20, 61, 70, 2, 8, 40, 24, 67, 75, 19, 1, 60, 63, 91, 28, 10, 24, 2, 20, 1,
];

/// `v` distinct lowercase pseudo-words of 2 to 9 letters, listed in rank
/// order. Deterministic in `seed`.
pub fn synthetic_vocabulary(v: usize, seed: u64) -> Vec<String> {
    let mut rng = stream(seed, u64::MAX, 0, Purpose::Generate);
    let total: u32 = LETTER_WEIGHTS.iter().sum();
    let mut seen = std::collections::HashSet::with_capacity(v);
    let mut out = Vec::with_capacity(v);
    while out.len() < v {
        // Binomial(7, 0.4) extra letters on top of 2, biased short.
        let len = 2 + (0..7).filter(|_| rng.random_bool(0.4)).count();
        let word: String = (0..len)
            .map(|_| {
                let mut u = rng.random_range(0..total);
                let mut i = 0;
                while u >= LETTER_WEIGHTS[i] {
                    u -= LETTER_WEIGHTS[i];
                    i += 1;
                }
                (b'a' + i as u8) as char
            })
            .collect();
        if seen.insert(word.clone()) {
            out.push(word);
        }
    }
    out
}

/// Devices drawing `max(min, Poisson(mean))` words i.i.d. from a Zipf law
/// over a synthetic vocabulary. User ids are `u<index>`, zero padded.
pub fn generate_zipf(spec: &ZipfSpec) -> Result<RawDataset> {
    if spec.n_devices == 0 || spec.vocab_size == 0 {
        return Err(Error::InvalidParameter("n_devices and vocab_size must be positive".into()));
    }
    if !(spec.exponent > 0.0) || !(spec.words_per_device_mean >= 0.0) {
        return Err(Error::InvalidParameter("zipf exponent must be positive and the mean non-negative".into()));
    }
    let vocab = synthetic_vocabulary(spec.vocab_size, spec.seed);
    let zipf = Zipf::new(spec.vocab_size as f64, spec.exponent)
        .map_err(|e| Error::InvalidParameter(format!("zipf: {e}")))?;
    let poisson = if spec.words_per_device_mean > 0.0 {
        Some(Poisson::new(spec.words_per_device_mean).map_err(|e| Error::InvalidParameter(format!("poisson: {e}")))?)
    } else {
        None
    };
    let width = (spec.n_devices - 1).to_string().len();
    let users: Vec<(String, BTreeMap<String, u64>)> = (0..spec.n_devices)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64, 0, Purpose::Generate);
            let k = poisson.map_or(0, |p| p.sample(&mut rng) as usize).max(spec.words_per_device_min);
            let mut words = BTreeMap::new();
            for _ in 0..k {
                let rank = zipf.sample(&mut rng) as usize;
                *words.entry(vocab[rank - 1].clone()).or_insert(0) += 1;
            }
            (format!("u{i:0width$}"), words)
        })
        .collect();
    Ok(RawDataset { users })
}
