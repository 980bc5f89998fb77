//! Decoding schedules and spherical random codebooks.
//!
//! Each codeword is split into `K` segments at the decoding times; segment `j`
//! is drawn uniformly on the sphere of radius `sqrt((n_j − n_{j−1})·P)`, so the
//! energy of every prefix `x^{n_k}` equals `n_k·P` and the nested maximal
//! power constraint holds with equality.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mc::stream_rng;

/// Relative slack on the power constraint that absorbs normalisation round-off.
pub const POWER_TOLERANCE: f64 = 1e-9;

/// Default cap on `M·n_K` stored symbols (128 MiB of `f64`).
pub const DEFAULT_SYMBOL_BUDGET: u64 = 1 << 24;

const BINARY_MAGIC: &[u8; 8] = b"VLSFCB01";

/// Strictly increasing decoding times `n_1 < … < n_K` in channel uses.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct Schedule {
    times: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    times: Vec<u64>,
    k: usize,
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = Error;

    fn try_from(repr: ScheduleRepr) -> Result<Self> {
        if repr.k != repr.times.len() {
            return Err(Error::Validation(format!(
                "schedule declares k = {} but lists {} times",
                repr.k,
                repr.times.len()
            )));
        }
        Schedule::new(repr.times)
    }
}

impl From<Schedule> for ScheduleRepr {
    fn from(s: Schedule) -> Self {
        let k = s.times.len();
        ScheduleRepr { times: s.times, k }
    }
}

impl Schedule {
    pub fn new(times: Vec<u64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Validation("a schedule needs at least one decoding time".into()));
        }
        if let Some(w) = times.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::Validation(format!(
                "decoding times must be strictly increasing, found {} then {}",
                w[0], w[1]
            )));
        }
        Ok(Self { times })
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    /// Number of decoding times `K`.
    pub fn k(&self) -> usize {
        self.times.len()
    }

    pub fn last(&self) -> u64 {
        *self.times.last().expect("non-empty")
    }

    /// Segment lengths `n_j − n_{j−1}` with `n_0 = 0`.
    pub fn segment_lengths(&self) -> Vec<u64> {
        let mut prev = 0;
        self.times
            .iter()
            .map(|&t| {
                let len = t - prev;
                prev = t;
                len
            })
            .collect()
    }

    /// Number of non-empty segments up to and including each decoding time.
    pub fn spherical_pieces(&self) -> Vec<u32> {
        let mut count = 0;
        self.segment_lengths()
            .into_iter()
            .map(|len| {
                count += u32::from(len > 0);
                count
            })
            .collect()
    }

    /// The schedule with the leading time dropped.
    pub fn tail(&self) -> Result<Schedule> {
        Schedule::new(self.times[1..].to_vec())
    }
}

/// Uniform sample on the sphere of the given radius in `dim` dimensions.
pub fn sample_sphere_point<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::Validation("sphere dimension must be at least 1".into()));
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::domain("sample_sphere_point", format!("radius must be positive, got {radius}")));
    }
    let mut v = vec![0.0; dim];
    fill_sphere(&mut v, radius, rng);
    Ok(v)
}

fn fill_sphere<R: Rng + ?Sized>(out: &mut [f64], radius: f64, rng: &mut R) {
    loop {
        let mut norm_sq = 0.0;
        for x in out.iter_mut() {
            *x = rng.sample(StandardNormal);
            norm_sq += *x * *x;
        }
        if out.len() == 1 && norm_sq > 0.0 {
            out[0] = radius.copysign(out[0]);
            return;
        }
        if norm_sq > 0.0 {
            let scale = radius / norm_sq.sqrt();
            out.iter_mut().for_each(|x| *x *= scale);
            return;
        }
    }
}

/// `M` codewords of length `n_K`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    m: u64,
    seed: u64,
    snr: f64,
    schedule: Schedule,
    symbols: Vec<f64>,
}

impl Codebook {
    /// Wraps explicit symbols; `symbols.len()` must equal `m · n_K`.
    pub fn from_parts(m: u64, schedule: Schedule, snr: f64, seed: u64, symbols: Vec<f64>) -> Result<Self> {
        let expected = m
            .checked_mul(schedule.last())
            .ok_or_else(|| Error::Resource("M·n_K overflows".into()))?;
        if symbols.len() as u64 != expected {
            return Err(Error::ShapeMismatch(format!(
                "{} symbols for M = {m} codewords of length {}",
                symbols.len(),
                schedule.last()
            )));
        }
        Ok(Self {
            m,
            seed,
            snr,
            schedule,
            symbols,
        })
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn len(&self) -> usize {
        self.schedule.last() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn symbols(&self) -> &[f64] {
        &self.symbols
    }

    /// Codeword for message index `i` (0-based).
    pub fn codeword(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.symbols[i * n..(i + 1) * n]
    }

    pub fn codewords(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0; an all-empty codebook has no symbols to walk
        self.symbols.chunks(self.len().max(1)).take(self.m as usize)
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&self.m.to_le_bytes())?;
        w.write_all(&(self.schedule.k() as u64).to_le_bytes())?;
        for t in self.schedule.times() {
            w.write_all(&t.to_le_bytes())?;
        }
        w.write_all(&self.snr.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        for x in &self.symbols {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Validation("not a VLSF codebook file".into()));
        }
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut word)?;
            Ok(word)
        };
        let m = u64::from_le_bytes(next(&mut r)?);
        let k = u64::from_le_bytes(next(&mut r)?);
        let times = (0..k)
            .map(|_| next(&mut r).map(u64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let snr = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let schedule = Schedule::new(times)?;
        let count = m
            .checked_mul(schedule.last())
            .ok_or_else(|| Error::Resource("M·n_K overflows".into()))?;
        let symbols = (0..count)
            .map(|_| next(&mut r).map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        Codebook::from_parts(m, schedule, snr, seed, symbols)
    }

    /// CSV layout: a header record `M,K,times,P,seed`, one metadata record
    /// (times joined by `;`), then one record of `n_K` symbols per codeword.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().flexible(true).from_writer(w);
        out.write_record(["M", "K", "times", "P", "seed"])?;
        let times = self
            .schedule
            .times()
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            self.m.to_string(),
            self.schedule.k().to_string(),
            times,
            self.snr.to_string(),
            self.seed.to_string(),
        ])?;
        for cw in self.codewords() {
            out.write_record(cw.iter().map(f64::to_string))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(r);
        let mut records = reader.records();
        let meta = records
            .next()
            .ok_or_else(|| Error::Validation("codebook CSV has no metadata record".into()))??;
        let field = |i: usize| meta.get(i).ok_or_else(|| Error::Validation(format!("missing metadata field {i}")));
        let parse_err = |what: &str| Error::Validation(format!("bad {what} in codebook CSV"));
        let m: u64 = field(0)?.parse().map_err(|_| parse_err("M"))?;
        let k: usize = field(1)?.parse().map_err(|_| parse_err("K"))?;
        let times = field(2)?
            .split(';')
            .map(|t| t.parse::<u64>().map_err(|_| parse_err("times")))
            .collect::<Result<Vec<_>>>()?;
        if times.len() != k {
            return Err(parse_err("K"));
        }
        let snr: f64 = field(3)?.parse().map_err(|_| parse_err("P"))?;
        let seed: u64 = field(4)?.parse().map_err(|_| parse_err("seed"))?;
        let mut symbols = Vec::new();
        for rec in records {
            for value in rec?.iter() {
                symbols.push(value.parse::<f64>().map_err(|_| parse_err("symbol"))?);
            }
        }
        Codebook::from_parts(m, Schedule::new(times)?, snr, seed, symbols)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv(file),
            _ => self.write_binary(file),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Self::read_csv(file),
            _ => Self::read_binary(file),
        }
    }
}

/// Draws `m` codewords for `schedule` with the default symbol budget.
pub fn generate_codebook(m: u64, schedule: &Schedule, snr: f64, seed: u64) -> Result<Codebook> {
    generate_codebook_with_budget(m, schedule, snr, seed, DEFAULT_SYMBOL_BUDGET)
}

/// Codeword `i` uses stream `i` of `seed`, so any codeword can be regenerated alone.
pub fn generate_codebook_with_budget(
    m: u64,
    schedule: &Schedule,
    snr: f64,
    seed: u64,
    max_symbols: u64,
) -> Result<Codebook> {
    if m == 0 {
        return Err(Error::Validation("a codebook needs at least one message".into()));
    }
    if !(snr > 0.0) || !snr.is_finite() {
        return Err(Error::domain("generate_codebook", format!("SNR must be positive, got {snr}")));
    }
    let n = schedule.last();
    let total = m
        .checked_mul(n)
        .filter(|&t| t <= max_symbols)
        .ok_or_else(|| Error::Resource(format!("M·n_K = {m}·{n} exceeds the budget of {max_symbols} symbols")))?;
    let mut symbols = vec![0.0; total as usize];
    if n > 0 {
        symbols
            .par_chunks_mut(n as usize)
            .enumerate()
            .for_each(|(i, cw)| fill_codeword(cw, schedule, snr, &mut stream_rng(seed, i as u64)));
    }
    Codebook::from_parts(m, schedule.clone(), snr, seed, symbols)
}

/// Fills one codeword segment by segment.
pub fn fill_codeword<R: Rng + ?Sized>(out: &mut [f64], schedule: &Schedule, snr: f64, rng: &mut R) {
    let mut start = 0usize;
    for &t in schedule.times() {
        let end = t as usize;
        if end > start {
            let radius = ((end - start) as f64 * snr).sqrt();
            fill_sphere(&mut out[start..end], radius, rng);
        }
        start = end;
    }
}

/// Per-codeword result of [`check_power`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodewordPower {
    pub index: u64,
    /// `‖x^{n_k}‖² / (n_k P)` for each decoding time (0 when `n_k = 0`).
    pub prefix_ratio: Vec<f64>,
    /// Decoding-time indices (0-based) whose prefix exceeds the constraint.
    pub violations: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub ok: bool,
    pub codewords: Vec<CodewordPower>,
}

/// Checks `‖x^{n_k}‖² ≤ n_k P (1 + 1e-9)` for every codeword and decoding time.
pub fn check_power(codebook: &Codebook, schedule: &Schedule, snr: f64) -> Result<PowerReport> {
    if codebook.len() as u64 != schedule.last() {
        return Err(Error::ShapeMismatch(format!(
            "codewords have length {} but the schedule ends at {}",
            codebook.len(),
            schedule.last()
        )));
    }
    let codewords: Vec<CodewordPower> = codebook
        .codewords()
        .enumerate()
        .map(|(i, cw)| {
            let mut energy = 0.0;
            let mut start = 0usize;
            let mut prefix_ratio = Vec::with_capacity(schedule.k());
            let mut violations = Vec::new();
            for (k, &t) in schedule.times().iter().enumerate() {
                energy += cw[start..t as usize].iter().map(|x| x * x).sum::<f64>();
                start = t as usize;
                let budget = t as f64 * snr;
                prefix_ratio.push(if t == 0 { 0.0 } else { energy / budget });
                if energy > budget * (1.0 + POWER_TOLERANCE) {
                    violations.push(k);
                }
            }
            CodewordPower {
                index: i as u64,
                prefix_ratio,
                violations,
            }
        })
        .collect();
    Ok(PowerReport {
        ok: codewords.iter().all(|c| c.violations.is_empty()),
        codewords,
    })
}
