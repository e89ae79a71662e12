//! Dataset CSV files and their raw-record sidecars.
//!
//! The CSV carries one row per event with features computed at the
//! configured exponents. The sidecar (`<stem>.records.bin`) keeps the raw
//! sensor channels so training can re-featurize at tuned exponents.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use seisdiag::signals::{feature_len, AccelRecord, ChannelPairSet, EtaSet};
use seisdiag::simulator::{label, DamageLabels, Event, COLLAPSE_DRIFT, DAMAGE_DRIFT};
use seisdiag::svm::Label;

use crate::CliError;

const RECORDS_MAGIC: &[u8; 8] = b"SDREC\0\0\x01";

/// Fields of the provenance comment that opens every dataset file.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub config_hash: String,
    pub seed: u64,
    pub etas: EtaSet,
    pub pairs: ChannelPairSet,
    pub stories: usize,
}

impl DatasetHeader {
    fn comment(&self) -> String {
        let etas: Vec<String> = self.etas.values().iter().map(|e| e.to_string()).collect();
        format!(
            "# seisdiag dataset config_hash={} seed={} eta={} pairs={} stories={}",
            self.config_hash,
            self.seed,
            etas.join(";"),
            self.pairs.to_compact(),
            self.stories
        )
    }

    fn parse(line: &str) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::Validation(format!("dataset provenance line: {m}"));
        let rest = line
            .strip_prefix("# seisdiag dataset ")
            .ok_or_else(|| bad("missing `# seisdiag dataset` comment"))?;
        let get = |key: &str| -> Result<&str, CliError> {
            rest.split_whitespace()
                .find_map(|t| t.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| bad(&format!("missing `{key}`")))
        };
        let etas = get("eta")?
            .split(';')
            .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad exponent `{v}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config_hash: get("config_hash")?.to_string(),
            seed: get("seed")?.parse().map_err(|_| bad("bad seed"))?,
            etas: EtaSet::new(etas).map_err(|e| bad(&e.to_string()))?,
            pairs: ChannelPairSet::from_compact(get("pairs")?).map_err(|e| bad(&e.to_string()))?,
            stories: get("stories")?.parse().map_err(|_| bad("bad story count"))?,
        })
    }

    pub fn columns(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["record_id", "scale_factor", "probability"].map(String::from).to_vec();
        cols.extend((0..feature_len(self.etas.len(), self.pairs.len())).map(|i| format!("f_{i}")));
        cols.extend((1..=self.stories).map(|i| format!("story_{i}")));
        cols.push("building_label".into());
        cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub record_id: String,
    pub scale_factor: f64,
    pub probability: f64,
    pub features: Vec<f64>,
    pub stories: Vec<Label>,
    pub building: Label,
}

#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub header: DatasetHeader,
    pub rows: Vec<DatasetRow>,
}

pub fn records_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("records.bin")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

pub fn write_dataset(path: &Path, header: &DatasetHeader, events: &[Event]) -> Result<(), CliError> {
    let mut out = String::new();
    out.push_str(&header.comment());
    out.push('\n');
    out.push_str(&header.columns().join(","));
    out.push('\n');
    for e in events {
        let f = e
            .features(&header.pairs, &header.etas)
            .map_err(|err| CliError::Numerical(format!("record {}: {err}", e.record_id)))?;
        let mut cells = vec![e.record_id.clone(), e.scale_factor.to_string(), e.probability.to_string()];
        cells.extend(f.values().iter().map(|v| v.to_string()));
        cells.extend(e.labels.stories.iter().map(|l| l.letter().to_string()));
        cells.push(e.labels.building.letter().to_string());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

fn parse_label(s: &str, col: &str, row: usize) -> Result<Label, CliError> {
    let mut chars = s.chars();
    match (chars.next().and_then(Label::from_letter), chars.next()) {
        (Some(l), None) => Ok(l),
        _ => Err(CliError::Validation(format!("row {row}, column `{col}`: expected N or D, got `{s}`"))),
    }
}

/// Read a dataset, checking its columns against the provenance layout.
pub fn read_dataset(path: &Path) -> Result<DatasetFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let header = DatasetHeader::parse(first)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let found: Vec<String> = reader
        .headers()
        .map_err(|e| io_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    let expected = header.columns();
    if let Some(missing) = expected.iter().find(|c| !found.contains(c)) {
        return Err(CliError::Validation(format!(
            "{}: missing column `{missing}`",
            path.display()
        )));
    }
    if found != expected {
        let extra = found.iter().find(|c| !expected.contains(c));
        return Err(CliError::Validation(match extra {
            Some(c) => format!("{}: unexpected column `{c}`", path.display()),
            None => format!("{}: columns out of order", path.display()),
        }));
    }
    let n_f = feature_len(header.etas.len(), header.pairs.len());
    let mut rows = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let num = |i: usize| -> Result<f64, CliError> {
            rec[i].parse::<f64>().map_err(|_| {
                CliError::Validation(format!("row {r}, column `{}`: not a number: `{}`", expected[i], &rec[i]))
            })
        };
        let features = (3..3 + n_f).map(num).collect::<Result<Vec<_>, _>>()?;
        let stories = (0..header.stories)
            .map(|s| parse_label(&rec[3 + n_f + s], &expected[3 + n_f + s], r))
            .collect::<Result<Vec<_>, _>>()?;
        let last = expected.len() - 1;
        rows.push(DatasetRow {
            record_id: rec[0].to_string(),
            scale_factor: num(1)?,
            probability: num(2)?,
            features,
            stories,
            building: parse_label(&rec[last], &expected[last], r)?,
        });
    }
    if !rows.is_empty() {
        if rows.iter().any(|r| !(r.probability > 0.0)) {
            return Err(CliError::Validation(format!("{}: probabilities must be positive", path.display())));
        }
        let mass: f64 = rows.iter().map(|r| r.probability).sum();
        if (mass - 1.0).abs() > 1e-9 {
            return Err(CliError::Validation(format!(
                "{}: probability column sums to {mass}, expected 1",
                path.display()
            )));
        }
    }
    Ok(DatasetFile { header, rows })
}

fn put_str(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    w.write_all(&(v.len() as u64).to_le_bytes())?;
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_records(path: &Path, events: &[Event]) -> Result<(), CliError> {
    let run = || -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(RECORDS_MAGIC)?;
        w.write_all(&(events.len() as u64).to_le_bytes())?;
        for e in events {
            put_str(&mut w, &e.record_id)?;
            put_f64s(&mut w, &e.peak_drift_ratios)?;
            w.write_all(&(e.channels.len() as u32).to_le_bytes())?;
            for c in &e.channels {
                put_str(&mut w, c.channel_id())?;
                w.write_all(&c.dt().to_le_bytes())?;
                put_f64s(&mut w, c.samples())?;
            }
        }
        w.flush()
    };
    run().map_err(|e| io_err(path, e))
}

/// Raw channels and peak drifts of one record.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub record_id: String,
    pub peak_drift_ratios: Vec<f64>,
    pub channels: Vec<AccelRecord>,
}

struct Cursor<R: Read>(R);

impl<R: Read> Cursor<R> {
    fn bytes<const N: usize>(&mut self) -> std::io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> std::io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> std::io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> std::io::Result<String> {
        let n = self.u32()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    fn f64s(&mut self) -> std::io::Result<Vec<f64>> {
        let n = self.u64()? as usize;
        (0..n).map(|_| self.f64()).collect()
    }
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, CliError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut c = Cursor(BufReader::new(file));
    let run = |c: &mut Cursor<BufReader<File>>| -> std::io::Result<Result<Vec<RawRecord>, String>> {
        if &c.bytes::<8>()? != RECORDS_MAGIC {
            return Ok(Err("not a records file".into()));
        }
        let n = c.u64()?;
        let mut out = Vec::new();
        for _ in 0..n {
            let record_id = c.string()?;
            let peak_drift_ratios = c.f64s()?;
            let n_ch = c.u32()?;
            let mut channels = Vec::with_capacity(n_ch as usize);
            for _ in 0..n_ch {
                let id = c.string()?;
                let dt = c.f64()?;
                let samples = c.f64s()?;
                match AccelRecord::new(id, dt, samples) {
                    Ok(r) => channels.push(r),
                    Err(e) => return Ok(Err(e.to_string())),
                }
            }
            out.push(RawRecord {
                record_id,
                peak_drift_ratios,
                channels,
            });
        }
        Ok(Ok(out))
    };
    match run(&mut c) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(m)) => Err(io_err(path, m)),
        Err(e) => Err(io_err(path, e)),
    }
}

/// Join dataset rows with their raw records into events.
pub fn join_events(file: &DatasetFile, records: Vec<RawRecord>) -> Result<Vec<Event>, CliError> {
    if records.len() != file.rows.len() {
        return Err(CliError::Validation(format!(
            "records sidecar has {} records, dataset has {} rows",
            records.len(),
            file.rows.len()
        )));
    }
    file.rows
        .iter()
        .zip(records)
        .map(|(row, raw)| {
            if row.record_id != raw.record_id {
                return Err(CliError::Validation(format!(
                    "records sidecar holds `{}` where the dataset has `{}`",
                    raw.record_id, row.record_id
                )));
            }
            let labels = DamageLabels {
                stories: row.stories.clone(),
                building: row.building,
            };
            if !raw.peak_drift_ratios.is_empty() && label(&raw.peak_drift_ratios, DAMAGE_DRIFT) != labels {
                return Err(CliError::Validation(format!(
                    "labels of `{}` disagree with its recorded drifts",
                    row.record_id
                )));
            }
            Ok(Event {
                record_id: row.record_id.clone(),
                scale_factor: row.scale_factor,
                probability: row.probability,
                collapse: raw.peak_drift_ratios.iter().any(|d| *d > COLLAPSE_DRIFT),
                peak_drift_ratios: raw.peak_drift_ratios,
                channels: raw.channels,
                labels,
            })
        })
        .collect()
}
