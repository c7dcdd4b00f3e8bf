use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{ExpressionLabel, PreparedDataset};
use crate::error::{Error, Result};
use crate::geometry::{LandmarkSequence, Srvf, TangentChart};

pub const PREPARED_MAGIC: &[u8; 7] = b"SRVFDS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkFormat {
    Jsonl,
    Csv,
}

impl LandmarkFormat {
    /// `.csv` files are CSV; anything else is read as JSON Lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => Self::Csv,
            _ => Self::Jsonl,
        }
    }
}

/// What a landmark file is expected to contain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LandmarkSchema {
    pub format: Option<LandmarkFormat>,
    pub landmarks: Option<usize>,
}

#[derive(Deserialize, Serialize)]
struct JsonRecord {
    id: String,
    label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fps: Option<f64>,
    frames: Vec<Vec<[f64; 2]>>,
}

#[derive(Deserialize)]
struct CsvRow {
    id: String,
    label: String,
    frame: usize,
    landmark: usize,
    x: f64,
    y: f64,
}

pub fn load_landmark_sequences(path: &Path, schema: LandmarkSchema) -> Result<Vec<LandmarkSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let format = schema.format.unwrap_or_else(|| LandmarkFormat::from_path(path));
    let seqs = match format {
        LandmarkFormat::Jsonl => parse_landmark_jsonl(BufReader::new(file))?,
        LandmarkFormat::Csv => parse_landmark_csv(file)?,
    };
    check_landmarks(&seqs, schema.landmarks)?;
    Ok(seqs)
}

fn check_landmarks(seqs: &[LandmarkSequence], expected: Option<usize>) -> Result<()> {
    let Some(d) = expected.or_else(|| seqs.first().map(|s| s.num_landmarks())) else {
        return Ok(());
    };
    match seqs.iter().find(|s| s.num_landmarks() != d) {
        Some(s) => Err(Error::Schema(format!(
            "sequence {} has {} landmarks, expected {d}",
            s.id,
            s.num_landmarks()
        ))),
        None => Ok(()),
    }
}

pub fn parse_landmark_jsonl(reader: impl BufRead) -> Result<Vec<LandmarkSequence>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let context = |id: Option<&str>| match id {
            Some(id) => format!("line {} (record {id})", i + 1),
            None => format!("line {}", i + 1),
        };
        let line = line.map_err(|e| Error::Parse {
            context: context(None),
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: context(None),
            message: e.to_string(),
        })?;
        let seq = LandmarkSequence::new(rec.id.clone(), rec.label, rec.frames).map_err(|e| {
            match e {
                Error::Schema(m) => Error::Schema(m),
                e => Error::Parse {
                    context: context(Some(&rec.id)),
                    message: e.to_string(),
                },
            }
        })?;
        out.push(seq);
    }
    Ok(out)
}

fn parse_landmark_csv(reader: impl Read) -> Result<Vec<LandmarkSequence>> {
    struct Partial {
        label: String,
        points: BTreeMap<(usize, usize), [f64; 2]>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut partial: BTreeMap<String, Partial> = BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
        // header occupies line 1
        let context = format!("record {} (line {})", i + 1, i + 2);
        let row = row.map_err(|e| Error::Parse {
            context: context.clone(),
            message: e.to_string(),
        })?;
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(Error::Parse {
                context: format!("{context}, sequence {}", row.id),
                message: "non-finite coordinate".into(),
            });
        }
        let entry = partial.entry(row.id.clone()).or_insert_with(|| {
            order.push(row.id.clone());
            Partial {
                label: row.label.clone(),
                points: BTreeMap::new(),
            }
        });
        if entry.label != row.label {
            return Err(Error::Parse {
                context,
                message: format!("sequence {} changes label", row.id),
            });
        }
        if entry.points.insert((row.frame, row.landmark), [row.x, row.y]).is_some() {
            return Err(Error::Parse {
                context,
                message: format!(
                    "sequence {}: duplicate frame {} landmark {}",
                    row.id, row.frame, row.landmark
                ),
            });
        }
    }
    order
        .into_iter()
        .map(|id| {
            let p = partial.remove(&id).expect("every id was recorded");
            let frames = p.points.keys().map(|k| k.0).max().unwrap_or(0) + 1;
            let landmarks = p.points.keys().map(|k| k.1).max().unwrap_or(0) + 1;
            if p.points.len() != frames * landmarks {
                return Err(Error::Schema(format!(
                    "sequence {id}: {} points do not fill {frames} frames x {landmarks} landmarks",
                    p.points.len()
                )));
            }
            // BTreeMap order is (frame, landmark), i.e. row-major
            let coords = p.points.values().flat_map(|v| *v).collect();
            LandmarkSequence::from_flat(id, Some(p.label), landmarks, coords)
        })
        .collect()
}

/// Writes sequences in the JSON Lines landmark schema.
pub fn write_landmark_jsonl(path: &Path, sequences: &[LandmarkSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in sequences {
        let rec = JsonRecord {
            id: s.id.clone(),
            label: s.label.clone(),
            fps: None,
            frames: s.to_nested(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_string(w: &mut impl Write, s: &str) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(s.len() as u64)?;
    w.write_all(s.as_bytes())
}

fn write_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    v.iter().try_for_each(|x| w.write_f64::<LittleEndian>(*x))
}

/// Layout: magic, `C N T d` as u64, class names, provenance, chart,
/// `C` class means, `N` label indices (u64), `N` SRVFs. Strings are a u64
/// byte length followed by UTF-8; arrays are little-endian f64.
pub fn save_prepared(path: &Path, data: &PreparedDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let body = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(PREPARED_MAGIC)?;
        for n in [
            data.class_names.len(),
            data.srvfs.len(),
            data.frames,
            data.landmarks,
        ] {
            w.write_u64::<LittleEndian>(n as u64)?;
        }
        for c in &data.class_names {
            write_string(w, c)?;
        }
        write_string(w, &data.provenance)?;
        write_f64s(w, data.chart.reference().data())?;
        for m in &data.class_means {
            write_f64s(w, m.data())?;
        }
        for l in &data.labels {
            w.write_u64::<LittleEndian>(l.index() as u64)?;
        }
        for q in &data.srvfs {
            write_f64s(w, q.data())?;
        }
        w.flush()
    };
    body(&mut w).map_err(|e| Error::io(path, e))
}

pub fn load_prepared(path: &Path) -> Result<PreparedDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: String| Error::CorruptFile {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < PREPARED_MAGIC.len() || &bytes[..PREPARED_MAGIC.len()] != PREPARED_MAGIC {
        if bytes.starts_with(b"SRVFDS") {
            return Err(Error::VersionMismatch(format!(
                "{}: {:?}",
                path.display(),
                String::from_utf8_lossy(&bytes[..bytes.len().min(7)])
            )));
        }
        return Err(corrupt("missing SRVFDS1 magic".into()));
    }
    let mut r = &bytes[PREPARED_MAGIC.len()..];
    let truncated = |_| corrupt("truncated".into());
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = usize::try_from(r.read_u64::<LittleEndian>().map_err(truncated)?)
            .map_err(|_| corrupt("dimension overflow".into()))?;
    }
    let [classes, n, frames, landmarks] = dims;
    if frames < 2 || landmarks == 0 || classes == 0 {
        return Err(corrupt(format!(
            "invalid dimensions C={classes} N={n} T={frames} d={landmarks}"
        )));
    }
    let sample_len = (frames - 1)
        .checked_mul(2 * landmarks)
        .ok_or_else(|| corrupt("dimension overflow".into()))?;
    // cheap sanity bound before allocating
    let min_rest = (1 + classes + n)
        .checked_mul(sample_len * 8)
        .and_then(|v| v.checked_add(n * 8));
    if min_rest.map_or(true, |m| m > r.len()) {
        return Err(corrupt("truncated".into()));
    }
    let read_string = |r: &mut &[u8]| -> Result<String> {
        let len = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
        if len > r.len() {
            return Err(corrupt("truncated".into()));
        }
        let (s, rest) = r.split_at(len);
        *r = rest;
        String::from_utf8(s.to_vec()).map_err(|_| corrupt("invalid UTF-8".into()))
    };
    let class_names = (0..classes)
        .map(|_| read_string(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let provenance = read_string(&mut r)?;
    let read_srvf = |r: &mut &[u8]| -> Result<Srvf> {
        let mut v = vec![0.0; sample_len];
        r.read_f64_into::<LittleEndian>(&mut v).map_err(truncated)?;
        Srvf::from_unit_samples(frames - 1, 2 * landmarks, v)
            .map_err(|e| corrupt(format!("bad SRVF: {e}")))
    };
    let chart = TangentChart::new(read_srvf(&mut r)?);
    let class_means = (0..classes)
        .map(|_| read_srvf(&mut r))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..n)
        .map(|_| {
            let i = r.read_u64::<LittleEndian>().map_err(truncated)? as usize;
            ExpressionLabel::new(i, classes).map_err(|e| corrupt(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let srvfs = (0..n)
        .map(|_| read_srvf(&mut r))
        .collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(corrupt(format!("{} trailing bytes", r.len())));
    }
    Ok(PreparedDataset {
        frames,
        landmarks,
        class_names,
        srvfs,
        labels,
        chart,
        class_means,
        provenance,
    })
}
