//! On-disk formats. Binary integers are little-endian `u32`; feature payloads
//! are `f32`, model parameters `f64`. Text formats are UTF-8 and
//! tab-separated. Parse errors carry the byte offset of the offending field
//! or line.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dp::ConstraintWindows;
use crate::error::{Error, Result};
use crate::eval::{GroundTruth, Prediction};
use crate::features::FeatureSequence;
use crate::matrix::Mat;
use crate::model::ComponentClassifierBank;
use crate::task::{ComponentVocabulary, Granularity, TaskSpec};
use crate::text::TimedTranscript;

pub const FEATURE_MAGIC: &[u8; 4] = b"CTFT";
pub const MODEL_MAGIC: &[u8; 4] = b"CTMD";
/// Appended to a model path to name its component list.
pub const COMPONENTS_SUFFIX: &str = "components";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset,
        message: message.into(),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = read_bytes(path)?;
    String::from_utf8(bytes)
        .map_err(|e| parse_err(path, e.utf8_error().valid_up_to(), "invalid UTF-8"))
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, data).map_err(io_err(path))
}

/// Lines with the byte offset of their first character. A trailing `\r` is
/// dropped.
fn lines_with_offsets(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |raw| {
        let start = offset;
        offset += raw.len();
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        (start, line.strip_suffix('\r').unwrap_or(line))
    })
}

/// Tab-separated fields with their byte offsets.
fn fields(line: &str, start: usize) -> Vec<(usize, &str)> {
    let mut offset = start;
    line.split('\t')
        .map(|f| {
            let here = offset;
            offset += f.len() + 1;
            (here, f)
        })
        .collect()
}

fn parse_field<T: std::str::FromStr>(path: &Path, (offset, raw): (usize, &str), what: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, offset, format!("expected {what}, found {raw:?}")))
}

fn expect_fields<'a>(path: &Path, line: &'a str, start: usize, n: usize) -> Result<Vec<(usize, &'a str)>> {
    let f = fields(line, start);
    if f.len() != n {
        return Err(parse_err(
            path,
            start,
            format!("expected {n} tab-separated fields, found {}", f.len()),
        ));
    }
    Ok(f)
}

struct Reader<'a> {
    path: &'a Path,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.data.len());
        let Some(end) = end else {
            return Err(parse_err(
                self.path,
                self.data.len(),
                format!("truncated file: {what} needs {n} bytes at offset {}", self.pos),
            ));
        };
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let at = self.pos;
        if self.take(4, "magic")? != magic {
            return Err(parse_err(
                self.path,
                at,
                format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(parse_err(
                self.path,
                self.pos,
                format!("{} trailing bytes", self.data.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::invalid(format!("{what} {value} does not fit in u32")))
}

// ---------------------------------------------------------------- features

pub fn encode_features(features: &FeatureSequence) -> Result<Vec<u8>> {
    let v = features.values();
    let mut out = Vec::with_capacity(12 + 4 * v.as_slice().len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&dim_u32(v.rows(), "T")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(v.cols(), "D")?.to_le_bytes());
    for &x in v.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(path: &Path, data: &[u8]) -> Result<FeatureSequence> {
    let mut r = Reader { path, data, pos: 0 };
    r.magic(FEATURE_MAGIC)?;
    let t = r.u32("T")? as usize;
    let d_at = r.pos;
    let d = r.u32("D")? as usize;
    if t == 0 || d == 0 {
        return Err(parse_err(path, d_at - 4, format!("empty feature matrix {t}x{d}")));
    }
    let expected = t.checked_mul(d).and_then(|n| n.checked_mul(4));
    if expected != Some(data.len() - r.pos) {
        return Err(parse_err(
            path,
            data.len(),
            format!("payload of {} bytes does not hold {t}x{d} f32 values", data.len() - r.pos),
        ));
    }
    let mut values = Vec::with_capacity(t * d);
    for _ in 0..t * d {
        let at = r.pos;
        let v = r.f32("feature value")?;
        if !v.is_finite() {
            return Err(parse_err(path, at, "non-finite feature value"));
        }
        values.push(f64::from(v));
    }
    r.finish()?;
    FeatureSequence::new(Mat::from_vec(t, d, values))
}

pub fn write_features(path: &Path, features: &FeatureSequence) -> Result<()> {
    write_file(path, encode_features(features)?)
}

pub fn read_features(path: &Path) -> Result<FeatureSequence> {
    decode_features(path, &read_bytes(path)?)
}

// ------------------------------------------------------------------- model

pub fn encode_model(bank: &ComponentClassifierBank) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 8 * (bank.num_params() + 1));
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&dim_u32(bank.num_components(), "M")?.to_le_bytes());
    out.extend_from_slice(&dim_u32(bank.dim(), "D")?.to_le_bytes());
    for &x in bank.weights().iter().chain(bank.biases()) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out.extend_from_slice(&bank.dropout_rate().to_le_bytes());
    Ok(out)
}

pub fn decode_model(path: &Path, data: &[u8]) -> Result<ComponentClassifierBank> {
    let mut r = Reader { path, data, pos: 0 };
    r.magic(MODEL_MAGIC)?;
    let m = r.u32("M")? as usize;
    let d = r.u32("D")? as usize;
    if m == 0 || d == 0 {
        return Err(parse_err(path, 4, format!("empty model {m}x{d}")));
    }
    let mut read = |n: usize, what: &str| -> Result<Vec<f64>> {
        (0..n)
            .map(|_| {
                let at = r.pos;
                let v = r.f64(what)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, at, format!("non-finite {what}")))
                }
            })
            .collect()
    };
    let weights = read(m * d, "weight")?;
    let biases = read(m, "bias")?;
    let dropout = read(1, "dropout rate")?[0];
    r.finish()?;
    ComponentClassifierBank::from_parts(m, d, weights, biases, dropout)
}

/// Path of the component list stored next to `model`.
pub fn components_path(model: &Path) -> PathBuf {
    let mut name = model.as_os_str().to_owned();
    name.push(".");
    name.push(COMPONENTS_SUFFIX);
    PathBuf::from(name)
}

/// Writes the bank and, next to it, the granularity and component keys it
/// was trained with.
pub fn write_model(path: &Path, bank: &ComponentClassifierBank, vocab: &ComponentVocabulary) -> Result<()> {
    if vocab.len() != bank.num_components() {
        return Err(Error::DimensionMismatch {
            what: "component count",
            expected: bank.num_components(),
            got: vocab.len(),
        });
    }
    write_file(path, encode_model(bank)?)?;
    let mut text = format!("granularity\t{}\n", vocab.granularity());
    for c in vocab.components() {
        text.push_str(c);
        text.push('\n');
    }
    write_file(&components_path(path), text)
}

pub fn read_bank(path: &Path) -> Result<ComponentClassifierBank> {
    decode_model(path, &read_bytes(path)?)
}

pub fn read_model(path: &Path) -> Result<(ComponentClassifierBank, ComponentVocabulary)> {
    let bank = read_bank(path)?;
    let cpath = components_path(path);
    let text = read_text(&cpath)?;
    let mut lines = lines_with_offsets(&text);
    let (start, header) = lines
        .next()
        .ok_or_else(|| parse_err(&cpath, 0, "missing granularity header"))?;
    let f = expect_fields(&cpath, header, start, 2)?;
    if f[0].1 != "granularity" {
        return Err(parse_err(&cpath, start, "expected `granularity` header"));
    }
    let granularity: Granularity = f[1]
        .1
        .parse()
        .map_err(|_| parse_err(&cpath, f[1].0, format!("unknown granularity {:?}", f[1].1)))?;
    let components: Vec<String> = lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(_, l)| l.to_string())
        .collect();
    let vocab = ComponentVocabulary::from_components(granularity, components)?;
    if vocab.len() != bank.num_components() {
        return Err(Error::DimensionMismatch {
            what: "component list length",
            expected: bank.num_components(),
            got: vocab.len(),
        });
    }
    Ok((bank, vocab))
}

// ------------------------------------------------------------------- tasks

pub fn format_tasks(tasks: &[TaskSpec]) -> String {
    let blocks: Vec<String> = tasks
        .iter()
        .map(|t| format!("{}\t{}\nsteps:\t{}\n", t.id, t.title, t.steps().join("|")))
        .collect();
    blocks.join("\n")
}

pub fn parse_tasks(path: &Path, text: &str) -> Result<Vec<TaskSpec>> {
    let mut tasks = Vec::new();
    let mut pending: Option<(usize, String, String)> = None;
    for (start, line) in lines_with_offsets(text) {
        if line.trim().is_empty() {
            if let Some((at, ..)) = pending {
                return Err(parse_err(path, at, "task block has no `steps:` line"));
            }
            continue;
        }
        match pending.take() {
            None => {
                let f = fields(line, start);
                if f.len() != 2 || f[0].1.is_empty() {
                    return Err(parse_err(path, start, "expected `id<TAB>title`"));
                }
                pending = Some((start, f[0].1.to_string(), f[1].1.to_string()));
            }
            Some((_, id, title)) => {
                let f = expect_fields(path, line, start, 2)?;
                if f[0].1 != "steps:" {
                    return Err(parse_err(path, start, "expected `steps:<TAB>step1|step2|...`"));
                }
                let task = TaskSpec::new(id, title, f[1].1.split('|'))
                    .map_err(|e| parse_err(path, f[1].0, e.to_string()))?;
                tasks.push(task);
            }
        }
    }
    if let Some((at, ..)) = pending {
        return Err(parse_err(path, at, "task block has no `steps:` line"));
    }
    if tasks.is_empty() {
        return Err(parse_err(path, 0, "no tasks"));
    }
    Ok(tasks)
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskSpec>> {
    parse_tasks(path, &read_text(path)?)
}

pub fn write_tasks(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    write_file(path, format_tasks(tasks))
}

// -------------------------------------------------------------- transcripts

pub fn format_transcript(transcript: &TimedTranscript) -> String {
    transcript
        .words()
        .iter()
        .map(|(w, t)| format!("{t}\t{w}\n"))
        .collect()
}

pub fn parse_transcript(path: &Path, text: &str) -> Result<TimedTranscript> {
    let mut words = Vec::new();
    for (start, line) in lines_with_offsets(text) {
        if line.is_empty() {
            continue;
        }
        let f = expect_fields(path, line, start, 2)?;
        let t: f64 = parse_field(path, f[0], "a time in seconds")?;
        if !t.is_finite() || t < 0.0 {
            return Err(parse_err(path, f[0].0, "time must be finite and non-negative"));
        }
        if f[1].1.is_empty() {
            return Err(parse_err(path, f[1].0, "empty token"));
        }
        if words.last().is_some_and(|&(_, prev): &(String, f64)| t < prev) {
            return Err(parse_err(path, f[0].0, "times must be non-decreasing"));
        }
        words.push((f[1].1.to_string(), t));
    }
    TimedTranscript::new(words)
}

pub fn read_transcript(path: &Path) -> Result<TimedTranscript> {
    parse_transcript(path, &read_text(path)?)
}

pub fn write_transcript(path: &Path, transcript: &TimedTranscript) -> Result<()> {
    write_file(path, format_transcript(transcript))
}

// -------------------------------------------------------------- constraints

pub fn format_constraints(windows: &ConstraintWindows) -> String {
    windows
        .as_slice()
        .iter()
        .enumerate()
        .filter_map(|(k, w)| w.map(|(lo, hi)| format!("{k}\t{lo}\t{hi}\n")))
        .collect()
}

/// Steps without a line are unconstrained.
pub fn parse_constraints(path: &Path, text: &str, num_steps: usize) -> Result<ConstraintWindows> {
    let mut windows = vec![None; num_steps];
    for (start, line) in lines_with_offsets(text) {
        if line.is_empty() {
            continue;
        }
        let f = expect_fields(path, line, start, 3)?;
        let k: usize = parse_field(path, f[0], "a step index")?;
        let lo: usize = parse_field(path, f[1], "a segment index")?;
        let hi: usize = parse_field(path, f[2], "a segment index")?;
        if k >= num_steps {
            return Err(parse_err(path, f[0].0, format!("step {k} out of range for {num_steps} steps")));
        }
        if lo > hi {
            return Err(parse_err(path, f[1].0, format!("empty window [{lo}, {hi}]")));
        }
        if windows[k].replace((lo, hi)).is_some() {
            return Err(parse_err(path, start, format!("duplicate window for step {k}")));
        }
    }
    ConstraintWindows::new(windows)
}

pub fn read_constraints(path: &Path, num_steps: usize) -> Result<ConstraintWindows> {
    parse_constraints(path, &read_text(path)?, num_steps)
}

pub fn write_constraints(path: &Path, windows: &ConstraintWindows) -> Result<()> {
    write_file(path, format_constraints(windows))
}

// -------------------------------------------------------------- annotations

pub fn format_annotation(gt: &GroundTruth) -> String {
    let mut out = String::new();
    for k in 0..gt.num_steps() {
        for &(a, b) in gt.intervals(k) {
            out.push_str(&format!("{k}\t{a}\t{b}\n"));
        }
    }
    out
}

pub fn parse_annotation(path: &Path, text: &str, num_steps: usize) -> Result<GroundTruth> {
    let mut intervals = vec![Vec::new(); num_steps];
    for (start, line) in lines_with_offsets(text) {
        if line.is_empty() {
            continue;
        }
        let f = expect_fields(path, line, start, 3)?;
        let k: usize = parse_field(path, f[0], "a step index")?;
        let a: f64 = parse_field(path, f[1], "a start time")?;
        let b: f64 = parse_field(path, f[2], "an end time")?;
        if k >= num_steps {
            return Err(parse_err(path, f[0].0, format!("step {k} out of range for {num_steps} steps")));
        }
        if !(a.is_finite() && b.is_finite()) || a < 0.0 || a > b {
            return Err(parse_err(path, f[1].0, format!("bad interval [{a}, {b}]")));
        }
        intervals[k].push((a, b));
    }
    GroundTruth::new(intervals)
}

pub fn read_annotation(path: &Path, num_steps: usize) -> Result<GroundTruth> {
    parse_annotation(path, &read_text(path)?, num_steps)
}

pub fn write_annotation(path: &Path, gt: &GroundTruth) -> Result<()> {
    write_file(path, format_annotation(gt))
}

// -------------------------------------------------------------- predictions

/// A prediction tagged with its task.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionFile {
    pub task_id: String,
    pub prediction: Prediction,
}

/// `task`, `seconds` and one `step` line per step, then optional `score`
/// lines holding the T×K score matrix. Floats use Rust's shortest
/// round-trip representation.
pub fn format_prediction(task_id: &str, p: &Prediction) -> String {
    let mut out = format!("task\t{task_id}\nseconds\t{}\n", p.seconds_per_segment());
    for (k, t) in p.times().iter().enumerate() {
        out.push_str(&format!("step\t{k}\t{t}\n"));
    }
    if let Some(s) = p.scores() {
        for t in 0..s.rows() {
            out.push_str(&format!("score\t{t}"));
            for v in s.row(t) {
                out.push_str(&format!("\t{v}"));
            }
            out.push('\n');
        }
    }
    out
}

pub fn parse_prediction(path: &Path, text: &str) -> Result<PredictionFile> {
    let (mut task_id, mut seconds) = (None, 1.0);
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (start, line) in lines_with_offsets(text) {
        if line.is_empty() {
            continue;
        }
        let f = fields(line, start);
        match f[0].1 {
            "task" if f.len() == 2 => task_id = Some(f[1].1.to_string()),
            "seconds" if f.len() == 2 => seconds = parse_field(path, f[1], "a segment length")?,
            "step" if f.len() == 3 => {
                let k: usize = parse_field(path, f[1], "a step index")?;
                if k != times.len() {
                    return Err(parse_err(path, f[1].0, format!("expected step {}", times.len())));
                }
                times.push(parse_field(path, f[2], "a segment index")?);
            }
            "score" if f.len() >= 3 => {
                let t: usize = parse_field(path, f[1], "a segment index")?;
                if t != rows.len() {
                    return Err(parse_err(path, f[1].0, format!("expected segment {}", rows.len())));
                }
                let row = f[2..]
                    .iter()
                    .map(|&x| parse_field(path, x, "a score"))
                    .collect::<Result<Vec<f64>>>()?;
                if rows.first().is_some_and(|r| r.len() != row.len()) {
                    return Err(parse_err(path, start, "ragged score rows"));
                }
                rows.push(row);
            }
            _ => return Err(parse_err(path, start, format!("unrecognised line {line:?}"))),
        }
    }
    let task_id = task_id.ok_or_else(|| parse_err(path, 0, "missing `task` line"))?;
    let scores = (!rows.is_empty()).then(|| Mat::from_rows(&rows));
    let prediction =
        Prediction::new(times, scores, seconds).map_err(|e| parse_err(path, 0, e.to_string()))?;
    Ok(PredictionFile { task_id, prediction })
}

pub fn read_prediction(path: &Path) -> Result<PredictionFile> {
    parse_prediction(path, &read_text(path)?)
}

pub fn write_prediction(path: &Path, task_id: &str, p: &Prediction) -> Result<()> {
    write_file(path, format_prediction(task_id, p))
}

// ----------------------------------------------------------------- manifest

/// One training video listed in a manifest. Paths are resolved against the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub task_id: String,
    pub features: PathBuf,
    /// Transcript or constraint file, if any.
    pub side: Option<PathBuf>,
}

pub fn parse_manifest(path: &Path, text: &str) -> Result<Vec<ManifestEntry>> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (start, line) in lines_with_offsets(text) {
        if line.trim().is_empty() {
            continue;
        }
        let f = expect_fields(path, line, start, 3)?;
        if f[0].1.is_empty() || f[1].1.is_empty() {
            return Err(parse_err(path, start, "empty task id or feature path"));
        }
        entries.push(ManifestEntry {
            task_id: f[0].1.to_string(),
            features: base.join(f[1].1),
            side: (f[2].1 != "-" && !f[2].1.is_empty()).then(|| base.join(f[2].1)),
        });
    }
    if entries.is_empty() {
        return Err(parse_err(path, 0, "manifest lists no videos"));
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(path, &read_text(path)?)
}

/// Relative paths are written as given.
pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    entries
        .iter()
        .map(|e| {
            let side = e
                .side
                .as_ref()
                .map_or_else(|| "-".to_string(), |p| p.display().to_string());
            format!("{}\t{}\t{side}\n", e.task_id, e.features.display())
        })
        .collect()
}

/// A side file read from a manifest.
#[derive(Clone, Debug, PartialEq)]
pub enum SideInput {
    Transcript(TimedTranscript),
    Constraints(ConstraintWindows),
}

/// Reads a transcript or a constraint file, telling them apart by the field
/// count of the first non-empty line (2 vs 3).
pub fn read_side_input(path: &Path, num_steps: usize) -> Result<SideInput> {
    let text = read_text(path)?;
    let first = lines_with_offsets(&text).find(|(_, l)| !l.is_empty());
    match first.map(|(s, l)| fields(l, s).len()) {
        Some(3) => Ok(SideInput::Constraints(parse_constraints(path, &text, num_steps)?)),
        Some(2) => Ok(SideInput::Transcript(parse_transcript(path, &text)?)),
        Some(n) => Err(parse_err(path, 0, format!("cannot tell file kind from {n} fields"))),
        None => Err(parse_err(path, 0, "empty side file")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    fn offset_of(e: Error) -> usize {
        match e {
            Error::Parse { offset, .. } => offset,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn features_round_trip_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vals: Vec<f64> = (0..35).map(|_| f64::from(rng.random::<f32>() * 4.0 - 2.0)).collect();
        let x = FeatureSequence::new(Mat::from_vec(7, 5, vals)).unwrap();
        let bytes = encode_features(&x).unwrap();
        assert_eq!(&bytes[..4], b"CTFT");
        assert_eq!(&bytes[4..8], &7u32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 35 * 4);
        let back = decode_features(p(), &bytes).unwrap();
        assert_eq!(back, x);
        assert_eq!(encode_features(&back).unwrap(), bytes);
    }

    #[test]
    fn feature_errors() {
        let x = FeatureSequence::new(Mat::filled(2, 2, 1.0)).unwrap();
        let bytes = encode_features(&x).unwrap();
        assert!(decode_features(p(), &bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(offset_of(decode_features(p(), &bad).unwrap_err()), 0);
        let mut empty = b"CTFT".to_vec();
        empty.extend_from_slice(&0u32.to_le_bytes());
        empty.extend_from_slice(&3u32.to_le_bytes());
        assert!(decode_features(p(), &empty).is_err());
        let mut nan = bytes.clone();
        nan[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert_eq!(offset_of(decode_features(p(), &nan).unwrap_err()), 12);
        assert_eq!(offset_of(decode_features(p(), b"CT").unwrap_err()), 2);
    }

    #[test]
    fn model_round_trip_with_components() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let bank = ComponentClassifierBank::from_parts(3, 2, vec![0.1, -0.2, 0.3, 1e-300, 5.0, -7.25], vec![1.0, 2.0, -3.5], 0.5).unwrap();
        let vocab = ComponentVocabulary::from_components(Granularity::SharedStep, vec!["cut onion".into(), "stir".into(), "pour milk".into()]).unwrap();
        write_model(&path, &bank, &vocab).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CTMD");
        assert_eq!(bytes.len(), 12 + 8 * (6 + 3 + 1));
        let (b2, v2) = read_model(&path).unwrap();
        assert_eq!(b2, bank);
        assert_eq!(v2, vocab);
        assert!(decode_model(p(), &bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(offset_of(decode_model(p(), &extra).unwrap_err()), bytes.len());
    }

    #[test]
    fn tasks_round_trip_and_errors() {
        let tasks = vec![
            TaskSpec::new("pancake", "Make pancakes", ["pour milk", "whisk mixture"]).unwrap(),
            TaskSpec::new("tea", "Brew tea", ["boil water"]).unwrap(),
        ];
        let text = format_tasks(&tasks);
        assert_eq!(text, "pancake\tMake pancakes\nsteps:\tpour milk|whisk mixture\n\ntea\tBrew tea\nsteps:\tboil water\n");
        assert_eq!(parse_tasks(p(), &text).unwrap(), tasks);
        let bad = "a\tA\nsteps:\tx|y\n\nb\tB\nstep:\tz\n";
        assert_eq!(offset_of(parse_tasks(p(), bad).unwrap_err()), 20);
        assert!(parse_tasks(p(), "a\tA\n").is_err());
        assert!(parse_tasks(p(), "a\tA\nsteps:\tx||y\n").is_err());
    }

    #[test]
    fn transcript_round_trip_and_errors() {
        let tr = TimedTranscript::new(vec![("pour".into(), 0.5), ("the".into(), 1.0), ("milk".into(), 1.25)]).unwrap();
        let text = format_transcript(&tr);
        assert_eq!(parse_transcript(p(), &text).unwrap(), tr);
        assert_eq!(offset_of(parse_transcript(p(), "1\ta\nx\tb\n").unwrap_err()), 4);
        assert_eq!(offset_of(parse_transcript(p(), "2\ta\n1\tb\n").unwrap_err()), 4);
        assert!(parse_transcript(p(), "1\ta\tb\n").is_err());
    }

    #[test]
    fn constraints_round_trip_and_errors() {
        let w = ConstraintWindows::new(vec![Some((0, 5)), None, Some((7, 9))]).unwrap();
        let text = format_constraints(&w);
        assert_eq!(text, "0\t0\t5\n2\t7\t9\n");
        assert_eq!(parse_constraints(p(), &text, 3).unwrap(), w);
        assert!(parse_constraints(p(), "3\t0\t1\n", 3).is_err());
        assert_eq!(offset_of(parse_constraints(p(), "0\t5\t1\n", 3).unwrap_err()), 2);
        assert!(parse_constraints(p(), "0\t1\t2\n0\t1\t2\n", 3).is_err());
    }

    #[test]
    fn annotation_round_trip() {
        let gt = GroundTruth::new(vec![vec![(1.0, 2.5)], vec![], vec![(3.0, 4.0), (8.0, 9.5)]]).unwrap();
        let text = format_annotation(&gt);
        assert_eq!(parse_annotation(p(), &text, 3).unwrap(), gt);
        assert!(parse_annotation(p(), "0\t2\t1\n", 3).is_err());
        assert!(parse_annotation(p(), "5\t1\t2\n", 3).is_err());
    }

    #[test]
    fn prediction_round_trip() {
        let s = Mat::from_rows(&[[0.1, -0.2], [1.0 / 3.0, 2.0], [0.0, 1e-17]]);
        let pr = Prediction::new(vec![0, 2], Some(s), 1.0).unwrap();
        let text = format_prediction("tea", &pr);
        let back = parse_prediction(p(), &text).unwrap();
        assert_eq!(back.task_id, "tea");
        assert_eq!(back.prediction, pr);
        let bare = Prediction::new(vec![1, 4], None, 0.5).unwrap();
        assert_eq!(parse_prediction(p(), &format_prediction("x", &bare)).unwrap().prediction, bare);
        assert!(parse_prediction(p(), "step\t0\t1\n").is_err());
    }

    #[test]
    fn manifest_and_side_sniffing() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("train.tsv");
        fs::write(&m, "tea\tf/a.ctft\tc/a.txt\ncake\tf/b.ctft\t-\n").unwrap();
        let entries = read_manifest(&m).unwrap();
        assert_eq!(entries[0].features, dir.path().join("f/a.ctft"));
        assert_eq!(entries[0].side, Some(dir.path().join("c/a.txt")));
        assert_eq!(entries[1].side, None);
        assert!(parse_manifest(&m, "tea\tx\n").is_err());

        let c = dir.path().join("c.txt");
        fs::write(&c, "0\t1\t2\n").unwrap();
        assert!(matches!(read_side_input(&c, 1).unwrap(), SideInput::Constraints(_)));
        fs::write(&c, "0.5\tpour\n").unwrap();
        assert!(matches!(read_side_input(&c, 1).unwrap(), SideInput::Transcript(_)));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_features(Path::new("/nonexistent/x")), Err(Error::Io { .. })));
    }
}
