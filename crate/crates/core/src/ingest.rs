//! Raw vibration snapshots: text-file readers, the bearing manifest and a
//! synthetic degradation generator.
//!
//! Snapshot files follow the IMS layout: one sample per row, one column per
//! accelerometer channel. A bearing is a directory of snapshot files whose
//! lexicographic order is their time order.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw vibration snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    pub samples: Vec<f64>,
    /// Samples per second.
    pub rate: f64,
    /// Ordinal of the snapshot within its bearing's stream.
    pub timestamp: u64,
    pub bearing_id: String,
    pub channel: usize,
}

impl SampleWindow {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::TooFewSamples(0));
        }
        if self.samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("window samples"));
        }
        if !(self.rate > 0.0) {
            return Err(Error::Config(format!("sample rate must be > 0, got {}", self.rate)));
        }
        Ok(())
    }
}

/// Column separator of a snapshot file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Delimiter {
    /// Any run of spaces and tabs.
    #[default]
    Whitespace,
    Char(char),
}

impl TryFrom<String> for Delimiter {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        match s.as_str() {
            "whitespace" => Ok(Delimiter::Whitespace),
            "tab" | "\t" => Ok(Delimiter::Char('\t')),
            other => {
                let mut chars = other.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => Ok(Delimiter::Char(c)),
                    _ => Err(format!("delimiter must be `whitespace`, `tab` or one character, got `{other}`")),
                }
            }
        }
    }
}

impl From<Delimiter> for String {
    fn from(d: Delimiter) -> String {
        match d {
            Delimiter::Whitespace => "whitespace".into(),
            Delimiter::Char('\t') => "tab".into(),
            Delimiter::Char(c) => c.to_string(),
        }
    }
}

/// Column layout of snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layout {
    #[serde(default)]
    pub delimiter: Delimiter,
    pub columns: usize,
    /// Samples per second.
    pub rate: f64,
    /// Decimal digits used when writing snapshots.
    #[serde(default = "default_precision")]
    pub precision: usize,
}

fn default_precision() -> usize {
    3
}

impl Default for Layout {
    /// The IMS second/third test layout: four channels sampled at 20 kHz.
    fn default() -> Self {
        Layout {
            delimiter: Delimiter::Whitespace,
            columns: 4,
            rate: 20_000.0,
            precision: default_precision(),
        }
    }
}

impl Layout {
    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self.delimiter {
            Delimiter::Whitespace => line.split_whitespace().collect(),
            Delimiter::Char(c) => line.split(c).map(str::trim).collect(),
        }
    }

    fn separator(&self) -> char {
        match self.delimiter {
            Delimiter::Whitespace => '\t',
            Delimiter::Char(c) => c,
        }
    }
}

/// Reads one column of a snapshot file.
///
/// The returned window has timestamp 0 and an empty bearing id; callers that
/// know the stream position fill those in.
pub fn read_snapshot(path: &Path, channel: usize, layout: &Layout) -> Result<SampleWindow> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if channel >= layout.columns {
        return Err(Error::ChannelOutOfRange {
            path: path.into(),
            line: 1,
            channel,
            columns: layout.columns,
        });
    }
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields = layout.split(line);
        if channel >= fields.len() {
            return Err(Error::ChannelOutOfRange {
                path: path.into(),
                line: lineno,
                channel,
                columns: fields.len(),
            });
        }
        if fields.len() != layout.columns {
            return Err(Error::MalformedLine {
                path: path.into(),
                line: lineno,
                reason: format!("expected {} columns, found {}", layout.columns, fields.len()),
            });
        }
        // Every token is validated, not just the selected channel.
        for (col, tok) in fields.iter().enumerate() {
            let value: f64 = tok.parse().map_err(|_| Error::MalformedLine {
                path: path.into(),
                line: lineno,
                reason: format!("non-numeric token `{tok}`"),
            })?;
            if !value.is_finite() {
                return Err(Error::MalformedLine {
                    path: path.into(),
                    line: lineno,
                    reason: format!("non-finite token `{tok}`"),
                });
            }
            if col == channel {
                samples.push(value);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::MalformedLine {
            path: path.into(),
            line: 0,
            reason: "file contains no samples".into(),
        });
    }
    Ok(SampleWindow {
        samples,
        rate: layout.rate,
        timestamp: 0,
        bearing_id: String::new(),
        channel,
    })
}

/// Writes channel columns in `layout` at its declared precision. All columns
/// must have equal length and their count must match `layout.columns`.
pub fn write_snapshot(path: &Path, columns: &[&[f64]], layout: &Layout) -> Result<()> {
    if columns.len() != layout.columns {
        return Err(Error::DimensionMismatch {
            expected: layout.columns,
            got: columns.len(),
        });
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Config("snapshot columns differ in length".into()));
    }
    let sep = layout.separator();
    let mut out = String::with_capacity(rows * columns.len() * (layout.precision + 4));
    for r in 0..rows {
        for (c, col) in columns.iter().enumerate() {
            if c > 0 {
                out.push(sep);
            }
            let _ = write!(out, "{:.*}", layout.precision, col[r]);
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parameters of a synthetic bearing trace.
///
/// Windows before `onset` are stationary: Gaussian noise plus a shaft tone.
/// From `onset` on, overall amplitude grows linearly at `amplitude_growth`
/// per window and a train of decaying defect impulses appears whose height
/// grows at `impulse_growth` noise-floor units per window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Total trace length in windows.
    pub windows: usize,
    /// First degraded window; `None` for a bearing that never degrades.
    #[serde(default)]
    pub onset: Option<usize>,
    #[serde(default)]
    pub amplitude_growth: f64,
    #[serde(default)]
    pub impulse_growth: f64,
    #[serde(default = "default_noise_floor")]
    pub noise_floor: f64,
    #[serde(default = "default_window_len")]
    pub window_len: usize,
    #[serde(default = "default_rate")]
    pub rate: f64,
    pub seed: u64,
}

fn default_noise_floor() -> f64 {
    0.1
}
fn default_window_len() -> usize {
    1024
}
fn default_rate() -> f64 {
    20_000.0
}

const SHAFT_HZ: f64 = 33.3;
const DEFECT_HZ: f64 = 236.4;
const RESONANCE_HZ: f64 = 3_000.0;
const IMPULSE_DECAY_S: f64 = 4.0e-4;

impl SynthSpec {
    /// A healthy (non-degrading) trace.
    pub fn healthy(windows: usize, seed: u64) -> Self {
        SynthSpec {
            windows,
            onset: None,
            amplitude_growth: 0.0,
            impulse_growth: 0.0,
            noise_floor: default_noise_floor(),
            window_len: default_window_len(),
            rate: default_rate(),
            seed,
        }
    }

    /// A trace that starts degrading at `onset`.
    pub fn degrading(windows: usize, onset: usize, seed: u64) -> Self {
        SynthSpec {
            onset: Some(onset),
            amplitude_growth: 0.01,
            impulse_growth: 0.05,
            ..Self::healthy(windows, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynthSpec(m));
        if self.windows == 0 {
            return bad("trace must contain at least one window".into());
        }
        if let Some(onset) = self.onset {
            if onset > self.windows {
                return bad(format!("onset {onset} beyond trace length {}", self.windows));
            }
        }
        for (name, v) in [
            ("amplitude_growth", self.amplitude_growth),
            ("impulse_growth", self.impulse_growth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.noise_floor.is_finite() && self.noise_floor > 0.0) {
            return bad(format!("noise_floor must be > 0, got {}", self.noise_floor));
        }
        if self.window_len < 4 {
            return bad(format!("window_len must be >= 4, got {}", self.window_len));
        }
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad(format!("rate must be > 0, got {}", self.rate));
        }
        Ok(())
    }

    /// Generates window `index`. Each window draws from its own RNG stream, so
    /// windows can be produced in any order with identical results.
    pub fn window(&self, index: usize, bearing_id: &str) -> SampleWindow {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let sigma = self.noise_floor;
        let phase: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let dt = 1.0 / self.rate;

        let age = self
            .onset
            .filter(|&onset| index >= onset)
            .map(|onset| (index - onset) as f64);
        let gain = 1.0 + age.map_or(0.0, |a| self.amplitude_growth * a);
        let impulse_height = age.map_or(0.0, |a| self.impulse_growth * a * sigma);

        let mut samples: Vec<f64> = (0..self.window_len)
            .map(|n| {
                let t = n as f64 * dt;
                let noise: f64 = rng.sample(StandardNormal);
                sigma * noise + 0.5 * sigma * (std::f64::consts::TAU * SHAFT_HZ * t + phase).sin()
            })
            .collect();

        if impulse_height > 0.0 {
            let period = self.rate / DEFECT_HZ;
            let ring = ((5.0 * IMPULSE_DECAY_S) * self.rate).ceil() as usize;
            let mut start = rng.random::<f64>() * period;
            while (start as usize) < self.window_len {
                let jitter = 0.75 + 0.5 * rng.random::<f64>();
                let first = start as usize;
                for k in 0..ring.min(self.window_len - first) {
                    let t = k as f64 * dt;
                    samples[first + k] += impulse_height
                        * jitter
                        * (-t / IMPULSE_DECAY_S).exp()
                        * (std::f64::consts::TAU * RESONANCE_HZ * t).sin();
                }
                start += period;
            }
        }
        for x in &mut samples {
            *x *= gain;
        }

        SampleWindow {
            samples,
            rate: self.rate,
            timestamp: index as u64,
            bearing_id: bearing_id.to_owned(),
            channel: 0,
        }
    }
}

/// Generates a full synthetic trace.
pub fn synth_bearing(spec: &SynthSpec) -> Result<Vec<SampleWindow>> {
    spec.validate()?;
    Ok((0..spec.windows).map(|i| spec.window(i, "synthetic")).collect())
}

/// Where a bearing's snapshots come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearingEntry {
    pub id: String,
    /// 1 = failed during the run, 0 = survived.
    pub label: u8,
    /// Directory of snapshot files (relative paths resolve against the
    /// manifest's directory).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub channel: usize,
    /// Overrides the manifest-wide layout.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
}

impl BearingEntry {
    pub fn is_failed(&self) -> bool {
        self.label == 1
    }
}

/// The list of bearings, their labels and data sources.
///
/// Stored as TOML:
///
/// ```toml
/// [layout]               # optional; defaults to the IMS 4-column layout
/// delimiter = "whitespace"
/// columns = 4
/// rate = 20000.0
///
/// [[bearing]]
/// id = "test2-b1"
/// label = 1
/// path = "2nd_test"
/// channel = 0
///
/// [[bearing]]
/// id = "synthetic-0"
/// label = 0
/// synth = { windows = 800, seed = 7 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BearingManifest {
    #[serde(default)]
    pub layout: Layout,
    #[serde(default, rename = "bearing")]
    pub bearings: Vec<BearingEntry>,
    /// Directory used to resolve relative bearing paths.
    #[serde(skip)]
    pub root: PathBuf,
}

impl BearingManifest {
    pub fn new(layout: Layout, bearings: Vec<BearingEntry>) -> Result<Self> {
        let m = BearingManifest {
            layout,
            bearings,
            root: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: BearingManifest = toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::parse(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for b in &self.bearings {
            if b.label > 1 {
                return Err(Error::Manifest(format!(
                    "bearing `{}` has label {}, expected 0 or 1",
                    b.id, b.label
                )));
            }
            if !seen.insert(b.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate bearing id `{}`", b.id)));
            }
            match (&b.path, &b.synth) {
                (Some(_), None) => {}
                (None, Some(s)) => s.validate()?,
                _ => {
                    return Err(Error::Manifest(format!(
                        "bearing `{}` needs exactly one of `path` or `synth`",
                        b.id
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, bearing_id: &str) -> Result<&BearingEntry> {
        self.bearings
            .iter()
            .find(|b| b.id == bearing_id)
            .ok_or_else(|| Error::UnknownBearing(bearing_id.to_owned()))
    }

    pub fn layout_for<'a>(&'a self, entry: &'a BearingEntry) -> &'a Layout {
        entry.layout.as_ref().unwrap_or(&self.layout)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}

/// Lazily yields a bearing's windows in time order.
#[derive(Debug)]
pub struct BearingStream {
    bearing_id: String,
    source: StreamSource,
    next: usize,
}

#[derive(Debug)]
enum StreamSource {
    Files {
        files: Vec<PathBuf>,
        channel: usize,
        layout: Layout,
    },
    Synth(SynthSpec),
}

impl BearingStream {
    pub fn len(&self) -> usize {
        match &self.source {
            StreamSource::Files { files, .. } => files.len(),
            StreamSource::Synth(s) => s.windows,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Iterator for BearingStream {
    type Item = Result<SampleWindow>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.len() {
            return None;
        }
        let idx = self.next;
        self.next += 1;
        Some(match &self.source {
            StreamSource::Files {
                files,
                channel,
                layout,
            } => read_snapshot(&files[idx], *channel, layout).map(|mut w| {
                w.timestamp = idx as u64;
                w.bearing_id = self.bearing_id.clone();
                w
            }),
            StreamSource::Synth(spec) => Ok(spec.window(idx, &self.bearing_id)),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.len() - self.next;
        (left, Some(left))
    }
}

/// Opens the snapshot stream of one bearing. Snapshot files are ordered by
/// file name; hidden files and subdirectories are skipped.
pub fn stream_bearing(manifest: &BearingManifest, bearing_id: &str) -> Result<BearingStream> {
    let entry = manifest.entry(bearing_id)?;
    let source = if let Some(spec) = &entry.synth {
        spec.validate()?;
        StreamSource::Synth(spec.clone())
    } else {
        let dir = manifest.resolve(entry.path.as_deref().expect("validated manifest"));
        let mut files = Vec::new();
        for item in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let item = item.map_err(|e| Error::io(&dir, e))?;
            let name = item.file_name();
            if name.to_string_lossy().starts_with('.') {
                continue;
            }
            let ft = item.file_type().map_err(|e| Error::io(item.path(), e))?;
            if ft.is_file() {
                files.push(item.path());
            }
        }
        files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        StreamSource::Files {
            files,
            channel: entry.channel,
            layout: manifest.layout_for(entry).clone(),
        }
    };
    let stream = BearingStream {
        bearing_id: bearing_id.to_owned(),
        source,
        next: 0,
    };
    if stream.is_empty() {
        return Err(Error::EmptyStream(bearing_id.to_owned()));
    }
    Ok(stream)
}

/// Builds a manifest of synthetic bearings: `healthy` survivors followed by
/// `degrading` failures, each with its own generator seed derived from
/// `seed`. Degrading bearings start failing at `onset_fraction` of their life.
pub fn synthetic_manifest(
    healthy: usize,
    degrading: usize,
    windows: usize,
    onset_fraction: f64,
    seed: u64,
) -> Result<BearingManifest> {
    let mut bearings = Vec::with_capacity(healthy + degrading);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..healthy + degrading {
        let s: u64 = seeds.random();
        let failed = i >= healthy;
        let synth = if failed {
            let onset = ((windows as f64) * onset_fraction).round() as usize;
            SynthSpec::degrading(windows, onset.min(windows), s)
        } else {
            SynthSpec::healthy(windows, s)
        };
        bearings.push(BearingEntry {
            id: format!("{}-{i:02}", if failed { "fail" } else { "good" }),
            label: u8::from(failed),
            path: None,
            channel: 0,
            layout: None,
            synth: Some(synth),
        });
    }
    BearingManifest::new(Layout::default(), bearings)
}
