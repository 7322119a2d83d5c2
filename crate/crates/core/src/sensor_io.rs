//! Binary point-cloud records, the `BEVT` tensor container, PPM images and
//! JSON-lines sample manifests.
//!
//! Every numeric payload is little-endian `f32`. Point clouds are headerless
//! arrays of fixed-size records:
//!
//! | sensor | record | fields                      |
//! |--------|--------|-----------------------------|
//! | LiDAR  | 16 B   | `x, y, z, intensity`        |
//! | RADAR  | 20 B   | `x, y, z, snr, rcs`         |

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of weather classes.
pub const NUM_CLASSES: usize = 9;

pub const BEVT_MAGIC: [u8; 4] = *b"BEVT";
pub const BEVT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LidarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    /// Signal-to-noise ratio in dB; may be negative.
    pub snr: f32,
    /// Radar cross-section in dBsm; may be negative.
    pub rcs: f32,
}

/// A fixed-layout point record.
pub trait PointRecord: Copy + Sized {
    const FIELDS: usize;
    const RECORD_SIZE: usize = Self::FIELDS * 4;

    fn from_fields(f: &[f32]) -> Self;
    fn fields(&self) -> Vec<f32>;
    fn xy(&self) -> (f32, f32);
}

impl PointRecord for LidarPoint {
    const FIELDS: usize = 4;

    fn from_fields(f: &[f32]) -> Self {
        Self {
            x: f[0],
            y: f[1],
            z: f[2],
            intensity: f[3],
        }
    }

    fn fields(&self) -> Vec<f32> {
        vec![self.x, self.y, self.z, self.intensity]
    }

    fn xy(&self) -> (f32, f32) {
        (self.x, self.y)
    }
}

impl PointRecord for RadarPoint {
    const FIELDS: usize = 5;

    fn from_fields(f: &[f32]) -> Self {
        Self {
            x: f[0],
            y: f[1],
            z: f[2],
            snr: f[3],
            rcs: f[4],
        }
    }

    fn fields(&self) -> Vec<f32> {
        vec![self.x, self.y, self.z, self.snr, self.rcs]
    }

    fn xy(&self) -> (f32, f32) {
        (self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Lidar,
    Radar,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PointCloud {
    Lidar(Vec<LidarPoint>),
    Radar(Vec<RadarPoint>),
}

impl PointCloud {
    pub fn len(&self) -> usize {
        match self {
            PointCloud::Lidar(p) => p.len(),
            PointCloud::Radar(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decode a headerless record array. Rejects partial trailing records and
/// non-finite fields.
pub fn decode_points<P: PointRecord>(bytes: &[u8]) -> Result<Vec<P>> {
    if !bytes.len().is_multiple_of(P::RECORD_SIZE) {
        return Err(Error::TruncatedRecord {
            len: bytes.len(),
            record_size: P::RECORD_SIZE,
        });
    }
    let mut fields = vec![0f32; P::FIELDS];
    bytes
        .chunks_exact(P::RECORD_SIZE)
        .enumerate()
        .map(|(index, rec)| {
            for (f, b) in fields.iter_mut().zip(rec.chunks_exact(4)) {
                *f = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            }
            if fields.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteRecord { index });
            }
            Ok(P::from_fields(&fields))
        })
        .collect()
}

pub fn encode_points<P: PointRecord>(points: &[P]) -> Vec<u8> {
    let mut out = Vec::with_capacity(points.len() * P::RECORD_SIZE);
    for p in points {
        for f in p.fields() {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

pub fn read_points<P: PointRecord>(path: impl AsRef<Path>) -> Result<Vec<P>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_points(&bytes)
}

pub fn write_points<P: PointRecord>(path: impl AsRef<Path>, points: &[P]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_points(points)).map_err(|e| Error::io(path, e))
}

pub fn read_point_cloud(path: impl AsRef<Path>, kind: SensorKind) -> Result<PointCloud> {
    Ok(match kind {
        SensorKind::Lidar => PointCloud::Lidar(read_points(path)?),
        SensorKind::Radar => PointCloud::Radar(read_points(path)?),
    })
}

pub fn write_point_cloud(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    match cloud {
        PointCloud::Lidar(p) => write_points(path, p),
        PointCloud::Radar(p) => write_points(path, p),
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(&BEVT_MAGIC);
    out.extend_from_slice(&BEVT_VERSION.to_le_bytes());
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse a `BEVT` container: magic, `u32` version, `u8` rank, rank x `u32`
/// dims, then the `f32` payload.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let short = |need: usize| Error::PayloadLength {
        expected: need,
        found: bytes.len(),
    };
    if bytes.len() < 9 {
        if bytes.len() >= 4 && bytes[..4] != BEVT_MAGIC {
            return Err(Error::BadMagic {
                found: [bytes[0], bytes[1], bytes[2], bytes[3]],
                expected: BEVT_MAGIC,
            });
        }
        return Err(short(9));
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != BEVT_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: BEVT_MAGIC,
        });
    }
    let version = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    if version != BEVT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: BEVT_VERSION,
        });
    }
    let ndim = bytes[8] as usize;
    let header = 9 + 4 * ndim;
    if bytes.len() < header {
        return Err(short(header));
    }
    let shape: Vec<usize> = bytes[9..header]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect();
    let count: usize = shape.iter().product();
    let payload = &bytes[header..];
    if payload.len() != count * 4 {
        return Err(Error::PayloadLength {
            expected: count * 4,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Encode a `[3,H,W]` tensor in `[0,1]` as binary PPM (P6, maxval 255).
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::Shape(format!("PPM needs [3,H,W], got {s:?}"))),
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let d = image.data();
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push((d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

/// Decode an 8-bit P6 PPM into `[3,H,W]` floats in `[0,1]`, channels R,G,B.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |reason: &str| Error::Malformed {
        path: PathBuf::from("<ppm>"),
        reason: reason.to_string(),
    };
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    if tokens[0] != "P6" {
        return Err(bad("not a P6 file"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(tokens[1])?, parse(tokens[2])?, parse(tokens[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let plane = w * h;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != 3 * plane {
        return Err(Error::PayloadLength {
            expected: 3 * plane,
            found: raster.len(),
        });
    }
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Malformed { reason, .. } => Error::Malformed {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// One synchronized sample: LiDAR cloud, RADAR cloud, camera frame, the three
/// capture timestamps and the class label.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTriplet {
    pub lidar: Vec<LidarPoint>,
    pub radar: Vec<RadarPoint>,
    /// `[3,H,W]`, values in `[0,1]`.
    pub image: Tensor,
    pub t_lidar: i64,
    pub t_radar: i64,
    pub t_camera: i64,
    pub label: usize,
}

/// One manifest line. Relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub lidar: PathBuf,
    pub radar: PathBuf,
    pub image: PathBuf,
    pub t_lidar: i64,
    pub t_radar: i64,
    pub t_camera: i64,
    pub label: usize,
}

impl ManifestEntry {
    /// Largest pairwise gap between the three timestamps, in microseconds.
    pub fn max_time_gap(&self) -> u64 {
        let ts = [self.t_lidar, self.t_radar, self.t_camera];
        let lo = ts.iter().min().copied().unwrap_or_default();
        let hi = ts.iter().max().copied().unwrap_or_default();
        hi.abs_diff(lo)
    }

    fn validate(&self, line: usize) -> Result<()> {
        for p in [&self.lidar, &self.radar, &self.image] {
            if p.as_os_str().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "manifest line {line}: empty path"
                )));
            }
        }
        if self.label >= NUM_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "manifest line {line}: label {} out of range",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths are resolved against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            entries,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(&line).map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    reason: format!("line {}: {e}", i + 1),
                })?;
            entry.validate(i + 1)?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { entries, root })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    /// Paths are rewritten absolute so the manifest can be written anywhere.
    pub fn with_absolute_paths(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|e| ManifestEntry {
                lidar: self.resolve(&e.lidar),
                radar: self.resolve(&e.radar),
                image: self.resolve(&e.image),
                ..e.clone()
            })
            .collect();
        Self {
            entries,
            root: self.root.clone(),
        }
    }

    /// Load every referenced file into memory.
    pub fn load_sample(&self, index: usize) -> Result<SampleTriplet> {
        let e = &self.entries[index];
        Ok(SampleTriplet {
            lidar: read_points(self.resolve(&e.lidar))?,
            radar: read_points(self.resolve(&e.radar))?,
            image: read_ppm(self.resolve(&e.image))?,
            t_lidar: e.t_lidar,
            t_radar: e.t_radar,
            t_camera: e.t_camera,
            label: e.label,
        })
    }
}

/// Default synchronization window: 50 ms.
pub const DEFAULT_SYNC_TOLERANCE_US: u64 = 50_000;

/// Keep entries whose three timestamps lie within `tolerance_us` of each other
/// (inclusive). Order is preserved.
pub fn filter_synchronized(manifest: &Manifest, tolerance_us: u64) -> Manifest {
    Manifest {
        entries: manifest
            .entries
            .iter()
            .filter(|e| e.max_time_gap() <= tolerance_us)
            .cloned()
            .collect(),
        root: manifest.root.clone(),
    }
}
