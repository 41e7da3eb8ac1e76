//! On-disk formats: the `.cks` array container (records, masks, phantoms,
//! images, model checkpoints), PGM/PBM exports and metrics CSV.
//!
//! A `.cks` file is laid out as
//!
//! ```text
//! "CKS1\0\0\0\0" | u64 LE header length | JSON header | f32 LE arrays | u32 LE CRC32
//! ```
//!
//! The CRC covers every byte between the magic and the checksum itself.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::diffmath::{CTensor, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::mri_model::{ComplexImage, MaskKind, MultiCoilKSpace, SamplingMask, SensitivityMaps};
use crate::nets::ModelConfig;
use crate::phantom::{DatasetRecord, Phantom, RecordMeta};

pub const MAGIC: [u8; 8] = *b"CKS1\0\0\0\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    /// Complex values as interleaved `(re, im)` f32 pairs.
    C64,
}

impl Dtype {
    fn scalars_per_element(self) -> usize {
        match self {
            Dtype::F32 => 1,
            Dtype::C64 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: Dtype,
    /// Raw scalars; complex arrays hold `2·numel` interleaved values.
    pub values: Vec<f32>,
}

impl ArrayRecord {
    fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn real(&self) -> Result<Vec<f64>> {
        if self.dtype != Dtype::F32 {
            return Err(Error::Header(format!("array '{}' is not real", self.name)));
        }
        Ok(self.values.iter().map(|&v| v as f64).collect())
    }

    pub fn complex(&self) -> Result<Vec<Complex64>> {
        if self.dtype != Dtype::C64 {
            return Err(Error::Header(format!("array '{}' is not complex", self.name)));
        }
        Ok(self
            .values
            .chunks_exact(2)
            .map(|p| Complex64::new(p[0] as f64, p[1] as f64))
            .collect())
    }

    pub fn boolean(&self) -> Result<Vec<bool>> {
        Ok(self.real()?.into_iter().map(|v| v != 0.0).collect())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrayHeader {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: String,
    version: u32,
    arrays: Vec<ArrayHeader>,
    #[serde(default)]
    meta: Value,
}

/// An in-memory `.cks` container.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub arrays: Vec<ArrayRecord>,
}

impl Container {
    pub fn new(kind: &str, meta: Value) -> Self {
        Self {
            kind: kind.to_string(),
            meta,
            arrays: Vec::new(),
        }
    }

    pub fn push_real(&mut self, name: &str, shape: &[usize], values: &[f64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.arrays.push(ArrayRecord {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype: Dtype::F32,
            values: values.iter().map(|&v| v as f32).collect(),
        });
    }

    pub fn push_bool(&mut self, name: &str, shape: &[usize], values: &[bool]) {
        let v: Vec<f64> = values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        self.push_real(name, shape, &v);
    }

    pub fn push_complex(&mut self, name: &str, shape: &[usize], values: &[Complex64]) {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.arrays.push(ArrayRecord {
            name: name.to_string(),
            shape: shape.to_vec(),
            dtype: Dtype::C64,
            values: values.iter().flat_map(|c| [c.re as f32, c.im as f32]).collect(),
        });
    }

    pub fn get(&self, name: &str) -> Result<&ArrayRecord> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| Error::Header(format!("missing array '{name}'")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Header(format!(
                "expected a '{kind}' container, found '{}'",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            version: VERSION,
            arrays: self
                .arrays
                .iter()
                .map(|a| ArrayHeader {
                    name: a.name.clone(),
                    shape: a.shape.clone(),
                    dtype: a.dtype,
                })
                .collect(),
            meta: self.meta.clone(),
        };
        for a in &self.arrays {
            if a.values.len() != a.numel() * a.dtype.scalars_per_element() {
                return Err(Error::Shape(format!("array '{}' does not match its shape", a.name)));
            }
        }
        let header = serde_json::to_vec(&header)?;
        let payload: usize = self.arrays.iter().map(|a| a.values.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + 8 + header.len() + payload + 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for a in &self.arrays {
            for v in &a.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[MAGIC.len()..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parse a container; `source` only labels errors.
    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let len = bytes.len();
        let need = |offset: usize, needed: usize| -> Result<()> {
            if offset + needed > len {
                Err(Error::Truncated { offset, needed, len })
            } else {
                Ok(())
            }
        };
        need(0, MAGIC.len())?;
        if bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic {
                path: source.to_path_buf(),
            });
        }
        need(8, 8)?;
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_len = usize::try_from(header_len).map_err(|_| Error::Truncated {
            offset: 16,
            needed: usize::MAX,
            len,
        })?;
        need(16, header_len)?;
        let header: Header = match serde_json::from_slice(&bytes[16..16 + header_len]) {
            Ok(h) => h,
            Err(e) => {
                // An unparseable header in an otherwise intact file is a
                // format error; in a damaged one it is corruption.
                check_trailing_crc(bytes)?;
                return Err(Error::Header(e.to_string()));
            }
        };
        if header.version != VERSION {
            return Err(Error::Version {
                found: header.version,
                expected: VERSION,
            });
        }

        let mut offset = 16 + header_len;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for a in header.arrays {
            let scalars = a
                .shape
                .iter()
                .try_fold(a.dtype.scalars_per_element(), |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Header(format!("array '{}' is too large", a.name)))?;
            need(offset, scalars * 4)?;
            let values = bytes[offset..offset + scalars * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            offset += scalars * 4;
            arrays.push(ArrayRecord {
                name: a.name,
                shape: a.shape,
                dtype: a.dtype,
                values,
            });
        }
        need(offset, 4)?;
        if len != offset + 4 {
            return Err(Error::Header(format!(
                "{} trailing bytes after checksum",
                len - offset - 4
            )));
        }
        check_trailing_crc(bytes)?;
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            arrays,
        })
    }
}

fn check_trailing_crc(bytes: &[u8]) -> Result<()> {
    let n = bytes.len();
    if n < MAGIC.len() + 4 {
        return Err(Error::Truncated {
            offset: MAGIC.len(),
            needed: 4,
            len: n,
        });
    }
    let stored = u32::from_le_bytes(bytes[n - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[MAGIC.len()..n - 4]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(())
}

/// Write `bytes` through a sibling temporary file and rename, so readers
/// never observe a partially written file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    write_atomic(path, &c.to_bytes()?)
}

pub fn read_container(path: &Path) -> Result<Container> {
    Container::from_bytes(&fs::read(path)?, path)
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| Error::Header(format!("missing meta field '{key}'")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Header(format!("meta field '{key}': {e}")))
}

fn grid(shape: &[usize], name: &str) -> Result<(usize, usize)> {
    match shape {
        [h, w] => Ok((*h, *w)),
        s => Err(Error::Header(format!("array '{name}' must be [h,w], got {s:?}"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskMeta {
    kind: MaskKind,
    requested_acceleration: f64,
    seed: u64,
}

fn mask_meta(mask: &SamplingMask) -> Value {
    json!(MaskMeta {
        kind: mask.kind,
        requested_acceleration: mask.requested_acceleration,
        seed: mask.seed,
    })
}

fn mask_from(c: &Container, meta: &Value) -> Result<SamplingMask> {
    let m: MaskMeta = serde_json::from_value(meta.clone()).map_err(|e| Error::Header(e.to_string()))?;
    let a = c.get("mask")?;
    let (h, w) = grid(&a.shape, "mask")?;
    SamplingMask::new(h, w, a.boolean()?, m.kind, m.requested_acceleration, m.seed)
}

fn push_mask(c: &mut Container, mask: &SamplingMask) {
    c.push_bool("mask", &[mask.height(), mask.width()], mask.keep());
}

pub fn write_mask(path: &Path, mask: &SamplingMask) -> Result<()> {
    let mut c = Container::new("mask", json!({ "mask": mask_meta(mask) }));
    push_mask(&mut c, mask);
    write_container(path, &c)
}

pub fn read_mask(path: &Path) -> Result<SamplingMask> {
    let c = read_container(path)?;
    c.expect_kind("mask")?;
    mask_from(&c, &meta_field::<Value>(&c.meta, "mask")?)
}

pub fn write_record(path: &Path, rec: &DatasetRecord) -> Result<()> {
    let (h, w) = (rec.reference.height, rec.reference.width);
    let mut c = Container::new(
        "record",
        json!({ "record": rec.meta, "mask": mask_meta(&rec.mask) }),
    );
    c.push_complex("reference", &[h, w], &rec.reference.pixels);
    c.push_complex("maps", rec.maps.tensor().shape(), rec.maps.tensor().data());
    push_mask(&mut c, &rec.mask);
    c.push_complex("kspace", rec.kspace.samples.shape(), rec.kspace.samples.data());
    c.push_bool("lesion_mask", &[h, w], &rec.lesion_mask);
    c.push_bool("wm_mask", &[h, w], &rec.wm_mask);
    write_container(path, &c)
}

pub fn read_record(path: &Path) -> Result<DatasetRecord> {
    let c = read_container(path)?;
    c.expect_kind("record")?;
    let meta: RecordMeta = meta_field(&c.meta, "record")?;
    let mask = mask_from(&c, &meta_field::<Value>(&c.meta, "mask")?)?;
    let r = c.get("reference")?;
    let (h, w) = grid(&r.shape, "reference")?;
    let reference = ComplexImage::new(h, w, r.complex()?)?;
    let m = c.get("maps")?;
    let maps = SensitivityMaps::new(CTensor::new(m.shape.clone(), m.complex()?)?)?;
    let k = c.get("kspace")?;
    let kspace = MultiCoilKSpace::new(CTensor::new(k.shape.clone(), k.complex()?)?)?;
    let lesion_mask = c.get("lesion_mask")?.boolean()?;
    let wm_mask = c.get("wm_mask")?.boolean()?;
    if lesion_mask.len() != h * w || wm_mask.len() != h * w {
        return Err(Error::Header("label masks do not match the image grid".into()));
    }
    maps.check_image(h, w)?;
    if (kspace.height(), kspace.width()) != (h, w) || kspace.n_coils() != maps.n_coils() {
        return Err(Error::Header("k-space does not match maps".into()));
    }
    Ok(DatasetRecord {
        reference,
        maps,
        mask,
        kspace,
        lesion_mask,
        wm_mask,
        meta,
    })
}

/// Phantoms are stored with their labels; `meta` typically carries the
/// generating spec.
pub fn write_phantom(path: &Path, phantom: &Phantom, meta: Value) -> Result<()> {
    let (h, w) = (phantom.image.height, phantom.image.width);
    let mut c = Container::new("phantom", meta);
    c.push_complex("image", &[h, w], &phantom.image.pixels);
    c.push_bool("lesion_mask", &[h, w], &phantom.lesion_mask);
    c.push_bool("wm_mask", &[h, w], &phantom.wm_mask);
    write_container(path, &c)
}

pub fn read_phantom(path: &Path) -> Result<Phantom> {
    let c = read_container(path)?;
    c.expect_kind("phantom")?;
    let a = c.get("image")?;
    let (h, w) = grid(&a.shape, "image")?;
    Ok(Phantom {
        image: ComplexImage::new(h, w, a.complex()?)?,
        lesion_mask: c.get("lesion_mask")?.boolean()?,
        wm_mask: c.get("wm_mask")?.boolean()?,
    })
}

pub fn write_image(path: &Path, img: &ComplexImage, meta: Value) -> Result<()> {
    let mut c = Container::new("image", meta);
    c.push_complex("image", &[img.height, img.width], &img.pixels);
    write_container(path, &c)
}

pub fn read_image(path: &Path) -> Result<ComplexImage> {
    let c = read_container(path)?;
    c.expect_kind("image")?;
    let a = c.get("image")?;
    let (h, w) = grid(&a.shape, "image")?;
    ComplexImage::new(h, w, a.complex()?)
}

/// A loaded model checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterStore,
    pub meta: Value,
}

/// Save parameter values under their names together with the config they
/// belong to. `meta` is stored alongside (epoch, validation loss, ...).
pub fn save_checkpoint(path: &Path, config: &ModelConfig, params: &ParameterStore, meta: Value) -> Result<()> {
    let mut c = Container::new(
        "model",
        json!({ "config": config, "step": params.step, "info": meta }),
    );
    for (name, e) in params.iter() {
        c.push_real(name, e.value.shape(), e.value.data());
    }
    write_container(path, &c)
}

/// Load a checkpoint without checking it against any config.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = read_container(path)?;
    c.expect_kind("model")?;
    let config: ModelConfig = meta_field(&c.meta, "config")?;
    let expected = config.parameter_shapes();
    if expected.len() != c.arrays.len() {
        return Err(Error::ConfigMismatch(format!(
            "config needs {} parameters, checkpoint has {}",
            expected.len(),
            c.arrays.len()
        )));
    }
    let mut params = ParameterStore::new();
    for (name, shape) in expected {
        let a = c.get(&name).map_err(|_| Error::ConfigMismatch(format!("missing parameter '{name}'")))?;
        if a.shape != shape {
            return Err(Error::ConfigMismatch(format!(
                "parameter '{name}' has shape {:?}, config expects {shape:?}",
                a.shape
            )));
        }
        params.insert(name, Tensor::new(shape, a.real()?)?)?;
    }
    params.step = c.meta.get("step").and_then(Value::as_u64).unwrap_or(0);
    Ok(Checkpoint {
        config,
        params,
        meta: c.meta.get("info").cloned().unwrap_or(Value::Null),
    })
}

/// Load a checkpoint for `expected`, failing if it was saved for any other
/// configuration.
pub fn load_checkpoint(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ck = read_checkpoint(path)?;
    if &ck.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint was saved for {}, requested {}",
            serde_json::to_string(&ck.config)?,
            serde_json::to_string(expected)?
        )));
    }
    Ok(ck)
}

/// Magnitudes scaled so the largest maps to 65535, rounded to nearest.
pub fn quantize_magnitude(img: &ComplexImage) -> Vec<u16> {
    let mag = img.magnitude();
    let peak = mag.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) || !peak.is_finite() {
        return vec![0; mag.len()];
    }
    mag.iter()
        .map(|m| (m / peak * 65535.0).round().clamp(0.0, 65535.0) as u16)
        .collect()
}

/// Binary 16-bit PGM (P5) of the image magnitude.
pub fn export_image(img: &ComplexImage, path: &Path) -> Result<()> {
    let q = quantize_magnitude(img);
    let mut out = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    out.reserve(q.len() * 2);
    for v in q {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_atomic(path, &out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Splits a netpbm header into `count` tokens, skipping `#` comments, and
/// returns them with the offset of the raster.
fn netpbm_header(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Header("netpbm header ended early".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((tokens, i + 1))
}

fn parse_dim(s: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Header(format!("bad netpbm number '{s}'")))
}

pub fn import_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path)?;
    let (t, start) = netpbm_header(&bytes, 4)?;
    if t[0] != "P5" {
        return Err(Error::Header(format!("not a binary PGM: '{}'", t[0])));
    }
    let (width, height) = (parse_dim(&t[1])?, parse_dim(&t[2])?);
    let maxval = parse_dim(&t[3])?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Header(format!("PGM maxval {maxval} out of range")));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let n = width * height;
    if bytes.len() < start + n * bpp {
        return Err(Error::Truncated {
            offset: start,
            needed: n * bpp,
            len: bytes.len(),
        });
    }
    let raster = &bytes[start..start + n * bpp];
    let samples = if bpp == 1 {
        raster.iter().map(|&b| b as u16).collect()
    } else {
        raster.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// Binary PBM (P4); sampled positions are written as 1 (black).
pub fn export_mask(mask: &SamplingMask, path: &Path) -> Result<()> {
    let (h, w) = (mask.height(), mask.width());
    let mut out = format!("P4\n{w} {h}\n").into_bytes();
    let row_bytes = w.div_ceil(8);
    for y in 0..h {
        let mut row = vec![0u8; row_bytes];
        for x in 0..w {
            if mask.is_kept(y, x) {
                row[x / 8] |= 0x80 >> (x % 8);
            }
        }
        out.extend_from_slice(&row);
    }
    write_atomic(path, &out)
}

/// Reads a P4 bitmap as `(height, width, bits)`.
pub fn import_pbm(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let bytes = fs::read(path)?;
    let (t, start) = netpbm_header(&bytes, 3)?;
    if t[0] != "P4" {
        return Err(Error::Header(format!("not a binary PBM: '{}'", t[0])));
    }
    let (w, h) = (parse_dim(&t[1])?, parse_dim(&t[2])?);
    let row_bytes = w.div_ceil(8);
    if bytes.len() < start + row_bytes * h {
        return Err(Error::Truncated {
            offset: start,
            needed: row_bytes * h,
            len: bytes.len(),
        });
    }
    let mut bits = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = &bytes[start + y * row_bytes..start + (y + 1) * row_bytes];
        bits.extend((0..w).map(|x| row[x / 8] & (0x80 >> (x % 8)) != 0));
    }
    Ok((h, w, bits))
}

pub const METRICS_CSV_HEADER: [&str; 12] = [
    "id", "method", "dataset", "acc", "ssim", "psnr_db", "cr", "wmn", "bgn", "wa", "snr", "wall_ms",
];

/// One line of a metrics CSV. Undefined metrics are written as empty
/// fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub id: String,
    pub method: String,
    pub dataset: String,
    pub acc: f64,
    pub ssim: f64,
    pub psnr_db: f64,
    pub cr: Option<f64>,
    pub wmn: Option<f64>,
    pub bgn: Option<f64>,
    pub wa: Option<f64>,
    pub snr: Option<f64>,
    pub wall_ms: Option<f64>,
}

impl MetricsRow {
    pub fn new(id: &str, method: &str, dataset: &str, acc: f64, r: &MetricsReport, wall_ms: Option<f64>) -> Self {
        Self {
            id: id.to_string(),
            method: method.to_string(),
            dataset: dataset.to_string(),
            acc,
            ssim: r.ssim,
            psnr_db: r.psnr_db,
            cr: r.cr,
            wmn: r.wmn,
            bgn: r.bgn,
            wa: r.wa,
            snr: r.snr,
            wall_ms,
        }
    }
}

pub fn write_metrics<W: Write>(w: W, rows: &[MetricsRow]) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wr.write_record(METRICS_CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics(&mut buf, rows)?;
    write_atomic(path, &buf)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = rd.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != METRICS_CSV_HEADER {
        return Err(Error::Header(format!("unexpected metrics header {header:?}")));
    }
    rd.deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Header(format!("csv: {other:?}")),
    }
}
