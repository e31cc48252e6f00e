//! Binary file formats, IDX loading, dataset directories and PGM/PPM output.
//!
//! All fixed formats are little-endian and start with a six-byte magic:
//!
//! - `SEAHM1`: u32 height, u32 width, then f32 values row-major.
//! - `SEADF1`: u32 layer count `L`, `L + 1` u32 layer widths, u8 activation
//!   tag, then every weight matrix as f32 `(out, in)` row-major.
//! - `SEACL1`: as `SEADF1` with the hidden activation tag, followed per layer
//!   by f32 weights `(out, in)` row-major and then f32 biases.
//!
//! Values are stored as f32, so only f32-representable values round-trip
//! exactly. Writes go to a temporary file in the target directory that is
//! then renamed into place.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::baselines::{Dataset, DenseLayer, HiddenActivation, MlpClassifier};
use crate::dsf::{Activation, DsfArchitecture, DsfNetwork};
use crate::error::{Error, Result};
use crate::resample::Heatmap;

pub const HEATMAP_MAGIC: &[u8; 6] = b"SEAHM1";
pub const DSF_MAGIC: &[u8; 6] = b"SEADF1";
pub const CLASSIFIER_MAGIC: &[u8; 6] = b"SEACL1";
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Upper bound on any single dimension read from a file.
const MAX_DIM: usize = 1 << 24;

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("{}: truncated at byte {}", self.what, self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, magic: &[u8; 6]) -> Result<()> {
        if self.take(6)? != magic {
            return Err(Error::format(format!("{}: bad magic", self.what)));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u32_be(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn dim(&mut self) -> Result<usize> {
        let d = self.u32_le()? as usize;
        if d > MAX_DIM {
            return Err(Error::format(format!("{}: dimension {d} too large", self.what)));
        }
        Ok(d)
    }

    /// `n` f32 values, checking the length before allocating.
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n
            .checked_mul(4)
            .ok_or_else(|| Error::format(format!("{}: size overflow", self.what)))?;
        Ok(self
            .take(len)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<'a>(out: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_heatmap(h: &Heatmap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(14 + 4 * h.len());
    out.extend_from_slice(HEATMAP_MAGIC);
    put_u32(&mut out, h.height())?;
    put_u32(&mut out, h.width())?;
    put_f32s(&mut out, h.values());
    Ok(out)
}

/// Parses `SEAHM1` bytes, or CSV text (rows of comma-separated decimals) when
/// the first non-blank character looks numeric.
pub fn decode_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    if bytes.starts_with(HEATMAP_MAGIC) {
        let mut r = Reader::new(bytes, "heatmap");
        r.magic(HEATMAP_MAGIC)?;
        let (h, w) = (r.dim()?, r.dim()?);
        let n = h
            .checked_mul(w)
            .ok_or_else(|| Error::format("heatmap: size overflow"))?;
        let values = r.f32s(n)?;
        r.finish()?;
        return Heatmap::new(h, w, values);
    }
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace());
    match first {
        Some(b) if b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+') => decode_heatmap_csv(bytes),
        _ => Err(Error::format("heatmap: bad magic")),
    }
}

fn decode_heatmap_csv(bytes: &[u8]) -> Result<Heatmap> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::format("heatmap CSV is not UTF-8"))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(format!("heatmap CSV line {}: {e}", i + 1)))?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::format(format!(
                    "heatmap CSV line {}: {} columns, expected {w}",
                    i + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        height += 1;
    }
    Heatmap::new(height, width.unwrap_or(0), values)
}

pub fn write_heatmap(path: &Path, h: &Heatmap) -> Result<()> {
    write_atomic(path, &encode_heatmap(h)?)
}

pub fn read_heatmap(path: &Path) -> Result<Heatmap> {
    decode_heatmap(&fs::read(path)?)
}

pub fn encode_dsf(net: &DsfNetwork) -> Result<Vec<u8>> {
    let dims = net.arch().layer_dims();
    let mut out = Vec::new();
    out.extend_from_slice(DSF_MAGIC);
    put_u32(&mut out, dims.len() - 1)?;
    for &d in dims {
        put_u32(&mut out, d)?;
    }
    out.push(net.arch().activation().tag());
    for w in net.weights() {
        put_f32s(&mut out, w.iter());
    }
    Ok(out)
}

fn read_dims(r: &mut Reader<'_>) -> Result<Vec<usize>> {
    let layers = r.dim()?;
    if layers == 0 || layers > 64 {
        return Err(Error::format(format!("{}: bad layer count {layers}", r.what)));
    }
    (0..=layers).map(|_| r.dim()).collect()
}

fn read_matrix(r: &mut Reader<'_>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(format!("{}: size overflow", r.what)))?;
    Ok(Array2::from_shape_vec((rows, cols), r.f32s(n)?).expect("length checked"))
}

pub fn decode_dsf(bytes: &[u8]) -> Result<DsfNetwork> {
    let mut r = Reader::new(bytes, "dsf");
    r.magic(DSF_MAGIC)?;
    let dims = read_dims(&mut r)?;
    let tag = r.u8()?;
    let act = Activation::from_tag(tag).ok_or_else(|| Error::format(format!("dsf: unknown activation tag {tag}")))?;
    let arch = DsfArchitecture::new(dims.clone(), act).map_err(|e| Error::format(format!("dsf: {e}")))?;
    let weights = dims
        .windows(2)
        .map(|d| read_matrix(&mut r, d[1], d[0]))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    DsfNetwork::new(arch, weights)
}

pub fn write_dsf(path: &Path, net: &DsfNetwork) -> Result<()> {
    write_atomic(path, &encode_dsf(net)?)
}

pub fn read_dsf(path: &Path) -> Result<DsfNetwork> {
    decode_dsf(&fs::read(path)?)
}

pub fn encode_classifier(clf: &MlpClassifier) -> Result<Vec<u8>> {
    let dims = clf.dims();
    let mut out = Vec::new();
    out.extend_from_slice(CLASSIFIER_MAGIC);
    put_u32(&mut out, dims.len() - 1)?;
    for &d in &dims {
        put_u32(&mut out, d)?;
    }
    out.push(clf.activation().tag());
    for l in clf.layers() {
        put_f32s(&mut out, l.weights.iter());
        put_f32s(&mut out, l.bias.iter());
    }
    Ok(out)
}

pub fn decode_classifier(bytes: &[u8]) -> Result<MlpClassifier> {
    let mut r = Reader::new(bytes, "classifier");
    r.magic(CLASSIFIER_MAGIC)?;
    let dims = read_dims(&mut r)?;
    if dims.contains(&0) {
        return Err(Error::format("classifier: zero layer width"));
    }
    let tag = r.u8()?;
    let act = HiddenActivation::from_tag(tag)
        .ok_or_else(|| Error::format(format!("classifier: unknown activation tag {tag}")))?;
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for d in dims.windows(2) {
        let weights = read_matrix(&mut r, d[1], d[0])?;
        let bias = Array1::from(r.f32s(d[1])?);
        layers.push(DenseLayer { weights, bias });
    }
    r.finish()?;
    MlpClassifier::new(layers, act)
}

pub fn write_classifier(path: &Path, clf: &MlpClassifier) -> Result<()> {
    write_atomic(path, &encode_classifier(clf)?)
}

pub fn read_classifier(path: &Path) -> Result<MlpClassifier> {
    decode_classifier(&fs::read(path)?)
}

/// IDX image file (`0x00000803`, big-endian `n, rows, cols`, u8 pixels),
/// scaled to `[0,1]`.
pub fn decode_idx_images(bytes: &[u8]) -> Result<Vec<Heatmap>> {
    let mut r = Reader::new(bytes, "idx images");
    if r.u32_be()? != IDX_IMAGES_MAGIC {
        return Err(Error::format("idx images: bad magic"));
    }
    let (n, h, w) = (r.u32_be()? as usize, r.u32_be()? as usize, r.u32_be()? as usize);
    let px = h
        .checked_mul(w)
        .filter(|&p| p > 0)
        .ok_or_else(|| Error::format("idx images: bad dimensions"))?;
    let total = n
        .checked_mul(px)
        .ok_or_else(|| Error::format("idx images: size overflow"))?;
    let data = r.take(total)?;
    r.finish()?;
    data.chunks_exact(px)
        .map(|c| Heatmap::new(h, w, c.iter().map(|&b| f64::from(b) / 255.0).collect()))
        .collect()
}

/// IDX label file (`0x00000801`, big-endian `n`, u8 labels).
pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader::new(bytes, "idx labels");
    if r.u32_be()? != IDX_LABELS_MAGIC {
        return Err(Error::format("idx labels: bad magic"));
    }
    let n = r.u32_be()? as usize;
    let data = r.take(n)?;
    r.finish()?;
    Ok(data.iter().map(|&b| usize::from(b)).collect())
}

pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset> {
    let images = decode_idx_images(&fs::read(images)?)?;
    let labels = decode_idx_labels(&fs::read(labels)?)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(images, labels, classes)
}

/// Contents of `manifest.json` in a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub images: Vec<String>,
    pub labels: Vec<usize>,
    #[serde(default)]
    pub planted_masks: Option<Vec<Vec<usize>>>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes every image as `SEAHM1` plus a JSON manifest of labels and masks.
pub fn write_dataset_dir(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut names = Vec::with_capacity(data.len());
    for (i, im) in data.images.iter().enumerate() {
        let name = format!("image_{i:05}.seahm");
        write_heatmap(&dir.join(&name), im)?;
        names.push(name);
    }
    let manifest = DatasetManifest {
        num_classes: data.num_classes,
        images: names,
        labels: data.labels.clone(),
        planted_masks: data.planted_masks.clone(),
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)
}

pub fn read_dataset_dir(dir: &Path) -> Result<Dataset> {
    let text = fs::read(dir.join(MANIFEST_FILE))?;
    let m: DatasetManifest =
        serde_json::from_slice(&text).map_err(|e| Error::format(format!("manifest: {e}")))?;
    let images = m
        .images
        .iter()
        .map(|name| read_heatmap(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    let mut ds = Dataset::new(images, m.labels, m.num_classes)?;
    if let Some(masks) = m.planted_masks {
        let n = ds.images.first().map_or(0, Heatmap::len);
        if masks.len() != ds.num_classes || masks.iter().flatten().any(|&p| p >= n) {
            return Err(Error::format("manifest: planted masks do not match the images"));
        }
        ds.planted_masks = Some(masks);
    }
    Ok(ds)
}

/// `round(255 v)` with halves rounded up.
pub fn to_byte(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// Binary PGM (P5) for `values` in `[0,1]`, or, given a base image, a
/// binary PPM (P6) blending the grey base with a red heat layer at alpha 0.5.
pub fn encode_pgm(values: &[f64], height: usize, width: usize, overlay: Option<&Heatmap>) -> Result<Vec<u8>> {
    crate::error::check_dim(height * width, values.len())?;
    match overlay {
        None => {
            let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
            out.extend(values.iter().map(|&v| to_byte(v)));
            Ok(out)
        }
        Some(base) => {
            if base.height() != height || base.width() != width {
                return Err(Error::Dimension {
                    expected: values.len(),
                    got: base.len(),
                });
            }
            let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
            for (&v, &g) in values.iter().zip(base.values()) {
                let g = g.clamp(0.0, 1.0);
                out.push(to_byte(0.5 * g + 0.5 * v.clamp(0.0, 1.0)));
                out.push(to_byte(0.5 * g));
                out.push(to_byte(0.5 * g));
            }
            Ok(out)
        }
    }
}

pub fn render_pgm(h: &Heatmap, path: &Path, overlay: Option<&Heatmap>) -> Result<()> {
    write_atomic(path, &encode_pgm(h.values(), h.height(), h.width(), overlay)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn heatmap_layout() {
        let h = Heatmap::new(1, 2, vec![0.0, 1.0]).unwrap();
        let bytes = encode_heatmap(&h).unwrap();
        assert_eq!(bytes.len(), 22);
        assert_eq!(&bytes[..6], b"SEAHM1");
        assert_eq!(&bytes[6..14], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[14..], &[0, 0, 0, 0, 0, 0, 0x80, 0x3f]);
        assert_eq!(decode_heatmap(&bytes).unwrap(), h);
    }

    #[test]
    fn heatmap_errors() {
        let mut bytes = encode_heatmap(&Heatmap::new(1, 2, vec![0.25, 0.5]).unwrap()).unwrap();
        assert!(matches!(decode_heatmap(b"XXXXXX\x01\0\0\0\x01\0\0\0\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_heatmap(&bytes[..20]), Err(Error::Format(_))));
        bytes[14..18].copy_from_slice(&2.0f32.to_le_bytes());
        assert!(matches!(decode_heatmap(&bytes), Err(Error::Domain(_))));
        assert!(matches!(decode_heatmap(b""), Err(Error::Format(_))));
    }

    #[test]
    fn heatmap_csv() {
        let h = decode_heatmap(b"0.5, 1\n0,0.25\n").unwrap();
        assert_eq!((h.height(), h.width()), (2, 2));
        assert_eq!(h.values(), &[0.5, 1.0, 0.0, 0.25]);
        assert!(matches!(decode_heatmap(b"0.5,1\n0\n"), Err(Error::Format(_))));
        assert!(matches!(decode_heatmap(b"0.5,abc\n"), Err(Error::Format(_))));
    }

    #[test]
    fn dsf_round_trip() {
        let arch = DsfArchitecture::new(vec![3, 2, 1], Activation::Log1p).unwrap();
        let net = DsfNetwork::new(arch, vec![array![[0.5, 1.0, 0.0], [2.0, 0.25, 1.5]], array![[0.75, 3.0]]]).unwrap();
        let bytes = encode_dsf(&net).unwrap();
        assert_eq!(bytes.len(), 6 + 4 + 12 + 1 + 4 * 8);
        assert_eq!(decode_dsf(&bytes).unwrap(), net);
        for cut in 0..bytes.len() {
            assert!(matches!(decode_dsf(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn classifier_round_trip() {
        let clf = MlpClassifier::new(
            vec![
                DenseLayer { weights: array![[0.5, -1.0], [0.25, 2.0]], bias: array![0.125, -0.5] },
                DenseLayer { weights: array![[1.0, -1.0]], bias: array![3.0] },
            ],
            HiddenActivation::Softplus,
        )
        .unwrap();
        let bytes = encode_classifier(&clf).unwrap();
        assert_eq!(decode_classifier(&bytes).unwrap(), clf);
        for cut in 0..bytes.len() {
            assert!(matches!(decode_classifier(&bytes[..cut]), Err(Error::Format(_))));
        }
    }

    #[test]
    fn idx_files() {
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0, 255, 51, 102]);
        let ims = decode_idx_images(&img).unwrap();
        assert_eq!(ims.len(), 2);
        assert_eq!(ims[0].values(), &[0.0, 1.0]);
        assert_eq!(ims[1].values(), &[0.2, 0.4]);
        assert!(decode_idx_images(&img[..18]).is_err());

        let lab = [0, 0, 8, 1, 0, 0, 0, 3, 1, 0, 9];
        assert_eq!(decode_idx_labels(&lab).unwrap(), vec![1, 0, 9]);
        assert!(decode_idx_labels(&lab[..10]).is_err());
    }

    #[test]
    fn pgm_bytes() {
        let raster = |v: f64| encode_pgm(&[v; 4], 2, 2, None).unwrap()[11..].to_vec();
        assert_eq!(raster(0.0), vec![0; 4]);
        assert_eq!(raster(1.0), vec![255; 4]);
        assert_eq!(raster(0.5), vec![128; 4]);
        assert_eq!(&encode_pgm(&[0.0; 4], 2, 2, None).unwrap()[..11], b"P5\n2 2\n255\n");

        let base = Heatmap::new(1, 1, vec![1.0]).unwrap();
        let ppm = encode_pgm(&[1.0], 1, 1, Some(&base)).unwrap();
        assert_eq!(&ppm[..11], b"P6\n1 1\n255\n");
        assert_eq!(&ppm[11..], &[255, 128, 128]);
    }
}
