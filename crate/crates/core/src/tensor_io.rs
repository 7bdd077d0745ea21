//! File formats: the `EFT1` tensor container, binary PPM images and the
//! plain-text keypoint format.
//!
//! Tensor container layout (all integers little-endian):
//!
//! | field   | size         | notes                                  |
//! |---------|--------------|----------------------------------------|
//! | magic   | 4            | `EFT1` (omitted inside protocol frames)|
//! | version | u16          | currently 1                            |
//! | dtype   | u8           | 1 = f32, 2 = u8, 3 = u32               |
//! | ndim    | u8           |                                        |
//! | dims    | ndim × u32   |                                        |
//! | payload | prod(dims) × dtype size | row-major                   |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    CorrespondenceMap, DepthMap, EmbeddingVector, FeatureMap, FlowMap, KeypointSet, ObjectMask, RgbImage,
};

pub const TENSOR_MAGIC: [u8; 4] = *b"EFT1";
pub const TENSOR_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 1,
    U8 = 2,
    U32 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 | DType::U32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::F32),
            2 => Ok(DType::U8),
            3 => Ok(DType::U32),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U32(Vec<u32>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
            TensorData::U32(_) => DType::U32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded tensor: shape plus typed row-major values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: TensorData,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: TensorData) -> Result<Self> {
        let expected: usize = dims.iter().map(|d| *d as usize).product();
        if dims.len() > u8::MAX as usize {
            return Err(Error::Parse(format!("too many dimensions: {}", dims.len())));
        }
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: expected,
            });
        }
        Ok(Self { dims, data })
    }

    /// Encodes without the magic, as embedded in protocol frames.
    pub fn encode_body(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
        out.push(self.data.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = TENSOR_MAGIC.to_vec();
        self.encode_body(&mut out);
        out
    }

    /// Decodes one tensor body from the front of `buf`, returning it and
    /// the number of bytes consumed.
    pub fn decode_body(buf: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader::new(buf);
        let version = r.u16()?;
        if version != TENSOR_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dtype = DType::from_code(r.u8()?)?;
        let ndim = r.u8()? as usize;
        let dims = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let count = dims
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
            .ok_or_else(|| Error::Parse("tensor size overflows".into()))?;
        let bytes = count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::Parse("tensor size overflows".into()))?;
        let payload = r.take(bytes)?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::U8 => TensorData::U8(payload.to_vec()),
            DType::U32 => TensorData::U32(
                payload
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok((Self { dims, data }, r.pos))
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::TruncatedPayload {
                expected: 4,
                found: buf.len(),
            });
        }
        let magic: [u8; 4] = buf[..4].try_into().unwrap();
        if magic != TENSOR_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let (tensor, used) = Self::decode_body(&buf[4..])?;
        if 4 + used != buf.len() {
            return Err(Error::Parse(format!(
                "{} trailing bytes after payload",
                buf.len() - 4 - used
            )));
        }
        Ok(tensor)
    }

    fn expect_dims(&self, what: &str, ndim: usize) -> Result<Vec<usize>> {
        if self.dims.len() != ndim {
            return Err(Error::Parse(format!(
                "{what}: expected {ndim} dims, found {}",
                self.dims.len()
            )));
        }
        Ok(self.dims.iter().map(|d| *d as usize).collect())
    }

    fn f32s(self, what: &str) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(Error::Parse(format!(
                "{what}: expected f32 data, found {:?}",
                other.dtype()
            ))),
        }
    }

    fn u8s(self, what: &str) -> Result<Vec<u8>> {
        match self.data {
            TensorData::U8(v) => Ok(v),
            other => Err(Error::Parse(format!(
                "{what}: expected u8 data, found {:?}",
                other.dtype()
            ))),
        }
    }
}

/// Bounds-checked little-endian cursor.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::TruncatedPayload {
                expected: n,
                found: self.buf.len() - self.pos,
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn tensor(&mut self) -> Result<Tensor> {
        let (t, used) = Tensor::decode_body(&self.buf[self.pos..])?;
        self.pos += used;
        Ok(t)
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    fs::write(path, tensor.to_bytes())?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?)
}

impl From<&FeatureMap> for Tensor {
    fn from(f: &FeatureMap) -> Self {
        Tensor {
            dims: vec![f.height() as u32, f.width() as u32, f.channels() as u32],
            data: TensorData::F32(f.data().to_vec()),
        }
    }
}

impl TryFrom<Tensor> for FeatureMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let d = t.expect_dims("feature map", 3)?;
        FeatureMap::new(d[0], d[1], d[2], t.f32s("feature map")?)
    }
}

impl From<&ObjectMask> for Tensor {
    fn from(m: &ObjectMask) -> Self {
        Tensor {
            dims: vec![m.height() as u32, m.width() as u32],
            data: TensorData::U8(m.bits().iter().map(|b| *b as u8).collect()),
        }
    }
}

/// Any non-zero byte counts as set.
impl TryFrom<Tensor> for ObjectMask {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let d = t.expect_dims("mask", 2)?;
        let bits = t.u8s("mask")?.into_iter().map(|b| b != 0).collect();
        ObjectMask::new(d[0], d[1], bits)
    }
}

impl From<&CorrespondenceMap> for Tensor {
    fn from(c: &CorrespondenceMap) -> Self {
        Tensor {
            dims: vec![c.height() as u32, c.width() as u32],
            data: TensorData::U32(c.to_raw()),
        }
    }
}

impl TryFrom<Tensor> for CorrespondenceMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let d = t.expect_dims("correspondence", 2)?;
        match t.data {
            TensorData::U32(raw) => CorrespondenceMap::from_raw(d[0], d[1], &raw),
            other => Err(Error::Parse(format!(
                "correspondence: expected u32 data, found {:?}",
                other.dtype()
            ))),
        }
    }
}

impl From<&DepthMap> for Tensor {
    fn from(d: &DepthMap) -> Self {
        let (h, w) = d.dims();
        Tensor {
            dims: vec![h as u32, w as u32],
            data: TensorData::F32(d.values().to_vec()),
        }
    }
}

impl TryFrom<Tensor> for DepthMap {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let d = t.expect_dims("depth map", 2)?;
        DepthMap::new(d[0], d[1], t.f32s("depth map")?)
    }
}

impl From<&EmbeddingVector> for Tensor {
    fn from(e: &EmbeddingVector) -> Self {
        Tensor {
            dims: vec![e.values().len() as u32],
            data: TensorData::F32(e.values().to_vec()),
        }
    }
}

impl TryFrom<Tensor> for EmbeddingVector {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        t.expect_dims("embedding", 1)?;
        EmbeddingVector::new(t.f32s("embedding")?)
    }
}

impl From<&RgbImage> for Tensor {
    fn from(img: &RgbImage) -> Self {
        Tensor {
            dims: vec![img.height() as u32, img.width() as u32, 3],
            data: TensorData::U8(img.data().to_vec()),
        }
    }
}

impl TryFrom<Tensor> for RgbImage {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        let d = t.expect_dims("image", 3)?;
        if d[2] != 3 {
            return Err(Error::Parse(format!("image: expected 3 channels, found {}", d[2])));
        }
        RgbImage::new(d[0], d[1], t.u8s("image")?)
    }
}

/// Splits a flow map into its `h x w x 2` f32 displacement tensor and its
/// `h x w` u8 validity tensor.
pub fn flow_to_tensors(flow: &FlowMap) -> (Tensor, Tensor) {
    let (h, w) = (flow.height() as u32, flow.width() as u32);
    let disp = Tensor {
        dims: vec![h, w, 2],
        data: TensorData::F32(flow.displacement().iter().flatten().copied().collect()),
    };
    let valid = Tensor {
        dims: vec![h, w],
        data: TensorData::U8(flow.validity().iter().map(|v| *v as u8).collect()),
    };
    (disp, valid)
}

/// Assembles a flow map. Without a validity tensor every pixel is valid.
pub fn flow_from_tensors(disp: Tensor, validity: Option<Tensor>) -> Result<FlowMap> {
    let d = disp.expect_dims("flow", 3)?;
    if d[2] != 2 {
        return Err(Error::Parse(format!("flow: last dim must be 2, found {}", d[2])));
    }
    let (h, w) = (d[0], d[1]);
    let displacement: Vec<[f32; 2]> = disp.f32s("flow")?.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let validity = match validity {
        Some(v) => {
            let vd = v.expect_dims("flow validity", 2)?;
            if (vd[0], vd[1]) != (h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "flow validity {}x{} vs flow {h}x{w}",
                    vd[0], vd[1]
                )));
            }
            v.u8s("flow validity")?.into_iter().map(|b| b != 0).collect()
        }
        None => vec![true; h * w],
    };
    FlowMap::new(h, w, displacement, validity)
}

pub fn write_flow(flow_path: impl AsRef<Path>, validity_path: impl AsRef<Path>, flow: &FlowMap) -> Result<()> {
    let (d, v) = flow_to_tensors(flow);
    write_tensor(flow_path, &d)?;
    write_tensor(validity_path, &v)
}

pub fn read_flow(flow_path: impl AsRef<Path>, validity_path: Option<&Path>) -> Result<FlowMap> {
    let disp = read_tensor(flow_path)?;
    let valid = validity_path.map(read_tensor).transpose()?;
    flow_from_tensors(disp, valid)
}

/// Parses the keypoint text format: a `scale <s>` header line followed by
/// one `x y v kappa` line per keypoint. `#` starts a comment line.
pub fn parse_keypoints(text: &str) -> Result<KeypointSet> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("keypoints: missing 'scale' header".into()))?;
    let scale = match header.split_whitespace().collect::<Vec<_>>().as_slice() {
        ["scale", s] => parse_f64(s)?,
        _ => return Err(Error::Parse(format!("keypoints: bad header {header:?}"))),
    };
    let (mut points, mut vis, mut kappas) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        let [x, y, v, k] = f.as_slice() else {
            return Err(Error::Parse(format!(
                "keypoints line {}: expected 'x y v kappa'",
                n + 1
            )));
        };
        points.push([parse_f64(x)?, parse_f64(y)?]);
        vis.push(
            v.parse::<u8>()
                .map_err(|_| Error::Parse(format!("keypoints line {}: bad visibility {v:?}", n + 1)))?,
        );
        kappas.push(parse_f64(k)?);
    }
    KeypointSet::new(points, vis, scale, kappas)
}

pub fn format_keypoints(k: &KeypointSet) -> String {
    let mut s = format!("scale {:?}\n", k.scale());
    for i in 0..k.len() {
        let [x, y] = k.points()[i];
        s.push_str(&format!("{x:?} {y:?} {} {:?}\n", k.visibility()[i], k.kappas()[i]));
    }
    s
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<KeypointSet> {
    parse_keypoints(&fs::read_to_string(path)?)
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Parse(format!("expected number, got {s:?}")))
}

/// Binary PPM (`P6`, maxval 255).
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

pub fn decode_ppm(buf: &[u8]) -> Result<RgbImage> {
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // comments allowed, then exactly one whitespace byte before the raster.
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("ppm: truncated header".into()));
        }
        tokens.push(String::from_utf8_lossy(&buf[start..pos]).into_owned());
    }
    if tokens[0] != "P6" {
        return Err(Error::Parse(format!("ppm: expected P6, found {:?}", tokens[0])));
    }
    let num = |s: &str| -> Result<usize> { s.parse().map_err(|_| Error::Parse(format!("ppm: bad number {s:?}"))) };
    let (w, h, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::Parse(format!("ppm: only maxval 255 supported, found {maxval}")));
    }
    pos += 1;
    let need = w * h * 3;
    let raster = buf.get(pos..).unwrap_or(&[]);
    if raster.len() < need {
        return Err(Error::TruncatedPayload {
            expected: need,
            found: raster.len(),
        });
    }
    RgbImage::new(h, w, raster[..need].to_vec())
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

/// Reads an RGB image from either a PPM file or a `h x w x 3` u8 tensor file.
pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let buf = fs::read(path)?;
    if buf.starts_with(&TENSOR_MAGIC) {
        RgbImage::try_from(Tensor::from_bytes(&buf)?)
    } else {
        decode_ppm(&buf)
    }
}

/// Colors each matched target pixel with its matched reference pixel's
/// color; unmatched pixels are black.
pub fn render_correspondence(corr: &CorrespondenceMap, ref_colors: &RgbImage) -> Result<RgbImage> {
    corr.check_indices(ref_colors.height() * ref_colors.width())?;
    let mut out = RgbImage::black(corr.height(), corr.width());
    for (q, entry) in corr.entries().iter().enumerate() {
        if let Some(p) = entry {
            out.set_pixel(q, ref_colors.pixel(*p as usize));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_map() -> FeatureMap {
        let data = (0..8 * 8 * 4).map(|i| (i as f32 * 0.731).sin() * 1e3).collect();
        FeatureMap::new(8, 8, 4, data).unwrap()
    }

    #[test]
    fn feature_map_roundtrip_bit_exact() {
        let f = sample_map();
        let bytes = Tensor::from(&f).to_bytes();
        assert_eq!(&bytes[..4], b"EFT1");
        assert_eq!(bytes.len(), 4 + 2 + 1 + 1 + 12 + 8 * 8 * 4 * 4);
        let back = FeatureMap::try_from(Tensor::from_bytes(&bytes).unwrap()).unwrap();
        let bits = |m: &FeatureMap| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&f));
        assert_eq!(back.dims(), f.dims());
    }

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2], TensorData::U8(vec![7, 9])).unwrap();
        assert_eq!(
            t.to_bytes(),
            b"EFT1\x01\x00\x02\x02\x01\x00\x00\x00\x02\x00\x00\x00\x07\x09"
        );
    }

    #[test]
    fn bad_magic() {
        let mut bytes = Tensor::from(&sample_map()).to_bytes();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn truncated_payload() {
        let bytes = Tensor::from(&sample_map()).to_bytes();
        assert!(matches!(
            Tensor::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn unsupported_dtype() {
        let mut bytes = Tensor::new(vec![1], TensorData::U8(vec![1])).unwrap().to_bytes();
        bytes[6] = 9;
        assert!(matches!(Tensor::from_bytes(&bytes), Err(Error::UnsupportedDtype(9))));
    }

    #[test]
    fn keypoint_parsing() {
        let k = parse_keypoints("scale 1.0\n0 0 2 0.5").unwrap();
        assert_eq!(k.len(), 1);
        assert_eq!(k.points()[0], [0.0, 0.0]);
        assert_eq!(k.visibility()[0], 2);
        assert!(matches!(parse_keypoints("scale -1"), Err(Error::InvariantViolation(_))));
        assert!(matches!(parse_keypoints("scale 1\n0 0 2"), Err(Error::Parse(_))));
        assert!(matches!(parse_keypoints(""), Err(Error::Parse(_))));
        assert_eq!(parse_keypoints(&format_keypoints(&k)).unwrap(), k);
    }

    #[test]
    fn flow_requires_three_dims() {
        let t = Tensor::new(vec![2, 2], TensorData::F32(vec![0.0; 4])).unwrap();
        assert!(matches!(flow_from_tensors(t, None), Err(Error::Parse(_))));
    }

    #[test]
    fn flow_roundtrip() {
        let flow = FlowMap::new(1, 2, vec![[1.5, -2.0], [0.0, 0.0]], vec![true, false]).unwrap();
        let (d, v) = flow_to_tensors(&flow);
        let d = Tensor::from_bytes(&d.to_bytes()).unwrap();
        let v = Tensor::from_bytes(&v.to_bytes()).unwrap();
        assert_eq!(flow_from_tensors(d, Some(v)).unwrap(), flow);
    }

    #[test]
    fn ppm_roundtrip_and_length() {
        let img = RgbImage::new(2, 3, (0..18).collect()).unwrap();
        let bytes = encode_ppm(&img);
        assert_eq!(bytes.len(), "P6\n3 2\n255\n".len() + 18);
        assert_eq!(decode_ppm(&bytes).unwrap(), img);
        let with_comment = b"P6 # made by hand\n3 2\n255\n"
            .iter()
            .chain(img.data())
            .copied()
            .collect::<Vec<_>>();
        assert_eq!(decode_ppm(&with_comment).unwrap(), img);
        assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn render_examples() {
        let img = RgbImage::new(2, 2, (10..22).collect()).unwrap();
        let id = CorrespondenceMap::identity(2, 2);
        assert_eq!(render_correspondence(&id, &img).unwrap(), img);
        let none = CorrespondenceMap::new(2, 2, vec![None; 4]).unwrap();
        assert_eq!(render_correspondence(&none, &img).unwrap(), RgbImage::black(2, 2));
        let zero = CorrespondenceMap::new(2, 2, vec![Some(0); 4]).unwrap();
        let out = render_correspondence(&zero, &img).unwrap();
        assert!((0..4).all(|q| out.pixel(q) == [10, 11, 12]));
        let bad = CorrespondenceMap::new(1, 1, vec![Some(4)]).unwrap();
        assert!(matches!(
            render_correspondence(&bad, &img),
            Err(Error::IndexOutOfRange { .. })
        ));
    }
}
