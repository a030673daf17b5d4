//! MAT-File Level 5 reader/writer for the subset the pipeline needs:
//! real 2-D (or higher) numeric matrices, raw or zlib-compressed.
//!
//! Layout recap: a 128-byte header (116 bytes of description text, an
//! 8-byte subsystem offset, a u16 version 0x0100 and a u16 endian
//! indicator), followed by data elements. Each element is a (type, size)
//! tag of two u32s plus a payload padded to 8 bytes; elements of up to 4
//! payload bytes may pack size and type into a single u32 ("small" tag).
//! `miCOMPRESSED` payloads are RFC 1950 zlib streams holding exactly one
//! element and are not padded.

use std::fmt;
use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use thiserror::Error;

pub const HEADER_LEN: usize = 128;
const MAX_NAME: usize = 63;

// element (mi) type ids
const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

// array (mx) class ids
const MX_CELL: u32 = 1;
const MX_STRUCT: u32 = 2;
const MX_OBJECT: u32 = 3;
const MX_CHAR: u32 = 4;
const MX_SPARSE: u32 = 5;

const FLAG_COMPLEX: u32 = 0x0800;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("not a MAT-file: bad version or endian indicator")]
    BadMagic,
    #[error("unsupported element at byte {offset}: {what}")]
    UnsupportedElement { offset: usize, what: String },
    #[error("element at byte {offset} extends past the buffer")]
    Truncated { offset: usize },
    #[error("compressed element at byte {offset} is corrupt: {detail}")]
    ChecksumOrInflate { offset: usize, detail: String },
    #[error("malformed element at byte {offset}: {detail}")]
    Malformed { offset: usize, detail: String },
    #[error("matrix name {0:?} exceeds {MAX_NAME} characters")]
    NameTooLong(String),
    #[error("matrix {0:?} has no dimensions")]
    EmptyDims(String),
    #[error("matrix {name:?} cannot be written: {detail}")]
    BadMatrix { name: String, detail: String },
    #[error("no matrix named {0:?}")]
    NotFound(String),
    #[error("more than one matrix named {0:?}")]
    DuplicateName(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endian {
    Little,
    Big,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NumericClass {
    F64,
    F32,
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
}

impl NumericClass {
    fn from_mx(class: u32) -> Option<Self> {
        match class {
            6 => Some(NumericClass::F64),
            7 => Some(NumericClass::F32),
            8 => Some(NumericClass::I8),
            9 => Some(NumericClass::U8),
            10 => Some(NumericClass::I16),
            11 => Some(NumericClass::U16),
            12 => Some(NumericClass::I32),
            13 => Some(NumericClass::U32),
            _ => None,
        }
    }

    fn mx(self) -> u32 {
        match self {
            NumericClass::F64 => 6,
            NumericClass::F32 => 7,
            NumericClass::I8 => 8,
            NumericClass::U8 => 9,
            NumericClass::I16 => 10,
            NumericClass::U16 => 11,
            NumericClass::I32 => 12,
            NumericClass::U32 => 13,
        }
    }

    /// The element type this class is stored as by [`write_mat`].
    fn mi(self) -> u32 {
        match self {
            NumericClass::F64 => MI_DOUBLE,
            NumericClass::F32 => MI_SINGLE,
            NumericClass::I8 => MI_INT8,
            NumericClass::U8 => MI_UINT8,
            NumericClass::I16 => MI_INT16,
            NumericClass::U16 => MI_UINT16,
            NumericClass::I32 => MI_INT32,
            NumericClass::U32 => MI_UINT32,
        }
    }

    pub fn element_size(self) -> usize {
        match self {
            NumericClass::F64 => 8,
            NumericClass::F32 | NumericClass::I32 | NumericClass::U32 => 4,
            NumericClass::I16 | NumericClass::U16 => 2,
            NumericClass::I8 | NumericClass::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NumericClass::F64 => "f64",
            NumericClass::F32 => "f32",
            NumericClass::I8 => "i8",
            NumericClass::U8 => "u8",
            NumericClass::I16 => "i16",
            NumericClass::U16 => "u16",
            NumericClass::I32 => "i32",
            NumericClass::U32 => "u32",
        }
    }
}

impl fmt::Display for NumericClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One named numeric array; `values` are widened to f64 and kept in the
/// file's column-major order: element `(r, c)` of a `[R, C]` matrix is
/// `values[c * R + r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatMatrix {
    pub name: String,
    pub class: NumericClass,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl MatMatrix {
    pub fn new(
        name: impl Into<String>,
        class: NumericClass,
        dims: Vec<usize>,
        values: Vec<f64>,
    ) -> Self {
        MatMatrix {
            name: name.into(),
            class,
            dims,
            values,
        }
    }

    /// 2-D accessor honoring the column-major contract.
    pub fn get2(&self, row: usize, col: usize) -> f64 {
        assert_eq!(self.dims.len(), 2);
        self.values[col * self.dims[0] + row]
    }

    /// 2-D values rearranged to row-major.
    pub fn to_row_major(&self) -> Vec<f64> {
        assert_eq!(self.dims.len(), 2, "row-major view is for 2-D matrices");
        let (rows, cols) = (self.dims[0], self.dims[1]);
        let mut out = vec![0.0; rows * cols];
        for c in 0..cols {
            for r in 0..rows {
                out[r * cols + c] = self.values[c * rows + r];
            }
        }
        out
    }

    /// Build from row-major data (the crate-internal layout).
    pub fn from_row_major(
        name: impl Into<String>,
        class: NumericClass,
        rows: usize,
        cols: usize,
        row_major: &[f64],
    ) -> Self {
        assert_eq!(row_major.len(), rows * cols);
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                values[c * rows + r] = row_major[r * cols + c];
            }
        }
        MatMatrix::new(name, class, vec![rows, cols], values)
    }
}

#[derive(Clone, Debug)]
pub struct MatFile {
    pub description: String,
    pub version: u16,
    pub endian: Endian,
    pub matrices: Vec<MatMatrix>,
}

impl MatFile {
    /// The unique matrix with this name.
    pub fn matrix(&self, name: &str) -> Result<&MatMatrix, MatError> {
        let mut found = None;
        for m in &self.matrices {
            if m.name == name {
                if found.is_some() {
                    return Err(MatError::DuplicateName(name.to_string()));
                }
                found = Some(m);
            }
        }
        found.ok_or_else(|| MatError::NotFound(name.to_string()))
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Skip cell/struct/char/sparse/complex elements instead of failing.
    pub skip_unsupported: bool,
}

// ---------------------------------------------------------------------------
// reading
// ---------------------------------------------------------------------------

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    /// Offset of this buffer within the file, for error reporting inside
    /// decompressed streams.
    base: usize,
    big: bool,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], base: usize, big: bool) -> Self {
        Reader { buf, pos: 0, base, big }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MatError> {
        if self.remaining() < n {
            return Err(MatError::Truncated { offset: self.offset() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MatError> {
        let b = self.take(4)?;
        Ok(if self.big {
            u32::from_be_bytes([b[0], b[1], b[2], b[3]])
        } else {
            u32::from_le_bytes([b[0], b[1], b[2], b[3]])
        })
    }

    /// Skip padding up to the next 8-byte boundary (clamped to the buffer).
    fn align8(&mut self) {
        let pad = (8 - self.pos % 8) % 8;
        self.pos += pad.min(self.remaining());
    }
}

struct Tag {
    mi_type: u32,
    size: usize,
    /// Small tags pack up to 4 payload bytes into the tag's second word.
    small: bool,
}

fn read_tag(r: &mut Reader) -> Result<Tag, MatError> {
    let offset = r.offset();
    let word = r.u32()?;
    if word >> 16 != 0 {
        let size = (word >> 16) as usize;
        if size > 4 {
            return Err(MatError::Malformed {
                offset,
                detail: format!("small element claims {size} bytes"),
            });
        }
        Ok(Tag {
            mi_type: word & 0xFFFF,
            size,
            small: true,
        })
    } else {
        let size = r.u32()? as usize;
        Ok(Tag {
            mi_type: word,
            size,
            small: false,
        })
    }
}

/// Read one tagged payload, consuming its padding. Small tags always
/// occupy exactly 8 bytes in total.
fn read_element<'a>(r: &mut Reader<'a>) -> Result<(u32, &'a [u8], usize), MatError> {
    let offset = r.offset();
    let tag = read_tag(r)?;
    if tag.small {
        let payload = r.take(4)?;
        Ok((tag.mi_type, &payload[..tag.size], offset))
    } else {
        let payload = r.take(tag.size)?;
        r.align8();
        Ok((tag.mi_type, payload, offset))
    }
}

fn widen(mi_type: u32, payload: &[u8], big: bool, offset: usize) -> Result<Vec<f64>, MatError> {
    let elem = match mi_type {
        MI_INT8 | MI_UINT8 => 1,
        MI_INT16 | MI_UINT16 => 2,
        MI_INT32 | MI_UINT32 | MI_SINGLE => 4,
        MI_DOUBLE => 8,
        other => {
            return Err(MatError::UnsupportedElement {
                offset,
                what: format!("numeric data of element type {other}"),
            })
        }
    };
    if payload.len() % elem != 0 {
        return Err(MatError::Malformed {
            offset,
            detail: format!("payload of {} bytes is not a whole number of elements", payload.len()),
        });
    }
    let read_u16 = |b: &[u8]| if big { u16::from_be_bytes([b[0], b[1]]) } else { u16::from_le_bytes([b[0], b[1]]) };
    let read_u32 = |b: &[u8]| {
        if big {
            u32::from_be_bytes([b[0], b[1], b[2], b[3]])
        } else {
            u32::from_le_bytes([b[0], b[1], b[2], b[3]])
        }
    };
    let read_u64 = |b: &[u8]| {
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        if big {
            u64::from_be_bytes(a)
        } else {
            u64::from_le_bytes(a)
        }
    };
    Ok(payload
        .chunks_exact(elem)
        .map(|c| match mi_type {
            MI_INT8 => c[0] as i8 as f64,
            MI_UINT8 => c[0] as f64,
            MI_INT16 => read_u16(c) as i16 as f64,
            MI_UINT16 => read_u16(c) as f64,
            MI_INT32 => read_u32(c) as i32 as f64,
            MI_UINT32 => read_u32(c) as f64,
            MI_SINGLE => f32::from_bits(read_u32(c)) as f64,
            MI_DOUBLE => f64::from_bits(read_u64(c)),
            _ => unreachable!(),
        })
        .collect())
}

fn class_name(class: u32) -> &'static str {
    match class {
        MX_CELL => "cell array",
        MX_STRUCT => "struct",
        MX_OBJECT => "object",
        MX_CHAR => "char array",
        MX_SPARSE => "sparse matrix",
        _ => "unknown class",
    }
}

/// Parse one miMATRIX payload into a matrix.
fn parse_matrix(payload: &[u8], base: usize, big: bool) -> Result<MatMatrix, MatError> {
    let mut r = Reader::new(payload, base, big);

    let (ty, flags, off) = read_element(&mut r)?;
    if ty != MI_UINT32 || flags.len() != 8 {
        return Err(MatError::Malformed {
            offset: off,
            detail: "array flags subelement malformed".into(),
        });
    }
    let flags_word = if big {
        u32::from_be_bytes([flags[0], flags[1], flags[2], flags[3]])
    } else {
        u32::from_le_bytes([flags[0], flags[1], flags[2], flags[3]])
    };
    let class = flags_word & 0xFF;
    if flags_word & FLAG_COMPLEX != 0 {
        return Err(MatError::UnsupportedElement {
            offset: off,
            what: "complex matrix".into(),
        });
    }
    let Some(numeric) = NumericClass::from_mx(class) else {
        return Err(MatError::UnsupportedElement {
            offset: off,
            what: class_name(class).into(),
        });
    };

    let (ty, dims_raw, off) = read_element(&mut r)?;
    if ty != MI_INT32 || dims_raw.len() % 4 != 0 || dims_raw.is_empty() {
        return Err(MatError::Malformed {
            offset: off,
            detail: "dimensions subelement malformed".into(),
        });
    }
    let mut dims = Vec::with_capacity(dims_raw.len() / 4);
    for c in dims_raw.chunks_exact(4) {
        let d = if big {
            i32::from_be_bytes([c[0], c[1], c[2], c[3]])
        } else {
            i32::from_le_bytes([c[0], c[1], c[2], c[3]])
        };
        if d <= 0 {
            return Err(MatError::UnsupportedElement {
                offset: off,
                what: format!("non-positive dimension {d}"),
            });
        }
        dims.push(d as usize);
    }

    let (ty, name_raw, off) = read_element(&mut r)?;
    if ty != MI_INT8 {
        return Err(MatError::Malformed {
            offset: off,
            detail: "name subelement malformed".into(),
        });
    }
    if name_raw.is_empty() || !name_raw.iter().all(|b| b.is_ascii() && *b != 0) {
        return Err(MatError::UnsupportedElement {
            offset: off,
            what: "empty or non-ASCII matrix name".into(),
        });
    }
    let name = String::from_utf8_lossy(name_raw).into_owned();

    let (ty, data, off) = read_element(&mut r)?;
    let values = widen(ty, data, big, off)?;
    let count: usize = dims.iter().product();
    if values.len() != count {
        return Err(MatError::Malformed {
            offset: off,
            detail: format!("dims {dims:?} need {count} values, data has {}", values.len()),
        });
    }
    Ok(MatMatrix {
        name,
        class: numeric,
        dims,
        values,
    })
}

pub fn parse_mat(bytes: &[u8]) -> Result<MatFile, MatError> {
    parse_mat_with(bytes, ParseOptions::default())
}

pub fn parse_mat_with(bytes: &[u8], opts: ParseOptions) -> Result<MatFile, MatError> {
    if bytes.len() < HEADER_LEN {
        return Err(MatError::Truncated { offset: bytes.len() });
    }
    let endian = match &bytes[126..128] {
        b"IM" => Endian::Little,
        b"MI" => Endian::Big,
        _ => return Err(MatError::BadMagic),
    };
    let big = endian == Endian::Big;
    let version = {
        let b = [bytes[124], bytes[125]];
        if big {
            u16::from_be_bytes(b)
        } else {
            u16::from_le_bytes(b)
        }
    };
    if version != 0x0100 {
        return Err(MatError::BadMagic);
    }
    let description = String::from_utf8_lossy(&bytes[..116])
        .trim_end_matches(['\0', ' '])
        .to_string();

    let mut file = MatFile {
        description,
        version,
        endian,
        matrices: Vec::new(),
    };
    let mut r = Reader::new(bytes, 0, big);
    r.pos = HEADER_LEN;
    let mut inflated = Vec::new();
    while r.remaining() > 0 {
        let offset = r.offset();
        let tag = read_tag(&mut r)?;
        let payload: &[u8] = if tag.small {
            &r.take(4)?[..tag.size]
        } else {
            r.take(tag.size)?
        };
        let result = if tag.mi_type == MI_COMPRESSED {
            inflated.clear();
            let mut decoder = ZlibDecoder::new(payload);
            decoder
                .read_to_end(&mut inflated)
                .map_err(|e| MatError::ChecksumOrInflate {
                    offset,
                    detail: e.to_string(),
                })?;
            let mut inner = Reader::new(&inflated, offset, big);
            let inner_tag = read_tag(&mut inner)?;
            let inner_payload: &[u8] = if inner_tag.small {
                &inner.take(4)?[..inner_tag.size]
            } else {
                inner.take(inner_tag.size)?
            };
            parse_wrapped(inner_tag.mi_type, inner_payload, offset, big)
        } else {
            parse_wrapped(tag.mi_type, payload, offset, big)
        };
        match result {
            Ok(m) => file.matrices.push(m),
            Err(e @ MatError::UnsupportedElement { .. }) if opts.skip_unsupported => {
                let _ = e;
            }
            Err(e) => return Err(e),
        }
        if !tag.small && tag.mi_type != MI_COMPRESSED {
            r.align8();
        }
    }
    Ok(file)
}

fn parse_wrapped(mi_type: u32, payload: &[u8], offset: usize, big: bool) -> Result<MatMatrix, MatError> {
    if mi_type != MI_MATRIX {
        return Err(MatError::UnsupportedElement {
            offset,
            what: format!("top-level element of type {mi_type}"),
        });
    }
    parse_matrix(payload, offset, big)
}

// ---------------------------------------------------------------------------
// writing
// ---------------------------------------------------------------------------

fn pad8(buf: &mut Vec<u8>) {
    while buf.len() % 8 != 0 {
        buf.push(0);
    }
}

fn push_tag(buf: &mut Vec<u8>, mi_type: u32, size: usize) {
    buf.extend_from_slice(&mi_type.to_le_bytes());
    buf.extend_from_slice(&(size as u32).to_le_bytes());
}

fn encode_values(m: &MatMatrix) -> Result<Vec<u8>, MatError> {
    let bad = |detail: String| MatError::BadMatrix {
        name: m.name.clone(),
        detail,
    };
    let check_int = |v: f64, lo: f64, hi: f64| -> Result<f64, MatError> {
        if v.fract() != 0.0 || v < lo || v > hi {
            Err(bad(format!("value {v} does not fit class {}", m.class)))
        } else {
            Ok(v)
        }
    };
    let mut out = Vec::with_capacity(m.values.len() * m.class.element_size());
    for &v in &m.values {
        match m.class {
            NumericClass::F64 => out.extend_from_slice(&v.to_le_bytes()),
            NumericClass::F32 => {
                let f = v as f32;
                if f as f64 != v && !v.is_nan() {
                    return Err(bad(format!("value {v} is not representable as f32")));
                }
                out.extend_from_slice(&f.to_le_bytes());
            }
            NumericClass::I8 => out.push(check_int(v, i8::MIN as f64, i8::MAX as f64)? as i8 as u8),
            NumericClass::U8 => out.push(check_int(v, 0.0, u8::MAX as f64)? as u8),
            NumericClass::I16 => out.extend_from_slice(
                &(check_int(v, i16::MIN as f64, i16::MAX as f64)? as i16).to_le_bytes(),
            ),
            NumericClass::U16 => {
                out.extend_from_slice(&(check_int(v, 0.0, u16::MAX as f64)? as u16).to_le_bytes())
            }
            NumericClass::I32 => out.extend_from_slice(
                &(check_int(v, i32::MIN as f64, i32::MAX as f64)? as i32).to_le_bytes(),
            ),
            NumericClass::U32 => {
                out.extend_from_slice(&(check_int(v, 0.0, u32::MAX as f64)? as u32).to_le_bytes())
            }
        }
    }
    Ok(out)
}

fn build_matrix_element(m: &MatMatrix) -> Result<Vec<u8>, MatError> {
    if m.name.is_empty() || !m.name.is_ascii() {
        return Err(MatError::BadMatrix {
            name: m.name.clone(),
            detail: "name must be non-empty ASCII".into(),
        });
    }
    if m.name.len() > MAX_NAME {
        return Err(MatError::NameTooLong(m.name.clone()));
    }
    if m.dims.is_empty() {
        return Err(MatError::EmptyDims(m.name.clone()));
    }
    let count: usize = m.dims.iter().product();
    if count != m.values.len() || count == 0 {
        return Err(MatError::BadMatrix {
            name: m.name.clone(),
            detail: format!("dims {:?} do not match {} values", m.dims, m.values.len()),
        });
    }

    let mut body = Vec::new();
    // array flags
    push_tag(&mut body, MI_UINT32, 8);
    body.extend_from_slice(&m.class.mx().to_le_bytes());
    body.extend_from_slice(&0u32.to_le_bytes());
    // dimensions
    push_tag(&mut body, MI_INT32, 4 * m.dims.len());
    for &d in &m.dims {
        body.extend_from_slice(&(d as i32).to_le_bytes());
    }
    pad8(&mut body);
    // name: small tag when it fits in 4 bytes
    if m.name.len() <= 4 {
        body.extend_from_slice(&((m.name.len() as u32) << 16 | MI_INT8).to_le_bytes());
        let mut padded = [0u8; 4];
        padded[..m.name.len()].copy_from_slice(m.name.as_bytes());
        body.extend_from_slice(&padded);
    } else {
        push_tag(&mut body, MI_INT8, m.name.len());
        body.extend_from_slice(m.name.as_bytes());
        pad8(&mut body);
    }
    // data
    let data = encode_values(m)?;
    push_tag(&mut body, m.class.mi(), data.len());
    body.extend_from_slice(&data);
    pad8(&mut body);

    let mut element = Vec::with_capacity(body.len() + 8);
    push_tag(&mut element, MI_MATRIX, body.len());
    element.extend_from_slice(&body);
    Ok(element)
}

/// Serialize matrices to a little-endian Level 5 file. With `compress`,
/// every matrix element is wrapped in a zlib stream.
pub fn write_mat(matrices: &[MatMatrix], compress: bool) -> Result<Vec<u8>, MatError> {
    let mut out = Vec::new();
    let description = format!(
        "MATLAB 5.0 MAT-file, written by ssrepl-pipeline {}",
        env!("CARGO_PKG_VERSION")
    );
    let mut header = [b' '; 116];
    let text = description.as_bytes();
    header[..text.len().min(116)].copy_from_slice(&text[..text.len().min(116)]);
    out.extend_from_slice(&header);
    out.extend_from_slice(&[0u8; 8]); // subsystem data offset
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");

    for m in matrices {
        let element = build_matrix_element(m)?;
        if compress {
            let mut encoder = ZlibEncoder::new(Vec::new(), Compression::default());
            encoder
                .write_all(&element)
                .and_then(|_| encoder.finish())
                .map(|compressed| {
                    push_tag(&mut out, MI_COMPRESSED, compressed.len());
                    out.extend_from_slice(&compressed);
                })
                .map_err(|e| MatError::BadMatrix {
                    name: m.name.clone(),
                    detail: format!("compression failed: {e}"),
                })?;
        } else {
            out.extend_from_slice(&element);
        }
    }
    Ok(out)
}
