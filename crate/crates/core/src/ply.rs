//! Minimal PLY container: one element of scalar properties, read as columns
//! of `f64`.
//!
//! Reading accepts `ascii`, `binary_little_endian` and `binary_big_endian`
//! payloads; only the first element is decoded and it must not contain list
//! properties. Writing always produces `binary_little_endian`.

use std::io::Write;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarType {
    Char,
    UChar,
    Short,
    UShort,
    Int,
    UInt,
    Float,
    Double,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::Char,
            "uchar" | "uint8" => Self::UChar,
            "short" | "int16" => Self::Short,
            "ushort" | "uint16" => Self::UShort,
            "int" | "int32" => Self::Int,
            "uint" | "uint32" => Self::UInt,
            "float" | "float32" => Self::Float,
            "double" | "float64" => Self::Double,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Char => "char",
            Self::UChar => "uchar",
            Self::Short => "short",
            Self::UShort => "ushort",
            Self::Int => "int",
            Self::UInt => "uint",
            Self::Float => "float",
            Self::Double => "double",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::Char | Self::UChar => 1,
            Self::Short | Self::UShort => 2,
            Self::Int | Self::UInt | Self::Float => 4,
            Self::Double => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let mut raw = [0u8; $n];
                raw.copy_from_slice(&b[..$n]);
                (if little { <$t>::from_le_bytes(raw) } else { <$t>::from_be_bytes(raw) }) as f64
            }};
        }
        match self {
            Self::Char => b[0] as i8 as f64,
            Self::UChar => b[0] as f64,
            Self::Short => num!(i16, 2),
            Self::UShort => num!(u16, 2),
            Self::Int => num!(i32, 4),
            Self::UInt => num!(u32, 4),
            Self::Float => num!(f32, 4),
            Self::Double => num!(f64, 8),
        }
    }

    fn encode(self, v: f64, out: &mut Vec<u8>) {
        match self {
            Self::Char => out.push(v as i8 as u8),
            Self::UChar => out.push(v as u8),
            Self::Short => out.extend_from_slice(&(v as i16).to_le_bytes()),
            Self::UShort => out.extend_from_slice(&(v as u16).to_le_bytes()),
            Self::Int => out.extend_from_slice(&(v as i32).to_le_bytes()),
            Self::UInt => out.extend_from_slice(&(v as u32).to_le_bytes()),
            Self::Float => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Self::Double => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyColumn {
    pub name: String,
    pub ty: ScalarType,
    pub values: Vec<f64>,
}

impl PlyColumn {
    pub fn new(name: impl Into<String>, ty: ScalarType, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            ty,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyData {
    element: String,
    columns: Vec<PlyColumn>,
    comments: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
    BinaryBe,
}

struct ElementHeader {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
    has_list: bool,
}

impl PlyData {
    pub fn new(element: impl Into<String>, columns: Vec<PlyColumn>, comments: Vec<String>) -> Result<Self> {
        if let Some(first) = columns.first() {
            if let Some(bad) = columns.iter().find(|c| c.values.len() != first.values.len()) {
                return Err(Error::invalid_argument(format!(
                    "PLY column '{}' has {} values, expected {}",
                    bad.name,
                    bad.values.len(),
                    first.values.len()
                )));
            }
        }
        Ok(Self {
            element: element.into(),
            columns,
            comments,
        })
    }

    pub fn element_name(&self) -> &str {
        &self.element
    }

    pub fn columns(&self) -> &[PlyColumn] {
        &self.columns
    }

    pub fn comments(&self) -> &[String] {
        &self.comments
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.values.as_slice())
    }

    /// Like [`column`](Self::column) but a missing property is a parse error
    /// naming it.
    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name).ok_or_else(|| {
            Error::parse(
                0,
                format!("PLY element '{}' lacks required property '{name}'", self.element),
            )
        })
    }

    pub fn to_binary_le(&self) -> Result<Vec<u8>> {
        let n = self.len();
        let mut out = Vec::new();
        writeln!(out, "ply")?;
        writeln!(out, "format binary_little_endian 1.0")?;
        for c in &self.comments {
            writeln!(out, "comment {c}")?;
        }
        writeln!(out, "element {} {n}", self.element)?;
        for c in &self.columns {
            writeln!(out, "property {} {}", c.ty.name(), c.name)?;
        }
        writeln!(out, "end_header")?;
        let stride: usize = self.columns.iter().map(|c| c.ty.size()).sum();
        out.reserve(stride * n);
        for i in 0..n {
            for c in &self.columns {
                c.ty.encode(c.values[i], &mut out);
            }
        }
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let mut next_line = || -> Result<(usize, String)> {
            let start = pos;
            let end = bytes[start..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|p| start + p)
                .ok_or_else(|| Error::parse(start, "PLY header is not terminated by end_header"))?;
            pos = end + 1;
            let line = std::str::from_utf8(&bytes[start..end])
                .map_err(|_| Error::parse(start, "PLY header is not valid UTF-8"))?;
            Ok((start, line.trim_end_matches('\r').trim().to_owned()))
        };
        let (_, magic) = next_line()?;
        if magic != "ply" {
            return Err(Error::parse(0, "missing 'ply' magic"));
        }
        let mut format = None;
        let mut comments = Vec::new();
        let mut elements: Vec<ElementHeader> = Vec::new();
        loop {
            let (offset, line) = next_line()?;
            let mut words = line.split_whitespace();
            match words.next() {
                Some("format") => {
                    format = Some(match words.next() {
                        Some("ascii") => Format::Ascii,
                        Some("binary_little_endian") => Format::BinaryLe,
                        Some("binary_big_endian") => Format::BinaryBe,
                        other => {
                            return Err(Error::parse(offset, format!("unknown PLY format {other:?}")))
                        }
                    })
                }
                Some("comment") | Some("obj_info") => {
                    comments.push(line.splitn(2, ' ').nth(1).unwrap_or("").to_owned())
                }
                Some("element") => {
                    let name = words
                        .next()
                        .ok_or_else(|| Error::parse(offset, "element without a name"))?;
                    let count = words
                        .next()
                        .and_then(|c| c.parse().ok())
                        .ok_or_else(|| Error::parse(offset, format!("element '{name}' has no valid count")))?;
                    elements.push(ElementHeader {
                        name: name.to_owned(),
                        count,
                        props: Vec::new(),
                        has_list: false,
                    });
                }
                Some("property") => {
                    let el = elements
                        .last_mut()
                        .ok_or_else(|| Error::parse(offset, "property before any element"))?;
                    let ty = words.next().unwrap_or("");
                    if ty == "list" {
                        el.has_list = true;
                        continue;
                    }
                    let ty = ScalarType::parse(ty)
                        .ok_or_else(|| Error::parse(offset, format!("unknown PLY type '{ty}'")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| Error::parse(offset, "property without a name"))?;
                    el.props.push((name.to_owned(), ty));
                }
                Some("end_header") => break,
                Some(other) => {
                    return Err(Error::parse(offset, format!("unexpected PLY header keyword '{other}'")))
                }
                None => {}
            }
        }
        let format = format.ok_or_else(|| Error::parse(0, "PLY header has no format line"))?;
        let el = elements
            .into_iter()
            .next()
            .ok_or_else(|| Error::parse(pos, "PLY file declares no elements"))?;
        if el.has_list {
            return Err(Error::parse(
                pos,
                format!("list properties in element '{}' are not supported", el.name),
            ));
        }
        let mut columns: Vec<PlyColumn> = el
            .props
            .iter()
            .map(|(n, t)| PlyColumn::new(n.clone(), *t, Vec::with_capacity(el.count)))
            .collect();
        match format {
            Format::Ascii => {
                let text = std::str::from_utf8(&bytes[pos..])
                    .map_err(|_| Error::parse(pos, "ASCII PLY body is not valid UTF-8"))?;
                let mut tokens = text.split_whitespace();
                for row in 0..el.count {
                    for col in columns.iter_mut() {
                        let tok = tokens.next().ok_or_else(|| {
                            Error::parse(bytes.len(), format!("ASCII PLY truncated at row {row}"))
                        })?;
                        let v: f64 = tok.parse().map_err(|_| {
                            Error::parse(pos, format!("bad value '{tok}' for property '{}'", col.name))
                        })?;
                        col.values.push(v);
                    }
                }
            }
            Format::BinaryLe | Format::BinaryBe => {
                let little = format == Format::BinaryLe;
                let stride: usize = el.props.iter().map(|(_, t)| t.size()).sum();
                let needed = stride * el.count;
                if bytes.len() - pos < needed {
                    return Err(Error::parse(
                        bytes.len(),
                        format!(
                            "PLY payload truncated: element '{}' needs {needed} bytes, {} present",
                            el.name,
                            bytes.len() - pos
                        ),
                    ));
                }
                let mut cursor = pos;
                for _ in 0..el.count {
                    for col in columns.iter_mut() {
                        col.values.push(col.ty.decode(&bytes[cursor..], little));
                        cursor += col.ty.size();
                    }
                }
            }
        }
        Ok(Self {
            element: el.name,
            columns,
            comments,
        })
    }
}
