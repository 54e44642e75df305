//! JSON input formats, 17-significant-digit float output and CSV rows.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::metric::FiniteMetricSpace;

/// Shortest exact-enough decimal form: 17 significant digits, `0` for zero,
/// `inf`/`-inf`/`nan` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

/// Serde adapter storing non-finite floats as the strings `inf`, `-inf`,
/// `nan` so they survive a round trip through JSON.
pub mod ext_f64 {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_str(&super::fmt_f64(*x))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("not a float: {other}"))),
            },
        }
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct Digits17<F>(F);

macro_rules! forward {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            w.write_all(fmt_f64(value).as_bytes())
        } else {
            w.write_all(b"null")
        }
    }

    forward! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Serialize with 17-digit floats; `pretty` indents with two spaces.
pub fn to_json<T: Serialize + ?Sized>(value: &T, pretty: bool) -> Result<String> {
    let mut buf = Vec::new();
    if pretty {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(PrettyFormatter::new()));
        value.serialize(&mut ser)?;
    } else {
        let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(CompactFormatter));
        value.serialize(&mut ser)?;
    }
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("JSON is UTF-8"))
}

/// Parse JSON, turning syntax errors into messages with line and column.
pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        Error::Input(format!(
            "{what}: {e} (line {}, column {})",
            e.line(),
            e.column()
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Matrix,
    Euclidean,
    Grushin,
}

/// Space file: point ids plus either a distance matrix or coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpaceInput {
    pub points: Vec<Value>,
    #[serde(default)]
    pub coords: Option<Vec<Vec<f64>>>,
    pub metric: MetricKind,
    /// Lower-triangular rows (with or without the diagonal), a full square
    /// matrix, or a flat strictly-lower list of length `n (n - 1) / 2`.
    #[serde(default)]
    pub matrix: Option<Value>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Grid resolution for the Grushin oracle.
    #[serde(default)]
    pub nx: Option<usize>,
}

/// Point ids as strings (numbers are printed without quotes).
pub fn point_labels(points: &[Value]) -> Result<Vec<String>> {
    let labels: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            _ => Err(Error::Input(format!("points[{i}]: id must be a string or number"))),
        })
        .collect::<Result<_>>()?;
    let mut sorted = labels.clone();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Input(format!("points: duplicate id {}", w[0])));
    }
    Ok(labels)
}

fn number(v: &Value, field: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::Input(format!("{field}: expected a number, found {v}")))
}

/// Expand the accepted matrix layouts into a full row-major matrix.
pub fn expand_matrix(value: &Value, n: usize) -> Result<Vec<f64>> {
    let rows = value
        .as_array()
        .ok_or_else(|| Error::Input("matrix: expected an array".into()))?;
    let mut full = vec![0.0; n * n];
    fn set(full: &mut [f64], n: usize, i: usize, j: usize, d: f64) {
        full[i * n + j] = d;
        full[j * n + i] = d;
    }
    if rows.iter().all(Value::is_number) {
        if rows.len() != n * n.saturating_sub(1) / 2 {
            return Err(Error::Input(format!(
                "matrix: flat list has {} entries, expected {}",
                rows.len(),
                n * n.saturating_sub(1) / 2
            )));
        }
        let mut k = 0;
        for i in 0..n {
            for j in 0..i {
                set(&mut full, n, i, j, number(&rows[k], &format!("matrix[{k}]"))?);
                k += 1;
            }
        }
        return Ok(full);
    }
    if rows.len() != n {
        return Err(Error::Input(format!("matrix: {} rows for {n} points", rows.len())));
    }
    let square = rows.iter().all(|r| r.as_array().map_or(false, |r| r.len() == n));
    for (i, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Input(format!("matrix[{i}]: expected an array")))?;
        let width = if square { n } else { row.len() };
        if !square && width != i && width != i + 1 {
            return Err(Error::Input(format!(
                "matrix[{i}]: lower-triangular row must have {i} or {} entries, found {}",
                i + 1,
                row.len()
            )));
        }
        for (j, v) in row.iter().enumerate().take(width) {
            let d = number(v, &format!("matrix[{i}][{j}]"))?;
            if square {
                full[i * n + j] = d;
            } else if j < i {
                set(&mut full, n, i, j, d);
            } else if d != 0.0 {
                return Err(Error::NonzeroDiagonal(i.to_string()));
            }
        }
    }
    Ok(full)
}

impl SpaceInput {
    /// Build the space for `matrix` and `euclidean` inputs; Grushin inputs
    /// need the grid oracle and are built by the pipeline.
    pub fn build(&self) -> Result<FiniteMetricSpace> {
        let labels = point_labels(&self.points)?;
        let n = labels.len();
        match self.metric {
            MetricKind::Matrix => {
                let m = self
                    .matrix
                    .as_ref()
                    .ok_or_else(|| Error::Input("matrix: required for metric \"matrix\"".into()))?;
                FiniteMetricSpace::from_matrix(labels, expand_matrix(m, n)?, self.weights.clone())
            }
            MetricKind::Euclidean => {
                let coords = self.checked_coords()?;
                FiniteMetricSpace::from_fn(labels, self.weights.clone(), |i, j| {
                    crate::metric::euclid(&coords[i], &coords[j])
                })
            }
            MetricKind::Grushin => Err(Error::Input(
                "metric \"grushin\" is built through the Grushin oracle".into(),
            )),
        }
    }

    pub fn checked_coords(&self) -> Result<&Vec<Vec<f64>>> {
        let coords = self
            .coords
            .as_ref()
            .ok_or_else(|| Error::Input("coords: required for this metric".into()))?;
        if coords.len() != self.points.len() {
            return Err(Error::Input(format!(
                "coords: {} rows for {} points",
                coords.len(),
                self.points.len()
            )));
        }
        let dim = coords.first().map_or(0, Vec::len);
        if let Some(i) = coords.iter().position(|c| c.len() != dim) {
            return Err(Error::Input(format!("coords[{i}]: expected {dim} entries")));
        }
        Ok(coords)
    }
}

/// The closed set `Y`: explicit ids or the Grushin axis predicate, with an
/// optional embedding of its points.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct YInput {
    #[serde(default)]
    pub points: Option<Vec<Value>>,
    /// `"axis"` selects the points with `x = 0` of a Grushin input.
    #[serde(default)]
    pub predicate: Option<String>,
    /// `embedding[k]` is the image of `points[k]`.
    #[serde(default)]
    pub embedding: Option<Vec<Vec<f64>>>,
}

impl YInput {
    /// Accepts a bare id list as shorthand for `{"points": [...]}`.
    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = from_json(text, "Y file")?;
        if v.is_array() {
            return Ok(YInput {
                points: Some(v.as_array().unwrap().clone()),
                ..Default::default()
            });
        }
        from_json(text, "Y file")
    }

    /// Resolve ids to point indices of `space`.
    pub fn resolve(&self, space: &FiniteMetricSpace) -> Result<Vec<usize>> {
        let ids = self
            .points
            .as_ref()
            .ok_or_else(|| Error::Input("Y: expected \"points\" or a predicate".into()))?;
        point_labels(ids)?
            .iter()
            .map(|l| space.index_of(l).ok_or_else(|| Error::UnknownPoint(l.clone())))
            .collect()
    }
}

/// User-supplied local embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PatchInput {
    /// Every patch is the restriction of the input coordinates.
    Identity,
    /// One entry per Whitney cube index.
    Explicit { patches: Vec<PatchEntry> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatchEntry {
    pub cube: usize,
    pub points: Vec<Value>,
    pub values: Vec<Vec<f64>>,
}

/// One CSV line: label followed by 17-digit values.
pub fn csv_row(label: &str, values: impl IntoIterator<Item = f64>) -> String {
    let mut line = csv_field(label);
    for v in values {
        line.push(',');
        line.push_str(&fmt_f64(v));
    }
    line
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.0), "0");
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let x = std::f64::consts::PI;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        let json = to_json(&vec![1.5, 0.0], false).unwrap();
        assert_eq!(json, "[1.5000000000000000e0,0]\n");
    }

    #[test]
    fn matrix_layouts() {
        let flat = serde_json::json!([1.0, 2.0, 1.0]);
        let lower = serde_json::json!([[], [1.0], [2.0, 1.0]]);
        let with_diag = serde_json::json!([[0.0], [1.0, 0.0], [2.0, 1.0, 0.0]]);
        let square = serde_json::json!([[0, 1, 2], [1, 0, 1], [2, 1, 0]]);
        let expect = vec![0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0];
        for m in [flat, lower, with_diag, square] {
            assert_eq!(expand_matrix(&m, 3).unwrap(), expect);
        }
        assert!(expand_matrix(&serde_json::json!([1.0]), 3).is_err());
    }

    #[test]
    fn space_input_errors_name_the_field() {
        let text = r#"{"points": ["a", "b"], "metric": "matrix", "matrix": [[], ["x"]]}"#;
        let input: SpaceInput = from_json(text, "space").unwrap();
        let err = input.build().unwrap_err().to_string();
        assert!(err.contains("matrix[1][0]"), "{err}");
        let bad = from_json::<SpaceInput>("{\n \"points\": [1,\n", "space").unwrap_err();
        assert!(bad.to_string().contains("line"), "{bad}");
    }

    #[test]
    fn y_shorthand_and_patches() {
        let y = YInput::parse("[0, 1]").unwrap();
        assert_eq!(y.points.unwrap().len(), 2);
        let p: PatchInput = from_json(r#"{"kind": "identity"}"#, "patches").unwrap();
        assert!(matches!(p, PatchInput::Identity));
    }

    #[test]
    fn ext_float_round_trip() {
        #[derive(Serialize, Deserialize)]
        struct W {
            #[serde(with = "ext_f64")]
            x: f64,
        }
        let s = serde_json::to_string(&W { x: f64::INFINITY }).unwrap();
        assert_eq!(s, r#"{"x":"inf"}"#);
        assert!(serde_json::from_str::<W>(&s).unwrap().x.is_infinite());
        assert_eq!(serde_json::from_str::<W>(r#"{"x":2.5}"#).unwrap().x, 2.5);
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_row("a,b", [1.0, 0.0]), "\"a,b\",1.0000000000000000e0,0");
    }
}
