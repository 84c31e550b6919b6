//! JSON output with fixed float formatting.
//!
//! Every finite `f64` is written with 17 significant digits (`{:.16e}`), so
//! identical inputs give byte-identical files. JSON has no infinity; fields
//! that may hold one use [`ext_f64`] and are written as the strings
//! `"Infinity"`, `"-Infinity"` or `"NaN"`.

use std::io;

use serde::{Serialize, Serializer};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::Result;
use crate::solver::ModulusResult;

/// Pretty printing with `{:.16e}` floats.
#[derive(Default)]
pub struct FixedFormatter<'a> {
    inner: PrettyFormatter<'a>,
}

impl Formatter for FixedFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.inner.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.inner.end_object_value(writer)
    }
}

pub fn write_json<W: io::Write, T: Serialize + ?Sized>(writer: W, value: &T) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(writer, FixedFormatter::default());
    value.serialize(&mut ser)?;
    Ok(())
}

/// The document [`write_json`] would write, followed by a newline.
pub fn to_json(value: &(impl Serialize + ?Sized)) -> Result<String> {
    let mut out = Vec::new();
    write_json(&mut out, value)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Serializes a float that may be infinite.
pub fn ext_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("NaN")
    } else if *v > 0.0 {
        s.serialize_str("Infinity")
    } else {
        s.serialize_str("-Infinity")
    }
}

pub fn ext_f64_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    struct Ext(f64);
    impl Serialize for Ext {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            ext_f64(&self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Ext(*x))?;
    }
    seq.end()
}

/// The scalar part of a [`ModulusResult`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModulusSummary {
    pub p: f64,
    #[serde(serialize_with = "ext_f64")]
    pub value: f64,
    #[serde(serialize_with = "ext_f64")]
    pub lower_bound: f64,
    #[serde(serialize_with = "ext_f64")]
    pub min_path_rho_length: f64,
    pub outer_iters: usize,
    pub active_paths: usize,
    pub converged: bool,
}

impl ModulusSummary {
    pub fn new(p: f64, r: &ModulusResult) -> Self {
        ModulusSummary {
            p,
            value: r.value,
            lower_bound: r.lower_bound,
            min_path_rho_length: r.min_path_rho_length,
            outer_iters: r.outer_iters,
            active_paths: r.active_paths.len(),
            converged: r.converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Sample {
        a: f64,
        #[serde(serialize_with = "ext_f64")]
        b: f64,
        #[serde(serialize_with = "ext_f64_vec")]
        c: Vec<f64>,
        n: usize,
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = Sample { a: 0.1, b: f64::INFINITY, c: vec![1.0, f64::NEG_INFINITY, f64::NAN], n: 3 };
        let text = to_json(&s).unwrap();
        assert!(text.contains("\"a\": 1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"b\": \"Infinity\""));
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.contains("\"-Infinity\"") && text.contains("\"NaN\""));
        assert!(text.contains("\"n\": 3"));
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64(), Some(0.1));
    }

    #[test]
    fn round_trip_is_exact() {
        for v in [std::f64::consts::PI, 1e-300, 6.02214076e23, -2.5e-7, 0.0] {
            let text = to_json(&v).unwrap();
            assert_eq!(text.trim().parse::<f64>().unwrap(), v);
        }
    }
}
