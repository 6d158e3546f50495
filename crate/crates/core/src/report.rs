//! Machine-readable run reports.

use std::io;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    /// Passes iff `residual <= tol`; a NaN residual fails.
    pub fn new(name: impl Into<String>, residual: f64, tol: f64) -> Self {
        Self { name: name.into(), residual, tol, pass: residual <= tol }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Versions {
    pub csduality: &'static str,
    pub report_schema: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Self { csduality: env!("CARGO_PKG_VERSION"), report_schema: REPORT_VERSION }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub report_version: u32,
    pub command: Vec<String>,
    pub inputs_digest: String,
    pub versions: Versions,
    pub seed: u64,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
}

impl RunReport {
    /// `inputs` are hashed in order, each length-prefixed.
    pub fn new(command: Vec<String>, inputs: &[&[u8]], seed: u64) -> Self {
        let mut h = Sha256::new();
        for part in inputs {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        Self {
            report_version: REPORT_VERSION,
            command,
            inputs_digest: hex::encode(h.finalize()),
            versions: Versions::default(),
            seed,
            pass: true,
            checks: Vec::new(),
            results: serde_json::Value::Null,
        }
    }

    pub fn push(&mut self, check: Check) {
        self.pass &= check.pass;
        self.checks.push(check);
    }

    pub fn to_json(&self) -> String {
        to_json_17(self)
    }
}

/// Pretty printer that writes every float with 17 significant digits.
struct Fmt17<'a>(PrettyFormatter<'a>);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + io::Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.0.$name(w $(, $arg)*)
        })*
    };
}

impl Formatter for Fmt17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        begin_object_value();
        end_object_value();
    }
}

/// Non-finite floats come out as `null`.
pub fn to_json_17<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fmt17(PrettyFormatter::with_indent(b"  ")));
    value.serialize(&mut ser).expect("report values always serialize");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json writes UTF-8")
}

/// Six significant digits for human tables.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    // the exponent of the rounded value decides the layout
    let sci = format!("{x:.5e}");
    let exp: i32 = sci.rsplit('e').next().and_then(|e| e.parse().ok()).unwrap_or(0);
    if !(-4..6).contains(&exp) {
        return sci;
    }
    let decimals = (5 - exp) as usize;
    format!("{x:.decimals$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_17_digits() {
        let s = to_json_17(&serde_json::json!({"a": 0.1, "b": [1.0, f64::NAN]}));
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("null"));
        let back: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["a"].as_f64().unwrap(), 0.1);
    }

    #[test]
    fn digest_and_pass_flag() {
        let mut a = RunReport::new(vec!["x".into()], &[b"ab", b"c"], 1);
        let b = RunReport::new(vec!["x".into()], &[b"a", b"bc"], 1);
        assert_ne!(a.inputs_digest, b.inputs_digest);
        a.push(Check::new("ok", 1e-12, 1e-10));
        assert!(a.pass);
        a.push(Check::new("nan", f64::NAN, 1.0));
        assert!(!a.pass);
    }

    #[test]
    fn six_digits() {
        assert_eq!(sig6(0.18393972058572117), "0.183940");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(1234.5678), "1234.57");
        assert_eq!(sig6(1.5e-9), "1.50000e-9");
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(0.99999999), "1.00000");
        assert_eq!(sig6(-0.25), "-0.250000");
    }
}
