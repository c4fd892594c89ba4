//! CSV tables written by the experiments.
//!
//! Every row type knows its header and converts to and from a
//! [`csv::StringRecord`]. Floats are written with 17 significant digits so a
//! table read back reproduces the emitted values bit for bit.

use std::io::{Read, Write};
use std::path::Path;

use csv::StringRecord;

use crate::error::{LabError, LabResult};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A row of one of the result tables.
pub trait Row: Sized {
    const TABLE: &'static str;
    const HEADER: &'static [&'static str];

    fn to_record(&self) -> Vec<String>;
    fn from_record(rec: &StringRecord) -> LabResult<Self>;
}

struct Fields<'a> {
    table: &'static str,
    header: &'static [&'static str],
    rec: &'a StringRecord,
    next: usize,
}

impl<'a> Fields<'a> {
    fn new<R: Row>(rec: &'a StringRecord) -> LabResult<Self> {
        if rec.len() != R::HEADER.len() {
            return Err(LabError::Schema {
                table: R::TABLE,
                reason: format!("expected {} fields, found {}", R::HEADER.len(), rec.len()),
            });
        }
        Ok(Self {
            table: R::TABLE,
            header: R::HEADER,
            rec,
            next: 0,
        })
    }

    fn parse<T: std::str::FromStr>(&mut self) -> LabResult<T> {
        let i = self.next;
        self.next += 1;
        let raw = &self.rec[i];
        raw.parse().map_err(|_| LabError::Schema {
            table: self.table,
            reason: format!("column `{}`: cannot parse `{raw}`", self.header[i]),
        })
    }

    fn text(&mut self) -> String {
        let i = self.next;
        self.next += 1;
        self.rec[i].to_owned()
    }
}

macro_rules! float_row {
    ($(#[$meta:meta])* $name:ident, $table:literal, { $($field:ident : $col:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq)]
        pub struct $name {
            $(pub $field: f64),+
        }

        impl Row for $name {
            const TABLE: &'static str = $table;
            const HEADER: &'static [&'static str] = &[$($col),+];

            fn to_record(&self) -> Vec<String> {
                vec![$(fmt_f64(self.$field)),+]
            }

            fn from_record(rec: &StringRecord) -> LabResult<Self> {
                let mut f = Fields::new::<Self>(rec)?;
                Ok(Self { $($field: f.parse()?),+ })
            }
        }
    };
}

float_row!(
    /// Subsampled classical orbit.
    TrajectoryRow, "trajectory", { t: "t", y: "y", ydot: "ydot", energy: "E", beta: "beta" }
);

float_row!(
    /// Energy against the `log^2(2+t)` law.
    GrowthRow, "growth", { t: "t", energy: "E", log2_ratio: "log2_ratio" }
);

float_row!(
    /// First-axis block of the flow matrix, `(q, p)` ordering.
    FlowRow, "flow", {
        t: "t", f11: "F11", f12: "F12", f21: "F21", f22: "F22", opnorm: "opnorm", det: "det"
    }
);

float_row!(
    FlowNormRow, "flow_norm", { t: "T", sup_f: "supF", bound_rhs: "bound_rhs", det_defect: "det_defect" }
);

float_row!(
    /// Distance between the closed-form Gaussian and the grid solution of the quadratic equation.
    AgreementRow, "agreement", { t: "t", l2_distance: "l2_distance", norm_gaussian: "norm_gaussian" }
);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageRow {
    pub n: usize,
    pub t: f64,
    pub sign: i32,
    pub e_before: f64,
    pub e_after: f64,
}

impl Row for PassageRow {
    const TABLE: &'static str = "passages";
    const HEADER: &'static [&'static str] = &["n", "t", "sign", "E_before", "E_after"];

    fn to_record(&self) -> Vec<String> {
        vec![
            self.n.to_string(),
            fmt_f64(self.t),
            self.sign.to_string(),
            fmt_f64(self.e_before),
            fmt_f64(self.e_after),
        ]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            n: f.parse()?,
            t: f.parse()?,
            sign: f.parse()?,
            e_before: f.parse()?,
            e_after: f.parse()?,
        })
    }
}

/// Per-plateau bookkeeping for the increment and passage-time brackets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BracketRow {
    pub n: usize,
    pub e_n: f64,
    pub e_next: f64,
    pub increment: f64,
    pub upper_bound: f64,
    /// `c exp(-sqrt(2 E_{n+1}))` with the fitted `c`.
    pub lower_bound: f64,
    pub ratio: f64,
    pub gap: f64,
    pub gap_lo: f64,
    pub gap_hi: f64,
}

impl Row for BracketRow {
    const TABLE: &'static str = "brackets";
    const HEADER: &'static [&'static str] = &[
        "n",
        "E_n",
        "E_next",
        "increment",
        "upper_bound",
        "lower_bound",
        "ratio",
        "gap",
        "gap_lo",
        "gap_hi",
    ];

    fn to_record(&self) -> Vec<String> {
        let mut v = vec![self.n.to_string()];
        v.extend(
            [
                self.e_n,
                self.e_next,
                self.increment,
                self.upper_bound,
                self.lower_bound,
                self.ratio,
                self.gap,
                self.gap_lo,
                self.gap_hi,
            ]
            .map(fmt_f64),
        );
        v
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            n: f.parse()?,
            e_n: f.parse()?,
            e_next: f.parse()?,
            increment: f.parse()?,
            upper_bound: f.parse()?,
            lower_bound: f.parse()?,
            ratio: f.parse()?,
            gap: f.parse()?,
            gap_lo: f.parse()?,
            gap_hi: f.parse()?,
        })
    }
}

/// Phase-space expectation along the quadratic flow against its classical value.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectationRow {
    pub t: f64,
    pub hbar: f64,
    pub observable: String,
    pub value: f64,
    pub classical_value: f64,
    pub b_remainder: f64,
}

impl Row for ExpectationRow {
    const TABLE: &'static str = "expectations";
    const HEADER: &'static [&'static str] = &["t", "hbar", "observable", "value", "classical_value", "b_remainder"];

    fn to_record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.t),
            fmt_f64(self.hbar),
            self.observable.clone(),
            fmt_f64(self.value),
            fmt_f64(self.classical_value),
            fmt_f64(self.b_remainder),
        ]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            t: f.parse()?,
            hbar: f.parse()?,
            observable: f.text(),
            value: f.parse()?,
            classical_value: f.parse()?,
            b_remainder: f.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRow {
    pub t: f64,
    pub hbar: f64,
    pub r: u32,
    pub err: f64,
    pub norm_full: f64,
    pub norm_quad: f64,
    pub bound_rhs: f64,
}

impl Row for ErrorRow {
    const TABLE: &'static str = "semiclassical_error";
    const HEADER: &'static [&'static str] = &["t", "hbar", "r", "err", "norm_full_r", "norm_quad_r", "bound_rhs"];

    fn to_record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.t),
            fmt_f64(self.hbar),
            self.r.to_string(),
            fmt_f64(self.err),
            fmt_f64(self.norm_full),
            fmt_f64(self.norm_quad),
            fmt_f64(self.bound_rhs),
        ]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            t: f.parse()?,
            hbar: f.parse()?,
            r: f.parse()?,
            err: f.parse()?,
            norm_full: f.parse()?,
            norm_quad: f.parse()?,
            bound_rhs: f.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SobolevRow {
    pub t: f64,
    pub r: u32,
    pub norm: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl Row for SobolevRow {
    const TABLE: &'static str = "sobolev";
    const HEADER: &'static [&'static str] = &["t", "r", "norm_r", "lower_bound", "upper_bound"];

    fn to_record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.t),
            self.r.to_string(),
            fmt_f64(self.norm),
            fmt_f64(self.lower_bound),
            fmt_f64(self.upper_bound),
        ]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            t: f.parse()?,
            r: f.parse()?,
            norm: f.parse()?,
            lower_bound: f.parse()?,
            upper_bound: f.parse()?,
        })
    }
}

/// Grid metadata heading a wave-function checkpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointHeader {
    pub t: f64,
    pub hbar: f64,
    pub l: u32,
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub dt: f64,
}

impl Row for CheckpointHeader {
    const TABLE: &'static str = "checkpoint_header";
    const HEADER: &'static [&'static str] = &["t", "hbar", "l", "N", "x_min", "x_max", "dt"];

    fn to_record(&self) -> Vec<String> {
        vec![
            fmt_f64(self.t),
            fmt_f64(self.hbar),
            self.l.to_string(),
            self.n.to_string(),
            fmt_f64(self.x_min),
            fmt_f64(self.x_max),
            fmt_f64(self.dt),
        ]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            t: f.parse()?,
            hbar: f.parse()?,
            l: f.parse()?,
            n: f.parse()?,
            x_min: f.parse()?,
            x_max: f.parse()?,
            dt: f.parse()?,
        })
    }
}

/// A named fitted constant.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantRow {
    pub name: String,
    pub value: f64,
}

impl Row for ConstantRow {
    const TABLE: &'static str = "constants";
    const HEADER: &'static [&'static str] = &["name", "value"];

    fn to_record(&self) -> Vec<String> {
        vec![self.name.clone(), fmt_f64(self.value)]
    }

    fn from_record(rec: &StringRecord) -> LabResult<Self> {
        let mut f = Fields::new::<Self>(rec)?;
        Ok(Self {
            name: f.text(),
            value: f.parse()?,
        })
    }
}

float_row!(
    /// One grid amplitude of a checkpointed wave function.
    AmplitudeRow, "amplitudes", { x: "x", re: "re", im: "im" }
);

pub fn write_rows<R: Row, W: Write>(w: W, rows: &[R]) -> LabResult<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(R::HEADER)?;
    for row in rows {
        out.write_record(row.to_record())?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows<R: Row, T: Read>(r: T) -> LabResult<Vec<R>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(R::HEADER.iter().copied()) {
        return Err(LabError::Schema {
            table: R::TABLE,
            reason: format!("header `{}` does not match `{}`", header.iter().collect::<Vec<_>>().join(","), R::HEADER.join(",")),
        });
    }
    rdr.records().map(|rec| R::from_record(&rec?)).collect()
}

pub fn to_csv_string<R: Row>(rows: &[R]) -> LabResult<String> {
    let mut buf = Vec::new();
    write_rows(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| LabError::Other(e.to_string()))
}

pub fn from_csv_str<R: Row>(text: &str) -> LabResult<Vec<R>> {
    read_rows(text.as_bytes())
}

pub fn write_table<R: Row>(path: &Path, rows: &[R]) -> LabResult<()> {
    let file = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
    write_rows(std::io::BufWriter::new(file), rows)
}

pub fn read_table<R: Row>(path: &Path) -> LabResult<Vec<R>> {
    let file = std::fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    read_rows(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_mismatch_is_a_schema_error() {
        let err = from_csv_str::<SobolevRow>("t,r,norm\n1,1,1\n").unwrap_err();
        assert!(matches!(err, LabError::Schema { table: "sobolev", .. }), "{err}");
        let err = from_csv_str::<SobolevRow>("t,r,norm_r,lower_bound,upper_bound\n1,x,1,1,1\n").unwrap_err();
        assert!(err.to_string().contains("column `r`"), "{err}");
    }

    #[test]
    fn floats_use_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        let rows = [GrowthRow {
            t: 1.0 / 3.0,
            energy: f64::MIN_POSITIVE,
            log2_ratio: 1e300,
        }];
        let text = to_csv_string(&rows).unwrap();
        assert!(text.starts_with("t,E,log2_ratio\n"));
        assert_eq!(from_csv_str::<GrowthRow>(&text).unwrap(), rows);
    }
}
