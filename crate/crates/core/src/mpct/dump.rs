//! Plain-text dump of a condensed QP for offline solver comparison.
//!
//! ```text
//! mpct-qp 1
//! step <k>
//! dims <d> <p>
//! constant <c>
//! H        followed by d lines of d values
//! f        followed by 1 line of d values
//! G        followed by p lines of d values
//! g        followed by 1 line of p values
//! ```
//! Values are written with 17 significant digits so the round trip is exact.

use std::io::{self, BufRead, Write};

use nalgebra::{DMatrix, DVector};

use super::CondensedQp;

fn write_row<W: Write>(w: &mut W, values: impl Iterator<Item = f64>) -> io::Result<()> {
    let line: Vec<String> = values.map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", line.join(" "))
}

pub fn write_qp_dump<W: Write>(w: &mut W, qp: &CondensedQp) -> io::Result<()> {
    writeln!(w, "mpct-qp 1")?;
    writeln!(w, "step {}", qp.k)?;
    writeln!(w, "dims {} {}", qp.dim(), qp.rows())?;
    writeln!(w, "constant {:.16e}", qp.constant)?;
    writeln!(w, "H")?;
    for r in 0..qp.dim() {
        write_row(w, qp.h.row(r).iter().copied())?;
    }
    writeln!(w, "f")?;
    write_row(w, qp.f.iter().copied())?;
    writeln!(w, "G")?;
    for r in 0..qp.rows() {
        write_row(w, qp.g_mat.row(r).iter().copied())?;
    }
    writeln!(w, "g")?;
    write_row(w, qp.g.iter().copied())
}

/// Raw problem data read back from a dump.
#[derive(Debug, Clone, PartialEq)]
pub struct QpDump {
    pub k: usize,
    pub constant: f64,
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g_mat: DMatrix<f64>,
    pub g: DVector<f64>,
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Cursor {
    lines: Vec<String>,
    pos: usize,
}

impl Cursor {
    fn line(&mut self) -> io::Result<&str> {
        let line = self.lines.get(self.pos).ok_or_else(|| bad("unexpected end of dump"))?;
        self.pos += 1;
        Ok(line)
    }

    fn keyed(&mut self, key: &str) -> io::Result<Vec<String>> {
        let line = self.line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(bad(format!("expected '{key}', got '{line}'")));
        }
        Ok(parts.map(str::to_owned).collect())
    }

    fn values(&mut self, width: usize) -> io::Result<Vec<f64>> {
        let values = self
            .line()?
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|e| bad(e.to_string())))
            .collect::<io::Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(bad(format!("expected {width} values, got {}", values.len())));
        }
        Ok(values)
    }

    fn matrix(&mut self, key: &str, rows: usize, cols: usize) -> io::Result<DMatrix<f64>> {
        self.keyed(key)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.values(cols)?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &data))
    }
}

fn single<T: std::str::FromStr>(fields: &[String]) -> io::Result<T>
where
    T::Err: std::fmt::Display,
{
    fields.first().ok_or_else(|| bad("missing value"))?.parse::<T>().map_err(|e| bad(e.to_string()))
}

pub fn read_qp_dump<R: BufRead>(reader: R) -> io::Result<QpDump> {
    let lines = reader
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .collect::<io::Result<Vec<_>>>()?;
    let mut c = Cursor { lines, pos: 0 };
    if c.keyed("mpct-qp")? != ["1"] {
        return Err(bad("unsupported dump version"));
    }
    let k = single(&c.keyed("step")?)?;
    let dims = c.keyed("dims")?;
    let d: usize = single(&dims)?;
    let p: usize = single(&dims[1..])?;
    let constant = single(&c.keyed("constant")?)?;
    let h = c.matrix("H", d, d)?;
    c.keyed("f")?;
    let f = DVector::from_vec(c.values(d)?);
    let g_mat = c.matrix("G", p, d)?;
    c.keyed("g")?;
    let g = if p == 0 { DVector::zeros(0) } else { DVector::from_vec(c.values(p)?) };
    Ok(QpDump {
        k,
        constant,
        h,
        f,
        g_mat,
        g,
    })
}
