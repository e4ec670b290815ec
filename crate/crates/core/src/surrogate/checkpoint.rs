//! Plain-text model checkpoints. Values are written with the shortest
//! round-tripping decimal form, so save/load is bit-exact. The header pins a
//! format version; everything after it is "key value..." lines, one parameter
//! per line at the tail.

use std::fmt::Write as _;
use std::path::Path;

use super::{
    Activation, FullyConnectedNet, PiecewiseLinear, RadialBasis, RadialBasisNet, SurrogateModel,
    SymmetricTensor3,
};
use crate::error::{Error, Result};

const HEADER: &str = "invcal-model v1";

pub(super) fn to_text(model: &SurrogateModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER}");
    let _ = writeln!(s, "kind {}", model.kind_name());
    match model {
        SurrogateModel::Net(m) => {
            let _ = writeln!(s, "activation {}", m.activation().name());
            let _ = write!(s, "widths");
            for w in m.widths() {
                let _ = write!(s, " {w}");
            }
            let _ = writeln!(s);
        }
        SurrogateModel::PiecewiseLinear(m) => {
            let (lo, h, n) = m.grid();
            let _ = writeln!(s, "grid {lo} {h} {n} {}", m.output_dim());
        }
        SurrogateModel::RadialBasis(m) => {
            let _ = writeln!(s, "sigma {}", m.sigma());
            let _ = writeln!(s, "out {}", m.output_dim());
            let _ = writeln!(s, "centers {}", m.center_count());
            for c in m.centers() {
                let _ = writeln!(s, "{} {}", c[0], c[1]);
            }
        }
        SurrogateModel::RadialBasisNet(m) => {
            let _ = writeln!(s, "size {} {}", m.center_count(), m.output_dim());
        }
        SurrogateModel::Tensor(_) => {}
    }
    let theta = model.parameter_vector();
    let _ = writeln!(s, "params {}", theta.len());
    for v in &theta {
        let _ = writeln!(s, "{v}");
    }
    s
}

/// Line-addressed cursor over the checkpoint text; every failure carries the
/// 1-based line it happened on.
struct Lines<'a> {
    iter: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            iter: text.lines(),
            line: 0,
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        loop {
            let raw = self.iter.next().ok_or(Error::Parse {
                line: self.line + 1,
                detail: "unexpected end of file".into(),
            })?;
            self.line += 1;
            let t = raw.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            detail: detail.into(),
        }
    }

    /// "tag v0 v1 ..." with an exact field count.
    fn tagged(&mut self, tag: &str, count: usize) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(t) if t == tag => {}
            other => {
                return Err(self.err(format!(
                    "expected '{tag}', found '{}'",
                    other.unwrap_or("")
                )))
            }
        }
        let fields: Vec<&str> = parts.collect();
        if fields.len() != count {
            return Err(self.err(format!(
                "'{tag}' wants {count} fields, found {}",
                fields.len()
            )));
        }
        Ok(fields)
    }

    fn f64(&self, s: &str) -> Result<f64> {
        let v: f64 = s
            .parse()
            .map_err(|_| self.err(format!("bad float '{s}'")))?;
        if !v.is_finite() {
            return Err(self.err(format!("non-finite value '{s}'")));
        }
        Ok(v)
    }

    fn usize(&self, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| self.err(format!("bad count '{s}'")))
    }
}

pub(super) fn from_text(text: &str) -> Result<SurrogateModel> {
    let mut lines = Lines::new(text);
    let header = lines.next()?;
    if header != HEADER {
        return Err(lines.err(format!("unknown header '{header}'")));
    }
    let kind = lines.tagged("kind", 1)?[0];
    let mut model = match kind {
        "net" => {
            let act = lines.tagged("activation", 1)?[0];
            let act = Activation::parse(act).map_err(|e| lines.err(e.to_string()))?;
            let widths_line = lines.next()?;
            let mut parts = widths_line.split_whitespace();
            if parts.next() != Some("widths") {
                return Err(lines.err("expected 'widths'"));
            }
            let widths: Vec<usize> = parts
                .map(|s| lines.usize(s))
                .collect::<Result<_>>()?;
            SurrogateModel::Net(
                FullyConnectedNet::new(&widths, act).map_err(|e| lines.err(e.to_string()))?,
            )
        }
        "pl" => {
            let f = lines.tagged("grid", 4)?;
            let (lo, h) = (lines.f64(f[0])?, lines.f64(f[1])?);
            let (n, out) = (lines.usize(f[2])?, lines.usize(f[3])?);
            SurrogateModel::PiecewiseLinear(
                PiecewiseLinear::with_nodes(lo, h, n, out).map_err(|e| lines.err(e.to_string()))?,
            )
        }
        "rbf" => {
            let f = lines.tagged("sigma", 1)?;
            let sigma = lines.f64(f[0])?;
            let f = lines.tagged("out", 1)?;
            let out = lines.usize(f[0])?;
            let f = lines.tagged("centers", 1)?;
            let nc = lines.usize(f[0])?;
            let mut centers = Vec::with_capacity(nc);
            for _ in 0..nc {
                let line = lines.next()?;
                let mut it = line.split_whitespace();
                let (a, b) = (it.next(), it.next());
                match (a, b, it.next()) {
                    (Some(a), Some(b), None) => {
                        centers.push([lines.f64(a)?, lines.f64(b)?]);
                    }
                    _ => return Err(lines.err("center line wants two floats")),
                }
            }
            SurrogateModel::RadialBasis(
                RadialBasis::with_centers(centers, sigma, out)
                    .map_err(|e| lines.err(e.to_string()))?,
            )
        }
        "rbfn" => {
            let f = lines.tagged("size", 2)?;
            let (n, out) = (lines.usize(f[0])?, lines.usize(f[1])?);
            SurrogateModel::RadialBasisNet(
                RadialBasisNet::new(n, out).map_err(|e| lines.err(e.to_string()))?,
            )
        }
        "tensor" => SurrogateModel::Tensor(SymmetricTensor3::zero()),
        other => return Err(lines.err(format!("unknown model kind '{other}'"))),
    };
    let f = lines.tagged("params", 1)?;
    let count = lines.usize(f[0])?;
    if count != model.parameter_count() {
        return Err(lines.err(format!(
            "param count {count} does not match model size {}",
            model.parameter_count()
        )));
    }
    let mut theta = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next()?;
        theta.push(lines.f64(line)?);
    }
    model
        .load_parameters(&theta)
        .map_err(|e| lines.err(e.to_string()))?;
    Ok(model)
}

/// Write-then-rename so readers never observe a half-written file. The temp
/// file lands in the destination directory to keep the rename on one
/// filesystem.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let stem = path
        .file_name()
        .ok_or_else(|| Error::contract("atomic write needs a file name"))?;
    let mut tmp = stem.to_os_string();
    tmp.push(".tmp");
    let tmp_path = match dir {
        Some(d) => d.join(&tmp),
        None => std::path::PathBuf::from(&tmp),
    };
    std::fs::write(&tmp_path, bytes)?;
    match std::fs::rename(&tmp_path, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = std::fs::remove_file(&tmp_path);
            Err(e.into())
        }
    }
}
