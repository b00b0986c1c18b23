//! Trained hashing model and its text container.
//!
//! The container is line oriented: a `scq-model` header, `key value` pairs,
//! and matrices written one row per line. Every real number is stored as the
//! 16 hex digits of its IEEE-754 bit pattern, so saving is lossless.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::codes::{sign_codes, BinaryCodes};
use crate::error::{Result, ScqError};
use crate::io::write_atomic;
use crate::linalg::{ProjectionKind, ProjectionMatrix};

pub const FORMAT_VERSION: u32 = 1;
const HEADER: &str = "scq-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    One,
    Oge,
    Itq,
}

impl Method {
    pub fn kind(self) -> ProjectionKind {
        match self {
            Method::Oge => ProjectionKind::Orthogonal,
            Method::One | Method::Itq => ProjectionKind::Orthonormal,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::One => "one",
            Method::Oge => "oge",
            Method::Itq => "itq",
        })
    }
}

impl FromStr for Method {
    type Err = ScqError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Method::One),
            "oge" => Ok(Method::Oge),
            "itq" => Ok(Method::Itq),
            other => Err(ScqError::InvalidConfig(format!("unknown method {other:?} (expected one, oge or itq)"))),
        }
    }
}

/// Training settings recorded alongside the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    pub mu: f64,
    pub eps: f64,
    pub eps_b: f64,
    pub eps_u: f64,
    pub max_iter: usize,
    pub max_inner: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    method: Method,
    mean: DVector<f64>,
    pca: Option<DMatrix<f64>>,
    scale: f64,
    v: ProjectionMatrix,
    hyper: Hyperparams,
    format_version: u32,
    /// `pca * scale * V`, applied to centered rows.
    folded: DMatrix<f64>,
    /// `-mean' * folded`.
    offset: DVector<f64>,
}

impl HashModel {
    pub fn new(
        method: Method,
        mean: DVector<f64>,
        pca: Option<DMatrix<f64>>,
        scale: f64,
        v: ProjectionMatrix,
        hyper: Hyperparams,
    ) -> Result<Self> {
        let d_in = mean.len();
        let inner = pca.as_ref().map_or(d_in, |p| p.ncols());
        if let Some(p) = &pca {
            if p.nrows() != d_in {
                return Err(ScqError::InvalidInput(format!("PCA has {} rows, mean has {d_in}", p.nrows())));
            }
        }
        if v.d() != inner {
            return Err(ScqError::InvalidInput(format!("projection has {} rows, expected {inner}", v.d())));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ScqError::InvalidInput(format!("scale must be positive, got {scale}")));
        }
        if v.kind() != method.kind() {
            return Err(ScqError::InvalidInput(format!("{method} needs a {:?} projection", method.kind())));
        }
        let folded = match &pca {
            Some(p) => p * v.data() * scale,
            None => v.data() * scale,
        };
        let offset = -(folded.tr_mul(&mean));
        Ok(Self {
            method,
            mean,
            pca,
            scale,
            v,
            hyper,
            format_version: FORMAT_VERSION,
            folded,
            offset,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn bits(&self) -> usize {
        self.v.bits()
    }

    pub fn d_in(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn pca(&self) -> Option<&DMatrix<f64>> {
        self.pca.as_ref()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.v
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    fn check_dim(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(ScqError::InvalidInput(format!(
                "features have {} columns, model expects {}",
                x.ncols(),
                self.d_in()
            )));
        }
        Ok(())
    }

    /// Pre-sign values through the single folded affine map.
    pub fn project(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x_raw)?;
        let mut u = x_raw * &self.folded;
        for mut row in u.row_iter_mut() {
            row += self.offset.transpose();
        }
        Ok(u)
    }

    /// Pre-sign values computed stage by stage: center, PCA, scale, project.
    pub fn project_staged(&self, x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x_raw)?;
        let mut x = x_raw.clone();
        for mut row in x.row_iter_mut() {
            row -= self.mean.transpose();
        }
        if let Some(p) = &self.pca {
            x *= p;
        }
        Ok((x * self.scale) * self.v.data())
    }

    pub fn encode(&self, x_raw: &DMatrix<f64>) -> Result<BinaryCodes> {
        Ok(sign_codes(&self.project(x_raw)?))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let h = &self.hyper;
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "format_version {}", self.format_version);
        let _ = writeln!(s, "method {}", self.method);
        let _ = writeln!(s, "bits {}", self.bits());
        let _ = writeln!(s, "d_in {}", self.d_in());
        let _ = writeln!(s, "scale {}", hex(self.scale));
        let _ = writeln!(s, "mu {}", hex(h.mu));
        let _ = writeln!(s, "eps {}", hex(h.eps));
        let _ = writeln!(s, "eps_b {}", hex(h.eps_b));
        let _ = writeln!(s, "eps_u {}", hex(h.eps_u));
        let _ = writeln!(s, "max_iter {}", h.max_iter);
        let _ = writeln!(s, "max_inner {}", h.max_inner);
        let _ = writeln!(s, "seed {}", h.seed);
        let _ = writeln!(s, "mean {}", hex_row(self.mean.iter()));
        match &self.pca {
            Some(p) => write_matrix(&mut s, "pca", p),
            None => {
                let _ = writeln!(s, "pca none");
            }
        }
        write_matrix(&mut s, "v", self.v.data());
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Parser {
            lines: text.lines().enumerate(),
        };
        let (line, first) = p.next_line()?;
        if first != HEADER {
            return Err(ScqError::format_at_line(line, format!("expected {HEADER:?} header")));
        }
        let version: u32 = p.scalar("format_version")?;
        if version != FORMAT_VERSION {
            return Err(ScqError::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let method: Method = {
            let (line, v) = p.field("method")?;
            v.parse().map_err(|_| ScqError::format_at_line(line, format!("unknown method {v:?}")))?
        };
        let bits: usize = p.scalar("bits")?;
        let d_in: usize = p.scalar("d_in")?;
        let scale = p.real("scale")?;
        let hyper = Hyperparams {
            mu: p.real("mu")?,
            eps: p.real("eps")?,
            eps_b: p.real("eps_b")?,
            eps_u: p.real("eps_u")?,
            max_iter: p.scalar("max_iter")?,
            max_inner: p.scalar("max_inner")?,
            seed: p.scalar("seed")?,
        };
        let (line, mean_text) = p.field("mean")?;
        let mean = parse_hex_row(mean_text, line)?;
        if mean.len() != d_in {
            return Err(ScqError::format_at_line(line, format!("mean has {} entries, d_in is {d_in}", mean.len())));
        }
        let pca = {
            let (line, rest) = p.field("pca")?;
            if rest == "none" {
                None
            } else {
                Some(p.matrix_body(rest, line)?)
            }
        };
        let (line, rest) = p.field("v")?;
        let v = p.matrix_body(rest, line)?;
        if let Ok((line, extra)) = p.next_line() {
            return Err(ScqError::format_at_line(line, format!("unexpected trailing content {extra:?}")));
        }
        if v.ncols() != bits {
            return Err(ScqError::CorruptModel(format!("projection has {} columns, bits is {bits}", v.ncols())));
        }
        let v = ProjectionMatrix::new(v, method.kind()).map_err(|e| match e {
            ScqError::InvalidData(msg) | ScqError::InvalidInput(msg) => ScqError::CorruptModel(msg),
            other => other,
        })?;
        HashModel::new(method, DVector::from_vec(mean), pca, scale, v, hyper).map_err(|e| match e {
            ScqError::InvalidInput(msg) => ScqError::CorruptModel(msg),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| ScqError::format_at_byte(e.valid_up_to(), "model file is not valid UTF-8"))?;
        Self::from_text(text)
    }
}

fn hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn hex_row<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    values.map(|v| hex(*v)).collect::<Vec<_>>().join(" ")
}

fn write_matrix(s: &mut String, key: &str, m: &DMatrix<f64>) {
    let _ = writeln!(s, "{key} {} {}", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let _ = writeln!(s, "{}", hex_row(row.iter()));
    }
}

fn parse_hex(tok: &str, line: usize) -> Result<f64> {
    if tok.len() != 16 {
        return Err(ScqError::format_at_line(line, format!("{tok:?} is not a 16-digit hex float")));
    }
    u64::from_str_radix(tok, 16)
        .map(f64::from_bits)
        .map_err(|_| ScqError::format_at_line(line, format!("{tok:?} is not a 16-digit hex float")))
}

fn parse_hex_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split_whitespace().map(|t| parse_hex(t, line)).collect()
}

struct Parser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Parser<'a> {
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| ScqError::CorruptModel("model file ends early".into()))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (line, text) = self.next_line()?;
        let (k, rest) = text.split_once(' ').unwrap_or((text, ""));
        if k != key {
            return Err(ScqError::format_at_line(line, format!("expected key {key:?}, found {k:?}")));
        }
        Ok((line, rest.trim()))
    }

    fn scalar<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let (line, v) = self.field(key)?;
        v.parse()
            .map_err(|_| ScqError::format_at_line(line, format!("invalid value {v:?} for {key}")))
    }

    fn real(&mut self, key: &str) -> Result<f64> {
        let (line, v) = self.field(key)?;
        parse_hex(v, line)
    }

    fn matrix_body(&mut self, dims: &str, line: usize) -> Result<DMatrix<f64>> {
        let mut it = dims.split_whitespace().map(str::parse::<usize>);
        let (Some(Ok(r)), Some(Ok(c)), None) = (it.next(), it.next(), it.next()) else {
            return Err(ScqError::format_at_line(line, format!("expected matrix dimensions, found {dims:?}")));
        };
        let mut data = Vec::with_capacity(r * c);
        for _ in 0..r {
            let (line, text) = self.next_line()?;
            let row = parse_hex_row(text, line)?;
            if row.len() != c {
                return Err(ScqError::format_at_line(line, format!("expected {c} values, found {}", row.len())));
            }
            data.extend(row);
        }
        Ok(DMatrix::from_row_slice(r, c, &data))
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        use crate::train::TrainConfig;
        let cfg = TrainConfig::new(1);
        Self {
            mu: cfg.mu,
            eps: cfg.eps,
            eps_b: cfg.eps_b,
            eps_u: cfg.eps_u,
            max_iter: cfg.max_iter,
            max_inner: cfg.max_inner,
            seed: cfg.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn sample(method: Method, with_pca: bool) -> HashModel {
        let d_in = 6;
        let inner = if with_pca { 4 } else { d_in };
        let mut r = synth::rng(3);
        let pca = with_pca.then(|| synth::random_orthonormal(&mut r, d_in, inner));
        let mut v = synth::random_orthonormal(&mut r, inner, 3);
        if method == Method::Oge {
            v *= DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 1.3]));
        }
        let v = ProjectionMatrix::new(v, method.kind()).unwrap();
        HashModel::new(method, synth::gaussian_vector(d_in, 4), pca, 0.37, v, Hyperparams::default()).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        for m in [Method::One, Method::Oge, Method::Itq] {
            for pca in [false, true] {
                let model = sample(m, pca);
                let text = model.to_text();
                let back = HashModel::from_text(&text).unwrap();
                assert_eq!(back, model);
                assert_eq!(back.to_text(), text);
            }
        }
    }

    #[test]
    fn version_and_tampering() {
        let text = sample(Method::One, false).to_text();
        let bumped = text.replace("format_version 1", "format_version 2");
        assert!(matches!(
            HashModel::from_text(&bumped),
            Err(ScqError::UnsupportedVersion { found: 2, expected: 1 })
        ));

        // scale one entry of V so its column loses unit norm
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let at = lines.iter().position(|l| l.starts_with("v ")).unwrap() + 1;
        let mut row: Vec<String> = lines[at].split(' ').map(String::from).collect();
        row[0] = hex(f64::from_bits(u64::from_str_radix(&row[0], 16).unwrap()) * 3.0 + 0.5);
        lines[at] = row.join(" ");
        let tampered = lines.join("\n") + "\n";
        assert!(matches!(HashModel::from_text(&tampered), Err(ScqError::CorruptModel(_))));

        assert!(matches!(HashModel::from_text("nonsense\n"), Err(ScqError::Format { .. })));
        assert!(HashModel::from_text(&text[..text.len() / 2]).is_err());
    }

    #[test]
    fn missing_pca_means_identity() {
        let model = sample(Method::One, false);
        assert!(model.to_text().contains("\npca none\n"));
        let x = synth::gaussian_matrix(5, 6, 8);
        let centered = DMatrix::from_fn(5, 6, |i, j| x[(i, j)] - model.mean()[j]);
        let want = centered * 0.37 * model.projection().data();
        assert!((model.project(&x).unwrap() - want).amax() < 1e-12);
    }

    #[test]
    fn folded_map_matches_staged_pipeline() {
        for pca in [false, true] {
            let model = sample(Method::Oge, pca);
            let x = synth::gaussian_matrix(200, 6, 9);
            let folded = model.project(&x).unwrap();
            let staged = model.project_staged(&x).unwrap();
            let codes = model.encode(&x).unwrap();
            let staged_codes = sign_codes(&staged);
            for i in 0..200 {
                for j in 0..3 {
                    assert!((folded[(i, j)] - staged[(i, j)]).abs() < 1e-12);
                    if staged[(i, j)].abs() >= 1e-12 {
                        assert_eq!(codes.get(i, j), staged_codes.get(i, j));
                    }
                }
            }
        }
        let model = sample(Method::One, true);
        assert!(matches!(model.encode(&DMatrix::zeros(2, 5)), Err(ScqError::InvalidInput(_))));
    }

    #[test]
    fn concurrent_encoding_is_deterministic() {
        let model = sample(Method::Itq, true);
        let x = synth::gaussian_matrix(50, 6, 1);
        let want = model.encode(&x).unwrap();
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(|| model.encode(&x).unwrap())).collect();
            for h in handles {
                assert_eq!(h.join().unwrap(), want);
            }
        });
    }

    #[test]
    fn rejects_kind_mismatch() {
        let v = ProjectionMatrix::new(DMatrix::identity(3, 2), ProjectionKind::Orthonormal).unwrap();
        let r = HashModel::new(Method::Oge, DVector::zeros(3), None, 1.0, v, Hyperparams::default());
        assert!(r.is_err());
    }
}
