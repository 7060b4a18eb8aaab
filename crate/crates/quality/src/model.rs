//! Loadable regression models mapping NSS features to a quality score.
//!
//! Text format, one key per line, `#` starts a comment:
//!
//! ```text
//! kind rbf            # or: linear
//! gamma 0.05          # rbf only
//! bias 45.2164
//! ranges 0,10 0,4 ... # one min,max pair per feature
//! sv 1.25 0.1 -0.3 ...# coefficient, then one value per feature
//! ```
//!
//! Features are min-max scaled to `[-1,1]` first. An rbf model scores
//! `bias + Σ coef·exp(-gamma·|sv - x|²)`; a linear one `bias + Σ coef·<sv, x>`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{QualityError, Result};
use crate::nss::{NssFeatures, FEATURES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Rbf,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupportVector {
    pub coef: f64,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub gamma: f64,
    pub bias: f64,
    /// Per-feature `(min, max)` with `min < max`.
    pub ranges: Vec<(f64, f64)>,
    pub support: Vec<SupportVector>,
}

impl RegressionModel {
    /// Constant model scoring `bias` everywhere.
    pub fn constant(bias: f64) -> Self {
        RegressionModel {
            kind: ModelKind::Linear,
            gamma: 0.0,
            bias,
            ranges: vec![(0.0, 1.0); FEATURES],
            support: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ranges.len() != FEATURES {
            return Err(QualityError::config(format!("model has {} ranges, expected {FEATURES}", self.ranges.len())));
        }
        if let Some(i) = self.ranges.iter().position(|(lo, hi)| !(lo < hi)) {
            return Err(QualityError::config(format!("range {i} must have min < max")));
        }
        if self.kind == ModelKind::Rbf && !(self.gamma > 0.0) {
            return Err(QualityError::config("rbf model needs gamma > 0"));
        }
        if let Some(sv) = self.support.iter().find(|sv| sv.x.len() != FEATURES) {
            return Err(QualityError::config(format!("support vector has {} values, expected {FEATURES}", sv.x.len())));
        }
        if !self.bias.is_finite() || self.support.iter().any(|sv| !sv.coef.is_finite() || sv.x.iter().any(|v| !v.is_finite())) {
            return Err(QualityError::config("model values must be finite"));
        }
        Ok(())
    }

    pub fn scale(&self, f: &NssFeatures) -> Vec<f64> {
        f.values
            .iter()
            .zip(&self.ranges)
            .map(|(v, (lo, hi))| -1.0 + 2.0 * (v - lo) / (hi - lo))
            .collect()
    }

    pub fn score(&self, f: &NssFeatures) -> f64 {
        let x = self.scale(f);
        let kernel = |sv: &[f64]| match self.kind {
            ModelKind::Rbf => (-self.gamma * sv.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp(),
            ModelKind::Linear => sv.iter().zip(&x).map(|(a, b)| a * b).sum(),
        };
        self.bias + self.support.iter().map(|sv| sv.coef * kernel(&sv.x)).sum::<f64>()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut kind, mut gamma, mut bias, mut ranges) = (None, 0.0, None, None);
        let mut support = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            let num = |s: &str| s.parse::<f64>().map_err(|_| QualityError::parse(line_no, format!("bad number {s:?}")));
            let nums = |s: &str| s.split_whitespace().map(num).collect::<Result<Vec<f64>>>();
            match key {
                "kind" => {
                    kind = Some(match rest.trim() {
                        "rbf" => ModelKind::Rbf,
                        "linear" => ModelKind::Linear,
                        other => return Err(QualityError::parse(line_no, format!("unknown kind {other:?}"))),
                    })
                }
                "gamma" => gamma = num(rest.trim())?,
                "bias" => bias = Some(num(rest.trim())?),
                "ranges" => {
                    let pairs = rest
                        .split_whitespace()
                        .map(|p| {
                            let (lo, hi) = p
                                .split_once(',')
                                .ok_or_else(|| QualityError::parse(line_no, format!("range {p:?} is not min,max")))?;
                            Ok((num(lo)?, num(hi)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    ranges = Some(pairs);
                }
                "sv" => {
                    let v = nums(rest)?;
                    let (coef, x) = v.split_first().ok_or_else(|| QualityError::parse(line_no, "empty sv line"))?;
                    support.push(SupportVector { coef: *coef, x: x.to_vec() });
                }
                other => return Err(QualityError::parse(line_no, format!("unknown key {other:?}"))),
            }
        }
        let model = RegressionModel {
            kind: kind.ok_or_else(|| QualityError::parse(0, "missing kind"))?,
            gamma,
            bias: bias.ok_or_else(|| QualityError::parse(0, "missing bias"))?,
            ranges: ranges.ok_or_else(|| QualityError::parse(0, "missing ranges"))?,
            support,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QualityError::Io {
            context: format!("reading model {}", path.display()),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kind = match self.kind {
            ModelKind::Rbf => "rbf",
            ModelKind::Linear => "linear",
        };
        writeln!(s, "kind {kind}").unwrap();
        if self.kind == ModelKind::Rbf {
            writeln!(s, "gamma {:?}", self.gamma).unwrap();
        }
        writeln!(s, "bias {:?}", self.bias).unwrap();
        let ranges: Vec<String> = self.ranges.iter().map(|(a, b)| format!("{a:?},{b:?}")).collect();
        writeln!(s, "ranges {}", ranges.join(" ")).unwrap();
        for sv in &self.support {
            let x: Vec<String> = sv.x.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "sv {:?} {}", sv.coef, x.join(" ")).unwrap();
        }
        s
    }
}
