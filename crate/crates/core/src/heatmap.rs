//! Pairwise token similarity before and after graph propagation.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::corpus::Vocabulary;
use crate::error::{GlenError, Result};
use crate::model::{GlenModel, ModelInputs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// Initial token embeddings.
    Before,
    /// Output of the trained GCN.
    After,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Before => "before",
            Stage::After => "after",
        })
    }
}

impl FromStr for Stage {
    type Err = GlenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" => Ok(Stage::Before),
            "after" => Ok(Stage::After),
            _ => Err(GlenError::Config(format!("unknown stage `{s}` (before, after)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapSpec {
    pub tokens: Vec<String>,
    pub stage: Stage,
}

/// 0 when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn cosine_matrix(rows: &[&[f64]]) -> Vec<Vec<f64>> {
    rows.iter().map(|a| rows.iter().map(|b| cosine(a, b)).collect()).collect()
}

/// Standardizes with the population mean and deviation of the off-diagonal
/// entries; the diagonal is shifted and scaled by the same amounts. With zero
/// variance every entry becomes 0.
pub fn zscore_off_diagonal(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .collect();
    if off.is_empty() {
        return vec![vec![0.0; n]; n];
    }
    let mean = off.iter().sum::<f64>() / off.len() as f64;
    let var = off.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / off.len() as f64;
    let sd = var.sqrt();
    m.iter()
        .map(|row| {
            row.iter()
                .map(|v| if sd > 1e-15 { (v - mean) / sd } else { 0.0 })
                .collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub tokens: Vec<String>,
    pub stage: Stage,
    pub cosine: Vec<Vec<f64>>,
    pub zscore: Vec<Vec<f64>>,
}

/// Representation rows of `tokens` at `stage`.
pub fn stage_rows(
    spec: &HeatmapSpec,
    vocab: &Vocabulary,
    inputs: &ModelInputs,
    model: Option<&GlenModel>,
) -> Result<Vec<Vec<f64>>> {
    if spec.tokens.len() < 2 {
        return Err(GlenError::Config("a heatmap needs at least two tokens".into()));
    }
    let missing: Vec<String> = spec.tokens.iter().filter(|t| vocab.id(t).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(GlenError::UnknownTokens(missing));
    }
    let table: Tensor = match spec.stage {
        Stage::Before => inputs.embeddings.matrix().clone(),
        Stage::After => {
            let model = model.ok_or_else(|| GlenError::Config("the after stage needs a trained model".into()))?;
            model
                .token_representations(inputs)?
                .ok_or_else(|| GlenError::Config(format!("{} has no global token graph", model.config().ablation)))?
        }
    };
    Ok(spec
        .tokens
        .iter()
        .map(|t| table.row(vocab.id(t).expect("checked")).to_vec())
        .collect())
}

pub fn build_heatmap(
    spec: &HeatmapSpec,
    vocab: &Vocabulary,
    inputs: &ModelInputs,
    model: Option<&GlenModel>,
) -> Result<Heatmap> {
    let rows = stage_rows(spec, vocab, inputs, model)?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let cosine = cosine_matrix(&refs);
    let zscore = zscore_off_diagonal(&cosine);
    Ok(Heatmap {
        tokens: spec.tokens.clone(),
        stage: spec.stage,
        cosine,
        zscore,
    })
}

impl Heatmap {
    /// Tab-separated z-score matrix with a token header row.
    pub fn to_text(&self) -> String {
        let mut out = format!("# stage={} zscore=off-diagonal\n", self.stage);
        out.push_str("token");
        for t in &self.tokens {
            let _ = write!(out, "\t{t}");
        }
        out.push('\n');
        for (t, row) in self.tokens.iter().zip(&self.zscore) {
            out.push_str(t);
            for v in row {
                let _ = write!(out, "\t{v:.9}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Vec<Vec<f64>>> {
        text.lines()
            .filter(|l| !l.starts_with('#'))
            .skip(1)
            .map(|l| {
                l.split('\t')
                    .skip(1)
                    .map(|v| v.parse::<f64>().map_err(|e| GlenError::Invalid(format!("heatmap value `{v}`: {e}"))))
                    .collect()
            })
            .collect()
    }

    /// Grid rendering: red above the mean, blue below, clipped at 2 sd.
    pub fn to_svg(&self) -> String {
        const CELL: usize = 36;
        let n = self.tokens.len();
        let label = 8 + 7 * self.tokens.iter().map(|t| t.chars().count()).max().unwrap_or(0);
        let size = label + n * CELL;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" font-family=\"monospace\" font-size=\"11\">\n"
        );
        for (i, t) in self.tokens.iter().enumerate() {
            let c = label + i * CELL + CELL / 2;
            let _ = writeln!(out, "<text x=\"{}\" y=\"{c}\" text-anchor=\"end\" dy=\"4\">{}</text>", label - 4, escape(t));
            let _ = writeln!(
                out,
                "<text x=\"{c}\" y=\"{}\" text-anchor=\"start\" transform=\"rotate(-90 {c} {})\" dy=\"4\">{}</text>",
                label - 4,
                label - 4,
                escape(t)
            );
        }
        for (i, row) in self.zscore.iter().enumerate() {
            for (j, &z) in row.iter().enumerate() {
                let s = (z / 2.0).clamp(-1.0, 1.0);
                let fade = |x: f64| (255.0 * (1.0 - x.abs())).round() as u8;
                let (r, g, b) = if s >= 0.0 { (255, fade(s), fade(s)) } else { (fade(s), fade(s), 255) };
                let _ = writeln!(
                    out,
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"#{r:02x}{g:02x}{b:02x}\"><title>{z:.3}</title></rect>",
                    label + j * CELL,
                    label + i * CELL
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean and population deviation of the off-diagonal entries.
pub fn off_diagonal_moments(m: &[Vec<f64>]) -> (f64, f64) {
    let n = m.len();
    let off: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| m[i][j])
        .collect();
    let mean = off.iter().sum::<f64>() / off.len().max(1) as f64;
    let var = off.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / off.len().max(1) as f64;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_zscores() {
        // Off-diagonal entries 1, 2, 3 (each twice): mean 2, sd sqrt(2/3).
        let m = vec![vec![9.0, 1.0, 2.0], vec![1.0, 9.0, 3.0], vec![2.0, 3.0, 9.0]];
        let z = zscore_off_diagonal(&m);
        assert!((z[0][1] + 1.224_744_871).abs() < 1e-6);
        assert!(z[0][2].abs() < 1e-12);
        assert!((z[1][2] - 1.224_744_871).abs() < 1e-6);
        let (mean, sd) = off_diagonal_moments(&z);
        assert!(mean.abs() < 1e-12 && (sd - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_tokens_zero_variance() {
        let z = zscore_off_diagonal(&[vec![1.0, 0.3], vec![0.3, 1.0]]);
        assert_eq!(z, vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!(cosine(&[1.0, 0.0], &[-1.0, 0.0]) < 0.0);
    }

    #[test]
    fn text_round_trip() {
        let h = Heatmap {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            stage: Stage::Before,
            cosine: vec![],
            zscore: vec![vec![1.0, -0.5, 0.25], vec![-0.5, 1.0, 2.0], vec![0.25, 2.0, 1.0]],
        };
        assert_eq!(Heatmap::from_text(&h.to_text()).unwrap(), h.zscore);
        assert!(h.to_svg().starts_with("<svg"));
    }
}
