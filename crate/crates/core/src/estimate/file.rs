//! Plain-text model file: a header, one line per predictor with named
//! coefficients, and the covariate groups.
//!
//! ```text
//! format mixreg-model 1
//! spec_hash 3f0c9a1e5b27d4c8
//! name mixsamos
//! components 2
//! loss crps
//! links weight=softmax location=identity scale=log
//! estimation bfgs
//! predictor weight[1] intercept=1.2e-1 t2m.mean=-3.4e-2
//! ...
//! group 1 t2m.mean t2m.sd
//! group 2 t2m.ctrl
//! ```
//!
//! A predictor line without an `intercept=` entry has no intercept. Lines the
//! parser does not recognise are handed back to the caller so that richer
//! model files can extend this block.

use crate::error::{Error, Result};
use crate::fmt::{exact, parse_f64};

use super::{Coefficients, LinearPredictorSpec, Loss, ModelSpec, PredictorTarget};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const LINKS: &str = "weight=softmax location=identity scale=log";

/// Parsed contents of a model block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub spec: ModelSpec,
    pub coefficients: Coefficients,
    pub estimation: String,
    /// Unrecognised lines with their 1-based line numbers.
    pub extra: Vec<(usize, String)>,
}

pub fn format_model_block(spec: &ModelSpec, coeffs: &Coefficients, estimation: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!("format mixreg-model {MODEL_FORMAT_VERSION}\n"));
    out.push_str(&format!("spec_hash {}\n", spec.structure_hash()));
    out.push_str(&format!("name {}\n", spec.name));
    out.push_str(&format!("components {}\n", spec.n_components));
    out.push_str(&format!("loss {}\n", spec.loss));
    out.push_str(&format!("links {LINKS}\n"));
    out.push_str(&format!("estimation {estimation}\n"));
    for (j, p) in spec.predictors.iter().enumerate() {
        out.push_str(&format!("predictor {}", p.target));
        if p.has_intercept {
            out.push_str(&format!(" intercept={}", exact(coeffs.intercepts[j])));
        }
        for (c, v) in p.covariates.iter().zip(&coeffs.slopes[j]) {
            out.push_str(&format!(" {c}={}", exact(*v)));
        }
        out.push('\n');
    }
    for (k, g) in spec.groups.iter().enumerate() {
        out.push_str(&format!("group {}", k + 1));
        for c in g {
            out.push(' ');
            out.push_str(c);
        }
        out.push('\n');
    }
    out
}

pub fn parse_model_block(text: &str, file: &str) -> Result<ModelBlock> {
    let err = |line: usize, message: String| Error::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut version = None;
    let mut hash = None;
    let mut name = None;
    let mut k = None;
    let mut loss = None;
    let mut estimation = String::new();
    let mut predictors = Vec::new();
    let mut intercepts = Vec::new();
    let mut slopes = Vec::new();
    let mut groups: Vec<(usize, Vec<String>)> = Vec::new();
    let mut extra = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let ln = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        let rest = rest.trim();
        match key {
            "format" => {
                let v = rest
                    .strip_prefix("mixreg-model ")
                    .and_then(|v| v.trim().parse::<u32>().ok())
                    .ok_or_else(|| err(ln, format!("unrecognised format line {rest:?}")))?;
                if v != MODEL_FORMAT_VERSION {
                    return Err(err(ln, format!("unsupported model format version {v}")));
                }
                version = Some(v);
            }
            "spec_hash" => hash = Some((ln, rest.to_string())),
            "name" => name = Some(rest.to_string()),
            "components" => {
                k = Some(
                    rest.parse::<usize>()
                        .map_err(|_| err(ln, format!("bad component count {rest:?}")))?,
                )
            }
            "loss" => loss = Some(rest.parse::<Loss>().map_err(|e| err(ln, e.to_string()))?),
            "links" => {
                if rest != LINKS {
                    return Err(err(ln, format!("unsupported links {rest:?}")));
                }
            }
            "estimation" => estimation = rest.to_string(),
            "predictor" => {
                let mut parts = rest.split_whitespace();
                let target: PredictorTarget = parts
                    .next()
                    .ok_or_else(|| err(ln, "predictor line without target".into()))?
                    .parse()
                    .map_err(|e: Error| err(ln, e.to_string()))?;
                let mut has_intercept = false;
                let mut icpt = 0.0;
                let mut covs = Vec::new();
                let mut vals = Vec::new();
                for part in parts {
                    let (c, v) = part
                        .split_once('=')
                        .ok_or_else(|| err(ln, format!("expected name=value, got {part:?}")))?;
                    let v =
                        parse_f64(v).ok_or_else(|| err(ln, format!("bad number in {part:?}")))?;
                    if c == "intercept" {
                        has_intercept = true;
                        icpt = v;
                    } else {
                        covs.push(c.to_string());
                        vals.push(v);
                    }
                }
                predictors.push(LinearPredictorSpec {
                    target,
                    covariates: covs,
                    has_intercept,
                });
                intercepts.push(icpt);
                slopes.push(vals);
            }
            "group" => {
                let mut parts = rest.split_whitespace();
                let idx = parts
                    .next()
                    .and_then(|v| v.parse::<usize>().ok())
                    .filter(|v| *v >= 1)
                    .ok_or_else(|| err(ln, "group line needs a 1-based component index".into()))?;
                groups.push((idx, parts.map(str::to_string).collect()));
            }
            _ => extra.push((ln, raw.to_string())),
        }
    }

    let end = text.lines().count();
    version.ok_or_else(|| err(1, "missing format line".into()))?;
    let name = name.ok_or_else(|| err(end, "missing name".into()))?;
    let k = k.ok_or_else(|| err(end, "missing components".into()))?;
    let loss = loss.ok_or_else(|| err(end, "missing loss".into()))?;
    groups.sort_by_key(|g| g.0);
    if groups.iter().enumerate().any(|(i, g)| g.0 != i + 1) {
        return Err(err(end, "group indices must be 1..K without gaps".into()));
    }
    let spec = ModelSpec::new(
        name,
        k,
        predictors,
        loss,
        groups.into_iter().map(|g| g.1).collect(),
    )
    .map_err(|e| err(end, e.to_string()))?;
    if let Some((ln, h)) = hash {
        if h != spec.structure_hash() {
            return Err(err(
                ln,
                format!(
                    "spec hash {h} does not match model structure {}",
                    spec.structure_hash()
                ),
            ));
        }
    }
    Ok(ModelBlock {
        spec,
        coefficients: Coefficients { intercepts, slopes },
        estimation,
        extra,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        use PredictorTarget::*;
        let lp = |t, c: &[&str], i| LinearPredictorSpec::new(t, c, i);
        ModelSpec::new(
            "m",
            2,
            vec![
                lp(Weight(0), &["a"], false),
                lp(Weight(1), &["c"], false),
                lp(Location(0), &["a", "b"], true),
                lp(Scale(0), &[], true),
                lp(Location(1), &["c"], true),
                lp(Scale(1), &[], true),
            ],
            Loss::Crps,
            vec![vec!["a".into(), "b".into()], vec!["c".into()]],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = spec();
        let flat = [
            0.1,
            -1.0 / 3.0,
            2.5e-17,
            std::f64::consts::PI,
            -7.0,
            1e300,
            0.0,
            -0.0,
            5e-324,
        ];
        let c = Coefficients::unflatten(&s, &flat).unwrap();
        let text = format_model_block(&s, &c, "boosting m=17");
        let back = parse_model_block(&text, "x.model").unwrap();
        assert_eq!(back.spec, s);
        assert_eq!(back.estimation, "boosting m=17");
        for (a, b) in back.coefficients.flatten(&s).iter().zip(&flat) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(back.extra.is_empty());
    }

    #[test]
    fn extra_lines_are_returned() {
        let s = spec();
        let mut text = format_model_block(&s, &Coefficients::zeros(&s), "bfgs");
        text.push_str("station s01\n");
        let back = parse_model_block(&text, "x").unwrap();
        assert_eq!(back.extra.len(), 1);
        assert_eq!(back.extra[0].1, "station s01");
    }

    #[test]
    fn tampered_structure_is_rejected() {
        let s = spec();
        let text = format_model_block(&s, &Coefficients::zeros(&s), "bfgs")
            .replace("loss crps", "loss logs");
        let e = parse_model_block(&text, "x.model").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let bad = format_model_block(&s, &Coefficients::zeros(&s), "bfgs").replace("b=0", "b=zero");
        assert!(parse_model_block(&bad, "x").is_err());
    }
}
