//! Parser for simulation design files: key-value text that either names a
//! catalog design or spells out a custom one.
//!
//! ```text
//! model = M1                 # catalog reference; must be the only key
//! ```
//!
//! or
//!
//! ```text
//! name = demo                # optional label, default "custom"
//! shape = 4,3                # tensor extents, required
//! class_sizes = 50,50        # training observations per class, required
//! sigma.1 = ar(0.5)          # per-mode covariance: ar(rho), cs(rho),
//! sigma.2 = identity         #   identity; unnamed modes default to identity
//! b.2 = 0.8 : 1,2 x 1        # coefficient placement for class k >= 2:
//! b.2 = -0.4 : 3..4 x 2      #   value : one 1-based index list per mode,
//!                            #   lists joined by 'x', entries int or a..b;
//!                            #   repeatable, later lines overwrite overlaps
//! phi.2 = 0.5,0.5            # covariate mean of class k; defines the
//!                            #   covariate dimension; unnamed classes are 0
//! alpha = 0.5 : 1..2 x 1 x 1 # covariate-association placement; one axis
//!                            #   per mode plus a final covariate axis
//! test_size = 10000          # optional, default 10000
//! ```
//!
//! All indices are 1-based as in the estimator formulas.

use catch_core::simulation::{
    box_indices, catalog_names, catalog_spec, CovKind, CovariateEffects, Placement,
    SimulationSpec,
};
use ndarray::Array2;

use crate::config::parse_kv_lines;
use crate::errors::CliError;

/// Looks up a catalog design, failing with the full catalog listing.
pub fn catalog_design(name: &str) -> Result<SimulationSpec, CliError> {
    catalog_spec(name).ok_or_else(|| {
        CliError::usage(format!(
            "unknown design {name:?}; catalog designs are: {}",
            catalog_names().join(", ")
        ))
    })
}

/// Parses the design-file grammar above. `origin` names the file in errors.
pub fn parse_design(text: &str, origin: &str) -> Result<SimulationSpec, CliError> {
    let lines =
        parse_kv_lines(text).map_err(|e| CliError::usage(format!("{origin}: {e}")))?;
    if lines.is_empty() {
        return Err(CliError::usage(format!("{origin}: no keys given")));
    }
    if let Some((line, _, value)) = lines.iter().find(|(_, k, _)| k == "model") {
        if lines.len() > 1 {
            return Err(CliError::usage(format!(
                "{origin}: line {line}: 'model' names a catalog design and \
                 cannot be combined with custom parameters"
            )));
        }
        return catalog_design(value);
    }

    let fail = |line: usize, msg: String| CliError::usage(format!("{origin}: line {line}: {msg}"));

    let mut name = String::from("custom");
    let mut shape: Option<(usize, Vec<usize>)> = None;
    let mut class_sizes: Option<(usize, Vec<usize>)> = None;
    let mut test_size: Option<usize> = None;
    let mut sigmas: Vec<(usize, usize, CovKind)> = Vec::new();
    let mut bs: Vec<(usize, usize, f64, Vec<Vec<usize>>)> = Vec::new();
    let mut phis: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut alphas: Vec<(usize, f64, Vec<Vec<usize>>)> = Vec::new();

    for (line, key, value) in &lines {
        let line = *line;
        match key.as_str() {
            "name" => name = value.clone(),
            "shape" => {
                shape = Some((line, parse_usize_list(value).map_err(|e| fail(line, e))?));
            }
            "class_sizes" => {
                class_sizes = Some((line, parse_usize_list(value).map_err(|e| fail(line, e))?));
            }
            "test_size" => {
                test_size = Some(
                    value
                        .parse()
                        .map_err(|_| fail(line, format!("cannot parse {value:?} as a count")))?,
                );
            }
            "alpha" => {
                let (v, axes) = parse_placement(value).map_err(|e| fail(line, e))?;
                alphas.push((line, v, axes));
            }
            _ => {
                if let Some(mode) = key.strip_prefix("sigma.") {
                    let mode: usize = mode
                        .parse()
                        .map_err(|_| fail(line, format!("bad mode in {key:?}")))?;
                    sigmas.push((line, mode, parse_cov(value).map_err(|e| fail(line, e))?));
                } else if let Some(class) = key.strip_prefix("b.") {
                    let class: usize = class
                        .parse()
                        .map_err(|_| fail(line, format!("bad class in {key:?}")))?;
                    let (v, axes) = parse_placement(value).map_err(|e| fail(line, e))?;
                    bs.push((line, class, v, axes));
                } else if let Some(class) = key.strip_prefix("phi.") {
                    let class: usize = class
                        .parse()
                        .map_err(|_| fail(line, format!("bad class in {key:?}")))?;
                    let row = parse_f64_list(value).map_err(|e| fail(line, e))?;
                    phis.push((line, class, row));
                } else {
                    return Err(fail(line, format!("unknown key {key:?}")));
                }
            }
        }
    }

    let (_, shape) =
        shape.ok_or_else(|| CliError::usage(format!("{origin}: missing key 'shape'")))?;
    let (cs_line, class_sizes) = class_sizes
        .ok_or_else(|| CliError::usage(format!("{origin}: missing key 'class_sizes'")))?;
    let order = shape.len();
    let classes = class_sizes.len();
    if classes < 2 {
        return Err(fail(cs_line, "need at least two class sizes".into()));
    }

    let mut spec = SimulationSpec::new(name, shape.clone(), class_sizes, vec![CovKind::Identity; order]);
    if let Some(t) = test_size {
        spec.test_size = t;
    }
    for (line, mode, kind) in sigmas {
        if mode == 0 || mode > order {
            return Err(fail(line, format!("mode {mode} out of range 1..={order}")));
        }
        spec.covs[mode - 1] = kind;
    }
    for (line, class, value, axes) in bs {
        if class < 2 || class > classes {
            return Err(fail(line, format!("class {class} out of range 2..={classes}")));
        }
        let cells = zero_based_box(&axes, &shape).map_err(|e| fail(line, e))?;
        spec.b[class - 2].push(Placement::new(value, cells));
    }

    if !phis.is_empty() || !alphas.is_empty() {
        let q = match phis.first() {
            Some((_, _, row)) => row.len(),
            None => {
                let (line, _, _) = alphas[0];
                return Err(fail(
                    line,
                    "alpha needs at least one phi.k line to fix the covariate dimension".into(),
                ));
            }
        };
        let mut phi = Array2::zeros((classes, q));
        for (line, class, row) in phis {
            if class == 0 || class > classes {
                return Err(fail(line, format!("class {class} out of range 1..={classes}")));
            }
            if row.len() != q {
                return Err(fail(
                    line,
                    format!("phi rows disagree: got {} values, expected {q}", row.len()),
                ));
            }
            for (j, v) in row.into_iter().enumerate() {
                phi[(class - 1, j)] = v;
            }
        }
        let mut alpha_shape = shape.clone();
        alpha_shape.push(q);
        let mut alpha_star = Vec::new();
        for (line, value, axes) in alphas {
            let cells = zero_based_box(&axes, &alpha_shape).map_err(|e| fail(line, e))?;
            alpha_star.push(Placement::new(value, cells));
        }
        spec.covariates = Some(CovariateEffects { phi, alpha_star });
    }
    spec.validate()?;
    Ok(spec)
}

/// `value : list x list x ...` with 1-based entries.
fn parse_placement(text: &str) -> Result<(f64, Vec<Vec<usize>>), String> {
    let (value, rest) = text
        .split_once(':')
        .ok_or_else(|| format!("expected 'value : indices', got {text:?}"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse {:?} as a number", value.trim()))?;
    let axes: Vec<Vec<usize>> = rest
        .split('x')
        .map(parse_index_list)
        .collect::<Result<_, _>>()?;
    if axes.iter().any(|a| a.is_empty()) {
        return Err("every axis needs at least one index".into());
    }
    Ok((value, axes))
}

/// `1,3..5,9` -> [1,3,4,5,9]; 1-based, zero rejected.
fn parse_index_list(text: &str) -> Result<Vec<usize>, String> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a
                .trim()
                .parse()
                .map_err(|_| format!("cannot parse {:?} as an index", a.trim()))?;
            let b: usize = b
                .trim()
                .parse()
                .map_err(|_| format!("cannot parse {:?} as an index", b.trim()))?;
            if a == 0 || b < a {
                return Err(format!("bad index range {part:?}"));
            }
            out.extend(a..=b);
        } else {
            let i: usize = part
                .parse()
                .map_err(|_| format!("cannot parse {part:?} as an index"))?;
            if i == 0 {
                return Err("indices are 1-based; 0 is out of range".into());
            }
            out.push(i);
        }
    }
    Ok(out)
}

fn zero_based_box(axes: &[Vec<usize>], extents: &[usize]) -> Result<Vec<Vec<usize>>, String> {
    if axes.len() != extents.len() {
        return Err(format!(
            "placement has {} axes, the target has {} modes",
            axes.len(),
            extents.len()
        ));
    }
    let mut shifted: Vec<Vec<usize>> = Vec::with_capacity(axes.len());
    for (axis, (&extent, one_based)) in extents.iter().zip(axes).enumerate() {
        let mut col = Vec::with_capacity(one_based.len());
        for &i in one_based {
            if i > extent {
                return Err(format!("index {i} exceeds extent {extent} of axis {}", axis + 1));
            }
            col.push(i - 1);
        }
        shifted.push(col);
    }
    let views: Vec<&[usize]> = shifted.iter().map(|v| v.as_slice()).collect();
    Ok(box_indices(&views))
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>, String> {
    let list: Vec<usize> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("cannot parse {s:?} as a count")))
        .collect::<Result<_, _>>()?;
    if list.is_empty() {
        return Err("empty list".into());
    }
    Ok(list)
}

fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    let list: Vec<f64> = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("cannot parse {s:?} as a number")))
        .collect::<Result<_, _>>()?;
    if list.is_empty() {
        return Err("empty list".into());
    }
    Ok(list)
}

fn parse_cov(text: &str) -> Result<CovKind, String> {
    let t = text.trim();
    if t == "identity" {
        return Ok(CovKind::Identity);
    }
    for (prefix, build) in [
        ("ar(", CovKind::Ar as fn(f64) -> CovKind),
        ("cs(", CovKind::Cs as fn(f64) -> CovKind),
    ] {
        if let Some(rest) = t.strip_prefix(prefix) {
            let Some(inner) = rest.strip_suffix(')') else {
                return Err(format!("missing closing parenthesis in {t:?}"));
            };
            let rho: f64 = inner
                .trim()
                .parse()
                .map_err(|_| format!("cannot parse {:?} as a correlation", inner.trim()))?;
            return Ok(build(rho));
        }
    }
    Err(format!(
        "unknown covariance {t:?}; use identity, ar(rho) or cs(rho)"
    ))
}
