//! JSON-facing system descriptors.
//!
//! Accepted shapes:
//!
//! ```json
//! "ou1d"
//! {"name": "linear2d", "params": {"a": [[-1, 2], [-2, -1]]}, "box": [[-3, 3], [-3, 3]]}
//! {"dimension": 1, "drift": ["x1 - x1^3"], "sigma": "identity", "box": [[-2.5, 2.5]]}
//! ```

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::builtin::{self, Builtin, Monomial};
use super::{Diffusion, DomainBox, Drift, DynamicsError, Expr, SystemSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    /// Constant added to the double-well drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tilt: Option<f64>,
    /// Matrix of the linear drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<[[f64; 2]; 2]>,
    /// Potential monomials `[coef, power_x1, power_x2]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedSystem {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BuiltinParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<SigmaDescriptor>,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub domain_box: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSystem {
    pub dimension: usize,
    pub drift: Vec<String>,
    #[serde(default = "SigmaDescriptor::identity")]
    pub sigma: SigmaDescriptor,
    #[serde(rename = "box")]
    pub domain_box: Vec<[f64; 2]>,
}

/// A number or an expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Number(f64),
    Expr(String),
}

/// `"identity"` or a `d x m` matrix of entries.
#[derive(Debug, Clone, PartialEq)]
pub enum SigmaDescriptor {
    Identity,
    Matrix(Vec<Vec<Entry>>),
}

impl SigmaDescriptor {
    pub fn identity() -> SigmaDescriptor {
        SigmaDescriptor::Identity
    }

    pub fn diagonal(values: &[f64]) -> SigmaDescriptor {
        let n = values.len();
        SigmaDescriptor::Matrix(
            (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| Entry::Number(if i == j { values[i] } else { 0.0 }))
                        .collect()
                })
                .collect(),
        )
    }
}

impl Serialize for SigmaDescriptor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SigmaDescriptor::Identity => s.serialize_str("identity"),
            SigmaDescriptor::Matrix(rows) => rows.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for SigmaDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) if s == "identity" => Ok(SigmaDescriptor::Identity),
            serde_json::Value::String(s) => Err(D::Error::custom(format!(
                "sigma must be \"identity\" or a matrix, got \"{s}\""
            ))),
            other => serde_json::from_value::<Vec<Vec<Entry>>>(other)
                .map(SigmaDescriptor::Matrix)
                .map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SystemDescriptor {
    Named(NamedSystem),
    Custom(CustomSystem),
}

impl SystemDescriptor {
    pub fn named(name: &str) -> SystemDescriptor {
        SystemDescriptor::Named(NamedSystem {
            name: name.to_string(),
            params: None,
            sigma: None,
            domain_box: None,
        })
    }
}

impl Serialize for SystemDescriptor {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            SystemDescriptor::Named(n) if n.params.is_none() && n.sigma.is_none() && n.domain_box.is_none() => {
                s.serialize_str(&n.name)
            }
            SystemDescriptor::Named(n) => n.serialize(s),
            SystemDescriptor::Custom(c) => c.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for SystemDescriptor {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(name) => Ok(SystemDescriptor::named(&name)),
            serde_json::Value::Object(ref map) if map.contains_key("name") => {
                serde_json::from_value(v).map(SystemDescriptor::Named).map_err(D::Error::custom)
            }
            serde_json::Value::Object(_) => {
                serde_json::from_value(v).map(SystemDescriptor::Custom).map_err(D::Error::custom)
            }
            _ => Err(D::Error::custom(
                "system must be a built-in name or an object",
            )),
        }
    }
}

fn domain_from(bounds: &[[f64; 2]]) -> Result<DomainBox, DynamicsError> {
    DomainBox::new(bounds.iter().map(|b| (b[0], b[1])).collect())
}

fn build_diffusion(sigma: &SigmaDescriptor, dim: usize) -> Result<Diffusion, DynamicsError> {
    let rows = match sigma {
        SigmaDescriptor::Identity => return Ok(Diffusion::Identity),
        SigmaDescriptor::Matrix(rows) => rows,
    };
    if rows.len() != dim {
        return Err(DynamicsError::Inconsistent(format!(
            "sigma has {} rows, system dimension is {dim}",
            rows.len()
        )));
    }
    let m = rows.first().map_or(0, Vec::len);
    if m < dim || rows.iter().any(|r| r.len() != m) {
        return Err(DynamicsError::Inconsistent(format!(
            "sigma must be a {dim} x m matrix with m >= {dim}"
        )));
    }
    let mut entries = Vec::with_capacity(dim * m);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            let expr = match e {
                Entry::Number(v) => Expr::Num(*v),
                Entry::Expr(s) => Expr::parse_with_dim(s, dim)
                    .map_err(|source| DynamicsError::SigmaParse { row: i, col: j, source })?,
            };
            entries.push(expr);
        }
    }
    if entries.iter().all(Expr::is_constant) {
        let sigma = DMatrix::from_row_iterator(dim, m, entries.iter().map(|e| e.eval(&[])));
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Inconsistent("sigma has non-finite entries".into()));
        }
        let a = &sigma * sigma.transpose();
        let chol = a
            .clone()
            .cholesky()
            .ok_or(DynamicsError::DegenerateDiffusion { x: vec![] })?;
        let inv = chol.inverse();
        let a_inv = (&inv + inv.transpose()) * 0.5;
        if sigma == DMatrix::identity(dim, dim) {
            return Ok(Diffusion::Identity);
        }
        return Ok(Diffusion::Constant { sigma, a, a_inv });
    }
    Ok(Diffusion::Field { m, entries })
}

fn builtin_from(named: &NamedSystem) -> Result<Builtin, DynamicsError> {
    let params = named.params.clone().unwrap_or_default();
    let reject = |field: &str| {
        Err(DynamicsError::Inconsistent(format!(
            "parameter '{field}' does not apply to '{}'",
            named.name
        )))
    };
    let b = match named.name.as_str() {
        "ou1d" | "doublewell1d" if params != BuiltinParams::default() => {
            return reject("params");
        }
        "ou1d" => Builtin::Ou1d,
        "doublewell1d" => Builtin::DoubleWell1d { tilt: 0.0 },
        "asymdoublewell1d" => {
            if params.a.is_some() || params.terms.is_some() {
                return reject("a/terms");
            }
            Builtin::DoubleWell1d {
                tilt: params.tilt.unwrap_or(builtin::DEFAULT_TILT),
            }
        }
        "linear2d" => {
            if params.tilt.is_some() || params.terms.is_some() {
                return reject("tilt/terms");
            }
            Builtin::Linear2d {
                a: params.a.unwrap_or(builtin::DEFAULT_LINEAR),
            }
        }
        "gradient2d" => {
            if params.tilt.is_some() || params.a.is_some() {
                return reject("tilt/a");
            }
            let terms = match params.terms {
                None => builtin::default_gradient_terms(),
                Some(ts) => ts
                    .iter()
                    .map(|t| {
                        let ok = t[1] >= 0.0 && t[2] >= 0.0 && t[1].fract() == 0.0 && t[2].fract() == 0.0;
                        if ok {
                            Ok(Monomial {
                                coef: t[0],
                                p: t[1] as i32,
                                q: t[2] as i32,
                            })
                        } else {
                            Err(DynamicsError::Inconsistent(format!(
                                "monomial powers must be nonnegative integers, got {t:?}"
                            )))
                        }
                    })
                    .collect::<Result<_, _>>()?,
            };
            Builtin::Gradient2d { terms }
        }
        other => return Err(DynamicsError::UnknownBuiltin(other.to_string())),
    };
    Ok(b)
}

pub(super) fn build(desc: &SystemDescriptor) -> Result<SystemSpec, DynamicsError> {
    match desc {
        SystemDescriptor::Named(named) => {
            let b = builtin_from(named)?;
            let dim = b.dim();
            let domain = match &named.domain_box {
                Some(bounds) => domain_from(bounds)?,
                None => DomainBox::new(vec![(-2.5, 2.5); dim])?,
            };
            let diffusion = build_diffusion(named.sigma.as_ref().unwrap_or(&SigmaDescriptor::Identity), dim)?;
            SystemSpec::assemble(dim, Drift::Builtin(b), diffusion, domain, desc.clone())
        }
        SystemDescriptor::Custom(c) => {
            if c.dimension == 0 {
                return Err(DynamicsError::Inconsistent("dimension must be positive".into()));
            }
            if c.drift.len() != c.dimension {
                return Err(DynamicsError::Inconsistent(format!(
                    "drift has {} components, dimension is {}",
                    c.drift.len(),
                    c.dimension
                )));
            }
            let exprs = c
                .drift
                .iter()
                .enumerate()
                .map(|(component, s)| {
                    Expr::parse_with_dim(s, c.dimension).map_err(|source| DynamicsError::DriftParse {
                        component,
                        dim: c.dimension,
                        source,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let diffusion = build_diffusion(&c.sigma, c.dimension)?;
            SystemSpec::assemble(
                c.dimension,
                Drift::Expr(exprs),
                diffusion,
                domain_from(&c.domain_box)?,
                desc.clone(),
            )
        }
    }
}

/// Names accepted by [`SystemDescriptor::named`].
pub fn builtin_names() -> &'static [&'static str] {
    &builtin::NAMES
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_builtins_build() {
        for name in builtin_names() {
            let s = SystemSpec::builtin(name).unwrap();
            assert_eq!(s.domain().dim(), s.dim());
        }
        assert!(matches!(
            SystemSpec::builtin("nope"),
            Err(DynamicsError::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn json_shapes_roundtrip() {
        for text in [
            r#""ou1d""#,
            r#"{"name":"linear2d","params":{"a":[[-1.0,0.5],[-0.5,-1.0]]},"box":[[-3.0,3.0],[-3.0,3.0]]}"#,
            r#"{"dimension":1,"drift":["x1 - x1^3"],"sigma":"identity","box":[[-2.5,2.5]]}"#,
            r#"{"dimension":1,"drift":["-x1"],"sigma":[["sqrt(1 + x1^2)"]],"box":[[-2.0,2.0]]}"#,
        ] {
            let d: SystemDescriptor = serde_json::from_str(text).unwrap();
            let back: SystemDescriptor = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
            assert_eq!(d, back);
            SystemSpec::from_descriptor(&d).unwrap();
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = serde_json::from_str::<SystemDescriptor>(
            r#"{"dimension":1,"drift":["-x1"],"box":[[-1,1]],"drfit":[]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("drfit"));
        let err = serde_json::from_str::<SystemDescriptor>(r#"{"name":"asymdoublewell1d","params":{"tilr":0.2}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("tilr"));
    }

    #[test]
    fn dimension_consistency_checked() {
        let d: SystemDescriptor =
            serde_json::from_str(r#"{"dimension":2,"drift":["-x1"],"box":[[-1,1],[-1,1]]}"#).unwrap();
        assert!(matches!(SystemSpec::from_descriptor(&d), Err(DynamicsError::Inconsistent(_))));
        let d: SystemDescriptor =
            serde_json::from_str(r#"{"dimension":1,"drift":["-x1"],"box":[[-1,1],[-1,1]]}"#).unwrap();
        assert!(matches!(SystemSpec::from_descriptor(&d), Err(DynamicsError::Inconsistent(_))));
        let d: SystemDescriptor =
            serde_json::from_str(r#"{"dimension":1,"drift":["-x2"],"box":[[-1,1]]}"#).unwrap();
        assert!(matches!(SystemSpec::from_descriptor(&d), Err(DynamicsError::DriftParse { .. })));
    }
}
