//! `zero | pulse:<mag>,<t_on>,<t_off> | file:<path>`

use std::fs;

use adtsat::model::Disturbance;
use anyhow::{bail, Context, Result};

pub fn parse(spec: &str, dim: usize) -> Result<Disturbance> {
    let spec = spec.trim();
    if spec == "zero" {
        return Ok(Disturbance::zero(dim));
    }
    if let Some(rest) = spec.strip_prefix("pulse:") {
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad number {p:?} in {spec:?}")))
            .collect::<Result<_>>()?;
        let [mag, t_on, t_off] = parts[..] else {
            bail!("pulse needs three values <mag>,<t_on>,<t_off>, got {spec:?}");
        };
        return Disturbance::pulse(dim, mag, t_on, t_off).with_context(|| format!("invalid pulse {spec:?}"));
    }
    if let Some(path) = spec.strip_prefix("file:") {
        let text = fs::read_to_string(path).with_context(|| format!("reading disturbance file {path}"))?;
        let d: Disturbance =
            serde_json::from_str(&text).with_context(|| format!("parsing disturbance file {path}"))?;
        d.validate().with_context(|| format!("disturbance file {path}"))?;
        if d.dim != dim {
            bail!("disturbance file {path} has dimension {}, plant expects {dim}", d.dim);
        }
        return Ok(d);
    }
    bail!("unknown disturbance {spec:?}; expected zero, pulse:<mag>,<t_on>,<t_off> or file:<path>")
}
