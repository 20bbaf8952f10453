//! Threshold overrides. Values are plain numbers in SI units or strings with
//! an explicit unit, e.g. `"15 km/h"`, `"4.2 m/s"`, `"14 m"`, `"2.3 s"`.

use anyhow::{anyhow, bail, Context, Result};
use roadlaw_core::model::kmh;
use roadlaw_core::LawThresholds;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Speed,
    Distance,
    Time,
}

fn dim_of(key: &str) -> Option<Dim> {
    Some(match key {
        "dv_ot" | "follow_speed_break" | "lat_intent_speed" => Dim::Speed,
        "d_clmin" | "follow_dist_fast" | "follow_dist_slow" | "hysteresis_d" => Dim::Distance,
        "ttcx_min" | "t_max_cl" | "ttc_overtake" => Dim::Time,
        _ => return None,
    })
}

/// Parses `"<number> [unit]"` into SI units for the given key.
pub fn parse_quantity(key: &str, text: &str) -> Result<f64> {
    let dim = dim_of(key).ok_or_else(|| anyhow!("unknown threshold `{key}`"))?;
    let text = text.trim();
    let split = text.find(|c: char| c.is_ascii_alphabetic()).unwrap_or(text.len());
    let (num, unit) = text.split_at(split);
    let v: f64 = num.trim().parse().with_context(|| format!("`{key}`: cannot read a number from `{text}`"))?;
    let v = match (dim, unit.trim().to_ascii_lowercase().as_str()) {
        (_, "") => v,
        (Dim::Speed, "km/h" | "kmh" | "kph") => kmh(v),
        (Dim::Speed, "m/s") => v,
        (Dim::Distance, "m") => v,
        (Dim::Distance, "km") => v * 1000.0,
        (Dim::Time, "s") => v,
        (Dim::Time, "ms") => v / 1000.0,
        (_, u) => bail!("`{key}`: unit `{u}` does not fit this threshold"),
    };
    Ok(v)
}

fn value_to_si(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Number(n) => {
            dim_of(key).ok_or_else(|| anyhow!("unknown threshold `{key}`"))?;
            n.as_f64().ok_or_else(|| anyhow!("`{key}`: not a finite number"))
        }
        Value::String(s) => parse_quantity(key, s),
        _ => bail!("`{key}`: expected a number or a string with a unit"),
    }
}

/// Applies the overrides of a JSON object over `base`.
pub fn merge_json(base: LawThresholds, obj: &Map<String, Value>) -> Result<LawThresholds> {
    let pairs = obj.iter().map(|(k, v)| Ok((k.clone(), value_to_si(k, v)?))).collect::<Result<Vec<_>>>()?;
    merge(base, &pairs)
}

/// Applies `key=value` overrides.
pub fn merge_assignments(base: LawThresholds, sets: &[String]) -> Result<LawThresholds> {
    let pairs = sets
        .iter()
        .map(|s| {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("expected key=value, got `{s}`"))?;
            Ok((k.trim().to_string(), parse_quantity(k.trim(), v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    merge(base, &pairs)
}

fn merge(base: LawThresholds, pairs: &[(String, f64)]) -> Result<LawThresholds> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("thresholds serialize to an object");
    for (k, x) in pairs {
        obj.insert(k.clone(), Value::from(*x));
    }
    let th: LawThresholds = serde_json::from_value(v)?;
    th.validate()?;
    Ok(th)
}

/// Reads a thresholds file (JSON object) and applies it over `base`.
pub fn load_file(base: LawThresholds, path: &std::path::Path) -> Result<LawThresholds> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?;
    let obj = v.as_object().ok_or_else(|| anyhow!("{}: expected a JSON object", path.display()))?;
    merge_json(base, obj).with_context(|| format!("{}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units() {
        assert_eq!(parse_quantity("dv_ot", "15").unwrap(), 15.0);
        assert!((parse_quantity("dv_ot", "54 km/h").unwrap() - 15.0).abs() < 1e-12);
        assert_eq!(parse_quantity("dv_ot", "4.2 m/s").unwrap(), 4.2);
        assert_eq!(parse_quantity("d_clmin", "20m").unwrap(), 20.0);
        assert_eq!(parse_quantity("t_max_cl", "500 ms").unwrap(), 0.5);
        assert!(parse_quantity("d_clmin", "20 km/h").is_err());
        assert!(parse_quantity("nope", "1").is_err());
        assert!(parse_quantity("dv_ot", "fast").is_err());
    }

    #[test]
    fn merge_keeps_the_rest() {
        let obj: Map<String, Value> = serde_json::from_str(r#"{"dv_ot": "36 km/h", "d_clmin": 20}"#).unwrap();
        let th = merge_json(LawThresholds::default(), &obj).unwrap();
        assert!((th.dv_ot - 10.0).abs() < 1e-12);
        assert_eq!(th.d_clmin, 20.0);
        assert_eq!(th.ttcx_min, LawThresholds::default().ttcx_min);
    }

    #[test]
    fn invalid_results_are_rejected() {
        assert!(merge_assignments(LawThresholds::default(), &["d_clmin=-1".into()]).is_err());
        assert!(merge_assignments(LawThresholds::default(), &["d_clmin".into()]).is_err());
        let th = merge_assignments(LawThresholds::default(), &["ttcx_min=3 s".into()]).unwrap();
        assert_eq!(th.ttcx_min, 3.0);
    }
}
