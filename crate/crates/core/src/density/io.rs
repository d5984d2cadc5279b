//! Density serialization: a small JSON object and a CSV export for plotting.

use serde_json::{json, Map, Value};

use super::repr::{Atom, Cell};
use super::{Density, DensityError, Range};
use crate::scalar::Real;

impl<F: Real> Range<F> {
    pub fn to_json(&self) -> Value {
        match self {
            Range::Categorical { labels } => json!({ "kind": "categorical", "labels": labels }),
            Range::Ordinal { labels } => json!({ "kind": "ordinal", "labels": labels }),
            Range::Cardinal { lower, upper, unit } => json!({
                "kind": "cardinal",
                "lower": lower.as_f64(),
                "upper": upper.as_f64(),
                "unit": unit,
            }),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, DensityError> {
        let kind = v
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| DensityError::BadEncoding("range kind missing".into()))?;
        match kind {
            "categorical" | "ordinal" => {
                let labels: Vec<String> = v
                    .get("labels")
                    .and_then(Value::as_array)
                    .ok_or_else(|| DensityError::BadEncoding("labels missing".into()))?
                    .iter()
                    .map(|l| l.as_str().map(str::to_string))
                    .collect::<Option<_>>()
                    .ok_or_else(|| DensityError::BadEncoding("labels must be strings".into()))?;
                if kind == "categorical" {
                    Range::categorical(labels)
                } else {
                    Range::ordinal(labels)
                }
            }
            "cardinal" => {
                let num = |k: &str| {
                    v.get(k)
                        .and_then(Value::as_f64)
                        .ok_or_else(|| DensityError::BadEncoding(format!("{k} missing")))
                };
                let unit = v.get("unit").and_then(Value::as_str).unwrap_or("");
                Range::cardinal(F::of(num("lower")?), F::of(num("upper")?), unit)
            }
            other => Err(DensityError::BadEncoding(format!("unknown range kind `{other}`"))),
        }
    }
}

impl<F: Real> Density<F> {
    /// JSON object `{range, atoms, pieces}` or `{range, pmf}`.
    pub fn to_json(&self) -> Value {
        if self.is_discrete() {
            let mut pmf = Map::new();
            for (label, p) in self.pmf_pairs() {
                pmf.insert(label.to_string(), json!(p.as_f64()));
            }
            json!({ "range": self.range().to_json(), "pmf": pmf })
        } else {
            let atoms: Vec<Value> =
                self.atoms().iter().map(|a| json!([a.at.as_f64(), a.mass.as_f64()])).collect();
            let pieces: Vec<Value> = self
                .pieces()
                .iter()
                .map(|c| json!([c.lo.as_f64(), c.hi.as_f64(), c.height.as_f64()]))
                .collect();
            json!({ "range": self.range().to_json(), "atoms": atoms, "pieces": pieces })
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, DensityError> {
        let range = Range::from_json(
            v.get("range").ok_or_else(|| DensityError::BadEncoding("range missing".into()))?,
        )?;
        if let Some(pmf) = v.get("pmf") {
            let map = pmf
                .as_object()
                .ok_or_else(|| DensityError::BadEncoding("pmf must be an object".into()))?;
            let mut weights: Vec<(String, F)> = Vec::with_capacity(map.len());
            for (label, p) in map {
                let p = p
                    .as_f64()
                    .ok_or_else(|| DensityError::BadEncoding("pmf value must be a number".into()))?;
                weights.push((label.clone(), F::of(p)));
            }
            return Density::pmf(&weights, &range);
        }
        let triples = |key: &str| -> Result<Vec<Vec<f64>>, DensityError> {
            match v.get(key) {
                None => Ok(vec![]),
                Some(arr) => arr
                    .as_array()
                    .ok_or_else(|| DensityError::BadEncoding(format!("{key} must be an array")))?
                    .iter()
                    .map(|row| {
                        row.as_array()
                            .map(|xs| xs.iter().filter_map(Value::as_f64).collect::<Vec<f64>>())
                            .ok_or_else(|| DensityError::BadEncoding(format!("bad {key} row")))
                    })
                    .collect(),
            }
        };
        let atoms = triples("atoms")?
            .into_iter()
            .map(|row| {
                if row.len() != 2 {
                    return Err(DensityError::BadEncoding("atom rows are [at, mass]".into()));
                }
                Ok(Atom { at: F::of(row[0]), mass: F::of(row[1]) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let pieces = triples("pieces")?
            .into_iter()
            .map(|row| {
                if row.len() != 3 {
                    return Err(DensityError::BadEncoding("piece rows are [lo, hi, height]".into()));
                }
                Ok(Cell { lo: F::of(row[0]), hi: F::of(row[1]), height: F::of(row[2]) })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let d = Density::from_parts(&range, atoms, pieces)?;
        d.validate()?;
        Ok(d)
    }

    /// CSV rows for plotting: `x,pdf,cdf` sampled at `resolution` cells for
    /// cardinal densities, `label,probability,cumulative` for discrete ones.
    pub fn to_csv(&self, resolution: usize) -> String {
        let mut out = String::new();
        if self.is_discrete() {
            out.push_str("label,probability,cumulative\n");
            let mut cum = 0.0;
            for (label, p) in self.pmf_pairs() {
                cum += p.as_f64();
                out.push_str(&format!("{label},{:.9},{:.9}\n", p.as_f64(), cum));
            }
        } else {
            out.push_str("x,pdf,cdf\n");
            let (lo, hi) = self.range().bounds();
            let n = resolution.max(1);
            for i in 0..=n {
                let t = F::from_usize(i).unwrap() / F::from_usize(n).unwrap();
                let x = lo + (hi - lo) * t;
                out.push_str(&format!(
                    "{:.9},{:.9},{:.9}\n",
                    x.as_f64(),
                    self.height_at(x).as_f64(),
                    self.cdf(x).as_f64()
                ));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_continuous() {
        let range = Range::cardinal(1.0, 300.0, "kg").unwrap();
        let d = Density::from_parts(
            &range,
            vec![Atom { at: 70.0, mass: 0.5 }],
            vec![Cell { lo: 60.0, hi: 80.0, height: 0.025 }],
        )
        .unwrap();
        let v = d.to_json();
        assert_eq!(v["range"]["unit"], "kg");
        let back: Density<f64> = Density::from_json(&v).unwrap();
        assert!(back.approx_eq(&d, 1e-12));
    }

    #[test]
    fn json_roundtrip_discrete() {
        let range = Range::ordinal(["decreasing", "stable", "increasing"]).unwrap();
        let d = Density::pmf(&[("stable", 3.0), ("increasing", 1.0)], &range).unwrap();
        let v = d.to_json();
        let back: Density<f64> = Density::from_json(&v).unwrap();
        assert_eq!(back, d);
        // label order is preserved in the pmf object
        let keys: Vec<&String> = v["pmf"].as_object().unwrap().keys().collect();
        assert_eq!(keys, ["decreasing", "stable", "increasing"]);
    }

    #[test]
    fn csv_has_header_and_monotone_cdf() {
        let range = Range::cardinal(0.0, 10.0, "u").unwrap();
        let d = Density::uniform(2.0, 4.0, &range).unwrap();
        let csv = d.to_csv(16);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,pdf,cdf"));
        let cdfs: Vec<f64> = lines
            .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
            .collect();
        assert_eq!(cdfs.len(), 17);
        assert!(cdfs.windows(2).all(|w| w[0] <= w[1]));
        assert!((cdfs[16] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_encodings_are_rejected() {
        assert!(Density::<f64>::from_json(&serde_json::json!({})).is_err());
        let v = serde_json::json!({
            "range": {"kind": "cardinal", "lower": 0.0, "upper": 1.0, "unit": ""},
            "atoms": [[0.5]],
        });
        assert!(Density::<f64>::from_json(&v).is_err());
    }
}
