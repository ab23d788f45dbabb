//! Hyperparameter search spaces and their unit-cube encoding.
//!
//! Free parameters (ranges and choices) map onto `[0,1]^D` in declaration
//! order: linear ranges affinely, logarithmic ranges through log space, and
//! choices ordinally with nearest-value rounding on decode. Fixed
//! parameters never enter the cube.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum ParamSpec {
    Range {
        name: String,
        low: f64,
        high: f64,
        log: bool,
    },
    Choice {
        name: String,
        values: Vec<f64>,
    },
    Fixed {
        name: String,
        value: f64,
    },
}

impl ParamSpec {
    pub fn name(&self) -> &str {
        match self {
            ParamSpec::Range { name, .. }
            | ParamSpec::Choice { name, .. }
            | ParamSpec::Fixed { name, .. } => name,
        }
    }

    fn is_free(&self) -> bool {
        !matches!(self, ParamSpec::Fixed { .. })
    }

    fn validate(&self) -> Result<()> {
        match self {
            ParamSpec::Range { name, low, high, log } => {
                if low.is_nan() || high.is_nan() || low >= high {
                    return Err(Error::invalid(format!("{name}: low must be below high")));
                }
                if *log && (low.is_nan() || *low <= 0.0) {
                    return Err(Error::invalid(format!(
                        "{name}: logarithmic range requires a positive lower bound"
                    )));
                }
                Ok(())
            }
            ParamSpec::Choice { name, values } => {
                if values.is_empty() {
                    return Err(Error::invalid(format!("{name}: empty choice set")));
                }
                Ok(())
            }
            ParamSpec::Fixed { .. } => Ok(()),
        }
    }
}

/// One point of a search space: decoded values by name plus its image in
/// the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperPoint {
    pub values: BTreeMap<String, f64>,
    pub unit: Vec<f64>,
}

impl HyperPoint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let mut names: Vec<&str> = params.iter().map(|p| p.name()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != params.len() {
            return Err(Error::invalid("duplicate parameter names in search space"));
        }
        for p in &params {
            p.validate()?;
        }
        Ok(SearchSpace { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    /// Number of free (range or choice) parameters.
    pub fn free_dims(&self) -> usize {
        self.params.iter().filter(|p| p.is_free()).count()
    }

    pub fn free_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.is_free())
            .map(|p| p.name())
            .collect()
    }

    /// Fixed parameters and their pinned values.
    pub fn fixed_values(&self) -> BTreeMap<String, f64> {
        self.params
            .iter()
            .filter_map(|p| match p {
                ParamSpec::Fixed { name, value } => Some((name.clone(), *value)),
                _ => None,
            })
            .collect()
    }

    /// Decode a unit-cube point into named parameter values.
    pub fn decode(&self, unit: &[f64]) -> Result<HyperPoint> {
        if unit.len() != self.free_dims() {
            return Err(Error::DimensionMismatch {
                expected: self.free_dims(),
                got: unit.len(),
            });
        }
        if unit.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::invalid("unit coordinates must lie in [0,1]"));
        }
        let mut values = BTreeMap::new();
        let mut it = unit.iter();
        for p in &self.params {
            match p {
                ParamSpec::Range { name, low, high, log } => {
                    let u = *it.next().unwrap();
                    let v = if *log {
                        (low.ln() + u * (high.ln() - low.ln())).exp()
                    } else {
                        low + u * (high - low)
                    };
                    values.insert(name.clone(), v.clamp(*low, *high));
                }
                ParamSpec::Choice { name, values: choices } => {
                    let u = *it.next().unwrap();
                    let idx = if choices.len() == 1 {
                        0
                    } else {
                        (u * (choices.len() - 1) as f64).round() as usize
                    };
                    values.insert(name.clone(), choices[idx.min(choices.len() - 1)]);
                }
                ParamSpec::Fixed { .. } => {}
            }
        }
        Ok(HyperPoint {
            values,
            unit: unit.to_vec(),
        })
    }

    /// Encode named values onto the unit cube (inverse of `decode` on the
    /// decoded-value grid).
    pub fn encode(&self, values: &BTreeMap<String, f64>) -> Result<Vec<f64>> {
        let mut unit = Vec::with_capacity(self.free_dims());
        for p in &self.params {
            match p {
                ParamSpec::Range { name, low, high, log } => {
                    let v = *values
                        .get(name)
                        .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
                    if !(*low..=*high).contains(&v) {
                        return Err(Error::invalid(format!("{name} = {v} outside [{low}, {high}]")));
                    }
                    let u = if *log {
                        (v.ln() - low.ln()) / (high.ln() - low.ln())
                    } else {
                        (v - low) / (high - low)
                    };
                    unit.push(u.clamp(0.0, 1.0));
                }
                ParamSpec::Choice { name, values: choices } => {
                    let v = *values
                        .get(name)
                        .ok_or_else(|| Error::invalid(format!("missing parameter {name}")))?;
                    let idx = choices
                        .iter()
                        .position(|c| *c == v)
                        .ok_or_else(|| Error::invalid(format!("{name} = {v} not in choice set")))?;
                    let u = if choices.len() == 1 {
                        0.0
                    } else {
                        idx as f64 / (choices.len() - 1) as f64
                    };
                    unit.push(u);
                }
                ParamSpec::Fixed { .. } => {}
            }
        }
        Ok(unit)
    }

    /// Rebuild a full `HyperPoint` from named values.
    pub fn point_from_values(&self, values: &BTreeMap<String, f64>) -> Result<HyperPoint> {
        let unit = self.encode(values)?;
        self.decode(&unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::Range {
                name: "gamma".into(),
                low: 8.0 / 255.0,
                high: 10.0,
                log: true,
            },
            ParamSpec::Range {
                name: "mu".into(),
                low: 0.0,
                high: 0.9,
                log: false,
            },
            ParamSpec::Choice {
                name: "patience".into(),
                values: vec![2.0, 5.0, 10.0],
            },
            ParamSpec::Fixed {
                name: "threshold".into(),
                value: 1e-4,
            },
        ])
        .unwrap()
    }

    #[test]
    fn free_dims_exclude_fixed_parameters() {
        let s = space();
        assert_eq!(s.free_dims(), 3);
        assert_eq!(s.free_names(), vec!["gamma", "mu", "patience"]);
        assert_eq!(s.fixed_values().get("threshold"), Some(&1e-4));
    }

    #[test]
    fn decode_respects_bounds_and_choices() {
        let s = space();
        for u in [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0], [0.37, 0.61, 0.52]] {
            let p = s.decode(&u).unwrap();
            let g = p.get("gamma").unwrap();
            assert!((8.0 / 255.0..=10.0).contains(&g));
            let m = p.get("mu").unwrap();
            assert!((0.0..=0.9).contains(&m));
            let pat = p.get("patience").unwrap();
            assert!([2.0, 5.0, 10.0].contains(&pat));
        }
    }

    #[test]
    fn log_scale_maps_midpoint_to_geometric_mean() {
        let s = SearchSpace::new(vec![ParamSpec::Range {
            name: "lr".into(),
            low: 0.01,
            high: 100.0,
            log: true,
        }])
        .unwrap();
        let p = s.decode(&[0.5]).unwrap();
        assert!((p.get("lr").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn round_trip_on_decoded_values_is_identity() {
        let s = space();
        for u in [[0.0, 0.5, 0.9], [0.99, 0.01, 0.26], [1.0, 1.0, 1.0]] {
            let p = s.decode(&u).unwrap();
            let back = s.point_from_values(&p.values).unwrap();
            assert_eq!(back.values, p.values, "decode/encode fixed point violated");
            // Choices snap to their grid: re-encoding reproduces the value.
            let again = s.decode(&back.unit).unwrap();
            assert_eq!(again.values, p.values);
        }
    }

    #[test]
    fn choice_rounding_has_fixed_points() {
        let s = space();
        for v in [2.0, 5.0, 10.0] {
            let mut values = s.decode(&[0.5, 0.5, 0.5]).unwrap().values;
            values.insert("patience".into(), v);
            let p = s.point_from_values(&values).unwrap();
            assert_eq!(p.get("patience"), Some(v));
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(SearchSpace::new(vec![ParamSpec::Range {
            name: "a".into(),
            low: 1.0,
            high: 1.0,
            log: false,
        }])
        .is_err());
        assert!(SearchSpace::new(vec![ParamSpec::Range {
            name: "a".into(),
            low: 0.0,
            high: 1.0,
            log: true,
        }])
        .is_err());
        assert!(SearchSpace::new(vec![ParamSpec::Choice {
            name: "a".into(),
            values: vec![],
        }])
        .is_err());
    }
}
