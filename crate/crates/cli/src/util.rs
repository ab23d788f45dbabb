//! Flag/config-file resolution and deterministic parallel execution.

use hofmn_core::error::{Error, Result};
use hofmn_core::{fmn_run_sample, AttackConfig, AttackResult, Dataset, Model};
use serde_json::Value;

/// Values from an optional JSON config file; flags override file values,
/// file values override defaults.
pub struct FileConfig {
    doc: Value,
}

impl FileConfig {
    pub fn load(path: Option<&std::path::Path>) -> Result<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Parse(format!("config file {}: {e}", p.display())))?
            }
            None => Value::Null,
        };
        Ok(FileConfig { doc })
    }

    fn field(&self, key: &str) -> Option<&Value> {
        self.doc.get(key)
    }

    pub fn resolve_f64(&self, flag: Option<f64>, key: &str, default: f64) -> Result<f64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.field(key) {
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Parse(format!("config key '{key}' is not a number"))),
            None => Ok(default),
        }
    }

    pub fn resolve_usize(&self, flag: Option<usize>, key: &str, default: usize) -> Result<usize> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.field(key) {
            Some(v) => v
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Parse(format!("config key '{key}' is not an integer"))),
            None => Ok(default),
        }
    }

    pub fn resolve_u64(&self, flag: Option<u64>, key: &str, default: u64) -> Result<u64> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.field(key) {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Parse(format!("config key '{key}' is not an integer"))),
            None => Ok(default),
        }
    }

    pub fn resolve_string(
        &self,
        flag: Option<String>,
        key: &str,
        default: &str,
    ) -> Result<String> {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.field(key) {
            Some(v) => v
                .as_str()
                .map(str::to_owned)
                .ok_or_else(|| Error::Parse(format!("config key '{key}' is not a string"))),
            None => Ok(default.to_owned()),
        }
    }
}

/// Build the bounded thread pool behind `--threads`.
pub fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))
}

/// Run the attack over a batch, fanning samples out across the pool.
/// Samples are fully independent, so the result is identical to the serial
/// run regardless of thread count.
pub fn fmn_run_parallel(
    pool: &rayon::ThreadPool,
    model: &Model,
    batch: &Dataset,
    config: &AttackConfig,
) -> Result<AttackResult> {
    use rayon::prelude::*;
    config.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("attack batch must not be empty"));
    }
    let per_sample = pool.install(|| {
        batch
            .samples()
            .par_iter()
            .enumerate()
            .map(|(i, s)| fmn_run_sample(model, i, &s.x, s.y, config))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(AttackResult { per_sample })
}

/// Parse an epsilon grid: either `lo:hi:count` (inclusive endpoints) or a
/// comma-separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("grid value '{s}': {e}")))
    };
    let grid: Vec<f64> = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parse("grid spec must be lo:hi:count or a comma list".into()));
        }
        let lo = parse(parts[0])?;
        let hi = parse(parts[1])?;
        let count: usize = parts[2]
            .parse()
            .map_err(|e| Error::Parse(format!("grid count: {e}")))?;
        if count < 2 || lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Parse("grid needs lo < hi and count >= 2".into()));
        }
        (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect()
    } else {
        spec.split(',').map(parse).collect::<Result<Vec<f64>>>()?
    };
    if grid.is_empty() {
        return Err(Error::Parse("empty epsilon grid".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parse("epsilon grid must be ascending".into()));
    }
    Ok(grid)
}

/// Parse `name=value` hyperparameter assignments.
pub fn parse_hypers(specs: &[String]) -> Result<std::collections::BTreeMap<String, f64>> {
    let mut map = std::collections::BTreeMap::new();
    for spec in specs {
        for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("hyperparameter '{item}' is not name=value")))?;
            let value = v
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("hyperparameter '{k}': {e}")))?;
            map.insert(k.trim().to_owned(), value);
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_specs_parse() {
        assert_eq!(parse_grid("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_grid("0.1,0.2,0.5").unwrap(), vec![0.1, 0.2, 0.5]);
        assert!(parse_grid("1:0:3").is_err());
        assert!(parse_grid("0.2,0.1").is_err());
    }

    #[test]
    fn hyper_specs_parse() {
        let m = parse_hypers(&["gamma=0.5,mu=0.1".into(), "lambda=0.02".into()]).unwrap();
        assert_eq!(m["gamma"], 0.5);
        assert_eq!(m["mu"], 0.1);
        assert_eq!(m["lambda"], 0.02);
        assert!(parse_hypers(&["oops".into()]).is_err());
    }
}
