//! Flat `key=value` configuration files with command-line overrides.
//!
//! The file format is a plain text list of `key=value` lines; `#` starts a
//! comment and blank lines are ignored, so it parses with a dozen lines of
//! code in any language. Recognized keys (all optional, overridable by the
//! matching command-line flags):
//!
//! ```text
//! example      1 | 2 | 3
//! method       nmc | md | ld
//! epsilon      noise strength
//! delta        time-scale separation
//! h_exponent   a in h(eps) = eps^-a
//! d            diffusivity D
//! t_final      horizon T
//! x0, y0       initial state
//! gamma        terminal-cost center override
//! n_samples    trajectories per estimate
//! seed         base RNG seed
//! workers      worker thread count
//! variant      general | exact (subsolution form)
//! out          CSV output path
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use mdis_core::control::SubsolutionVariant;
use mdis_core::experiment::{ExampleId, ExperimentSpec, Method};

use crate::CliError;

/// Parsed `key=value` file (keys lower-cased).
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Validation(format!(
                    "config line {}: expected `key=value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            values.insert(key.trim().to_lowercase(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {path:?}: {e}")))?;
        Self::parse(&text)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|e| {
                CliError::Validation(format!("config key `{key}`: cannot parse `{raw}`: {e}"))
            }),
        }
    }
}

/// Everything `run` needs, before defaults are applied.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub example: Option<ExampleId>,
    pub method: Option<Method>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub h_exponent: Option<f64>,
    pub d: Option<f64>,
    pub t_final: Option<f64>,
    pub x0: Option<f64>,
    pub y0: Option<f64>,
    pub gamma: Option<f64>,
    pub n_samples: Option<u64>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub variant: Option<SubsolutionVariant>,
    pub out: Option<String>,
    pub paper_scale: bool,
}

pub fn parse_variant(s: &str) -> Result<SubsolutionVariant, CliError> {
    match s {
        "general" => Ok(SubsolutionVariant::General),
        "exact" => Ok(SubsolutionVariant::ExactConstantC),
        other => Err(CliError::Validation(format!(
            "unknown subsolution variant `{other}` (expected general or exact)"
        ))),
    }
}

impl RunOverrides {
    /// Fills unset fields from a config file.
    pub fn absorb_config(&mut self, cfg: &ConfigFile) -> Result<(), CliError> {
        if self.example.is_none() {
            if let Some(raw) = cfg.get("example") {
                self.example = Some(raw.parse().map_err(cli_validation)?);
            }
        }
        if self.method.is_none() {
            if let Some(raw) = cfg.get("method") {
                self.method = Some(raw.parse().map_err(cli_validation)?);
            }
        }
        if self.variant.is_none() {
            if let Some(raw) = cfg.get("variant") {
                self.variant = Some(parse_variant(raw)?);
            }
        }
        if self.out.is_none() {
            self.out = cfg.get("out").map(|s| s.to_string());
        }
        macro_rules! fill {
            ($field:ident, $key:literal) => {
                if self.$field.is_none() {
                    self.$field = cfg.parse_value($key)?;
                }
            };
        }
        fill!(epsilon, "epsilon");
        fill!(delta, "delta");
        fill!(h_exponent, "h_exponent");
        fill!(d, "d");
        fill!(t_final, "t_final");
        fill!(x0, "x0");
        fill!(y0, "y0");
        fill!(gamma, "gamma");
        fill!(n_samples, "n_samples");
        fill!(seed, "seed");
        fill!(workers, "workers");
        Ok(())
    }

    /// Resolves into a full experiment spec, applying study defaults and the
    /// desk-scale sample count unless `--paper-scale` or an explicit
    /// `n_samples` was given.
    pub fn into_spec(self) -> Result<ExperimentSpec, CliError> {
        let example = self
            .example
            .ok_or_else(|| CliError::Validation("missing --example".into()))?;
        let method = self
            .method
            .ok_or_else(|| CliError::Validation("missing --method".into()))?;
        let epsilon = self
            .epsilon
            .ok_or_else(|| CliError::Validation("missing --epsilon".into()))?;
        let delta = self
            .delta
            .ok_or_else(|| CliError::Validation("missing --delta".into()))?;
        let mut spec = ExperimentSpec::defaults(example, method, epsilon, delta);
        if !self.paper_scale {
            // Desk scale: a tenth of the published trajectory counts keeps a
            // full table in the minutes range.
            spec.n_samples /= 10;
        }
        if let Some(v) = self.h_exponent {
            spec.h_exponent = v;
        }
        if let Some(v) = self.d {
            spec.d = v;
        }
        if let Some(v) = self.t_final {
            spec.t_end = v;
        }
        if let Some(v) = self.x0 {
            spec.x0 = v;
        }
        if let Some(v) = self.y0 {
            spec.y0 = v;
        }
        if let Some(v) = self.gamma {
            spec.gamma_target = Some(v);
        }
        if let Some(v) = self.n_samples {
            spec.n_samples = v;
        }
        if let Some(v) = self.seed {
            spec.base_seed = v;
        }
        if let Some(v) = self.workers {
            spec.workers = v;
        }
        spec.variant = self.variant;
        Ok(spec)
    }
}

fn cli_validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

/// Parses a rows file: one `(epsilon, delta)` pair per line, separated by
/// whitespace or a comma; `#` comments.
pub fn parse_rows(text: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|p| !p.is_empty())
            .collect();
        if parts.len() != 2 {
            return Err(CliError::Validation(format!(
                "rows line {}: expected `epsilon delta`, got `{line}`",
                lineno + 1
            )));
        }
        let eps: f64 = parts[0]
            .parse()
            .map_err(|e| CliError::Validation(format!("rows line {}: {e}", lineno + 1)))?;
        let delta: f64 = parts[1]
            .parse()
            .map_err(|e| CliError::Validation(format!("rows line {}: {e}", lineno + 1)))?;
        rows.push((eps, delta));
    }
    if rows.is_empty() {
        return Err(CliError::Validation("rows file has no rows".into()));
    }
    Ok(rows)
}

/// Comma-separated method list, e.g. `nmc,md`.
pub fn parse_methods(text: &str) -> Result<Vec<Method>, CliError> {
    text.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Method>().map_err(cli_validation))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let cfg = ConfigFile::parse(
            "# a comment\nexample = 1\nmethod=md\nepsilon = 0.5\ndelta=0.5\nseed = 42\n\n",
        )
        .unwrap();
        let mut ov = RunOverrides::default();
        ov.absorb_config(&cfg).unwrap();
        let spec = ov.into_spec().unwrap();
        assert_eq!(spec.example, ExampleId::One);
        assert_eq!(spec.method, Method::Md);
        assert_eq!(spec.epsilon, 0.5);
        assert_eq!(spec.base_seed, 42);
        // desk scale by default
        assert_eq!(spec.n_samples, 250_000);
    }

    #[test]
    fn flags_override_config() {
        let cfg = ConfigFile::parse("epsilon=0.5\nseed=1").unwrap();
        let mut ov = RunOverrides {
            example: Some(ExampleId::Three),
            method: Some(Method::Ld),
            epsilon: Some(0.25),
            delta: Some(0.1),
            paper_scale: true,
            ..Default::default()
        };
        ov.absorb_config(&cfg).unwrap();
        let spec = ov.into_spec().unwrap();
        assert_eq!(spec.epsilon, 0.25); // flag wins
        assert_eq!(spec.base_seed, 1); // config fills the gap
        assert_eq!(spec.n_samples, 5_000_000); // paper scale
    }

    #[test]
    fn bad_config_lines_are_rejected() {
        assert!(ConfigFile::parse("epsilon 0.5").is_err());
        let cfg = ConfigFile::parse("epsilon=abc").unwrap();
        let mut ov = RunOverrides::default();
        assert!(ov.absorb_config(&cfg).is_err());
    }

    #[test]
    fn rows_and_methods_parsing() {
        let rows = parse_rows("# table\n0.5, 0.5\n0.3 0.3\n").unwrap();
        assert_eq!(rows, vec![(0.5, 0.5), (0.3, 0.3)]);
        assert!(parse_rows("0.5\n").is_err());
        assert!(parse_rows("\n# only comments\n").is_err());
        let methods = parse_methods("nmc, md").unwrap();
        assert_eq!(methods, vec![Method::Nmc, Method::Md]);
        assert!(parse_methods("bogus").is_err());
    }
}