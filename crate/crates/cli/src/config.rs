//! Run configuration: command-line flags over `MODP_OUTPUT_DIR` over a TOML
//! config file over built-in defaults.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//! sample = 10000
//!
//! [paths]
//! table = "data/toy.csv"
//! directives = "data/toy_directives.toml"
//!
//! [model]
//! blades = 5
//! reduced_features = 15
//!
//! [train]
//! mse_epochs = 30
//! zval_epochs = 100
//!
//! [synthesis]
//! instances = 2
//! rr_p = 0.5
//!
//! [metrics]
//! pseudocount = 0.5
//! ```

use std::path::{Path, PathBuf};

use modp_core::metrics::MetricConfig;
use modp_core::privacy::DEFAULT_SAMPLE;
use modp_core::synthesis::{CellWeight, SynthesisConfig, Threshold};
use modp_core::training::{Optimizer, TrainConfig};
use serde::Deserialize;

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "MODP_OUTPUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub table: Option<PathBuf>,
    pub directives: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub synth: Option<PathBuf>,
    pub sidecar: Option<PathBuf>,
    pub spec: Option<PathBuf>,
}

impl Paths {
    fn overlay(self, top: &Paths) -> Paths {
        let pick = |a: &Option<PathBuf>, b: Option<PathBuf>| a.clone().or(b);
        Paths {
            table: pick(&top.table, self.table),
            directives: pick(&top.directives, self.directives),
            schema: pick(&top.schema, self.schema),
            data: pick(&top.data, self.data),
            model: pick(&top.model, self.model),
            synth: pick(&top.synth, self.synth),
            sidecar: pick(&top.sidecar, self.sidecar),
            spec: pick(&top.spec, self.spec),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub blades: Option<usize>,
    pub reduced_features: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: Option<usize>,
    pub mse_epochs: Option<usize>,
    pub zval_epochs: Option<usize>,
    pub optimizer: Option<Optimizer>,
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub pseudocount_loss: Option<f64>,
    pub variance_floor: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisSection {
    pub instances: Option<u32>,
    pub threshold_quantile: Option<f64>,
    pub threshold_value: Option<f64>,
    pub cell_weight: Option<CellWeight>,
    pub rr_p: Option<f64>,
    pub fix_structural_zeros: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    pub pseudocount: Option<f64>,
    pub d0: Option<f64>,
    pub z0: Option<f64>,
    pub variance_floor: Option<f64>,
}

/// One layer of settings; every field is optional so layers can be stacked.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub sample: Option<usize>,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub synthesis: SynthesisSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl Layer {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

/// Fully resolved settings of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub sample: usize,
    pub paths: Paths,
    pub blades: usize,
    pub reduced_features: usize,
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    pub metrics: MetricConfig,
}

impl RunConfig {
    /// `flags` beats `env_output_dir` beats `file` beats defaults.
    pub fn resolve(flags: &Layer, env_output_dir: Option<PathBuf>, file: &Layer) -> Result<Self, CliError> {
        macro_rules! pick {
            ($($f:ident).+) => {
                flags.$($f).+.clone().or_else(|| file.$($f).+.clone())
            };
        }
        let seed = pick!(seed).unwrap_or(0);
        let output_dir = flags
            .output_dir
            .clone()
            .or(env_output_dir)
            .or_else(|| file.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));

        let t = TrainConfig::default();
        let train = TrainConfig {
            batch_size: pick!(train.batch_size).unwrap_or(t.batch_size),
            mse_epochs: pick!(train.mse_epochs).unwrap_or(t.mse_epochs),
            zval_epochs: pick!(train.zval_epochs).unwrap_or(t.zval_epochs),
            optimizer: pick!(train.optimizer).unwrap_or(t.optimizer),
            learning_rate: pick!(train.learning_rate).unwrap_or(t.learning_rate),
            beta1: pick!(train.beta1).unwrap_or(t.beta1),
            beta2: pick!(train.beta2).unwrap_or(t.beta2),
            epsilon: pick!(train.epsilon).unwrap_or(t.epsilon),
            seed,
            pseudocount_loss: pick!(train.pseudocount_loss).unwrap_or(t.pseudocount_loss),
            variance_floor: pick!(train.variance_floor).unwrap_or(t.variance_floor),
        };
        train.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let m = MetricConfig::default();
        let metrics = MetricConfig {
            pseudocount: pick!(metrics.pseudocount).unwrap_or(m.pseudocount),
            d0: pick!(metrics.d0).unwrap_or(m.d0),
            z0: pick!(metrics.z0).unwrap_or(m.z0),
            variance_floor: pick!(metrics.variance_floor).unwrap_or(m.variance_floor),
        };
        metrics.validate().map_err(|e| CliError::Usage(e.to_string()))?;

        let s = SynthesisConfig::default();
        let threshold = match (pick!(synthesis.threshold_quantile), pick!(synthesis.threshold_value)) {
            (Some(_), Some(_)) => {
                return Err(CliError::Usage("give a threshold quantile or a threshold value, not both".into()));
            }
            (Some(q), None) if (0.0..=1.0).contains(&q) => Threshold::Quantile(q),
            (Some(q), None) => return Err(CliError::Usage(format!("threshold quantile {q} is outside [0, 1]"))),
            (None, Some(v)) => Threshold::Value(v),
            (None, None) => s.threshold,
        };
        let synthesis = SynthesisConfig {
            seed,
            instances: pick!(synthesis.instances).unwrap_or(s.instances),
            threshold,
            rr_p: pick!(synthesis.rr_p).or(s.rr_p),
            fix_structural_zeros: pick!(synthesis.fix_structural_zeros).unwrap_or(s.fix_structural_zeros),
            pseudocount: metrics.pseudocount,
            cell_weight: pick!(synthesis.cell_weight).unwrap_or(s.cell_weight),
        };
        if !(1..=2).contains(&synthesis.instances) {
            return Err(CliError::Usage(format!("instances must be 1 or 2, got {}", synthesis.instances)));
        }
        if let Some(p) = synthesis.rr_p {
            if !(0.0..=1.0).contains(&p) {
                return Err(CliError::Usage(format!("randomized-response probability {p} is outside [0, 1]")));
            }
        }

        let blades = pick!(model.blades).unwrap_or(5);
        let reduced_features = pick!(model.reduced_features).unwrap_or(15);
        if blades == 0 || reduced_features == 0 {
            return Err(CliError::Usage("blades and reduced features must be positive".into()));
        }

        Ok(RunConfig {
            seed,
            output_dir,
            sample: pick!(sample).unwrap_or(DEFAULT_SAMPLE),
            paths: file.paths.clone().overlay(&flags.paths),
            blades,
            reduced_features,
            train,
            synthesis,
            metrics,
        })
    }

    /// The configured input path, checked to exist.
    pub fn input(&self, path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        let p = path
            .clone()
            .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or [paths] entry)")))?;
        if !p.exists() {
            return Err(CliError::Usage(format!("{what} {} does not exist", p.display())));
        }
        Ok(p)
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::resolve(&Layer::default(), None, &Layer::default()).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.output_dir, PathBuf::from("."));
        assert_eq!((c.blades, c.reduced_features), (5, 15));
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.synthesis, SynthesisConfig::default());
        assert_eq!(c.metrics, MetricConfig::default());
        assert_eq!(c.sample, DEFAULT_SAMPLE);
    }

    #[test]
    fn precedence() {
        let file = Layer::parse(
            "seed = 3\noutput_dir = \"from_file\"\n[train]\nmse_epochs = 4\nzval_epochs = 9\n\
             [metrics]\nd0 = 0.2\n[paths]\ndata = \"file.modp\"\nmodel = \"file.ckpt\"\n",
        )
        .unwrap();
        let mut flags = Layer::default();
        flags.train.mse_epochs = Some(1);
        flags.paths.data = Some("flag.modp".into());

        let c = RunConfig::resolve(&flags, None, &file).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.synthesis.seed, 3);
        assert_eq!((c.train.mse_epochs, c.train.zval_epochs), (1, 9));
        assert_eq!(c.metrics.d0, 0.2);
        assert_eq!(c.output_dir, PathBuf::from("from_file"));
        assert_eq!(c.paths.data, Some("flag.modp".into()));
        assert_eq!(c.paths.model, Some("file.ckpt".into()));

        let c = RunConfig::resolve(&flags, Some("from_env".into()), &file).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from_env"));
        flags.output_dir = Some("from_flag".into());
        let c = RunConfig::resolve(&flags, Some("from_env".into()), &file).unwrap();
        assert_eq!(c.output_dir, PathBuf::from("from_flag"));
    }

    #[test]
    fn synthesis_settings() {
        let file = Layer::parse("[synthesis]\ninstances = 2\ncell_weight = \"abs\"\nthreshold_value = 1.5\n[metrics]\npseudocount = 0.25\n").unwrap();
        let c = RunConfig::resolve(&Layer::default(), None, &file).unwrap();
        assert_eq!(c.synthesis.instances, 2);
        assert_eq!(c.synthesis.cell_weight, CellWeight::Abs);
        assert_eq!(c.synthesis.threshold, Threshold::Value(1.5));
        assert_eq!(c.synthesis.pseudocount, 0.25);

        let mut flags = Layer::default();
        flags.synthesis.threshold_quantile = Some(0.5);
        assert!(matches!(RunConfig::resolve(&flags, None, &file), Err(CliError::Usage(_))));
    }

    #[test]
    fn rejects_bad_settings() {
        assert!(Layer::parse("bogus = 1\n").is_err());
        assert!(Layer::parse("[train]\nlr = 1\n").is_err());
        for text in [
            "[synthesis]\ninstances = 3\n",
            "[synthesis]\nrr_p = 1.5\n",
            "[synthesis]\nthreshold_quantile = 2.0\n",
            "[model]\nblades = 0\n",
            "[train]\nbatch_size = 0\n",
            "[metrics]\nd0 = -1.0\n",
        ] {
            let file = Layer::parse(text).unwrap();
            assert!(RunConfig::resolve(&Layer::default(), None, &file).is_err(), "{text}");
        }
    }

    #[test]
    fn missing_inputs_are_usage_errors() {
        let c = RunConfig::resolve(&Layer::default(), None, &Layer::default()).unwrap();
        assert!(matches!(c.input(&None, "matrix"), Err(CliError::Usage(_))));
        assert!(matches!(c.input(&Some("/no/such/file".into()), "matrix"), Err(CliError::Usage(_))));
    }
}
