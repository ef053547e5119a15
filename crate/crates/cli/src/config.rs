//! Flat TOML configuration merged under command-line flags.
//!
//! Every tunable is an `Option` in both places. A flag that is present wins,
//! otherwise the config file's value is used, otherwise the command's default.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::Deserialize;

use crate::CliError;

macro_rules! knobs {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty,)* }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Default, clap::Args, Deserialize)]
        pub struct $name {
            $($(#[$fmeta])* #[arg(long)] pub $field: Option<$ty>,)*
        }

        impl $name {
            pub fn or(self, file: &Self) -> Self {
                $name { $($field: self.$field.or_else(|| file.$field.clone()),)* }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Bucket weights summed over every record.
    Exact,
    /// Hoeffding-sized random samples; needs a seed.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    Natural,
    SingletonWeight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Only observed patterns carry values; everything else is 0.
    Projection,
    /// Unobserved patterns are answered by the network.
    Promote,
}

knobs! {
    /// Search and estimator settings.
    SearchKnobs {
        /// Acceptance threshold on the coefficient scale
        tau: f64,
        /// Acceptance threshold given as tau squared (overrides --tau)
        tau_sq: f64,
        /// Redundancy threshold in (0, 1]
        gamma: f64,
        #[arg(value_enum)]
        aggregation: Aggregation,
        /// Estimator additive error
        eta: f64,
        /// Estimator failure probability
        delta: f64,
        /// Declared bound on |f| for the sample size
        bound: f64,
        /// Fixed sample count per estimate
        samples: usize,
        /// Query mode: enumerate the free coordinates exactly up to this many
        exact_inner_max: usize,
        #[arg(value_enum)]
        order: Order,
        /// Drop variables whose singleton bucket is below threshold
        screen: bool,
        max_buckets: usize,
        /// Tune tau until about this many subsets are accepted
        target_subsets: usize,
    }
}

knobs! {
    /// Classifier training settings.
    TrainKnobs {
        /// Hidden layer widths, comma separated
        #[arg(value_delimiter = ',')]
        hidden: Vec<usize>,
        epochs: usize,
        learning_rate: f64,
        momentum: f64,
        /// Dropout rate on hidden layers while training
        dropout: f64,
    }
}

knobs! {
    /// MNIST inputs and the classifier.
    MnistKnobs {
        /// IDX image file
        images: PathBuf,
        /// IDX label file
        labels: PathBuf,
        /// The two digits to keep, e.g. 1,7
        #[arg(value_delimiter = ',')]
        digits: Vec<u8>,
        /// Classifier weights (JSON); trained from the images when absent
        net: PathBuf,
        /// Where to save a freshly trained classifier
        save_net: PathBuf,
        /// Layer whose output is analyzed (1 = first hidden layer)
        layer: usize,
        #[arg(value_enum)]
        mode: Mode,
        /// Also write the activation dataset as ABF
        abf_out: PathBuf,
    }
}

knobs! {
    /// Heatmap and hypergraph outputs.
    ExportKnobs {
        /// Hypergraph JSON
        hypergraph: PathBuf,
        /// Hypergraph DOT
        dot: PathBuf,
        heatmap_csv: PathBuf,
        heatmap_pgm: PathBuf,
        /// Heatmap row width
        width: usize,
        /// Mark only the k most important accepted variables in the heatmap
        top_k: usize,
    }
}

knobs! {
    /// Settings shared by every subcommand.
    CommonKnobs {
        /// Seed for every random choice
        #[arg(global = true)]
        seed: u64,
        /// Worker threads (default: all cores)
        #[arg(global = true)]
        threads: usize,
    }
}

/// The whole config file. Keys are the long flag names with underscores.
#[derive(Debug, Default, Deserialize)]
pub struct FileConfig {
    #[serde(flatten)]
    pub common: CommonKnobs,
    #[serde(flatten)]
    pub search: SearchKnobs,
    #[serde(flatten)]
    pub train: TrainKnobs,
    #[serde(flatten)]
    pub mnist: MnistKnobs,
    #[serde(flatten)]
    pub export: ExportKnobs,
    #[serde(flatten)]
    pub settings: SettingsKnobs,
    #[serde(flatten)]
    unknown: toml::Table,
}

knobs! {
    /// Keys used by single subcommands.
    SettingsKnobs {
        /// Dropout rates, comma separated
        #[arg(value_delimiter = ',')]
        rates: Vec<f64>,
        /// Tau squared as a fraction of the mean squared value (dropout sweep)
        tau_sq_fraction: f64,
        /// Synthetic settings, comma separated
        #[arg(value_delimiter = ',')]
        settings: Vec<String>,
        shapley_permutations: usize,
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if let Some(key) = cfg.unknown.keys().next() {
            return Err(CliError::Config(format!("{}: unknown key {key:?}", path.display())));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<FileConfig, CliError> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, text).unwrap();
        FileConfig::load(Some(&path))
    }

    #[test]
    fn flat_keys_land_in_their_groups() {
        let cfg = parse("seed = 7\ntau_sq = 0.1\nhidden = [8, 4]\nmode = \"promote\"\nrates = [0.0, 0.5]\n").unwrap();
        assert_eq!(cfg.common.seed, Some(7));
        assert_eq!(cfg.search.tau_sq, Some(0.1));
        assert_eq!(cfg.train.hidden, Some(vec![8, 4]));
        assert_eq!(cfg.mnist.mode, Some(Mode::Promote));
        assert_eq!(cfg.settings.rates, Some(vec![0.0, 0.5]));
    }

    #[test]
    fn flags_win() {
        let file = parse("gamma = 0.5\neta = 0.2\n").unwrap();
        let flags = SearchKnobs { gamma: Some(0.9), ..Default::default() };
        let merged = flags.or(&file.search);
        assert_eq!(merged.gamma, Some(0.9));
        assert_eq!(merged.eta, Some(0.2));
        assert_eq!(merged.tau, None);
    }

    #[test]
    fn bad_files() {
        assert!(matches!(parse("gama = 0.5\n"), Err(CliError::Config(_))));
        assert!(matches!(parse("gamma = \"high\"\n"), Err(CliError::Config(_))));
        assert!(matches!(parse("gamma = \n"), Err(CliError::Config(_))));
        assert!(FileConfig::load(Some(Path::new("/nonexistent/c.toml"))).is_err());
        assert!(FileConfig::load(None).unwrap().common.seed.is_none());
    }
}
