//! Line-based run configuration: `[section]` headers, `key = value` pairs,
//! `#` comments, UTF-8. Unknown sections or keys are hard errors; the fully
//! merged config is echoed into every report.

use crate::attack::latent::AttackConfig;
use crate::attack::nes::NesConfig;
use crate::classifier::model::ClassifierConfig;
use crate::error::{Error, Result};
use crate::flow::model::FlowConfig;
use crate::flow::train::FlowTrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub n: usize,
    pub classes: usize,
    pub size: usize,
    pub noise_std: f32,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n: 2500,
            classes: 3,
            size: 8,
            noise_std: 0.08,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoConfig {
    pub out_dir: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            out_dir: "out".into(),
        }
    }
}

/// The effective, defaults-merged configuration of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunConfig {
    pub flow: FlowSection,
    pub classifier: ClassifierConfig,
    pub attack: AttackSection,
    pub data: DataConfig,
    pub io: IoConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSection {
    #[serde(flatten)]
    pub model: FlowConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f32,
    pub lr_final: f32,
}

impl Default for FlowSection {
    fn default() -> Self {
        let t = FlowTrainConfig::default();
        FlowSection {
            model: FlowConfig::default(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr_initial: t.lr_initial,
            lr_final: t.lr_final,
        }
    }
}

impl FlowSection {
    pub fn train_config(&self, seed: u64) -> FlowTrainConfig {
        FlowTrainConfig {
            flow: self.model.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_initial: self.lr_initial,
            lr_final: self.lr_final,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSection {
    pub flow: AttackConfig,
    pub nes: NesConfig,
    pub pgd_steps: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            flow: AttackConfig::default(),
            nes: NesConfig::vanilla(),
            pgd_steps: crate::classifier::pgd::DEFAULT_PGD_STEPS,
        }
    }
}

fn parse_err(line_no: usize, message: impl Into<String>) -> Error {
    Error::Config(format!("line {line_no}: {}", message.into()))
}

macro_rules! set_num {
    ($field:expr, $value:expr, $line:expr) => {
        $field = $value
            .parse()
            .map_err(|e| parse_err($line, format!("invalid value {:?}: {e}", $value)))?
    };
}

impl RunConfig {
    /// Parses the config text over the documented defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| parse_err(line_no, "unterminated section header"))?
                    .trim();
                match name {
                    "flow" | "classifier" | "attack" | "data" | "io" => {
                        section = name.to_string();
                    }
                    other => return Err(parse_err(line_no, format!("unknown section [{other}]"))),
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(parse_err(line_no, "key before any [section] header"));
            }
            cfg.apply(&section, key, value, line_no)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        RunConfig::parse(&text)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str, line: usize) -> Result<()> {
        match (section, key) {
            ("flow", "height") => set_num!(self.flow.model.height, value, line),
            ("flow", "width") => set_num!(self.flow.model.width, value, line),
            ("flow", "hidden_width") => set_num!(self.flow.model.hidden_width, value, line),
            ("flow", "hidden_layers") => set_num!(self.flow.model.hidden_layers, value, line),
            ("flow", "alpha") => set_num!(self.flow.model.alpha, value, line),
            ("flow", "delta") => set_num!(self.flow.model.delta, value, line),
            ("flow", "leaky_slope") => set_num!(self.flow.model.leaky_slope, value, line),
            ("flow", "hi_blocks") => set_num!(self.flow.model.hi_blocks, value, line),
            ("flow", "lo_blocks") => set_num!(self.flow.model.lo_blocks, value, line),
            ("flow", "fc_blocks") => set_num!(self.flow.model.fc_blocks, value, line),
            ("flow", "epochs") => set_num!(self.flow.epochs, value, line),
            ("flow", "batch_size") => set_num!(self.flow.batch_size, value, line),
            ("flow", "lr_initial") => set_num!(self.flow.lr_initial, value, line),
            ("flow", "lr_final") => set_num!(self.flow.lr_final, value, line),
            ("classifier", "epochs") => set_num!(self.classifier.epochs, value, line),
            ("classifier", "batch_size") => set_num!(self.classifier.batch_size, value, line),
            ("classifier", "lr") => set_num!(self.classifier.lr, value, line),
            ("classifier", "hidden") => {
                self.classifier.hidden = value
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse()
                            .map_err(|e| parse_err(line, format!("invalid hidden width: {e}")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
            }
            ("attack", "sigma") => set_num!(self.attack.flow.sigma, value, line),
            ("attack", "samples") => set_num!(self.attack.flow.samples, value, line),
            ("attack", "elites") => set_num!(self.attack.flow.elites, value, line),
            ("attack", "max_iters") => set_num!(self.attack.flow.max_iters, value, line),
            ("attack", "eps") => {
                set_num!(self.attack.flow.eps, value, line);
                self.attack.nes.eps = self.attack.flow.eps;
            }
            ("attack", "budget") => {
                set_num!(self.attack.flow.budget, value, line);
                self.attack.nes.budget = self.attack.flow.budget;
            }
            ("attack", "sigma_init") => set_num!(self.attack.flow.sigma_init, value, line),
            ("attack", "nes_sigma") => set_num!(self.attack.nes.sigma, value, line),
            ("attack", "nes_samples") => set_num!(self.attack.nes.samples, value, line),
            ("attack", "nes_lr") => set_num!(self.attack.nes.lr, value, line),
            ("attack", "pgd_steps") => set_num!(self.attack.pgd_steps, value, line),
            ("data", "n") => set_num!(self.data.n, value, line),
            ("data", "classes") => set_num!(self.data.classes, value, line),
            ("data", "size") => set_num!(self.data.size, value, line),
            ("data", "noise_std") => set_num!(self.data.noise_std, value, line),
            ("data", "train_fraction") => set_num!(self.data.train_fraction, value, line),
            ("io", "out_dir") => self.io.out_dir = value.to_string(),
            (s, k) => {
                return Err(parse_err(line, format!("unknown key {k:?} in section [{s}]")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.attack.flow.validate()?;
        self.attack.nes.validate()?;
        if !(2..=4).contains(&self.data.classes) {
            return Err(Error::Config(format!(
                "data.classes must be 2..=4, got {}",
                self.data.classes
            )));
        }
        if !(0.0 < self.data.train_fraction && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must be in (0,1)".into()));
        }
        if self.flow.epochs == 0 || self.flow.batch_size == 0 {
            return Err(Error::Config("flow epochs/batch_size must be positive".into()));
        }
        if self.attack.pgd_steps == 0 {
            return Err(Error::Config("attack.pgd_steps must be positive".into()));
        }
        Ok(())
    }
}
