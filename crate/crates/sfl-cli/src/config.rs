//! The experiment configuration: strict TOML (unknown keys are errors),
//! with defaults matching the reference training recipes.

use serde::{Deserialize, Serialize};
use sfl_nn::UnitSpec;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub victim: VictimSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub surrogate: SurrogateSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentSection {
    pub mode: Mode,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FineTune,
    FromScratch,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::FineTune => "fine-tune",
            Mode::FromScratch => "from-scratch",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSection {
    /// Named preset; "desk6" is the 6-unit conv net.
    #[serde(default = "d_preset")]
    pub preset: String,
    /// Explicit unit list overriding the preset.
    #[serde(default)]
    pub units: Option<Vec<UnitConfig>>,
    #[serde(default = "d_n_server")]
    pub n_server: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { preset: d_preset(), units: None, n_server: d_n_server() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", tag = "kind")]
pub enum UnitConfig {
    Linear { inputs: usize, outputs: usize },
    Conv2d { in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize },
    Relu,
    MaxPool2x2,
    Flatten,
}

impl UnitConfig {
    pub fn to_unit(&self) -> UnitSpec {
        match *self {
            UnitConfig::Linear { inputs, outputs } => UnitSpec::Linear { inputs, outputs },
            UnitConfig::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                UnitSpec::Conv2d { in_ch, out_ch, kernel, stride, pad }
            }
            UnitConfig::Relu => UnitSpec::ReLU,
            UnitConfig::MaxPool2x2 => UnitSpec::MaxPool2x2,
            UnitConfig::Flatten => UnitSpec::Flatten,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DatasetSection {
    #[serde(default = "d_dataset_kind")]
    pub kind: DatasetKind,
    #[serde(default = "d_classes")]
    pub classes: usize,
    #[serde(default = "d_train_count")]
    pub train: usize,
    #[serde(default = "d_val_count")]
    pub val: usize,
    #[serde(default = "d_image_extent")]
    pub height: usize,
    #[serde(default = "d_image_extent")]
    pub width: usize,
    #[serde(default = "d_noise")]
    pub noise: f64,
    #[serde(default = "d_jitter")]
    pub jitter_deg: f64,
    /// IDX file paths (kind = "idx").
    #[serde(default)]
    pub images: Option<String>,
    #[serde(default)]
    pub labels: Option<String>,
    #[serde(default)]
    pub val_images: Option<String>,
    #[serde(default)]
    pub val_labels: Option<String>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: d_dataset_kind(),
            classes: d_classes(),
            train: d_train_count(),
            val: d_val_count(),
            height: d_image_extent(),
            width: d_image_extent(),
            noise: d_noise(),
            jitter_deg: d_jitter(),
            images: None,
            labels: None,
            val_images: None,
            val_labels: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Synthetic,
    Idx,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct VictimSection {
    #[serde(default = "d_victim_epochs")]
    pub epochs: u32,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_victim_lr")]
    pub lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    /// Epochs at which the lr is multiplied by `lr_factor`.
    #[serde(default = "d_milestones")]
    pub milestones: Vec<usize>,
    #[serde(default = "d_lr_factor")]
    pub lr_factor: f64,
    /// Benign clients (from-scratch runs).
    #[serde(default = "d_clients")]
    pub clients: usize,
    #[serde(default)]
    pub defense_l1: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
    #[serde(default = "d_partition")]
    pub partition: PartitionKind,
    #[serde(default = "d_classes")]
    pub classes_per_client: usize,
    /// Fine-tune only: small server lr instead of full freezing.
    #[serde(default)]
    pub server_lr: f64,
}

impl Default for VictimSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionKind {
    Iid,
    ClassLimited,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AttackSection {
    #[serde(default = "d_method")]
    pub method: Method,
    #[serde(default = "d_budget")]
    pub budget: u64,
    /// From-scratch collection window start; 0.8 * epochs when unset.
    #[serde(default)]
    pub launch_epoch: Option<u32>,
    /// Attacker's share of the training pool (train/softtrain/naive).
    #[serde(default = "d_data_fraction")]
    pub data_fraction: f64,
    #[serde(default)]
    pub stratified: bool,
    /// Non-IID ablation: restrict attacker data to this many classes
    /// (0 = off).
    #[serde(default)]
    pub classes_limit: usize,
    /// Query batch size.
    #[serde(default = "d_batch")]
    pub batch: usize,
    // craft
    #[serde(default = "d_craft_steps")]
    pub steps: u32,
    #[serde(default = "d_craft_lr")]
    pub craft_adam_lr: f64,
    // gan
    #[serde(default = "d_latent")]
    pub latent_dim: usize,
    #[serde(default = "d_div_weight")]
    pub div_weight: f64,
    #[serde(default = "d_div_cap")]
    pub div_cap: f64,
    #[serde(default = "d_gan_lr")]
    pub gan_adam_lr: f64,
    #[serde(default = "d_synth_count")]
    pub synth_count: usize,
    // gm
    #[serde(default)]
    pub late_k: usize,
    #[serde(default = "d_aux_offset")]
    pub aux_angle_offset: f64,
    #[serde(default = "d_gm_epochs")]
    pub gm_epochs: u32,
    #[serde(default = "d_gm_lr")]
    pub gm_lr: f64,
    // softtrain
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_soft_weight")]
    pub soft_weight: f64,
    // surrogate architecture
    #[serde(default = "d_variant")]
    pub variant: Variant,
}

impl Default for AttackSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Craft,
    Gan,
    Gm,
    Train,
    Softtrain,
    Naive,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Craft => "craft",
            Method::Gan => "gan",
            Method::Gm => "gm",
            Method::Train => "train",
            Method::Softtrain => "softtrain",
            Method::Naive => "naive",
        }
    }

    pub fn parse(name: &str) -> Option<Method> {
        Some(match name {
            "craft" => Method::Craft,
            "gan" => Method::Gan,
            "gm" => Method::Gm,
            "train" => Method::Train,
            "softtrain" => Method::Softtrain,
            "naive" => Method::Naive,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Same,
    Longer,
    Shorter,
    Wider,
    Thinner,
}

impl Variant {
    pub fn to_attacks(self) -> sfl_attacks::SurrogateArchVariant {
        match self {
            Variant::Same => sfl_attacks::SurrogateArchVariant::Same,
            Variant::Longer => sfl_attacks::SurrogateArchVariant::Longer,
            Variant::Shorter => sfl_attacks::SurrogateArchVariant::Shorter,
            Variant::Wider => sfl_attacks::SurrogateArchVariant::Wider,
            Variant::Thinner => sfl_attacks::SurrogateArchVariant::Thinner,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SurrogateSection {
    #[serde(default = "d_victim_epochs")]
    pub epochs: u32,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_surrogate_lr")]
    pub lr: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_milestones")]
    pub milestones: Vec<usize>,
    #[serde(default = "d_lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "d_true")]
    pub augment: bool,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EvalSection {
    #[serde(default)]
    pub adv: bool,
    #[serde(default = "d_fgsm_eps")]
    pub fgsm_eps: f64,
    #[serde(default = "d_pgd_eps")]
    pub pgd_eps: f64,
    #[serde(default = "d_pgd_iters")]
    pub pgd_iters: u32,
    #[serde(default)]
    pub pgd_step: Option<f64>,
    #[serde(default = "d_adv_samples")]
    pub adv_samples: usize,
    #[serde(default)]
    pub mi: bool,
    #[serde(default = "d_mi_epochs")]
    pub mi_epochs: u32,
    #[serde(default = "d_mi_lr")]
    pub mi_lr: f64,
    #[serde(default = "d_mi_probes")]
    pub mi_probes: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepSection {
    #[serde(default)]
    pub n_server: Vec<usize>,
    #[serde(default)]
    pub attacks: Vec<Method>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

fn d_seed() -> u64 { 1 }
fn d_preset() -> String { "desk6".into() }
fn d_n_server() -> usize { 3 }
fn d_dataset_kind() -> DatasetKind { DatasetKind::Synthetic }
fn d_classes() -> usize { 10 }
fn d_train_count() -> usize { 10_000 }
fn d_val_count() -> usize { 2_000 }
fn d_image_extent() -> usize { 8 }
fn d_noise() -> f64 { 0.30 }
fn d_jitter() -> f64 { 12.0 }
fn d_victim_epochs() -> u32 { 200 }
fn d_batch() -> usize { 128 }
fn d_victim_lr() -> f64 { 0.05 }
fn d_surrogate_lr() -> f64 { 0.02 }
fn d_momentum() -> f64 { 0.9 }
fn d_milestones() -> Vec<usize> { vec![60, 120, 160] }
fn d_lr_factor() -> f64 { 0.2 }
fn d_clients() -> usize { 10 }
fn d_true() -> bool { true }
fn d_partition() -> PartitionKind { PartitionKind::Iid }
fn d_method() -> Method { Method::Train }
fn d_budget() -> u64 { 100_000 }
fn d_data_fraction() -> f64 { 0.1 }
fn d_craft_steps() -> u32 { 20 }
fn d_craft_lr() -> f64 { 0.1 }
fn d_latent() -> usize { 64 }
fn d_div_weight() -> f64 { 50.0 }
fn d_div_cap() -> f64 { 1.0 }
fn d_gan_lr() -> f64 { 1e-4 }
fn d_synth_count() -> usize { 2_000 }
fn d_aux_offset() -> f64 { 0.5 }
fn d_gm_epochs() -> u32 { 60 }
fn d_gm_lr() -> f64 { 0.02 }
fn d_alpha() -> f64 { 0.9 }
fn d_soft_weight() -> f64 { 1.0 }
fn d_variant() -> Variant { Variant::Same }
fn d_fgsm_eps() -> f64 { 0.1 }
fn d_pgd_eps() -> f64 { 0.002 }
fn d_pgd_iters() -> u32 { 50 }
fn d_adv_samples() -> usize { 512 }
fn d_mi_epochs() -> u32 { 50 }
fn d_mi_lr() -> f64 { 1e-3 }
fn d_mi_probes() -> usize { 512 }

impl ExperimentConfig {
    pub fn from_str_strict(text: &str) -> Result<ExperimentConfig, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn from_file(path: &std::path::Path) -> Result<ExperimentConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        Self::from_str_strict(&text)
    }

    /// Resolved unit list.
    pub fn units(&self) -> Vec<UnitSpec> {
        if let Some(units) = &self.model.units {
            return units.iter().map(UnitConfig::to_unit).collect();
        }
        sfl_core::desk_units(1, self.dataset.height, self.dataset.width, self.dataset.classes)
    }

    /// Referential validity beyond what types enforce.
    pub fn validate(&self) -> Result<(), String> {
        let units = self.units();
        let n = self.model.n_server;
        if n == 0 || n >= units.len() {
            return Err(format!(
                "model.n-server = {n} must be within 1..={} for {} units",
                units.len() - 1,
                units.len()
            ));
        }
        if self.model.units.is_none() && self.model.preset != "desk6" {
            return Err(format!("unknown model.preset \"{}\"", self.model.preset));
        }
        if !(0.0..=1.0).contains(&self.attack.data_fraction) {
            return Err("attack.data-fraction must lie in [0, 1]".into());
        }
        if self.attack.alpha <= 0.5 || self.attack.alpha >= 1.0 {
            return Err("attack.alpha must lie in (0.5, 1)".into());
        }
        if self.victim.defense_l1 < 0.0 {
            return Err("victim.defense-l1 must be >= 0".into());
        }
        if self.dataset.kind == DatasetKind::Idx
            && (self.dataset.images.is_none() || self.dataset.labels.is_none())
        {
            return Err("dataset.kind = \"idx\" needs dataset.images and dataset.labels".into());
        }
        if self.victim.partition == PartitionKind::ClassLimited
            && (self.victim.classes_per_client == 0
                || self.victim.classes_per_client > self.dataset.classes)
        {
            return Err("victim.classes-per-client outside 1..=classes".into());
        }
        Ok(())
    }

    /// From-scratch collection window start.
    pub fn launch_epoch(&self) -> u32 {
        self.attack
            .launch_epoch
            .unwrap_or((self.victim.epochs as f64 * 0.8).floor() as u32)
    }

    /// Canonical serialization: the hash input and the config echo.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("serializable config")
    }

    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.canonical().as_bytes());
        let digest = hasher.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_str_strict("[experiment]\nmode = \"fine-tune\"\n").unwrap();
        assert_eq!(cfg.victim.epochs, 200);
        assert_eq!(cfg.victim.milestones, vec![60, 120, 160]);
        assert_eq!(cfg.surrogate.lr, 0.02);
        assert_eq!(cfg.attack.steps, 20);
        assert_eq!(cfg.attack.craft_adam_lr, 0.1);
        assert_eq!(cfg.attack.gan_adam_lr, 1e-4);
        assert_eq!(cfg.attack.div_weight, 50.0);
        assert_eq!(cfg.attack.alpha, 0.9);
        assert_eq!(cfg.eval.fgsm_eps, 0.1);
        assert_eq!(cfg.eval.pgd_eps, 0.002);
        assert_eq!(cfg.eval.pgd_iters, 50);
        assert_eq!(cfg.launch_epoch(), 160);
        assert_eq!(cfg.victim.clients, 10);
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = ExperimentConfig::from_str_strict(
            "[experiment]\nmode = \"fine-tune\"\nfoo = 1\n",
        )
        .unwrap_err();
        assert!(err.contains("foo"), "error does not name the key: {err}");
    }

    #[test]
    fn n_server_bounds_are_checked() {
        let cfg = ExperimentConfig::from_str_strict(
            "[experiment]\nmode = \"fine-tune\"\n[model]\nn-server = 6\n",
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = ExperimentConfig::from_str_strict("[experiment]\nmode = \"fine-tune\"\n").unwrap();
        let b = ExperimentConfig::from_str_strict(
            "[experiment]\nmode = \"fine-tune\"\n\n# comment\n",
        )
        .unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig::from_str_strict(
            "[experiment]\nmode = \"fine-tune\"\n[model]\nn-server = 5\n",
        )
        .unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn explicit_units_override_preset() {
        let cfg = ExperimentConfig::from_str_strict(
            r#"
[experiment]
mode = "from-scratch"
[model]
n-server = 1
units = [
  { kind = "flatten" },
  { kind = "linear", inputs = 64, outputs = 10 },
]
"#,
        )
        .unwrap();
        let units = cfg.units();
        assert_eq!(units.len(), 2);
        assert_eq!(units[1], UnitSpec::Linear { inputs: 64, outputs: 10 });
        cfg.validate().unwrap();
    }
}
