//! Flat `key = value` run configuration.
//!
//! Every key has a default, unknown keys are rejected and the resolved
//! configuration is echoed into every report. A single master `seed` drives
//! every random choice through [`derive_seed`].

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cavity::{DetectorConfig, PocketConfig};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::moldata::Element;
use crate::objectives::ObjectiveConfig;
use crate::pocketlabel::LabelConfig;

use super::synth::SyntheticWorldSpec;

/// Which pocket the screening step sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Oracle,
    Annotated,
    Blind,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    MaxPool,
    Adapter,
    All,
}

trait ConfigValue: Sized {
    fn parse(key: &str, raw: &str) -> Result<Self>;
    fn render(&self) -> String;
}

fn bad(key: &str, raw: &str, what: &str) -> Error {
    Error::Config(format!("{key}: cannot parse {raw:?} as {what}"))
}

macro_rules! numeric_value {
    ($($t:ty => $what:literal),*) => {$(
        impl ConfigValue for $t {
            fn parse(key: &str, raw: &str) -> Result<Self> {
                raw.parse().map_err(|_| bad(key, raw, $what))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

numeric_value!(f64 => "a number", usize => "a non-negative integer", u64 => "a non-negative integer", u8 => "an integer in 0..=255");

impl ConfigValue for Vec<String> {
    fn parse(_key: &str, raw: &str) -> Result<Self> {
        Ok(raw
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect())
    }
    fn render(&self) -> String {
        self.join(",")
    }
}

impl ConfigValue for Setting {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        match raw {
            "oracle" => Ok(Setting::Oracle),
            "annotated" => Ok(Setting::Annotated),
            "blind" => Ok(Setting::Blind),
            "all" => Ok(Setting::All),
            _ => Err(bad(key, raw, "one of oracle, annotated, blind, all")),
        }
    }
    fn render(&self) -> String {
        match self {
            Setting::Oracle => "oracle",
            Setting::Annotated => "annotated",
            Setting::Blind => "blind",
            Setting::All => "all",
        }
        .into()
    }
}

impl ConfigValue for Mode {
    fn parse(key: &str, raw: &str) -> Result<Self> {
        match raw {
            "max_pool" => Ok(Mode::MaxPool),
            "adapter" => Ok(Mode::Adapter),
            "all" => Ok(Mode::All),
            _ => Err(bad(key, raw, "one of max_pool, adapter, all")),
        }
    }
    fn render(&self) -> String {
        match self {
            Mode::MaxPool => "max_pool",
            Mode::Adapter => "adapter",
            Mode::All => "all",
        }
        .into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub setting: Setting,
    pub mode: Mode,

    pub n_targets: usize,
    pub min_cavities: usize,
    pub max_planted_cavities: usize,
    pub actives_per_target: usize,
    pub decoys_per_target: usize,
    pub chemotype_alphabet: Vec<String>,
    pub noise_scale: f64,
    pub n_train_complexes: usize,
    pub activity_ligands_per_complex: usize,
    pub protein_radius: f64,
    pub lattice_spacing: f64,
    pub void_radius_min: f64,
    pub void_radius_max: f64,
    pub lining_probability: f64,

    pub grid_spacing: f64,
    pub psp_min_events: u8,
    pub min_cluster_points: usize,
    pub max_cavities: usize,
    pub probe_margin: f64,
    pub vdw_h: f64,
    pub vdw_c: f64,
    pub vdw_n: f64,
    pub vdw_o: f64,
    pub vdw_s: f64,
    pub vdw_p: f64,
    pub vdw_x: f64,

    pub holo_radius_d: f64,
    pub enlarged_radius: f64,
    pub cavity_residue_radius: f64,
    pub max_pocket_atoms: usize,

    pub tau_pos: f64,
    pub tau_neg: f64,
    pub negative_ratio: f64,

    pub element_dim: usize,
    pub rbf_count: usize,
    pub rbf_max: f64,
    pub rbf_width: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub adapter_temperature: f64,

    pub lambda: f64,
    pub batch_size: usize,
    pub complex_mix_ratio: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub adapter_learning_rate: f64,
    pub adapter_max_epochs: usize,
    pub validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = SyntheticWorldSpec::default();
        let det = DetectorConfig::default();
        let pocket = PocketConfig::default();
        let label = LabelConfig::default();
        let enc = EncoderConfig::default();
        let obj = ObjectiveConfig::default();
        RunConfig {
            seed: 1,
            setting: Setting::All,
            mode: Mode::All,

            n_targets: world.n_targets,
            min_cavities: world.min_cavities,
            max_planted_cavities: world.max_cavities,
            actives_per_target: world.actives_per_target,
            decoys_per_target: world.decoys_per_target,
            chemotype_alphabet: world.chemotype_alphabet,
            noise_scale: world.noise_scale,
            n_train_complexes: world.n_train_complexes,
            activity_ligands_per_complex: world.activity_ligands_per_complex,
            protein_radius: world.protein_radius,
            lattice_spacing: world.lattice_spacing,
            void_radius_min: world.void_radius_min,
            void_radius_max: world.void_radius_max,
            lining_probability: world.lining_probability,

            grid_spacing: det.grid_spacing,
            psp_min_events: det.psp_min_events,
            min_cluster_points: det.min_cluster_points,
            max_cavities: det.max_cavities,
            probe_margin: det.probe_margin,
            vdw_h: det.vdw_radii.radius(Element::H),
            vdw_c: det.vdw_radii.radius(Element::C),
            vdw_n: det.vdw_radii.radius(Element::N),
            vdw_o: det.vdw_radii.radius(Element::O),
            vdw_s: det.vdw_radii.radius(Element::S),
            vdw_p: det.vdw_radii.radius(Element::P),
            vdw_x: det.vdw_radii.radius(Element::X),

            holo_radius_d: pocket.holo_radius_d,
            enlarged_radius: pocket.enlarged_radius,
            cavity_residue_radius: pocket.cavity_residue_radius,
            max_pocket_atoms: pocket.max_pocket_atoms,

            tau_pos: label.tau_pos,
            tau_neg: label.tau_neg,
            negative_ratio: label.negative_ratio,

            element_dim: enc.element_dim,
            rbf_count: enc.rbf_count,
            rbf_max: enc.rbf_max,
            rbf_width: enc.rbf_width,
            hidden_dim: enc.hidden_dim,
            embed_dim: enc.embed_dim,
            adapter_temperature: 5.0,

            lambda: obj.lambda,
            batch_size: obj.batch_size,
            complex_mix_ratio: obj.complex_mix_ratio,
            max_epochs: obj.max_epochs,
            patience: obj.patience,
            learning_rate: obj.learning_rate,
            adapter_learning_rate: obj.adapter_learning_rate,
            adapter_max_epochs: obj.max_epochs,
            validation_fraction: obj.validation_fraction,
        }
    }
}

macro_rules! config_keys {
    ($($key:ident),* $(,)?) => {
        const KEYS: &[&str] = &[$(stringify!($key)),*];

        impl RunConfig {
            fn set_raw(&mut self, key: &str, raw: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => self.$key = ConfigValue::parse(key, raw)?,)*
                    _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
                }
                Ok(())
            }

            /// Every resolved key and value.
            pub fn echo(&self) -> BTreeMap<String, String> {
                let mut out = BTreeMap::new();
                $(out.insert(stringify!($key).to_string(), self.$key.render());)*
                out
            }
        }
    };
}

config_keys!(
    seed,
    setting,
    mode,
    n_targets,
    min_cavities,
    max_planted_cavities,
    actives_per_target,
    decoys_per_target,
    chemotype_alphabet,
    noise_scale,
    n_train_complexes,
    activity_ligands_per_complex,
    protein_radius,
    lattice_spacing,
    void_radius_min,
    void_radius_max,
    lining_probability,
    grid_spacing,
    psp_min_events,
    min_cluster_points,
    max_cavities,
    probe_margin,
    vdw_h,
    vdw_c,
    vdw_n,
    vdw_o,
    vdw_s,
    vdw_p,
    vdw_x,
    holo_radius_d,
    enlarged_radius,
    cavity_residue_radius,
    max_pocket_atoms,
    tau_pos,
    tau_neg,
    negative_ratio,
    element_dim,
    rbf_count,
    rbf_max,
    rbf_width,
    hidden_dim,
    embed_dim,
    adapter_temperature,
    lambda,
    batch_size,
    complex_mix_ratio,
    max_epochs,
    patience,
    learning_rate,
    adapter_learning_rate,
    adapter_max_epochs,
    validation_fraction,
);

/// 64-bit sub-seed for one named consumer of randomness.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

impl RunConfig {
    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            cfg.set_raw(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.set_raw(key, value)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.world_spec().validate()?;
        self.detector_config().validate()?;
        self.pocket_config().validate()?;
        self.label_config().validate()?;
        self.encoder_config().validate()?;
        self.objective_config().validate()?;
        self.adapter_objective_config().validate()?;
        if !(self.adapter_temperature > 0.0) {
            return Err(Error::Config("adapter_temperature must be > 0".into()));
        }
        Ok(())
    }

    /// Named sub-seeds recorded in reports.
    pub fn seeds(&self) -> BTreeMap<String, u64> {
        ["world", "init", "shuffle", "cavity_draw", "downsample", "adapter"]
            .iter()
            .map(|t| (t.to_string(), derive_seed(self.seed, t)))
            .collect()
    }

    pub fn world_spec(&self) -> SyntheticWorldSpec {
        SyntheticWorldSpec {
            n_targets: self.n_targets,
            min_cavities: self.min_cavities,
            max_cavities: self.max_planted_cavities,
            actives_per_target: self.actives_per_target,
            decoys_per_target: self.decoys_per_target,
            chemotype_alphabet: self.chemotype_alphabet.clone(),
            noise_scale: self.noise_scale,
            n_train_complexes: self.n_train_complexes,
            activity_ligands_per_complex: self.activity_ligands_per_complex,
            protein_radius: self.protein_radius,
            lattice_spacing: self.lattice_spacing,
            void_radius_min: self.void_radius_min,
            void_radius_max: self.void_radius_max,
            lining_probability: self.lining_probability,
            seed: derive_seed(self.seed, "world"),
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let mut det = DetectorConfig {
            grid_spacing: self.grid_spacing,
            psp_min_events: self.psp_min_events,
            min_cluster_points: self.min_cluster_points,
            max_cavities: self.max_cavities,
            probe_margin: self.probe_margin,
            ..DetectorConfig::default()
        };
        for (e, r) in [
            (Element::H, self.vdw_h),
            (Element::C, self.vdw_c),
            (Element::N, self.vdw_n),
            (Element::O, self.vdw_o),
            (Element::S, self.vdw_s),
            (Element::P, self.vdw_p),
            (Element::X, self.vdw_x),
        ] {
            det.vdw_radii.set(e, r);
        }
        det
    }

    pub fn pocket_config(&self) -> PocketConfig {
        PocketConfig {
            holo_radius_d: self.holo_radius_d,
            enlarged_radius: self.enlarged_radius,
            cavity_residue_radius: self.cavity_residue_radius,
            max_pocket_atoms: self.max_pocket_atoms,
            downsample_seed: derive_seed(self.seed, "downsample"),
        }
    }

    pub fn label_config(&self) -> LabelConfig {
        LabelConfig {
            tau_pos: self.tau_pos,
            tau_neg: self.tau_neg,
            negative_ratio: self.negative_ratio,
            rng_seed: derive_seed(self.seed, "cavity_draw"),
        }
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            element_dim: self.element_dim,
            rbf_count: self.rbf_count,
            rbf_max: self.rbf_max,
            rbf_width: self.rbf_width,
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
        }
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            lambda: self.lambda,
            batch_size: self.batch_size,
            complex_mix_ratio: self.complex_mix_ratio,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: derive_seed(self.seed, "shuffle"),
            learning_rate: self.learning_rate,
            adapter_learning_rate: self.adapter_learning_rate,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn adapter_objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            max_epochs: self.adapter_max_epochs,
            seed: derive_seed(self.seed, "adapter"),
            ..self.objective_config()
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, "init")
    }

    pub fn wants_adapter(&self) -> bool {
        matches!(self.mode, Mode::Adapter | Mode::All) && matches!(self.setting, Setting::Blind | Setting::All)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_echoes() {
        let cfg =
            RunConfig::parse("# comment\nseed = 7\nsetting=blind # trailing\nchemotype_alphabet = N, O ,S\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.setting, Setting::Blind);
        assert_eq!(cfg.chemotype_alphabet, vec!["N", "O", "S"]);
        let echo = cfg.echo();
        assert_eq!(echo.len(), RunConfig::keys().len());
        assert_eq!(echo["setting"], "blind");
        let text: String = echo.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1",
            "seed = -1",
            "setting = sideways",
            "seed",
            "complex_mix_ratio = 1.5",
        ] {
            let err = RunConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn seeds_follow_master() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.seed = 2;
        assert_ne!(a.seeds(), b.seeds());
        assert_eq!(a.seeds(), RunConfig::default().seeds());
        assert_eq!(a.world_spec().seed, a.seeds()["world"]);
    }
}
