//! Flat `key = value` run configuration.
//!
//! Values come from three layers: built-in defaults, an optional config file,
//! then `--key value` flags. The resolved set is written next to every
//! command's outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fcmad::desk::{DataConfig, DeskConfig};
use fcmad::evalbench::FusionMode;
use fcmad::manifest::MorphFamily;
use fcmad::nn::{Activation, SgdConfig};
use fcmad::selftest::SelftestConfig;
use fcmad::synth::SynthConfig;
use fcmad::trainer::{ModelConfig, TrainConfig};
use fcmad::{Error, Result};

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

/// Every accepted key, in the order they are documented and written.
pub const KEYS: &[Key] = &[
    key("seed", "root seed; every random stream is derived from it"),
    key("data_dir", "dataset directory (images and manifests)"),
    key("out_dir", "output directory for checkpoints, scores and reports"),
    key("image_size", "synthetic image side length in pixels"),
    key("latent_dim", "dimension of the identity latent space"),
    key("geometry_scale", "std-dev (px) of identity-specific landmark offsets"),
    key("palette_scale", "std-dev of identity-specific tone offsets"),
    key("texture_scale", "std-dev of identity texture amplitudes"),
    key("pose_shift", "maximum global landmark shift per image (px)"),
    key("landmark_jitter", "per-landmark jitter std-dev (px)"),
    key("landmark_jitter_clip", "per-landmark jitter clip (px per axis)"),
    key("illumination", "half-range of per-image gain and offset"),
    key("pixel_noise", "sensor noise std-dev"),
    key(
        "min_latent_angle_deg",
        "minimum angle between identity latents (degrees)",
    ),
    key("identities", "number of identities"),
    key("images_per_identity", "bona fide images rendered per identity"),
    key(
        "first_identity",
        "first identity id (use disjoint ranges for train and benchmark data)",
    ),
    key(
        "selfmorph_ratio",
        "selfmorphs per family as a multiple of the bona fide count",
    ),
    key("morph_ratio", "morphs per family as a multiple of the bona fide count"),
    key("blend_alpha", "morph blending factor"),
    key("families", "morph families generated by gen-morphs (landmark,latent)"),
    key("train_families", "morph families used for training"),
    key(
        "validation_fraction",
        "fraction of each identity subset held out from training",
    ),
    key("variant", "training variant: bc, fc-v1 or fc-v2"),
    key("hidden_dims", "hidden layer widths, comma separated"),
    key("feature_dim", "backbone feature dimension"),
    key("activation", "hidden activation: relu, tanh or identity"),
    key(
        "normalize_features",
        "L2-normalise features before the pair logit (true/false)",
    ),
    key(
        "input_norm",
        "inputs are centred and scaled to this L2 norm; 0 keeps raw pixels",
    ),
    key("epochs", "training epochs"),
    key("batch_size", "pairs per optimizer step"),
    key("momentum", "SGD momentum"),
    key("lr_start", "learning rate at the first step"),
    key("lr_end", "learning rate at the last step"),
    key("lambda", "weight of the pair loss"),
    key("checkpoint", "dual model checkpoint (default <out_dir>/model.ckpt)"),
    key(
        "fr_checkpoint",
        "face recognition checkpoint; eval fuses with it when set (train-fr default <out_dir>/fr.ckpt)",
    ),
    key("eval_family", "morph family of the generated protocol"),
    key(
        "bona_pairs_per_identity",
        "bona fide pairs per identity in a generated protocol",
    ),
    key(
        "protocol",
        "protocol file (default <out_dir>/protocol-<eval_family>.txt)",
    ),
    key("deltas", "BPCER targets, comma separated (also --delta, repeatable)"),
    key("fusion", "fusion modes applied in eval: dissimilarity, literal"),
    key(
        "scores",
        "compare inputs as name=path, comma separated (also --score, repeatable)",
    ),
    key("seeds", "root seeds run by desk, comma separated"),
    key("bench_identities", "desk: benchmark identities"),
    key("bench_images_per_identity", "desk: benchmark bona fides per identity"),
    key(
        "bench_morph_ratio",
        "desk: benchmark morphs per family as a multiple of bona fides",
    ),
    key(
        "corrupt_gradient",
        "selftest: perturb one analytic gradient entry (must fail)",
    ),
];

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn defaults() -> BTreeMap<&'static str, String> {
    let desk = DeskConfig::default();
    let s = &desk.synth;
    let d = &desk.train_data;
    let m = &desk.model;
    let sgd = &desk.train.sgd;
    let b = &desk.bench_data;
    let entries: Vec<(&'static str, String)> = vec![
        ("seed", "1".into()),
        ("data_dir", "data".into()),
        ("out_dir", "out".into()),
        ("image_size", s.image_size.to_string()),
        ("latent_dim", s.latent_dim.to_string()),
        ("geometry_scale", s.geometry_scale.to_string()),
        ("palette_scale", s.palette_scale.to_string()),
        ("texture_scale", s.texture_scale.to_string()),
        ("pose_shift", s.pose_shift.to_string()),
        ("landmark_jitter", s.landmark_jitter.to_string()),
        ("landmark_jitter_clip", s.landmark_jitter_clip.to_string()),
        ("illumination", s.illumination.to_string()),
        ("pixel_noise", s.pixel_noise.to_string()),
        ("min_latent_angle_deg", s.min_latent_angle_deg.to_string()),
        ("identities", d.identities.to_string()),
        ("images_per_identity", d.images_per_identity.to_string()),
        ("first_identity", d.first_identity.to_string()),
        ("selfmorph_ratio", d.selfmorph_ratio.to_string()),
        ("morph_ratio", d.morph_ratio.to_string()),
        ("blend_alpha", d.blend_alpha.to_string()),
        ("families", join(&MorphFamily::ALL)),
        ("train_families", join(&desk.train_families)),
        ("validation_fraction", desk.validation_fraction.to_string()),
        ("variant", m.variant.to_string()),
        ("hidden_dims", join(&m.hidden_dims)),
        ("feature_dim", m.feature_dim.to_string()),
        ("activation", m.activation.to_string()),
        ("normalize_features", m.normalize_features.to_string()),
        ("input_norm", m.input_norm.to_string()),
        ("epochs", sgd.epochs.to_string()),
        ("batch_size", sgd.batch_size.to_string()),
        ("momentum", sgd.momentum.to_string()),
        ("lr_start", sgd.lr_start.to_string()),
        ("lr_end", sgd.lr_end.to_string()),
        ("lambda", desk.train.lambda.to_string()),
        ("checkpoint", String::new()),
        ("fr_checkpoint", String::new()),
        ("eval_family", desk.eval_family.to_string()),
        (
            "bona_pairs_per_identity",
            desk.bench_bona_pairs_per_identity.to_string(),
        ),
        ("protocol", String::new()),
        ("deltas", join(&desk.deltas)),
        ("fusion", join(&FusionMode::ALL)),
        ("scores", String::new()),
        ("seeds", "1,2,3".into()),
        ("bench_identities", b.identities.to_string()),
        ("bench_images_per_identity", b.images_per_identity.to_string()),
        ("bench_morph_ratio", b.morph_ratio.to_string()),
        ("corrupt_gradient", "false".into()),
    ];
    entries.into_iter().collect()
}

pub fn default_value(name: &str) -> String {
    defaults().remove(name).unwrap_or_default()
}

fn key_index(name: &str) -> Option<usize> {
    KEYS.iter().position(|k| k.name == name)
}

/// Resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: defaults() }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str) -> Result<()> {
        let idx = key_index(name).ok_or_else(|| Error::Config(format!("unknown config key `{name}`")))?;
        self.values.insert(KEYS[idx].name, value.trim().to_string());
        Ok(())
    }

    /// Applies a `key = value` file; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{source}:{}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("{source}:{}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn raw(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("config key `{name}` is not registered"))
    }

    pub fn get<T: FromStr>(&self, name: &str) -> Result<T> {
        let v = self.raw(name);
        v.parse()
            .map_err(|_| Error::Config(format!("invalid value `{v}` for `{name}`")))
    }

    pub fn list<T: FromStr>(&self, name: &str) -> Result<Vec<T>> {
        self.raw(name)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("invalid entry `{s}` in `{name}`")))
            })
            .collect()
    }

    /// All keys in documentation order as `key = value` lines.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{} = {}\n", k.name, self.raw(k.name)))
            .collect()
    }

    pub fn path(&self, name: &str) -> Option<PathBuf> {
        let v = self.raw(name);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn data_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("data_dir"))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.raw("out_dir"))
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.path("checkpoint")
            .unwrap_or_else(|| self.out_dir().join("model.ckpt"))
    }

    pub fn protocol_path(&self) -> Result<PathBuf> {
        Ok(match self.path("protocol") {
            Some(p) => p,
            None => self
                .out_dir()
                .join(format!("protocol-{}.txt", self.get::<MorphFamily>("eval_family")?)),
        })
    }

    pub fn seed(&self) -> Result<u64> {
        self.get("seed")
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let c = SynthConfig {
            image_size: self.get("image_size")?,
            latent_dim: self.get("latent_dim")?,
            geometry_scale: self.get("geometry_scale")?,
            palette_scale: self.get("palette_scale")?,
            texture_scale: self.get("texture_scale")?,
            pose_shift: self.get("pose_shift")?,
            landmark_jitter: self.get("landmark_jitter")?,
            landmark_jitter_clip: self.get("landmark_jitter_clip")?,
            illumination: self.get("illumination")?,
            pixel_noise: self.get("pixel_noise")?,
            min_latent_angle_deg: self.get("min_latent_angle_deg")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn data(&self) -> Result<DataConfig> {
        let c = DataConfig {
            identities: self.get("identities")?,
            images_per_identity: self.get("images_per_identity")?,
            first_identity: self.get("first_identity")?,
            selfmorph_ratio: self.get("selfmorph_ratio")?,
            morph_ratio: self.get("morph_ratio")?,
            blend_alpha: self.get("blend_alpha")?,
            families: self.list("families")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let c = ModelConfig {
            hidden_dims: self.list("hidden_dims")?,
            feature_dim: self.get("feature_dim")?,
            activation: self.get::<Activation>("activation")?,
            variant: self.get("variant")?,
            normalize_features: self.get("normalize_features")?,
            input_norm: self.get("input_norm")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn sgd(&self) -> Result<SgdConfig> {
        let c = SgdConfig {
            momentum: self.get("momentum")?,
            lr_start: self.get("lr_start")?,
            lr_end: self.get("lr_end")?,
            total_steps: 1,
            batch_size: self.get("batch_size")?,
            epochs: self.get("epochs")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            sgd: self.sgd()?,
            lambda: self.get("lambda")?,
        })
    }

    pub fn deltas(&self) -> Result<Vec<f64>> {
        let d: Vec<f64> = self.list("deltas")?;
        if d.is_empty() || d.iter().any(|x| !(*x > 0.0 && *x < 1.0)) {
            return Err(Error::Config(format!(
                "deltas must lie in (0, 1), got `{}`",
                self.raw("deltas")
            )));
        }
        Ok(d)
    }

    /// Experiment configuration; the training data uses the dataset keys
    /// (generating only `train_families`) and the benchmark data the `bench_*`
    /// keys with an identity range above the training one.
    pub fn desk(&self) -> Result<DeskConfig> {
        let train_families: Vec<MorphFamily> = self.list("train_families")?;
        let train_data = DataConfig {
            families: train_families.clone(),
            ..self.data()?
        };
        let base = DeskConfig::default();
        let bench_data = DataConfig {
            identities: self.get("bench_identities")?,
            images_per_identity: self.get("bench_images_per_identity")?,
            first_identity: base
                .bench_data
                .first_identity
                .max(train_data.first_identity + train_data.identities),
            selfmorph_ratio: 0.0,
            morph_ratio: self.get("bench_morph_ratio")?,
            blend_alpha: train_data.blend_alpha,
            families: MorphFamily::ALL.to_vec(),
        };
        bench_data.validate()?;
        let model = self.model()?;
        Ok(DeskConfig {
            synth: self.synth()?,
            train_data,
            bench_data,
            bench_bona_pairs_per_identity: self.get("bona_pairs_per_identity")?,
            train_families,
            eval_family: self.get("eval_family")?,
            validation_fraction: self.get("validation_fraction")?,
            fr_model: model.clone(),
            model,
            train: self.train()?,
            deltas: self.deltas()?,
        })
    }

    /// Parses every typed section so malformed values fail before any work.
    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.desk()?;
        self.selftest()?;
        self.list::<u64>("seeds")?;
        self.list::<FusionMode>("fusion")?;
        Ok(())
    }

    pub fn selftest(&self) -> Result<SelftestConfig> {
        Ok(SelftestConfig {
            seed: self.seed()?,
            corrupt_gradient: self.get("corrupt_gradient")?,
            ..SelftestConfig::default()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_has_a_default_and_vice_versa() {
        let d = defaults();
        assert_eq!(d.len(), KEYS.len());
        for k in KEYS {
            assert!(d.contains_key(k.name), "{}", k.name);
        }
    }

    #[test]
    fn defaults_resolve_to_core_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.model().unwrap(), ModelConfig::default());
        assert_eq!(c.synth().unwrap(), SynthConfig::default());
        assert_eq!(c.desk().unwrap(), DeskConfig::default());
        assert_eq!(c.deltas().unwrap(), vec![0.1, 0.01]);
    }

    #[test]
    fn file_then_override() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nidentities = 12\n\nvariant=bc\n", "cfg")
            .unwrap();
        assert_eq!(c.get::<u32>("identities").unwrap(), 12);
        c.set("identities", "7").unwrap();
        assert_eq!(c.data().unwrap().identities, 7);
        assert!(c.to_text().contains("variant = bc\n"));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("no_such_key", "1"), Err(Error::Config(_))));
        assert!(matches!(c.apply_text("oops\n", "cfg"), Err(Error::Config(_))));
        c.set("epochs", "many").unwrap();
        assert!(matches!(c.sgd(), Err(Error::Config(_))));
    }

    #[test]
    fn resolved_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("hidden_dims", "32,16").unwrap();
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text(), "resolved").unwrap();
        assert_eq!(c, d);
    }
}
