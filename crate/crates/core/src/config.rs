//! Flat `key=value` run configuration covering every stage of the pipeline.
//!
//! Lines are `section.key=value`; blank lines and `#` comments are ignored
//! and unknown keys are an error. [`RunConfig::to_text`] writes every key,
//! so a resolved config reruns exactly.

use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::model::ModelConfig;
use crate::phantom::PhantomSpec;
use crate::pipeline::{Canvas, PipelineConfig};
use crate::train::TrainConfig;
use crate::walk::WalkConfig;

/// Splits `key=value` lines, rejecting repeats.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if out.iter().any(|(e, _)| *e == k) {
            return Err(Error::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

pub fn format_kv(entries: &[(String, String)]) -> String {
    entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub(crate) fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

pub(crate) fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|s| parse_value(key, s.trim())).collect()
}

fn parse_array<T: FromStr + Copy, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let v = parse_list::<T>(key, value)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("`{key}` needs {N} comma-separated values, got `{value}`")))
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn unknown(key: &str) -> Error {
    Error::Config(format!("unknown config key `{key}`"))
}

fn entry(k: &str, v: impl Display) -> (String, String) {
    (k.to_string(), v.to_string())
}

pub fn model_entries(m: &ModelConfig) -> Vec<(String, String)> {
    vec![
        entry("model.latent_dim", m.latent_dim),
        entry("model.embed_dim", m.embed_dim),
        entry("model.seed_map", format!("{},{}", m.seed_map.0, m.seed_map.1)),
        entry("model.upsample_stages", m.upsample_stages),
        entry("model.gen_channels", join(&m.gen_channels)),
        entry("model.gen_kernel", m.gen_kernel),
        entry("model.disc_layers", m.disc_layers),
        entry("model.disc_channels", join(&m.disc_channels)),
        entry("model.disc_kernel", m.disc_kernel),
        entry("model.disc_stride", m.disc_stride),
        entry("model.leaky_slope", m.leaky_slope),
        entry("model.dropout_rate", m.dropout_rate),
        entry("model.bn_momentum", m.bn_momentum),
        entry("model.bn_eps", m.bn_eps),
        entry("model.init_std", m.init_std),
    ]
}

pub fn set_model_key(m: &mut ModelConfig, key: &str, v: &str) -> Result<()> {
    let field = key.strip_prefix("model.").ok_or_else(|| unknown(key))?;
    match field {
        "latent_dim" => m.latent_dim = parse_value(key, v)?,
        "embed_dim" => m.embed_dim = parse_value(key, v)?,
        "seed_map" => {
            let [h, w] = parse_array(key, v)?;
            m.seed_map = (h, w);
        }
        "upsample_stages" => m.upsample_stages = parse_value(key, v)?,
        "gen_channels" => m.gen_channels = parse_list(key, v)?,
        "gen_kernel" => m.gen_kernel = parse_value(key, v)?,
        "disc_layers" => m.disc_layers = parse_value(key, v)?,
        "disc_channels" => m.disc_channels = parse_list(key, v)?,
        "disc_kernel" => m.disc_kernel = parse_value(key, v)?,
        "disc_stride" => m.disc_stride = parse_value(key, v)?,
        "leaky_slope" => m.leaky_slope = parse_value(key, v)?,
        "dropout_rate" => m.dropout_rate = parse_value(key, v)?,
        "bn_momentum" => m.bn_momentum = parse_value(key, v)?,
        "bn_eps" => m.bn_eps = parse_value(key, v)?,
        "init_std" => m.init_std = parse_value(key, v)?,
        _ => return Err(unknown(key)),
    }
    Ok(())
}

pub fn train_entries(t: &TrainConfig) -> Vec<(String, String)> {
    vec![
        entry("train.epochs", t.epochs),
        entry("train.lr", t.lr),
        entry("train.beta1", t.beta1),
        entry("train.beta2", t.beta2),
        entry("train.adam_eps", t.adam_eps),
        entry("train.batch_size", t.batch_size),
        entry("train.seed", t.rng_seed),
        entry("train.checkpoint_every", t.checkpoint_every),
    ]
}

pub fn set_train_key(t: &mut TrainConfig, key: &str, v: &str) -> Result<()> {
    match key.strip_prefix("train.").ok_or_else(|| unknown(key))? {
        "epochs" => t.epochs = parse_value(key, v)?,
        "lr" => t.lr = parse_value(key, v)?,
        "beta1" => t.beta1 = parse_value(key, v)?,
        "beta2" => t.beta2 = parse_value(key, v)?,
        "adam_eps" => t.adam_eps = parse_value(key, v)?,
        "batch_size" => t.batch_size = parse_value(key, v)?,
        "seed" => t.rng_seed = parse_value(key, v)?,
        "checkpoint_every" => t.checkpoint_every = parse_value(key, v)?,
        _ => return Err(unknown(key)),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub pipeline: PipelineConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub walk: WalkConfig,
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(&parse_kv(text)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        entries.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let (section, field) = key.split_once('.').ok_or_else(|| unknown(key))?;
        match section {
            "model" => set_model_key(&mut self.model, key, v),
            "train" => set_train_key(&mut self.train, key, v),
            "phantom" => {
                let p = &mut self.phantom;
                match field {
                    "dims" => p.dims = parse_array(key, v)?,
                    "spacing_mm" => p.spacing_mm = parse_array(key, v)?,
                    "seed" => p.rng_seed = parse_value(key, v)?,
                    "per_class" => {
                        let n: usize = parse_value(key, v)?;
                        p.per_class_count = ClassLabel::ALL.iter().map(|&c| (c, n)).collect();
                    }
                    _ => {
                        let class = field
                            .strip_prefix("count.")
                            .ok_or_else(|| unknown(key))?
                            .parse::<ClassLabel>()?;
                        p.per_class_count.insert(class, parse_value(key, v)?);
                    }
                }
                Ok(())
            }
            "pipeline" => {
                let p = &mut self.pipeline;
                match field {
                    "target_spacing_mm" => p.target_spacing_mm = parse_value(key, v)?,
                    "suv_max" => p.suv_max = parse_value(key, v)?,
                    "axis" => p.projection_axis = v.parse()?,
                    "canvas" => {
                        let [h, w] = parse_array(key, v)?;
                        p.canvas = Canvas::new(h, w);
                    }
                    _ => return Err(unknown(key)),
                }
                Ok(())
            }
            "walk" => {
                let w = &mut self.walk;
                match field {
                    "mode" => w.mode = v.parse()?,
                    "steps" => w.steps = parse_value(key, v)?,
                    "a" => w.a = parse_value(key, v)?,
                    "b" => w.b = parse_value(key, v)?,
                    "from_class" => w.from_class = v.parse()?,
                    "to_class" => w.to_class = v.parse()?,
                    "seed" => w.seed = parse_value(key, v)?,
                    _ => return Err(unknown(key)),
                }
                Ok(())
            }
            _ => Err(unknown(key)),
        }
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let p = &self.phantom;
        let mut out = vec![
            entry("phantom.dims", join(&p.dims)),
            entry("phantom.spacing_mm", join(&p.spacing_mm)),
            entry("phantom.seed", p.rng_seed),
        ];
        for c in ClassLabel::ALL {
            out.push(entry(&format!("phantom.count.{c}"), p.count(c)));
        }
        let q = &self.pipeline;
        out.extend([
            entry("pipeline.target_spacing_mm", q.target_spacing_mm),
            entry("pipeline.suv_max", q.suv_max),
            entry("pipeline.axis", q.projection_axis),
            entry("pipeline.canvas", format!("{},{}", q.canvas.height, q.canvas.width)),
        ]);
        out.extend(model_entries(&self.model));
        out.extend(train_entries(&self.train));
        let w = &self.walk;
        out.extend([
            entry("walk.mode", w.mode),
            entry("walk.steps", w.steps),
            entry("walk.a", w.a),
            entry("walk.b", w.b),
            entry("walk.from_class", w.from_class),
            entry("walk.to_class", w.to_class),
            entry("walk.seed", w.seed),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        format_kv(&self.entries())
    }
}
