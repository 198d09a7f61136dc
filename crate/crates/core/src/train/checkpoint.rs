use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Adam, OptimizerState, TrainConfig};
use crate::config::{format_kv, model_entries, parse_kv, parse_value, set_model_key, set_train_key, train_entries};
use crate::error::{Error, Result};
use crate::label::ClassLabel;
use crate::model::{init_params, ModelConfig, ModelParams};

pub const CHECKPOINT_SCHEMA: &str = "petgan-checkpoint-1";
const BLOB_MAGIC: &[u8] = b"PGTENSORS1\n";
const META: &str = "meta";
const PARAMS: &str = "params.bin";
const OPTIMIZER: &str = "optimizer.bin";

/// Everything needed to resume training bit-for-bit.
#[derive(Debug, Clone)]
pub struct ModelCheckpoint {
    pub params: ModelParams<f32>,
    pub optimizer: OptimizerState<f32>,
    pub model_cfg: ModelConfig,
    pub train_cfg: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

type Named = Vec<(String, Vec<f32>)>;

fn param_tensors(params: &mut ModelParams<f32>) -> Named {
    let mut out = Named::new();
    for (name, p) in params.generator.params() {
        out.push((format!("generator.{name}"), p.value.clone()));
    }
    for (name, b) in params.generator.buffers_mut() {
        out.push((format!("generator.{name}"), b.clone()));
    }
    for (name, p) in params.discriminator.params() {
        out.push((format!("discriminator.{name}"), p.value.clone()));
    }
    for (name, b) in params.discriminator.buffers_mut() {
        out.push((format!("discriminator.{name}"), b.clone()));
    }
    out
}

fn restore_params(params: &mut ModelParams<f32>, mut blob: BTreeMap<String, Vec<f32>>, path: &Path) -> Result<()> {
    let mut take = |name: String, dst: &mut Vec<f32>| -> Result<()> {
        let v = blob
            .remove(&name)
            .ok_or_else(|| Error::CheckpointMismatch(format!("{} lacks tensor `{name}`", path.display())))?;
        if v.len() != dst.len() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor `{name}` has {} values, model expects {}",
                v.len(),
                dst.len()
            )));
        }
        *dst = v;
        Ok(())
    };
    let names: Vec<String> = params.generator.params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.into_iter().zip(params.generator.params_mut()) {
        take(format!("generator.{name}"), &mut p.value)?;
    }
    for (name, b) in params.generator.buffers_mut() {
        take(format!("generator.{name}"), b)?;
    }
    let names: Vec<String> = params.discriminator.params().into_iter().map(|(n, _)| n).collect();
    for (name, p) in names.into_iter().zip(params.discriminator.params_mut()) {
        take(format!("discriminator.{name}"), &mut p.value)?;
    }
    for (name, b) in params.discriminator.buffers_mut() {
        take(format!("discriminator.{name}"), b)?;
    }
    if let Some(extra) = blob.keys().next() {
        return Err(Error::CheckpointMismatch(format!("unexpected tensor `{extra}`")));
    }
    Ok(())
}

fn optimizer_tensors(opt: &OptimizerState<f32>) -> Named {
    let mut out = Named::new();
    for (net, adam) in [("generator", &opt.generator), ("discriminator", &opt.discriminator)] {
        for (i, (m, v)) in adam.m.iter().zip(&adam.v).enumerate() {
            out.push((format!("{net}.m.{i}"), m.clone()));
            out.push((format!("{net}.v.{i}"), v.clone()));
        }
    }
    out
}

fn restore_adam(adam: &mut Adam<f32>, net: &str, blob: &mut BTreeMap<String, Vec<f32>>) -> Result<()> {
    for (i, (m, v)) in adam.m.iter_mut().zip(adam.v.iter_mut()).enumerate() {
        for (kind, dst) in [("m", m), ("v", v)] {
            let name = format!("{net}.{kind}.{i}");
            let src = blob
                .remove(&name)
                .ok_or_else(|| Error::CheckpointMismatch(format!("optimizer state lacks `{name}`")))?;
            if src.len() != dst.len() {
                return Err(Error::CheckpointMismatch(format!("optimizer tensor `{name}` has the wrong size")));
            }
            *dst = src;
        }
    }
    Ok(())
}

/// `magic, u32 count, then per tensor: u32 name length, name, u64 length,
/// f32 LE values`.
pub fn encode_tensors(tensors: &Named) -> Vec<u8> {
    let mut out = BLOB_MAGIC.to_vec();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, values) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    }
    out
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<BTreeMap<String, Vec<f32>>> {
    let bad = |msg: &str| Error::format("tensor blob", path, msg);
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
        pos += n;
        Ok(s)
    };
    if take(BLOB_MAGIC.len())? != BLOB_MAGIC {
        return Err(bad("unknown blob version"));
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let data = take(n.checked_mul(4).ok_or_else(|| bad("tensor too large"))?)?;
        let values = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if out.insert(name, values).is_some() {
            return Err(bad("duplicate tensor name"));
        }
    }
    if take(0).is_ok() && pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
    }
    Some(out)
}

fn class_ordering() -> String {
    ClassLabel::ordering()
}

fn meta_entries(ckpt: &ModelCheckpoint) -> Vec<(String, String)> {
    let canvas = ckpt.model_cfg.canvas();
    let mut out = vec![
        ("schema".to_string(), CHECKPOINT_SCHEMA.to_string()),
        ("classes".to_string(), class_ordering()),
        ("canvas".to_string(), format!("{},{}", canvas.height, canvas.width)),
        ("epoch".to_string(), ckpt.epoch.to_string()),
        ("init_seed".to_string(), ckpt.params.init_seed.to_string()),
        ("adam.generator_step".to_string(), ckpt.optimizer.generator.step.to_string()),
        ("adam.discriminator_step".to_string(), ckpt.optimizer.discriminator.step.to_string()),
        ("rng.seed".to_string(), hex(&ckpt.rng.get_seed())),
        ("rng.stream".to_string(), ckpt.rng.get_stream().to_string()),
        ("rng.word_pos".to_string(), ckpt.rng.get_word_pos().to_string()),
    ];
    out.extend(model_entries(&ckpt.model_cfg));
    out.extend(train_entries(&ckpt.train_cfg));
    out
}

/// Writes `meta`, `params.bin` and `optimizer.bin` into a fresh sibling
/// directory, then swaps it into place.
pub fn save_checkpoint(ckpt: &ModelCheckpoint, dir: &Path) -> Result<()> {
    let tmp = sibling(dir, "tmp");
    let old = sibling(dir, "old");
    let _ = fs::remove_dir_all(&tmp);
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut params = ckpt.params.clone();
    let write = |name: &str, bytes: &[u8]| -> Result<()> {
        let p = tmp.join(name);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    write(META, format_kv(&meta_entries(ckpt)).as_bytes())?;
    write(PARAMS, &encode_tensors(&param_tensors(&mut params)))?;
    write(OPTIMIZER, &encode_tensors(&optimizer_tensors(&ckpt.optimizer)))?;
    let _ = fs::remove_dir_all(&old);
    if dir.exists() {
        fs::rename(dir, &old).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))?;
    let _ = fs::remove_dir_all(&old);
    Ok(())
}

fn sibling(dir: &Path, suffix: &str) -> PathBuf {
    let mut s = dir.as_os_str().to_owned();
    s.push(format!(".{suffix}"));
    PathBuf::from(s)
}

/// Reads the meta key=value map of a checkpoint directory.
pub fn read_meta(dir: &Path) -> Result<BTreeMap<String, String>> {
    let p = dir.join(META);
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(parse_kv(&text)?.into_iter().collect())
}

pub fn load_checkpoint(dir: &Path) -> Result<ModelCheckpoint> {
    let meta = read_meta(dir)?;
    let get = |k: &str| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::CheckpointMismatch(format!("meta lacks `{k}`")))
    };
    let schema = get("schema")?;
    if schema != CHECKPOINT_SCHEMA {
        return Err(Error::CheckpointMismatch(format!(
            "schema `{schema}`, expected `{CHECKPOINT_SCHEMA}`"
        )));
    }
    let classes = get("classes")?;
    if classes != class_ordering() {
        return Err(Error::CheckpointMismatch(format!(
            "class ordering `{classes}` differs from `{}`",
            class_ordering()
        )));
    }
    let mut model_cfg = ModelConfig::default();
    let mut train_cfg = TrainConfig::default();
    for (k, v) in &meta {
        if k.starts_with("model.") {
            set_model_key(&mut model_cfg, k, v)?;
        } else if k.starts_with("train.") {
            set_train_key(&mut train_cfg, k, v)?;
        }
    }
    model_cfg.validate()?;
    let canvas = model_cfg.canvas();
    if get("canvas")? != format!("{},{}", canvas.height, canvas.width) {
        return Err(Error::CheckpointMismatch(format!(
            "meta canvas {} does not match the model config ({}x{})",
            get("canvas")?,
            canvas.height,
            canvas.width
        )));
    }
    let epoch: usize = parse_value("epoch", get("epoch")?)?;
    let init_seed: u64 = parse_value("init_seed", get("init_seed")?)?;
    let seed = unhex(get("rng.seed")?).ok_or_else(|| Error::CheckpointMismatch("bad rng.seed".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(parse_value("rng.stream", get("rng.stream")?)?);
    rng.set_word_pos(parse_value("rng.word_pos", get("rng.word_pos")?)?);

    let mut params = init_params::<f32>(&model_cfg, init_seed)?;
    let p = dir.join(PARAMS);
    restore_params(&mut params, decode_tensors(&crate::io::read_bytes(&p)?, &p)?, &p)?;
    let mut optimizer = OptimizerState::new(train_cfg.adam(), &mut params);
    let p = dir.join(OPTIMIZER);
    let mut blob = decode_tensors(&crate::io::read_bytes(&p)?, &p)?;
    restore_adam(&mut optimizer.generator, "generator", &mut blob)?;
    restore_adam(&mut optimizer.discriminator, "discriminator", &mut blob)?;
    if let Some(extra) = blob.keys().next() {
        return Err(Error::CheckpointMismatch(format!("unexpected optimizer tensor `{extra}`")));
    }
    optimizer.generator.step = parse_value("adam.generator_step", get("adam.generator_step")?)?;
    optimizer.discriminator.step = parse_value("adam.discriminator_step", get("adam.discriminator_step")?)?;

    Ok(ModelCheckpoint {
        params,
        optimizer,
        model_cfg,
        train_cfg,
        epoch,
        rng,
    })
}
