//! Run configuration: a flat TOML table, overridden key by key from the
//! command line, validated in one pass that reports every problem.

use std::path::{Path, PathBuf};

use toml::{Table, Value};

use crate::data::{PreprocessConfig, Split, DEFAULT_FRACTIONS};
use crate::error::{Error, Result};
use crate::metrics::Averaging;
use crate::model::{ModelConfig, Pooling};
use crate::train::{GridSpace, Mode, TrainPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Split,
    Pretrain,
    Finetune,
    Gridsearch,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Split => "split",
            Command::Pretrain => "pretrain",
            Command::Finetune => "finetune",
            Command::Gridsearch => "gridsearch",
            Command::Evaluate => "evaluate",
        }
    }

    fn uses_checkpoint(self) -> bool {
        matches!(self, Command::Finetune | Command::Gridsearch | Command::Evaluate)
    }
}

/// Keys fixing the network shape. Commands that read a checkpoint only use
/// them to check it.
pub const ARCH_KEYS: &[&str] = &[
    "model",
    "encoder_dim",
    "encoder_depth",
    "encoder_heads",
    "decoder_dim",
    "decoder_depth",
    "decoder_heads",
    "mlp_ratio",
    "mask_ratio",
    "head_hidden",
    "patch_size",
    "layer_norm_eps",
];

/// Every key the configuration understands.
pub const KEYS: &[&str] = &[
    "command",
    "seed",
    "manifest",
    "output_dir",
    "checkpoint",
    "model",
    "encoder_dim",
    "encoder_depth",
    "encoder_heads",
    "decoder_dim",
    "decoder_depth",
    "decoder_heads",
    "mlp_ratio",
    "mask_ratio",
    "head_hidden",
    "pooling",
    "patch_size",
    "layer_norm_eps",
    "epochs",
    "batch_size",
    "lr",
    "weight_decay",
    "warmup_fraction",
    "min_lr",
    "augment",
    "crop_top",
    "crop_bottom",
    "crop_left",
    "crop_right",
    "target_size",
    "fractions",
    "split",
    "pretrain_split",
    "grid_lrs",
    "grid_wds",
    "averaging",
];

/// Fully resolved settings for one command.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Input weights for finetune, gridsearch and evaluate.
    pub checkpoint: Option<PathBuf>,
    /// Preset name and resolved architecture. Always present for pretraining;
    /// elsewhere present only when set explicitly, and then checked against
    /// the checkpoint.
    pub model: Option<(String, ModelConfig)>,
    /// Pooling to fine-tune or evaluate with, overriding the checkpoint's.
    pub pooling: Option<Pooling>,
    pub plan: TrainPlan,
    pub preprocess: PreprocessConfig,
    pub fractions: [f64; 3],
    /// Split scored by `evaluate`.
    pub split: Split,
    /// Images used for pretraining; `None` means the whole manifest.
    pub pretrain_split: Option<Split>,
    pub grid: GridSpace,
    pub averaging: Averaging,
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_override(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies `key=value` overrides on top of `table`.
pub fn apply_overrides(table: &mut Table, overrides: &[String]) -> Result<()> {
    let mut bad = Vec::new();
    for o in overrides {
        match o.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => {
                table.insert(k.trim().to_string(), parse_override(v.trim()));
            }
            _ => bad.push(format!("override {o:?} is not key=value")),
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(bad))
    }
}

/// Keys holding file system paths.
pub const PATH_KEYS: &[&str] = &["manifest", "output_dir", "checkpoint"];

/// Reads a config file. Relative paths inside it are taken relative to the
/// file's own directory.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut table: Table =
        toml::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {}", path.display(), e.message())]))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for key in PATH_KEYS {
        if let Some(Value::String(p)) = table.get_mut(*key) {
            if Path::new(p.as_str()).is_relative() {
                *p = base.join(&*p).display().to_string();
            }
        }
    }
    Ok(table)
}

/// Typed access to the table, recording every mismatch.
struct Reader<'a> {
    table: &'a Table,
    errors: Vec<String>,
}

impl Reader<'_> {
    fn get<T>(&mut self, key: &str, kind: &str, f: impl Fn(&Value) -> Option<T>) -> Option<T> {
        let v = self.table.get(key)?;
        let out = f(v);
        if out.is_none() {
            self.errors.push(format!("{key}: expected {kind}, found {v}"));
        }
        out
    }

    fn uint(&mut self, key: &str) -> Option<usize> {
        self.get(key, "a nonnegative integer", |v| v.as_integer().and_then(|i| usize::try_from(i).ok()))
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        self.get(key, "a number", |v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        self.get(key, "true or false", Value::as_bool)
    }

    fn string(&mut self, key: &str) -> Option<String> {
        self.get(key, "a string", |v| v.as_str().map(str::to_string))
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        self.get(key, "an array of numbers", |v| {
            v.as_array()?
                .iter()
                .map(|x| x.as_float().or_else(|| x.as_integer().map(|i| i as f64)))
                .collect()
        })
    }

    fn split(&mut self, key: &str) -> Option<Split> {
        let s = self.string(key)?;
        match s.parse::<Split>() {
            Ok(Split::Unassigned) | Err(_) => {
                self.errors.push(format!("{key}: expected train, val or test, found {s:?}"));
                None
            }
            Ok(split) => Some(split),
        }
    }
}

impl RunConfig {
    /// Resolves and validates `table` for `command`.
    pub fn from_table(command: Command, table: &Table) -> Result<Self> {
        let mut r = Reader {
            table,
            errors: Vec::new(),
        };
        for key in table.keys() {
            if !KEYS.contains(&key.as_str()) {
                r.errors.push(format!("unknown key {key:?}"));
            }
        }
        if let Some(c) = r.string("command") {
            if c != command.name() {
                r.errors.push(format!("command: file is for {c:?}, running {:?}", command.name()));
            }
        }

        let seed = r.get("seed", "a nonnegative integer", |v| v.as_integer().and_then(|i| u64::try_from(i).ok()));
        if seed.is_none() && !table.contains_key("seed") {
            r.errors.push("seed: required".into());
        }
        let manifest = r.string("manifest").map(PathBuf::from);
        match &manifest {
            None if !table.contains_key("manifest") => r.errors.push("manifest: required".into()),
            Some(p) if !p.is_file() => r.errors.push(format!("manifest: {} does not exist", p.display())),
            _ => {}
        }
        let output_dir = r.string("output_dir").map(PathBuf::from);
        if output_dir.is_none() && !table.contains_key("output_dir") {
            r.errors.push("output_dir: required".into());
        }
        let checkpoint = r.string("checkpoint").map(PathBuf::from);
        match &checkpoint {
            None if command.uses_checkpoint() && !table.contains_key("checkpoint") => {
                r.errors.push(format!("checkpoint: required for {}", command.name()))
            }
            Some(_) if !command.uses_checkpoint() => {
                r.errors.push(format!("checkpoint: not used by {}", command.name()))
            }
            Some(p) if !p.is_file() => r.errors.push(format!("checkpoint: {} does not exist", p.display())),
            _ => {}
        }

        let preset = r.string("model").unwrap_or_else(|| "vitb".into());
        let mut model = ModelConfig::preset(&preset).unwrap_or_else(|| {
            r.errors.push(format!("model: unknown preset {preset:?} (expected vitb or tiny)"));
            ModelConfig::vitb()
        });
        let (dim, depth, heads) = (r.uint("encoder_dim"), r.uint("encoder_depth"), r.uint("encoder_heads"));
        if dim.is_some() || depth.is_some() || heads.is_some() {
            let head_hidden_follows = model.head_hidden == model.encoder_dim;
            let mut m = ModelConfig::with_encoder(
                dim.unwrap_or(model.encoder_dim),
                depth.unwrap_or(model.encoder_depth),
                heads.unwrap_or(model.encoder_heads),
            );
            if !head_hidden_follows {
                m.head_hidden = model.head_hidden;
            }
            model = m;
        }
        let m = &mut model;
        for (key, slot) in [
            ("decoder_dim", &mut m.decoder_dim),
            ("decoder_depth", &mut m.decoder_depth),
            ("decoder_heads", &mut m.decoder_heads),
            ("mlp_ratio", &mut m.mlp_ratio),
            ("head_hidden", &mut m.head_hidden),
            ("patch_size", &mut m.patch_size),
        ] {
            if let Some(v) = r.uint(key) {
                *slot = v;
            }
        }
        if let Some(v) = r.float("mask_ratio") {
            m.mask_ratio = v;
        }
        if let Some(v) = r.float("layer_norm_eps") {
            m.layer_norm_eps = v;
        }
        let pooling = match r.string("pooling").as_deref() {
            None => None,
            Some("mean") => Some(Pooling::Mean),
            Some("class_token") => Some(Pooling::ClassToken),
            Some(other) => {
                r.errors.push(format!("pooling: expected mean or class_token, found {other:?}"));
                None
            }
        };
        if let Some(p) = pooling {
            m.pooling = p;
        }

        let mut pre = PreprocessConfig::default();
        for (key, slot) in [
            ("crop_top", &mut pre.crop_top),
            ("crop_bottom", &mut pre.crop_bottom),
            ("crop_left", &mut pre.crop_left),
            ("crop_right", &mut pre.crop_right),
            ("target_size", &mut pre.target_size),
        ] {
            if let Some(v) = r.uint(key) {
                *slot = v;
            }
        }
        model.image_size = pre.target_size;

        let mode = if command == Command::Pretrain {
            Mode::Pretrain
        } else {
            Mode::Finetune
        };
        let mut plan = TrainPlan::new(mode, seed.unwrap_or(0));
        for (key, slot) in [("epochs", &mut plan.epochs), ("batch_size", &mut plan.batch_size)] {
            if let Some(v) = r.uint(key) {
                *slot = v;
            }
        }
        for (key, slot) in [
            ("lr", &mut plan.base_lr),
            ("weight_decay", &mut plan.weight_decay),
            ("warmup_fraction", &mut plan.warmup_fraction),
            ("min_lr", &mut plan.min_lr),
        ] {
            if let Some(v) = r.float(key) {
                *slot = v;
            }
        }
        if let Some(a) = r.boolean("augment") {
            plan.augment = a && mode == Mode::Finetune;
        }

        let fractions = match r.floats("fractions") {
            Some(f) if f.len() == 3 => [f[0], f[1], f[2]],
            Some(f) => {
                r.errors.push(format!("fractions: expected 3 values, found {}", f.len()));
                DEFAULT_FRACTIONS
            }
            None => DEFAULT_FRACTIONS,
        };
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            r.errors.push(format!("fractions: {fractions:?} must lie in [0, 1] and sum to 1"));
        }
        let split = r.split("split").unwrap_or(Split::Test);
        let pretrain_split = match r.string("pretrain_split").as_deref() {
            Some("all") => None,
            Some(_) => r.split("pretrain_split"),
            None => Some(Split::Train),
        };
        let mut grid = GridSpace::default();
        if let Some(v) = r.floats("grid_lrs") {
            grid.learning_rates = v;
        }
        if let Some(v) = r.floats("grid_wds") {
            grid.weight_decays = v;
        }
        if grid.points().is_empty() {
            r.errors.push("grid_lrs and grid_wds must both be non-empty".into());
        }
        let averaging = match r.string("averaging").as_deref() {
            None | Some("weighted") => Averaging::Weighted,
            Some("macro") => Averaging::Macro,
            Some(other) => {
                r.errors.push(format!("averaging: expected weighted or macro, found {other:?}"));
                Averaging::Weighted
            }
        };

        let mut errors = r.errors;
        let explicit_arch = ARCH_KEYS.iter().any(|k| table.contains_key(*k));
        if command == Command::Pretrain || explicit_arch {
            errors.extend(model.violations());
        }
        errors.extend(plan.violations());
        errors.extend(pre.violations(if command == Command::Pretrain { model.patch_size } else { 1 }));
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        Ok(Self {
            command,
            seed: seed.expect("checked"),
            manifest: manifest.expect("checked"),
            output_dir: output_dir.expect("checked"),
            checkpoint,
            model: (command == Command::Pretrain || explicit_arch).then_some((preset, model)),
            pooling: if command == Command::Pretrain { None } else { pooling },
            plan,
            preprocess: pre,
            fractions,
            split,
            pretrain_split,
            grid,
            averaging,
        })
    }

    /// The resolved configuration as a flat table, suitable for re-running.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new();
        let mut put = |k: &str, v: Value| {
            t.insert(k.to_string(), v);
        };
        let int = |v: usize| Value::Integer(v as i64);
        let floats = |v: &[f64]| Value::Array(v.iter().map(|&x| Value::Float(x)).collect());
        let path = |p: &Path| Value::String(p.display().to_string());
        put("command", Value::String(self.command.name().into()));
        put("seed", Value::Integer(self.seed as i64));
        put("manifest", path(&self.manifest));
        put("output_dir", path(&self.output_dir));
        if let Some(c) = &self.checkpoint {
            put("checkpoint", path(c));
        }
        let pooling_name = |p: Pooling| {
            Value::String(match p {
                Pooling::Mean => "mean".into(),
                Pooling::ClassToken => "class_token".into(),
            })
        };
        if let Some((preset, m)) = &self.model {
            put("model", Value::String(preset.clone()));
            put("encoder_dim", int(m.encoder_dim));
            put("encoder_depth", int(m.encoder_depth));
            put("encoder_heads", int(m.encoder_heads));
            put("decoder_dim", int(m.decoder_dim));
            put("decoder_depth", int(m.decoder_depth));
            put("decoder_heads", int(m.decoder_heads));
            put("mlp_ratio", int(m.mlp_ratio));
            put("mask_ratio", Value::Float(m.mask_ratio));
            put("head_hidden", int(m.head_hidden));
            put("pooling", pooling_name(m.pooling));
            put("patch_size", int(m.patch_size));
            put("layer_norm_eps", Value::Float(m.layer_norm_eps));
        }
        if let Some(p) = self.pooling {
            put("pooling", pooling_name(p));
        }
        put("epochs", int(self.plan.epochs));
        put("batch_size", int(self.plan.batch_size));
        put("lr", Value::Float(self.plan.base_lr));
        put("weight_decay", Value::Float(self.plan.weight_decay));
        put("warmup_fraction", Value::Float(self.plan.warmup_fraction));
        put("min_lr", Value::Float(self.plan.min_lr));
        put("augment", Value::Boolean(self.plan.augment));
        let p = &self.preprocess;
        put("crop_top", int(p.crop_top));
        put("crop_bottom", int(p.crop_bottom));
        put("crop_left", int(p.crop_left));
        put("crop_right", int(p.crop_right));
        put("target_size", int(p.target_size));
        put("fractions", floats(&self.fractions));
        put("split", Value::String(self.split.as_str().into()));
        put(
            "pretrain_split",
            Value::String(self.pretrain_split.map_or("all", Split::as_str).into()),
        );
        put("grid_lrs", floats(&self.grid.learning_rates));
        put("grid_wds", floats(&self.grid.weight_decays));
        put(
            "averaging",
            Value::String(match self.averaging {
                Averaging::Weighted => "weighted".into(),
                Averaging::Macro => "macro".into(),
            }),
        );
        t
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("flat table serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Table {
        toml::from_str(text).unwrap()
    }

    #[test]
    fn every_violation_is_listed() {
        let t = table("epochs = 0\nlr = \"fast\"\ncolour = 3\nmodel = \"huge\"\n");
        let Err(Error::Config(v)) = RunConfig::from_table(Command::Pretrain, &t) else {
            panic!("expected config error");
        };
        for needle in ["seed", "manifest", "output_dir", "lr", "colour", "huge", "epochs"] {
            assert!(v.iter().any(|e| e.contains(needle)), "{needle} missing from {v:?}");
        }
    }

    #[test]
    fn overrides_win_and_parse_types() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, "path,label,patient_id,split\n").unwrap();
        let mut t = table(&format!(
            "seed = 1\nmanifest = {:?}\noutput_dir = \"out\"\nmodel = \"tiny\"\nepochs = 5\n",
            manifest.display().to_string()
        ));
        apply_overrides(
            &mut t,
            &["epochs=7".into(), "lr=0.001".into(), "grid_lrs=[1e-3, 2e-3]".into(), "averaging=macro".into()],
        )
        .unwrap();
        let c = RunConfig::from_table(Command::Pretrain, &t).unwrap();
        assert_eq!(c.plan.epochs, 7);
        assert_eq!(c.plan.base_lr, 1e-3);
        assert_eq!(c.grid.learning_rates, [1e-3, 2e-3]);
        assert_eq!(c.averaging, Averaging::Macro);
        assert_eq!(c.model.as_ref().unwrap().1.encoder_dim, 64);

        let again = RunConfig::from_table(Command::Pretrain, &c.to_table()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn architecture_is_optional_after_pretraining() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("f");
        std::fs::write(&file, "").unwrap();
        let f = format!("{:?}", file.display().to_string());
        let base = format!("seed = 1\nmanifest = {f}\noutput_dir = \"o\"\ncheckpoint = {f}\n");
        let plain = RunConfig::from_table(Command::Finetune, &table(&base)).unwrap();
        assert!(plain.model.is_none());
        let pinned = RunConfig::from_table(Command::Finetune, &table(&format!("{base}model = \"tiny\"\n"))).unwrap();
        assert_eq!(pinned.model.unwrap().1, ModelConfig { image_size: 224, ..ModelConfig::tiny() });
    }

    #[test]
    fn file_paths_resolve_against_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        std::fs::write(&file, "manifest = \"data/m.csv\"\noutput_dir = \"/abs/out\"\n").unwrap();
        let t = read_table(&file).unwrap();
        assert_eq!(t["manifest"].as_str().unwrap(), dir.path().join("data/m.csv").display().to_string());
        assert_eq!(t["output_dir"].as_str().unwrap(), "/abs/out");
    }

    #[test]
    fn malformed_override_is_rejected() {
        let mut t = Table::new();
        assert!(apply_overrides(&mut t, &["novalue".into()]).is_err());
    }
}
