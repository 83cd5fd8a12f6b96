//! The five pipeline commands. Each writes into a staging directory inside
//! the output directory and moves its files into place only on success.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::config::{Command, RunConfig};
use crate::data::{load_image, load_split, preprocess, split_patients, Example, Manifest, Record, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, predict, summarize, Averaging};
use crate::model::{checkpoint, init_parameters, VitMae};
use crate::train::{derive_rng, finetune, grid_search, pretrain, RunScore, Stream, TrainLog};

/// A scratch directory whose files are renamed into the output directory
/// on commit and discarded otherwise.
struct Staging {
    dir: PathBuf,
    out: PathBuf,
}

impl Staging {
    fn new(out: &Path, command: Command) -> Result<Self> {
        let dir = out.join(format!(".staging-{}", command.name()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Moves one staged file into the output directory.
    fn promote(&self, name: &str) -> Result<()> {
        let to = self.out.join(name);
        std::fs::rename(self.path(name), &to).map_err(|e| Error::io(to, e))
    }

    fn commit(self) -> Result<()> {
        let mut names: Vec<String> = std::fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .map(|entry| entry.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&self.dir, e))?;
        names.sort();
        for name in &names {
            self.promote(name)?;
        }
        std::fs::remove_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))
    }

    fn abort(self) {
        let _ = std::fs::remove_dir_all(&self.dir);
    }
}

/// Executes `cfg`, leaving either every artifact or none in the output
/// directory. The one exception is a numerical abort during pretraining,
/// which keeps the last good checkpoint and the log up to the failure.
pub fn execute(cfg: &RunConfig, echo: bool) -> Result<()> {
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let staging = Staging::new(&cfg.output_dir, cfg.command)?;
    let result = match cfg.command {
        Command::Split => split(cfg, &staging),
        Command::Pretrain => run_pretrain(cfg, &staging, echo),
        Command::Finetune => run_finetune(cfg, &staging, echo),
        Command::Gridsearch => gridsearch(cfg, &staging, echo),
        Command::Evaluate => run_evaluate(cfg, &staging),
    }
    .and_then(|()| write_sidecar(cfg, &staging));
    match result {
        Ok(()) => staging.commit(),
        Err(e) => {
            staging.abort();
            Err(e)
        }
    }
}

/// Provenance stored in checkpoint headers.
fn meta(cfg: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("command".to_string(), cfg.command.name().to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
        ("config".to_string(), cfg.to_toml()),
    ])
}

/// `<command>.run.toml`: the resolved configuration, re-runnable as is.
fn write_sidecar(cfg: &RunConfig, staging: &Staging) -> Result<()> {
    let path = staging.path(&format!("{}.run.toml", cfg.command.name()));
    std::fs::write(&path, cfg.to_toml()).map_err(|e| Error::io(path, e))
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).map_err(|e| Error::io(path, e))
}

fn split(cfg: &RunConfig, staging: &Staging) -> Result<()> {
    let input = Manifest::read(&cfg.manifest)?;
    let out_dir = absolute(&cfg.output_dir)?;
    let target = out_dir.join("manifest.csv");
    let same = match (cfg.manifest.canonicalize(), target.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(Error::Config(vec![format!(
            "output_dir: writing {} would overwrite the input manifest",
            target.display()
        )]));
    }
    let mut assigned = split_patients(&input, cfg.fractions, cfg.seed)?;
    for r in &mut assigned.records {
        let abs = absolute(&input.resolve(r))?;
        if let Some(rel) = pathdiff::diff_paths(&abs, &out_dir) {
            r.path = rel.to_string_lossy().replace('\\', "/");
        }
    }
    assigned.write(&staging.path("manifest.csv"))
}

fn load_records<'a>(manifest: &Manifest, records: impl Iterator<Item = &'a Record>, cfg: &RunConfig) -> Result<Vec<Example>> {
    records
        .map(|r| {
            Ok(Example {
                image: preprocess(&load_image(&manifest.resolve(r))?, &cfg.preprocess)?,
                label: manifest.class_index(&r.label)?,
            })
        })
        .collect()
}

fn run_pretrain(cfg: &RunConfig, staging: &Staging, echo: bool) -> Result<()> {
    let manifest = Manifest::read(&cfg.manifest)?;
    let examples = match cfg.pretrain_split {
        Some(s) => load_split(&manifest, s, &cfg.preprocess)?,
        None => load_records(&manifest, manifest.records.iter(), cfg)?,
    };
    if examples.is_empty() {
        return Err(Error::validation(format!(
            "no images for pretraining in split {}",
            cfg.pretrain_split.map_or("all", Split::as_str)
        )));
    }
    let images: Vec<_> = examples.into_iter().map(|e| e.image).collect();
    let (_, model_cfg) = cfg.model.as_ref().expect("pretrain config carries a model");
    let mut model_cfg = model_cfg.clone();
    model_cfg.num_classes = manifest.classes.len();
    let mut model = init_parameters(&model_cfg, &mut derive_rng(cfg.seed, Stream::Init, &[]))?;
    let mut log = TrainLog {
        echo,
        ..TrainLog::default()
    };
    let result = pretrain(&mut model, &images, &cfg.plan, &mut log);
    log.write(&staging.path("pretrain_log.csv"))?;
    match result {
        Ok(()) => checkpoint::save(&staging.path("pretrain.usfm"), &model, &meta(cfg)),
        Err(e @ Error::NonFinite(_)) => {
            checkpoint::save(&staging.path("pretrain_last_good.usfm"), &model, &meta(cfg))?;
            staging.promote("pretrain_last_good.usfm")?;
            staging.promote("pretrain_log.csv")?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

/// Loads the input checkpoint and adapts it to the run: pooling override,
/// class count from the manifest, image size check.
fn load_model(cfg: &RunConfig, manifest: &Manifest) -> Result<VitMae> {
    let path = cfg.checkpoint.as_ref().expect("validated");
    let (mut model, _) = checkpoint::load(path)?;
    if let Some(p) = cfg.pooling {
        model.set_pooling(p);
    }
    let c = model.config();
    if let Some((preset, want)) = &cfg.model {
        let mut want = want.clone();
        want.num_classes = c.num_classes;
        want.pooling = c.pooling;
        want.image_size = c.image_size;
        if &want != c {
            return Err(Error::Config(vec![format!(
                "model: configured architecture ({preset}) differs from the checkpoint's"
            )]));
        }
    }
    if c.image_size != cfg.preprocess.target_size {
        return Err(Error::Config(vec![format!(
            "target_size {} differs from the checkpoint's image size {}",
            cfg.preprocess.target_size, c.image_size
        )]));
    }
    if cfg.command != Command::Evaluate {
        model.set_num_classes(manifest.classes.len());
    }
    Ok(model)
}

fn train_val(cfg: &RunConfig, manifest: &Manifest) -> Result<(Vec<Example>, Vec<Example>)> {
    Ok((
        load_split(manifest, Split::Train, &cfg.preprocess)?,
        load_split(manifest, Split::Val, &cfg.preprocess)?,
    ))
}

fn run_finetune(cfg: &RunConfig, staging: &Staging, echo: bool) -> Result<()> {
    let manifest = Manifest::read(&cfg.manifest)?;
    let mut model = load_model(cfg, &manifest)?;
    let (train, val) = train_val(cfg, &manifest)?;
    let mut log = TrainLog {
        echo,
        ..TrainLog::default()
    };
    let outcome = finetune(&mut model, &train, &val, manifest.classes.len(), &cfg.plan, &mut log)?;
    let meta = meta(cfg);
    checkpoint::save(&staging.path("finetune_best.usfm"), &outcome.best, &meta)?;
    checkpoint::save(&staging.path("finetune_final.usfm"), &model, &meta)?;
    log.write(&staging.path("finetune_log.csv"))
}

fn gridsearch(cfg: &RunConfig, staging: &Staging, echo: bool) -> Result<()> {
    let manifest = Manifest::read(&cfg.manifest)?;
    let base = load_model(cfg, &manifest)?;
    let (train, val) = train_val(cfg, &manifest)?;
    if val.is_empty() {
        return Err(Error::validation("grid search needs a non-empty val split"));
    }
    let k = manifest.classes.len();
    let mut log = TrainLog::default();
    let report = grid_search(&cfg.grid, |lr, wd| {
        let mut plan = cfg.plan.clone();
        plan.base_lr = lr;
        plan.weight_decay = wd;
        if plan.min_lr > lr {
            plan.min_lr = lr;
        }
        let mut model = base.clone();
        let mut run_log = TrainLog {
            echo,
            ..TrainLog::default()
        };
        let outcome = finetune(&mut model, &train, &val, k, &plan, &mut run_log)?;
        for row in &mut run_log.rows {
            row.split = format!("{}@lr={lr},wd={wd}", row.split);
        }
        log.extend(run_log);
        let s = summarize(&predict(&outcome.best, &val)?, Averaging::Weighted)?;
        Ok(RunScore {
            val_accuracy: s.accuracy,
            val_f1: s.f1,
        })
    })?;
    report.write(&staging.path("grid.csv"))?;
    log.write(&staging.path("grid_log.csv"))?;
    let (lr, wd) = report
        .best_point()
        .ok_or_else(|| Error::NonFinite("every grid run aborted".into()))?;
    let mut best = cfg.clone();
    best.command = Command::Finetune;
    best.plan.base_lr = lr;
    best.plan.weight_decay = wd;
    best.plan.min_lr = best.plan.min_lr.min(lr);
    let path = staging.path("best.toml");
    std::fs::write(&path, best.to_toml()).map_err(|e| Error::io(path, e))
}

fn run_evaluate(cfg: &RunConfig, staging: &Staging) -> Result<()> {
    let manifest = Manifest::read(&cfg.manifest)?;
    let model = load_model(cfg, &manifest)?;
    if model.head.is_none() {
        return Err(Error::Checkpoint("checkpoint has no classification head".into()));
    }
    if model.config().num_classes != manifest.classes.len() {
        return Err(Error::validation(format!(
            "checkpoint classifies {} classes, manifest declares {}",
            model.config().num_classes,
            manifest.classes.len()
        )));
    }
    let examples = load_split(&manifest, cfg.split, &cfg.preprocess)?;
    if examples.is_empty() {
        return Err(Error::validation(format!("split {} is empty", cfg.split)));
    }
    evaluate(&model, &examples, &manifest.classes, cfg.averaging)?.write(&staging.dir)
}
