//! Stage runner behind the command-line interface.
//!
//! A run directory holds one subdirectory per stage (per seed where the
//! stage depends on it). Each finished stage writes a manifest with the hash
//! of every config section it depends on; rerunning with the same hash is a
//! no-op. All files are written to a temporary name and renamed into place.
//!
//! ```text
//! run/prepare/{dataset.bin, manifest.json}
//! run/seed-<s>/pretext/{model.ckpt, history.json, manifest.json}
//! run/seed-<s>/ensemble/{member_000.ckpt, ..., manifest.json}
//! run/seed-<s>/distill/{model.ckpt, log.csv, manifest.json}
//! run/seed-<s>/evaluate/{metrics.json, manifest.json}
//! run/report/{report.json, report.csv, meta.json, manifest.json}
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::adversarial::{perturb_dataset, Distilled, Ensemble, FgsmConfig, Single};
use crate::binio::write_atomic;
use crate::config::Config;
use crate::data::{cache, load_dataset, normalize, sample_labeled_subset, DatasetSource, LabeledDataset, SplitDataset};
use crate::distill::{distill, initial_network, DistillEpoch, DistillationDataset};
use crate::error::{Error, Result};
use crate::eval::{EvalReport, ModelMetrics, ModelRecord, ReportMetadata, SeedReport, QUANTILES};
use crate::models::{checkpoint, Architecture, Network};
use crate::numerics::derive_seed;
use crate::training::{ensemble_predict, train_member, train_pretext, MemberInfo, MemberRecipe};
use crate::uncertainty::{dirichlet_uncertainty, ensemble_uncertainty, entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Pretext,
    Ensemble,
    Distill,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Prepare,
        Stage::Pretext,
        Stage::Ensemble,
        Stage::Distill,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Pretext => "pretext",
            Stage::Ensemble => "ensemble",
            Stage::Distill => "distill",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn per_seed(self) -> bool {
        !matches!(self, Stage::Prepare | Stage::Report)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub details: serde_json::Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    UpToDate,
}

/// Seeds of every random component for one repetition.
pub fn seeded_config(cfg: &Config, seed: u64) -> Config {
    let mut c = cfg.clone();
    c.pretext.seed = derive_seed(seed, 2);
    c.ensemble.seed = derive_seed(seed, 3);
    c.distill.seed = derive_seed(seed, 4);
    c
}

pub fn labeled_seed(seed: u64) -> u64 {
    derive_seed(seed, 1)
}

/// Loads and normalizes the dataset with training-split statistics.
pub fn prepare_dataset(cfg: &Config) -> Result<SplitDataset> {
    let source = DatasetSource::from_name(&cfg.data.dataset, cfg.data.root.as_deref(), &cfg.synthetic)?;
    let mut d = load_dataset(&source, &cfg.windowing)?;
    let stats = normalize(&mut d.train, &mut [&mut d.validation])?;
    d.metadata.normalization = Some(stats);
    Ok(d)
}

pub fn member_recipe(cfg: &Config) -> MemberRecipe {
    MemberRecipe {
        arch: cfg.model.clone(),
        transforms: cfg.transforms.clone(),
        pretext: cfg.pretext.clone(),
        supervised: cfg.supervised.clone(),
    }
}

/// Width-1 pretext network that initializes the prior network.
pub fn pretext_base(cfg: &Config, d: &SplitDataset) -> Result<crate::training::TrainOutcome> {
    let [c, t] = d.train.window_shape().ok_or_else(|| Error::Empty("training split".into()))?;
    let arch = Architecture::base(&cfg.model, c, t, 1.0)?;
    train_pretext(&d.train.unlabeled(), arch, &cfg.transforms, &cfg.pretext)
}

/// Builds the augmented set and distills `members` into a prior network.
pub fn distill_members(
    cfg: &Config,
    d: &SplitDataset,
    members: &[Network],
    pretext: Option<&Network>,
    on_epoch: impl FnMut(&DistillEpoch) -> Result<()>,
) -> Result<Network> {
    let d_u = d.train.unlabeled();
    let transforms = cfg.distill.use_transforms.then_some(&cfg.transforms);
    let data = DistillationDataset::build(members, &d_u, transforms, derive_seed(cfg.distill.seed, 1))?;
    let shape = d.train.window_shape().ok_or_else(|| Error::Empty("training split".into()))?;
    let init = initial_network(&cfg.model, shape, d.train.num_classes(), pretext, &cfg.distill)?;
    distill(members, &data, init, &cfg.distill, on_epoch)
}

/// Metrics of the single-model baseline (averaged over members), the
/// ensemble and the distilled model at each perturbation strength.
pub fn evaluate_models(
    members: &[Network],
    distilled: &Network,
    validation: &LabeledDataset,
    epsilons: &[f64],
) -> Result<Vec<ModelRecord>> {
    let mut records = Vec::new();
    for &epsilon in epsilons {
        let fgsm = FgsmConfig::new(epsilon)?;
        let single = members
            .iter()
            .map(|m| {
                let adv = perturb_dataset(&Single(m), validation, &fgsm)?;
                let preds: Vec<Vec<f64>> = m.forward_classifier(&adv.windows)?.into_iter().map(|p| p.probs).collect();
                let scores: Vec<f64> = preds.iter().map(|p| entropy(p)).collect();
                ModelMetrics::compute(&preds, &adv.labels, &scores)
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(ModelRecord {
            model: "single".into(),
            epsilon,
            metrics: ModelMetrics::average(&single)?,
        });

        let adv = perturb_dataset(&Ensemble(members), validation, &fgsm)?;
        let preds = ensemble_predict(members, &adv.windows)?;
        let means: Vec<Vec<f64>> = preds.iter().map(|p| p.mean()).collect();
        let scores: Vec<f64> = preds.iter().map(|p| ensemble_uncertainty(p).total).collect();
        records.push(ModelRecord {
            model: "ensemble".into(),
            epsilon,
            metrics: ModelMetrics::compute(&means, &adv.labels, &scores)?,
        });

        let adv = perturb_dataset(&Distilled(distilled), validation, &fgsm)?;
        let alphas = distilled.forward_dirichlet(&adv.windows, 1.0)?;
        let means: Vec<Vec<f64>> = alphas.iter().map(|a| a.mean()).collect();
        let scores = alphas
            .iter()
            .map(|a| Ok(dirichlet_uncertainty(a)?.total))
            .collect::<Result<Vec<f64>>>()?;
        records.push(ModelRecord {
            model: "distilled".into(),
            epsilon,
            metrics: ModelMetrics::compute(&means, &adv.labels, &scores)?,
        });
    }
    Ok(records)
}

/// A run directory bound to a configuration.
pub struct Runner {
    root: PathBuf,
    cfg: Config,
}

fn json_file<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

impl Runner {
    pub fn new(root: impl Into<PathBuf>, cfg: Config) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { root: root.into(), cfg })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn stage_dir(&self, stage: Stage, seed: Option<u64>) -> PathBuf {
        match seed {
            Some(s) if stage.per_seed() => self.root.join(format!("seed-{s}")).join(stage.name()),
            _ => self.root.join(stage.name()),
        }
    }

    /// Hash of every config section `stage` depends on, directly or through
    /// its prerequisites.
    pub fn stage_hash(&self, stage: Stage, seed: Option<u64>) -> Result<String> {
        use crate::config::erased::Json;
        let c = &self.cfg;
        let prepare = Config::hash_of(&[&c.data.dataset, &c.data.root, &c.synthetic, &c.windowing])?;
        let s = seed.unwrap_or(0);
        let pretext = || -> Result<String> { Config::hash_of(&[&prepare, &s, &c.model, &c.transforms, &c.pretext]) };
        let ensemble = || -> Result<String> {
            Config::hash_of(&[&prepare, &s, &c.model, &c.transforms, &c.pretext, &c.supervised, &c.ensemble])
        };
        let distill = || -> Result<String> { Config::hash_of(&[&pretext()?, &ensemble()?, &c.distill]) };
        let evaluate = || -> Result<String> { Config::hash_of(&[&distill()?, &c.eval]) };
        let parts: Vec<Box<dyn Json>> = match stage {
            Stage::Prepare => return Ok(prepare),
            Stage::Pretext => return pretext(),
            Stage::Ensemble => return ensemble(),
            Stage::Distill => return distill(),
            Stage::Evaluate => return evaluate(),
            Stage::Report => {
                let mut v: Vec<Box<dyn Json>> = Vec::new();
                for &seed in &c.data.seeds {
                    v.push(Box::new(self.stage_hash(Stage::Evaluate, Some(seed))?));
                }
                v
            }
        };
        Config::hash_of(&parts.iter().map(|b| b.as_ref()).collect::<Vec<_>>())
    }

    fn manifest_path(&self, stage: Stage, seed: Option<u64>) -> PathBuf {
        self.stage_dir(stage, seed).join("manifest.json")
    }

    pub fn is_complete(&self, stage: Stage, seed: Option<u64>) -> Result<bool> {
        let path = self.manifest_path(stage, seed);
        if !path.exists() {
            return Ok(false);
        }
        let m: Manifest = read_json(&path)?;
        Ok(m.config_hash == self.stage_hash(stage, seed)?)
    }

    fn require(&self, stage: Stage, seed: Option<u64>) -> Result<()> {
        let path = self.manifest_path(stage, seed);
        if !path.exists() {
            return Err(Error::Prerequisite {
                stage: stage.name().into(),
                detail: format!("{} is missing", path.display()),
            });
        }
        if !self.is_complete(stage, seed)? {
            return Err(Error::Prerequisite {
                stage: stage.name().into(),
                detail: "it was run with a different configuration; rerun it".into(),
            });
        }
        Ok(())
    }

    fn finish(&self, stage: Stage, seed: Option<u64>, details: serde_json::Value) -> Result<()> {
        json_file(
            &self.manifest_path(stage, seed),
            &Manifest {
                stage: stage.name().into(),
                config_hash: self.stage_hash(stage, seed)?,
                seed,
                details,
            },
        )
    }

    fn dataset(&self) -> Result<SplitDataset> {
        self.require(Stage::Prepare, None)?;
        cache::load(&self.stage_dir(Stage::Prepare, None).join("dataset.bin"))
    }

    fn members(&self, seed: u64) -> Result<(Vec<Network>, Vec<MemberInfo>)> {
        self.require(Stage::Ensemble, Some(seed))?;
        let dir = self.stage_dir(Stage::Ensemble, Some(seed));
        let m: Manifest = read_json(&dir.join("manifest.json"))?;
        let info: Vec<MemberInfo> = serde_json::from_value(m.details["members"].clone())?;
        let nets = info
            .iter()
            .map(|i| Ok(checkpoint::load(&dir.join(member_file(i.index)))?.network))
            .collect::<Result<Vec<_>>>()?;
        Ok((nets, info))
    }

    /// Runs `stage` for every configured seed, skipping up-to-date work.
    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        if !stage.per_seed() {
            return self.run_one(stage, None);
        }
        let mut outcome = Outcome::UpToDate;
        for &seed in &self.cfg.data.seeds {
            if self.run_one(stage, Some(seed))? == Outcome::Ran {
                outcome = Outcome::Ran;
            }
        }
        Ok(outcome)
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in Stage::ALL {
            self.run(stage)?;
        }
        Ok(())
    }

    fn run_one(&self, stage: Stage, seed: Option<u64>) -> Result<Outcome> {
        if self.is_complete(stage, seed)? {
            return Ok(Outcome::UpToDate);
        }
        std::fs::create_dir_all(self.stage_dir(stage, seed))?;
        let s = seed.unwrap_or(0);
        let cfg = seeded_config(&self.cfg, s);
        let dir = self.stage_dir(stage, seed);
        let details = match stage {
            Stage::Prepare => {
                let d = prepare_dataset(&cfg)?;
                cache::save(&d, &dir.join("dataset.bin"))?;
                serde_json::json!({
                    "dataset": d.metadata.name,
                    "train_windows": d.train.len(),
                    "validation_windows": d.validation.len(),
                    "classes": d.train.class_names,
                })
            }
            Stage::Pretext => {
                let d = self.dataset()?;
                let out = pretext_base(&cfg, &d)?;
                checkpoint::save(&dir.join("model.ckpt"), &out.network, None)?;
                json_file(&dir.join("history.json"), &out.history)?;
                serde_json::json!({ "epochs_run": out.history.len() })
            }
            Stage::Ensemble => {
                let d = self.dataset()?;
                let labeled = sample_labeled_subset(&d.train, cfg.supervised.per_class, labeled_seed(s))?;
                let d_u = d.train.unlabeled();
                let recipe = member_recipe(&cfg);
                let mut info = Vec::with_capacity(cfg.ensemble.members);
                for m in 0..cfg.ensemble.members {
                    let member = train_member(&d_u, &labeled, &cfg.ensemble, &recipe, m)?;
                    checkpoint::save(&dir.join(member_file(m)), &member.classifier.network, None)?;
                    info.push(member.info);
                }
                serde_json::json!({
                    "member_count": info.len(),
                    "members": info,
                    "labeled_windows": labeled.len(),
                })
            }
            Stage::Distill => {
                let d = self.dataset()?;
                self.require(Stage::Pretext, seed)?;
                let pretext = checkpoint::load(&self.stage_dir(Stage::Pretext, seed).join("model.ckpt"))?.network;
                let (members, _) = self.members(s)?;
                let mut log = String::from("epoch,temperature,combo_depth,mean_nll,combos\n");
                let log_path = dir.join("log.csv");
                let net = distill_members(&cfg, &d, &members, Some(&pretext), |e| {
                    log.push_str(&format!(
                        "{},{},{},{},{}\n",
                        e.epoch, e.temperature, e.combo_depth, e.mean_nll, e.combos
                    ));
                    write_atomic(&log_path, log.as_bytes())
                })?;
                checkpoint::save(&dir.join("model.ckpt"), &net, None)?;
                serde_json::json!({ "epochs": cfg.distill.epochs })
            }
            Stage::Evaluate => {
                let d = self.dataset()?;
                let (members, _) = self.members(s)?;
                self.require(Stage::Distill, seed)?;
                let distilled = checkpoint::load(&self.stage_dir(Stage::Distill, seed).join("model.ckpt"))?.network;
                let records = evaluate_models(&members, &distilled, &d.validation, &cfg.eval.epsilons)?;
                json_file(&dir.join("metrics.json"), &SeedReport { seed: s, records })?;
                serde_json::Value::Null
            }
            Stage::Report => {
                let d = self.dataset()?;
                let mut runs = Vec::new();
                for &seed in &self.cfg.data.seeds {
                    self.require(Stage::Evaluate, Some(seed))?;
                    runs.push(read_json(&self.stage_dir(Stage::Evaluate, Some(seed)).join("metrics.json"))?);
                }
                let report = EvalReport::new(
                    ReportMetadata {
                        dataset: d.metadata.name.clone(),
                        config_hash: self.cfg.hash()?,
                        seeds: self.cfg.data.seeds.clone(),
                        members: self.cfg.ensemble.members,
                        quantiles: QUANTILES.to_vec(),
                        train_windows: d.train.len(),
                        validation_windows: d.validation.len(),
                    },
                    runs,
                )?;
                write_atomic(&dir.join("report.json"), report.to_json()?.as_bytes())?;
                write_atomic(&dir.join("report.csv"), report.to_csv().as_bytes())?;
                write_atomic(&dir.join("summary.txt"), report.to_table().as_bytes())?;
                let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
                json_file(&dir.join("meta.json"), &serde_json::json!({ "generated_unix": now }))?;
                serde_json::Value::Null
            }
        };
        self.finish(stage, seed, details)?;
        Ok(Outcome::Ran)
    }
}

fn member_file(m: usize) -> String {
    format!("member_{m:03}.ckpt")
}
