use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use sap_core::angle::write_features;
use sap_core::autodiff::{finite_difference_check, NodeId};
use sap_core::io::{
    load_checkpoint, save_checkpoint, write_atomic, Checkpoint, ExperimentConfig, RunManifest,
};
use sap_core::sap::{anchor_records, propose_anchor_pairs, SapParams, Variant};
use sap_core::skeleton::synthetic::{synthesize_sample, Split};
use sap_core::skeleton::{
    parse_ntu_skeleton_with, read_dataset, write_dataset, ParseOptions, SkeletonLayout,
    SkeletonSequence,
};
use sap_core::train::{
    evaluate, extract_features, run_ablation, train_from, AblationAxis, Evaluation, Model,
    ModelSpec, ParamSet, RunReport, Stream, TrainError, TrainState,
};

use crate::error::CliError;

/// Config file, overrides and output directory shared by every subcommand.
#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Config file with [data], [sap] and [train] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Run directory; created if missing.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

/// A run directory plus the manifest describing it.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Run {
    pub fn start(
        command: &str,
        common: &Common,
        config: &ExperimentConfig,
    ) -> Result<Self, CliError> {
        fs::create_dir_all(&common.out)?;
        let args = std::env::args().skip(1).collect();
        Ok(Self {
            dir: common.out.clone(),
            manifest: RunManifest::new(command, args, config),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.manifest.record(name);
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.manifest.finish(&self.dir)?;
        Ok(())
    }
}

fn parse_override(s: &str) -> Result<(&str, &str), CliError> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::Usage(format!("override {s:?} is not SECTION.KEY=VALUE")))
}

/// Directory that relative data paths in the config are resolved against.
fn config_base(common: &Common) -> PathBuf {
    common
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

/// Reads the config file (or defaults) and applies `--set` overrides.
pub fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, &common.overrides)?;
    absolutize(&mut cfg, &config_base(common));
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, overrides: &[String]) -> Result<(), CliError> {
    for o in overrides {
        let (k, v) = parse_override(o)?;
        cfg.apply_override(k, v)?;
    }
    Ok(())
}

/// Makes data file paths absolute so the stored config is self-contained.
fn absolutize(cfg: &mut ExperimentConfig, base: &Path) {
    for p in [&mut cfg.data.train_file, &mut cfg.data.test_file]
        .into_iter()
        .flatten()
    {
        let joined = base.join(&*p);
        *p = std::path::absolute(&joined).unwrap_or(joined);
    }
}

pub fn layout_for(joints: usize) -> Result<SkeletonLayout, CliError> {
    if joints == 25 {
        Ok(SkeletonLayout::ntu25())
    } else {
        Ok(SkeletonLayout::chain(joints)?)
    }
}

fn read_sapds(path: &Path) -> Result<Vec<SkeletonSequence>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_dataset(BufReader::new(f)).map_err(|e| CliError::from(e).context(path.display()))
}

fn dataset_bytes(seqs: &[SkeletonSequence]) -> Result<Vec<u8>, CliError> {
    let mut bytes = Vec::new();
    write_dataset(&mut bytes, seqs)?;
    Ok(bytes)
}

/// Stored in every checkpoint so later commands can rebuild the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub experiment: ExperimentConfig,
    pub frames: usize,
    pub joints: usize,
}

impl CheckpointMeta {
    fn spec(&self) -> Result<ModelSpec, CliError> {
        let cfg = &self.experiment;
        Ok(ModelSpec::new(
            self.frames,
            cfg.data.classes,
            layout_for(self.joints)?,
            &cfg.train,
            &cfg.sap,
        )?)
    }
}

fn open_checkpoint(path: &Path) -> Result<(CheckpointMeta, Checkpoint), CliError> {
    let ckpt = load_checkpoint(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let meta: CheckpointMeta = serde_json::from_value(ckpt.config.clone())
        .map_err(|e| CliError::Data(format!("{}: checkpoint config: {e}", path.display())))?;
    Ok((meta, ckpt))
}

/// The split a command reads: an explicit file, or one side of the
/// configured data.
fn samples(
    cfg: &ExperimentConfig,
    input: Option<&Path>,
    test_split: bool,
) -> Result<Vec<SkeletonSequence>, CliError> {
    if let Some(p) = input {
        return read_sapds(p);
    }
    let data = cfg.data.load(Path::new(""))?;
    Ok(if test_split { data.test } else { data.train })
}

pub fn gen_data(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let mut run = Run::start("gen-data", common, &cfg)?;
    let (train, test) = sap_core::skeleton::generate_synthetic_dataset(&cfg.data.task_spec())?;
    run.write("train.sapds", &dataset_bytes(&train)?)?;
    run.write("test.sapds", &dataset_bytes(&test)?)?;
    println!(
        "wrote {} train and {} test samples to {}",
        train.len(),
        test.len(),
        run.dir.display()
    );
    run.finish()
}

/// Action label from an NTU file name such as `S001C002P003R002A013`
/// (zero-based, so A013 is label 12).
pub fn label_from_file_name(path: &Path) -> Option<u32> {
    let stem = path.file_stem()?.to_str()?.as_bytes();
    let digit = |i: usize| stem.get(i).is_some_and(u8::is_ascii_digit);
    let at = (0..stem.len())
        .rev()
        .find(|&i| stem[i] == b'A' && (1..=3).all(|k| digit(i + k)) && !digit(i + 4))?;
    let n: u32 = std::str::from_utf8(&stem[at + 1..at + 4])
        .ok()?
        .parse()
        .ok()?;
    n.checked_sub(1)
}

pub struct ParseArgs {
    pub inputs: Vec<PathBuf>,
    pub joints: usize,
    pub min_frames: usize,
    pub label: Option<u32>,
}

pub fn parse(common: &Common, args: &ParseArgs) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let layout = layout_for(args.joints)?;
    let options = ParseOptions {
        min_frames: args.min_frames,
    };
    let mut seqs = Vec::with_capacity(args.inputs.len());
    for path in &args.inputs {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut seq = parse_ntu_skeleton_with(&text, &layout, options)
            .map_err(|e| CliError::from(e).context(path.display()))?;
        seq.label = args.label.or_else(|| label_from_file_name(path));
        seqs.push(seq);
    }
    let mut run = Run::start("parse", common, &cfg)?;
    run.write("dataset.sapds", &dataset_bytes(&seqs)?)?;
    println!("parsed {} sequences", seqs.len());
    run.finish()
}

pub struct FeaturizeArgs {
    pub input: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub test: bool,
}

pub fn featurize(common: &Common, args: &FeaturizeArgs) -> Result<(), CliError> {
    let (cfg, spec, params) = match &args.checkpoint {
        Some(p) => {
            let (meta, ckpt) = open_checkpoint(p)?;
            let spec = meta.spec()?;
            (meta.experiment, Some(spec), ckpt.params)
        }
        None => {
            let cfg = load_config(common)?;
            if cfg.train.streams.contains(&Stream::AnglesSap) {
                return Err(CliError::Usage(
                    "the angles-sap stream needs learned parameters; pass --checkpoint or \
                     choose other streams with --set train.streams=[...]"
                        .into(),
                ));
            }
            (cfg, None, ParamSet::new())
        }
    };
    let seqs = samples(&cfg, args.input.as_deref(), args.test)?;
    let first = seqs
        .first()
        .ok_or_else(|| CliError::Data("no samples to featurize".into()))?;
    let spec = match spec {
        Some(s) => s,
        None => ModelSpec::new(
            first.frames(),
            cfg.data.classes,
            layout_for(first.joints())?,
            &cfg.train,
            &cfg.sap,
        )?,
    };
    let features = seqs
        .iter()
        .map(|s| extract_features(&spec, &params, s))
        .collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<_> = seqs.iter().map(|s| s.label).collect();
    let mut bytes = Vec::new();
    let sidecar = write_features(&mut bytes, &features, &labels)?;
    let mut run = Run::start("featurize", common, &cfg)?;
    run.write("features.sapft", &bytes)?;
    run.write_json("features.json", &sidecar)?;
    println!(
        "featurized {} samples into {} channels",
        features.len(),
        sidecar.channels.len()
    );
    run.finish()
}

pub struct TrainArgs {
    pub resume: Option<PathBuf>,
    pub checkpoint_every: usize,
}

fn history_csv(report: &RunReport) -> String {
    let mut s = String::from("epoch,lr,train_loss,train_accuracy,test_accuracy\n");
    for e in &report.epochs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_accuracy,
            e.test_accuracy.map_or(String::new(), |a| a.to_string())
        ));
    }
    s
}

fn confusion_csv(eval: &Evaluation) -> String {
    let k = eval.confusion.len();
    let mut s = String::from("true\\predicted");
    for j in 0..k {
        s.push_str(&format!(",{j}"));
    }
    s.push('\n');
    for (i, row) in eval.confusion.iter().enumerate() {
        s.push_str(&i.to_string());
        for c in row {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
    }
    s
}

fn save_state(
    run: &mut Run,
    name: &str,
    state: &TrainState,
    meta: &CheckpointMeta,
) -> Result<(), CliError> {
    let ckpt = Checkpoint::from_state(state, serde_json::to_value(meta)?);
    save_checkpoint(&run.path(name), &ckpt)?;
    run.manifest.record(name);
    Ok(())
}

pub fn train(common: &Common, args: &TrainArgs) -> Result<(), CliError> {
    let (cfg, resumed) = match &args.resume {
        Some(p) => {
            if common.config.is_some() {
                return Err(CliError::Usage(
                    "--resume uses the checkpoint's config; adjust it with --set".into(),
                ));
            }
            let (meta, ckpt) = open_checkpoint(p)?;
            let mut cfg = meta.experiment;
            apply_overrides(&mut cfg, &common.overrides)?;
            (cfg, Some(ckpt.into_state()))
        }
        None => (load_config(common)?, None),
    };
    let data = cfg.data.load(Path::new(""))?;
    let first = data
        .train
        .first()
        .ok_or_else(|| CliError::Data("training split is empty".into()))?;
    let meta = CheckpointMeta {
        experiment: cfg.clone(),
        frames: first.frames(),
        joints: first.joints(),
    };
    let spec = meta.spec()?;
    let model = Model::build(&spec)?;
    let mut state = match resumed {
        Some(s) => s,
        None => TrainState::new(spec.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.train.seed))?),
    };
    let test = (!data.test.is_empty()).then_some(data.test.as_slice());
    let mut run = Run::start("train", common, &cfg)?;
    let epochs = cfg.train.epochs;
    let report = loop {
        let until = match args.checkpoint_every {
            0 => epochs,
            n => ((state.epoch / n + 1) * n).min(epochs),
        };
        match train_from(&model, state, &data.train, test, &cfg.train, until) {
            Ok((s, r)) => {
                state = s;
                if state.epoch >= epochs {
                    break r;
                }
            }
            Err(TrainError::DivergenceDetected {
                epoch,
                sample,
                state: last,
            }) => {
                save_state(&mut run, "diverged.ckpt", &last, &meta)?;
                run.finish()?;
                return Err(CliError::Numeric(format!(
                    "non-finite loss at epoch {epoch}, sample {sample}; state saved to diverged.ckpt"
                )));
            }
            Err(e) => return Err(e.into()),
        }
        save_state(
            &mut run,
            &format!("ckpt-epoch{}", state.epoch),
            &state,
            &meta,
        )?;
    };
    save_state(&mut run, "ckpt", &state, &meta)?;
    run.write_json("report.json", &report)?;
    run.write("history.csv", history_csv(&report).as_bytes())?;
    if let Some(eval) = &report.final_test {
        run.write("confusion.csv", confusion_csv(eval).as_bytes())?;
        println!("test accuracy {:.4}", eval.accuracy);
    }
    if let Some(last) = report.epochs.last() {
        println!("final train loss {:.4}", last.train_loss);
    }
    run.finish()
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub input: Option<PathBuf>,
}

pub fn eval(common: &Common, args: &EvalArgs) -> Result<(), CliError> {
    let (meta, ckpt) = open_checkpoint(&args.checkpoint)?;
    let spec = meta.spec()?;
    let model = Model::build(&spec)?;
    let seqs = samples(&meta.experiment, args.input.as_deref(), true)?;
    let result = evaluate(&model, &ckpt.params, &seqs)?;
    let mut run = Run::start("eval", common, &meta.experiment)?;
    run.write_json("eval.json", &result)?;
    run.write("confusion.csv", confusion_csv(&result).as_bytes())?;
    println!("accuracy {:.4} on {} samples", result.accuracy, seqs.len());
    run.finish()
}

pub struct AblateArgs {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
}

pub fn ablate(common: &Common, args: &AblateArgs) -> Result<(), CliError> {
    if args.seeds.is_empty() {
        return Err(CliError::Usage("--seeds needs at least one seed".into()));
    }
    let cfg = load_config(common)?;
    let data = cfg.data.load(Path::new(""))?;
    if data.test.is_empty() {
        return Err(CliError::Data("ablation needs a test split".into()));
    }
    let table = run_ablation(
        args.axis,
        &args.seeds,
        &data.layout,
        data.classes,
        &data.train,
        &data.test,
        &cfg.train,
        &cfg.sap,
    )?;
    let mut run = Run::start("ablate", common, &cfg)?;
    let path = run.write_json("ablation.json", &table)?;
    let mut csv = String::from("arm,seed,test_accuracy,final_train_loss\n");
    for r in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.arm,
            r.seed,
            r.test_accuracy,
            r.final_train_loss.map_or(String::new(), |l| l.to_string())
        ));
    }
    run.write("ablation.csv", csv.as_bytes())?;
    print!("{}", fs::read_to_string(path)?);
    run.finish()
}

pub struct GradcheckArgs {
    pub variant: Option<Variant>,
    pub heads: Option<usize>,
    pub seed: u64,
    pub frames: usize,
    pub hidden: [usize; 2],
    pub step: f64,
    pub tolerance: f64,
}

#[derive(Debug, Serialize)]
struct GradcheckEntry {
    name: String,
    worst_index: usize,
    analytic: f64,
    numeric: f64,
    rel_error: f64,
}

#[derive(Debug, Serialize)]
struct GradcheckSummary {
    tolerance: f64,
    max_rel_error: f64,
    passed: bool,
    parameters: Vec<GradcheckEntry>,
}

/// Finite-difference check of every model parameter on one seeded sample.
pub fn gradcheck(common: &Common, args: &GradcheckArgs) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(v) = args.variant {
        cfg.sap.variant = v;
    }
    if let Some(h) = args.heads {
        cfg.sap.heads = h;
    }
    cfg.train.hidden = args.hidden;
    cfg.train.seed = args.seed;
    if !cfg.train.streams.contains(&Stream::AnglesSap) {
        cfg.train.streams.push(Stream::AnglesSap);
    }
    cfg.data.frames = args.frames;
    cfg.data.seed = args.seed;
    cfg.validate()?;

    let task = cfg.data.task_spec();
    let sample = synthesize_sample(&task, Split::Test, 0, 0)?.sequence;
    let spec = ModelSpec::new(
        sample.frames(),
        cfg.data.classes,
        task.layout()?,
        &cfg.train,
        &cfg.sap,
    )?;
    let model = Model::build(&spec)?;
    let params = spec.init_params(&mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let seq = spec.prepare(&sample)?;
    let (joints, target) = model.inputs(&seq, sample.label)?;
    let bindings = model.bindings(&params, &joints, &target)?;
    let ids: Vec<NodeId> = model.param_nodes().iter().map(|p| p.1).collect();
    let report = finite_difference_check(
        model.graph(),
        &bindings,
        model.loss_node(),
        &ids,
        args.step,
        args.tolerance,
    )?;
    let mut run = Run::start("gradcheck", common, &cfg)?;
    let summary = GradcheckSummary {
        tolerance: report.tolerance,
        max_rel_error: report.max_rel_error(),
        passed: report.passed(),
        parameters: report
            .entries
            .iter()
            .map(|e| GradcheckEntry {
                name: e.name.clone(),
                worst_index: e.worst_index,
                analytic: e.analytic,
                numeric: e.numeric,
                rel_error: e.rel_error,
            })
            .collect(),
    };
    let mut out = BufWriter::new(std::io::stdout().lock());
    for e in &summary.parameters {
        writeln!(out, "{:<28} {:.3e}", e.name, e.rel_error)?;
    }
    writeln!(
        out,
        "max relative error {:.3e} (tolerance {:.0e}): {}",
        summary.max_rel_error,
        summary.tolerance,
        if summary.passed { "pass" } else { "FAIL" }
    )?;
    out.flush()?;
    run.write_json("gradcheck.json", &summary)?;
    let passed = summary.passed;
    let max = summary.max_rel_error;
    run.finish()?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "max relative error {max:e} exceeds {:e}",
            args.tolerance
        )))
    }
}

pub struct ExportAnchorsArgs {
    pub checkpoint: PathBuf,
    pub sample: usize,
    pub input: Option<PathBuf>,
    pub train_split: bool,
}

pub fn export_anchors(common: &Common, args: &ExportAnchorsArgs) -> Result<(), CliError> {
    let (meta, ckpt) = open_checkpoint(&args.checkpoint)?;
    let spec = meta.spec()?;
    if !spec.streams.contains(&Stream::AnglesSap) {
        return Err(CliError::Usage(
            "checkpoint has no SAP parameters (angles-sap stream not trained)".into(),
        ));
    }
    let sap = SapParams::from_named(&spec.sap, |name| ckpt.params.get(name).cloned())
        .map_err(|e| CliError::Data(e.to_string()).context(args.checkpoint.display()))?;
    let seqs = samples(&meta.experiment, args.input.as_deref(), !args.train_split)?;
    let seq = seqs.get(args.sample).ok_or_else(|| {
        CliError::Usage(format!(
            "sample {} out of range ({} samples)",
            args.sample,
            seqs.len()
        ))
    })?;
    let prepared = spec.prepare(seq)?;
    let anchors = propose_anchor_pairs(&prepared, &sap)?;
    let records = anchor_records(&anchors);
    let mut run = Run::start("export-anchors", common, &meta.experiment)?;
    let path = run.write_json("anchors.json", &records)?;
    print!("{}", fs::read_to_string(path)?);
    run.finish()
}
