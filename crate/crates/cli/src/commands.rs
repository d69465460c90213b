//! Subcommand bodies. Each takes a resolved [`RunConfig`] and writes its
//! artifacts; nothing here parses arguments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use s4m_core::atpm::PrototypeBank;
use s4m_core::data::{
    chronological_split, inject_missing, load_csv, save_csv, synth_generate, CorruptionManifest,
    TimeSeriesFrame,
};
use s4m_core::mds::{dual_kernels, DualStreamParams};
use s4m_core::ssm::{bilinear_discretize, layer_channels, materialize_kernel};
use s4m_core::train_eval::{
    evaluate, history_csv, metrics_csv, prepare, timing_csv, train, write_text, ErrorMetrics,
    Method, Model, PreparedData, SplitMetrics, SPLIT,
};
use s4m_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// `<path>.manifest`, next to a generated CSV.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e).into())
}

fn csv_err(e: csv::Error) -> CliError {
    Error::Csv {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
    .into()
}

fn finish(w: csv::Writer<Vec<u8>>) -> CliResult<String> {
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    Ok(String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))?)
}

/// Generates the synthetic series and writes it with its manifest.
pub fn synth(cfg: &RunConfig, out: &Path) -> CliResult<TimeSeriesFrame> {
    let s = &cfg.synth;
    let frame = synth_generate(s.t, s.seed, &cfg.synth_spec())?;
    save_csv(&frame, out)?;
    let manifest = format!(
        "kind = \"seasonal\"\nseed = {}\nt = {}\nd = {}\nsigma = {:?}\n",
        s.seed, s.t, s.d, s.sigma
    );
    write_text(&manifest_path(out), &manifest)?;
    Ok(frame)
}

/// Hides blocks of `input` and writes the result with its manifest.
pub fn corrupt(cfg: &RunConfig, input: &Path, out: &Path) -> CliResult<CorruptionManifest> {
    let clean = load_csv(input)?;
    let c = &cfg.corrupt;
    let (frame, manifest) = inject_missing(&clean, cfg.pattern()?, c.r, c.block_len, c.seed)?;
    save_csv(&frame, out)?;
    write_text(&manifest_path(out), &manifest.to_text())?;
    Ok(manifest)
}

/// Writes `train.csv`, `val.csv` and `test.csv` under `out_dir`.
pub fn split(input: &Path, out_dir: &Path) -> CliResult<[usize; 3]> {
    let frame = load_csv(input)?;
    let (tr, va, te) = chronological_split(&frame, SPLIT)?;
    create_dir(out_dir)?;
    for (name, part) in [("train", &tr), ("val", &va), ("test", &te)] {
        save_csv(part, &out_dir.join(format!("{name}.csv")))?;
    }
    Ok([tr.len(), va.len(), te.len()])
}

/// The configured input series and, if given, its clean reference.
pub fn load_data(cfg: &RunConfig) -> CliResult<(TimeSeriesFrame, Option<TimeSeriesFrame>)> {
    let input = cfg
        .data
        .input
        .as_deref()
        .ok_or_else(|| CliError::Config("`data.input` is required".into()))?;
    let frame = load_csv(input)?;
    let clean = cfg.data.clean.as_deref().map(load_csv).transpose()?;
    Ok((frame, clean))
}

fn prepared(cfg: &RunConfig) -> CliResult<PreparedData> {
    let (frame, clean) = load_data(cfg)?;
    Ok(prepare(&frame, clean.as_ref(), &cfg.train)?)
}

/// What `train` produced.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs: usize,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    pub has_truth: bool,
}

impl TrainSummary {
    /// Test error against the clean series when there is one, otherwise
    /// against the observed horizon entries.
    pub fn test_metrics(&self) -> ErrorMetrics {
        if self.has_truth {
            self.test.truth
        } else {
            self.test.observed
        }
    }
}

fn fit(cfg: &RunConfig, data: &PreparedData) -> CliResult<(Model, TrainSummary, String, String)> {
    let out = train(&cfg.train, data)?;
    let mut model = out.model;
    let val = evaluate(&mut model, &data.val)?;
    let test = evaluate(&mut model, &data.test)?;
    let summary = TrainSummary {
        best_epoch: out.best_epoch,
        epochs: out.history.len(),
        val,
        test,
        has_truth: data.has_truth,
    };
    Ok((model, summary, history_csv(&out.history)?, timing_csv(&out.history)?))
}

/// Trains one model and writes `config.toml`, `model/`, `history.csv`,
/// `timing.csv` and `metrics.csv` under `out_dir`.
pub fn train_run(cfg: &RunConfig, out_dir: &Path) -> CliResult<TrainSummary> {
    let data = prepared(cfg)?;
    create_dir(out_dir)?;
    cfg.echo(out_dir)?;
    let (model, summary, history, timing) = fit(cfg, &data)?;
    model.save(&out_dir.join("model"))?;
    write_text(&out_dir.join("history.csv"), &history)?;
    write_text(&out_dir.join("timing.csv"), &timing)?;
    let metrics = metrics_csv(&[("val", summary.val), ("test", summary.test)], summary.best_epoch)?;
    write_text(&out_dir.join("metrics.csv"), &metrics)?;
    Ok(summary)
}

/// Configuration and checkpoint of a finished `train` run.
pub fn load_run(run_dir: &Path, overrides: &[(String, toml::Value)]) -> CliResult<(RunConfig, Model)> {
    let cfg_path = run_dir.join("config.toml");
    if !cfg_path.exists() {
        return Err(CliError::Config(format!("{} has no config.toml", run_dir.display())));
    }
    let cfg = RunConfig::load(Some(&cfg_path), overrides)?;
    let model_dir = run_dir.join("model");
    if !model_dir.join("params.ckpt").exists() {
        return Err(Error::Data(format!("missing checkpoint under {}", model_dir.display())).into());
    }
    let model = Model::load(&model_dir, &cfg.train)?;
    Ok((cfg, model))
}

/// Re-evaluates a saved run and writes its metrics to `out`. The epoch
/// column is 0: the numbers come from the checkpoint, not from training.
pub fn eval_run(run_dir: &Path, overrides: &[(String, toml::Value)], out: &Path) -> CliResult<[SplitMetrics; 2]> {
    let (cfg, mut model) = load_run(run_dir, overrides)?;
    let data = prepared(&cfg)?;
    if data.d != model.d {
        return Err(Error::Data(format!(
            "input has {} variables, checkpoint expects {}",
            data.d, model.d
        ))
        .into());
    }
    let val = evaluate(&mut model, &data.val)?;
    let test = evaluate(&mut model, &data.test)?;
    write_text(out, &metrics_csv(&[("val", val), ("test", test)], 0)?)?;
    Ok([val, test])
}

/// One line of the comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub name: &'static str,
    pub method: Method,
    pub no_mask: bool,
    pub no_atpm: bool,
}

pub const VARIANTS: [Variant; 6] = [
    Variant { name: "s4m", method: Method::S4m, no_mask: false, no_atpm: false },
    Variant { name: "s4_mean", method: Method::Mean, no_mask: false, no_atpm: false },
    Variant { name: "s4_ffill", method: Method::Ffill, no_mask: false, no_atpm: false },
    Variant { name: "s4_decay", method: Method::Decay, no_mask: false, no_atpm: false },
    Variant { name: "s4m_no_mask", method: Method::S4m, no_mask: true, no_atpm: false },
    Variant { name: "s4m_no_atpm", method: Method::S4m, no_mask: false, no_atpm: true },
];

/// Seed-mean test error of one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub method: &'static str,
    pub mae: f64,
    pub mse: f64,
}

/// Trains every variant for every configured seed on the same data and
/// writes `comparison.csv` (seed means) and `runs.csv` (one row per run).
pub fn compare(cfg: &RunConfig, out_dir: &Path) -> CliResult<Vec<CompareRow>> {
    let (frame, clean) = load_data(cfg)?;
    create_dir(out_dir)?;
    cfg.echo(out_dir)?;
    let seeds = cfg.compare_seeds();
    let mut runs = csv::Writer::from_writer(Vec::new());
    runs.write_record(["method", "seed", "best_epoch", "epochs", "mae", "mse"]).map_err(csv_err)?;
    let mut rows = Vec::new();
    for v in &VARIANTS {
        let (mut mae, mut mse) = (0.0, 0.0);
        for &seed in &seeds {
            let mut run = cfg.clone();
            run.train.method = v.method;
            run.train.no_mask = v.no_mask;
            run.train.no_atpm = v.no_atpm;
            run.train.seed = seed;
            let data = prepare(&frame, clean.as_ref(), &run.train)?;
            log::info!("compare: {} seed {seed}", v.name);
            let (_, summary, _, _) = fit(&run, &data)?;
            let m = summary.test_metrics();
            runs.write_record([
                v.name.to_string(),
                seed.to_string(),
                summary.best_epoch.to_string(),
                summary.epochs.to_string(),
                m.mae.to_string(),
                m.mse.to_string(),
            ])
            .map_err(csv_err)?;
            mae += m.mae;
            mse += m.mse;
        }
        let n = seeds.len() as f64;
        rows.push(CompareRow { method: v.name, mae: mae / n, mse: mse / n });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "mae", "mse"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record([r.method.to_string(), r.mae.to_string(), r.mse.to_string()]).map_err(csv_err)?;
    }
    write_text(&out_dir.join("comparison.csv"), &finish(w)?)?;
    write_text(&out_dir.join("runs.csv"), &finish(runs)?)?;
    Ok(rows)
}

/// Bank dump of a saved run.
pub fn bank_of_run(run_dir: &Path) -> CliResult<PrototypeBank> {
    let (_, model) = load_run(run_dir, &[])?;
    model.bank.ok_or_else(|| Error::Data(format!("run {} has no prototype bank", run_dir.display())).into())
}

/// A bank initialized from the first training batch of the configured data,
/// before any training.
pub fn fresh_bank(cfg: &RunConfig) -> CliResult<PrototypeBank> {
    if !cfg.train.uses_bank() {
        return Err(CliError::Config("the configured method does not use a prototype bank".into()));
    }
    let data = prepared(cfg)?;
    let mut model = Model::new(&cfg.train, data.d, data.train_means.clone())?;
    let first = &data.train[..data.train.len().min(cfg.train.batch_size)];
    if first.is_empty() {
        return Err(Error::Data("no training windows".into()).into());
    }
    model.init_bank_from(first)?;
    Ok(model.bank.expect("bank was just initialized"))
}

/// Rows `block,channel,kernel,lag,value` for every SSM layer of `model`
/// over `len` lags. The mask-aware first block has kernels `k1` (data) and
/// `k2` (mask stream); plain blocks have `k`.
pub fn kernel_csv(model: &Model, len: usize) -> CliResult<String> {
    let blocks = model.cfg.blocks();
    let mut out = String::from("block,channel,kernel,lag,value\n");
    let mut push = |block: usize, ch: usize, name: &str, k: &[f64]| {
        for (lag, v) in k.iter().enumerate() {
            writeln!(out, "{block},{ch},{name},{lag},{v}").unwrap();
        }
    };
    for i in 0..blocks.n_blocks {
        let ssm = format!("block{i}.ssm");
        if i == 0 && blocks.dual {
            let p = DualStreamParams::from_params(&model.params, &ssm, "block0.mask")?;
            for ch in 0..p.channels() {
                let (k1, k2) = dual_kernels(&p, ch, len)?;
                push(i, ch, "k1", k1.as_slice());
                push(i, ch, "k2", k2.as_slice());
            }
        } else {
            for (ch, p) in layer_channels(&model.params, &ssm)?.iter().enumerate() {
                let k = materialize_kernel(&bilinear_discretize(p)?, &p.c, len);
                push(i, ch, "k", k.as_slice());
            }
        }
    }
    Ok(out)
}

/// A freshly initialized model for the configuration, for inspecting
/// kernels before training. `d` comes from `synth.d`.
pub fn fresh_model(cfg: &RunConfig) -> CliResult<Model> {
    let d = cfg.synth.d;
    Ok(Model::new(&cfg.train, d, vec![0.0; d])?)
}
