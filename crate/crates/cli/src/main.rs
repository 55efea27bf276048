//! `fgnet` command-line front end.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fgnet::baselines::svm_train;
use fgnet::digitizer::{extract_trace, interpolate_gaps, PlotImage, RawTrace};
use fgnet::evaluation::{
    cross_validate, evaluate_holdout, random_subset, rank_of, transfer_experiment, undersample,
    EvaluationReport, Learner, Scorer, SvmLearner,
};
use fgnet::modelio::Model;
use fgnet::neuralnet::Network;
use fgnet::preprocess::preprocess_trace;
use fgnet::synthgen::generate;
use fgnet::{CsvMeta, Dataset, FunctionalGroup, LabeledSpectrum, N_CLASSES};
use rayon::prelude::*;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "fgnet", version, about = "Highest-priority functional group prediction from FTIR spectra")]
struct Cli {
    /// Config file with `[section]` headers and `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Master seed (`run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (`run.jobs`). Results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Directory for all written files.
    #[arg(long, global = true, env = "FGNET_OUT_DIR", default_value = "fgnet-out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Cnn,
    Svm,
}

impl ModelArg {
    fn key(self) -> &'static str {
        match self {
            ModelArg::Cnn => "cnn",
            ModelArg::Svm => "svm",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract (wavenumber, transmittance) traces from P2 plot images.
    Digitize {
        /// Image files or directories of `.pgm` files.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Turn trace CSVs into a labeled, model-ready dataset CSV.
    Preprocess {
        /// CSV with header `source_id,label`; source ids are trace file stems.
        #[arg(long)]
        manifest: PathBuf,
        /// Trace CSV files or directories of them.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "dataset")]
        tag: String,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        per_class: Option<usize>,
        /// Mix in bands of lower-priority groups.
        #[arg(long)]
        overlapping: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train a model on a dataset and save it.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score a saved model on a held-out dataset.
    Evaluate {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Repeated stratified k-fold cross-validation.
    Crossval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        /// Evaluate on this many randomly drawn samples.
        #[arg(long)]
        subset: Option<usize>,
        /// Cap every class at this many samples first.
        #[arg(long)]
        undersample: Option<usize>,
    },
    /// Cap every class at a maximum sample count.
    Undersample {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train on one dataset, test on another, in both directions.
    Transfer {
        #[arg(long)]
        old: PathBuf,
        #[arg(long)]
        new: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Ranked Top-K classes for one spectrum of a dataset.
    Predict {
        #[arg(long)]
        model_file: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Row index within the dataset.
        #[arg(long, default_value_t = 0)]
        row: usize,
        /// Select by source id instead of row.
        #[arg(long)]
        id: Option<String>,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
    },
    /// Write an untrained CNN with the configured architecture.
    InitModel {
        /// Zero the final layer so every class gets the same probability.
        #[arg(long)]
        zero_head: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the fully resolved configuration.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    for pair in &cli.overrides {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("run.seed", &seed.to_string())?;
    }
    if let Some(jobs) = cli.jobs {
        cfg.set("run.jobs", &jobs.to_string())?;
    }
    match &cli.command {
        Command::Synth { per_class, overlapping, .. } => {
            if let Some(n) = per_class {
                cfg.set("synth.per_class", &n.to_string())?;
            }
            if *overlapping {
                cfg.set("synth.overlap_mode", "overlapping")?;
            }
        }
        Command::Train { model: Some(m), .. } | Command::Transfer { model: Some(m), .. } => {
            cfg.set("model.kind", m.key())?;
        }
        Command::Crossval { model, repeats, folds, .. } => {
            if let Some(m) = model {
                cfg.set("model.kind", m.key())?;
            }
            if let Some(r) = repeats {
                cfg.set("evaluation.n_repeats", &r.to_string())?;
                cfg.set("evaluation.seeds", "")?;
            }
            if let Some(f) = folds {
                cfg.set("evaluation.n_folds", &f.to_string())?;
            }
        }
        Command::Undersample { per_class: Some(n), .. } => {
            cfg.set("evaluation.undersample_per_class", &n.to_string())?;
        }
        _ => {}
    }
    validate(&mut cfg)?;
    Ok(cfg)
}

/// Checks every section so a bad value aborts before any work starts.
fn validate(cfg: &mut RunConfig) -> Result<()> {
    cfg.jobs()?;
    cfg.preprocess()?;
    cfg.calibration()?;
    cfg.cnn()?;
    cfg.svm()?;
    cfg.synth()?;
    cfg.templates()?;
    cfg.cv()?;
    if !matches!(cfg.raw("model.kind"), "cnn" | "svm") {
        bail!("model.kind must be `cnn` or `svm`, got `{}`", cfg.raw("model.kind"));
    }
    if cfg.get::<usize>("evaluation.undersample_per_class")? == 0 {
        bail!("evaluation.undersample_per_class must be >= 1");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;
    let out = cli.out_dir.clone();
    match cli.command {
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
        Command::Digitize { inputs } => cmd_digitize(&cfg, &inputs, &out),
        Command::Preprocess { manifest, inputs, tag, output } => {
            let output = output.unwrap_or_else(|| out.join(format!("{tag}.csv")));
            cmd_preprocess(&cfg, &manifest, &inputs, &tag, &output)
        }
        Command::Synth { output, .. } => {
            let d = generate(&cfg.synth()?, &cfg.templates()?)?;
            write_dataset(&d, &output.unwrap_or_else(|| out.join("synthetic.csv")))
        }
        Command::Train { data, output, .. } => {
            let d = load_dataset(&cfg, &data)?;
            let kind = cfg.raw("model.kind").to_string();
            let model = match kind.as_str() {
                "cnn" => Model::Cnn(cfg.cnn()?.fit_network(&d, cfg.seed()?)?),
                _ => Model::Svm(svm_train(&d, &cfg.svm()?)?),
            };
            let path = output.unwrap_or_else(|| out.join(format!("model-{kind}.fgm")));
            create_parent(&path)?;
            model.save(&path)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
        Command::Evaluate { model_file, data } => {
            let model = Model::load(&model_file).with_context(|| format!("loading {}", model_file.display()))?;
            let d = load_dataset(&cfg, &data)?;
            let mut snapshot = cfg.snapshot();
            snapshot.insert("evaluate.model_file".into(), model_file.display().to_string());
            let report = evaluate_holdout(&model, model_name(&model), &d, snapshot)?;
            write_report(&report, &cfg.top_k()?, &out, &format!("evaluate-{}", d.tag()))
        }
        Command::Crossval { data, subset, undersample: cap, .. } => {
            let mut d = load_dataset(&cfg, &data)?;
            let seed = cfg.seed()?;
            if let Some(cap) = cap {
                d = undersample(&d, cap, seed.derive(1))?;
            }
            if let Some(n) = subset {
                d = random_subset(&d, n, seed.derive(2))?;
            }
            let mut cv = cfg.cv()?;
            cv.snapshot.insert("crossval.undersample".into(), cap.map_or("none".into(), |c| c.to_string()));
            cv.snapshot.insert("crossval.subset".into(), subset.map_or("none".into(), |n| n.to_string()));
            let learner = learner(&cfg)?;
            let report = cross_validate(&d, learner.as_ref(), &cv)?;
            write_report(&report, &cfg.top_k()?, &out, &format!("crossval-{}", learner.name()))
        }
        Command::Undersample { data, output, .. } => {
            let d = load_dataset(&cfg, &data)?;
            let u = undersample(&d, cfg.get("evaluation.undersample_per_class")?, cfg.seed()?.derive(1))?;
            write_dataset(&u, &output.unwrap_or_else(|| out.join(format!("{}-undersampled.csv", d.tag()))))
        }
        Command::Transfer { old, new, .. } => {
            let (old, new) = (load_dataset(&cfg, &old)?, load_dataset(&cfg, &new)?);
            let learner = learner(&cfg)?;
            let report = transfer_experiment(&old, &new, learner.as_ref(), cfg.seed()?, cfg.snapshot())?;
            for r in &report.results {
                println!(
                    "train {} ({}) -> test {} ({}): {:.2}%",
                    r.train_tag, r.n_train, r.test_tag, r.n_test, r.accuracy
                );
            }
            let path = out.join(format!("transfer-{}.json", report.model));
            write_text(&path, &serde_json::to_string_pretty(&report)?)
        }
        Command::Predict { model_file, data, row, id, top_k } => {
            let model = Model::load(&model_file).with_context(|| format!("loading {}", model_file.display()))?;
            let d = load_dataset(&cfg, &data)?;
            cmd_predict(&model, &d, row, id.as_deref(), top_k)
        }
        Command::InitModel { zero_head, output } => {
            let n_points = cfg.preprocess()?.n_points;
            let mut net = Network::new(n_points, N_CLASSES, &cfg.architecture()?, cfg.seed()?)?;
            if zero_head {
                net.zero_head();
            }
            let path = output.unwrap_or_else(|| out.join("model-cnn.fgm"));
            create_parent(&path)?;
            Model::Cnn(net).save(&path)?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn learner(cfg: &RunConfig) -> Result<Box<dyn Learner>> {
    Ok(match cfg.raw("model.kind") {
        "cnn" => Box::new(cfg.cnn()?),
        _ => Box::new(SvmLearner { config: cfg.svm()? }),
    })
}

fn model_name(m: &Model) -> &'static str {
    match m {
        Model::Cnn(_) => "cnn",
        Model::Svm(_) => "svm",
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn write_dataset(d: &Dataset, path: &Path) -> Result<()> {
    write_text(path, &d.to_csv_string())
}

fn write_report(report: &EvaluationReport, ks: &[usize], out: &Path, stem: &str) -> Result<()> {
    let text = report.to_text(ks);
    print!("{text}");
    write_text(&out.join(format!("{stem}.json")), &report.to_json())?;
    write_text(&out.join(format!("{stem}.txt")), &text)?;
    write_text(&out.join(format!("{stem}.svg")), &report.per_class_svg())
}

/// Tag is the file stem, so two datasets loaded from different files never collide.
fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let pre = cfg.preprocess()?;
    let meta = CsvMeta {
        tag: file_stem(path),
        wavenumber_start: pre.window_start,
        wavenumber_end: pre.window_end,
        normalized: true,
    };
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Dataset::read_csv(BufReader::new(file), &meta).with_context(|| format!("reading {}", path.display()))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

/// Files given directly plus files with extension `ext` inside given
/// directories, sorted.
fn expand_inputs(inputs: &[PathBuf], ext: &str) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            for entry in fs::read_dir(input).with_context(|| format!("listing {}", input.display()))? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext)) {
                    files.push(p);
                }
            }
        } else {
            files.push(input.clone());
        }
    }
    files.sort();
    Ok(files)
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn cmd_digitize(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let cal = cfg.calibration()?;
    let files = expand_inputs(inputs, "pgm")?;
    if files.is_empty() {
        bail!("no images found");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let digitize = |path: &PathBuf| -> Result<PathBuf> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let img = PlotImage::parse_pgm(&text)?;
        let trace = interpolate_gaps(&extract_trace(&img, &cal)?, &cal, img.width())?;
        let target = out.join(format!("{}.csv", file_stem(path)));
        fs::write(&target, trace.to_csv()).with_context(|| format!("writing {}", target.display()))?;
        Ok(target)
    };
    let results: Vec<Result<PathBuf>> = with_pool(cfg.jobs()?, || files.par_iter().map(digitize).collect());
    let mut failed = 0;
    for (path, r) in files.iter().zip(results) {
        match r {
            Ok(target) => eprintln!("wrote {}", target.display()),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e:#}", path.display());
            }
        }
    }
    if failed > 0 {
        bail!("{failed} of {} images failed", files.len());
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<BTreeMap<String, FunctionalGroup>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim().replace(' ', "") == "source_id,label" => {}
        _ => bail!("{}: header must be `source_id,label`", path.display()),
    }
    let mut map = BTreeMap::new();
    for (n, line) in lines {
        let (id, label) = line
            .split_once(',')
            .ok_or_else(|| anyhow!("{} line {}: expected `source_id,label`", path.display(), n + 1))?;
        let group: FunctionalGroup = label
            .trim()
            .parse()
            .with_context(|| format!("{} line {}", path.display(), n + 1))?;
        if map.insert(id.trim().to_string(), group).is_some() {
            bail!("{} line {}: duplicate source id `{}`", path.display(), n + 1, id.trim());
        }
    }
    Ok(map)
}

fn cmd_preprocess(cfg: &RunConfig, manifest: &Path, inputs: &[PathBuf], tag: &str, output: &Path) -> Result<()> {
    let pre = cfg.preprocess()?;
    let labels = read_manifest(manifest)?;
    let files = expand_inputs(inputs, "csv")?;
    if files.is_empty() {
        bail!("no trace files found");
    }
    let mut samples = Vec::with_capacity(files.len());
    for path in &files {
        let id = file_stem(path);
        let label = *labels
            .get(&id)
            .ok_or_else(|| anyhow!("{}: source id `{id}` is not in the manifest", path.display()))?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let trace = RawTrace::parse_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
        let spectrum = preprocess_trace(&trace, &pre).with_context(|| format!("preprocessing {}", path.display()))?;
        samples.push(LabeledSpectrum { spectrum, label, source_id: id });
    }
    write_dataset(&Dataset::new(samples, tag)?, output)
}

fn cmd_predict(model: &Model, d: &Dataset, row: usize, id: Option<&str>, top_k: usize) -> Result<()> {
    if top_k == 0 || top_k > N_CLASSES {
        bail!("--top-k must be in 1..={N_CLASSES}");
    }
    let sample = match id {
        Some(id) => d
            .samples()
            .iter()
            .find(|s| s.source_id == id)
            .ok_or_else(|| anyhow!("no sample with id `{id}`"))?,
        None => d
            .samples()
            .get(row)
            .ok_or_else(|| anyhow!("row {row} out of range ({} rows)", d.len()))?,
    };
    let scores = model.score_batch(&[&sample.spectrum])?.remove(0);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by_key(|&c| rank_of(&scores, c));
    println!("sample {} (label {})", sample.source_id, sample.label);
    let header = match model {
        Model::Cnn(_) => "probability",
        Model::Svm(_) => "score",
    };
    println!("{:<6}{:<12}{:>12}", "rank", "class", header);
    for (rank, &c) in order.iter().take(top_k).enumerate() {
        let name = FunctionalGroup::from_index(c).map_or("?", FunctionalGroup::name);
        let value = match model {
            Model::Cnn(_) => format!("{:.2}%", 100.0 * scores[c]),
            Model::Svm(_) => format!("{:.4}", scores[c]),
        };
        println!("{:<6}{:<12}{:>12}", rank + 1, name, value);
    }
    Ok(())
}
