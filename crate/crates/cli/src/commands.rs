use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use stockdiff::dataio::{
    self, group_records, read_denylist, read_price_csv, read_windows_jsonl, repair_suspensions, write_windows_jsonl,
    Board, Manifest, SeriesWindow, Split,
};
use stockdiff::eval::{momentum_panel, topk_dropk_backtest, BacktestSummary, PredictionPanel};
use stockdiff::rng::derive_seed;
use stockdiff::samplers::{sample, GeneratedWindow, Transfer};
use stockdiff::scorenet::{train, Checkpoint, Condition, ScoreNetworkParams, TrainingItem};

use crate::config::{Emit, RunConfig};
use crate::error::CliError;
use crate::plot::line_chart;

pub struct Context {
    pub cfg: RunConfig,
    pub digest: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let digest = cfg.digest();
        Self { cfg, digest }
    }

    fn out_dir(&self) -> Result<&Path, CliError> {
        let out = self.cfg.paths.out.as_path();
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", out.display())))?;
        Ok(out)
    }

    fn out_path(&self, name: &str) -> Result<PathBuf, CliError> {
        Ok(self.out_dir()?.join(name))
    }

    /// Explicit path, else the config entry, else `default_name` in the output dir.
    fn resolve(&self, explicit: Option<PathBuf>, configured: &Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.or_else(|| configured.clone()).unwrap_or_else(|| self.cfg.paths.out.join(default_name))
    }

    /// Records the config digest and a content hash of every output.
    fn provenance(&self, command: &str, seed: Option<u64>, outputs: &[&Path]) -> Result<(), CliError> {
        let mut hashes = BTreeMap::new();
        for p in outputs {
            let bytes = std::fs::read(p)?;
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            hashes.insert(name, hex::encode(Sha256::digest(&bytes)));
        }
        let record = serde_json::json!({
            "command": command,
            "config_digest": self.digest,
            "seed": seed,
            "outputs": hashes,
        });
        write_json(&self.out_path(&format!("{command}.provenance.json"))?, &record)
    }
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{what} {} not found", path.display())))
    }
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_store(path: &Path, windows: &[SeriesWindow]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_windows_jsonl(&mut w, windows)?;
    w.flush()?;
    Ok(())
}

fn load_store(path: &Path) -> Result<Vec<SeriesWindow>, CliError> {
    require_file(path, "window store")?;
    let windows = read_windows_jsonl(BufReader::new(open(path)?))?;
    if windows.is_empty() {
        return Err(CliError::Data(format!("window store {} is empty", path.display())));
    }
    Ok(windows)
}

fn load_checkpoint(path: &Path) -> Result<(ScoreNetworkParams, stockdiff::NoiseSchedule), CliError> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path)?.restore()?)
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    manifest: &'a Manifest,
}

pub fn ingest(ctx: &Context, input: Option<PathBuf>, denylist: Option<PathBuf>) -> Result<(), CliError> {
    let input = input
        .or_else(|| ctx.cfg.paths.input.clone())
        .ok_or_else(|| CliError::Config("ingest needs --input or paths.input".into()))?;
    require_file(&input, "price file")?;
    let deny = match denylist.or_else(|| ctx.cfg.paths.denylist.clone()) {
        Some(p) => {
            require_file(&p, "denylist")?;
            read_denylist(open(&p)?)?
        }
        None => Default::default(),
    };
    let rows = read_price_csv(BufReader::new(open(&input)?))?;
    let (windows, manifest) = dataio::ingest(&rows, &ctx.cfg.ingest(), &deny)?;
    if windows.is_empty() {
        return Err(CliError::Data("no ticker produced a full window".into()));
    }
    for ex in &manifest.exclusions {
        warn!("excluded {}: {}", ex.ticker, ex.reason);
    }
    let store = ctx.out_path("windows.jsonl")?;
    let manifest_path = ctx.out_path("manifest.json")?;
    write_store(&store, &windows)?;
    write_json(&manifest_path, &ManifestFile { config_digest: &ctx.digest, manifest: &manifest })?;
    info!("{} windows from {} tickers", manifest.windows, manifest.tickers);
    ctx.provenance("ingest", None, &[&store, &manifest_path])
}

pub fn train_cmd(ctx: &Context, store: Option<PathBuf>) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    let store = ctx.resolve(store, &ctx.cfg.paths.store, "windows.jsonl");
    let windows = load_store(&store)?;
    let items: Vec<TrainingItem> = windows
        .iter()
        .filter(|w| w.split == Split::Train)
        .map(|w| TrainingItem::new(w.values.clone(), w.condition()))
        .collect();
    if items.is_empty() {
        return Err(CliError::Data("store holds no training windows".into()));
    }
    let schedule = ctx.cfg.schedule()?;
    let init = ScoreNetworkParams::init(ctx.cfg.net(items[0].values.len()), derive_seed(seed, 0))?;
    let outcome = train(init, &items, &schedule, &ctx.cfg.train(derive_seed(seed, 1)))?;

    let mut metadata = BTreeMap::new();
    metadata.insert("config_digest".to_string(), ctx.digest.clone());
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert("train_windows".to_string(), items.len().to_string());
    metadata.insert("epochs".to_string(), outcome.epoch_losses.len().to_string());
    let ckpt = ctx.out_path("checkpoint.json")?;
    Checkpoint::new(&outcome.params, &schedule, metadata).save(&ckpt)?;

    let loss = ctx.out_path("loss.csv")?;
    let mut w = create(&loss)?;
    writeln!(w, "epoch,loss")?;
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    w.flush()?;
    let svg = ctx.out_path("loss.svg")?;
    std::fs::write(&svg, line_chart("training loss per epoch", &outcome.epoch_losses))?;
    ctx.provenance("train", Some(seed), &[&ckpt, &loss, &svg])
}

fn parse_board(s: &str) -> Result<Board, CliError> {
    Board::parse(s).map_err(|e| CliError::Config(e.to_string()))
}

pub struct SampleArgs {
    pub checkpoint: Option<PathBuf>,
    pub industry: Option<usize>,
    pub board: Option<String>,
    pub samples: Option<usize>,
    pub emit: Option<Emit>,
}

pub fn sample_cmd(ctx: &Context, args: SampleArgs) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    let path = ctx.resolve(args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint.json");
    let (params, schedule) = load_checkpoint(&path)?;
    let condition = match (args.industry, args.board.as_deref()) {
        (Some(i), Some(b)) => Condition::labels(i, parse_board(b)?.index()),
        (None, None) => Condition::Null,
        _ => return Err(CliError::Config("give both --industry and --board, or neither".into())),
    };
    condition.validate(params.config().industries)?;
    let mut scfg = ctx.cfg.sampler(seed);
    scfg.condition = condition;
    if condition.is_null() {
        scfg.guidance = 0.0;
    }
    if let Some(m) = args.samples {
        scfg.samples = m;
    }
    let out = sample(&params, &schedule, &scfg)?;
    let (industry_id, board_id) = match condition {
        Condition::Labels { industry, board } => (Some(industry), Some(board)),
        Condition::Null => (None, None),
    };
    let record = |values: &[f64], seed: u64, kind: &str, index: usize| GeneratedWindow {
        ticker: None,
        industry_id,
        board_id,
        values: values.to_vec(),
        seed,
        config_digest: ctx.digest.clone(),
        kind: kind.to_string(),
        index,
    };
    let emit = args.emit.unwrap_or(ctx.cfg.sampler.emit);
    let path = ctx.out_path("samples.jsonl")?;
    let mut w = create(&path)?;
    if matches!(emit, Emit::Raw | Emit::Both) {
        for (i, s) in out.samples.iter().enumerate() {
            serde_json::to_writer(&mut w, &record(s, scfg.run_seed(i), "sample", i))?;
            w.write_all(b"\n")?;
        }
    }
    if matches!(emit, Emit::Mean | Emit::Both) {
        serde_json::to_writer(&mut w, &record(&out.mean, seed, "mean", 0))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    ctx.provenance("sample", Some(seed), &[&path])
}

/// `"r:s"` real-to-synthetic ratio.
pub fn parse_ratio(s: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Config(format!("ratio {s:?} must look like R:S with R ≥ 1"));
    let (r, syn) = s.split_once(':').ok_or_else(bad)?;
    let r: usize = r.trim().parse().map_err(|_| bad())?;
    let syn: usize = syn.trim().parse().map_err(|_| bad())?;
    if r == 0 {
        return Err(bad());
    }
    Ok((r, syn))
}

pub struct AugmentArgs {
    pub store: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub board: String,
    pub ratio: String,
    pub transfer_from: Option<String>,
}

pub fn augment(ctx: &Context, args: AugmentArgs) -> Result<(), CliError> {
    let seed = ctx.cfg.require_seed()?;
    let (real, synth) = parse_ratio(&args.ratio)?;
    let board = parse_board(&args.board)?;
    let store = ctx.resolve(args.store, &ctx.cfg.paths.store, "windows.jsonl");
    let mut windows = load_store(&store)?;
    let is_real_train = |w: &&SeriesWindow| w.split == Split::Train && !w.synthetic;
    let targets: Vec<SeriesWindow> = windows.iter().filter(is_real_train).filter(|w| w.board == board).cloned().collect();
    if targets.is_empty() {
        return Err(CliError::Config(format!("board {} has no training windows in the store", board.name())));
    }
    let sources: Option<Vec<SeriesWindow>> = match &args.transfer_from {
        Some(b) => {
            let src = parse_board(b)?;
            let found: Vec<SeriesWindow> = windows.iter().filter(is_real_train).filter(|w| w.board == src).cloned().collect();
            if found.is_empty() {
                return Err(CliError::Config(format!("transfer source board {} has no windows in the store", src.name())));
            }
            Some(found)
        }
        None => None,
    };
    let count = targets.len() * synth / real;
    if count > 0 {
        let path = ctx.resolve(args.checkpoint, &ctx.cfg.paths.checkpoint, "checkpoint.json");
        let (params, schedule) = load_checkpoint(&path)?;
        if params.config().window != targets[0].values.len() {
            return Err(CliError::Config("checkpoint window length differs from the store".into()));
        }
        for i in 0..count {
            let base = &targets[i % targets.len()];
            let mut scfg = ctx.cfg.sampler(derive_seed(seed, i as u64));
            scfg.condition = Condition::labels(base.industry_id, board.index());
            scfg.condition.validate(params.config().industries)?;
            if let Some(src) = &sources {
                let s = &src[i % src.len()];
                scfg.transfer = Some(Transfer { source: s.values.clone(), start_step: ctx.cfg.sampler.transfer_step });
            }
            let out = sample(&params, &schedule, &scfg)?;
            windows.push(SeriesWindow {
                ticker: format!("syn-{}-{i:05}", board.name()),
                start_date: base.start_date,
                values: out.mean,
                stats: None,
                industry_id: base.industry_id,
                board,
                split: Split::Train,
                synthetic: true,
            });
        }
    }
    info!("added {count} synthetic windows to board {}", board.name());
    let mut manifest = Manifest::default();
    manifest.recount(&windows);
    let out_store = ctx.out_path("augmented.jsonl")?;
    let manifest_path = ctx.out_path("augmented_manifest.json")?;
    write_store(&out_store, &windows)?;
    write_json(&manifest_path, &ManifestFile { config_digest: &ctx.digest, manifest: &manifest })?;
    ctx.provenance("augment", Some(seed), &[&out_store, &manifest_path])
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    config_digest: &'a str,
    #[serde(flatten)]
    summary: &'a BacktestSummary,
}

fn momentum_from_prices(ctx: &Context, path: &Path) -> Result<PredictionPanel, CliError> {
    let rows = read_price_csv(BufReader::new(open(path)?))?;
    let (records, _) = group_records(&rows);
    let mut repaired = Vec::new();
    for r in &records {
        match repair_suspensions(r, &ctx.cfg.ingest().repair) {
            Ok((rec, report)) if !report.exclude => repaired.push(rec),
            Ok(_) => warn!("{}: excluded by suspension rules", r.ticker),
            Err(e) => warn!("{}: {e}", r.ticker),
        }
    }
    Ok(momentum_panel(&repaired, ctx.cfg.eval.lookback, ctx.cfg.eval.horizon)?)
}

pub fn backtest(ctx: &Context, panel: Option<PathBuf>, prices: Option<PathBuf>, k: Option<usize>) -> Result<(), CliError> {
    let panel_path = panel.or_else(|| ctx.cfg.paths.panel.clone());
    let mut outputs = Vec::new();
    let panel = match (panel_path, prices) {
        (Some(p), None) => {
            require_file(&p, "panel")?;
            PredictionPanel::read_csv(BufReader::new(open(&p)?))?
        }
        (None, Some(p)) => {
            require_file(&p, "price file")?;
            let panel = momentum_from_prices(ctx, &p)?;
            let path = ctx.out_path("panel.csv")?;
            let mut w = create(&path)?;
            panel.write_csv(&mut w)?;
            w.flush()?;
            outputs.push(path);
            panel
        }
        (Some(_), Some(_)) => return Err(CliError::Config("give either --panel or --prices, not both".into())),
        (None, None) => return Err(CliError::Config("backtest needs --panel or --prices".into())),
    };
    let result = topk_dropk_backtest(&panel, k.unwrap_or(ctx.cfg.eval.k))?;
    let summary = result.summary();

    let trajectory = ctx.out_path("backtest_trajectory.csv")?;
    let mut w = create(&trajectory)?;
    result.write_trajectory_csv(&mut w)?;
    w.flush()?;
    let summary_path = ctx.out_path("backtest_summary.json")?;
    write_json(&summary_path, &SummaryFile { config_digest: &ctx.digest, summary: &summary })?;
    let curve = ctx.out_path("cumulative_rr.csv")?;
    let mut w = create(&curve)?;
    writeln!(w, "date,cumulative_rr")?;
    for d in &result.days {
        writeln!(w, "{},{}", d.date, d.cumulative_rr)?;
    }
    w.flush()?;
    let svg = ctx.out_path("cumulative_rr.svg")?;
    let ys: Vec<f64> = result.days.iter().map(|d| d.cumulative_rr).collect();
    std::fs::write(&svg, line_chart(&format!("cumulative return, top {}", result.k), &ys))?;
    info!("cumulative RR {:.6} over {} days", summary.cumulative_rr, summary.days);
    outputs.extend([trajectory, summary_path, curve, svg]);
    let refs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    ctx.provenance("backtest", None, &refs)
}

fn read_json(path: &Path) -> Option<Value> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Collects whatever artifacts exist in the output dir into one summary.
pub fn report(ctx: &Context) -> Result<(), CliError> {
    let out = ctx.out_dir()?;
    let mut report = serde_json::Map::new();
    report.insert("config_digest".into(), Value::from(ctx.digest.clone()));
    if let Some(m) = read_json(&out.join("manifest.json")) {
        let mut keep = serde_json::Map::new();
        for key in ["tickers", "windows", "train_windows", "test_windows", "per_board"] {
            if let Some(v) = m.get(key) {
                keep.insert(key.into(), v.clone());
            }
        }
        keep.insert("exclusions".into(), Value::from(m["exclusions"].as_array().map_or(0, Vec::len)));
        report.insert("ingest".into(), Value::Object(keep));
    }
    if let Ok(text) = std::fs::read_to_string(out.join("loss.csv")) {
        let losses: Vec<f64> = text.lines().skip(1).filter_map(|l| l.split(',').nth(1)?.parse().ok()).collect();
        report.insert(
            "train".into(),
            serde_json::json!({ "epochs": losses.len(), "first_loss": losses.first(), "last_loss": losses.last() }),
        );
    }
    if let Ok(text) = std::fs::read_to_string(out.join("samples.jsonl")) {
        report.insert("samples".into(), Value::from(text.lines().filter(|l| !l.trim().is_empty()).count()));
    }
    if let Some(m) = read_json(&out.join("augmented_manifest.json")) {
        report.insert("augment".into(), serde_json::json!({ "windows": m["windows"], "synthetic_windows": m["synthetic_windows"] }));
    }
    if let Some(s) = read_json(&out.join("backtest_summary.json")) {
        report.insert("backtest".into(), s);
    }
    let path = out.join("report.json");
    write_json(&path, &Value::Object(report.clone()))?;
    let text = serde_json::to_string_pretty(&Value::Object(report))?;
    // A closed pipe on stdout is not a failure; report.json is already written.
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
