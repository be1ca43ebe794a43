use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ckge_core::checkpoint;
use ckge_core::config::{Mode, RunConfig};
use ckge_core::eval::{cumulative_metrics, link_prediction_metrics, CandidateSet, FilterIndex, FinalRecord, MetricsRecord};
use ckge_core::footprint::Footprints;
use ckge_core::kg::{CumulativeGraph, Dataset};
use ckge_core::pipeline::{run_pipeline, PipelineResult, SnapshotOutcome};
use ckge_core::scale::{fit_scale_curve, predict_bounds, scale_points, ScaleFit};
use ckge_core::synthetic::{generate, SyntheticSpec};

#[derive(Parser)]
#[command(name = "ckge", version, about = "Continual knowledge graph embedding with adaptive dimensions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train over a snapshot sequence and write metrics and checkpoints.
    Train(TrainArgs),
    /// Fixed-dimension runs over a list of dimensions.
    Sweep(SweepArgs),
    /// Fit the parameter-count curve and report implied dimension bounds.
    FitScale(FitScaleArgs),
    /// Re-evaluate a checkpoint on a dataset's test splits.
    Eval(EvalArgs),
    /// Write a synthetic snapshot sequence.
    Generate(GenerateArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Dataset root containing 0/, 1/, ... snapshot directories.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Print per-epoch progress.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Initial (sage) or fixed (finetune, fixed-dim) dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Disable a component: SE, DS, LE or DI. Repeatable.
    #[arg(long)]
    ablate: Vec<String>,
    /// Also write footprints.tsv.
    #[arg(long)]
    footprints: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', required = true)]
    dims: Vec<usize>,
}

#[derive(Args)]
struct FitScaleArgs {
    /// TSV of `N<TAB>P` points.
    #[arg(long, conflicts_with = "data")]
    points: Option<PathBuf>,
    /// Dataset whose snapshot counts supply N; requires --dims.
    #[arg(long)]
    data: Option<PathBuf>,
    /// One dimension per snapshot (or a single one for all).
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    #[arg(long)]
    band: Option<f64>,
    /// Base config to merge the fit into.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the merged config here.
    #[arg(long)]
    write_config: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Decelerating,
    EntityGrowth,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value = "decelerating")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Override the cumulative entity schedule, e.g. 200,300,400.
    #[arg(long, value_delimiter = ',')]
    entities: Vec<usize>,
    /// Override the per-snapshot triple counts.
    #[arg(long, value_delimiter = ',')]
    triples: Vec<usize>,
    #[arg(long)]
    relations: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    relation_scale: Option<f64>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: ckge_core::Error| e.to_string())
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("config: reading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.train.verbose |= common.verbose;
    Ok(cfg)
}

fn init_workers(n: usize) {
    if n > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialised: {e}");
        }
    }
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = cfg.data.as_ref().context("no dataset given (--data or `data` config key)")?;
    Dataset::load(data).with_context(|| format!("kg-core: loading {}", data.display()))
}

/// Writes metrics, checkpoints and footprints as snapshots finish.
struct RunWriter {
    jsonl: BufWriter<File>,
    csv: BufWriter<File>,
    footprints: Option<BufWriter<File>>,
    ckpt_dir: PathBuf,
}

impl RunWriter {
    fn create(out: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
        fs::write(out.join("config.resolved"), cfg.to_text())?;
        let mut csv = BufWriter::new(File::create(out.join("metrics.csv"))?);
        writeln!(csv, "{}", MetricsRecord::CSV_HEADER)?;
        let footprints = if cfg.output_footprints {
            let mut f = BufWriter::new(File::create(out.join("footprints.tsv"))?);
            writeln!(f, "{}", Footprints::TSV_HEADER)?;
            Some(f)
        } else {
            None
        };
        Ok(Self {
            jsonl: BufWriter::new(File::create(out.join("metrics.jsonl"))?),
            csv,
            footprints,
            ckpt_dir: out.join("checkpoints"),
        })
    }

    fn snapshot(&mut self, o: &SnapshotOutcome<'_>) -> Result<()> {
        serde_json::to_writer(&mut self.jsonl, o.record)?;
        writeln!(self.jsonl)?;
        writeln!(self.csv, "{}", o.record.csv_row())?;
        let path = self.ckpt_dir.join(format!("snapshot_{}.ckpt", o.record.snapshot));
        checkpoint::save(&path, o.record.snapshot, &o.dataset.vocab, o.model)?;
        if let (Some(f), Some(fp)) = (self.footprints.as_mut(), o.footprints) {
            fp.write_tsv(&o.dataset.vocab, o.record.snapshot, f)?;
        }
        self.jsonl.flush()?;
        self.csv.flush()?;
        Ok(())
    }

    fn finish(mut self, res: &PipelineResult) -> Result<()> {
        let fin = FinalRecord {
            rtf: res.rtf.as_ref().map(|r| r.value),
            h_matrix: res.h_matrix.clone(),
            dims: res.dims.clone(),
        };
        serde_json::to_writer(&mut self.jsonl, &fin)?;
        writeln!(self.jsonl)?;
        self.jsonl.flush()?;
        if let Some(mut f) = self.footprints.take() {
            f.flush()?;
        }
        Ok(())
    }
}

fn train_to(dataset: &Dataset, cfg: &RunConfig, out: &Path) -> Result<PipelineResult> {
    let mut writer = RunWriter::create(out, cfg)?;
    let mut err = None;
    let res = run_pipeline(dataset, cfg, &mut |o| {
        writer.snapshot(o).map_err(|e| {
            let msg = e.to_string();
            err = Some(e);
            ckge_core::Error::InvalidArgument(format!("writing outputs: {msg}"))
        })
    });
    if let Some(e) = err {
        return Err(e);
    }
    let res = res.context("pipeline")?;
    writer.finish(&res)?;
    Ok(res)
}

fn print_summary(res: &PipelineResult) {
    let last = res.final_record();
    println!(
        "final: dim {} mrr {:.4} cum_mrr {:.4} cum_h1 {:.4} cum_h10 {:.4}",
        last.dim, last.mrr, last.cum_mrr, last.cum_h1, last.cum_h10
    );
    if let Some(r) = &res.rtf {
        println!("rtf {:.4}", r.value);
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(d) = args.dim {
        cfg.dim_initial = d;
    }
    for a in &args.ablate {
        for part in a.split(',') {
            cfg.ablate.add(part).context("cli")?;
        }
    }
    cfg.output_footprints |= args.footprints;
    cfg.validate().context("config")?;
    init_workers(cfg.workers);
    let out = cfg.out.clone().context("no output directory given (--out)")?;
    let dataset = load_dataset(&cfg)?;
    let res = train_to(&dataset, &cfg, &out)?;
    print_summary(&res);
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = resolve(&args.common)?;
    cfg.mode = Mode::FixedDim;
    cfg.validate().context("config")?;
    init_workers(cfg.workers);
    let out = cfg.out.clone().context("no output directory given (--out)")?;
    let dataset = load_dataset(&cfg)?;
    fs::create_dir_all(&out)?;
    let mut table: Vec<(usize, MetricsRecord)> = Vec::new();
    for &d in &args.dims {
        let mut c = cfg.clone();
        c.dim_initial = d;
        let res = train_to(&dataset, &c, &out.join(format!("dim_{d}"))).with_context(|| format!("dimension {d}"))?;
        table.extend(res.records.into_iter().map(|r| (d, r)));
    }
    let mut csv = BufWriter::new(File::create(out.join("sweep.csv"))?);
    writeln!(csv, "dim,snapshot,mrr,h1,h10,cum_mrr,cum_h1,cum_h10")?;
    for (d, r) in &table {
        writeln!(
            csv,
            "{d},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.snapshot, r.mrr, r.h1, r.h10, r.cum_mrr, r.cum_h1, r.cum_h10
        )?;
    }
    csv.flush()?;
    println!("snapshot\tbest_dim\tcum_mrr");
    for s in 0..dataset.len() {
        if let Some((d, r)) = table
            .iter()
            .filter(|(_, r)| r.snapshot == s)
            .max_by(|a, b| a.1.cum_mrr.total_cmp(&b.1.cum_mrr))
        {
            println!("{s}\t{d}\t{:.4}", r.cum_mrr);
        }
    }
    Ok(())
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(|c: char| c == '\t' || c == ',' || c.is_whitespace()).filter(|s| !s.is_empty());
        let (Some(n), Some(p), None) = (it.next(), it.next(), it.next()) else {
            bail!("{}:{}: expected two columns N and P", path.display(), i + 1);
        };
        let parse = |s: &str| s.parse::<f64>().with_context(|| format!("{}:{}: bad number '{s}'", path.display(), i + 1));
        pts.push((parse(n)?, parse(p)?));
    }
    Ok(pts)
}

fn cmd_fit_scale(args: FitScaleArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let band = args.band.unwrap_or(cfg.scale.band);
    let mut stats = Vec::new();
    let points = match (&args.points, &args.data) {
        (Some(p), _) => read_points(p)?,
        (None, Some(d)) => {
            let ds = Dataset::load(d).with_context(|| format!("kg-core: loading {}", d.display()))?;
            let dims = match args.dims.len() {
                0 => bail!("--data needs --dims"),
                1 => vec![args.dims[0]; ds.len()],
                n if n == ds.len() => args.dims.clone(),
                n => bail!("{n} dims given for {} snapshots", ds.len()),
            };
            let mut g = CumulativeGraph::new();
            let mut prev = 0;
            for s in &ds.snapshots {
                g.ingest(s);
                let c = g.element_counts();
                stats.push((c.entities, c.relations, c.triples - prev));
                prev = c.triples;
            }
            scale_points(&stats, &dims)
        }
        (None, None) => bail!("give --points or --data"),
    };
    let fit: ScaleFit = fit_scale_curve(&points, band).context("scale-estimator")?;
    println!("a\t{}", fit.a);
    println!("b\t{}", fit.b);
    println!("rms\t{}", fit.rms.unwrap_or(0.0));
    if !stats.is_empty() {
        println!("snapshot\tN\trows\ty_min\ty\ty_max");
        let mut n = 0;
        for (i, &(ne, nr, nt)) in stats.iter().enumerate() {
            n += nt;
            let b = predict_bounds(&fit, n, ne + nr);
            println!("{i}\t{n}\t{}\t{}\t{}\t{}", ne + nr, b.min, b.target, b.max);
        }
    }
    if let Some(p) = &args.write_config {
        cfg.scale = fit;
        fs::write(p, cfg.to_text()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let ck = checkpoint::load(&args.checkpoint).context("checkpoint")?;
    let ds = Dataset::load(&args.data).with_context(|| format!("kg-core: loading {}", args.data.display()))?;
    let n = ck.vocab.num_entities().min(ds.vocab.num_entities());
    if ck.vocab.entity_names()[..n] != ds.vocab.entity_names()[..n] {
        bail!("checkpoint vocabulary does not match the dataset");
    }
    let upto = ck.snapshot.min(ds.len() - 1);
    let mut g = CumulativeGraph::new();
    let mut filter = FilterIndex::default();
    for s in &ds.snapshots[..=upto] {
        g.ingest(s);
        filter.extend(s.all_triples());
    }
    let cands = CandidateSet::from_ids(
        ck.model.num_entities(),
        g.trained_entities().iter().copied().filter(|&e| (e as usize) < ck.model.num_entities()),
    );
    let mut per = Vec::new();
    println!("test_set\tmrr\th1\th10\tskipped");
    for (i, s) in ds.snapshots[..=upto].iter().enumerate() {
        let m = link_prediction_metrics(&ck.model, &s.test, &filter, &cands).with_context(|| format!("evaluator: test set {i}"))?;
        println!("{i}\t{:.4}\t{:.4}\t{:.4}\t{}", m.mrr, m.h1, m.h10, m.skipped);
        per.push(m);
    }
    let c = cumulative_metrics(&per);
    println!("cumulative\t{:.4}\t{:.4}\t{:.4}", c.mrr, c.h1, c.h10);
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut spec = match args.preset {
        Preset::Decelerating => SyntheticSpec::decelerating(args.seed),
        Preset::EntityGrowth => SyntheticSpec::entity_growth(args.seed),
    };
    if !args.entities.is_empty() {
        spec.entities = args.entities;
    }
    if !args.triples.is_empty() {
        spec.triples = args.triples;
    }
    if let Some(r) = args.relations {
        spec.relations = r;
    }
    if let Some(n) = args.noise {
        spec.noise = n;
    }
    if let Some(r) = args.relation_scale {
        spec.relation_scale = r;
    }
    if let Some(k) = args.latent_dim {
        spec.latent_dim = k;
    }
    let ds = generate(&spec)?;
    ds.write(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    for s in &ds.snapshots {
        println!("{}\t{}\t{}\t{}", s.index, s.train.len(), s.valid.len(), s.test.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let verbose = match &cli.command {
        Command::Train(a) => a.common.verbose,
        Command::Sweep(a) => a.common.verbose,
        _ => false,
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if verbose { "info" } else { "warn" })).init();
    let res = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::FitScale(a) => cmd_fit_scale(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Generate(a) => cmd_generate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
