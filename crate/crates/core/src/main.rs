use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use mrirecon::baselines::CsConfig;
use mrirecon::io;
use mrirecon::mri_model::{MaskKind, SamplingMask};
use mrirecon::nets::{ModelConfig, ModelKind};
use mrirecon::phantom::{make_coils, make_phantom, simulate_acquisition, DatasetRecord, PhantomFamily};
use mrirecon::sampling::{MaskSpec, OffsetPolicy};
use mrirecon::train::{
    evaluate, train, AdamConfig, EvalOptions, LossKind, Method, TrainConfig, TrainOutputs, WeightOrientation,
};
use mrirecon::{Error, Result};

/// Accelerated multicoil MRI reconstruction on synthetic phantoms.
///
/// Every subcommand accepts `--config c.json`, a JSON object keyed by the
/// subcommand's long flag names; flags given on the command line win. Seeds
/// fall back to the RECON_SEED environment variable, then to 0.
#[derive(Parser)]
#[command(name = "mrirecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic brain phantoms.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Undersampling masks.
    #[command(subcommand)]
    Mask(MaskCommand),
    /// Acquire multicoil k-space from a phantom and a mask.
    Simulate(SimulateArgs),
    /// Train a reconstruction network on a directory of records.
    Train(TrainArgs),
    /// Reconstruct one record.
    Recon(ReconArgs),
    /// Score methods on a directory of records and write a metrics CSV.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Write `phantom_<seed>.cks` for seeds S .. S+N.
    Gen(PhantomGenArgs),
}

#[derive(Subcommand)]
enum MaskCommand {
    /// Write one mask (`.cks` container, or a PBM bitmap for `.pbm`).
    Gen(MaskGenArgs),
}

#[derive(Args, Default)]
struct Common {
    /// JSON file with default values for this subcommand's flags.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct PhantomGenArgs {
    /// Phantom family JSON (grid size, jitter, lesions, phase) [default: 64x64 family]
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of phantoms [default: 1]
    #[arg(long)]
    count: Option<usize>,
    /// First seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct MaskGenArgs {
    /// gaussian2d | equidistant1d | poisson2d | full [default: gaussian2d]
    #[arg(long)]
    kind: Option<String>,
    /// Grid size as HxW [default: 64x64]
    #[arg(long)]
    size: Option<String>,
    /// Acceleration factor; evaluated at 4, 6, 8 and 10 [default: 4]
    #[arg(long)]
    acc: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Gaussian FWHM relative to the k-space extent [default: 0.7]
    #[arg(long)]
    fwhm: Option<f64>,
    /// Relative half-axes of the fully sampled center (2D masks) [default: 0.02]
    #[arg(long)]
    acs: Option<f64>,
    /// Fraction of fully sampled central lines (equidistant1d) [default: 0.08]
    #[arg(long)]
    center_frac: Option<f64>,
    /// Output file (`.cks` or `.pbm`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct SimulateArgs {
    /// Phantom file, or a directory of phantoms.
    #[arg(long)]
    phantom: Option<PathBuf>,
    /// Mask file shared by every record; without it each record draws a
    /// Gaussian 2D 4x mask seeded by its own seed.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Receiver coils [default: 4]
    #[arg(long)]
    coils: Option<usize>,
    /// Complex noise standard deviation at sampled positions [default: 0.02]
    #[arg(long)]
    sigma: Option<f64>,
    /// Noise seed; with a phantom directory, record i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output record file, or a directory when `--phantom` is one.
    #[arg(long)]
    out: Option<PathBuf>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct TrainArgs {
    /// cirim | rim | irim | varnet [default: cirim]
    #[arg(long)]
    model: Option<String>,
    /// implicit | explicit | both [default: implicit, explicit for varnet]
    #[arg(long)]
    dc: Option<String>,
    /// full | desk: full-size or CPU-sized architecture [default: full]
    #[arg(long)]
    preset: Option<String>,
    /// Cascades K [default: 5, 8 for varnet]
    #[arg(long)]
    cascades: Option<usize>,
    /// Iterations T per cascade [default: 8]
    #[arg(long)]
    iterations: Option<usize>,
    /// Hidden channels [default: 64, 18 for varnet]
    #[arg(long)]
    channels: Option<usize>,
    /// Directory of training records.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory of validation records [default: last 10% of --data]
    #[arg(long)]
    val: Option<PathBuf>,
    /// Passes over the training records [default: 5]
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// ADAM learning rate [default: 1e-3]
    #[arg(long)]
    lr: Option<f64>,
    /// l1 | cirim | ssim [default: cirim for RIM models, ssim on equidistant1d masks, else l1]
    #[arg(long)]
    loss: Option<String>,
    /// later | earlier: which iterations the CIRIM loss weights most [default: later]
    #[arg(long)]
    weights: Option<String>,
    /// Checkpoint path (best validation loss).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training log CSV [default: <out>.log.csv]
    #[arg(long)]
    log: Option<PathBuf>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct ReconArgs {
    /// Checkpoint file, `zerofill` or `cs`.
    #[arg(long)]
    model: Option<String>,
    /// Record file.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    /// Output image (`.pgm`, or `.cks` for the complex image).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CS regularization weight [default: 0.005]
    #[arg(long)]
    alpha: Option<f64>,
    /// CS iterations [default: 60]
    #[arg(long)]
    cs_iters: Option<usize>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(default, rename_all = "kebab-case")]
struct EvalArgs {
    /// Comma-separated checkpoints and baselines (`cs`, `zerofill`, `reference`).
    #[arg(long)]
    methods: Option<String>,
    /// Directory of test records.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Metrics CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset label in the report [default: name of --data]
    #[arg(long)]
    dataset: Option<String>,
    /// CS regularization weight [default: 0.005]
    #[arg(long)]
    alpha: Option<f64>,
    /// CS iterations [default: 60]
    #[arg(long)]
    cs_iters: Option<usize>,
    /// Fill the wall_ms column (makes the report run-dependent).
    #[arg(long)]
    timing: bool,
    /// Worker threads [default: all cores]
    #[arg(long)]
    jobs: Option<usize>,
    #[serde(skip)]
    #[command(flatten)]
    common: Common,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", e.kind());
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Phantom(PhantomCommand::Gen(a)) => {
            let cfg = a.common.config.clone();
            phantom_gen(merge(a, cfg.as_deref())?)
        }
        Command::Mask(MaskCommand::Gen(a)) => {
            let cfg = a.common.config.clone();
            mask_gen(merge(a, cfg.as_deref())?)
        }
        Command::Simulate(a) => {
            let cfg = a.common.config.clone();
            simulate(merge(a, cfg.as_deref())?)
        }
        Command::Train(a) => {
            let cfg = a.common.config.clone();
            train_cmd(merge(a, cfg.as_deref())?)
        }
        Command::Recon(a) => {
            let cfg = a.common.config.clone();
            recon(merge(a, cfg.as_deref())?)
        }
        Command::Eval(a) => {
            let cfg = a.common.config.clone();
            eval(merge(a, cfg.as_deref())?)
        }
    }
}

/// Overlay the flags that were given onto the config file's values.
fn merge<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else { return Ok(flags) };
    let mut base: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let Value::Object(map) = &mut base else {
        return Err(Error::InvalidArgument(format!("{} must hold a JSON object", path.display())));
    };
    if let Value::Object(given) = serde_json::to_value(&flags)? {
        for (k, v) in given {
            if !v.is_null() && v != Value::Bool(false) {
                map.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("RECON_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("RECON_SEED='{v}' is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

/// Use `jobs` threads, or 1 when `jobs` is `None` and `default_all` is false.
fn thread_pool(jobs: Option<usize>, default_all: bool) -> Result<()> {
    let n = match (jobs, default_all) {
        (Some(0), _) => return Err(Error::InvalidArgument("--jobs must be at least 1".into())),
        (Some(n), _) => n,
        (None, true) => return Ok(()),
        (None, false) => 1,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: Option<&str>, default: &str) -> Result<T> {
    s.unwrap_or(default).parse()
}

fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::InvalidArgument(format!("size '{s}' is not of the form HxW"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

/// `.cks` files in `dir`, sorted by name.
fn containers_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "cks"));
    files.sort();
    Ok(files)
}

fn load_records(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let files = containers_in(dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .cks records in {}", dir.display())));
    }
    files.iter().map(|p| io::read_record(p)).collect()
}

fn phantom_gen(a: PhantomGenArgs) -> Result<()> {
    thread_pool(a.jobs, true)?;
    let family: PhantomFamily = match &a.spec {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => PhantomFamily::default(),
    };
    let out = required(a.out, "out")?;
    std::fs::create_dir_all(&out)?;
    let seed = seed_or_env(a.seed)?;
    let count = a.count.unwrap_or(1) as u64;
    use rayon::prelude::*;
    (seed..seed + count).into_par_iter().try_for_each(|s| {
        let spec = family.sample(s);
        let phantom = make_phantom(&spec)?;
        io::write_phantom(&out.join(format!("phantom_{s:06}.cks")), &phantom, json!({ "spec": spec }))
    })
}

fn mask_gen(a: MaskGenArgs) -> Result<()> {
    let kind: MaskKind = parse(a.kind.as_deref(), "gaussian2d")?;
    let (h, w) = parse_size(a.size.as_deref().unwrap_or("64x64"))?;
    let mut spec = MaskSpec::new(kind, a.acc.unwrap_or(4.0));
    spec.fwhm_rel = a.fwhm.unwrap_or(spec.fwhm_rel);
    spec.acs_frac = a.acs.unwrap_or(spec.acs_frac);
    spec.center_frac = a.center_frac.unwrap_or(spec.center_frac);
    spec.offset = OffsetPolicy::Fixed;
    let mask = spec.generate(h, w, seed_or_env(a.seed)?)?;
    let out = required(a.out, "out")?;
    if out.extension().is_some_and(|e| e == "pbm") {
        io::export_mask(&mask, &out)
    } else {
        io::write_mask(&out, &mask)
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let src = required(a.phantom, "phantom")?;
    let out = required(a.out, "out")?;
    let shared: Option<SamplingMask> = a.mask.as_deref().map(io::read_mask).transpose()?;
    let coils = a.coils.unwrap_or(4);
    let sigma = a.sigma.unwrap_or(0.02);
    let seed = seed_or_env(a.seed)?;
    let one = |phantom_path: &Path, out_path: &Path, seed: u64, id: String| -> Result<()> {
        let phantom = io::read_phantom(phantom_path)?;
        let (h, w) = (phantom.image.height, phantom.image.width);
        let mask = match &shared {
            Some(m) => m.clone(),
            None => MaskSpec::new(MaskKind::Gaussian2d, 4.0).generate(h, w, seed)?,
        };
        let maps = make_coils(coils, h, w, 0.8)?;
        let mut rec = simulate_acquisition(&phantom, &maps, &mask, sigma, seed)?;
        rec.meta.id = id;
        io::write_record(out_path, &rec)
    };
    if src.is_dir() {
        std::fs::create_dir_all(&out)?;
        for (i, p) in containers_in(&src)?.iter().enumerate() {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
            one(p, &out.join(format!("{stem}.cks")), seed + i as u64, stem)?;
        }
        Ok(())
    } else {
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
        one(&src, &out, seed, stem)
    }
}

fn model_config(a: &TrainArgs) -> Result<ModelConfig> {
    let kind: ModelKind = parse(a.model.as_deref(), "cirim")?;
    let mut c = match a.preset.as_deref().unwrap_or("full") {
        "full" => ModelConfig::full(kind),
        "desk" => ModelConfig::desk(kind),
        other => return Err(Error::InvalidArgument(format!("unknown preset '{other}'"))),
    };
    if let Some(dc) = a.dc.as_deref() {
        c.cascade.explicit_dc = match dc {
            "implicit" => false,
            "explicit" | "both" => true,
            other => return Err(Error::InvalidArgument(format!("unknown --dc '{other}'"))),
        };
    }
    if let Some(k) = a.cascades {
        c.cascade.n_cascades = k;
    }
    if let Some(t) = a.iterations {
        c.rim.iterations = t;
    }
    if let Some(ch) = a.channels {
        match kind {
            ModelKind::Varnet => c.unet.channels = ch,
            _ => c.rim.channels = ch,
        }
    }
    c.validate()?;
    Ok(c)
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    thread_pool(None, false)?;
    let config = model_config(&a)?;
    let loss = match a.loss.as_deref() {
        None => None,
        Some("l1") => Some(LossKind::L1),
        Some("cirim") => Some(LossKind::Cirim),
        Some("ssim") => Some(LossKind::Ssim),
        Some(other) => return Err(Error::InvalidArgument(format!("unknown loss '{other}'"))),
    };
    let weight_orientation = match a.weights.as_deref().unwrap_or("later") {
        "later" => WeightOrientation::LaterHeavier,
        "earlier" => WeightOrientation::EarlierHeavier,
        other => return Err(Error::InvalidArgument(format!("unknown weighting '{other}'"))),
    };
    let tc = TrainConfig {
        epochs: a.epochs.unwrap_or(TrainConfig::default().epochs),
        seed: seed_or_env(a.seed)?,
        adam: AdamConfig {
            lr: a.lr.unwrap_or(AdamConfig::default().lr),
            ..AdamConfig::default()
        },
        loss,
        weight_orientation,
    };
    let mut records = load_records(&required(a.data, "data")?)?;
    let val = match &a.val {
        Some(dir) => load_records(dir)?,
        None if records.len() >= 2 => {
            let n_val = records.len().div_ceil(10);
            records.split_off(records.len() - n_val)
        }
        None => Vec::new(),
    };
    let out = required(a.out, "out")?;
    let log = a.log.unwrap_or_else(|| out.with_extension("log.csv"));
    train(
        &config,
        &tc,
        &records,
        &val,
        TrainOutputs {
            checkpoint: Some(&out),
            log: Some(&log),
        },
    )?;
    Ok(())
}

fn cs_config(alpha: Option<f64>, iters: Option<usize>) -> CsConfig {
    let d = CsConfig::default();
    CsConfig {
        alpha: alpha.unwrap_or(d.alpha),
        max_iter: iters.unwrap_or(d.max_iter),
        ..d
    }
}

fn method(name: &str, cs: CsConfig) -> Result<Method> {
    Ok(match name {
        "zerofill" => Method::ZeroFilled,
        "cs" => Method::Cs(cs),
        "reference" => Method::Reference,
        path => {
            let p = Path::new(path);
            let ck = io::read_checkpoint(p)?;
            Method::Model {
                name: p.file_stem().and_then(|s| s.to_str()).unwrap_or(path).to_string(),
                config: ck.config,
                params: ck.params,
            }
        }
    })
}

fn recon(a: ReconArgs) -> Result<()> {
    thread_pool(None, false)?;
    let m = method(&required(a.model, "model")?, cs_config(a.alpha, a.cs_iters))?;
    let rec = io::read_record(&required(a.input, "in")?)?;
    let img = m.reconstruct(&rec)?;
    let out = required(a.out, "out")?;
    if out.extension().is_some_and(|e| e == "cks") {
        io::write_image(&out, &img, json!({ "method": m.name(), "record": rec.meta }))
    } else {
        io::export_image(&img, &out)
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    thread_pool(a.jobs, true)?;
    let cs = cs_config(a.alpha, a.cs_iters);
    let methods = required(a.methods, "methods")?
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| method(s, cs))
        .collect::<Result<Vec<_>>>()?;
    let data = required(a.data, "data")?;
    let records = load_records(&data)?;
    let dataset = a.dataset.unwrap_or_else(|| {
        data.file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("data")
            .to_string()
    });
    let ev = evaluate(&methods, &records, &EvalOptions { dataset, timing: a.timing })?;
    io::write_metrics_csv(&required(a.out, "out")?, &ev.all_rows())
}
