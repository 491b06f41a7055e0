use std::fs;
use std::path::Path;

use evae::data::{
    fid_proxy, grid_dims, load_idx, sharpness, synth_dataset, write_pgm_grid, ImageDataset, MetricReport, SynthKind,
};
use evae::divergences::{kl_bound_chain_check, simulate_tm, BoundChainReport, Density, TmResult, TmSpec, Weight};
use evae::kernels::{
    common_quadrature, default_candidates, functional_i, functional_j, Kernel, KernelFamily, QuadratureSpec, Tabulated,
};
use evae::models::{train, write_loss_csv, EvaeConfig, ModelState, CONFIG_KEYS};
use evae::sampling::{default_step_size, rng_stream, Prior, Sampler, SamplerConfig};
use evae::Error;

use crate::args::{BoundArgs, EvalArgs, IkArgs, Lemma1Args, SampleArgs, TmArgs, TrainArgs};
use crate::output::{write_atomic, InputHash, Manifest};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Keys that select the dataset rather than the model.
pub const DATA_KEYS: [&str; 5] = ["data", "n", "hw", "data_seed", "valid"];

/// Stream of the prior draws in `sample`; training uses streams 0 to 3.
const SAMPLE_STREAM: u64 = 4;

/// Tiles shown in the real-vs-reconstruction grid.
const GRID_PAIRS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub data: String,
    pub n: usize,
    pub hw: usize,
    pub data_seed: u64,
    pub valid: Option<usize>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            data: "synth:two-blob".into(),
            n: 5000,
            hw: 28,
            data_seed: 0,
            valid: None,
        }
    }
}

impl DataSpec {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let num = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| CliError::Usage(format!("{key} expects a nonnegative integer, got '{v}'")))
        };
        match key {
            "data" => self.data = v.to_string(),
            "n" => self.n = num(v)? as usize,
            "hw" => self.hw = num(v)? as usize,
            "data_seed" => self.data_seed = num(v)?,
            "valid" => self.valid = Some(num(v)? as usize),
            _ => unreachable!("caller checks DATA_KEYS"),
        }
        Ok(())
    }

    fn describe(&self) -> Vec<(String, String)> {
        let mut out = vec![("data".to_string(), self.data.clone())];
        if self.data.starts_with("synth:") {
            out.push(("n".into(), self.n.to_string()));
            out.push(("hw".into(), self.hw.to_string()));
            out.push(("data_seed".into(), self.data_seed.to_string()));
        }
        out
    }

    pub fn load(&self) -> Result<ImageDataset> {
        if let Some(kind) = self.data.strip_prefix("synth:") {
            Ok(synth_dataset(SynthKind::parse(kind)?, self.n, self.hw, self.data_seed)?)
        } else if let Some(path) = self.data.strip_prefix("idx:") {
            Ok(load_idx(path, None)?)
        } else {
            Err(CliError::Usage(format!(
                "--data must be idx:<path> or synth:<two-blob|bars>, got '{}'",
                self.data
            )))
        }
    }

    /// Train and hold-out splits; the hold-out is the last `valid` images
    /// (default one fifth of the dataset).
    pub fn split(&self, ds: &ImageDataset) -> Result<(ImageDataset, ImageDataset)> {
        let n_valid = self.valid.unwrap_or((ds.len() / 5).max(1));
        Ok(ds.split_train_valid(n_valid)?)
    }
}

fn unknown_key(key: &str) -> CliError {
    let mut valid: Vec<&str> = CONFIG_KEYS.to_vec();
    valid.extend(DATA_KEYS);
    CliError::Usage(format!("unknown config key '{key}'; valid keys: {}", valid.join(", ")))
}

/// Model and data settings merged from the config file, then the flags.
#[derive(Debug, Default)]
pub struct Resolved {
    pub model: EvaeConfig,
    pub data: DataSpec,
    /// Model keys that were set explicitly.
    pub explicit: Vec<String>,
}

impl Resolved {
    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        if DATA_KEYS.contains(&key) {
            self.data.set(key, value)
        } else if CONFIG_KEYS.contains(&key) {
            self.model.set(key, value)?;
            self.explicit.push(key.to_string());
            Ok(())
        } else {
            Err(unknown_key(key))
        }
    }

    pub fn from_sources(config: Option<&Path>, flags: &[(&str, String)]) -> Result<Self> {
        let mut r = Resolved::default();
        if let Some(path) = config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in evae::models::parse_kv_text(&text)? {
                r.apply(&k, &v)?;
            }
        }
        for (k, v) in flags {
            r.apply(k, v)?;
        }
        Ok(r)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> evae::Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn image_side(pixels: usize) -> (usize, usize) {
    let s = (pixels as f64).sqrt().round() as usize;
    if s * s == pixels {
        (s, s)
    } else {
        (1, pixels)
    }
}

pub fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut flags = a.model.overrides();
    flags.extend(a.data.overrides());
    if let Some(seed) = a.seed {
        flags.push(("seed", seed.to_string()));
    }
    let mut r = Resolved::from_sources(a.config.as_deref(), &flags)?;
    let ds = r.data.load()?;
    if r.explicit.iter().any(|k| k == "pixels") && r.model.pixels != ds.pixels() {
        return Err(Error::Validation(format!(
            "config pixels={} but the dataset has {} pixels per image",
            r.model.pixels,
            ds.pixels()
        ))
        .into());
    }
    r.model.pixels = ds.pixels();
    r.model.validate()?;
    let (tr, va) = r.data.split(&ds)?;

    let mut hash = InputHash::default();
    hash.text("command", "train");
    hash.text("config", &r.model.to_kv_text());
    hash.text("split", &format!("{}/{}", tr.len(), va.len()));
    hash.floats("data", ds.tensor().data());
    let mut entries: Vec<(String, String)> = r.model.to_kv().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    entries.extend(r.data.describe());
    entries.push(("train_images".into(), tr.len().to_string()));
    entries.push(("valid_images".into(), va.len().to_string()));
    let manifest = Manifest::begin(&a.out, "train", hash, entries)?;

    log::info!(
        "training {} on {} ({} train / {} valid) for {} epochs",
        r.model.model.name(),
        r.data.data,
        tr.len(),
        va.len(),
        r.model.epochs
    );
    let (state, report) = train(tr.tensor(), va.tensor(), &r.model)?;
    let csv = csv_bytes(|w| write_loss_csv(&report.curves, w))?;
    write_atomic(&a.out.join("loss.csv"), &csv)?;
    state.save(a.out.join("model.ckpt"))?;
    manifest.finish(&["model.ckpt", "loss.csv"])?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(ModelState, Vec<u8>)> {
    let bytes =
        fs::read(path).map_err(|e| CliError::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    Ok((ModelState::from_bytes(&bytes)?, bytes))
}

pub fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let (mut state, ckpt) = load_checkpoint(&a.checkpoint)?;
    let r = Resolved::from_sources(a.config.as_deref(), &a.data.overrides())?;
    let trained = state.config.latent_dim;
    let expected =
        a.dz.or_else(|| r.explicit.iter().any(|k| k == "dz").then_some(r.model.latent_dim));
    if let Some(dz) = expected {
        if dz != trained {
            return Err(Error::Validation(format!(
                "requested d_z = {dz} but the checkpoint was trained with d_z = {trained}"
            ))
            .into());
        }
    }
    if let Some(seed) = a.seed {
        state.config.seed = seed;
    }
    let ds = r.data.load()?;
    if ds.pixels() != state.config.pixels {
        return Err(Error::Validation(format!(
            "dataset has {} pixels per image, the checkpoint expects {}",
            ds.pixels(),
            state.config.pixels
        ))
        .into());
    }
    let (_, holdout) = r.data.split(&ds)?;

    let mut hash = InputHash::default();
    hash.text("command", "eval");
    hash.bytes("checkpoint", &ckpt);
    hash.text("seed", &state.config.seed.to_string());
    hash.floats("holdout", holdout.tensor().data());
    let mut entries = vec![("checkpoint".to_string(), a.checkpoint.display().to_string())];
    entries.extend(r.data.describe());
    entries.push(("holdout_images".into(), holdout.len().to_string()));
    entries.push(("eval_seed".into(), state.config.seed.to_string()));
    let manifest = Manifest::begin(&a.out, "eval", hash, entries)?;

    let recon = state.reconstruct_all(holdout.tensor())?;
    let fake = ImageDataset::from_tensor(recon, holdout.height(), holdout.width(), "reconstruction")?;
    let report = MetricReport {
        fid_proxy: fid_proxy(&holdout, &fake)?,
        sharpness: sharpness(&fake)?,
        real_sharpness: sharpness(&holdout)?,
        recon: state.evaluate(holdout.tensor())?.recon,
        n_images: holdout.len(),
        config: state
            .config
            .to_kv()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    };
    report.validate()?;

    let shown = holdout.len().min(GRID_PAIRS);
    let mut tiles: Vec<&[f64]> = Vec::with_capacity(2 * shown);
    for i in 0..shown {
        tiles.push(holdout.image(i));
        tiles.push(fake.image(i));
    }
    let grid = a.out.join("recon_grid.pgm");
    write_pgm_grid(&grid, &tiles, holdout.height(), holdout.width(), 8)?;
    write_atomic(&a.out.join("metrics.csv"), &csv_bytes(|w| report.write_csv(w))?)?;
    write_atomic(&a.out.join("metrics.txt"), report.to_text().as_bytes())?;
    print!("{}", report.to_text());
    manifest.finish(&["metrics.csv", "metrics.txt", "recon_grid.pgm"])?;
    Ok(())
}

pub fn sample_cmd(a: &SampleArgs) -> Result<()> {
    if a.count <= 0 {
        return Err(CliError::Usage(format!("--count must be positive, got {}", a.count)));
    }
    let count = a.count as usize;
    let (state, ckpt) = load_checkpoint(&a.checkpoint)?;
    let mut cfg = state.config.sampler_config();
    if let Some(b) = a.support {
        cfg.support = b;
    }
    let sampler = Sampler::new(cfg)?;

    let mut hash = InputHash::default();
    hash.text("command", "sample");
    hash.bytes("checkpoint", &ckpt);
    hash.text("B", &format!("{:?}", cfg.support));
    hash.text("count", &count.to_string());
    hash.text("seed", &a.seed.to_string());
    let entries = vec![
        ("checkpoint".to_string(), a.checkpoint.display().to_string()),
        ("B".into(), format!("{:?}", cfg.support)),
        ("prior".into(), cfg.prior.name().to_string()),
        ("count".into(), count.to_string()),
        ("seed".into(), a.seed.to_string()),
    ];
    let manifest = Manifest::begin(&a.out, "sample", hash, entries)?;

    let mut rng = rng_stream(a.seed, SAMPLE_STREAM);
    let images = sampler.sample_unconditional(&state, count, &mut rng)?;
    let (h, w) = image_side(state.config.pixels);
    let tiles: Vec<&[f64]> = (0..count).map(|i| images.row(i)).collect();
    write_pgm_grid(a.out.join("samples.pgm"), &tiles, h, w, grid_dims(count).1)?;

    // across-sample variance per pixel, averaged over pixels
    let pixels = state.config.pixels;
    let mut var = 0.0;
    for p in 0..pixels {
        let col: Vec<f64> = (0..count).map(|i| images.row(i)[p]).collect();
        var += evae::stats::variance(&col);
    }
    let stats = format!(
        "B,count,seed,pixel_variance\n{:?},{count},{},{:.10}\n",
        cfg.support,
        a.seed,
        var / pixels as f64
    );
    write_atomic(&a.out.join("samples.csv"), stats.as_bytes())?;
    manifest.finish(&["samples.pgm", "samples.csv"])?;
    Ok(())
}

fn parse_kernel(spec: &str, mu: f64, r: f64) -> Result<Kernel> {
    match spec.strip_prefix("tabulated:") {
        Some(path) => Ok(Kernel::tabulated(Tabulated::load(path)?)?),
        None => Ok(Kernel::of_family(KernelFamily::parse(spec)?, mu, r)?),
    }
}

/// Prints `csv` and, with an output directory, also stores it there behind
/// a manifest.
fn emit_lab(
    out: Option<&Path>,
    name: &str,
    file: &str,
    hash: InputHash,
    entries: Vec<(String, String)>,
    csv: &[u8],
) -> Result<()> {
    print!("{}", String::from_utf8_lossy(csv));
    if let Some(dir) = out {
        let manifest = Manifest::begin(dir, name, hash, entries)?;
        write_atomic(&dir.join(file), csv)?;
        manifest.finish(&[file])?;
    }
    Ok(())
}

pub fn lab_ik(a: &IkArgs) -> Result<()> {
    let k = parse_kernel(&a.kernel, a.mu, a.r)?;
    let (lo, hi) = k.support();
    let q = QuadratureSpec::new(a.points, lo, hi)?;
    let i = functional_i(&k, &q)?;
    let j = functional_j(&k, &q)?;
    let closed = k.i_closed_form().map(|v| format!("{v:.12}")).unwrap_or_default();
    let csv = format!(
        "kernel,mu,r,points,I,J,I_closed_form\n{},{},{},{},{i:.12},{j:.12},{closed}\n",
        k.name(),
        k.mu(),
        k.r(),
        a.points
    );
    let mut hash = InputHash::default();
    hash.text("args", &format!("{a:?}"));
    let entries = vec![("kernel".to_string(), a.kernel.clone()), ("r".into(), a.r.to_string())];
    emit_lab(a.out.as_deref(), "lab ik", "ik.csv", hash, entries, csv.as_bytes())
}

pub fn lab_lemma1(a: &Lemma1Args) -> Result<()> {
    let candidates = default_candidates(a.mu, a.r)?;
    let q = common_quadrature(&candidates, a.points)?;
    let report = evae::kernels::verify_lemma1(&candidates, &q)?;
    let csv = csv_bytes(|w| report.write_csv(w))?;
    let mut hash = InputHash::default();
    hash.text("args", &format!("{a:?}"));
    let entries = vec![("mu".to_string(), a.mu.to_string()), ("r".into(), a.r.to_string())];
    emit_lab(a.out.as_deref(), "lab lemma1", "lemma1.csv", hash, entries, &csv)
}

pub fn lab_tm(a: &TmArgs) -> Result<()> {
    let spec = TmSpec {
        density: Density::parse(&a.density)?,
        kernel: parse_kernel(&a.kernel, 0.0, a.r)?,
        m: a.m,
        gamma: a.gamma,
        weight: Weight {
            lo: a.lo,
            hi: a.hi,
            level: a.level,
        },
        replications: a.replications,
    };
    spec.validate()?;
    let mut hash = InputHash::default();
    hash.text("args", &format!("{a:?}"));
    let entries = vec![
        ("density".to_string(), a.density.clone()),
        ("kernel".into(), a.kernel.clone()),
        ("m".into(), a.m.to_string()),
        ("gamma".into(), a.gamma.to_string()),
        ("replications".into(), a.replications.to_string()),
        ("seed".into(), a.seed.to_string()),
    ];
    // the manifest goes down before the replications run
    let manifest = match &a.out {
        Some(dir) => Some(Manifest::begin(dir, "lab tm", hash, entries)?),
        None => None,
    };
    let result = simulate_tm(&spec, a.seed)?;
    let csv = csv_bytes(|w| {
        TmResult::write_csv_header(&mut *w)?;
        result.write_csv_row(&mut *w, &spec, a.seed)
    })?;
    print!("{}", String::from_utf8_lossy(&csv));
    if let (Some(dir), Some(m)) = (&a.out, manifest) {
        write_atomic(&dir.join("tm.csv"), &csv)?;
        m.finish(&["tm.csv"])?;
    }
    Ok(())
}

pub fn lab_bound(a: &BoundArgs) -> Result<()> {
    let cfg = SamplerConfig {
        b_m: a.bm.unwrap_or_else(default_step_size),
        support: a.support,
        prior: Prior::Uniform,
        seed: a.seed,
    };
    let mut rng = rng_stream(a.seed, 0);
    let report = kl_bound_chain_check(a.mu, a.r, &cfg, a.n, a.n_mc, &mut rng)?;
    let csv = csv_bytes(|w| {
        BoundChainReport::write_csv_header(&mut *w)?;
        report.write_csv_row(&mut *w, a.mu, a.r, &cfg, a.n)
    })?;
    let mut hash = InputHash::default();
    hash.text("args", &format!("{a:?}"));
    let entries = vec![
        ("mu".to_string(), a.mu.to_string()),
        ("r".into(), a.r.to_string()),
        ("B".into(), a.support.to_string()),
        ("bm".into(), cfg.b_m.to_string()),
    ];
    emit_lab(a.out.as_deref(), "lab bound", "bound.csv", hash, entries, &csv)
}
