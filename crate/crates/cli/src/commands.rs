//! Subcommand bodies. Each takes a validated [`RunConfig`] plus explicit
//! paths and returns what it wrote, so tests can drive them without a shell.

use std::cell::Cell;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use shortcut_fm::checkpoint::{Checkpoint, RngState};
use shortcut_fm::enhance::{utterance_rng, Enhancer};
use shortcut_fm::metrics::{
    log_spectral_distance, measure_rtf, seg_snr, si_sdr, EvalReport, EvalRow, RtfMeasurement,
};
use shortcut_fm::net::{AdamState, VelocityNet};
use shortcut_fm::oracle::{run_suite, Discrepancy, SuiteOptions};
use shortcut_fm::priors::{PriorKind, PriorSpec};
use shortcut_fm::spectro::wav::{read_wav, write_wav, WavEncoding};
use shortcut_fm::spectro::{
    mix, synth_clean, Manifest, ManifestRow, MixSpec, NoiseKind, SignalKind, Utterance, Waveform,
};
use shortcut_fm::train::{train_epoch, write_loss_csv, BatchRecord, SpecPair};
use shortcut_fm::Error;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("tolerance breach: {0}")]
    Breach(String),
}

impl CliError {
    /// 0 success, 1 usage/config, 2 I/O, 3 numerical failure, 4 tolerance breach.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Breach(_) => 4,
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Contract(_) => 1,
                Error::Io { .. } | Error::Format(_) => 2,
                Error::Domain(_) | Error::State(_) | Error::Training { .. } | Error::Inference { .. } => 3,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];

pub fn manifest_path(dataset: &Path, split: &str) -> PathBuf {
    dataset.join(split).join("manifest.json")
}

/// Seeds never collide across splits or between clean and noise draws for
/// a fixed run seed: bit 0 picks clean/noise, bits 1..22 the index, bits
/// 22..24 the split.
fn utterance_seed(seed: u64, split: usize, index: usize, noise: bool) -> u64 {
    seed.wrapping_mul(1 << 24) + ((split as u64) << 22) + ((index as u64) << 1) + noise as u64
}

/// Writes train/valid/test splits (clean and noisy WAVs plus a manifest each)
/// under `out`. Returns the utterance count per split.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Vec<(String, usize)>> {
    let d = &cfg.data;
    let mut summary = Vec::new();
    for (si, split) in SPLITS.iter().enumerate() {
        let count = [d.train_count, d.valid_count, d.test_count][si];
        if count >= 1 << 21 {
            return Err(Error::Config(format!("{split} split too large")).into());
        }
        let snrs = if *split == "test" { &d.test_snrs } else { &d.train_snrs };
        let noises: &[NoiseKind] = match (d.unseen_noise, *split) {
            (false, _) => &NoiseKind::ALL,
            (true, "test") => &[NoiseKind::HarmonicBabble],
            (true, _) => &[NoiseKind::White, NoiseKind::Pink],
        };
        let dir = out.join(split);
        mkdir(&dir)?;
        let mut manifest = Manifest::default();
        for i in 0..count {
            let id = format!("{split}_{i:04}");
            let kind = SignalKind::ALL[i % SignalKind::ALL.len()];
            let clean = synth_clean(kind, d.duration, utterance_seed(cfg.seed, si, i, false))?;
            let row = ManifestRow {
                id: id.clone(),
                clean_path: PathBuf::from(format!("{id}_clean.wav")),
                noise_kind: noises[(i / SignalKind::ALL.len()) % noises.len()],
                snr_db: snrs[i % snrs.len()],
                seed: utterance_seed(cfg.seed, si, i, true),
            };
            let (noisy, _) = mix(&clean, &row.mix_spec())?;
            write_wav(dir.join(&row.clean_path), &clean, WavEncoding::Float32)?;
            write_wav(dir.join(format!("{id}_noisy.wav")), &noisy, WavEncoding::Float32)?;
            manifest.rows.push(row);
        }
        manifest.save(manifest_path(out, split))?;
        summary.push((split.to_string(), count));
    }
    Ok(summary)
}

fn load_split(dataset: &Path, split: &str) -> Result<Vec<Utterance>> {
    let m = Manifest::load(manifest_path(dataset, split))?;
    if m.rows.is_empty() {
        return Err(Error::Config(format!("{split} manifest is empty")).into());
    }
    Ok(m.load_all()?)
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub history: Vec<BatchRecord>,
}

pub fn checkpoint_for(template: &Path, prior: PriorKind) -> PathBuf {
    PathBuf::from(template.to_string_lossy().replace("{prior}", &prior.to_string()))
}

/// Trains from scratch on the train split and writes the checkpoint and loss CSV.
/// `on_epoch` sees each finished epoch's batch records.
pub fn train(
    cfg: &RunConfig,
    dataset: &Path,
    checkpoint: &Path,
    loss_csv: &Path,
    mut on_epoch: impl FnMut(usize, &[BatchRecord]),
) -> Result<TrainOutput> {
    let stft = cfg.stft_config()?;
    let prior = cfg.prior_spec()?;
    let hyper = cfg.train_hyper();
    let data: Vec<SpecPair> = load_split(dataset, "train")?
        .iter()
        .map(|u| SpecPair::from_utterance(u, &stft))
        .collect::<shortcut_fm::Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = VelocityNet::new(cfg.net_config()?, &mut rng)?;
    let mut adam = AdamState::new(net.params().len(), cfg.train.lr);
    let mut history = Vec::new();
    for epoch in 0..cfg.train.epochs {
        if cfg.train.lr_decay_epoch > 0 && epoch == cfg.train.lr_decay_epoch {
            adam.lr *= cfg.train.lr_decay;
        }
        let h = train_epoch(&mut net, &mut adam, &data, &prior, &hyper, epoch, &mut rng)?;
        on_epoch(epoch, &h);
        history.extend(h);
    }
    let mut ck = Checkpoint::new(&net, stft, prior);
    ck.epochs_done = cfg.train.epochs as u64;
    ck.adam = Some(adam);
    ck.rng = Some(RngState::capture(&rng));
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    ck.save(checkpoint)?;
    write_loss_csv(&history, create(loss_csv)?)?;
    Ok(TrainOutput {
        checkpoint: checkpoint.to_path_buf(),
        loss_csv: loss_csv.to_path_buf(),
        history,
    })
}

/// Prior used at inference: the requested kind with the configured
/// parameters, or the checkpoint's own prior.
fn inference_prior(cfg: &RunConfig, ck: &Checkpoint, kind: Option<PriorKind>) -> PriorSpec {
    match kind {
        Some(k) if k != ck.prior.kind => PriorSpec {
            kind: k,
            sigma_end: cfg.prior.sigma_end,
            alpha: cfg.prior.alpha,
        },
        _ => ck.prior,
    }
}

/// Enhances one WAV file; returns the number of network evaluations.
pub fn enhance(
    cfg: &RunConfig,
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    steps: usize,
    prior: Option<PriorKind>,
) -> Result<usize> {
    let ck = Checkpoint::load(checkpoint)?;
    let net = ck.network()?;
    let spec = inference_prior(cfg, &ck, prior);
    let noisy = read_wav(input)?;
    let enhancer = Enhancer {
        chunk_len: cfg.chunk_len(),
        ..Enhancer::new(&net, ck.stft, spec)
    };
    let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (est, nfe) = enhancer.run(&noisy, steps, &mut utterance_rng(cfg.seed, &id))?;
    write_wav(output, &est, WavEncoding::Float32)?;
    Ok(nfe)
}

/// Input-side metrics of one test utterance, for comparison with the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub utterance: String,
    pub snr_db: f64,
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub lsd: f64,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub report: EvalReport,
    pub baseline: Vec<BaselineRow>,
}

fn score(cfg: &RunConfig, clean: &Waveform, est: &Waveform) -> Result<(f64, f64, f64)> {
    Ok((
        si_sdr(clean, est)?,
        seg_snr(clean, est, cfg.infer.seg_frame)?,
        log_spectral_distance(clean, est, &cfg.stft_config()?)?,
    ))
}

/// Enhances every test utterance for each configured prior and K. The
/// checkpoint path may contain `{prior}` to use one model per prior.
/// Writes `report.csv`, `long.csv` and `baseline.csv` into `out`.
pub fn sweep(cfg: &RunConfig, dataset: &Path, checkpoint: &Path, out: &Path) -> Result<SweepOutput> {
    let utts = load_split(dataset, "test")?;
    mkdir(out)?;
    let mut baseline = Vec::new();
    for u in &utts {
        let (s, g, l) = score(cfg, &u.clean, &u.noisy)?;
        baseline.push(BaselineRow {
            utterance: u.id.clone(),
            snr_db: u.snr_db,
            si_sdr_db: s,
            seg_snr_db: g,
            lsd: l,
        });
    }
    let mut report = EvalReport::default();
    for kind in cfg.infer_priors()? {
        let ck = Checkpoint::load(checkpoint_for(checkpoint, kind))?;
        let net = ck.network()?;
        let enhancer = Enhancer {
            chunk_len: cfg.chunk_len(),
            ..Enhancer::new(&net, ck.stft, inference_prior(cfg, &ck, Some(kind)))
        };
        for &k in &cfg.infer.k_list {
            for u in &utts {
                let mut rng = utterance_rng(cfg.seed, &u.id);
                let start = Instant::now();
                let (est, nfe) = enhancer.run(&u.noisy, k, &mut rng)?;
                let wall = start.elapsed().as_secs_f64();
                let (s, g, l) = score(cfg, &u.clean, &est)?;
                report.push(EvalRow {
                    utterance: u.id.clone(),
                    prior: kind,
                    steps: k,
                    nfe: nfe / enhancer_chunks(&enhancer, &u.noisy),
                    si_sdr_db: s,
                    seg_snr_db: g,
                    lsd: l,
                    rtf: RtfMeasurement::new(wall, u.noisy.duration())?.rtf,
                });
            }
        }
    }
    report.write_csv(create(&out.join("report.csv"))?)?;
    report.write_long_csv(create(&out.join("long.csv"))?)?;
    let mut w = csv::Writer::from_writer(create(&out.join("baseline.csv"))?);
    let fmt = |e: csv::Error| CliError::Core(Error::Format(e.to_string()));
    w.write_record(["utterance", "snr_db", "si_sdr_db", "seg_snr_db", "lsd"]).map_err(fmt)?;
    for b in &baseline {
        w.write_record([
            b.utterance.clone(),
            b.snr_db.to_string(),
            b.si_sdr_db.to_string(),
            b.seg_snr_db.to_string(),
            b.lsd.to_string(),
        ])
        .map_err(fmt)?;
    }
    w.flush().map_err(|e| io_err(&out.join("baseline.csv"), e))?;
    Ok(SweepOutput { report, baseline })
}

fn enhancer_chunks<F: shortcut_fm::net::VelocityField>(e: &Enhancer<'_, F>, w: &Waveform) -> usize {
    w.len().div_ceil(e.chunk_len)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub steps: usize,
    /// Network evaluations per chunk trajectory.
    pub nfe: usize,
    pub rtf: RtfMeasurement,
}

/// Fixed synthetic input for benchmarking: a harmonic signal in white noise at 5 dB.
pub fn bench_input(cfg: &RunConfig) -> Result<Waveform> {
    let clean = synth_clean(SignalKind::Harmonic, cfg.infer.bench_seconds, cfg.seed)?;
    let spec = MixSpec {
        snr_db: 5.0,
        noise_kind: NoiseKind::White,
        seed: cfg.seed ^ 1,
    };
    Ok(mix(&clean, &spec)?.0)
}

/// RTF per K on the benchmark input; run it on an otherwise idle machine.
pub fn bench(cfg: &RunConfig, checkpoint: &Path, out: Option<&Path>) -> Result<Vec<BenchRow>> {
    let ck = Checkpoint::load(checkpoint)?;
    let net = ck.network()?;
    let enhancer = Enhancer {
        chunk_len: cfg.chunk_len(),
        ..Enhancer::new(&net, ck.stft, ck.prior)
    };
    let y = bench_input(cfg)?;
    let chunks = enhancer_chunks(&enhancer, &y);
    let mut rows = Vec::new();
    for &k in &cfg.infer.k_list {
        let nfe = Cell::new(0);
        let rtf = measure_rtf(
            |w| {
                let (_, n) = enhancer.run(w, k, &mut utterance_rng(cfg.seed, "bench"))?;
                nfe.set(n);
                Ok(())
            },
            &y,
            cfg.infer.bench_repetitions,
        )?;
        rows.push(BenchRow {
            steps: k,
            nfe: nfe.get() / chunks,
            rtf,
        });
    }
    if let Some(out) = out {
        mkdir(out)?;
        let path = out.join("bench.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        let fmt = |e: csv::Error| CliError::Core(Error::Format(e.to_string()));
        w.write_record(["steps", "nfe", "wall_time_s", "audio_duration_s", "rtf"]).map_err(fmt)?;
        for r in &rows {
            w.write_record([
                r.steps.to_string(),
                r.nfe.to_string(),
                r.rtf.wall_time.to_string(),
                r.rtf.audio_duration.to_string(),
                r.rtf.rtf.to_string(),
            ])
            .map_err(fmt)?;
        }
        w.flush().map_err(|e| io_err(&path, e))?;
    }
    Ok(rows)
}

/// Runs the oracle suite; any discrepancy above its tolerance is a breach.
pub fn oracle(opts: &SuiteOptions) -> Result<Vec<Discrepancy>> {
    let report = run_suite(opts)?;
    let failed: Vec<&str> = report.iter().filter(|d| !d.passed()).map(|d| d.name.as_str()).collect();
    if failed.is_empty() {
        Ok(report)
    } else {
        Err(CliError::Breach(failed.join(", ")))
    }
}
