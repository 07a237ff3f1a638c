use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{checkpoint_path, load_checkpoint_for, save_checkpoint};
use super::config::{DataSource, RunConfig};
use super::losses::LossBundle;
use super::state::TrainState;
use super::step::Trainer;
use crate::data::{
    default_colormap, mixed_minibatch, single_domain_batch, Batch, Dataset, FixedTiles,
    SampleStream, SourceTiles, TargetTiles,
};
use crate::error::{Error, Result};
use crate::nn::PixelMode;

pub const LOG_HEADER: &str = "step,epoch,pix_mode,l_seg,l_pix,l_adv_g,l_d";
pub const LOG_FILE: &str = "loss.csv";

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// 1-based optimizer step.
    pub step: u64,
    pub epoch: u64,
    pub losses: LossBundle,
}

impl LogRow {
    pub fn to_csv_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.step, self.epoch, l.pix_mode, l.l_seg, l.l_pix, l.l_adv_g, l.l_d
        )
    }
}

/// Parses a loss log, checking the header.
pub fn read_loss_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.join(",") != LOG_HEADER {
        return Err(Error::Dataset(format!(
            "{}: header must be `{LOG_HEADER}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = || Error::Dataset(format!("{}: malformed row {}", path.display(), i + 1));
        let num = |j: usize| -> Result<f64> { rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(bad) };
        let int = |j: usize| -> Result<u64> { rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(bad) };
        let pix_mode: PixelMode = rec.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
        rows.push(LogRow {
            step: int(0)?,
            epoch: int(1)?,
            losses: LossBundle {
                pix_mode,
                l_seg: num(3)?,
                l_pix: num(4)?,
                l_adv_g: num(5)?,
                l_d: num(6)?,
            },
        });
    }
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(format!("{}: {e}", path.display()))
}

/// Append-only loss log.
struct LossLog {
    path: PathBuf,
    file: File,
}

impl LossLog {
    /// Opens `path` for appending after `resume_step`. A fresh file gets the
    /// header; an existing one must end exactly at `resume_step`.
    fn open(path: &Path, resume_step: u64) -> Result<Self> {
        if path.exists() {
            let rows = read_loss_log(path)?;
            let last = rows.last().map_or(0, |r| r.step);
            if last != resume_step {
                return Err(Error::Config(format!(
                    "{} ends at step {last} but the run continues from step {resume_step}",
                    path.display()
                )));
            }
        } else {
            fs::write(path, format!("{LOG_HEADER}\n")).map_err(|e| Error::io(path, e))?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    fn append(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_csv_line()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Source and target streams for a run. Fixed tile sets are drawn from a
/// generator of their own so that a resumed run rebuilds the same set.
pub struct Streams {
    pub source: Box<dyn SampleStream>,
    pub target: Option<Box<dyn SampleStream>>,
}

impl Streams {
    pub fn build(cfg: &RunConfig, dataset: Dataset) -> Result<Self> {
        let spec = cfg.dataset_spec()?;
        let mut source: Box<dyn SampleStream> = Box::new(SourceTiles::new(dataset.source, spec.clone())?);
        if let Some(n) = cfg.fixed_source_tiles {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1);
            source = Box::new(FixedTiles::draw(source.as_mut(), n, &mut rng)?);
        }
        let needs_target = cfg.source_fraction < 1.0;
        let target: Option<Box<dyn SampleStream>> = if needs_target {
            Some(Box::new(TargetTiles::new(dataset.target, spec)?))
        } else {
            None
        };
        Ok(Self { source, target })
    }

    pub fn next_batch(&mut self, cfg: &RunConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
        let samples = match self.target.as_mut() {
            Some(t) => mixed_minibatch(
                self.source.as_mut(),
                t.as_mut(),
                cfg.batch_size,
                cfg.source_fraction,
                rng,
            )?,
            None => single_domain_batch(self.source.as_mut(), cfg.batch_size, rng)?,
        };
        Batch::collate(&samples)
    }

    pub fn cursors(&self) -> [u64; 2] {
        [
            self.source.cursor(),
            self.target.as_ref().map_or(0, |t| t.cursor()),
        ]
    }

    pub fn seek(&mut self, cursors: [u64; 2]) {
        self.source.seek(cursors[0]);
        if let Some(t) = self.target.as_mut() {
            t.seek(cursors[1]);
        }
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synth(spec) => Dataset::synthesize(spec, &default_colormap()),
        DataSource::Root(root) => Dataset::load(root),
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Rows written by this invocation.
    pub rows: Vec<LogRow>,
    pub final_checkpoint: PathBuf,
    pub state: TrainState,
}

/// Runs `cfg.epochs` epochs of `cfg.steps_per_epoch` steps, writing
/// `out_dir/loss.csv` and checkpoints under `out_dir/checkpoints/`.
/// With `resume`, continues from that checkpoint's epoch.
pub fn train(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let trainer = Trainer::from_config(cfg)?;
    let mut state = match resume {
        Some(path) => load_checkpoint_for(path, &cfg.model_config())?.state,
        None => TrainState::new(&trainer.nets, cfg.seed)?,
    };
    if state.global_step != state.epoch * cfg.steps_per_epoch {
        return Err(Error::Config(format!(
            "checkpoint at epoch {} step {} does not fit steps_per_epoch {}",
            state.epoch, state.global_step, cfg.steps_per_epoch
        )));
    }
    let mut streams = Streams::build(cfg, load_dataset(cfg)?)?;
    streams.seek(state.stream_cursors);

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let mut log = LossLog::open(&cfg.out_dir.join(LOG_FILE), state.global_step)?;
    let model = cfg.model_config();
    let mut rows = Vec::new();
    let mut final_checkpoint = None;
    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        for _ in 0..cfg.steps_per_epoch {
            let batch = streams.next_batch(cfg, &mut state.rng)?;
            let losses = trainer.train_step(&mut state, &batch)?;
            let row = LogRow {
                step: state.global_step,
                epoch,
                losses,
            };
            log.append(&row)?;
            rows.push(row);
        }
        state.epoch = epoch + 1;
        state.stream_cursors = streams.cursors();
        if state.epoch % cfg.checkpoint_every == 0 || state.epoch == cfg.epochs {
            let path = checkpoint_path(&cfg.out_dir, state.epoch);
            save_checkpoint(&state, &model, Some(cfg), &path)?;
            final_checkpoint = Some(path);
        }
    }
    let final_checkpoint = match final_checkpoint {
        Some(p) => p,
        None => {
            let path = checkpoint_path(&cfg.out_dir, state.epoch);
            save_checkpoint(&state, &model, Some(cfg), &path)?;
            path
        }
    };
    Ok(TrainOutcome {
        rows,
        final_checkpoint,
        state,
    })
}
