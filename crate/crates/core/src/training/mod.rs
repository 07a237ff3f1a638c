//! Joint adversarial training: segmentation on both domains, pixel
//! supervision on source tiles, adversarial supervision through D, the
//! L2-then-L1 pixel-loss schedule, checkpoints and the loss log.

mod checkpoint;
mod config;
mod losses;
mod run;
mod state;
mod step;

pub use checkpoint::{
    checkpoint_checksum, checkpoint_path, load_checkpoint, load_checkpoint_for, read_manifest,
    save_checkpoint, shape_diff, Checkpoint, Manifest, ParamEntry,
};
pub use config::{DataSource, FakeSet, LossSchedule, OptimizerConfig, RunConfig, Scale};
pub use losses::{
    adv_g_loss, check_domains, compute_losses, d_loss, fake_rows, pix_loss, seg_loss,
    select_pixel_mode, Forwards, LossBundle, Losses,
};
pub use run::{load_dataset, read_loss_log, train, LogRow, Streams, TrainOutcome, LOG_FILE, LOG_HEADER};
pub use state::{OptimState, RngState, TrainState};
pub use step::Trainer;
