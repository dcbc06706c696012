//! `run`: inference over image files. Fully convolutional, so arbitrary
//! input sizes are accepted for dehazing.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use dehaze_core::net::Checkpoint;
use dehaze_core::train::{run_pipeline, Stage};

use crate::commands::{ensure_dir, progress};
use crate::image_io;

#[derive(Clone, Copy, Debug, PartialEq, clap::ValueEnum)]
pub enum RunStage {
    Dehaze,
    Refine,
}

pub fn cmd_run(ckpt_path: &Path, stage: RunStage, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?;
    ensure_dir(out)?;
    let stage = match stage {
        RunStage::Dehaze => Stage::Dehaze,
        RunStage::Refine => Stage::Refine,
    };
    for input in inputs {
        let hazy = image_io::load_rgb(input)?;
        let result = run_pipeline(&hazy, &ckpt, stage)?;
        let stem = input
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image");
        if let Some(t) = &result.transmission {
            image_io::save_gray8(t, &out.join(format!("{stem}_transmission.png")))?;
        }
        image_io::save_rgb(&result.dehazed, &out.join(format!("{stem}_dehazed.png")))?;
        if let Some(refined) = &result.refined {
            image_io::save_rgb(refined, &out.join(format!("{stem}_refined.png")))?;
        }
        progress!("run: processed {}", input.display());
    }
    Ok(())
}
