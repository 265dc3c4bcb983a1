//! File artifacts of one experiment directory.

use std::path::Path;

use anyhow::{Context, Result};
use sfl_attacks::AttackResult;
use sfl_core::SplitModel;
use sfl_nn::checkpoint::save_model_file;

use crate::pipeline::AttackRun;

pub fn save_victim(out_dir: &Path, victim: &SplitModel) -> Result<()> {
    let path = out_dir.join("victim.sflx");
    save_model_file(&path, victim.units(), &victim.merged_params())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn save_attack(out_dir: &Path, run: &AttackRun, result: &AttackResult) -> Result<()> {
    let (units, params) = &run.checkpoint;
    let ckpt = out_dir.join(format!("surrogate_{}.sflx", run.name));
    save_model_file(&ckpt, units, params)
        .with_context(|| format!("writing {}", ckpt.display()))?;
    let json = out_dir.join(format!("attack_{}.json", run.name));
    result
        .write_file(&json)
        .with_context(|| format!("writing {}", json.display()))?;
    if !run.log.is_empty() {
        let log = out_dir.join(format!("querylog_{}.bin", run.name));
        run.log
            .write_file(&log)
            .with_context(|| format!("writing {}", log.display()))?;
    }
    Ok(())
}
