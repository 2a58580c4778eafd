//! WAV and checkpoint files.

use std::fs;
use std::path::Path;

use anyhow::Context;
use psep_core::dsp::{wav, Waveform};
use psep_core::trainer::Checkpoint;

pub fn read_wav(path: &Path) -> anyhow::Result<Waveform> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    wav::decode(&bytes).with_context(|| format!("{}", path.display()))
}

pub fn write_wav(path: &Path, w: &Waveform) -> anyhow::Result<()> {
    fs::write(path, wav::encode(w)).with_context(|| format!("cannot write {}", path.display()))
}

pub fn read_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Checkpoint::decode(&bytes).with_context(|| format!("{}", path.display()))
}

pub fn write_checkpoint(path: &Path, c: &Checkpoint) -> anyhow::Result<()> {
    fs::write(path, c.encode()).with_context(|| format!("cannot write {}", path.display()))
}
