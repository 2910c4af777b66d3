//! Speaker-unification hook applied to embedded-language segments.

use std::path::PathBuf;
use std::process::Command;

use crate::error::{Error, Result};
use crate::io::{read_wav, write_wav};
use crate::types::WaveformBuffer;

pub trait VoiceConversion: Send + Sync {
    /// Convert `segment` towards the speaker of `reference`. Must preserve length.
    fn convert(&self, segment: &WaveformBuffer, reference: &WaveformBuffer) -> Result<WaveformBuffer>;
}

/// Returns the segment unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityVc;

impl VoiceConversion for IdentityVc {
    fn convert(&self, segment: &WaveformBuffer, _reference: &WaveformBuffer) -> Result<WaveformBuffer> {
        Ok(segment.clone())
    }
}

/// External converter invoked as `program [args..] <input.wav> <reference.wav> <output.wav>`.
#[derive(Debug, Clone)]
pub struct CommandVc {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl CommandVc {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl VoiceConversion for CommandVc {
    fn convert(&self, segment: &WaveformBuffer, reference: &WaveformBuffer) -> Result<WaveformBuffer> {
        let dir = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        let input = dir.path().join("input.wav");
        let refer = dir.path().join("reference.wav");
        let output = dir.path().join("output.wav");
        write_wav(segment, &input)?;
        write_wav(reference, &refer)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&refer)
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&self.program, e))?;
        if !status.success() {
            return Err(Error::invalid(format!(
                "voice conversion command {} exited with {status}",
                self.program.display()
            )));
        }
        let mut converted = read_wav(&output)?;
        if converted.sample_rate() != segment.sample_rate() {
            return Err(Error::invalid(format!(
                "voice conversion changed the sample rate from {} to {}",
                segment.sample_rate(),
                converted.sample_rate()
            )));
        }
        // converters may add or drop a few samples; labels need the original length
        let mut samples = converted.samples().to_vec();
        samples.resize(segment.len(), 0.0);
        converted = WaveformBuffer::new(samples, segment.sample_rate(), segment.source_id())?;
        Ok(converted)
    }
}
