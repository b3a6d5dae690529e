use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{DspError, Result, SAMPLE_RATE};

/// PCM audio at 48 kHz, one or two channels of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    data: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, data: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(DspError::UnsupportedSampleRate(sample_rate));
        }
        if data.is_empty() || data.len() > 2 {
            return Err(DspError::UnsupportedChannels(data.len()));
        }
        if data.len() == 2 && data[0].len() != data[1].len() {
            return Err(DspError::RaggedChannels(data[0].len(), data[1].len()));
        }
        Ok(AudioBuffer { sample_rate, data })
    }

    pub fn mono(samples: Vec<f64>) -> Result<Self> {
        Self::new(SAMPLE_RATE, vec![samples])
    }

    pub fn stereo(left: Vec<f64>, right: Vec<f64>) -> Result<Self> {
        Self::new(SAMPLE_RATE, vec![left, right])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i]
    }

    pub fn len(&self) -> usize {
        self.data[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Stereo view: mono input becomes dual-mono (L = R).
    pub fn to_stereo(&self) -> AudioBuffer {
        match self.data.len() {
            1 => AudioBuffer {
                sample_rate: self.sample_rate,
                data: vec![self.data[0].clone(), self.data[0].clone()],
            },
            _ => self.clone(),
        }
    }

    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> AudioBuffer {
        AudioBuffer {
            sample_rate: self.sample_rate,
            data: self.data.iter().map(|c| f(c)).collect(),
        }
    }

    pub fn scaled(&self, k: f64) -> AudioBuffer {
        self.map_channels(|c| c.iter().map(|v| v * k).collect())
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> DspError + '_ {
    move |source| DspError::Wav {
        path: path.display().to_string(),
        source,
    }
}

/// Reads 16/24-bit integer or 32-bit float PCM at 48 kHz. Integer samples
/// are divided by the format's full scale (2^(bits-1)).
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(DspError::UnsupportedSampleRate(spec.sample_rate));
    }
    let nch = spec.channels as usize;
    if !(1..=2).contains(&nch) {
        return Err(DspError::UnsupportedChannels(nch));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, bits @ (16 | 24)) => {
            let full = (1i64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        (fmt, bits) => {
            return Err(DspError::UnsupportedFormat(format!("{fmt:?} {bits}-bit")));
        }
    };
    let mut data = vec![Vec::with_capacity(interleaved.len() / nch); nch];
    for (i, v) in interleaved.into_iter().enumerate() {
        data[i % nch].push(v);
    }
    AudioBuffer::new(spec.sample_rate, data)
}

/// Writes 32-bit float PCM.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: buffer.channels() as u16,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut w = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for i in 0..buffer.len() {
        for c in 0..buffer.channels() {
            w.write_sample(buffer.channel(c)[i] as f32).map_err(wav_err(path))?;
        }
    }
    w.finalize().map_err(wav_err(path))
}
