//! PCM decoding and log-power spectrograms.

use std::io::Cursor;
use std::path::Path;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub log_floor: f64,
    pub center_pad: bool,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            n_fft: 1024,
            hop: 512,
            window: Window::Hann,
            log_floor: 1e-10,
            center_pad: true,
        }
    }
}

impl SpectrogramConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_fft.is_power_of_two() {
            return Err(Error::Validation(format!("n_fft {} is not a power of two", self.n_fft)));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Validation(format!("hop {} outside (0, n_fft]", self.hop)));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Validation("log_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn freq_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Number of STFT columns for a signal of `len` samples.
    pub fn time_frames(&self, len: usize) -> usize {
        if self.center_pad {
            len / self.hop + 1
        } else if len <= self.n_fft {
            1
        } else {
            (len - self.n_fft) / self.hop + 1
        }
    }
}

/// Log-power matrix, rows are frequency bins and columns time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Array2<f64>,
}

impl Spectrogram {
    pub fn freq_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn time_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Rows as CSV, one frequency bin per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Everything between a WAV file and the audio encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AudioFrontendConfig {
    pub sample_rate: u32,
    pub clip_seconds: f64,
    pub spectrogram: SpectrogramConfig,
}

impl Default for AudioFrontendConfig {
    fn default() -> Self {
        AudioFrontendConfig {
            sample_rate: 44_100,
            clip_seconds: 5.0,
            spectrogram: SpectrogramConfig::default(),
        }
    }
}

impl AudioFrontendConfig {
    pub fn clip_samples(&self) -> usize {
        (self.clip_seconds * self.sample_rate as f64).round() as usize
    }

    /// Static spectrogram shape `(freq_bins, time_frames)` fed to the encoder.
    pub fn spectrogram_shape(&self) -> (usize, usize) {
        (
            self.spectrogram.freq_bins(),
            self.spectrogram.time_frames(self.clip_samples()),
        )
    }

    pub fn spectrogram_from_wav_bytes(&self, bytes: &[u8]) -> Result<Spectrogram> {
        let wave = decode_wav(bytes)?;
        let wave = resample(&wave, self.sample_rate);
        let wave = fit_length(&wave, self.clip_samples());
        Ok(log_spectrogram(&wave, &self.spectrogram))
    }

    pub fn spectrogram_from_file(&self, path: &Path) -> Result<Spectrogram> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.spectrogram_from_wav_bytes(&bytes)
    }
}

fn wav_error(err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => Error::UnsupportedFormat("non-PCM codec".into()),
        other => Error::WavParse(other.to_string()),
    }
}

/// Decodes PCM16 or float32 WAV into mono samples in [-1, 1].
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(wav_error)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 || channels > 2 {
        return Err(Error::UnsupportedFormat(format!("{channels} channels")));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_error)?,
        (format, bits) => {
            return Err(Error::UnsupportedFormat(format!("{format:?} {bits}-bit")));
        }
    };
    if interleaved.len() % channels != 0 {
        return Err(Error::WavParse("partial sample frame".into()));
    }
    if interleaved.iter().any(|v| !v.is_finite()) {
        return Err(Error::WavParse("non-finite sample".into()));
    }
    let samples = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform::new(samples, spec.sample_rate))
}

/// Writes mono PCM16. Samples are clamped to [-1, 1].
pub fn encode_wav_pcm16(wave: &Waveform) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory wav writer");
        for &s in &wave.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).expect("in-memory write");
        }
        writer.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

/// Linear-interpolation resampling to `target_rate`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Waveform {
    assert!(target_rate > 0, "target rate must be positive");
    if wave.sample_rate == target_rate || wave.samples.is_empty() {
        return Waveform::new(wave.samples.clone(), target_rate);
    }
    let ratio = target_rate as f64 / wave.sample_rate as f64;
    let out_len = (wave.samples.len() as f64 * ratio).round() as usize;
    let last = wave.samples.len() - 1;
    let step = wave.sample_rate as f64 / target_rate as f64;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            wave.samples[lo] * (1.0 - frac) + wave.samples[hi] * frac
        })
        .collect();
    Waveform::new(samples, target_rate)
}

/// Truncates or zero-pads to exactly `len` samples.
pub fn fit_length(wave: &Waveform, len: usize) -> Waveform {
    let mut samples = wave.samples.clone();
    samples.resize(len, 0.0);
    Waveform::new(samples, wave.sample_rate)
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed STFT power, clamped at `log_floor`, natural log.
///
/// With `center_pad` the signal gets `n_fft / 2` zeros on each side so frame
/// `t` is centred on sample `t * hop`.
pub fn log_spectrogram(wave: &Waveform, cfg: &SpectrogramConfig) -> Spectrogram {
    let n_fft = cfg.n_fft;
    let pad = if cfg.center_pad { n_fft / 2 } else { 0 };
    let frames = cfg.time_frames(wave.samples.len());
    let mut padded = vec![0.0; pad];
    padded.extend_from_slice(&wave.samples);
    padded.resize((frames - 1) * cfg.hop + n_fft, 0.0);

    let window = match cfg.window {
        Window::Hann => hann_window(n_fft),
    };
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let bins = cfg.freq_bins();
    let floor_ln = cfg.log_floor.ln();
    let mut values = Array2::from_elem((bins, frames), floor_ln);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * cfg.hop;
        for (slot, (x, w)) in buf
            .iter_mut()
            .zip(padded[start..start + n_fft].iter().zip(&window))
        {
            *slot = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (f, c) in buf[..bins].iter().enumerate() {
            values[[f, t]] = c.norm_sqr().max(cfg.log_floor).ln();
        }
    }
    Spectrogram { values }
}
