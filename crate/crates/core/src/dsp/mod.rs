//! Time-frequency features and filters.

pub mod fft;
pub mod filter;
pub mod mel;

pub use filter::{Butterworth, FilterKind};
pub use mel::{
    hz_to_mel, mel_spectrogram, mel_to_hz, stft_power, MelConfig, MelFilterbank, MelFrontend, MelSpectrogram,
    PowerSpectrogram, WindowFn,
};
