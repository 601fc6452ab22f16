use nalgebra::Vector3;

use crate::error::{Error, Result};

fn pole_gain(cutoff_hz: f64, fps: f64) -> Result<f64> {
    if !(cutoff_hz > 0.0 && cutoff_hz < fps / 2.0) {
        return Err(Error::OutOfRange {
            what: "low-pass cutoff (Hz)",
            value: cutoff_hz,
            min: 0.0,
            max: fps / 2.0,
        });
    }
    Ok(1.0 - (-2.0 * std::f64::consts::PI * cutoff_hz / fps).exp())
}

fn one_pass<T, I>(samples: I, gain: f64, out: &mut Vec<T>)
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
    I: Iterator<Item = T>,
{
    let mut state: Option<T> = None;
    for x in samples {
        let y = match state {
            None => x,
            Some(prev) => prev + (x - prev) * gain,
        };
        state = Some(y);
        out.push(y);
    }
}

fn zero_phase<T>(signal: &[T], gain: f64) -> Vec<T>
where
    T: Copy + std::ops::Add<Output = T> + std::ops::Sub<Output = T> + std::ops::Mul<f64, Output = T>,
{
    let mut forward = Vec::with_capacity(signal.len());
    one_pass(signal.iter().copied(), gain, &mut forward);
    let mut backward = Vec::with_capacity(signal.len());
    one_pass(forward.iter().rev().copied(), gain, &mut backward);
    backward.reverse();
    backward
}

/// Forward-backward single-pole low-pass. Each pass starts from the first
/// sample it sees, so constant signals pass through unchanged.
pub fn lowpass(signal: &[f64], cutoff_hz: f64, fps: f64) -> Result<Vec<f64>> {
    let gain = pole_gain(cutoff_hz, fps)?;
    Ok(zero_phase(signal, gain))
}

pub fn lowpass_vec3(signal: &[Vector3<f64>], cutoff_hz: f64, fps: f64) -> Result<Vec<Vector3<f64>>> {
    let gain = pole_gain(cutoff_hz, fps)?;
    Ok(zero_phase(signal, gain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Amplitude of the `freq` component via a direct DFT projection.
    fn dft_amplitude(x: &[f64], freq: f64, fps: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, v) in x.iter().enumerate() {
            let phase = 2.0 * PI * freq * n as f64 / fps;
            re += v * phase.cos();
            im -= v * phase.sin();
        }
        2.0 * (re * re + im * im).sqrt() / x.len() as f64
    }

    #[test]
    fn dc_passes_unchanged() {
        let x = vec![0.731; 200];
        let y = lowpass(&x, 3.0, 100.0).unwrap();
        assert!(y.iter().all(|v| (v - 0.731).abs() < 1e-12));
    }

    #[test]
    fn high_frequency_attenuated() {
        let (fps, cutoff) = (100.0, 2.0);
        let freq = 10.0 * cutoff;
        // 20 full periods so the DFT bin is exact.
        let x: Vec<f64> = (0..500).map(|n| (2.0 * PI * freq * n as f64 / fps).sin()).collect();
        let y = lowpass(&x, cutoff, fps).unwrap();
        // Skip edge transients from the pass initialization.
        let (xi, yi) = (&x[100..400], &y[100..400]);
        let ratio = dft_amplitude(xi, freq, fps) / dft_amplitude(yi, freq, fps);
        assert!(ratio > 10.0, "attenuation only {ratio}");
    }

    #[test]
    fn impulse_response_symmetric() {
        let mut x = vec![0.0; 401];
        x[200] = 1.0;
        let y = lowpass(&x, 5.0, 100.0).unwrap();
        for k in 1..150 {
            assert!((y[200 + k] - y[200 - k]).abs() < 1e-12, "asymmetry at lag {k}");
        }
    }

    #[test]
    fn invalid_cutoff_rejected() {
        assert!(lowpass(&[1.0, 2.0], 50.0, 100.0).is_err());
        assert!(lowpass(&[1.0, 2.0], 0.0, 100.0).is_err());
    }
}
