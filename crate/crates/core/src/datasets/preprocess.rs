//! Spike binning, Gaussian smoothing and event-list import.

use std::path::Path;

use super::recording::{RegionRecording, ValueKind};
use crate::error::{CtaeError, Result};

/// One spike: trial index, channel index, time in seconds from trial start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub trial: usize,
    pub channel: usize,
    pub time_s: f64,
}

/// Counts events into left-closed bins `[t·Δ, (t+1)·Δ)`; bin index is
/// `floor(time_s · 1000 / Δ_ms)`.
pub fn bin_spikes(
    region: usize,
    events: &[SpikeEvent],
    trials: usize,
    channels: usize,
    bin_width_ms: f64,
    time_steps: usize,
) -> Result<RegionRecording> {
    if !(bin_width_ms > 0.0) {
        return Err(CtaeError::Data(format!("bin width must be positive, got {bin_width_ms}")));
    }
    let mut counts = vec![0.0; trials * channels * time_steps];
    for ev in events {
        if !(ev.time_s >= 0.0) {
            return Err(CtaeError::Data(format!(
                "event at negative or undefined time {} (trial {}, channel {})",
                ev.time_s, ev.trial, ev.channel
            )));
        }
        if ev.trial >= trials || ev.channel >= channels {
            return Err(CtaeError::Data(format!(
                "event for trial {} channel {} outside {trials}×{channels}",
                ev.trial, ev.channel
            )));
        }
        let bin = (ev.time_s * 1000.0 / bin_width_ms).floor() as usize;
        if bin >= time_steps {
            return Err(CtaeError::Data(format!(
                "event at {} s lies past the {time_steps}-bin window",
                ev.time_s
            )));
        }
        counts[(ev.trial * channels + ev.channel) * time_steps + bin] += 1.0;
    }
    RegionRecording::new(region, (trials, channels, time_steps), bin_width_ms, ValueKind::Counts, counts)
}

/// Normalized Gaussian taps for kernel size `k`: σ = k/2 bins, radius k.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    assert!(k >= 1, "kernel size must be at least 1");
    let sigma = k as f64 / 2.0;
    let r = k as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m >= n { 2 * n - 1 - m } else { m }) as usize
}

/// Smooths one series with the given taps, reflect-padded.
pub fn smooth_series(x: &[f64], taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as i64;
    (0..x.len() as i64)
        .map(|t| {
            taps.iter()
                .enumerate()
                .fold(0.0, |acc, (j, w)| acc + w * x[reflect(t + j as i64 - r, x.len())])
        })
        .collect()
}

/// Per-channel temporal smoothing; the result is a rate recording.
pub fn gaussian_smooth(rec: &RegionRecording, k: usize) -> Result<RegionRecording> {
    if k == 0 {
        return Err(CtaeError::Config("kernel size must be at least 1".into()));
    }
    let taps = gaussian_kernel(k);
    let t = rec.time_steps;
    let mut out = Vec::with_capacity(rec.values().len());
    for series in rec.values().chunks(t) {
        out.extend(smooth_series(series, &taps));
    }
    Ok(rec.with_values(ValueKind::Rates, out))
}

/// Reads `trial,channel,time_s` rows. A non-numeric first row is treated
/// as a header; blank lines and `#` comments are skipped.
pub fn read_event_list(path: &Path) -> Result<Vec<SpikeEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| CtaeError::io(path, e))?;
    parse_event_list(&text)
}

pub fn parse_event_list(text: &str) -> Result<Vec<SpikeEvent>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| CtaeError::Data(format!("event list: {e}")))?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 3 {
            return Err(CtaeError::Data(format!("event list row {}: expected 3 columns", i + 1)));
        }
        let parsed = (row[0].parse::<usize>(), row[1].parse::<usize>(), row[2].parse::<f64>());
        match parsed {
            (Ok(trial), Ok(channel), Ok(time_s)) => out.push(SpikeEvent { trial, channel, time_s }),
            _ if i == 0 && out.is_empty() => continue,
            _ => {
                return Err(CtaeError::Data(format!(
                    "event list row {}: cannot parse {:?}",
                    i + 1,
                    row.iter().collect::<Vec<_>>()
                )))
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 4), 0);
        assert_eq!(reflect(-2, 4), 1);
        assert_eq!(reflect(4, 4), 3);
        assert_eq!(reflect(5, 4), 2);
        assert_eq!(reflect(-3, 2), 1);
    }

    #[test]
    fn header_row_skipped() {
        let ev = parse_event_list("trial,channel,time\n0,1,0.05\n# note\n2,0,0.25\n").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1], SpikeEvent { trial: 2, channel: 0, time_s: 0.25 });
        assert!(parse_event_list("0,1,0.05\nx,1,2\n").is_err());
    }
}
