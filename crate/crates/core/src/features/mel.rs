/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub start_bin: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
}

/// Triangular filters with unit peak (no area normalization), centres equally
/// spaced on the mel scale between `fmin` and `fmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    filters: Vec<Filter>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_fft: usize, sample_rate: f64, n_mels: usize, fmin: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate / n_fft as f64;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let filters = (0..n_mels)
            .map(|m| {
                let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
                let dense: Vec<f64> = (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - left) / (center - left);
                        let down = (right - f) / (right - center);
                        up.min(down).max(0.0)
                    })
                    .collect();
                let first = dense.iter().position(|&w| w > 0.0).unwrap_or(0);
                let last = dense.iter().rposition(|&w| w > 0.0).unwrap_or(0);
                Filter {
                    start_bin: first,
                    weights: dense[first..=last.max(first)].to_vec(),
                    center_hz: center,
                }
            })
            .collect();
        MelFilterbank { filters, n_bins }
    }

    pub fn filters(&self) -> &[Filter] {
        &self.filters
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    /// Weight of `filter` at FFT `bin`.
    pub fn weight(&self, filter: usize, bin: usize) -> f64 {
        let f = &self.filters[filter];
        if bin < f.start_bin {
            return 0.0;
        }
        f.weights.get(bin - f.start_bin).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_roundtrip() {
        for hz in [0.0, 50.0, 1000.0, 7800.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        assert!((hz_to_mel(700.0) - 2595.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn filters_cover_band_and_are_nonnegative() {
        let bank = MelFilterbank::new(2048, 16000.0, 224, 50.0, 7800.0);
        assert_eq!(bank.filters().len(), 224);
        for f in bank.filters() {
            assert!(f.weights.iter().all(|&w| w >= 0.0));
            assert!(f.weights.iter().any(|&w| w > 0.0), "empty filter at {} Hz", f.center_hz);
        }
        let bin_hz = 16000.0 / 2048.0;
        for k in 0..bank.n_bins() {
            let hz = k as f64 * bin_hz;
            if (50.0..=7800.0).contains(&hz) {
                assert!((0..224).any(|m| bank.weight(m, k) > 0.0), "bin {k} ({hz} Hz) uncovered");
            }
        }
    }
}
