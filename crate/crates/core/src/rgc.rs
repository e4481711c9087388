//! Ground-truth ganglion cell: a handful of small subunit filters, each
//! followed by threshold-quadratic rectification, pooled and passed through a
//! threshold-linear output stage, then turned into binary spikes.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stimulus::{indexed_rng, sample_frame, Frame};

/// Edge length of the default subunit kernels.
pub const DEFAULT_SUBUNIT_SIZE: usize = 6;
/// Gaussian width of the default subunit kernels, in pixels.
pub const DEFAULT_SUBUNIT_SIGMA: f64 = 1.2;
/// Spacing between neighbouring default subunit centers.
pub const DEFAULT_SUBUNIT_SPACING: usize = 5;
pub const DEFAULT_SUBUNIT_COUNT: usize = 5;
/// Fraction of frames that should evoke a spike.
pub const DEFAULT_TARGET_SPIKE_PROB: f64 = 0.10;
pub const DEFAULT_PROBE_FRAMES: usize = 10_000;
/// Seed for the calibration probe frames of [`make_default_model`].
pub const DEFAULT_MODEL_SEED: u64 = 2;

const GAIN_BRACKET: (f64, f64) = (1e-4, 1e4);

/// max(x, 0)^2
#[inline]
pub fn threshold_quadratic(x: f64) -> f64 {
    let r = x.max(0.0);
    r * r
}

/// max(y - threshold, 0)
#[inline]
pub fn output_rectify(y: f64, threshold: f64) -> f64 {
    (y - threshold).max(0.0)
}

/// A square filter placed at a fixed location of the frame.
///
/// The footprint spans rows `center_row - size/2 .. center_row - size/2 + size`
/// (and likewise for columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SubunitKernel {
    pub center_row: usize,
    pub center_col: usize,
    pub size: usize,
    /// Row-major `size x size` weights.
    pub weights: Vec<f64>,
}

impl SubunitKernel {
    pub fn new(center_row: usize, center_col: usize, size: usize, weights: Vec<f64>) -> Result<Self> {
        if size == 0 || weights.len() != size * size {
            return Err(Error::Shape(format!(
                "subunit of size {size} needs {} weights, got {}",
                size * size,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Domain("subunit weights must be finite".into()));
        }
        let k = SubunitKernel {
            center_row,
            center_col,
            size,
            weights,
        };
        if k.norm() == 0.0 {
            return Err(Error::Domain("subunit weights must not all be zero".into()));
        }
        if center_row < size / 2 || center_col < size / 2 {
            return Err(Error::Geometry(format!(
                "subunit centered at ({center_row}, {center_col}) extends past the top-left edge"
            )));
        }
        Ok(k)
    }

    /// Unit-norm isotropic Gaussian centered in a `size x size` window.
    pub fn gaussian(center_row: usize, center_col: usize, size: usize, sigma: f64) -> Result<Self> {
        let c = (size as f64 - 1.0) / 2.0;
        let mut weights: Vec<f64> = (0..size * size)
            .map(|idx| {
                let dr = (idx / size) as f64 - c;
                let dc = (idx % size) as f64 - c;
                (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let norm = weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        weights.iter_mut().for_each(|w| *w /= norm);
        Self::new(center_row, center_col, size, weights)
    }

    pub fn top(&self) -> usize {
        self.center_row - self.size / 2
    }

    pub fn left(&self) -> usize {
        self.center_col - self.size / 2
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.top() + self.size <= height && self.left() + self.size <= width
    }

    /// Whether pixel `(row, col)` lies inside the footprint.
    pub fn covers(&self, row: usize, col: usize) -> bool {
        (self.top()..self.top() + self.size).contains(&row)
            && (self.left()..self.left() + self.size).contains(&col)
    }

    /// Linear drive `<weights, patch>` before gain.
    pub fn drive(&self, frame: &Frame) -> Result<f64> {
        if !self.fits(frame.width(), frame.height()) {
            return Err(Error::Geometry(format!(
                "subunit at ({}, {}) of size {} does not fit a {}x{} frame",
                self.center_row,
                self.center_col,
                self.size,
                frame.width(),
                frame.height()
            )));
        }
        let (top, left, k) = (self.top(), self.left(), self.size);
        let px = frame.pixels();
        let w = frame.width();
        let mut acc = 0.0;
        for i in 0..k {
            let row = &px[(top + i) * w + left..(top + i) * w + left + k];
            let wrow = &self.weights[i * k..(i + 1) * k];
            acc += wrow
                .iter()
                .zip(row)
                .map(|(a, &b)| a * f64::from(b))
                .sum::<f64>();
        }
        Ok(acc)
    }
}

/// The simulated cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RgcModel {
    pub subunits: Vec<SubunitKernel>,
    pub pooling_weights: Vec<f64>,
    pub output_threshold: f64,
    pub gain: f64,
}

impl RgcModel {
    pub fn new(
        subunits: Vec<SubunitKernel>,
        pooling_weights: Vec<f64>,
        output_threshold: f64,
        gain: f64,
    ) -> Result<Self> {
        if subunits.is_empty() {
            return Err(Error::Config("model needs at least one subunit".into()));
        }
        if pooling_weights.len() != subunits.len() {
            return Err(Error::Shape(format!(
                "{} pooling weights for {} subunits",
                pooling_weights.len(),
                subunits.len()
            )));
        }
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Domain(format!("gain must be positive, got {gain}")));
        }
        if output_threshold != 1.0 {
            return Err(Error::Domain(format!(
                "output threshold is fixed at 1.0, got {output_threshold}"
            )));
        }
        Ok(Self {
            subunits,
            pooling_weights,
            output_threshold,
            gain,
        })
    }

    /// Gain-scaled linear drive of every subunit.
    pub fn drives(&self, frame: &Frame) -> Result<Vec<f64>> {
        self.subunits
            .iter()
            .map(|s| s.drive(frame).map(|d| self.gain * d))
            .collect()
    }

    /// Pooled rectified subunit signal, before the output nonlinearity.
    pub fn pooled(&self, frame: &Frame) -> Result<f64> {
        let mut total = 0.0;
        for (s, w) in self.subunits.iter().zip(&self.pooling_weights) {
            total += w * threshold_quadratic(self.gain * s.drive(frame)?);
        }
        Ok(total)
    }

    /// Width and height of the smallest frame containing every subunit.
    pub fn min_frame(&self) -> (usize, usize) {
        let w = self.subunits.iter().map(|s| s.left() + s.size).max().unwrap_or(0);
        let h = self.subunits.iter().map(|s| s.top() + s.size).max().unwrap_or(0);
        (w, h)
    }

    pub fn with_gain(&self, gain: f64) -> Result<Self> {
        Self::new(
            self.subunits.clone(),
            self.pooling_weights.clone(),
            self.output_threshold,
            gain,
        )
    }
}

/// Firing rate of the cell for one frame.
pub fn rgc_rate(frame: &Frame, model: &RgcModel) -> Result<f64> {
    Ok(output_rectify(model.pooled(frame)?, model.output_threshold))
}

/// Spike probability for a given rate: a Poisson count clipped to one bin.
#[inline]
pub fn spike_probability(rate: f64) -> f64 {
    -(-rate).exp_m1()
}

/// Draws a binary spike with probability `1 - exp(-rate)`.
pub fn sample_spike<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> Result<u8> {
    if !(rate >= 0.0) {
        return Err(Error::Domain(format!("rate must be non-negative, got {rate}")));
    }
    let u: f64 = rng.gen();
    Ok(u8::from(u < spike_probability(rate)))
}

/// The five-subunit layout with unit gain: Gaussian kernels on a horizontal
/// row through the frame center.
pub fn default_layout(frame_width: usize, frame_height: usize) -> Result<RgcModel> {
    let k = DEFAULT_SUBUNIT_SIZE;
    let n = DEFAULT_SUBUNIT_COUNT;
    let half_span = (n / 2) * DEFAULT_SUBUNIT_SPACING;
    let (cr, cc) = (frame_height / 2, frame_width / 2);
    if cc < half_span + k / 2 || cr < k / 2 {
        return Err(Error::Geometry(format!(
            "a {frame_width}x{frame_height} frame is too small for the default subunit layout"
        )));
    }
    let subunits = (0..n)
        .map(|i| {
            let col = cc - half_span + i * DEFAULT_SUBUNIT_SPACING;
            SubunitKernel::gaussian(cr, col, k, DEFAULT_SUBUNIT_SIGMA)
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(s) = subunits.iter().find(|s| !s.fits(frame_width, frame_height)) {
        return Err(Error::Geometry(format!(
            "subunit at column {} leaves a {frame_width}x{frame_height} frame",
            s.center_col
        )));
    }
    RgcModel::new(subunits, vec![1.0; n], 1.0, 1.0)
}

/// Default layout with its gain calibrated to a 10% spike probability.
pub fn make_default_model(frame_width: usize, frame_height: usize) -> Result<RgcModel> {
    make_default_model_seeded(frame_width, frame_height, DEFAULT_TARGET_SPIKE_PROB, DEFAULT_MODEL_SEED)
}

pub fn make_default_model_seeded(
    frame_width: usize,
    frame_height: usize,
    target_spike_prob: f64,
    seed: u64,
) -> Result<RgcModel> {
    let layout = default_layout(frame_width, frame_height)?;
    let gain = calibrate_gain(
        &layout,
        target_spike_prob,
        DEFAULT_PROBE_FRAMES,
        seed,
        (frame_width, frame_height),
    )?;
    layout.with_gain(gain)
}

/// Mean spike probability over `frames` at the given gain.
pub fn mean_spike_probability(model: &RgcModel, frames: &[Frame]) -> Result<f64> {
    let total: f64 = frames
        .iter()
        .map(|f| rgc_rate(f, model).map(spike_probability))
        .sum::<Result<f64>>()?;
    Ok(total / frames.len() as f64)
}

/// Finds the gain at which the mean spike probability over fresh probe
/// frames hits `target_spike_prob`, by bisection in log-gain.
///
/// The gain of `model` is ignored. Probe frames are drawn from `seed` at size
/// `frame_dims`.
pub fn calibrate_gain(
    model: &RgcModel,
    target_spike_prob: f64,
    n_probe_frames: usize,
    seed: u64,
    frame_dims: (usize, usize),
) -> Result<f64> {
    if !(target_spike_prob > 0.0 && target_spike_prob < 1.0) {
        return Err(Error::Config(format!(
            "target spike probability must lie in (0, 1), got {target_spike_prob}"
        )));
    }
    if n_probe_frames < 1000 {
        return Err(Error::Config(format!(
            "need at least 1000 probe frames, got {n_probe_frames}"
        )));
    }
    let unit = model.with_gain(1.0)?;
    let (w, h) = frame_dims;
    // Pooled drive scales with gain^2, so the unit-gain value is all we need.
    let pooled: Vec<f64> = (0..n_probe_frames as u64)
        .into_par_iter()
        .map(|i| sample_frame(seed, i, w, h).and_then(|f| unit.pooled(&f)))
        .collect::<Result<_>>()?;
    let threshold = model.output_threshold;
    let mean_prob = |gain: f64| {
        let g2 = gain * gain;
        pooled
            .iter()
            .map(|&p| spike_probability(output_rectify(g2 * p, threshold)))
            .sum::<f64>()
            / pooled.len() as f64
    };

    let (mut lo, mut hi) = (GAIN_BRACKET.0.ln(), GAIN_BRACKET.1.ln());
    if mean_prob(lo.exp()) > target_spike_prob || mean_prob(hi.exp()) < target_spike_prob {
        return Err(Error::Calibration(format!(
            "target {target_spike_prob} not bracketed by gains in [{}, {}]",
            GAIN_BRACKET.0, GAIN_BRACKET.1
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let p = mean_prob(mid.exp());
        if ((p - target_spike_prob) / target_spike_prob).abs() < 1e-4 {
            return Ok(mid.exp());
        }
        if p < target_spike_prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gain = (0.5 * (lo + hi)).exp();
    let p = mean_prob(gain);
    if ((p - target_spike_prob) / target_spike_prob).abs() > 0.1 {
        return Err(Error::Calibration(format!(
            "best gain {gain} reaches spike probability {p}, target {target_spike_prob}"
        )));
    }
    Ok(gain)
}

/// Frames paired with spike counts and, for simulated data, analytic rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    frames: Vec<Frame>,
    labels: Vec<u8>,
    rates: Option<Vec<f64>>,
}

impl LabeledDataset {
    pub fn new(frames: Vec<Frame>, labels: Vec<u8>, rates: Option<Vec<f64>>) -> Result<Self> {
        if frames.len() != labels.len() || rates.as_ref().is_some_and(|r| r.len() != frames.len()) {
            return Err(Error::Shape(format!(
                "{} frames, {} labels, {} rates",
                frames.len(),
                labels.len(),
                rates.as_ref().map_or(0, Vec::len)
            )));
        }
        if let Some(f) = frames.first() {
            let (w, h) = (f.width(), f.height());
            if frames.iter().any(|g| g.width() != w || g.height() != h) {
                return Err(Error::Shape("frames differ in size".into()));
            }
        }
        Ok(Self {
            frames,
            labels,
            rates,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn rates(&self) -> Option<&[f64]> {
        self.rates.as_deref()
    }

    /// `(width, height)` of the frames, if any.
    pub fn frame_dims(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.width(), f.height()))
    }

    pub fn into_parts(self) -> (Vec<Frame>, Vec<u8>, Option<Vec<f64>>) {
        (self.frames, self.labels, self.rates)
    }
}

/// Spikes (and analytic rates) of `model` for every frame. Spike `i` uses the
/// stream `(spike_seed, i)`.
pub fn label_dataset(frames: Vec<Frame>, model: &RgcModel, spike_seed: u64) -> Result<LabeledDataset> {
    let pairs: Vec<(u8, f64)> = frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let rate = rgc_rate(f, model)?;
            let spike = sample_spike(rate, &mut indexed_rng(spike_seed, i as u64))?;
            Ok((spike, rate))
        })
        .collect::<Result<_>>()?;
    let (labels, rates) = pairs.into_iter().unzip();
    LabeledDataset::new(frames, labels, Some(rates))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stimulus::generate_frame;

    fn unit_frame_model() -> RgcModel {
        // 1x1 subunits so each drive equals one pixel.
        let subunits = (0..5)
            .map(|i| SubunitKernel::new(0, i, 1, vec![1.0]).unwrap())
            .collect();
        RgcModel::new(subunits, vec![1.0; 5], 1.0, 1.0).unwrap()
    }

    #[test]
    fn nonlinearities() {
        assert_eq!(threshold_quadratic(-1.0), 0.0);
        assert_eq!(threshold_quadratic(2.0), 4.0);
        assert_eq!(threshold_quadratic(0.0), 0.0);
        assert_eq!(output_rectify(5.0, 1.0), 4.0);
        assert_eq!(output_rectify(0.5, 1.0), 0.0);
        assert_eq!(output_rectify(1.0, 1.0), 0.0);
    }

    #[test]
    fn five_unit_drives_give_rate_four() {
        let model = unit_frame_model();
        let frame = Frame::filled(5, 1, true).unwrap();
        assert_eq!(rgc_rate(&frame, &model).unwrap(), 4.0);
    }

    #[test]
    fn all_negative_frame_is_silent() {
        let model = make_default_model(26, 26).unwrap();
        let frame = Frame::filled(26, 26, false).unwrap();
        assert_eq!(rgc_rate(&frame, &model).unwrap(), 0.0);
    }

    #[test]
    fn out_of_bounds_footprint() {
        let model = default_layout(26, 26).unwrap();
        let small = Frame::filled(20, 20, true).unwrap();
        assert!(matches!(rgc_rate(&small, &model), Err(Error::Geometry(_))));
        assert!(matches!(default_layout(20, 26), Err(Error::Geometry(_))));
    }

    #[test]
    fn default_layout_geometry() {
        let model = make_default_model(26, 26).unwrap();
        assert_eq!(model.subunits.len(), 5);
        assert_eq!(model.pooling_weights, vec![1.0; 5]);
        assert_eq!(model.output_threshold, 1.0);
        for s in &model.subunits {
            assert!(s.fits(26, 26));
            assert_eq!(s.size, 6);
            assert!((s.norm() - 1.0).abs() < 1e-12);
            assert!(s.weights.iter().all(|&w| w > 0.0));
            assert_eq!(s.center_row, 13);
        }
        let cols: Vec<_> = model.subunits.iter().map(|s| s.center_col).collect();
        assert_eq!(cols, vec![3, 8, 13, 18, 23]);
    }

    #[test]
    fn spike_sampling() {
        let mut rng = indexed_rng(9, 0);
        assert!((0..1000).all(|_| sample_spike(0.0, &mut rng).unwrap() == 0));
        let hits: u32 = (0..10_000).map(|_| u32::from(sample_spike(100.0, &mut rng).unwrap())).sum();
        assert!(hits as f64 / 1e4 > 0.999);
        assert!(matches!(sample_spike(-0.1, &mut rng), Err(Error::Domain(_))));
    }

    #[test]
    fn spike_frequency_matches_probability() {
        let mut rng = indexed_rng(11, 0);
        let n = 100_000;
        let hits: u32 = (0..n).map(|_| u32::from(sample_spike(0.105, &mut rng).unwrap())).sum();
        let freq = hits as f64 / n as f64;
        let p = 1.0 - (-0.105f64).exp();
        assert!((p - 0.0997).abs() < 1e-4);
        assert!((freq - p).abs() < 0.01, "{freq} vs {p}");
    }

    #[test]
    fn gain_monotonicity() {
        let model = make_default_model(26, 26).unwrap();
        let doubled = model.with_gain(2.0 * model.gain).unwrap();
        let mut rng = indexed_rng(5, 0);
        for _ in 0..200 {
            let f = generate_frame(26, 26, &mut rng).unwrap();
            assert!(rgc_rate(&f, &doubled).unwrap() >= rgc_rate(&f, &model).unwrap());
        }
    }

    #[test]
    fn calibration_errors() {
        let layout = default_layout(26, 26).unwrap();
        assert!(calibrate_gain(&layout, 0.0, 1000, 1, (26, 26)).is_err());
        assert!(calibrate_gain(&layout, 0.1, 999, 1, (26, 26)).is_err());
        // A cell that can never fire cannot reach any target.
        let dead = SubunitKernel::new(0, 0, 1, vec![1e-12]).unwrap();
        let dead = RgcModel::new(vec![dead], vec![1.0], 1.0, 1.0).unwrap();
        assert!(matches!(
            calibrate_gain(&dead, 0.1, 1000, 1, (4, 4)),
            Err(Error::Calibration(_))
        ));
    }

    #[test]
    fn calibration_stable_across_seeds() {
        let layout = default_layout(26, 26).unwrap();
        let a = calibrate_gain(&layout, 0.1, 10_000, 1, (26, 26)).unwrap();
        let b = calibrate_gain(&layout, 0.1, 10_000, 77, (26, 26)).unwrap();
        assert!((a / b - 1.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn labels_of_silent_frames_are_zero() {
        let model = make_default_model(26, 26).unwrap();
        let frames = vec![Frame::filled(26, 26, false).unwrap(); 50];
        let data = label_dataset(frames, &model, 3).unwrap();
        assert!(data.labels().iter().all(|&l| l == 0));
        assert!(data.rates().unwrap().iter().all(|&r| r == 0.0));
    }

    #[test]
    fn stored_rates_match_model() {
        let model = make_default_model(26, 26).unwrap();
        let frames = crate::stimulus::generate_range(4, 0..200, 26, 26).unwrap();
        let data = label_dataset(frames, &model, 3).unwrap();
        for (f, &r) in data.frames().iter().zip(data.rates().unwrap()) {
            assert_eq!(rgc_rate(f, &model).unwrap(), r);
        }
        assert!(data.labels().iter().all(|&l| l <= 1));
    }

    #[test]
    fn dataset_length_mismatch() {
        let f = Frame::filled(2, 2, true).unwrap();
        assert!(LabeledDataset::new(vec![f.clone()], vec![], None).is_err());
        assert!(LabeledDataset::new(vec![f], vec![0], Some(vec![])).is_err());
    }
}
