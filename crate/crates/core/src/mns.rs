//! Motion-guided noise shifting.
//!
//! Frame noises are derived from one base noise by modulating the phase of
//! its 2D DFT: a linear phase ramp translates the noise circularly, a random
//! conjugate-symmetric phase field jitters it without a direction. Only the
//! phase is touched, so every frequency amplitude, every channel's L2 norm
//! and the spatial mean (the DC bin) are kept.
//!
//! Conventions: tensors are `H x W x C` row-major; frequencies are in cycles
//! per pixel (`f = k / n` with `k` in the signed DFT range); the forward
//! transform is unnormalized and the inverse carries `1 / (H W)`. A shift of
//! `d` pixels along +x moves content toward larger column indices.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dss::{BackgroundMotion, Direction};
use crate::exec::{map_range, Execution};

pub const DEFAULT_PIXEL_SCALE: f64 = 4.0;
pub const DEFAULT_SIGMA_PHI: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MnsError {
    #[error("tensor contains a non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("invalid tensor shape {height}x{width}x{channels} for {len} values")]
    Shape {
        height: usize,
        width: usize,
        channels: usize,
        len: usize,
    },
    #[error("direction \"random\" has no shift vector; use phase perturbation")]
    RandomDirection,
    #[error("invalid noise parameter: {0}")]
    Parameter(String),
}

/// Real `H x W x C` array stored row-major, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    pub seed: Option<u64>,
    /// Diffusion step the noise is meant for; metadata only.
    pub diffusion_step: Option<u32>,
}

impl NoiseTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, MnsError> {
        if height < 2 || width < 2 || channels == 0 || data.len() != height * width * channels {
            return Err(MnsError::Shape {
                height,
                width,
                channels,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(MnsError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            seed: None,
            diffusion_step: None,
        })
    }

    /// Standard Gaussian noise from a seeded ChaCha stream.
    pub fn gaussian(
        height: usize,
        width: usize,
        channels: usize,
        seed: u64,
    ) -> Result<Self, MnsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..height * width * channels)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut t = Self::new(height, width, channels, data)?;
        t.seed = Some(seed);
        Ok(t)
    }

    pub fn from_channels(
        height: usize,
        width: usize,
        channels: &[Vec<f64>],
    ) -> Result<Self, MnsError> {
        let c = channels.len();
        let mut data = vec![0.0; height * width * c];
        for (ch, plane) in channels.iter().enumerate() {
            if plane.len() != height * width {
                return Err(MnsError::Shape {
                    height,
                    width,
                    channels: c,
                    len: plane.len() * c,
                });
            }
            for (p, v) in plane.iter().enumerate() {
                data[p * c + ch] = *v;
            }
        }
        Self::new(height, width, c, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as an `H x W` row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    pub fn channel_norm(&self, c: usize) -> f64 {
        self.channel(c).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn channel_mean(&self, c: usize) -> f64 {
        self.channel(c).iter().sum::<f64>() / (self.height * self.width) as f64
    }

    pub fn max_abs_diff(&self, other: &NoiseTensor) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn with_data_like(&self, data: Vec<f64>) -> Self {
        Self {
            data,
            ..self.clone()
        }
    }
}

/// Unit screen-space direction (y down); zero only for the random case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionVector {
    pub dx: f64,
    pub dy: f64,
}

impl DirectionVector {
    pub const ZERO: DirectionVector = DirectionVector { dx: 0.0, dy: 0.0 };

    pub fn norm(&self) -> f64 {
        self.dx.hypot(self.dy)
    }
}

pub fn direction_multipliers(direction: Direction) -> Result<DirectionVector, MnsError> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let (dx, dy) = match direction {
        Direction::Right => (1.0, 0.0),
        Direction::Left => (-1.0, 0.0),
        Direction::Down => (0.0, 1.0),
        Direction::Up => (0.0, -1.0),
        Direction::RightDown => (h, h),
        Direction::RightUp => (h, -h),
        Direction::LeftDown => (-h, h),
        Direction::LeftUp => (-h, -h),
        Direction::Random => return Err(MnsError::RandomDirection),
    };
    Ok(DirectionVector { dx, dy })
}

/// Signed DFT frequency of bin `k` for length `n`, in cycles per sample.
pub fn signed_frequency(k: usize, n: usize) -> f64 {
    let k = k as i64;
    let n_i = n as i64;
    let signed = if k <= (n_i - 1) / 2 { k } else { k - n_i };
    signed as f64 / n as f64
}

/// A circular translation in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftPlan {
    pub offset_x: f64,
    pub offset_y: f64,
}

impl ShiftPlan {
    pub fn new(offset_x: f64, offset_y: f64) -> Self {
        Self { offset_x, offset_y }
    }

    /// Offset for frame `frame_offset` frames after the base:
    /// `frame_offset * speed * pixel_scale` pixels along `direction`.
    pub fn for_frame(
        frame_offset: usize,
        direction: DirectionVector,
        speed: f64,
        pixel_scale: f64,
    ) -> Self {
        let magnitude = frame_offset as f64 * speed * pixel_scale;
        Self {
            offset_x: magnitude * direction.dx,
            offset_y: magnitude * direction.dy,
        }
    }

    pub fn compose(&self, other: &ShiftPlan) -> ShiftPlan {
        ShiftPlan::new(
            self.offset_x + other.offset_x,
            self.offset_y + other.offset_y,
        )
    }

    /// Phase factors along one axis.
    ///
    /// The Nyquist bin of an even length is its own conjugate partner, so a
    /// fractional shift cannot be represented there with a unit factor and a
    /// real output; it gets the factor of the nearest whole-pixel shift
    /// (`+1` or `-1`), which is exact whenever the offset is an integer.
    fn axis_factors(offset: f64, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|k| {
                if n.is_multiple_of(2) && k == n / 2 {
                    if offset.round().rem_euclid(2.0) == 0.0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        Complex64::new(-1.0, 0.0)
                    }
                } else {
                    Complex64::from_polar(1.0, -2.0 * PI * offset * signed_frequency(k, n))
                }
            })
            .collect()
    }

    /// Full `H x W` phase ramp, row-major.
    pub fn phase_ramp(&self, height: usize, width: usize) -> Vec<Complex64> {
        let fy = Self::axis_factors(self.offset_y, height);
        let fx = Self::axis_factors(self.offset_x, width);
        let mut out = Vec::with_capacity(height * width);
        for ry in &fy {
            for rx in &fx {
                out.push(ry * rx);
            }
        }
        out
    }
}

struct Plans {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            col_fwd: planner.plan_fft_forward(height),
            row_inv: planner.plan_fft_inverse(width),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    fn transform(&self, buf: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        let (h, w) = (self.height, self.width);
        for row in buf.chunks_exact_mut(w) {
            rows.process(row);
        }
        let mut column = vec![Complex64::default(); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            cols.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    }

    fn forward(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_fwd, &self.col_fwd);
    }

    fn inverse(&self, buf: &mut [Complex64]) {
        self.transform(buf, &self.row_inv, &self.col_inv);
        let scale = 1.0 / (self.height * self.width) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Result of a phase modulation, with the largest imaginary part that was
/// discarded after the inverse transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Modulated {
    pub tensor: NoiseTensor,
    pub max_imag_residue: f64,
}

fn ensure_finite(t: &NoiseTensor) -> Result<(), MnsError> {
    match t.data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(MnsError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Multiply each channel's spectrum by `factors(channel)` and transform back.
fn modulate<F>(base: &NoiseTensor, exec: Execution, factors: F) -> Result<Modulated, MnsError>
where
    F: Fn(usize) -> Vec<Complex64> + Sync,
{
    ensure_finite(base)?;
    let (h, w, c) = (base.height, base.width, base.channels);
    let plans = Plans::new(h, w);
    let planes = map_range(exec, c, |ch| {
        let mut buf: Vec<Complex64> = base
            .data
            .iter()
            .skip(ch)
            .step_by(c)
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        plans.forward(&mut buf);
        for (v, f) in buf.iter_mut().zip(factors(ch)) {
            *v *= f;
        }
        plans.inverse(&mut buf);
        buf
    });
    let mut data = vec![0.0; h * w * c];
    let mut residue: f64 = 0.0;
    for (ch, plane) in planes.iter().enumerate() {
        for (p, v) in plane.iter().enumerate() {
            data[p * c + ch] = v.re;
            residue = residue.max(v.im.abs());
        }
    }
    Ok(Modulated {
        tensor: base.with_data_like(data),
        max_imag_residue: residue,
    })
}

/// Translate every channel of `base` by `plan` through the frequency domain.
pub fn shift_by(base: &NoiseTensor, plan: &ShiftPlan) -> Result<Modulated, MnsError> {
    shift_by_with(base, plan, Execution::default())
}

pub fn shift_by_with(
    base: &NoiseTensor,
    plan: &ShiftPlan,
    exec: Execution,
) -> Result<Modulated, MnsError> {
    if !plan.offset_x.is_finite() || !plan.offset_y.is_finite() {
        return Err(MnsError::Parameter(format!("non-finite shift {plan:?}")));
    }
    let ramp = plan.phase_ramp(base.height, base.width);
    modulate(base, exec, |_| ramp.clone())
}

/// Noise for the frame `frame_offset` frames after the base, moved by
/// `frame_offset * speed * pixel_scale` pixels along `direction`.
pub fn shift_noise(
    base: &NoiseTensor,
    frame_offset: usize,
    direction: DirectionVector,
    speed: f64,
    pixel_scale: f64,
) -> Result<NoiseTensor, MnsError> {
    if !(0.0..=1.0).contains(&speed) {
        return Err(MnsError::Parameter(format!(
            "speed must be in [0, 1], got {speed}"
        )));
    }
    if !(pixel_scale > 0.0 && pixel_scale.is_finite()) {
        return Err(MnsError::Parameter(format!(
            "pixel scale must be positive, got {pixel_scale}"
        )));
    }
    let plan = ShiftPlan::for_frame(frame_offset, direction, speed, pixel_scale);
    Ok(shift_by(base, &plan)?.tensor)
}

/// Random phase field for one channel: uniform in `[-sigma, sigma]`,
/// odd under `k -> -k`, zero on self-conjugate bins (DC and Nyquist).
pub fn random_phase_field(height: usize, width: usize, sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut theta = vec![0.0; height * width];
    let mut assigned = vec![false; height * width];
    for ky in 0..height {
        for kx in 0..width {
            let idx = ky * width + kx;
            if assigned[idx] {
                continue;
            }
            let partner = ((height - ky) % height) * width + (width - kx) % width;
            assigned[idx] = true;
            assigned[partner] = true;
            if partner == idx {
                continue;
            }
            let t = if sigma > 0.0 {
                rng.random_range(-sigma..=sigma)
            } else {
                0.0
            };
            theta[idx] = t;
            theta[partner] = -t;
        }
    }
    theta
}

/// Jitter the phase of every non-self-conjugate frequency of `base`.
pub fn perturb_random(
    base: &NoiseTensor,
    sigma_phi: f64,
    rng_seed: u64,
) -> Result<Modulated, MnsError> {
    perturb_random_with(base, sigma_phi, rng_seed, Execution::default())
}

pub fn perturb_random_with(
    base: &NoiseTensor,
    sigma_phi: f64,
    rng_seed: u64,
    exec: Execution,
) -> Result<Modulated, MnsError> {
    if !(sigma_phi >= 0.0 && sigma_phi.is_finite()) {
        return Err(MnsError::Parameter(format!(
            "phase magnitude must be >= 0, got {sigma_phi}"
        )));
    }
    let (h, w) = (base.height, base.width);
    modulate(base, exec, |ch| {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(ch as u64);
        random_phase_field(h, w, sigma_phi, &mut rng)
            .into_iter()
            .map(|t| {
                if t == 0.0 {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::from_polar(1.0, t)
                }
            })
            .collect()
    })
}

/// How the random-direction phase magnitude evolves with frame offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSchedule {
    /// `sigma * frame_offset`
    Linear,
    /// `sigma` for every frame
    Constant,
}

impl PhaseSchedule {
    pub fn magnitude(&self, sigma_phi: f64, frame_offset: usize) -> f64 {
        match self {
            PhaseSchedule::Linear => sigma_phi * frame_offset as f64,
            PhaseSchedule::Constant => sigma_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub pixel_scale: f64,
    pub sigma_phi: f64,
    pub rng_seed: u64,
    pub schedule: PhaseSchedule,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            pixel_scale: DEFAULT_PIXEL_SCALE,
            sigma_phi: DEFAULT_SIGMA_PHI,
            rng_seed: 0,
            schedule: PhaseSchedule::Linear,
        }
    }
}

/// Per-frame description of what was applied to the base noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameNoiseInfo {
    pub frame: usize,
    pub direction: Direction,
    pub speed: f64,
    /// Pixel offset `[x, y]` for directional frames.
    pub offset: Option<[f64; 2]>,
    /// Phase magnitude for random frames.
    pub phase_magnitude: Option<f64>,
    pub phase_seed: Option<u64>,
}

pub fn plan_sequence(motions: &[BackgroundMotion], params: &NoiseParams) -> Vec<FrameNoiseInfo> {
    motions
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut info = FrameNoiseInfo {
                frame: i,
                direction: m.direction,
                speed: m.speed,
                offset: None,
                phase_magnitude: None,
                phase_seed: None,
            };
            if i == 0 {
                return info;
            }
            match direction_multipliers(m.direction) {
                Ok(d) => {
                    let p = ShiftPlan::for_frame(i, d, m.speed, params.pixel_scale);
                    info.offset = Some([p.offset_x, p.offset_y]);
                }
                Err(_) => {
                    info.phase_magnitude = Some(params.schedule.magnitude(params.sigma_phi, i));
                    info.phase_seed = Some(params.rng_seed ^ i as u64);
                }
            }
            info
        })
        .collect()
}

/// Noise for every frame: frame 0 is `base`; frame `i` is `base` shifted by
/// `i * speed_i * pixel_scale` pixels along its direction, or phase-jittered
/// when its direction is random.
pub fn generate_noise_sequence(
    base: &NoiseTensor,
    motions: &[BackgroundMotion],
    params: &NoiseParams,
) -> Result<Vec<NoiseTensor>, MnsError> {
    generate_noise_sequence_with(base, motions, params, Execution::default())
}

pub fn generate_noise_sequence_with(
    base: &NoiseTensor,
    motions: &[BackgroundMotion],
    params: &NoiseParams,
    exec: Execution,
) -> Result<Vec<NoiseTensor>, MnsError> {
    if motions.is_empty() {
        return Err(MnsError::Parameter("need at least one frame".into()));
    }
    if !(params.pixel_scale > 0.0 && params.pixel_scale.is_finite()) {
        return Err(MnsError::Parameter(format!(
            "pixel scale must be positive, got {}",
            params.pixel_scale
        )));
    }
    ensure_finite(base)?;
    let plan = plan_sequence(motions, params);
    // Frames run in parallel; channels inside each frame run sequentially.
    map_range(exec, plan.len(), |i| {
        let info = &plan[i];
        let out = match (info.offset, info.phase_magnitude) {
            (Some([ox, oy]), _) => {
                shift_by_with(base, &ShiftPlan::new(ox, oy), Execution::Sequential)?.tensor
            }
            (None, Some(sigma)) => {
                perturb_random_with(
                    base,
                    sigma,
                    info.phase_seed.unwrap_or(0),
                    Execution::Sequential,
                )?
                .tensor
            }
            (None, None) => base.clone(),
        };
        Ok(out)
    })
    .into_iter()
    .collect()
}
