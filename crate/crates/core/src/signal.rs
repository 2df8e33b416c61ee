//! Scripted time signals with analytic derivatives.
//!
//! A [`Signal`] is a sum of [`Source`]s. Each source is a [`Waveform`],
//! optionally gated by a [`Window`] with raised-cosine edges. Every waveform
//! can be differentiated analytically up to any order, which references
//! (position mode needs four derivatives) and disturbance ground truth rely on.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sum of sinusoids with seeded random frequencies and phases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandLimited {
    /// `(amplitude, angular frequency rad/s, phase rad)` per component.
    pub components: Vec<(f64, f64, f64)>,
}

impl BandLimited {
    /// Draws `count` components with frequencies uniform in `[f_min, f_max]` Hz.
    /// Component amplitudes are chosen so the signal RMS equals `rms`.
    pub fn new(rms: f64, f_min: f64, f_max: f64, count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = count.max(1);
        let amp = rms * (2.0 / count as f64).sqrt();
        let components = (0..count)
            .map(|_| {
                let f = if f_max > f_min { rng.gen_range(f_min..f_max) } else { f_min };
                let phase = rng.gen_range(0.0..2.0 * PI);
                (amp, 2.0 * PI * f, phase)
            })
            .collect();
        Self { components }
    }

    fn derivative(&self, t: f64, order: u32) -> f64 {
        self.components.iter().map(|&(a, w, p)| sine_derivative(a, w, p, t, order)).sum()
    }

    /// Upper bound on `|d^order/dt^order|` of the signal.
    pub fn derivative_bound(&self, order: u32) -> f64 {
        self.components.iter().map(|&(a, w, _)| a.abs() * w.powi(order as i32)).sum()
    }
}

fn sine_derivative(amplitude: f64, omega: f64, phase: f64, t: f64, order: u32) -> f64 {
    amplitude * omega.powi(order as i32) * (omega * t + phase + order as f64 * PI / 2.0).sin()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Waveform {
    Zero,
    Constant(f64),
    /// Jumps from 0 to `amplitude` at time `at`. Derivatives are zero away from the jump.
    Step {
        amplitude: f64,
        at: f64,
    },
    Sine {
        offset: f64,
        amplitude: f64,
        freq_hz: f64,
        phase: f64,
    },
    BandLimited(BandLimited),
    /// Band-limited noise described by its parameters; [`Signal::realize`]
    /// turns it into a concrete [`Waveform::BandLimited`] from a run seed.
    Random(RandomSpec),
}

/// Parameters of a seeded band-limited source. `stream` separates sources
/// that share a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSpec {
    pub rms: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub count: usize,
    pub stream: u64,
}

impl RandomSpec {
    pub fn realize(&self, seed: u64) -> BandLimited {
        let mixed = seed ^ self.stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        BandLimited::new(self.rms, self.f_min, self.f_max, self.count, mixed)
    }
}

impl Waveform {
    pub fn derivative(&self, t: f64, order: u32) -> f64 {
        match self {
            Waveform::Zero => 0.0,
            Waveform::Constant(c) => {
                if order == 0 {
                    *c
                } else {
                    0.0
                }
            }
            Waveform::Step { amplitude, at } => {
                if order == 0 && t >= *at {
                    *amplitude
                } else {
                    0.0
                }
            }
            Waveform::Sine { offset, amplitude, freq_hz, phase } => {
                let s = sine_derivative(*amplitude, 2.0 * PI * freq_hz, *phase, t, order);
                if order == 0 {
                    offset + s
                } else {
                    s
                }
            }
            Waveform::BandLimited(b) => b.derivative(t, order),
            Waveform::Random(spec) => spec.realize(0).derivative(t, order),
        }
    }

    /// Time instants where the waveform is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Waveform::Step { at, .. } => vec![*at],
            _ => Vec::new(),
        }
    }
}

/// Active interval `[start, end]` with raised-cosine ramps of length `ramp`
/// at both ends. A zero ramp gives a rectangular gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub ramp: f64,
}

impl Window {
    pub fn derivative(&self, t: f64, order: u32) -> f64 {
        if t < self.start || t > self.end {
            return 0.0;
        }
        let r = self.ramp.min(0.5 * (self.end - self.start));
        if r <= 0.0 {
            return if order == 0 { 1.0 } else { 0.0 };
        }
        let k = PI / r;
        if t < self.start + r {
            let arg = k * (t - self.start);
            if order == 0 {
                0.5 * (1.0 - arg.cos())
            } else {
                -0.5 * k.powi(order as i32) * (arg + order as f64 * PI / 2.0).cos()
            }
        } else if t > self.end - r {
            let arg = k * (t - (self.end - r));
            if order == 0 {
                0.5 * (1.0 + arg.cos())
            } else {
                0.5 * k.powi(order as i32) * (arg + order as f64 * PI / 2.0).cos()
            }
        } else if order == 0 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub waveform: Waveform,
    pub window: Option<Window>,
}

impl Source {
    pub fn new(waveform: Waveform) -> Self {
        Self { waveform, window: None }
    }

    pub fn windowed(waveform: Waveform, window: Window) -> Self {
        Self { waveform, window: Some(window) }
    }

    pub fn derivative(&self, t: f64, order: u32) -> f64 {
        match &self.window {
            None => self.waveform.derivative(t, order),
            Some(w) => {
                (0..=order).map(|k| binomial(order, k) as f64 * w.derivative(t, k) * self.waveform.derivative(t, order - k)).sum()
            }
        }
    }
}

fn binomial(n: u32, k: u32) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * u64::from(n - i) / u64::from(i + 1))
}

/// Sum of sources. The empty signal is identically zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub sources: Vec<Source>,
}

impl Signal {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_waveform(waveform: Waveform) -> Self {
        Self { sources: vec![Source::new(waveform)] }
    }

    pub fn with(mut self, source: Source) -> Self {
        self.sources.push(source);
        self
    }

    pub fn value(&self, t: f64) -> f64 {
        self.derivative(t, 0)
    }

    pub fn derivative(&self, t: f64, order: u32) -> f64 {
        self.sources.iter().map(|s| s.derivative(t, order)).sum()
    }

    /// `[f, f', ..., f^(N-1)]` at `t`.
    pub fn derivatives<const N: usize>(&self, t: f64) -> [f64; N] {
        std::array::from_fn(|k| self.derivative(t, k as u32))
    }

    pub fn is_zero(&self) -> bool {
        self.sources.iter().all(|s| matches!(s.waveform, Waveform::Zero))
    }

    /// Replaces every [`Waveform::Random`] by its realization under `seed`.
    pub fn realize(&self, seed: u64) -> Signal {
        let sources = self
            .sources
            .iter()
            .map(|s| match &s.waveform {
                Waveform::Random(spec) => Source { waveform: Waveform::BandLimited(spec.realize(seed)), window: s.window },
                _ => s.clone(),
            })
            .collect();
        Signal { sources }
    }

    /// Times at which some source jumps (steps, rectangular window edges).
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in &self.sources {
            out.extend(s.waveform.breakpoints());
            if let Some(w) = &s.window {
                if w.ramp <= 0.0 {
                    out.push(w.start);
                    out.push(w.end);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t + h) - f(t - h)) / (2.0 * h)
    }

    #[test]
    fn sine_derivatives_match_finite_differences() {
        let s = Signal::from_waveform(Waveform::Sine { offset: 2.0, amplitude: 1.0, freq_hz: 1.0, phase: 0.3 });
        for &t in &[0.0, 0.13, 0.77, 3.2] {
            for order in 0..4 {
                let fd = central(|x| s.derivative(x, order), t, 1e-6);
                let an = s.derivative(t, order + 1);
                assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "order {order} t {t}");
            }
        }
    }

    #[test]
    fn windowed_band_limited_derivatives_are_consistent() {
        let b = BandLimited::new(0.01, 0.5, 5.0, 6, 42);
        let src = Source::windowed(Waveform::BandLimited(b), Window { start: 1.0, end: 3.0, ramp: 0.25 });
        for &t in &[0.9, 1.1, 1.2, 2.0, 2.8, 2.95, 3.1] {
            for order in 0..3 {
                let fd = central(|x| src.derivative(x, order), t, 1e-6);
                let an = src.derivative(t, order + 1);
                let scale = src.derivative(2.0, order + 1).abs().max(1e-3);
                assert!((fd - an).abs() <= 1e-4 * scale, "order {order} t {t}: {fd} vs {an}");
            }
        }
        assert_eq!(src.derivative(0.5, 0), 0.0);
        assert_eq!(src.derivative(3.5, 2), 0.0);
    }

    #[test]
    fn band_limited_is_reproducible() {
        let a = BandLimited::new(1.0, 0.0, 10.0, 8, 7);
        let b = BandLimited::new(1.0, 0.0, 10.0, 8, 7);
        let c = BandLimited::new(1.0, 0.0, 10.0, 8, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn random_sources_realize_per_seed() {
        let spec = RandomSpec { rms: 0.01, f_min: 0.0, f_max: 5.0, count: 4, stream: 1 };
        let sig = Signal::from_waveform(Waveform::Random(spec));
        assert_eq!(sig.realize(3), sig.realize(3));
        assert_ne!(sig.realize(3), sig.realize(4));
        let other = Signal::from_waveform(Waveform::Random(RandomSpec { stream: 2, ..spec }));
        assert_ne!(sig.realize(3), other.realize(3));
    }

    #[test]
    fn band_limited_rms_matches_request() {
        let b = BandLimited::new(0.5, 1.0, 20.0, 10, 3);
        let n = 200_000;
        let dt = 1e-3;
        let ms = (0..n).map(|i| b.derivative(i as f64 * dt, 0).powi(2)).sum::<f64>() / n as f64;
        assert!((ms.sqrt() - 0.5).abs() < 0.05, "rms {}", ms.sqrt());
    }

    #[test]
    fn step_and_constant() {
        let s = Signal::from_waveform(Waveform::Step { amplitude: 0.05, at: 0.1 });
        assert_eq!(s.value(0.0999), 0.0);
        assert_eq!(s.value(0.1), 0.05);
        assert_eq!(s.derivative(0.2, 1), 0.0);
        assert_eq!(s.breakpoints(), vec![0.1]);
        let c = Signal::from_waveform(Waveform::Constant(3.0));
        assert_eq!(c.derivatives::<3>(1.0), [3.0, 0.0, 0.0]);
    }
}
