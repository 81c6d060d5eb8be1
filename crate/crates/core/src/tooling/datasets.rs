//! Seeded synthetic demonstration sets for the bundled scenarios.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::frames::LocalFrame;
use crate::gmm::{uniform_grid, Demo, DemoSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    LetterG,
    Transportation,
    Force,
    ThirdHand,
}

/// Demonstrations plus their per-demo task frames, when the scenario has any.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub demos: DemoSet,
    pub frames: Option<Vec<Vec<LocalFrame>>>,
}

pub fn generate(preset: Preset, seed: u64) -> Result<Dataset> {
    match preset {
        Preset::LetterG => Ok(Dataset {
            demos: letter_g(seed)?,
            frames: None,
        }),
        Preset::Transportation => {
            let (demos, frames) = transportation(seed)?;
            Ok(Dataset {
                demos,
                frames: Some(frames),
            })
        }
        Preset::Force => Ok(Dataset {
            demos: force_reaching(seed)?,
            frames: None,
        }),
        Preset::ThirdHand => Ok(Dataset {
            demos: third_hand(seed)?,
            frames: None,
        }),
    }
}

/// Smooth perturbation: a few low-frequency sinusoids plus white noise.
struct SmoothNoise {
    terms: Vec<(f64, f64, f64)>,
    white: f64,
}

impl SmoothNoise {
    fn new(rng: &mut ChaCha8Rng, amplitude: f64, white: f64) -> Self {
        let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
        let terms = (1..=3)
            .map(|k| {
                let a = amplitude * rng.random_range(-1.0..1.0) / k as f64;
                (a, k as f64 * PI, phase.sample(rng))
            })
            .collect();
        SmoothNoise { terms, white }
    }

    fn at(&self, u: f64, rng: &mut ChaCha8Rng) -> f64 {
        let smooth: f64 = self.terms.iter().map(|(a, w, p)| a * (w * u + p).sin()).sum();
        let white = if self.white > 0.0 {
            Normal::new(0.0, self.white).expect("positive std").sample(rng)
        } else {
            0.0
        };
        smooth + white
    }
}

/// Monotone time warp of the unit interval.
fn warp(u: f64, a: f64) -> f64 {
    u + a * (PI * u).sin() / PI
}

fn min_jerk(u: f64) -> f64 {
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

/// Letter G stroke at phase `u ∈ [0,1]`: an arc from the upper right around
/// the left side, then a short bar back toward the centre.
fn letter_g_stroke(u: f64) -> (f64, f64) {
    let (theta0, theta1) = (0.25 * PI, 1.95 * PI);
    let split = 0.82;
    if u <= split {
        let th = theta0 + (theta1 - theta0) * min_jerk(u / split);
        (th.cos(), th.sin())
    } else {
        let (ex, ey) = (theta1.cos(), theta1.sin());
        let v = min_jerk((u - split) / (1.0 - split));
        (ex + (0.3 - ex) * v, ey)
    }
}

/// Five handwritten-style letter G demonstrations, `N = 200` over `t ∈ [0, 2]`.
pub fn letter_g(seed: u64) -> Result<DemoSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = uniform_grid(0.0, 2.0, 200);
    let demos = (0..5)
        .map(|_| {
            let scale = 1.0 + rng.random_range(-0.06..0.06);
            let angle: f64 = rng.random_range(-0.05..0.05);
            let shift = (rng.random_range(-0.04..0.04), rng.random_range(-0.04..0.04));
            let a = rng.random_range(-0.15..0.15);
            let nx = SmoothNoise::new(&mut rng, 0.02, 0.001);
            let ny = SmoothNoise::new(&mut rng, 0.02, 0.001);
            let outputs = times
                .iter()
                .map(|&t| {
                    let u = warp(t / 2.0, a);
                    let (x, y) = letter_g_stroke(u);
                    let (c, s) = (angle.cos(), angle.sin());
                    let xr = scale * (c * x - s * y) + shift.0 + nx.at(u, &mut rng);
                    let yr = scale * (s * x + c * y) + shift.1 + ny.at(u, &mut rng);
                    DVector::from_vec(vec![xr, yr])
                })
                .collect();
            Demo::from_times(&times, outputs)
        })
        .collect::<Result<_>>()?;
    DemoSet::new(demos)
}

/// Point-to-point transport with a lift: five demonstrations from varying
/// starts to varying ends, `N = 100` over `t ∈ [0, 10]`. Frames are
/// translations to each demonstration's start and end.
pub fn transportation(seed: u64) -> Result<(DemoSet, Vec<Vec<LocalFrame>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = uniform_grid(0.0, 10.0, 100);
    let mut demos = Vec::new();
    let mut frames = Vec::new();
    for _ in 0..5 {
        let start = DVector::from_fn(3, |i, _| match i {
            0 => rng.random_range(-0.5..0.5),
            1 => rng.random_range(-0.4..0.4),
            _ => rng.random_range(0.0..0.3),
        });
        let end = DVector::from_fn(3, |i, _| match i {
            0 => rng.random_range(-0.5..0.5),
            1 => rng.random_range(0.4..1.0),
            _ => rng.random_range(0.0..0.3),
        });
        let lift = rng.random_range(0.15..0.25);
        let a = rng.random_range(-0.1..0.1);
        let noise: Vec<SmoothNoise> = (0..3).map(|_| SmoothNoise::new(&mut rng, 0.003, 0.0005)).collect();
        let outputs = times
            .iter()
            .map(|&t| {
                let u = warp(t / 10.0, a);
                let v = min_jerk(u);
                let bump = (PI * u).sin();
                let envelope = (PI * u).sin().powi(2);
                let mut p = &start + (&end - &start) * v;
                p[2] += lift * bump;
                for (k, n) in noise.iter().enumerate() {
                    p[k] += envelope * n.at(u, &mut rng);
                }
                p
            })
            .collect();
        demos.push(Demo::from_times(&times, outputs)?);
        frames.push(vec![LocalFrame::translation(start), LocalFrame::translation(end)]);
    }
    Ok((DemoSet::new(demos)?, frames))
}

/// Reaching motions for the force scenario: six demonstrations, `N = 100`
/// over `t ∈ [0, 25]`.
pub fn force_reaching(seed: u64) -> Result<DemoSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = uniform_grid(0.0, 25.0, 100);
    let start = [0.45, -0.2, 0.15];
    let end = [0.35, 0.3, 0.35];
    // Offsets fan the demos across ±5 cm, in a random order per axis.
    let order: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
    let demos = (0..6)
        .map(|h| {
            let offs: Vec<f64> = order.iter().map(|k| 0.05 * (0.4 * ((h + k) % 6) as f64 - 1.0)).collect();
            let a = rng.random_range(-0.1..0.1);
            let noise: Vec<SmoothNoise> = (0..3).map(|_| SmoothNoise::new(&mut rng, 0.03, 0.002)).collect();
            let outputs = times
                .iter()
                .map(|&t| {
                    let u = warp(t / 25.0, a);
                    let v = min_jerk(u);
                    DVector::from_fn(3, |i, _| {
                        let arc = if i == 0 { 0.1 * (PI * u).sin() } else { 0.0 };
                        start[i] + (end[i] - start[i]) * v + arc + offs[i] + noise[i].at(u, &mut rng)
                    })
                })
                .collect();
            Demo::from_times(&times, outputs)
        })
        .collect::<Result<_>>()?;
    DemoSet::new(demos)
}

/// Robot position as a smooth function of both hand positions.
fn third_hand_response(left: &[f64], right: &[f64]) -> [f64; 3] {
    [
        0.5 * (left[0] + right[0]) + 0.3 * (0.5 * left[1]).sin(),
        0.5 * (left[1] + right[1]) - 1.0,
        0.4 * left[2] + 0.4 * right[2] + 0.2 * (0.3 * (right[0] - left[0])).cos() + 1.0,
    ]
}

/// Human-robot collaboration: 6-D input (left and right hand positions),
/// 3-D robot output, five demonstrations of `N = 100`, in decimetres.
/// Hands move through handover, glass-holding and soldering poses.
pub fn third_hand(seed: u64) -> Result<DemoSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: [[f64; 6]; 4] = [
        [-2.0, 3.0, 0.0, 2.0, 3.0, 0.0],
        [-1.0, 4.5, 2.0, 1.5, 3.5, 1.0],
        [-1.5, 5.0, 1.0, 0.5, 5.5, 2.5],
        [-2.5, 4.0, 3.0, 1.0, 5.0, 3.5],
    ];
    let n = 100;
    let demos = (0..5)
        .map(|_| {
            let jitter: Vec<[f64; 6]> = phases
                .iter()
                .map(|_| std::array::from_fn(|_| rng.random_range(-0.2..0.2)))
                .collect();
            let noise: Vec<SmoothNoise> = (0..6).map(|_| SmoothNoise::new(&mut rng, 0.05, 0.005)).collect();
            let robot: Vec<SmoothNoise> = (0..3).map(|_| SmoothNoise::new(&mut rng, 0.3, 0.02)).collect();
            let mut inputs = Vec::with_capacity(n);
            let mut outputs = Vec::with_capacity(n);
            for i in 0..n {
                let u = i as f64 / (n - 1) as f64 * 3.0;
                let seg = (u.floor() as usize).min(2);
                let v = min_jerk(u - seg as f64);
                let hands: Vec<f64> = (0..6)
                    .map(|k| {
                        let a = phases[seg][k] + jitter[seg][k];
                        let b = phases[seg + 1][k] + jitter[seg + 1][k];
                        a + (b - a) * v + noise[k].at(u / 3.0, &mut rng)
                    })
                    .collect();
                let r = third_hand_response(&hands[..3], &hands[3..]);
                let out = DVector::from_fn(3, |k, _| r[k] + robot[k].at(u / 3.0, &mut rng));
                inputs.push(DVector::from_vec(hands));
                outputs.push(out);
            }
            Demo::new(inputs, outputs)
        })
        .collect::<Result<_>>()?;
    DemoSet::new(demos)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes() {
        let g = letter_g(1).unwrap();
        assert_eq!((g.num_demos(), g.demo_len(), g.input_dim(), g.output_dim()), (5, 200, 1, 2));
        let (t, f) = transportation(1).unwrap();
        assert_eq!((t.num_demos(), t.demo_len(), t.output_dim(), f.len(), f[0].len()), (5, 100, 3, 5, 2));
        let r = force_reaching(1).unwrap();
        assert_eq!((r.num_demos(), r.demo_len(), r.output_dim()), (6, 100, 3));
        assert_eq!(r.time_span().unwrap(), (0.0, 25.0));
        let h = third_hand(1).unwrap();
        assert_eq!((h.num_demos(), h.input_dim(), h.output_dim()), (5, 6, 3));
    }

    #[test]
    fn seeded() {
        assert_eq!(letter_g(7).unwrap(), letter_g(7).unwrap());
        assert_ne!(letter_g(7).unwrap(), letter_g(8).unwrap());
    }

    #[test]
    fn transport_frames_sit_at_demo_endpoints() {
        let (t, f) = transportation(3).unwrap();
        for (d, fr) in t.demos().iter().zip(&f) {
            let first = &d.outputs[0];
            let last = d.outputs.last().unwrap();
            assert!((first - fr[0].output_offset()).norm() < 1e-12);
            assert!((last - fr[1].output_offset()).norm() < 1e-12);
        }
    }
}
