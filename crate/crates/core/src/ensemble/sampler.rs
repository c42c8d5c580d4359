//! Samplers for speeds and radii of the initial data.

use std::f64::consts::PI;

use rand::Rng;

use crate::quadrature;

/// Speed sampler for the radial density `s^2 exp(-lambda s^q)` on `[0, cutoff]`.
///
/// The log-density is concave, so tangent lines at a fixed set of abscissae
/// form a piecewise-exponential envelope that can be inverted in closed form.
#[derive(Debug, Clone)]
pub struct SpeedSampler {
    lambda: f64,
    q: f64,
    cutoff: f64,
    pieces: Vec<Piece>,
    cumulative: Vec<f64>,
}

/// Envelope `exp(la + slope (s - a))` on `[a, b]`.
#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    la: f64,
    slope: f64,
}

impl Piece {
    fn mass(&self) -> f64 {
        let len = self.b - self.a;
        if len.is_infinite() {
            return self.la.exp() / -self.slope;
        }
        let ml = self.slope * len;
        if ml.abs() < 1e-12 {
            self.la.exp() * len
        } else {
            self.la.exp() * ml.exp_m1() / self.slope
        }
    }

    fn invert(&self, u: f64) -> f64 {
        let len = self.b - self.a;
        if len.is_infinite() {
            return self.a + (1.0 - u).ln() / self.slope;
        }
        let ml = self.slope * len;
        if ml.abs() < 1e-12 {
            self.a + u * len
        } else {
            let s = self.a + (u * ml.exp_m1()).ln_1p() / self.slope;
            s.clamp(self.a, self.b)
        }
    }

    fn log_env(&self, s: f64) -> f64 {
        self.la + self.slope * (s - self.a)
    }
}

impl SpeedSampler {
    pub fn new(lambda: f64, q: f64, cutoff: f64) -> Self {
        let log_p = |s: f64| 2.0 * s.ln() - lambda * s.powf(q);
        let dlog_p = |s: f64| 2.0 / s - lambda * q * s.powf(q - 1.0);

        let mode = (2.0 / (lambda * q)).powf(1.0 / q);
        let mut points: Vec<f64> = [
            0.15, 0.3, 0.5, 0.7, 0.85, 1.0, 1.2, 1.45, 1.8, 2.3, 3.0, 4.0,
        ]
        .iter()
        .map(|f| f * mode)
        .filter(|&s| s < cutoff)
        .collect();
        if cutoff.is_finite() {
            points.push(cutoff);
            if points.len() < 4 {
                points = vec![0.25 * cutoff, 0.5 * cutoff, 0.75 * cutoff, cutoff];
            }
        }
        points.sort_by(f64::total_cmp);
        points.dedup();

        let lines: Vec<(f64, f64)> = points.iter().map(|&t| (log_p(t), dlog_p(t))).collect();
        // breakpoints between consecutive tangents
        let mut edges = vec![0.0];
        for k in 0..points.len() - 1 {
            let (h0, m0) = lines[k];
            let (h1, m1) = lines[k + 1];
            let (t0, t1) = (points[k], points[k + 1]);
            let z = (h1 - h0 - t1 * m1 + t0 * m0) / (m0 - m1);
            edges.push(z.clamp(t0, t1));
        }
        edges.push(cutoff);

        let pieces: Vec<Piece> = (0..points.len())
            .map(|k| {
                let (h, m) = lines[k];
                let a = edges[k];
                Piece {
                    a,
                    b: edges[k + 1],
                    la: h + m * (a - points[k]),
                    slope: m,
                }
            })
            .collect();
        let mut cumulative = Vec::with_capacity(pieces.len());
        let mut acc = 0.0;
        for p in &pieces {
            acc += p.mass();
            cumulative.push(acc);
        }
        Self {
            lambda,
            q,
            cutoff,
            pieces,
            cumulative,
        }
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    fn log_density(&self, s: f64) -> f64 {
        2.0 * s.ln() - self.lambda * s.powf(self.q)
    }

    /// Draws one speed; returns the speed and the number of proposals used.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> (f64, u64) {
        let total = *self.cumulative.last().expect("non-empty envelope");
        let mut proposals = 0;
        loop {
            proposals += 1;
            let u = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c < u).min(self.pieces.len() - 1);
            let piece = &self.pieces[k];
            let lo = if k == 0 { 0.0 } else { self.cumulative[k - 1] };
            let mass = self.cumulative[k] - lo;
            let w = if mass > 0.0 { ((u - lo) / mass).clamp(0.0, 1.0) } else { 0.5 };
            let s = piece.invert(w);
            if s <= 0.0 || s > self.cutoff {
                continue;
            }
            let accept = (self.log_density(s) - piece.log_env(s)).exp();
            if rng.random::<f64>() < accept {
                return (s, proposals);
            }
        }
    }

    /// `4 pi int_0^cutoff s^2 exp(-lambda s^q) ds`, the velocity-space volume
    /// of the unnormalized density.
    pub fn velocity_integral(&self) -> f64 {
        let upper = if self.cutoff.is_finite() {
            self.cutoff
        } else {
            // exp(-lambda s^q) < 1e-300 beyond this point
            (700.0 / self.lambda).powf(1.0 / self.q)
        };
        let f = |s: f64| s * s * (-self.lambda * s.powf(self.q)).exp();
        4.0 * PI * quadrature::integrate(f, 0.0, upper, 64)
    }
}

/// Radius sampler for `r^2 g(r)` with `g(r) = min(1, r^-alpha)` on `[0, r_max]`.
#[derive(Debug, Clone, Copy)]
pub struct PowerLawRadius {
    alpha: f64,
    r_max: f64,
    core_mass: f64,
    tail_mass: f64,
}

impl PowerLawRadius {
    pub fn new(alpha: f64, r_max: f64) -> Self {
        let core_mass = r_max.min(1.0).powi(3) / 3.0;
        let tail_mass = if r_max <= 1.0 {
            0.0
        } else if (alpha - 3.0).abs() < 1e-12 {
            r_max.ln()
        } else {
            (r_max.powf(3.0 - alpha) - 1.0) / (3.0 - alpha)
        };
        Self {
            alpha,
            r_max,
            core_mass,
            tail_mass,
        }
    }

    /// `int_{|x| <= r_max} g(|x|) dx`.
    pub fn volume_integral(&self) -> f64 {
        4.0 * PI * (self.core_mass + self.tail_mass)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u = rng.random::<f64>() * (self.core_mass + self.tail_mass);
        if u < self.core_mass || self.tail_mass == 0.0 {
            return (3.0 * u).cbrt().min(self.r_max);
        }
        let w = u - self.core_mass;
        let b = 3.0 - self.alpha;
        let r = if b.abs() < 1e-12 {
            w.exp()
        } else {
            (1.0 + b * w).powf(1.0 / b)
        };
        r.clamp(1.0, self.r_max)
    }
}

/// Radius sampler for concentric occupied shells of unit density at radii
/// `2^k`, with thickness `width * 2^(-k alpha)` so that the mass in any unit
/// ball centered at distance `d` decays like `d^-alpha`.
#[derive(Debug, Clone)]
pub struct ShellRadius {
    shells: Vec<(f64, f64)>,
    cumulative: Vec<f64>,
}

impl ShellRadius {
    pub const BASE_WIDTH: f64 = 0.5;

    pub fn new(alpha: f64, r_max: f64) -> Self {
        let mut shells = Vec::new();
        let mut k = 0;
        loop {
            let r = 2f64.powi(k);
            let t = Self::BASE_WIDTH * r.powf(-alpha);
            if r + t > r_max {
                break;
            }
            shells.push((r, t));
            k += 1;
        }
        let mut cumulative = Vec::with_capacity(shells.len());
        let mut acc = 0.0;
        for &(r, t) in &shells {
            acc += shell_volume(r, t);
            cumulative.push(acc);
        }
        Self { shells, cumulative }
    }

    pub fn shells(&self) -> &[(f64, f64)] {
        &self.shells
    }

    pub fn volume_integral(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let total = self.volume_integral();
        let u = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c < u).min(self.shells.len() - 1);
        let (r, t) = self.shells[k];
        // uniform in volume: r'^3 = r^3 + w ((r + t)^3 - r^3)
        let rel = t / r;
        let grow = rel * (3.0 + rel * (3.0 + rel));
        let w = rng.random::<f64>();
        r * ((w * grow).ln_1p() / 3.0).exp()
    }
}

fn shell_volume(r: f64, t: f64) -> f64 {
    4.0 / 3.0 * PI * r.powi(3) * (t / r) * (3.0 + (t / r) * (3.0 + t / r))
}

/// Uniform direction on the unit sphere.
pub fn unit_direction<R: Rng>(rng: &mut R) -> crate::Vec3 {
    let z = 2.0 * rng.random::<f64>() - 1.0;
    let phi = 2.0 * PI * rng.random::<f64>();
    let s = (1.0 - z * z).max(0.0).sqrt();
    crate::Vec3::new(s * phi.cos(), s * phi.sin(), z)
}
