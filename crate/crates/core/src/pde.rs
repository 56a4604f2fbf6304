//! Radially symmetric solver for `v_t = ½Δv − psi(v) + phi` and the
//! blow-up constructions that turn it into range probabilities.
//!
//! The Laplacian in `d` dimensions reduces to `v_rr + (d−1)/r v_r`; at the
//! origin the symmetric limit `d v_rr` is used (ghost node `v_{-1} = v_1`).
//! Diffusion is Crank–Nicolson. The reaction is written as `psi(v) = k(v) v`
//! and handled linearly implicitly: a predictor freezes `k` at the old value,
//! the corrector re-freezes it at the predicted midpoint and averages the
//! reaction over both time levels (falling back to fully implicit at nodes
//! where `dt k > 1`, which keeps the update positive next to a blow-up wall).

use std::path::Path;

use rayon::prelude::*;

use crate::error::{require, Error, Result};
use crate::mechanism::BranchingMechanism;

const BLOW_UP: f64 = 1e12;

/// A nonnegative radial profile, used for initial data and forcing.
#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Constant(f64),
    /// `amplitude * exp(-r^2 / (2 width^2))`
    Gaussian {
        amplitude: f64,
        width: f64,
    },
    /// `scale * (r - radius)^power` for `r > radius`, zero inside the ball.
    Ramp {
        radius: f64,
        scale: f64,
        power: f64,
    },
    /// Piecewise linear samples on `r_k = k * spacing`; constant beyond the last sample.
    Sampled {
        spacing: f64,
        values: Vec<f64>,
    },
}

impl Profile {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::Constant(c) => c,
            Profile::Gaussian { amplitude, width } => {
                amplitude * (-r * r / (2.0 * width * width)).exp()
            }
            Profile::Ramp {
                radius,
                scale,
                power,
            } => {
                if r > radius {
                    scale * (r - radius).powf(power)
                } else {
                    0.0
                }
            }
            Profile::Sampled {
                spacing,
                ref values,
            } => interpolate(values, spacing, r),
        }
    }

    fn sup_on(&self, r_max: f64, h: f64) -> f64 {
        let n = (r_max / h).round() as usize;
        (0..=n).map(|i| self.eval(i as f64 * h)).fold(0.0, f64::max)
    }
}

fn interpolate(values: &[f64], spacing: f64, r: f64) -> f64 {
    let x = (r / spacing).max(0.0);
    let i = x.floor() as usize;
    if i + 1 >= values.len() {
        return *values.last().unwrap_or(&0.0);
    }
    let w = x - i as f64;
    values[i] * (1.0 - w) + values[i + 1] * w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Fixed value at `r_max`.
    Dirichlet(f64),
    /// Zero flux at `r_max` (mirror ghost node).
    Neumann,
}

#[derive(Debug, Clone)]
pub struct PdeProblem {
    pub mech: BranchingMechanism,
    pub d: usize,
    pub r_max: f64,
    pub h: f64,
    pub dt: f64,
    pub t_end: f64,
    pub g: Profile,
    pub phi: Profile,
    pub boundary: Boundary,
}

fn divides(whole: f64, part: f64) -> bool {
    let q = whole / part;
    (q - q.round()).abs() <= 1e-9 * q.max(1.0)
}

impl PdeProblem {
    pub fn validate(&self) -> Result<()> {
        self.mech.validate()?;
        require(self.d >= 1, "d", "d >= 1", self.d as f64)?;
        require(self.h > 0.0, "h", "h > 0", self.h)?;
        require(self.dt > 0.0, "dt", "dt > 0", self.dt)?;
        require(self.r_max > 0.0, "r_max", "r_max > 0", self.r_max)?;
        require(self.t_end >= 0.0, "t_end", "t_end >= 0", self.t_end)?;
        require(
            divides(self.r_max, self.h) && self.r_max / self.h >= 2.0 - 1e-9,
            "r_max / h",
            "an integer >= 2",
            self.r_max / self.h,
        )?;
        require(
            divides(self.t_end, self.dt),
            "t_end / dt",
            "an integer",
            self.t_end / self.dt,
        )?;
        if let Boundary::Dirichlet(v) = self.boundary {
            require(v >= 0.0, "boundary value", ">= 0", v)?;
        }
        let n = self.nodes();
        for i in 0..=n {
            let r = i as f64 * self.h;
            let (g, phi) = (self.g.eval(r), self.phi.eval(r));
            require(g >= 0.0, "initial profile g", "g >= 0", g)?;
            require(phi >= 0.0, "forcing phi", "phi >= 0", phi)?;
        }
        Ok(())
    }

    /// Index of the last grid node (`r_max / h`).
    pub fn nodes(&self) -> usize {
        (self.r_max / self.h).round() as usize
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    /// `sup g + sup phi t − (min psi) t`, with the Dirichlet value counted as initial data.
    pub fn apriori_bound(&self, t: f64) -> f64 {
        let mut sup_g = self.g.sup_on(self.r_max, self.h);
        if let Boundary::Dirichlet(v) = self.boundary {
            sup_g = sup_g.max(v);
        }
        let sup_phi = self.phi.sup_on(self.r_max, self.h);
        let min_psi = self.mech.min_psi();
        if min_psi == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        sup_g + sup_phi * t - min_psi * t
    }
}

/// Radial samples `v(t, r_i)`, `r_i = i h`, `i = 0..=m`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    pub d: usize,
    pub h: f64,
    pub t: f64,
    pub values: Vec<f64>,
}

impl RadialField {
    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| i as f64 * self.h)
    }

    pub fn r_max(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h
    }

    pub fn origin(&self) -> f64 {
        self.values[0]
    }

    /// Linear interpolation in `r`; the last value beyond `r_max`.
    pub fn value_at(&self, r: f64) -> f64 {
        interpolate(&self.values, self.h, r)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Solve up to `t_end` and return the final field.
pub fn solve_radial(problem: &PdeProblem) -> Result<RadialField> {
    let mut fields = solve_radial_snapshots(problem, usize::MAX)?;
    Ok(fields.pop().expect("at least the initial snapshot"))
}

/// Solve and keep a snapshot every `every` steps, plus the initial and final states.
pub fn solve_radial_snapshots(problem: &PdeProblem, every: usize) -> Result<Vec<RadialField>> {
    problem.validate()?;
    let mut solver = RadialSolver::new(problem, None);
    let steps = problem.steps();
    let mut snapshots = vec![solver.field(0.0)];
    for step in 1..=steps {
        let time = step as f64 * problem.dt;
        solver.step(time)?;
        if step == steps || (every != 0 && step % every == 0) {
            snapshots.push(solver.field(time));
        }
    }
    check_apriori(problem, snapshots.last().unwrap())?;
    Ok(snapshots)
}

/// Solve for `v` together with the gap `z = w − v`, where `w` solves the same
/// problem from `g + companion`. The gap obeys
/// `z_t = ½Δz − q(v, z) z`, `q = (psi(v + z) − psi(v)) / z`, and vanishes on a
/// Dirichlet wall. Returns the final `(v, z)`.
pub fn solve_radial_pair(
    problem: &PdeProblem,
    companion: &Profile,
) -> Result<(RadialField, RadialField)> {
    problem.validate()?;
    let mut solver = RadialSolver::new(problem, Some(companion));
    let steps = problem.steps();
    for step in 1..=steps {
        solver.step(step as f64 * problem.dt)?;
    }
    let v = solver.field(problem.t_end);
    check_apriori(problem, &v)?;
    let z = solver
        .gap_field(problem.t_end)
        .expect("companion requested");
    Ok((v, z))
}

fn check_apriori(problem: &PdeProblem, field: &RadialField) -> Result<()> {
    let bound = problem.apriori_bound(field.t);
    for (i, &v) in field.values.iter().enumerate() {
        if v > bound * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::AprioriBound {
                radius: i as f64 * problem.h,
                value: v,
                bound,
            });
        }
    }
    Ok(())
}

struct RadialSolver<'a> {
    problem: &'a PdeProblem,
    stepper: Stepper,
    phi: Vec<f64>,
    wall: f64,
    v: Vec<f64>,
    v_old: Vec<f64>,
    gap: Option<Vec<f64>>,
}

impl<'a> RadialSolver<'a> {
    fn new(problem: &'a PdeProblem, companion: Option<&Profile>) -> Self {
        let stepper = Stepper::new(problem);
        let n = stepper.unknowns;
        let wall = match problem.boundary {
            Boundary::Dirichlet(v) => v,
            Boundary::Neumann => 0.0,
        };
        let sample =
            |p: &Profile| -> Vec<f64> { (0..n).map(|i| p.eval(i as f64 * problem.h)).collect() };
        Self {
            problem,
            phi: sample(&problem.phi),
            v: sample(&problem.g),
            v_old: vec![0.0; n],
            gap: companion.map(sample),
            stepper,
            wall,
        }
    }

    fn with_wall(&self, values: &[f64], wall: f64) -> Vec<f64> {
        let mut values = values.to_vec();
        if let Boundary::Dirichlet(_) = self.problem.boundary {
            values.push(wall);
        }
        values
    }

    fn field(&self, t: f64) -> RadialField {
        RadialField {
            d: self.problem.d,
            h: self.problem.h,
            t,
            values: self.with_wall(&self.v, self.wall),
        }
    }

    fn gap_field(&self, t: f64) -> Option<RadialField> {
        self.gap.as_ref().map(|z| RadialField {
            d: self.problem.d,
            h: self.problem.h,
            t,
            values: self.with_wall(z, 0.0),
        })
    }

    fn step(&mut self, time: f64) -> Result<()> {
        let mech = self.problem.mech;
        self.v_old.copy_from_slice(&self.v);
        self.stepper
            .advance(&mut self.v, self.wall, &self.phi, |_, v| {
                mech.k_unchecked(v)
            });
        if let Some(z) = self.gap.as_mut() {
            let (v_old, v_new) = (&self.v_old, &self.v);
            self.stepper.advance(z, 0.0, &[], |i, z| {
                mech.difference_quotient(0.5 * (v_old[i] + v_new[i]), z)
            });
        }
        for value in self.v.iter() {
            if !value.is_finite() || *value > BLOW_UP {
                return Err(Error::BlowUp { time });
            }
        }
        Ok(())
    }
}

/// Crank–Nicolson diffusion with a linearly implicit reaction `k(·) u`.
struct Stepper {
    unknowns: usize,
    dt: f64,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    base_rhs: Vec<f64>,
    predicted: Vec<f64>,
    scratch: Tridiagonal,
}

impl Stepper {
    fn new(problem: &PdeProblem) -> Self {
        let m = problem.nodes();
        let h2 = problem.h * problem.h;
        let d = problem.d as f64;
        let unknowns = match problem.boundary {
            Boundary::Dirichlet(_) => m,
            Boundary::Neumann => m + 1,
        };
        let mut lower = vec![0.0; unknowns];
        let mut diag = vec![0.0; unknowns];
        let mut upper = vec![0.0; unknowns];
        // L v_0 = d (v_1 - v_0) / h^2
        diag[0] = -d / h2;
        upper[0] = d / h2;
        for i in 1..unknowns {
            let drift = (d - 1.0) / (2.0 * i as f64);
            lower[i] = 0.5 * (1.0 - drift) / h2;
            diag[i] = -1.0 / h2;
            upper[i] = 0.5 * (1.0 + drift) / h2;
        }
        if problem.boundary == Boundary::Neumann {
            // ghost v_{m+1} = v_{m-1}: drift cancels, second difference doubles
            lower[m] = 1.0 / h2;
            upper[m] = 0.0;
        }
        let half = 0.5 * problem.dt;
        let scratch = Tridiagonal::new(
            lower.iter().map(|x| -half * x).collect(),
            upper.iter().map(|x| -half * x).collect(),
        );
        Self {
            unknowns,
            dt: problem.dt,
            lower,
            diag,
            upper,
            base_rhs: vec![0.0; unknowns],
            predicted: vec![0.0; unknowns],
            scratch,
        }
    }

    /// One step of `u_t = ½Δu − k(u) u + phi`; `wall` is the Dirichlet value
    /// beyond the last unknown (ignored under Neumann), empty `phi` means zero.
    fn advance(&mut self, u: &mut [f64], wall: f64, phi: &[f64], k: impl Fn(usize, f64) -> f64) {
        let n = self.unknowns;
        let dt = self.dt;
        let half = 0.5 * dt;

        // explicit diffusion half + forcing + both wall contributions
        for i in 0..n {
            let mut lu = self.diag[i] * u[i];
            if i > 0 {
                lu += self.lower[i] * u[i - 1];
            }
            if i + 1 < n {
                lu += self.upper[i] * u[i + 1];
            }
            let source = if phi.is_empty() { 0.0 } else { phi[i] };
            self.base_rhs[i] = u[i] + half * lu + dt * source;
        }
        // under Neumann upper[n-1] == 0, so this is a no-op
        self.base_rhs[n - 1] += dt * self.upper[n - 1] * wall;

        // predictor: k frozen at the old level, reaction fully implicit
        let ws = &mut self.scratch;
        for i in 0..n {
            ws.b[i] = 1.0 - half * self.diag[i] + dt * k(i, u[i]);
            ws.rhs[i] = self.base_rhs[i];
        }
        ws.solve(&mut self.predicted);

        // corrector: k at the predicted midpoint, reaction averaged where stable
        for i in 0..n {
            let kk = k(i, 0.5 * (u[i] + self.predicted[i].max(0.0)));
            let theta = if dt * kk <= 1.0 { 0.5 } else { 1.0 };
            ws.b[i] = 1.0 - half * self.diag[i] + theta * dt * kk;
            ws.rhs[i] = self.base_rhs[i] - (1.0 - theta) * dt * kk * u[i];
        }
        ws.solve(u);
        for value in u.iter_mut() {
            *value = value.max(0.0);
        }
    }
}

/// Thomas algorithm workspace; the off-diagonals are fixed for the whole solve.
struct Tridiagonal {
    sub: Vec<f64>,
    b: Vec<f64>,
    sup: Vec<f64>,
    rhs: Vec<f64>,
    cp: Vec<f64>,
}

impl Tridiagonal {
    fn new(sub: Vec<f64>, sup: Vec<f64>) -> Self {
        let n = sub.len();
        Self {
            sub,
            b: vec![0.0; n],
            sup,
            rhs: vec![0.0; n],
            cp: vec![0.0; n],
        }
    }

    fn solve(&mut self, out: &mut [f64]) {
        let n = self.b.len();
        let (a, b, c, d, cp) = (&self.sub, &self.b, &self.sup, &mut self.rhs, &mut self.cp);
        let mut inv = 1.0 / b[0];
        cp[0] = c[0] * inv;
        d[0] *= inv;
        for i in 1..n {
            inv = 1.0 / (b[i] - a[i] * cp[i - 1]);
            cp[i] = c[i] * inv;
            d[i] = (d[i] - a[i] * d[i - 1]) * inv;
        }
        out[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = d[i] - cp[i] * out[i + 1];
        }
    }
}

/// How the `λ → ∞` limit is realised.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlowUpStrategy {
    /// Solve on `[0, M]` with wall value `V = 10^j` at `r = M`. The sub-cell
    /// boundary layer is closed with the steady one-dimensional profile, so
    /// the last unknown node carries the profile value at distance `h`.
    Dirichlet,
    /// Solve on `[0, M + margin]` with forcing `λ (r − M)^power` outside the ball, `λ = 10^j`.
    Forcing { power: f64, margin: f64 },
}

#[derive(Debug, Clone)]
pub struct RangeSolverOptions {
    /// Grid intervals across the ball of radius `M`.
    pub nodes: usize,
    /// `dt = dt_over_h2 * h^2`, rounded down so that it divides `t`.
    pub dt_over_h2: f64,
    /// Relative change of `v(t, 0)` between successive surrogates.
    pub tol: f64,
    pub strategy: BlowUpStrategy,
    /// First surrogate exponent; `None` starts at the grid's own scale `1/h^2`.
    pub first_exponent: Option<i32>,
    pub last_exponent: i32,
}

impl Default for RangeSolverOptions {
    fn default() -> Self {
        Self {
            nodes: 600,
            dt_over_h2: 1.0,
            tol: 1e-4,
            strategy: BlowUpStrategy::Dirichlet,
            first_exponent: None,
            last_exponent: 16,
        }
    }
}

/// One CSV row per blow-up solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveRow {
    pub t: f64,
    pub radius: f64,
    pub surrogate: f64,
    pub v_origin: f64,
    /// Gap to the companion solution, for pair sweeps.
    pub gap_origin: Option<f64>,
    pub prob: f64,
    pub h: f64,
    pub dt: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub v_origin: f64,
    pub gap_origin: Option<f64>,
    pub rows: Vec<SolveRow>,
}

/// `Ψ(u) = ∫_0^u psi`.
fn psi_antiderivative(mech: &BranchingMechanism, u: f64) -> f64 {
    let mut value = -0.5 * mech.beta * u * u + mech.alpha * u * u * u / 3.0;
    if mech.eta > 0.0 {
        value += mech.eta * u.powf(2.0 + mech.theta) / (2.0 + mech.theta);
    }
    value
}

/// Distance from a blow-up wall at which the steady profile `½ v'' = psi(v)`
/// takes the value `u`: `X(u) = ∫_u^∞ dw / (2 sqrt(Ψ(w)))`. Infinite when
/// `Ψ` is not positive on `[u, ∞)`.
pub fn wall_distance(mech: &BranchingMechanism, u: f64) -> f64 {
    if !(u > 0.0) || psi_antiderivative(mech, u) <= 0.0 {
        return f64::INFINITY;
    }
    // w = u / s, s = tau^p with p = 2 / (growth exponent - 1) keeps the integrand bounded
    let growth = if mech.alpha > 0.0 { 1.0 } else { mech.theta };
    let p = 2.0 / growth;
    let integrand = |tau: f64| {
        let s = tau.powf(p);
        let w = u / s;
        let big = psi_antiderivative(mech, w);
        if big <= 0.0 || !big.is_finite() {
            return 0.0;
        }
        u * p * tau.powf(p - 1.0) / (s * s * 2.0 * big.sqrt())
    };
    gauss_legendre(integrand, 0.0, 1.0, 128)
}

/// Composite 5-point Gauss–Legendre rule on `panels` equal panels.
pub(crate) fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const X: [f64; 5] = [
        0.0,
        0.538_469_310_105_683_1,
        -0.538_469_310_105_683_1,
        0.906_179_845_938_664,
        -0.906_179_845_938_664,
    ];
    const W: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let width = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * width;
        let half = 0.5 * width;
        total += half
            * X.iter()
                .zip(W)
                .map(|(x, w)| w * f(mid + half * x))
                .sum::<f64>();
    }
    total
}

/// Value at distance `h` from a wall held at `wall_value`: solves `X(P) = h + X(V)`.
pub fn wall_layer_value(mech: &BranchingMechanism, h: f64, wall_value: f64) -> Result<f64> {
    let target = h + if wall_value.is_infinite() {
        0.0
    } else {
        wall_distance(mech, wall_value)
    };
    if !target.is_finite() {
        return Err(Error::Config(format!(
            "wall value {wall_value} is below the blow-up profile range of {mech:?}"
        )));
    }
    // X is decreasing; bracket P in [lo, hi] with X(lo) > target > X(hi)
    let mut hi = if wall_value.is_finite() {
        wall_value
    } else {
        1.0
    };
    while wall_distance(mech, hi) > target {
        hi *= 2.0;
    }
    let mut lo = hi;
    while wall_distance(mech, lo) < target {
        lo *= 0.5;
        if lo < 1e-300 {
            return Err(Error::Config(format!(
                "grid spacing {h} is too coarse for the wall layer of {mech:?}"
            )));
        }
    }
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if wall_distance(mech, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

impl RangeSolverOptions {
    fn first_exponent_for(&self, mech: &BranchingMechanism, radius: f64) -> i32 {
        self.first_exponent.unwrap_or_else(|| {
            let h = radius / self.nodes as f64;
            match self.strategy {
                BlowUpStrategy::Dirichlet => {
                    let scale = wall_layer_value(mech, h, f64::INFINITY).unwrap_or(1e2);
                    (scale.log10().floor() as i32).max(2)
                }
                BlowUpStrategy::Forcing { .. } => 2,
            }
        })
    }

    /// The blow-up problem at one surrogate level.
    pub fn surrogate_problem(
        &self,
        mech: BranchingMechanism,
        d: usize,
        t: f64,
        radius: f64,
        initial: &Profile,
        surrogate: f64,
    ) -> Result<PdeProblem> {
        let h = radius / self.nodes as f64;
        let steps = (t / (self.dt_over_h2 * h * h)).ceil().max(1.0);
        let dt = t / steps;
        let (r_max, phi, boundary) = match self.strategy {
            BlowUpStrategy::Dirichlet => {
                let layer = wall_layer_value(&mech, h, surrogate)?;
                (radius - h, Profile::Zero, Boundary::Dirichlet(layer))
            }
            BlowUpStrategy::Forcing { power, margin } => {
                let r_max = radius + h * (margin / h).ceil().max(2.0);
                let phi = Profile::Ramp {
                    radius,
                    scale: surrogate,
                    power,
                };
                let wall = mech.equilibrium_for_source(phi.eval(r_max))?;
                (r_max, phi, Boundary::Dirichlet(wall))
            }
        };
        Ok(PdeProblem {
            mech,
            d,
            r_max,
            h,
            dt,
            t_end: t,
            g: initial.clone(),
            phi,
            boundary,
        })
    }
}

/// Increase the surrogate `10^j` until `v(t, 0)` settles. Requires monotone growth.
pub fn blowup_sweep(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    radius: f64,
    initial: &Profile,
    opts: &RangeSolverOptions,
) -> Result<SweepResult> {
    sweep(mech, d, t, radius, initial, None, opts)
}

/// As [`blowup_sweep`], also tracking the gap to the solution started from
/// `initial + companion` (see [`solve_radial_pair`]). Both origin values must settle.
pub fn blowup_sweep_pair(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    radius: f64,
    initial: &Profile,
    companion: &Profile,
    opts: &RangeSolverOptions,
) -> Result<SweepResult> {
    sweep(mech, d, t, radius, initial, Some(companion), opts)
}

fn sweep(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    radius: f64,
    initial: &Profile,
    companion: Option<&Profile>,
    opts: &RangeSolverOptions,
) -> Result<SweepResult> {
    require(t > 0.0, "t", "t > 0", t)?;
    require(radius > 0.0, "M", "M > 0", radius)?;
    require(opts.tol > 0.0, "tol", "tol > 0", opts.tol)?;
    let first = opts.first_exponent_for(&mech, radius);
    let exponents: Vec<i32> = (first..=opts.last_exponent.max(first + 1)).collect();
    let batch = rayon::current_num_threads().max(1);
    let mut rows: Vec<SolveRow> = Vec::new();
    let mut previous: Option<(f64, Option<f64>)> = None;
    let mut last_change = f64::INFINITY;
    let relative = |new: f64, old: f64| (new - old).abs() / new.abs().max(f64::MIN_POSITIVE);
    for chunk in exponents.chunks(batch) {
        // (surrogate, v, gap, h, dt) per exponent
        let solved: Vec<Result<_>> = chunk
            .par_iter()
            .map(|&j| {
                let surrogate = 10f64.powi(j);
                let problem = opts.surrogate_problem(mech, d, t, radius, initial, surrogate)?;
                let (v, gap) = match companion {
                    None => (solve_radial(&problem)?.origin(), None),
                    Some(c) => {
                        let (v, z) = solve_radial_pair(&problem, c)?;
                        (v.origin(), Some(z.origin()))
                    }
                };
                Ok((surrogate, v, gap, problem.h, problem.dt))
            })
            .collect();
        for outcome in solved {
            let (surrogate, v, gap, h, dt) = outcome?;
            let mut converged = false;
            if let Some((prev, prev_gap)) = previous {
                if v < prev * (1.0 - 1e-9) - 1e-300 {
                    return Err(Error::Monotonicity {
                        previous: prev,
                        current: v,
                    });
                }
                last_change = relative(v, prev);
                if let (Some(z), Some(z_prev)) = (gap, prev_gap) {
                    last_change = last_change.max(relative(z, z_prev));
                }
                converged = last_change <= opts.tol;
            }
            rows.push(SolveRow {
                t,
                radius,
                surrogate,
                v_origin: v,
                gap_origin: gap,
                prob: -(-v).exp_m1(),
                h,
                dt,
                converged,
            });
            if converged {
                return Ok(SweepResult {
                    v_origin: v,
                    gap_origin: gap,
                    rows,
                });
            }
            previous = Some((v, gap));
        }
    }
    Err(Error::Resolution {
        t,
        radius,
        last_change,
    })
}

/// `−log P(R_t ≤ M)` from the origin.
pub fn range_log_prob(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    radius: f64,
    opts: &RangeSolverOptions,
) -> Result<SweepResult> {
    blowup_sweep(mech, d, t, radius, &Profile::Zero, opts)
}

/// `P(R_t ≥ ρ t)`.
pub fn upper_deviation_prob(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    rho: f64,
    opts: &RangeSolverOptions,
) -> Result<f64> {
    require(rho > 0.0, "rho", "rho > 0", rho)?;
    let sweep = range_log_prob(mech, d, t, rho * t, opts)?;
    Ok(-(-sweep.v_origin).exp_m1())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowerDeviation {
    /// `P(R_t ≤ ρ t)`
    pub unconditional: f64,
    /// `P(R_t ≤ ρ t, S)`
    pub joint_survival: f64,
    /// `P(R_t ≤ ρ t | S)`
    pub conditional: f64,
}

/// Lower deviation probabilities. With `v` the blow-up solution from `g = 0`
/// and `v + z` the one from `g = λ*`, `P(R_t ≤ ρt, S) = e^{−v} (1 − e^{−z})`;
/// the gap `z` is solved for directly so the difference keeps its precision.
pub fn lower_deviation(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    rho: f64,
    opts: &RangeSolverOptions,
) -> Result<LowerDeviation> {
    Ok(lower_deviation_sweep(mech, d, t, rho, opts)?.0)
}

/// As [`lower_deviation`], also returning the solves of the pair sweep.
pub fn lower_deviation_sweep(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    rho: f64,
    opts: &RangeSolverOptions,
) -> Result<(LowerDeviation, Vec<SolveRow>)> {
    let critical = (2.0 * mech.beta).sqrt();
    require(
        rho > 0.0 && rho < critical,
        "rho",
        "0 < rho < sqrt(2 beta)",
        rho,
    )?;
    require(mech.alpha > 0.0, "alpha", "alpha > 0", mech.alpha)?;
    let lambda_star = mech.lambda_star()?;
    let sweep = blowup_sweep_pair(
        mech,
        d,
        t,
        rho * t,
        &Profile::Zero,
        &Profile::Constant(lambda_star),
        opts,
    )?;
    let gap = sweep.gap_origin.expect("pair sweep records the gap");
    if gap < -opts.tol {
        return Err(Error::Inconsistent { numerator: gap });
    }
    let unconditional = (-sweep.v_origin).exp();
    let joint_survival = unconditional * -(-gap.max(0.0)).exp_m1();
    let survival = mech.survival_probability()?;
    let result = LowerDeviation {
        unconditional,
        joint_survival,
        conditional: (joint_survival / survival).clamp(0.0, 1.0),
    };
    Ok((result, sweep.rows))
}

/// `P(R_t ≤ ρ t | S)`.
pub fn conditional_lower_deviation_prob(
    mech: BranchingMechanism,
    d: usize,
    t: f64,
    rho: f64,
    opts: &RangeSolverOptions,
) -> Result<f64> {
    Ok(lower_deviation(mech, d, t, rho, opts)?.conditional)
}

pub fn write_solve_rows(path: &Path, rows: &[SolveRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "t",
        "M",
        "lambda_or_V",
        "v_origin",
        "gap_origin",
        "prob",
        "h",
        "dt",
        "converged",
    ])?;
    for r in rows {
        w.write_record([
            crate::fmt_f64(r.t),
            crate::fmt_f64(r.radius),
            crate::fmt_f64(r.surrogate),
            crate::fmt_f64(r.v_origin),
            r.gap_origin.map(crate::fmt_f64).unwrap_or_default(),
            crate::fmt_f64(r.prob),
            crate::fmt_f64(r.h),
            crate::fmt_f64(r.dt),
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(beta: f64, alpha: f64) -> BranchingMechanism {
        BranchingMechanism::quadratic(beta, alpha).unwrap()
    }

    fn constant_problem(mech: BranchingMechanism, c: f64, h: f64, dt: f64, t: f64) -> PdeProblem {
        PdeProblem {
            mech,
            d: 1,
            r_max: 1.0,
            h,
            dt,
            t_end: t,
            g: Profile::Constant(c),
            phi: Profile::Zero,
            boundary: Boundary::Neumann,
        }
    }

    #[test]
    fn equilibrium_stays_put() {
        let field = solve_radial(&constant_problem(quad(1.0, 1.0), 1.0, 0.05, 0.01, 2.0)).unwrap();
        for v in &field.values {
            assert_relative_eq!(*v, 1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let field = solve_radial(&constant_problem(quad(1.0, 1.0), 0.0, 0.05, 0.01, 1.0)).unwrap();
        assert!(field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_non_dividing_grid() {
        let mut p = constant_problem(quad(1.0, 1.0), 0.5, 0.3, 0.01, 1.0);
        assert!(p.validate().is_err());
        p.h = 0.25;
        p.dt = 0.3;
        assert!(p.validate().is_err());
    }

    #[test]
    fn rejects_negative_data() {
        let mut p = constant_problem(quad(1.0, 1.0), -0.5, 0.25, 0.01, 1.0);
        assert!(p.validate().is_err());
        p.g = Profile::Zero;
        p.boundary = Boundary::Dirichlet(-1.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn blow_up_is_reported() {
        // linear growth with no saturation: v' = 40 v, v(0) = 1 exceeds 1e12 before t = 1
        let mech = BranchingMechanism {
            beta: 40.0,
            alpha: 0.0,
            eta: 0.0,
            theta: 1.0,
        };
        let p = PdeProblem {
            dt: 0.001,
            ..constant_problem(mech, 1.0, 0.25, 0.001, 1.0)
        };
        match solve_radial(&p) {
            Err(Error::BlowUp { time }) => assert!(time > 0.6 && time < 0.75),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn origin_is_symmetric() {
        let p = PdeProblem {
            mech: quad(1.0, 1.0),
            d: 3,
            r_max: 4.0,
            h: 0.02,
            dt: 0.0004,
            t_end: 0.5,
            g: Profile::Gaussian {
                amplitude: 1.0,
                width: 0.5,
            },
            phi: Profile::Zero,
            boundary: Boundary::Dirichlet(0.0),
        };
        let f = solve_radial(&p).unwrap();
        // one-sided slope at the origin is O(h)
        let slope = (f.values[1] - f.values[0]) / p.h;
        assert!(slope.abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn range_prob_vanishes_for_large_radius() {
        let opts = RangeSolverOptions {
            nodes: 200,
            ..Default::default()
        };
        let mech = quad(1.0, 1.0);
        let near = range_log_prob(mech, 1, 1.0, 2.0, &opts).unwrap().v_origin;
        let far = range_log_prob(mech, 1, 1.0, 8.0, &opts).unwrap().v_origin;
        assert!(far < near);
        assert!(far < 1e-8, "far {far}");
    }

    #[test]
    fn range_prob_vanishes_for_short_time() {
        let opts = RangeSolverOptions {
            nodes: 200,
            ..Default::default()
        };
        let mech = quad(1.0, 1.0);
        let short = range_log_prob(mech, 1, 0.02, 1.0, &opts).unwrap().v_origin;
        let longer = range_log_prob(mech, 1, 0.2, 1.0, &opts).unwrap().v_origin;
        assert!(short < 1e-6, "short {short}");
        assert!(longer > short);
    }

    #[test]
    fn range_log_prob_exceeds_lambda_star_eventually() {
        let opts = RangeSolverOptions {
            nodes: 100,
            ..Default::default()
        };
        let v = range_log_prob(quad(1.0, 1.0), 1, 6.0, 1.0, &opts)
            .unwrap()
            .v_origin;
        assert!(v > 1.0, "v {v}");
    }

    #[test]
    fn sweep_rows_are_monotone_and_flag_convergence() {
        let opts = RangeSolverOptions {
            nodes: 150,
            ..Default::default()
        };
        let sweep = range_log_prob(quad(1.0, 1.0), 1, 1.0, 2.0, &opts).unwrap();
        assert!(sweep
            .rows
            .windows(2)
            .all(|w| w[1].v_origin >= w[0].v_origin));
        assert!(sweep.rows.last().unwrap().converged);
        assert!(sweep.rows[..sweep.rows.len() - 1]
            .iter()
            .all(|r| !r.converged));
    }

    #[test]
    fn unreachable_tolerance_is_a_resolution_error() {
        let opts = RangeSolverOptions {
            nodes: 100,
            tol: 1e-300,
            first_exponent: Some(2),
            last_exponent: 4,
            ..Default::default()
        };
        assert!(matches!(
            range_log_prob(quad(1.0, 1.0), 1, 1.0, 2.0, &opts),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn lower_deviation_rejects_supercritical_speed() {
        let opts = RangeSolverOptions::default();
        assert!(lower_deviation(quad(1.0, 1.0), 1, 4.0, 1.5, &opts).is_err());
        assert!(lower_deviation(quad(1.0, 0.0), 1, 4.0, 0.5, &opts).is_err());
    }
}

#[cfg(test)]
mod wall_tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn wall_distance_pure_quadratic_closed_form() {
        // beta = 0: X(u) = sqrt(3 / (alpha u))
        let mech = BranchingMechanism {
            beta: 0.0,
            alpha: 2.0,
            eta: 0.0,
            theta: 1.0,
        };
        for u in [1.0, 10.0, 1e4, 1e8] {
            assert_relative_eq!(
                wall_distance(&mech, u),
                (3.0 / (2.0 * u)).sqrt(),
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn wall_distance_pure_stable_closed_form() {
        // Psi = eta u^(2+theta)/(2+theta): X(u) = sqrt((2+theta)/eta) u^(-theta/2) / theta
        let (eta, theta) = (1.5, 0.5);
        let mech = BranchingMechanism {
            beta: 0.0,
            alpha: 0.0,
            eta,
            theta,
        };
        for u in [1.0f64, 100.0, 1e6] {
            let exact = ((2.0 + theta) / eta).sqrt() * u.powf(-theta / 2.0) / theta;
            assert_relative_eq!(wall_distance(&mech, u), exact, max_relative = 1e-8);
        }
    }

    #[test]
    fn wall_layer_increases_to_its_limit() {
        let mech = BranchingMechanism::quadratic(1.0, 1.0).unwrap();
        let h = 0.01;
        let limit = wall_layer_value(&mech, h, f64::INFINITY).unwrap();
        assert_relative_eq!(limit, 3.0 / (h * h), max_relative = 1e-3);
        let mut prev = 0.0;
        for j in 3..12 {
            let p = wall_layer_value(&mech, h, 10f64.powi(j)).unwrap();
            assert!(p > prev && p < limit);
            prev = p;
        }
        assert_relative_eq!(prev, limit, max_relative = 2e-3);
    }
}
